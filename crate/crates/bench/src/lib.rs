//! Shared fixtures for the criterion benches.

use pitchcal::default_template;
use pitchcal::synthetic::{generate_frame, SyntheticFrame, SyntheticScenario};

/// Noiseless broadcast frames with at least eight keypoints in view.
pub fn fixture_frames(count: u64, seed: u64) -> Vec<SyntheticFrame> {
    let template = default_template();
    let scenario = SyntheticScenario {
        min_visible_keypoints: 8,
        seed,
        ..SyntheticScenario::default()
    };
    (0..count).map(|i| generate_frame(&template, &scenario, i)).collect()
}
