//! Subset voting over calibrations.
//!
//! Each vote calibrates four keypoint subsets and keeps one result: the
//! all-points camera when its RMSE is under the preference bound, otherwise
//! the lowest-RMSE candidate. The iterative voter repeats this at descending
//! confidence thresholds.

use nalgebra::Point2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{calibrate, reprojection_rmse, CameraParams, Correspondence, ImageSize, PlausibilityBounds};
use crate::error::{Error, Result};
use crate::geometry::{intersect_lines, ransac_homography_filter, Line2, PointPair, RansacConfig};
use crate::keypoints::{Keypoint, KeypointSet, KeypointSource};
use crate::pitch::{Construction, KeypointFamily, MarkingId, PitchTemplate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoterConfig {
    /// The all-points candidate wins outright below this RMSE.
    pub rmse_preference_px: f64,
    pub ransac_tol_px: f64,
    pub ransac_max_iterations: usize,
    /// Strictly descending, each in `[0, 1]`.
    pub confidence_thresholds: Vec<f64>,
    /// Line fusion is skipped when at least this many keypoints are in frame.
    pub min_keypoints_for_no_fusion: usize,
    pub bounds: PlausibilityBounds,
    pub seed: u64,
}

impl Default for VoterConfig {
    fn default() -> Self {
        Self {
            rmse_preference_px: 5.0,
            ransac_tol_px: 5.0,
            ransac_max_iterations: 500,
            confidence_thresholds: vec![0.5, 0.3, 0.1],
            min_keypoints_for_no_fusion: 7,
            bounds: PlausibilityBounds::default(),
            seed: RansacConfig::default().seed,
        }
    }
}

impl VoterConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.confidence_thresholds;
        if t.is_empty() {
            return Err(Error::Config("at least one confidence threshold is required".into()));
        }
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("confidence thresholds must lie in [0, 1]".into()));
        }
        if t.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("confidence thresholds must be strictly descending".into()));
        }
        if !(self.rmse_preference_px > 0.0 && self.ransac_tol_px > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.ransac_max_iterations == 0 {
            return Err(Error::Config("ransac_max_iterations must be positive".into()));
        }
        Ok(())
    }

    fn ransac(&self) -> RansacConfig {
        RansacConfig {
            tolerance_px: self.ransac_tol_px,
            max_iterations: self.ransac_max_iterations,
            seed: self.seed,
            ..RansacConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetLabel {
    All,
    LineLineOnly,
    GroundRansac,
    GroundAll,
}

impl SubsetLabel {
    /// Fixed evaluation order; ties in RMSE go to the earlier label.
    pub const ORDER: [SubsetLabel; 4] = [
        SubsetLabel::All,
        SubsetLabel::LineLineOnly,
        SubsetLabel::GroundRansac,
        SubsetLabel::GroundAll,
    ];
}

/// One subset's calibration attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: SubsetLabel,
    pub used_ids: Vec<usize>,
    /// Present only for plausible calibrations.
    pub params: Option<CameraParams>,
    /// RMSE over the subset's own points; infinite when absent.
    pub rmse_px: f64,
    pub failure: Option<String>,
}

/// The camera chosen by a vote.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub params: CameraParams,
    pub label: SubsetLabel,
    pub rmse_px: f64,
    pub used_ids: Vec<usize>,
    /// Confidence threshold the keypoints were filtered with.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteReport {
    pub threshold: f64,
    pub candidates: Vec<Candidate>,
    pub selected: Option<CalibrationOutcome>,
}

fn calibrate_subset(
    label: SubsetLabel,
    corr: Vec<Correspondence>,
    image_size: ImageSize,
    config: &VoterConfig,
) -> Candidate {
    let used_ids = corr.iter().map(|c| c.id).collect();
    let failed = |used_ids, why: String| Candidate {
        label,
        used_ids,
        params: None,
        rmse_px: f64::INFINITY,
        failure: Some(why),
    };
    let params = match calibrate(&corr, image_size) {
        Ok(p) => p,
        Err(e) => return failed(used_ids, e.to_string()),
    };
    if !config.bounds.check(&params) {
        return failed(used_ids, "implausible camera".into());
    }
    match reprojection_rmse(&params, &corr) {
        Some(rmse) if rmse.is_finite() => Candidate {
            label,
            used_ids,
            params: Some(params),
            rmse_px: rmse,
            failure: None,
        },
        _ => failed(used_ids, "points behind the camera".into()),
    }
}

fn subset(
    label: SubsetLabel,
    template: &PitchTemplate,
    corr: &[Correspondence],
    config: &VoterConfig,
) -> std::result::Result<Vec<Correspondence>, String> {
    let ground = || corr.iter().copied().filter(|c| c.world.z == 0.0);
    Ok(match label {
        SubsetLabel::All => corr.to_vec(),
        SubsetLabel::LineLineOnly => corr
            .iter()
            .copied()
            .filter(|c| template.keypoints()[c.id].family == KeypointFamily::LineLine)
            .collect(),
        SubsetLabel::GroundAll => ground().collect(),
        SubsetLabel::GroundRansac => {
            let ground: Vec<Correspondence> = ground().collect();
            let pairs: Vec<PointPair> = ground.iter().map(|c| PointPair::new(c.world.xy(), c.image)).collect();
            let result = ransac_homography_filter(&pairs, &config.ransac()).map_err(|e| e.to_string())?;
            result.inliers.iter().map(|&i| ground[i]).collect()
        }
    })
}

/// Calibrates all four subsets of the keypoints with confidence at or above
/// `threshold` and records every candidate.
pub fn vote_detailed(
    template: &PitchTemplate,
    keypoints: &KeypointSet,
    threshold: f64,
    image_size: ImageSize,
    config: &VoterConfig,
) -> VoteReport {
    let corr = keypoints.above(threshold).correspondences(template);
    let candidates: Vec<Candidate> = SubsetLabel::ORDER
        .par_iter()
        .map(|&label| match subset(label, template, &corr, config) {
            Ok(points) => calibrate_subset(label, points, image_size, config),
            Err(why) => Candidate {
                label,
                used_ids: Vec::new(),
                params: None,
                rmse_px: f64::INFINITY,
                failure: Some(why),
            },
        })
        .collect();

    let outcome = |c: &Candidate| CalibrationOutcome {
        params: c.params.expect("selected candidates carry params"),
        label: c.label,
        rmse_px: c.rmse_px,
        used_ids: c.used_ids.clone(),
        threshold,
    };
    let valid = || candidates.iter().filter(|c| c.params.is_some());
    let preferred = valid().find(|c| c.label == SubsetLabel::All && c.rmse_px < config.rmse_preference_px);
    let selected = preferred
        .or_else(|| valid().min_by(|a, b| a.rmse_px.total_cmp(&b.rmse_px)))
        .map(outcome);
    VoteReport {
        threshold,
        candidates,
        selected,
    }
}

pub fn vote(
    template: &PitchTemplate,
    keypoints: &KeypointSet,
    threshold: f64,
    image_size: ImageSize,
    config: &VoterConfig,
) -> Option<CalibrationOutcome> {
    vote_detailed(template, keypoints, threshold, image_size, config).selected
}

/// Votes at each configured threshold from high to low and returns the
/// first success.
pub fn iterative_vote(
    template: &PitchTemplate,
    keypoints: &KeypointSet,
    image_size: ImageSize,
    config: &VoterConfig,
) -> Option<CalibrationOutcome> {
    config
        .confidence_thresholds
        .iter()
        .find_map(|&t| vote(template, keypoints, t, image_size, config))
}

/// A detected marking reduced to two extremities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineObservation {
    pub class: MarkingId,
    pub start: Point2<f64>,
    pub end: Point2<f64>,
    pub confidence: f64,
}

/// Adds line-line keypoints intersected from observed extremity lines when
/// fewer than `min_keypoints_for_no_fusion` keypoints are in frame.
/// Intersections may fall outside the frame. Existing keypoints are never
/// replaced.
pub fn fuse_lines(
    template: &PitchTemplate,
    keypoints: &KeypointSet,
    lines: &[LineObservation],
    image_size: ImageSize,
    config: &VoterConfig,
) -> KeypointSet {
    let mut out = keypoints.clone();
    if keypoints.count_in_frame(image_size) >= config.min_keypoints_for_no_fusion {
        return out;
    }
    // Strongest observation per class.
    let best = |class: MarkingId| {
        lines
            .iter()
            .filter(|l| l.class == class)
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
            .and_then(|l| Some((Line2::through(l.start, l.end).ok()?, l.confidence)))
    };
    for def in template.keypoints() {
        let Construction::LineLine { a, b } = def.construction else {
            continue;
        };
        if out.contains(def.id) {
            continue;
        }
        let (Some((la, ca)), Some((lb, cb))) = (best(a), best(b)) else {
            continue;
        };
        if let Ok(p) = intersect_lines(&la, &lb) {
            out.insert(Keypoint {
                id: def.id,
                position: p,
                confidence: ca.min(cb),
                source: KeypointSource::LineFusion,
            });
        }
    }
    out
}

/// Detector output for one frame: point keypoints and line extremities.
#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    pub image_size: ImageSize,
    pub keypoints: KeypointSet,
    pub lines: Vec<LineObservation>,
}

impl Detections {
    pub fn empty(image_size: ImageSize) -> Self {
        Self {
            image_size,
            keypoints: KeypointSet::new(),
            lines: Vec::new(),
        }
    }
}

/// Fusion followed by the iterative vote.
pub fn calibrate_frame(
    template: &PitchTemplate,
    keypoints: &KeypointSet,
    lines: &[LineObservation],
    image_size: ImageSize,
    config: &VoterConfig,
) -> Option<CalibrationOutcome> {
    let fused = fuse_lines(template, keypoints, lines, image_size, config);
    iterative_vote(template, &fused, image_size, config)
}
