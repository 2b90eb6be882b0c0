//! Broadcast camera calibration from football pitch markings.
//!
//! The pipeline turns per-class marking observations (or detector output)
//! into structural keypoints, calibrates a pinhole camera on several keypoint
//! subsets and keeps one by reprojection error, and scores the result by
//! matching projected markings against annotations.
//!
//! ```
//! use pitchcal::{default_template, synthetic, keypoints, voter};
//!
//! let template = default_template();
//! let scenario = synthetic::SyntheticScenario { min_visible_keypoints: 8, ..Default::default() };
//! let frame = synthetic::generate_frame(&template, &scenario, 0);
//! let kp = keypoints::derive_all(&template, &frame.annotation, &Default::default());
//! let out = voter::iterative_vote(&template, &kp, frame.camera.image_size, &Default::default()).unwrap();
//! assert!((out.params.focal / frame.camera.focal - 1.0).abs() < 1e-3);
//! ```

pub mod camera;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod keypoints;
pub mod pitch;
pub mod synthetic;
pub mod voter;

pub use camera::{is_plausible, reprojection_rmse, CameraParams, Correspondence, ImageSize, PlausibilityBounds};
pub use error::{Error, Result};
pub use eval::{EvalReport, Evaluator};
pub use keypoints::{Annotation, DeriveOptions, Keypoint, KeypointSet, KeypointSource};
pub use pitch::{default_template, KeypointDef, KeypointFamily, MarkingId, PitchDimensions, PitchTemplate};
pub use voter::{CalibrationOutcome, Detections, LineObservation, SubsetLabel, VoterConfig};
