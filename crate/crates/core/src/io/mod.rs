//! File formats, configuration, overlays and the batch runner.
//!
//! Annotation files map class names to points in normalized `[0, 1]`
//! coordinates; detector files and camera files are in pixels.

mod batch;
mod svg;

pub use batch::{run_batch, BatchSummary, FrameRecord, FrameStatus, Mode, RunManifest, TuneResult};
pub use svg::{family_color, render_overlay};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Point3, Rotation3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::camera::{CameraParams, ImageSize};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_THRESHOLDS;
use crate::keypoints::{Annotation, DeriveOptions, Keypoint, KeypointSet, KeypointSource};
use crate::pitch::{MarkingId, PitchDimensions, PitchTemplate, KEYPOINT_COUNT};
use crate::synthetic::SyntheticScenario;
use crate::voter::{Detections, LineObservation, VoterConfig};

/// Reserved key for an embedded frame size in annotation files.
const IMAGE_SIZE_KEY: &str = "image_size";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(path, &read_text(path)?)
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct NormPoint {
    x: f64,
    y: f64,
}

/// Parses annotation JSON. Unknown class names are skipped and reported in
/// the returned warnings, as are points outside `[0, 1]` (which are kept).
/// An embedded `image_size` overrides `default_size`.
pub fn parse_annotation(path: &Path, text: &str, default_size: ImageSize) -> Result<(Annotation, Vec<String>)> {
    let map: Map<String, Value> = parse_json(path, text)?;
    let size = match map.get(IMAGE_SIZE_KEY) {
        Some(v) => serde_json::from_value::<ImageSize>(v.clone()).map_err(|e| format_err(path, e))?,
        None => default_size,
    };
    let mut ann = Annotation::new(size);
    let mut warnings = Vec::new();
    for (name, value) in &map {
        if name == IMAGE_SIZE_KEY {
            continue;
        }
        let Some(id) = MarkingId::from_name(name) else {
            warnings.push(format!("unknown class {name:?} ignored"));
            continue;
        };
        let points: Vec<NormPoint> =
            serde_json::from_value(value.clone()).map_err(|e| format_err(path, format!("class {name:?}: {e}")))?;
        let mut pixels = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(format_err(path, format!("class {name:?} point {i} is not finite")));
            }
            if !((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)) {
                warnings.push(format!("class {name:?} point {i} outside [0, 1]"));
            }
            pixels.push(Point2::new(p.x * size.width as f64, p.y * size.height as f64));
        }
        ann.classes.entry(id).or_default().extend(pixels);
    }
    Ok((ann, warnings))
}

pub fn read_annotation(path: &Path, default_size: ImageSize) -> Result<(Annotation, Vec<String>)> {
    parse_annotation(path, &read_text(path)?, default_size)
}

pub fn annotation_to_json(ann: &Annotation) -> Value {
    let (w, h) = (ann.image_size.width as f64, ann.image_size.height as f64);
    let mut map = Map::new();
    map.insert(IMAGE_SIZE_KEY.into(), serde_json::to_value(ann.image_size).expect("size serializes"));
    for (id, pts) in &ann.classes {
        let pts: Vec<NormPoint> = pts.iter().map(|p| NormPoint { x: p.x / w, y: p.y / h }).collect();
        map.insert(id.name().into(), serde_json::to_value(pts).expect("points serialize"));
    }
    Value::Object(map)
}

pub fn write_annotation(path: &Path, ann: &Annotation) -> Result<()> {
    write_json(path, &annotation_to_json(ann))
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KeypointRecord {
    id: usize,
    x: f64,
    y: f64,
    #[serde(default = "one")]
    confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LineRecord {
    class: String,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    #[serde(default = "one")]
    confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectorFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_size: Option<ImageSize>,
    #[serde(default)]
    keypoints: Vec<KeypointRecord>,
    #[serde(default)]
    lines: Vec<LineRecord>,
}

/// Parses detector output. Unknown line classes are skipped with a warning;
/// invalid keypoint ids, duplicate ids, non-finite values and confidences
/// outside `[0, 1]` are errors.
pub fn parse_detections(path: &Path, text: &str, default_size: ImageSize) -> Result<(Detections, Vec<String>)> {
    let file: DetectorFile = parse_json(path, text)?;
    let mut det = Detections::empty(file.image_size.unwrap_or(default_size));
    let mut warnings = Vec::new();
    let check_conf = |c: f64| {
        if (0.0..=1.0).contains(&c) {
            Ok(c)
        } else {
            Err(format_err(path, format!("confidence {c} outside [0, 1]")))
        }
    };
    for k in &file.keypoints {
        if k.id >= KEYPOINT_COUNT {
            return Err(format_err(path, format!("unknown keypoint id {}", k.id)));
        }
        if !(k.x.is_finite() && k.y.is_finite()) {
            return Err(format_err(path, format!("keypoint {} is not finite", k.id)));
        }
        let inserted = det.keypoints.insert_if_absent(Keypoint {
            id: k.id,
            position: Point2::new(k.x, k.y),
            confidence: check_conf(k.confidence)?,
            source: KeypointSource::Detector,
        });
        if !inserted {
            return Err(format_err(path, format!("duplicate keypoint id {}", k.id)));
        }
    }
    for l in &file.lines {
        let Some(class) = MarkingId::from_name(&l.class) else {
            warnings.push(format!("unknown line class {:?} ignored", l.class));
            continue;
        };
        if ![l.x1, l.y1, l.x2, l.y2].iter().all(|v| v.is_finite()) {
            return Err(format_err(path, format!("line {:?} is not finite", l.class)));
        }
        det.lines.push(LineObservation {
            class,
            start: Point2::new(l.x1, l.y1),
            end: Point2::new(l.x2, l.y2),
            confidence: check_conf(l.confidence)?,
        });
    }
    Ok((det, warnings))
}

pub fn read_detections(path: &Path, default_size: ImageSize) -> Result<(Detections, Vec<String>)> {
    parse_detections(path, &read_text(path)?, default_size)
}

/// Writes keypoints and lines in the detector format.
pub fn write_detections(path: &Path, det: &Detections) -> Result<()> {
    write_json(path, &detections_file(Some(det.image_size), &det.keypoints, &det.lines))
}

/// Writes a keypoint set in the detector format (no lines).
pub fn write_keypoints(path: &Path, image_size: ImageSize, keypoints: &KeypointSet) -> Result<()> {
    write_json(path, &detections_file(Some(image_size), keypoints, &[]))
}

fn detections_file(image_size: Option<ImageSize>, keypoints: &KeypointSet, lines: &[LineObservation]) -> DetectorFile {
    DetectorFile {
        image_size,
        keypoints: keypoints
            .iter()
            .map(|k| KeypointRecord {
                id: k.id,
                x: k.position.x,
                y: k.position.y,
                confidence: k.confidence,
            })
            .collect(),
        lines: lines
            .iter()
            .map(|l| LineRecord {
                class: l.class.name().into(),
                x1: l.start.x,
                y1: l.start.y,
                x2: l.end.x,
                y2: l.end.y,
                confidence: l.confidence,
            })
            .collect(),
    }
}

/// Camera output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub rotation: [[f64; 3]; 3],
    pub position_m: [f64; 3],
    pub image_size: [u32; 2],
    pub rmse_px: f64,
}

impl CameraRecord {
    pub fn new(params: &CameraParams, rmse_px: f64) -> Self {
        let r = params.rotation.matrix();
        let pp = params.principal_point();
        Self {
            focal_px: params.focal,
            principal_point: [pp.x, pp.y],
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
            position_m: params.position.coords.into(),
            image_size: params.image_size.into(),
            rmse_px,
        }
    }

    /// Rebuilds the camera. The rotation is re-orthonormalized; a matrix far
    /// from a rotation, or a principal point off the frame center, is
    /// rejected.
    pub fn to_params(&self) -> Result<CameraParams> {
        let m = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        if (m.transpose() * m - Matrix3::identity()).abs().max() > 1e-6 || m.determinant() < 0.0 {
            return Err(Error::Format("rotation is not orthonormal".into()));
        }
        let size = ImageSize::from(self.image_size);
        let c = size.center();
        if (self.principal_point[0] - c.x).abs() > 1e-9 || (self.principal_point[1] - c.y).abs() > 1e-9 {
            return Err(Error::Format("principal point must be the frame center".into()));
        }
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::Format("focal length must be positive".into()));
        }
        Ok(CameraParams::new(
            self.focal_px,
            Rotation3::from_matrix(&m),
            Point3::from(self.position_m),
            size,
        ))
    }
}

/// Everything a run can be configured with. Missing sections take their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub image_size: ImageSize,
    pub template: PitchDimensions,
    pub derive: DeriveOptions,
    pub voter: VoterConfig,
    pub synthetic: SyntheticScenario,
    /// Evaluation thresholds in pixels.
    pub thresholds: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            image_size: ImageSize::BROADCAST,
            template: PitchDimensions::default(),
            derive: DeriveOptions::default(),
            voter: VoterConfig::default(),
            synthetic: SyntheticScenario::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Config = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.voter.validate()?;
        self.synthetic.validate()?;
        PitchTemplate::new(self.template)?;
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("evaluation thresholds must be positive".into()));
        }
        if self.image_size.width == 0 || self.image_size.height == 0 {
            return Err(Error::Config("image size must be non-zero".into()));
        }
        Ok(())
    }

    pub fn template(&self) -> Result<PitchTemplate> {
        PitchTemplate::new(self.template)
    }
}

/// `*.json` files directly inside `dir`, sorted by name.
pub fn list_json(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn here() -> &'static Path {
        Path::new("test.json")
    }

    #[test]
    fn annotation_scaling() {
        let (ann, warnings) =
            parse_annotation(here(), r#"{"Side line top": [{"x":0.5,"y":0.1}]}"#, ImageSize::BROADCAST).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(ann.points(MarkingId::SideLineTop), &[Point2::new(480.0, 54.0)]);
    }

    #[test]
    fn annotation_edge_cases() {
        let (ann, _) = parse_annotation(here(), "{}", ImageSize::BROADCAST).unwrap();
        assert!(ann.is_empty());
        let err = parse_annotation(Path::new("frames/bad.json"), "{not json", ImageSize::BROADCAST).unwrap_err();
        assert!(err.to_string().contains("frames/bad.json"));
        let (ann, warnings) = parse_annotation(
            here(),
            r#"{"Goal unknown": [], "Middle line": [{"x":1.2,"y":0.5}], "image_size": [100, 50]}"#,
            ImageSize::BROADCAST,
        )
        .unwrap();
        assert_eq!(warnings.len(), 2);
        assert_eq!(ann.image_size, ImageSize::new(100, 50));
        assert_eq!(ann.points(MarkingId::MiddleLine), &[Point2::new(120.0, 25.0)]);
    }

    #[test]
    fn annotation_round_trip() {
        let mut ann = Annotation::new(ImageSize::new(1280, 720));
        ann.insert(MarkingId::CircleCentral, vec![Point2::new(1.0 / 3.0, 719.123456789), Point2::new(12.5, 0.0)]);
        let text = serde_json::to_string(&annotation_to_json(&ann)).unwrap();
        let (back, _) = parse_annotation(here(), &text, ImageSize::BROADCAST).unwrap();
        assert_eq!(back.image_size, ann.image_size);
        for (a, b) in back.points(MarkingId::CircleCentral).iter().zip(ann.points(MarkingId::CircleCentral)) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn detections_parse_and_validate() {
        let text = r#"{"keypoints":[{"id":3,"x":10.0,"y":20.0,"confidence":0.7}],
            "lines":[{"class":"Middle line","x1":0,"y1":0,"x2":5,"y2":5,"confidence":0.4},
                     {"class":"Bogus","x1":0,"y1":0,"x2":5,"y2":5}]}"#;
        let (det, warnings) = parse_detections(here(), text, ImageSize::BROADCAST).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(det.keypoints.get(3).unwrap().confidence, 0.7);
        assert_eq!(det.lines.len(), 1);
        let dup = r#"{"keypoints":[{"id":3,"x":1,"y":2},{"id":3,"x":1,"y":2}]}"#;
        assert!(parse_detections(here(), dup, ImageSize::BROADCAST).is_err());
        let bad_id = r#"{"keypoints":[{"id":57,"x":1,"y":2}]}"#;
        assert!(parse_detections(here(), bad_id, ImageSize::BROADCAST).is_err());
    }

    #[test]
    fn camera_record_fields() {
        let cam = CameraParams::look_at(
            Point3::new(0.0, -60.0, 20.0),
            Point3::new(0.0, 0.0, 0.0),
            2000.0,
            0.0,
            ImageSize::BROADCAST,
        )
        .unwrap();
        let value = serde_json::to_value(CameraRecord::new(&cam, 0.5)).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["focal_px", "image_size", "position_m", "principal_point", "rmse_px", "rotation"]
        );
        assert_eq!(value["principal_point"], serde_json::json!([480.0, 270.0]));
        let back: CameraRecord = serde_json::from_value(value).unwrap();
        let params = back.to_params().unwrap();
        assert_abs_diff_eq!((params.position - cam.position).norm(), 0.0, epsilon = 1e-12);
        assert!(params.rotation.angle_to(&cam.rotation) < 1e-12);
    }

    #[test]
    fn config_defaults_fill_in() {
        let c: Config = serde_json::from_str(r#"{"voter": {"confidence_thresholds": [0.8, 0.4]}}"#).unwrap();
        assert_eq!(c.voter.confidence_thresholds, vec![0.8, 0.4]);
        assert_eq!(c.voter.rmse_preference_px, 5.0);
        assert_eq!(c.thresholds, vec![5.0, 10.0, 20.0]);
        assert!(c.validate().is_ok());
    }
}
