//! Directory-level runs.
//!
//! Input layout: `annotations/` holds annotation files, `detections/` holds
//! detector files with matching names. When `annotations/` is absent the
//! input directory itself is read as annotations. Results go under the
//! output directory as `keypoints/`, `cameras/`, `overlays/`, plus
//! `summary.json` and, for evaluation, `report.json`.

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    list_json, read_annotation, read_detections, render_overlay, write_annotation, write_detections, write_json,
    write_keypoints, CameraRecord, Config,
};
use crate::camera::ImageSize;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::keypoints::{derive_all, Annotation, KeypointSet};
use crate::pitch::PitchTemplate;
use crate::synthetic::generate_frame;
use crate::voter::{calibrate_frame, CalibrationOutcome, Detections, SubsetLabel, VoterConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Derive,
    Calibrate,
    Evaluate,
    Synth,
    Tune,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub mode: Mode,
    /// Required by every mode except `synth`.
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub config: Config,
    /// Worker threads; 0 picks the number of cores.
    pub jobs: usize,
    /// Overrides both the synthetic and the RANSAC seed.
    pub seed: Option<u64>,
    /// Frames to generate in `synth` mode.
    pub frames: usize,
    /// Also write SVG overlays for calibrated frames.
    pub overlay: bool,
}

impl RunManifest {
    pub fn new(mode: Mode, input: Option<PathBuf>, output: PathBuf) -> Self {
        Self {
            mode,
            input,
            output,
            config: Config::default(),
            jobs: 0,
            seed: None,
            frames: 100,
            overlay: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Ok,
    NoOutput,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: String,
    pub status: FrameStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse_px: Option<f64>,
}

impl FrameRecord {
    fn new(frame: &str, status: FrameStatus) -> Self {
        Self {
            frame: frame.to_string(),
            status,
            message: None,
            warnings: Vec::new(),
            keypoints: None,
            subset: None,
            threshold: None,
            rmse_px: None,
        }
    }

    fn error(frame: &str, e: &Error) -> Self {
        Self {
            message: Some(e.to_string()),
            ..Self::new(frame, FrameStatus::Error)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneCandidate {
    pub confidence_thresholds: Vec<f64>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: TuneCandidate,
    pub candidates: Vec<TuneCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub mode: Mode,
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<crate::eval::EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneResult>,
}

impl BatchSummary {
    pub fn count(&self, status: FrameStatus) -> usize {
        self.frames.iter().filter(|f| f.status == status).count()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Inputs of one frame as found on disk.
struct FrameInput {
    name: String,
    annotation: Option<Result<(Annotation, Vec<String>)>>,
    detections: Option<Result<(Detections, Vec<String>)>>,
}

struct Layout {
    annotations: Option<PathBuf>,
    detections: Option<PathBuf>,
}

impl Layout {
    fn discover(input: &Path) -> Result<Self> {
        if !input.is_dir() {
            return Err(Error::io(
                input,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input directory not found"),
            ));
        }
        let sub = |name: &str| Some(input.join(name)).filter(|p| p.is_dir());
        let detections = sub("detections");
        let annotations = sub("annotations").or_else(|| detections.is_none().then(|| input.to_path_buf()));
        Ok(Self {
            annotations,
            detections,
        })
    }

    /// Frame names, from the annotations when present, else detections.
    fn frames(&self, image_size: ImageSize, need_annotations: bool) -> Result<Vec<FrameInput>> {
        let primary = match (&self.annotations, &self.detections) {
            (Some(a), _) if need_annotations => a,
            (_, Some(d)) => d,
            (Some(a), None) => a,
            (None, None) => return Ok(Vec::new()),
        };
        let files = list_json(primary)?;
        Ok(files
            .par_iter()
            .map(|path| {
                let name = stem(path);
                let file = format!("{name}.json");
                FrameInput {
                    annotation: self.annotations.as_ref().map(|d| read_annotation(&d.join(&file), image_size)),
                    detections: self.detections.as_ref().map(|d| read_detections(&d.join(&file), image_size)),
                    name,
                }
            })
            .collect())
    }
}

struct Pipeline<'a> {
    template: &'a PitchTemplate,
    config: &'a Config,
}

impl Pipeline<'_> {
    /// Keypoints and calibration for one frame, preferring detections over
    /// annotation-derived keypoints.
    fn run(
        &self,
        frame: &FrameInput,
        voter: &VoterConfig,
    ) -> Result<(KeypointSet, Option<CalibrationOutcome>, Vec<String>)> {
        if let Some(det) = &frame.detections {
            let (det, warnings) = det.as_ref().map_err(clone_error)?;
            let outcome = calibrate_frame(self.template, &det.keypoints, &det.lines, det.image_size, voter);
            return Ok((det.keypoints.clone(), outcome, warnings.clone()));
        }
        let Some(ann) = &frame.annotation else {
            return Err(Error::Format("frame has no input".into()));
        };
        let (ann, warnings) = ann.as_ref().map_err(clone_error)?;
        let keypoints = derive_all(self.template, ann, &self.config.derive);
        let outcome = calibrate_frame(self.template, &keypoints, &[], ann.image_size, voter);
        Ok((keypoints, outcome, warnings.clone()))
    }
}

/// Errors are not `Clone`; frame inputs are read once and may be consulted
/// more than once, so failures are re-rendered as format errors.
fn clone_error(e: &Error) -> Error {
    Error::Format(e.to_string())
}

fn outcome_record(name: &str, keypoints: usize, outcome: Option<&CalibrationOutcome>, warnings: Vec<String>) -> FrameRecord {
    match outcome {
        Some(o) => FrameRecord {
            keypoints: Some(keypoints),
            subset: Some(o.label),
            threshold: Some(o.threshold),
            rmse_px: Some(o.rmse_px),
            warnings,
            ..FrameRecord::new(name, FrameStatus::Ok)
        },
        None => FrameRecord {
            keypoints: Some(keypoints),
            warnings,
            ..FrameRecord::new(name, FrameStatus::NoOutput)
        },
    }
}

/// Runs a manifest. Per-frame failures are recorded in the summary and do
/// not abort the run; unreadable input directories and unwritable outputs
/// do.
pub fn run_batch(manifest: &RunManifest) -> Result<BatchSummary> {
    let mut config = manifest.config.clone();
    if let Some(seed) = manifest.seed {
        config.synthetic.seed = seed;
        config.voter.seed = seed;
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(manifest.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    ensure_dir(&manifest.output)?;
    let summary = pool.install(|| run_mode(manifest, &config))?;
    write_json(&manifest.output.join("summary.json"), &summary)?;
    Ok(summary)
}

fn require_input(manifest: &RunManifest) -> Result<&Path> {
    manifest
        .input
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{:?} mode needs an input directory", manifest.mode)))
}

fn run_mode(manifest: &RunManifest, config: &Config) -> Result<BatchSummary> {
    let template = config.template()?;
    let out = &manifest.output;
    let pipeline = Pipeline {
        template: &template,
        config,
    };
    let summary = |frames, report, tune| BatchSummary {
        mode: manifest.mode,
        frames,
        report,
        tune,
    };
    match manifest.mode {
        Mode::Synth => {
            let dirs = ["annotations", "detections", "cameras"].map(|d| out.join(d));
            dirs.iter().try_for_each(|d| ensure_dir(d))?;
            let records = (0..manifest.frames as u64)
                .into_par_iter()
                .map(|i| {
                    let frame = generate_frame(&template, &config.synthetic, i);
                    let name = format!("frame_{i:05}");
                    let file = format!("{name}.json");
                    write_annotation(&dirs[0].join(&file), &frame.annotation)?;
                    write_detections(&dirs[1].join(&file), &frame.detections)?;
                    write_json(&dirs[2].join(&file), &CameraRecord::new(&frame.camera, 0.0))?;
                    if manifest.overlay {
                        let svg = render_overlay(&frame.camera, &template, Some(&frame.detections.keypoints), None);
                        write_text(&out.join("overlays").join(format!("{name}.svg")), &svg)?;
                    }
                    Ok(FrameRecord {
                        keypoints: Some(frame.detections.keypoints.len()),
                        ..FrameRecord::new(&name, FrameStatus::Ok)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summary(records, None, None))
        }
        Mode::Derive => {
            let layout = Layout::discover(require_input(manifest)?)?;
            if layout.annotations.is_none() {
                return Err(Error::Config("derive mode needs annotation files".into()));
            }
            let frames = layout.frames(config.image_size, true)?;
            let dir = out.join("keypoints");
            ensure_dir(&dir)?;
            let records = frames
                .par_iter()
                .map(|f| {
                    let ann = f.annotation.as_ref().expect("annotation layout");
                    let (ann, warnings) = match ann {
                        Ok(a) => a,
                        Err(e) => return Ok(FrameRecord::error(&f.name, e)),
                    };
                    let set = derive_all(&template, ann, &config.derive);
                    write_keypoints(&dir.join(format!("{}.json", f.name)), ann.image_size, &set)?;
                    Ok(FrameRecord {
                        keypoints: Some(set.len()),
                        warnings: warnings.clone(),
                        ..FrameRecord::new(&f.name, FrameStatus::Ok)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summary(records, None, None))
        }
        Mode::Calibrate => {
            let layout = Layout::discover(require_input(manifest)?)?;
            let frames = layout.frames(config.image_size, false)?;
            let dir = out.join("cameras");
            ensure_dir(&dir)?;
            let records = frames
                .par_iter()
                .map(|f| {
                    let (kp, outcome, warnings) = match pipeline.run(f, &config.voter) {
                        Ok(r) => r,
                        Err(e) => return Ok(FrameRecord::error(&f.name, &e)),
                    };
                    if let Some(o) = &outcome {
                        write_json(&dir.join(format!("{}.json", f.name)), &CameraRecord::new(&o.params, o.rmse_px))?;
                        if manifest.overlay {
                            let svg = render_overlay(&o.params, &template, Some(&kp), None);
                            write_text(&out.join("overlays").join(format!("{}.svg", f.name)), &svg)?;
                        }
                    }
                    Ok(outcome_record(&f.name, kp.len(), outcome.as_ref(), warnings))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summary(records, None, None))
        }
        Mode::Evaluate => {
            let layout = evaluation_layout(manifest)?;
            let frames = layout.frames(config.image_size, true)?;
            let dir = out.join("cameras");
            ensure_dir(&dir)?;
            let results = frames
                .par_iter()
                .map(|f| {
                    let (record, evaluator, params) = evaluate_frame(&pipeline, f, &config.voter);
                    if let Some((params, rmse)) = params {
                        write_json(&dir.join(format!("{}.json", f.name)), &CameraRecord::new(&params, rmse))?;
                    }
                    Ok((record, evaluator))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = Evaluator::new(&config.thresholds);
            let mut records = Vec::with_capacity(results.len());
            for (r, e) in results {
                total.merge(&e);
                records.push(r);
            }
            let report = total.report();
            write_json(&out.join("report.json"), &report)?;
            Ok(summary(records, Some(report), None))
        }
        Mode::Tune => {
            let layout = evaluation_layout(manifest)?;
            let frames = layout.frames(config.image_size, true)?;
            let mut candidates = Vec::new();
            for thresholds in threshold_grid() {
                let voter = VoterConfig {
                    confidence_thresholds: thresholds.clone(),
                    ..config.voter.clone()
                };
                let mut total = Evaluator::new(&config.thresholds);
                let evals: Vec<Evaluator> = frames.par_iter().map(|f| evaluate_frame(&pipeline, f, &voter).1).collect();
                evals.iter().for_each(|e| total.merge(e));
                candidates.push(TuneCandidate {
                    confidence_thresholds: thresholds,
                    score: total.report().score,
                });
            }
            let best = candidates
                .iter()
                .fold(None::<&TuneCandidate>, |best, c| match best {
                    Some(b) if b.score >= c.score => Some(b),
                    _ => Some(c),
                })
                .cloned()
                .expect("grid is not empty");
            let mut tuned = config.clone();
            tuned.voter.confidence_thresholds = best.confidence_thresholds.clone();
            write_json(&out.join("tuned_config.json"), &tuned)?;
            let records = frames.iter().map(|f| FrameRecord::new(&f.name, FrameStatus::Ok)).collect();
            Ok(summary(records, None, Some(TuneResult { best, candidates })))
        }
    }
}

fn evaluation_layout(manifest: &RunManifest) -> Result<Layout> {
    let input = require_input(manifest)?;
    let layout = Layout::discover(input)?;
    if !input.join("annotations").is_dir() {
        return Err(Error::Config(format!(
            "{} mode needs ground truth in {}",
            if manifest.mode == Mode::Tune { "tune" } else { "evaluate" },
            input.join("annotations").display()
        )));
    }
    Ok(layout)
}

type EvaluatedFrame = (FrameRecord, Evaluator, Option<(crate::camera::CameraParams, f64)>);

fn evaluate_frame(pipeline: &Pipeline<'_>, frame: &FrameInput, voter: &VoterConfig) -> EvaluatedFrame {
    let mut evaluator = Evaluator::new(&pipeline.config.thresholds);
    let template = pipeline.template;
    let ann = match frame.annotation.as_ref().expect("evaluation layout has annotations") {
        Ok((a, _)) => a,
        Err(e) => {
            warn!("{}: {e}", frame.name);
            evaluator.add_frame(None, template, &Annotation::new(pipeline.config.image_size));
            return (FrameRecord::error(&frame.name, e), evaluator, None);
        }
    };
    match pipeline.run(frame, voter) {
        Ok((kp, outcome, warnings)) => {
            evaluator.add_frame(outcome.as_ref().map(|o| &o.params), template, ann);
            if frame.detections.is_some() {
                let gt = derive_all(template, ann, &pipeline.config.derive);
                evaluator.add_keypoints(&gt, &kp);
            }
            let params = outcome.as_ref().map(|o| (o.params, o.rmse_px));
            (outcome_record(&frame.name, kp.len(), outcome.as_ref(), warnings), evaluator, params)
        }
        Err(e) => {
            warn!("{}: {e}", frame.name);
            evaluator.add_frame(None, template, ann);
            (FrameRecord::error(&frame.name, &e), evaluator, None)
        }
    }
}

/// Descending threshold triples from a coarse grid.
fn threshold_grid() -> Vec<Vec<f64>> {
    let levels = [0.9, 0.7, 0.5, 0.3, 0.1];
    let mut out = Vec::new();
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            for k in j + 1..levels.len() {
                out.push(vec![levels[i], levels[j], levels[k]]);
            }
        }
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_descending() {
        let grid = threshold_grid();
        assert_eq!(grid.len(), 10);
        assert!(grid.iter().all(|t| t.windows(2).all(|w| w[0] > w[1])));
    }

    #[test]
    fn evaluate_without_annotations_fails() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("detections")).unwrap();
        let m = RunManifest::new(Mode::Evaluate, Some(dir.path().to_path_buf()), dir.path().join("out"));
        assert!(matches!(run_batch(&m), Err(Error::Config(_))));
    }

    #[test]
    fn synth_then_calibrate_and_evaluate() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let mut m = RunManifest::new(Mode::Synth, None, data.clone());
        m.frames = 4;
        m.config.synthetic.min_visible_keypoints = 8;
        let s = run_batch(&m).unwrap();
        assert_eq!(s.count(FrameStatus::Ok), 4);

        let mut e = RunManifest::new(Mode::Evaluate, Some(data.clone()), dir.path().join("eval"));
        e.jobs = 2;
        let s = run_batch(&e).unwrap();
        let report = s.report.unwrap();
        assert_eq!(report.completeness_ratio, 1.0);
        assert_eq!(report.acc_at_5, Some(1.0));
        assert_eq!(list_json(&dir.path().join("eval/cameras")).unwrap().len(), 4);
    }
}
