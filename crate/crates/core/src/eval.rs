//! Polyline-matching accuracy, completeness ratio, combined score and the
//! keypoint L2 distance.

use std::collections::BTreeMap;

use nalgebra::Point2;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, ImageSize};
use crate::keypoints::{Annotation, KeypointSet};
use crate::pitch::{sample_marking, MarkingId, PitchTemplate};

/// Sampling step along markings for predicted polylines, meters.
pub const PROJECTION_STEP_M: f64 = 0.25;

pub type Polylines = BTreeMap<MarkingId, Vec<Vec<Point2<f64>>>>;

/// Clips the segment `a -> b` to the closed image rectangle
/// (Liang-Barsky). Returns the parameters of the visible part.
pub(crate) fn clip_segment(a: Point2<f64>, b: Point2<f64>, size: ImageSize) -> Option<(f64, f64)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let bounds = [
        (-d.x, a.x),
        (d.x, size.width as f64 - a.x),
        (-d.y, a.y),
        (d.y, size.height as f64 - a.y),
    ];
    for (p, q) in bounds {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Splits a projected sample sequence into in-frame polylines. `None`
/// entries mark samples behind the camera and always break the polyline.
pub(crate) fn clip_polyline(points: &[Option<Point2<f64>>], size: ImageSize) -> Vec<Vec<Point2<f64>>> {
    let mut out = Vec::new();
    let mut current: Vec<Point2<f64>> = Vec::new();
    let mut flush = |current: &mut Vec<Point2<f64>>| {
        if current.len() >= 2 {
            out.push(std::mem::take(current));
        } else {
            current.clear();
        }
    };
    for pair in points.windows(2) {
        let (Some(a), Some(b)) = (pair[0], pair[1]) else {
            flush(&mut current);
            continue;
        };
        let Some((t0, t1)) = clip_segment(a, b, size) else {
            flush(&mut current);
            continue;
        };
        let start = a + (b - a) * t0;
        let end = a + (b - a) * t1;
        if t0 > 0.0 {
            flush(&mut current);
        }
        if current.last() != Some(&start) {
            current.push(start);
        }
        if end != start {
            current.push(end);
        }
        if t1 < 1.0 {
            flush(&mut current);
        }
    }
    flush(&mut current);
    out
}

/// Projects every marking at `step_m` spacing and keeps the in-frame
/// polylines. A class is predicted when at least one polyline survives.
pub fn project_markings(params: &CameraParams, template: &PitchTemplate, step_m: f64) -> Polylines {
    let mut out = Polylines::new();
    for m in template.markings() {
        let projected: Vec<Option<Point2<f64>>> = sample_marking(m, step_m).iter().map(|w| params.project(w)).collect();
        let lines = clip_polyline(&projected, params.image_size);
        if !lines.is_empty() {
            out.insert(m.id, lines);
        }
    }
    out
}

fn point_segment_distance(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

/// Distance from `p` to the nearest segment of any of the polylines.
pub fn distance_to_polylines(p: &Point2<f64>, lines: &[Vec<Point2<f64>>]) -> f64 {
    lines
        .iter()
        .flat_map(|l| l.windows(2))
        .map(|s| point_segment_distance(p, &s[0], &s[1]))
        .fold(f64::INFINITY, f64::min)
}

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }
}

/// Per-class confusion at threshold `t` (pixels, closed).
///
/// An annotated class is a true positive when every annotated point is
/// within `t` of its predicted polylines and a false positive otherwise; it
/// is a false negative when not predicted. Predicted classes without
/// annotation are false positives.
pub fn segment_confusion(pred: &Polylines, annotation: &Annotation, t: f64) -> BTreeMap<MarkingId, Confusion> {
    let mut out = BTreeMap::new();
    for (&id, points) in annotation.classes.iter().filter(|(_, p)| !p.is_empty()) {
        let c = match pred.get(&id) {
            Some(lines) if points.iter().all(|p| distance_to_polylines(p, lines) <= t) => Confusion::new(1, 0, 0),
            Some(_) => Confusion::new(0, 1, 0),
            None => Confusion::new(0, 0, 1),
        };
        out.insert(id, c);
    }
    for &id in pred.keys() {
        if annotation.points(id).is_empty() {
            out.insert(id, Confusion::new(0, 1, 0));
        }
    }
    out
}

/// `TP / (TP + FN + FP)`; `None` when every count is zero.
pub fn acc_at_t(counts: &Confusion) -> Option<f64> {
    let total = counts.total();
    (total > 0).then(|| counts.tp as f64 / total as f64)
}

pub fn score(acc: f64, completeness_ratio: f64) -> f64 {
    acc * completeness_ratio
}

/// Mean Euclidean distance over ids present in both sets; `None` without a
/// common id.
pub fn l2_keypoints(gt: &KeypointSet, pred: &KeypointSet) -> Option<f64> {
    let (sum, n) = l2_sum(gt, pred);
    (n > 0).then(|| sum / n as f64)
}

fn l2_sum(gt: &KeypointSet, pred: &KeypointSet) -> (f64, u64) {
    gt.iter()
        .filter_map(|g| pred.get(g.id).map(|p| (p.position - g.position).norm()))
        .fold((0.0, 0), |(s, n), d| (s + d, n + 1))
}

/// Results at one pixel threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub t: f64,
    pub total: Confusion,
    pub per_class: BTreeMap<String, Confusion>,
    pub acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: u64,
    pub frames_with_output: u64,
    pub completeness_ratio: f64,
    pub thresholds: Vec<ThresholdReport>,
    /// Acc@5 (absent when no frame produced counts).
    pub acc_at_5: Option<f64>,
    /// `Acc@5 * CR`, zero when Acc@5 is undefined.
    pub score: f64,
    pub l2_px: Option<f64>,
}

impl EvalReport {
    pub fn acc(&self, t: f64) -> Option<f64> {
        self.thresholds.iter().find(|r| r.t == t).and_then(|r| r.acc)
    }
}

/// Accumulates per-frame results. Merging is a plain sum, so frames can be
/// evaluated in any order or in parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    thresholds: Vec<f64>,
    frames: u64,
    frames_with_output: u64,
    counts: Vec<BTreeMap<MarkingId, Confusion>>,
    l2: (f64, u64),
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];
const SCORE_THRESHOLD: f64 = 5.0;

impl Evaluator {
    /// `thresholds` always gains 5 px, which the score uses.
    pub fn new(thresholds: &[f64]) -> Self {
        let mut t: Vec<f64> = thresholds.to_vec();
        if !t.contains(&SCORE_THRESHOLD) {
            t.push(SCORE_THRESHOLD);
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        Self {
            counts: vec![BTreeMap::new(); t.len()],
            thresholds: t,
            frames: 0,
            frames_with_output: 0,
            l2: (0.0, 0),
        }
    }

    /// Records one frame. Frames without a camera count only toward the
    /// completeness ratio.
    pub fn add_frame(&mut self, params: Option<&CameraParams>, template: &PitchTemplate, annotation: &Annotation) {
        self.frames += 1;
        let Some(params) = params else {
            return;
        };
        self.frames_with_output += 1;
        let pred = project_markings(params, template, PROJECTION_STEP_M);
        for (t, acc) in self.thresholds.iter().zip(self.counts.iter_mut()) {
            for (id, c) in segment_confusion(&pred, annotation, *t) {
                acc.entry(id).or_default().add(&c);
            }
        }
    }

    pub fn add_keypoints(&mut self, gt: &KeypointSet, pred: &KeypointSet) {
        let (s, n) = l2_sum(gt, pred);
        self.l2.0 += s;
        self.l2.1 += n;
    }

    pub fn merge(&mut self, other: &Evaluator) {
        assert_eq!(self.thresholds, other.thresholds, "evaluators must share thresholds");
        self.frames += other.frames;
        self.frames_with_output += other.frames_with_output;
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (id, c) in theirs {
                mine.entry(*id).or_default().add(c);
            }
        }
        self.l2.0 += other.l2.0;
        self.l2.1 += other.l2.1;
    }

    pub fn report(&self) -> EvalReport {
        let thresholds: Vec<ThresholdReport> = self
            .thresholds
            .iter()
            .zip(&self.counts)
            .map(|(&t, per)| {
                let mut total = Confusion::default();
                per.values().for_each(|c| total.add(c));
                ThresholdReport {
                    t,
                    total,
                    per_class: per.iter().map(|(id, c)| (id.name().to_string(), *c)).collect(),
                    acc: acc_at_t(&total),
                }
            })
            .collect();
        let cr = if self.frames == 0 {
            0.0
        } else {
            self.frames_with_output as f64 / self.frames as f64
        };
        let acc_at_5 = thresholds.iter().find(|r| r.t == SCORE_THRESHOLD).and_then(|r| r.acc);
        EvalReport {
            frames: self.frames,
            frames_with_output: self.frames_with_output,
            completeness_ratio: cr,
            score: score(acc_at_5.unwrap_or(0.0), cr),
            acc_at_5,
            thresholds,
            l2_px: (self.l2.1 > 0).then(|| self.l2.0 / self.l2.1 as f64),
        }
    }
}
