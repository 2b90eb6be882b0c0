//! Synthetic ground truth: plausible broadcast cameras and the annotations and
//! detector outputs they would produce.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Point2, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, ImageSize};
use crate::error::{Error, Result};
use crate::eval::{clip_segment, PROJECTION_STEP_M};
use crate::keypoints::{Annotation, Keypoint, KeypointSet, KeypointSource};
use crate::pitch::{KeypointFamily, MarkingClass, MarkingGeometry, MarkingId, PitchTemplate};
use crate::voter::{Detections, LineObservation};

/// Sampling box for camera poses and focal lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRanges {
    pub max_abs_x_m: f64,
    /// Range of `|y|`; the side of the pitch is drawn uniformly.
    pub abs_y_m: [f64; 2],
    pub z_m: [f64; 2],
    pub focal_px: [f64; 2],
    /// The look-at target is drawn uniformly from the pitch grown by this
    /// margin.
    pub look_at_margin_m: f64,
    pub max_roll_rad: f64,
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            max_abs_x_m: 60.0,
            abs_y_m: [25.0, 55.0],
            z_m: [8.0, 40.0],
            focal_px: [800.0, 6000.0],
            look_at_margin_m: 0.0,
            max_roll_rad: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub camera: CameraRanges,
    pub image_size: ImageSize,
    /// Gaussian pixel noise on annotation points.
    pub noise_sigma_px: f64,
    /// Gaussian pixel noise on detected keypoints and line extremities.
    pub detection_noise_sigma_px: f64,
    /// Probability that a whole class is dropped from the annotation.
    pub dropout_prob: f64,
    /// Per-class overrides of `dropout_prob`, keyed by class name.
    pub class_dropout: BTreeMap<String, f64>,
    /// Per-point probability and magnitude of a displacement in a random
    /// direction.
    pub outlier_prob: f64,
    pub outlier_magnitude_px: f64,
    /// Detection confidences are uniform in this range.
    pub confidence: [f64; 2],
    /// Cameras are resampled until this many line-line keypoints project
    /// into the frame.
    pub min_visible_keypoints: usize,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            camera: CameraRanges::default(),
            image_size: ImageSize::BROADCAST,
            noise_sigma_px: 0.0,
            detection_noise_sigma_px: 0.0,
            dropout_prob: 0.0,
            class_dropout: BTreeMap::new(),
            outlier_prob: 0.0,
            outlier_magnitude_px: 0.0,
            confidence: [1.0, 1.0],
            min_visible_keypoints: 0,
            seed: 7,
        }
    }
}

const MAX_CAMERA_ATTEMPTS: usize = 10_000;
/// Angular spacing of conic annotation samples (36 per full circle).
const CONIC_STEP_RAD: f64 = PI / 18.0;
const LINE_STEP_M: f64 = 1.0;

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        let c = &self.camera;
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(range_ok(c.abs_y_m) && range_ok(c.z_m) && range_ok(c.focal_px) && range_ok(self.confidence)) {
            return bad("ranges must be finite with min <= max");
        }
        if c.z_m[0] <= 0.0 || c.z_m[1] > 100.0 {
            return bad("camera height must lie in (0, 100] m");
        }
        if c.max_abs_x_m < 0.0 || c.max_abs_x_m > 250.0 || c.abs_y_m[0] < 0.0 || c.abs_y_m[1] > 250.0 {
            return bad("camera position must lie within 250 m of the center");
        }
        if c.focal_px[0] < 10.0 || c.focal_px[1] > 20000.0 {
            return bad("focal range must lie in [10, 20000] px");
        }
        let probs = [self.dropout_prob, self.outlier_prob, self.confidence[0], self.confidence[1]];
        if probs.iter().chain(self.class_dropout.values()).any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities and confidences must lie in [0, 1]");
        }
        if let Some(name) = self.class_dropout.keys().find(|n| MarkingId::from_name(n).is_none()) {
            return Err(Error::UnknownClass(name.clone()));
        }
        if !(self.noise_sigma_px >= 0.0 && self.detection_noise_sigma_px >= 0.0 && self.outlier_magnitude_px >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }

    fn dropout(&self, id: MarkingId) -> f64 {
        self.class_dropout.get(id.name()).copied().unwrap_or(self.dropout_prob)
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

/// Keypoints of the template that project inside the frame.
pub fn visible_keypoint_ids(params: &CameraParams, template: &PitchTemplate) -> Vec<usize> {
    template
        .keypoints()
        .iter()
        .filter(|k| params.project(&k.world).is_some_and(|p| params.image_size.contains(&p)))
        .map(|k| k.id)
        .collect()
}

/// Draws a camera from the scenario's ranges, retrying until at least
/// `min_visible_keypoints` line-line keypoints are in frame. Those are the
/// ones an annotation always determines, whatever else is in view.
pub fn sample_camera<R: Rng + ?Sized>(scenario: &SyntheticScenario, template: &PitchTemplate, rng: &mut R) -> CameraParams {
    let c = &scenario.camera;
    let d = template.dimensions();
    let (hx, hy) = (d.length / 2.0 + c.look_at_margin_m, d.width / 2.0 + c.look_at_margin_m);
    let mut last = None;
    for _ in 0..MAX_CAMERA_ATTEMPTS {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let position = Point3::new(
            uniform(rng, [-c.max_abs_x_m, c.max_abs_x_m]),
            side * uniform(rng, c.abs_y_m),
            uniform(rng, c.z_m),
        );
        let target = Point3::new(uniform(rng, [-hx, hx]), uniform(rng, [-hy, hy]), 0.0);
        let focal = uniform(rng, c.focal_px);
        let roll = uniform(rng, [-c.max_roll_rad, c.max_roll_rad]);
        let Some(cam) = CameraParams::look_at(position, target, focal, roll, scenario.image_size) else {
            continue;
        };
        let line_line = visible_keypoint_ids(&cam, template)
            .into_iter()
            .filter(|&id| template.keypoint(id).is_ok_and(|k| k.family == KeypointFamily::LineLine))
            .count();
        if line_line >= scenario.min_visible_keypoints {
            return cam;
        }
        last = Some(cam);
    }
    last.expect("camera sampling produced at least one camera")
}

fn in_view(params: &CameraParams, w: &Point3<f64>) -> Option<Point2<f64>> {
    params.project(w).filter(|p| params.image_size.contains(p))
}

/// Noiseless in-frame samples of one marking, with the exact frame-boundary
/// crossings of the true curve added where it enters or leaves the view.
fn visible_samples(params: &CameraParams, class: &MarkingClass) -> Vec<Point2<f64>> {
    let n = match class.geometry {
        MarkingGeometry::Segment { .. } => (class.length() / LINE_STEP_M).ceil().max(1.0) as usize,
        MarkingGeometry::Conic {
            start_angle, end_angle, ..
        } => ((end_angle - start_angle) / CONIC_STEP_RAD - 1e-9).ceil().max(1.0) as usize,
    };
    let at = |s: f64| in_view(params, &class.point_at(s));
    let crossing = |mut inside: f64, mut outside: f64| {
        for _ in 0..60 {
            let mid = 0.5 * (inside + outside);
            if at(mid).is_some() {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        at(inside)
    };
    let mut out = Vec::new();
    let mut prev: Option<(f64, bool)> = None;
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let p = at(s);
        if let Some((ps, was_in)) = prev {
            match (was_in, p.is_some()) {
                (true, false) => out.extend(crossing(ps, s)),
                (false, true) => out.extend(crossing(s, ps)),
                (false, false) => {
                    // Both samples outside, but the curve may still cut a
                    // corner of the frame in between.
                    if let Some(mid) = grazing_param(params, class, ps, s) {
                        out.extend(crossing(mid, ps));
                        out.extend(at(mid));
                        out.extend(crossing(mid, s));
                    }
                }
                (true, true) => {}
            }
        }
        out.extend(p);
        prev = Some((s, p.is_some()));
    }
    out.dedup();
    out
}

/// A parameter in `(s0, s1)` whose point is in view, found by clipping the
/// projected chords of short sub-intervals against the frame.
fn grazing_param(params: &CameraParams, class: &MarkingClass, s0: f64, s1: f64) -> Option<f64> {
    let pieces = match class.geometry {
        MarkingGeometry::Segment { .. } => 1,
        MarkingGeometry::Conic { .. } => ((s1 - s0) * class.length() / PROJECTION_STEP_M).ceil().max(1.0) as usize,
    };
    (0..pieces).find_map(|k| {
        let a = s0 + (s1 - s0) * k as f64 / pieces as f64;
        let b = s0 + (s1 - s0) * (k + 1) as f64 / pieces as f64;
        let (wa, wb) = (class.point_at(a), class.point_at(b));
        let (za, zb) = (params.to_camera(&wa).z, params.to_camera(&wb).z);
        let (pa, pb) = (params.project(&wa)?, params.project(&wb)?);
        let (t0, t1) = clip_segment(pa, pb, params.image_size)?;
        let u = 0.5 * (t0 + t1);
        // Perspective-correct inverse of the image interpolation.
        let t = (u / zb) / ((1.0 - u) / za + u / zb);
        let s = a + (b - a) * t;
        in_view(params, &class.point_at(s)).map(|_| s)
    })
}

fn perturb<R: Rng + ?Sized>(p: &mut Point2<f64>, sigma: f64, outlier_prob: f64, magnitude: f64, rng: &mut R) {
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        p.x += n.sample(rng);
        p.y += n.sample(rng);
    }
    if outlier_prob > 0.0 && rng.random_bool(outlier_prob) {
        let a = rng.random_range(0.0..2.0 * PI);
        *p += Vector2::new(a.cos(), a.sin()) * magnitude;
    }
}

/// Annotation of every marking seen by `params`: 1 m samples along lines,
/// 10 degree samples along conics, clipped to the frame, then per-class
/// dropout, pixel noise and outliers. Classes left with fewer than two points
/// are omitted.
pub fn render_annotation<R: Rng + ?Sized>(
    params: &CameraParams,
    template: &PitchTemplate,
    scenario: &SyntheticScenario,
    rng: &mut R,
) -> Annotation {
    let mut ann = Annotation::new(params.image_size);
    for m in template.markings() {
        let dropout = scenario.dropout(m.id);
        if dropout > 0.0 && rng.random_bool(dropout) {
            continue;
        }
        let mut pts = visible_samples(params, m);
        for p in &mut pts {
            perturb(p, scenario.noise_sigma_px, scenario.outlier_prob, scenario.outlier_magnitude_px, rng);
        }
        if pts.len() >= 2 {
            ann.insert(m.id, pts);
        }
    }
    ann
}

/// Part of the world segment `a -> b` with depth above `min_depth`.
fn clip_to_front(params: &CameraParams, a: Point3<f64>, b: Point3<f64>, min_depth: f64) -> Option<(Point3<f64>, Point3<f64>)> {
    let (za, zb) = (params.to_camera(&a).z, params.to_camera(&b).z);
    match (za > min_depth, zb > min_depth) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (min_depth - za) / (zb - za);
            let cut = a + (b - a) * t;
            Some(if a_in { (a, cut) } else { (cut, b) })
        }
    }
}

/// Extremities of the visible part of a straight marking.
pub fn visible_extremities(params: &CameraParams, class: &MarkingClass) -> Option<(Point2<f64>, Point2<f64>)> {
    let MarkingGeometry::Segment { start, end } = class.geometry else {
        return None;
    };
    let (a, b) = clip_to_front(params, start, end, 1e-3)?;
    let (pa, pb) = (params.project(&a)?, params.project(&b)?);
    let (t0, t1) = clip_segment(pa, pb, params.image_size)?;
    let (qa, qb) = (pa + (pb - pa) * t0, pa + (pb - pa) * t1);
    ((qb - qa).norm() > 1e-6).then_some((qa, qb))
}

/// Detector-style output: every in-frame keypoint and the visible
/// extremities of every straight marking, with noise, outliers and
/// confidences drawn from the scenario.
pub fn render_detections<R: Rng + ?Sized>(
    params: &CameraParams,
    template: &PitchTemplate,
    scenario: &SyntheticScenario,
    rng: &mut R,
) -> Detections {
    let mut det = Detections::empty(params.image_size);
    let sigma = scenario.detection_noise_sigma_px;
    for k in template.keypoints() {
        let Some(mut p) = in_view(params, &k.world) else {
            continue;
        };
        perturb(&mut p, sigma, scenario.outlier_prob, scenario.outlier_magnitude_px, rng);
        det.keypoints.insert(Keypoint {
            id: k.id,
            position: p,
            confidence: uniform(rng, scenario.confidence),
            source: KeypointSource::Detector,
        });
    }
    for m in template.markings() {
        let Some((mut a, mut b)) = visible_extremities(params, m) else {
            continue;
        };
        perturb(&mut a, sigma, 0.0, 0.0, rng);
        perturb(&mut b, sigma, 0.0, 0.0, rng);
        det.lines.push(LineObservation {
            class: m.id,
            start: a,
            end: b,
            confidence: uniform(rng, scenario.confidence),
        });
    }
    det
}

/// One generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub index: u64,
    pub camera: CameraParams,
    pub annotation: Annotation,
    pub detections: Detections,
}

/// Generator for frame `index` of a batch: an independent stream of the
/// scenario seed, so frames can be produced in any order.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn generate_frame(template: &PitchTemplate, scenario: &SyntheticScenario, index: u64) -> SyntheticFrame {
    let mut rng = frame_rng(scenario.seed, index);
    let camera = sample_camera(scenario, template, &mut rng);
    let annotation = render_annotation(&camera, template, scenario, &mut rng);
    let detections = render_detections(&camera, template, scenario, &mut rng);
    SyntheticFrame {
        index,
        camera,
        annotation,
        detections,
    }
}

/// Keypoints at the exact projections of their world positions, for frames
/// where the detector is assumed perfect.
pub fn exact_keypoints(params: &CameraParams, template: &PitchTemplate) -> KeypointSet {
    template
        .keypoints()
        .iter()
        .filter_map(|k| Some(Keypoint::derived(k.id, in_view(params, &k.world)?)))
        .collect()
}
