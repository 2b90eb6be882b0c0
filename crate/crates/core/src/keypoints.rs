//! Structural keypoints from per-class marking observations.
//!
//! Line-line points come from two-stage line fits, line-conic and tangent
//! points from ellipse fits, and the extra points from a ground homography
//! built on everything derived before them.

use std::collections::BTreeMap;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::camera::{focal_from_homography, pose_from_homography, Correspondence, ImageSize};
use crate::geometry::{
    estimate_homography, fit_ellipse, fit_line, intersect_line_conic, normalized_orientation, refine_intersection,
    tangent_points, Conic, GeometryError, Homography, PointPair,
};
use crate::pitch::{Construction, KeypointFamily, MarkingId, PitchTemplate};

/// Observed points per marking class for one image, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_size: ImageSize,
    pub classes: BTreeMap<MarkingId, Vec<Point2<f64>>>,
}

impl Annotation {
    pub fn new(image_size: ImageSize) -> Self {
        Self {
            image_size,
            classes: BTreeMap::new(),
        }
    }

    /// Points of `id`; empty when the class was not observed.
    pub fn points(&self, id: MarkingId) -> &[Point2<f64>] {
        self.classes.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn insert(&mut self, id: MarkingId, points: Vec<Point2<f64>>) {
        self.classes.insert(id, points);
    }

    pub fn is_empty(&self) -> bool {
        self.classes.values().all(Vec::is_empty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointSource {
    AnnotationDerived,
    Detector,
    LineFusion,
}

/// An image keypoint. The position may lie outside the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub id: usize,
    pub position: Point2<f64>,
    pub confidence: f64,
    pub source: KeypointSource,
}

impl Keypoint {
    pub fn derived(id: usize, position: Point2<f64>) -> Self {
        Self {
            id,
            position,
            confidence: 1.0,
            source: KeypointSource::AnnotationDerived,
        }
    }
}

/// Keypoints keyed by id, at most one per id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeypointSet {
    points: BTreeMap<usize, Keypoint>,
}

impl KeypointSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the keypoint with the same id.
    pub fn insert(&mut self, kp: Keypoint) {
        self.points.insert(kp.id, kp);
    }

    /// Inserts only when the id is free. Returns whether it was inserted.
    pub fn insert_if_absent(&mut self, kp: Keypoint) -> bool {
        match self.points.entry(kp.id) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(kp);
                true
            }
            std::collections::btree_map::Entry::Occupied(_) => false,
        }
    }

    pub fn get(&self, id: usize) -> Option<&Keypoint> {
        self.points.get(&id)
    }

    pub fn contains(&self, id: usize) -> bool {
        self.points.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keypoints in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Keypoint> + '_ {
        self.points.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.keys().copied()
    }

    /// Adds every keypoint of `other` whose id is not yet present.
    pub fn merge(&mut self, other: &KeypointSet) {
        for kp in other.iter() {
            self.insert_if_absent(*kp);
        }
    }

    /// Keypoints with confidence at or above `threshold`.
    pub fn above(&self, threshold: f64) -> KeypointSet {
        self.iter().filter(|k| k.confidence >= threshold).copied().collect()
    }

    /// Number of keypoints inside the closed image rectangle.
    pub fn count_in_frame(&self, size: ImageSize) -> usize {
        self.iter().filter(|k| size.contains(&k.position)).count()
    }

    /// World/image pairs for ids known to `template`; unknown ids are skipped.
    pub fn correspondences(&self, template: &PitchTemplate) -> Vec<Correspondence> {
        self.iter()
            .filter_map(|k| {
                let world = template.keypoint_world(k.id).ok()?;
                Some(Correspondence {
                    world,
                    image: k.position,
                    id: k.id,
                    confidence: k.confidence,
                })
            })
            .collect()
    }
}

impl FromIterator<Keypoint> for KeypointSet {
    fn from_iter<I: IntoIterator<Item = Keypoint>>(iter: I) -> Self {
        let mut set = KeypointSet::new();
        for kp in iter {
            set.insert(kp);
        }
        set
    }
}

/// Which optional families [`derive_all`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeriveOptions {
    pub tangents: bool,
    pub extras: bool,
    /// Relabel so that the goal nearer the camera is the left one.
    pub remap: bool,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            tangents: true,
            extras: true,
            remap: false,
        }
    }
}

const MIN_LINE_POINTS: usize = 2;
const MIN_CONIC_POINTS: usize = 5;

fn finite(p: &Point2<f64>) -> bool {
    p.x.is_finite() && p.y.is_finite()
}

/// Line-line keypoints whose two defining classes each have at least two
/// points. Near-parallel or degenerate pairs are skipped.
pub fn derive_line_line(template: &PitchTemplate, annotation: &Annotation) -> KeypointSet {
    let mut out = KeypointSet::new();
    for def in template.keypoints() {
        let Construction::LineLine { a, b } = def.construction else {
            continue;
        };
        let (pa, pb) = (annotation.points(a), annotation.points(b));
        if pa.len() < MIN_LINE_POINTS || pb.len() < MIN_LINE_POINTS {
            continue;
        }
        if let Ok(p) = refine_intersection(pa, pb) {
            if finite(&p) {
                out.insert(Keypoint::derived(def.id, p));
            }
        }
    }
    out
}

/// Decides which of two analytic image solutions belongs to which world
/// point.
struct Matcher<'a> {
    template: &'a PitchTemplate,
    anchors: &'a KeypointSet,
    homography: Option<Homography>,
}

impl<'a> Matcher<'a> {
    fn new(template: &'a PitchTemplate, anchors: &'a KeypointSet) -> Self {
        Self {
            template,
            anchors,
            homography: ground_homography(template, anchors).ok(),
        }
    }

    /// True when `pa` belongs to `wa` (and `pb` to `wb`), false when swapped.
    fn keep_order(
        &self,
        (wa, wb): (Point2<f64>, Point2<f64>),
        (pa, pb): (Point2<f64>, Point2<f64>),
        reference: Option<(Point2<f64>, Point2<f64>)>,
    ) -> bool {
        if let Some(h) = &self.homography {
            if let (Some(ha), Some(hb)) = (h.apply(&wa), h.apply(&wb)) {
                let direct = (pa - ha).norm() + (pb - hb).norm();
                let swapped = (pa - hb).norm() + (pb - ha).norm();
                return direct <= swapped;
            }
        }

        let refs = reference.into_iter().chain(self.anchors.iter().filter_map(|k| {
            let def = self.template.keypoint(k.id).ok()?;
            (def.on_ground() && def.family != KeypointFamily::Extra).then(|| (def.world.xy(), k.position))
        }));
        let mut collinear = None;
        for (rw, ri) in refs {
            let ow = normalized_orientation(wa, wb, rw);
            if ow.abs() > 1e-3 {
                // A camera above the ground mirrors orientation into the
                // y-down image frame.
                return normalized_orientation(pa, pb, ri) * ow < 0.0;
            }
            if collinear.is_none() && (wa - rw).dot(&(wb - rw)) > 0.0 {
                collinear = Some((rw, ri));
            }
        }
        if let Some((rw, ri)) = collinear {
            // Betweenness along a line survives the projection.
            return ((pa - ri).norm() < (pb - ri).norm()) == ((wa - rw).norm() < (wb - rw).norm());
        }

        // Nothing to anchor the pair: assume the main camera side (y < 0),
        // where the far side of the pitch is at the top of the image.
        let image_key = |p: &Point2<f64>, q: &Point2<f64>| p.y.total_cmp(&q.y).then(p.x.total_cmp(&q.x));
        let world_key = |p: &Point2<f64>, q: &Point2<f64>| q.y.total_cmp(&p.y).then(p.x.total_cmp(&q.x));
        image_key(&pa, &pb) == world_key(&wa, &wb)
    }
}

/// Ground homography from the non-extra ground keypoints of `set`.
fn ground_homography(template: &PitchTemplate, set: &KeypointSet) -> Result<Homography, GeometryError> {
    let pairs: Vec<PointPair> = set
        .iter()
        .filter_map(|k| {
            let def = template.keypoint(k.id).ok()?;
            (def.on_ground() && def.family != KeypointFamily::Extra)
                .then(|| PointPair::new(def.world.xy(), k.position))
        })
        .collect();
    estimate_homography(&pairs)
}

struct ConicCache<'a> {
    annotation: &'a Annotation,
    fits: BTreeMap<MarkingId, Option<Conic>>,
}

impl<'a> ConicCache<'a> {
    fn new(annotation: &'a Annotation) -> Self {
        Self {
            annotation,
            fits: BTreeMap::new(),
        }
    }

    fn get(&mut self, id: MarkingId) -> Option<Conic> {
        let annotation = self.annotation;
        *self.fits.entry(id).or_insert_with(|| {
            let pts = annotation.points(id);
            if pts.len() < MIN_CONIC_POINTS {
                return None;
            }
            fit_ellipse(pts).ok()
        })
    }
}

/// Line-conic keypoints. `anchors` (usually the line-line set) decides which
/// analytic solution gets which id.
pub fn derive_line_conic(template: &PitchTemplate, annotation: &Annotation, anchors: &KeypointSet) -> KeypointSet {
    let matcher = Matcher::new(template, anchors);
    let mut conics = ConicCache::new(annotation);
    let mut out = KeypointSet::new();
    for def in template.keypoints() {
        let Construction::LineConic { line, conic, partner } = def.construction else {
            continue;
        };
        if partner < def.id {
            continue;
        }
        let line_pts = annotation.points(line);
        if line_pts.len() < MIN_LINE_POINTS {
            continue;
        }
        let Some(fitted) = conics.get(conic) else {
            continue;
        };
        let Ok(fitted_line) = fit_line(line_pts) else {
            continue;
        };
        let hits = intersect_line_conic(&fitted_line, &fitted);
        let [p, q] = hits.as_slice() else {
            continue;
        };
        let partner_world = template.keypoints()[partner].world.xy();
        let (pa, pb) = if matcher.keep_order((def.world.xy(), partner_world), (*p, *q), None) {
            (*p, *q)
        } else {
            (*q, *p)
        };
        out.insert(Keypoint::derived(def.id, pa));
        out.insert(Keypoint::derived(partner, pb));
    }
    out
}

/// Tangent keypoints. Each needs its external anchor keypoint in `anchors`
/// and a valid ellipse fit of its conic; an anchor on or inside the fitted
/// ellipse yields nothing.
pub fn derive_tangent(template: &PitchTemplate, annotation: &Annotation, anchors: &KeypointSet) -> KeypointSet {
    let matcher = Matcher::new(template, anchors);
    let mut conics = ConicCache::new(annotation);
    let mut out = KeypointSet::new();
    for def in template.keypoints() {
        let Construction::Tangent { external, conic, other } = def.construction else {
            continue;
        };
        let Some(anchor) = anchors.get(external) else {
            continue;
        };
        let Some(fitted) = conics.get(conic) else {
            continue;
        };
        let Ok([p, q]) = tangent_points(&anchor.position, &fitted) else {
            continue;
        };
        let anchor_world = template.keypoints()[external].world.xy();
        let keep = matcher.keep_order((def.world.xy(), other), (p, q), Some((anchor_world, anchor.position)));
        out.insert(Keypoint::derived(def.id, if keep { p } else { q }));
    }
    out
}

/// Extra points projected through a ground homography estimated from the
/// ground keypoints of `base`. Only points in front of the camera and inside
/// the frame are emitted.
pub fn derive_extra(template: &PitchTemplate, annotation: &Annotation, base: &KeypointSet) -> KeypointSet {
    let mut out = KeypointSet::new();
    let Ok(h) = ground_homography(template, base) else {
        return out;
    };
    // Points in view share the sign of the homogeneous scale.
    let front_sign = base
        .iter()
        .filter_map(|k| {
            let def = template.keypoint(k.id).ok()?;
            def.on_ground().then(|| h.apply_homogeneous(&def.world.xy()).z.signum())
        })
        .sum::<f64>()
        .signum();
    for id in template.family_ids(KeypointFamily::Extra) {
        let world = template.keypoints()[id].world.xy();
        let w = h.apply_homogeneous(&world);
        if w.z * front_sign <= 0.0 {
            continue;
        }
        let p = Point2::new(w.x / w.z, w.y / w.z);
        if finite(&p) && annotation.image_size.contains(&p) {
            out.insert(Keypoint::derived(id, p));
        }
    }
    out
}

/// World position of the camera center recovered from the ground
/// homography of `set`.
pub fn camera_center_from_keypoints(
    template: &PitchTemplate,
    set: &KeypointSet,
    image_size: ImageSize,
) -> Option<Point3<f64>> {
    let h = ground_homography(template, set).ok()?;
    let principal = image_size.center();
    let focal = focal_from_homography(h.matrix(), principal).ok()?;
    let ground: Vec<_> = set
        .iter()
        .filter(|k| template.keypoint(k.id).is_ok_and(|d| d.on_ground()))
        .map(|k| template.keypoints()[k.id].world.xy().coords)
        .collect();
    let centroid = Point2::from(ground.iter().sum::<nalgebra::Vector2<f64>>() / ground.len() as f64);
    let (_, position) = pose_from_homography(h.matrix(), focal, principal, centroid).ok()?;
    Some(position)
}

/// Relabels the set so that the goal nearer the camera carries the left ids.
///
/// When the recovered camera center is nearer the right goal (`x > 0`) every
/// id is replaced by the id of the landmark at `(-x, -y)`; image positions
/// are untouched. The input is returned unchanged when no pose can be
/// recovered.
pub fn remap_left_right(template: &PitchTemplate, keypoints: &KeypointSet, image_size: ImageSize) -> KeypointSet {
    let Some(center) = camera_center_from_keypoints(template, keypoints, image_size) else {
        return keypoints.clone();
    };
    let half = template.dimensions().length / 2.0;
    if (center.x + half).abs() <= (center.x - half).abs() {
        return keypoints.clone();
    }
    keypoints
        .iter()
        .map(|k| Keypoint {
            id: template.rotation_partner(k.id).unwrap_or(k.id),
            ..*k
        })
        .collect()
}

/// Full derivation: line-line, then line-conic and tangent points anchored
/// on them, then extras from everything before.
pub fn derive_all(template: &PitchTemplate, annotation: &Annotation, options: &DeriveOptions) -> KeypointSet {
    let line_line = derive_line_line(template, annotation);
    let mut set = line_line.clone();
    set.merge(&derive_line_conic(template, annotation, &line_line));
    if options.tangents {
        set.merge(&derive_tangent(template, annotation, &line_line));
    }
    if options.extras {
        let extras = derive_extra(template, annotation, &set);
        set.merge(&extras);
    }
    if options.remap {
        set = remap_left_right(template, &set, annotation.image_size);
    }
    set
}
