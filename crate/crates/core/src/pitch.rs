//! Canonical football pitch template.
//!
//! World frame: origin at the pitch center, `x` along the long axis (left goal
//! line at `x = -length / 2`), `y` along the short axis ("Side line top" at
//! `y = +width / 2`), `z` up. Ground markings live on `z = 0`; goal frames sit
//! in the vertical planes through the goal lines.
//!
//! The template holds the 26 marking classes (23 straight segments, 3 conics)
//! and the 57 keypoint definitions derived from them.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Point2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marking classes, named after the canonical annotation strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MarkingId {
    BigRectLeftBottom,
    BigRectLeftMain,
    BigRectLeftTop,
    BigRectRightBottom,
    BigRectRightMain,
    BigRectRightTop,
    CircleCentral,
    CircleLeft,
    CircleRight,
    GoalLeftCrossbar,
    GoalLeftPostLeft,
    GoalLeftPostRight,
    GoalRightCrossbar,
    GoalRightPostLeft,
    GoalRightPostRight,
    MiddleLine,
    SideLineBottom,
    SideLineLeft,
    SideLineRight,
    SideLineTop,
    SmallRectLeftBottom,
    SmallRectLeftMain,
    SmallRectLeftTop,
    SmallRectRightBottom,
    SmallRectRightMain,
    SmallRectRightTop,
}

impl MarkingId {
    pub const ALL: [MarkingId; 26] = [
        MarkingId::BigRectLeftBottom,
        MarkingId::BigRectLeftMain,
        MarkingId::BigRectLeftTop,
        MarkingId::BigRectRightBottom,
        MarkingId::BigRectRightMain,
        MarkingId::BigRectRightTop,
        MarkingId::CircleCentral,
        MarkingId::CircleLeft,
        MarkingId::CircleRight,
        MarkingId::GoalLeftCrossbar,
        MarkingId::GoalLeftPostLeft,
        MarkingId::GoalLeftPostRight,
        MarkingId::GoalRightCrossbar,
        MarkingId::GoalRightPostLeft,
        MarkingId::GoalRightPostRight,
        MarkingId::MiddleLine,
        MarkingId::SideLineBottom,
        MarkingId::SideLineLeft,
        MarkingId::SideLineRight,
        MarkingId::SideLineTop,
        MarkingId::SmallRectLeftBottom,
        MarkingId::SmallRectLeftMain,
        MarkingId::SmallRectLeftTop,
        MarkingId::SmallRectRightBottom,
        MarkingId::SmallRectRightMain,
        MarkingId::SmallRectRightTop,
    ];

    /// Canonical class name used in annotation and detection files.
    pub fn name(self) -> &'static str {
        match self {
            MarkingId::BigRectLeftBottom => "Big rect. left bottom",
            MarkingId::BigRectLeftMain => "Big rect. left main",
            MarkingId::BigRectLeftTop => "Big rect. left top",
            MarkingId::BigRectRightBottom => "Big rect. right bottom",
            MarkingId::BigRectRightMain => "Big rect. right main",
            MarkingId::BigRectRightTop => "Big rect. right top",
            MarkingId::CircleCentral => "Circle central",
            MarkingId::CircleLeft => "Circle left",
            MarkingId::CircleRight => "Circle right",
            MarkingId::GoalLeftCrossbar => "Goal left crossbar",
            MarkingId::GoalLeftPostLeft => "Goal left post left",
            MarkingId::GoalLeftPostRight => "Goal left post right",
            MarkingId::GoalRightCrossbar => "Goal right crossbar",
            MarkingId::GoalRightPostLeft => "Goal right post left",
            MarkingId::GoalRightPostRight => "Goal right post right",
            MarkingId::MiddleLine => "Middle line",
            MarkingId::SideLineBottom => "Side line bottom",
            MarkingId::SideLineLeft => "Side line left",
            MarkingId::SideLineRight => "Side line right",
            MarkingId::SideLineTop => "Side line top",
            MarkingId::SmallRectLeftBottom => "Small rect. left bottom",
            MarkingId::SmallRectLeftMain => "Small rect. left main",
            MarkingId::SmallRectLeftTop => "Small rect. left top",
            MarkingId::SmallRectRightBottom => "Small rect. right bottom",
            MarkingId::SmallRectRightMain => "Small rect. right main",
            MarkingId::SmallRectRightTop => "Small rect. right top",
        }
    }

    /// Parses a canonical class name. Surrounding whitespace is ignored, since
    /// some annotation sources carry a trailing space on goal post names.
    pub fn from_name(name: &str) -> Option<MarkingId> {
        let name = name.trim();
        MarkingId::ALL.iter().copied().find(|m| m.name() == name)
    }

    pub fn is_conic(self) -> bool {
        matches!(
            self,
            MarkingId::CircleCentral | MarkingId::CircleLeft | MarkingId::CircleRight
        )
    }
}

impl fmt::Display for MarkingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkingKind {
    LineSegment,
    Circle,
    Arc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Ground,
    GoalLeft,
    GoalRight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkingGeometry {
    Segment {
        start: Point3<f64>,
        end: Point3<f64>,
    },
    /// Circle or arc on the ground plane, angles in radians counter-clockwise
    /// from +x. `end_angle > start_angle`.
    Conic {
        center: Point2<f64>,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkingClass {
    pub id: MarkingId,
    pub kind: MarkingKind,
    pub geometry: MarkingGeometry,
    pub plane: Plane,
}

impl MarkingClass {
    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    /// World point at fraction `s` in `[0, 1]` of the marking: linear along
    /// segments, by angle along conics.
    pub fn point_at(&self, s: f64) -> Point3<f64> {
        match self.geometry {
            MarkingGeometry::Segment { start, end } => start + (end - start) * s,
            MarkingGeometry::Conic {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let a = start_angle + (end_angle - start_angle) * s;
                Point3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), 0.0)
            }
        }
    }

    /// Length in meters (arc length for conics).
    pub fn length(&self) -> f64 {
        match self.geometry {
            MarkingGeometry::Segment { start, end } => (end - start).norm(),
            MarkingGeometry::Conic {
                radius,
                start_angle,
                end_angle,
                ..
            } => radius * (end_angle - start_angle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointFamily {
    LineLine,
    LineConic,
    Tangent,
    Extra,
}

/// How a keypoint is built from the markings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Construction {
    LineLine {
        a: MarkingId,
        b: MarkingId,
    },
    /// One of the two intersections of `line` with `conic`. `partner` is the
    /// keypoint id of the other intersection.
    LineConic {
        line: MarkingId,
        conic: MarkingId,
        partner: usize,
    },
    /// Tangent point on `conic` of a tangent line through the keypoint
    /// `external`. `other` is the world position of the second tangent point
    /// through the same external point.
    Tangent {
        external: usize,
        conic: MarkingId,
        other: Point2<f64>,
    },
    /// Projected through a ground homography.
    Extra,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointDef {
    pub id: usize,
    pub family: KeypointFamily,
    pub world: Point3<f64>,
    pub construction: Construction,
}

impl KeypointDef {
    pub fn on_ground(&self) -> bool {
        self.world.z == 0.0
    }
}

pub const KEYPOINT_COUNT: usize = 57;
pub const LINE_CLASS_COUNT: usize = 23;

/// Pitch dimensions in meters. Absent fields in a template file take the
/// standard 105 x 68 m values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchDimensions {
    pub length: f64,
    pub width: f64,
    pub goal_width: f64,
    pub crossbar_height: f64,
    pub penalty_area_length: f64,
    pub penalty_area_width: f64,
    pub goal_area_length: f64,
    pub goal_area_width: f64,
    pub circle_radius: f64,
    pub penalty_spot_distance: f64,
}

impl Default for PitchDimensions {
    fn default() -> Self {
        Self {
            length: 105.0,
            width: 68.0,
            goal_width: 7.32,
            crossbar_height: 2.44,
            penalty_area_length: 16.5,
            penalty_area_width: 40.32,
            goal_area_length: 5.5,
            goal_area_width: 18.32,
            circle_radius: 9.15,
            penalty_spot_distance: 11.0,
        }
    }
}

impl PitchDimensions {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("length", self.length),
            ("width", self.width),
            ("goal_width", self.goal_width),
            ("crossbar_height", self.crossbar_height),
            ("penalty_area_length", self.penalty_area_length),
            ("penalty_area_width", self.penalty_area_width),
            ("goal_area_length", self.goal_area_length),
            ("goal_area_width", self.goal_area_width),
            ("circle_radius", self.circle_radius),
            ("penalty_spot_distance", self.penalty_spot_distance),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidTemplate(format!("{name} must be positive, got {v}")));
            }
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidTemplate(msg.to_string()))
            }
        };
        check(
            self.goal_area_length < self.penalty_area_length
                && self.goal_area_width < self.penalty_area_width,
            "penalty area must strictly contain the goal area",
        )?;
        check(self.goal_width < self.goal_area_width, "goal must fit inside the goal area")?;
        check(self.penalty_area_width < self.width, "penalty area wider than the pitch")?;
        check(self.circle_radius < self.width / 2.0, "circle radius must be below width / 2")?;
        check(
            self.penalty_area_length + self.circle_radius < self.length / 2.0,
            "central circle overlaps the penalty area",
        )?;
        check(
            self.penalty_spot_distance < self.penalty_area_length
                && self.penalty_area_length - self.penalty_spot_distance < self.circle_radius,
            "penalty arc must protrude beyond the penalty area",
        )?;
        Ok(())
    }
}

/// Immutable pitch model: dimensions, marking catalog and keypoint definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchTemplate {
    dims: PitchDimensions,
    markings: Vec<MarkingClass>,
    keypoints: Vec<KeypointDef>,
    rotation_partner: Vec<usize>,
    mirror_partner: Vec<usize>,
}

impl Default for PitchTemplate {
    fn default() -> Self {
        default_template()
    }
}

/// The standard 105 x 68 m template.
pub fn default_template() -> PitchTemplate {
    PitchTemplate::new(PitchDimensions::default()).expect("default dimensions are valid")
}

impl PitchTemplate {
    pub fn new(dims: PitchDimensions) -> Result<Self> {
        dims.validate()?;
        let markings = build_markings(&dims);
        let keypoints = build_keypoints(&dims);
        let rotation_partner = partners(&keypoints, |p| Point3::new(-p.x, -p.y, p.z));
        let mirror_partner = partners(&keypoints, |p| Point3::new(-p.x, p.y, p.z));
        Ok(Self {
            dims,
            markings,
            keypoints,
            rotation_partner,
            mirror_partner,
        })
    }

    pub fn dimensions(&self) -> &PitchDimensions {
        &self.dims
    }

    pub fn markings(&self) -> &[MarkingClass] {
        &self.markings
    }

    pub fn marking(&self, id: MarkingId) -> &MarkingClass {
        self.markings
            .iter()
            .find(|m| m.id == id)
            .expect("catalog holds every marking id")
    }

    pub fn keypoints(&self) -> &[KeypointDef] {
        &self.keypoints
    }

    pub fn keypoint(&self, id: usize) -> Result<&KeypointDef> {
        self.keypoints.get(id).ok_or(Error::UnknownKeypoint(id))
    }

    pub fn keypoint_world(&self, id: usize) -> Result<Point3<f64>> {
        self.keypoint(id).map(|k| k.world)
    }

    pub fn family_ids(&self, family: KeypointFamily) -> impl Iterator<Item = usize> + '_ {
        self.keypoints
            .iter()
            .filter(move |k| k.family == family)
            .map(|k| k.id)
    }

    /// Id of the keypoint at `(-x, y, z)`.
    pub fn mirror_partner(&self, id: usize) -> Option<usize> {
        self.mirror_partner.get(id).copied()
    }

    /// Id of the keypoint at `(-x, -y, z)`, i.e. the same landmark seen after
    /// turning the pitch half a revolution about the vertical axis.
    pub fn rotation_partner(&self, id: usize) -> Option<usize> {
        self.rotation_partner.get(id).copied()
    }

    /// Whether `id` belongs to the left half (`x < 0`).
    pub fn is_left(&self, id: usize) -> bool {
        self.keypoints.get(id).is_some_and(|k| k.world.x < 0.0)
    }
}

fn partners(keypoints: &[KeypointDef], map: impl Fn(&Point3<f64>) -> Point3<f64>) -> Vec<usize> {
    keypoints
        .iter()
        .map(|k| {
            let target = map(&k.world);
            keypoints
                .iter()
                .find(|o| (o.world - target).norm() < 1e-9)
                .map(|o| o.id)
                .expect("template is symmetric")
        })
        .collect()
}

fn build_markings(d: &PitchDimensions) -> Vec<MarkingClass> {
    let hl = d.length / 2.0;
    let hw = d.width / 2.0;
    let pa_x = hl - d.penalty_area_length;
    let pa_y = d.penalty_area_width / 2.0;
    let ga_x = hl - d.goal_area_length;
    let ga_y = d.goal_area_width / 2.0;
    let gy = d.goal_width / 2.0;
    let h = d.crossbar_height;
    let arc = ((d.penalty_area_length - d.penalty_spot_distance) / d.circle_radius).acos();

    let seg = |id, plane, a: [f64; 3], b: [f64; 3]| MarkingClass {
        id,
        kind: MarkingKind::LineSegment,
        geometry: MarkingGeometry::Segment {
            start: Point3::new(a[0], a[1], a[2]),
            end: Point3::new(b[0], b[1], b[2]),
        },
        plane,
    };
    let conic = |id, kind, cx: f64, start_angle, end_angle| MarkingClass {
        id,
        kind,
        geometry: MarkingGeometry::Conic {
            center: Point2::new(cx, 0.0),
            radius: d.circle_radius,
            start_angle,
            end_angle,
        },
        plane: Plane::Ground,
    };

    use MarkingId::*;
    use Plane::*;
    vec![
        seg(BigRectLeftBottom, Ground, [-hl, -pa_y, 0.0], [-pa_x, -pa_y, 0.0]),
        seg(BigRectLeftMain, Ground, [-pa_x, -pa_y, 0.0], [-pa_x, pa_y, 0.0]),
        seg(BigRectLeftTop, Ground, [-hl, pa_y, 0.0], [-pa_x, pa_y, 0.0]),
        seg(BigRectRightBottom, Ground, [pa_x, -pa_y, 0.0], [hl, -pa_y, 0.0]),
        seg(BigRectRightMain, Ground, [pa_x, -pa_y, 0.0], [pa_x, pa_y, 0.0]),
        seg(BigRectRightTop, Ground, [pa_x, pa_y, 0.0], [hl, pa_y, 0.0]),
        conic(CircleCentral, MarkingKind::Circle, 0.0, 0.0, 2.0 * PI),
        conic(CircleLeft, MarkingKind::Arc, -hl + d.penalty_spot_distance, -arc, arc),
        conic(CircleRight, MarkingKind::Arc, hl - d.penalty_spot_distance, PI - arc, PI + arc),
        seg(GoalLeftCrossbar, GoalLeft, [-hl, -gy, h], [-hl, gy, h]),
        seg(GoalLeftPostLeft, GoalLeft, [-hl, -gy, 0.0], [-hl, -gy, h]),
        seg(GoalLeftPostRight, GoalLeft, [-hl, gy, 0.0], [-hl, gy, h]),
        seg(GoalRightCrossbar, GoalRight, [hl, -gy, h], [hl, gy, h]),
        seg(GoalRightPostLeft, GoalRight, [hl, gy, 0.0], [hl, gy, h]),
        seg(GoalRightPostRight, GoalRight, [hl, -gy, 0.0], [hl, -gy, h]),
        seg(MiddleLine, Ground, [0.0, -hw, 0.0], [0.0, hw, 0.0]),
        seg(SideLineBottom, Ground, [-hl, -hw, 0.0], [hl, -hw, 0.0]),
        seg(SideLineLeft, Ground, [-hl, -hw, 0.0], [-hl, hw, 0.0]),
        seg(SideLineRight, Ground, [hl, -hw, 0.0], [hl, hw, 0.0]),
        seg(SideLineTop, Ground, [-hl, hw, 0.0], [hl, hw, 0.0]),
        seg(SmallRectLeftBottom, Ground, [-hl, -ga_y, 0.0], [-ga_x, -ga_y, 0.0]),
        seg(SmallRectLeftMain, Ground, [-ga_x, -ga_y, 0.0], [-ga_x, ga_y, 0.0]),
        seg(SmallRectLeftTop, Ground, [-hl, ga_y, 0.0], [-ga_x, ga_y, 0.0]),
        seg(SmallRectRightBottom, Ground, [ga_x, -ga_y, 0.0], [hl, -ga_y, 0.0]),
        seg(SmallRectRightMain, Ground, [ga_x, -ga_y, 0.0], [ga_x, ga_y, 0.0]),
        seg(SmallRectRightTop, Ground, [ga_x, ga_y, 0.0], [hl, ga_y, 0.0]),
    ]
}

/// Both tangent points on the circle `(center, radius)` of tangent lines
/// through `external`, ordered by the sign of the perpendicular offset.
fn circle_tangents(center: Point2<f64>, radius: f64, external: Point2<f64>) -> [Point2<f64>; 2] {
    let p = external - center;
    let d2 = p.norm_squared();
    let along = p * (radius * radius / d2);
    let perp = Vector2::new(-p.y, p.x) * (radius * (d2 - radius * radius).sqrt() / d2);
    [center + along + perp, center + along - perp]
}

fn build_keypoints(d: &PitchDimensions) -> Vec<KeypointDef> {
    use MarkingId::*;

    let hl = d.length / 2.0;
    let hw = d.width / 2.0;
    let pa_x = hl - d.penalty_area_length;
    let pa_y = d.penalty_area_width / 2.0;
    let ga_x = hl - d.goal_area_length;
    let ga_y = d.goal_area_width / 2.0;
    let gy = d.goal_width / 2.0;
    let h = d.crossbar_height;
    let r = d.circle_radius;
    let spot_x = hl - d.penalty_spot_distance;

    let mut defs = Vec::with_capacity(KEYPOINT_COUNT);
    fn add(defs: &mut Vec<KeypointDef>, family: KeypointFamily, world: [f64; 3], construction: Construction) {
        defs.push(KeypointDef {
            id: defs.len(),
            family,
            world: Point3::new(world[0], world[1], world[2]),
            construction,
        });
    }
    macro_rules! push {
        ($($arg:expr),+ $(,)?) => { add(&mut defs, $($arg),+) };
    }
    let ll = |a, b| Construction::LineLine { a, b };

    // Line-line: 14 per goal side, then the two halfway/touchline crossings.
    struct Side {
        s: f64,
        goal_line: MarkingId,
        big: [MarkingId; 3],
        small: [MarkingId; 3],
        // posts at y = -gy and y = +gy, crossbar
        posts: [MarkingId; 2],
        crossbar: MarkingId,
    }
    let sides = [
        Side {
            s: -1.0,
            goal_line: SideLineLeft,
            big: [BigRectLeftTop, BigRectLeftMain, BigRectLeftBottom],
            small: [SmallRectLeftTop, SmallRectLeftMain, SmallRectLeftBottom],
            posts: [GoalLeftPostLeft, GoalLeftPostRight],
            crossbar: GoalLeftCrossbar,
        },
        Side {
            s: 1.0,
            goal_line: SideLineRight,
            big: [BigRectRightTop, BigRectRightMain, BigRectRightBottom],
            small: [SmallRectRightTop, SmallRectRightMain, SmallRectRightBottom],
            posts: [GoalRightPostRight, GoalRightPostLeft],
            crossbar: GoalRightCrossbar,
        },
    ];
    for side in &sides {
        let s = side.s;
        let g = side.goal_line;
        push!(KeypointFamily::LineLine, [s * hl, hw, 0.0], ll(SideLineTop, g));
        push!(KeypointFamily::LineLine, [s * hl, -hw, 0.0], ll(SideLineBottom, g));
        let [top, main, bottom] = side.big;
        push!(KeypointFamily::LineLine, [s * hl, pa_y, 0.0], ll(top, g));
        push!(KeypointFamily::LineLine, [s * pa_x, pa_y, 0.0], ll(top, main));
        push!(KeypointFamily::LineLine, [s * pa_x, -pa_y, 0.0], ll(bottom, main));
        push!(KeypointFamily::LineLine, [s * hl, -pa_y, 0.0], ll(bottom, g));
        let [top, main, bottom] = side.small;
        push!(KeypointFamily::LineLine, [s * hl, ga_y, 0.0], ll(top, g));
        push!(KeypointFamily::LineLine, [s * ga_x, ga_y, 0.0], ll(top, main));
        push!(KeypointFamily::LineLine, [s * ga_x, -ga_y, 0.0], ll(bottom, main));
        push!(KeypointFamily::LineLine, [s * hl, -ga_y, 0.0], ll(bottom, g));
        let [neg, pos] = side.posts;
        push!(KeypointFamily::LineLine, [s * hl, -gy, 0.0], ll(neg, g));
        push!(KeypointFamily::LineLine, [s * hl, gy, 0.0], ll(pos, g));
        push!(KeypointFamily::LineLine, [s * hl, -gy, h], ll(neg, side.crossbar));
        push!(KeypointFamily::LineLine, [s * hl, gy, h], ll(pos, side.crossbar));
    }
    let halfway_top = defs.len();
    push!(KeypointFamily::LineLine, [0.0, hw, 0.0], ll(MiddleLine, SideLineTop));
    let halfway_bottom = defs.len();
    push!(KeypointFamily::LineLine, [0.0, -hw, 0.0], ll(MiddleLine, SideLineBottom));

    // Line-conic.
    let lc_base = defs.len();
    let lc = |line, conic, partner| Construction::LineConic { line, conic, partner };
    push!(KeypointFamily::LineConic, [0.0, r, 0.0], lc(MiddleLine, CircleCentral, lc_base + 1));
    push!(KeypointFamily::LineConic, [0.0, -r, 0.0], lc(MiddleLine, CircleCentral, lc_base));
    let arc_y = (r * r - (pa_x - spot_x).powi(2)).sqrt();
    for (i, (s, line, conic)) in [(-1.0, BigRectLeftMain, CircleLeft), (1.0, BigRectRightMain, CircleRight)]
        .into_iter()
        .enumerate()
    {
        let base = lc_base + 2 + 2 * i;
        push!(KeypointFamily::LineConic, [s * pa_x, arc_y, 0.0], lc(line, conic, base + 1));
        push!(KeypointFamily::LineConic, [s * pa_x, -arc_y, 0.0], lc(line, conic, base));
    }

    // Tangent: central circle from the halfway/touchline crossings, ordered
    // x < 0 then x > 0.
    let origin = Point2::origin();
    for external in [halfway_top, halfway_bottom] {
        let e = defs[external].world.xy();
        let mut t = circle_tangents(origin, r, e);
        t.sort_by(|a, b| a.x.total_cmp(&b.x));
        for k in 0..2 {
            push!(
                KeypointFamily::Tangent,
                [t[k].x, t[k].y, 0.0],
                Construction::Tangent {
                    external,
                    conic: CircleCentral,
                    other: t[1 - k],
                },
            );
        }
    }
    // Penalty arcs from the penalty-area front corners; keep the tangent
    // point lying on the drawn arc (outside the penalty area).
    let front_corners = [(3usize, 4usize, -1.0, CircleLeft), (17, 18, 1.0, CircleRight)];
    for (top, bottom, s, conic) in front_corners {
        let center = Point2::new(s * spot_x, 0.0);
        for external in [top, bottom] {
            let e = defs[external].world.xy();
            let t = circle_tangents(center, r, e);
            let on_arc = |p: &Point2<f64>| s * p.x < pa_x;
            let (keep, other) = if on_arc(&t[0]) { (t[0], t[1]) } else { (t[1], t[0]) };
            push!(
                KeypointFamily::Tangent,
                [keep.x, keep.y, 0.0],
                Construction::Tangent {
                    external,
                    conic,
                    other,
                },
            );
        }
    }

    // Extra: nine points on the long axis, four quarter turns of the central
    // circle at 45, 135, 225 and 315 degrees.
    for x in [-hl, -ga_x, -spot_x, -pa_x, 0.0, pa_x, spot_x, ga_x, hl] {
        push!(KeypointFamily::Extra, [x, 0.0, 0.0], Construction::Extra);
    }
    for k in 0..4 {
        let a = PI / 4.0 + k as f64 * PI / 2.0;
        push!(KeypointFamily::Extra, [r * a.cos(), r * a.sin(), 0.0], Construction::Extra);
    }
    defs
}

/// Ordered world points along a marking with spacing at most `step` meters.
/// Endpoints are always included; conics are ordered by angle and full
/// circles repeat their first point at the end.
pub fn sample_marking(class: &MarkingClass, step: f64) -> Vec<Point3<f64>> {
    assert!(step > 0.0, "sample step must be positive");
    let min_intervals = if class.id.is_conic() { 4 } else { 1 };
    let n = ((class.length() / step).ceil() as usize).max(min_intervals);
    (0..=n).map(|i| class.point_at(i as f64 / n as f64)).collect()
}

/// Conic samples at a fixed angular step (radians), endpoints included.
/// Segments fall back to 1 m spacing.
pub fn sample_conic_angular(class: &MarkingClass, angle_step: f64) -> Vec<Point3<f64>> {
    match class.geometry {
        MarkingGeometry::Conic { radius, .. } => sample_marking(class, radius * angle_step),
        MarkingGeometry::Segment { .. } => sample_marking(class, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn distance_to_line(p: Point3<f64>, a: Point3<f64>, b: Point3<f64>) -> f64 {
        let d = (b - a).normalize();
        let v = p - a;
        (v - d * v.dot(&d)).norm()
    }

    fn segment_ends(t: &PitchTemplate, id: MarkingId) -> (Point3<f64>, Point3<f64>) {
        match t.marking(id).geometry {
            MarkingGeometry::Segment { start, end } => (start, end),
            _ => panic!("{id} is not a segment"),
        }
    }

    #[test]
    fn catalog_counts() {
        let t = default_template();
        assert_eq!(t.keypoints().len(), 57);
        let lines = t.markings().iter().filter(|m| m.kind == MarkingKind::LineSegment).count();
        assert_eq!(lines, LINE_CLASS_COUNT);
        let conics: Vec<_> = t.markings().iter().filter(|m| m.id.is_conic()).map(|m| m.name()).collect();
        assert_eq!(conics, ["Circle central", "Circle left", "Circle right"]);
    }

    #[test]
    fn family_partition() {
        let t = default_template();
        let count = |f| t.family_ids(f).count();
        assert_eq!(count(KeypointFamily::LineLine), 30);
        assert_eq!(count(KeypointFamily::LineConic), 6);
        assert_eq!(count(KeypointFamily::Tangent), 8);
        assert_eq!(count(KeypointFamily::Extra), 13);
    }

    #[test]
    fn named_keypoints() {
        let t = default_template();
        let find = |p: [f64; 3]| {
            t.keypoints()
                .iter()
                .find(|k| (k.world - Point3::new(p[0], p[1], p[2])).norm() < 1e-9)
                .map(|k| k.id)
        };
        assert!(find([0.0, 0.0, 0.0]).is_some(), "pitch center");
        assert!(find([-41.5, 0.0, 0.0]).is_some(), "left penalty spot");
        let upper = find([0.0, 9.15, 0.0]).unwrap();
        assert_eq!(t.keypoint(upper).unwrap().family, KeypointFamily::LineConic);
        let corner = t.keypoint_world(12).unwrap();
        assert_abs_diff_eq!(corner.z, 2.44);
        assert!(matches!(t.keypoint(57), Err(Error::UnknownKeypoint(57))));
    }

    #[test]
    fn line_line_membership() {
        let t = default_template();
        for k in t.keypoints().iter().filter(|k| k.family == KeypointFamily::LineLine) {
            let Construction::LineLine { a, b } = k.construction else { panic!() };
            for m in [a, b] {
                let (s, e) = segment_ends(&t, m);
                assert!(distance_to_line(k.world, s, e) < 1e-9, "kp {} vs {m}", k.id);
            }
        }
    }

    #[test]
    fn conic_membership() {
        let t = default_template();
        for k in t.keypoints() {
            let conic = match k.construction {
                Construction::LineConic { conic, line, .. } => {
                    let (s, e) = segment_ends(&t, line);
                    assert!(distance_to_line(k.world, s, e) < 1e-9);
                    conic
                }
                Construction::Tangent { conic, external, other } => {
                    // tangent line through the external point is perpendicular
                    // to the radius at the tangent point
                    let MarkingGeometry::Conic { center, .. } = t.marking(conic).geometry else {
                        panic!()
                    };
                    let e = t.keypoint_world(external).unwrap().xy();
                    for p in [k.world.xy(), other] {
                        assert!((p - center).dot(&(e - p)).abs() < 1e-9);
                    }
                    conic
                }
                _ => continue,
            };
            let MarkingGeometry::Conic { center, radius, .. } = t.marking(conic).geometry else {
                panic!()
            };
            assert!(((k.world.xy() - center).norm() - radius).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_arc_tangent_on_drawn_arc() {
        let t = default_template();
        let left: Vec<_> = t
            .keypoints()
            .iter()
            .filter(|k| matches!(k.construction, Construction::Tangent { conic: MarkingId::CircleLeft, .. }))
            .collect();
        assert_eq!(left.len(), 2);
        for k in left {
            assert!(k.world.x > -36.0);
        }
    }

    #[test]
    fn symmetry_partners() {
        let t = default_template();
        for k in t.keypoints() {
            let m = t.mirror_partner(k.id).unwrap();
            let w = t.keypoint_world(m).unwrap();
            assert_abs_diff_eq!(w, Point3::new(-k.world.x, k.world.y, k.world.z), epsilon = 1e-9);
            assert_eq!(t.mirror_partner(m), Some(k.id));
            let r = t.rotation_partner(k.id).unwrap();
            let w = t.keypoint_world(r).unwrap();
            assert_abs_diff_eq!(w, Point3::new(-k.world.x, -k.world.y, k.world.z), epsilon = 1e-9);
            assert_eq!(t.family_ids(k.family).filter(|&i| i == r).count(), 1);
        }
    }

    #[test]
    fn template_markings_symmetric() {
        let t = default_template();
        let pts: Vec<Point3<f64>> = t.markings().iter().flat_map(|m| sample_marking(m, 0.5)).collect();
        for p in pts.iter().step_by(7) {
            for q in [Point3::new(-p.x, p.y, p.z), Point3::new(p.x, -p.y, p.z)] {
                let on_template = t.markings().iter().any(|m| match m.geometry {
                    MarkingGeometry::Segment { start, end } => {
                        let d = end - start;
                        let s = ((q - start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
                        (start + d * s - q).norm() < 1e-9
                    }
                    MarkingGeometry::Conic { center, radius, start_angle, end_angle } => {
                        let v = q.xy() - center;
                        let mut a = v.y.atan2(v.x);
                        while a < start_angle - 1e-9 {
                            a += 2.0 * PI;
                        }
                        q.z == 0.0 && (v.norm() - radius).abs() < 1e-9 && a <= end_angle + 1e-9
                    }
                });
                assert!(on_template, "{q:?}");
            }
        }
    }

    #[test]
    fn sample_halfway_line() {
        let t = default_template();
        let pts = sample_marking(t.marking(MarkingId::MiddleLine), 34.0);
        assert_eq!(pts.len(), 3);
        assert_abs_diff_eq!(pts[0], Point3::new(0.0, -34.0, 0.0));
        assert_abs_diff_eq!(pts[1], Point3::new(0.0, 0.0, 0.0));
        assert_abs_diff_eq!(pts[2], Point3::new(0.0, 34.0, 0.0));
    }

    #[test]
    fn sample_circle_large_step() {
        let t = default_template();
        let pts = sample_marking(t.marking(MarkingId::CircleCentral), 1000.0);
        assert!(pts.len() >= 4);
        for p in pts {
            assert_abs_diff_eq!(p.coords.norm(), 9.15, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_spacing() {
        let t = default_template();
        for m in t.markings() {
            let pts = sample_marking(m, 0.5);
            for w in pts.windows(2) {
                assert!((w[1] - w[0]).norm() <= 0.5 + 1e-12, "{}", m.name());
            }
            if let MarkingGeometry::Segment { start, end } = m.geometry {
                assert_eq!(pts[0], start);
                assert_abs_diff_eq!(*pts.last().unwrap(), end, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for m in MarkingId::ALL {
            assert_eq!(MarkingId::from_name(m.name()), Some(m));
        }
        assert_eq!(MarkingId::from_name("Goal left post left "), Some(MarkingId::GoalLeftPostLeft));
        assert_eq!(MarkingId::from_name("Goal unknown"), None);
    }

    #[test]
    fn template_file_defaults() {
        let dims: PitchDimensions = serde_json::from_str(r#"{"length": 100.0}"#).unwrap();
        assert_eq!(dims.length, 100.0);
        assert_eq!(dims.width, 68.0);
        let t = PitchTemplate::new(dims).unwrap();
        assert_abs_diff_eq!(t.keypoint_world(0).unwrap().x, -50.0);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        let bad = PitchDimensions {
            goal_area_length: 20.0,
            ..Default::default()
        };
        assert!(PitchTemplate::new(bad).is_err());
        let bad = PitchDimensions {
            circle_radius: -1.0,
            ..Default::default()
        };
        assert!(PitchTemplate::new(bad).is_err());
    }
}
