//! Fitting and intersection primitives shared by keypoint derivation and
//! calibration.

mod conic;
mod homography;
mod line;
mod ransac;

pub use conic::{fit_ellipse, intersect_line_conic, tangent_points, Conic, Ellipse};
pub use homography::{estimate_homography, Homography, PointPair};
pub use line::{fit_line, intersect_lines, refine_intersection, Line2, REFINE_NEIGHBOURS};
pub use ransac::{ransac_homography_filter, RansacConfig, RansacResult};

use nalgebra::Point2;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("lines are parallel")]
    Parallel,
    #[error("fitted conic is not an ellipse")]
    NotAnEllipse,
    #[error("point is not outside the conic")]
    NotExterior,
    #[error("non-finite input")]
    NonFinite,
    #[error("no model with at least {needed} inliers (best had {found})")]
    InsufficientInliers { needed: usize, found: usize },
}

/// Twice the signed area of the triangle `(a, b, c)`; positive when
/// counter-clockwise in a y-up frame.
pub fn orientation(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b - a).perp(&(c - a))
}

/// Orientation normalized by the two edge lengths from `a`, i.e. the sine of
/// the angle at `a`. Zero for coincident points.
pub(crate) fn normalized_orientation(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    let (u, v) = (b - a, c - a);
    let n = u.norm() * v.norm();
    if n == 0.0 {
        0.0
    } else {
        u.perp(&v) / n
    }
}

/// Similarity transform taking `points` to zero centroid and mean distance
/// `sqrt(2)` from the origin, as a 3x3 matrix on homogeneous coordinates.
pub(crate) fn normalizing_transform(points: &[Point2<f64>]) -> nalgebra::Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let mean = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { std::f64::consts::SQRT_2 / mean } else { 1.0 };
    nalgebra::Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}
