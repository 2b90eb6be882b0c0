use nalgebra::{Point2, Vector2, Vector3};

use super::GeometryError;

/// Number of points kept per line around a coarse intersection before the
/// second fit.
pub const REFINE_NEIGHBOURS: usize = 4;

const PARALLEL_SIN: f64 = 1e-6;

/// Threshold on the near points' mean offset from the full fit, in standard
/// errors of their local scatter, above which the local refit is used.
const SYSTEMATIC_T: f64 = 5.0;

/// Line `n . p + d = 0` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    normal: Vector2<f64>,
    offset: f64,
}

impl Line2 {
    /// Builds a line from an arbitrary (non-zero) normal, rescaling to unit
    /// length.
    pub fn new(nx: f64, ny: f64, d: f64) -> Option<Self> {
        let norm = nx.hypot(ny);
        if !(norm.is_finite() && norm > 0.0 && d.is_finite()) {
            return None;
        }
        Some(Self {
            normal: Vector2::new(nx / norm, ny / norm),
            offset: d / norm,
        })
    }

    /// From homogeneous coefficients `(a, b, c)` of `a x + b y + c = 0`.
    pub fn from_homogeneous(l: &Vector3<f64>) -> Option<Self> {
        Self::new(l.x, l.y, l.z)
    }

    pub fn through(a: Point2<f64>, b: Point2<f64>) -> Result<Self, GeometryError> {
        let dir = b - a;
        Self::new(-dir.y, dir.x, dir.y * a.x - dir.x * a.y)
            .ok_or(GeometryError::Degenerate("coincident points"))
    }

    pub fn normal(&self) -> Vector2<f64> {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Unit direction, the normal turned a quarter counter-clockwise.
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.normal.y, self.normal.x)
    }

    /// Foot of the perpendicular from the origin.
    pub fn point(&self) -> Point2<f64> {
        Point2::from(-self.offset * self.normal)
    }

    pub fn signed_distance(&self, p: &Point2<f64>) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }

    pub fn distance(&self, p: &Point2<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    pub fn project(&self, p: &Point2<f64>) -> Point2<f64> {
        p - self.normal * self.signed_distance(p)
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.normal.x, self.normal.y, self.offset)
    }
}

/// Orthogonal-regression (total least squares) line through `points`.
pub fn fit_line(points: &[Point2<f64>]) -> Result<Line2, GeometryError> {
    if points.len() < 2 {
        return Err(GeometryError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords) / n;
    let spread = points.iter().map(|p| (p.coords - c).norm()).fold(0.0, f64::max);
    if spread <= 1e-9 {
        return Err(GeometryError::Degenerate("all points coincide"));
    }
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p.coords - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    // principal axis of the scatter matrix
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let normal = Vector2::new(-theta.sin(), theta.cos());
    Ok(Line2 {
        normal,
        offset: -normal.dot(&c),
    })
}

/// Intersection of two lines; fails when `|sin(angle)| <= 1e-6`.
pub fn intersect_lines(a: &Line2, b: &Line2) -> Result<Point2<f64>, GeometryError> {
    let det = a.normal.perp(&b.normal);
    if det.abs() <= PARALLEL_SIN {
        return Err(GeometryError::Parallel);
    }
    let x = (a.normal.y * b.offset - b.normal.y * a.offset) / det;
    let y = (b.normal.x * a.offset - a.normal.x * b.offset) / det;
    Ok(Point2::new(x, y))
}

/// Two-stage intersection: fit both full point sets for a coarse crossing,
/// then refit each line on its points nearest that crossing.
///
/// The local refit replaces a line's full fit only when it is warranted: the
/// nearest points must sit systematically off the full line relative to
/// their own scatter about the local fit (curvature near the junction, or an
/// outlier far away dragging the full fit), and the crossing must not lie
/// further from them than they spread, since extrapolating a short local
/// fit amplifies point noise. A straight noisy line keeps the averaging of
/// every point.
pub fn refine_intersection(
    points_a: &[Point2<f64>],
    points_b: &[Point2<f64>],
) -> Result<Point2<f64>, GeometryError> {
    let (fa, fb) = (fit_line(points_a)?, fit_line(points_b)?);
    let coarse = intersect_lines(&fa, &fb)?;
    let local = |points: &[Point2<f64>], full: Line2| -> Result<Line2, GeometryError> {
        let near = nearest(points, coarse);
        if near.len() == points.len() {
            return Ok(full);
        }
        let spread = near
            .iter()
            .flat_map(|p| near.iter().map(move |q| (p - q).norm()))
            .fold(0.0, f64::max);
        if (near[0] - coarse).norm() > spread {
            return Ok(full);
        }
        let refit = fit_line(&near)?;
        let k = near.len() as f64;
        let bias = near.iter().map(|p| full.signed_distance(p)).sum::<f64>() / k;
        let dof = (k - 2.0).max(1.0);
        let scatter = (near.iter().map(|p| refit.signed_distance(p).powi(2)).sum::<f64>() / dof).sqrt();
        let significant = bias.abs() * k.sqrt() > SYSTEMATIC_T * scatter && bias.abs() > 1e-12 * spread;
        Ok(if significant { refit } else { full })
    };
    intersect_lines(&local(points_a, fa)?, &local(points_b, fb)?)
}

fn nearest(points: &[Point2<f64>], target: Point2<f64>) -> Vec<Point2<f64>> {
    let k = REFINE_NEIGHBOURS.min(points.len()).max(2);
    let mut sorted = points.to_vec();
    sorted.sort_by(|p, q| (p - target).norm_squared().total_cmp(&(q - target).norm_squared()));
    sorted.truncate(k);
    sorted
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Rotation2;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2<f64>> {
        v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn horizontal_fit() {
        let l = fit_line(&pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_abs_diff_eq!(l.normal().x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.normal().y.abs(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.offset(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn vertical_fit() {
        let l = fit_line(&pts(&[(5.0, 0.0), (5.0, 1.0), (5.0, 9.0)])).unwrap();
        assert_abs_diff_eq!(l.distance(&Point2::new(5.0, -100.0)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.normal().x.abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_residuals() {
        let l = fit_line(&pts(&[(0.0, 0.1), (1.0, -0.1), (2.0, -0.1), (3.0, 0.1)])).unwrap();
        assert_abs_diff_eq!(l.normal().x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.offset(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            fit_line(&pts(&[(1.0, 1.0)])),
            Err(GeometryError::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_line(&pts(&[(1.0, 1.0), (1.0, 1.0 + 1e-12)])),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn parallel_lines_rejected() {
        let a = pts(&[(0.0, 0.0), (10.0, 0.0)]);
        let b = pts(&[(0.0, 1.0), (10.0, 1.0)]);
        assert_eq!(refine_intersection(&a, &b), Err(GeometryError::Parallel));
    }

    #[test]
    fn exact_perpendicular_intersection() {
        let a: Vec<_> = (0..6).map(|i| Point2::new(3.0 + i as f64, 4.0)).collect();
        let b: Vec<_> = (0..6).map(|i| Point2::new(3.0, 4.0 - 2.0 * i as f64)).collect();
        let p = refine_intersection(&a, &b).unwrap();
        assert_abs_diff_eq!(p, Point2::new(3.0, 4.0), epsilon = 1e-12);
    }

    #[test]
    fn far_outlier_dropped_by_refinement() {
        // points on y = 0 near the origin plus one far outlier
        let mut a = pts(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        a.push(Point2::new(40.0, 3.0));
        let b = pts(&[(0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (0.0, 4.0)]);
        let coarse = intersect_lines(&fit_line(&a).unwrap(), &fit_line(&b).unwrap()).unwrap();
        assert!(coarse.coords.norm() > 1e-3);
        // oracle: the direct two-point intersection of clean samples
        let direct = intersect_lines(
            &Line2::through(a[0], a[3]).unwrap(),
            &Line2::through(b[0], b[3]).unwrap(),
        )
        .unwrap();
        let p = refine_intersection(&a, &b).unwrap();
        assert_abs_diff_eq!(p, direct, epsilon = 1e-6);
        assert_abs_diff_eq!(p, Point2::origin(), epsilon = 1e-6);
    }

    #[test]
    fn refinement_tracks_curved_lines() {
        // barrel-distorted samples of two lines meeting at (100, 100); the
        // distortion is centered far away so the corner itself moves, and the
        // oracle corner is the distorted true corner
        let center = Point2::new(400.0, 300.0);
        let k1 = 4e-7;
        let distort = |p: Point2<f64>| {
            let d = p - center;
            center + d * (1.0 + k1 * d.norm_squared())
        };
        let corner = distort(Point2::new(100.0, 100.0));
        let a: Vec<_> = (0..=30).map(|i| distort(Point2::new(100.0 + 20.0 * i as f64, 100.0))).collect();
        let b: Vec<_> = (0..=20).map(|i| distort(Point2::new(100.0, 100.0 + 20.0 * i as f64))).collect();
        let coarse = intersect_lines(&fit_line(&a).unwrap(), &fit_line(&b).unwrap()).unwrap();
        let refined = refine_intersection(&a, &b).unwrap();
        let (ec, er) = ((coarse - corner).norm(), (refined - corner).norm());
        assert!(er < ec, "refined {er} vs coarse {ec}");
        assert!(er < 0.5);
    }

    #[test]
    fn distant_crossing_keeps_full_fit() {
        // noisy samples far from the junction at the origin; the four nearest
        // alone would tilt the line
        let a = pts(&[(50.0, 0.3), (51.0, -0.3), (52.0, 0.3), (53.0, -0.3), (90.0, 0.0), (120.0, 0.0)]);
        let b = pts(&[(0.0, 10.0), (0.0, 20.0), (0.0, 30.0), (0.0, 40.0)]);
        let full = intersect_lines(&fit_line(&a).unwrap(), &fit_line(&b).unwrap()).unwrap();
        assert_abs_diff_eq!(refine_intersection(&a, &b).unwrap(), full, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn fit_is_rotation_equivariant(
            angle in -3.1f64..3.1,
            coords in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..12),
        ) {
            let points: Vec<_> = coords.iter().map(|&(x, y)| Point2::new(x, 0.3 * x + 0.05 * y)).collect();
            let rot = Rotation2::new(angle);
            let rotated: Vec<_> = points.iter().map(|p| rot * p).collect();
            let l = fit_line(&points).unwrap();
            let lr = fit_line(&rotated).unwrap();
            // the rotated fit and the rotated line agree up to orientation
            let n = rot * l.normal();
            let sign = n.dot(&lr.normal()).signum();
            prop_assert!((n * sign - lr.normal()).norm() < 1e-9);
            prop_assert!((l.offset() * sign - lr.offset()).abs() < 1e-9);
        }
    }
}
