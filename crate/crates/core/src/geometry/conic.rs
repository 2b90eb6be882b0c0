//! Conics in general form `A x^2 + B xy + C y^2 + D x + E y + F = 0`.
//!
//! Ellipse fitting follows Halir & Flusser's numerically stable variant of the
//! direct least-squares method: the scatter matrix is split into quadratic and
//! linear blocks, the linear part is eliminated, and the ellipse constraint
//! `4AC - B^2 > 0` selects the eigenvector of a reduced 3x3 problem.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Matrix3, Point2, Vector2, Vector3};

use super::{fit_line, normalizing_transform, GeometryError, Line2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    coeffs: [f64; 6],
}

/// Geometric ellipse parameters. `angle` is the direction of the major axis in
/// `(-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: Point2<f64>,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub angle: f64,
}

impl Conic {
    /// Normalizes to unit Euclidean norm with `A + C >= 0`.
    pub fn new(coeffs: [f64; 6]) -> Result<Self, GeometryError> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeometryError::Degenerate("zero conic"));
        }
        let sign = if coeffs[0] + coeffs[2] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            coeffs: coeffs.map(|c| sign * c / norm),
        })
    }

    /// From the symmetric matrix form `p^T M p = 0`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        Self::new([
            m[(0, 0)],
            m[(0, 1)] + m[(1, 0)],
            m[(1, 1)],
            m[(0, 2)] + m[(2, 0)],
            m[(1, 2)] + m[(2, 1)],
            m[(2, 2)],
        ])
    }

    pub fn from_ellipse(e: &Ellipse) -> Result<Self, GeometryError> {
        let (s, c) = e.angle.sin_cos();
        let (ia, ib) = (1.0 / (e.semi_major * e.semi_major), 1.0 / (e.semi_minor * e.semi_minor));
        let a = c * c * ia + s * s * ib;
        let b = 2.0 * c * s * (ia - ib);
        let cc = s * s * ia + c * c * ib;
        let (x, y) = (e.center.x, e.center.y);
        Self::new([
            a,
            b,
            cc,
            -2.0 * a * x - b * y,
            -b * x - 2.0 * cc * y,
            a * x * x + b * x * y + cc * y * y - 1.0,
        ])
    }

    pub fn coefficients(&self) -> [f64; 6] {
        self.coeffs
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let [a, b, c, d, e, f] = self.coeffs;
        Matrix3::new(a, b / 2.0, d / 2.0, b / 2.0, c, e / 2.0, d / 2.0, e / 2.0, f)
    }

    pub fn eval(&self, p: &Point2<f64>) -> f64 {
        let [a, b, c, d, e, f] = self.coeffs;
        a * p.x * p.x + b * p.x * p.y + c * p.y * p.y + d * p.x + e * p.y + f
    }

    pub fn discriminant(&self) -> f64 {
        let [a, b, c, ..] = self.coeffs;
        b * b - 4.0 * a * c
    }

    pub fn is_ellipse(&self) -> bool {
        self.discriminant() < 0.0
    }

    /// Center of a central conic.
    pub fn center(&self) -> Option<Point2<f64>> {
        let [a, b, c, d, e, _] = self.coeffs;
        let m = Matrix2::new(2.0 * a, b, b, 2.0 * c);
        m.try_inverse().map(|inv| Point2::from(inv * Vector2::new(-d, -e)))
    }

    pub fn ellipse(&self) -> Result<Ellipse, GeometryError> {
        if !self.is_ellipse() {
            return Err(GeometryError::NotAnEllipse);
        }
        let [a, b, c, d, e, f] = self.coeffs;
        let center = self.center().ok_or(GeometryError::NotAnEllipse)?;
        let f0 = f + 0.5 * (d * center.x + e * center.y);
        let q = Matrix2::new(a, b / 2.0, b / 2.0, c);
        let eig = q.symmetric_eigen();
        // A + C > 0 so both eigenvalues are positive; real iff f0 < 0
        let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
        if !(f0 < 0.0 && l0 > 0.0 && l1 > 0.0) {
            return Err(GeometryError::NotAnEllipse);
        }
        let (major, minor, v) = if l0 <= l1 {
            (-f0 / l0, -f0 / l1, eig.eigenvectors.column(0).into_owned())
        } else {
            (-f0 / l1, -f0 / l0, eig.eigenvectors.column(1).into_owned())
        };
        let mut angle = v.y.atan2(v.x);
        if angle <= -FRAC_PI_2 {
            angle += PI;
        } else if angle > FRAC_PI_2 {
            angle -= PI;
        }
        Ok(Ellipse {
            center,
            semi_major: major.sqrt(),
            semi_minor: minor.sqrt(),
            angle,
        })
    }

    /// Image of the conic under the point map `p' ~ H p`.
    pub fn transform(&self, h: &Matrix3<f64>) -> Result<Conic, GeometryError> {
        let inv = h.try_inverse().ok_or(GeometryError::Degenerate("singular transform"))?;
        Conic::from_matrix(&(inv.transpose() * self.matrix() * inv))
    }

    /// Matrix of the conic in coordinates shifted so that `origin` becomes 0.
    fn shifted_matrix(&self, origin: &Point2<f64>) -> Matrix3<f64> {
        let t = Matrix3::new(1.0, 0.0, origin.x, 0.0, 1.0, origin.y, 0.0, 0.0, 1.0);
        t.transpose() * self.matrix() * t
    }

    fn working_origin(&self) -> Point2<f64> {
        self.center().unwrap_or_else(Point2::origin)
    }
}

/// Ellipse-specific least-squares fit.
pub fn fit_ellipse(points: &[Point2<f64>]) -> Result<Conic, GeometryError> {
    if points.len() < 5 {
        return Err(GeometryError::TooFewPoints {
            needed: 5,
            got: points.len(),
        });
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(GeometryError::NonFinite);
    }
    let line = fit_line(points)?;
    let spread = points.iter().map(|p| (p - points[0]).norm()).fold(0.0, f64::max);
    if points.iter().all(|p| line.distance(p) <= 1e-9 * spread.max(1.0)) {
        return Err(GeometryError::Degenerate("collinear points"));
    }

    let norm = normalizing_transform(points);
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let q = norm * p.to_homogeneous();
        let quad = Vector3::new(q.x * q.x, q.x * q.y, q.y * q.y);
        let lin = Vector3::new(q.x, q.y, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or(GeometryError::Degenerate("singular linear scatter"))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 && best.as_ref().is_none_or(|(c, _)| constraint > *c) {
            best = Some((constraint, v));
        }
    }
    let (_, a1) = best.ok_or(GeometryError::NotAnEllipse)?;
    let a2 = t * a1;
    let normalized = Conic::new([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]])?;
    let conic = Conic::from_matrix(&(norm.transpose() * normalized.matrix() * norm))?;
    if conic.ellipse().is_err() {
        return Err(GeometryError::NotAnEllipse);
    }
    Ok(conic)
}

/// Unit vector spanning the (numerical) null space of a rank-2 matrix, via the
/// largest cross product of two rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let v = candidates
        .into_iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}

/// Real intersections of a line with a conic, ordered along the line
/// direction. A single point is returned at tangency.
pub fn intersect_line_conic(line: &Line2, conic: &Conic) -> Vec<Point2<f64>> {
    let origin = conic.working_origin();
    let m = conic.shifted_matrix(&origin);
    let shifted = Line2::new(
        line.normal().x,
        line.normal().y,
        line.offset() + line.normal().dot(&origin.coords),
    )
    .expect("unit normal");
    let p0 = shifted.point().to_homogeneous();
    let dir = shifted.direction();
    let t = Vector3::new(dir.x, dir.y, 0.0);
    let a = (t.transpose() * m * t)[0];
    let b = 2.0 * (t.transpose() * m * p0)[0];
    let c = (p0.transpose() * m * p0)[0];
    let at = |s: f64| origin + shifted.point().coords + dir * s;

    if a.abs() <= 1e-15 * (b.abs() + c.abs()) {
        return if b != 0.0 { vec![at(-c / b)] } else { Vec::new() };
    }
    let disc = b * b - 4.0 * a * c;
    let scale = b * b + (4.0 * a * c).abs();
    if disc.abs() <= 1e-9 * scale {
        return vec![at(-b / (2.0 * a))];
    }
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // stable roots
    let q = -0.5 * (b + b.signum() * sq);
    let (mut s0, mut s1) = if q != 0.0 { (q / a, c / q) } else { (sq / (2.0 * a), -sq / (2.0 * a)) };
    if s0 > s1 {
        std::mem::swap(&mut s0, &mut s1);
    }
    vec![at(s0), at(s1)]
}

/// Points where the tangent lines through `external` touch `conic`, found by
/// intersecting the polar line of `external` with the conic.
pub fn tangent_points(
    external: &Point2<f64>,
    conic: &Conic,
) -> Result<[Point2<f64>; 2], GeometryError> {
    let ellipse = conic.ellipse()?;
    let origin = ellipse.center;
    let m = conic.shifted_matrix(&origin);
    let p = Point2::from(external - origin).to_homogeneous();
    let value = (p.transpose() * m * p)[0];
    let f0 = m[(2, 2)];
    // interior points share the sign of the center value
    if value * f0 >= 0.0 || value.abs() <= 1e-12 * f0.abs() {
        return Err(GeometryError::NotExterior);
    }
    let polar = Line2::from_homogeneous(&(m * p)).ok_or(GeometryError::Degenerate("polar at infinity"))?;
    let shifted = Conic::from_matrix(&m)?;
    match intersect_line_conic(&polar, &shifted)[..] {
        [a, b] => Ok([origin + a.coords, origin + b.coords]),
        _ => Err(GeometryError::NotExterior),
    }
}
