use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use super::{normalized_orientation, normalizing_transform, GeometryError};

/// World ground point `(x, y)` paired with its image position `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub world: Point2<f64>,
    pub image: Point2<f64>,
}

impl PointPair {
    pub fn new(world: Point2<f64>, image: Point2<f64>) -> Self {
        Self { world, image }
    }
}

/// Planar projective map, scaled so its largest-magnitude entry is 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let max = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if max == 0.0 {
            return Err(GeometryError::Degenerate("zero matrix"));
        }
        // keep the sign of the largest entry positive
        let pivot = m.iter().copied().find(|v| v.abs() == max).unwrap();
        let matrix = m / pivot;
        if matrix.determinant().abs() <= 1e-12 {
            return Err(GeometryError::Degenerate("singular homography"));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        let q = self.matrix * p.to_homogeneous();
        (q.z.abs() > 1e-300).then(|| Point2::new(q.x / q.z, q.y / q.z))
    }

    pub fn apply_homogeneous(&self, p: &Point2<f64>) -> Vector3<f64> {
        self.matrix * p.to_homogeneous()
    }

    pub fn inverse(&self) -> Homography {
        let inv = self.matrix.try_inverse().expect("non-singular by construction");
        Homography::new(inv).expect("inverse of a valid homography")
    }

    /// Forward reprojection error of a pair in image units.
    pub fn transfer_error(&self, pair: &PointPair) -> f64 {
        self.apply(&pair.world)
            .map_or(f64::INFINITY, |p| (p - pair.image).norm())
    }
}

/// Normalized DLT homography from world to image coordinates.
pub fn estimate_homography(pairs: &[PointPair]) -> Result<Homography, GeometryError> {
    if pairs.len() < 4 {
        return Err(GeometryError::TooFewPoints {
            needed: 4,
            got: pairs.len(),
        });
    }
    if pairs
        .iter()
        .any(|p| !(p.world.iter().chain(p.image.iter()).all(|v| v.is_finite())))
    {
        return Err(GeometryError::NonFinite);
    }
    let world: Vec<_> = pairs.iter().map(|p| p.world).collect();
    let image: Vec<_> = pairs.iter().map(|p| p.image).collect();
    if pairs.len() == 4 && (has_collinear_triple(&world) || has_collinear_triple(&image)) {
        return Err(GeometryError::Degenerate("three collinear points in a minimal set"));
    }

    let tw = normalizing_transform(&world);
    let ti = normalizing_transform(&image);
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        let w = tw * p.world.to_homogeneous();
        let m = ti * p.image.to_homogeneous();
        let (x, y) = (w.x, w.y);
        let (u, v) = (m.x, m.y);
        a.row_mut(2 * i)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * i + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let (smallest, second) = smallest_two(&svd.singular_values);
    let largest = svd.singular_values.max();
    if svd.singular_values[second] <= 1e-10 * largest {
        return Err(GeometryError::Degenerate("rank-deficient point configuration"));
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ti_inv = ti.try_inverse().ok_or(GeometryError::Degenerate("image normalization"))?;
    Homography::new(ti_inv * hn * tw)
}

fn smallest_two(values: &nalgebra::DVector<f64>) -> (usize, usize) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    (idx[0], idx[1])
}

fn has_collinear_triple(points: &[Point2<f64>]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if normalized_orientation(points[i], points[j], points[k]).abs() < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pairs_from(h: &Matrix3<f64>, world: &[(f64, f64)]) -> Vec<PointPair> {
        world
            .iter()
            .map(|&(x, y)| {
                let q = h * Vector3::new(x, y, 1.0);
                PointPair::new(Point2::new(x, y), Point2::new(q.x / q.z, q.y / q.z))
            })
            .collect()
    }

    fn same_up_to_scale(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        let an = a / a.norm();
        let bn = b / b.norm();
        (an - bn).norm().min((an + bn).norm())
    }

    const SQUARE: [(f64, f64); 4] = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];

    #[test]
    fn identity_from_unit_square() {
        let h = estimate_homography(&pairs_from(&Matrix3::identity(), &SQUARE)).unwrap();
        assert!(same_up_to_scale(h.matrix(), &Matrix3::identity()) < 1e-12);
    }

    #[test]
    fn diagonal_recovered() {
        let truth = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 1.0));
        let h = estimate_homography(&pairs_from(&truth, &SQUARE)).unwrap();
        assert!(same_up_to_scale(h.matrix(), &truth) < 1e-9);
        // largest entry normalized to 1
        assert_abs_diff_eq!(h.matrix().amax(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn collinear_minimal_set_rejected() {
        let pairs = pairs_from(&Matrix3::identity(), &[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 1.0)]);
        assert!(matches!(estimate_homography(&pairs), Err(GeometryError::Degenerate(_))));
    }

    #[test]
    fn all_collinear_rejected() {
        let pairs = pairs_from(&Matrix3::identity(), &[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (5.0, 5.0)]);
        assert!(estimate_homography(&pairs).is_err());
    }

    #[test]
    fn too_few_pairs() {
        let pairs = pairs_from(&Matrix3::identity(), &SQUARE[..3]);
        assert_eq!(
            estimate_homography(&pairs),
            Err(GeometryError::TooFewPoints { needed: 4, got: 3 })
        );
    }

    fn well_conditioned(h: &Matrix3<f64>) -> bool {
        let s = h.singular_values();
        s.min() > 0.0 && s.max() / s.min() < 1e3
    }

    proptest! {
        #[test]
        fn dlt_recovers_random_homography(
            entries in prop::array::uniform9(-1.0f64..1.0),
            extra in prop::collection::vec((-30.0f64..30.0, -20.0f64..20.0), 0..10),
        ) {
            let h = Matrix3::from_row_slice(&entries) + Matrix3::identity() * 2.0;
            prop_assume!(well_conditioned(&h));
            let mut world = vec![(-30.0, -20.0), (30.0, -20.0), (30.0, 20.0), (-30.0, 20.0)];
            world.extend(extra);
            let pairs = pairs_from(&h, &world);
            // keep all points away from the line at infinity of h
            prop_assume!(world.iter().all(|&(x, y)| (h * Vector3::new(x, y, 1.0)).z.abs() > 0.5));
            let est = estimate_homography(&pairs).unwrap();
            prop_assert!(same_up_to_scale(est.matrix(), &h) < 1e-8);
            for p in &pairs {
                prop_assert!(est.transfer_error(p) < 1e-6);
            }
        }
    }
}
