use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Point2, Point3, Rotation3, Vector3};

use super::{refine_lm, CalibrationError, CameraParams, Correspondence, ImageSize};
use crate::geometry::{estimate_homography, normalizing_transform, PointPair};

const GROUND_EPS: f64 = 1e-9;

fn on_ground(c: &Correspondence) -> bool {
    c.world.z.abs() <= GROUND_EPS
}

/// Closed-form focal length from a ground homography with a known principal
/// point and square pixels.
///
/// With `B = K^-1 H`, the first two columns of `B` must be orthogonal and of
/// equal norm. Each condition is linear in `w = 1 / f^2`; `w` is the least
/// squares solution of the pair.
pub fn focal_from_homography(h: &Matrix3<f64>, principal: Point2<f64>) -> Result<f64, CalibrationError> {
    let shift = Matrix3::new(1.0, 0.0, -principal.x, 0.0, 1.0, -principal.y, 0.0, 0.0, 1.0);
    let hp = shift * h;
    let hp = hp / hp.norm();
    let (h1, h2) = (hp.column(0), hp.column(1));
    let a1 = h1.x * h2.x + h1.y * h2.y;
    let b1 = h1.z * h2.z;
    let a2 = h1.x * h1.x + h1.y * h1.y - h2.x * h2.x - h2.y * h2.y;
    let b2 = h1.z * h1.z - h2.z * h2.z;
    let denom = a1 * a1 + a2 * a2;
    if denom <= 1e-30 {
        return Err(CalibrationError::FocalUnrecoverable);
    }
    let w = -(a1 * b1 + a2 * b2) / denom;
    if !(w.is_finite() && w > 0.0) {
        return Err(CalibrationError::FocalUnrecoverable);
    }
    Ok(1.0 / w.sqrt())
}

/// Rotation and camera center from a ground homography and focal length.
/// The sign is chosen so that `reference` (a ground point in view) lies in
/// front of the camera.
pub fn pose_from_homography(
    h: &Matrix3<f64>,
    focal: f64,
    principal: Point2<f64>,
    reference: Point2<f64>,
) -> Result<(Rotation3<f64>, Point3<f64>), CalibrationError> {
    let k_inv = Matrix3::new(
        1.0 / focal,
        0.0,
        -principal.x / focal,
        0.0,
        1.0 / focal,
        -principal.y / focal,
        0.0,
        0.0,
        1.0,
    );
    let b = k_inv * h;
    let (b1, b2, b3) = (b.column(0), b.column(1), b.column(2));
    let mut lambda = 2.0 / (b1.norm() + b2.norm());
    if !lambda.is_finite() {
        return Err(CalibrationError::Degenerate("homography columns vanish"));
    }
    if (b * reference.to_homogeneous()).z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1: Vector3<f64> = b1 * lambda;
    let r2: Vector3<f64> = b2 * lambda;
    let t: Vector3<f64> = b3 * lambda;
    let approx = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let rotation = nearest_rotation(&approx)?;
    let position = Point3::from(-(rotation.inverse() * t));
    Ok((rotation, position))
}

fn nearest_rotation(m: &Matrix3<f64>) -> Result<Rotation3<f64>, CalibrationError> {
    let svd = m.svd(true, true);
    let (u, v_t) = svd
        .u
        .zip(svd.v_t)
        .ok_or(CalibrationError::Degenerate("rotation svd"))?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Ok(Rotation3::from_matrix_unchecked(r))
}

/// Planar calibration from ground correspondences: DLT homography, closed
/// form focal and pose, then reprojection refinement.
pub fn calibrate_planar(
    correspondences: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    if correspondences.len() < 4 {
        return Err(CalibrationError::TooFewPoints {
            needed: 4,
            got: correspondences.len(),
        });
    }
    if !correspondences.iter().all(on_ground) {
        return Err(CalibrationError::NotOnGround);
    }
    let init = planar_initialization(correspondences, image_size)?;
    let report = refine_lm(&init, correspondences);
    Ok(report.params)
}

fn planar_initialization(
    ground: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    let pairs: Vec<PointPair> = ground
        .iter()
        .map(|c| PointPair::new(c.world.xy(), c.image))
        .collect();
    let h = estimate_homography(&pairs)?;
    let principal = image_size.center();
    let focal = focal_from_homography(h.matrix(), principal)?;
    let centroid = pairs
        .iter()
        .fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.world.coords)
        / pairs.len() as f64;
    let (rotation, position) = pose_from_homography(h.matrix(), focal, principal, Point2::from(centroid))?;
    Ok(CameraParams::new(focal, rotation, position, image_size))
}

/// Calibration using ground points together with the goal planes. A full
/// projection matrix is estimated by DLT and decomposed for an initial pose.
/// Planar initializations from every axis-aligned plane holding at least
/// four points (the ground, a goal mouth) are tried as well, since a plane
/// plus a single stray point defeats the DLT. The refined candidate with the
/// lowest RMSE wins. Coplanar input falls back to planar calibration.
pub fn calibrate_multiplane(
    correspondences: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    if correspondences.len() < 6 {
        return Err(CalibrationError::TooFewPoints {
            needed: 6,
            got: correspondences.len(),
        });
    }
    if correspondences.iter().all(on_ground) {
        return calibrate_planar(correspondences, image_size);
    }
    if coplanar(correspondences) {
        return calibrate_on_plane(correspondences, image_size);
    }

    let mut inits = Vec::new();
    let dlt = projection_initialization(correspondences, image_size);
    if let Ok(init) = dlt {
        inits.push(init);
    }
    for group in axis_plane_groups(correspondences) {
        if let Ok(init) = plane_initialization(&group, image_size) {
            inits.push(init);
        }
    }
    if inits.is_empty() {
        return Err(dlt.err().unwrap_or(CalibrationError::Degenerate("no initialization")));
    }
    inits
        .iter()
        .map(|init| refine_lm(init, correspondences))
        .filter(|r| r.rmse.is_finite())
        .min_by(|a, b| a.rmse.total_cmp(&b.rmse))
        .map(|r| r.params)
        .ok_or(CalibrationError::RefinementFailed)
}

/// Planar when every point is on the ground, plane-frame planar when the
/// points share some other plane (a goal mouth seen head-on), multiplane
/// otherwise.
pub fn calibrate(
    correspondences: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    if correspondences.iter().all(on_ground) {
        calibrate_planar(correspondences, image_size)
    } else if correspondences.len() >= 4 && coplanar(correspondences) {
        calibrate_on_plane(correspondences, image_size)
    } else {
        calibrate_multiplane(correspondences, image_size)
    }
}

/// Planar calibration for points on an arbitrary plane: express them in an
/// orthonormal frame of the plane, initialize there and map the pose back.
fn calibrate_on_plane(
    correspondences: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    if correspondences.len() < 4 {
        return Err(CalibrationError::TooFewPoints {
            needed: 4,
            got: correspondences.len(),
        });
    }
    let init = plane_initialization(correspondences, image_size)?;
    Ok(refine_lm(&init, correspondences).params)
}

fn plane_initialization(
    coplanar: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    let (origin, basis) = plane_frame(coplanar);
    let local: Vec<Correspondence> = coplanar
        .iter()
        .map(|c| {
            let q = basis * (c.world - origin);
            Correspondence::new(c.id, Point3::new(q.x, q.y, 0.0), c.image)
        })
        .collect();
    let init = planar_initialization(&local, image_size)?;
    let rotation = Rotation3::from_matrix_unchecked(init.rotation.matrix() * basis);
    let position = origin + basis.transpose() * init.position.coords;
    Ok(CameraParams::new(init.focal, rotation, position, image_size))
}

/// Groups of at least four points sharing one world coordinate value.
fn axis_plane_groups(correspondences: &[Correspondence]) -> Vec<Vec<Correspondence>> {
    let mut groups = Vec::new();
    for axis in 0..3 {
        let mut sorted = correspondences.to_vec();
        sorted.sort_by(|a, b| a.world[axis].total_cmp(&b.world[axis]));
        for chunk in sorted.chunk_by(|a, b| (b.world[axis] - a.world[axis]).abs() <= 1e-6) {
            if chunk.len() >= 4 {
                groups.push(chunk.to_vec());
            }
        }
    }
    groups
}

/// Centroid and a right-handed basis whose rows are the two in-plane
/// principal directions followed by the normal.
fn plane_frame(correspondences: &[Correspondence]) -> (Point3<f64>, Matrix3<f64>) {
    let (c, scatter) = scatter(correspondences);
    let eig = scatter.symmetric_eigen();
    let order = |descending: bool| {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        if descending {
            idx.reverse();
        }
        idx
    };
    let u = eig.eigenvectors.column(order(true)[0]).into_owned();
    let n = eig.eigenvectors.column(order(false)[0]).into_owned();
    let v = n.cross(&u);
    (Point3::from(c), Matrix3::from_rows(&[u.transpose(), v.transpose(), n.transpose()]))
}

fn scatter(correspondences: &[Correspondence]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = correspondences.len() as f64;
    let c = correspondences
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.world.coords)
        / n;
    let mut scatter = Matrix3::zeros();
    for p in correspondences {
        let d = p.world.coords - c;
        scatter += d * d.transpose();
    }
    (c, scatter)
}

fn coplanar(correspondences: &[Correspondence]) -> bool {
    let eig = scatter(correspondences).1.symmetric_eigen().eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    max <= 0.0 || min <= 1e-12 * max
}

fn normalizing_transform_3d(points: &[Point3<f64>]) -> Matrix4<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let mean = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = if mean > 0.0 { 3f64.sqrt() / mean } else { 1.0 };
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t[(0, 3)] = -s * c.x;
    t[(1, 3)] = -s * c.y;
    t[(2, 3)] = -s * c.z;
    t
}

fn projection_initialization(
    correspondences: &[Correspondence],
    image_size: ImageSize,
) -> Result<CameraParams, CalibrationError> {
    let world: Vec<Point3<f64>> = correspondences.iter().map(|c| c.world).collect();
    let image: Vec<Point2<f64>> = correspondences.iter().map(|c| c.image).collect();
    let tw = normalizing_transform_3d(&world);
    let ti = normalizing_transform(&image);
    let rows = (2 * correspondences.len()).max(12);
    let mut a = DMatrix::<f64>::zeros(rows, 12);
    for (i, c) in correspondences.iter().enumerate() {
        let x = tw * c.world.to_homogeneous();
        let m = ti * c.image.to_homogeneous();
        for k in 0..4 {
            a[(2 * i, k)] = x[k];
            a[(2 * i, 8 + k)] = -m.x * x[k];
            a[(2 * i + 1, 4 + k)] = x[k];
            a[(2 * i + 1, 8 + k)] = -m.y * x[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(CalibrationError::Degenerate("projection svd"))?;
    let sv = &svd.singular_values;
    let mut idx: Vec<usize> = (0..sv.len()).collect();
    idx.sort_by(|&p, &q| sv[p].total_cmp(&sv[q]));
    if sv[idx[1]] <= 1e-10 * sv.max() {
        return Err(CalibrationError::Degenerate("rank-deficient projection DLT"));
    }
    let p: Vec<f64> = v_t.row(idx[0]).iter().copied().collect();
    let pn = Matrix3x4::from_row_slice(&p);
    let ti_inv = ti
        .try_inverse()
        .ok_or(CalibrationError::Degenerate("image normalization"))?;
    let mut proj = ti_inv * pn * tw;
    let mut m: Matrix3<f64> = proj.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < 0.0 {
        proj = -proj;
        m = -m;
    }
    let (k, rot) = rq3(&m);
    if k[(2, 2)].abs() < 1e-300 {
        return Err(CalibrationError::Degenerate("projection at infinity"));
    }
    let k = k / k[(2, 2)];
    let focal = 0.5 * (k[(0, 0)] + k[(1, 1)]);
    let m_inv = m
        .try_inverse()
        .ok_or(CalibrationError::Degenerate("singular projection"))?;
    let position = Point3::from(-(m_inv * proj.column(3)));
    let rotation = nearest_rotation(&rot)?;
    if !(focal.is_finite() && focal > 0.0) {
        return Err(CalibrationError::Degenerate("negative decomposed focal"));
    }
    Ok(CameraParams::new(focal, rotation, position, image_size))
}

/// `m = K R` with `K` upper triangular with positive diagonal and `R`
/// orthogonal.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let e = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (e * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut k = e * r.transpose() * e;
    let mut rot = e * q.transpose();
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            rot.row_mut(i).neg_mut();
        }
    }
    (k, rot)
}
