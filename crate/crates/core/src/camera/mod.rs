//! Pinhole broadcast camera: single focal length, principal point fixed at
//! the frame center, no distortion.

mod calibrate;
mod lm;

pub use calibrate::{
    calibrate, calibrate_multiplane, calibrate_planar, focal_from_homography, pose_from_homography,
};
pub use lm::{refine_lm, LmReport, LmStatus};

use nalgebra::{Matrix3, Point2, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("too few correspondences: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("focal length cannot be recovered from the homography")]
    FocalUnrecoverable,
    #[error("planar calibration needs ground points (z = 0)")]
    NotOnGround,
    #[error("refinement failed")]
    RefinementFailed,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Frame size in pixels, serialized as `[width, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const BROADCAST: ImageSize = ImageSize {
        width: 960,
        height: 540,
    };

    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Closed frame rectangle `[0, w] x [0, h]`.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }
}

impl From<[u32; 2]> for ImageSize {
    fn from([width, height]: [u32; 2]) -> Self {
        Self { width, height }
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.width, s.height]
    }
}

impl Default for ImageSize {
    fn default() -> Self {
        Self::BROADCAST
    }
}

/// Pinhole camera. `rotation` maps world to camera axes (x right, y down,
/// z forward); `position` is the camera center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub focal: f64,
    pub rotation: Rotation3<f64>,
    pub position: Point3<f64>,
    pub image_size: ImageSize,
}

impl CameraParams {
    pub fn new(focal: f64, rotation: Rotation3<f64>, position: Point3<f64>, image_size: ImageSize) -> Self {
        Self {
            focal,
            rotation,
            position,
            image_size,
        }
    }

    /// Camera at `position` aimed at `target`, with world `+z` appearing up in
    /// the image, then rolled by `roll` radians about the optical axis.
    pub fn look_at(
        position: Point3<f64>,
        target: Point3<f64>,
        focal: f64,
        roll: f64,
        image_size: ImageSize,
    ) -> Option<Self> {
        let forward = (target - position).try_normalize(1e-12)?;
        let right = forward.cross(&Vector3::z()).try_normalize(1e-12)?;
        let down = forward.cross(&right);
        let base = Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]));
        let roll = Rotation3::from_axis_angle(&Unit::new_unchecked(Vector3::z()), roll);
        Some(Self::new(focal, roll * base, position, image_size))
    }

    pub fn principal_point(&self) -> Point2<f64> {
        self.image_size.center()
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        let c = self.principal_point();
        Matrix3::new(self.focal, 0.0, c.x, 0.0, self.focal, c.y, 0.0, 0.0, 1.0)
    }

    pub fn to_camera(&self, world: &Point3<f64>) -> Vector3<f64> {
        self.rotation * (world - self.position)
    }

    /// Pixel position of a world point, or `None` when it is behind the
    /// camera (depth `<= 1e-9`).
    pub fn project(&self, world: &Point3<f64>) -> Option<Point2<f64>> {
        let pc = self.to_camera(world);
        if pc.z <= 1e-9 {
            return None;
        }
        let c = self.principal_point();
        Some(Point2::new(
            self.focal * pc.x / pc.z + c.x,
            self.focal * pc.y / pc.z + c.y,
        ))
    }

    /// Intersects the viewing ray through `pixel` with the ground plane.
    pub fn backproject_to_ground(&self, pixel: &Point2<f64>) -> Option<Point3<f64>> {
        let c = self.principal_point();
        let ray_cam = Vector3::new((pixel.x - c.x) / self.focal, (pixel.y - c.y) / self.focal, 1.0);
        let ray = self.rotation.inverse() * ray_cam;
        if ray.z.abs() < 1e-15 {
            return None;
        }
        let s = -self.position.z / ray.z;
        (s > 0.0).then(|| self.position + ray * s)
    }

    /// Ground-plane homography `K [r1 r2 t]`.
    pub fn ground_homography(&self) -> Matrix3<f64> {
        let r = self.rotation.matrix();
        let t = -(r * self.position.coords);
        let mut m = Matrix3::zeros();
        m.set_column(0, &r.column(0));
        m.set_column(1, &r.column(1));
        m.set_column(2, &t);
        self.intrinsics() * m
    }
}

/// A world point and its observed image position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Point3<f64>,
    pub image: Point2<f64>,
    pub id: usize,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(id: usize, world: Point3<f64>, image: Point2<f64>) -> Self {
        Self {
            world,
            image,
            id,
            confidence: 1.0,
        }
    }
}

/// Root mean square pixel error; points behind the camera make it infinite.
/// `None` for an empty input.
pub fn reprojection_rmse(params: &CameraParams, correspondences: &[Correspondence]) -> Option<f64> {
    if correspondences.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for c in correspondences {
        match params.project(&c.world) {
            Some(p) => sum += (p - c.image).norm_squared(),
            None => return Some(f64::INFINITY),
        }
    }
    Some((sum / correspondences.len() as f64).sqrt())
}

/// Bounds outside which a calibration is discarded. All bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlausibilityBounds {
    pub max_height_m: f64,
    pub max_abs_xy_m: f64,
    pub focal_min_px: f64,
    pub focal_max_px: f64,
}

impl Default for PlausibilityBounds {
    fn default() -> Self {
        Self {
            max_height_m: 100.0,
            max_abs_xy_m: 250.0,
            focal_min_px: 10.0,
            focal_max_px: 20000.0,
        }
    }
}

impl PlausibilityBounds {
    pub fn check(&self, params: &CameraParams) -> bool {
        let p = params.position;
        let finite = p.iter().all(|v| v.is_finite()) && params.focal.is_finite();
        finite
            && p.z > 0.0
            && p.z <= self.max_height_m
            && p.x.abs() <= self.max_abs_xy_m
            && p.y.abs() <= self.max_abs_xy_m
            && params.focal >= self.focal_min_px
            && params.focal <= self.focal_max_px
    }
}

pub fn is_plausible(params: &CameraParams) -> bool {
    PlausibilityBounds::default().check(params)
}
