//! Pinhole camera model, rigid transforms and lidar-to-image projection.
//!
//! Depth throughout is camera-frame `z`, not Euclidean range.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer to the camera plane than this are rejected by [`project_point`].
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

const RIGID_TOLERANCE: f64 = 1e-6;

/// Pinhole intrinsics plus the sensor size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_w: u32,
    pub image_h: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            image_w,
            image_h,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.image_w as f64) {
            return Err(Error::InvalidCamera(format!(
                "cx={} outside [0, {})",
                self.cx, self.image_w
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.image_h as f64) {
            return Err(Error::InvalidCamera(format!(
                "cy={} outside [0, {})",
                self.cy, self.image_h
            )));
        }
        Ok(())
    }

    /// Half-open pixel test: `0 <= u < image_w` and `0 <= v < image_h`.
    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.image_w as f64 && v >= 0.0 && v < self.image_h as f64
    }

    /// Grid dimensions `(width, height)` at the given stride.
    pub fn grid_dims(&self, stride: u32) -> Result<(usize, usize)> {
        grid_dims(self.image_w, self.image_h, stride)
    }
}

/// `(ceil(image_w / stride), ceil(image_h / stride))`.
pub fn grid_dims(image_w: u32, image_h: u32, stride: u32) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidStride);
    }
    Ok((
        image_w.div_ceil(stride) as usize,
        image_h.div_ceil(stride) as usize,
    ))
}

/// Rotation followed by translation, `p' = R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !ortho_err.is_finite() || ortho_err > RIGID_TOLERANCE {
            return Err(Error::NotRigid(format!("max |R^T R - I| = {ortho_err:e}")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > RIGID_TOLERANCE {
            return Err(Error::NotRigid(format!("det(R) = {det}")));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::NotRigid("non-finite translation".into()));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation that is only approximately
    /// orthonormal (e.g. printed with 7 significant digits) by snapping it
    /// to the nearest rotation in the Frobenius sense. Inputs further than
    /// `tolerance` from orthonormal are rejected.
    pub fn from_approximate(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !ortho_err.is_finite() || ortho_err > tolerance {
            return Err(Error::NotRigid(format!(
                "max |R^T R - I| = {ortho_err:e} exceeds {tolerance:e}"
            )));
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::NotRigid("svd failed".into())),
        };
        let nearest = u * v_t;
        if nearest.determinant() < 0.0 {
            return Err(Error::NotRigid("rotation is a reflection".into()));
        }
        Self::new(nearest, translation)
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

pub fn transform_point(p: &Vector3<f64>, transform: &RigidTransform) -> Vector3<f64> {
    transform.apply(p)
}

/// A single lidar return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl LidarPoint {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        LidarPoint { x, y, z, intensity }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x as f64, self.y as f64, self.z as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// Pixel coordinates and camera-frame depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_point(p: &Vector3<f64>, cam: &CameraModel) -> Result<Projection> {
    let z = p.z;
    if !(z > MIN_PROJECTION_DEPTH) {
        return Err(Error::NonPositiveDepth { depth: z });
    }
    Ok(Projection {
        u: cam.fx * p.x / z + cam.cx,
        v: cam.fy * p.y / z + cam.cy,
        depth: z,
    })
}

/// Inverse of [`project_point`] for a known depth.
pub fn backproject(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Vector3<f64> {
    Vector3::new(
        (u - cam.cx) * depth / cam.fx,
        (v - cam.cy) * depth / cam.fy,
        depth,
    )
}

/// Grid of optional metric depths at a fixed pixel stride.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    width: usize,
    height: usize,
    stride: u32,
    cells: Vec<Option<f64>>,
}

impl SparseDepthMap {
    pub fn empty(width: usize, height: usize, stride: u32) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidStride);
        }
        Ok(SparseDepthMap {
            width,
            height,
            stride,
            cells: vec![None; width * height],
        })
    }

    pub fn for_camera(cam: &CameraModel, stride: u32) -> Result<Self> {
        let (w, h) = cam.grid_dims(stride)?;
        Self::empty(w, h, stride)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn cells(&self) -> &[Option<f64>] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        if x < self.width && y < self.height {
            self.cells[y * self.width + x]
        } else {
            None
        }
    }

    /// Stores `depth` at `(x, y)`. Non-positive or non-finite depths are rejected.
    pub fn set(&mut self, x: usize, y: usize, depth: f64) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::mismatch(
                format!("cell inside {}x{}", self.width, self.height),
                format!("({x}, {y})"),
            ));
        }
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "depth {depth} must be in (0, inf)"
            )));
        }
        self.cells[y * self.width + x] = Some(depth);
        Ok(())
    }

    pub fn clear(&mut self, x: usize, y: usize) {
        if x < self.width && y < self.height {
            self.cells[y * self.width + x] = None;
        }
    }

    /// Keeps the smaller of the stored and offered depth.
    pub(crate) fn offer_min(&mut self, idx: usize, depth: f64) {
        let cell = &mut self.cells[idx];
        match cell {
            Some(d) if *d <= depth => {}
            _ => *cell = Some(depth),
        }
    }

    pub fn present_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// `(x, y, depth)` for every present cell in row-major order.
    pub fn iter_present(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.map(|d| (i % self.width, i / self.width, d)))
    }
}

/// Projects every lidar point into the image and reduces per cell to the
/// nearest depth. Points behind the camera or off-image are skipped.
pub fn lidar_to_sparse_depth(
    points: &[LidarPoint],
    lidar_to_cam: &RigidTransform,
    cam: &CameraModel,
    stride: u32,
) -> Result<SparseDepthMap> {
    let mut map = SparseDepthMap::for_camera(cam, stride)?;
    let s = stride as f64;
    for pt in points.iter().filter(|p| p.is_finite()) {
        let pc = lidar_to_cam.apply(&pt.position());
        let Ok(proj) = project_point(&pc, cam) else {
            continue;
        };
        if !cam.contains_pixel(proj.u, proj.v) {
            continue;
        }
        let cx = (proj.u / s).floor() as usize;
        let cy = (proj.v / s).floor() as usize;
        map.offer_min(cy * map.width + cx, proj.depth);
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kitti_like() -> CameraModel {
        CameraModel::new(700.0, 700.0, 600.0, 180.0, 1242, 375).unwrap()
    }

    #[test]
    fn principal_ray_projects_to_principal_point() {
        let p = project_point(&Vector3::new(0.0, 0.0, 10.0), &kitti_like()).unwrap();
        assert_eq!((p.u, p.v, p.depth), (600.0, 180.0, 10.0));
    }

    #[test]
    fn lateral_offset_projection() {
        let p = project_point(&Vector3::new(1.0, 0.0, 10.0), &kitti_like()).unwrap();
        assert_abs_diff_eq!(p.u, 670.0, epsilon = 1e-12);
        assert_eq!(p.v, 180.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project_point(&Vector3::new(0.0, 0.0, -5.0), &kitti_like()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDepth { .. }));
        assert!(project_point(&Vector3::new(0.0, 0.0, 1e-6), &kitti_like()).is_err());
    }

    #[test]
    fn camera_invariants_enforced() {
        assert!(CameraModel::new(0.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraModel::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        assert!(CameraModel::new(1.0, 1.0, 0.0, 9.99, 10, 10).is_ok());
    }

    #[test]
    fn identity_and_translation() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&p, &RigidTransform::identity()), p);
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(
            transform_point(&Vector3::zeros(), &t),
            Vector3::new(0.0, 0.0, 1.0)
        );
    }

    #[test]
    fn reflection_is_not_rigid() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(r, Vector3::zeros()).is_err());
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(skew, Vector3::zeros()).is_err());
    }

    #[test]
    fn approximate_rotation_is_snapped() {
        // rotation about z by 30 degrees, rounded to 7 significant digits
        let r = Matrix3::new(
            8.660254e-01,
            -5.000000e-01,
            0.0,
            5.000000e-01,
            8.660254e-01,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let t = RigidTransform::from_approximate(r, Vector3::zeros(), 1e-3).unwrap();
        assert_abs_diff_eq!(t.rotation()[(0, 0)], 3f64.sqrt() / 2.0, epsilon = 1e-7);
        assert!(RigidTransform::from_approximate(r * 1.1, Vector3::zeros(), 1e-3).is_err());
    }

    #[test]
    fn behind_camera_points_yield_empty_map() {
        let pts = [
            LidarPoint::new(0.0, 0.0, -3.0, 0.5),
            LidarPoint::new(1.0, 1.0, -10.0, 0.1),
        ];
        let map =
            lidar_to_sparse_depth(&pts, &RigidTransform::identity(), &kitti_like(), 4).unwrap();
        assert_eq!(map.present_count(), 0);
        assert_eq!((map.width(), map.height()), (311, 94));
    }

    #[test]
    fn nearest_point_wins_a_shared_cell() {
        // both rays pass through pixel (600, 180)
        let pts = [
            LidarPoint::new(0.0, 0.0, 12.0, 0.0),
            LidarPoint::new(0.0, 0.0, 8.0, 0.0),
        ];
        let map =
            lidar_to_sparse_depth(&pts, &RigidTransform::identity(), &kitti_like(), 4).unwrap();
        assert_eq!(map.present_count(), 1);
        assert_eq!(map.get(150, 45), Some(8.0));
    }

    #[test]
    fn image_border_is_half_open() {
        let cam = CameraModel::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
        // u = 10*0.5/1 + 5 = 10 -> outside
        let outside = [LidarPoint::new(0.5, 0.0, 1.0, 0.0)];
        let map = lidar_to_sparse_depth(&outside, &RigidTransform::identity(), &cam, 1).unwrap();
        assert_eq!(map.present_count(), 0);
        // u = 0 -> inside
        let inside = [LidarPoint::new(-0.5, 0.0, 1.0, 0.0)];
        let map = lidar_to_sparse_depth(&inside, &RigidTransform::identity(), &cam, 1).unwrap();
        assert_eq!(map.get(0, 5), Some(1.0));
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(matches!(
            lidar_to_sparse_depth(&[], &RigidTransform::identity(), &kitti_like(), 0),
            Err(Error::InvalidStride)
        ));
    }
}
