//! Python bindings. Grids cross the boundary as flat row-major lists
//! (channel-major for heatmaps) with explicit dimensions; empty depth cells
//! are `None`.

use dept_core::depth_targets::{self, Box2D, PropagationConfig, Provenance, UncertaintyMap};
use dept_core::geometry::{self, LidarPoint, SparseDepthMap};
use dept_core::gradcheck::{run_gradcheck, GradcheckConfig};
use dept_core::io_formats;
use dept_core::keypoint_targets;
use dept_core::losses::{self, DepthPrediction, FocalParams};
use nalgebra::Vector3;
use pyo3::create_exception;
use pyo3::prelude::*;

create_exception!(
    dept,
    DeptError,
    pyo3::exceptions::PyValueError,
    "Raised for invalid input to dept."
);

/// `(depth, provenance, seed index)`.
type PropagatedCell = (f64, &'static str, usize);

fn py_err(e: dept_core::Error) -> PyErr {
    DeptError::new_err(e.to_string())
}

/// Pinhole camera with its image size in pixels.
#[pyclass(name = "CameraModel", module = "dept", frozen)]
struct PyCameraModel {
    inner: geometry::CameraModel,
}

#[pymethods]
impl PyCameraModel {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, image_w: u32, image_h: u32) -> PyResult<Self> {
        let inner = geometry::CameraModel::new(fx, fy, cx, cy, image_w, image_h).map_err(py_err)?;
        Ok(PyCameraModel { inner })
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.fx
    }
    #[getter]
    fn fy(&self) -> f64 {
        self.inner.fy
    }
    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx
    }
    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy
    }
    #[getter]
    fn image_w(&self) -> u32 {
        self.inner.image_w
    }
    #[getter]
    fn image_h(&self) -> u32 {
        self.inner.image_h
    }

    /// `(u, v, depth)` of a camera-frame point.
    fn project(&self, x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
        project_point(self, x, y, z)
    }

    /// Camera-frame point at pixel `(u, v)` and the given depth.
    fn backproject(&self, u: f64, v: f64, depth: f64) -> (f64, f64, f64) {
        let p = geometry::backproject(u, v, depth, &self.inner);
        (p.x, p.y, p.z)
    }

    /// `(width, height)` of the target grid at `stride`.
    fn grid_dims(&self, stride: u32) -> PyResult<(usize, usize)> {
        self.inner.grid_dims(stride).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "CameraModel(fx={}, fy={}, cx={}, cy={}, image_w={}, image_h={})",
            c.fx, c.fy, c.cx, c.cy, c.image_w, c.image_h
        )
    }
}

/// Parsed KITTI calibration for the left color camera.
#[pyclass(name = "KittiCalib", module = "dept", frozen)]
struct PyKittiCalib {
    inner: io_formats::KittiCalib,
}

#[pymethods]
impl PyKittiCalib {
    #[new]
    #[pyo3(signature = (text, image_w = 1242, image_h = 375))]
    fn new(text: &str, image_w: u32, image_h: u32) -> PyResult<Self> {
        let inner = io_formats::read_kitti_calib(text, image_w, image_h).map_err(py_err)?;
        Ok(PyKittiCalib { inner })
    }

    #[getter]
    fn camera(&self) -> PyCameraModel {
        PyCameraModel {
            inner: self.inner.camera,
        }
    }

    /// Lidar point in the rectified camera frame.
    fn lidar_to_camera(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let p = self.inner.lidar_to_cam.apply(&Vector3::new(x, y, z));
        (p.x, p.y, p.z)
    }

    /// Nearest depth per cell: `(width, height, cells)`.
    #[pyo3(signature = (points, stride = 4))]
    fn sparse_depth(
        &self,
        points: Vec<(f32, f32, f32, f32)>,
        stride: u32,
    ) -> PyResult<(usize, usize, Vec<Option<f64>>)> {
        let pts: Vec<LidarPoint> = points
            .into_iter()
            .map(|(x, y, z, i)| LidarPoint::new(x, y, z, i))
            .collect();
        let m = geometry::lidar_to_sparse_depth(
            &pts,
            &self.inner.lidar_to_cam,
            &self.inner.camera,
            stride,
        )
        .map_err(py_err)?;
        Ok((m.width(), m.height(), m.cells().to_vec()))
    }
}

#[pyfunction]
fn project_point(camera: &PyCameraModel, x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
    let p = geometry::project_point(&Vector3::new(x, y, z), &camera.inner).map_err(py_err)?;
    Ok((p.u, p.v, p.depth))
}

/// `(loss, d_loss/d_z, d_loss/d_s)` with `s = ln σ`.
#[pyfunction]
fn laplace_depth_loss(z: f64, s: f64, z_gt: f64) -> (f64, f64, f64) {
    let l = losses::laplace_depth_loss(DepthPrediction { z, s }, z_gt);
    (l.loss, l.d_z, l.d_s)
}

/// `(loss, gradient, positives)` for flat `channels × height × width` maps.
#[pyfunction]
#[pyo3(signature = (pred, target, channels, width, height, alpha = 2.0, beta = 4.0))]
fn focal_heatmap_loss(
    pred: Vec<f64>,
    target: Vec<f64>,
    channels: usize,
    width: usize,
    height: usize,
    alpha: f64,
    beta: f64,
) -> PyResult<(f64, Vec<f64>, usize)> {
    let p =
        keypoint_targets::HeatmapSet::from_values(channels, width, height, pred).map_err(py_err)?;
    let t = keypoint_targets::HeatmapSet::from_values(channels, width, height, target)
        .map_err(py_err)?;
    let l = losses::focal_heatmap_loss(&p, &t, FocalParams { alpha, beta }).map_err(py_err)?;
    Ok((l.loss, l.grad, l.num_positive))
}

#[pyfunction]
fn class_weights(counts: Vec<u64>) -> PyResult<Vec<f64>> {
    Ok(losses::class_weights(&counts)
        .map_err(py_err)?
        .weights()
        .to_vec())
}

#[pyfunction]
#[pyo3(signature = (box_w, box_h, min_iou = 0.7))]
fn overlap_radius(box_w: f64, box_h: f64, min_iou: f64) -> f64 {
    keypoint_targets::overlap_radius(box_w, box_h, min_iou)
}

#[pyfunction]
#[pyo3(signature = (box_w, box_h, min_iou = 0.7))]
fn gaussian_sigma(box_w: f64, box_h: f64, min_iou: f64) -> PyResult<f64> {
    keypoint_targets::gaussian_sigma(box_w, box_h, min_iou).map_err(py_err)
}

/// Four corner channels for `(x_min, y_min, x_max, y_max)` pixel boxes.
#[pyfunction]
#[pyo3(signature = (boxes, width, height, stride = 4, min_iou = 0.7))]
fn corner_heatmaps(
    boxes: Vec<(f64, f64, f64, f64)>,
    width: usize,
    height: usize,
    stride: u32,
    min_iou: f64,
) -> PyResult<Vec<f64>> {
    let boxes = to_boxes(boxes)?;
    let hm = keypoint_targets::corner_heatmaps(&boxes, stride, width, height, min_iou)
        .map_err(py_err)?;
    Ok(hm.values().to_vec())
}

fn to_boxes(boxes: Vec<(f64, f64, f64, f64)>) -> PyResult<Vec<Box2D>> {
    boxes
        .into_iter()
        .map(|(x0, y0, x1, y1)| Box2D::new(0, x0, y0, x1, y1, 1.0).map_err(py_err))
        .collect()
}

/// Semi-dense targets from seed depths and per-cell σ. Each cell is `None`
/// or `(depth, "original" | "propagated", seed_index)`.
#[pyfunction]
#[pyo3(signature = (depth, sigma, width, height, sigma_lo = 0.3, sigma_hi = 0.7))]
fn propagate(
    depth: Vec<Option<f64>>,
    sigma: Vec<f64>,
    width: usize,
    height: usize,
    sigma_lo: f64,
    sigma_hi: f64,
) -> PyResult<Vec<Option<PropagatedCell>>> {
    if depth.len() != width * height {
        return Err(DeptError::new_err(format!(
            "depth has {} cells, expected {}",
            depth.len(),
            width * height
        )));
    }
    let mut seeds = SparseDepthMap::empty(width, height, 1).map_err(py_err)?;
    for (i, d) in depth.iter().enumerate() {
        if let Some(d) = d {
            seeds.set(i % width, i / width, *d).map_err(py_err)?;
        }
    }
    let sigma = UncertaintyMap::new(width, height, sigma).map_err(py_err)?;
    let cfg = PropagationConfig {
        sigma_lo,
        sigma_hi,
        ..Default::default()
    };
    let t = depth_targets::propagate(&seeds, &sigma, &cfg).map_err(py_err)?;
    Ok(t.cells()
        .iter()
        .map(|c| {
            c.map(|l| {
                let p = match l.provenance {
                    Provenance::Original => "original",
                    Provenance::Propagated => "propagated",
                };
                (l.depth, p, l.seed)
            })
        })
        .collect())
}

/// `(x, y, z, intensity)` tuples from a KITTI `.bin` scan.
#[pyfunction]
fn read_velodyne_bin(data: &[u8]) -> PyResult<Vec<(f32, f32, f32, f32)>> {
    let pts = io_formats::read_velodyne_bin(data).map_err(py_err)?;
    Ok(pts
        .into_iter()
        .map(|p| (p.x, p.y, p.z, p.intensity))
        .collect())
}

/// Runs every gradient check; returns `(passed, report_text)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<(bool, String)> {
    let r = run_gradcheck(&GradcheckConfig {
        seed,
        ..Default::default()
    })
    .map_err(py_err)?;
    Ok((r.passed(), r.to_text()))
}

#[pymodule]
fn dept(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DeptError", m.py().get_type::<DeptError>())?;
    m.add_class::<PyCameraModel>()?;
    m.add_class::<PyKittiCalib>()?;
    m.add_function(wrap_pyfunction!(project_point, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_depth_loss, m)?)?;
    m.add_function(wrap_pyfunction!(focal_heatmap_loss, m)?)?;
    m.add_function(wrap_pyfunction!(class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(overlap_radius, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(corner_heatmaps, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(read_velodyne_bin, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
