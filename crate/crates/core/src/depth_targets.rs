//! Region filtering and uncertainty-guided propagation of sparse depth into
//! semi-dense supervision.
//!
//! A present cell of the filtered sparse map is a *seed*. Each seed copies its
//! depth into a square patch whose size depends on the predicted Laplace
//! scale `σ` at that cell:
//!
//! | σ            | patch |
//! |--------------|-------|
//! | `[0, lo)`    | 5×5   |
//! | `[lo, hi]`   | 3×3   |
//! | `(hi, ∞)`    | 1×1   |
//!
//! with `lo = 0.3`, `hi = 0.7` by default. Original samples always beat
//! propagated ones; among propagated writes the lowest-σ seed wins and ties
//! go to the lowest row-major seed index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    lidar_to_sparse_depth, CameraModel, LidarPoint, RigidTransform, SparseDepthMap,
};

pub const DEFAULT_MAX_DEPTH: f64 = 60.0;
pub const DEFAULT_SIGMA_LO: f64 = 0.3;
pub const DEFAULT_SIGMA_HI: f64 = 0.7;
pub const DEFAULT_WIDE_PATCH: usize = 5;
pub const DEFAULT_NARROW_PATCH: usize = 3;

/// An axis-aligned 2D detection in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub class_id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

impl Box2D {
    pub fn new(
        class_id: usize,
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        score: f64,
    ) -> Result<Self> {
        let b = Box2D {
            class_id,
            x_min,
            y_min,
            x_max,
            y_max,
            score,
        };
        if ![x_min, y_min, x_max, y_max, score]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidBox(format!("non-finite field in {b:?}")));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidBox(format!(
                "non-positive extent [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidBox(format!("score {score} outside [0, 1]")));
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Half-open containment: `x_min <= x < x_max`, same for `y`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    /// Clips the box to `[0, w] x [0, h]`; `None` if nothing is left.
    pub fn clip(&self, image_w: f64, image_h: f64) -> Option<Box2D> {
        let b = Box2D {
            x_min: self.x_min.clamp(0.0, image_w),
            y_min: self.y_min.clamp(0.0, image_h),
            x_max: self.x_max.clamp(0.0, image_w),
            y_max: self.y_max.clamp(0.0, image_h),
            ..*self
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    /// The same box in grid-cell units.
    pub fn scaled(&self, stride: u32) -> Box2D {
        let s = stride as f64;
        Box2D {
            x_min: self.x_min / s,
            y_min: self.y_min / s,
            x_max: self.x_max / s,
            y_max: self.y_max / s,
            ..*self
        }
    }
}

/// Per-cell Laplace scale on the same grid as the sparse depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    width: usize,
    height: usize,
    sigma: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(width: usize, height: usize, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != width * height {
            return Err(Error::mismatch(width * height, sigma.len()));
        }
        if let Some(bad) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidValue(format!(
                "sigma {bad} must be positive and finite"
            )));
        }
        Ok(UncertaintyMap {
            width,
            height,
            sigma,
        })
    }

    pub fn constant(width: usize, height: usize, sigma: f64) -> Result<Self> {
        Self::new(width, height, vec![sigma; width * height])
    }

    /// σ = exp(s) for a map of predicted log-scales.
    pub fn from_log_sigma(width: usize, height: usize, log_sigma: &[f64]) -> Result<Self> {
        Self::new(width, height, log_sigma.iter().map(|s| s.exp()).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.sigma[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Propagated,
}

/// One supervised cell of a [`SemiDenseDepthTarget`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLabel {
    pub depth: f64,
    pub provenance: Provenance,
    pub weight: f64,
    /// Row-major index of the seed cell this depth came from.
    pub seed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiDenseDepthTarget {
    width: usize,
    height: usize,
    stride: u32,
    cells: Vec<Option<DepthLabel>>,
}

impl SemiDenseDepthTarget {
    pub fn empty(width: usize, height: usize, stride: u32) -> Self {
        SemiDenseDepthTarget {
            width,
            height,
            stride,
            cells: vec![None; width * height],
        }
    }

    /// Rebuilds a target from stored cells, checking the label invariants.
    pub fn from_cells(
        width: usize,
        height: usize,
        stride: u32,
        cells: Vec<Option<DepthLabel>>,
    ) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::mismatch(width * height, cells.len()));
        }
        for label in cells.iter().flatten() {
            if !(label.depth > 0.0 && label.depth.is_finite())
                || !(label.weight > 0.0)
                || label.seed >= cells.len()
            {
                return Err(Error::InvalidValue(format!("bad depth label {label:?}")));
            }
        }
        Ok(SemiDenseDepthTarget {
            width,
            height,
            stride,
            cells,
        })
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

    pub fn cells(&self) -> &[Option<DepthLabel>] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&DepthLabel> {
        self.cells.get(y * self.width + x).and_then(|c| c.as_ref())
    }

    pub fn supervised_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.cells
            .iter()
            .flatten()
            .filter(|l| l.provenance == provenance)
            .count()
    }

    /// `(index, label)` for every supervised cell in row-major order.
    pub fn iter_supervised(&self) -> impl Iterator<Item = (usize, &DepthLabel)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.as_ref().map(|l| (i, l)))
    }
}

/// Thresholds and patch sizes for [`propagate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub wide_patch: usize,
    pub narrow_patch: usize,
    pub propagated_weight: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            sigma_lo: DEFAULT_SIGMA_LO,
            sigma_hi: DEFAULT_SIGMA_HI,
            wide_patch: DEFAULT_WIDE_PATCH,
            narrow_patch: DEFAULT_NARROW_PATCH,
            propagated_weight: 1.0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_lo >= 0.0 && self.sigma_lo <= self.sigma_hi && self.sigma_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma thresholds must ascend, got {} and {}",
                self.sigma_lo, self.sigma_hi
            )));
        }
        if self.wide_patch.is_multiple_of(2) || self.narrow_patch.is_multiple_of(2) {
            return Err(Error::InvalidConfig("patch sizes must be odd".into()));
        }
        if !(self.propagated_weight > 0.0 && self.propagated_weight.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "propagated_weight {} must be positive",
                self.propagated_weight
            )));
        }
        Ok(())
    }

    /// Patch half-width for a seed with scale `sigma`.
    pub fn radius(&self, sigma: f64) -> usize {
        if sigma < self.sigma_lo {
            self.wide_patch / 2
        } else if sigma <= self.sigma_hi {
            self.narrow_patch / 2
        } else {
            0
        }
    }
}

/// Keeps cells whose center pixel lies inside at least one box and whose
/// depth is below `max_depth`.
pub fn region_filter(sparse: &SparseDepthMap, boxes: &[Box2D], max_depth: f64) -> SparseDepthMap {
    let mut out = sparse.clone();
    let s = sparse.stride() as f64;
    for (x, y, d) in sparse.iter_present() {
        let px = s * (x as f64 + 0.5);
        let py = s * (y as f64 + 0.5);
        let keep = d < max_depth && boxes.iter().any(|b| b.contains(px, py));
        if !keep {
            out.clear(x, y);
        }
    }
    out
}

pub fn propagate(
    filtered: &SparseDepthMap,
    sigma: &UncertaintyMap,
    config: &PropagationConfig,
) -> Result<SemiDenseDepthTarget> {
    let (w, h) = (filtered.width(), filtered.height());
    if (sigma.width(), sigma.height()) != (w, h) {
        return Err(Error::mismatch(
            format!("{w}x{h}"),
            format!("{}x{}", sigma.width(), sigma.height()),
        ));
    }
    config.validate()?;

    let mut target = SemiDenseDepthTarget::empty(w, h, filtered.stride());
    // σ of the seed currently owning each propagated cell
    let mut owner_sigma = vec![f64::INFINITY; w * h];

    for (x, y, depth) in filtered.iter_present() {
        let idx = y * w + x;
        target.cells[idx] = Some(DepthLabel {
            depth,
            provenance: Provenance::Original,
            weight: 1.0,
            seed: idx,
        });
    }

    // Seeds arrive in row-major order, so a strict `<` on σ implements the
    // lowest-index tiebreak.
    for (x, y, depth) in filtered.iter_present() {
        let seed = y * w + x;
        let s = sigma.get(x, y);
        let r = config.radius(s);
        if r == 0 {
            continue;
        }
        for ny in y.saturating_sub(r)..=(y + r).min(h - 1) {
            for nx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                let idx = ny * w + nx;
                if matches!(target.cells[idx], Some(l) if l.provenance == Provenance::Original) {
                    continue;
                }
                if s < owner_sigma[idx] {
                    owner_sigma[idx] = s;
                    target.cells[idx] = Some(DepthLabel {
                        depth,
                        provenance: Provenance::Propagated,
                        weight: config.propagated_weight,
                        seed,
                    });
                }
            }
        }
    }
    Ok(target)
}

/// Lidar → sparse map → region filter → propagation.
#[allow(clippy::too_many_arguments)]
pub fn build_depth_target(
    points: &[LidarPoint],
    lidar_to_cam: &RigidTransform,
    cam: &CameraModel,
    boxes: &[Box2D],
    sigma: &UncertaintyMap,
    stride: u32,
    max_depth: f64,
    config: &PropagationConfig,
) -> Result<SemiDenseDepthTarget> {
    let sparse = lidar_to_sparse_depth(points, lidar_to_cam, cam, stride)?;
    let filtered = region_filter(&sparse, boxes, max_depth);
    propagate(&filtered, sigma, config)
}
