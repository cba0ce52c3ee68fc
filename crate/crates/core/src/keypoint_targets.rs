//! Gaussian keypoint heatmaps: four box-corner channels for pre-training and
//! per-class center heatmaps with size/offset regression targets.

use serde::{Deserialize, Serialize};

use crate::depth_targets::Box2D;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_IOU: f64 = 0.7;
/// Lower bound on the Gaussian standard deviation, in cells.
pub const SIGMA_FLOOR: f64 = 2.0 / 3.0;

/// Corner channel order.
pub const CORNER_CHANNELS: [&str; 4] = ["top_left", "top_right", "bottom_right", "bottom_left"];

/// `C x H x W` grid of values in `[0, 1]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSet {
    channels: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl HeatmapSet {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        HeatmapSet {
            channels,
            width,
            height,
            values: vec![0.0; channels * width * height],
        }
    }

    pub fn filled(channels: usize, width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(
            channels,
            width,
            height,
            vec![value; channels * width * height],
        )
    }

    pub fn from_values(
        channels: usize,
        width: usize,
        height: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != channels * width * height {
            return Err(Error::mismatch(channels * width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!(
                "heatmap value {v} outside [0, 1]"
            )));
        }
        Ok(HeatmapSet {
            channels,
            width,
            height,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.values[self.index(c, x, y)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Concatenates channel stacks of equal spatial size.
    pub fn stack(sets: &[&HeatmapSet]) -> Result<HeatmapSet> {
        let Some(first) = sets.first() else {
            return Ok(HeatmapSet::zeros(0, 0, 0));
        };
        let mut values = Vec::new();
        let mut channels = 0;
        for s in sets {
            if (s.width, s.height) != (first.width, first.height) {
                return Err(Error::mismatch(
                    format!("{}x{}", first.width, first.height),
                    format!("{}x{}", s.width, s.height),
                ));
            }
            channels += s.channels;
            values.extend_from_slice(&s.values);
        }
        Ok(HeatmapSet {
            channels,
            width: first.width,
            height: first.height,
            values,
        })
    }

    /// Splits off channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<HeatmapSet> {
        if start + count > self.channels {
            return Err(Error::mismatch(
                format!("channels {}..{}", start, start + count),
                format!("{} channels", self.channels),
            ));
        }
        let n = self.width * self.height;
        Ok(HeatmapSet {
            channels: count,
            width: self.width,
            height: self.height,
            values: self.values[start * n..(start + count) * n].to_vec(),
        })
    }
}

/// A Gaussian peak on one channel, in (fractional) cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub channel: usize,
    pub px: f64,
    pub py: f64,
    pub sigma: f64,
}

impl Keypoint {
    /// Peak cell: round-half-up of the fractional position.
    pub fn cell(&self) -> (i64, i64) {
        (
            (self.px + 0.5).floor() as i64,
            (self.py + 0.5).floor() as i64,
        )
    }
}

/// Largest corner shift `r` keeping IoU ≥ `min_iou`, taken as the minimum
/// over the three corner configurations (both corners shifted together,
/// both pulled inward, both pushed outward).
pub fn overlap_radius(box_w: f64, box_h: f64, min_iou: f64) -> f64 {
    let (w, h, m) = (box_w, box_h, min_iou);
    let sum = w + h;
    let area = w * h;

    // translated box: r^2 - (w+h) r + wh(1-m)/(1+m) = 0, smaller root
    let c1 = area * (1.0 - m) / (1.0 + m);
    let r1 = (sum - (sum * sum - 4.0 * c1).sqrt()) / 2.0;

    // shrunk box: 4r^2 - 2(w+h) r + (1-m)wh = 0, smaller root
    let b2 = 2.0 * sum;
    let r2 = (b2 - (b2 * b2 - 16.0 * (1.0 - m) * area).sqrt()) / 8.0;

    // grown box: 4m r^2 + 2m(w+h) r + (m-1)wh = 0, positive root
    let a3 = 4.0 * m;
    let b3 = 2.0 * m * sum;
    let c3 = (m - 1.0) * area;
    let r3 = (-b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / (2.0 * a3);

    r1.min(r2).min(r3)
}

/// Size-adaptive standard deviation `max(r / 3, 2/3)` in cells.
pub fn gaussian_sigma(box_w: f64, box_h: f64, min_iou: f64) -> Result<f64> {
    if !(box_w > 0.0 && box_h > 0.0 && box_w.is_finite() && box_h.is_finite()) {
        return Err(Error::InvalidBox(format!(
            "box dims must be positive, got {box_w} x {box_h}"
        )));
    }
    if !(min_iou > 0.0 && min_iou < 1.0) {
        return Err(Error::InvalidValue(format!(
            "min_iou {min_iou} outside (0, 1)"
        )));
    }
    Ok((overlap_radius(box_w, box_h, min_iou) / 3.0).max(SIGMA_FLOOR))
}

/// Renders every keypoint as `exp(-d² / 2σ²)` around its peak cell and
/// combines overlaps with an element-wise max. Keypoints whose peak cell
/// falls outside the grid, or whose channel is out of range, are skipped.
pub fn render_keypoints(
    keypoints: &[Keypoint],
    channels: usize,
    width: usize,
    height: usize,
) -> HeatmapSet {
    let mut hm = HeatmapSet::zeros(channels, width, height);
    for kp in keypoints {
        let (kx, ky) = kp.cell();
        if kp.channel >= channels
            || kx < 0
            || ky < 0
            || kx as usize >= width
            || ky as usize >= height
        {
            continue;
        }
        let denom = 2.0 * kp.sigma * kp.sigma;
        for y in 0..height {
            let dy = y as f64 - ky as f64;
            for x in 0..width {
                let dx = x as f64 - kx as f64;
                let v = (-(dx * dx + dy * dy) / denom).exp();
                let i = hm.index(kp.channel, x, y);
                if v > hm.values[i] {
                    hm.values[i] = v;
                }
            }
        }
    }
    hm
}

fn clamp_cell(v: f64, n: usize) -> f64 {
    v.clamp(0.0, (n.max(1) - 1) as f64)
}

/// Four-channel corner heatmaps for `boxes` given in pixels.
pub fn corner_heatmaps(
    boxes: &[Box2D],
    stride: u32,
    width: usize,
    height: usize,
    min_iou: f64,
) -> Result<HeatmapSet> {
    if stride == 0 {
        return Err(Error::InvalidStride);
    }
    let mut keypoints = Vec::with_capacity(boxes.len() * 4);
    for b in boxes {
        let s = b.scaled(stride);
        if s.x_max <= 0.0 || s.y_max <= 0.0 || s.x_min >= width as f64 || s.y_min >= height as f64 {
            continue;
        }
        let sigma = gaussian_sigma(s.width(), s.height(), min_iou)?;
        let corners = [
            (s.x_min, s.y_min),
            (s.x_max, s.y_min),
            (s.x_max, s.y_max),
            (s.x_min, s.y_max),
        ];
        for (channel, (cx, cy)) in corners.into_iter().enumerate() {
            let px = clamp_cell((cx + 0.5).floor(), width);
            let py = clamp_cell((cy + 0.5).floor(), height);
            keypoints.push(Keypoint {
                channel,
                px,
                py,
                sigma,
            });
        }
    }
    Ok(render_keypoints(&keypoints, 4, width, height))
}

/// Regression targets attached to one positive center cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterTarget {
    pub class_id: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    /// Box size in cells.
    pub size: [f64; 2],
    /// Fractional part of the center position, in `[0, 1)`.
    pub offset: [f64; 2],
    /// Index of the source box.
    pub box_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    pub center_heatmaps: HeatmapSet,
    pub centers: Vec<CenterTarget>,
}

/// Per-class center heatmaps plus size/offset targets. When two boxes of the
/// same class share a center cell, the first box keeps the regression entry.
pub fn detection_targets(
    boxes: &[Box2D],
    n_classes: usize,
    stride: u32,
    width: usize,
    height: usize,
    min_iou: f64,
) -> Result<DetectionTargets> {
    if stride == 0 {
        return Err(Error::InvalidStride);
    }
    let mut keypoints = Vec::with_capacity(boxes.len());
    let mut centers: Vec<CenterTarget> = Vec::with_capacity(boxes.len());
    for (i, b) in boxes.iter().enumerate() {
        if b.class_id >= n_classes {
            return Err(Error::InvalidClass {
                class_id: b.class_id,
                n_classes,
            });
        }
        let s = b.scaled(stride);
        let (cx, cy) = s.center();
        let (fx, fy) = (cx.floor(), cy.floor());
        if fx < 0.0 || fy < 0.0 || fx >= width as f64 || fy >= height as f64 {
            continue;
        }
        let (cell_x, cell_y) = (fx as usize, fy as usize);
        keypoints.push(Keypoint {
            channel: b.class_id,
            px: fx,
            py: fy,
            sigma: gaussian_sigma(s.width(), s.height(), min_iou)?,
        });
        let taken = centers
            .iter()
            .any(|c| c.class_id == b.class_id && c.cell_x == cell_x && c.cell_y == cell_y);
        if !taken {
            centers.push(CenterTarget {
                class_id: b.class_id,
                cell_x,
                cell_y,
                size: [s.width(), s.height()],
                offset: [cx - fx, cy - fy],
                box_index: i,
            });
        }
    }
    Ok(DetectionTargets {
        center_heatmaps: render_keypoints(&keypoints, n_classes, width, height),
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tiny_box_uses_floor() {
        assert_eq!(gaussian_sigma(1.0, 1.0, 0.7).unwrap(), SIGMA_FLOOR);
    }

    #[test]
    fn invalid_sigma_inputs() {
        assert!(gaussian_sigma(0.0, 1.0, 0.7).is_err());
        assert!(gaussian_sigma(1.0, -1.0, 0.7).is_err());
        assert!(gaussian_sigma(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_keypoint_peak_and_falloff() {
        let kp = Keypoint {
            channel: 1,
            px: 4.4,
            py: 2.5,
            sigma: 1.5,
        };
        let hm = render_keypoints(&[kp], 2, 10, 8);
        assert_eq!(kp.cell(), (4, 3));
        assert_eq!(hm.get(1, 4, 3), 1.0);
        assert!(hm.channel(0).iter().all(|&v| v == 0.0));
        let expected = (-(9.0f64 + 4.0) / (2.0 * 2.25)).exp();
        assert_abs_diff_eq!(hm.get(1, 7, 1), expected, epsilon = 1e-12);
    }

    #[test]
    fn off_grid_keypoint_skipped() {
        let kp = Keypoint {
            channel: 0,
            px: 9.6,
            py: 0.0,
            sigma: 1.0,
        };
        assert_eq!(render_keypoints(&[kp], 1, 10, 4).max_value(), 0.0);
    }

    #[test]
    fn corner_channels_peak_at_corners() {
        let b = Box2D::new(0, 8.0, 4.0, 40.0, 28.0, 1.0).unwrap();
        let hm = corner_heatmaps(&[b], 4, 16, 10, DEFAULT_MIN_IOU).unwrap();
        assert_eq!(hm.get(0, 2, 1), 1.0);
        assert_eq!(hm.get(1, 10, 1), 1.0);
        assert_eq!(hm.get(2, 10, 7), 1.0);
        assert_eq!(hm.get(3, 2, 7), 1.0);
        for c in 0..4 {
            assert_eq!(hm.channel(c).iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn corner_on_far_edge_is_clamped() {
        let b = Box2D::new(0, 0.0, 0.0, 16.0, 16.0, 1.0).unwrap();
        let hm = corner_heatmaps(&[b], 4, 4, 4, DEFAULT_MIN_IOU).unwrap();
        assert_eq!(hm.get(2, 3, 3), 1.0);
    }

    #[test]
    fn empty_boxes_give_zero_heatmaps() {
        let hm = corner_heatmaps(&[], 4, 7, 5, DEFAULT_MIN_IOU).unwrap();
        assert_eq!(hm.shape(), (4, 5, 7));
        assert_eq!(hm.max_value(), 0.0);
    }

    #[test]
    fn center_offset_arithmetic() {
        // center (42, 29) px at stride 4 -> (10.5, 7.25) cells
        let b = Box2D::new(1, 34.0, 21.0, 50.0, 37.0, 1.0).unwrap();
        let t = detection_targets(&[b], 3, 4, 20, 20, DEFAULT_MIN_IOU).unwrap();
        let c = t.centers[0];
        assert_eq!((c.cell_x, c.cell_y), (10, 7));
        assert_eq!(c.offset, [0.5, 0.25]);
        assert_eq!(c.size, [4.0, 4.0]);
        assert_eq!(t.center_heatmaps.get(1, 10, 7), 1.0);
    }

    #[test]
    fn centered_box_has_zero_offset() {
        let b = Box2D::new(0, 4.0, 4.0, 12.0, 12.0, 1.0).unwrap();
        let t = detection_targets(&[b], 1, 4, 8, 8, DEFAULT_MIN_IOU).unwrap();
        assert_eq!(t.centers[0].offset, [0.0, 0.0]);
    }

    #[test]
    fn shared_cell_different_classes() {
        let a = Box2D::new(0, 0.0, 0.0, 16.0, 16.0, 1.0).unwrap();
        let b = Box2D::new(2, 4.0, 4.0, 12.0, 12.0, 1.0).unwrap();
        let t = detection_targets(&[a, b], 3, 4, 8, 8, DEFAULT_MIN_IOU).unwrap();
        assert_eq!(t.centers.len(), 2);
        assert_eq!(t.center_heatmaps.get(0, 2, 2), 1.0);
        assert_eq!(t.center_heatmaps.get(2, 2, 2), 1.0);
    }

    #[test]
    fn class_out_of_range() {
        let a = Box2D::new(3, 0.0, 0.0, 16.0, 16.0, 1.0).unwrap();
        assert!(matches!(
            detection_targets(&[a], 3, 4, 8, 8, DEFAULT_MIN_IOU),
            Err(Error::InvalidClass {
                class_id: 3,
                n_classes: 3
            })
        ));
    }
}
