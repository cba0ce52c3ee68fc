//! Loss functions with analytic gradients.
//!
//! * Laplace depth loss `√2·e^{-s}·|z − z_gt| + s`, with `s = ln σ_d`.
//! * Penalty-reduced focal loss on Gaussian heatmaps.
//! * Class weights `w_k = sqrt(s_max / s_k)` and the weighted-mean adjustment.
//! * The combined pre-training objective over one frame.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::depth_targets::{Box2D, SemiDenseDepthTarget};
use crate::error::{Error, Result};
use crate::keypoint_targets::{DetectionTargets, HeatmapSet};

/// Clamp margin for heatmap probabilities.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPrediction {
    /// Predicted depth in meters.
    pub z: f64,
    /// Predicted log scale, `σ_d = exp(s)`.
    pub s: f64,
}

impl DepthPrediction {
    pub fn sigma(&self) -> f64 {
        self.s.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceLoss {
    pub loss: f64,
    pub d_z: f64,
    pub d_s: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn laplace_depth_loss(pred: DepthPrediction, z_gt: f64) -> LaplaceLoss {
    let r = pred.z - z_gt;
    let scale = SQRT_2 * (-pred.s).exp();
    LaplaceLoss {
        loss: scale * r.abs() + pred.s,
        d_z: scale * sign(r),
        d_s: 1.0 - scale * r.abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 2.0,
            beta: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss {
    pub loss: f64,
    /// dL/dp per cell, same layout as the heatmap.
    pub grad: Vec<f64>,
    pub num_positive: usize,
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Penalty-reduced focal loss, normalized by `max(1, #positives)`.
///
/// Cells with `target == 1` are positives. `pred` must lie strictly inside
/// `(0, 1)`; see [`clamp_probability`].
pub fn focal_heatmap_loss(
    pred: &HeatmapSet,
    target: &HeatmapSet,
    params: FocalParams,
) -> Result<FocalLoss> {
    if pred.shape() != target.shape() {
        return Err(Error::mismatch(
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    let FocalParams { alpha, beta } = params;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.values().len()];
    let mut num_positive = 0;
    for (i, (&p, &y)) in pred.values().iter().zip(target.values()).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidValue(format!(
                "prediction {p} at cell {i} not in (0, 1)"
            )));
        }
        if y == 1.0 {
            num_positive += 1;
            let q = 1.0 - p;
            loss -= q.powf(alpha) * p.ln();
            grad[i] = alpha * q.powf(alpha - 1.0) * p.ln() - q.powf(alpha) / p;
        } else {
            let neg_w = (1.0 - y).powf(beta);
            let q = 1.0 - p;
            loss -= neg_w * p.powf(alpha) * q.ln();
            grad[i] = -neg_w * (alpha * p.powf(alpha - 1.0) * q.ln() - p.powf(alpha) / q);
        }
    }
    let norm = num_positive.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= norm);
    Ok(FocalLoss {
        loss: loss / norm,
        grad,
        num_positive,
    })
}

/// Per-class sample counts and the derived loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightTable {
    counts: Vec<u64>,
    weights: Vec<f64>,
}

impl ClassWeightTable {
    /// A table with every weight equal to 1.
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeightTable {
            counts: vec![1; n_classes],
            weights: vec![1.0; n_classes],
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, class: usize) -> Result<f64> {
        self.weights
            .get(class)
            .copied()
            .ok_or(Error::UnknownClass { class })
    }

    /// Index of the class with the largest count (first on ties).
    pub fn majority_class(&self) -> usize {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        self.counts.iter().position(|&c| c == max).unwrap_or(0)
    }
}

pub fn class_weights(counts: &[u64]) -> Result<ClassWeightTable> {
    if counts.is_empty() {
        return Err(Error::EmptyCounts);
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroCount { class });
    }
    let max = *counts.iter().max().unwrap() as f64;
    let weights = counts.iter().map(|&c| (max / c as f64).sqrt()).collect();
    Ok(ClassWeightTable {
        counts: counts.to_vec(),
        weights,
    })
}

/// Weighted mean `Σ w·loss / Σ w`; 0 for an empty list.
pub fn apply_class_adjustment(
    per_target: &[(usize, f64)],
    table: &ClassWeightTable,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(class, loss) in per_target {
        let w = table.weight(class)?;
        num += w * loss;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Term weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub depth: f64,
    pub corner: f64,
    pub center: f64,
    pub size: f64,
    pub offset: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            depth: 1.0,
            corner: 1.0,
            center: 1.0,
            size: 1.0,
            offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub depth: f64,
    pub corner_focal: f64,
    pub center_focal: f64,
    pub size: f64,
    pub offset: f64,
    pub total: f64,
    pub depth_cells: usize,
    pub positives: usize,
}

impl LossBreakdown {
    pub fn weighted_total(&self, l: &Lambdas) -> f64 {
        l.depth * self.depth
            + l.corner * self.corner_focal
            + l.center * self.center_focal
            + l.size * self.size
            + l.offset * self.offset
    }
}

/// Everything supervising one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub depth: SemiDenseDepthTarget,
    pub corners: HeatmapSet,
    pub detection: DetectionTargets,
    /// Class of the smallest box containing each cell center (row-major).
    pub cell_classes: Vec<Option<usize>>,
}

/// Per-cell class from the boxes covering each cell center; the smallest
/// box wins and equal areas go to the lower box index.
pub fn cell_class_map(
    boxes: &[Box2D],
    stride: u32,
    width: usize,
    height: usize,
) -> Vec<Option<usize>> {
    let s = stride as f64;
    let mut out = vec![None; width * height];
    for y in 0..height {
        let py = s * (y as f64 + 0.5);
        for x in 0..width {
            let px = s * (x as f64 + 0.5);
            let mut best: Option<&Box2D> = None;
            for b in boxes.iter().filter(|b| b.contains(px, py)) {
                if best.is_none_or(|cur| b.area() < cur.area()) {
                    best = Some(b);
                }
            }
            out[y * width + x] = best.map(|b| b.class_id);
        }
    }
    out
}

/// Per-cell depth and log-scale predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPredictionMap {
    pub width: usize,
    pub height: usize,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

impl DepthPredictionMap {
    pub fn get(&self, idx: usize) -> DepthPrediction {
        DepthPrediction {
            z: self.z[idx],
            s: self.s[idx],
        }
    }
}

/// Per-cell detection head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionPredictions {
    pub centers: HeatmapSet,
    pub size: Vec<[f64; 2]>,
    pub offset: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedGradient {
    pub d_z: Vec<f64>,
    pub d_s: Vec<f64>,
    pub d_corners: Vec<f64>,
    pub d_centers: Vec<f64>,
    pub d_size: Vec<[f64; 2]>,
    pub d_offset: Vec<[f64; 2]>,
}

/// Class-adjusted depth term and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTerm {
    pub loss: f64,
    pub d_z: Vec<f64>,
    pub d_s: Vec<f64>,
    pub supervised: usize,
}

/// `Σ c·ω·L / Σ c` over supervised cells, where `L` is the Laplace loss, `ω`
/// the cell's supervision weight and `c` the class weight of the cell's seed
/// (1 for seeds outside every box or when `table` is `None`).
pub fn depth_term_with_grad(
    target: &SemiDenseDepthTarget,
    preds: &DepthPredictionMap,
    cell_classes: &[Option<usize>],
    table: Option<&ClassWeightTable>,
) -> Result<DepthTerm> {
    let n = target.width() * target.height();
    if (preds.width, preds.height) != (target.width(), target.height())
        || preds.z.len() != n
        || preds.s.len() != n
    {
        return Err(Error::mismatch(
            format!("{}x{} depth predictions", target.width(), target.height()),
            format!("{}x{}", preds.width, preds.height),
        ));
    }
    if cell_classes.len() != n {
        return Err(Error::mismatch(n, cell_classes.len()));
    }
    let mut d_z = vec![0.0; n];
    let mut d_s = vec![0.0; n];
    let mut num = 0.0;
    let mut den = 0.0;
    let mut terms = Vec::with_capacity(target.supervised_count());
    for (idx, label) in target.iter_supervised() {
        let c = match (cell_classes[label.seed], table) {
            (Some(class), Some(t)) => t.weight(class)?,
            _ => 1.0,
        };
        let l = laplace_depth_loss(preds.get(idx), label.depth);
        num += c * label.weight * l.loss;
        den += c;
        terms.push((idx, c * label.weight, l));
    }
    if den > 0.0 {
        for (idx, cw, l) in &terms {
            d_z[*idx] = cw * l.d_z / den;
            d_s[*idx] = cw * l.d_s / den;
        }
    }
    Ok(DepthTerm {
        loss: if den > 0.0 { num / den } else { 0.0 },
        d_z,
        d_s,
        supervised: terms.len(),
    })
}

pub fn combined_loss(
    targets: &FrameTargets,
    depth_preds: &DepthPredictionMap,
    corner_preds: &HeatmapSet,
    detection_preds: &DetectionPredictions,
    table: Option<&ClassWeightTable>,
    lambdas: &Lambdas,
) -> Result<LossBreakdown> {
    combined_loss_with_grad(
        targets,
        depth_preds,
        corner_preds,
        detection_preds,
        table,
        lambdas,
    )
    .map(|(b, _)| b)
}

/// Combined objective and its gradient w.r.t. every prediction.
///
/// The depth, size and offset terms are class-adjusted weighted means over
/// their targets; the focal terms are not class-adjusted. A depth cell takes
/// the class of its seed cell, and cells outside every box count with weight 1.
pub fn combined_loss_with_grad(
    targets: &FrameTargets,
    depth_preds: &DepthPredictionMap,
    corner_preds: &HeatmapSet,
    detection_preds: &DetectionPredictions,
    table: Option<&ClassWeightTable>,
    lambdas: &Lambdas,
) -> Result<(LossBreakdown, CombinedGradient)> {
    let depth = &targets.depth;
    let n = depth.width() * depth.height();
    if detection_preds.size.len() != n || detection_preds.offset.len() != n {
        return Err(Error::mismatch(
            n,
            "size/offset predictions of another length",
        ));
    }
    let class_w = |class: Option<usize>| -> Result<f64> {
        match (class, table) {
            (Some(c), Some(t)) => t.weight(c),
            _ => Ok(1.0),
        }
    };

    let depth_part = depth_term_with_grad(depth, depth_preds, &targets.cell_classes, table)?;
    let d_z: Vec<f64> = depth_part.d_z.iter().map(|g| lambdas.depth * g).collect();
    let d_s: Vec<f64> = depth_part.d_s.iter().map(|g| lambdas.depth * g).collect();
    let depth_term = depth_part.loss;

    // heatmaps
    let corner = focal_heatmap_loss(corner_preds, &targets.corners, FocalParams::default())?;
    let center = focal_heatmap_loss(
        &detection_preds.centers,
        &targets.detection.center_heatmaps,
        FocalParams::default(),
    )?;

    // size / offset L1 at positive centers
    let width = depth.width();
    let mut size_num = 0.0;
    let mut off_num = 0.0;
    let mut reg_den = 0.0;
    let mut d_size = vec![[0.0; 2]; n];
    let mut d_offset = vec![[0.0; 2]; n];
    let mut reg_terms = Vec::with_capacity(targets.detection.centers.len());
    for ct in &targets.detection.centers {
        let idx = ct.cell_y * width + ct.cell_x;
        let c = class_w(Some(ct.class_id))?;
        let ps = detection_preds.size[idx];
        let po = detection_preds.offset[idx];
        let ds = [ps[0] - ct.size[0], ps[1] - ct.size[1]];
        let dof = [po[0] - ct.offset[0], po[1] - ct.offset[1]];
        size_num += c * (ds[0].abs() + ds[1].abs());
        off_num += c * (dof[0].abs() + dof[1].abs());
        reg_den += c;
        reg_terms.push((idx, c, ds, dof));
    }
    let (size_term, offset_term) = if reg_den > 0.0 {
        (size_num / reg_den, off_num / reg_den)
    } else {
        (0.0, 0.0)
    };
    if reg_den > 0.0 {
        for (idx, c, ds, dof) in reg_terms {
            for k in 0..2 {
                d_size[idx][k] += lambdas.size * c * sign(ds[k]) / reg_den;
                d_offset[idx][k] += lambdas.offset * c * sign(dof[k]) / reg_den;
            }
        }
    }

    let mut breakdown = LossBreakdown {
        depth: depth_term,
        corner_focal: corner.loss,
        center_focal: center.loss,
        size: size_term,
        offset: offset_term,
        total: 0.0,
        depth_cells: depth.supervised_count(),
        positives: targets.detection.centers.len(),
    };
    breakdown.total = breakdown.weighted_total(lambdas);

    let grad = CombinedGradient {
        d_z,
        d_s,
        d_corners: corner
            .grad
            .into_iter()
            .map(|g| lambdas.corner * g)
            .collect(),
        d_centers: center
            .grad
            .into_iter()
            .map(|g| lambdas.center * g)
            .collect(),
        d_size,
        d_offset,
    };
    Ok((breakdown, grad))
}
