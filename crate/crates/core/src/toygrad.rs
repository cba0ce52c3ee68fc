//! A per-cell MLP with hand-written backprop, a synthetic scene generator
//! and the pre-train / fine-tune loop built on the real target and loss code.
//!
//! Every cell of a scene carries a feature vector. The net maps it through
//! one `tanh` hidden layer to `(z, s, logit_0, .., logit_{C-1})`, where `z` is
//! depth in meters, `s = ln σ` and each logit is a heatmap channel (four
//! corner channels followed by one center channel per class).
//!
//! Depth supervision is rebuilt at every step from the net's current σ map,
//! so the propagated region grows as the net becomes confident. The target is
//! held constant when differentiating.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth_targets::{
    propagate, region_filter, Box2D, PropagationConfig, SemiDenseDepthTarget, UncertaintyMap,
    DEFAULT_MAX_DEPTH,
};
use crate::error::{Error, Result};
use crate::geometry::SparseDepthMap;
use crate::keypoint_targets::{corner_heatmaps, detection_targets, HeatmapSet, DEFAULT_MIN_IOU};
use crate::losses::{
    cell_class_map, clamp_probability, depth_term_with_grad, focal_heatmap_loss,
    DepthPredictionMap, FocalParams, Lambdas, LossBreakdown, PROB_EPS,
};

pub const FEATURE_DIM: usize = 8;
pub const HIDDEN_UNITS: usize = 32;
pub const CORNER_HEADS: usize = 4;
/// Shading channel encodes `1 - depth / SHADE_DEPTH_SCALE`.
pub const SHADE_DEPTH_SCALE: f64 = 40.0;
/// Meters per unit of the raw depth output.
pub const DEPTH_OUTPUT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: usize,
    /// Heatmap channels.
    pub heads: usize,
}

impl NetShape {
    /// Shape used with full scenes: 8 features, 32 hidden units.
    pub fn standard(n_classes: usize) -> Self {
        NetShape {
            inputs: FEATURE_DIM,
            hidden: HIDDEN_UNITS,
            heads: CORNER_HEADS + n_classes,
        }
    }

    pub fn outputs(&self) -> usize {
        2 + self.heads
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.hidden + self.hidden + self.hidden * self.outputs() + self.outputs()
    }

    /// Named parameter blocks as `(name, start, len)`.
    pub fn blocks(&self) -> [(&'static str, usize, usize); 4] {
        let w1 = self.inputs * self.hidden;
        let b1 = self.hidden;
        let w2 = self.hidden * self.outputs();
        let b2 = self.outputs();
        [
            ("hidden.weight", 0, w1),
            ("hidden.bias", w1, b1),
            ("output.weight", w1 + b1, w2),
            ("output.bias", w1 + b1 + w2, b2),
        ]
    }
}

/// Flat parameter vector laid out as `[W1 (hidden x inputs), b1, W2 (outputs x hidden), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    shape: NetShape,
    params: Vec<f64>,
}

impl ToyNet {
    pub fn zeros(shape: NetShape) -> Self {
        ToyNet {
            shape,
            params: vec![0.0; shape.param_count()],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(shape);
        let [(_, w1, n1), _, (_, w2, n2), _] = shape.blocks();
        let a1 = (6.0 / (shape.inputs + shape.hidden) as f64).sqrt();
        let a2 = (6.0 / (shape.hidden + shape.outputs()) as f64).sqrt();
        for p in &mut net.params[w1..w1 + n1] {
            *p = rng.random_range(-a1..a1);
        }
        for p in &mut net.params[w2..w2 + n2] {
            *p = rng.random_range(-a2..a2);
        }
        net
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::mismatch(shape.param_count(), params.len()));
        }
        Ok(ToyNet { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let [_, (_, b1, _), (_, w2, _), (_, b2, _)] = self.shape.blocks();
        let p = &self.params;
        (&p[..b1], &p[b1..w2], &p[w2..b2], &p[b2..])
    }
}

/// Row-major `width x height` grid of `dim`-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Features {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Keeps only the first `dim` features of every cell.
    pub fn truncated(&self, dim: usize) -> Features {
        let dim = dim.min(self.dim);
        let values = (0..self.cells())
            .flat_map(|i| self.cell(i)[..dim].to_vec())
            .collect();
        Features {
            width: self.width,
            height: self.height,
            dim,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub width: usize,
    pub height: usize,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    /// Clamped sigmoid probabilities, `heads x H x W`.
    pub heatmaps: HeatmapSet,
    hidden: Vec<f64>,
    /// Unclamped sigmoid values.
    probs: Vec<f64>,
}

impl ForwardOutput {
    pub fn depth_predictions(&self) -> DepthPredictionMap {
        DepthPredictionMap {
            width: self.width,
            height: self.height,
            z: self.z.clone(),
            s: self.s.clone(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn forward(net: &ToyNet, features: &Features) -> Result<ForwardOutput> {
    let shape = net.shape;
    if features.dim != shape.inputs || features.values.len() != features.cells() * features.dim {
        return Err(Error::mismatch(
            format!("{} features per cell", shape.inputs),
            format!("{} features per cell", features.dim),
        ));
    }
    let (w1, b1, w2, b2) = net.split();
    let n = features.cells();
    let (nh, no) = (shape.hidden, shape.outputs());
    let plane = features.width * features.height;
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut hidden = vec![0.0; n * nh];
    let mut probs = vec![0.0; shape.heads * plane];
    let mut heat = vec![0.0; shape.heads * plane];
    let mut out = vec![0.0; no];
    for idx in 0..n {
        let x = features.cell(idx);
        let h = &mut hidden[idx * nh..(idx + 1) * nh];
        for j in 0..nh {
            let row = &w1[j * shape.inputs..(j + 1) * shape.inputs];
            let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j];
            h[j] = a.tanh();
        }
        for k in 0..no {
            let row = &w2[k * nh..(k + 1) * nh];
            out[k] = row.iter().zip(h.iter()).map(|(w, v)| w * v).sum::<f64>() + b2[k];
        }
        z[idx] = DEPTH_OUTPUT_SCALE * out[0];
        s[idx] = out[1];
        for c in 0..shape.heads {
            let p = sigmoid(out[2 + c]);
            probs[c * plane + idx] = p;
            heat[c * plane + idx] = clamp_probability(p);
        }
    }
    Ok(ForwardOutput {
        width: features.width,
        height: features.height,
        z,
        s,
        heatmaps: HeatmapSet::from_values(shape.heads, features.width, features.height, heat)?,
        hidden,
        probs,
    })
}

/// Loss gradients w.r.t. the net outputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    pub d_z: Vec<f64>,
    pub d_s: Vec<f64>,
    /// dL/dp for the clamped probabilities, `heads x H x W`.
    pub d_heat: Vec<f64>,
}

impl OutputGradient {
    pub fn zeros(cells: usize, heads: usize) -> Self {
        OutputGradient {
            d_z: vec![0.0; cells],
            d_s: vec![0.0; cells],
            d_heat: vec![0.0; cells * heads],
        }
    }
}

/// Accumulates dL/dθ into `grad` by backpropagating `out_grad` through the
/// cached activations in `fwd`.
pub fn backward_into(
    net: &ToyNet,
    features: &Features,
    fwd: &ForwardOutput,
    out_grad: &OutputGradient,
    grad: &mut [f64],
) {
    let shape = net.shape;
    let (_, _, w2, _) = net.split();
    let [(_, gw1, _), (_, gb1, _), (_, gw2, _), (_, gb2, _)] = shape.blocks();
    let (nh, no, ni) = (shape.hidden, shape.outputs(), shape.inputs);
    let n = features.cells();
    let mut d_out = vec![0.0; no];
    let mut d_h = vec![0.0; nh];
    for idx in 0..n {
        d_out[0] = DEPTH_OUTPUT_SCALE * out_grad.d_z[idx];
        d_out[1] = out_grad.d_s[idx];
        for c in 0..shape.heads {
            let p = fwd.probs[c * n + idx];
            let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
            d_out[2 + c] = if clamped {
                0.0
            } else {
                out_grad.d_heat[c * n + idx] * p * (1.0 - p)
            };
        }
        if d_out.iter().all(|g| *g == 0.0) {
            continue;
        }
        let h = &fwd.hidden[idx * nh..(idx + 1) * nh];
        d_h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..no {
            let g = d_out[k];
            if g == 0.0 {
                continue;
            }
            grad[gb2 + k] += g;
            let row = &w2[k * nh..(k + 1) * nh];
            for j in 0..nh {
                grad[gw2 + k * nh + j] += g * h[j];
                d_h[j] += g * row[j];
            }
        }
        let x = features.cell(idx);
        for j in 0..nh {
            let da = d_h[j] * (1.0 - h[j] * h[j]);
            grad[gb1 + j] += da;
            for i in 0..ni {
                grad[gw1 + j * ni + i] += da * x[i];
            }
        }
    }
}

pub fn backward(
    net: &ToyNet,
    features: &Features,
    fwd: &ForwardOutput,
    out_grad: &OutputGradient,
) -> Vec<f64> {
    let mut grad = vec![0.0; net.shape.param_count()];
    backward_into(net, features, fwd, out_grad, &mut grad);
    grad
}

/// An axis-aligned object in a synthetic scene, in cell units (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRect {
    pub class_id: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub depth: f64,
}

impl SceneRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn to_box(&self) -> Box2D {
        Box2D {
            class_id: self.class_id,
            x_min: self.x0 as f64,
            y_min: self.y0 as f64,
            x_max: self.x1 as f64,
            y_max: self.y1 as f64,
            score: 1.0,
        }
    }

    fn overlaps(&self, other: &SceneRect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_rects: usize,
    pub max_rects: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub n_classes: usize,
    pub depth_range: (f64, f64),
    /// When set every rectangle sits at this depth.
    pub fixed_depth: Option<f64>,
    /// Probability that an in-rectangle cell receives a lidar sample.
    pub sample_fraction: f64,
    pub depth_noise: f64,
    pub shade_noise: f64,
    pub feature_dim: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 12,
            height: 12,
            min_rects: 1,
            max_rects: 3,
            min_size: 3,
            max_size: 6,
            n_classes: 3,
            depth_range: (4.0, 30.0),
            fixed_depth: None,
            sample_fraction: 0.3,
            depth_noise: 0.05,
            shade_noise: 0.02,
            feature_dim: FEATURE_DIM,
        }
    }
}

/// A generated frame with its static targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub rects: Vec<SceneRect>,
    pub boxes: Vec<Box2D>,
    pub features: Features,
    /// Noisy lidar-like samples at stride 1.
    pub samples: SparseDepthMap,
    /// `samples` after region filtering.
    pub seeds: SparseDepthMap,
    /// Corner channels followed by center channels.
    pub heat_target: HeatmapSet,
    pub cell_classes: Vec<Option<usize>>,
    pub n_classes: usize,
}

impl SyntheticScene {
    pub fn width(&self) -> usize {
        self.features.width
    }

    pub fn height(&self) -> usize {
        self.features.height
    }

    /// Depth target given the net's current log-scale map.
    pub fn depth_target(
        &self,
        log_sigma: &[f64],
        config: &PropagationConfig,
    ) -> Result<SemiDenseDepthTarget> {
        let sigma = UncertaintyMap::from_log_sigma(self.width(), self.height(), log_sigma)?;
        propagate(&self.seeds, &sigma, config)
    }

    /// Builds all derived fields from rectangles, features and samples.
    pub fn assemble(
        rects: Vec<SceneRect>,
        features: Features,
        samples: SparseDepthMap,
        n_classes: usize,
    ) -> Result<Self> {
        let (w, h) = (features.width, features.height);
        let boxes: Vec<Box2D> = rects.iter().map(SceneRect::to_box).collect();
        let seeds = region_filter(&samples, &boxes, DEFAULT_MAX_DEPTH);
        let corners = corner_heatmaps(&boxes, 1, w, h, DEFAULT_MIN_IOU)?;
        let centers = detection_targets(&boxes, n_classes, 1, w, h, DEFAULT_MIN_IOU)?;
        let heat_target = HeatmapSet::stack(&[&corners, &centers.center_heatmaps])?;
        let cell_classes = cell_class_map(&boxes, 1, w, h);
        Ok(SyntheticScene {
            rects,
            boxes,
            features,
            samples,
            seeds,
            heat_target,
            cell_classes,
            n_classes,
        })
    }
}

fn signed_distance(r: &SceneRect, px: f64, py: f64) -> f64 {
    let (x0, y0, x1, y1) = (r.x0 as f64, r.y0 as f64, r.x1 as f64, r.y1 as f64);
    if px >= x0 && px <= x1 && py >= y0 && py <= y1 {
        (px - x0).min(x1 - px).min(py - y0).min(y1 - py)
    } else {
        let dx = (x0 - px).max(px - x1).max(0.0);
        let dy = (y0 - py).max(py - y1).max(0.0);
        -(dx * dx + dy * dy).sqrt()
    }
}

pub fn generate_scene(config: &SceneConfig, rng: &mut impl Rng) -> Result<SyntheticScene> {
    let (w, h) = (config.width, config.height);
    if config.max_size > w.min(h) || config.min_size == 0 || config.min_size > config.max_size {
        return Err(Error::InvalidConfig(format!(
            "rectangle sizes {}..={} do not fit a {w}x{h} grid",
            config.min_size, config.max_size
        )));
    }
    let n_rects = rng.random_range(config.min_rects..=config.max_rects.max(config.min_rects));
    let mut rects: Vec<SceneRect> = Vec::with_capacity(n_rects);
    let mut attempts = 0;
    while rects.len() < n_rects && attempts < 200 {
        attempts += 1;
        let rw = rng.random_range(config.min_size..=config.max_size);
        let rh = rng.random_range(config.min_size..=config.max_size);
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        let depth = match config.fixed_depth {
            Some(d) => d,
            None => rng.random_range(config.depth_range.0..config.depth_range.1),
        };
        let class_id = rng.random_range(0..config.n_classes);
        let r = SceneRect {
            class_id,
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
            depth,
        };
        if rects.iter().all(|o| !o.overlaps(&r)) {
            rects.push(r);
        }
    }

    let depth_noise =
        Normal::new(0.0, config.depth_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let shade_noise =
        Normal::new(0.0, config.shade_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut samples = SparseDepthMap::empty(w, h, 1)?;
    for r in &rects {
        let mut placed = false;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                if rng.random::<f64>() < config.sample_fraction {
                    let d = (r.depth + depth_noise.sample(rng)).max(0.01);
                    samples.set(x, y, d)?;
                    placed = true;
                }
            }
        }
        if !placed {
            let (x, y) = ((r.x0 + r.x1) / 2, (r.y0 + r.y1) / 2);
            samples.set(x, y, (r.depth + depth_noise.sample(rng)).max(0.01))?;
        }
    }

    let norm = w.max(h) as f64;
    let mut values = Vec::with_capacity(w * h * FEATURE_DIM);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = rects.iter().find(|r| r.contains(x, y));
            let sdf = rects
                .iter()
                .map(|r| signed_distance(r, px, py))
                .fold(f64::NEG_INFINITY, f64::max);
            let sdf = if sdf.is_finite() {
                (sdf / 4.0).clamp(-1.0, 1.0)
            } else {
                -1.0
            };
            let shade =
                inside.map_or(0.0, |r| 1.0 - r.depth / SHADE_DEPTH_SCALE) + shade_noise.sample(rng);
            let corner_d2 = rects
                .iter()
                .flat_map(|r| {
                    let (x0, y0, x1, y1) = (r.x0 as f64, r.y0 as f64, r.x1 as f64, r.y1 as f64);
                    [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
                })
                .map(|(cx, cy)| (px - cx).powi(2) + (py - cy).powi(2))
                .fold(f64::INFINITY, f64::min);
            let center_d2 = rects
                .iter()
                .map(|r| {
                    let (cx, cy) = ((r.x0 + r.x1) as f64 / 2.0, (r.y0 + r.y1) as f64 / 2.0);
                    (px - cx).powi(2) + (py - cy).powi(2)
                })
                .fold(f64::INFINITY, f64::min);
            values.extend_from_slice(&[
                2.0 * px / norm - 1.0,
                2.0 * py / norm - 1.0,
                sdf,
                if inside.is_some() { 1.0 } else { 0.0 },
                shade,
                (-corner_d2 / 2.0).exp(),
                (-center_d2 / 2.0).exp(),
                shade * shade,
            ]);
        }
    }
    let features = Features {
        width: w,
        height: h,
        dim: FEATURE_DIM,
        values,
    }
    .truncated(config.feature_dim);
    SyntheticScene::assemble(rects, features, samples, config.n_classes)
}

/// `count` scenes from one seeded stream.
pub fn generate_scenes(
    config: &SceneConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<SyntheticScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| generate_scene(config, &mut rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    DepthOnly,
    DetectionOnly,
    Combined,
}

impl TrainMode {
    fn uses_depth(self) -> bool {
        matches!(self, TrainMode::DepthOnly | TrainMode::Combined)
    }

    fn uses_detection(self) -> bool {
        matches!(self, TrainMode::DetectionOnly | TrainMode::Combined)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Frames per SGD step; gradients are summed over the batch.
    pub batch: usize,
    pub propagated_weight: f64,
    pub lambdas: Lambdas,
    /// Learning rate at the last epoch as a fraction of `learning_rate`,
    /// reached by cosine annealing. 1.0 keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            learning_rate: 0.01,
            seed: 0,
            batch: 1,
            propagated_weight: 1.0,
            lambdas: Lambdas::default(),
            final_lr_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    /// Learning rate used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction == 1.0 {
            return self.learning_rate;
        }
        let t = (epoch.saturating_sub(1)) as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "final_lr_fraction {} outside (0, 1]",
                self.final_lr_fraction
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            propagated_weight: self.propagated_weight,
            ..Default::default()
        }
    }
}

/// Loss, gradient and depth target of one frame at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub loss: LossBreakdown,
    pub grad: Vec<f64>,
    pub depth_target: SemiDenseDepthTarget,
    pub seed_cells: usize,
}

/// Reported losses for all terms, gradient only for the terms `mode` trains.
/// Size and offset are not modeled by the toy net and stay 0.
pub fn evaluate_with_target(
    net: &ToyNet,
    scene: &SyntheticScene,
    fwd: &ForwardOutput,
    depth_target: &SemiDenseDepthTarget,
    mode: TrainMode,
    lambdas: &Lambdas,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let cells = scene.features.cells();
    let heads = net.shape.heads;
    if scene.heat_target.channels() != heads {
        return Err(Error::mismatch(
            format!("{} heatmap channels", scene.heat_target.channels()),
            format!("{heads} net heads"),
        ));
    }
    let depth = depth_term_with_grad(
        depth_target,
        &fwd.depth_predictions(),
        &scene.cell_classes,
        None,
    )?;

    let n_centers = heads - CORNER_HEADS;
    let corner_pred = fwd.heatmaps.slice_channels(0, CORNER_HEADS)?;
    let corner_tgt = scene.heat_target.slice_channels(0, CORNER_HEADS)?;
    let center_pred = fwd.heatmaps.slice_channels(CORNER_HEADS, n_centers)?;
    let center_tgt = scene.heat_target.slice_channels(CORNER_HEADS, n_centers)?;
    let corner = focal_heatmap_loss(&corner_pred, &corner_tgt, FocalParams::default())?;
    let center = focal_heatmap_loss(&center_pred, &center_tgt, FocalParams::default())?;

    let mut loss = LossBreakdown {
        depth: depth.loss,
        corner_focal: corner.loss,
        center_focal: center.loss,
        size: 0.0,
        offset: 0.0,
        total: 0.0,
        depth_cells: depth.supervised,
        positives: center.num_positive,
    };
    loss.total = loss.weighted_total(lambdas);

    let mut og = OutputGradient::zeros(cells, heads);
    if mode.uses_depth() {
        for i in 0..cells {
            og.d_z[i] = lambdas.depth * depth.d_z[i];
            og.d_s[i] = lambdas.depth * depth.d_s[i];
        }
    }
    if mode.uses_detection() {
        let split = CORNER_HEADS * cells;
        for (g, d) in og.d_heat[..split].iter_mut().zip(&corner.grad) {
            *g = lambdas.corner * d;
        }
        for (g, d) in og.d_heat[split..].iter_mut().zip(&center.grad) {
            *g = lambdas.center * d;
        }
    }
    Ok((loss, backward(net, &scene.features, fwd, &og)))
}

/// Forward pass, dynamic depth target from the predicted σ, loss and gradient.
pub fn evaluate_frame(
    net: &ToyNet,
    scene: &SyntheticScene,
    mode: TrainMode,
    config: &TrainConfig,
) -> Result<FrameEval> {
    let fwd = forward(net, &scene.features)?;
    let depth_target = scene.depth_target(&fwd.s, &config.propagation())?;
    let (loss, grad) =
        evaluate_with_target(net, scene, &fwd, &depth_target, mode, &config.lambdas)?;
    Ok(FrameEval {
        loss,
        grad,
        depth_target,
        seed_cells: scene.seeds.present_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's frames, measured before each step's update.
    pub loss: LossBreakdown,
    pub seed_cells: usize,
    pub supervised_cells: usize,
    /// Smallest `supervised - seeds` over the epoch's frames.
    pub min_extra_cells: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const CSV_HEADER: &str =
    "epoch,depth,corner_focal,center_focal,size,offset,total,seed_cells,supervised_cells";

impl LossHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn depth_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.depth).collect()
    }

    /// Mean depth loss over the first `n` epochs.
    pub fn early_depth_mean(&self, n: usize) -> f64 {
        let k = n.min(self.epochs.len()).max(1);
        self.epochs
            .iter()
            .take(k)
            .map(|e| e.loss.depth)
            .sum::<f64>()
            / k as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            let l = &e.loss;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                l.depth,
                l.corner_focal,
                l.center_focal,
                l.size,
                l.offset,
                l.total,
                e.seed_cells,
                e.supervised_cells
            );
        }
        out
    }
}

fn accumulate(sum: &mut LossBreakdown, l: &LossBreakdown) {
    sum.depth += l.depth;
    sum.corner_focal += l.corner_focal;
    sum.center_focal += l.center_focal;
    sum.size += l.size;
    sum.offset += l.offset;
    sum.total += l.total;
    sum.depth_cells += l.depth_cells;
    sum.positives += l.positives;
}

/// Plain SGD over `scenes`, shuffled each epoch from `config.seed`.
pub fn train(
    net: &mut ToyNet,
    scenes: &[SyntheticScene],
    config: &TrainConfig,
    mode: TrainMode,
) -> Result<LossHistory> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut history = LossHistory::default();
    for epoch in 1..=config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut seed_cells = 0;
        let mut supervised = 0;
        let mut min_extra = i64::MAX;
        for chunk in order.chunks(config.batch) {
            let mut grad = vec![0.0; net.params.len()];
            for &i in chunk {
                let eval = evaluate_frame(net, &scenes[i], mode, config).map_err(|e| match e {
                    Error::InvalidValue(_) => Error::DivergenceDetected { epoch },
                    other => other,
                })?;
                if !eval.loss.total.is_finite() {
                    return Err(Error::DivergenceDetected { epoch });
                }
                accumulate(&mut sum, &eval.loss);
                seed_cells += eval.seed_cells;
                let sup = eval.depth_target.supervised_count();
                supervised += sup;
                min_extra = min_extra.min(sup as i64 - eval.seed_cells as i64);
                grad.iter_mut().zip(&eval.grad).for_each(|(g, e)| *g += e);
            }
            for (p, g) in net.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            if !net.params.iter().all(|p| p.is_finite()) {
                return Err(Error::DivergenceDetected { epoch });
            }
        }
        let n = scenes.len().max(1) as f64;
        let loss = LossBreakdown {
            depth: sum.depth / n,
            corner_focal: sum.corner_focal / n,
            center_focal: sum.center_focal / n,
            size: sum.size / n,
            offset: sum.offset / n,
            total: sum.total / n,
            depth_cells: sum.depth_cells,
            positives: sum.positives,
        };
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            seed_cells,
            supervised_cells: supervised,
            min_extra_cells: if scenes.is_empty() { 0 } else { min_extra },
        });
    }
    Ok(history)
}

/// Mean absolute depth error over the supervised cells of every scene.
pub fn depth_mae(net: &ToyNet, scenes: &[SyntheticScene], config: &TrainConfig) -> Result<f64> {
    let mut err = 0.0;
    let mut count = 0usize;
    for scene in scenes {
        let fwd = forward(net, &scene.features)?;
        let target = scene.depth_target(&fwd.s, &config.propagation())?;
        for (idx, label) in target.iter_supervised() {
            err += (fwd.z[idx] - label.depth).abs();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { err / count as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub shape: NetShape,
    pub init_seed: u64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurves {
    pub pretrain: LossHistory,
    /// Fine-tuning curve of the depth-pretrained net.
    pub pretrained: LossHistory,
    /// Fine-tuning curve of the net trained from scratch.
    pub scratch: LossHistory,
}

/// Depth-only pre-training followed by combined fine-tuning, against the
/// same initialization fine-tuned from scratch with the same data order.
pub fn transfer_experiment(
    scenes_pre: &[SyntheticScene],
    scenes_fine: &[SyntheticScene],
    config: &TransferConfig,
) -> Result<TransferCurves> {
    let init = ToyNet::init(config.shape, config.init_seed);
    let mut pretrained = init.clone();
    let pretrain = train(
        &mut pretrained,
        scenes_pre,
        &config.pretrain,
        TrainMode::DepthOnly,
    )?;
    let pretrained_curve = train(
        &mut pretrained,
        scenes_fine,
        &config.finetune,
        TrainMode::Combined,
    )?;
    let mut scratch = init;
    let scratch_curve = train(
        &mut scratch,
        scenes_fine,
        &config.finetune,
        TrainMode::Combined,
    )?;
    Ok(TransferCurves {
        pretrain,
        pretrained: pretrained_curve,
        scratch: scratch_curve,
    })
}

/// Scenes per set in the standard transfer experiment.
pub const TRANSFER_SCENES: usize = 8;
pub const TRANSFER_PRETRAIN_EPOCHS: usize = 60;
pub const TRANSFER_FINETUNE_EPOCHS: usize = 100;
/// Fine-tune epochs compared by the verdict.
pub const TRANSFER_WINDOW: usize = 5;

impl TransferConfig {
    /// The standard experiment for one seed: default net and schedule,
    /// 60 pre-train and 100 fine-tune epochs.
    pub fn standard(seed: u64, n_classes: usize) -> Self {
        let train = |epochs| TrainConfig {
            epochs,
            seed,
            ..Default::default()
        };
        TransferConfig {
            shape: NetShape::standard(n_classes),
            init_seed: seed,
            pretrain: train(TRANSFER_PRETRAIN_EPOCHS),
            finetune: train(TRANSFER_FINETUNE_EPOCHS),
        }
    }
}

/// Disjoint pre-train and fine-tune scene sets for `seed`.
pub fn transfer_scene_sets(
    config: &SceneConfig,
    count: usize,
    seed: u64,
) -> Result<(Vec<SyntheticScene>, Vec<SyntheticScene>)> {
    let base = seed.wrapping_mul(2);
    Ok((
        generate_scenes(config, count, base)?,
        generate_scenes(config, count, base.wrapping_add(1))?,
    ))
}

impl TransferCurves {
    /// `|a − b| / max(|a|, |b|)` of the final-epoch total losses of the two
    /// fine-tuning runs; 0 when there are no epochs.
    pub fn final_gap(&self) -> f64 {
        match (self.pretrained.epochs.last(), self.scratch.epochs.last()) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.loss.total, b.loss.total);
                let denom = a.abs().max(b.abs());
                if denom == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / denom
                }
            }
            _ => 0.0,
        }
    }
}

/// Scenes holding a single rectangle at one fixed depth.
pub fn constant_depth_scenes(count: usize, depth: f64, seed: u64) -> Result<Vec<SyntheticScene>> {
    let config = SceneConfig {
        min_rects: 1,
        max_rects: 1,
        fixed_depth: Some(depth),
        ..Default::default()
    };
    generate_scenes(&config, count, seed)
}

/// Early-epoch depth-loss comparison aggregated over several runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferVerdict {
    pub window: usize,
    pub pretrained_mean: f64,
    pub scratch_mean: f64,
}

impl TransferVerdict {
    pub fn from_runs(runs: &[TransferCurves], window: usize) -> Self {
        let n = runs.len().max(1) as f64;
        TransferVerdict {
            window,
            pretrained_mean: runs
                .iter()
                .map(|r| r.pretrained.early_depth_mean(window))
                .sum::<f64>()
                / n,
            scratch_mean: runs
                .iter()
                .map(|r| r.scratch.early_depth_mean(window))
                .sum::<f64>()
                / n,
        }
    }

    pub fn pretrained_faster(&self) -> bool {
        self.pretrained_mean < self.scratch_mean
    }

    pub fn label(&self) -> &'static str {
        if self.pretrained_faster() {
            "pretrained faster"
        } else {
            "no speedup"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene(seed: u64) -> SyntheticScene {
        let cfg = SceneConfig {
            width: 6,
            height: 6,
            min_rects: 1,
            max_rects: 1,
            min_size: 3,
            max_size: 4,
            n_classes: 1,
            feature_dim: 4,
            ..Default::default()
        };
        generate_scenes(&cfg, 1, seed).unwrap().remove(0)
    }

    #[test]
    fn param_count_formula() {
        let s = NetShape::standard(3);
        assert_eq!(s.param_count(), 8 * 32 + 32 + 32 * (2 + 7) + (2 + 7));
        let total: usize = s.blocks().iter().map(|b| b.2).sum();
        assert_eq!(total, s.param_count());
    }

    #[test]
    fn zero_net_outputs() {
        let scene = generate_scenes(&SceneConfig::default(), 1, 3)
            .unwrap()
            .remove(0);
        let net = ToyNet::zeros(NetShape::standard(3));
        let out = forward(&net, &scene.features).unwrap();
        assert!(out.z.iter().all(|&z| z == 0.0));
        assert!(out.s.iter().all(|&s| s == 0.0));
        assert!(out.heatmaps.values().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn wrong_feature_dim_rejected() {
        let scene = tiny_scene(1);
        let net = ToyNet::zeros(NetShape::standard(1));
        assert!(matches!(
            forward(&net, &scene.features),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_supervision_gives_zero_gradient() {
        let scene = tiny_scene(2);
        let net = ToyNet::init(
            NetShape {
                inputs: 4,
                hidden: 6,
                heads: 5,
            },
            7,
        );
        let fwd = forward(&net, &scene.features).unwrap();
        let empty = SemiDenseDepthTarget::empty(6, 6, 1);
        let (loss, grad) = evaluate_with_target(
            &net,
            &scene,
            &fwd,
            &empty,
            TrainMode::DepthOnly,
            &Lambdas::default(),
        )
        .unwrap();
        assert_eq!(loss.depth, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scenes_are_well_formed() {
        let scenes = generate_scenes(&SceneConfig::default(), 20, 11).unwrap();
        for s in &scenes {
            assert!(!s.rects.is_empty());
            assert!(s.samples.iter_present().all(|(_, _, d)| d > 0.0));
            assert_eq!(s.seeds.present_count(), s.samples.present_count());
            for r in &s.rects {
                assert!(r.x1 <= 12 && r.y1 <= 12);
            }
        }
    }

    #[test]
    fn epochs_zero_gives_empty_history() {
        let scenes = generate_scenes(&SceneConfig::default(), 2, 0).unwrap();
        let mut net = ToyNet::init(NetShape::standard(3), 0);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let h = train(&mut net, &scenes, &cfg, TrainMode::Combined).unwrap();
        assert!(h.is_empty());
        assert_eq!(h.to_csv(), format!("{CSV_HEADER}\n"));
    }
}
