//! Central finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::keypoint_targets::HeatmapSet;
use crate::losses::{
    focal_heatmap_loss, laplace_depth_loss, DepthPrediction, FocalParams, Lambdas,
};
use crate::toygrad::{
    evaluate_with_target, forward, generate_scenes, NetShape, SceneConfig, ToyNet, TrainConfig,
    TrainMode,
};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Residuals closer than this to the |·| kink are not sampled.
pub const KINK_MARGIN: f64 = 1e-3;

/// Relative error with a floor on the denominator so that two tiny
/// gradients are not reported as wildly different.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Added to every analytic gradient before comparison. Test hook for
    /// showing that the checker actually fails on wrong gradients.
    pub perturb: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            perturb: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub worst_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "gradcheck seed={} tolerance={:e}\n",
            self.seed, self.tolerance
        );
        for b in &self.blocks {
            out.push_str(&format!(
                "{:<6} {:<28} checked={:<5} worst_rel={:.3e}\n",
                if b.passed { "PASS" } else { "FAIL" },
                b.name,
                b.checked,
                b.worst_rel_error
            ));
        }
        out.push_str(if self.passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        out
    }
}

struct Tracker {
    name: String,
    checked: usize,
    worst: f64,
    tol: f64,
}

impl Tracker {
    fn new(name: impl Into<String>, tol: f64) -> Self {
        Tracker {
            name: name.into(),
            checked: 0,
            worst: 0.0,
            tol,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        // NaN must count as a failure
        self.worst = if e.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(e)
        };
    }

    fn finish(self) -> BlockReport {
        BlockReport {
            passed: self.checked > 0 && self.worst <= self.tol,
            name: self.name,
            checked: self.checked,
            worst_rel_error: self.worst,
        }
    }
}

/// `n` random points with `|z − z_gt| > KINK_MARGIN`; one block per input.
pub fn check_laplace(cfg: &GradcheckConfig, n: usize) -> [BlockReport; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tz = Tracker::new("laplace d/dz", cfg.tolerance);
    let mut ts = Tracker::new("laplace d/ds", cfg.tolerance);
    while tz.checked < n {
        let z_gt: f64 = rng.random_range(1.0..60.0);
        let z = z_gt + rng.random_range(-5.0..5.0);
        if (z - z_gt).abs() <= KINK_MARGIN {
            continue;
        }
        let s = rng.random_range(-2.0..2.0);
        let a = laplace_depth_loss(DepthPrediction { z, s }, z_gt);
        let nz = central_difference(
            |v| laplace_depth_loss(DepthPrediction { z: v, s }, z_gt).loss,
            z,
            cfg.step,
        );
        let ns = central_difference(
            |v| laplace_depth_loss(DepthPrediction { z, s: v }, z_gt).loss,
            s,
            cfg.step,
        );
        tz.record(a.d_z + cfg.perturb, nz);
        ts.record(a.d_s + cfg.perturb, ns);
    }
    [tz.finish(), ts.finish()]
}

/// Random `channels × size × size` prediction and target maps.
/// Targets hold a few exact positives; predictions stay well inside (0, 1).
pub fn random_focal_case(
    rng: &mut impl Rng,
    channels: usize,
    size: usize,
) -> Result<(HeatmapSet, HeatmapSet)> {
    let n = channels * size * size;
    let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
    let target: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < 0.1 {
                1.0
            } else {
                rng.random_range(0.0..0.99)
            }
        })
        .collect();
    Ok((
        HeatmapSet::from_values(channels, size, size, pred)?,
        HeatmapSet::from_values(channels, size, size, target)?,
    ))
}

/// Every cell of a random 8×8 map.
pub fn check_focal(cfg: &GradcheckConfig) -> Result<BlockReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let (pred, target) = random_focal_case(&mut rng, 1, 8)?;
    let params = FocalParams::default();
    let analytic = focal_heatmap_loss(&pred, &target, params)?;
    let (c, w, h) = (pred.channels(), pred.width(), pred.height());
    let mut t = Tracker::new("focal d/dp", cfg.tolerance);
    for i in 0..pred.values().len() {
        let f = |v: f64| {
            let mut vals = pred.values().to_vec();
            vals[i] = v;
            let p =
                HeatmapSet::from_values(c, w, h, vals).expect("perturbed value stays in (0, 1)");
            focal_heatmap_loss(&p, &target, params)
                .expect("shapes match")
                .loss
        };
        t.record(
            analytic.grad[i] + cfg.perturb,
            central_difference(f, pred.values()[i], cfg.step),
        );
    }
    Ok(t.finish())
}

/// Shape of the net used by the exhaustive check.
pub fn small_net_shape() -> NetShape {
    NetShape {
        inputs: 4,
        hidden: 6,
        heads: 5,
    }
}

/// Every parameter of a small net (4 inputs, 6 hidden units) on a 6×6
/// scene, reported per parameter block. The depth target is held fixed
/// while differentiating, as in training.
pub fn check_toy_net(cfg: &GradcheckConfig) -> Result<Vec<BlockReport>> {
    let scene_cfg = SceneConfig {
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
    let scene = generate_scenes(&scene_cfg, 1, cfg.seed)?.remove(0);
    let shape = small_net_shape();
    let net = ToyNet::init(shape, cfg.seed.wrapping_add(7));
    let lambdas = Lambdas::default();
    let fwd = forward(&net, &scene.features)?;
    let target = scene.depth_target(&fwd.s, &TrainConfig::default().propagation())?;
    let (_, grad) =
        evaluate_with_target(&net, &scene, &fwd, &target, TrainMode::Combined, &lambdas)?;

    let loss_at = |i: usize, v: f64| -> Result<f64> {
        let mut n = net.clone();
        n.params_mut()[i] = v;
        let f = forward(&n, &scene.features)?;
        Ok(
            evaluate_with_target(&n, &scene, &f, &target, TrainMode::Combined, &lambdas)?
                .0
                .total,
        )
    };
    let mut reports = Vec::new();
    for (name, start, len) in shape.blocks() {
        let mut t = Tracker::new(format!("toy {name}"), cfg.tolerance);
        for (i, &g) in grad.iter().enumerate().skip(start).take(len) {
            let x = net.params()[i];
            let numeric =
                (loss_at(i, x + cfg.step)? - loss_at(i, x - cfg.step)?) / (2.0 * cfg.step);
            t.record(g + cfg.perturb, numeric);
        }
        reports.push(t.finish());
    }
    Ok(reports)
}

/// The full suite: Laplace, focal and every toy-net parameter block.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut blocks: Vec<BlockReport> = check_laplace(cfg, 100).into();
    blocks.push(check_focal(cfg)?);
    blocks.extend(check_toy_net(cfg)?);
    Ok(GradcheckReport {
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        blocks,
    })
}
