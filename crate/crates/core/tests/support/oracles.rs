//! Brute-force reference implementations shared by the integration tests
//! and the acceptance suite. Each is written independently of the library
//! code path it checks.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use dept_core::depth_targets::{PropagationConfig, Provenance, UncertaintyMap};
use dept_core::geometry::{CameraModel, LidarPoint, RigidTransform, SparseDepthMap};

/// `(depth, provenance, seed index)` per cell.
pub type OracleCell = Option<(f64, Provenance, usize)>;

fn half_width(sigma: f64, cfg: &PropagationConfig) -> i64 {
    if sigma < cfg.sigma_lo {
        (cfg.wide_patch / 2) as i64
    } else if sigma <= cfg.sigma_hi {
        (cfg.narrow_patch / 2) as i64
    } else {
        0
    }
}

/// For every cell, scan every seed: an original cell keeps its own depth;
/// otherwise the covering seed with the lowest σ wins, lowest index on ties.
pub fn propagate_oracle(
    seeds: &SparseDepthMap,
    sigma: &UncertaintyMap,
    cfg: &PropagationConfig,
) -> Vec<OracleCell> {
    let (w, h) = (seeds.width(), seeds.height());
    let list: Vec<(usize, usize, f64)> = seeds.iter_present().collect();
    let mut out = vec![None; w * h];
    for cy in 0..h {
        for cx in 0..w {
            let idx = cy * w + cx;
            if let Some(d) = seeds.get(cx, cy) {
                out[idx] = Some((d, Provenance::Original, idx));
                continue;
            }
            let mut best: Option<(f64, usize, f64)> = None;
            for &(sx, sy, d) in &list {
                let s = sigma.get(sx, sy);
                let r = half_width(s, cfg);
                let dist = (cx as i64 - sx as i64)
                    .abs()
                    .max((cy as i64 - sy as i64).abs());
                if r == 0 || dist > r {
                    continue;
                }
                let sid = sy * w + sx;
                let better = match best {
                    None => true,
                    Some((bs, bid, _)) => s < bs || (s == bs && sid < bid),
                };
                if better {
                    best = Some((s, sid, d));
                }
            }
            out[idx] = best.map(|(_, sid, d)| (d, Provenance::Propagated, sid));
        }
    }
    out
}

/// Per-cell nearest depth computed point by point with explicit arithmetic.
pub fn sparse_depth_oracle(
    points: &[LidarPoint],
    t: &RigidTransform,
    cam: &CameraModel,
    stride: u32,
) -> (usize, usize, Vec<Option<f64>>) {
    let w = (cam.image_w as usize).div_ceil(stride as usize);
    let h = (cam.image_h as usize).div_ceil(stride as usize);
    let mut cells: Vec<Option<f64>> = vec![None; w * h];
    let r = t.rotation();
    let tr = t.translation();
    for p in points {
        let (x, y, z) = (p.x as f64, p.y as f64, p.z as f64);
        let c = [
            r[(0, 0)] * x + r[(0, 1)] * y + r[(0, 2)] * z + tr[0],
            r[(1, 0)] * x + r[(1, 1)] * y + r[(1, 2)] * z + tr[1],
            r[(2, 0)] * x + r[(2, 1)] * y + r[(2, 2)] * z + tr[2],
        ];
        if !(c[2] > 1e-6) {
            continue;
        }
        let u = cam.fx * c[0] / c[2] + cam.cx;
        let v = cam.fy * c[1] / c[2] + cam.cy;
        if !(u >= 0.0 && v >= 0.0 && u < cam.image_w as f64 && v < cam.image_h as f64) {
            continue;
        }
        let i = (v / stride as f64) as usize * w + (u / stride as f64) as usize;
        cells[i] = Some(cells[i].map_or(c[2], |d: f64| d.min(c[2])));
    }
    (w, h, cells)
}

/// IoU of a `w × h` box against itself after the three corner perturbations.
pub fn perturbed_ious(w: f64, h: f64, r: f64) -> [f64; 3] {
    let shifted = (w - r).max(0.0) * (h - r).max(0.0);
    let translated = shifted / (2.0 * w * h - shifted);
    let shrunk = (w - 2.0 * r).max(0.0) * (h - 2.0 * r).max(0.0) / (w * h);
    let grown = w * h / ((w + 2.0 * r) * (h + 2.0 * r));
    [translated, shrunk, grown]
}

/// Largest `r` keeping every perturbed IoU ≥ `min_iou`, by bisection.
pub fn radius_by_bisection(w: f64, h: f64, min_iou: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, w.min(h) / 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if perturbed_ious(w, h, mid).iter().all(|&iou| iou >= min_iou) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn sigma_by_bisection(w: f64, h: f64, min_iou: f64) -> f64 {
    (radius_by_bisection(w, h, min_iou) / 3.0).max(2.0 / 3.0)
}
