//! Finite-difference verification of the analytic batch gradient.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::batch::{batch_loss, batch_loss_grad, ResolvedBatch};
use crate::encoders::TokenGrid;
use crate::error::Result;
use crate::net::{NetConfig, NetState};
use crate::objectives::LossWeights;
use crate::rng::Seed;

/// Largest relative error found and how many parameters were compared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

fn unit_rows(m: usize, d: usize, rng: &mut crate::rng::Rng) -> Array2<f64> {
    let mut a: Array2<f64> = Array2::from_shape_simple_fn((m, d), || StandardNormal.sample(rng));
    for mut r in a.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    a
}

/// A random batch over `frames ≥ 2` grids and `rows` queries with mixed
/// labels and indicators. Pre and effect frames of a row always differ.
pub fn random_batch(cfg: &NetConfig, frames: usize, rows: usize, seed: Seed) -> Result<ResolvedBatch> {
    if frames < 2 {
        return Err(crate::error::Error::Config("random batch needs at least two frames".into()));
    }
    let mut rng = seed.fork("batch").rng();
    let grids = (0..frames)
        .map(|_| {
            let t = Array2::from_shape_simple_fn((cfg.patches(), cfg.working_dim), || StandardNormal.sample(&mut rng));
            TokenGrid::new(t, cfg.grid_side).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |rng: &mut crate::rng::Rng| rng.random_range(0..frames);
    let query_frame = (0..rows).map(|_| pick(&mut rng)).collect();
    let pre_frame: Vec<usize> = (0..rows).map(|_| pick(&mut rng)).collect();
    let effect_frame = pre_frame
        .iter()
        .map(|&p| (p + rng.random_range(1..frames)) % frames)
        .collect();
    let labels = (0..rows).map(|i| i % 3).collect();
    let indicators = (0..rows).map(|i| i % 4 != 3).collect();
    Ok(ResolvedBatch {
        grids,
        query_frame,
        query_sem: unit_rows(rows, cfg.working_dim, &mut rng),
        labels,
        pre_frame,
        effect_frame,
        paraphrase_sem: unit_rows(rows, cfg.working_dim, &mut rng),
        indicators,
    })
}

fn nudge(net: &mut NetState, index: usize, delta: f64) {
    let mut base = 0;
    net.visit_mut(&mut |_, p, _| {
        if (base..base + p.len()).contains(&index) {
            p[index - base] += delta;
        }
        base += p.len();
    });
}

fn flat(net: &NetState) -> Array1<f64> {
    let mut v = Vec::new();
    net.visit(&mut |_, p, _| v.extend_from_slice(p));
    Array1::from(v)
}

/// Compare the analytic gradient of the weighted total loss with a
/// fourth-order central difference for every `stride`-th parameter.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(net: &NetState, cfg: &NetConfig, rb: &ResolvedBatch, weights: &LossWeights, stride: usize, h: f64) -> Result<GradCheck> {
    let mut w = *weights;
    w.frozen = true;
    let use_consistency = w.beta != 0.0;
    let (_, grads) = batch_loss_grad(net, cfg, rb, &mut w, use_consistency)?;
    let analytic = flat(&grads);
    let mut probe = net.clone();
    let mut at = |i: usize, delta: f64| -> Result<f64> {
        nudge(&mut probe, i, delta);
        let l = batch_loss(&probe, cfg, rb, &w)?.total;
        nudge(&mut probe, i, -delta);
        Ok(l)
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in (0..analytic.len()).step_by(stride.max(1)) {
        let numeric = (8.0 * (at(i, h)? - at(i, -h)?) - (at(i, 2.0 * h)? - at(i, -2.0 * h)?)) / (12.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
        checked += 1;
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
