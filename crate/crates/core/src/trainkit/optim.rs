//! Adam with decoupled weight decay.

use crate::net::NetState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Moment buffers in parameter-visiting order.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &NetState) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, s, _| m.push(vec![0.0; s.len()]));
        let v = m.clone();
        AdamW { cfg, m, v, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update at learning rate `lr`. Decay `p −= lr·wd·p` applies to weight
    /// matrices only, then `p −= lr·m̂/(√v̂ + eps)` applies to everything.
    pub fn step(&mut self, params: &mut NetState, grads: &NetState, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let mut gs: Vec<&[f64]> = Vec::new();
        grads.visit(&mut |_, s, _| gs.push(s));
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p, decay| {
            let wd = if decay { c.weight_decay } else { 0.0 };
            adamw_update(p, gs[k], &mut ms[k], &mut vs[k], (bc1, bc2), lr, wd, &c);
            k += 1;
        });
        params.clamp_temperature();
    }
}

/// Elementwise update of one tensor given bias corrections `(1−β1ᵗ, 1−β2ᵗ)`.
#[allow(clippy::too_many_arguments)]
fn adamw_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], bc: (f64, f64), lr: f64, wd: f64, c: &AdamWConfig) {
    for i in 0..p.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        p[i] -= lr * wd * p[i];
        p[i] -= lr * (m[i] / bc.0) / ((v[i] / bc.1).sqrt() + c.eps);
    }
}
