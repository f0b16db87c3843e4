//! Batched dense layers with hand-written backward passes.
//!
//! Activations are `(rows, features)` matrices where several sequences of
//! equal length are stacked along the rows.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// Visits every parameter tensor. The flag marks matrices that take weight decay.
pub(crate) trait Params {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(&str, &'a [f64], bool));
    fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64], bool));
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
        Linear {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulate parameter gradients into `g` and return `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, g: &mut Linear) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), &dy, 1.0, &mut g.w);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(&str, &'a [f64], bool)) {
        f(&format!("{name}.w"), slice2(&self.w), true);
        f(&format!("{name}.b"), slice1(&self.b), false);
    }
    fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64], bool)) {
        f(&format!("{name}.w"), self.w.as_slice_mut().expect("standard layout"), true);
        f(&format!("{name}.b"), self.b.as_slice_mut().expect("standard layout"), false);
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerNorm {
    pub g: Array1<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            g: Array1::ones(dim),
            b: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, LnCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.dot(&row) / d;
            *r = 1.0 / (var + LN_EPS).sqrt();
            row *= *r;
        }
        let mut y = &xhat * &self.g;
        y += &self.b;
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LnCache, dy: ArrayView2<f64>, g: &mut LayerNorm) -> Array2<f64> {
        g.g += &(&dy * &cache.xhat).sum_axis(Axis(0));
        g.b += &dy.sum_axis(Axis(0));
        let d = dy.ncols() as f64;
        let mut dx = &dy * &self.g;
        for ((mut row, xh), r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
            let m1 = row.sum() / d;
            let m2 = row.dot(&xh) / d;
            Zip::from(&mut row).and(&xh).for_each(|v, &x| *v = r * (*v - m1 - x * m2));
        }
        dx
    }
}

impl Params for LayerNorm {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(&str, &'a [f64], bool)) {
        f(&format!("{name}.g"), slice1(&self.g), false);
        f(&format!("{name}.b"), slice1(&self.b), false);
    }
    fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64], bool)) {
        f(&format!("{name}.g"), self.g.as_slice_mut().expect("standard layout"), false);
        f(&format!("{name}.b"), self.b.as_slice_mut().expect("standard layout"), false);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

/// Row-wise softmax in place.
pub(crate) fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `y + MLP(LN(y))`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    ln1: LnCache,
    h: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Block {
            ln1: LayerNorm::new(dim),
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, seq_len: usize, heads: usize) -> (Array2<f64>, BlockCache) {
        let dim = x.ncols();
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_seq = x.nrows() / seq_len;
        let (h, ln1) = self.ln1.forward(x.view());
        let qkv = self.qkv.forward(h.view());
        let mut attn = Array2::<f64>::zeros((x.nrows(), dim));
        let mut probs = Vec::with_capacity(n_seq * heads);
        for n in 0..n_seq {
            let rows = n * seq_len..(n + 1) * seq_len;
            for k in 0..heads {
                let c = k * dh;
                let q = qkv.slice(s![rows.clone(), c..c + dh]);
                let kk = qkv.slice(s![rows.clone(), dim + c..dim + c + dh]);
                let v = qkv.slice(s![rows.clone(), 2 * dim + c..2 * dim + c + dh]);
                let mut a = q.dot(&kk.t());
                a *= scale;
                softmax_rows(&mut a);
                let o = a.dot(&v);
                attn.slice_mut(s![rows.clone(), c..c + dh]).assign(&o);
                probs.push(a);
            }
        }
        let mut y = self.proj.forward(attn.view());
        y += x;
        let (h2, ln2) = self.ln2.forward(y.view());
        let u = self.fc1.forward(h2.view());
        let act = u.mapv(gelu);
        let mut z = self.fc2.forward(act.view());
        z += &y;
        let cache = BlockCache {
            ln1,
            h,
            qkv,
            probs,
            attn,
            ln2,
            h2,
            u,
            act,
        };
        (z, cache)
    }

    pub fn backward(&self, c: &BlockCache, dz: &Array2<f64>, seq_len: usize, heads: usize, g: &mut Block) -> Array2<f64> {
        let dim = dz.ncols();
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_seq = dz.nrows() / seq_len;

        let dact = self.fc2.backward(c.act.view(), dz.view(), &mut g.fc2);
        let mut du = dact;
        Zip::from(&mut du).and(&c.u).for_each(|d, &u| *d *= gelu_grad(u));
        let dh2 = self.fc1.backward(c.h2.view(), du.view(), &mut g.fc1);
        let mut dy = self.ln2.backward(&c.ln2, dh2.view(), &mut g.ln2);
        dy += dz;

        let dattn = self.proj.backward(c.attn.view(), dy.view(), &mut g.proj);
        let mut dqkv = Array2::<f64>::zeros(c.qkv.dim());
        for n in 0..n_seq {
            let rows = n * seq_len..(n + 1) * seq_len;
            for k in 0..heads {
                let col = k * dh;
                let a = &c.probs[n * heads + k];
                let q = c.qkv.slice(s![rows.clone(), col..col + dh]);
                let kk = c.qkv.slice(s![rows.clone(), dim + col..dim + col + dh]);
                let v = c.qkv.slice(s![rows.clone(), 2 * dim + col..2 * dim + col + dh]);
                let d_o = dattn.slice(s![rows.clone(), col..col + dh]);
                let dv = a.t().dot(&d_o);
                let mut ds = d_o.dot(&v.t());
                for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                    let dot = drow.dot(&arow);
                    Zip::from(&mut drow).and(&arow).for_each(|d, &p| *d = p * (*d - dot) * scale);
                }
                let dq = ds.dot(&kk);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![rows.clone(), col..col + dh]).assign(&dq);
                dqkv.slice_mut(s![rows.clone(), dim + col..dim + col + dh]).assign(&dk);
                dqkv.slice_mut(s![rows.clone(), 2 * dim + col..2 * dim + col + dh]).assign(&dv);
            }
        }
        let dhh = self.qkv.backward(c.h.view(), dqkv.view(), &mut g.qkv);
        let mut dx = self.ln1.backward(&c.ln1, dhh.view(), &mut g.ln1);
        dx += &dy;
        dx
    }
}

impl Params for Block {
    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(&str, &'a [f64], bool)) {
        self.ln1.visit(&format!("{name}.ln1"), f);
        self.qkv.visit(&format!("{name}.qkv"), f);
        self.proj.visit(&format!("{name}.proj"), f);
        self.ln2.visit(&format!("{name}.ln2"), f);
        self.fc1.visit(&format!("{name}.fc1"), f);
        self.fc2.visit(&format!("{name}.fc2"), f);
    }
    fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut [f64], bool)) {
        self.ln1.visit_mut(&format!("{name}.ln1"), f);
        self.qkv.visit_mut(&format!("{name}.qkv"), f);
        self.proj.visit_mut(&format!("{name}.proj"), f);
        self.ln2.visit_mut(&format!("{name}.ln2"), f);
        self.fc1.visit_mut(&format!("{name}.fc1"), f);
        self.fc2.visit_mut(&format!("{name}.fc2"), f);
    }
}
