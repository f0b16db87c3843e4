//! Two-stage transformer: a State Transformer over `[cls, f₁…f_P]` with
//! sinusoidal positions, a Condition Transformer over `[s, f̂₁…f̂_P]`, and an
//! MLP head producing three phase logits.
//!
//! Everything runs batched: `N` frames go through the state stage together,
//! then `M` (frame, action) queries go through the condition stage, each
//! query pointing at one of the `N` frames.

mod checkpoint;
mod layers;
mod pe;
mod stage;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use pe::sinusoidal_pe;
pub(crate) use layers::softmax_rows;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::{SemanticVector, TokenGrid};
use crate::error::{Error, Result};
use crate::rng::Seed;
use layers::{gelu, gelu_grad, Linear, Params};
use stage::{Stage, StageCache};

/// Architecture variants, including the two single-stage ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// No state stage; the condition stage runs at twice its configured depth
    /// directly on the backbone tokens.
    NoStateTransformer,
    /// No condition stage; the head reads `ĉls` and never sees the action.
    NoConditionTransformer,
}

impl Variant {
    pub fn has_state_stage(self) -> bool {
        self != Variant::NoStateTransformer
    }

    pub fn has_condition_stage(self) -> bool {
        self != Variant::NoConditionTransformer
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub working_dim: usize,
    pub grid_side: usize,
    pub state_depth: usize,
    pub condition_depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub head_hidden: usize,
    #[serde(default)]
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            working_dim: 384,
            grid_side: 16,
            state_depth: 8,
            condition_depth: 8,
            heads: 6,
            mlp_ratio: 4.0,
            head_hidden: 256,
            variant: Variant::Full,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.working_dim == 0 || self.grid_side == 0 || self.head_hidden == 0 {
            return bad("working_dim, grid_side and head_hidden must be positive".into());
        }
        if self.heads == 0 || self.working_dim % self.heads != 0 {
            return bad(format!("working_dim {} is not divisible by heads {}", self.working_dim, self.heads));
        }
        if self.working_dim % 2 != 0 {
            return bad(format!("working_dim {} must be even", self.working_dim));
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        if self.variant.has_state_stage() && self.state_depth == 0 {
            return bad("state_depth must be at least 1".into());
        }
        if self.variant.has_condition_stage() && self.condition_depth == 0 {
            return bad("condition_depth must be at least 1".into());
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.working_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn patches(&self) -> usize {
        self.grid_side * self.grid_side
    }

    /// Sequence length in either stage: one global token plus the patches.
    pub fn seq_len(&self) -> usize {
        self.patches() + 1
    }

    pub fn effective_condition_depth(&self) -> usize {
        match self.variant {
            Variant::NoStateTransformer => 2 * self.condition_depth,
            _ => self.condition_depth,
        }
    }
}

/// Bounds on `log(1/τ)`, keeping τ in [0.01, 100].
pub const LOG_INV_TAU_MIN: f64 = -4.605_170_185_988_091; // ln 0.01
pub const LOG_INV_TAU_MAX: f64 = 4.605_170_185_988_091; // ln 100

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// All trainable weights. The same type doubles as a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub cls: Array1<f64>,
    pub(crate) state: Option<Stage>,
    pub(crate) condition: Option<Stage>,
    pub(crate) head: Head,
    /// One-element vector holding `log(1/τ)`.
    pub log_inv_tau: Array1<f64>,
}

/// Global and per-patch output of the state stage for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub cls_hat: Array1<f64>,
    pub locals: Array2<f64>,
}

/// Batched state-stage output with what backward needs.
#[derive(Debug, Clone)]
pub struct StatePass {
    /// `(N, D)`.
    pub cls_hat: Array2<f64>,
    /// `(N·P, D)`, frame-major.
    pub locals: Array2<f64>,
    cache: Option<StageCache>,
}

impl StatePass {
    pub fn frames(&self) -> usize {
        self.cls_hat.nrows()
    }

    pub fn features(&self, n: usize) -> StateFeatures {
        let p = self.locals.nrows() / self.frames();
        StateFeatures {
            cls_hat: self.cls_hat.row(n).to_owned(),
            locals: self.locals.slice(s![n * p..(n + 1) * p, ..]).to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionPass {
    /// `(M, D)` condition features.
    pub e: Array2<f64>,
    frames: Vec<usize>,
    cache: Option<StageCache>,
}

#[derive(Debug, Clone)]
pub struct HeadPass {
    /// `(M, 3)`.
    pub logits: Array2<f64>,
    e: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

impl NetState {
    /// Fresh weights. `cls` is standard normal; linear layers use
    /// `N(0, 1/fan_in)`; norms start at identity; `τ = 0.07`.
    pub fn init(cfg: &NetConfig, seed: Seed) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.working_dim;
        let hidden = cfg.mlp_hidden();
        let mut rng = seed.fork("cls").rng();
        let cls = Array1::from_shape_simple_fn(d, || StandardNormal.sample(&mut rng));
        let state = cfg
            .variant
            .has_state_stage()
            .then(|| Stage::new(cfg.state_depth, d, hidden, &mut seed.fork("state").rng()));
        let condition = cfg.variant.has_condition_stage().then(|| {
            Stage::new(cfg.effective_condition_depth(), d, hidden, &mut seed.fork("condition").rng())
        });
        let mut rng = seed.fork("head").rng();
        let head = Head {
            fc1: Linear::new(d, cfg.head_hidden, &mut rng),
            fc2: Linear::new(cfg.head_hidden, 3, &mut rng),
        };
        Ok(NetState {
            cls,
            state,
            condition,
            head,
            log_inv_tau: Array1::from_elem(1, (1.0f64 / 0.07).ln()),
        })
    }

    pub fn tau(&self) -> f64 {
        (-self.log_inv_tau[0]).exp()
    }

    pub fn clamp_temperature(&mut self) {
        self.log_inv_tau[0] = self.log_inv_tau[0].clamp(LOG_INV_TAU_MIN, LOG_INV_TAU_MAX);
    }

    /// Visit every parameter tensor in a fixed order. The flag is true for
    /// weight matrices, which are the only tensors that take weight decay.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64], bool)) {
        f("cls", self.cls.as_slice().expect("standard layout"), false);
        if let Some(st) = &self.state {
            st.visit("state", f);
        }
        if let Some(st) = &self.condition {
            st.visit("condition", f);
        }
        self.head.fc1.visit("head.fc1", f);
        self.head.fc2.visit("head.fc2", f);
        f("log_inv_tau", self.log_inv_tau.as_slice().expect("standard layout"), false);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64], bool)) {
        f("cls", self.cls.as_slice_mut().expect("standard layout"), false);
        if let Some(st) = &mut self.state {
            st.visit_mut("state", f);
        }
        if let Some(st) = &mut self.condition {
            st.visit_mut("condition", f);
        }
        self.head.fc1.visit_mut("head.fc1", f);
        self.head.fc2.visit_mut("head.fc2", f);
        f("log_inv_tau", self.log_inv_tau.as_slice_mut().expect("standard layout"), false);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, s, _| n += s.len());
        n
    }

    /// Names and lengths of all tensors, in visiting order.
    pub fn tensor_table(&self) -> Vec<(String, usize)> {
        let mut t = Vec::new();
        self.visit(&mut |name, s, _| t.push((name.to_string(), s.len())));
        t
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, s, _| s.fill(0.0));
        z
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, s, _| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    fn check_grid(cfg: &NetConfig, g: &TokenGrid) -> Result<()> {
        if g.dim != cfg.working_dim || g.token_count() != cfg.patches() {
            return Err(Error::shape(
                "state input",
                format!("{}x{}", cfg.patches(), cfg.working_dim),
                format!("{}x{}", g.token_count(), g.dim),
            ));
        }
        Ok(())
    }

    /// State stage over a batch of frames.
    pub fn state_pass(&self, cfg: &NetConfig, grids: &[&TokenGrid]) -> Result<StatePass> {
        let pe = sinusoidal_pe(cfg.seq_len(), cfg.working_dim)?;
        self.state_pass_with_pe(cfg, grids, &pe)
    }

    pub(crate) fn state_pass_with_pe(&self, cfg: &NetConfig, grids: &[&TokenGrid], pe: &Array2<f64>) -> Result<StatePass> {
        let d = cfg.working_dim;
        let p = cfg.patches();
        let t = cfg.seq_len();
        for g in grids {
            Self::check_grid(cfg, g)?;
        }
        let n = grids.len();
        let Some(stage) = &self.state else {
            let mut cls_hat = Array2::zeros((n, d));
            let mut locals = Array2::zeros((n * p, d));
            for (i, g) in grids.iter().enumerate() {
                cls_hat.row_mut(i).assign(&self.cls);
                locals.slice_mut(s![i * p..(i + 1) * p, ..]).assign(&g.tokens);
            }
            return Ok(StatePass {
                cls_hat,
                locals,
                cache: None,
            });
        };
        let mut x = Array2::zeros((n * t, d));
        for (i, g) in grids.iter().enumerate() {
            x.row_mut(i * t).assign(&self.cls);
            x.slice_mut(s![i * t + 1..(i + 1) * t, ..]).assign(&g.tokens);
            let mut blk = x.slice_mut(s![i * t..(i + 1) * t, ..]);
            blk += pe;
        }
        let (y, cache) = stage.forward(x, t, cfg.heads);
        let mut cls_hat = Array2::zeros((n, d));
        let mut locals = Array2::zeros((n * p, d));
        for i in 0..n {
            cls_hat.row_mut(i).assign(&y.row(i * t));
            locals
                .slice_mut(s![i * p..(i + 1) * p, ..])
                .assign(&y.slice(s![i * t + 1..(i + 1) * t, ..]));
        }
        Ok(StatePass {
            cls_hat,
            locals,
            cache: Some(cache),
        })
    }

    /// Accumulate gradients of the state stage and `cls`. Token inputs are frozen.
    pub fn state_backward(&self, cfg: &NetConfig, pass: &StatePass, d_cls_hat: &Array2<f64>, d_locals: &Array2<f64>, grads: &mut NetState) {
        let n = pass.frames();
        let p = cfg.patches();
        let t = cfg.seq_len();
        let (Some(stage), Some(cache)) = (&self.state, &pass.cache) else {
            grads.cls += &d_cls_hat.sum_axis(Axis(0));
            return;
        };
        let mut dy = Array2::zeros((n * t, cfg.working_dim));
        for i in 0..n {
            dy.row_mut(i * t).assign(&d_cls_hat.row(i));
            dy.slice_mut(s![i * t + 1..(i + 1) * t, ..])
                .assign(&d_locals.slice(s![i * p..(i + 1) * p, ..]));
        }
        let gs = grads.state.as_mut().expect("gradient shapes match weights");
        let dx = stage.backward(cache, &dy, t, cfg.heads, gs);
        for i in 0..n {
            grads.cls += &dx.row(i * t);
        }
    }

    /// Condition stage for `M` queries; query `m` reads frame `frames[m]` of
    /// `sp` with semantics row `m`.
    pub fn condition_pass(&self, cfg: &NetConfig, sp: &StatePass, frames: &[usize], semantics: &Array2<f64>) -> Result<ConditionPass> {
        let d = cfg.working_dim;
        let p = cfg.patches();
        let t = cfg.seq_len();
        let m = frames.len();
        if semantics.dim() != (m, d) {
            return Err(Error::shape("semantics", format!("{m}x{d}"), format!("{}x{}", semantics.nrows(), semantics.ncols())));
        }
        if let Some(&f) = frames.iter().find(|&&f| f >= sp.frames()) {
            return Err(Error::Bounds { index: f, len: sp.frames() });
        }
        let Some(stage) = &self.condition else {
            let mut e = Array2::zeros((m, d));
            for (r, &f) in frames.iter().enumerate() {
                e.row_mut(r).assign(&sp.cls_hat.row(f));
            }
            return Ok(ConditionPass {
                e,
                frames: frames.to_vec(),
                cache: None,
            });
        };
        let mut x = Array2::zeros((m * t, d));
        for (r, &f) in frames.iter().enumerate() {
            x.row_mut(r * t).assign(&semantics.row(r));
            x.slice_mut(s![r * t + 1..(r + 1) * t, ..])
                .assign(&sp.locals.slice(s![f * p..(f + 1) * p, ..]));
        }
        if !cfg.variant.has_state_stage() {
            let pe = sinusoidal_pe(t, d)?;
            for r in 0..m {
                let mut blk = x.slice_mut(s![r * t..(r + 1) * t, ..]);
                blk += &pe;
            }
        }
        let (y, cache) = stage.forward(x, t, cfg.heads);
        let mut e = Array2::zeros((m, d));
        for r in 0..m {
            e.row_mut(r).assign(&y.row(r * t));
        }
        Ok(ConditionPass {
            e,
            frames: frames.to_vec(),
            cache: Some(cache),
        })
    }

    /// Accumulate condition-stage gradients; returns `(dĉls, dlocals)` for
    /// the `N` frames of the state pass.
    pub fn condition_backward(&self, cfg: &NetConfig, sp: &StatePass, cp: &ConditionPass, d_e: &Array2<f64>, grads: &mut NetState) -> (Array2<f64>, Array2<f64>) {
        let d = cfg.working_dim;
        let p = cfg.patches();
        let t = cfg.seq_len();
        let n = sp.frames();
        let mut d_cls = Array2::zeros((n, d));
        let mut d_locals = Array2::zeros((n * p, d));
        let (Some(stage), Some(cache)) = (&self.condition, &cp.cache) else {
            for (r, &f) in cp.frames.iter().enumerate() {
                let mut row = d_cls.row_mut(f);
                row += &d_e.row(r);
            }
            return (d_cls, d_locals);
        };
        let m = cp.frames.len();
        let mut dy = Array2::zeros((m * t, d));
        for r in 0..m {
            dy.row_mut(r * t).assign(&d_e.row(r));
        }
        let gs = grads.condition.as_mut().expect("gradient shapes match weights");
        let dx = stage.backward(cache, &dy, t, cfg.heads, gs);
        for (r, &f) in cp.frames.iter().enumerate() {
            let mut blk = d_locals.slice_mut(s![f * p..(f + 1) * p, ..]);
            blk += &dx.slice(s![r * t + 1..(r + 1) * t, ..]);
        }
        (d_cls, d_locals)
    }

    pub fn head_pass(&self, e: &Array2<f64>) -> HeadPass {
        let u = self.head.fc1.forward(e.view());
        let act = u.mapv(gelu);
        let logits = self.head.fc2.forward(act.view());
        HeadPass {
            logits,
            e: e.clone(),
            u,
            act,
        }
    }

    /// Accumulate head gradients; returns `dE`.
    pub fn head_backward(&self, hp: &HeadPass, d_logits: &Array2<f64>, grads: &mut NetState) -> Array2<f64> {
        let mut du = self.head.fc2.backward(hp.act.view(), d_logits.view(), &mut grads.head.fc2);
        ndarray::Zip::from(&mut du).and(&hp.u).for_each(|d, &u| *d *= gelu_grad(u));
        self.head.fc1.backward(hp.e.view(), du.view(), &mut grads.head.fc1)
    }

    /// Run the state stage on one frame.
    pub fn state_forward(&self, cfg: &NetConfig, tokens: &TokenGrid) -> Result<StateFeatures> {
        Ok(self.state_pass(cfg, &[tokens])?.features(0))
    }

    /// Condition feature `E` for one frame and one action.
    pub fn condition_forward(&self, cfg: &NetConfig, features: &StateFeatures, semantic: &SemanticVector) -> Result<Array1<f64>> {
        let d = cfg.working_dim;
        if features.cls_hat.len() != d || features.locals.dim() != (cfg.patches(), d) {
            return Err(Error::shape(
                "state features",
                format!("{}x{d}", cfg.patches()),
                format!("{}x{}", features.locals.nrows(), features.locals.ncols()),
            ));
        }
        if semantic.dim() != d {
            return Err(Error::shape("semantic vector", d, semantic.dim()));
        }
        let sp = StatePass {
            cls_hat: features.cls_hat.clone().insert_axis(Axis(0)),
            locals: features.locals.clone(),
            cache: None,
        };
        let sem = semantic.values.clone().insert_axis(Axis(0));
        Ok(self.condition_pass(cfg, &sp, &[0], &sem)?.e.row(0).to_owned())
    }

    /// Three logits ordered (Precondition, Effect, Unsatisfied).
    pub fn classify(&self, e: ArrayView1<f64>) -> Result<[f64; 3]> {
        if e.len() != self.cls.len() {
            return Err(Error::shape("condition feature", self.cls.len(), e.len()));
        }
        let hp = self.head_pass(&e.to_owned().insert_axis(Axis(0)));
        Ok([hp.logits[[0, 0]], hp.logits[[0, 1]], hp.logits[[0, 2]]])
    }

    /// End-to-end forward for one frame and one action: `(logits, ĉls)`.
    pub fn forward(&self, cfg: &NetConfig, tokens: &TokenGrid, semantic: &SemanticVector) -> Result<([f64; 3], Array1<f64>)> {
        let f = self.state_forward(cfg, tokens)?;
        let e = self.condition_forward(cfg, &f, semantic)?;
        Ok((self.classify(e.view())?, f.cls_hat))
    }

    /// Logits for every (frame, action) pair: `out[f][a]`.
    pub fn predict_all(&self, cfg: &NetConfig, grids: &[&TokenGrid], actions: &[&SemanticVector]) -> Result<Vec<Vec<[f64; 3]>>> {
        let sp = self.state_pass(cfg, grids)?;
        let n = grids.len();
        let a = actions.len();
        let frames: Vec<usize> = (0..n).flat_map(|f| std::iter::repeat_n(f, a)).collect();
        let mut sem = Array2::zeros((n * a, cfg.working_dim));
        for (r, mut row) in sem.rows_mut().into_iter().enumerate() {
            row.assign(&actions[r % a].values);
        }
        let cp = self.condition_pass(cfg, &sp, &frames, &sem)?;
        let hp = self.head_pass(&cp.e);
        Ok((0..n)
            .map(|f| {
                (0..a)
                    .map(|k| {
                        let r = f * a + k;
                        [hp.logits[[r, 0]], hp.logits[[r, 1]], hp.logits[[r, 2]]]
                    })
                    .collect()
            })
            .collect())
    }
}

/// Numerically stable softmax of three logits.
pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = logits.map(|x| (x - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_text, EncoderSpec};

    fn tiny(variant: Variant) -> NetConfig {
        NetConfig {
            working_dim: 16,
            grid_side: 2,
            state_depth: 1,
            condition_depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            head_hidden: 8,
            variant,
        }
    }

    fn grid(cfg: &NetConfig, seed: u64) -> TokenGrid {
        let mut rng = Seed(seed).rng();
        let t = Array2::from_shape_simple_fn((cfg.patches(), cfg.working_dim), || StandardNormal.sample(&mut rng));
        TokenGrid::new(t, cfg.grid_side).unwrap()
    }

    #[test]
    fn default_parameter_count_is_about_thirty_million() {
        let cfg = NetConfig::default();
        let net = NetState::init(&cfg, Seed(0)).unwrap();
        let d = 384usize;
        let per_block = 12 * d * d + 13 * d;
        let expected = 16 * per_block + 2 * 2 * d + d + (d * 256 + 256) + (256 * 3 + 3) + 1;
        assert_eq!(net.param_count(), expected);
        assert!((25_000_000..=35_000_000).contains(&expected), "{expected}");
    }

    #[test]
    fn default_shapes() {
        let cfg = NetConfig {
            state_depth: 1,
            condition_depth: 1,
            ..NetConfig::default()
        };
        let net = NetState::init(&cfg, Seed(0)).unwrap();
        let spec = EncoderSpec::synthetic(16, 384, 0);
        let g = grid(&cfg, 1);
        let f = net.state_forward(&cfg, &g).unwrap();
        assert_eq!(f.locals.dim(), (256, 384));
        assert_eq!(f.cls_hat.len(), 384);
        let s = encode_text(&spec, "pick up bottle").unwrap();
        let (logits, cls_hat) = net.forward(&cfg, &g, &s).unwrap();
        assert_eq!(cls_hat.len(), 384);
        let p = softmax3(logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn state_ablation_is_identity() {
        let cfg = tiny(Variant::NoStateTransformer);
        let net = NetState::init(&cfg, Seed(2)).unwrap();
        let g = grid(&cfg, 3);
        let f = net.state_forward(&cfg, &g).unwrap();
        assert_eq!(f.locals, g.tokens);
        assert_eq!(f.cls_hat, net.cls);
        assert_eq!(net.condition.as_ref().unwrap().blocks.len(), 2);
    }

    #[test]
    fn condition_ablation_returns_cls_hat() {
        let cfg = tiny(Variant::NoConditionTransformer);
        let net = NetState::init(&cfg, Seed(2)).unwrap();
        let g = grid(&cfg, 3);
        let f = net.state_forward(&cfg, &g).unwrap();
        let s = encode_text(&EncoderSpec::synthetic(2, 16, 0), "wipe table").unwrap();
        let e = net.condition_forward(&cfg, &f, &s).unwrap();
        assert_eq!(e, f.cls_hat);
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let cfg = tiny(Variant::Full);
        let mut net = NetState::init(&cfg, Seed(2)).unwrap();
        net.head.fc2.w.fill(0.0);
        net.head.fc2.b.fill(0.0);
        let p = softmax3(net.classify(net.cls.view()).unwrap());
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn different_frames_give_different_cls_hat() {
        let cfg = tiny(Variant::Full);
        let net = NetState::init(&cfg, Seed(2)).unwrap();
        let a = net.state_forward(&cfg, &grid(&cfg, 1)).unwrap();
        let b = net.state_forward(&cfg, &grid(&cfg, 2)).unwrap();
        assert_ne!(a.cls_hat, b.cls_hat);
    }

    #[test]
    fn shape_errors() {
        let cfg = tiny(Variant::Full);
        let net = NetState::init(&cfg, Seed(2)).unwrap();
        let wrong = TokenGrid::new(Array2::zeros((9, 16)), 3).unwrap();
        assert!(matches!(net.state_forward(&cfg, &wrong), Err(Error::Shape { .. })));
        let f = net.state_forward(&cfg, &grid(&cfg, 1)).unwrap();
        let s = SemanticVector { values: Array1::zeros(8) };
        assert!(matches!(net.condition_forward(&cfg, &f, &s), Err(Error::Shape { .. })));
        let bad = NetConfig { heads: 3, ..cfg };
        assert!(matches!(NetState::init(&bad, Seed(0)), Err(Error::Config(_))));
    }

    #[test]
    fn batched_matches_single() {
        let cfg = tiny(Variant::Full);
        let net = NetState::init(&cfg, Seed(4)).unwrap();
        let spec = EncoderSpec::synthetic(2, 16, 0);
        let gs: Vec<_> = (0..3).map(|i| grid(&cfg, i)).collect();
        let refs: Vec<_> = gs.iter().collect();
        let acts = [encode_text(&spec, "pick up cup").unwrap(), encode_text(&spec, "wipe table").unwrap()];
        let arefs: Vec<_> = acts.iter().collect();
        let all = net.predict_all(&cfg, &refs, &arefs).unwrap();
        for (f, g) in gs.iter().enumerate() {
            for (a, s) in acts.iter().enumerate() {
                let (single, _) = net.forward(&cfg, g, s).unwrap();
                for c in 0..3 {
                    assert!((single[c] - all[f][a][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn permuting_patches_with_their_positions_keeps_outputs() {
        let cfg = tiny(Variant::Full);
        let net = NetState::init(&cfg, Seed(8)).unwrap();
        let g = grid(&cfg, 5);
        let pe = sinusoidal_pe(cfg.seq_len(), cfg.working_dim).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut tokens = g.tokens.clone();
        let mut pe2 = pe.clone();
        for (i, &j) in perm.iter().enumerate() {
            tokens.row_mut(i).assign(&g.tokens.row(j));
            pe2.row_mut(i + 1).assign(&pe.row(j + 1));
        }
        let g2 = TokenGrid::new(tokens, 2).unwrap();
        let a = net.state_pass_with_pe(&cfg, &[&g], &pe).unwrap();
        let b = net.state_pass_with_pe(&cfg, &[&g2], &pe2).unwrap();
        let diff = (&a.cls_hat - &b.cls_hat).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff < 1e-12, "{diff}");
        let sem = Array2::from_elem((1, 16), 0.25);
        let ea = net.condition_pass(&cfg, &a, &[0], &sem).unwrap().e;
        let eb = net.condition_pass(&cfg, &b, &[0], &sem).unwrap().e;
        assert!((&ea - &eb).iter().all(|x| x.abs() < 1e-12));
    }
}
