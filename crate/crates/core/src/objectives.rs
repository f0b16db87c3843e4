//! Condition cross-entropy, masked symmetric InfoNCE consistency loss, and
//! their first-batch-normalized weighted sum.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm floor used by the guarded cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Losses below this on the first batch get weight 1 instead of a reciprocal.
pub const CALIBRATION_FLOOR: f64 = 1e-8;

/// Everything one optimizer step's losses read.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchBundle {
    /// `(B, 3)` logits ordered (Precondition, Effect, Unsatisfied).
    pub logits: Array2<f64>,
    /// `(B, 3)` one-hot rows.
    pub labels: Array2<f64>,
    /// `(B, D)` global features of the effect frames.
    pub cls_plus: Array2<f64>,
    /// `(B, D)` global features of the pre frames.
    pub cls_minus: Array2<f64>,
    /// `(B, D)` text features of the paraphrased descriptions.
    pub paraphrase_semantics: Array2<f64>,
    pub indicators: Vec<bool>,
}

impl BatchBundle {
    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.len();
        let d = self.cls_plus.ncols();
        for (what, got, want) in [
            ("logits", self.logits.dim(), (b, 3)),
            ("labels", self.labels.dim(), (b, 3)),
            ("cls_plus", self.cls_plus.dim(), (b, d)),
            ("cls_minus", self.cls_minus.dim(), (b, d)),
            ("paraphrase_semantics", self.paraphrase_semantics.dim(), (b, d)),
        ] {
            if got != want {
                return Err(Error::shape(what, format!("{want:?}"), format!("{got:?}")));
            }
        }
        check_one_hot(&self.labels)
    }

    /// Condition and consistency losses of this bundle at temperature `tau`.
    pub fn losses(&self, tau: f64) -> Result<(f64, f64)> {
        self.validate()?;
        let lc = condition_loss(&self.logits, &self.labels)?;
        let ea = action_features(&self.cls_plus, &self.cls_minus)?;
        let s = cosine_sim_matrix_guarded(&ea, &self.paraphrase_semantics)?;
        Ok((lc, consistency_loss(&s, &self.indicators, tau)))
    }
}

fn check_one_hot(labels: &Array2<f64>) -> Result<()> {
    for (i, row) in labels.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Input(format!("label row {i} is not one-hot: {row}")));
        }
    }
    Ok(())
}

/// One-hot rows for class indices.
pub fn one_hot(classes: &[usize]) -> Array2<f64> {
    let mut y = Array2::zeros((classes.len(), 3));
    for (i, &c) in classes.iter().enumerate() {
        y[[i, c]] = 1.0;
    }
    y
}

fn log_softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let (arg, m) = row
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(a, m), (i, &v)| if v > m { (i, v) } else { (a, m) });
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - m).exp())
        .sum();
    let lse = rest.ln_1p();
    row.mapv(|v| (v - m) - lse)
}

/// Mean over rows of `−log softmax(x)[y]`.
pub fn condition_loss(logits: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    Ok(condition_loss_grad(logits, labels)?.0)
}

/// Condition loss and its gradient with respect to the logits.
pub fn condition_loss_grad(logits: &Array2<f64>, labels: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != labels.dim() || logits.ncols() != 3 {
        return Err(Error::shape("condition loss inputs", format!("{:?}", labels.dim()), format!("{:?}", logits.dim())));
    }
    check_one_hot(labels)?;
    let b = logits.nrows();
    if b == 0 {
        return Ok((0.0, Array2::zeros((0, 3))));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((b, 3));
    for i in 0..b {
        let lp = log_softmax_row(logits.row(i));
        loss -= lp.dot(&labels.row(i));
        let mut g = grad.row_mut(i);
        g.assign(&lp.mapv(f64::exp));
        g -= &labels.row(i);
    }
    grad /= b as f64;
    Ok((loss / b as f64, grad))
}

/// `e_a = ĉls⁺ − ĉls⁻`.
pub fn action_feature(cls_plus: ArrayView1<f64>, cls_minus: ArrayView1<f64>) -> Result<Array1<f64>> {
    if cls_plus.len() != cls_minus.len() {
        return Err(Error::shape("action feature", cls_plus.len(), cls_minus.len()));
    }
    Ok(&cls_plus - &cls_minus)
}

/// Row-wise [`action_feature`].
pub fn action_features(cls_plus: &Array2<f64>, cls_minus: &Array2<f64>) -> Result<Array2<f64>> {
    if cls_plus.dim() != cls_minus.dim() {
        return Err(Error::shape("action features", format!("{:?}", cls_plus.dim()), format!("{:?}", cls_minus.dim())));
    }
    Ok(cls_plus - cls_minus)
}

fn normalized_rows(a: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = a.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut out = a.clone();
    for (mut row, n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row /= n.max(COSINE_EPS);
    }
    (out, norms)
}

/// Cosine similarities `S_ij = ⟨e_i, s_j⟩ / (‖e_i‖ ‖s_j‖)`. Any exactly-zero
/// row is a numeric error naming the row.
pub fn cosine_sim_matrix(ea: &Array2<f64>, sp: &Array2<f64>) -> Result<Array2<f64>> {
    for (name, m) in [("e_a", ea), ("s_p", sp)] {
        if let Some(i) = m.rows().into_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(Error::Numeric(format!("row {i} of {name} has zero norm")));
        }
    }
    cosine_sim_matrix_guarded(ea, sp)
}

/// Cosine similarities with norms floored at [`COSINE_EPS`].
pub fn cosine_sim_matrix_guarded(ea: &Array2<f64>, sp: &Array2<f64>) -> Result<Array2<f64>> {
    if ea.dim() != sp.dim() {
        return Err(Error::shape("cosine inputs", format!("{:?}", ea.dim()), format!("{:?}", sp.dim())));
    }
    let (e, _) = normalized_rows(ea);
    let (p, _) = normalized_rows(sp);
    Ok(e.dot(&p.t()))
}

/// Gradient of a scalar with respect to `ea`, given its gradient `d_s` with
/// respect to the guarded cosine matrix. `sp` is treated as constant.
pub fn cosine_backward(ea: &Array2<f64>, sp: &Array2<f64>, d_s: &Array2<f64>) -> Array2<f64> {
    let (e, norms) = normalized_rows(ea);
    let (p, _) = normalized_rows(sp);
    let mut g = d_s.dot(&p);
    for ((mut gi, ei), &n) in g.rows_mut().into_iter().zip(e.rows()).zip(norms.iter()) {
        if n > COSINE_EPS {
            let proj = gi.dot(&ei);
            gi.scaled_add(-proj, &ei);
            gi /= n;
        } else {
            gi /= COSINE_EPS;
        }
    }
    g
}

/// Loss value plus gradients with respect to `S` and to `t = 1/τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGrad {
    pub loss: f64,
    pub d_s: Array2<f64>,
    pub d_inv_tau: f64,
}

/// Symmetric InfoNCE over rows and columns whose indicator is set. Inactive
/// items take no part in either the positives or the softmax denominators,
/// and both directions average over the active count. All-inactive gives 0.
pub fn consistency_loss(s: &Array2<f64>, indicators: &[bool], tau: f64) -> f64 {
    consistency_loss_grad(s, indicators, tau).loss
}

pub fn consistency_loss_grad(s: &Array2<f64>, indicators: &[bool], tau: f64) -> ConsistencyGrad {
    let b = s.nrows();
    assert_eq!(s.dim(), (b, b), "similarity matrix must be square");
    assert_eq!(indicators.len(), b, "one indicator per row");
    let active: Vec<usize> = (0..b).filter(|&i| indicators[i]).collect();
    let n = active.len();
    let mut d_s = Array2::zeros((b, b));
    if n == 0 {
        return ConsistencyGrad {
            loss: 0.0,
            d_s,
            d_inv_tau: 0.0,
        };
    }
    let t = 1.0 / tau;
    let z = Array2::from_shape_fn((n, n), |(a, c)| t * s[[active[a], active[c]]]);
    let mut p = z.clone();
    crate::net::softmax_rows(&mut p);
    let mut q = z.t().to_owned();
    crate::net::softmax_rows(&mut q);
    let q = q.reversed_axes();
    let mut loss = 0.0;
    let mut d_t = 0.0;
    let inv_n = 1.0 / n as f64;
    for a in 0..n {
        loss -= p[[a, a]].ln() + q[[a, a]].ln();
        for c in 0..n {
            let delta = if a == c { 1.0 } else { 0.0 };
            let dz = inv_n * (p[[a, c]] - delta + q[[a, c]] - delta);
            d_s[[active[a], active[c]]] = t * dz;
            d_t += dz * s[[active[a], active[c]]];
        }
    }
    ConsistencyGrad {
        loss: loss * inv_n,
        d_s,
        d_inv_tau: d_t,
    }
}

/// Loss weights normalizing each first-batch loss to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub frozen: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::pending()
    }
}

fn reciprocal(first: f64) -> f64 {
    if first < CALIBRATION_FLOOR {
        1.0
    } else {
        1.0 / first
    }
}

impl LossWeights {
    /// Uncalibrated weights (1, 1).
    pub fn pending() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            frozen: false,
        }
    }

    /// Set `α = 1/lc`, and `β = 1/lcons` or 0 when the consistency loss is
    /// disabled, then freeze. Calling twice is a usage error.
    pub fn calibrate(&mut self, first_condition: f64, first_consistency: f64, use_consistency: bool) -> Result<()> {
        if self.frozen {
            return Err(Error::Usage("loss weights are already calibrated".into()));
        }
        if !first_condition.is_finite() || !first_consistency.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite first-batch losses ({first_condition}, {first_consistency})"
            )));
        }
        self.alpha = reciprocal(first_condition);
        self.beta = if use_consistency { reciprocal(first_consistency) } else { 0.0 };
        self.frozen = true;
        Ok(())
    }
}

pub fn calibrate_weights(first_condition: f64, first_consistency: f64) -> Result<LossWeights> {
    let mut w = LossWeights::pending();
    w.calibrate(first_condition, first_consistency, true)?;
    Ok(w)
}

/// `α·lc + β·lcons`.
pub fn total_loss(lc: f64, lcons: f64, w: &LossWeights) -> f64 {
    w.alpha * lc + w.beta * lcons
}
