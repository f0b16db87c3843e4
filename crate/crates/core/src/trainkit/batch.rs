//! Batch assembly: triplet sampling, augmentation, paraphrasing, query-frame
//! choice, mismatched-action negatives, and the batched loss with gradients.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::{
    pick_negative, sample_paraphrase, ActionSpec, Augmenter, ConditionTriplet, DemonstrationSet, FrameRef,
    NegativeFilter, ParaphraseBank, PhaseLabel,
};
use crate::encoders::{FrameStore, TextStore, TokenGrid};
use crate::error::{Error, Result};
use crate::net::{NetConfig, NetState};
use crate::objectives::{
    action_features, condition_loss_grad, consistency_loss_grad, cosine_backward, cosine_sim_matrix_guarded, one_hot,
    BatchBundle, LossWeights,
};
use crate::rng::{Rng, Seed};

/// One classification query plus the consistency triplet it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRow {
    pub demo_id: String,
    pub query_frame: FrameRef,
    pub query_text: String,
    pub label: PhaseLabel,
    pub pre_frame: FrameRef,
    pub effect_frame: FrameRef,
    pub paraphrase_text: String,
    pub indicator: bool,
    /// False for mismatched-action negatives.
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub rows: Vec<BatchRow>,
}

/// Shared read-only inputs for batch assembly.
pub struct BatchContext<'a> {
    pub augmenter: Augmenter<'a>,
    pub paraphrase: Option<&'a ParaphraseBank>,
    pub filter: &'a dyn NegativeFilter,
    pub vocab: Vec<ActionSpec>,
}

impl<'a> BatchContext<'a> {
    pub fn new(set: &'a DemonstrationSet, cfg: &TrainConfig, paraphrase: Option<&'a ParaphraseBank>, filter: &'a dyn NegativeFilter) -> Result<Self> {
        Ok(BatchContext {
            augmenter: Augmenter::new(set, &set.rules, cfg.augmentation_probability)?,
            paraphrase: if cfg.paraphrase { paraphrase } else { None },
            filter,
            vocab: set.actions(),
        })
    }

    fn phrase(&self, text: &str, slots: &[String], rng: &mut Rng) -> Result<String> {
        match self.paraphrase {
            Some(bank) => sample_paraphrase(bank, text, slots, rng),
            None => Ok(text.to_string()),
        }
    }
}

/// Demonstrations per batch after the per-epoch shuffle.
pub fn epoch_order(set: &DemonstrationSet, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut Seed(cfg.seed).fork("shuffle").fork_index(epoch as u64).rng());
    order.chunks(cfg.batch_demos.max(1)).map(|c| c.to_vec()).collect()
}

/// Batches for one epoch. Each demonstration contributes `triplets_per_demo`
/// positive rows and each positive gets `negatives_per_positive` negatives.
pub fn make_batches(set: &DemonstrationSet, cfg: &TrainConfig, epoch: usize, ctx: &BatchContext) -> Result<Vec<Batch>> {
    let mut out = Vec::new();
    for chunk in epoch_order(set, cfg, epoch) {
        let mut positives = Vec::new();
        for &di in &chunk {
            let demo = &set.demos[di];
            let (pre, core, post) = (demo.segments.pre, demo.segments.core, demo.segments.post);
            if pre.is_empty() || post.is_empty() {
                continue;
            }
            let mut rng = Seed(cfg.seed).fork("rows").fork_index(epoch as u64).fork(&demo.id).rng();
            for _ in 0..cfg.triplets_per_demo {
                let base = ConditionTriplet {
                    pre_frame: demo.frames[rng.random_range(pre.start..pre.end)].clone(),
                    effect_frame: demo.frames[rng.random_range(post.start..post.end)].clone(),
                    action_text: demo.action_text.clone(),
                    paraphrased_text: demo.action_text.clone(),
                    indicator: demo.success,
                    source_demo_id: demo.id.clone(),
                    substitute_demo_id: None,
                };
                let mut t = ctx.augmenter.augment(&base, &mut rng);
                t.paraphrased_text = ctx.phrase(&demo.action_text, &demo.object_slots, &mut rng)?;
                let (query_frame, label) = if !core.is_empty() && rng.random::<f64>() < cfg.core_query_fraction {
                    (demo.frames[rng.random_range(core.start..core.end)].clone(), PhaseLabel::Unsatisfied)
                } else if rng.random::<bool>() {
                    (t.pre_frame.clone(), PhaseLabel::Precondition)
                } else if demo.success {
                    (t.effect_frame.clone(), PhaseLabel::Effect)
                } else {
                    (t.effect_frame.clone(), PhaseLabel::Unsatisfied)
                };
                let query_text = ctx.phrase(&demo.action_text, &demo.object_slots, &mut rng)?;
                positives.push((di, BatchRow {
                    demo_id: demo.id.clone(),
                    query_frame,
                    query_text,
                    label,
                    pre_frame: t.pre_frame,
                    effect_frame: t.effect_frame,
                    paraphrase_text: t.paraphrased_text,
                    indicator: t.indicator,
                    positive: true,
                }));
            }
        }
        let in_batch: Vec<ActionSpec> = {
            let mut v: Vec<ActionSpec> = chunk.iter().map(|&i| set.demos[i].action()).collect();
            v.sort();
            v.dedup();
            v
        };
        let mut rows: Vec<BatchRow> = positives.iter().map(|(_, r)| r.clone()).collect();
        let mut rng = Seed(cfg.seed).fork("negatives").fork_index(epoch as u64).fork_index(out.len() as u64).rng();
        for (di, pos) in &positives {
            let demo = &set.demos[*di];
            for _ in 0..cfg.negatives_per_positive {
                let Some(neg) = pick_negative(demo, &pos.query_frame, &[&in_batch, &ctx.vocab], ctx.filter, &mut rng) else {
                    continue;
                };
                rows.push(BatchRow {
                    query_text: ctx.phrase(&neg.text, &neg.slots, &mut rng)?,
                    label: PhaseLabel::Unsatisfied,
                    indicator: false,
                    positive: false,
                    ..pos.clone()
                });
            }
        }
        if !rows.is_empty() {
            out.push(Batch { rows });
        }
    }
    Ok(out)
}

/// A batch with frames encoded and deduplicated and texts embedded.
#[derive(Debug, Clone)]
pub struct ResolvedBatch {
    pub grids: Vec<Arc<TokenGrid>>,
    pub query_frame: Vec<usize>,
    pub query_sem: Array2<f64>,
    pub labels: Vec<usize>,
    pub pre_frame: Vec<usize>,
    pub effect_frame: Vec<usize>,
    pub paraphrase_sem: Array2<f64>,
    pub indicators: Vec<bool>,
}

impl ResolvedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Batch {
    pub fn resolve(&self, frames: &dyn FrameStore, text: &TextStore, dim: usize) -> Result<ResolvedBatch> {
        let mut index: HashMap<&FrameRef, usize> = HashMap::new();
        let mut grids = Vec::new();
        let m = self.rows.len();
        let mut query_frame = Vec::with_capacity(m);
        let mut pre_frame = Vec::with_capacity(m);
        let mut effect_frame = Vec::with_capacity(m);
        let mut query_sem = Array2::zeros((m, dim));
        let mut paraphrase_sem = Array2::zeros((m, dim));
        for (r, row) in self.rows.iter().enumerate() {
            for (f, dst) in [
                (&row.query_frame, &mut query_frame),
                (&row.pre_frame, &mut pre_frame),
                (&row.effect_frame, &mut effect_frame),
            ] {
                let i = match index.get(f) {
                    Some(&i) => i,
                    None => {
                        grids.push(frames.grid(f)?);
                        index.insert(f, grids.len() - 1);
                        grids.len() - 1
                    }
                };
                dst.push(i);
            }
            query_sem.row_mut(r).assign(&text.encode(&row.query_text)?.values);
            paraphrase_sem.row_mut(r).assign(&text.encode(&row.paraphrase_text)?.values);
        }
        Ok(ResolvedBatch {
            grids,
            query_frame,
            query_sem,
            labels: self.rows.iter().map(|r| r.label.index()).collect(),
            pre_frame,
            effect_frame,
            paraphrase_sem,
            indicators: self.rows.iter().map(|r| r.indicator).collect(),
        })
    }
}

/// Condition, consistency and weighted total loss of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub condition: f64,
    pub consistency: f64,
    pub total: f64,
}

struct Forward {
    sp: crate::net::StatePass,
    cp: crate::net::ConditionPass,
    hp: crate::net::HeadPass,
    bundle: BatchBundle,
}

fn forward(net: &NetState, cfg: &NetConfig, rb: &ResolvedBatch) -> Result<Forward> {
    let refs: Vec<&TokenGrid> = rb.grids.iter().map(|g| g.as_ref()).collect();
    let sp = net.state_pass(cfg, &refs)?;
    let cp = net.condition_pass(cfg, &sp, &rb.query_frame, &rb.query_sem)?;
    let hp = net.head_pass(&cp.e);
    let d = cfg.working_dim;
    let m = rb.len();
    let mut cls_plus = Array2::zeros((m, d));
    let mut cls_minus = Array2::zeros((m, d));
    for r in 0..m {
        cls_plus.row_mut(r).assign(&sp.cls_hat.row(rb.effect_frame[r]));
        cls_minus.row_mut(r).assign(&sp.cls_hat.row(rb.pre_frame[r]));
    }
    let bundle = BatchBundle {
        logits: hp.logits.clone(),
        labels: one_hot(&rb.labels),
        cls_plus,
        cls_minus,
        paraphrase_semantics: rb.paraphrase_sem.clone(),
        indicators: rb.indicators.clone(),
    };
    Ok(Forward { sp, cp, hp, bundle })
}

/// The loss terms' inputs for one batch under the current weights.
pub fn batch_bundle(net: &NetState, cfg: &NetConfig, rb: &ResolvedBatch) -> Result<BatchBundle> {
    Ok(forward(net, cfg, rb)?.bundle)
}

/// Forward-only loss under fixed weights.
pub fn batch_loss(net: &NetState, cfg: &NetConfig, rb: &ResolvedBatch, weights: &LossWeights) -> Result<LossParts> {
    let (lc, lcons) = forward(net, cfg, rb)?.bundle.losses(net.tau())?;
    Ok(LossParts {
        condition: lc,
        consistency: lcons,
        total: weights.alpha * lc + weights.beta * lcons,
    })
}

/// Loss and gradients with respect to every parameter. Unfrozen weights are
/// calibrated on this batch first.
pub fn batch_loss_grad(net: &NetState, cfg: &NetConfig, rb: &ResolvedBatch, weights: &mut LossWeights, use_consistency: bool) -> Result<(LossParts, NetState)> {
    let fw = forward(net, cfg, rb)?;
    let b = &fw.bundle;
    let (lc, mut d_logits) = condition_loss_grad(&b.logits, &b.labels)?;
    let ea = action_features(&b.cls_plus, &b.cls_minus)?;
    let s = cosine_sim_matrix_guarded(&ea, &b.paraphrase_semantics)?;
    let cg = consistency_loss_grad(&s, &b.indicators, net.tau());
    if !weights.frozen {
        weights.calibrate(lc, cg.loss, use_consistency)?;
    }
    let parts = LossParts {
        condition: lc,
        consistency: cg.loss,
        total: weights.alpha * lc + weights.beta * cg.loss,
    };
    if !parts.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (condition {lc}, consistency {})",
            cg.loss
        )));
    }
    let mut grads = net.zeros_like();
    d_logits *= weights.alpha;
    let d_e = net.head_backward(&fw.hp, &d_logits, &mut grads);
    let (mut d_cls, d_locals) = net.condition_backward(cfg, &fw.sp, &fw.cp, &d_e, &mut grads);
    if weights.beta != 0.0 {
        let d_s = cg.d_s * weights.beta;
        let d_ea = cosine_backward(&ea, &b.paraphrase_semantics, &d_s);
        for r in 0..rb.len() {
            let mut plus = d_cls.row_mut(rb.effect_frame[r]);
            plus += &d_ea.row(r);
            let mut minus = d_cls.row_mut(rb.pre_frame[r]);
            minus -= &d_ea.row(r);
        }
        let inv_tau = 1.0 / net.tau();
        grads.log_inv_tau[0] += weights.beta * cg.d_inv_tau * inv_tau;
    }
    net.state_backward(cfg, &fw.sp, &d_cls, &d_locals, &mut grads);
    Ok((parts, grads))
}
