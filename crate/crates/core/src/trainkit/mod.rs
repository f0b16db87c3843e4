//! Training loop: seeded batching over demonstrations, AdamW with decoupled
//! weight decay, warmup plus cosine schedule, per-epoch validation and
//! checkpointing.

mod batch;
mod gradcheck;
mod optim;
mod record;
mod schedule;

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use batch::{
    batch_bundle, batch_loss, batch_loss_grad, epoch_order, make_batches, Batch, BatchContext, BatchRow, LossParts,
    ResolvedBatch,
};
pub use gradcheck::{gradient_check, random_batch, GradCheck};
pub use optim::{AdamW, AdamWConfig};
pub use record::{RecordEntry, TrainRecord};
pub use schedule::{lr_at, warmup_steps};

use crate::corpus::{DemonstrationSet, NegativeFilter, ParaphraseBank};
use crate::encoders::{EncoderSpec, FrameStore, TextStore};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalOptions, ModelEval, NetQueryModel};
use crate::net::{save_checkpoint, Checkpoint, NetConfig, NetState, RngState, Variant};
use crate::objectives::LossWeights;
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Demonstrations per batch.
    pub batch_demos: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of all optimizer steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Learning rate reached at the final step.
    pub min_lr: f64,
    pub seed: u64,
    /// Positive rows sampled per demonstration per epoch.
    pub triplets_per_demo: usize,
    /// Mismatched-action rows per positive row.
    pub negatives_per_positive: usize,
    /// Probability that a positive row queries a core frame instead of the
    /// triplet's pre or effect frame.
    pub core_query_fraction: f64,
    pub augmentation_probability: f64,
    /// Draw query and consistency descriptions from the paraphrase bank.
    pub paraphrase: bool,
    /// When false the consistency weight is fixed at 0. Architectural
    /// ablations always train without it.
    pub use_consistency: bool,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_demos: 32,
            peak_lr: 5e-4,
            weight_decay: 0.2,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            warmup_fraction: 0.05,
            min_lr: 1e-6,
            seed: 0,
            triplets_per_demo: 1,
            negatives_per_positive: 1,
            core_query_fraction: 0.2,
            augmentation_probability: 0.5,
            paraphrase: true,
            use_consistency: true,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_demos == 0 || self.triplets_per_demo == 0 {
            return bad("epochs, batch_demos and triplets_per_demo must be positive");
        }
        if !(self.peak_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.peak_lr) {
            return bad("learning rates must satisfy 0 < min_lr <= peak_lr");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 0.5) {
            return bad("warmup_fraction must lie in (0, 0.5)");
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("optimizer moments must lie in [0, 1), eps > 0, weight_decay >= 0");
        }
        for (name, p) in [
            ("core_query_fraction", self.core_query_fraction),
            ("augmentation_probability", self.augmentation_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Batches per epoch for a set of `n` demonstrations.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_demos)
    }
}

/// Encoders, negative policy and output location used by [`fit`].
pub struct TrainContext<'a> {
    pub frames: &'a dyn FrameStore,
    pub text: &'a TextStore,
    pub filter: &'a dyn NegativeFilter,
    pub paraphrase: Option<&'a ParaphraseBank>,
    /// Stored in checkpoints so inference can rebuild the encoders.
    pub encoder: Option<EncoderSpec>,
    /// Receives `config.json`, `train_record.jsonl`, `best.ckpt`, `last.ckpt`.
    pub run_dir: Option<PathBuf>,
    pub on_epoch: Option<&'a (dyn Fn(&RecordEntry) + Sync)>,
}

#[derive(Debug)]
pub struct FitOutcome {
    /// Parameters with the best validation score, or the last ones when the
    /// validation set is empty.
    pub best: NetState,
    pub last: NetState,
    pub best_epoch: usize,
    pub best_eval: Option<ModelEval>,
    pub last_eval: Option<ModelEval>,
    pub weights: LossWeights,
    pub record: TrainRecord,
}

fn grad_norm(g: &NetState) -> f64 {
    let mut s = 0.0;
    g.visit(&mut |_, x, _| s += x.iter().map(|v| v * v).sum::<f64>());
    s.sqrt()
}

fn write_checkpoint(dir: &Path, name: &str, cfg: &NetConfig, ctx: &TrainContext, state: &NetState, rng: RngState, meta: serde_json::Value) -> Result<()> {
    save_checkpoint(
        dir.join(name),
        &Checkpoint {
            config: cfg.clone(),
            encoder: ctx.encoder.clone(),
            state: state.clone(),
            rng,
            meta,
        },
    )
}

/// Validation metrics of `net` on `val`, with paraphrased queries when the
/// run trains with paraphrasing.
pub fn validate(net: &NetState, cfg: &NetConfig, tc: &TrainConfig, val: &DemonstrationSet, ctx: &TrainContext) -> Result<ModelEval> {
    let model = NetQueryModel {
        net,
        cfg,
        frames: ctx.frames,
        text: ctx.text,
    };
    let opts = EvalOptions {
        filter: ctx.filter,
        seed: Seed(tc.seed).fork("validation"),
        paraphrase: if tc.paraphrase { ctx.paraphrase } else { None },
    };
    evaluate(&model, val, &opts)
}

/// Train `net` on `train`, validating on `val` after every epoch.
pub fn fit(mut net: NetState, cfg: &NetConfig, tc: &TrainConfig, train: &DemonstrationSet, val: &DemonstrationSet, ctx: &TrainContext) -> Result<FitOutcome> {
    cfg.validate()?;
    tc.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(spec) = &ctx.encoder {
        if spec.working_dim != cfg.working_dim || spec.grid_side != cfg.grid_side {
            return Err(Error::Config(format!(
                "encoder produces {}x{} grids of width {}, network expects {}x{} of width {}",
                spec.grid_side, spec.grid_side, spec.working_dim, cfg.grid_side, cfg.grid_side, cfg.working_dim
            )));
        }
    }
    let mut record = match &ctx.run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let snapshot = serde_json::json!({ "net": cfg, "train": tc });
            let path = dir.join("config.json");
            std::fs::write(&path, serde_json::to_string_pretty(&snapshot).expect("config serializes"))
                .map_err(|e| Error::io(&path, e))?;
            TrainRecord::create(dir.join("train_record.jsonl"))?
        }
        None => TrainRecord::in_memory(),
    };
    let bctx = BatchContext::new(train, tc, ctx.paraphrase, ctx.filter)?;
    let total = tc.epochs * tc.batches_per_epoch(train.len());
    let use_consistency = tc.use_consistency && cfg.variant == Variant::Full;
    let mut opt = AdamW::new(tc.adamw(), &net);
    let mut weights = LossWeights::pending();
    let mut best: Option<(NetState, usize, ModelEval)> = None;
    let mut last_eval = None;
    let started = Instant::now();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<(usize, Batch, ResolvedBatch)>>(2);
        let bctx = &bctx;
        scope.spawn(move || {
            for epoch in 0..tc.epochs {
                let batches = match make_batches(train, tc, epoch, bctx) {
                    Ok(b) => b,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                for b in batches {
                    let item = b.resolve(ctx.frames, ctx.text, cfg.working_dim).map(|r| (epoch, b, r));
                    let failed = item.is_err();
                    if tx.send(item).is_err() || failed {
                        return;
                    }
                }
            }
        });

        let mut epoch_loss = (0.0, 0usize);
        let mut current = 0;
        let mut close_epoch = |epoch: usize, loss: (f64, usize), net: &NetState, record: &mut TrainRecord, opt: &AdamW, weights: &LossWeights| -> Result<()> {
            let eval = if val.is_empty() { None } else { Some(validate(net, cfg, tc, val, ctx)?) };
            let improved = match (&eval, &best) {
                (Some(e), Some((_, _, b))) => e.score() > b.score(),
                (Some(_), None) => true,
                (None, _) => false,
            };
            let entry = RecordEntry::Epoch {
                epoch,
                train_loss: loss.0 / loss.1.max(1) as f64,
                phase_accuracy: eval.as_ref().map(|e| e.phase.accuracy),
                anomaly_f1: eval.as_ref().map(|e| e.anomaly.f1),
                improved,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            record.push(entry.clone())?;
            record.flush()?;
            if let Some(cb) = ctx.on_epoch {
                cb(&entry);
            }
            if improved {
                let e = eval.clone().expect("improved implies an evaluation");
                if let Some(dir) = &ctx.run_dir {
                    let meta = serde_json::json!({ "epoch": epoch, "weights": weights, "eval": e });
                    write_checkpoint(dir, "best.ckpt", cfg, ctx, net, RngState { seed: tc.seed, step: opt.steps() }, meta)?;
                }
                best = Some((net.clone(), epoch, e));
            }
            last_eval = eval;
            Ok(())
        };

        for item in rx {
            let (epoch, batch, rb) = item?;
            if epoch != current {
                close_epoch(current, epoch_loss, &net, &mut record, &opt, &weights)?;
                epoch_loss = (0.0, 0);
                current = epoch;
            }
            let step = opt.steps() as usize;
            let lr = lr_at((step + 1).min(total), total, tc)?;
            let (parts, mut grads) = match batch_loss_grad(&net, cfg, &rb, &mut weights, use_consistency) {
                Ok(x) => x,
                Err(Error::Numeric(message)) => {
                    let mut ids: Vec<String> = batch.rows.iter().map(|r| r.demo_id.clone()).collect();
                    ids.dedup();
                    record.push(RecordEntry::Abort { epoch, step, demo_ids: ids, message: message.clone() })?;
                    record.flush()?;
                    return Err(Error::Numeric(format!("epoch {epoch}, step {step}: {message}")));
                }
                Err(e) => return Err(e),
            };
            if let Some(clip) = tc.grad_clip {
                let n = grad_norm(&grads);
                if n > clip {
                    let k = clip / n;
                    grads.visit_mut(&mut |_, g, _| g.iter_mut().for_each(|v| *v *= k));
                }
            }
            opt.step(&mut net, &grads, lr);
            record.push(RecordEntry::Step {
                epoch,
                step,
                lr,
                condition: parts.condition,
                consistency: parts.consistency,
                total: parts.total,
            })?;
            epoch_loss.0 += parts.total;
            epoch_loss.1 += 1;
        }
        close_epoch(current, epoch_loss, &net, &mut record, &opt, &weights)
    })?;

    if let Some(dir) = &ctx.run_dir {
        let meta = serde_json::json!({ "epoch": tc.epochs - 1, "weights": weights, "eval": last_eval });
        write_checkpoint(dir, "last.ckpt", cfg, ctx, &net, RngState { seed: tc.seed, step: opt.steps() }, meta)?;
    }
    let (best_state, best_epoch, best_eval) = match best {
        Some((s, e, m)) => (s, e, Some(m)),
        None => (net.clone(), tc.epochs - 1, None),
    };
    Ok(FitOutcome {
        best: best_state,
        last: net,
        best_epoch,
        best_eval,
        last_eval,
        weights,
        record,
    })
}
