//! Phase-classification and anomaly-detection metrics, model evaluation over
//! a demonstration set, and inference latency measurement.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    phase_label, pick_negative, sample_paraphrase, Demonstration, DemonstrationSet, NegativeFilter, ParaphraseBank,
    PhaseLabel, Segment,
};
use crate::encoders::{EncoderSpec, FrameStore, SemanticVector, TextStore, TokenGrid};
use crate::error::{Error, Result};
use crate::monitor::{decide, expected_phase, filter_update, ActivePhase, Expected, FilterState};
use crate::net::{softmax3, NetConfig, NetState};
use crate::rng::Seed;

/// Square count table, rows = truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_indices(preds: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != truth.len() {
            return Err(Error::Input(format!(
                "{} predictions for {} labels",
                preds.len(),
                truth.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&p, &t) in preds.iter().zip(truth) {
            if p >= classes || t >= classes {
                return Err(Error::Input(format!("class index outside 0..{classes}")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Precision, recall and F1 of one class, with 0 for empty denominators.
    pub fn class_metrics(&self, c: usize) -> ClassMetrics {
        let tp = self.counts[c][c] as f64;
        let predicted: u64 = (0..self.classes()).map(|t| self.counts[t][c]).sum();
        let actual: u64 = self.counts[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Phase,
    Anomaly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

impl LatencyStats {
    /// Mean and population standard deviation.
    pub fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len().max(1) as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        LatencyStats {
            mean_ms: mean,
            std_ms: var.sqrt(),
            samples: ms.len(),
        }
    }
}

/// Metrics for one task. Phase reports macro-average over the three classes;
/// anomaly reports treat "anomalous" (class 1) as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub samples: u64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    pub fn from_confusion(task: Task, confusion: ConfusionMatrix) -> Self {
        let total = confusion.total();
        let accuracy = if total == 0 { 0.0 } else { confusion.trace() as f64 / total as f64 };
        let per_class: Vec<ClassMetrics> = (0..confusion.classes()).map(|c| confusion.class_metrics(c)).collect();
        let (precision, recall, f1) = match task {
            Task::Phase => {
                let k = per_class.len() as f64;
                (
                    per_class.iter().map(|m| m.precision).sum::<f64>() / k,
                    per_class.iter().map(|m| m.recall).sum::<f64>() / k,
                    per_class.iter().map(|m| m.f1).sum::<f64>() / k,
                )
            }
            Task::Anomaly => (per_class[1].precision, per_class[1].recall, per_class[1].f1),
        };
        EvalReport {
            task,
            accuracy,
            precision,
            recall,
            f1,
            per_class,
            samples: total,
            confusion,
            latency: None,
        }
    }

    /// The same report rebuilt from the stored confusion matrix.
    pub fn recompute(&self) -> Self {
        let mut r = Self::from_confusion(self.task, self.confusion.clone());
        r.latency = self.latency;
        r
    }
}

pub fn phase_metrics(preds: &[PhaseLabel], truth: &[PhaseLabel]) -> Result<EvalReport> {
    let p: Vec<usize> = preds.iter().map(|l| l.index()).collect();
    let t: Vec<usize> = truth.iter().map(|l| l.index()).collect();
    Ok(EvalReport::from_confusion(Task::Phase, ConfusionMatrix::from_indices(&p, &t, 3)?))
}

pub fn anomaly_metrics(decisions: &[bool], truth: &[bool]) -> Result<EvalReport> {
    let p: Vec<usize> = decisions.iter().map(|&b| b as usize).collect();
    let t: Vec<usize> = truth.iter().map(|&b| b as usize).collect();
    Ok(EvalReport::from_confusion(Task::Anomaly, ConfusionMatrix::from_indices(&p, &t, 2)?))
}

/// Run the online anomaly filter over a recorded demonstration.
pub fn demo_anomaly_decision(per_frame_preds: &[PhaseLabel], expected: &[Expected]) -> bool {
    let mut state = FilterState::default();
    let mut any = false;
    for (&p, &e) in per_frame_preds.iter().zip(expected) {
        let (next, fire) = filter_update(state, e, p);
        state = next;
        any |= fire;
    }
    any
}

/// Expected phase of every frame of a demonstration under its own action.
pub fn expected_sequence(demo: &Demonstration) -> Vec<Expected> {
    (0..demo.frame_count())
        .map(|i| match demo.segments.segment_of(i) {
            Some(Segment::Pre) => expected_phase(ActivePhase::Pre),
            Some(Segment::Post) => expected_phase(ActivePhase::Effect),
            _ => expected_phase(ActivePhase::Core),
        })
        .collect()
}

/// Answers phase queries `(frame index, action text)` about one demonstration.
pub trait QueryModel {
    fn predict(&self, demo: &Demonstration, queries: &[(usize, String)]) -> Result<Vec<PhaseLabel>>;
}

/// Ground-truth predictor: answers from the corpus labels.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleQueryModel;

impl QueryModel for OracleQueryModel {
    fn predict(&self, demo: &Demonstration, queries: &[(usize, String)]) -> Result<Vec<PhaseLabel>> {
        queries.iter().map(|(i, q)| phase_label(demo, *i, q)).collect()
    }
}

/// Network predictor over a frame store and a text encoder.
pub struct NetQueryModel<'a> {
    pub net: &'a NetState,
    pub cfg: &'a NetConfig,
    pub frames: &'a dyn FrameStore,
    pub text: &'a TextStore,
}

impl QueryModel for NetQueryModel<'_> {
    fn predict(&self, demo: &Demonstration, queries: &[(usize, String)]) -> Result<Vec<PhaseLabel>> {
        let mut slot: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, _) in queries {
            let n = slot.len();
            slot.entry(*i).or_insert(n);
        }
        let mut order: Vec<(usize, usize)> = slot.iter().map(|(&f, &s)| (s, f)).collect();
        order.sort();
        let grids: Vec<_> = order
            .iter()
            .map(|&(_, f)| {
                let r = demo.frames.get(f).ok_or(Error::Bounds { index: f, len: demo.frame_count() })?;
                self.frames.grid(r)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&TokenGrid> = grids.iter().map(|g| g.as_ref()).collect();
        let sp = self.net.state_pass(self.cfg, &refs)?;
        let rows: Vec<usize> = queries.iter().map(|(i, _)| slot[i]).collect();
        let mut sem = Array2::zeros((queries.len(), self.cfg.working_dim));
        for (r, (_, q)) in queries.iter().enumerate() {
            sem.row_mut(r).assign(&self.text.encode(q)?.values);
        }
        let cp = self.net.condition_pass(self.cfg, &sp, &rows, &sem)?;
        let hp = self.net.head_pass(&cp.e);
        Ok(hp
            .logits
            .rows()
            .into_iter()
            .map(|l| decide(softmax3([l[0], l[1], l[2]])))
            .collect())
    }
}

/// How queries are phrased during evaluation.
pub struct EvalOptions<'a> {
    pub filter: &'a dyn NegativeFilter,
    pub seed: Seed,
    /// Query with paraphrased descriptions drawn from this bank.
    pub paraphrase: Option<&'a ParaphraseBank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub phase: EvalReport,
    pub anomaly: EvalReport,
}

impl ModelEval {
    /// Checkpoint ranking key: anomaly F1, then phase accuracy.
    pub fn score(&self) -> (f64, f64) {
        (self.anomaly.f1, self.phase.accuracy)
    }
}

/// Query every frame with its own action and with one admissible mismatched
/// action, and run the anomaly filter over each demonstration.
pub fn evaluate(model: &dyn QueryModel, set: &DemonstrationSet, opts: &EvalOptions) -> Result<ModelEval> {
    let vocab = set.actions();
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut decisions = Vec::new();
    let mut anomalous = Vec::new();
    for demo in set.iter() {
        let mut rng = opts.seed.fork(&demo.id).rng();
        let mut queries = Vec::new();
        let mut labels = Vec::new();
        let own_text = match opts.paraphrase {
            Some(bank) => sample_paraphrase(bank, &demo.action_text, &demo.object_slots, &mut rng)?,
            None => demo.action_text.clone(),
        };
        for i in 0..demo.frame_count() {
            queries.push((i, own_text.clone()));
            labels.push(phase_label(demo, i, &demo.action_text)?);
        }
        let n_own = queries.len();
        for i in 0..demo.frame_count() {
            if let Some(neg) = pick_negative(demo, &demo.frames[i], &[&vocab], opts.filter, &mut rng) {
                let text = match opts.paraphrase {
                    Some(bank) => sample_paraphrase(bank, &neg.text, &neg.slots, &mut rng)?,
                    None => neg.text.clone(),
                };
                queries.push((i, text));
                labels.push(PhaseLabel::Unsatisfied);
            }
        }
        let out = model.predict(demo, &queries)?;
        decisions.push(demo_anomaly_decision(&out[..n_own], &expected_sequence(demo)));
        anomalous.push(demo.is_anomalous());
        preds.extend(out);
        truth.extend(labels);
    }
    Ok(ModelEval {
        phase: phase_metrics(&preds, &truth)?,
        anomaly: anomaly_metrics(&decisions, &anomalous)?,
    })
}

/// Per-batch inference time: one state pass on a single frame plus
/// `actions_per_batch` condition queries and head evaluations.
pub fn latency_benchmark(net: &NetState, cfg: &NetConfig, n_batches: usize, actions_per_batch: usize, seed: Seed) -> Result<LatencyStats> {
    let spec = EncoderSpec::synthetic(cfg.grid_side, cfg.working_dim, seed.0);
    let mut rng = seed.fork("latency").rng();
    let tokens = Array2::from_shape_simple_fn((cfg.patches(), cfg.working_dim), || StandardNormal.sample(&mut rng));
    let grid = TokenGrid::new(tokens, cfg.grid_side)?;
    let actions: Vec<SemanticVector> = (0..actions_per_batch)
        .map(|k| crate::encoders::encode_text(&spec, &format!("action {k}")))
        .collect::<Result<_>>()?;
    let refs: Vec<&SemanticVector> = actions.iter().collect();
    let mut samples = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let t0 = Instant::now();
        let out = net.predict_all(cfg, &[&grid], &refs)?;
        std::hint::black_box(out);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(&samples))
}

/// Table rows shaped like `model | anomaly acc P R F1 | phase acc P R F1`.
pub fn format_table(rows: &[(String, &ModelEval)]) -> String {
    let mut s = format!(
        "{:<24} | {:>6} {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} {:>6}\n",
        "model", "acc", "prec", "rec", "f1", "acc", "prec", "rec", "f1"
    );
    s.push_str(&format!("{:<24} | {:^27} | {:^27}\n", "", "anomaly detection", "condition learning"));
    for (name, e) in rows {
        let a = &e.anomaly;
        let p = &e.phase;
        s.push_str(&format!(
            "{:<24} | {:>6.3} {:>6.3} {:>6.3} {:>6.3} | {:>6.3} {:>6.3} {:>6.3} {:>6.3}\n",
            name, a.accuracy, a.precision, a.recall, a.f1, p.accuracy, p.precision, p.recall, p.f1
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::demo;
    use crate::corpus::DistinctAction;
    use proptest::prelude::*;
    use PhaseLabel::*;

    fn from_confusion(c: [[u64; 3]; 3]) -> (Vec<PhaseLabel>, Vec<PhaseLabel>) {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (ti, row) in c.iter().enumerate() {
            for (pi, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    t.push(PhaseLabel::from_index(ti).unwrap());
                    p.push(PhaseLabel::from_index(pi).unwrap());
                }
            }
        }
        (p, t)
    }

    #[test]
    fn perfect_and_degenerate() {
        let (p, t) = from_confusion([[5, 0, 0], [0, 5, 0], [0, 0, 5]]);
        let r = phase_metrics(&p, &t).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let t: Vec<_> = [Precondition, Effect, Unsatisfied].repeat(4);
        let p = vec![Effect; 12];
        assert!((phase_metrics(&p, &t).unwrap().accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(phase_metrics(&p[..3], &t), Err(Error::Input(_))));
    }

    #[test]
    fn macro_f1_worked_example() {
        // class 0: P 4/5 R 4/5; class 1: P 3/4 R 3/5; class 2: P 4/6 R 4/5
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let oracle = (f(0.8, 0.8) + f(0.75, 0.6) + f(4.0 / 6.0, 0.8)) / 3.0;
        let (p, t) = from_confusion([[4, 1, 0], [0, 3, 2], [1, 0, 4]]);
        let r = phase_metrics(&p, &t).unwrap();
        assert!((r.f1 - oracle).abs() < 1e-15);
        assert!((r.f1 - 0.731_313_131_313_131_3).abs() < 1e-12);
        assert!((r.accuracy - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn anomaly_worked_examples() {
        let mut d = vec![true; 8];
        d.extend([true; 2]);
        d.extend([false; 1]);
        d.extend([false; 9]);
        let mut t = vec![true; 8];
        t.extend([false; 2]);
        t.extend([true; 1]);
        t.extend([false; 9]);
        let r = anomaly_metrics(&d, &t).unwrap();
        assert!((r.precision - 0.8).abs() < 1e-15);
        assert!((r.recall - 8.0 / 9.0).abs() < 1e-15);
        let f1 = 2.0 * 0.8 * (8.0 / 9.0) / (0.8 + 8.0 / 9.0);
        assert!((r.f1 - f1).abs() < 1e-15);
        assert!((r.f1 - 0.842_105_263_157_894_7).abs() < 1e-12);

        let truth: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let r = anomaly_metrics(&[false; 10], &truth).unwrap();
        assert_eq!(r.recall, 0.0);
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        let r = anomaly_metrics(&truth, &truth).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn demo_decisions() {
        let eff = Expected::Label(Effect);
        assert!(!demo_anomaly_decision(&[Effect; 10], &[eff; 10]));
        assert!(demo_anomaly_decision(&[Unsatisfied; 8], &[eff; 8]));
        let mut p = vec![Unsatisfied; 7];
        p.push(Effect);
        p.extend([Unsatisfied; 7]);
        assert!(!demo_anomaly_decision(&p, &[eff; 15]));
        assert!(!demo_anomaly_decision(&[Unsatisfied; 20], &[Expected::Suspended; 20]));
    }

    #[test]
    fn single_latency_sample_has_zero_spread() {
        let s = LatencyStats::from_samples(&[3.5]);
        assert_eq!((s.mean_ms, s.std_ms, s.samples), (3.5, 0.0, 1));
    }

    #[test]
    fn oracle_evaluation_is_perfect() {
        let set = DemonstrationSet::new(
            vec![
                demo("a", "pick up cup", &["cup"], true, 8, 3, 9),
                demo("b", "wipe table", &["table"], false, 8, 3, 9),
                demo("c", "place bottle on table", &["bottle", "table"], true, 8, 3, 9),
            ],
            vec![],
        )
        .unwrap();
        let opts = EvalOptions {
            filter: &DistinctAction,
            seed: Seed(0),
            paraphrase: None,
        };
        let e = evaluate(&OracleQueryModel, &set, &opts).unwrap();
        assert_eq!(e.phase.accuracy, 1.0);
        assert_eq!(e.phase.f1, 1.0);
        assert_eq!(e.anomaly.f1, 1.0);
        assert_eq!(e.anomaly.accuracy, 1.0);
        assert_eq!(e.phase.samples, 120);
    }

    fn brute(preds: &[usize], truth: &[usize], k: usize) -> Vec<(u64, u64, u64)> {
        (0..k)
            .map(|c| {
                let mut tp = 0;
                let mut fp = 0;
                let mut fn_ = 0;
                for (&p, &t) in preds.iter().zip(truth) {
                    match (p == c, t == c) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        _ => {}
                    }
                }
                (tp, fp, fn_)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn relabeling_keeps_macro_metrics(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60), perm in Just([2usize, 0, 1])) {
            let p: Vec<_> = pairs.iter().map(|x| PhaseLabel::from_index(x.0).unwrap()).collect();
            let t: Vec<_> = pairs.iter().map(|x| PhaseLabel::from_index(x.1).unwrap()).collect();
            let pp: Vec<_> = pairs.iter().map(|x| PhaseLabel::from_index(perm[x.0]).unwrap()).collect();
            let tp: Vec<_> = pairs.iter().map(|x| PhaseLabel::from_index(perm[x.1]).unwrap()).collect();
            let a = phase_metrics(&p, &t).unwrap();
            let b = phase_metrics(&pp, &tp).unwrap();
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            prop_assert!((a.precision - b.precision).abs() < 1e-12);
            prop_assert_eq!(a.accuracy, b.accuracy);
            for c in 0..3 {
                prop_assert_eq!(a.per_class[c], b.per_class[perm[c]]);
            }
        }

        #[test]
        fn counts_match_brute_force(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..80)) {
            let p: Vec<usize> = pairs.iter().map(|x| x.0).collect();
            let t: Vec<usize> = pairs.iter().map(|x| x.1).collect();
            let m = ConfusionMatrix::from_indices(&p, &t, 3).unwrap();
            for (c, (tp, fp, fn_)) in brute(&p, &t, 3).into_iter().enumerate() {
                prop_assert_eq!(m.counts[c][c], tp);
                prop_assert_eq!((0..3).map(|r| m.counts[r][c]).sum::<u64>() - m.counts[c][c], fp);
                prop_assert_eq!(m.counts[c].iter().sum::<u64>() - m.counts[c][c], fn_);
            }
            let r = EvalReport::from_confusion(Task::Phase, m);
            prop_assert_eq!(r.recompute(), r);
        }
    }
}
