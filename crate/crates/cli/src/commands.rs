//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use condmon::corpus::{load_manifest, stratified_split, write_manifest, DemonstrationSet, DistinctAction, NegativeFilter, ParaphraseBank, Split};
use condmon::encoders::{precompute_features, EncoderSpec, EncodingStore, TextStore};
use condmon::evalkit::{evaluate, format_table, latency_benchmark, EvalOptions, ModelEval, NetQueryModel, OracleQueryModel, QueryModel};
use condmon::monitor::{run_monitor, timeline_svg, BehaviorTree, NetPredictor, OraclePredictor, Predictor, TreeFile};
use condmon::net::{load_checkpoint, Checkpoint, NetState, Variant};
use condmon::rng::Seed;
use condmon::synthworld::{generate_corpus, ScenarioScript, WorldNegativeFilter};
use condmon::trainkit::{fit, RecordEntry, TrainContext};
use serde::{Deserialize, Serialize};

use crate::config::{NegativePolicy, RunConfig};
use crate::{Cli, Command, DocsArgs, EvalArgs, MonitorArgs, PrepareArgs, SynthArgs, TrainArgs, VariantArg};

/// Everything needed to repeat a command: written as `run.toml`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub command: Command,
    pub config: RunConfig,
}

pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    fn create(parent: &Path, name: &str) -> anyhow::Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let mut path = parent.join(format!("{stamp}-{name}"));
        let mut k = 1;
        while path.exists() {
            path = parent.join(format!("{stamp}-{name}-{k}"));
            k += 1;
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        Ok(RunDir { path })
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Prepare(_) => "prepare",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::MonitorSim(_) => "monitor-sim",
        Command::Synth(_) => "synth",
        Command::Docs(_) => "docs",
        Command::Rerun(_) => "rerun",
    }
}

/// Config overrides implied by command flags; applied after `--set`.
fn flag_overrides(c: &Command) -> Vec<String> {
    let mut out = Vec::new();
    let mut put = |k: &str, v: String| out.push(format!("{k}={v}"));
    match c {
        Command::Prepare(a) => {
            if let Some(s) = a.seed {
                put("split.seed", s.to_string());
            }
        }
        Command::Train(a) => {
            if let Some(v) = a.variant {
                let (variant, consistency) = match v {
                    VariantArg::Full => ("full", true),
                    VariantArg::NoStateTransformer => ("no_state_transformer", false),
                    VariantArg::NoConditionTransformer => ("no_condition_transformer", false),
                    VariantArg::NoConsistency => ("full", false),
                };
                put("net.variant", format!("\"{variant}\""));
                put("train.use_consistency", consistency.to_string());
            }
            if let Some(e) = a.epochs {
                put("train.epochs", e.to_string());
            }
            if let Some(s) = a.seed {
                put("train.seed", s.to_string());
            }
            if let Some(lr) = a.lr {
                put("train.peak_lr", format!("{lr:e}"));
            }
            if a.no_paraphrase {
                put("train.paraphrase", "false".into());
            }
        }
        Command::Synth(a) => {
            if let Some(n) = a.successes {
                put("corpus.successes", n.to_string());
            }
            if let Some(n) = a.failures {
                put("corpus.failures", n.to_string());
            }
            if let Some(s) = a.seed {
                put("corpus.seed", s.to_string());
            }
        }
        _ => {}
    }
    out
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let (command, file, mut overrides) = match cli.command {
        Command::Rerun(a) => {
            let p = a.run_dir.join("run.toml");
            let text = std::fs::read_to_string(&p).map_err(|e| condmon::Error::io(&p, e))?;
            let snap: Snapshot = toml::from_str(&text).map_err(|e| condmon::Error::Parse {
                path: p.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
            (snap.command, Some(p), Vec::new())
        }
        c => (c, cli.config, cli.overrides),
    };
    overrides.extend(flag_overrides(&command));
    let config = RunConfig::resolve(file.as_deref(), &overrides)?;
    if let Command::Docs(a) = &command {
        return docs(a);
    }
    let run = RunDir::create(&cli.runs, command_name(&command))?;
    let snap = Snapshot { command, config };
    run.write("run.toml", toml::to_string_pretty(&snap).context("serializing run snapshot")?)?;
    eprintln!("run directory: {}", run.path.display());
    let Snapshot { command, config } = snap;
    match &command {
        Command::Prepare(a) => prepare(a, &config, &run),
        Command::Train(a) => train(a, &config, &run),
        Command::Eval(a) => eval(a, &config, &run),
        Command::MonitorSim(a) => monitor_sim(a, &config, &run),
        Command::Synth(a) => synth(a, &config, &run),
        Command::Docs(_) | Command::Rerun(_) => unreachable!("handled above"),
    }
}

/// Load a manifest through its absolute path so frame references survive
/// being rewritten into other directories.
fn load_set(path: &Path) -> anyhow::Result<DemonstrationSet> {
    let abs = std::fs::canonicalize(path).map_err(|e| condmon::Error::io(path, e))?;
    Ok(load_manifest(abs)?)
}

fn negative_filter(policy: NegativePolicy) -> Box<dyn NegativeFilter> {
    match policy {
        NegativePolicy::World => Box::new(WorldNegativeFilter::new()),
        NegativePolicy::Distinct => Box::new(DistinctAction),
    }
}

fn prepare(a: &PrepareArgs, cfg: &RunConfig, run: &RunDir) -> anyhow::Result<()> {
    let set = load_set(&a.manifest)?;
    let split = stratified_split(&set, cfg.split.train_fraction, cfg.split.seed)?;
    let out = a.out.clone().unwrap_or_else(|| run.path.clone());
    std::fs::create_dir_all(&out).map_err(|e| condmon::Error::io(&out, e))?;
    split.save(out.join("split.json"))?;
    write_manifest(&set.subset(&split.train)?, out.join("train.jsonl"))?;
    write_manifest(&set.subset(&split.val)?, out.join("val.jsonl"))?;
    println!("split {} demonstrations: {} train, {} val -> {}", set.len(), split.train.len(), split.val.len(), out.display());
    if a.features {
        let spec = cfg.encoder.spec()?;
        let index = precompute_features(&spec, &set, out.join("features"))?;
        write_manifest(&index.apply(&set)?, out.join("features.jsonl"))?;
        println!("wrote {} feature files", index.entries.len());
    }
    Ok(())
}

fn paraphrase_bank(explicit: Option<&Path>, manifest: &Path) -> anyhow::Result<Option<ParaphraseBank>> {
    if let Some(p) = explicit {
        return Ok(Some(ParaphraseBank::load(p)?));
    }
    let beside = manifest.parent().unwrap_or(Path::new("")).join("paraphrases.json");
    Ok(if beside.exists() { Some(ParaphraseBank::load(beside)?) } else { None })
}

fn train(a: &TrainArgs, cfg: &RunConfig, run: &RunDir) -> anyhow::Result<()> {
    let set = load_set(&a.manifest)?;
    let split = match &a.split {
        Some(p) => Split::load(p)?,
        None => stratified_split(&set, cfg.split.train_fraction, cfg.split.seed)?,
    };
    let train_set = set.subset(&split.train)?;
    let val_set = set.subset(&split.val)?;
    let spec = cfg.encoder.spec()?;
    let frames = EncodingStore::new(spec.clone());
    let text = TextStore::new(spec.clone());
    let filter = negative_filter(cfg.eval.negatives);
    let bank = if cfg.train.paraphrase { paraphrase_bank(a.paraphrases.as_deref(), &a.manifest)? } else { None };
    let progress = |e: &RecordEntry| {
        if let RecordEntry::Epoch { epoch, train_loss, phase_accuracy, anomaly_f1, wall_seconds, .. } = e {
            eprintln!(
                "epoch {epoch:>3}  loss {train_loss:.4}  phase acc {}  anomaly f1 {}  {wall_seconds:.1}s",
                fmt_opt(*phase_accuracy),
                fmt_opt(*anomaly_f1)
            );
        }
    };
    let ctx = TrainContext {
        frames: &frames,
        text: &text,
        filter: filter.as_ref(),
        paraphrase: bank.as_ref(),
        encoder: Some(spec),
        run_dir: Some(run.path.clone()),
        on_epoch: Some(&progress),
    };
    let net = NetState::init(&cfg.net, Seed(cfg.train.seed))?;
    let out = fit(net, &cfg.net, &cfg.train, &train_set, &val_set, &ctx)?;
    let summary = serde_json::json!({
        "best_epoch": out.best_epoch,
        "best": out.best_eval,
        "last": out.last_eval,
        "weights": out.weights,
    });
    run.write("metrics.json", serde_json::to_string_pretty(&summary)?)?;
    if let Some(e) = &out.best_eval {
        print!("{}", format_table(&[(format!("best (epoch {})", out.best_epoch), e)]));
    }
    println!("checkpoint: {}", run.path.join("best.ckpt").display());
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Ok(load_checkpoint(path)?)
}

fn encoder_of(ckpt: &Checkpoint, cfg: &RunConfig) -> anyhow::Result<EncoderSpec> {
    Ok(match &ckpt.encoder {
        Some(s) => s.clone(),
        None => cfg.encoder.spec()?,
    })
}

fn eval(a: &EvalArgs, cfg: &RunConfig, run: &RunDir) -> anyhow::Result<()> {
    let mut set = load_set(&a.manifest)?;
    if let Some(p) = &a.split {
        set = set.subset(&Split::load(p)?.val)?;
    }
    let filter = negative_filter(cfg.eval.negatives);
    let bank = match &a.paraphrases {
        Some(p) => Some(ParaphraseBank::load(p)?),
        None => None,
    };
    let opts = EvalOptions {
        filter: filter.as_ref(),
        seed: Seed(cfg.eval.seed),
        paraphrase: bank.as_ref(),
    };
    let ckpt = match &a.checkpoint {
        Some(p) if !a.oracle => Some(checkpoint(p)?),
        _ => None,
    };
    let (name, mut result): (String, ModelEval) = match &ckpt {
        None => ("oracle".into(), evaluate(&OracleQueryModel, &set, &opts)?),
        Some(c) => {
            let spec = encoder_of(c, cfg)?;
            let frames = EncodingStore::new(spec.clone());
            let text = TextStore::new(spec);
            let model = NetQueryModel {
                net: &c.state,
                cfg: &c.config,
                frames: &frames,
                text: &text,
            };
            (variant_name(c.config.variant), evaluate(&model as &dyn QueryModel, &set, &opts)?)
        }
    };
    if a.bench {
        let (net, net_cfg) = match ckpt {
            Some(c) => (c.state, c.config),
            None => (NetState::init(&cfg.net, Seed(cfg.eval.seed))?, cfg.net.clone()),
        };
        let stats = latency_benchmark(&net, &net_cfg, cfg.eval.bench_batches, cfg.eval.bench_actions, Seed(cfg.eval.seed))?;
        println!(
            "latency: {:.3} ± {:.3} ms per batch of {} actions ({} batches)",
            stats.mean_ms, stats.std_ms, cfg.eval.bench_actions, stats.samples
        );
        result.phase.latency = Some(stats);
    }
    run.write("phase_report.json", serde_json::to_string_pretty(&result.phase)?)?;
    run.write("anomaly_report.json", serde_json::to_string_pretty(&result.anomaly)?)?;
    print!("{}", format_table(&[(name, &result)]));
    Ok(())
}

fn variant_name(v: Variant) -> String {
    match v {
        Variant::Full => "full",
        Variant::NoStateTransformer => "no_state_transformer",
        Variant::NoConditionTransformer => "no_condition_transformer",
    }
    .into()
}

fn monitor_sim(a: &MonitorArgs, cfg: &RunConfig, run: &RunDir) -> anyhow::Result<()> {
    let script = ScenarioScript::load(&a.script)?;
    let tree_file = match &a.tree {
        Some(p) => TreeFile::load(p)?,
        None => script.sequence_tree(),
    };
    let mut tree = BehaviorTree::new(&tree_file)?;
    let ckpt = match &a.checkpoint {
        Some(p) if !a.oracle => Some(checkpoint(p)?),
        _ => None,
    };
    let log = match &ckpt {
        None => {
            let mut world = script.closed_loop(a.seed, None, a.max_frames)?;
            run_monitor(&mut tree, &OraclePredictor, &mut world, &cfg.monitor)?
        }
        Some(c) => {
            let spec = encoder_of(c, cfg)?;
            if spec.grid_side != script.grid_side {
                bail!(condmon::Error::Config(format!(
                    "script renders a {0}x{0} grid but the checkpoint's encoder expects {1}x{1}",
                    script.grid_side, spec.grid_side
                )));
            }
            let text = TextStore::new(spec.clone());
            let predictor = NetPredictor {
                net: &c.state,
                cfg: &c.config,
                text: &text,
            };
            let mut world = script.closed_loop(a.seed, Some(spec), a.max_frames)?;
            run_monitor(&mut tree, &predictor as &dyn Predictor, &mut world, &cfg.monitor)?
        }
    };
    log.write_jsonl(run.path.join("events.jsonl"))?;
    run.write("timeline.svg", timeline_svg(&log, &script.name))?;
    let episodes = log.anomaly_episodes();
    let summary = serde_json::json!({
        "frames": log.events.len(),
        "anomaly_episodes": episodes,
        "end": log.end,
    });
    run.write("summary.json", serde_json::to_string_pretty(&summary)?)?;
    println!("{}: {} frames, {} anomaly episode(s)", script.name, log.events.len(), episodes.len());
    for (first, last) in &episodes {
        let e = &log.events[*first];
        println!("  anomaly at frame {first}..={last} during `{}` ({:?})", e.action.as_deref().unwrap_or("-"), e.phase);
    }
    println!("end: {}", serde_json::to_string(&log.end)?);
    Ok(())
}

fn synth(a: &SynthArgs, cfg: &RunConfig, run: &RunDir) -> anyhow::Result<()> {
    let out = a.out.clone().unwrap_or_else(|| run.path.join("corpus"));
    std::fs::create_dir_all(&out).map_err(|e| condmon::Error::io(&out, e))?;
    let root = out.display().to_string();
    let corpus = generate_corpus(&cfg.corpus, &root)?;
    corpus.write(&out)?;
    println!(
        "generated {} demonstrations ({} successful, {} failed) over {} frames -> {}",
        corpus.set.len(),
        corpus.set.iter().filter(|d| d.success).count(),
        corpus.set.iter().filter(|d| !d.success).count(),
        corpus.frame_count(),
        out.join("manifest.jsonl").display()
    );
    Ok(())
}

fn docs(a: &DocsArgs) -> anyhow::Result<()> {
    let page = crate::docs::reference_page();
    if let Some(dir) = a.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| condmon::Error::io(dir, e))?;
        }
    }
    std::fs::write(&a.out, page).map_err(|e| condmon::Error::io(&a.out, e))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
