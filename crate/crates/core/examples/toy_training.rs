//! Train on a generated toy corpus and print per-epoch validation metrics.
//!
//! `cargo run --release -p condmon --example toy_training -- [variant] [epochs] [seed]`

use condmon::encoders::{EncoderSpec, TextStore};
use condmon::net::{NetConfig, NetState, Variant};
use condmon::rng::Seed;
use condmon::synthworld::{generate_corpus, paraphrase_bank, CorpusSpec};
use condmon::trainkit::{fit, RecordEntry, TrainConfig, TrainContext};

fn main() -> condmon::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let variant = match args.get(1).map(String::as_str) {
        Some("no_state_transformer") => Variant::NoStateTransformer,
        Some("no_condition_transformer") => Variant::NoConditionTransformer,
        _ => Variant::Full,
    };
    let no_consistency = args.get(1).map(String::as_str) == Some("no_consistency");
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let env = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let corpus = generate_corpus(&CorpusSpec::default(), "mem")?;
    let cfg = NetConfig {
        working_dim: env("DIM", 32.0) as usize,
        grid_side: 4,
        state_depth: env("DEPTH", 2.0) as usize,
        condition_depth: env("DEPTH", 2.0) as usize,
        heads: 4,
        mlp_ratio: 2.0,
        head_hidden: 64,
        variant,
    };
    let spec = EncoderSpec::synthetic(cfg.grid_side, cfg.working_dim, 7);
    let frames = corpus.encode(&spec)?;
    let text = TextStore::new(spec.clone());
    let filter = corpus.negative_filter()?;
    let bank = paraphrase_bank();
    let split = condmon::corpus::stratified_split(&corpus.set, 0.7, seed)?;
    let train = corpus.set.subset(&split.train)?;
    let val = corpus.set.subset(&split.val)?;
    let tc = TrainConfig {
        epochs,
        seed,
        batch_demos: env("BATCH", 32.0) as usize,
        peak_lr: env("LR", 5e-4),
        triplets_per_demo: env("TRIPLETS", 1.0) as usize,
        weight_decay: env("WD", 0.2),
        use_consistency: !no_consistency,
        ..TrainConfig::default()
    };
    let report = |e: &RecordEntry| {
        if let RecordEntry::Epoch { epoch, train_loss, phase_accuracy, anomaly_f1, wall_seconds, .. } = e {
            println!("epoch {epoch:>3} loss {train_loss:.4} acc {:.4} f1 {:.4} ({wall_seconds:.1}s)", phase_accuracy.unwrap_or(f64::NAN), anomaly_f1.unwrap_or(f64::NAN));
        }
    };
    let ctx = TrainContext {
        frames: &frames,
        text: &text,
        filter: &filter,
        paraphrase: Some(&bank),
        encoder: Some(spec),
        run_dir: std::env::var("RUN_DIR").ok().map(Into::into),
        on_epoch: Some(&report),
    };
    let net = NetState::init(&cfg, Seed(seed))?;
    let out = fit(net, &cfg, &tc, &train, &val, &ctx)?;
    println!("best epoch {} eval {:?}", out.best_epoch, out.best_eval.map(|e| (e.phase.accuracy, e.anomaly.f1)));
    Ok(())
}
