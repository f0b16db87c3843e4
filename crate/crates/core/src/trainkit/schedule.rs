//! Linear warmup followed by cosine annealing.

use super::TrainConfig;
use crate::error::{Error, Result};

/// Number of warmup steps: `round(total · warmup_fraction)`, at least 1.
pub fn warmup_steps(total_steps: usize, cfg: &TrainConfig) -> usize {
    ((total_steps as f64 * cfg.warmup_fraction).round() as usize).clamp(1, total_steps.max(1))
}

fn cosine(step: usize, warmup: usize, total: usize, cfg: &TrainConfig) -> f64 {
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Learning rate at `step ∈ [0, total_steps]`: `peak·step/warmup` up to the
/// warmup end, then cosine decay from `peak` to `min_lr` at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Bounds {
            index: step,
            len: total_steps + 1,
        });
    }
    let w = warmup_steps(total_steps, cfg);
    Ok(if step == w {
        cfg.peak_lr
    } else if step < w {
        cfg.peak_lr * step as f64 / w as f64
    } else {
        cosine(step, w, total_steps, cfg)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let cfg = TrainConfig::default();
        let total = 480;
        let w = warmup_steps(total, &cfg);
        assert_eq!(w, 24);
        assert_eq!(lr_at(0, total, &cfg).unwrap(), 0.0);
        assert_eq!(lr_at(w, total, &cfg).unwrap(), 0.0005);
        assert!((lr_at(total, total, &cfg).unwrap() - cfg.min_lr).abs() < 1e-18);
        assert!((lr_at(w, total, &cfg).unwrap() - cosine(w, w, total, &cfg)).abs() < 1e-12);
        assert!(matches!(lr_at(total + 1, total, &cfg), Err(Error::Bounds { .. })));
    }

    #[test]
    fn midpoint_of_cosine_is_halfway() {
        let cfg = TrainConfig::default();
        let lr = lr_at(24 + 228, 480, &cfg).unwrap();
        assert!((lr - (cfg.min_lr + cfg.peak_lr) / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_and_monotone_pieces(total in 2usize..5000, frac in 0.01f64..0.49) {
            let cfg = TrainConfig { warmup_fraction: frac, ..TrainConfig::default() };
            let w = warmup_steps(total, &cfg);
            let mut prev = -1.0;
            for s in 0..=total {
                let lr = lr_at(s, total, &cfg).unwrap();
                prop_assert!(lr >= 0.0 && lr <= cfg.peak_lr);
                if s <= w { prop_assert!(lr >= prev); } else { prop_assert!(lr <= prev + 1e-18); }
                prev = lr;
            }
            if w < total {
                prop_assert!((cosine(w, w, total, &cfg) - cfg.peak_lr).abs() < 1e-12);
            }
        }
    }
}
