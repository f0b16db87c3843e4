//! Fixed sinusoidal positional embedding.

use ndarray::Array2;

use crate::error::{Error, Result};

/// `PE[p, 2k] = sin(p·ω_k)`, `PE[p, 2k+1] = cos(p·ω_k)` with `ω_k = 10000^(−2k/dim)`.
pub fn sinusoidal_pe(length: usize, dim: usize) -> Result<Array2<f64>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("positional embedding needs an even dim, got {dim}")));
    }
    let mut pe = Array2::zeros((length, dim));
    for p in 0..length {
        for k in 0..dim / 2 {
            let omega = 10000f64.powf(-((2 * k) as f64) / dim as f64);
            let arg = p as f64 * omega;
            pe[[p, 2 * k]] = arg.sin();
            pe[[p, 2 * k + 1]] = arg.cos();
        }
    }
    Ok(pe)
}
