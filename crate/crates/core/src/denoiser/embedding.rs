use crate::error::{Error, Result};

const MAX_FREQ: f64 = 1e4;

/// Sinusoidal embedding of `tau / T` followed by that of `k / K`, each with
/// `embed_dim / 2` (sin, cos) pairs on a geometric frequency ladder from 1 to
/// 1e4. Output length is `2 * embed_dim`.
pub fn embed_condition(tau: usize, k: usize, t: usize, horizon: usize, embed_dim: usize) -> Result<Vec<f64>> {
    if tau == 0 || tau > t {
        return Err(Error::Contract(format!("diffusion step {tau} outside 1..={t}")));
    }
    if k >= horizon {
        return Err(Error::Contract(format!("physical step {k} outside 0..{horizon}")));
    }
    if embed_dim < 2 || embed_dim % 2 != 0 {
        return Err(Error::Contract(format!("embed_dim must be even and >= 2, got {embed_dim}")));
    }
    let mut out = Vec::with_capacity(2 * embed_dim);
    push_sinusoid(&mut out, tau as f64 / t as f64, embed_dim / 2);
    push_sinusoid(&mut out, k as f64 / horizon as f64, embed_dim / 2);
    Ok(out)
}

fn push_sinusoid(out: &mut Vec<f64>, s: f64, pairs: usize) {
    for j in 0..pairs {
        let freq = if pairs == 1 {
            1.0
        } else {
            MAX_FREQ.powf(j as f64 / (pairs - 1) as f64)
        };
        let (sin, cos) = (freq * s).sin_cos();
        out.push(sin);
        out.push(cos);
    }
}
