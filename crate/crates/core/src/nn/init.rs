//! Deterministic parameter initializers.

use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;

/// Uniform on `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<S: Scalar, R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Array2<S> {
    let limit = (6.0 / (d_in + d_out) as f64).sqrt();
    let lim = S::from_f64(limit);
    let two = S::from_f64(2.0);
    Array2::from_shape_fn((d_in, d_out), |_| {
        S::sample_unit(rng) * two * lim - lim
    })
}

/// I.i.d. normal entries with the given standard deviation.
pub fn normal<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<S> {
    let sd = S::from_f64(std);
    Array2::from_shape_fn((rows, cols), |_| S::sample_normal(rng) * sd)
}

/// Fixed sinusoidal position table (`len`×`dim`), the classic interleaved
/// sin/cos layout.
pub fn sinusoidal_positions<S: Scalar>(len: usize, dim: usize) -> Array2<S> {
    let mut out = Array2::zeros((len, dim));
    for p in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let rate = 1.0 / 10000f64.powf(2.0 * pair / dim as f64);
            let angle = p as f64 * rate;
            out[(p, i)] = S::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}
