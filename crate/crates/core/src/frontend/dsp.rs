use std::f64::consts::PI;

use super::FrontendError;

/// First-order high-pass: `y[0] = x[0]`, `y[n] = x[n] - alpha * x[n-1]`.
pub fn pre_emphasize(x: &[f64], alpha: f64) -> Result<Vec<f64>, FrontendError> {
    let (&first, _) = x.split_first().ok_or(FrontendError::EmptyInput)?;
    let mut y = Vec::with_capacity(x.len());
    y.push(first);
    y.extend(x.windows(2).map(|w| w[1] - alpha * w[0]));
    Ok(y)
}

/// Splits `x` into overlapping frames; the trailing remainder is dropped.
pub fn frame_signal(x: &[f64], frame_len: usize, hop: usize) -> Result<Vec<&[f64]>, FrontendError> {
    if frame_len == 0 || hop == 0 {
        return Err(FrontendError::InvalidConfig(
            "frame length and hop must be positive".into(),
        ));
    }
    if x.len() < frame_len {
        return Err(FrontendError::InsufficientSamples {
            have: x.len(),
            need: frame_len,
        });
    }
    let count = (x.len() - frame_len) / hop + 1;
    Ok((0..count)
        .map(|i| &x[i * hop..i * hop + frame_len])
        .collect())
}

pub fn hamming_window(n: usize) -> Result<Vec<f64>, FrontendError> {
    if n < 2 {
        return Err(FrontendError::BadLength(n));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / denom).cos())
        .collect())
}
