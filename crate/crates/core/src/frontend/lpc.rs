//! Autocorrelation LPC analysis and the LPC-to-cepstrum recursion.
//!
//! Predictor convention: `x[n] ~ sum_{k=1..p} a[k] x[n-k]`, so the inverse
//! filter is `A(z) = 1 - sum a[k] z^-k` and `a` solves `R a = r[1..=p]`
//! where `R` is the symmetric Toeplitz matrix built from `r[0..p]`.

use super::FrontendError;

/// `r[0]` at or below this is treated as a silent frame.
pub const ZERO_ENERGY_FLOOR: f64 = 1e-12;
/// Reflection coefficients are kept strictly inside the unit interval.
pub const REFLECTION_LIMIT: f64 = 1.0 - 1e-6;

pub fn autocorrelation(frame: &[f64], max_lag: usize) -> Result<Vec<f64>, FrontendError> {
    if max_lag >= frame.len() {
        return Err(FrontendError::LagTooLarge {
            max_lag,
            len: frame.len(),
        });
    }
    Ok((0..=max_lag)
        .map(|k| {
            frame[..frame.len() - k]
                .iter()
                .zip(&frame[k..])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lpc {
    /// Predictor coefficients `a[1..=p]` (index 0 holds `a[1]`).
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    /// Final prediction error energy.
    pub error: f64,
    /// Reflection coefficients that had to be clamped to keep the filter stable.
    pub clamped: usize,
}

/// Levinson-Durbin recursion on the autocorrelation sequence `r`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<Lpc, FrontendError> {
    if order == 0 {
        return Err(FrontendError::InvalidConfig(
            "LPC order must be at least 1".into(),
        ));
    }
    if r.len() < order + 1 {
        return Err(FrontendError::LagTooLarge {
            max_lag: order,
            len: r.len(),
        });
    }
    if !(r[0] > ZERO_ENERGY_FLOOR) {
        return Err(FrontendError::ZeroEnergy);
    }

    let mut a = vec![0.0; order];
    let mut prev = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = r[0];
    let mut clamped = 0;
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc -= prev[j - 1] * r[i - j];
        }
        let mut k = acc / err;
        if !k.is_finite() || k.abs() > REFLECTION_LIMIT {
            k = if k < 0.0 {
                -REFLECTION_LIMIT
            } else {
                REFLECTION_LIMIT
            };
            clamped += 1;
        }
        a[i - 1] = k;
        for j in 1..i {
            a[j - 1] = prev[j - 1] - k * prev[i - j - 1];
        }
        err *= 1.0 - k * k;
        reflection.push(k);
        prev[..i].copy_from_slice(&a[..i]);
    }
    Ok(Lpc {
        coeffs: a,
        reflection,
        error: err.max(0.0),
        clamped,
    })
}

/// Cepstrum of the all-pole model `1/A(z)`:
/// `c[m] = a[m] + sum_{k=1}^{m-1} (k/m) c[k] a[m-k]`, with `a[m] = 0` for `m > p`.
pub fn lpc_to_cepstrum(a: &[f64], n_cepstra: usize) -> Vec<f64> {
    let coeff = |m: usize| {
        if m >= 1 && m <= a.len() {
            a[m - 1]
        } else {
            0.0
        }
    };
    let mut c = vec![0.0; n_cepstra];
    for m in 1..=n_cepstra {
        let mut acc = coeff(m);
        for k in 1..m {
            acc += (k as f64 / m as f64) * c[k - 1] * coeff(m - k);
        }
        c[m - 1] = acc;
    }
    c
}
