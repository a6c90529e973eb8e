//! LPC-cepstrum front end.
//!
//! `extract_features` runs endpoint detection, pre-emphasis, framing,
//! Hamming windowing, autocorrelation, Levinson-Durbin and the cepstral
//! recursion, then appends log-energy and first-difference deltas. Each row
//! is laid out as `[c1..cn, logE, dc1..dcn, dlogE]`.

mod dsp;
mod lpc;

pub use dsp::{frame_signal, hamming_window, pre_emphasize};
pub use lpc::{
    autocorrelation, levinson_durbin, lpc_to_cepstrum, Lpc, REFLECTION_LIMIT, ZERO_ENERGY_FLOOR,
};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{ms_to_samples, AudioBuffer};

/// Added to `r[0]` before taking the log-energy; also the silence log-energy.
pub const LOG_ENERGY_OFFSET: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("empty input")]
    EmptyInput,
    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("window length {0} is too short (need at least 2)")]
    BadLength(usize),
    #[error("lag {max_lag} too large for sequence of length {len}")]
    LagTooLarge { max_lag: usize, len: usize },
    #[error("frame has zero energy")]
    ZeroEnergy,
    #[error("no speech detected")]
    NoSpeech,
    #[error("invalid front-end configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    pub pre_emphasis_alpha: f64,
    pub frame_len_ms: f64,
    pub hop_ms: f64,
    pub lpc_order: usize,
    pub n_cepstra: usize,
    /// Fraction of the peak frame energy a frame must exceed to count as speech.
    pub energy_ratio: f64,
    pub min_speech_frames: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            pre_emphasis_alpha: 0.97,
            frame_len_ms: 25.0,
            hop_ms: 10.0,
            lpc_order: 10,
            n_cepstra: 12,
            energy_ratio: 0.03,
            min_speech_frames: 5,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<(), FrontendError> {
        let bad = |m: &str| Err(FrontendError::InvalidConfig(m.to_string()));
        if !(0.0..1.0).contains(&self.pre_emphasis_alpha) {
            return bad("pre_emphasis_alpha must lie in [0, 1)");
        }
        if !(self.hop_ms > 0.0 && self.frame_len_ms > self.hop_ms && self.frame_len_ms.is_finite())
        {
            return bad("need frame_len_ms > hop_ms > 0");
        }
        if self.lpc_order == 0 || self.n_cepstra == 0 {
            return bad("lpc_order and n_cepstra must be at least 1");
        }
        if !(self.energy_ratio > 0.0 && self.energy_ratio.is_finite())
            || self.min_speech_frames == 0
        {
            return bad("endpoint thresholds must be positive");
        }
        Ok(())
    }

    /// Feature dimension: cepstra, their deltas, log-energy and its delta.
    pub fn feature_dim(&self) -> usize {
        2 * self.n_cepstra + 2
    }

    pub fn frame_len(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.frame_len_ms, sample_rate_hz)
    }

    pub fn hop(&self, sample_rate_hz: u32) -> usize {
        ms_to_samples(self.hop_ms, sample_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrontendDiagnostics {
    /// Reflection coefficients clamped across all frames.
    pub clamped_reflections: usize,
    /// Frames replaced by the silence vector.
    pub silent_frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
    frame_times: Vec<usize>,
    dim: usize,
    pub diagnostics: FrontendDiagnostics,
}

impl FeatureMatrix {
    /// Builds a matrix from raw rows; all rows must share one non-zero dimension and be finite.
    pub fn new(rows: Vec<Vec<f64>>, frame_times: Vec<usize>) -> Result<Self, FrontendError> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or(FrontendError::EmptyInput)?;
        if dim == 0 || rows.iter().any(|r| r.len() != dim) || frame_times.len() != rows.len() {
            return Err(FrontendError::InvalidConfig("ragged feature matrix".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(FrontendError::InvalidConfig(
                "non-finite feature value".into(),
            ));
        }
        Ok(Self {
            rows,
            frame_times,
            dim,
            diagnostics: FrontendDiagnostics::default(),
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn frame_times(&self) -> &[usize] {
        &self.frame_times
    }

    pub fn n_frames(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies `f` to every row, keeping frame times.
    pub fn map_rows(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self, FrontendError> {
        let mut out = Self::new(
            self.rows.iter().map(|r| f(r)).collect(),
            self.frame_times.clone(),
        )?;
        out.diagnostics = self.diagnostics;
        Ok(out)
    }

    /// Text dump: header line `T D`, then one frame per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.n_frames(), self.dim);
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<(), FrontendError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn frame_energies(x: &[f64], frame_len: usize, hop: usize) -> Result<Vec<f64>, FrontendError> {
    Ok(frame_signal(x, frame_len, hop)?
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum())
        .collect())
}

/// Locates the spoken word by short-time energy. Returns `(start, end)`
/// sample indices (end exclusive) of the smallest window covering every
/// frame above `energy_ratio * peak`, widened by one frame on each side.
pub fn endpoint_detect(
    buffer: &AudioBuffer,
    config: &FrontendConfig,
) -> Result<(usize, usize), FrontendError> {
    config.validate()?;
    let sr = buffer.sample_rate_hz();
    let (frame_len, hop) = (config.frame_len(sr), config.hop(sr));
    let energies = frame_energies(buffer.samples(), frame_len, hop)?;
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(FrontendError::NoSpeech);
    }
    let threshold = config.energy_ratio * peak;
    let active: Vec<usize> = (0..energies.len())
        .filter(|&i| energies[i] > threshold)
        .collect();
    if active.len() < config.min_speech_frames {
        return Err(FrontendError::NoSpeech);
    }
    let first = active[0].saturating_sub(1);
    let last = (active[active.len() - 1] + 1).min(energies.len() - 1);
    let start = first * hop;
    let end = if last == energies.len() - 1 {
        buffer.len()
    } else {
        last * hop + frame_len
    };
    Ok((start, end))
}

/// Full front end: audio in, one feature row per 10 ms frame out.
pub fn extract_features(
    buffer: &AudioBuffer,
    config: &FrontendConfig,
) -> Result<FeatureMatrix, FrontendError> {
    let (start, end) = endpoint_detect(buffer, config)?;
    let sr = buffer.sample_rate_hz();
    let (frame_len, hop) = (config.frame_len(sr), config.hop(sr));
    let emphasized = pre_emphasize(&buffer.samples()[start..end], config.pre_emphasis_alpha)?;
    let frames = frame_signal(&emphasized, frame_len, hop)?;
    let window = hamming_window(frame_len)?;

    let n_cep = config.n_cepstra;
    let mut diagnostics = FrontendDiagnostics::default();
    let mut statics: Vec<Vec<f64>> = Vec::with_capacity(frames.len());
    let mut windowed = vec![0.0; frame_len];
    for frame in &frames {
        for ((w, x), g) in windowed.iter_mut().zip(frame.iter()).zip(&window) {
            *w = x * g;
        }
        let r = autocorrelation(&windowed, config.lpc_order)?;
        let mut row = Vec::with_capacity(n_cep + 1);
        match levinson_durbin(&r, config.lpc_order) {
            Ok(lpc) => {
                diagnostics.clamped_reflections += lpc.clamped;
                row.extend(lpc_to_cepstrum(&lpc.coeffs, n_cep));
                row.push((r[0] + LOG_ENERGY_OFFSET).ln());
            }
            Err(FrontendError::ZeroEnergy) => {
                diagnostics.silent_frames += 1;
                row.extend(std::iter::repeat_n(0.0, n_cep));
                row.push(LOG_ENERGY_OFFSET.ln());
            }
            Err(e) => return Err(e),
        }
        statics.push(row);
    }

    let rows = statics
        .iter()
        .enumerate()
        .map(|(t, cur)| {
            let mut row = Vec::with_capacity(2 * cur.len());
            row.extend_from_slice(cur);
            if t == 0 {
                row.extend(std::iter::repeat_n(0.0, cur.len()));
            } else {
                row.extend(cur.iter().zip(&statics[t - 1]).map(|(a, b)| a - b));
            }
            row
        })
        .collect();
    let times = (0..frames.len()).map(|i| start + i * hop).collect();
    let mut matrix = FeatureMatrix::new(rows, times)?;
    matrix.diagnostics = diagnostics;
    Ok(matrix)
}
