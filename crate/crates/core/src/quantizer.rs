//! Feature normalization and LBG vector quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::FeatureMatrix;

pub const SPLIT_EPSILON: f64 = 0.01;
pub const KMEANS_MAX_ITERS: usize = 50;
pub const KMEANS_REL_TOL: f64 = 1e-4;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("need at least {need} training vectors, got {have}")]
    TooFewVectors { have: usize, need: usize },
    #[error("codebook size {0} is not a power of two")]
    BadSize(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid codebook: {0}")]
    Invalid(String),
}

/// Per-dimension mean/standard-deviation scaling fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self, QuantizerError> {
        let first = vectors
            .first()
            .ok_or(QuantizerError::TooFewVectors { have: 0, need: 1 })?;
        let dim = first.len();
        check_dims(vectors, dim)?;
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / n).sqrt())
            .map(|s| if s > STD_FLOOR { s } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn apply_matrix(&self, features: &FeatureMatrix) -> Result<FeatureMatrix, QuantizerError> {
        if features.dim() != self.dim() {
            return Err(QuantizerError::DimMismatch {
                expected: self.dim(),
                got: features.dim(),
            });
        }
        features
            .map_rows(|r| self.apply(r))
            .map_err(|e| QuantizerError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), QuantizerError> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(QuantizerError::Invalid(
                "normalization dimensions disagree".into(),
            ));
        }
        if self.mean.iter().any(|m| !m.is_finite())
            || self.std.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(QuantizerError::Invalid(
                "normalization has non-finite or non-positive entries".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    /// Mean squared distance of the training vectors to their nearest centroid.
    pub distortion: f64,
}

/// Distortion after every k-means assignment pass, one list per codebook size.
#[derive(Debug, Clone, Default)]
pub struct CodebookTrace {
    pub levels: Vec<(usize, Vec<f64>)>,
}

fn check_dims(vectors: &[Vec<f64>], dim: usize) -> Result<(), QuantizerError> {
    match vectors.iter().find(|v| v.len() != dim) {
        Some(v) => Err(QuantizerError::DimMismatch {
            expected: dim,
            got: v.len(),
        }),
        None => Ok(()),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties, with its squared distance.
fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (m, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (m, d);
        }
    }
    best
}

struct Assignment {
    cell: Vec<usize>,
    dist: Vec<f64>,
    distortion: f64,
}

fn assign(centroids: &[Vec<f64>], vectors: &[Vec<f64>]) -> Assignment {
    let (cell, dist): (Vec<usize>, Vec<f64>) =
        vectors.iter().map(|v| nearest(centroids, v)).unzip();
    let distortion = dist.iter().sum::<f64>() / vectors.len() as f64;
    Assignment {
        cell,
        dist,
        distortion,
    }
}

/// Moves every centroid to the mean of its cell. Empty cells take the
/// training vector farthest from its current centroid. Returns whether any
/// cell was empty.
fn update_centroids(centroids: &mut [Vec<f64>], vectors: &[Vec<f64>], a: &Assignment) -> bool {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (v, &m) in vectors.iter().zip(&a.cell) {
        counts[m] += 1;
        for (s, x) in sums[m].iter_mut().zip(v) {
            *s += x;
        }
    }
    let mut taken = vec![false; vectors.len()];
    let mut any_empty = false;
    for m in 0..centroids.len() {
        if counts[m] > 0 {
            let n = counts[m] as f64;
            centroids[m] = sums[m].iter().map(|s| s / n).collect();
            continue;
        }
        any_empty = true;
        let mut far: Option<usize> = None;
        for (i, &d) in a.dist.iter().enumerate() {
            if !taken[i] && far.is_none_or(|f| d > a.dist[f]) {
                far = Some(i);
            }
        }
        if let Some(i) = far {
            taken[i] = true;
            centroids[m] = vectors[i].clone();
        }
    }
    any_empty
}

fn kmeans(centroids: &mut [Vec<f64>], vectors: &[Vec<f64>], trace: &mut Vec<f64>) -> f64 {
    let mut previous: Option<f64> = None;
    for _ in 0..KMEANS_MAX_ITERS {
        let a = assign(centroids, vectors);
        trace.push(a.distortion);
        let settled =
            a.distortion == 0.0 || previous.is_some_and(|p| p - a.distortion < KMEANS_REL_TOL * p);
        let had_empty = update_centroids(centroids, vectors, &a);
        if settled && !had_empty {
            // centroids are the cell means of an assignment that is already stable
            return assign(centroids, vectors).distortion;
        }
        previous = Some(a.distortion);
    }
    let d = assign(centroids, vectors).distortion;
    trace.push(d);
    d
}

pub fn train_codebook(
    vectors: &[Vec<f64>],
    size: usize,
    seed: u64,
) -> Result<Codebook, QuantizerError> {
    train_codebook_traced(vectors, size, seed).map(|(cb, _)| cb)
}

/// LBG training: start from the global mean, split every centroid in two
/// and refine with k-means until the requested size is reached.
///
/// A centroid `c` splits into `c + d` and `c - d` with
/// `d[j] = eps * s[j] * max(|c[j]|, std[j])` and `s[j]` a seeded random sign,
/// so components that are exactly zero (common after normalization) still
/// separate.
pub fn train_codebook_traced(
    vectors: &[Vec<f64>],
    size: usize,
    seed: u64,
) -> Result<(Codebook, CodebookTrace), QuantizerError> {
    if size == 0 || !size.is_power_of_two() {
        return Err(QuantizerError::BadSize(size));
    }
    if vectors.len() < size {
        return Err(QuantizerError::TooFewVectors {
            have: vectors.len(),
            need: size,
        });
    }
    let stats = Normalization::fit(vectors)?;
    let dim = stats.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = CodebookTrace::default();

    let mut centroids = vec![stats.mean.clone()];
    let mut level = Vec::new();
    let mut distortion = kmeans(&mut centroids, vectors, &mut level);
    trace.levels.push((1, level));
    while centroids.len() < size {
        let mut split = Vec::with_capacity(centroids.len() * 2);
        for c in &centroids {
            let d: Vec<f64> = (0..dim)
                .map(|j| {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    SPLIT_EPSILON * sign * c[j].abs().max(stats.std[j])
                })
                .collect();
            split.push(c.iter().zip(&d).map(|(x, dx)| x + dx).collect());
            split.push(c.iter().zip(&d).map(|(x, dx)| x - dx).collect());
        }
        centroids = split;
        let mut level = Vec::new();
        distortion = kmeans(&mut centroids, vectors, &mut level);
        trace.levels.push((centroids.len(), level));
    }
    Ok((
        Codebook {
            centroids,
            distortion,
        },
        trace,
    ))
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn nearest(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    /// Maps every feature row to its nearest centroid index.
    pub fn encode(&self, features: &FeatureMatrix) -> Result<Vec<usize>, QuantizerError> {
        if features.dim() != self.dim() {
            return Err(QuantizerError::DimMismatch {
                expected: self.dim(),
                got: features.dim(),
            });
        }
        Ok(features.rows().iter().map(|r| self.nearest(r)).collect())
    }

    pub fn validate(&self) -> Result<(), QuantizerError> {
        let dim = self.dim();
        if self.centroids.is_empty() || dim == 0 {
            return Err(QuantizerError::Invalid("codebook is empty".into()));
        }
        check_dims(&self.centroids, dim)?;
        if self.centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(QuantizerError::Invalid("non-finite centroid entry".into()));
        }
        if !(self.distortion.is_finite() && self.distortion >= 0.0) {
            return Err(QuantizerError::Invalid(
                "distortion must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}
