//! Discrete-observation hidden Markov models.
//!
//! Forward-backward runs in linear space with per-frame scaling
//! (`c_t = 1 / sum_i alpha_t(i)`), Viterbi runs in log space, and
//! Baum-Welch pools gamma/xi statistics over any number of sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest forward jump allowed by the left-right topology.
pub const MAX_JUMP: usize = 2;
pub const PROBABILITY_FLOOR: f64 = 1e-6;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("observation symbol {symbol} out of range (M = {m})")]
    SymbolOutOfRange { symbol: usize, m: usize },
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("no training sequences")]
    EmptyTrainingSet,
    #[error("invalid HMM: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteHmm {
    pub pi: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub left_right: bool,
}

/// Scaled forward variables. `alpha[t]` sums to one whenever the prefix is possible.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub alpha: Vec<Vec<f64>>,
    pub scale: Vec<f64>,
    /// `-inf` when the sequence has probability zero.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaumWelchOptions {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    pub floor: f64,
}

impl Default for BaumWelchOptions {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-5,
            floor: PROBABILITY_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    /// Total log-likelihood of the training set before the first update and
    /// after every re-estimation.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// States that received zero occupancy in some iteration; their rows were kept.
    pub starved_states: Vec<usize>,
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximizes `sum_j counts[j] * ln p[j]` over allowed entries subject to
/// `p[j] >= floor` and `sum p = 1`. Entries that would fall below the
/// floor are pinned to it and the remaining mass is shared in proportion
/// to the counts. Disallowed entries stay exactly zero.
pub(crate) fn floored_distribution(counts: &[f64], allowed: &[bool], floor: f64) -> Vec<f64> {
    let n_allowed = allowed.iter().filter(|&&a| a).count();
    let mut p = vec![0.0; counts.len()];
    if n_allowed == 0 {
        return p;
    }
    if n_allowed as f64 * floor >= 1.0 {
        for (pj, &ok) in p.iter_mut().zip(allowed) {
            if ok {
                *pj = 1.0 / n_allowed as f64;
            }
        }
        return p;
    }
    let mut pinned = vec![false; counts.len()];
    loop {
        let n_pinned = pinned.iter().filter(|&&x| x).count();
        let mass = 1.0 - n_pinned as f64 * floor;
        let free_total: f64 = (0..counts.len())
            .filter(|&j| allowed[j] && !pinned[j])
            .map(|j| counts[j])
            .sum();
        let mut changed = false;
        for j in 0..counts.len() {
            if !allowed[j] {
                continue;
            }
            if pinned[j] {
                p[j] = floor;
                continue;
            }
            p[j] = mass * counts[j] / free_total;
            if p[j] < floor {
                pinned[j] = true;
                changed = true;
            }
        }
        if !changed {
            return p;
        }
    }
}

impl DiscreteHmm {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.b.first().map_or(0, Vec::len)
    }

    /// Whether the topology permits a transition from `i` to `j`.
    pub fn transition_allowed(&self, i: usize, j: usize) -> bool {
        !self.left_right || (j >= i && j <= i + MAX_JUMP)
    }

    fn initial_allowed(&self, i: usize) -> bool {
        !self.left_right || i == 0
    }

    /// Left-right (Bakis) model: uniform over `{self, +1, +2}` transitions,
    /// near-uniform emissions with seeded +-1% jitter.
    pub fn init_left_right(n_states: usize, n_symbols: usize, seed: u64) -> Result<Self, HmmError> {
        if n_states == 0 || n_symbols == 0 {
            return Err(HmmError::InvalidModel(
                "need at least one state and one symbol".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pi = vec![0.0; n_states];
        pi[0] = 1.0;
        let a = (0..n_states)
            .map(|i| {
                let last = (i + MAX_JUMP).min(n_states - 1);
                let share = 1.0 / (last - i + 1) as f64;
                (0..n_states)
                    .map(|j| if j >= i && j <= last { share } else { 0.0 })
                    .collect()
            })
            .collect();
        let b = (0..n_states)
            .map(|_| {
                let raw: Vec<f64> = (0..n_symbols)
                    .map(|_| 1.0 + rng.gen_range(-0.01..=0.01))
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect()
            })
            .collect();
        Ok(Self {
            pi,
            a,
            b,
            left_right: true,
        })
    }

    /// Fully connected model with every entry drawn from `[0.1, 1)` and normalized.
    pub fn init_random(n_states: usize, n_symbols: usize, seed: u64) -> Result<Self, HmmError> {
        if n_states == 0 || n_symbols == 0 {
            return Err(HmmError::InvalidModel(
                "need at least one state and one symbol".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = |len: usize| {
            let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect::<Vec<f64>>()
        };
        let pi = row(n_states);
        let a = (0..n_states).map(|_| row(n_states)).collect();
        let b = (0..n_states).map(|_| row(n_symbols)).collect();
        Ok(Self {
            pi,
            a,
            b,
            left_right: false,
        })
    }

    /// Checks shapes, stochastic rows and (if left-right) structural zeros.
    pub fn validate(&self) -> Result<(), HmmError> {
        let bad = |m: String| Err(HmmError::InvalidModel(m));
        let n = self.n_states();
        let m = self.n_symbols();
        if n == 0 || m == 0 {
            return bad("empty model".into());
        }
        if self.a.len() != n || self.a.iter().any(|r| r.len() != n) {
            return bad("A must be N x N".into());
        }
        if self.b.len() != n || self.b.iter().any(|r| r.len() != m) {
            return bad("B must be N x M".into());
        }
        let check_row = |name: &str, row: &[f64]| -> Result<(), HmmError> {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(HmmError::InvalidModel(format!(
                    "{name} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(HmmError::InvalidModel(format!("{name} sums to {s}")));
            }
            Ok(())
        };
        check_row("pi", &self.pi)?;
        for i in 0..n {
            check_row(&format!("A row {i}"), &self.a[i])?;
            check_row(&format!("B row {i}"), &self.b[i])?;
        }
        if self.left_right {
            if (0..n).any(|i| !self.initial_allowed(i) && self.pi[i] != 0.0) {
                return bad("left-right model must start in state 0".into());
            }
            for i in 0..n {
                for j in 0..n {
                    if !self.transition_allowed(i, j) && self.a[i][j] != 0.0 {
                        return bad(format!("left-right model has A[{i}][{j}] != 0"));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[usize]) -> Result<(), HmmError> {
        if obs.is_empty() {
            return Err(HmmError::EmptySequence);
        }
        let m = self.n_symbols();
        match obs.iter().find(|&&o| o >= m) {
            Some(&symbol) => Err(HmmError::SymbolOutOfRange { symbol, m }),
            None => Ok(()),
        }
    }

    pub fn forward(&self, obs: &[usize]) -> Result<ForwardPass, HmmError> {
        self.check_obs(obs)?;
        let n = self.n_states();
        let mut alpha = Vec::with_capacity(obs.len());
        let mut scale = Vec::with_capacity(obs.len());
        let mut log_likelihood = 0.0;
        for (t, &o) in obs.iter().enumerate() {
            let mut row: Vec<f64> = if t == 0 {
                (0..n).map(|i| self.pi[i] * self.b[i][o]).collect()
            } else {
                let prev: &Vec<f64> = &alpha[t - 1];
                (0..n)
                    .map(|j| {
                        let inflow: f64 = (0..n).map(|i| prev[i] * self.a[i][j]).sum();
                        inflow * self.b[j][o]
                    })
                    .collect()
            };
            let total: f64 = row.iter().sum();
            if !(total > 0.0) {
                alpha.push(vec![0.0; n]);
                return Ok(ForwardPass {
                    alpha,
                    scale,
                    log_likelihood: f64::NEG_INFINITY,
                });
            }
            let c = 1.0 / total;
            row.iter_mut().for_each(|v| *v *= c);
            log_likelihood -= c.ln();
            alpha.push(row);
            scale.push(c);
        }
        Ok(ForwardPass {
            alpha,
            scale,
            log_likelihood,
        })
    }

    pub fn log_likelihood(&self, obs: &[usize]) -> Result<f64, HmmError> {
        Ok(self.forward(obs)?.log_likelihood)
    }

    /// Scaled backward variables using the forward pass's scale factors:
    /// `beta[T-1](i) = c[T-1]`, `beta[t](i) = c[t] * sum_j a_ij b_j(o[t+1]) beta[t+1](j)`.
    pub fn backward(&self, obs: &[usize], fwd: &ForwardPass) -> Result<Vec<Vec<f64>>, HmmError> {
        self.check_obs(obs)?;
        if fwd.scale.len() != obs.len() {
            return Err(HmmError::InvalidModel(
                "forward pass does not cover the sequence".into(),
            ));
        }
        let n = self.n_states();
        let t_len = obs.len();
        let mut beta = vec![vec![0.0; n]; t_len];
        beta[t_len - 1] = vec![fwd.scale[t_len - 1]; n];
        for t in (0..t_len - 1).rev() {
            let next = obs[t + 1];
            for i in 0..n {
                let s: f64 = (0..n)
                    .map(|j| self.a[i][j] * self.b[j][next] * beta[t + 1][j])
                    .sum();
                beta[t][i] = fwd.scale[t] * s;
            }
        }
        Ok(beta)
    }

    /// `log P(obs)` recovered from the scaled betas:
    /// `ln(sum_i pi_i b_i(o_0) beta_0(i)) - sum_t ln c_t`.
    pub fn backward_log_likelihood(&self, obs: &[usize], beta: &[Vec<f64>], scale: &[f64]) -> f64 {
        let o = obs[0];
        let head: f64 = (0..self.n_states())
            .map(|i| self.pi[i] * self.b[i][o] * beta[0][i])
            .sum();
        ln(head) - scale.iter().map(|c| c.ln()).sum::<f64>()
    }

    /// Most likely state path and its joint log-probability. Ties go to
    /// the lower state index, both for the final state and at every
    /// backtracking step.
    pub fn viterbi(&self, obs: &[usize]) -> Result<(Vec<usize>, f64), HmmError> {
        self.check_obs(obs)?;
        let n = self.n_states();
        let t_len = obs.len();
        let log_a: Vec<Vec<f64>> = self
            .a
            .iter()
            .map(|r| r.iter().map(|&p| ln(p)).collect())
            .collect();
        let mut delta: Vec<f64> = (0..n)
            .map(|i| ln(self.pi[i]) + ln(self.b[i][obs[0]]))
            .collect();
        let mut back = vec![vec![0usize; n]; t_len];
        for t in 1..t_len {
            let o = obs[t];
            let mut next = vec![f64::NEG_INFINITY; n];
            for j in 0..n {
                let mut best = (0, f64::NEG_INFINITY);
                for i in 0..n {
                    let s = delta[i] + log_a[i][j];
                    if s > best.1 {
                        best = (i, s);
                    }
                }
                back[t][j] = best.0;
                next[j] = best.1 + ln(self.b[j][o]);
            }
            delta = next;
        }
        let mut last = 0;
        for i in 1..n {
            if delta[i] > delta[last] {
                last = i;
            }
        }
        let score = delta[last];
        if score == f64::NEG_INFINITY {
            return Ok((Vec::new(), f64::NEG_INFINITY));
        }
        let mut path = vec![0; t_len];
        path[t_len - 1] = last;
        for t in (1..t_len).rev() {
            path[t - 1] = back[t][path[t]];
        }
        Ok((path, score))
    }

    /// Draws a `(states, symbols)` pair of length `t_len`.
    pub fn sample<R: Rng>(&self, t_len: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
        let draw = |p: &[f64], rng: &mut R| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (k, &pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return k;
                }
            }
            p.iter().rposition(|&pk| pk > 0.0).unwrap_or(0)
        };
        let mut states: Vec<usize> = Vec::with_capacity(t_len);
        let mut symbols = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s = if t == 0 {
                draw(&self.pi, rng)
            } else {
                draw(&self.a[states[t - 1]], rng)
            };
            states.push(s);
            symbols.push(draw(&self.b[s], rng));
        }
        (states, symbols)
    }

    /// Multi-sequence Baum-Welch re-estimation.
    ///
    /// Each M-step is the exact maximizer of the expected complete-data
    /// log-likelihood under the probability floor (see
    /// [`floored_distribution`]), so the training-set likelihood never
    /// decreases. Structural zeros of a left-right model are preserved.
    pub fn baum_welch(
        &self,
        sequences: &[Vec<usize>],
        opts: &BaumWelchOptions,
    ) -> Result<(DiscreteHmm, TrainTrace), HmmError> {
        if sequences.is_empty() {
            return Err(HmmError::EmptyTrainingSet);
        }
        for seq in sequences {
            self.check_obs(seq)?;
        }
        self.validate()?;
        let mut model = self.clone();
        let mut trace = TrainTrace::default();
        loop {
            let stats = model.expectation(sequences)?;
            let total = stats.log_likelihood;
            if let Some(&prev) = trace.log_likelihoods.last() {
                let gain = (total - prev) / prev.abs().max(f64::MIN_POSITIVE);
                trace.log_likelihoods.push(total);
                if gain < opts.tol {
                    trace.converged = true;
                    break;
                }
            } else {
                trace.log_likelihoods.push(total);
            }
            if trace.iterations == opts.max_iters {
                break;
            }
            for s in model.maximization(&stats, opts.floor) {
                if !trace.starved_states.contains(&s) {
                    trace.starved_states.push(s);
                }
            }
            trace.iterations += 1;
        }
        trace.starved_states.sort_unstable();
        Ok((model, trace))
    }

    fn expectation(&self, sequences: &[Vec<usize>]) -> Result<Expectations, HmmError> {
        let n = self.n_states();
        let m = self.n_symbols();
        let mut acc = Expectations {
            initial: vec![0.0; n],
            transitions: vec![vec![0.0; n]; n],
            emissions: vec![vec![0.0; m]; n],
            occupancy: vec![0.0; n],
            log_likelihood: 0.0,
        };
        for obs in sequences {
            let fwd = self.forward(obs)?;
            acc.log_likelihood += fwd.log_likelihood;
            if fwd.log_likelihood == f64::NEG_INFINITY {
                continue;
            }
            let beta = self.backward(obs, &fwd)?;
            for (t, &o) in obs.iter().enumerate() {
                for i in 0..n {
                    let gamma = fwd.alpha[t][i] * beta[t][i] / fwd.scale[t];
                    if t == 0 {
                        acc.initial[i] += gamma;
                    }
                    acc.emissions[i][o] += gamma;
                    acc.occupancy[i] += gamma;
                }
                if t + 1 < obs.len() {
                    let next = obs[t + 1];
                    for i in 0..n {
                        for j in 0..n {
                            acc.transitions[i][j] +=
                                fwd.alpha[t][i] * self.a[i][j] * self.b[j][next] * beta[t + 1][j];
                        }
                    }
                }
            }
        }
        Ok(acc)
    }

    /// Applies the M-step in place and returns the states left untouched for lack of data.
    fn maximization(&mut self, stats: &Expectations, floor: f64) -> Vec<usize> {
        let n = self.n_states();
        let mut starved = Vec::new();
        let pi_allowed: Vec<bool> = (0..n).map(|i| self.initial_allowed(i)).collect();
        if stats.initial.iter().sum::<f64>() > 0.0 {
            self.pi = floored_distribution(&stats.initial, &pi_allowed, floor);
        }
        for i in 0..n {
            if !(stats.occupancy[i] > 0.0) {
                starved.push(i);
                continue;
            }
            let allowed: Vec<bool> = (0..n).map(|j| self.transition_allowed(i, j)).collect();
            if stats.transitions[i].iter().sum::<f64>() > 0.0 {
                self.a[i] = floored_distribution(&stats.transitions[i], &allowed, floor);
            }
            let all = vec![true; self.n_symbols()];
            self.b[i] = floored_distribution(&stats.emissions[i], &all, floor);
        }
        starved
    }
}

struct Expectations {
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<Vec<f64>>,
    occupancy: Vec<f64>,
    log_likelihood: f64,
}
