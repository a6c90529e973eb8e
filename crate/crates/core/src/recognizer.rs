//! Keyword recognizer: per-keyword discrete HMMs score an utterance by
//! Viterbi fast-match, then an MLP rescores the N best hypotheses.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{pool_rows, train_ann, AnnError, AnnHistory, AnnTrainConfig, Example, Mlp};
use crate::audio::{mix_seed, read_wav, AudioBuffer, AudioError};
use crate::corpus::CorpusEntry;
use crate::frontend::{extract_features, FeatureMatrix, FrontendConfig, FrontendError};
use crate::hmm::{BaumWelchOptions, DiscreteHmm, HmmError, TrainTrace};
use crate::quantizer::{train_codebook, Codebook, Normalization, QuantizerError};

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_THETA: f64 = -1.6;
pub const DEFAULT_NBEST: usize = 5;
pub const POSTERIOR_OFFSET: f64 = 1e-12;
pub const MIN_UTTERANCES_PER_KEYWORD: usize = 3;
pub const MIN_SPEAKERS: usize = 2;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("keyword '{keyword}' has {have} training utterances, need at least {need}")]
    InsufficientExamples {
        keyword: String,
        have: usize,
        need: usize,
    },
    #[error("corpus has {have} distinct speakers, need at least {need}")]
    InsufficientSpeakers { have: usize, need: usize },
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("n-best size must be at least 1")]
    InvalidNBest,
    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        source: Box<RecognizerError>,
    },
    #[error("model file version {found} is not supported (expected {MODEL_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Ann(#[from] AnnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RecognizerError {
    fn in_file(self, path: &Path) -> Self {
        RecognizerError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through file annotations.
    pub fn root(&self) -> &RecognizerError {
        match self {
            RecognizerError::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_no_speech(&self) -> bool {
        matches!(
            self.root(),
            RecognizerError::Frontend(FrontendError::NoSpeech)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub frontend: FrontendConfig,
    pub codebook_size: usize,
    pub n_states: usize,
    pub baum_welch: BaumWelchOptions,
    /// `seed` is ignored; the ANN seed is derived from [`TrainConfig::seed`].
    pub ann: AnnTrainConfig,
    pub pooling_segments: usize,
    pub lambda: f64,
    pub theta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            frontend: FrontendConfig::default(),
            codebook_size: 64,
            n_states: 5,
            baum_welch: BaumWelchOptions::default(),
            ann: AnnTrainConfig::default(),
            pooling_segments: 8,
            lambda: DEFAULT_LAMBDA,
            theta: DEFAULT_THETA,
            seed: 42,
        }
    }
}

/// Trained recognizer. Immutable once built; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordModelSet {
    pub version: u32,
    pub vocabulary: Vec<String>,
    pub frontend_config: FrontendConfig,
    pub normalization: Normalization,
    pub codebook: Codebook,
    pub hmms: IndexMap<String, DiscreteHmm>,
    pub mlp: Mlp,
    pub pooling_segments: usize,
    pub lambda: f64,
    pub theta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTrainReport {
    pub keyword: String,
    pub utterances: usize,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub keywords: Vec<KeywordTrainReport>,
    pub codebook_distortion: f64,
    pub ann: AnnHistory,
    pub clamped_reflections: usize,
    pub silent_frames: usize,
}

impl TrainReport {
    pub fn ann_final_loss(&self) -> f64 {
        self.ann
            .heldout_loss
            .get(self.ann.best_epoch.saturating_sub(1))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

/// A labeled in-memory training utterance.
#[derive(Debug, Clone)]
pub struct LabeledAudio {
    pub audio: AudioBuffer,
    pub keyword: String,
    pub speaker: String,
    /// Used only to annotate errors.
    pub source: Option<PathBuf>,
}

/// Reads every WAV in the corpus and trains on it.
pub fn train_vocabulary(
    corpus: &[CorpusEntry],
    config: &TrainConfig,
) -> Result<(WordModelSet, TrainReport), RecognizerError> {
    let data = corpus
        .par_iter()
        .map(|e| {
            let audio =
                read_wav(&e.path).map_err(|err| RecognizerError::from(err).in_file(&e.path))?;
            Ok(LabeledAudio {
                audio,
                keyword: e.keyword.clone(),
                speaker: e.speaker.clone(),
                source: Some(e.path.clone()),
            })
        })
        .collect::<Result<Vec<_>, RecognizerError>>()?;
    train_from_audio(&data, config)
}

/// Trains on in-memory audio. The vocabulary follows first appearance.
pub fn train_from_audio(
    data: &[LabeledAudio],
    config: &TrainConfig,
) -> Result<(WordModelSet, TrainReport), RecognizerError> {
    validate_train_config(config)?;
    let mut by_keyword: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, item) in data.iter().enumerate() {
        by_keyword.entry(item.keyword.as_str()).or_default().push(i);
    }
    if by_keyword.is_empty() {
        return Err(RecognizerError::EmptyVocabulary);
    }
    for (keyword, idx) in &by_keyword {
        if idx.len() < MIN_UTTERANCES_PER_KEYWORD {
            return Err(RecognizerError::InsufficientExamples {
                keyword: keyword.to_string(),
                have: idx.len(),
                need: MIN_UTTERANCES_PER_KEYWORD,
            });
        }
    }
    let speakers: BTreeSet<&str> = data.iter().map(|d| d.speaker.as_str()).collect();
    if speakers.len() < MIN_SPEAKERS {
        return Err(RecognizerError::InsufficientSpeakers {
            have: speakers.len(),
            need: MIN_SPEAKERS,
        });
    }

    let features = data
        .par_iter()
        .map(|d| {
            extract_features(&d.audio, &config.frontend).map_err(|e| {
                let err = RecognizerError::from(e);
                match &d.source {
                    Some(p) => err.in_file(p),
                    None => err,
                }
            })
        })
        .collect::<Result<Vec<FeatureMatrix>, _>>()?;
    let clamped_reflections = features
        .iter()
        .map(|f| f.diagnostics.clamped_reflections)
        .sum();
    let silent_frames = features.iter().map(|f| f.diagnostics.silent_frames).sum();

    let all_rows: Vec<Vec<f64>> = features
        .iter()
        .flat_map(|f| f.rows().iter().cloned())
        .collect();
    let normalization = Normalization::fit(&all_rows)?;
    let normalized = features
        .iter()
        .map(|f| normalization.apply_matrix(f))
        .collect::<Result<Vec<_>, _>>()?;
    let norm_rows: Vec<Vec<f64>> = normalized
        .iter()
        .flat_map(|f| f.rows().iter().cloned())
        .collect();
    let codebook = train_codebook(
        &norm_rows,
        config.codebook_size,
        mix_seed(config.seed ^ 0x0c0d_eb00_c000_0001),
    )?;
    log::info!(
        "codebook: {} centroids, distortion {:.6}",
        codebook.size(),
        codebook.distortion
    );
    let symbols = normalized
        .iter()
        .map(|f| codebook.encode(f))
        .collect::<Result<Vec<_>, _>>()?;

    let vocabulary: Vec<String> = by_keyword.keys().map(|k| k.to_string()).collect();
    let trained = by_keyword
        .values()
        .enumerate()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(k, idx)| {
            let seqs: Vec<Vec<usize>> = idx.iter().map(|&i| symbols[i].clone()).collect();
            let init = DiscreteHmm::init_left_right(
                config.n_states,
                codebook.size(),
                mix_seed(config.seed ^ (0x4d4d_0000 + k as u64)),
            )?;
            init.baum_welch(&seqs, &config.baum_welch)
        })
        .collect::<Result<Vec<_>, HmmError>>()?;

    let mut hmms = IndexMap::new();
    let mut keyword_reports = Vec::new();
    for ((keyword, idx), (hmm, trace)) in vocabulary.iter().zip(by_keyword.values()).zip(trained) {
        log::info!(
            "keyword '{}': {} utterances, {} iterations, final log-likelihood {:.6}",
            keyword,
            idx.len(),
            trace.iterations,
            trace.log_likelihoods.last().copied().unwrap_or(f64::NAN)
        );
        hmms.insert(keyword.clone(), hmm);
        keyword_reports.push(KeywordTrainReport {
            keyword: keyword.clone(),
            utterances: idx.len(),
            trace,
        });
    }

    let class_of: IndexMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let dataset: Vec<Example> = normalized
        .iter()
        .zip(data)
        .map(|(f, d)| {
            (
                pool_rows(f.rows(), config.pooling_segments),
                class_of[d.keyword.as_str()],
            )
        })
        .collect();
    let ann_cfg = AnnTrainConfig {
        seed: mix_seed(config.seed ^ 0xa11_0000_0000),
        ..config.ann
    };
    let (mlp, history) = train_ann(&dataset, vocabulary.len(), &ann_cfg)?;
    log::info!(
        "ann: best epoch {}, final held-out loss {:.6}",
        history.best_epoch,
        history
            .heldout_loss
            .get(history.best_epoch.saturating_sub(1))
            .copied()
            .unwrap_or(f64::NAN)
    );

    let set = WordModelSet {
        version: MODEL_VERSION,
        vocabulary,
        frontend_config: config.frontend.clone(),
        normalization,
        codebook,
        hmms,
        mlp,
        pooling_segments: config.pooling_segments,
        lambda: config.lambda,
        theta: config.theta,
        seed: config.seed,
    };
    set.validate()?;
    let report = TrainReport {
        keywords: keyword_reports,
        codebook_distortion: set.codebook.distortion,
        ann: history,
        clamped_reflections,
        silent_frames,
    };
    Ok((set, report))
}

fn validate_train_config(config: &TrainConfig) -> Result<(), RecognizerError> {
    config.frontend.validate()?;
    config.ann.validate()?;
    if config.codebook_size == 0 || config.n_states == 0 || config.pooling_segments == 0 {
        return Err(RecognizerError::InvalidConfig(
            "codebook size, state count and pooling segments must be positive".into(),
        ));
    }
    check_lambda_theta(config.lambda, config.theta).map_err(RecognizerError::InvalidConfig)
}

fn check_lambda_theta(lambda: f64, theta: f64) -> Result<(), String> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(format!("lambda {lambda} outside [0, 1]"));
    }
    if theta.is_nan() {
        return Err("theta is NaN".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NBestEntry {
    pub keyword: String,
    pub vocab_index: usize,
    /// Viterbi log-score divided by the frame count.
    pub hmm_score: f64,
    pub ann_posterior: f64,
    pub combined: f64,
}

/// Hypotheses ranked by combined score, ties broken by vocabulary index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NBestList {
    pub entries: Vec<NBestEntry>,
    pub n_frames: usize,
}

impl NBestList {
    pub fn top(&self) -> Option<&NBestEntry> {
        self.entries.first()
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.keyword.len())
            .max()
            .unwrap_or(0)
            .max(7);
        let mut out = format!(
            "{:<4} {:<width$} {:>12} {:>13} {:>12}\n",
            "rank", "keyword", "hmm_score", "ann_posterior", "combined"
        );
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{:<4} {:<width$} {:>12.4} {:>13.6} {:>12.4}\n",
                i + 1,
                e.keyword,
                e.hmm_score,
                e.ann_posterior,
                e.combined
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Accepted { keyword: String, score: f64 },
    Rejected { best: String, score: f64 },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted { .. })
    }
}

/// Accepts the top entry iff its combined score is at least `theta`.
/// Returns `None` for an empty list.
pub fn decide(list: &NBestList, theta: f64) -> Option<Decision> {
    let top = list.top()?;
    Some(if top.combined >= theta {
        Decision::Accepted {
            keyword: top.keyword.clone(),
            score: top.combined,
        }
    } else {
        Decision::Rejected {
            best: top.keyword.clone(),
            score: top.combined,
        }
    })
}

fn rank(a: f64, ai: usize, b: f64, bi: usize) -> Ordering {
    b.total_cmp(&a).then(ai.cmp(&bi))
}

impl WordModelSet {
    pub fn validate(&self) -> Result<(), RecognizerError> {
        let corrupt = |m: String| Err(RecognizerError::CorruptModel(m));
        if self.version != MODEL_VERSION {
            return Err(RecognizerError::VersionMismatch {
                found: self.version as u64,
            });
        }
        if self.vocabulary.is_empty() {
            return Err(RecognizerError::EmptyVocabulary);
        }
        let unique: BTreeSet<&String> = self.vocabulary.iter().collect();
        if unique.len() != self.vocabulary.len() || self.vocabulary.iter().any(|k| k.is_empty()) {
            return corrupt("vocabulary has empty or duplicate keywords".into());
        }
        if !self.hmms.keys().eq(self.vocabulary.iter()) {
            return corrupt("hmm keys do not match the vocabulary".into());
        }
        self.frontend_config
            .validate()
            .or_else(|e| corrupt(format!("frontend config: {e}")))?;
        let dim = self.frontend_config.feature_dim();
        self.normalization
            .validate()
            .or_else(|e| corrupt(format!("normalization: {e}")))?;
        self.codebook
            .validate()
            .or_else(|e| corrupt(format!("codebook: {e}")))?;
        if self.normalization.dim() != dim || self.codebook.dim() != dim {
            return corrupt(format!("feature dimension mismatch, expected {dim}"));
        }
        for (keyword, hmm) in &self.hmms {
            hmm.validate()
                .or_else(|e| corrupt(format!("hmm '{keyword}': {e}")))?;
            if hmm.n_symbols() != self.codebook.size() {
                return corrupt(format!(
                    "hmm '{keyword}' alphabet differs from codebook size"
                ));
            }
        }
        self.mlp
            .validate()
            .or_else(|e| corrupt(format!("mlp: {e}")))?;
        if self.pooling_segments == 0 {
            return corrupt("pooling segments must be positive".into());
        }
        if self.mlp.n_classes != self.vocabulary.len()
            || self.mlp.n_inputs != self.pooling_segments * dim
        {
            return corrupt("mlp shape does not match vocabulary and pooled feature size".into());
        }
        check_lambda_theta(self.lambda, self.theta).or_else(corrupt)?;
        Ok(())
    }

    /// Normalized front-end features for an utterance.
    pub fn features(&self, audio: &AudioBuffer) -> Result<FeatureMatrix, RecognizerError> {
        let raw = extract_features(audio, &self.frontend_config)?;
        Ok(self.normalization.apply_matrix(&raw)?)
    }

    /// Per-frame Viterbi score of every vocabulary model, in vocabulary order.
    pub fn hmm_scores(&self, symbols: &[usize]) -> Result<Vec<f64>, RecognizerError> {
        let t = symbols.len() as f64;
        self.hmms
            .values()
            .map(|hmm| Ok(hmm.viterbi(symbols)?.1 / t))
            .collect()
    }

    /// Recognizes an utterance with this set's rescoring weight.
    pub fn recognize(&self, audio: &AudioBuffer, n: usize) -> Result<NBestList, RecognizerError> {
        self.recognize_with_lambda(audio, n, self.lambda)
    }

    pub fn recognize_with_lambda(
        &self,
        audio: &AudioBuffer,
        n: usize,
        lambda: f64,
    ) -> Result<NBestList, RecognizerError> {
        let features = self.features(audio)?;
        self.recognize_features(&features, n, lambda)
    }

    /// Recognition from normalized features.
    pub fn recognize_features(
        &self,
        features: &FeatureMatrix,
        n: usize,
        lambda: f64,
    ) -> Result<NBestList, RecognizerError> {
        if n == 0 {
            return Err(RecognizerError::InvalidNBest);
        }
        if self.vocabulary.is_empty() {
            return Err(RecognizerError::EmptyVocabulary);
        }
        let symbols = self.codebook.encode(features)?;
        let scores = self.hmm_scores(&symbols)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| rank(scores[a], a, scores[b], b));
        order.truncate(n);
        let posteriors = self
            .mlp
            .forward(&pool_rows(features.rows(), self.pooling_segments))?;
        let mut entries: Vec<NBestEntry> = order
            .into_iter()
            .map(|k| NBestEntry {
                keyword: self.vocabulary[k].clone(),
                vocab_index: k,
                hmm_score: scores[k],
                ann_posterior: posteriors[k],
                combined: (1.0 - lambda) * scores[k]
                    + lambda * (posteriors[k] + POSTERIOR_OFFSET).ln(),
            })
            .collect();
        entries.sort_by(|a, b| rank(a.combined, a.vocab_index, b.combined, b.vocab_index));
        Ok(NBestList {
            entries,
            n_frames: symbols.len(),
        })
    }

    pub fn decide(&self, list: &NBestList) -> Option<Decision> {
        decide(list, self.theta)
    }

    pub fn to_json(&self) -> Result<String, RecognizerError> {
        self.validate()?;
        if !self.theta.is_finite() {
            return Err(RecognizerError::InvalidConfig(
                "theta must be finite to be saved".into(),
            ));
        }
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTripFormatter);
        self.serialize(&mut ser)
            .map_err(|e| RecognizerError::CorruptModel(e.to_string()))?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("serializer emits UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self, RecognizerError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RecognizerError::CorruptModel(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(RecognizerError::VersionMismatch { found: v }),
            None => {
                return Err(RecognizerError::CorruptModel(
                    "missing or non-integer version".into(),
                ))
            }
        }
        // Object key order carries the vocabulary order, so parse the text directly.
        let set: WordModelSet =
            serde_json::from_str(text).map_err(|e| RecognizerError::CorruptModel(e.to_string()))?;
        set.validate().map_err(|e| match e {
            RecognizerError::CorruptModel(_) => e,
            other => RecognizerError::CorruptModel(other.to_string()),
        })?;
        Ok(set)
    }
}

pub fn save_model(set: &WordModelSet, path: impl AsRef<Path>) -> Result<(), RecognizerError> {
    fs::write(path, set.to_json()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<WordModelSet, RecognizerError> {
    WordModelSet::from_json(&fs::read_to_string(path)?)
}

/// Compact JSON with every float written to 17 significant digits.
struct RoundTripFormatter;

impl serde_json::ser::Formatter for RoundTripFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}
