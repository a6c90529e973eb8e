//! Deterministic synthetic keyword corpus.
//!
//! Every keyword is a short sequence of "phones", each rendered as the sum of
//! two sinusoids. A speaker id maps to a fixed voice profile (frequency
//! scale, loudness, tempo) so the same speaker sounds alike across keywords,
//! while the per-utterance seed only drives phases, noise and a small
//! shared tempo jitter.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::{mix_seed, ms_to_samples, AudioBuffer, AudioError};

const BUILTIN_LEXICON: &str = include_str!("../../config/lexicon.toml");

// Perturbation bounds. Speaker frequency scale times per-segment jitter stays
// within +-8%; speaker tempo times per-segment jitter stays within +-6.6%, so
// two speakers' durations never differ by more than 15%.
const FREQ_SCALE: f64 = 0.065;
const FREQ_JITTER: f64 = 0.01;
const TEMPO_SCALE: f64 = 0.05;
const TEMPO_JITTER: f64 = 0.015;
const REP_TEMPO_JITTER: f64 = 0.03;
const EDGE_FADE_MS: f64 = 10.0;
const SEGMENT_FADE_MS: f64 = 3.0;
const SECOND_TONE_GAIN: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub keyword: String,
    pub speaker_id: u32,
    pub duration_ms: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct WordEntry {
    pub keyword: String,
    pub duration_ms: u32,
    pub segments: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Lexicon {
    pub sample_rate_hz: u32,
    pub pad_ms: u32,
    pub tone_amplitude: f64,
    pub pad_noise: f64,
    pub body_noise: f64,
    pub phones: BTreeMap<String, [f64; 2]>,
    pub words: Vec<WordEntry>,
}

impl Lexicon {
    /// The lexicon shipped in `config/lexicon.toml`.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, AudioError> {
        let lex: Lexicon =
            toml::from_str(text).map_err(|e| AudioError::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AudioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: String| Err(AudioError::InvalidLexicon(m));
        if self.sample_rate_hz == 0 {
            return bad("sample rate must be positive".into());
        }
        let worst_peak = self.tone_amplitude * (1.0 + SECOND_TONE_GAIN) + self.body_noise;
        if worst_peak >= 1.0 || self.pad_noise > 0.005 {
            return bad(
                "amplitudes would leave the [-1, 1] range or pads would not be near-silent".into(),
            );
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        for (name, f) in &self.phones {
            if f.iter()
                .any(|&hz| hz <= 0.0 || hz * (1.0 + FREQ_SCALE + FREQ_JITTER) * 1.01 >= nyquist)
            {
                return bad(format!("phone {name} has a frequency outside (0, nyquist)"));
            }
        }
        for w in &self.words {
            if !(2..=4).contains(&w.segments.len()) {
                return bad(format!("keyword {} needs 2-4 segments", w.keyword));
            }
            if let Some(p) = w.segments.iter().find(|p| !self.phones.contains_key(*p)) {
                return bad(format!("keyword {} uses unknown phone {p}", w.keyword));
            }
            if w.duration_ms < 100 {
                return bad(format!("keyword {} is shorter than 100 ms", w.keyword));
            }
        }
        Ok(())
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.keyword.as_str())
    }

    pub fn word(&self, keyword: &str) -> Option<&WordEntry> {
        self.words.iter().find(|w| w.keyword == keyword)
    }

    /// A spec using the keyword's configured duration.
    pub fn spec(&self, keyword: &str, speaker_id: u32, seed: u64) -> Result<SynthSpec, AudioError> {
        let w = self
            .word(keyword)
            .ok_or_else(|| AudioError::UnknownSyntheticKeyword(keyword.to_string()))?;
        Ok(SynthSpec {
            keyword: keyword.to_string(),
            speaker_id,
            duration_ms: w.duration_ms,
            seed,
        })
    }
}

struct Voice {
    freq_scale: f64,
    loudness: f64,
    tempo: f64,
}

impl Voice {
    fn for_speaker(speaker_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(0x5EED_0000 ^ speaker_id as u64));
        Voice {
            freq_scale: 1.0 + rng.gen_range(-FREQ_SCALE..=FREQ_SCALE),
            loudness: rng.gen_range(0.75..=1.0),
            tempo: 1.0 + rng.gen_range(-TEMPO_SCALE..=TEMPO_SCALE),
        }
    }
}

fn keyword_hash(keyword: &str) -> u64 {
    keyword.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01B3)
    })
}

fn apply_fades(samples: &mut [f64], fade: usize) {
    let n = samples.len();
    let fade = fade.min(n / 2);
    for i in 0..fade {
        let g = 0.5 - 0.5 * (PI * i as f64 / fade as f64).cos();
        samples[i] *= g;
        samples[n - 1 - i] *= g;
    }
}

pub fn synth_word(lexicon: &Lexicon, spec: &SynthSpec) -> Result<AudioBuffer, AudioError> {
    synth_word_with_bounds(lexicon, spec).map(|(buf, _)| buf)
}

/// Renders the keyword and also returns the sample range occupied by the
/// word body (everything between the silence pads).
pub fn synth_word_with_bounds(
    lexicon: &Lexicon,
    spec: &SynthSpec,
) -> Result<(AudioBuffer, Range<usize>), AudioError> {
    let word = lexicon
        .word(&spec.keyword)
        .ok_or_else(|| AudioError::UnknownSyntheticKeyword(spec.keyword.clone()))?;
    if spec.duration_ms == 0 {
        return Err(AudioError::InvalidBuffer(
            "duration_ms must be positive".into(),
        ));
    }
    let sr = lexicon.sample_rate_hz;
    let voice = Voice::for_speaker(spec.speaker_id);
    let mut speaker_word_rng = ChaCha8Rng::seed_from_u64(mix_seed(
        keyword_hash(&spec.keyword) ^ mix_seed(spec.speaker_id as u64),
    ));
    let mut rep_rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed));
    let rep_tempo = 1.0 + rep_rng.gen_range(-REP_TEMPO_JITTER..=REP_TEMPO_JITTER);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(
        spec.seed ^ keyword_hash(&spec.keyword) ^ mix_seed(spec.speaker_id as u64 + 1),
    ));

    let seg_ms = spec.duration_ms as f64 / word.segments.len() as f64;
    let amp = lexicon.tone_amplitude * voice.loudness;
    let mut body = Vec::new();
    for phone in &word.segments {
        let [f1, f2] = lexicon.phones[phone];
        let jitter_f1 = 1.0 + speaker_word_rng.gen_range(-FREQ_JITTER..=FREQ_JITTER);
        let jitter_f2 = 1.0 + speaker_word_rng.gen_range(-FREQ_JITTER..=FREQ_JITTER);
        let dur_jitter = 1.0 + speaker_word_rng.gen_range(-TEMPO_JITTER..=TEMPO_JITTER);
        let f1 = f1 * voice.freq_scale * jitter_f1;
        let f2 = f2 * voice.freq_scale * jitter_f2;
        let n = ms_to_samples(seg_ms * voice.tempo * dur_jitter * rep_tempo, sr).max(1);
        let phase1 = rep_rng.gen_range(0.0..2.0 * PI);
        let phase2 = rep_rng.gen_range(0.0..2.0 * PI);
        let mut seg: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                amp * ((2.0 * PI * f1 * t + phase1).sin()
                    + SECOND_TONE_GAIN * (2.0 * PI * f2 * t + phase2).sin())
            })
            .collect();
        apply_fades(&mut seg, ms_to_samples(SEGMENT_FADE_MS, sr));
        body.extend(seg);
    }
    apply_fades(&mut body, ms_to_samples(EDGE_FADE_MS, sr));
    for s in body.iter_mut() {
        *s += noise_rng.gen_range(-lexicon.body_noise..=lexicon.body_noise);
    }

    let pad = ms_to_samples(lexicon.pad_ms as f64, sr);
    let mut samples = Vec::with_capacity(body.len() + 2 * pad);
    samples.extend((0..pad).map(|_| noise_rng.gen_range(-lexicon.pad_noise..=lexicon.pad_noise)));
    let bounds = samples.len()..samples.len() + body.len();
    samples.extend(body);
    samples.extend((0..pad).map(|_| noise_rng.gen_range(-lexicon.pad_noise..=lexicon.pad_noise)));
    Ok((AudioBuffer::new(samples, sr)?, bounds))
}

/// Seed for one corpus utterance. Depends on the keyword text rather than its
/// position, so subsets of the vocabulary reproduce the same audio.
pub fn utterance_seed(base_seed: u64, keyword: &str, speaker_id: u32, rep: u32) -> u64 {
    let mut h = mix_seed(base_seed);
    for b in keyword.bytes() {
        h = mix_seed(h ^ b as u64);
    }
    mix_seed(h ^ ((speaker_id as u64) << 32 | rep as u64))
}

/// White noise burst framed by near-silent pads, loud enough to pass
/// endpoint detection. Used to probe rejection.
pub fn synth_noise(
    lexicon: &Lexicon,
    seed: u64,
    duration_ms: u32,
) -> Result<AudioBuffer, AudioError> {
    let sr = lexicon.sample_rate_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x0015_E000));
    let level = rng.gen_range(0.15..=0.45);
    let n = ms_to_samples(duration_ms as f64, sr).max(1);
    let mut body: Vec<f64> = (0..n).map(|_| rng.gen_range(-level..=level)).collect();
    apply_fades(&mut body, ms_to_samples(EDGE_FADE_MS, sr));
    let pad = ms_to_samples(lexicon.pad_ms as f64, sr);
    let mut samples = Vec::with_capacity(n + 2 * pad);
    samples.extend((0..pad).map(|_| rng.gen_range(-lexicon.pad_noise..=lexicon.pad_noise)));
    samples.extend(body);
    samples.extend((0..pad).map(|_| rng.gen_range(-lexicon.pad_noise..=lexicon.pad_noise)));
    AudioBuffer::new(samples, sr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_abs(x: &[f64]) -> f64 {
        x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn builtin_lexicon_has_ten_keywords() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.words.len(), 10);
        assert_eq!(lex.keywords().next(), Some("zero"));
    }

    #[test]
    fn utterance_seeds_differ() {
        let a = utterance_seed(42, "one", 1, 0);
        assert_eq!(a, utterance_seed(42, "one", 1, 0));
        assert_ne!(a, utterance_seed(42, "one", 1, 1));
        assert_ne!(a, utterance_seed(42, "one", 2, 0));
        assert_ne!(a, utterance_seed(42, "two", 1, 0));
        assert_ne!(a, utterance_seed(43, "one", 1, 0));
    }

    #[test]
    fn deterministic() {
        let lex = Lexicon::builtin();
        let spec = lex.spec("three", 4, 99).unwrap();
        let a = synth_word(&lex, &spec).unwrap();
        let b = synth_word(&lex, &spec).unwrap();
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn speakers_differ_but_durations_are_close() {
        let lex = Lexicon::builtin();
        for kw in lex.keywords() {
            for (s1, s2) in [(1, 2), (3, 14), (7, 11)] {
                let a = synth_word_with_bounds(&lex, &lex.spec(kw, s1, 5).unwrap()).unwrap();
                let b = synth_word_with_bounds(&lex, &lex.spec(kw, s2, 5).unwrap()).unwrap();
                assert_ne!(a.0.samples(), b.0.samples());
                let (da, db) = (a.1.len() as f64, b.1.len() as f64);
                assert!((da / db - 1.0).abs() <= 0.15, "{kw}: {da} vs {db}");
                let (ta, tb) = (a.0.len() as f64, b.0.len() as f64);
                assert!((ta / tb - 1.0).abs() <= 0.15);
            }
        }
    }

    #[test]
    fn pads_are_quiet_and_body_is_loud() {
        let lex = Lexicon::builtin();
        for kw in lex.keywords() {
            for speaker in 1..=15 {
                let buf = synth_word(&lex, &lex.spec(kw, speaker, 3).unwrap()).unwrap();
                let x = buf.samples();
                let head = buf.ms_to_samples(100.0);
                assert!(mean_abs(&x[..head]) <= 0.005);
                let third = x.len() / 3;
                assert!(mean_abs(&x[third..2 * third]) >= 0.05);
                assert!(x.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn unknown_keyword_is_rejected() {
        let lex = Lexicon::builtin();
        let spec = SynthSpec {
            keyword: "eleven".into(),
            speaker_id: 1,
            duration_ms: 500,
            seed: 0,
        };
        assert!(matches!(
            synth_word(&lex, &spec),
            Err(AudioError::UnknownSyntheticKeyword(_))
        ));
        assert!(lex.spec("eleven", 1, 0).is_err());
    }

    #[test]
    fn lexicon_validation() {
        let text = BUILTIN_LEXICON.replace("segments = [\"H\", \"B\"]", "segments = [\"H\"]");
        assert!(Lexicon::from_toml(&text).is_err());
        let text =
            BUILTIN_LEXICON.replace("segments = [\"G\", \"C\"]", "segments = [\"G\", \"Z\"]");
        assert!(Lexicon::from_toml(&text).is_err());
    }

    #[test]
    fn noise_burst_is_deterministic_and_padded() {
        let lex = Lexicon::builtin();
        let a = synth_noise(&lex, 3, 400).unwrap();
        assert_eq!(a.samples(), synth_noise(&lex, 3, 400).unwrap().samples());
        let head = a.ms_to_samples(100.0);
        assert!(mean_abs(&a.samples()[..head]) <= 0.005);
        assert!(mean_abs(&a.samples()[head + 400..head + 2000]) >= 0.05);
    }
}
