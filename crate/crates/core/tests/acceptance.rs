//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isoword::ann::{Example, Mlp};
use isoword::audio::{
    read_wav, synth_noise, synth_word, utterance_seed, write_wav, AudioBuffer, Lexicon,
};
use isoword::corpus::{manifest_line, read_manifest, CorpusEntry};
use isoword::frontend::levinson_durbin;
use isoword::hmm::{BaumWelchOptions, DiscreteHmm, PROBABILITY_FLOOR};
use isoword::recognizer::{
    decide, load_model, save_model, train_vocabulary, Decision, TrainConfig, WordModelSet,
    DEFAULT_NBEST,
};
use isoword::retrieval::{load_store, save_store, Record, Store};

const HMM_ORACLE_TOL: f64 = 1e-10;
const HMM_ORACLE_BUDGET: Duration = Duration::from_secs(5);
const BW_SLACK: f64 = 1e-8;
const BW_ROW_SUM_TOL: f64 = 1e-12;
const BW_BUDGET: Duration = Duration::from_secs(10);
const LD_TOL: f64 = 1e-8;
const GRAD_EPS: f64 = 1e-4;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_REL_FLOOR: f64 = 1e-8;
const E2E_MIN_ACCURACY: f64 = 0.90;
const E2E_MAX_RESCORE_LOSS: f64 = 0.02;
const E2E_BUDGET: Duration = Duration::from_secs(120);
const NOISE_MIN_REJECT: f64 = 0.80;
const TRUE_MAX_REJECT: f64 = 0.10;
const WAV_TOL: f64 = 1.0 / 32768.0;
const CORPUS_SEED: u64 = 42;
const TRAIN_SPEAKERS: std::ops::RangeInclusive<u32> = 1..=10;
const TEST_SPEAKERS: std::ops::RangeInclusive<u32> = 11..=15;
const REPS: u32 = 2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// Criterion 1 ---------------------------------------------------------------

/// Joint log-probability of one path, accumulated in Viterbi's order.
fn path_log_score(h: &DiscreteHmm, path: &[usize], obs: &[usize]) -> f64 {
    let mut s = h.pi[path[0]].ln() + h.b[path[0]][obs[0]].ln();
    for t in 1..obs.len() {
        s += h.a[path[t - 1]][path[t]].ln();
        s += h.b[path[t]][obs[t]].ln();
    }
    s
}

fn all_paths(n: usize, t: usize) -> Vec<Vec<usize>> {
    (0..n.pow(t as u32))
        .map(|mut code| {
            let mut p = vec![0; t];
            for slot in p.iter_mut() {
                *slot = code % n;
                code /= n;
            }
            p
        })
        .collect()
}

fn random_instance(rng: &mut ChaCha8Rng, i: usize) -> DiscreteHmm {
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=4);
    let seed = rng.gen();
    match i % 5 {
        // Uniform parameters make every path tie.
        0 => DiscreteHmm {
            pi: vec![1.0 / n as f64; n],
            a: vec![vec![1.0 / n as f64; n]; n],
            b: vec![vec![1.0 / m as f64; m]; n],
            left_right: false,
        },
        1 => DiscreteHmm::init_left_right(n, m, seed).unwrap(),
        _ => DiscreteHmm::init_random(n, m, seed).unwrap(),
    }
}

fn hmm_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut worst_fwd, mut worst_vit, mut path_mismatch) = (0.0f64, 0.0f64, 0);
    for i in 0..50 {
        let h = random_instance(&mut rng, i);
        let t = rng.gen_range(1..=6);
        let obs: Vec<usize> = (0..t).map(|_| rng.gen_range(0..h.n_symbols())).collect();
        let paths = all_paths(h.n_states(), t);
        let scores: Vec<f64> = paths.iter().map(|p| path_log_score(&h, p, &obs)).collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // Backtracking prefers lower indices from the last frame backwards.
        let expected_path = paths
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s == best)
            .map(|(p, _)| p)
            .min_by(|x, y| x.iter().rev().cmp(y.iter().rev()))
            .unwrap();
        let ll = h.log_likelihood(&obs).unwrap();
        let (path, score) = h.viterbi(&obs).unwrap();
        worst_fwd = worst_fwd.max((ll - total.ln()).abs());
        worst_vit = worst_vit.max((score - best).abs());
        if &path != expected_path {
            path_mismatch += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_fwd <= HMM_ORACLE_TOL
        && worst_vit <= HMM_ORACLE_TOL
        && path_mismatch == 0
        && elapsed < HMM_ORACLE_BUDGET;
    outcome(
        pass,
        format!(
            "50 instances: max |forward - brute| {worst_fwd:.2e}, max |viterbi - brute| {worst_vit:.2e}, \
             path mismatches {path_mismatch}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

// Criterion 2 ---------------------------------------------------------------

fn stochastic_ok(h: &DiscreteHmm, floor: f64) -> bool {
    let row_ok = |row: &[f64]| {
        (row.iter().sum::<f64>() - 1.0).abs() <= BW_ROW_SUM_TOL
            && row
                .iter()
                .all(|&p| p.is_finite() && p >= 0.0 && (p == 0.0 || p >= floor * (1.0 - 1e-12)))
    };
    h.validate().is_ok()
        && row_ok(&h.pi)
        && h.a.iter().all(|r| row_ok(r))
        && h.b.iter().all(|r| row_ok(r))
}

fn total_ll(h: &DiscreteHmm, seqs: &[Vec<usize>]) -> f64 {
    seqs.iter().map(|s| h.log_likelihood(s).unwrap()).sum()
}

fn baum_welch_monotone() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let step = BaumWelchOptions {
        max_iters: 1,
        tol: f64::NEG_INFINITY,
        floor: PROBABILITY_FLOOR,
    };
    let full = BaumWelchOptions {
        max_iters: 15,
        ..step
    };
    let (mut worst_drop, mut invariant_failures, mut trace_gap) = (0.0f64, 0, 0.0f64);
    for _ in 0..20 {
        let truth = DiscreteHmm::init_random(3, 4, rng.gen()).unwrap();
        let seqs: Vec<Vec<usize>> = (0..5).map(|_| truth.sample(20, &mut rng).1).collect();
        let init = DiscreteHmm::init_random(3, 4, rng.gen()).unwrap();
        let mut model = init.clone();
        let mut lls = vec![total_ll(&model, &seqs)];
        for _ in 0..15 {
            model = model.baum_welch(&seqs, &step).unwrap().0;
            if !stochastic_ok(&model, PROBABILITY_FLOOR) {
                invariant_failures += 1;
            }
            lls.push(total_ll(&model, &seqs));
        }
        for w in lls.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let (_, trace) = init.baum_welch(&seqs, &full).unwrap();
        if trace.log_likelihoods.len() != lls.len() {
            invariant_failures += 1;
        }
        for (a, b) in trace.log_likelihoods.iter().zip(&lls) {
            trace_gap = trace_gap.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_drop <= BW_SLACK
        && invariant_failures == 0
        && trace_gap <= 1e-9
        && elapsed < BW_BUDGET;
    outcome(
        pass,
        format!(
            "20 instances x 15 iterations: largest decrease {worst_drop:.2e}, invariant failures \
             {invariant_failures}, trace vs stepped {trace_gap:.2e}, {:.3}s",
            elapsed.as_secs_f64()
        ),
    )
}

// Criterion 3 ---------------------------------------------------------------

/// Stable AR(12) predictor from reflection coefficients in (-0.9, 0.9).
fn stable_ar(rng: &mut ChaCha8Rng, order: usize) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::new();
    for _ in 0..order {
        let k: f64 = rng.gen_range(-0.9..0.9);
        let prev = a.clone();
        a.push(k);
        for j in 0..prev.len() {
            a[j] = prev[j] - k * prev[prev.len() - 1 - j];
        }
    }
    a
}

fn ar_autocorrelation(rng: &mut ChaCha8Rng, a: &[f64], max_lag: usize) -> Vec<f64> {
    let (burn, len) = (500, 4096);
    let mut x = vec![0.0; burn + len];
    for n in 0..x.len() {
        let mut v: f64 = rng.gen_range(-1.0..1.0);
        for (k, ak) in a.iter().enumerate() {
            if n > k {
                v += ak * x[n - k - 1];
            }
        }
        x[n] = v;
    }
    let x = &x[burn..];
    let r0: f64 = x.iter().map(|v| v * v).sum();
    (0..=max_lag)
        .map(|k| (0..x.len() - k).map(|n| x[n] * x[n + k]).sum::<f64>() / r0)
        .collect()
}

fn levinson_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let (mut worst, mut increases) = (0.0f64, 0);
    for _ in 0..20 {
        let a = stable_ar(&mut rng, 12);
        let r = ar_autocorrelation(&mut rng, &a, 12);
        let mut prev_error = r[0];
        for p in 1..=12 {
            let lpc = levinson_durbin(&r, p).unwrap();
            let toeplitz = DMatrix::from_fn(p, p, |i, j| r[i.abs_diff(j)]);
            let rhs = DVector::from_fn(p, |i, _| r[i + 1]);
            let dense = toeplitz.lu().solve(&rhs).unwrap();
            for i in 0..p {
                worst = worst.max((lpc.coeffs[i] - dense[i]).abs());
            }
            if lpc.error > prev_error {
                increases += 1;
            }
            prev_error = lpc.error;
        }
    }
    outcome(
        worst <= LD_TOL && increases == 0,
        format!("20 AR processes x orders 1..12: max |a - dense| {worst:.2e}, error increases {increases}"),
    )
}

// Criterion 4 ---------------------------------------------------------------

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4004);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..10 {
        let mlp = Mlp::new_seeded(3, 2, 2, rng.gen());
        let size = rng.gen_range(1..=16);
        let batch: Vec<Example> = (0..size)
            .map(|_| {
                (
                    (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                    rng.gen_range(0..2),
                )
            })
            .collect();
        let (_, grad) = mlp.loss_and_gradient(&batch).unwrap();
        for (k, analytic) in grad.params().enumerate() {
            let mut plus = mlp.clone();
            *plus.params_mut().nth(k).unwrap() += GRAD_EPS;
            let mut minus = mlp.clone();
            *minus.params_mut().nth(k).unwrap() -= GRAD_EPS;
            let numeric =
                (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * GRAD_EPS);
            let rel =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    outcome(
        worst <= GRAD_REL_TOL && checked == 10 * (3 * 2 + 2 + 2 * 2 + 2),
        format!("10 batches, {checked} parameters: max relative error {worst:.2e}"),
    )
}

// Criteria 5 to 7 -------------------------------------------------------------

/// Writes the synthetic corpus for `speakers` and returns its manifest rows.
fn write_corpus(dir: &Path, speakers: std::ops::RangeInclusive<u32>) -> Vec<CorpusEntry> {
    std::fs::create_dir_all(dir).unwrap();
    let lex = Lexicon::builtin();
    let mut manifest = String::new();
    for keyword in lex.keywords() {
        for speaker in speakers.clone() {
            for rep in 0..REPS {
                let spec = lex
                    .spec(
                        keyword,
                        speaker,
                        utterance_seed(CORPUS_SEED, keyword, speaker, rep),
                    )
                    .unwrap();
                let name = format!("{keyword}_s{speaker:02}_r{rep}.wav");
                write_wav(&synth_word(&lex, &spec).unwrap(), dir.join(&name)).unwrap();
                manifest.push_str(&manifest_line(&name, keyword, &speaker.to_string()));
            }
        }
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).unwrap();
    read_manifest(&path).unwrap()
}

struct Trained {
    model: WordModelSet,
    test: Vec<(AudioBuffer, String)>,
    train_manifest: Vec<CorpusEntry>,
}

fn accuracy(model: &WordModelSet, test: &[(AudioBuffer, String)], lambda: f64) -> f64 {
    let correct = test
        .iter()
        .filter(|(audio, keyword)| {
            let list = model
                .recognize_with_lambda(audio, DEFAULT_NBEST, lambda)
                .unwrap();
            &list.top().unwrap().keyword == keyword
        })
        .count();
    correct as f64 / test.len() as f64
}

fn end_to_end(dir: &Path) -> (Outcome, Trained) {
    let start = Instant::now();
    let train_manifest = write_corpus(&dir.join("train"), TRAIN_SPEAKERS);
    let test_manifest = write_corpus(&dir.join("test"), TEST_SPEAKERS);
    let (model, _) = train_vocabulary(&train_manifest, &TrainConfig::default()).unwrap();
    let test: Vec<(AudioBuffer, String)> = test_manifest
        .iter()
        .map(|e| (read_wav(&e.path).unwrap(), e.keyword.clone()))
        .collect();
    let acc_rescored = accuracy(&model, &test, 0.5);
    let acc_fast_match = accuracy(&model, &test, 0.0);
    let elapsed = start.elapsed();
    let pass = test.len() == 100
        && acc_rescored >= E2E_MIN_ACCURACY
        && acc_rescored >= acc_fast_match - E2E_MAX_RESCORE_LOSS
        && elapsed < E2E_BUDGET;
    let detail = format!(
        "{} train / {} held-out utterances: top-1 {:.1}% at lambda 0.5, {:.1}% at lambda 0, {:.1}s",
        train_manifest.len(),
        test.len(),
        100.0 * acc_rescored,
        100.0 * acc_fast_match,
        elapsed.as_secs_f64()
    );
    (
        outcome(pass, detail),
        Trained {
            model,
            test,
            train_manifest,
        },
    )
}

fn rejection(trained: &Trained) -> Outcome {
    let lex = Lexicon::builtin();
    let model = &trained.model;
    let mut noise_rejected = 0;
    let mut noise_best = f64::NEG_INFINITY;
    for i in 0..20u64 {
        let clip = synth_noise(&lex, 6000 + i, 400 + 25 * (i as u32 % 10)).unwrap();
        let list = model.recognize(&clip, DEFAULT_NBEST).unwrap();
        noise_best = noise_best.max(list.entries[0].combined);
        if !model.decide(&list).unwrap().is_accepted() {
            noise_rejected += 1;
        }
    }
    let mut true_rejected = 0;
    let mut true_worst = f64::INFINITY;
    for (audio, _) in &trained.test {
        let list = model.recognize(audio, DEFAULT_NBEST).unwrap();
        true_worst = true_worst.min(list.entries[0].combined);
        if matches!(decide(&list, model.theta), Some(Decision::Rejected { .. })) {
            true_rejected += 1;
        }
    }
    let noise_rate = noise_rejected as f64 / 20.0;
    let true_rate = true_rejected as f64 / trained.test.len() as f64;
    outcome(
        noise_rate >= NOISE_MIN_REJECT && true_rate <= TRUE_MAX_REJECT,
        format!(
            "theta {}: noise rejected {:.0}% (best noise score {noise_best:.3}), held-out keywords rejected \
             {:.0}% (worst score {true_worst:.3})",
            model.theta,
            100.0 * noise_rate,
            100.0 * true_rate
        ),
    )
}

fn sample_store() -> Store {
    let mut store = Store::new();
    store
        .index_record(Record::text(
            1,
            "River",
            "River",
            "A natural stream of water.",
        ))
        .unwrap();
    store
        .index_record(Record::text(
            2,
            "river",
            "Rivers of India",
            "The Ganges and others.",
        ))
        .unwrap();
    store
        .index_record(Record::picture(
            3,
            "Taj Mahal",
            "Taj Mahal",
            "img/taj.png",
            "A marble mausoleum.",
        ))
        .unwrap();
    store
        .index_record(Record::text(4, "o'clock", "Time", "Hours of the day."))
        .unwrap();
    store
}

fn round_trips(dir: &Path, trained: &Trained) -> Outcome {
    let mut failures = Vec::new();

    let (again, _) = train_vocabulary(&trained.train_manifest, &TrainConfig::default()).unwrap();
    let (a, b) = (dir.join("model_a.json"), dir.join("model_b.json"));
    save_model(&trained.model, &a).unwrap();
    save_model(&again, &b).unwrap();
    if std::fs::read(&a).unwrap() != std::fs::read(&b).unwrap() {
        failures.push("retrained model file differs");
    }

    let loaded = load_model(&a).unwrap();
    if loaded != trained.model {
        failures.push("loaded model differs");
    }
    let lex = Lexicon::builtin();
    let mut probes: Vec<AudioBuffer> = trained
        .test
        .iter()
        .step_by(12)
        .take(8)
        .map(|(x, _)| x.clone())
        .collect();
    probes.push(synth_noise(&lex, 77, 500).unwrap());
    probes.push(synth_noise(&lex, 78, 450).unwrap());
    for probe in &probes {
        if loaded.recognize(probe, DEFAULT_NBEST).unwrap()
            != trained.model.recognize(probe, DEFAULT_NBEST).unwrap()
        {
            failures.push("recognition changed after reload");
        }
    }

    let store = sample_store();
    let store_path = dir.join("store.jsonl");
    save_store(&store, &store_path).unwrap();
    let reloaded = load_store(&store_path).unwrap();
    for keyword in store.keywords() {
        if store.search(keyword).unwrap() != reloaded.search(keyword).unwrap() {
            failures.push("search changed after store reload");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7007);
    let samples: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wav_path = dir.join("probe.wav");
    write_wav(
        &AudioBuffer::new(samples.clone(), 16_000).unwrap(),
        &wav_path,
    )
    .unwrap();
    let back = read_wav(&wav_path).unwrap();
    let wav_err = samples
        .iter()
        .zip(back.samples())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if back.len() != samples.len() || wav_err > WAV_TOL {
        failures.push("wav round-trip error too large");
    }

    outcome(
        failures.is_empty(),
        format!(
            "model bytes identical, {} probes re-recognized, {} store keywords re-searched, wav error {wav_err:.2e}{}",
            probes.len(),
            store.keywords().count(),
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

// Criterion 8 ---------------------------------------------------------------

/// Reference normalization written independently of the library.
fn oracle_normalize(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn keyword_strategy() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "river",
        "lake",
        "taj mahal",
        "o'clock",
        "ganga",
        "sea",
    ])
    .prop_map(String::from)
}

fn variant(keyword: &str, style: u8) -> String {
    match style % 4 {
        0 => keyword.to_string(),
        1 => keyword.to_uppercase(),
        2 => format!("  {}\t", keyword.replace(' ', "   ")),
        _ => keyword
            .chars()
            .enumerate()
            .map(|(i, c)| {
                if i % 2 == 0 {
                    c.to_ascii_uppercase()
                } else {
                    c
                }
            })
            .collect(),
    }
}

fn retrieval_property() -> Outcome {
    let config = ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    let mut runner = TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::deterministic_rng(
            proptest::test_runner::RngAlgorithm::ChaCha,
        ),
    );
    let records = prop::collection::vec((keyword_strategy(), any::<u8>(), 0u64..40), 0..30);
    let queries = prop::collection::vec((keyword_strategy(), any::<u8>()), 1..10);
    let absent = prop::sample::select(vec!["ocean", "mountain", "river bank", "lakes"]);
    let queried = std::cell::Cell::new(0usize);
    let result = runner.run(&(records, queries, absent), |(records, queries, absent)| {
        let mut store = Store::new();
        let mut stored = Vec::new();
        for (keyword, style, id) in records {
            let rec = Record::text(id, &variant(&keyword, style), &keyword, "body");
            if store.index_record(rec.clone()).is_ok() {
                stored.push(rec);
            }
        }
        let probes = queries
            .into_iter()
            .map(|(k, s)| variant(&k, s))
            .chain([absent.to_string()]);
        for probe in probes {
            let expected: Vec<u64> = stored
                .iter()
                .filter(|r| oracle_normalize(&r.keyword) == oracle_normalize(&probe))
                .map(|r| r.id)
                .collect();
            let got: Vec<u64> = store.search(&probe).unwrap().iter().map(|r| r.id).collect();
            prop_assert_eq!(got, expected, "query {:?}", probe);
            queried.set(queried.get() + 1);
        }
        Ok(())
    });
    match result {
        Ok(()) => outcome(
            true,
            format!(
                "200 random stores, {} queries match the linear-scan oracle",
                queried.get()
            ),
        ),
        Err(e) => outcome(false, format!("counterexample: {e}")),
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "hmm oracle equivalence", hmm_oracle()),
        (2, "baum-welch monotonicity", baum_welch_monotone()),
        (3, "levinson-durbin oracle", levinson_oracle()),
        (4, "ann gradient check", gradient_check()),
    ];
    let (e2e, trained) = end_to_end(dir.path());
    results.push((5, "end-to-end accuracy", e2e));
    results.push((6, "rejection behavior", rejection(&trained)));
    results.push((
        7,
        "determinism and round-trips",
        round_trips(dir.path(), &trained),
    ));
    results.push((8, "retrieval correctness", retrieval_property()));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "[{}] criterion {id}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
