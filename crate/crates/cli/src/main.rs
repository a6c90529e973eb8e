//! `isoword`: synthesize a keyword corpus, train and run the recognizer,
//! and look up records by spoken keyword.
//!
//! Exit codes: 0 success, 2 fault or usage error, 3 rejected, 4 no match.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use isoword::audio::{read_wav, synth_word, utterance_seed, write_wav, Lexicon};
use isoword::corpus::{manifest_line, read_manifest, CorpusError, EvalReport};
use isoword::frontend::extract_features;
use isoword::recognizer::{
    load_model, save_model, train_vocabulary, Decision, NBestList, RecognizerError, TrainConfig,
    WordModelSet, DEFAULT_NBEST,
};
use isoword::retrieval::{build_query, load_store, render_result, Store};

const EXIT_FAULT: u8 = 2;
const EXIT_REJECTED: u8 = 3;
const EXIT_NO_MATCH: u8 = 4;

#[derive(Parser)]
#[command(
    name = "isoword",
    version,
    about = "Isolated-word keyword recognition and retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus of WAV files plus manifest.tsv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated keywords; defaults to the whole lexicon.
        #[arg(long, value_delimiter = ',')]
        keywords: Vec<String>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        speakers: u32,
        /// Id of the first speaker; ids run consecutively from here.
        #[arg(long, default_value_t = 1)]
        first_speaker: u32,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        reps: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Lexicon TOML; defaults to the built-in ten-word lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Train a model from a corpus manifest.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Recognize one WAV file and print the N-best list.
    Recognize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NBEST, value_parser = parse_nbest)]
        nbest: usize,
        /// Also write the front-end feature matrix as text.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Look up records by keyword.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        keyword: String,
    },
    /// Recognize a spoken keyword and show the matching records.
    Ask {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NBEST, value_parser = parse_nbest)]
        nbest: usize,
    },
    /// Recognize every manifest row and report accuracy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NBEST, value_parser = parse_nbest)]
        nbest: usize,
    },
}

fn parse_nbest(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("'{s}' is not a positive integer")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ISOWORD_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_FAULT)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Synth {
            out,
            keywords,
            speakers,
            first_speaker,
            reps,
            seed,
            lexicon,
        } => {
            let last = first_speaker
                .checked_add(speakers - 1)
                .context("speaker ids overflow")?;
            let speakers = first_speaker..=last;
            cmd_synth(&out, keywords, speakers, reps, seed, lexicon.as_deref())
        }
        Command::Train { corpus, out, seed } => cmd_train(&corpus, &out, seed),
        Command::Recognize {
            model,
            wav,
            nbest,
            dump_features,
        } => cmd_recognize(&model, &wav, nbest, dump_features.as_deref()),
        Command::Query { store, keyword } => cmd_query(&store, &keyword),
        Command::Ask {
            model,
            store,
            wav,
            nbest,
        } => cmd_ask(&model, &store, &wav, nbest),
        Command::Eval {
            model,
            corpus,
            nbest,
        } => cmd_eval(&model, &corpus, nbest),
    }
}

fn cmd_synth(
    out: &Path,
    keywords: Vec<String>,
    speakers: std::ops::RangeInclusive<u32>,
    reps: u32,
    seed: u64,
    lexicon: Option<&Path>,
) -> Result<ExitCode> {
    let lex = match lexicon {
        Some(p) => Lexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
        None => Lexicon::builtin(),
    };
    let keywords: Vec<String> = if keywords.is_empty() {
        lex.keywords().map(String::from).collect()
    } else {
        keywords
    };
    for kw in &keywords {
        if lex.word(kw).is_none() {
            bail!("keyword '{kw}' is not in the lexicon");
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = String::new();
    let mut files = 0usize;
    for kw in &keywords {
        for speaker in speakers.clone() {
            for rep in 0..reps {
                let spec = lex.spec(kw, speaker, utterance_seed(seed, kw, speaker, rep))?;
                let name = format!("{kw}_s{speaker:02}_r{rep}.wav");
                write_wav(&synth_word(&lex, &spec)?, out.join(&name))
                    .with_context(|| format!("writing {name}"))?;
                manifest.push_str(&manifest_line(&name, kw, &speaker.to_string()));
                files += 1;
            }
        }
    }
    let manifest_path = out.join("manifest.tsv");
    fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!("wrote {files} utterances and {}", manifest_path.display());
    println!(
        "{}",
        json!({
            "command": "synth",
            "files": files,
            "keywords": keywords,
            "speakers": [speakers.start(), speakers.end()],
            "reps": reps,
            "seed": seed,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn manifest(path: &Path) -> Result<Vec<isoword::corpus::CorpusEntry>> {
    match read_manifest(path) {
        Err(CorpusError::Empty) => bail!("usage: manifest {} has no rows", path.display()),
        other => other.with_context(|| format!("reading manifest {}", path.display())),
    }
}

fn cmd_train(corpus: &Path, out: &Path, seed: u64) -> Result<ExitCode> {
    let entries = manifest(corpus)?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (set, report) = train_vocabulary(&entries, &config).context("training failed")?;
    save_model(&set, out).with_context(|| format!("writing model {}", out.display()))?;
    let per_keyword: Vec<_> = report
        .keywords
        .iter()
        .map(|k| {
            json!({
                "keyword": k.keyword,
                "utterances": k.utterances,
                "iterations": k.trace.iterations,
                "log_likelihood": k.trace.log_likelihoods.last(),
            })
        })
        .collect();
    println!(
        "trained {} keywords on {} utterances, model written to {}",
        set.vocabulary.len(),
        entries.len(),
        out.display()
    );
    println!(
        "{}",
        json!({
            "command": "train",
            "keywords": per_keyword,
            "ann_final_loss": report.ann_final_loss(),
            "codebook_distortion": report.codebook_distortion,
            "seed": seed,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn recognize_file(
    model: &WordModelSet,
    wav: &Path,
    nbest: usize,
) -> Result<NBestList, RecognizerError> {
    let audio = read_wav(wav)?;
    model.recognize(&audio, nbest)
}

fn load(model: &Path) -> Result<WordModelSet> {
    load_model(model).with_context(|| format!("loading model {}", model.display()))
}

fn cmd_recognize(model: &Path, wav: &Path, nbest: usize, dump: Option<&Path>) -> Result<ExitCode> {
    let set = load(model)?;
    if let Some(dump) = dump {
        let audio = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
        let features = extract_features(&audio, &set.frontend_config)
            .with_context(|| format!("extracting features from {}", wav.display()))?;
        features
            .write_text(dump)
            .with_context(|| format!("writing {}", dump.display()))?;
    }
    let list = recognize_file(&set, wav, nbest)
        .with_context(|| format!("recognizing {}", wav.display()))?;
    print!("{}", list.to_table());
    let decision = set.decide(&list).expect("n-best list is never empty");
    let (line, code, result) = match &decision {
        Decision::Accepted { keyword, .. } => {
            (format!("RESULT {keyword}"), ExitCode::SUCCESS, "accepted")
        }
        Decision::Rejected { best, score } => (
            format!("REJECTED {best} {score:.4}"),
            ExitCode::from(EXIT_REJECTED),
            "rejected",
        ),
    };
    println!("{line}");
    println!(
        "{}",
        json!({"command": "recognize", "decision": result, "nbest": list.entries})
    );
    Ok(code)
}

fn open_store(path: &Path) -> Result<Store> {
    load_store(path).with_context(|| format!("loading store {}", path.display()))
}

/// Prints the audit query and rendered results. Returns the number of matches.
fn print_lookup(store: &Store, keyword: &str) -> Result<usize> {
    let query = build_query(keyword)?;
    log::info!("{query}");
    println!("{query}");
    let hits = store.search(keyword)?;
    for record in &hits {
        let shown = render_result(record);
        println!("--- record {}", record.id);
        println!("{}", shown.display_text);
        if let Some(p) = &shown.picture_path {
            println!("PICTURE {p}");
        }
        println!("SPEAK {}", shown.speakable_text);
    }
    Ok(hits.len())
}

fn cmd_query(store: &Path, keyword: &str) -> Result<ExitCode> {
    let store = open_store(store)?;
    let found = print_lookup(&store, keyword)?;
    let summary = json!({"command": "query", "keyword": keyword, "matches": found});
    if found == 0 {
        println!("NO MATCH for '{keyword}'");
        println!("{summary}");
        return Ok(ExitCode::from(EXIT_NO_MATCH));
    }
    println!("{summary}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ask(model: &Path, store: &Path, wav: &Path, nbest: usize) -> Result<ExitCode> {
    let set = load(model)?;
    let store = open_store(store)?;
    let list = match recognize_file(&set, wav, nbest) {
        Ok(list) => list,
        Err(e) if e.is_no_speech() => {
            println!("ERROR: word not recognized");
            println!(
                "{}",
                json!({"command": "ask", "outcome": "rejected", "reason": "no speech"})
            );
            return Ok(ExitCode::from(EXIT_REJECTED));
        }
        Err(e) => return Err(e).with_context(|| format!("recognizing {}", wav.display())),
    };
    let keyword = match set.decide(&list).expect("n-best list is never empty") {
        Decision::Accepted { keyword, .. } => keyword,
        Decision::Rejected { best, score } => {
            println!("ERROR: word not recognized");
            println!(
                "{}",
                json!({"command": "ask", "outcome": "rejected", "best": best, "score": score})
            );
            return Ok(ExitCode::from(EXIT_REJECTED));
        }
    };
    println!("RESULT {keyword}");
    let found = print_lookup(&store, &keyword)?;
    if found == 0 {
        println!("ERROR: no information found for '{keyword}'");
        println!(
            "{}",
            json!({"command": "ask", "outcome": "no_match", "keyword": keyword})
        );
        return Ok(ExitCode::from(EXIT_NO_MATCH));
    }
    println!(
        "{}",
        json!({"command": "ask", "outcome": "found", "keyword": keyword, "matches": found})
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(model: &Path, corpus: &Path, nbest: usize) -> Result<ExitCode> {
    let set = load(model)?;
    let entries = manifest(corpus)?;
    let mut report = EvalReport::new(set.vocabulary.clone());
    for entry in &entries {
        let Some(truth) = set.vocabulary.iter().position(|k| *k == entry.keyword) else {
            bail!(
                "{}: keyword '{}' is not in the model vocabulary",
                entry.path.display(),
                entry.keyword
            );
        };
        match recognize_file(&set, &entry.path, nbest) {
            Ok(list) => {
                let top = list.top().expect("n-best list is never empty");
                let accepted = set.decide(&list).is_some_and(|d| d.is_accepted());
                report.record(truth, top.vocab_index, accepted);
            }
            Err(e) if e.is_no_speech() => {
                log::warn!("{}: no speech detected", entry.path.display());
                report.record_unscored(truth);
            }
            Err(e) => {
                return Err(e).with_context(|| format!("recognizing {}", entry.path.display()))
            }
        }
    }
    print!("{}", report.to_table());
    println!("{}", json!({"command": "eval", "report": report}));
    Ok(ExitCode::SUCCESS)
}
