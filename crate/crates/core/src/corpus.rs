//! Corpus manifests (`path<TAB>keyword<TAB>speaker`, no header) and
//! evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("manifest is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub keyword: String,
    pub speaker: String,
}

/// Parses manifest text. Relative paths are joined onto `base_dir`; blank
/// lines are skipped.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let (path, keyword, speaker) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
        if path.is_empty() || keyword.is_empty() || speaker.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty column".into(),
            });
        }
        entries.push(CorpusEntry {
            path: base_dir.join(path),
            keyword: keyword.to_string(),
            speaker: speaker.to_string(),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries = parse_manifest(&text, base)?;
    if entries.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(entries)
}

/// One manifest line; `path` is written as given.
pub fn manifest_line(path: &str, keyword: &str, speaker: &str) -> String {
    format!("{path}\t{keyword}\t{speaker}\n")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeywordAccuracy {
    pub keyword: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Recognition results over a labeled test set. Confusion rows are the true
/// keywords; columns are the vocabulary followed by a final "rejected" column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub vocabulary: Vec<String>,
    pub per_keyword: Vec<KeywordAccuracy>,
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
    /// Accepted and correct.
    pub correct: usize,
    pub accuracy: f64,
    /// Top-1 hypothesis correct, ignoring rejection.
    pub top1_correct: usize,
    pub top1_accuracy: f64,
    pub rejected: usize,
}

impl EvalReport {
    pub fn new(vocabulary: Vec<String>) -> Self {
        let n = vocabulary.len();
        Self {
            per_keyword: vocabulary
                .iter()
                .map(|k| KeywordAccuracy {
                    keyword: k.clone(),
                    total: 0,
                    correct: 0,
                    accuracy: 0.0,
                })
                .collect(),
            confusion: vec![vec![0; n + 1]; n],
            vocabulary,
            total: 0,
            correct: 0,
            accuracy: 0.0,
            top1_correct: 0,
            top1_accuracy: 0.0,
            rejected: 0,
        }
    }

    /// Records one utterance: its true class, the top-1 class and whether it was accepted.
    pub fn record(&mut self, truth: usize, top1: usize, accepted: bool) {
        self.tally(truth, Some(top1), accepted);
    }

    /// Records an utterance that produced no hypothesis at all; it counts as rejected.
    pub fn record_unscored(&mut self, truth: usize) {
        self.tally(truth, None, false);
    }

    fn tally(&mut self, truth: usize, top1: Option<usize>, accepted: bool) {
        self.total += 1;
        self.per_keyword[truth].total += 1;
        if top1 == Some(truth) {
            self.top1_correct += 1;
        }
        match top1 {
            Some(top1) if accepted => {
                self.confusion[truth][top1] += 1;
                if top1 == truth {
                    self.correct += 1;
                    self.per_keyword[truth].correct += 1;
                }
            }
            _ => {
                self.rejected += 1;
                let col = self.vocabulary.len();
                self.confusion[truth][col] += 1;
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.accuracy = ratio(self.correct, self.total);
        self.top1_accuracy = ratio(self.top1_correct, self.total);
        let k = &mut self.per_keyword[truth];
        k.accuracy = ratio(k.correct, k.total);
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self
            .vocabulary
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "truth");
        for k in &self.vocabulary {
            let _ = write!(out, " {k:>width$}");
        }
        let _ = writeln!(out, " {:>width$} {:>8}", "rejected", "accuracy");
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{:<width$}", self.vocabulary[i]);
            for c in row {
                let _ = write!(out, " {c:>width$}");
            }
            let _ = writeln!(out, " {:>8.3}", self.per_keyword[i].accuracy);
        }
        let _ = writeln!(
            out,
            "overall accuracy {:.4} ({}/{}), top-1 {:.4}, rejected {}",
            self.accuracy, self.correct, self.total, self.top1_accuracy, self.rejected
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_relative_to_base() {
        let text = "a/one.wav\tone\t1\n\nb.wav\ttwo\tspk2\n";
        let rows = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].path, PathBuf::from("/data/a/one.wav"));
        assert_eq!(rows[1].keyword, "two");
        assert_eq!(rows[1].speaker, "spk2");
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let err = parse_manifest("a.wav\tone\t1\nbroken line\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
        let err = parse_manifest("a.wav\t\t1\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn empty_manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.tsv");
        fs::write(&p, "\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(CorpusError::Empty)));
    }

    #[test]
    fn report_rows_sum_to_counts() {
        let mut r = EvalReport::new(vec!["a".into(), "b".into()]);
        r.record(0, 0, true);
        r.record(0, 1, true);
        r.record(1, 1, false);
        r.record(1, 1, true);
        r.record_unscored(1);
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), r.per_keyword[i].total);
        }
        assert_eq!(r.correct, 2);
        assert_eq!(r.top1_correct, 3);
        assert_eq!(r.rejected, 2);
        assert!((r.accuracy - 0.4).abs() < 1e-15);
        assert!(r.to_table().contains("overall accuracy 0.4000 (2/5)"));
    }
}
