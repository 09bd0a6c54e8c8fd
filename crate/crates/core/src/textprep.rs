//! Essay records, rule-based sentence splitting and corpus token statistics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ResponseSheet;
use crate::error::{Error, Result};

/// One author: an essay plus, when available, their 60 survey responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub author_id: String,
    pub text: String,
    #[serde(default)]
    pub responses: Option<Vec<i32>>,
}

impl EssayRecord {
    pub fn validate(&self) -> Result<()> {
        if self.author_id.is_empty() {
            return Err(Error::Validation("empty author_id".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::Validation(format!("{}: empty essay text", self.author_id)));
        }
        if let Some(r) = &self.responses {
            ResponseSheet {
                author_id: self.author_id.clone(),
                responses: r.clone(),
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn response_sheet(&self) -> Option<ResponseSheet> {
        self.responses.as_ref().map(|r| ResponseSheet {
            author_id: self.author_id.clone(),
            responses: r.clone(),
        })
    }
}

/// Reads a JSON Lines dataset. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EssayRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let record: EssayRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(record.author_id.clone()) {
            return Err(parse_err(format!("duplicate author_id {}", record.author_id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[EssayRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// An author's essay split into sentences, in text order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceSet {
    pub author_id: String,
    pub sentences: Vec<String>,
}

impl SentenceSet {
    pub fn from_record(record: &EssayRecord) -> Self {
        Self {
            author_id: record.author_id.clone(),
            sentences: split_sentences(&record.text),
        }
    }
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "e.g", "i.e", "cf",
    "inc", "ltd", "co", "corp", "dept", "approx", "no", "fig", "ave", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "a.m", "p.m", "u.s",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Splits on `.`, `!` or `?` followed by whitespace, and on blank lines.
///
/// A period after a listed abbreviation or a single-letter initial does not
/// end a sentence, and `<PLACEHOLDER>` tokens are never cut. Returned
/// sentences are trimmed and non-empty; together they cover every
/// non-whitespace character of the input.
pub fn split_sentences(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;

    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let s = text[from..to].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    };

    while i < bytes.len() {
        match bytes[i] {
            b'<' => {
                if let Some(len) = placeholder_len(&text[i..]) {
                    i += len;
                    continue;
                }
                i += 1;
            }
            b'\n' => {
                // blank line: newline, optional spaces, newline
                let mut j = i + 1;
                while j < bytes.len() && matches!(bytes[j], b' ' | b'\t' | b'\r') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'\n' {
                    push(start, i, &mut sentences);
                    start = j + 1;
                    i = j + 1;
                } else {
                    i += 1;
                }
            }
            b'.' | b'!' | b'?' => {
                let mark = i;
                let mut j = i;
                while j < bytes.len() && matches!(bytes[j], b'.' | b'!' | b'?') {
                    j += 1;
                }
                let mut end = j;
                for c in text[j..].chars() {
                    if CLOSERS.contains(&c) {
                        end += c.len_utf8();
                    } else {
                        break;
                    }
                }
                let at_break = text[end..].chars().next().is_none_or(char::is_whitespace);
                let single_period = bytes[mark] == b'.' && j == mark + 1;
                if at_break && !(single_period && is_abbreviation(&text[start..mark])) {
                    push(start, end, &mut sentences);
                    start = end;
                }
                i = end;
            }
            _ => i += 1,
        }
    }
    push(start, text.len(), &mut sentences);
    sentences
}

/// Length of a `<UPPER_CASE>` placeholder at the start of `s`.
fn placeholder_len(s: &str) -> Option<usize> {
    let close = s.find('>')?;
    let inner = &s[1..close];
    (!inner.is_empty()
        && inner.len() <= 40
        && inner.bytes().all(|b| b.is_ascii_uppercase() || b == b'_' || b.is_ascii_digit()))
    .then_some(close + 1)
}

/// Whether the word ending right before a period is an abbreviation or initial.
fn is_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\'', '[', '\u{201c}']);
    if word.is_empty() {
        return false;
    }
    let mut chars = word.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return c.is_alphabetic() && c.is_uppercase();
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Token counting backend used for corpus statistics.
pub trait TokenCounter: Sync {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>>;
}

/// Counts whitespace-separated tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
        Ok(texts.iter().map(|t| t.split_whitespace().count()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p25: u64,
    pub p50: u64,
    pub p75: u64,
    pub p95: u64,
}

impl Percentiles {
    /// Nearest-rank percentiles: the value at rank `ceil(p/100 * n)`.
    pub fn nearest_rank(values: &[u64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let at = |p: usize| {
            let rank = (p * n).div_ceil(100).max(1);
            sorted[rank - 1]
        };
        Some(Self {
            p25: at(25),
            p50: at(50),
            p75: at(75),
            p95: at(95),
        })
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.p25, self.p50, self.p75, self.p95]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub tokens_per_essay: Percentiles,
    pub tokens_per_sentence: Percentiles,
    pub sentences_per_essay: Percentiles,
}

impl CorpusStats {
    /// Three-row percentile table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<18}{:>8}{:>8}{:>8}{:>8}", "Statistics type", "25%", "50%", "75%", "95%");
        for (name, row) in [
            ("tokens/essay", &self.tokens_per_essay),
            ("tokens/sentence", &self.tokens_per_sentence),
            ("sentences/essay", &self.sentences_per_essay),
        ] {
            let [a, b, c, d] = row.as_array();
            let _ = writeln!(out, "{name:<18}{a:>8}{b:>8}{c:>8}{d:>8}");
        }
        out
    }
}

/// Token and sentence percentiles over a dataset. Each essay is one counting
/// batch (the essay text followed by its sentences); batches run in parallel
/// and merge in essay order.
pub fn corpus_stats(dataset: &[EssayRecord], counter: &dyn TokenCounter) -> Result<CorpusStats> {
    if dataset.is_empty() {
        return Err(Error::Validation("no records".into()));
    }
    let per_essay: Vec<(u64, Vec<u64>)> = dataset
        .par_iter()
        .enumerate()
        .map(|(batch, record)| {
            let mut texts = vec![record.text.clone()];
            texts.extend(split_sentences(&record.text));
            let counts = counter.count_tokens(&texts).map_err(|e| {
                Error::Transport(format!("token counting failed for batch {batch}: {e}"))
            })?;
            if counts.len() != texts.len() {
                return Err(Error::Contract(format!(
                    "batch {batch}: counter returned {} counts for {} texts",
                    counts.len(),
                    texts.len()
                )));
            }
            let counts: Vec<u64> = counts.into_iter().map(|c| c as u64).collect();
            Ok((counts[0], counts[1..].to_vec()))
        })
        .collect::<Result<_>>()?;

    let tokens_per_essay: Vec<u64> = per_essay.iter().map(|(t, _)| *t).collect();
    let sentences_per_essay: Vec<u64> = per_essay.iter().map(|(_, s)| s.len() as u64).collect();
    let tokens_per_sentence: Vec<u64> = per_essay.iter().flat_map(|(_, s)| s.iter().copied()).collect();

    Ok(CorpusStats {
        tokens_per_essay: Percentiles::nearest_rank(&tokens_per_essay).expect("non-empty"),
        tokens_per_sentence: Percentiles::nearest_rank(&tokens_per_sentence)
            .ok_or_else(|| Error::Validation("corpus has no sentences".into()))?,
        sentences_per_essay: Percentiles::nearest_rank(&sentences_per_essay).expect("non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_terminal_marks() {
        assert_eq!(
            split_sentences("I am tired. I slept badly!"),
            vec!["I am tired.", "I slept badly!"]
        );
        assert_eq!(split_sentences("Really?! Yes."), vec!["Really?!", "Yes."]);
        assert_eq!(
            split_sentences("He said \"stop.\" Then he left"),
            vec!["He said \"stop.\"", "Then he left"]
        );
    }

    #[test]
    fn placeholders_stay_whole() {
        let s = split_sentences("I met <PERSON> at <LOCATION>.");
        assert_eq!(s, vec!["I met <PERSON> at <LOCATION>."]);
        let s = split_sentences("On <DATE_TIME> I left. <PERSON> stayed.");
        assert_eq!(s, vec!["On <DATE_TIME> I left.", "<PERSON> stayed."]);
    }

    #[test]
    fn abbreviations_protected() {
        assert_eq!(
            split_sentences("Dr. Smith left. Then I left."),
            vec!["Dr. Smith left.", "Then I left."]
        );
        assert_eq!(
            split_sentences("I saw J. R. Tolkien books, e.g. the Hobbit. Nice."),
            vec!["I saw J. R. Tolkien books, e.g. the Hobbit.", "Nice."]
        );
        assert_eq!(split_sentences("It costs 3.50 today."), vec!["It costs 3.50 today."]);
    }

    #[test]
    fn blank_lines_and_degenerate_input() {
        assert_eq!(
            split_sentences("no punctuation here\n\nanother thought"),
            vec!["no punctuation here", "another thought"]
        );
        assert_eq!(split_sentences("just words"), vec!["just words"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn idempotent_on_single_sentence() {
        for s in ["I am tired.", "Dr. Who is fun!", "no end mark", "<PERSON> came."] {
            let once = split_sentences(s);
            assert_eq!(once.len(), 1);
            assert_eq!(split_sentences(&once[0]), once);
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let p = Percentiles::nearest_rank(&[10]).unwrap();
        assert_eq!(p.as_array(), [10; 4]);
        assert_eq!(Percentiles::nearest_rank(&[8, 4]).unwrap().p50, 4);
        let v: Vec<u64> = (1..=20).collect();
        assert_eq!(Percentiles::nearest_rank(&v).unwrap().as_array(), [5, 10, 15, 19]);
        assert!(Percentiles::nearest_rank(&[]).is_none());
    }

    #[test]
    fn single_essay_stats() {
        let rec = EssayRecord {
            author_id: "a".into(),
            text: "one two three four five. six seven eight nine ten.".into(),
            responses: None,
        };
        let stats = corpus_stats(&[rec], &WhitespaceCounter).unwrap();
        assert_eq!(stats.tokens_per_essay.as_array(), [10; 4]);
        assert_eq!(stats.tokens_per_sentence.as_array(), [5; 4]);
        assert_eq!(stats.sentences_per_essay.as_array(), [2; 4]);
        assert!(corpus_stats(&[], &WhitespaceCounter).is_err());
    }

    struct Failing;
    impl TokenCounter for Failing {
        fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
            if texts[0].contains("boom") {
                Err(Error::Transport("down".into()))
            } else {
                Ok(vec![1; texts.len()])
            }
        }
    }

    #[test]
    fn counter_failure_names_batch() {
        let recs: Vec<EssayRecord> = ["fine.", "fine too.", "boom."]
            .iter()
            .enumerate()
            .map(|(i, t)| EssayRecord {
                author_id: i.to_string(),
                text: t.to_string(),
                responses: None,
            })
            .collect();
        let err = corpus_stats(&recs, &Failing).unwrap_err().to_string();
        assert!(err.contains("batch 2"), "{err}");
    }

    #[test]
    fn dataset_parse_errors_carry_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = r#"{"author_id":"a","text":"Hi.","responses":null}"#;
        std::fs::write(&path, format!("{good}\n\n{{broken\n")).unwrap();
        match load_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        std::fs::write(&path, format!("{good}\n{good}\n")).unwrap();
        assert!(load_dataset(&path).unwrap_err().to_string().contains("duplicate"));
        std::fs::write(&path, r#"{"author_id":"a","text":"  ","responses":null}"#).unwrap();
        assert!(load_dataset(&path).is_err());
        std::fs::write(&path, r#"{"author_id":"a","text":"x","responses":[1,2]}"#).unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
