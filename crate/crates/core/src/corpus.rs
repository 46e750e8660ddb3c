//! Aligned parallel text, vocabularies, rare-word replacement and splits.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::derivation::Derivation;
use crate::gateway::{ParseOutcome, ParseResult};
use crate::seeded_rng;

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: invalid UTF-8 on line {line}", path.display())]
    Decode { path: PathBuf, line: usize },
    #[error("line counts differ: {left_name} has {left} lines, {right_name} has {right}")]
    Alignment {
        left_name: String,
        left: usize,
        right_name: String,
        right: usize,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("no parse result for example {0}")]
    MissingResult(usize),
    #[error("invalid split: {0}")]
    Split(String),
}

/// One aligned test item.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelExample {
    pub id: usize,
    pub source: Vec<String>,
    pub reference: Vec<String>,
    pub output: Option<Vec<String>>,
    /// Natural-log probability of `output` under the generating model.
    pub model_lp: Option<f64>,
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads LF-separated lines, checking UTF-8 per line.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    body.split(|b| *b == b'\n')
        .enumerate()
        .map(|(i, line)| {
            String::from_utf8(line.to_vec()).map_err(|_| CorpusError::Decode {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

/// One natural-log probability per line; a blank line means unavailable.
pub fn read_scores(path: &Path) -> Result<Vec<Option<f64>>, CorpusError> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let line = line.trim();
            if line.is_empty() {
                return Ok(None);
            }
            let bad = |message: String| CorpusError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let v: f64 = line.parse().map_err(|_| bad(format!("not a number: `{line}`")))?;
            if !v.is_finite() || v > 0.0 {
                return Err(bad(format!("log probability must be finite and <= 0, got {v}")));
            }
            Ok(Some(v))
        })
        .collect()
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_scores(path: &Path, scores: &[Option<f64>]) -> Result<(), CorpusError> {
    let mut out = String::new();
    for s in scores {
        if let Some(v) = s {
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

fn check_aligned(left_name: &str, left: usize, right_name: &str, right: usize) -> Result<(), CorpusError> {
    if left != right {
        return Err(CorpusError::Alignment {
            left_name: left_name.to_string(),
            left,
            right_name: right_name.to_string(),
            right,
        });
    }
    Ok(())
}

/// Loads source and reference files aligned by line number.
pub fn load_parallel(source_path: &Path, target_path: &Path) -> Result<Vec<ParallelExample>, CorpusError> {
    let source = read_sentences(source_path)?;
    let reference = read_sentences(target_path)?;
    check_aligned(
        &source_path.display().to_string(),
        source.len(),
        &target_path.display().to_string(),
        reference.len(),
    )?;
    Ok(source
        .into_iter()
        .zip(reference)
        .enumerate()
        .map(|(id, (source, reference))| ParallelExample {
            id,
            source,
            reference,
            output: None,
            model_lp: None,
        })
        .collect())
}

/// Attaches model outputs and, optionally, their scores.
pub fn attach_outputs(
    examples: &mut [ParallelExample],
    outputs: Vec<Vec<String>>,
    scores: Option<Vec<Option<f64>>>,
) -> Result<(), CorpusError> {
    check_aligned("corpus", examples.len(), "outputs", outputs.len())?;
    if let Some(scores) = &scores {
        check_aligned("corpus", examples.len(), "scores", scores.len())?;
    }
    for (i, (ex, out)) in examples.iter_mut().zip(outputs).enumerate() {
        ex.output = Some(out);
        ex.model_lp = scores.as_ref().and_then(|s| s[i]);
    }
    Ok(())
}

/// Ids of examples with an empty source or reference side.
pub fn empty_line_ids(examples: &[ParallelExample]) -> Vec<usize> {
    examples
        .iter()
        .filter(|e| e.source.is_empty() || e.reference.is_empty())
        .map(|e| e.id)
        .collect()
}

/// Frequency-ranked vocabulary. Ranks are 1-based, by descending count with
/// ties broken by ascending token order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    rank: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I, S>(sentences: I, max_rank: usize) -> Self
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        assert!(max_rank >= 1, "max_rank must be at least 1");
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in sentences {
            for tok in sentence.as_ref() {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_rank);
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let rank = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i + 1))
            .collect();
        Self { entries, rank }
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn rank(&self, token: &str) -> Option<usize> {
        self.rank.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.rank.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `token<TAB>count<TAB>rank`, ordered by rank.
    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        for (i, (tok, count)) in self.entries.iter().enumerate() {
            writeln!(f, "{tok}\t{count}\t{}", i + 1).map_err(io_err(path))?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in read_lines(path)?.iter().enumerate() {
            let bad = |message: &str| CorpusError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: message.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected token<TAB>count<TAB>rank"));
            }
            let count: u64 = cols[1].parse().map_err(|_| bad("bad count"))?;
            let rank: usize = cols[2].parse().map_err(|_| bad("bad rank"))?;
            if rank != i + 1 {
                return Err(bad("ranks must be consecutive from 1"));
            }
            entries.push((cols[0].to_string(), count));
        }
        Ok(Self::from_entries(entries))
    }
}

pub fn build_vocab(sentences: &[Vec<String>], max_rank: usize) -> Vocabulary {
    Vocabulary::build(sentences, max_rank)
}

/// Replaces every out-of-vocabulary token with [`UNK`].
pub fn apply_source_unk(sentence: &[String], vocab: &Vocabulary) -> Vec<String> {
    sentence
        .iter()
        .map(|t| {
            if t == UNK || vocab.contains(t) {
                t.clone()
            } else {
                UNK.to_string()
            }
        })
        .collect()
}

/// Coarse lexical classes used for typed placeholders (`generic_<class>`).
#[derive(Debug, Clone, PartialEq)]
pub struct UnkClasses {
    classes: Vec<String>,
}

impl Default for UnkClasses {
    fn default() -> Self {
        Self::new(["adj", "noun", "verb", "adv", "card", "prep"])
    }
}

impl UnkClasses {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Self {
        Self {
            classes: classes.into_iter().map(Into::into).collect(),
        }
    }

    /// Coarse class of a lexical entry: the entry itself when it is already a
    /// class name, otherwise the class implied by an ERG-style type prefix
    /// (`aj_`, `n_`, `v_`, `av_`, `p_`, `card`).
    pub fn coarse<'a>(&'a self, le: &str) -> Option<&'a str> {
        let find = |c: &str| self.classes.iter().find(|k| *k == c).map(String::as_str);
        if let Some(c) = find(le) {
            return Some(c);
        }
        let prefix = le.split('_').next().unwrap_or("");
        let mapped = match prefix {
            "aj" => "adj",
            "n" => "noun",
            "v" => "verb",
            "av" => "adv",
            "p" => "prep",
            "card" => "card",
            _ => return None,
        };
        find(mapped)
    }
}

/// Replaces out-of-vocabulary tokens by `generic_<class>` using the lexical
/// entry recorded at the same position, or [`UNK`] when none is usable.
pub fn apply_typed_target_unk(
    sentence: &[String],
    vocab: &Vocabulary,
    lexentries: &[Option<String>],
    classes: &UnkClasses,
) -> Vec<String> {
    sentence
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if vocab.contains(t) || t == UNK || t.starts_with("generic_") {
                return t.clone();
            }
            lexentries
                .get(i)
                .and_then(|le| le.as_deref())
                .and_then(|le| classes.coarse(le))
                .map(|c| format!("generic_{c}"))
                .unwrap_or_else(|| UNK.to_string())
        })
        .collect()
}

/// Keeps examples whose reference parsed, paired with the reference derivation.
pub fn filter_parseable(
    examples: &[ParallelExample],
    results: &HashMap<usize, ParseResult>,
) -> Result<(Vec<ParallelExample>, Vec<Derivation>), CorpusError> {
    let mut kept = Vec::new();
    let mut derivs = Vec::new();
    for ex in examples {
        let r = results.get(&ex.id).ok_or(CorpusError::MissingResult(ex.id))?;
        if r.outcome == ParseOutcome::Parseable {
            let d = r.derivation.clone().expect("parseable result carries a derivation");
            kept.push(ex.clone());
            derivs.push(d);
        }
    }
    Ok((kept, derivs))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Absolute {
        train: usize,
        valid: usize,
        analysis: usize,
    },
    /// Train and validation fractions; analysis takes the remainder.
    Fractions { train: f64, valid: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl SplitSpec {
    pub fn resolve(&self, n: usize) -> Result<(usize, usize, usize), CorpusError> {
        match self.sizes {
            SplitSizes::Absolute { train, valid, analysis } => {
                if train + valid + analysis != n {
                    return Err(CorpusError::Split(format!(
                        "sizes {train}+{valid}+{analysis} do not sum to corpus size {n}"
                    )));
                }
                Ok((train, valid, analysis))
            }
            SplitSizes::Fractions { train, valid } => {
                let ok = |f: f64| (0.0..=1.0).contains(&f);
                if !ok(train) || !ok(valid) || train + valid > 1.0 {
                    return Err(CorpusError::Split(format!(
                        "fractions train={train} valid={valid} must lie in [0, 1] and sum to at most 1"
                    )));
                }
                let t = (train * n as f64).floor() as usize;
                let v = ((valid * n as f64).floor() as usize).min(n - t);
                Ok((t, v, n - t - v))
            }
        }
    }
}

pub struct Splits {
    pub train: Vec<ParallelExample>,
    pub valid: Vec<ParallelExample>,
    pub analysis: Vec<ParallelExample>,
}

/// Seeded shuffle then contiguous slicing. Each part is returned in corpus order.
pub fn split_dataset(examples: &[ParallelExample], spec: &SplitSpec) -> Result<Splits, CorpusError> {
    let (t, v, _) = spec.resolve(examples.len())?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut seeded_rng(spec.seed));
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| examples[i].clone()).collect::<Vec<_>>()
    };
    Ok(Splits {
        train: take(&order[..t]),
        valid: take(&order[t..t + v]),
        analysis: take(&order[t + v..]),
    })
}
