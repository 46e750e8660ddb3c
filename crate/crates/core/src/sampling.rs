//! Seeded samplers for manual inspection and the annotation file format.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelExample;
use crate::derivation::{bag_of_rules, BagOptions, Derivation};
use crate::gateway::{ParseOutcome, ParseResult};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("{results} parse results for {outputs} output sentences")]
    LengthMismatch { results: usize, outputs: usize },
    #[error("rule `{0}` does not occur in any derivation")]
    UnknownRule(String),
    #[error("record {0} has no grammaticality judgment")]
    Incomplete(usize),
    #[error("record {id}: {message}")]
    Invalid { id: usize, message: String },
    #[error("annotation file: {0}")]
    Csv(#[from] csv::Error),
}

/// A uniform sample without replacement, in corpus order. `short` is set
/// when fewer than the requested number qualified.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub items: Vec<T>,
    pub pool: usize,
    pub short: bool,
}

fn draw<T: Clone>(pool: &[T], n: usize, seed: u64) -> Sample<T> {
    let mut rng = crate::seeded_rng(seed);
    let mut picked: Vec<usize> = if pool.len() <= n {
        (0..pool.len()).collect()
    } else {
        index::sample(&mut rng, pool.len(), n).into_vec()
    };
    picked.sort_unstable();
    Sample {
        items: picked.into_iter().map(|i| pool[i].clone()).collect(),
        pool: pool.len(),
        short: pool.len() < n,
    }
}

/// Exhaustively unparseable outputs with fewer than `max_words` tokens.
pub fn sample_exhaustive_unparseable(
    results: &[ParseResult],
    outputs: &[Vec<String>],
    max_words: usize,
    n: usize,
    seed: u64,
) -> Result<Sample<(usize, String)>, SamplingError> {
    if results.len() != outputs.len() {
        return Err(SamplingError::LengthMismatch {
            results: results.len(),
            outputs: outputs.len(),
        });
    }
    let pool: Vec<(usize, String)> = results
        .iter()
        .zip(outputs)
        .filter(|(r, o)| r.outcome == ParseOutcome::Exhausted && o.len() < max_words)
        .map(|(r, o)| (r.id, o.join(" ")))
        .collect();
    Ok(draw(&pool, n, seed))
}

/// One aligned example with the reference derivation and the parse of the
/// model output.
#[derive(Debug, Clone, Copy)]
pub struct ContrastCandidate<'a> {
    pub example: &'a ParallelExample,
    pub reference: &'a Derivation,
    pub output: &'a ParseResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastItem {
    pub id: usize,
    pub source: String,
    pub reference: String,
    pub output: String,
}

/// Pairs whose reference derivation uses `rule` while the parseable output
/// derivation does not, with fewer than `max_len` reference tokens.
pub fn sample_rule_contrast(
    rule: &str,
    candidates: &[ContrastCandidate<'_>],
    opts: &BagOptions,
    max_len: usize,
    n: usize,
    seed: u64,
) -> Result<Sample<ContrastItem>, SamplingError> {
    let mut inventory = BTreeSet::new();
    let mut pool = Vec::new();
    for c in candidates {
        let ref_bag = bag_of_rules(c.reference, opts);
        let out_bag = c.output.derivation.as_ref().map(|d| bag_of_rules(d, opts));
        inventory.extend(ref_bag.iter().map(|(r, _)| r.to_string()));
        if let Some(b) = &out_bag {
            inventory.extend(b.iter().map(|(r, _)| r.to_string()));
        }
        let qualifies = c.output.is_parseable()
            && ref_bag.contains(rule)
            && out_bag.is_some_and(|b| !b.contains(rule))
            && c.example.reference.len() < max_len;
        if qualifies {
            let Some(output) = &c.example.output else { continue };
            pool.push(ContrastItem {
                id: c.example.id,
                source: c.example.source.join(" "),
                reference: c.example.reference.join(" "),
                output: output.join(" "),
            });
        }
    }
    if !inventory.contains(rule) {
        return Err(SamplingError::UnknownRule(rule.to_string()));
    }
    Ok(draw(&pool, n, seed))
}

pub fn contrast_tsv(items: &[ContrastItem]) -> String {
    let mut out = String::from("id\tsource\treference\toutput\n");
    for it in items {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", it.id, it.source, it.reference, it.output));
    }
    out
}

/// One row of the annotation file. Judgment columns are blank until an
/// annotator fills them in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationRecord {
    pub id: usize,
    pub text: String,
    pub grammatical: Option<bool>,
    pub sv_agreement_error: bool,
    pub np_agreement_error: bool,
    pub excluded: bool,
    pub exclusion_reason: String,
}

#[derive(Serialize, Deserialize)]
struct Row {
    id: usize,
    text: String,
    grammatical: String,
    sv_agreement_error: String,
    np_agreement_error: String,
    excluded: String,
    exclusion_reason: String,
}

fn flag(v: bool) -> String {
    if v { "1" } else { "0" }.to_string()
}

fn parse_flag(id: usize, column: &str, v: &str) -> Result<Option<bool>, SamplingError> {
    match v.trim() {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(SamplingError::Invalid {
            id,
            message: format!("{column} must be 0, 1 or blank, got `{other}`"),
        }),
    }
}

impl AnnotationRecord {
    pub fn blank(id: usize, text: impl Into<String>) -> Self {
        Self {
            id,
            text: text.into(),
            ..Default::default()
        }
    }

    fn to_row(&self, blank_judgments: bool) -> Row {
        let judged = |v: bool| if blank_judgments { String::new() } else { flag(v) };
        Row {
            id: self.id,
            text: self.text.clone(),
            grammatical: self.grammatical.map(flag).unwrap_or_default(),
            sv_agreement_error: judged(self.sv_agreement_error),
            np_agreement_error: judged(self.np_agreement_error),
            excluded: judged(self.excluded),
            exclusion_reason: self.exclusion_reason.clone(),
        }
    }

    fn from_row(row: Row) -> Result<Self, SamplingError> {
        let id = row.id;
        let rec = Self {
            id,
            grammatical: parse_flag(id, "grammatical", &row.grammatical)?,
            sv_agreement_error: parse_flag(id, "sv_agreement_error", &row.sv_agreement_error)?.unwrap_or(false),
            np_agreement_error: parse_flag(id, "np_agreement_error", &row.np_agreement_error)?.unwrap_or(false),
            excluded: parse_flag(id, "excluded", &row.excluded)?.unwrap_or(false),
            text: row.text,
            exclusion_reason: row.exclusion_reason,
        };
        if rec.excluded && rec.grammatical.is_some() {
            return Err(SamplingError::Invalid {
                id,
                message: "excluded records must not carry a judgment".into(),
            });
        }
        Ok(rec)
    }
}

fn tsv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(w)
}

/// Writes the annotation file. With `blank_judgments` every judgment
/// column except `grammatical` (blank when unset) is left empty too.
pub fn write_annotations<W: Write>(
    w: W,
    records: &[AnnotationRecord],
    blank_judgments: bool,
) -> Result<(), SamplingError> {
    let mut wr = tsv_writer(w);
    for r in records {
        wr.serialize(r.to_row(blank_judgments))?;
    }
    wr.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_annotations<R: Read>(r: R) -> Result<Vec<AnnotationRecord>, SamplingError> {
    let mut rd = csv::ReaderBuilder::new().delimiter(b'\t').quoting(false).from_reader(r);
    rd.deserialize::<Row>()
        .map(|row| AnnotationRecord::from_row(row?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GrammaticalitySummary {
    pub total: usize,
    pub grammatical: usize,
    pub ungrammatical: usize,
    pub excluded: usize,
    pub sv_only: usize,
    pub np_only: usize,
    pub both: usize,
}

impl GrammaticalitySummary {
    /// Ungrammatical records with at least one agreement flag.
    pub fn fixable(&self) -> usize {
        self.sv_only + self.np_only + self.both
    }

    pub fn included(&self) -> usize {
        self.grammatical + self.ungrammatical
    }

    /// Percentage of included records judged grammatical.
    pub fn grammatical_share(&self) -> Option<f64> {
        (self.included() > 0).then(|| 100.0 * self.grammatical as f64 / self.included() as f64)
    }

    /// Percentage of ungrammatical records fixable by agreement corrections.
    pub fn fixable_share(&self) -> Option<f64> {
        (self.ungrammatical > 0).then(|| 100.0 * self.fixable() as f64 / self.ungrammatical as f64)
    }
}

fn share(num: usize, den: usize, pct: Option<f64>) -> String {
    match pct {
        Some(p) => format!("{num}/{den} ({p:.1}%)"),
        None => format!("{num}/{den} (undefined)"),
    }
}

impl fmt::Display for GrammaticalitySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records\t{}", self.total)?;
        writeln!(f, "excluded\t{}", self.excluded)?;
        writeln!(
            f,
            "grammatical\t{}",
            share(self.grammatical, self.included(), self.grammatical_share())
        )?;
        writeln!(f, "ungrammatical\t{}", self.ungrammatical)?;
        writeln!(f, "subject-verb agreement only\t{}", self.sv_only)?;
        writeln!(f, "noun phrase agreement only\t{}", self.np_only)?;
        writeln!(f, "both agreement errors\t{}", self.both)?;
        writeln!(
            f,
            "fixable by agreement\t{}",
            share(self.fixable(), self.ungrammatical, self.fixable_share())
        )
    }
}

pub fn summarize_grammaticality(records: &[AnnotationRecord]) -> Result<GrammaticalitySummary, SamplingError> {
    let mut s = GrammaticalitySummary {
        total: records.len(),
        ..Default::default()
    };
    for r in records {
        if r.excluded {
            s.excluded += 1;
            continue;
        }
        match r.grammatical {
            None => return Err(SamplingError::Incomplete(r.id)),
            Some(true) => s.grammatical += 1,
            Some(false) => {
                s.ungrammatical += 1;
                match (r.sv_agreement_error, r.np_agreement_error) {
                    (true, true) => s.both += 1,
                    (true, false) => s.sv_only += 1,
                    (false, true) => s.np_only += 1,
                    (false, false) => {}
                }
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivation::RootMap;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn result(id: usize, outcome: ParseOutcome) -> ParseResult {
        ParseResult {
            id,
            outcome,
            derivation: None,
            lexentries: None,
            wall_ms: 0,
        }
    }

    #[test]
    fn unparseable_pool_and_short_flag() {
        let outputs = vec![
            toks("a b c"),
            toks("one two three four five six seven eight nine ten"),
            toks("x y"),
            toks("p q"),
            toks("k"),
        ];
        let results = vec![
            result(0, ParseOutcome::Exhausted),
            result(1, ParseOutcome::Exhausted),
            result(2, ParseOutcome::Parseable),
            result(3, ParseOutcome::Exhausted),
            result(4, ParseOutcome::ResourceLimit),
        ];
        let s = sample_exhaustive_unparseable(&results, &outputs, 10, 100, 0).unwrap();
        assert_eq!(s.items, vec![(0, "a b c".to_string()), (3, "p q".to_string())]);
        assert!(s.short);
        let one = sample_exhaustive_unparseable(&results, &outputs, 10, 1, 4).unwrap();
        assert_eq!(one.items.len(), 1);
        assert!(!one.short);
        assert_eq!(
            one,
            sample_exhaustive_unparseable(&results, &outputs, 10, 1, 4).unwrap()
        );
        assert!(sample_exhaustive_unparseable(&results[..2], &outputs, 10, 1, 4).is_err());
    }

    fn d(text: &str) -> Derivation {
        Derivation::parse(text, Some("root_informal"), &RootMap::default()).unwrap()
    }

    fn parsed(id: usize, deriv: Derivation) -> ParseResult {
        ParseResult {
            derivation: Some(deriv),
            ..result(id, ParseOutcome::Parseable)
        }
    }

    fn runon() -> Derivation {
        d(
            r#"["cl-cl_runon", ["w_semicol_plr", ["hd_optcmp_c", {"token":"i","le":"pron"}], {"token":";","le":"punct"}], ["sb-hd_mc", {"token":"you","le":"pron"}, {"token":"right","le":"adj"}]]"#,
        )
    }

    fn plain() -> Derivation {
        d(r#"["sb-hd_mc", {"token":"you","le":"pron"}, {"token":"right","le":"adj"}]"#)
    }

    #[test]
    fn contrast_predicate() {
        let ex = |id: usize, reference: &str| ParallelExample {
            id,
            source: toks("je répète"),
            reference: toks(reference),
            output: Some(toks("i repeat you are right .")),
            model_lp: None,
        };
        let short = ex(0, "i repeat ; you are quite right .");
        let long = ex(1, "i repeat ; you are quite right , and i say it again ok");
        assert_eq!(long.reference.len(), 14);
        let twelve = ex(2, "a b c d e f g h i j k l");
        let refs = [runon(), runon(), runon()];
        let outs = [parsed(0, plain()), parsed(1, plain()), parsed(2, plain())];
        let both = parsed(0, runon());
        let cands = vec![
            ContrastCandidate {
                example: &short,
                reference: &refs[0],
                output: &outs[0],
            },
            ContrastCandidate {
                example: &long,
                reference: &refs[1],
                output: &outs[1],
            },
            ContrastCandidate {
                example: &twelve,
                reference: &refs[2],
                output: &outs[2],
            },
            ContrastCandidate {
                example: &short,
                reference: &refs[0],
                output: &both,
            },
        ];
        let s = sample_rule_contrast("cl-cl_runon", &cands, &BagOptions::default(), 12, 10, 0).unwrap();
        assert_eq!(s.items.len(), 1);
        assert_eq!(s.items[0].reference, "i repeat ; you are quite right .");
        assert!(matches!(
            sample_rule_contrast("no-such-rule", &cands, &BagOptions::default(), 12, 10, 0),
            Err(SamplingError::UnknownRule(_))
        ));
        assert!(contrast_tsv(&s.items).starts_with("id\tsource\treference\toutput\n0\t"));
        let unparsed = result(0, ParseOutcome::Exhausted);
        let c = [ContrastCandidate {
            example: &short,
            reference: &refs[0],
            output: &unparsed,
        }];
        assert!(
            sample_rule_contrast("cl-cl_runon", &c, &BagOptions::default(), 12, 10, 0)
                .unwrap()
                .items
                .is_empty()
        );
    }

    fn fixture_records() -> Vec<AnnotationRecord> {
        let mut v = Vec::new();
        for i in 0..100 {
            let mut r = AnnotationRecord::blank(i, format!("sentence {i}"));
            match i {
                0..5 => {
                    r.excluded = true;
                    r.exclusion_reason = "session information".into();
                }
                5..40 => r.grammatical = Some(true),
                _ => {
                    r.grammatical = Some(false);
                    r.sv_agreement_error = (40..46).contains(&i);
                    r.np_agreement_error = (45..51).contains(&i);
                }
            }
            v.push(r);
        }
        v
    }

    #[test]
    fn fixture_summary_shares() {
        let s = summarize_grammaticality(&fixture_records()).unwrap();
        assert_eq!((s.grammatical, s.ungrammatical, s.excluded), (35, 60, 5));
        assert_eq!((s.sv_only, s.np_only, s.both, s.fixable()), (5, 5, 1, 11));
        assert!((s.grammatical_share().unwrap() - 36.8).abs() < 0.1);
        assert!((s.fixable_share().unwrap() - 18.3).abs() < 0.1);
        assert!(s.to_string().contains("fixable by agreement\t11/60 (18.3%)"));
    }

    #[test]
    fn summary_edge_cases() {
        let all_good: Vec<AnnotationRecord> = (0..3)
            .map(|i| AnnotationRecord {
                grammatical: Some(true),
                ..AnnotationRecord::blank(i, "ok")
            })
            .collect();
        let s = summarize_grammaticality(&all_good).unwrap();
        assert_eq!(s.fixable_share(), None);
        assert!(s.to_string().contains("0/0 (undefined)"));
        let mut missing = all_good.clone();
        missing[1].grammatical = None;
        assert!(matches!(
            summarize_grammaticality(&missing),
            Err(SamplingError::Incomplete(1))
        ));
    }

    #[test]
    fn annotation_file_round_trip() {
        let recs = fixture_records();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &recs, false).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "id\ttext\tgrammatical\tsv_agreement_error\tnp_agreement_error\texcluded\texclusion_reason\n"
        ));
        assert_eq!(read_annotations(&buf[..]).unwrap(), recs);

        let blank = vec![AnnotationRecord::blank(7, "a \"quoted\" text")];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &blank, true).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap().lines().nth(1),
            Some("7\ta \"quoted\" text\t\t\t\t\t")
        );
        assert_eq!(read_annotations(&buf[..]).unwrap(), blank);

        let bad = "id\ttext\tgrammatical\tsv_agreement_error\tnp_agreement_error\texcluded\texclusion_reason\n3\tx\t1\t0\t0\t1\tdup\n";
        assert!(matches!(
            read_annotations(bad.as_bytes()),
            Err(SamplingError::Invalid { id: 3, .. })
        ));
        let bad = bad.replace("\t1\t0\t0\t1\t", "\tyes\t0\t0\t0\t");
        assert!(read_annotations(bad.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn summary_partitions_records(flags in prop::collection::vec((0u8..3, any::<bool>(), any::<bool>()), 0..80)) {
            let recs: Vec<AnnotationRecord> = flags
                .iter()
                .enumerate()
                .map(|(i, &(kind, sv, np))| AnnotationRecord {
                    grammatical: match kind { 0 => Some(true), 1 => Some(false), _ => None },
                    excluded: kind == 2,
                    sv_agreement_error: sv,
                    np_agreement_error: np,
                    ..AnnotationRecord::blank(i, "t")
                })
                .collect();
            let s = summarize_grammaticality(&recs).unwrap();
            prop_assert_eq!(s.grammatical + s.ungrammatical + s.excluded, s.total);
            prop_assert!(s.fixable() <= s.ungrammatical);
            let flagged = recs.iter().filter(|r| r.grammatical == Some(false) && (r.sv_agreement_error || r.np_agreement_error)).count();
            prop_assert_eq!(s.fixable(), flagged);
        }

        #[test]
        fn samples_are_subsets(n_pool in 0usize..60, n in 1usize..40, seed in any::<u64>()) {
            let pool: Vec<usize> = (0..n_pool).map(|i| i * 3).collect();
            let s = draw(&pool, n, seed);
            prop_assert_eq!(s.items.len(), n.min(n_pool));
            prop_assert!(s.items.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.items.iter().all(|x| pool.contains(x)));
            prop_assert_eq!(&s, &draw(&pool, n, seed));
        }
    }
}
