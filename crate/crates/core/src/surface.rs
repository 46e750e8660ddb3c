//! Surface statistics of model output and their correlation with
//! parseability, plus the root-condition distribution.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::ParallelExample;
use crate::derivation::{Derivation, RootCondition};
use crate::exec::Exec;
use crate::gateway::{ParseOutcome, ParseResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("cannot train a unigram model on an empty corpus")]
    EmptyCorpus,
    #[error("example {0}: output has no tokens")]
    DegenerateLength(usize),
    #[error("example {0}: unigram log probability of the output is 0, norm_lp is undefined")]
    UndefinedNormLp(usize),
    #[error("example {0}: no model output")]
    MissingOutput(usize),
    #[error("example {0}: no model score")]
    MissingScore(usize),
    #[error("example {0}: outcome {1} is outside both classes")]
    ExcludedOutcome(usize, ParseOutcome),
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("correlation undefined: only one parseability class present")]
    SingleClass,
    #[error("no input rows")]
    Empty,
}

/// Maximum-likelihood unigram model with a floor for unseen tokens.
#[derive(Debug, Clone)]
pub struct UnigramModel {
    probs: HashMap<String, f64>,
    oov_floor: f64,
}

impl UnigramModel {
    /// `oov_floor` is `1 / (N + V)` for `N` tokens over `V` types.
    pub fn train(corpus: &[Vec<String>]) -> Result<Self, StatsError> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut total = 0u64;
        for tok in corpus.iter().flatten() {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(StatsError::EmptyCorpus);
        }
        let n = total as f64;
        let oov_floor = 1.0 / (n + counts.len() as f64);
        let probs = counts.into_iter().map(|(t, c)| (t.to_string(), c as f64 / n)).collect();
        Ok(Self { probs, oov_floor })
    }

    pub fn prob(&self, token: &str) -> f64 {
        self.probs.get(token).copied().unwrap_or(self.oov_floor)
    }

    pub fn oov_floor(&self) -> f64 {
        self.oov_floor
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    /// Natural-log probability of a sentence.
    pub fn log_prob<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        sentence.iter().map(|t| self.prob(t.as_ref()).ln()).sum()
    }

    /// Sum of in-vocabulary probabilities (1 up to rounding).
    pub fn mass(&self) -> f64 {
        let mut p: Vec<f64> = self.probs.values().copied().collect();
        p.sort_by(f64::total_cmp);
        p.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    LpNmt,
    LpUniSrc,
    LpUniRef,
    LpUniOut,
    LenOut,
    MeanLp,
    NormLp,
}

impl Feature {
    pub const ALL: [Feature; 7] = [
        Feature::LpNmt,
        Feature::LpUniSrc,
        Feature::LpUniRef,
        Feature::LpUniOut,
        Feature::LenOut,
        Feature::MeanLp,
        Feature::NormLp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::LpNmt => "lp_nmt",
            Feature::LpUniSrc => "lp_uni_src",
            Feature::LpUniRef => "lp_uni_ref",
            Feature::LpUniOut => "lp_uni_out",
            Feature::LenOut => "len_out",
            Feature::MeanLp => "mean_lp",
            Feature::NormLp => "norm_lp",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which outcomes make up the negative (unparseable) class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeClass {
    #[default]
    AllUnparseable,
    ExhaustedOnly,
}

impl NegativeClass {
    /// 1 for parseable, 0 for the negative class, `None` if excluded.
    pub fn label(self, outcome: ParseOutcome) -> Option<u8> {
        match (self, outcome) {
            (_, ParseOutcome::Parseable) => Some(1),
            (NegativeClass::AllUnparseable, _) | (NegativeClass::ExhaustedOnly, ParseOutcome::Exhausted) => Some(0),
            _ => None,
        }
    }
}

/// Surface statistics of one example. `mean_lp` and `norm_lp` are `None`
/// where their definitions degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: usize,
    pub lp_nmt: f64,
    pub lp_uni_src: f64,
    pub lp_uni_ref: f64,
    pub lp_uni_out: f64,
    pub len_out: usize,
    pub mean_lp: Option<f64>,
    pub norm_lp: Option<f64>,
    pub parseable: u8,
}

impl FeatureRow {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        match feature {
            Feature::LpNmt => Some(self.lp_nmt),
            Feature::LpUniSrc => Some(self.lp_uni_src),
            Feature::LpUniRef => Some(self.lp_uni_ref),
            Feature::LpUniOut => Some(self.lp_uni_out),
            Feature::LenOut => Some(self.len_out as f64),
            Feature::MeanLp => self.mean_lp,
            Feature::NormLp => self.norm_lp,
        }
    }

    /// `mean_lp * len_out == lp_nmt` and `norm_lp * lp_uni_out == -lp_nmt`,
    /// exactly in f64, for whichever of the two is defined.
    pub fn identities_hold(&self) -> bool {
        let mean_ok = self.mean_lp.is_none_or(|m| m * self.len_out as f64 == self.lp_nmt);
        let norm_ok = self.norm_lp.is_none_or(|q| q * self.lp_uni_out == -self.lp_nmt);
        mean_ok && norm_ok
    }

    pub const TSV_HEADER: &'static str =
        "id\tlp_nmt\tlp_uni_src\tlp_uni_ref\tlp_uni_out\tlen_out\tmean_lp\tnorm_lp\tparseable";

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.lp_nmt,
            self.lp_uni_src,
            self.lp_uni_ref,
            self.lp_uni_out,
            self.len_out,
            opt(self.mean_lp),
            opt(self.norm_lp),
            self.parseable
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self, String> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(format!("expected 9 columns, found {}", cols.len()));
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|_| format!("bad number `{}`", cols[i]));
        let opt = |i: usize| match cols[i] {
            "NA" => Ok(None),
            _ => num(i).map(Some),
        };
        let int = |i: usize| {
            cols[i]
                .parse::<usize>()
                .map_err(|_| format!("bad integer `{}`", cols[i]))
        };
        let parseable = match cols[8] {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("parseable must be 0 or 1, got `{other}`")),
        };
        Ok(Self {
            id: int(0)?,
            lp_nmt: num(1)?,
            lp_uni_src: num(2)?,
            lp_uni_ref: num(3)?,
            lp_uni_out: num(4)?,
            len_out: int(5)?,
            mean_lp: opt(6)?,
            norm_lp: opt(7)?,
            parseable,
        })
    }
}

/// Finds `q` within a few ulps of `num / den` with `q * den == num` exactly.
fn exact_quotient(num: f64, den: f64) -> Option<f64> {
    let q0 = num / den;
    if q0 * den == num {
        return Some(q0);
    }
    let (mut up, mut down) = (q0, q0);
    for _ in 0..64 {
        up = up.next_up();
        if up * den == num {
            return Some(up);
        }
        down = down.next_down();
        if down * den == num {
            return Some(down);
        }
    }
    None
}

/// `lp` and an exact per-token mean, moving `lp` when `len` does not divide it.
fn exact_mean(lp: f64, len: usize) -> (f64, Option<f64>) {
    if len == 0 {
        return (lp, None);
    }
    let n = len as f64;
    match exact_quotient(lp, n) {
        Some(q) => (lp, Some(q)),
        None => {
            let q = lp / n;
            (q * n, Some(q))
        }
    }
}

/// A value within `NORM_SEARCH` ulps of `uni` and a ratio `q` with
/// `q * value == -lp`.
fn exact_norm(lp: f64, uni: f64) -> Option<(f64, f64)> {
    const NORM_SEARCH: usize = 16;
    if let Some(q) = exact_quotient(-lp, uni) {
        return Some((uni, q));
    }
    let (mut up, mut down) = (uni, uni);
    for _ in 0..NORM_SEARCH {
        up = up.next_up();
        down = down.next_down();
        for cand in [up, down] {
            if cand != 0.0 {
                if let Some(q) = exact_quotient(-lp, cand) {
                    return Some((cand, q));
                }
            }
        }
    }
    None
}

/// Derived statistics for `(lp_nmt, lp_uni_out, len_out)`.
///
/// The ratios are chosen so both defining identities hold exactly in f64.
/// When no representable ratio exists for the raw inputs, `lp_nmt` and
/// `lp_uni_out` are moved by a few ulps to the nearest values that admit one.
/// `lp_nmt` moves through its mean, one ulp of the mean at a time, because
/// when the two mantissas nearly coincide no nearby `lp_uni_out` works.
/// Returns `(lp_nmt, lp_uni_out, mean_lp, norm_lp)`.
pub fn derived_stats(lp_nmt: f64, lp_uni_out: f64, len_out: usize) -> (f64, f64, Option<f64>, Option<f64>) {
    let (lp0, mean0) = exact_mean(lp_nmt, len_out);
    if lp_uni_out == 0.0 {
        return (lp0, lp_uni_out, mean0, None);
    }
    let n = len_out as f64;
    let at = |m: f64| if len_out == 0 { (m, None) } else { (m * n, Some(m)) };
    let pivot = mean0.unwrap_or(lp0);
    let (mut up, mut down) = (pivot, pivot);
    let mut candidates = vec![(lp0, mean0)];
    for _ in 0..64 {
        up = up.next_up();
        down = down.next_down();
        candidates.push(at(up));
        candidates.push(at(down));
    }
    for (lp, mean) in candidates {
        if let Some((uni, norm)) = exact_norm(lp, lp_uni_out) {
            return (lp, uni, mean, Some(norm));
        }
    }
    (lp0, lp_uni_out, mean0, Some(-lp0 / lp_uni_out))
}

fn row_parts(
    example: &ParallelExample,
    result: &ParseResult,
    source_model: &UnigramModel,
    target_model: &UnigramModel,
    coding: NegativeClass,
) -> Result<FeatureRow, StatsError> {
    let id = example.id;
    let output = example.output.as_ref().ok_or(StatsError::MissingOutput(id))?;
    let lp_nmt = example.model_lp.ok_or(StatsError::MissingScore(id))?;
    let parseable = coding
        .label(result.outcome)
        .ok_or(StatsError::ExcludedOutcome(id, result.outcome))?;
    let len_out = output.len();
    let (lp_nmt, lp_uni_out, mean_lp, norm_lp) = derived_stats(lp_nmt, target_model.log_prob(output), len_out);
    Ok(FeatureRow {
        id,
        lp_nmt,
        lp_uni_src: source_model.log_prob(&example.source),
        lp_uni_ref: target_model.log_prob(&example.reference),
        lp_uni_out,
        len_out,
        mean_lp,
        norm_lp,
        parseable,
    })
}

/// All seven statistics for one example; degenerate rows are errors.
pub fn feature_row(
    example: &ParallelExample,
    result: &ParseResult,
    source_model: &UnigramModel,
    target_model: &UnigramModel,
    coding: NegativeClass,
) -> Result<FeatureRow, StatsError> {
    let row = row_parts(example, result, source_model, target_model, coding)?;
    if row.mean_lp.is_none() {
        return Err(StatsError::DegenerateLength(row.id));
    }
    if row.norm_lp.is_none() {
        return Err(StatsError::UndefinedNormLp(row.id));
    }
    Ok(row)
}

/// Like [`feature_row`] but keeps degenerate rows with the undefined
/// statistics left empty.
pub fn feature_row_partial(
    example: &ParallelExample,
    result: &ParseResult,
    source_model: &UnigramModel,
    target_model: &UnigramModel,
    coding: NegativeClass,
) -> Result<FeatureRow, StatsError> {
    row_parts(example, result, source_model, target_model, coding)
}

/// Feature rows for aligned examples and results. Rows that cannot be built
/// at all are returned separately with their reason.
pub fn feature_rows(
    exec: Exec,
    examples: &[ParallelExample],
    results: &[ParseResult],
    source_model: &UnigramModel,
    target_model: &UnigramModel,
    coding: NegativeClass,
) -> Result<(Vec<FeatureRow>, Vec<StatsError>), StatsError> {
    if examples.len() != results.len() {
        return Err(StatsError::LengthMismatch(examples.len(), results.len()));
    }
    let pairs: Vec<(&ParallelExample, &ParseResult)> = examples.iter().zip(results).collect();
    let built = exec.map(&pairs, |(e, r)| {
        feature_row_partial(e, r, source_model, target_model, coding)
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for b in built {
        match b {
            Ok(r) => rows.push(r),
            Err(e) => skipped.push(e),
        }
    }
    Ok((rows, skipped))
}

/// Product-moment correlation. With a binary `y` this is the point-biserial
/// coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPoints(x.len()));
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(StatsError::ZeroVariance("x"));
    }
    if y.iter().all(|v| *v == y[0]) {
        return Err(StatsError::ZeroVariance("y"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEntry {
    pub feature: Feature,
    /// `None` when the feature is constant over the rows used.
    pub r: Option<f64>,
    pub n_used: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub entries: Vec<CorrelationEntry>,
}

impl CorrelationReport {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).and_then(|e| e.r)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature\tr\tn_used\tn_excluded\n");
        for e in &self.entries {
            let r = e.r.map_or_else(|| "NA".to_string(), |r| format!("{r:.6}"));
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.feature, r, e.n_used, e.n_excluded));
        }
        out
    }
}

/// Pearson's r of each feature against the parseability label, in table order.
pub fn correlation_report(rows: &[FeatureRow]) -> Result<CorrelationReport, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooFewPoints(rows.len()));
    }
    if rows.iter().all(|r| r.parseable == rows[0].parseable) {
        return Err(StatsError::SingleClass);
    }
    let entries = Feature::ALL
        .iter()
        .map(|&feature| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| {
                    r.get(feature)
                        .filter(|v| v.is_finite())
                        .map(|v| (v, r.parseable as f64))
                })
                .unzip();
            CorrelationEntry {
                feature,
                r: pearson(&x, &y).ok(),
                n_used: x.len(),
                n_excluded: rows.len() - x.len(),
            }
        })
        .collect();
    Ok(CorrelationReport { entries })
}

pub const ROOT_COLUMNS: [&str; 5] = [
    "strict_full",
    "strict_frag",
    "informal_full",
    "informal_frag",
    "unparseable",
];

/// Root-condition percentages for reference and model output.
#[derive(Debug, Clone, PartialEq)]
pub struct RootTable {
    pub reference: [f64; 5],
    pub output: [f64; 5],
}

impl RootTable {
    pub fn delta(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.output[i] - self.reference[i])
    }

    pub fn to_tsv(&self) -> String {
        let row = |name: &str, v: &[f64; 5]| {
            let cells: Vec<String> = v.iter().map(|x| format!("{:.2}", x + 0.0)).collect();
            format!("{name}\t{}\n", cells.join("\t"))
        };
        let mut out = format!("source\t{}\n", ROOT_COLUMNS.join("\t"));
        out.push_str(&row("ref", &self.reference));
        out.push_str(&row("nmt", &self.output));
        out.push_str(&row("delta", &self.delta()));
        out
    }
}

fn percentages(counts: [usize; 5]) -> [f64; 5] {
    let total: usize = counts.iter().sum();
    counts.map(|c| 100.0 * c as f64 / total as f64)
}

fn column(c: RootCondition) -> usize {
    c.column()
}

pub fn root_distribution(reference: &[Derivation], output: &[ParseResult]) -> Result<RootTable, StatsError> {
    if reference.is_empty() || output.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut ref_counts = [0usize; 5];
    for d in reference {
        ref_counts[column(d.condition)] += 1;
    }
    let mut out_counts = [0usize; 5];
    for r in output {
        match &r.derivation {
            Some(d) if r.is_parseable() => out_counts[column(d.condition)] += 1,
            _ => out_counts[4] += 1,
        }
    }
    Ok(RootTable {
        reference: percentages(ref_counts),
        output: percentages(out_counts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivation::{Node, RootMap};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn unigram_mle_and_floor() {
        let m = UnigramModel::train(&[toks("a a b")]).unwrap();
        assert_relative_eq!(m.prob("a"), 2.0 / 3.0);
        assert_relative_eq!(m.prob("b"), 1.0 / 3.0);
        assert_relative_eq!(m.log_prob(&toks("a b")), -1.5040773967762742, epsilon = 1e-12);
        assert_eq!(m.prob("c"), 0.2);
        assert!((m.mass() - 1.0).abs() < 1e-9);
        assert_eq!(UnigramModel::train(&[]).unwrap_err(), StatsError::EmptyCorpus);
        assert_eq!(UnigramModel::train(&[vec![]]).unwrap_err(), StatsError::EmptyCorpus);
    }

    fn example(output: &str, lp: f64) -> ParallelExample {
        ParallelExample {
            id: 3,
            source: toks("le chat"),
            reference: toks("the cat"),
            output: Some(toks(output)),
            model_lp: Some(lp),
        }
    }

    fn result(outcome: ParseOutcome) -> ParseResult {
        ParseResult {
            id: 3,
            outcome,
            derivation: None,
            lexentries: None,
            wall_ms: 0,
        }
    }

    #[test]
    fn mean_and_norm_by_substitution() {
        let (lp, _, mean, _) = derived_stats(-10.0, -5.0, 5);
        assert_eq!((lp, mean), (-10.0, Some(-2.0)));
        let (_, _, _, norm) = derived_stats(-10.0, -5.0, 5);
        assert_eq!(norm, Some(-2.0));
    }

    #[test]
    fn feature_row_errors() {
        let src = UnigramModel::train(&[toks("le chat")]).unwrap();
        let tgt = UnigramModel::train(&[toks("the cat")]).unwrap();
        let ok = feature_row(
            &example("the cat", -3.0),
            &result(ParseOutcome::Parseable),
            &src,
            &tgt,
            NegativeClass::default(),
        )
        .unwrap();
        assert_eq!(ok.parseable, 1);
        assert_eq!(ok.len_out, 2);
        assert!(ok.identities_hold());

        let empty = example("", -1.0);
        assert_eq!(
            feature_row(
                &empty,
                &result(ParseOutcome::Exhausted),
                &src,
                &tgt,
                NegativeClass::default()
            ),
            Err(StatsError::DegenerateLength(3))
        );
        let partial = feature_row_partial(
            &empty,
            &result(ParseOutcome::Exhausted),
            &src,
            &tgt,
            NegativeClass::default(),
        )
        .unwrap();
        assert_eq!((partial.mean_lp, partial.norm_lp, partial.parseable), (None, None, 0));

        // A single-type target corpus gives probability 1, so log P_u = 0.
        let certain = UnigramModel::train(&[toks("the")]).unwrap();
        assert_eq!(
            feature_row(
                &example("the", -1.0),
                &result(ParseOutcome::Parseable),
                &src,
                &certain,
                NegativeClass::default()
            ),
            Err(StatsError::UndefinedNormLp(3))
        );

        let mut no_score = example("the cat", -1.0);
        no_score.model_lp = None;
        assert_eq!(
            feature_row(
                &no_score,
                &result(ParseOutcome::Parseable),
                &src,
                &tgt,
                NegativeClass::default()
            ),
            Err(StatsError::MissingScore(3))
        );
        assert_eq!(
            feature_row(
                &example("the cat", -1.0),
                &result(ParseOutcome::ResourceLimit),
                &src,
                &tgt,
                NegativeClass::ExhaustedOnly
            ),
            Err(StatsError::ExcludedOutcome(3, ParseOutcome::ResourceLimit))
        );
    }

    #[test]
    fn pearson_basics() {
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_relative_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(pearson(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), Err(StatsError::ZeroVariance("x")));
        assert_eq!(pearson(&[1.0], &[0.0]), Err(StatsError::TooFewPoints(1)));
        assert!(pearson(&[1.0, 2.0], &[0.0]).is_err());
    }

    fn row(id: usize, lp: f64, parseable: u8) -> FeatureRow {
        let (lp_nmt, lp_uni_out, mean_lp, norm_lp) = derived_stats(lp, -4.0 - id as f64, 1 + id % 5);
        FeatureRow {
            id,
            lp_nmt,
            lp_uni_src: -(id as f64),
            lp_uni_ref: -((id * id) as f64),
            lp_uni_out,
            len_out: 1 + id % 5,
            mean_lp,
            norm_lp,
            parseable,
        }
    }

    #[test]
    fn report_orders_features_and_counts_exclusions() {
        let mut rows: Vec<FeatureRow> = (0..10).map(|i| row(i, (i % 2) as f64 - 3.0, (i % 2) as u8)).collect();
        rows[4].norm_lp = None;
        let rep = correlation_report(&rows).unwrap();
        assert_eq!(rep.entries.iter().map(|e| e.feature).collect::<Vec<_>>(), Feature::ALL);
        assert_relative_eq!(rep.get(Feature::LpNmt).unwrap(), 1.0);
        let norm = rep.entries.iter().find(|e| e.feature == Feature::NormLp).unwrap();
        assert_eq!((norm.n_used, norm.n_excluded), (9, 1));
        assert!(rep
            .to_tsv()
            .starts_with("feature\tr\tn_used\tn_excluded\nlp_nmt\t1.000000\t10\t0\n"));

        let single: Vec<FeatureRow> = (0..4).map(|i| row(i, -1.0, 1)).collect();
        assert_eq!(correlation_report(&single), Err(StatsError::SingleClass));
    }

    #[test]
    fn feature_tsv_round_trip() {
        let mut r = row(7, -12.345678901234, 1);
        r.norm_lp = None;
        let back = FeatureRow::from_tsv(&r.to_tsv()).unwrap();
        assert_eq!(back, r);
        assert!(FeatureRow::from_tsv("1\t2").is_err());
    }

    fn deriv(root: &str) -> Derivation {
        Derivation::new(
            root,
            Node::rule("np_frg", vec![Node::leaf("x", "noun")]),
            &RootMap::default(),
        )
        .unwrap()
    }

    fn parsed(root: &str) -> ParseResult {
        ParseResult {
            id: 0,
            outcome: ParseOutcome::Parseable,
            derivation: Some(deriv(root)),
            lexentries: None,
            wall_ms: 0,
        }
    }

    #[test]
    fn root_distribution_counts() {
        let out = vec![
            parsed("root_strict"),
            parsed("root_strict"),
            parsed("root_informal"),
            result(ParseOutcome::Exhausted),
        ];
        let refs = vec![deriv("root_strict"); 4];
        let t = root_distribution(&refs, &out).unwrap();
        assert_eq!(t.output, [50.0, 0.0, 25.0, 0.0, 25.0]);
        assert_eq!(t.reference, [100.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.delta(), [-50.0, 0.0, 25.0, 0.0, 25.0]);
        assert!(root_distribution(&[], &out).is_err());
        let tsv = t.to_tsv();
        assert!(tsv.contains("nmt\t50.00\t0.00\t25.00\t0.00\t25.00\n"), "{tsv}");
    }

    #[test]
    fn realistic_scale_root_delta() {
        let reference = [64.7, 2.4, 31.5, 1.4, 0.0];
        let output = [60.5, 3.0, 28.1, 1.6, 6.8];
        let t = RootTable { reference, output };
        let d = t.delta();
        assert_relative_eq!(d[0], -4.2, epsilon = 1e-9);
        // Strict full has the largest drop.
        assert!(d.iter().all(|x| *x >= d[0]));
        assert_relative_eq!(reference.iter().sum::<f64>(), 100.0, epsilon = 0.1);
        assert_relative_eq!(output.iter().sum::<f64>(), 100.0, epsilon = 0.1);
    }

    #[test]
    fn expected_ordering_of_magnitudes() {
        // |r(len)| > |r(lp_nmt)| > |r(mean_lp)| > |r(norm_lp)| in the reported table.
        let (len, lp, mean, norm) = (-0.320f64, 0.313f64, 0.093f64, 0.057f64);
        assert!(len.abs() > lp.abs() && lp.abs() > mean.abs() && mean.abs() > norm.abs());
    }

    proptest! {
        #[test]
        fn derived_identities_are_exact(
            lp in -200.0f64..0.0,
            uni in -400.0f64..-1e-3,
            len in 1usize..80,
        ) {
            let (lp2, uni2, mean, norm) = derived_stats(lp, uni, len);
            prop_assert_eq!(mean.unwrap() * len as f64, lp2);
            prop_assert_eq!(norm.unwrap() * uni2, -lp2);
            prop_assert!((lp2 - lp).abs() <= 4.0 * f64::EPSILON * lp.abs());
            prop_assert!((uni2 - uni).abs() <= 128.0 * f64::EPSILON * uni.abs());
        }

        #[test]
        fn pearson_bounded_and_affine_invariant(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            prop_assume!(x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]));
            let r = pearson(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let rs = pearson(&xs, &y).unwrap();
            prop_assert!((r - rs).abs() < 1e-9);
            let neg: Vec<f64> = x.iter().map(|v| -a * v).collect();
            prop_assert!((pearson(&neg, &y).unwrap() + r).abs() < 1e-9);
        }

        #[test]
        fn label_recoding_leaves_r_unchanged(
            x in prop::collection::vec(-50.0f64..50.0, 6..30),
            seed in any::<u64>(),
        ) {
            let labels: Vec<f64> = (0..x.len()).map(|i| ((seed >> (i % 64)) & 1) as f64).collect();
            prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
            prop_assume!(x.iter().any(|v| *v != x[0]));
            let pm: Vec<f64> = labels.iter().map(|v| 2.0 * v - 1.0).collect();
            prop_assert!((pearson(&x, &labels).unwrap() - pearson(&x, &pm).unwrap()).abs() < 1e-9);
        }
    }
}
