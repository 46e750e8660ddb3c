//! Rule-usage counts over derivation sets, frequency ranks and count ratios.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::derivation::{bag_of_rules, BagOptions, Derivation, RuleBag};
use crate::exec::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RulesError {
    #[error("bucket size must be at least 2, got {0}")]
    BucketSize(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

const CHUNK: usize = 512;

/// Rule counts summed over all derivations.
pub fn count_rules(exec: Exec, derivations: &[Derivation], opts: &BagOptions) -> RuleBag {
    let chunks: Vec<&[Derivation]> = derivations.chunks(CHUNK).collect();
    let partial = exec.map(&chunks, |chunk| {
        let mut bag = RuleBag::default();
        for d in chunk.iter() {
            for (rule, n) in bag_of_rules(d, opts).iter() {
                bag.add(rule, n);
            }
        }
        bag
    });
    let mut total = RuleBag::default();
    for bag in partial {
        for (rule, n) in bag.iter() {
            total.add(rule, n);
        }
    }
    total
}

/// Rules ordered by descending count, ties lexicographic.
pub fn ranked(counts: &RuleBag) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.iter().map(|(r, n)| (r.to_string(), n)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

pub fn top_k(counts: &RuleBag, k: usize) -> Vec<(String, u64)> {
    let mut v = ranked(counts);
    v.truncate(k);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleRow {
    pub rule: String,
    pub count_ref: u64,
    pub count_nmt: u64,
    /// 1-based frequency rank among rules seen in the reference set.
    pub rank_ref: Option<usize>,
    /// `count_nmt / count_ref`, defined when the rule occurs in the reference set.
    pub ratio: Option<f64>,
}

/// Joint counts of both derivation sets. Rows follow `rank_ref`, with
/// NMT-only rules appended in lexicographic order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleTable {
    pub rows: Vec<RuleRow>,
}

impl RuleTable {
    pub fn new(reference: &RuleBag, nmt: &RuleBag) -> Self {
        let mut rows: Vec<RuleRow> = ranked(reference)
            .into_iter()
            .enumerate()
            .map(|(i, (rule, count_ref))| {
                let count_nmt = nmt.get(&rule);
                RuleRow {
                    rule,
                    count_ref,
                    count_nmt,
                    rank_ref: Some(i + 1),
                    ratio: Some(count_nmt as f64 / count_ref as f64),
                }
            })
            .collect();
        for (rule, count_nmt) in nmt.iter() {
            if !reference.contains(rule) {
                rows.push(RuleRow {
                    rule: rule.to_string(),
                    count_ref: 0,
                    count_nmt,
                    rank_ref: None,
                    ratio: None,
                });
            }
        }
        Self { rows }
    }

    pub fn get(&self, rule: &str) -> Option<&RuleRow> {
        self.rows.iter().find(|r| r.rule == rule)
    }

    /// Reference top-k with the NMT count of each rule alongside.
    pub fn top_k_ref(&self, k: usize) -> Vec<&RuleRow> {
        self.rows.iter().filter(|r| r.rank_ref.is_some()).take(k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioPoint {
    pub rank: usize,
    pub rule: String,
    pub ratio: f64,
}

/// Rules used more than `min_ref_count` times in the reference set, by rank.
pub fn ratio_table(table: &RuleTable, min_ref_count: u64) -> Vec<RatioPoint> {
    table
        .rows
        .iter()
        .filter(|r| r.count_ref > min_ref_count)
        .filter_map(|r| {
            Some(RatioPoint {
                rank: r.rank_ref?,
                rule: r.rule.clone(),
                ratio: r.ratio?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub first_rank: usize,
    pub last_rank: usize,
    pub n: usize,
    /// Sample variance (n - 1 denominator); `None` for buckets under 2 rules.
    pub variance: Option<f64>,
}

/// Variance of the ratio within consecutive buckets of `bucket_size` points.
pub fn ratio_dispersion(points: &[RatioPoint], bucket_size: usize) -> Result<Vec<Bucket>, RulesError> {
    if bucket_size < 2 {
        return Err(RulesError::BucketSize(bucket_size));
    }
    Ok(points
        .chunks(bucket_size)
        .map(|b| {
            let n = b.len();
            let variance = (n >= 2).then(|| {
                let mean = b.iter().map(|p| p.ratio).sum::<f64>() / n as f64;
                b.iter().map(|p| (p.ratio - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            });
            Bucket {
                first_rank: b[0].rank,
                last_rank: b[n - 1].rank,
                n,
                variance,
            }
        })
        .collect())
}

pub fn ratio_tsv(points: &[RatioPoint]) -> String {
    let mut out = String::from("rank\trule\tratio\n");
    for p in points {
        out.push_str(&format!("{}\t{}\t{:.6}\n", p.rank, p.rule, p.ratio));
    }
    out
}

pub fn top_k_tsv(table: &RuleTable, k: usize) -> String {
    let mut out = String::from("rule\tcount_ref\tcount_nmt\n");
    for r in table.top_k_ref(k) {
        out.push_str(&format!("{}\t{}\t{}\n", r.rule, r.count_ref, r.count_nmt));
    }
    out
}

pub fn dispersion_tsv(buckets: &[Bucket]) -> String {
    let mut out = String::from("first_rank\tlast_rank\tn\tvariance\n");
    for b in buckets {
        let v = b.variance.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!("{}\t{}\t{}\t{}\n", b.first_rank, b.last_rank, b.n, v));
    }
    out
}

/// `rule<TAB>count` lines in rank order.
pub fn counts_tsv(counts: &RuleBag) -> String {
    let mut out = String::from("rule\tcount\n");
    for (rule, n) in ranked(counts) {
        out.push_str(&format!("{rule}\t{n}\n"));
    }
    out
}

pub fn parse_counts_tsv(text: &str) -> Result<RuleBag, RulesError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if i == 0 {
            if line != "rule\tcount" {
                return Err(RulesError::Format {
                    line: line_no,
                    message: "expected header `rule<TAB>count`".into(),
                });
            }
            continue;
        }
        let err = |message: String| RulesError::Format { line: line_no, message };
        let (rule, n) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `rule<TAB>count`".into()))?;
        let n: u64 = n.parse().map_err(|_| err(format!("bad count `{n}`")))?;
        if rule.is_empty() || n == 0 {
            return Err(err("empty rule or zero count".into()));
        }
        if map.insert(rule.to_string(), n).is_some() {
            return Err(err(format!("duplicate rule `{rule}`")));
        }
    }
    Ok(map.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derivation::RootMap;
    use proptest::prelude::*;

    const FIG1_NMT: &str = r#"["np_frg", ["sp-hd_n", {"token":"a","le":"det"}, ["aj-hdn_norm", {"token":"grotesque","le":"adj"}, {"token":"situation","le":"noun"}]]]"#;

    fn fig1() -> Derivation {
        Derivation::parse(FIG1_NMT, Some("root_frag"), &RootMap::default()).unwrap()
    }

    fn bag(pairs: &[(&str, u64)]) -> RuleBag {
        pairs.iter().map(|(r, n)| (r.to_string(), *n)).collect()
    }

    #[test]
    fn counts_are_additive() {
        let d = vec![fig1(), fig1()];
        let c = count_rules(Exec::Sequential, &d, &BagOptions::default());
        assert_eq!(c, bag(&[("np_frg", 2), ("sp-hd_n", 2), ("aj-hdn_norm", 2)]));
        assert!(count_rules(Exec::Sequential, &[], &BagOptions::default()).is_empty());
    }

    #[test]
    fn top_k_order() {
        let c = bag(&[("a", 5), ("b", 3), ("c", 1)]);
        assert_eq!(top_k(&c, 2), vec![("a".into(), 5), ("b".into(), 3)]);
        assert_eq!(top_k(&c, 10).len(), 3);
        assert_eq!(top_k(&bag(&[("b", 5), ("a", 5)]), 1), vec![("a".into(), 5)]);
    }

    #[test]
    fn table_ratios_and_threshold() {
        let t = RuleTable::new(
            &bag(&[("x", 20), ("y", 1000), ("z", 1001)]),
            &bag(&[("x", 10), ("w", 4)]),
        );
        assert_eq!(t.get("x").unwrap().ratio, Some(0.5));
        assert_eq!(t.get("z").unwrap().ratio, Some(0.0));
        assert_eq!(t.get("w").unwrap().rank_ref, None);
        assert_eq!(
            t.rows.iter().map(|r| r.rank_ref).collect::<Vec<_>>(),
            vec![Some(1), Some(2), Some(3), None]
        );
        let pts = ratio_table(&t, 5);
        assert_eq!(pts.len(), 3);
        let pts = ratio_table(&t, 1000);
        assert_eq!(pts.iter().map(|p| p.rule.as_str()).collect::<Vec<_>>(), vec!["z"]);
        assert_eq!(ratio_tsv(&pts), "rank\trule\tratio\n1\tz\t0.000000\n");
        assert_eq!(top_k_tsv(&t, 2), "rule\tcount_ref\tcount_nmt\nz\t1001\t0\ny\t1000\t0\n");
    }

    #[test]
    fn dispersion() {
        let pts: Vec<RatioPoint> = [0.5, 1.5, 1.0]
            .iter()
            .enumerate()
            .map(|(i, r)| RatioPoint {
                rank: i + 1,
                rule: format!("r{i}"),
                ratio: *r,
            })
            .collect();
        let b = ratio_dispersion(&pts, 2).unwrap();
        assert_eq!(b[0].variance, Some(0.5));
        assert_eq!((b[1].n, b[1].variance), (1, None));
        assert_eq!(ratio_dispersion(&pts, 1), Err(RulesError::BucketSize(1)));
        let flat: Vec<RatioPoint> = (0..6)
            .map(|i| RatioPoint {
                rank: i + 1,
                rule: format!("r{i}"),
                ratio: 1.0,
            })
            .collect();
        assert!(ratio_dispersion(&flat, 3)
            .unwrap()
            .iter()
            .all(|b| b.variance == Some(0.0)));
    }

    #[test]
    fn counts_tsv_round_trip() {
        let c = bag(&[("a", 5), ("b", 3)]);
        assert_eq!(parse_counts_tsv(&counts_tsv(&c)).unwrap(), c);
        assert!(matches!(
            parse_counts_tsv("rule\tcount\na\tx\n"),
            Err(RulesError::Format { line: 2, .. })
        ));
        assert!(parse_counts_tsv("nope\n").is_err());
    }

    proptest! {
        #[test]
        fn identical_sets_have_unit_ratio(counts in prop::collection::btree_map("[a-e]{1,3}", 1u64..5000, 0..30), min in 0u64..3000) {
            let b: RuleBag = counts.into_iter().collect();
            let t = RuleTable::new(&b, &b);
            for p in ratio_table(&t, min) {
                prop_assert_eq!(p.ratio, 1.0);
            }
            let ranks: Vec<usize> = t.rows.iter().filter_map(|r| r.rank_ref).collect();
            prop_assert_eq!(ranks, (1..=b.len()).collect::<Vec<_>>());
            prop_assert_eq!(RuleTable::new(&b, &b), t);
        }
    }
}
