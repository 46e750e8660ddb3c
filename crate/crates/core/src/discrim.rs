//! Bag-of-rules classification of reference versus model-output derivations
//! with an L1-regularized logistic regression without intercept.
//!
//! The objective is `‖w‖₁ + C · Σᵢ log(1 + exp(−yᵢ w·xᵢ))`, minimized by
//! cyclic coordinate descent. Each coordinate takes a one-dimensional Newton
//! step on the smooth part, soft-thresholded against the L1 term, followed by
//! a backtracking line search that only accepts decreasing steps.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::derivation::{bag_of_rules, BagOptions, Derivation};
use crate::exec::Exec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscrimError {
    #[error("the {0} derivation set is empty")]
    EmptySet(&'static str),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("training data holds only one class")]
    SingleClass,
    #[error("dataset has no rows")]
    NoRows,
    #[error("invalid solver setting: {0}")]
    Setting(String),
    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Sparse design matrix over rule labels. Labels are +1 for reference rows
/// and −1 for model-output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleDataset {
    pub features: Vec<String>,
    /// Per row, `(column, value)` pairs sorted by column with positive values.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<i8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VectorizeOptions {
    pub bag: BagOptions,
    /// Presence (1.0) instead of raw counts.
    pub binary: bool,
}

/// One row per reference derivation, then one per output derivation.
pub fn vectorize(
    exec: Exec,
    reference: &[Derivation],
    output: &[Derivation],
    opts: &VectorizeOptions,
) -> Result<RuleDataset, DiscrimError> {
    if reference.is_empty() {
        return Err(DiscrimError::EmptySet("reference"));
    }
    if output.is_empty() {
        return Err(DiscrimError::EmptySet("output"));
    }
    let all: Vec<&Derivation> = reference.iter().chain(output).collect();
    let bags = exec.map(&all, |d| bag_of_rules(d, &opts.bag));

    let mut features: Vec<String> = bags.iter().flat_map(|b| b.iter().map(|(r, _)| r.to_string())).collect();
    features.sort_unstable();
    features.dedup();
    let index: HashMap<&str, usize> = features.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();

    let rows = bags
        .iter()
        .map(|b| {
            // Bags iterate in label order, so columns come out sorted.
            b.iter()
                .map(|(r, n)| (index[r], if opts.binary { 1.0 } else { n as f64 }))
                .collect()
        })
        .collect();
    let labels = std::iter::repeat_n(1, reference.len())
        .chain(std::iter::repeat_n(-1, output.len()))
        .collect();
    Ok(RuleDataset { features, rows, labels })
}

impl RuleDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Rows at `indices`, in that order, over the same feature space.
    pub fn subset(&self, indices: &[usize]) -> RuleDataset {
        RuleDataset {
            features: self.features.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Moves column `j` to `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> RuleDataset {
        let mut features = vec![String::new(); self.features.len()];
        for (j, f) in self.features.iter().enumerate() {
            features[perm[j]] = f.clone();
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r: Vec<(usize, f64)> = r.iter().map(|&(j, v)| (perm[j], v)).collect();
                r.sort_by_key(|e| e.0);
                r
            })
            .collect();
        RuleDataset {
            features,
            rows,
            labels: self.labels.clone(),
        }
    }

    /// The more frequent label; +1 on a tie.
    pub fn majority_label(&self) -> i8 {
        let pos = self.labels.iter().filter(|&&y| y > 0).count();
        if 2 * pos >= self.labels.len() {
            1
        } else {
            -1
        }
    }

    fn columns(&self) -> Vec<Vec<(usize, f64)>> {
        let mut cols = vec![Vec::new(); self.features.len()];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, v));
            }
        }
        cols
    }
}

/// Seeded shuffle, then the first `round(train_fraction · n)` rows train.
/// Both parts keep dataset order.
pub fn split_train_val(
    data: &RuleDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(RuleDataset, RuleDataset), DiscrimError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DiscrimError::Fraction(train_fraction));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut crate::seeded_rng(seed));
    let n_train = (train_fraction * data.len() as f64).round() as usize;
    let (train, val) = idx.split_at_mut(n_train);
    train.sort_unstable();
    val.sort_unstable();
    Ok((data.subset(train), data.subset(val)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            c: 0.01,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Model {
    pub features: Vec<String>,
    pub weights: Vec<f64>,
    pub c: f64,
    pub tol: f64,
    /// Completed coordinate-descent sweeps.
    pub iterations: usize,
    pub converged: bool,
    /// Objective before the first sweep and after each sweep.
    pub trace: Vec<f64>,
    /// Prediction for a zero score: the training-majority label.
    pub tie_label: i8,
}

/// `log(1 + exp(-z))` without overflow.
fn softplus_neg(z: f64) -> f64 {
    (-z).max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(z))`.
fn sigmoid_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

fn objective(w: &[f64], margins: &[f64], c: f64) -> f64 {
    // Neumaier summation keeps the trace comparable between sweeps.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &z in margins {
        let v = softplus_neg(z);
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    w.iter().map(|x| x.abs()).sum::<f64>() + c * (sum + comp)
}

/// Gradient of the smooth part with respect to every weight.
fn loss_gradient(cols: &[Vec<(usize, f64)>], labels: &[i8], margins: &[f64], c: f64) -> Vec<f64> {
    cols.iter()
        .map(|col| {
            c * col
                .iter()
                .map(|&(i, x)| -(labels[i] as f64) * x * sigmoid_neg(margins[i]))
                .sum::<f64>()
        })
        .collect()
}

const SIGMA: f64 = 0.01;
const BETA: f64 = 0.5;
const MAX_BACKTRACK: usize = 60;

pub fn fit(train: &RuleDataset, opts: &FitOptions) -> Result<L1Model, DiscrimError> {
    if train.is_empty() {
        return Err(DiscrimError::NoRows);
    }
    if train.labels.iter().all(|&y| y == train.labels[0]) {
        return Err(DiscrimError::SingleClass);
    }
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(DiscrimError::Setting(format!("c must be positive, got {}", opts.c)));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(DiscrimError::Setting(format!("tol must be positive, got {}", opts.tol)));
    }
    let c = opts.c;
    let y: Vec<f64> = train.labels.iter().map(|&l| l as f64).collect();
    let cols = train.columns();
    let mut w = vec![0.0; train.n_features()];
    let mut margins = vec![0.0; train.len()];
    let mut trace = vec![objective(&w, &margins, c)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        let saved = w.clone();
        let mut max_step = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            if col.is_empty() {
                continue;
            }
            let (mut g, mut h) = (0.0, 0.0);
            for &(i, x) in col {
                let s = sigmoid_neg(margins[i]);
                g -= y[i] * x * s;
                h += x * x * s * (1.0 - s);
            }
            g *= c;
            h = (c * h).max(1e-12);
            let wj = w[j];
            let d = if g + 1.0 <= h * wj {
                -(g + 1.0) / h
            } else if g - 1.0 >= h * wj {
                -(g - 1.0) / h
            } else {
                -wj
            };
            if d == 0.0 {
                continue;
            }
            let delta = g * d + (wj + d).abs() - wj.abs();
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..MAX_BACKTRACK {
                let step = lambda * d;
                let loss_change: f64 = col
                    .iter()
                    .map(|&(i, x)| {
                        let z = margins[i];
                        softplus_neg(z + step * y[i] * x) - softplus_neg(z)
                    })
                    .sum();
                let change = (wj + step).abs() - wj.abs() + c * loss_change;
                if change <= SIGMA * lambda * delta {
                    accepted = true;
                    break;
                }
                lambda *= BETA;
            }
            if !accepted {
                continue;
            }
            let step = lambda * d;
            w[j] = wj + step;
            for &(i, x) in col {
                margins[i] += step * y[i] * x;
            }
            max_step = max_step.max(step.abs());
        }
        let obj = objective(&w, &margins, c);
        if obj > *trace.last().unwrap() {
            // Progress has fallen below rounding noise; keep the better point.
            w = saved;
            converged = true;
            break;
        }
        iterations += 1;
        trace.push(obj);
        if max_step < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(L1Model {
        features: train.features.clone(),
        weights: w,
        c,
        tol: opts.tol,
        iterations,
        converged,
        trace,
        tie_label: train.majority_label(),
    })
}

impl L1Model {
    pub fn weight(&self, rule: &str) -> f64 {
        self.features
            .iter()
            .position(|f| f == rule)
            .map_or(0.0, |j| self.weights[j])
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// Weights aligned with `data`'s columns; rules unknown to the model get 0.
    pub fn weights_for(&self, data: &RuleDataset) -> Vec<f64> {
        let by_rule: HashMap<&str, f64> = self
            .features
            .iter()
            .map(String::as_str)
            .zip(self.weights.iter().copied())
            .collect();
        data.features
            .iter()
            .map(|f| by_rule.get(f.as_str()).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn final_objective(&self) -> f64 {
        *self.trace.last().expect("trace starts with the initial objective")
    }

    /// Largest violation of the L1 subgradient optimality condition on
    /// `data`: `|∇ⱼ + sign(wⱼ)|` for nonzero weights, `max(0, |∇ⱼ| − 1)`
    /// for zero weights.
    pub fn optimality_violation(&self, data: &RuleDataset) -> f64 {
        let w = self.weights_for(data);
        let margins: Vec<f64> = data
            .rows
            .iter()
            .zip(&data.labels)
            .map(|(r, &y)| y as f64 * r.iter().map(|&(j, x)| w[j] * x).sum::<f64>())
            .collect();
        let grad = loss_gradient(&data.columns(), &data.labels, &margins, self.c);
        grad.iter()
            .zip(&w)
            .map(|(g, wj)| {
                if *wj == 0.0 {
                    (g.abs() - 1.0).max(0.0)
                } else {
                    (g + wj.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn predict(&self, data: &RuleDataset) -> Vec<i8> {
        let w = self.weights_for(data);
        data.rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().map(|&(j, x)| w[j] * x).sum();
                if s > 0.0 {
                    1
                } else if s < 0.0 {
                    -1
                } else {
                    self.tie_label
                }
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# c={} tol={} iterations={} objective={} tie_label={} converged={}\nrule\tweight\n",
            self.c,
            self.tol,
            self.iterations,
            self.final_objective(),
            self.tie_label,
            self.converged
        );
        for (f, w) in self.features.iter().zip(&self.weights) {
            if *w != 0.0 {
                let _ = writeln!(out, "{f}\t{w}");
            }
        }
        out
    }

    /// Reads a model written by [`L1Model::to_tsv`]. Only nonzero weights
    /// survive the round trip, and the trace holds just the final objective.
    pub fn from_tsv(text: &str) -> Result<L1Model, DiscrimError> {
        let err = |line: usize, message: String| DiscrimError::Format { line, message };
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| err(1, "missing `# c=...` header".into()))?;
        let kv: HashMap<&str, &str> = header.split_whitespace().filter_map(|p| p.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| err(1, format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<f64, DiscrimError> {
            get(k)?.parse().map_err(|_| err(1, format!("bad value for `{k}`")))
        };
        let c = num("c")?;
        let tol = num("tol")?;
        let objective = num("objective")?;
        let iterations = get("iterations")?
            .parse()
            .map_err(|_| err(1, "bad value for `iterations`".into()))?;
        let tie_label = match get("tie_label")? {
            "1" => 1,
            "-1" => -1,
            other => return Err(err(1, format!("tie_label must be 1 or -1, got `{other}`"))),
        };
        let converged = get("converged").map(|v| v == "true").unwrap_or(true);
        if lines.next() != Some("rule\tweight") {
            return Err(err(2, "expected column header `rule<TAB>weight`".into()));
        }
        let mut features = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 3;
            let (rule, w) = line
                .split_once('\t')
                .ok_or_else(|| err(line_no, "expected `rule<TAB>weight`".into()))?;
            let w: f64 = w.parse().map_err(|_| err(line_no, format!("bad weight `{w}`")))?;
            if !w.is_finite() {
                return Err(err(line_no, "weight is not finite".into()));
            }
            features.push(rule.to_string());
            weights.push(w);
        }
        Ok(L1Model {
            features,
            weights,
            c,
            tol,
            iterations,
            converged,
            trace: vec![objective],
            tie_label,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    /// Share of the validation rows carrying the training-majority label.
    pub baseline: f64,
}

pub fn evaluate(model: &L1Model, val: &RuleDataset) -> Result<Evaluation, DiscrimError> {
    if val.is_empty() {
        return Err(DiscrimError::NoRows);
    }
    let n = val.len();
    let correct = model
        .predict(val)
        .iter()
        .zip(&val.labels)
        .filter(|(p, y)| p == y)
        .count();
    let majority = val.labels.iter().filter(|&&y| y == model.tie_label).count();
    Ok(Evaluation {
        n,
        accuracy: correct as f64 / n as f64,
        baseline: majority as f64 / n as f64,
    })
}

pub type RankedWeights = Vec<(String, f64)>;

/// Top-`k` positive weights (descending) and top-`k` negative weights
/// (ascending). Equal weights are ordered by rule label.
pub fn discriminative_rules(model: &L1Model, k: usize) -> (RankedWeights, RankedWeights) {
    let pairs = model.features.iter().cloned().zip(model.weights.iter().copied());
    let mut pos: Vec<(String, f64)> = pairs.clone().filter(|p| p.1 > 0.0).collect();
    let mut neg: Vec<(String, f64)> = pairs.filter(|p| p.1 < 0.0).collect();
    pos.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    neg.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    pos.truncate(k);
    neg.truncate(k);
    (pos, neg)
}

/// `rule<TAB>description` lines; a `rule<TAB>description` header is optional.
pub fn parse_descriptions(text: &str) -> Result<HashMap<String, String>, DiscrimError> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || (i == 0 && line == "rule\tdescription") {
            continue;
        }
        let (rule, desc) = line.split_once('\t').ok_or_else(|| DiscrimError::Format {
            line: i + 1,
            message: "expected `rule<TAB>description`".into(),
        })?;
        map.insert(rule.to_string(), desc.to_string());
    }
    Ok(map)
}

/// Table of the most discriminative rules for each class.
pub fn discriminative_tsv(model: &L1Model, k: usize, descriptions: Option<&HashMap<String, String>>) -> String {
    let (pos, neg) = discriminative_rules(model, k);
    let mut out = String::from("class\trank\trule\tweight\tdescription\n");
    for (class, list) in [("ref", pos), ("nmt", neg)] {
        for (i, (rule, w)) in list.iter().enumerate() {
            let desc = descriptions.and_then(|d| d.get(rule)).map_or("", String::as_str);
            let _ = writeln!(out, "{class}\t{}\t{rule}\t{w:.6}\t{desc}", i + 1);
        }
    }
    out
}
