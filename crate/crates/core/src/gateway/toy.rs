//! Built-in backend: a weighted CKY chart parser over a small grammar with
//! ERG-style rule labels. Stands in for a precision grammar in tests and demos.

use std::collections::HashMap;
use std::time::Instant;

use thiserror::Error;

use super::protocol::{Reply, ReplyStatus};
use crate::derivation::{Completeness, Formality, Node, RootCondition, RootMap};

pub const BUNDLED_GRAMMAR: &str = include_str!("../../data/toy.grammar");

#[derive(Debug, Error, PartialEq)]
#[error("grammar line {line}: {message}")]
pub struct GrammarError {
    pub line: usize,
    pub message: String,
}

pub type SymbolId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRule {
    pub label: String,
    pub lhs: SymbolId,
    pub left: SymbolId,
    pub right: SymbolId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnaryRule {
    pub label: String,
    pub lhs: SymbolId,
    pub child: SymbolId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexEntry {
    pub category: SymbolId,
    pub le: String,
}

#[derive(Debug, Clone)]
pub struct ToyGrammar {
    symbols: Vec<String>,
    starts: Vec<(SymbolId, Completeness)>,
    binary: Vec<BinaryRule>,
    /// Ordered so that every rule producing a symbol precedes rules consuming it.
    unary: Vec<UnaryRule>,
    lexicon: HashMap<String, Vec<LexEntry>>,
}

impl ToyGrammar {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_GRAMMAR).expect("bundled grammar is valid")
    }

    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut symbols: Vec<String> = Vec::new();
        let mut index: HashMap<String, SymbolId> = HashMap::new();
        let mut intern = |s: &str| -> SymbolId {
            if let Some(&id) = index.get(s) {
                return id;
            }
            symbols.push(s.to_string());
            index.insert(s.to_string(), symbols.len() - 1);
            symbols.len() - 1
        };
        let mut starts = Vec::new();
        let mut binary = Vec::new();
        let mut unary = Vec::new();
        let mut lexicon: HashMap<String, Vec<LexEntry>> = HashMap::new();
        let mut lex_categories = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |message: String| GrammarError { line: line_no, message };
            let line = raw.split('#').next().unwrap_or("");
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["start", sym, kind] => {
                    let completeness = match *kind {
                        "full" => Completeness::Full,
                        "fragment" => Completeness::Fragment,
                        other => return Err(err(format!("unknown completeness `{other}`"))),
                    };
                    starts.push((intern(sym), completeness));
                }
                ["rule", label, lhs, "->", rest @ ..] => {
                    let (rhs, weight) = match rest {
                        [a] => (vec![*a], 0.0),
                        [a, b] => match b.parse::<f64>() {
                            Ok(w) => (vec![*a], w),
                            Err(_) => (vec![*a, *b], 0.0),
                        },
                        [a, b, w] => {
                            let w = w.parse::<f64>().map_err(|_| err(format!("bad weight `{w}`")))?;
                            (vec![*a, *b], w)
                        }
                        _ => return Err(err("rules take one or two right-hand symbols".into())),
                    };
                    if !weight.is_finite() {
                        return Err(err("weight must be finite".into()));
                    }
                    let lhs = intern(lhs);
                    match rhs.as_slice() {
                        [c] => unary.push(UnaryRule {
                            label: label.to_string(),
                            lhs,
                            child: intern(c),
                            weight,
                        }),
                        [l, r] => binary.push(BinaryRule {
                            label: label.to_string(),
                            lhs,
                            left: intern(l),
                            right: intern(r),
                            weight,
                        }),
                        _ => unreachable!(),
                    }
                }
                ["lex", word, cat, le] => {
                    let category = intern(cat);
                    lex_categories.push(category);
                    lexicon.entry(word.to_lowercase()).or_default().push(LexEntry {
                        category,
                        le: le.to_string(),
                    });
                }
                _ => return Err(err(format!("cannot parse `{}`", line.trim()))),
            }
        }

        let err0 = |message: String| GrammarError { line: 0, message };
        if starts.is_empty() {
            return Err(err0("no start symbols".into()));
        }
        let mut producible = vec![false; symbols.len()];
        for &c in &lex_categories {
            producible[c] = true;
        }
        for r in &binary {
            producible[r.lhs] = true;
        }
        for r in &unary {
            producible[r.lhs] = true;
        }
        let used = binary
            .iter()
            .flat_map(|r| [r.left, r.right])
            .chain(unary.iter().map(|r| r.child))
            .chain(starts.iter().map(|s| s.0));
        for s in used {
            if !producible[s] {
                return Err(err0(format!("symbol `{}` is never produced", symbols[s])));
            }
        }
        let unary =
            order_unary(unary, symbols.len()).map_err(|sym| err0(format!("unary cycle through `{}`", symbols[sym])))?;

        Ok(Self {
            symbols,
            starts,
            binary,
            unary,
            lexicon,
        })
    }

    pub fn symbol(&self, id: SymbolId) -> &str {
        &self.symbols[id]
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn starts(&self) -> &[(SymbolId, Completeness)] {
        &self.starts
    }

    pub fn binary_rules(&self) -> &[BinaryRule] {
        &self.binary
    }

    pub fn unary_rules(&self) -> &[UnaryRule] {
        &self.unary
    }

    /// Lexical entries for a token (case-insensitive).
    pub fn lookup(&self, token: &str) -> &[LexEntry] {
        self.lexicon
            .get(&token.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Words in the lexicon for a category, sorted.
    pub fn words_for(&self, category: &str) -> Vec<&str> {
        let mut words: Vec<&str> = self
            .lexicon
            .iter()
            .filter(|(_, es)| es.iter().any(|e| self.symbols[e.category] == category))
            .map(|(w, _)| w.as_str())
            .collect();
        words.sort_unstable();
        words
    }

    /// Parses a token sequence, checking `deadline` between chart cells.
    pub fn parse_tokens<S: AsRef<str>>(&self, tokens: &[S], deadline: Option<Instant>) -> ToyOutcome {
        let expired = || deadline.is_some_and(|d| Instant::now() >= d);
        if expired() {
            return ToyOutcome::Timeout;
        }
        let n = tokens.len();
        if n == 0 {
            return ToyOutcome::Empty;
        }
        let nsym = self.symbols.len();
        let mut chart = Chart::new(n, nsym);

        for (i, tok) in tokens.iter().enumerate() {
            let entries = self.lookup(tok.as_ref());
            if entries.is_empty() {
                return ToyOutcome::LexicalGap(tok.as_ref().to_string());
            }
            let cell = chart.cell_mut(i, i + 1);
            for (k, e) in entries.iter().enumerate() {
                cell[e.category].offer(0.0, 1, Back::Lex(k));
            }
            self.close_unary(chart.cell_mut(i, i + 1));
        }

        for len in 2..=n {
            if expired() {
                return ToyOutcome::Timeout;
            }
            for i in 0..=n - len {
                let j = i + len;
                let mut cell = vec![Entry::EMPTY; nsym];
                for k in i + 1..j {
                    let left = chart.cell(i, k);
                    let right = chart.cell(k, j);
                    for (r, rule) in self.binary.iter().enumerate() {
                        let (l, rr) = (&left[rule.left], &right[rule.right]);
                        if l.count == 0 || rr.count == 0 {
                            continue;
                        }
                        cell[rule.lhs].offer(
                            l.score + rr.score + rule.weight,
                            l.count.saturating_mul(rr.count),
                            Back::Binary(r, k),
                        );
                    }
                }
                self.close_unary(&mut cell);
                *chart.cell_mut(i, j) = cell;
            }
        }

        let top = chart.cell(0, n);
        let mut readings: u128 = 0;
        let mut best: Option<(f64, SymbolId, Completeness)> = None;
        for &(sym, completeness) in &self.starts {
            let e = &top[sym];
            if e.count == 0 {
                continue;
            }
            readings = readings.saturating_add(e.count);
            if best.is_none_or(|(s, _, _)| e.score > s) {
                best = Some((e.score, sym, completeness));
            }
        }
        let Some((score, sym, completeness)) = best else {
            return ToyOutcome::NoParse;
        };
        let formality = formality_of(tokens);
        ToyOutcome::Parsed(ToyParse {
            tree: self.build(&chart, tokens, 0, n, sym),
            score,
            condition: RootCondition::new(formality, completeness),
            readings,
        })
    }

    fn close_unary(&self, cell: &mut [Entry]) {
        for (r, rule) in self.unary.iter().enumerate() {
            let child = cell[rule.child];
            if child.count > 0 {
                cell[rule.lhs].offer(child.score + rule.weight, child.count, Back::Unary(r));
            }
        }
    }

    fn build<S: AsRef<str>>(&self, chart: &Chart, tokens: &[S], i: usize, j: usize, sym: SymbolId) -> Node {
        let entry = &chart.cell(i, j)[sym];
        match entry.back {
            Back::Lex(k) => {
                let token = tokens[i].as_ref();
                Node::leaf(token, self.lookup(token)[k].le.clone())
            }
            Back::Unary(r) => {
                let rule = &self.unary[r];
                Node::rule(rule.label.clone(), vec![self.build(chart, tokens, i, j, rule.child)])
            }
            Back::Binary(r, k) => {
                let rule = &self.binary[r];
                Node::rule(
                    rule.label.clone(),
                    vec![
                        self.build(chart, tokens, i, k, rule.left),
                        self.build(chart, tokens, k, j, rule.right),
                    ],
                )
            }
            Back::None => unreachable!("backpointer into empty chart entry"),
        }
    }

    /// Serves one wire request.
    pub fn reply(&self, id: u64, text: &str, timeout_ms: u64, roots: &RootMap) -> Reply {
        let start = Instant::now();
        let deadline = start.checked_add(std::time::Duration::from_millis(timeout_ms));
        let tokens: Vec<&str> = text.split_whitespace().collect();
        match self.parse_tokens(&tokens, deadline) {
            ToyOutcome::Parsed(p) => match roots.label(p.condition) {
                Some(root) => Reply {
                    id,
                    status: ReplyStatus::Ok,
                    lexentries: Some(p.tree.leaves().iter().map(|(_, le)| le.to_string()).collect()),
                    derivation: Some(p.tree.to_value()),
                    root: Some(root.to_string()),
                    readings: Some(p.readings.min(u64::MAX as u128) as u64),
                },
                None => Reply::status(id, ReplyStatus::Error),
            },
            ToyOutcome::NoParse => Reply::status(id, ReplyStatus::NoParse),
            ToyOutcome::Timeout => Reply::status(id, ReplyStatus::Resource),
            ToyOutcome::LexicalGap(_) | ToyOutcome::Empty => Reply::status(id, ReplyStatus::Error),
        }
    }
}

/// `strict` iff the sentence starts with a capitalized token and ends with
/// terminal punctuation.
pub fn formality_of<S: AsRef<str>>(tokens: &[S]) -> Formality {
    let capitalized = tokens
        .first()
        .and_then(|t| t.as_ref().chars().next())
        .is_some_and(char::is_uppercase);
    let terminal = tokens.last().is_some_and(|t| matches!(t.as_ref(), "." | "!" | "?"));
    if capitalized && terminal {
        Formality::Strict
    } else {
        Formality::Informal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParse {
    pub tree: Node,
    pub score: f64,
    pub condition: RootCondition,
    /// Total derivations over all start symbols.
    pub readings: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToyOutcome {
    Parsed(ToyParse),
    NoParse,
    /// A token with no lexical entry.
    LexicalGap(String),
    Empty,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Back {
    None,
    Lex(usize),
    Unary(usize),
    Binary(usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    score: f64,
    count: u128,
    back: Back,
}

impl Entry {
    const EMPTY: Entry = Entry {
        score: f64::NEG_INFINITY,
        count: 0,
        back: Back::None,
    };

    /// Adds `count` derivations; keeps the first best-scoring backpointer.
    fn offer(&mut self, score: f64, count: u128, back: Back) {
        if self.count == 0 || score > self.score {
            self.score = score;
            self.back = back;
        }
        self.count = self.count.saturating_add(count);
    }
}

struct Chart {
    n: usize,
    cells: Vec<Vec<Entry>>,
}

impl Chart {
    fn new(n: usize, nsym: usize) -> Self {
        Self {
            n,
            cells: vec![vec![Entry::EMPTY; nsym]; (n + 1) * (n + 1)],
        }
    }

    fn cell(&self, i: usize, j: usize) -> &[Entry] {
        &self.cells[i * (self.n + 1) + j]
    }

    fn cell_mut(&mut self, i: usize, j: usize) -> &mut Vec<Entry> {
        &mut self.cells[i * (self.n + 1) + j]
    }
}

/// Topologically orders unary rules; returns a symbol on a cycle on failure.
fn order_unary(rules: Vec<UnaryRule>, nsym: usize) -> Result<Vec<UnaryRule>, SymbolId> {
    // Visit symbols depth-first along lhs -> child edges; a symbol is placed
    // after all symbols it can be rewritten to.
    let mut children: Vec<Vec<SymbolId>> = vec![Vec::new(); nsym];
    for r in &rules {
        children[r.lhs].push(r.child);
    }
    let mut state = vec![0u8; nsym];
    let mut order = Vec::with_capacity(nsym);
    fn visit(
        s: SymbolId,
        children: &[Vec<SymbolId>],
        state: &mut [u8],
        order: &mut Vec<SymbolId>,
    ) -> Result<(), SymbolId> {
        match state[s] {
            1 => return Err(s),
            2 => return Ok(()),
            _ => {}
        }
        state[s] = 1;
        for &c in &children[s] {
            visit(c, children, state, order)?;
        }
        state[s] = 2;
        order.push(s);
        Ok(())
    }
    for s in 0..nsym {
        visit(s, &children, &mut state, &mut order)?;
    }
    let mut position = vec![0; nsym];
    for (i, s) in order.iter().enumerate() {
        position[*s] = i;
    }
    let mut rules: Vec<(usize, UnaryRule)> = rules.into_iter().enumerate().collect();
    rules.sort_by_key(|(i, r)| (position[r.lhs], *i));
    Ok(rules.into_iter().map(|(_, r)| r).collect())
}
