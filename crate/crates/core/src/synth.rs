//! Seeded synthetic parallel corpora drawn from a toy grammar, for demos,
//! benchmarks and end-to-end tests.
//!
//! References are random derivations of the grammar. Outputs copy the
//! reference, then some are perturbed (deleted, swapped or substituted
//! tokens, unknown words, dropped punctuation) so that a share of them no
//! longer parses. Scores are negative log probabilities that penalize length
//! and perturbation. Sources are a character-reversed rendering of the
//! reference.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::derivation::Completeness;
use crate::gateway::ToyGrammar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Share of references drawn from a fragment start symbol.
    pub fragment_rate: f64,
    /// Share of outputs that receive a structural perturbation.
    pub noise_rate: f64,
    /// Maximum derivation height.
    pub max_height: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            fragment_rate: 0.1,
            noise_rate: 0.3,
            max_height: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthCorpus {
    pub source: Vec<Vec<String>>,
    pub reference: Vec<Vec<String>>,
    pub output: Vec<Vec<String>>,
    pub scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy)]
enum Production {
    Lex,
    Binary(usize),
    Unary(usize),
}

struct Generator<'g> {
    grammar: &'g ToyGrammar,
    words: Vec<Vec<&'g str>>,
    productions: Vec<Vec<(Production, usize)>>,
}

impl<'g> Generator<'g> {
    fn new(grammar: &'g ToyGrammar) -> Self {
        let nsym = grammar.symbol_count();
        let words: Vec<Vec<&str>> = (0..nsym)
            .map(|s| {
                grammar
                    .words_for(grammar.symbol(s))
                    .into_iter()
                    .filter(|w| !w.starts_with("generic_"))
                    .collect()
            })
            .collect();
        // Sentence-final punctuation is added separately.
        let binaries: Vec<usize> = (0..grammar.binary_rules().len())
            .filter(|&i| grammar.symbol(grammar.binary_rules()[i].right) != "PCT")
            .collect();

        let mut height = vec![usize::MAX; nsym];
        for (s, w) in words.iter().enumerate() {
            if !w.is_empty() {
                height[s] = 1;
            }
        }
        loop {
            let mut changed = false;
            for &i in &binaries {
                let r = &grammar.binary_rules()[i];
                let h = height[r.left].max(height[r.right]).saturating_add(1);
                if h < height[r.lhs] {
                    height[r.lhs] = h;
                    changed = true;
                }
            }
            for r in grammar.unary_rules() {
                let h = height[r.child].saturating_add(1);
                if h < height[r.lhs] {
                    height[r.lhs] = h;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut productions = vec![Vec::new(); nsym];
        for (s, w) in words.iter().enumerate() {
            if !w.is_empty() {
                productions[s].push((Production::Lex, 1));
            }
        }
        for &i in &binaries {
            let r = &grammar.binary_rules()[i];
            let h = height[r.left].max(height[r.right]).saturating_add(1);
            productions[r.lhs].push((Production::Binary(i), h));
        }
        for (i, r) in grammar.unary_rules().iter().enumerate() {
            productions[r.lhs].push((Production::Unary(i), height[r.child].saturating_add(1)));
        }
        Self {
            grammar,
            words,
            productions,
        }
    }

    fn expand(&self, sym: usize, budget: usize, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        let options: Vec<Production> = self.productions[sym]
            .iter()
            .filter(|(_, h)| *h <= budget)
            .map(|(p, _)| *p)
            .collect();
        let Some(&p) = options.choose(rng) else {
            return;
        };
        match p {
            Production::Lex => out.push(self.words[sym].choose(rng).unwrap().to_string()),
            Production::Binary(i) => {
                let r = &self.grammar.binary_rules()[i];
                self.expand(r.left, budget - 1, rng, out);
                self.expand(r.right, budget - 1, rng, out);
            }
            Production::Unary(i) => {
                self.expand(self.grammar.unary_rules()[i].child, budget - 1, rng, out);
            }
        }
    }

    fn sentence(&self, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
        let want = if rng.random_bool(cfg.fragment_rate) {
            Completeness::Fragment
        } else {
            Completeness::Full
        };
        let starts: Vec<usize> = self
            .grammar
            .starts()
            .iter()
            .filter(|(_, c)| *c == want)
            .map(|(s, _)| *s)
            .collect();
        let mut tokens = Vec::new();
        if let Some(&start) = starts.choose(rng) {
            self.expand(start, cfg.max_height, rng, &mut tokens);
        }
        match rng.random_range(0..10) {
            0..7 => {
                capitalize(&mut tokens);
                tokens.push(".".into());
            }
            7..9 => tokens.push(".".into()),
            _ => {}
        }
        tokens
    }

    fn any_word(&self, rng: &mut ChaCha8Rng) -> String {
        loop {
            if let Some(w) = self.words.choose(rng).and_then(|ws| ws.choose(rng)) {
                return w.to_string();
            }
        }
    }

    fn same_category(&self, token: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        let cat = self.grammar.lookup(token).first()?.category;
        self.words[cat].choose(rng).map(|w| w.to_string())
    }
}

fn capitalize(tokens: &mut [String]) {
    if let Some(first) = tokens.first_mut() {
        let mut cs = first.chars();
        if let Some(c) = cs.next() {
            *first = c.to_uppercase().chain(cs).collect();
        }
    }
}

fn is_punct(t: &str) -> bool {
    t.chars().all(|c| c.is_ascii_punctuation())
}

fn perturb(g: &Generator<'_>, reference: &[String], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, u32) {
    let mut out = reference.to_vec();
    let mut edits = 0;
    if !out.is_empty() && rng.random_bool(0.3) {
        let i = rng.random_range(0..out.len());
        if let Some(w) = g.same_category(&out[i].to_lowercase(), rng) {
            out[i] = w;
        }
    }
    if out.len() >= 2 && rng.random_bool(cfg.noise_rate) {
        edits += 1;
        match rng.random_range(0..10) {
            0..3 => {
                let i = rng.random_range(0..out.len());
                out.remove(i);
            }
            3..5 => {
                let i = rng.random_range(0..out.len() - 1);
                out.swap(i, i + 1);
            }
            5..7 => {
                let i = rng.random_range(0..out.len());
                out[i] = g.any_word(rng);
            }
            7 => {
                let i = rng.random_range(0..=out.len());
                out.insert(i, "zq".into());
            }
            _ => {
                if out.last().is_some_and(|t| is_punct(t)) {
                    out.pop();
                }
                if let Some(first) = out.first_mut() {
                    *first = first.to_lowercase();
                }
            }
        }
    }
    (out, edits)
}

fn source_of(reference: &[String]) -> Vec<String> {
    reference
        .iter()
        .map(|t| {
            if is_punct(t) {
                t.clone()
            } else {
                t.to_lowercase().chars().rev().collect()
            }
        })
        .collect()
}

pub fn generate(grammar: &ToyGrammar, cfg: &SynthConfig) -> SynthCorpus {
    let g = Generator::new(grammar);
    let mut rng = crate::seeded_rng(cfg.seed);
    let mut corpus = SynthCorpus::default();
    for _ in 0..cfg.n {
        let reference = g.sentence(cfg, &mut rng);
        let (output, edits) = perturb(&g, &reference, cfg, &mut rng);
        let lp: f64 = -(output.iter().map(|_| 0.4 + 1.6 * rng.random::<f64>()).sum::<f64>() + 3.0 * edits as f64);
        corpus.source.push(source_of(&reference));
        corpus.reference.push(reference);
        corpus.output.push(output);
        corpus.scores.push(Some(lp));
    }
    corpus
}
