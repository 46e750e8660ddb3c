//! Parser gateway: four-way parse outcomes, timeouts, and backends.
//!
//! Two backends are available. [`Backend::Toy`] runs the bundled chart
//! parser in-process. [`Backend::External`] drives child processes over the
//! line-delimited JSON protocol in [`protocol`].

mod external;
pub mod protocol;
pub mod toy;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::derivation::{Derivation, Node, RootMap, TreeError};
use crate::exec::Exec;
pub use toy::ToyGrammar;

pub const DEFAULT_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend startup failed: {0}")]
    Startup(String),
    #[error("{path}: line {line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseOutcome {
    Parseable,
    ResourceLimit,
    ParserError,
    Exhausted,
}

impl ParseOutcome {
    pub const ALL: [ParseOutcome; 4] = [
        ParseOutcome::Parseable,
        ParseOutcome::ResourceLimit,
        ParseOutcome::ParserError,
        ParseOutcome::Exhausted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParseOutcome::Parseable => "parseable",
            ParseOutcome::ResourceLimit => "resource_limit",
            ParseOutcome::ParserError => "parser_error",
            ParseOutcome::Exhausted => "exhausted",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ParseOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParseOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParseOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Result of parsing one sentence. `derivation` is present iff the outcome
/// is [`ParseOutcome::Parseable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParseResult {
    pub id: usize,
    pub outcome: ParseOutcome,
    pub derivation: Option<Derivation>,
    pub lexentries: Option<Vec<String>>,
    pub wall_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: usize,
    outcome: ParseOutcome,
    root: Option<String>,
    tree: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lexentries: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall_ms: Option<u64>,
}

impl ParseResult {
    pub fn is_parseable(&self) -> bool {
        self.outcome == ParseOutcome::Parseable
    }

    /// One JSON-lines record. Timings are omitted unless asked for, so that
    /// repeated runs produce identical files.
    pub fn to_record(&self, with_timing: bool) -> String {
        let mut out = String::new();
        out.push_str(&format!("{{\"id\":{},\"outcome\":\"{}\"", self.id, self.outcome));
        match &self.derivation {
            Some(d) => {
                out.push_str(",\"root\":");
                out.push_str(&serde_json::to_string(&d.root).unwrap());
                out.push_str(",\"tree\":");
                out.push_str(&d.tree.to_canonical());
            }
            None => out.push_str(",\"root\":null,\"tree\":null"),
        }
        if let Some(le) = &self.lexentries {
            out.push_str(",\"lexentries\":");
            out.push_str(&serde_json::to_string(le).unwrap());
        }
        if with_timing {
            out.push_str(&format!(",\"wall_ms\":{}", self.wall_ms));
        }
        out.push('}');
        out
    }

    pub fn from_record(line: &str, roots: &RootMap) -> Result<Self, String> {
        let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let derivation = match (rec.outcome, rec.tree, rec.root) {
            (ParseOutcome::Parseable, Some(tree), Some(root)) => {
                let tree = Node::from_value(&tree).map_err(|e| e.to_string())?;
                Some(Derivation::new(root, tree, roots).map_err(|e: TreeError| e.to_string())?)
            }
            (ParseOutcome::Parseable, _, _) => return Err("parseable record needs both `root` and `tree`".into()),
            (_, None, _) => None,
            (_, Some(_), _) => return Err("only parseable records may carry a tree".into()),
        };
        if let (Some(le), Some(d)) = (&rec.lexentries, &derivation) {
            if le.len() != d.tokens().len() {
                return Err("lexentries length differs from token count".into());
            }
        }
        if rec.lexentries.is_some() && derivation.is_none() {
            return Err("lexentries without a derivation".into());
        }
        Ok(Self {
            id: rec.id,
            outcome: rec.outcome,
            derivation,
            lexentries: rec.lexentries,
            wall_ms: rec.wall_ms.unwrap_or(0),
        })
    }
}

pub fn write_results(path: &Path, results: &[ParseResult], with_timing: bool) -> Result<(), GatewayError> {
    let io = |source| GatewayError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in results {
        writeln!(f, "{}", r.to_record(with_timing)).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_results(path: &Path, roots: &RootMap) -> Result<Vec<ParseResult>, GatewayError> {
    let name = path.display().to_string();
    let io = |source| GatewayError::Io {
        path: name.clone(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let r = ParseResult::from_record(&line, roots).map_err(|message| GatewayError::Record {
            path: name.clone(),
            line: i + 1,
            message,
        })?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub enum Backend {
    Toy(Arc<ToyGrammar>),
    /// Program and arguments of a backend speaking the wire protocol.
    External(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub backend: Backend,
    /// Per-sentence wall-clock limit; 0 expires immediately.
    pub timeout_ms: u64,
    pub workers: usize,
    /// Requests kept in flight per external worker.
    pub pipeline: usize,
    pub roots: RootMap,
}

impl BackendConfig {
    pub fn toy() -> Self {
        Self::new(Backend::Toy(Arc::new(ToyGrammar::bundled())))
    }

    pub fn external(command: Vec<String>) -> Self {
        Self::new(Backend::External(command))
    }

    pub fn new(backend: Backend) -> Self {
        Self {
            backend,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            workers: 1,
            pipeline: 1,
            roots: RootMap::default(),
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_pipeline(mut self, pipeline: usize) -> Self {
        self.pipeline = pipeline.max(1);
        self
    }
}

fn toy_parse(grammar: &ToyGrammar, id: usize, tokens: &[String], config: &BackendConfig) -> ParseResult {
    let start = Instant::now();
    let reply = grammar.reply(id as u64, &tokens.join(" "), config.timeout_ms, &config.roots);
    let (outcome, derivation, lexentries) = protocol::interpret(reply, tokens, &config.roots);
    let wall = start.elapsed();
    let outcome = if wall > Duration::from_millis(config.timeout_ms) {
        ParseOutcome::ResourceLimit
    } else {
        outcome
    };
    let parseable = outcome == ParseOutcome::Parseable;
    ParseResult {
        id,
        outcome,
        derivation: derivation.filter(|_| parseable),
        lexentries: lexentries.filter(|_| parseable),
        wall_ms: wall.as_millis() as u64,
    }
}

/// Parses one sentence. Backend failures, including an external backend that
/// cannot be launched, are reported as [`ParseOutcome::ParserError`].
pub fn parse_sentence(tokens: &[String], config: &BackendConfig) -> ParseResult {
    match &config.backend {
        Backend::Toy(g) => toy_parse(g, 0, tokens, config),
        Backend::External(cmd) => {
            let one = [tokens.to_vec()];
            let single = BackendConfig {
                workers: 1,
                ..config.clone()
            };
            match external::parse_all(cmd, &one, &single) {
                Ok(mut r) => r.remove(0),
                Err(_) => ParseResult {
                    id: 0,
                    outcome: ParseOutcome::ParserError,
                    derivation: None,
                    lexentries: None,
                    wall_ms: 0,
                },
            }
        }
    }
}

/// Counts and fractions of each outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OutcomeSummary {
    counts: [usize; 4],
}

impl OutcomeSummary {
    pub fn from_results(results: &[ParseResult]) -> Self {
        let mut counts = [0; 4];
        for r in results {
            counts[r.outcome.index()] += 1;
        }
        Self { counts }
    }

    pub fn count(&self, outcome: ParseOutcome) -> usize {
        self.counts[outcome.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// 0 for an empty corpus.
    pub fn fraction(&self, outcome: ParseOutcome) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.count(outcome) as f64 / n as f64,
        }
    }

    /// Plain-text percentages, one outcome per line.
    pub fn render(&self) -> String {
        let mut out = format!("sentences\t{}\n", self.total());
        for o in ParseOutcome::ALL {
            out.push_str(&format!("{}\t{}\t{:.1}%\n", o, self.count(o), 100.0 * self.fraction(o)));
        }
        let unparseable = self.total() - self.count(ParseOutcome::Parseable);
        if unparseable > 0 {
            out.push_str("share of unparseable:\n");
            for o in &ParseOutcome::ALL[1..] {
                out.push_str(&format!(
                    "{}\t{:.1}%\n",
                    o,
                    100.0 * self.count(*o) as f64 / unparseable as f64
                ));
            }
        }
        out
    }
}

/// Parses a corpus; result `i` belongs to sentence `i` whatever the worker count.
pub fn parse_corpus(
    sentences: &[Vec<String>],
    config: &BackendConfig,
) -> Result<(Vec<ParseResult>, OutcomeSummary), GatewayError> {
    let results = match &config.backend {
        Backend::Toy(g) => Exec::with_threads(config.workers, |exec| {
            let indexed: Vec<(usize, &Vec<String>)> = sentences.iter().enumerate().collect();
            exec.map(&indexed, |(i, s)| toy_parse(g, *i, s, config))
        }),
        Backend::External(_) if sentences.is_empty() => Vec::new(),
        Backend::External(cmd) => external::parse_all(cmd, sentences, config)?,
    };
    let summary = OutcomeSummary::from_results(&results);
    Ok((results, summary))
}

/// Serves the toy backend over the wire protocol until `input` closes.
pub fn serve_toy(
    grammar: &ToyGrammar,
    roots: &RootMap,
    input: impl BufRead,
    mut output: impl Write,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<protocol::Request>(&line) {
            Ok(req) => grammar.reply(req.id, &req.text, req.timeout_ms, roots),
            Err(_) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0);
                protocol::Reply::status(id, protocol::ReplyStatus::Error)
            }
        };
        writeln!(output, "{}", serde_json::to_string(&reply).unwrap())?;
        output.flush()?;
    }
    Ok(())
}
