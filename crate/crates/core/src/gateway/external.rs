//! Worker pool over external backend processes.
//!
//! Each worker owns one child process and keeps up to `pipeline` requests in
//! flight, matching replies by id. When a child crashes, times out or emits
//! an unattributable reply, it is killed. A timeout is charged to the oldest
//! unanswered request. For crashes and garbled replies a lone request in
//! flight takes the blame; otherwise every unanswered request is retried
//! alone on a fresh child so the culprit can be identified.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError};

use super::protocol::{interpret, Reply, Request};
use super::{BackendConfig, GatewayError, ParseOutcome, ParseResult};

struct Proc {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Proc {
    fn spawn(command: &[String]) -> Result<Self, GatewayError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| GatewayError::Startup("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| GatewayError::Startup(format!("cannot launch `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = crossbeam_channel::unbounded();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) if l.trim().is_empty() => continue,
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn send(&mut self, request: &Request) -> std::io::Result<()> {
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Pending {
    index: usize,
    sent: Instant,
}

enum Failure {
    Crash,
    Timeout,
    Garbled,
}

struct Worker<'a> {
    config: &'a BackendConfig,
    command: &'a [String],
    sentences: &'a [Vec<String>],
    proc: Option<Proc>,
    results: Vec<(usize, ParseResult)>,
}

impl<'a> Worker<'a> {
    fn result(&self, index: usize, outcome: ParseOutcome, wall: Duration) -> (usize, ParseResult) {
        (
            index,
            ParseResult {
                id: index,
                outcome,
                derivation: None,
                lexentries: None,
                wall_ms: wall.as_millis() as u64,
            },
        )
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.config.timeout_ms)
    }

    fn run(&mut self, next: &mut dyn FnMut() -> Option<usize>, window: usize) -> Result<(), GatewayError> {
        let mut pending: Vec<Pending> = Vec::new();
        let mut drained = false;
        loop {
            while !drained && pending.len() < window {
                let Some(index) = next() else {
                    drained = true;
                    break;
                };
                if self.config.timeout_ms == 0 {
                    let r = self.result(index, ParseOutcome::ResourceLimit, Duration::ZERO);
                    self.results.push(r);
                    continue;
                }
                if self.proc.is_none() {
                    self.proc = Some(Proc::spawn(self.command)?);
                }
                let request = Request {
                    id: index as u64,
                    text: self.sentences[index].join(" "),
                    timeout_ms: self.config.timeout_ms,
                };
                pending.push(Pending {
                    index,
                    sent: Instant::now(),
                });
                if self.proc.as_mut().unwrap().send(&request).is_err() {
                    self.recover(&mut pending, Failure::Crash)?;
                }
            }
            if pending.is_empty() {
                if drained {
                    return Ok(());
                }
                continue;
            }

            let deadline = pending.iter().map(|p| p.sent + self.timeout()).min().unwrap();
            let received = self.proc.as_ref().unwrap().lines.recv_deadline(deadline);
            match received {
                Ok(line) => match serde_json::from_str::<Reply>(&line) {
                    Ok(reply) => match pending.iter().position(|p| p.index as u64 == reply.id) {
                        Some(pos) => {
                            let p = pending.remove(pos);
                            let wall = p.sent.elapsed();
                            let tokens = &self.sentences[p.index];
                            let (outcome, derivation, lexentries) = if wall > self.timeout() {
                                (ParseOutcome::ResourceLimit, None, None)
                            } else {
                                interpret(reply, tokens, &self.config.roots)
                            };
                            self.results.push((
                                p.index,
                                ParseResult {
                                    id: p.index,
                                    outcome,
                                    derivation,
                                    lexentries,
                                    wall_ms: wall.as_millis() as u64,
                                },
                            ));
                        }
                        None => self.recover(&mut pending, Failure::Garbled)?,
                    },
                    Err(_) if pending.len() == 1 => {
                        let p = pending.pop().unwrap();
                        let r = self.result(p.index, ParseOutcome::ParserError, p.sent.elapsed());
                        self.results.push(r);
                    }
                    Err(_) => self.recover(&mut pending, Failure::Garbled)?,
                },
                Err(RecvTimeoutError::Timeout) => self.recover(&mut pending, Failure::Timeout)?,
                Err(RecvTimeoutError::Disconnected) => self.recover(&mut pending, Failure::Crash)?,
            }
        }
    }

    fn recover(&mut self, pending: &mut Vec<Pending>, failure: Failure) -> Result<(), GatewayError> {
        self.proc = None;
        let mut rest: Vec<usize> = Vec::new();
        match failure {
            Failure::Timeout => {
                // Backends answer in arrival order, so only the oldest request
                // was being worked on; the ones queued behind it are retried.
                let oldest = (0..pending.len())
                    .min_by_key(|&i| pending[i].sent)
                    .expect("a request is pending");
                let p = pending.remove(oldest);
                let r = self.result(p.index, ParseOutcome::ResourceLimit, p.sent.elapsed());
                self.results.push(r);
                rest.extend(pending.drain(..).map(|p| p.index));
            }
            Failure::Crash | Failure::Garbled if pending.len() == 1 => {
                let p = pending.pop().unwrap();
                let r = self.result(p.index, ParseOutcome::ParserError, p.sent.elapsed());
                self.results.push(r);
            }
            Failure::Crash | Failure::Garbled => rest.extend(pending.drain(..).map(|p| p.index)),
        }
        if !rest.is_empty() {
            let mut it = rest.into_iter();
            self.run(&mut || it.next(), 1)?;
        }
        Ok(())
    }
}

/// Parses every sentence through the external backend `command`.
pub(super) fn parse_all(
    command: &[String],
    sentences: &[Vec<String>],
    config: &BackendConfig,
) -> Result<Vec<ParseResult>, GatewayError> {
    let workers = config.workers.max(1).min(sentences.len().max(1));
    // Launch every child up front so an unlaunchable backend fails before any parsing.
    let mut procs = Vec::with_capacity(workers);
    for _ in 0..workers {
        procs.push(Proc::spawn(command)?);
    }
    let (tx, rx) = crossbeam_channel::unbounded();
    for i in 0..sentences.len() {
        tx.send(i).unwrap();
    }
    drop(tx);

    let window = config.pipeline.max(1);
    let outputs: Vec<Result<Vec<(usize, ParseResult)>, GatewayError>> = thread::scope(|scope| {
        let handles: Vec<_> = procs
            .into_iter()
            .map(|proc| {
                let rx = rx.clone();
                scope.spawn(move || {
                    let mut worker = Worker {
                        config,
                        command,
                        sentences,
                        proc: Some(proc),
                        results: Vec::new(),
                    };
                    worker.run(&mut || rx.try_recv().ok(), window)?;
                    Ok(worker.results)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut slots: Vec<Option<ParseResult>> = vec![None; sentences.len()];
    for out in outputs {
        for (i, r) in out? {
            slots[i] = Some(r);
        }
    }
    Ok(slots
        .into_iter()
        .map(|r| r.expect("every sentence gets a result"))
        .collect())
}
