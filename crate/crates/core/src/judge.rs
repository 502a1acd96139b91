//! The subset-ranking contract and its implementations.
//!
//! A judge receives a [`JudgeRequest`] naming K candidates and answers with
//! their ids strongest-first. Responses are validated centrally by
//! [`judge_rank`], which also owns the retry loop, so individual judges only
//! produce raw answers.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{is_permutation_of, CandidatePool};
use crate::rng::StreamRng;

/// What a judge gets to see about one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeCandidate {
    pub id: String,
    pub label: String,
    pub dossier: Option<String>,
}

/// One ranking query. Serializes to the wire request
/// `{"type":"rank","iteration",..,"candidates":[..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "rank")]
pub struct JudgeRequest {
    pub iteration: u64,
    #[serde(default)]
    pub attempt: u32,
    pub rubric: Option<String>,
    /// Current fitted order of the requested candidates, strongest first.
    pub prior_ordering: Option<Vec<String>>,
    pub candidates: Vec<JudgeCandidate>,
}

impl JudgeRequest {
    /// Builds a request for `subset` (pool indices). Only ids, labels and
    /// dossiers leave the pool.
    pub fn for_subset(pool: &CandidatePool, iteration: u64, subset: &[usize]) -> Self {
        let candidates = subset
            .iter()
            .map(|&i| {
                let c = &pool.candidates()[i];
                JudgeCandidate {
                    id: c.id.clone(),
                    label: c.label.clone(),
                    dossier: c.dossier.clone(),
                }
            })
            .collect();
        JudgeRequest {
            iteration,
            attempt: 0,
            rubric: pool.rubric().map(str::to_string),
            prior_ordering: None,
            candidates,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }

    pub fn to_wire_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("request serializes");
        line.push('\n');
        line
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    /// Candidate ids, strongest first.
    pub ranking: Vec<String>,
    #[serde(default)]
    pub meta: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    /// The judge answered, but not with a usable permutation.
    #[error("invalid judge response: {0}")]
    InvalidResponse(String),

    #[error("judge timed out after {0} ms")]
    Timeout(u64),

    /// The judge can no longer answer at all (process died, input closed).
    #[error("judge unavailable: {0}")]
    Unavailable(String),

    #[error("judge does not fit this pool: {0}")]
    Incompatible(String),

    #[error("judge failed after {attempts} attempt(s): {}", diagnostics.join("; "))]
    Exhausted {
        attempts: u32,
        diagnostics: Vec<String>,
    },
}

impl JudgeError {
    fn retryable(&self) -> bool {
        matches!(self, JudgeError::InvalidResponse(_) | JudgeError::Timeout(_))
    }
}

pub trait Judge {
    /// Recorded as `judge_tag` on every observation.
    fn tag(&self) -> String;

    /// Extra attempts allowed after an invalid response or a timeout.
    fn retries(&self) -> u32 {
        0
    }

    /// Simulated judges report zero wall time so run logs stay reproducible.
    fn is_simulated(&self) -> bool {
        false
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError>;
}

/// Checks the permutation invariant of a response against its request.
pub fn validate_response(request: &JudgeRequest, response: &JudgeResponse) -> Result<(), JudgeError> {
    let expected = request.ids();
    let got: Vec<&str> = response.ranking.iter().map(String::as_str).collect();
    if is_permutation_of(&got, &expected) {
        return Ok(());
    }
    let mut seen = std::collections::HashSet::new();
    let dup = got.iter().find(|id| !seen.insert(**id));
    let unknown = got.iter().find(|id| !expected.contains(id));
    let missing = expected.iter().find(|id| !got.contains(id));
    let detail = match (dup, unknown, missing) {
        (Some(d), _, _) => format!("duplicate id {d}"),
        (_, Some(u), _) => format!("unknown id {u}"),
        (_, _, Some(m)) => format!("missing id {m}"),
        _ => "ranking does not match the requested ids".to_string(),
    };
    Err(JudgeError::InvalidResponse(detail))
}

/// Queries `judge`, validating each answer and retrying per the judge's
/// retry budget. The `attempt` field of the request counts up from 0.
pub fn judge_rank(judge: &mut dyn Judge, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
    let mut request = request.clone();
    let mut diagnostics = Vec::new();
    let budget = judge.retries();
    for attempt in 0..=budget {
        request.attempt = attempt;
        let outcome = judge
            .rank(&request)
            .and_then(|resp| validate_response(&request, &resp).map(|()| resp));
        match outcome {
            Ok(resp) => return Ok(resp),
            Err(e) if e.retryable() => diagnostics.push(format!("attempt {attempt}: {e}")),
            Err(e) => {
                diagnostics.push(format!("attempt {attempt}: {e}"));
                return Err(JudgeError::Exhausted {
                    attempts: attempt + 1,
                    diagnostics,
                });
            }
        }
    }
    Err(JudgeError::Exhausted {
        attempts: budget + 1,
        diagnostics,
    })
}

fn truth_map(pool: &CandidatePool) -> Result<HashMap<String, f64>, JudgeError> {
    let utilities = pool.true_utilities().ok_or_else(|| {
        JudgeError::Incompatible("simulated judges need true_utility on every candidate".into())
    })?;
    Ok(pool.ids().map(str::to_string).zip(utilities).collect())
}

fn request_utilities(truth: &HashMap<String, f64>, request: &JudgeRequest) -> Result<Vec<f64>, JudgeError> {
    request
        .candidates
        .iter()
        .map(|c| {
            truth
                .get(&c.id)
                .copied()
                .ok_or_else(|| JudgeError::Incompatible(format!("no true utility for {}", c.id)))
        })
        .collect()
}

/// Draws rankings from PL(beta * true utility).
pub struct SimulatedPlJudge {
    truth: HashMap<String, f64>,
    beta: f64,
    rng: StreamRng,
}

impl SimulatedPlJudge {
    /// `beta = f64::INFINITY` gives the deterministic true order.
    pub fn new(pool: &CandidatePool, beta: f64, rng: StreamRng) -> Result<Self, JudgeError> {
        if !(beta >= 0.0) {
            return Err(JudgeError::Incompatible(format!("beta must be non-negative, got {beta}")));
        }
        Ok(SimulatedPlJudge {
            truth: truth_map(pool)?,
            beta,
            rng,
        })
    }
}

impl Judge for SimulatedPlJudge {
    fn tag(&self) -> String {
        format!("pl:beta={}", self.beta)
    }

    fn is_simulated(&self) -> bool {
        true
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let u = request_utilities(&self.truth, request)?;
        let local: Vec<usize> = (0..u.len()).collect();
        let order = crate::pl::sample_ranking(&u, &local, self.beta, &mut self.rng)
            .map_err(|e| JudgeError::Incompatible(e.to_string()))?;
        Ok(JudgeResponse {
            ranking: order.into_iter().map(|i| request.candidates[i].id.clone()).collect(),
            meta: None,
        })
    }
}

/// True order perturbed by one left-to-right pass of adjacent swaps.
pub struct SwapNoiseJudge {
    truth: HashMap<String, f64>,
    p_swap: f64,
    rng: StreamRng,
}

impl SwapNoiseJudge {
    pub fn new(pool: &CandidatePool, p_swap: f64, rng: StreamRng) -> Result<Self, JudgeError> {
        if !(0.0..=1.0).contains(&p_swap) {
            return Err(JudgeError::Incompatible(format!("p_swap must lie in [0, 1], got {p_swap}")));
        }
        Ok(SwapNoiseJudge {
            truth: truth_map(pool)?,
            p_swap,
            rng,
        })
    }
}

/// Applies the swap pass to `order` in place, one coin per adjacent pair.
pub fn adjacent_swap_pass<R: rand::Rng + ?Sized>(order: &mut [usize], p_swap: f64, rng: &mut R) {
    for j in 0..order.len().saturating_sub(1) {
        if rng.random::<f64>() < p_swap {
            order.swap(j, j + 1);
        }
    }
}

impl Judge for SwapNoiseJudge {
    fn tag(&self) -> String {
        format!("swap:p={}", self.p_swap)
    }

    fn is_simulated(&self) -> bool {
        true
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let u = request_utilities(&self.truth, request)?;
        let mut order = crate::metrics::argsort_desc(&u);
        adjacent_swap_pass(&mut order, self.p_swap, &mut self.rng);
        Ok(JudgeResponse {
            ranking: order.into_iter().map(|i| request.candidates[i].id.clone()).collect(),
            meta: None,
        })
    }
}

/// A human typing orderings at a terminal. Invalid lines are re-prompted
/// without limit; end of input makes the judge unavailable.
pub struct InteractiveJudge<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> InteractiveJudge<R, W> {
    pub fn new(input: R, output: W) -> Self {
        InteractiveJudge { input, output }
    }

    fn show(&mut self, request: &JudgeRequest) -> std::io::Result<()> {
        let out = &mut self.output;
        writeln!(out, "== iteration {} ==", request.iteration)?;
        if let Some(rubric) = &request.rubric {
            writeln!(out, "rubric: {rubric}")?;
        }
        if let Some(prior) = &request.prior_ordering {
            writeln!(out, "current order: {}", prior.join(" "))?;
        }
        for c in &request.candidates {
            write!(out, "  {}  {}", c.id, c.label)?;
            if let Some(d) = &c.dossier {
                let first = d.lines().next().unwrap_or("");
                write!(out, "  | {first}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

impl<R: BufRead, W: Write> Judge for InteractiveJudge<R, W> {
    fn tag(&self) -> String {
        "interactive".to_string()
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let io_err = |e: std::io::Error| JudgeError::Unavailable(e.to_string());
        self.show(request).map_err(io_err)?;
        loop {
            write!(self.output, "rank strongest to weakest (ids separated by spaces): ").map_err(io_err)?;
            self.output.flush().map_err(io_err)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(io_err)? == 0 {
                return Err(JudgeError::Unavailable("input closed".into()));
            }
            let ranking: Vec<String> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            let response = JudgeResponse { ranking, meta: None };
            match validate_response(request, &response) {
                Ok(()) => return Ok(response),
                Err(e) => writeln!(self.output, "{e}; try again").map_err(io_err)?,
            }
        }
    }
}

struct ChildJudge {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<Vec<String>>>,
}

impl ChildJudge {
    fn spawn(command: &[String]) -> Result<Self, JudgeError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| JudgeError::Unavailable("empty judge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| JudgeError::Unavailable(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let stderr_pipe = child.stderr.take().expect("stderr piped");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(Result::ok) {
                let mut buf = sink.lock().expect("stderr buffer");
                buf.push(line);
                let excess = buf.len().saturating_sub(20);
                buf.drain(..excess);
            }
        });
        Ok(ChildJudge {
            child,
            stdin,
            lines,
            stderr,
        })
    }

    fn stderr_tail(&self) -> String {
        // Give the reader thread a moment to drain what the child wrote last.
        thread::sleep(Duration::from_millis(20));
        self.stderr.lock().map(|b| b.join(" | ")).unwrap_or_default()
    }

    fn died(&mut self, what: &str) -> JudgeError {
        let status = self
            .child
            .try_wait()
            .ok()
            .flatten()
            .map(|s| s.to_string())
            .unwrap_or_else(|| "still running".into());
        let tail = self.stderr_tail();
        let mut msg = format!("{what} (status: {status})");
        if !tail.is_empty() {
            msg.push_str(&format!("; stderr: {tail}"));
        }
        JudgeError::Unavailable(msg)
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ChildJudge {
    fn drop(&mut self) {
        self.kill();
    }
}

/// A child process speaking the JSON-lines wire protocol: one request line
/// on its stdin, one response line on its stdout.
pub struct ExternalProcessJudge {
    command: Vec<String>,
    retries: u32,
    timeout: Duration,
    child: Option<ChildJudge>,
}

impl ExternalProcessJudge {
    pub fn new(command: Vec<String>, retries: u32, timeout_ms: u64) -> Self {
        ExternalProcessJudge {
            command,
            retries,
            timeout: Duration::from_millis(timeout_ms),
            child: None,
        }
    }
}

impl Judge for ExternalProcessJudge {
    fn tag(&self) -> String {
        format!("external:{}", self.command.join(" "))
    }

    fn retries(&self) -> u32 {
        self.retries
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        if self.child.is_none() {
            self.child = Some(ChildJudge::spawn(&self.command)?);
        }
        let child = self.child.as_mut().expect("child spawned");
        let line = request.to_wire_line();
        if child
            .stdin
            .write_all(line.as_bytes())
            .and_then(|()| child.stdin.flush())
            .is_err()
        {
            let err = child.died("judge closed its input");
            self.child = None;
            return Err(err);
        }
        match child.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => serde_json::from_str::<JudgeResponse>(&reply).map_err(|e| {
                let mut shown: String = reply.chars().take(80).collect();
                if shown.len() < reply.len() {
                    shown.push_str("...");
                }
                JudgeError::InvalidResponse(format!("not a JSON response ({e}): {shown:?}"))
            }),
            Ok(Err(e)) => {
                let err = child.died(&format!("reading judge output failed: {e}"));
                self.child = None;
                Err(err)
            }
            Err(RecvTimeoutError::Timeout) => {
                // A late answer would desynchronize the stream; restart the child.
                child.kill();
                self.child = None;
                Err(JudgeError::Timeout(self.timeout.as_millis() as u64))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let _ = child.child.wait();
                let err = child.died("judge exited");
                self.child = None;
                Err(err)
            }
        }
    }
}
