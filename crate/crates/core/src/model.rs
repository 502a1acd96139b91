//! Domain types shared by every stage of a tournament run.
//!
//! Candidates carry stable string ids on disk; everything numeric works on
//! dense indices `0..N` assigned by pool order.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An item to be ranked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub dossier: Option<String>,
    /// Ground-truth utility, present only in simulation pools.
    #[serde(default)]
    pub true_utility: Option<f64>,
}

impl Candidate {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Candidate {
            id: id.into(),
            label: label.into(),
            dossier: None,
            true_utility: None,
        }
    }

    pub fn with_true_utility(mut self, utility: f64) -> Self {
        self.true_utility = Some(utility);
        self
    }

    pub fn with_dossier(mut self, dossier: impl Into<String>) -> Self {
        self.dossier = Some(dossier.into());
        self
    }
}

#[derive(Serialize, Deserialize)]
struct PoolFile {
    #[serde(default)]
    rubric: Option<String>,
    candidates: Vec<Candidate>,
}

/// An ordered, validated set of candidates plus the opaque rubric text that
/// is forwarded to judges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolFile", into = "PoolFile")]
pub struct CandidatePool {
    rubric: Option<String>,
    candidates: Vec<Candidate>,
    index: HashMap<String, usize>,
}

impl TryFrom<PoolFile> for CandidatePool {
    type Error = Error;

    fn try_from(file: PoolFile) -> Result<Self> {
        CandidatePool::new(file.candidates, file.rubric)
    }
}

impl From<CandidatePool> for PoolFile {
    fn from(pool: CandidatePool) -> Self {
        PoolFile {
            rubric: pool.rubric,
            candidates: pool.candidates,
        }
    }
}

impl CandidatePool {
    pub fn new(candidates: Vec<Candidate>, rubric: Option<String>) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::Config(format!(
                "pool needs at least 2 candidates, got {}",
                candidates.len()
            )));
        }
        let mut index = HashMap::with_capacity(candidates.len());
        for (i, c) in candidates.iter().enumerate() {
            if c.id.is_empty() {
                return Err(Error::Config(format!("candidate {i} has an empty id")));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate candidate id {}", c.id)));
            }
        }
        let with_truth = candidates.iter().filter(|c| c.true_utility.is_some()).count();
        if with_truth != 0 && with_truth != candidates.len() {
            return Err(Error::Config(format!(
                "true_utility present for {with_truth} of {} candidates; a pool is either fully synthetic or fully real",
                candidates.len()
            )));
        }
        if candidates
            .iter()
            .any(|c| c.true_utility.is_some_and(|u| !u.is_finite()))
        {
            return Err(Error::Config("true_utility must be finite".into()));
        }
        Ok(CandidatePool {
            rubric,
            candidates,
            index,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical pretty-printed pool document, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("pool serializes");
        text.push('\n');
        text
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn rubric(&self) -> Option<&str> {
        self.rubric.as_deref()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    /// Panics if `index` is out of range.
    pub fn id_of(&self, index: usize) -> &str {
        &self.candidates[index].id
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.id.as_str())
    }

    pub fn is_synthetic(&self) -> bool {
        self.candidates[0].true_utility.is_some()
    }

    pub fn true_utilities(&self) -> Option<Vec<f64>> {
        self.candidates.iter().map(|c| c.true_utility).collect()
    }

    /// Indices sorted by descending true utility (ties by index).
    pub fn true_order(&self) -> Option<Vec<usize>> {
        self.true_utilities()
            .map(|u| crate::metrics::argsort_desc(&u))
    }
}

/// Hex SHA-256 of arbitrary bytes, used for pool/config/log digests.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One tournament result: the queried subset and the judge's ordering of it.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingObservation {
    pub iteration: u64,
    pub subset: Vec<usize>,
    /// Strongest first.
    pub permutation: Vec<usize>,
    pub judge_tag: String,
    pub wall_time_ms: u64,
}

impl RankingObservation {
    pub fn new(
        iteration: u64,
        subset: Vec<usize>,
        permutation: Vec<usize>,
        judge_tag: impl Into<String>,
        wall_time_ms: u64,
    ) -> Result<Self> {
        let obs = RankingObservation {
            iteration,
            subset,
            permutation,
            judge_tag: judge_tag.into(),
            wall_time_ms,
        };
        obs.check_shape()?;
        Ok(obs)
    }

    /// Builds an observation whose subset is the sorted permutation. Used for
    /// hypothetical rankings where only the order matters.
    pub fn from_ranking(permutation: Vec<usize>) -> Result<Self> {
        let mut subset = permutation.clone();
        subset.sort_unstable();
        Self::new(0, subset, permutation, "", 0)
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    fn check_shape(&self) -> Result<()> {
        if self.subset.len() < 2 {
            return Err(Error::structural(format!(
                "observation needs at least 2 items, got {}",
                self.subset.len()
            )));
        }
        if !is_permutation_of(&self.permutation, &self.subset) {
            return Err(Error::structural(
                "permutation is not a reordering of the subset",
            ));
        }
        Ok(())
    }

    /// Checks every index against a pool of `n` items.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        if self.subset.len() > n {
            return Err(Error::structural(format!(
                "observation of {} items exceeds pool of {n}",
                self.subset.len()
            )));
        }
        match self.subset.iter().find(|&&i| i >= n) {
            Some(i) => Err(Error::structural(format!(
                "index {i} out of range for {n} items"
            ))),
            None => Ok(()),
        }
    }

    pub fn to_record(&self, pool: &CandidatePool) -> ObservationRecord {
        ObservationRecord {
            iteration: self.iteration,
            subset: self.subset.iter().map(|&i| pool.id_of(i).to_string()).collect(),
            permutation: self
                .permutation
                .iter()
                .map(|&i| pool.id_of(i).to_string())
                .collect(),
            judge_tag: self.judge_tag.clone(),
            wall_time_ms: self.wall_time_ms,
        }
    }
}

/// True when `perm` holds exactly the elements of `set`, each once.
pub(crate) fn is_permutation_of<T: Eq + std::hash::Hash>(perm: &[T], set: &[T]) -> bool {
    if perm.len() != set.len() {
        return false;
    }
    let expected: HashSet<&T> = set.iter().collect();
    if expected.len() != set.len() {
        return false;
    }
    let mut seen = HashSet::with_capacity(perm.len());
    perm.iter().all(|x| expected.contains(x) && seen.insert(x))
}

/// On-disk form of a [`RankingObservation`]: ids instead of indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub iteration: u64,
    pub subset: Vec<String>,
    pub permutation: Vec<String>,
    pub judge_tag: String,
    pub wall_time_ms: u64,
}

impl ObservationRecord {
    pub fn resolve(&self, pool: &CandidatePool) -> Result<RankingObservation> {
        let lookup = |ids: &[String]| -> Result<Vec<usize>> {
            ids.iter().map(|id| pool.index_of(id)).collect()
        };
        let obs = RankingObservation::new(
            self.iteration,
            lookup(&self.subset)?,
            lookup(&self.permutation)?,
            self.judge_tag.clone(),
            self.wall_time_ms,
        )?;
        obs.check_bounds(pool.len())?;
        Ok(obs)
    }
}

/// Serializes observations as JSON lines, one per observation.
pub fn encode_observation_log(observations: &[RankingObservation], pool: &CandidatePool) -> String {
    let mut out = String::new();
    for obs in observations {
        out.push_str(&serde_json::to_string(&obs.to_record(pool)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines observation log. Blank lines are skipped; errors carry
/// the 1-based line number.
pub fn decode_observation_log(text: &str, pool: &CandidatePool) -> Result<Vec<RankingObservation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let record: ObservationRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        out.push(record.resolve(pool).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

/// Fitted utilities and diagonal Laplace variances after some iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityState {
    pub iteration: u64,
    pub u: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub n_observations: u64,
}

impl UtilityState {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Current ranking: indices by descending utility, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        crate::metrics::argsort_desc(&self.u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uniform,
    VarianceTopk,
    /// Shortlist-boundary probing; also accepted as `kl_ucb`.
    #[serde(alias = "kl_ucb")]
    Boundary,
    Qbc,
    Mckg,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Uniform,
        Strategy::VarianceTopk,
        Strategy::Boundary,
        Strategy::Qbc,
        Strategy::Mckg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::VarianceTopk => "variance_topk",
            Strategy::Boundary => "boundary",
            Strategy::Qbc => "qbc",
            Strategy::Mckg => "mckg",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "variance_topk" => Ok(Strategy::VarianceTopk),
            "boundary" | "kl_ucb" => Ok(Strategy::Boundary),
            "qbc" => Ok(Strategy::Qbc),
            "mckg" => Ok(Strategy::Mckg),
            other => Err(format!(
                "unknown strategy {other} (expected uniform, variance_topk, boundary, kl_ucb, qbc or mckg)"
            )),
        }
    }
}

/// Which judge answers tournament queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeSpec {
    /// Plackett-Luce noise around the pool's true utilities. `beta = None`
    /// stands for an infinitely sharp (deterministic) judge.
    Pl { beta: Option<f64> },
    /// True order with adjacent swaps.
    Swap { p_swap: f64 },
    External {
        command: Vec<String>,
        retries: u32,
        timeout_ms: u64,
    },
    Interactive,
}

impl JudgeSpec {
    pub fn pl(beta: f64) -> Self {
        JudgeSpec::Pl {
            beta: beta.is_finite().then_some(beta),
        }
    }

    pub fn needs_true_utilities(&self) -> bool {
        matches!(self, JudgeSpec::Pl { .. } | JudgeSpec::Swap { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub window: usize,
    pub tau_threshold: f64,
    pub du_threshold: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            window: 5,
            tau_threshold: 0.99,
            du_threshold: 1e-3,
        }
    }
}

/// Every run parameter. Serialized verbatim as a run's `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TournamentConfig {
    pub n_candidates: usize,
    pub subset_size: usize,
    pub iterations: usize,
    pub strategy: Strategy,
    pub judge: JudgeSpec,
    pub seed: u64,
    /// Overrides the judge's random stream; derived from `seed` when absent.
    pub judge_seed: Option<u64>,
    pub lambda: f64,
    pub fit_tolerance: f64,
    pub max_fit_steps: usize,
    pub cutoffs: Vec<f64>,
    pub shortlist_fraction: f64,
    pub qbc_committee: usize,
    pub proposal_pool: usize,
    pub mckg_rollouts: usize,
    pub prior_ordering_in_prompt: bool,
    pub early_stopping: Option<StoppingRule>,
    pub dump_diagnostics: bool,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        TournamentConfig {
            n_candidates: 60,
            subset_size: 6,
            iterations: 30,
            strategy: Strategy::Mckg,
            judge: JudgeSpec::pl(1.5),
            seed: 0,
            judge_seed: None,
            lambda: 0.1,
            fit_tolerance: 1e-6,
            max_fit_steps: 500,
            cutoffs: vec![0.10, 0.15, 0.20, 0.25],
            shortlist_fraction: 0.2,
            qbc_committee: 16,
            proposal_pool: 32,
            mckg_rollouts: 8,
            prior_ordering_in_prompt: false,
            early_stopping: None,
            dump_diagnostics: false,
        }
    }
}

impl TournamentConfig {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }
}

/// A single failed configuration check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.message, self.field)
    }
}

pub fn validate_config(config: &TournamentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |field: &'static str, message: String| out.push(Violation { field, message });
    let n = config.n_candidates;
    let k = config.subset_size;

    if n < 2 {
        flag("n_candidates", format!("pool must hold at least 2 candidates, got {n}"));
    }
    if k < 2 {
        flag("subset_size", format!("subset_size must be at least 2, got {k}"));
    }
    if k > n {
        flag("subset_size", "subset_size exceeds pool".to_string());
    }
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        flag("lambda", format!("lambda must be a finite non-negative number, got {}", config.lambda));
    }
    if !(config.fit_tolerance > 0.0) {
        flag("fit_tolerance", "fit_tolerance must be positive".to_string());
    }
    if config.max_fit_steps == 0 {
        flag("max_fit_steps", "max_fit_steps must be positive".to_string());
    }
    if config.cutoffs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        flag("cutoffs", "cutoffs must lie in (0, 1]".to_string());
    }
    if config.cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        flag("cutoffs", "cutoffs not ascending".to_string());
    }
    let s = config.shortlist_fraction;
    if !(s > 0.0 && s < 1.0) {
        flag("shortlist_fraction", "shortlist_fraction must lie in (0, 1)".to_string());
    } else if n >= 2 && crate::metrics::cutoff_depth(s, n) >= n {
        flag("shortlist_fraction", "shortlist boundary falls past the last candidate".to_string());
    }
    if config.qbc_committee == 0 {
        flag("qbc_committee", "qbc_committee must be positive".to_string());
    }
    if config.proposal_pool == 0 {
        flag("proposal_pool", "proposal_pool must be positive".to_string());
    }
    if config.mckg_rollouts == 0 {
        flag("mckg_rollouts", "mckg_rollouts must be positive".to_string());
    }
    match &config.judge {
        JudgeSpec::Pl { beta: Some(b) } if !(*b >= 0.0 && b.is_finite()) => {
            flag("judge", format!("beta must be non-negative, got {b}"));
        }
        JudgeSpec::Swap { p_swap } if !(0.0..=1.0).contains(p_swap) => {
            flag("judge", format!("p_swap must lie in [0, 1], got {p_swap}"));
        }
        JudgeSpec::External { command, .. } if command.is_empty() => {
            flag("judge", "external judge command is empty".to_string());
        }
        _ => {}
    }
    if let Some(rule) = &config.early_stopping {
        if rule.window == 0 {
            flag("early_stopping", "stopping window must be at least 1".to_string());
        }
    }
    out
}
