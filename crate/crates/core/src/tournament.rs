//! The active-learning loop: select a subset, ask the judge, log the
//! observation, refit, record metrics. Plus replay of a stored log and the
//! early-stopping rule.

use std::io::{self, BufReader};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{self, ProposalSubset};
use crate::error::{Error, Result};
use crate::judge::{self, ExternalProcessJudge, InteractiveJudge, Judge, JudgeRequest, SimulatedPlJudge, SwapNoiseJudge};
use crate::metrics::{self, MetricsRecord};
use crate::model::{validate_config, CandidatePool, JudgeSpec, RankingObservation, TournamentConfig, UtilityState};
use crate::pl::{self, FitOptions, FitReport};
use crate::rng::{stream_rng, Stream};

/// Acquisition scores of every proposal considered at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub iteration: u64,
    pub strategy: String,
    pub proposals: Vec<ProposalSubset>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub config: TournamentConfig,
    pub pool_digest: String,
    pub observations: Vec<RankingObservation>,
    /// `states[0]` is the zero-utility prior; `states[t]` follows iteration t.
    pub states: Vec<UtilityState>,
    pub metrics: Vec<MetricsRecord>,
    /// Filled only when `config.dump_diagnostics` is set.
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub stopped_early: bool,
}

impl RunArtifacts {
    pub fn completed(&self) -> usize {
        self.observations.len()
    }

    pub fn final_state(&self) -> &UtilityState {
        self.states.last().expect("initial state always present")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Nothing ran: bad configuration or a judge that cannot serve the pool.
    #[error(transparent)]
    Setup(Error),

    #[error("run aborted after {completed} completed iteration(s): {source}")]
    Aborted {
        completed: usize,
        partial: Box<RunArtifacts>,
        #[source]
        source: Error,
    },
}

/// Hooks into a running tournament. All methods default to no-ops.
pub trait RunObserver {
    /// Called before each refit with the vector the fit starts from.
    fn on_fit_start(&mut self, _iteration: u64, _init: &[f64]) {}

    fn on_iteration(&mut self, _observation: &RankingObservation, _metrics: &MetricsRecord) {}
}

struct Quiet;
impl RunObserver for Quiet {}

pub fn fit_options(config: &TournamentConfig) -> FitOptions {
    FitOptions {
        lambda: config.lambda,
        tolerance: config.fit_tolerance,
        max_steps: config.max_fit_steps,
    }
}

/// Zero utilities with prior variances `1 / lambda`.
pub fn initial_state(n: usize, lambda: f64) -> Result<UtilityState> {
    let u = vec![0.0; n];
    let sigma2 = pl::laplace_variances(&u, &[], lambda)?;
    Ok(UtilityState {
        iteration: 0,
        u,
        sigma2,
        n_observations: 0,
    })
}

/// Refits after the latest observation, warm-starting from `previous`.
fn advance(config: &TournamentConfig, observations: &[RankingObservation], previous: &UtilityState) -> Result<FitReport> {
    let mut report = pl::fit(observations, previous.len(), Some(&previous.u), fit_options(config))?;
    report.state.iteration = observations.len() as u64;
    Ok(report)
}

/// Builds the judge a config asks for. Simulated judges draw from the judge
/// stream of `judge_seed` (or `seed`); the interactive judge uses the
/// process's stdin and stdout.
pub fn judge_for(config: &TournamentConfig, pool: &CandidatePool) -> Result<Box<dyn Judge>> {
    let rng = stream_rng(config.judge_seed.unwrap_or(config.seed), Stream::Judge);
    Ok(match &config.judge {
        JudgeSpec::Pl { beta } => Box::new(SimulatedPlJudge::new(pool, beta.unwrap_or(f64::INFINITY), rng)?),
        JudgeSpec::Swap { p_swap } => Box::new(SwapNoiseJudge::new(pool, *p_swap, rng)?),
        JudgeSpec::External {
            command,
            retries,
            timeout_ms,
        } => Box::new(ExternalProcessJudge::new(command.clone(), *retries, *timeout_ms)),
        JudgeSpec::Interactive => Box::new(InteractiveJudge::new(BufReader::new(io::stdin()), io::stdout())),
    })
}

fn check_setup(config: &TournamentConfig, pool: &CandidatePool, reference: Option<&[usize]>) -> Result<()> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Config(text.join("; ")));
    }
    if config.n_candidates != pool.len() {
        return Err(Error::Config(format!(
            "config expects {} candidates but the pool has {}",
            config.n_candidates,
            pool.len()
        )));
    }
    if config.judge.needs_true_utilities() && !pool.is_synthetic() {
        return Err(Error::Config("simulated judges need a pool with true utilities".into()));
    }
    if let Some(reference) = reference {
        let all: Vec<usize> = (0..pool.len()).collect();
        if !crate::model::is_permutation_of(reference, &all) {
            return Err(Error::Config("reference ranking must list every candidate exactly once".into()));
        }
    }
    Ok(())
}

pub fn run(
    config: &TournamentConfig,
    pool: &CandidatePool,
    judge: &mut dyn Judge,
    reference: Option<&[usize]>,
) -> Result<RunArtifacts, RunError> {
    run_observed(config, pool, judge, reference, &mut Quiet)
}

pub fn run_observed(
    config: &TournamentConfig,
    pool: &CandidatePool,
    judge: &mut dyn Judge,
    reference: Option<&[usize]>,
    observer: &mut dyn RunObserver,
) -> Result<RunArtifacts, RunError> {
    check_setup(config, pool, reference).map_err(RunError::Setup)?;
    let initial = initial_state(pool.len(), config.lambda).map_err(RunError::Setup)?;
    let mut artifacts = RunArtifacts {
        config: config.clone(),
        pool_digest: crate::model::sha256_hex(pool.to_json().as_bytes()),
        observations: Vec::new(),
        states: vec![initial],
        metrics: Vec::new(),
        diagnostics: Vec::new(),
        stopped_early: false,
    };
    let mut selection_rng = stream_rng(config.seed, Stream::Selection);

    for t in 1..=config.iterations as u64 {
        if let Err(source) = iterate(config, pool, judge, reference, observer, &mut artifacts, &mut selection_rng, t) {
            return Err(RunError::Aborted {
                completed: artifacts.completed(),
                partial: Box::new(artifacts),
                source,
            });
        }
        if let Some(rule) = &config.early_stopping {
            if stopping_check(&artifacts.metrics, rule.window, rule.tau_threshold, rule.du_threshold) {
                artifacts.stopped_early = true;
                break;
            }
        }
    }
    Ok(artifacts)
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    config: &TournamentConfig,
    pool: &CandidatePool,
    judge: &mut dyn Judge,
    reference: Option<&[usize]>,
    observer: &mut dyn RunObserver,
    artifacts: &mut RunArtifacts,
    selection_rng: &mut crate::rng::StreamRng,
    t: u64,
) -> Result<()> {
    let previous = artifacts.final_state().clone();
    let selection = acquisition::select(config, &previous, &artifacts.observations, selection_rng)?;
    let subset = selection.chosen.indices.clone();
    if config.dump_diagnostics {
        artifacts.diagnostics.push(DiagnosticsRecord {
            iteration: t,
            strategy: config.strategy.name().to_string(),
            proposals: selection.proposals,
        });
    }

    let mut request = JudgeRequest::for_subset(pool, t, &subset);
    if config.prior_ordering_in_prompt {
        let order = previous.ranking();
        request.prior_ordering = Some(
            order
                .into_iter()
                .filter(|i| subset.contains(i))
                .map(|i| pool.id_of(i).to_string())
                .collect(),
        );
    }
    let started = Instant::now();
    let response = judge::judge_rank(judge, &request)?;
    let wall_time_ms = if judge.is_simulated() {
        0
    } else {
        started.elapsed().as_millis() as u64
    };
    let permutation = response
        .ranking
        .iter()
        .map(|id| pool.index_of(id))
        .collect::<Result<Vec<_>>>()?;
    let observation = RankingObservation::new(t, subset, permutation, judge.tag(), wall_time_ms)?;
    artifacts.observations.push(observation);

    observer.on_fit_start(t, &previous.u);
    let report = advance(config, &artifacts.observations, &previous)?;
    let state = report.state;

    let ranking = state.ranking();
    let record = MetricsRecord {
        iteration: t,
        kendall_tau_successive: if t >= 2 {
            Some(metrics::kendall_tau(&ranking, &previous.ranking())?)
        } else {
            None
        },
        delta_u: metrics::delta_u(&state.u, &previous.u)?,
        ndcg: reference
            .map(|r| {
                config
                    .cutoffs
                    .iter()
                    .map(|&p| metrics::ndcg_at(&ranking, r, p))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?,
        kendall_tau_vs_reference: reference.map(|r| metrics::kendall_tau(&ranking, r)).transpose()?,
    };
    observer.on_iteration(artifacts.observations.last().expect("just pushed"), &record);
    artifacts.states.push(state);
    artifacts.metrics.push(record);
    Ok(())
}

/// Recomputes every state from a stored log with the same warm-start chain
/// as the original run. Returns `observations.len() + 1` states, starting
/// with the prior.
pub fn replay(observations: &[RankingObservation], config: &TournamentConfig, pool: &CandidatePool) -> Result<Vec<UtilityState>> {
    for obs in observations {
        obs.check_bounds(pool.len())?;
    }
    let mut states = vec![initial_state(pool.len(), config.lambda)?];
    for t in 1..=observations.len() {
        let report = advance(config, &observations[..t], states.last().expect("non-empty"))?;
        states.push(report.state);
    }
    Ok(states)
}

/// True iff the last `window` records all show successive Kendall-tau at
/// least `tau_threshold` and utility movement at most `du_threshold`.
pub fn stopping_check(history: &[MetricsRecord], window: usize, tau_threshold: f64, du_threshold: f64) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    history[history.len() - window..].iter().all(|r| {
        r.kendall_tau_successive.is_some_and(|tau| tau >= tau_threshold) && r.delta_u <= du_threshold
    })
}
