//! The active-learning loop: determinism, warm starts, seed isolation,
//! partial failure, replay and tamper detection.

use std::cell::RefCell;
use std::fs;
use std::rc::Rc;

use listwise_core::judge::{Judge, JudgeError, JudgeRequest, JudgeResponse};
use listwise_core::metrics::MetricsRecord;
use listwise_core::model::{
    decode_observation_log, encode_observation_log, Candidate, CandidatePool, JudgeSpec, RankingObservation, StoppingRule,
    Strategy, TournamentConfig,
};
use listwise_core::rundir::{self, RunStatus};
use listwise_core::synth::{synthetic_pool, UtilityGen};
use listwise_core::tournament::{self, stopping_check, RunError, RunObserver};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;

fn config(n: usize, k: usize, t: usize, strategy: Strategy) -> TournamentConfig {
    TournamentConfig {
        n_candidates: n,
        subset_size: k,
        iterations: t,
        strategy,
        judge: JudgeSpec::pl(1.5),
        seed: 3,
        ..TournamentConfig::default()
    }
}

fn pool(n: usize, seed: u64) -> CandidatePool {
    synthetic_pool(n, &UtilityGen::Normal { sd: 1.0 }, seed).unwrap()
}

fn simulate(config: &TournamentConfig, pool: &CandidatePool) -> tournament::RunArtifacts {
    let mut judge = tournament::judge_for(config, pool).unwrap();
    let truth = pool.true_order().unwrap();
    tournament::run(config, pool, judge.as_mut(), Some(&truth)).unwrap()
}

#[test]
fn zero_iterations_keeps_the_prior() {
    let p = pool(6, 0);
    let a = simulate(&config(6, 3, 0, Strategy::Uniform), &p);
    assert_eq!(a.states.len(), 1);
    assert!(a.metrics.is_empty() && a.observations.is_empty());
    assert!(a.states[0].u.iter().all(|&x| x == 0.0));
    assert!(a.states[0].sigma2.iter().all(|&x| (x - 10.0).abs() < 1e-12));
}

#[test]
fn noiseless_judge_recovers_true_order() {
    let p = pool(8, 1);
    let mut c = config(8, 4, 40, Strategy::Uniform);
    c.judge = JudgeSpec::pl(f64::INFINITY);
    let a = simulate(&c, &p);
    assert_eq!(a.final_state().ranking(), p.true_order().unwrap());
}

#[test]
fn bookkeeping_per_iteration() {
    let p = pool(12, 2);
    let a = simulate(&config(12, 4, 9, Strategy::VarianceTopk), &p);
    assert_eq!(a.observations.len(), 9);
    assert_eq!(a.metrics.len(), 9);
    assert_eq!(a.states.len(), 10);
    for (t, s) in a.states.iter().enumerate() {
        assert_eq!(s.n_observations, t as u64);
        assert_eq!(s.iteration, t as u64);
        assert!(s.u.iter().sum::<f64>().abs() < 1e-9);
        // Observations only add curvature, so no variance exceeds the prior's.
        assert!(s.sigma2.iter().all(|&v| v <= 1.0 / 0.1 + 1e-12));
    }
    assert!(a.metrics[0].kendall_tau_successive.is_none());
    assert!(a.metrics[1..].iter().all(|m| m.kendall_tau_successive.is_some()));
    assert!(a.observations.iter().all(|o| o.wall_time_ms == 0 && o.judge_tag == "pl:beta=1.5"));
}

#[test]
fn identical_inputs_give_identical_runs() {
    let p = pool(15, 4);
    for strategy in Strategy::ALL {
        let c = config(15, 5, 6, strategy);
        let a = simulate(&c, &p);
        let b = simulate(&c, &p);
        assert_eq!(a.observations, b.observations, "{strategy:?}");
        assert_eq!(a.states, b.states, "{strategy:?}");
        assert_eq!(a.metrics, b.metrics, "{strategy:?}");
    }
}

#[test]
fn judge_seed_does_not_move_the_first_selection() {
    let p = pool(20, 5);
    for strategy in Strategy::ALL {
        let mut c = config(20, 5, 3, strategy);
        let a = simulate(&c, &p);
        c.judge_seed = Some(999);
        let b = simulate(&c, &p);
        assert_eq!(a.observations[0].subset, b.observations[0].subset, "{strategy:?}");
    }
    let mut c = config(20, 5, 3, Strategy::Uniform);
    let a = simulate(&c, &p);
    c.judge_seed = Some(999);
    assert_ne!(a.observations, simulate(&c, &p).observations);
}

#[derive(Default)]
struct Recorder {
    inits: Vec<(u64, Vec<f64>)>,
    seen: Vec<u64>,
}

impl RunObserver for Recorder {
    fn on_fit_start(&mut self, iteration: u64, init: &[f64]) {
        self.inits.push((iteration, init.to_vec()));
    }

    fn on_iteration(&mut self, observation: &RankingObservation, metrics: &MetricsRecord) {
        assert_eq!(observation.iteration, metrics.iteration);
        self.seen.push(metrics.iteration);
    }
}

#[test]
fn each_fit_starts_from_the_previous_state() {
    let p = pool(10, 6);
    let c = config(10, 4, 7, Strategy::Qbc);
    let mut judge = tournament::judge_for(&c, &p).unwrap();
    let mut rec = Recorder::default();
    let a = tournament::run_observed(&c, &p, judge.as_mut(), None, &mut rec).unwrap();
    assert_eq!(rec.seen, (1..=7).collect::<Vec<u64>>());
    for (t, init) in &rec.inits {
        assert_eq!(init, &a.states[*t as usize - 1].u);
    }
}

/// Answers in the order given, recording every request.
struct Echo {
    requests: Rc<RefCell<Vec<JudgeRequest>>>,
    fail_from: Option<u64>,
}

impl Judge for Echo {
    fn tag(&self) -> String {
        "echo".into()
    }

    fn rank(&mut self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        self.requests.borrow_mut().push(request.clone());
        if self.fail_from.is_some_and(|t| request.iteration >= t) {
            return Err(JudgeError::Unavailable("gone".into()));
        }
        Ok(JudgeResponse {
            ranking: request.ids().into_iter().map(String::from).collect(),
            meta: None,
        })
    }
}

/// Config for runs driven by a hand-built judge.
fn live(n: usize, k: usize, t: usize) -> TournamentConfig {
    TournamentConfig {
        judge: JudgeSpec::Interactive,
        ..config(n, k, t, Strategy::Uniform)
    }
}

fn plain_pool(n: usize) -> CandidatePool {
    CandidatePool::new((0..n).map(|i| Candidate::new(format!("p{i}"), format!("P{i}"))).collect(), Some("r".into())).unwrap()
}

#[test]
fn prior_ordering_is_the_fitted_order_of_the_subset() {
    let p = plain_pool(7);
    let mut c = live(7, 3, 6);
    c.prior_ordering_in_prompt = true;
    let requests = Rc::new(RefCell::new(Vec::new()));
    let mut judge = Echo {
        requests: Rc::clone(&requests),
        fail_from: None,
    };
    let a = tournament::run(&c, &p, &mut judge, None).unwrap();
    for (t, req) in requests.borrow().iter().enumerate() {
        let prior: Vec<usize> = req.prior_ordering.as_ref().unwrap().iter().map(|id| p.index_of(id).unwrap()).collect();
        let expected: Vec<usize> = a.states[t].ranking().into_iter().filter(|i| prior.contains(i)).collect();
        assert_eq!(prior, expected);
        assert_eq!(req.rubric.as_deref(), Some("r"));
    }

    c.prior_ordering_in_prompt = false;
    requests.borrow_mut().clear();
    tournament::run(&c, &p, &mut judge, None).unwrap();
    assert!(requests.borrow().iter().all(|r| r.prior_ordering.is_none()));
}

#[test]
fn judge_failure_keeps_completed_iterations() {
    let p = plain_pool(6);
    let c = live(6, 3, 10);
    let mut judge = Echo {
        requests: Rc::default(),
        fail_from: Some(4),
    };
    match tournament::run(&c, &p, &mut judge, None) {
        Err(RunError::Aborted { completed, partial, source }) => {
            assert_eq!(completed, 3);
            assert_eq!(partial.observations.len(), 3);
            assert_eq!(partial.metrics.len(), 3);
            assert!(source.to_string().contains("gone"));
        }
        other => panic!("expected an abort, got {:?}", other.map(|a| a.completed())),
    }
}

#[test]
fn setup_problems_are_rejected_before_running() {
    let p = plain_pool(6);
    let c = config(6, 3, 2, Strategy::Uniform);
    // Simulated judges need true utilities.
    assert!(tournament::judge_for(&c, &p).is_err());
    let mut judge = Echo {
        requests: Rc::default(),
        fail_from: None,
    };
    assert!(matches!(tournament::run(&config(7, 3, 2, Strategy::Uniform), &p, &mut judge, None), Err(RunError::Setup(_))));
    assert!(matches!(tournament::run(&c, &p, &mut judge, Some(&[0, 1, 2])), Err(RunError::Setup(_))));
}

#[test]
fn replay_reproduces_every_state() {
    let p = pool(14, 7);
    let a = simulate(&config(14, 5, 12, Strategy::Mckg), &p);
    let replayed = tournament::replay(&a.observations, &a.config, &p).unwrap();
    assert_eq!(replayed.len(), a.states.len());
    for (x, y) in replayed.iter().zip(&a.states) {
        for (p, q) in x.u.iter().zip(&y.u).chain(x.sigma2.iter().zip(&y.sigma2)) {
            assert!((p - q).abs() <= 1e-9);
        }
    }
    let prefix = tournament::replay(&a.observations[..5], &a.config, &p).unwrap();
    assert_eq!(prefix.last().unwrap(), &a.states[5]);
}

#[test]
fn run_directory_round_trip_and_tamper() {
    let p = pool(10, 8);
    let a = simulate(&config(10, 4, 8, Strategy::Boundary), &p);
    let dir = tempfile::tempdir().unwrap();
    let manifest = rundir::write_run_dir(dir.path(), &a, &p, RunStatus::Completed, None).unwrap();
    assert_eq!(manifest.completed_iterations, 8);
    assert_eq!(rundir::read_manifest(dir.path()).unwrap().unwrap(), manifest);
    assert_eq!(rundir::read_config(dir.path()).unwrap(), a.config);
    assert_eq!(rundir::read_pool(dir.path()).unwrap(), p);
    assert_eq!(rundir::read_observations(dir.path(), &p).unwrap(), a.observations);
    assert_eq!(rundir::read_states(dir.path()).unwrap(), a.states);
    assert!(!dir.path().join(rundir::DIAGNOSTICS_FILE).exists());

    let text = rundir::read_observation_text(dir.path()).unwrap();
    assert!(rundir::tampered_lines(&manifest, &text).is_empty());
    let prefix: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(rundir::tampered_lines(&manifest, &prefix).is_empty());

    // Flip each byte of line 5 in turn; every edit must be caught.
    let start: usize = text.lines().take(4).map(|l| l.len() + 1).sum();
    let len = text.lines().nth(4).unwrap().len();
    for offset in 0..len {
        let mut bytes = text.clone().into_bytes();
        bytes[start + offset] ^= 0x01;
        let edited = String::from_utf8_lossy(&bytes);
        assert_eq!(rundir::tampered_lines(&manifest, &edited), vec![5], "offset {offset}");
    }
}

#[test]
fn diagnostics_are_written_on_request() {
    let p = pool(10, 9);
    let mut c = config(10, 3, 4, Strategy::Qbc);
    c.dump_diagnostics = true;
    c.proposal_pool = 5;
    let a = simulate(&c, &p);
    let dir = tempfile::tempdir().unwrap();
    rundir::write_run_dir(dir.path(), &a, &p, RunStatus::Completed, None).unwrap();
    let text = fs::read_to_string(dir.path().join(rundir::DIAGNOSTICS_FILE)).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["strategy"], "qbc");
    assert_eq!(lines[0]["proposals"].as_array().unwrap().len(), 5);
}

#[test]
fn unknown_ids_in_a_log_are_named() {
    let p = plain_pool(4);
    let good = encode_observation_log(&[RankingObservation::new(1, vec![0, 1], vec![1, 0], "echo", 0).unwrap()], &p);
    let bad = format!("{good}{}", good.replace("p1", "zz"));
    let err = decode_observation_log(&bad, &p).unwrap_err().to_string();
    assert!(err.contains("line 2") && err.contains("zz"), "{err}");
}

fn record(t: u64, tau: Option<f64>, du: f64) -> MetricsRecord {
    MetricsRecord {
        iteration: t,
        kendall_tau_successive: tau,
        delta_u: du,
        ndcg: None,
        kendall_tau_vs_reference: None,
    }
}

#[test]
fn stopping_rule() {
    let h = [record(1, None, 1.0), record(2, Some(0.5), 1e-4), record(3, Some(0.95), 1e-4), record(4, Some(0.96), 1e-4)];
    assert!(stopping_check(&h, 2, 0.9, 1e-3));
    assert!(!stopping_check(&h, 3, 0.9, 1e-3));
    assert!(!stopping_check(&h[..1], 2, 0.0, 10.0));
    let still = [record(2, Some(1.0), 0.0), record(3, Some(1.0), 0.0)];
    assert!(stopping_check(&still, 2, 1.0, 0.0));

    let p = pool(8, 10);
    let mut c = config(8, 8, 30, Strategy::Uniform);
    c.judge = JudgeSpec::pl(f64::INFINITY);
    c.early_stopping = Some(StoppingRule {
        window: 3,
        tau_threshold: 0.99,
        du_threshold: 0.2,
    });
    let a = simulate(&c, &p);
    assert!(a.stopped_early && a.completed() < 30);
}

fn observation_log() -> impl proptest::strategy::Strategy<Value = Vec<(Vec<usize>, u64)>> {
    let one = (2usize..6).prop_flat_map(|k| (Just((0..k).collect::<Vec<usize>>()).prop_shuffle(), 0u64..10_000));
    prop::collection::vec(one, 0..12)
}

proptest! {
    #[test]
    fn observation_log_round_trips(entries in observation_log()) {
        let p = plain_pool(6);
        let observations: Vec<RankingObservation> = entries
            .into_iter()
            .enumerate()
            .map(|(i, (perm, ms))| {
                let mut subset = perm.clone();
                subset.sort_unstable();
                RankingObservation::new(i as u64 + 1, subset, perm, "external:judge --fast", ms).unwrap()
            })
            .collect();
        let text = encode_observation_log(&observations, &p);
        prop_assert_eq!(text.lines().count(), observations.len());
        prop_assert_eq!(decode_observation_log(&text, &p).unwrap(), observations);
    }
}
