//! End-to-end checks of the `listwise` binary: exit codes, run directories
//! and the audit path.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use listwise_core::metrics::read_metrics_csv;
use listwise_core::model::{Candidate, CandidatePool, UtilityState};
use listwise_core::rundir::{self, RunStatus};

fn listwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_listwise"))
        .args(args)
        .env_remove("LISTWISE_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_pool(dir: &Path, ids: &[&str]) -> PathBuf {
    let pool = CandidatePool::new(ids.iter().map(|id| Candidate::new(*id, id.to_uppercase())).collect(), Some("best first".into())).unwrap();
    let path = dir.join("pool.json");
    fs::write(&path, pool.to_json()).unwrap();
    path
}

fn script(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    format!("python3 {}", path.display())
}

const LEXICOGRAPHIC: &str = "import json, sys\nfor line in sys.stdin:\n    req = json.loads(line)\n    print(json.dumps({'ranking': sorted(c['id'] for c in req['candidates'])}), flush=True)\n";

#[test]
fn simulate_writes_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e1");
    let res = listwise(&["simulate", "--n", "60", "--k", "6", "--iters", "30", "--strategy", "mckg", "--judge", "pl", "--beta", "1.5", "--seed", "42", "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let metrics = fs::read_to_string(out.join(rundir::METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 31);
    assert!(metrics.starts_with("iteration,kendall_tau_successive,delta_u,ndcg_10,ndcg_15,ndcg_20,ndcg_25,kendall_tau_vs_reference\n"));
    assert_eq!(fs::read_to_string(out.join(rundir::OBSERVATIONS_FILE)).unwrap().lines().count(), 30);
    assert_eq!(fs::read_to_string(out.join(rundir::STATES_FILE)).unwrap().lines().count(), 31);
    let manifest = rundir::read_manifest(&out).unwrap().unwrap();
    assert_eq!(manifest.status, RunStatus::Completed);
    assert_eq!(manifest.completed_iterations, 30);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("final ranking: c"), "{stdout}");
}

#[test]
fn validation_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let res = listwise(&["simulate", "--n", "5", "--k", "6", "--out", p(&out)]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("subset_size exceeds pool"), "{}", stderr(&res));
    assert!(!out.exists());

    assert_eq!(code(&listwise(&["simulate", "--n", "10", "--strategy", "greedy", "--out", p(&out)])), 2);
    assert_eq!(code(&listwise(&["simulate", "--n", "10", "--utility-gen", "zipf:2", "--out", p(&out)])), 2);
    assert_eq!(code(&listwise(&["simulate", "--n", "10"])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&listwise(&["run", "--pool", p(&missing), "--judge-cmd", "true", "--out", p(&out)])), 2);
}

#[test]
fn repeated_simulations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec!["simulate", "--n", "20", "--utility-gen", "tiered:tiers=3,gap=2", "--k", "5", "--iters", "8", "--strategy", "qbc", "--seed", "7", "--diagnostics", "--out"]
            .into_iter()
            .map(String::from)
            .chain([p(out).to_string()])
            .collect::<Vec<String>>()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = args(out);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(code(&listwise(&refs)), 0);
    }
    for name in [rundir::METRICS_FILE, rundir::STATES_FILE, rundir::OBSERVATIONS_FILE, rundir::POOL_FILE, rundir::CONFIG_FILE, rundir::DIAGNOSTICS_FILE] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"subset_size": 4, "iterations": 5, "strategy": "variance_topk", "cutoffs": [0.2, 0.5]}"#).unwrap();
    let out = dir.path().join("run");
    let res = Command::new(env!("CARGO_BIN_EXE_listwise"))
        .args(["simulate", "--n", "10", "--config", p(&cfg), "--iters", "3"])
        .env("LISTWISE_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let config = rundir::read_config(&out).unwrap();
    assert_eq!((config.subset_size, config.iterations, config.cutoffs.clone()), (4, 3, vec![0.2, 0.5]));
    let header = fs::read_to_string(out.join(rundir::METRICS_FILE)).unwrap();
    assert!(header.starts_with("iteration,kendall_tau_successive,delta_u,ndcg_20,ndcg_50,"));
}

#[test]
fn external_judge_run_with_reference() {
    let dir = tempfile::tempdir().unwrap();
    let ids = ["kiwi", "apple", "fig", "date", "lime", "pear"];
    let pool = write_pool(dir.path(), &ids);
    let reference = dir.path().join("reference.txt");
    fs::write(&reference, "# best first\napple\ndate\nfig\nkiwi\nlime\npear\n").unwrap();
    let out = dir.path().join("live");
    let judge = script(dir.path(), "lex.py", LEXICOGRAPHIC);
    let res = listwise(&["run", "--pool", p(&pool), "--judge-cmd", &judge, "--k", "4", "--iters", "10", "--strategy", "uniform", "--reference", p(&reference), "--out", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let states = rundir::read_states(&out).unwrap();
    let order: Vec<&str> = states.last().unwrap().ranking().into_iter().map(|i| ids[i]).collect();
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    assert_eq!(order, sorted);
    let header = fs::read_to_string(out.join(rundir::METRICS_FILE)).unwrap();
    assert!(header.lines().next().unwrap().contains("ndcg_10,ndcg_15,ndcg_20,ndcg_25"));
    let log = fs::read_to_string(out.join(rundir::OBSERVATIONS_FILE)).unwrap();
    assert!(log.contains("\"judge_tag\":\"external:python3 "));
}

#[test]
fn malformed_judge_leaves_a_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let pool = write_pool(dir.path(), &["a", "b", "c", "d"]);
    let requests = dir.path().join("requests.jsonl");
    let body = format!(
        "import sys\nfor line in sys.stdin:\n    open({:?}, 'a').write(line)\n    print('{{\"ranking\": [\"a\", \"a\"]}}', flush=True)\n",
        requests.to_string_lossy()
    );
    let judge = script(dir.path(), "bad.py", &body);
    let out = dir.path().join("bad");
    let res = listwise(&["run", "--pool", p(&pool), "--judge-cmd", &judge, "--k", "2", "--iters", "5", "--out", p(&out)]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("duplicate id a"), "{}", stderr(&res));
    assert_eq!(fs::read_to_string(&requests).unwrap().lines().count(), 3);
    let manifest = rundir::read_manifest(&out).unwrap().unwrap();
    assert_eq!(manifest.status, RunStatus::Partial);
    assert_eq!(manifest.completed_iterations, 0);
    assert!(manifest.error.unwrap().contains("3 attempt"));
    assert_eq!(fs::read_to_string(out.join(rundir::OBSERVATIONS_FILE)).unwrap(), "");
}

fn state_file(dir: &Path, u: Vec<f64>) -> PathBuf {
    let n = u.len();
    let state = UtilityState {
        iteration: 1,
        u,
        sigma2: vec![1.0; n],
        n_observations: 1,
    };
    let path = dir.join("state.json");
    fs::write(&path, serde_json::to_string(&state).unwrap()).unwrap();
    path
}

#[test]
fn evaluate_against_a_reference() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..20).map(|i| format!("x{i:02}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let pool = write_pool(dir.path(), &id_refs);
    let reference = dir.path().join("ref.json");
    fs::write(&reference, serde_json::to_string(&ids).unwrap()).unwrap();
    let csv = dir.path().join("scores.csv");

    let agree = state_file(dir.path(), (0..20).map(|i| -(i as f64)).collect());
    let res = listwise(&["evaluate", "--state", p(&agree), "--pool", p(&pool), "--reference", p(&reference), "--csv", p(&csv)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "ndcg_10,ndcg_15,ndcg_20,ndcg_25,kendall_tau_vs_reference\n1.000000,1.000000,1.000000,1.000000,1.000000\n"
    );

    let reversed = state_file(dir.path(), (0..20).map(|i| i as f64).collect());
    let res = listwise(&["evaluate", "--state", p(&reversed), "--pool", p(&pool), "--reference", p(&reference), "--cutoffs", "10", "--csv", p(&csv)]);
    assert_eq!(code(&res), 0);
    assert_eq!(fs::read_to_string(&csv).unwrap(), "ndcg_10,kendall_tau_vs_reference\n0.000000,-1.000000\n");

    let short = dir.path().join("short.txt");
    fs::write(&short, ids[..18].join("\n") + "\nghost\n").unwrap();
    let res = listwise(&["evaluate", "--state", p(&agree), "--pool", p(&pool), "--reference", p(&short)]);
    assert_eq!(code(&res), 1);
    let err = stderr(&res);
    assert!(err.contains("x18") && err.contains("x19") && err.contains("ghost"), "{err}");
}

#[test]
fn replay_audits_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&listwise(&["simulate", "--n", "12", "--k", "4", "--iters", "10", "--strategy", "mckg", "--out", p(&out)])), 0);
    let res = listwise(&["replay", "--run", p(&out)]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert!(String::from_utf8_lossy(&res.stdout).contains("max deviation 0e0"));
    assert_eq!(code(&listwise(&["replay", "--run", p(&out), "--iters", "4"])), 0);
    assert_eq!(code(&listwise(&["replay", "--run", p(&out), "--iters", "11"])), 2);

    let log_path = out.join(rundir::OBSERVATIONS_FILE);
    let original = fs::read(&log_path).unwrap();
    let mut tampered = original.clone();
    let at = original.iter().position(|&b| b == b'\n').unwrap() + 30;
    tampered[at] ^= 0x04;
    fs::write(&log_path, &tampered).unwrap();
    let res = listwise(&["replay", "--run", p(&out)]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("line(s) 2"), "{}", stderr(&res));

    // Without the manifest the digests are gone, but a reordered ranking
    // still disagrees with the stored states.
    fs::write(&log_path, &original).unwrap();
    fs::remove_file(out.join(rundir::MANIFEST_FILE)).unwrap();
    let text = String::from_utf8(original).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[3]["permutation"].as_array_mut().unwrap().reverse();
    let edited: String = lines.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&log_path, edited).unwrap();
    assert_eq!(code(&listwise(&["replay", "--run", p(&out)])), 1);
}

#[test]
fn report_emits_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    assert_eq!(code(&listwise(&["simulate", "--n", "20", "--k", "5", "--iters", "12", "--out", p(&out)])), 0);
    let res = listwise(&["report", "--run", p(&out), "--svg"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for name in ["ndcg_progression.csv", "convergence.csv", "ndcg_progression.svg", "convergence.svg"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let conv = read_metrics_csv(fs::File::open(out.join("convergence.csv")).unwrap()).unwrap();
    for col in ["kendall_tau_successive", "delta_u"] {
        let v: Vec<f64> = conv.column(col).unwrap().into_iter().flatten().collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0), "{col}");
    }

    // A live run without a reference has no NDCG to plot.
    let pool = write_pool(dir.path(), &["a", "b", "c"]);
    let live = dir.path().join("live");
    let judge = script(dir.path(), "lex.py", LEXICOGRAPHIC);
    assert_eq!(code(&listwise(&["run", "--pool", p(&pool), "--judge-cmd", &judge, "--k", "2", "--iters", "3", "--out", p(&live)])), 0);
    let charts = dir.path().join("charts");
    let res = listwise(&["report", "--run", p(&live), "--out", p(&charts)]);
    assert_eq!(code(&res), 0);
    assert!(stderr(&res).contains("warning"));
    assert!(charts.join("convergence.csv").exists());
    assert!(!charts.join("ndcg_progression.csv").exists());

    assert_eq!(code(&listwise(&["report", "--run", p(&dir.path().join("nothing"))])), 1);
}
