//! On-disk layout of a run:
//!
//! ```text
//! config.json         the TournamentConfig
//! pool.json           the candidate pool as used
//! observations.jsonl  one observation per line, ids on disk
//! states.jsonl        prior state, then one state per iteration
//! metrics.csv         per-iteration metrics
//! diagnostics.jsonl   acquisition scores (optional)
//! manifest.json       status, digests, creation time
//! ```
//!
//! Everything except `manifest.json` is a pure function of the inputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::write_metrics_csv;
use crate::model::{decode_observation_log, encode_observation_log, sha256_hex, CandidatePool, RankingObservation, TournamentConfig, UtilityState};
use crate::tournament::RunArtifacts;

pub const CONFIG_FILE: &str = "config.json";
pub const POOL_FILE: &str = "pool.json";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const STATES_FILE: &str = "states.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Partial,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub status: RunStatus,
    pub config_digest: String,
    pub pool_digest: String,
    pub completed_iterations: usize,
    /// SHA-256 of each `observations.jsonl` line (without the newline).
    pub observation_digests: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Writes every run file into `dir`, creating it if needed.
pub fn write_run_dir(dir: &Path, artifacts: &RunArtifacts, pool: &CandidatePool, status: RunStatus, error: Option<String>) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let config_json = artifacts.config.to_json();
    let pool_json = pool.to_json();
    fs::write(dir.join(CONFIG_FILE), &config_json)?;
    fs::write(dir.join(POOL_FILE), &pool_json)?;

    let log = encode_observation_log(&artifacts.observations, pool);
    fs::write(dir.join(OBSERVATIONS_FILE), &log)?;

    let mut states = String::new();
    for s in &artifacts.states {
        states.push_str(&serde_json::to_string(s)?);
        states.push('\n');
    }
    fs::write(dir.join(STATES_FILE), states)?;

    let mut metrics = Vec::new();
    write_metrics_csv(&mut metrics, &artifacts.config.cutoffs, &artifacts.metrics)?;
    fs::write(dir.join(METRICS_FILE), metrics)?;

    if artifacts.config.dump_diagnostics {
        let mut f = fs::File::create(dir.join(DIAGNOSTICS_FILE))?;
        for d in &artifacts.diagnostics {
            writeln!(f, "{}", serde_json::to_string(d)?)?;
        }
    }

    let config_digest = sha256_hex(config_json.as_bytes());
    let pool_digest = sha256_hex(pool_json.as_bytes());
    let run_id = sha256_hex(format!("{config_digest}:{pool_digest}").as_bytes())[..16].to_string();
    let manifest = RunManifest {
        run_id,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        status,
        config_digest,
        pool_digest,
        completed_iterations: artifacts.completed(),
        observation_digests: log.lines().map(|l| sha256_hex(l.as_bytes())).collect(),
        error,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path: PathBuf = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_config(dir: &Path) -> Result<TournamentConfig> {
    Ok(serde_json::from_str(&read(dir, CONFIG_FILE)?)?)
}

pub fn read_pool(dir: &Path) -> Result<CandidatePool> {
    CandidatePool::from_json(&read(dir, POOL_FILE)?)
}

pub fn read_observation_text(dir: &Path) -> Result<String> {
    read(dir, OBSERVATIONS_FILE)
}

pub fn read_observations(dir: &Path, pool: &CandidatePool) -> Result<Vec<RankingObservation>> {
    decode_observation_log(&read_observation_text(dir)?, pool)
}

pub fn read_manifest(dir: &Path) -> Result<Option<RunManifest>> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&read(dir, MANIFEST_FILE)?)?))
}

/// Parses newline-delimited UtilityState records.
pub fn parse_states(text: &str) -> Result<Vec<UtilityState>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_states(dir: &Path) -> Result<Vec<UtilityState>> {
    parse_states(&read(dir, STATES_FILE)?)
}

/// Lines of `observations.jsonl` whose digest differs from the manifest,
/// 1-based. Lines beyond the manifest's count are reported too.
pub fn tampered_lines(manifest: &RunManifest, log_text: &str) -> Vec<usize> {
    log_text
        .lines()
        .enumerate()
        .filter(|(i, line)| manifest.observation_digests.get(*i).map(|d| *d != sha256_hex(line.as_bytes())).unwrap_or(true))
        .map(|(i, _)| i + 1)
        .collect()
}
