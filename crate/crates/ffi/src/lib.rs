//! C interface to `listwise-core`.
//!
//! Every fallible function returns an [`LwStatus`]; on failure the message
//! is kept per thread and read back with [`lw_last_error`]. Pools and runs
//! cross the boundary as opaque handles released by their `_free`
//! functions. Strings returned by the library are released with
//! [`lw_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use listwise_core::metrics::{self, write_metrics_csv};
use listwise_core::model::{CandidatePool, RankingObservation, TournamentConfig};
use listwise_core::pl::{self, FitOptions};
use listwise_core::rundir::{self, RunStatus};
use listwise_core::synth::{synthetic_pool, UtilityGen};
use listwise_core::tournament::{self, RunArtifacts, RunError};
use listwise_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed input: bad JSON, unknown ids, shape errors.
    InvalidInput = 3,
    InvalidConfig = 4,
    Numerical = 5,
    Judge = 6,
    Io = 7,
    /// The output buffer is shorter than the result.
    BufferTooSmall = 8,
    Panic = 9,
}

/// A candidate pool.
pub struct LwPool(CandidatePool);

/// The artifacts of a finished tournament, together with its pool.
pub struct LwRun {
    artifacts: RunArtifacts,
    pool: CandidatePool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> LwStatus {
    match err {
        Error::UnknownId(_) | Error::Structural(_) | Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => {
            LwStatus::InvalidInput
        }
        Error::Config(_) => LwStatus::InvalidConfig,
        Error::NumericalDivergence { .. } => LwStatus::Numerical,
        Error::Judge(_) => LwStatus::Judge,
        Error::Io(_) => LwStatus::Io,
    }
}

struct Failure(LwStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null_arg(name: &str) -> Failure {
    Failure(LwStatus::NullArgument, format!("{name} is null"))
}

/// Runs `f`, recording any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LwStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(LwStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null_arg(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, capacity: usize, name: &str) -> Result<(), Failure> {
    if capacity < values.len() {
        return Err(Failure(
            LwStatus::BufferTooSmall,
            format!("{name} holds {capacity} values, {} needed", values.len()),
        ));
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null_arg(name));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn observation(ranking: &[usize]) -> Result<RankingObservation, Failure> {
    Ok(RankingObservation::from_ranking(ranking.to_vec())?)
}

/// Splits a flat index array into rankings of the given lengths.
unsafe fn observations_arg(
    indices: *const usize,
    lengths: *const usize,
    count: usize,
) -> Result<Vec<RankingObservation>, Failure> {
    let lengths = slice_arg(lengths, count, "lengths")?;
    let total = lengths.iter().sum();
    let flat = slice_arg(indices, total, "indices")?;
    let mut start = 0;
    lengths
        .iter()
        .map(|&len| {
            let obs = observation(&flat[start..start + len]);
            start += len;
            obs
        })
        .collect()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn lw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a pool from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_pool_from_json(json: *const c_char, out: *mut *mut LwPool) -> LwStatus {
    guard(|| {
        let pool = CandidatePool::from_json(str_arg(json, "json")?)?;
        write_out(out, Box::into_raw(Box::new(LwPool(pool))), "out")
    })
}

/// A synthetic pool of `n` candidates with utilities drawn from `generator`
/// (`normal:sd=1`, `uniform:lo,hi`, `tiered:tiers=3,gap=2`).
///
/// # Safety
/// `generator` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_pool_synthetic(
    n: usize,
    generator: *const c_char,
    seed: u64,
    out: *mut *mut LwPool,
) -> LwStatus {
    guard(|| {
        let gen: UtilityGen = str_arg(generator, "generator")?
            .parse()
            .map_err(|e| Failure(LwStatus::InvalidInput, format!("{e}")))?;
        let pool = synthetic_pool(n, &gen, seed)?;
        write_out(out, Box::into_raw(Box::new(LwPool(pool))), "out")
    })
}

/// Number of candidates, or 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn lw_pool_len(pool: *const LwPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.len())
}

/// Canonical JSON of the pool; release with [`lw_string_free`].
///
/// # Safety
/// `pool` must be a live pool handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_pool_to_json(pool: *const LwPool, out: *mut *mut c_char) -> LwStatus {
    guard(|| {
        let pool = pool.as_ref().ok_or_else(|| null_arg("pool"))?;
        write_out(out, owned_string(pool.0.to_json()), "out")
    })
}

/// # Safety
/// `pool` must be null or a pool handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lw_pool_free(pool: *mut LwPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Runs a tournament against a simulated judge. `config_json` is a
/// configuration object; omitted fields take their defaults and a missing
/// `n_candidates` is taken from the pool. When the pool carries true
/// utilities the run is scored against the true order.
///
/// # Safety
/// `pool` must be a live pool handle, `config_json` a nul-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lw_simulate(pool: *const LwPool, config_json: *const c_char, out: *mut *mut LwRun) -> LwStatus {
    guard(|| {
        let pool = &pool.as_ref().ok_or_else(|| null_arg("pool"))?.0;
        let mut value: serde_json::Value =
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        if let Some(obj) = value.as_object_mut() {
            obj.entry("n_candidates").or_insert_with(|| pool.len().into());
        }
        let config: TournamentConfig = serde_json::from_value(value).map_err(Error::from)?;
        if !config.judge.needs_true_utilities() {
            return Err(Failure(LwStatus::InvalidConfig, "only simulated judges (pl, swap) run here".into()));
        }
        let mut judge = tournament::judge_for(&config, pool)?;
        let truth = pool.true_order();
        let artifacts = match tournament::run(&config, pool, judge.as_mut(), truth.as_deref()) {
            Ok(a) => a,
            Err(RunError::Setup(e)) => return Err(e.into()),
            Err(RunError::Aborted { source, completed, .. }) => {
                let mut f = Failure::from(source);
                f.1 = format!("run aborted after {completed} iteration(s): {}", f.1);
                return Err(f);
            }
        };
        let run = LwRun {
            artifacts,
            pool: pool.clone(),
        };
        write_out(out, Box::into_raw(Box::new(run)), "out")
    })
}

/// Number of completed iterations, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn lw_run_iterations(run: *const LwRun) -> usize {
    run.as_ref().map_or(0, |r| r.artifacts.completed())
}

/// Copies the final utilities into `out[0..n]`.
///
/// # Safety
/// `run` must be a live run handle; `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn lw_run_utilities(run: *const LwRun, out: *mut f64, capacity: usize) -> LwStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null_arg("run"))?;
        copy_out(&run.artifacts.final_state().u, out, capacity, "out")
    })
}

/// Copies the final Laplace variances into `out[0..n]`.
///
/// # Safety
/// As for [`lw_run_utilities`].
#[no_mangle]
pub unsafe extern "C" fn lw_run_variances(run: *const LwRun, out: *mut f64, capacity: usize) -> LwStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null_arg("run"))?;
        copy_out(&run.artifacts.final_state().sigma2, out, capacity, "out")
    })
}

/// The per-iteration metrics as CSV; release with [`lw_string_free`].
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_run_metrics_csv(run: *const LwRun, out: *mut *mut c_char) -> LwStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null_arg("run"))?;
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &run.artifacts.config.cutoffs, &run.artifacts.metrics)?;
        let text = String::from_utf8(buf).expect("csv output is utf-8");
        write_out(out, owned_string(text), "out")
    })
}

/// Writes a complete run directory at `dir`.
///
/// # Safety
/// `run` must be a live run handle; `dir` a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn lw_run_write_dir(run: *const LwRun, dir: *const c_char) -> LwStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null_arg("run"))?;
        let dir = Path::new(str_arg(dir, "dir")?);
        rundir::write_run_dir(dir, &run.artifacts, &run.pool, RunStatus::Completed, None)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a run handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lw_run_free(run: *mut LwRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Plackett-Luce log-likelihood of one ranking of item indices under `u`.
///
/// # Safety
/// `u` must hold `n` doubles, `ranking` `k` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_log_likelihood(
    u: *const f64,
    n: usize,
    ranking: *const usize,
    k: usize,
    out: *mut f64,
) -> LwStatus {
    guard(|| {
        let u = slice_arg(u, n, "u")?;
        let obs = observation(slice_arg(ranking, k, "ranking")?)?;
        write_out(out, pl::log_likelihood(u, &[obs])?, "out")
    })
}

/// Fits utilities and Laplace variances for `n` items to `count` rankings.
/// Ranking `i` occupies the next `lengths[i]` entries of `indices`.
/// `out_u` and `out_sigma2` must each hold `n` doubles.
///
/// # Safety
/// All pointers must be valid for the lengths described above.
#[no_mangle]
pub unsafe extern "C" fn lw_fit(
    n: usize,
    indices: *const usize,
    lengths: *const usize,
    count: usize,
    lambda: f64,
    out_u: *mut f64,
    out_sigma2: *mut f64,
) -> LwStatus {
    guard(|| {
        let observations = observations_arg(indices, lengths, count)?;
        let options = FitOptions {
            lambda,
            ..FitOptions::default()
        };
        let state = pl::fit(&observations, n, None, options)?.state;
        copy_out(&state.u, out_u, n, "out_u")?;
        copy_out(&state.sigma2, out_sigma2, n, "out_sigma2")
    })
}

/// Kendall tau-a between two orderings of the same `n` items.
///
/// # Safety
/// `r1` and `r2` must hold `n` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_kendall_tau(r1: *const usize, r2: *const usize, n: usize, out: *mut f64) -> LwStatus {
    guard(|| {
        let tau = metrics::kendall_tau(slice_arg(r1, n, "r1")?, slice_arg(r2, n, "r2")?)?;
        write_out(out, tau, "out")
    })
}

/// NDCG of `predicted` against `reference` at depth `ceil(p * n)`.
///
/// # Safety
/// `predicted` and `reference` must hold `n` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_ndcg_at(
    predicted: *const usize,
    reference: *const usize,
    n: usize,
    p: f64,
    out: *mut f64,
) -> LwStatus {
    guard(|| {
        let v = metrics::ndcg_at(slice_arg(predicted, n, "predicted")?, slice_arg(reference, n, "reference")?, p)?;
        write_out(out, v, "out")
    })
}
