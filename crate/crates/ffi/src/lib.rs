//! C ABI for the simulator.
//!
//! The surface is a handle-based API: `fedsim_simulation_new` builds one
//! (strategy, seed) simulation from TOML config text and returns an opaque
//! pointer, the `fedsim_simulation_*` functions drive and inspect it, and
//! `fedsim_simulation_free` releases it. Every function returns a
//! `FedsimStatus`; on any non-OK status a thread-local message is
//! available through `fedsim_last_error_message`. Panics never cross the
//! boundary: they are caught and reported as `FedsimStatus::Panic`.
//!
//! The generated header lands in `include/fedsim.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedsim::config::ExperimentConfig;
use fedsim::runner::{run_experiment, RunOptions};
use fedsim::server::Simulation;

/// Result of every API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedsimStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// The config text was not valid UTF-8, not valid TOML, or failed
    /// validation; the error message names the offending field.
    InvalidConfig = 2,
    /// The simulation itself failed (for example a client diverged), or the
    /// call is not valid in the current state.
    RuntimeError = 3,
    /// A caller-supplied buffer length does not match the required length.
    BufferSizeMismatch = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// Scalar metrics of one completed round.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FedsimRoundMetrics {
    /// Zero-based round index.
    pub round: u64,
    /// Global-model loss on the held-out test split.
    pub test_loss: f64,
    /// Test accuracy; NaN for objectives without one.
    pub test_accuracy: f64,
    /// Fraction of sampled-client gradient pairs in conflict.
    pub conflict_ratio: f64,
    /// Smallest pairwise gradient cosine similarity.
    pub min_similarity: f64,
    /// Number of projections applied by harmonization.
    pub projections_applied: u64,
}

/// Opaque simulation handle. Create with `fedsim_simulation_new`, destroy
/// with `fedsim_simulation_free`. Not thread-safe: drive each handle from
/// one thread at a time.
pub struct FedsimSimulation {
    inner: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let stored = CString::new(message).expect("NUL bytes stripped");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Message for the most recent non-OK status on this thread, or null if the
/// last call succeeded. The pointer stays valid until the next API call on
/// the same thread.
#[no_mangle]
pub extern "C" fn fedsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |message| message.as_ptr())
    })
}

/// Runs `f` with panics converted to `FedsimStatus::Panic` and the
/// thread-local error message kept in sync with the outcome.
fn guarded(f: impl FnOnce() -> FedsimStatus) -> FedsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("internal panic: {message}"));
            FedsimStatus::Panic
        }
    }
}

fn fail(status: FedsimStatus, message: impl Into<String>) -> FedsimStatus {
    set_error(message);
    status
}

/// # Safety
/// `text` must be a valid NUL-terminated string or null.
unsafe fn parse_config_arg(text: *const c_char) -> Result<ExperimentConfig, FedsimStatus> {
    if text.is_null() {
        return Err(fail(FedsimStatus::NullPointer, "config text is null"));
    }
    let text = CStr::from_ptr(text).to_str().map_err(|_| {
        fail(
            FedsimStatus::InvalidConfig,
            "config text is not valid UTF-8",
        )
    })?;
    ExperimentConfig::parse_str(text)
        .map_err(|err| fail(FedsimStatus::InvalidConfig, err.to_string()))
}

/// Builds a simulation for one strategy of the config and one seed, writing
/// the handle to `out`. The seed is explicit rather than taken from the
/// config's seed list so embedders can schedule seeds themselves.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string; `out` must point to
/// writable memory for one pointer. On success `*out` owns the simulation
/// and must be released with `fedsim_simulation_free`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_new(
    config_text: *const c_char,
    strategy_index: usize,
    seed: u64,
    out: *mut *mut FedsimSimulation,
) -> FedsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FedsimStatus::NullPointer, "output handle pointer is null");
        }
        let cfg = match parse_config_arg(config_text) {
            Ok(cfg) => cfg,
            Err(status) => return status,
        };
        if strategy_index >= cfg.strategies.len() {
            return fail(
                FedsimStatus::InvalidConfig,
                format!(
                    "strategy index {strategy_index} out of range: the config defines {} strategies",
                    cfg.strategies.len()
                ),
            );
        }
        match fedsim::runner::build_simulation(&cfg, strategy_index, seed) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FedsimSimulation { inner }));
                FedsimStatus::Ok
            }
            Err(err) => fail(FedsimStatus::RuntimeError, err.to_string()),
        }
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `sim` must be a pointer returned by `fedsim_simulation_new` that has
/// not already been freed.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_free(sim: *mut FedsimSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// # Safety
/// Caller promises `sim` is a live handle or null.
unsafe fn live<'a>(sim: *mut FedsimSimulation) -> Result<&'a mut FedsimSimulation, FedsimStatus> {
    sim.as_mut()
        .ok_or_else(|| fail(FedsimStatus::NullPointer, "simulation handle is null"))
}

/// Runs one communication round.
///
/// # Safety
/// `sim` must be a live handle from `fedsim_simulation_new`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_run_round(sim: *mut FedsimSimulation) -> FedsimStatus {
    guarded(|| {
        let sim = match live(sim) {
            Ok(sim) => sim,
            Err(status) => return status,
        };
        match sim.inner.run_round() {
            Ok(_) => FedsimStatus::Ok,
            Err(err) => fail(FedsimStatus::RuntimeError, err.to_string()),
        }
    })
}

/// Runs all remaining rounds up to the strategy's planned count.
///
/// # Safety
/// `sim` must be a live handle from `fedsim_simulation_new`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_run_all(sim: *mut FedsimSimulation) -> FedsimStatus {
    guarded(|| {
        let sim = match live(sim) {
            Ok(sim) => sim,
            Err(status) => return status,
        };
        match sim.inner.run_to_completion() {
            Ok(()) => FedsimStatus::Ok,
            Err(err) => fail(FedsimStatus::RuntimeError, err.to_string()),
        }
    })
}

/// Writes the number of completed rounds to `out`.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_rounds_completed(
    sim: *mut FedsimSimulation,
    out: *mut usize,
) -> FedsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FedsimStatus::NullPointer, "output pointer is null");
        }
        match live(sim) {
            Ok(sim) => {
                *out = sim.inner.rounds_completed();
                FedsimStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Writes the length of the flat global parameter vector to `out`.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_param_count(
    sim: *mut FedsimSimulation,
    out: *mut usize,
) -> FedsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FedsimStatus::NullPointer, "output pointer is null");
        }
        match live(sim) {
            Ok(sim) => {
                *out = sim.inner.global_params().len();
                FedsimStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Copies the current global parameters into `buffer`. `len` must equal the
/// value reported by `fedsim_simulation_param_count`.
///
/// # Safety
/// `sim` must be a live handle; `buffer` must point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_global_params(
    sim: *mut FedsimSimulation,
    buffer: *mut f64,
    len: usize,
) -> FedsimStatus {
    guarded(|| {
        if buffer.is_null() {
            return fail(FedsimStatus::NullPointer, "parameter buffer is null");
        }
        let sim = match live(sim) {
            Ok(sim) => sim,
            Err(status) => return status,
        };
        let params = sim.inner.global_params().as_slice();
        if params.len() != len {
            return fail(
                FedsimStatus::BufferSizeMismatch,
                format!(
                    "buffer holds {len} values but the model has {}",
                    params.len()
                ),
            );
        }
        ptr::copy_nonoverlapping(params.as_ptr(), buffer, len);
        FedsimStatus::Ok
    })
}

/// Writes the metrics of the most recently completed round to `out`.
/// Fails with `FedsimStatus::RuntimeError` before the first round.
///
/// # Safety
/// `sim` must be a live handle; `out` must point to writable memory for one
/// `FedsimRoundMetrics`.
#[no_mangle]
pub unsafe extern "C" fn fedsim_simulation_last_round_metrics(
    sim: *mut FedsimSimulation,
    out: *mut FedsimRoundMetrics,
) -> FedsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FedsimStatus::NullPointer, "output pointer is null");
        }
        let sim = match live(sim) {
            Ok(sim) => sim,
            Err(status) => return status,
        };
        let Some(record) = sim.inner.history().last() else {
            return fail(FedsimStatus::RuntimeError, "no rounds have completed yet");
        };
        *out = FedsimRoundMetrics {
            round: record.round as u64,
            test_loss: record.test_loss,
            test_accuracy: record.test_accuracy.unwrap_or(f64::NAN),
            conflict_ratio: record.conflict_ratio,
            min_similarity: record.min_similarity,
            projections_applied: record.projections_applied as u64,
        };
        FedsimStatus::Ok
    })
}

/// Runs the full experiment described by the config text, exactly like the
/// CLI `run` subcommand: every (strategy, seed) cell, metrics written under
/// `out_dir` (or the config's `output_dir` when null). Returns OK if at
/// least one cell completed; `FedsimStatus::RuntimeError` if every cell
/// failed.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated string; `out_dir` must be a
/// valid NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn fedsim_run_experiment(
    config_text: *const c_char,
    out_dir: *const c_char,
) -> FedsimStatus {
    guarded(|| {
        let cfg = match parse_config_arg(config_text) {
            Ok(cfg) => cfg,
            Err(status) => return status,
        };
        let out_override = if out_dir.is_null() {
            None
        } else {
            match CStr::from_ptr(out_dir).to_str() {
                Ok(dir) => Some(PathBuf::from(dir)),
                Err(_) => {
                    return fail(
                        FedsimStatus::InvalidConfig,
                        "output directory is not valid UTF-8",
                    )
                }
            }
        };
        let opts = RunOptions {
            out_override,
            seed_override: None,
            quiet: true,
        };
        match run_experiment(&cfg, &opts) {
            Ok(summary) if summary.any_succeeded() => FedsimStatus::Ok,
            Ok(summary) => {
                let first = summary
                    .failures
                    .first()
                    .map(|f| f.error.clone())
                    .unwrap_or_else(|| "no cells ran".to_string());
                fail(
                    FedsimStatus::RuntimeError,
                    format!("every (strategy, seed) cell failed; first error: {first}"),
                )
            }
            Err(err) => fail(FedsimStatus::RuntimeError, err.to_string()),
        }
    })
}
