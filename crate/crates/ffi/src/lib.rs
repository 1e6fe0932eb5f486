//! C ABI for dpforge.
//!
//! Objects cross the boundary as opaque handles created by `*_new`, `*_load`
//! or `*_parse` functions and released with the matching `*_free`. Every
//! fallible function returns a [`DpfStatus`]; on failure the message is
//! available from [`dpf_last_error`] on the same thread. Strings returned to
//! the caller are owned by the caller and must be released with
//! [`dpf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dpforge::agent::compute_feedback;
use dpforge::cache::StrategyCache;
use dpforge::cli::run_with;
use dpforge::config::RunConfig;
use dpforge::corpus::{load_dataset, save_dataset, Dataset};
use dpforge::operators::{apply_team, OperatorConfig, OperatorContext};
use dpforge::strategy::{enumerate_space, parse_strategy, Strategy};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Runtime = 6,
    Panic = 7,
}

/// A loaded dataset.
pub struct DpfDataset(Dataset);

/// A processing strategy.
pub struct DpfStrategy(Strategy);

/// Operator clients plus an optional strategy cache.
pub struct DpfEngine {
    ctx: OperatorContext,
    cache: Option<StrategyCache>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg.into()));
}

struct Failure(DpfStatus, String);

impl Failure {
    fn new(status: DpfStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DpfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DpfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(DpfStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(DpfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(DpfStatus::NullPointer, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(DpfStatus::NullPointer, format!("{name} is null")));
    }
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn dpf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Free with
/// `dpf_string_free`.
#[no_mangle]
pub extern "C" fn dpf_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().clone()).map_or(ptr::null_mut(), to_c_string)
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dpf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of strategies in the search space.
#[no_mangle]
pub extern "C" fn dpf_strategy_count() -> usize {
    enumerate_space().len()
}

/// The `index`-th strategy in enumeration order.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_strategy_at(index: usize, out: *mut *mut DpfStrategy) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let f = enumerate_space()
            .into_iter()
            .nth(index)
            .ok_or_else(|| Failure::new(DpfStatus::InvalidArgument, format!("index {index} out of range")))?;
        *out = Box::into_raw(Box::new(DpfStrategy(f)));
        Ok(())
    })
}

/// Parses a strategy such as `"Cleaning -> Selection"` or `"NONE"`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_strategy_parse(text: *const c_char, out: *mut *mut DpfStrategy) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let f = parse_strategy(text).map_err(|e| Failure::new(DpfStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(DpfStrategy(f)));
        Ok(())
    })
}

/// Canonical text of a strategy, or NULL if `s` is NULL.
///
/// # Safety
/// `s` must be a live strategy handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dpf_strategy_to_string(s: *const DpfStrategy) -> *mut c_char {
    s.as_ref().map_or(ptr::null_mut(), |s| to_c_string(s.0.to_string()))
}

/// Number of teams in a strategy (0 for NULL).
///
/// # Safety
/// `s` must be a live strategy handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dpf_strategy_len(s: *const DpfStrategy) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dpf_strategy_free(s: *mut DpfStrategy) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Loads a JSONL dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_dataset_load(path: *const c_char, out: *mut *mut DpfDataset) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let d = load_dataset(path).map_err(|e| Failure::new(DpfStatus::Io, e))?;
        *out = Box::into_raw(Box::new(DpfDataset(d)));
        Ok(())
    })
}

/// Writes a dataset as canonical JSONL.
///
/// # Safety
/// `d` must be a live dataset handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dpf_dataset_save(d: *const DpfDataset, path: *const c_char) -> DpfStatus {
    guard(|| {
        let d = ref_arg(d, "dataset")?;
        let path = str_arg(path, "path")?;
        save_dataset(&d.0, path).map_err(|e| Failure::new(DpfStatus::Io, e))
    })
}

/// Number of samples (0 for NULL).
///
/// # Safety
/// `d` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dpf_dataset_len(d: *const DpfDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Hex content fingerprint, or NULL if `d` is NULL.
///
/// # Safety
/// `d` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dpf_dataset_fingerprint(d: *const DpfDataset) -> *mut c_char {
    d.as_ref().map_or(ptr::null_mut(), |d| to_c_string(d.0.fingerprint().to_hex()))
}

/// # Safety
/// `d` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dpf_dataset_free(d: *mut DpfDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Engine with built-in clients and default operator settings. `cache_dir`
/// may be NULL to run without a cache.
///
/// # Safety
/// `cache_dir` must be NULL or a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_engine_new(seed: u64, cache_dir: *const c_char, out: *mut *mut DpfEngine) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cache = if cache_dir.is_null() {
            None
        } else {
            let dir = str_arg(cache_dir, "cache_dir")?;
            Some(StrategyCache::open(dir).map_err(|e| Failure::new(DpfStatus::Io, e))?)
        };
        let ctx = OperatorContext::builtin(OperatorConfig::default(), seed);
        *out = Box::into_raw(Box::new(DpfEngine { ctx, cache }));
        Ok(())
    })
}

/// Engine built from a run configuration file, using its clients and cache.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_engine_from_config(config_path: *const c_char, out: *mut *mut DpfEngine) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(config_path, "config_path")?;
        let cfg = RunConfig::load(path).map_err(|e| Failure::new(DpfStatus::Config, e))?;
        let clients = cfg.build_clients().map_err(|e| Failure::new(DpfStatus::Config, e))?;
        let cache = StrategyCache::open(cfg.cache_dir()).map_err(|e| Failure::new(DpfStatus::Io, e))?;
        *out = Box::into_raw(Box::new(DpfEngine { ctx: clients.ctx, cache: Some(cache) }));
        Ok(())
    })
}

/// # Safety
/// `e` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn dpf_engine_free(e: *mut DpfEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Applies `strategy` to `input`, reusing cached prefixes when the engine
/// has a cache. The result is a new dataset handle.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_engine_apply(
    engine: *const DpfEngine,
    strategy: *const DpfStrategy,
    input: *const DpfDataset,
    out: *mut *mut DpfDataset,
) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        let engine = ref_arg(engine, "engine")?;
        let f = &ref_arg(strategy, "strategy")?.0;
        let d = &ref_arg(input, "input")?.0;
        let result = match &engine.cache {
            Some(cache) => cache
                .apply_with_reuse(f, d, &engine.ctx, 0)
                .map_err(|e| Failure::new(DpfStatus::Runtime, e))?
                .dataset,
            None => f.teams().iter().fold(d.clone(), |cur, t| apply_team(*t, &cur, &engine.ctx)),
        };
        *out = Box::into_raw(Box::new(DpfDataset(result)));
        Ok(())
    })
}

/// Runs a full search from a configuration file. `output_dir` may be NULL to
/// use the configured directory. On success `*report_json` receives the run
/// report as JSON; free it with `dpf_string_free`.
///
/// # Safety
/// Strings must be NUL-terminated (or NULL where allowed); `report_json` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_run_search(
    config_path: *const c_char,
    output_dir: *const c_char,
    report_json: *mut *mut c_char,
) -> DpfStatus {
    guard(|| {
        out_arg(report_json, "report_json")?;
        let path = str_arg(config_path, "config_path")?;
        let mut cfg = RunConfig::load(path).map_err(|e| Failure::new(DpfStatus::Config, e))?;
        if !output_dir.is_null() {
            cfg.output_dir = PathBuf::from(str_arg(output_dir, "output_dir")?);
        }
        let clients = cfg.build_clients().map_err(|e| Failure::new(DpfStatus::Config, e))?;
        let outcome = run_with(&cfg, clients).map_err(|e| Failure::new(DpfStatus::Runtime, format!("{e:#}")))?;
        *report_json = to_c_string(outcome.report.to_json());
        Ok(())
    })
}

/// Feedback score `score - baseline`. Both inputs must be finite.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpf_compute_feedback(score: f64, baseline: f64, out: *mut f64) -> DpfStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = compute_feedback(score, baseline).map_err(|e| Failure::new(DpfStatus::InvalidArgument, e))?;
        Ok(())
    })
}
