//! C ABI over the CASCA core.
//!
//! Every fallible function returns a [`CascaStatus`] and writes its result
//! through an out-pointer. On failure a message is kept per thread and can be
//! read with [`casca_last_error`]. Handles are opaque and must be released
//! with their `_free` function.

use casca_core::bus::TopicPattern;
use casca_core::decision::{self, GdsConfig, GdsInput, MdpState, Range, SloObs};
use casca_core::emma::{EmmaData, EmmaError, EnergySource, Granularity};
use casca_core::store::{MemoryStore, QuerySpec, TelemetryPoint};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascaStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// A string argument was not UTF-8.
    InvalidUtf8 = 2,
    /// An argument was rejected; see the last error.
    InvalidArgument = 3,
    /// The requested key has no data.
    NotFound = 4,
    /// The query matched no points; the out value is untouched.
    Empty = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let s = CString::new(msg.to_string().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: CascaStatus, msg: impl std::fmt::Display) -> CascaStatus {
    set_error(msg);
    status
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn casca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

fn guard(f: impl FnOnce() -> CascaStatus) -> CascaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CascaStatus::Internal, "panic inside casca"),
    }
}

/// # Safety
/// `p` is null or a nul-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, CascaStatus> {
    if p.is_null() {
        return Err(fail(CascaStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CascaStatus::InvalidUtf8, "string argument is not UTF-8"))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(CascaStatus::NullArgument, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

// ---- decision math ----

/// Emissions in mg CO2eq per minute for `power_w` watts at `intensity`
/// gCO2eq/kWh.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_carbon_footprint(power_w: f64, intensity: f64, out: *mut f64) -> CascaStatus {
    non_null!(out);
    guard(|| match decision::carbon_footprint(power_w, intensity) {
        Ok(v) => {
            *out = v;
            CascaStatus::Ok
        }
        Err(e) => fail(CascaStatus::InvalidArgument, e),
    })
}

/// 1 when `x` is in `[a, b]`, `-2c` otherwise.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_in(x: f64, a: f64, b: f64, c: f64, out: *mut f64) -> CascaStatus {
    non_null!(out);
    guard(|| match decision::in_fn(x, a, b, c) {
        Ok(v) => {
            *out = v;
            CascaStatus::Ok
        }
        Err(e) => fail(CascaStatus::InvalidArgument, e),
    })
}

/// Reward of a next state with `n` SLOs given as parallel arrays.
///
/// # Safety
/// `values`, `mins` and `maxs` must each hold `n` readable doubles and `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_reward(
    values: *const f64,
    mins: *const f64,
    maxs: *const f64,
    n: usize,
    carbon: f64,
    out: *mut f64,
) -> CascaStatus {
    non_null!(values, mins, maxs, out);
    guard(|| {
        let (v, lo, hi) = (
            std::slice::from_raw_parts(values, n),
            std::slice::from_raw_parts(mins, n),
            std::slice::from_raw_parts(maxs, n),
        );
        let slos = (0..n)
            .map(|i| SloObs {
                id: String::new(),
                range: Range { min: lo[i], max: hi[i] },
                value: v[i],
            })
            .collect();
        let state = MdpState {
            params: vec![],
            slos,
            carbon,
        };
        match decision::reward(&state) {
            Ok(r) => {
                *out = r;
                CascaStatus::Ok
            }
            Err(e) => fail(CascaStatus::InvalidArgument, e),
        }
    })
}

/// One greedy step. `intensity` is only read when `is_carbon` is set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CascaGdsStep {
    pub s: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub p: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// +1 or -1.
    pub lambda: i32,
    pub delta: f64,
    pub is_carbon: bool,
    pub intensity: f64,
}

/// # Safety
/// `step` must point to a valid struct and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_gds_decide(step: *const CascaGdsStep, out: *mut f64) -> CascaStatus {
    non_null!(step, out);
    guard(|| {
        let x = &*step;
        let cfg = GdsConfig {
            slo_id: String::new(),
            param_id: String::new(),
            delta: x.delta,
            lambda: x.lambda,
            is_carbon: x.is_carbon,
        };
        if let Err(e) = cfg.validate() {
            return fail(CascaStatus::InvalidArgument, e);
        }
        let input = GdsInput {
            s: x.s,
            s_min: x.s_min,
            s_max: x.s_max,
            p: x.p,
            p_min: x.p_min,
            p_max: x.p_max,
            intensity: x.is_carbon.then_some(x.intensity),
        };
        *out = decision::gds_decide(&cfg, &input);
        CascaStatus::Ok
    })
}

// ---- topic patterns ----

pub struct CascaPattern(TopicPattern);

/// # Safety
/// `pattern` is a nul-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_pattern_new(pattern: *const c_char, out: *mut *mut CascaPattern) -> CascaStatus {
    non_null!(out);
    guard(|| {
        let p = try_status!(text(pattern));
        match TopicPattern::parse(p) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(CascaPattern(p)));
                CascaStatus::Ok
            }
            Err(e) => fail(CascaStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `pattern` comes from [`casca_pattern_new`]; `topic` is a nul-terminated
/// string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_pattern_matches(
    pattern: *const CascaPattern,
    topic: *const c_char,
    out: *mut bool,
) -> CascaStatus {
    non_null!(pattern, out);
    guard(|| {
        let t = try_status!(text(topic));
        *out = (*pattern).0.matches(t);
        CascaStatus::Ok
    })
}

/// # Safety
/// `pattern` is null or comes from [`casca_pattern_new`] and is not used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn casca_pattern_free(pattern: *mut CascaPattern) {
    if !pattern.is_null() {
        drop(Box::from_raw(pattern));
    }
}

// ---- telemetry store ----

pub struct CascaStore(MemoryStore);

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_store_new(out: *mut *mut CascaStore) -> CascaStatus {
    non_null!(out);
    guard(|| {
        *out = Box::into_raw(Box::new(CascaStore(MemoryStore::new())));
        CascaStatus::Ok
    })
}

/// Writes one point given in its JSON wire form
/// (`{"m": ..., "tg": {...}, "f": {...}, "ts": ...}`).
///
/// # Safety
/// `store` comes from [`casca_store_new`]; `point_json` is a nul-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn casca_store_write(store: *const CascaStore, point_json: *const c_char) -> CascaStatus {
    non_null!(store);
    guard(|| {
        let j = try_status!(text(point_json));
        let point: TelemetryPoint = match serde_json::from_str(j) {
            Ok(p) => p,
            Err(e) => return fail(CascaStatus::InvalidArgument, e),
        };
        match (*store).0.write(point) {
            Ok(()) => CascaStatus::Ok,
            Err(e) => fail(CascaStatus::InvalidArgument, e),
        }
    })
}

/// Evaluates a query such as `mean(fps.value, 60s)` at `now_ms`. Returns
/// [`CascaStatus::Empty`] when the window holds no matching points.
///
/// # Safety
/// `store` comes from [`casca_store_new`]; `query` is a nul-terminated
/// string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_store_query(
    store: *const CascaStore,
    query: *const c_char,
    now_ms: i64,
    out: *mut f64,
) -> CascaStatus {
    non_null!(store, out);
    guard(|| {
        let q = try_status!(text(query));
        let q = match QuerySpec::parse(q) {
            Ok(q) => q,
            Err(e) => return fail(CascaStatus::InvalidArgument, e),
        };
        match (*store).0.query(&q, now_ms) {
            Some(v) => {
                *out = v;
                CascaStatus::Ok
            }
            None => CascaStatus::Empty,
        }
    })
}

/// Number of stored points, 0 for a null handle.
///
/// # Safety
/// `store` is null or comes from [`casca_store_new`].
#[no_mangle]
pub unsafe extern "C" fn casca_store_len(store: *const CascaStore) -> usize {
    if store.is_null() {
        return 0;
    }
    (*store).0.len()
}

/// # Safety
/// `store` is null or comes from [`casca_store_new`] and is not used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn casca_store_free(store: *mut CascaStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

// ---- energy-mix data ----

pub struct CascaEmma(EmmaData);

fn emma_status(e: &EmmaError) -> CascaStatus {
    match e {
        EmmaError::Io(_) => CascaStatus::Io,
        EmmaError::UnknownCountry(_) | EmmaError::OutOfRange { .. } => CascaStatus::NotFound,
        _ => CascaStatus::InvalidArgument,
    }
}

/// Loads the source table and location dataset CSV files.
///
/// # Safety
/// Both paths are nul-terminated strings; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_emma_load(
    sources_csv: *const c_char,
    locations_csv: *const c_char,
    out: *mut *mut CascaEmma,
) -> CascaStatus {
    non_null!(out);
    guard(|| {
        let s = try_status!(text(sources_csv));
        let l = try_status!(text(locations_csv));
        match EmmaData::load(s, l) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(CascaEmma(d)));
                CascaStatus::Ok
            }
            Err(e) => fail(emma_status(&e), e),
        }
    })
}

/// Intensity of the latest record at or before `ts_ms`; `granularity` is
/// `hourly`, `daily`, `monthly` or `yearly`.
///
/// # Safety
/// `emma` comes from [`casca_emma_load`]; strings are nul-terminated; `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_emma_location_intensity(
    emma: *const CascaEmma,
    country: *const c_char,
    ts_ms: i64,
    granularity: *const c_char,
    out: *mut f64,
) -> CascaStatus {
    non_null!(emma, out);
    guard(|| {
        let c = try_status!(text(country));
        let g: Granularity = match try_status!(text(granularity)).parse() {
            Ok(g) => g,
            Err(e) => return fail(CascaStatus::InvalidArgument, e),
        };
        match (*emma).0.locations.location_intensity(c, ts_ms, g) {
            Ok(v) => {
                *out = v;
                CascaStatus::Ok
            }
            Err(e) => fail(emma_status(&e), e),
        }
    })
}

/// Lifecycle intensity of one energy source, e.g. `wind`.
///
/// # Safety
/// `emma` comes from [`casca_emma_load`]; `source` is nul-terminated; `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn casca_emma_source_intensity(
    emma: *const CascaEmma,
    source: *const c_char,
    out: *mut f64,
) -> CascaStatus {
    non_null!(emma, out);
    guard(|| {
        let s: EnergySource = match try_status!(text(source)).parse() {
            Ok(s) => s,
            Err(e) => return fail(CascaStatus::InvalidArgument, e),
        };
        match (*emma).0.sources.get(s) {
            Some(v) => {
                *out = v;
                CascaStatus::Ok
            }
            None => fail(CascaStatus::NotFound, format!("no intensity for {s}")),
        }
    })
}

/// # Safety
/// `emma` is null or comes from [`casca_emma_load`] and is not used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn casca_emma_free(emma: *mut CascaEmma) {
    if !emma.is_null() {
        drop(Box::from_raw(emma));
    }
}
