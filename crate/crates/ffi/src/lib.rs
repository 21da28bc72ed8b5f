//! C ABI over `trp-core`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every fallible call returns a [`TrpStatus`];
//! on failure [`trp_last_error_message`] describes the error for the calling
//! thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trp_core::propagation::{alpha, Allocation, Variant};
use trp_core::{allocate, load_returns, Diagnostic, ReturnsPanel, RootMode, SignalVector, TrpConfig, TrpError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InvalidConfig = 5,
    BufferTooSmall = 6,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrpVariant {
    MstRooted = 0,
    SectorAnchored = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrpRootMode {
    Hub = 0,
    MaxMagnitude = 1,
    /// Root at panel index `root_index`.
    FixedIndex = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrpDiagnostic {
    None = 0,
    EmptyActiveSet = 1,
    DegenerateSignal = 2,
    AllWeightsPruned = 3,
}

/// Allocation settings. `lookback == 0` means the full history; `cap` and
/// `min_weight` apply only when their `has_*` flag is set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TrpConfigC {
    pub variant: TrpVariant,
    pub lookback: usize,
    pub magnitude_threshold: f64,
    pub signal_threshold: f64,
    pub rho: f64,
    pub leverage: f64,
    pub root_mode: TrpRootMode,
    pub root_index: usize,
    pub has_cap: bool,
    pub cap: f64,
    pub has_min_weight: bool,
    pub min_weight: f64,
    pub subtree_exponent: f64,
    pub renormalize: bool,
    pub neutralize: bool,
    pub postprocess_mst: bool,
}

impl TrpConfigC {
    fn to_core(self) -> (TrpConfig, Variant) {
        let cfg = TrpConfig {
            lookback: (self.lookback > 0).then_some(self.lookback),
            magnitude_threshold: self.magnitude_threshold,
            signal_threshold: self.signal_threshold,
            rho: self.rho,
            leverage: self.leverage,
            root_mode: match self.root_mode {
                TrpRootMode::Hub => RootMode::Hub,
                TrpRootMode::MaxMagnitude => RootMode::MaxMagnitude,
                TrpRootMode::FixedIndex => RootMode::FixedIndex(self.root_index),
            },
            cap: self.has_cap.then_some(self.cap),
            min_weight: self.has_min_weight.then_some(self.min_weight),
            subtree_exponent: self.subtree_exponent,
            renormalize_after_postprocess: self.renormalize,
            neutralize_depth_one: self.neutralize,
            postprocess_mst: self.postprocess_mst,
        };
        let variant = match self.variant {
            TrpVariant::MstRooted => Variant::MstRooted,
            TrpVariant::SectorAnchored => Variant::SectorAnchored,
        };
        (cfg, variant)
    }
}

/// Opaque returns panel.
pub struct TrpPanel(ReturnsPanel);

/// Opaque allocation result.
pub struct TrpAllocation {
    alloc: Allocation,
    n_assets: usize,
    hash: Option<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &TrpError) -> TrpStatus {
    match e {
        TrpError::MissingFile(_) | TrpError::Io { .. } => TrpStatus::Io,
        TrpError::ParseError { .. }
        | TrpError::NonFiniteValue { .. }
        | TrpError::InvalidTicker(_)
        | TrpError::DuplicateTicker(_)
        | TrpError::UnknownTicker(_)
        | TrpError::Csv(_)
        | TrpError::Json(_) => TrpStatus::Parse,
        TrpError::InvalidConfig(_)
        | TrpError::LookbackExceedsHistory { .. }
        | TrpError::FixedIndexNotActive(_)
        | TrpError::DegenerateTiers { .. }
        | TrpError::InconsistentLabels(_) => TrpStatus::InvalidConfig,
        _ => TrpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TrpStatus, String)>) -> TrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TrpStatus::Panic
        }
    }
}

fn core_err(e: TrpError) -> (TrpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TrpStatus, String) {
    (TrpStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread. Valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn trp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn trp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Propagation coefficient for a node with `b` children.
#[no_mangle]
pub extern "C" fn trp_alpha(b: usize, rho: f64) -> f64 {
    alpha(b, rho)
}

#[no_mangle]
pub extern "C" fn trp_config_default() -> TrpConfigC {
    let d = TrpConfig::default();
    TrpConfigC {
        variant: TrpVariant::MstRooted,
        lookback: d.lookback.unwrap_or(0),
        magnitude_threshold: d.magnitude_threshold,
        signal_threshold: d.signal_threshold,
        rho: d.rho,
        leverage: d.leverage,
        root_mode: TrpRootMode::Hub,
        root_index: 0,
        has_cap: false,
        cap: 0.0,
        has_min_weight: false,
        min_weight: 0.0,
        subtree_exponent: d.subtree_exponent,
        renormalize: d.renormalize_after_postprocess,
        neutralize: d.neutralize_depth_one,
        postprocess_mst: d.postprocess_mst,
    }
}

/// Builds a panel from `n_assets` NUL-terminated tickers and a row-major
/// `n_assets * n_periods` array of returns.
#[no_mangle]
pub unsafe extern "C" fn trp_panel_new(
    tickers: *const *const c_char,
    n_assets: usize,
    returns: *const f64,
    n_periods: usize,
    out: *mut *mut TrpPanel,
) -> TrpStatus {
    guard(|| {
        if tickers.is_null() {
            return Err(null("tickers"));
        }
        if returns.is_null() {
            return Err(null("returns"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let mut names = Vec::with_capacity(n_assets);
        for i in 0..n_assets {
            let p = *tickers.add(i);
            if p.is_null() {
                return Err(null("ticker"));
            }
            let s = CStr::from_ptr(p)
                .to_str()
                .map_err(|_| (TrpStatus::Parse, format!("ticker {i} is not UTF-8")))?;
            names.push(s.to_owned());
        }
        let data = std::slice::from_raw_parts(returns, n_assets * n_periods);
        let rows: Vec<Vec<f64>> = data.chunks(n_periods.max(1)).map(<[f64]>::to_vec).collect();
        let panel = ReturnsPanel::from_rows(&names, &rows).map_err(core_err)?;
        *out = Box::into_raw(Box::new(TrpPanel(panel)));
        Ok(())
    })
}

/// Loads a wide returns CSV: a header row of tickers, then one row per period.
#[no_mangle]
pub unsafe extern "C" fn trp_panel_load_csv(path: *const c_char, out: *mut *mut TrpPanel) -> TrpStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (TrpStatus::InvalidArgument, "path is not UTF-8".to_owned()))?;
        let panel = load_returns(path).map_err(core_err)?;
        *out = Box::into_raw(Box::new(TrpPanel(panel)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn trp_panel_n_assets(panel: *const TrpPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n_assets())
}

#[no_mangle]
pub unsafe extern "C" fn trp_panel_n_periods(panel: *const TrpPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.0.n_periods())
}

#[no_mangle]
pub unsafe extern "C" fn trp_panel_free(panel: *mut TrpPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Allocates over `panel` with one signal per asset, in panel order. A zero
/// portfolio is a successful result; inspect it with
/// [`trp_allocation_diagnostic`].
#[no_mangle]
pub unsafe extern "C" fn trp_allocate(
    panel: *const TrpPanel,
    signals: *const f64,
    n_signals: usize,
    config: *const TrpConfigC,
    out: *mut *mut TrpAllocation,
) -> TrpStatus {
    guard(|| {
        let panel = &panel.as_ref().ok_or_else(|| null("panel"))?.0;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if signals.is_null() {
            return Err(null("signals"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if n_signals != panel.n_assets() {
            return Err((
                TrpStatus::InvalidArgument,
                format!("{n_signals} signals for {} assets", panel.n_assets()),
            ));
        }
        let s = SignalVector::new(std::slice::from_raw_parts(signals, n_signals).to_vec()).map_err(core_err)?;
        let (cfg, variant) = config.to_core();
        let alloc = allocate(panel, &s, &cfg, variant).map_err(core_err)?;
        let hash = alloc
            .topology_hash
            .as_deref()
            .map(|h| CString::new(h).expect("hex digest"));
        *out = Box::into_raw(Box::new(TrpAllocation {
            alloc,
            n_assets: panel.n_assets(),
            hash,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn trp_allocation_n_assets(alloc: *const TrpAllocation) -> usize {
    alloc.as_ref().map_or(0, |a| a.n_assets)
}

unsafe fn copy_out(
    alloc: *const TrpAllocation,
    out: *mut f64,
    len: usize,
    f: impl Fn(&TrpAllocation) -> Vec<f64>,
) -> TrpStatus {
    guard(|| {
        let a = alloc.as_ref().ok_or_else(|| null("allocation"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < a.n_assets {
            return Err((
                TrpStatus::BufferTooSmall,
                format!("need {} slots, got {len}", a.n_assets),
            ));
        }
        let v = f(a);
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// Copies the final weights, one per panel asset, into `out`.
#[no_mangle]
pub unsafe extern "C" fn trp_allocation_weights(alloc: *const TrpAllocation, out: *mut f64, len: usize) -> TrpStatus {
    copy_out(alloc, out, len, |a| a.alloc.portfolio.weights().to_vec())
}

/// Copies propagation factors into `out`; NaN for assets outside the active set.
#[no_mangle]
pub unsafe extern "C" fn trp_allocation_g_factors(alloc: *const TrpAllocation, out: *mut f64, len: usize) -> TrpStatus {
    copy_out(alloc, out, len, |a| {
        a.alloc
            .asset_factors(a.n_assets)
            .into_iter()
            .map(|g| g.unwrap_or(f64::NAN))
            .collect()
    })
}

/// The first diagnostic raised, or `None`.
#[no_mangle]
pub unsafe extern "C" fn trp_allocation_diagnostic(alloc: *const TrpAllocation) -> TrpDiagnostic {
    match alloc.as_ref().and_then(|a| a.alloc.diagnostics.first()) {
        None => TrpDiagnostic::None,
        Some(Diagnostic::EmptyActiveSet) => TrpDiagnostic::EmptyActiveSet,
        Some(Diagnostic::DegenerateSignal) => TrpDiagnostic::DegenerateSignal,
        Some(Diagnostic::AllWeightsPruned) => TrpDiagnostic::AllWeightsPruned,
    }
}

/// Topology digest, or null when no topology was built. Owned by the allocation.
#[no_mangle]
pub unsafe extern "C" fn trp_allocation_topology_hash(alloc: *const TrpAllocation) -> *const c_char {
    alloc
        .as_ref()
        .and_then(|a| a.hash.as_ref())
        .map_or(ptr::null(), |h| h.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn trp_allocation_free(alloc: *mut TrpAllocation) {
    if !alloc.is_null() {
        drop(Box::from_raw(alloc));
    }
}
