use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use trp_ffi::*;

const TICKERS: [&str; 4] = ["AAA", "BBB", "XLK", "DDD"];
const RETURNS: [[f64; 5]; 4] = [
    [0.010, -0.020, 0.015, 0.003, -0.008],
    [0.012, -0.018, 0.011, 0.004, -0.010],
    [-0.004, 0.010, -0.012, 0.006, 0.002],
    [0.002, -0.001, 0.004, -0.003, 0.005],
];

fn panel() -> *mut TrpPanel {
    let names: Vec<CString> = TICKERS.iter().map(|t| CString::new(*t).unwrap()).collect();
    let ptrs: Vec<*const std::ffi::c_char> = names.iter().map(|c| c.as_ptr()).collect();
    let flat: Vec<f64> = RETURNS.iter().flatten().copied().collect();
    let mut out = ptr::null_mut();
    let st = unsafe { trp_panel_new(ptrs.as_ptr(), 4, flat.as_ptr(), 5, &mut out) };
    assert_eq!(st, TrpStatus::Ok);
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(trp_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn allocate_round_trip_matches_core() {
    let p = panel();
    assert_eq!(unsafe { trp_panel_n_assets(p) }, 4);
    assert_eq!(unsafe { trp_panel_n_periods(p) }, 5);
    let signals = [0.8, -0.3, 0.5, -0.9];
    let mut cfg = trp_config_default();
    cfg.rho = 0.3;
    cfg.leverage = 2.0;
    let mut alloc = ptr::null_mut();
    assert_eq!(
        unsafe { trp_allocate(p, signals.as_ptr(), 4, &cfg, &mut alloc) },
        TrpStatus::Ok
    );
    let mut w = [0.0; 4];
    let mut g = [0.0; 4];
    unsafe {
        assert_eq!(trp_allocation_n_assets(alloc), 4);
        assert_eq!(trp_allocation_weights(alloc, w.as_mut_ptr(), 4), TrpStatus::Ok);
        assert_eq!(trp_allocation_g_factors(alloc, g.as_mut_ptr(), 4), TrpStatus::Ok);
        assert_eq!(trp_allocation_diagnostic(alloc), TrpDiagnostic::None);
        assert_eq!(CStr::from_ptr(trp_allocation_topology_hash(alloc)).to_bytes().len(), 16);
    }
    let rows: Vec<Vec<f64>> = RETURNS.iter().map(|r| r.to_vec()).collect();
    let core_panel = trp_core::ReturnsPanel::from_rows(&TICKERS, &rows).unwrap();
    let core_cfg = trp_core::TrpConfig {
        rho: 0.3,
        leverage: 2.0,
        ..Default::default()
    };
    let expect = trp_core::allocate(
        &core_panel,
        &trp_core::SignalVector::new(signals.to_vec()).unwrap(),
        &core_cfg,
        trp_core::Variant::MstRooted,
    )
    .unwrap();
    assert_eq!(&w[..], expect.portfolio.weights());
    assert!((w.iter().map(|x| x.abs()).sum::<f64>() - 2.0).abs() < 1e-12);
    assert!(g.iter().all(|x| *x > 0.0 && *x <= 1.0));

    let mut small = [0.0; 2];
    assert_eq!(
        unsafe { trp_allocation_weights(alloc, small.as_mut_ptr(), 2) },
        TrpStatus::BufferTooSmall
    );
    unsafe {
        trp_allocation_free(alloc);
        trp_panel_free(p);
    }
}

#[test]
fn sector_variant_and_empty_active_set() {
    let p = panel();
    let mut cfg = trp_config_default();
    cfg.variant = TrpVariant::SectorAnchored;
    cfg.neutralize = true;
    let mut alloc = ptr::null_mut();
    let signals = [0.4, 0.2, -0.3, 0.1];
    assert_eq!(
        unsafe { trp_allocate(p, signals.as_ptr(), 4, &cfg, &mut alloc) },
        TrpStatus::Ok
    );
    unsafe { trp_allocation_free(alloc) };

    let tiny = [0.0, 1e-5, 0.0, 0.0];
    let mut alloc = ptr::null_mut();
    assert_eq!(
        unsafe { trp_allocate(p, tiny.as_ptr(), 4, &cfg, &mut alloc) },
        TrpStatus::Ok
    );
    let mut w = [1.0; 4];
    unsafe {
        assert_eq!(trp_allocation_diagnostic(alloc), TrpDiagnostic::EmptyActiveSet);
        assert!(trp_allocation_topology_hash(alloc).is_null());
        trp_allocation_weights(alloc, w.as_mut_ptr(), 4);
        trp_allocation_free(alloc);
        trp_panel_free(p);
    }
    assert_eq!(w, [0.0; 4]);
}

#[test]
fn errors_map_to_status_codes() {
    let p = panel();
    let mut alloc = ptr::null_mut();
    let signals = [0.1; 4];
    let mut cfg = trp_config_default();
    assert_eq!(
        unsafe { trp_allocate(ptr::null(), signals.as_ptr(), 4, &cfg, &mut alloc) },
        TrpStatus::NullPointer
    );
    assert!(last_error().contains("panel"));
    assert_eq!(
        unsafe { trp_allocate(p, signals.as_ptr(), 3, &cfg, &mut alloc) },
        TrpStatus::InvalidArgument
    );
    cfg.rho = 2.0;
    assert_eq!(
        unsafe { trp_allocate(p, signals.as_ptr(), 4, &cfg, &mut alloc) },
        TrpStatus::InvalidConfig
    );
    assert!(last_error().contains("rho"));
    assert!(alloc.is_null());

    let path = CString::new("/definitely/not/here.csv").unwrap();
    let mut q = ptr::null_mut();
    assert_eq!(unsafe { trp_panel_load_csv(path.as_ptr(), &mut q) }, TrpStatus::Io);

    let dup: Vec<CString> = ["A", "A"].iter().map(|t| CString::new(*t).unwrap()).collect();
    let ptrs: Vec<_> = dup.iter().map(|c| c.as_ptr()).collect();
    let data = [0.1, 0.2, 0.3, 0.4];
    assert_eq!(
        unsafe { trp_panel_new(ptrs.as_ptr(), 2, data.as_ptr(), 2, &mut q) },
        TrpStatus::Parse
    );
    unsafe {
        trp_panel_free(p);
        trp_panel_free(ptr::null_mut());
        trp_allocation_free(ptr::null_mut());
    }
}

#[test]
fn load_csv_and_scalars() {
    let dir = tempfile_dir("csv");
    let file = dir.join("r.csv");
    std::fs::write(&file, "A,B,C\n0.01,0.02,-0.01\n-0.02,-0.01,0.02\n0.015,0.01,0.0\n").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { trp_panel_load_csv(path.as_ptr(), &mut p) }, TrpStatus::Ok);
    assert_eq!(unsafe { trp_panel_n_assets(p) }, 3);
    unsafe { trp_panel_free(p) };
    std::fs::remove_dir_all(dir).unwrap();

    assert_eq!(trp_alpha(4, 0.5), 0.625);
    assert_eq!(trp_alpha(1, 0.9), 1.0);
    let v = unsafe { CStr::from_ptr(trp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn tempfile_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("trp-ffi-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "trp.h"

int main(void) {
    const char *tickers[3] = {"A", "B", "C"};
    double returns[9] = {0.01, -0.02, 0.015, 0.012, -0.018, 0.011, -0.004, 0.010, -0.012};
    double signals[3] = {0.5, -0.25, 0.25};
    TrpPanel *panel = NULL;
    TrpAllocation *alloc = NULL;
    if (trp_panel_new(tickers, 3, returns, 3, &panel) != TRP_STATUS_OK) return 10;
    TrpConfigC cfg = trp_config_default();
    cfg.rho = 0.0;
    if (trp_allocate(panel, signals, 3, &cfg, &alloc) != TRP_STATUS_OK) return 11;
    double w[3];
    if (trp_allocation_weights(alloc, w, 3) != TRP_STATUS_OK) return 12;
    if (fabs(w[0] - 0.5) > 1e-12 || fabs(w[1] + 0.25) > 1e-12) return 13;
    printf("%s %.3f %.3f %.3f\n", trp_allocation_topology_hash(alloc), w[0], w[1], w[2]);
    trp_allocation_free(alloc);
    trp_panel_free(panel);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libtrp_ffi.a");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("no C toolchain or static library; skipping");
        return;
    }
    let dir = tempfile_dir("c");
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    let bin = dir.join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let out = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.trim_end().ends_with("0.500 -0.250 0.250"), "{text}");
    std::fs::remove_dir_all(dir).unwrap();
}
