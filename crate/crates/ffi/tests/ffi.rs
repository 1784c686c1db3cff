use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vpbound_ffi::*;

const SMALL: &str = "[grid]\nr_max = 30.0\nn_r = 48\nn_u = 12\nn_mu = 6\n\
[time]\nt_end = 0.2\ndt = 0.05\nsnapshot_stride = 2\n\
[picard]\ntol = 1e-5\n\
[diagnostics]\nchecks = [\"energy\", \"decay_fit\"]\ndecay_window = [10.0, 30.0]\n";

fn last_error() -> String {
    let p = vp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn parse_run_and_read_back() {
    let text = CString::new(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut scn = ptr::null_mut();
        assert_eq!(vp_scenario_parse(text.as_ptr(), &mut scn), VpStatus::Ok);
        let (mut pass, mut fail, mut dev) = (0usize, 0usize, 0usize);
        assert_eq!(
            vp_scenario_clause_counts(scn, &mut pass, &mut fail, &mut dev),
            VpStatus::Ok
        );
        assert!(pass > 0);
        assert_eq!(fail, 0);

        let mut run = ptr::null_mut();
        assert_eq!(vp_run_execute(scn, out_dir.as_ptr(), &mut run), VpStatus::Ok);
        assert!(dir.path().join("diagnostics.csv").exists());
        assert_eq!(vp_run_snapshot_count(run), 3);

        let mut row = VpDiagnosticsRow::default();
        assert_eq!(vp_run_row(run, 2, &mut row), VpStatus::Ok);
        assert!((row.time - 0.2).abs() < 1e-12);
        assert!(row.sup_e > 0.0 && row.picard_iters >= 1);
        assert_eq!(vp_run_row(run, 3, &mut row), VpStatus::OutOfRange);
        assert!(last_error().contains("out of range"));

        let mut norm = 0.0;
        assert_eq!(vp_run_norm(run, 0, 2, &mut norm), VpStatus::Ok);
        assert!(norm > 0.0);
        assert_eq!(vp_run_norm(run, 0, 3, &mut norm), VpStatus::OutOfRange);

        let json = vp_run_summary_json(run);
        assert!(!json.is_null());
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert!(v["checks"]["decay_fit"].is_object());
        vp_string_free(json);

        vp_run_free(run);
        vp_scenario_free(scn);
    }
}

#[test]
fn failures_carry_status_and_message() {
    unsafe {
        let mut scn = ptr::null_mut();
        let bad = CString::new("[time]\ndt = -1.0\n").unwrap();
        assert_eq!(vp_scenario_parse(bad.as_ptr(), &mut scn), VpStatus::Validation);
        assert!(scn.is_null());
        assert!(last_error().contains("time.dt"));

        let missing = CString::new("/nonexistent/vpbound/scenario.toml").unwrap();
        assert_eq!(vp_scenario_load(missing.as_ptr(), &mut scn), VpStatus::Io);

        let mut sel = VpExponents::default();
        assert_eq!(vp_choose_exponents(3.0, &mut sel), VpStatus::Ok);
        assert!((sel.a - 31.0 / 36.0).abs() < 1e-15);
        assert_eq!(vp_choose_exponents(4.2, &mut sel), VpStatus::Numerical);

        let mut v = 0.0;
        assert_eq!(vp_sigma_ugly_integral(2.0, 0.5, &mut v), VpStatus::Ok);
        assert!((v - 16.0).abs() < 1e-9);
        assert_eq!(vp_sigma_ugly_integral(-1.0, 0.5, &mut v), VpStatus::Validation);
        assert_eq!(vp_sigma_ugly_integral(1.0, 0.5, ptr::null_mut()), VpStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vpbound.h")).unwrap();
    for name in [
        "vp_last_error_message",
        "vp_scenario_parse",
        "vp_scenario_load",
        "vp_scenario_free",
        "vp_scenario_clause_counts",
        "vp_run_execute",
        "vp_run_free",
        "vp_run_snapshot_count",
        "vp_run_row",
        "vp_run_norm",
        "vp_run_summary_json",
        "vp_string_free",
        "vp_choose_exponents",
        "vp_sigma_ugly_integral",
        "typedef struct VpScenario VpScenario",
        "VP_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"vpbound.h\"\nint main(void) { VpScenario *s = 0; return (int)vp_scenario_parse(\"\", &s); }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler available; skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
