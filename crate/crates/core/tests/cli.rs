use std::path::Path;
use std::process::{Command, Output};

use wildflow::construct::Subsolution;
use wildflow::verify::{FieldGrid, VerificationReport};

fn wildflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wildflow")).args(args).current_dir(cwd).env("WILDFLOW_THREADS", "1").output().expect("binary runs")
}

#[test]
fn geometry_suite_catches_radius_bug() {
    let dir = tempfile::tempdir().unwrap();
    let ok = wildflow(&["geometry", "--samples", "50"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = wildflow(&["geometry", "--samples", "50", "--inject-radius-bug"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("t4_cone_singularity"));
}

#[test]
fn zero_rounds_construct_verify_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let c = wildflow(&["construct", "--rounds", "0", "--out", out_s, "--z", "0.2,-0.4"], dir.path());
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    for f in ["round_0.json", "log.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join("round_1.json").exists());
    let text = std::fs::read_to_string(out.join("round_0.json")).unwrap();
    let sub = Subsolution::from_json(&text).unwrap();
    assert!(sub.patches.is_empty());
    assert_eq!(sub.config.z, [0.2, -0.4]);
    assert_eq!(sub.to_json(), text);
    assert!(std::fs::read_to_string(out.join("config.toml")).unwrap().contains("z = [0.2, -0.4]"));

    let v = wildflow(
        &["verify", out.join("round_0.json").to_str().unwrap(), "--out", out_s, "--grid", "16,8", "--tolerance", "trace=1e-7", "--render"],
        dir.path(),
    );
    assert_eq!(v.status.code(), Some(0), "{}", String::from_utf8_lossy(&v.stdout));
    let report: VerificationReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report.passed());
    assert_eq!((report.n, report.m), (16, 8));
    let grid = FieldGrid::load(&out.join("field.wfg")).unwrap();
    assert_eq!((grid.n, grid.m), (16, 8));

    let g = wildflow(&["verify", out.join("field.wfg").to_str().unwrap(), "--out", out_s], dir.path());
    assert!(g.status.success());
    assert!(String::from_utf8_lossy(&g.stdout).contains("provenance"));

    let r = wildflow(&["report", out_s], dir.path());
    assert!(r.status.success());
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("round,frequency") && text.contains("check,value,tolerance,pass"));
}

#[test]
fn config_file_and_bad_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "out = \"from_file\"\n[construction]\nrounds = 0\n").unwrap();
    let c = wildflow(&["construct", "--config", "run.toml"], dir.path());
    assert!(c.status.success());
    assert!(dir.path().join("from_file/round_0.json").exists());

    assert_eq!(wildflow(&["construct", "--rounds", "0", "--grid", "16,7"], dir.path()).status.code(), Some(2));
    assert_eq!(wildflow(&["construct", "--rounds", "0", "--tolerance", "nope=1"], dir.path()).status.code(), Some(2));
    assert_eq!(wildflow(&["construct", "--rounds", "0", "--z", "0.9,0.9"], dir.path()).status.code(), Some(2));
}

#[test]
fn t4_and_wave_print_json() {
    let dir = tempfile::tempdir().unwrap();
    let t = wildflow(&["t4"], dir.path());
    assert!(t.status.success());
    let v: serde_json::Value = serde_json::from_slice(&t.stdout).unwrap();
    assert_eq!(v["corners"].as_array().unwrap().len(), 4);
    let w = wildflow(&["wave", "--frequency", "16"], dir.path());
    assert!(w.status.success());
    let v: serde_json::Value = serde_json::from_slice(&w.stdout).unwrap();
    assert_eq!(v["frequency"], 16);
}
