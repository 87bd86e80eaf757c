use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kirchwell"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/presets").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ZERO: &str = r#"{
    "name": "zero",
    "domain": {"dimension": 1, "extent": [1.0], "gamma1_faces": ["right"], "resolution": [8]},
    "physics": {"a": 2.0, "b": 1.0, "kappa": 1.0, "k_exp": 4.0, "p_c": 1.0, "q_c": 1.0},
    "kernel": {"g0": 1.0, "rate": {"family": "constant", "alpha": 1.0}},
    "stepping": {"dt": 0.01, "t_end": 1.0, "record_every": 10},
    "analysis": {"hypothesis_horizon": 20.0}
}"#;

fn small_in_well() -> String {
    ZERO.replace("\"stepping\"", "\"initial\": {\"u0\": {\"shape\": \"sine\", \"amplitude\": 0.2}}, \"stepping\"")
        .replace("\"t_end\": 1.0, \"record_every\": 10", "\"t_end\": 8.0, \"record_every\": 5")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn zero_data_run_writes_all_zero_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.json", ZERO);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trajectory.csv", "energy.dat", "phi_log_energy.dat", "rho.dat", "decay_report.json", "well_constants.json", "stable_set_report.json", "hypothesis_report.json", "metadata.json", "summary.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("ABORTED").exists());
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols[1..].iter().all(|&v| v == 0.0), "{line}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["quadrature_points_per_direction"], 5);
    assert_eq!(meta["seed"], 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_in_well());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["run", cfg.to_str().unwrap(), "-o", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    assert_eq!(fs::read(a.join("energy.dat")).unwrap(), fs::read(b.join("energy.dat")).unwrap());
}

#[test]
fn csv_uses_fifteen_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_in_well());
    let out = tmp.path().join("o");
    assert!(run(&["run", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.success());
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let e = row.split(',').nth(1).unwrap();
    let mantissa = e.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
    assert_eq!(mantissa.len(), 15, "{e}");
}

#[test]
fn aborted_run_keeps_partial_output_and_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("oow");
    let o = run(&["run", preset("out_of_well").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("aborted"), "{}", stderr(&o));
    let marker = fs::read_to_string(out.join("ABORTED")).unwrap();
    assert!(marker.contains("CFL") || marker.contains("blow-up"), "{marker}");
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn semantic_errors_are_all_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = ZERO.replace("\"dt\": 0.01", "\"dt\": 0").replace("\"p_c\": 1.0", "\"p_c\": 0.0");
    let cfg = write_config(tmp.path(), "bad.json", &bad);
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("stepping.dt must be positive"), "{err}");
    assert!(err.contains("(H1)"), "{err}");
}

#[test]
fn kernel_with_nonpositive_l_is_rejected_citing_h2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "k.json", &ZERO.replace("\"g0\": 1.0", "\"g0\": 3.0"));
    let o = run(&["check-kernel", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(H2)"), "{}", stderr(&o));
}

#[test]
fn check_kernel_passes_shipped_families() {
    for name in ["exp_in_well", "power_law_in_well", "oscillatory_in_well"] {
        let o = run(&["check-kernel", preset(name).to_str().unwrap(), "--horizon", "50"]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["all_passed"], true);
    }
}

#[test]
fn constants_prints_well_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", ZERO);
    let o = run(&["constants", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let (b, l1) = (c["b_omega"].as_f64().unwrap(), c["lambda1"].as_f64().unwrap());
    assert!((l1 - b.powi(-2)).abs() < 1e-12 * l1);
    assert!((c["c_bar_star"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn decay_report_from_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_in_well());
    let out = tmp.path().join("o");
    assert!(run(&["run", cfg.to_str().unwrap(), "-o", out.to_str().unwrap()]).status.success());
    let report = tmp.path().join("decay.json");
    let o = run(&[
        "decay-report",
        out.join("trajectory.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "-o",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fresh: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let from_run: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("decay_report.json")).unwrap()).unwrap();
    let w1 = fresh["omega"]["omega_max"].as_f64().unwrap();
    let w2 = from_run["omega"]["omega_max"].as_f64().unwrap();
    assert!((w1 - w2).abs() <= 1e-12 * w2, "{w1} vs {w2}");
}

#[test]
fn sweep_creates_isolated_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_in_well());
    let root = tmp.path().join("sweep");
    let o = run(&["--threads", "2", "sweep", cfg.to_str().unwrap(), "--amplitudes", "0.05,0.1,0.2", "-o", root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut dirs: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    dirs.sort();
    assert_eq!(dirs, ["amp_00", "amp_01", "amp_02"]);
    let e0 = |d: &str| -> f64 {
        let csv = fs::read_to_string(root.join(d).join("trajectory.csv")).unwrap();
        csv.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(e0("amp_00") < e0("amp_01") && e0("amp_01") < e0("amp_02"));
}

#[test]
fn mms_preset_converges() {
    let o = run(&["mms", preset("mms_ladder").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["levels"].as_array().unwrap().len(), 3);
    assert!(r["min_ratio"].as_f64().unwrap() >= 3.5);
}

#[test]
fn syntax_errors_carry_a_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.json", "{\n  \"domain\": ,\n}");
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}
