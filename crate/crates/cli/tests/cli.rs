use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use zulf_core::io::{control_from_table, Table};

fn zulf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zulf"))
        .args(args)
        .env_remove("ZULF_OUT_DIR")
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn zulf")
}

fn repo(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn out_dir(tmp: &tempfile::TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

#[test]
fn xan_lines_for_three_protons() {
    let o = zulf(&["lines", "--xan", "3", "--j-hz", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = Table::from_reader(o.stdout.as_slice()).unwrap();
    let mut f = table.column("freq_hz").unwrap();
    f.sort_by(f64::total_cmp);
    assert_eq!(f.len(), 2);
    assert!((f[0] - 100.0).abs() < 1e-9 && (f[1] - 200.0).abs() < 1e-9, "{f:?}");
}

#[test]
fn lines_needs_a_source() {
    let o = zulf(&["lines"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_continuous_at_zero_field() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = repo("systems/formic_acid.json");
    let mut fids = Vec::new();
    for (name, bz) in [("a", "0"), ("b", "1e-12")] {
        let dir = out_dir(&tmp, name);
        let o = zulf(&[
            "simulate", "--system", &sys, "--points", "512", "--bz-nt", bz, "--out", dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        for f in ["fid.csv", "spectrum.csv", "lines.csv", "summary.json", "manifest.json"] {
            assert!(dir.join(f).exists(), "missing {f}");
        }
        fids.push(Table::read(dir.join("fid.csv")).unwrap().column("value").unwrap());
    }
    let scale = fids[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = fids[0].iter().zip(&fids[1]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff < 1e-6 * scale, "diff {diff} scale {scale}");
}

#[test]
fn grape_output_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = repo("systems/h_p.json");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = out_dir(&tmp, name);
        let o = zulf(&[
            "grape", "--system", &sys, "--target", "pi@H,z", "--seed", "7", "--max-iter", "30", "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        runs.push((
            o.stdout,
            std::fs::read(dir.join("grape.json")).unwrap(),
            std::fs::read(dir.join("control.csv")).unwrap(),
        ));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn control_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "g");
    let o = zulf(&[
        "grape", "--system", &repo("systems/h_p.json"), "--target", "pi@H,z", "--seed", "1", "--max-iter", "5",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("grape.json")).unwrap()).unwrap();
    let control: zulf_core::grape::PiecewiseControl = serde_json::from_value(json["control"].clone()).unwrap();
    let back = control_from_table(&Table::read(dir.join("control.csv")).unwrap(), control.bounds).unwrap();
    assert_eq!(back, control);
}

#[test]
fn manifest_records_input_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "m");
    let sys = repo("systems/formic_acid.json");
    let o = zulf(&["magnetometer", "--nf", "3", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = zulf(&["lines", "--system", &sys, "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "lines");
    let expected = zulf_cli::output::digest(&std::fs::read(&sys).unwrap());
    assert_eq!(m["inputs"][0]["sha256"], expected.as_str());
}

#[test]
fn empty_recipe_writes_only_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = tmp.path().join("empty.json");
    std::fs::write(&recipe, r#"{"stages": []}"#).unwrap();
    let dir = out_dir(&tmp, "out");
    let o = zulf(&["recipe", recipe.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let files: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["manifest.json"]);
}

#[test]
fn unknown_stage_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = tmp.path().join("bad.json");
    std::fs::write(&recipe, r#"{"stages": [{"acquire": {}}, {"teleport": {}}]}"#).unwrap();
    let dir = out_dir(&tmp, "out");
    let o = zulf(&["recipe", recipe.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("teleport") && msg.contains("stage 1"), "{msg}");
    assert!(!dir.exists(), "nothing should run before validation");
}

#[test]
fn stage_order_is_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = tmp.path().join("bad.json");
    std::fs::write(&recipe, r#"{"stages": [{"analyze": {}}]}"#).unwrap();
    let o = zulf(&["recipe", recipe.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("acquire"));
}

#[test]
fn formic_acid_recipe_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "fa");
    let o = zulf(&["recipe", &repo("recipes/formic_acid.json"), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("stage2_analysis.json")).unwrap()).unwrap();
    let peak = a["peak_hz"].as_f64().unwrap();
    let res = a["resolution_hz"].as_f64().unwrap();
    assert!((peak - 222.0).abs() <= res, "peak {peak}");
    let expected = 1.0 / (std::f64::consts::PI * 10.3);
    let w = a["absorption_fwhm_hz"].as_f64().unwrap();
    assert!((w - expected).abs() < 0.1 * expected, "fwhm {w} vs {expected}");
}

#[test]
fn exit_codes_separate_input_and_numerical_errors() {
    let sys = repo("systems/hcf.json");
    let o = zulf(&["compile-gate", "--system", &sys, "--gate", "pi@Q,x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = zulf(&["compile-gate", "--system", &sys, "--gate", "pi@H+F,x", "--max-turns", "1", "--threshold", "0.999999"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = zulf(&["simulate", "--system", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rb_writes_decay_and_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "rb");
    let o = zulf(&[
        "rb", "--system", &repo("systems/formic_acid.json"), "--target", "C", "--ideal", "--depolarizing", "0.02",
        "--k", "4", "--lengths", "0,2,4,8", "--out", dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("fit.json")).unwrap()).unwrap();
    assert!((fit["eps_g"].as_f64().unwrap() - 0.01).abs() < 1e-6);
    assert_eq!(Table::read(dir.join("rb.csv")).unwrap().rows.len(), 4);
}

#[test]
fn detected_recipe_keeps_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = tmp.path().join("detect.json");
    let text = format!(
        r#"{{"system": "{}", "stages": [
            {{"prep": {{}}}},
            {{"program": {{"gate": "pi/2@H,x", "b_ut": 100}}}},
            {{"acquire": {{"points": 4096, "t2": 0.5}}}},
            {{"detect": {{}}}},
            {{"analyze": {{"zerofill": 32768, "peak_range_hz": [100, 400]}}}}
        ]}}"#,
        repo("systems/formic_acid.json")
    );
    std::fs::write(&recipe, text).unwrap();
    let dir = out_dir(&tmp, "out");
    let o = zulf(&["recipe", recipe.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("stage3_detected.csv").exists());
    let a: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("stage4_analysis.json")).unwrap()).unwrap();
    let peak = a["peak_hz"].as_f64().unwrap();
    assert!((peak - 222.0).abs() <= a["resolution_hz"].as_f64().unwrap(), "peak {peak}");
}

#[test]
fn magnetometer_reads_config_section() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sensor.json");
    std::fs::write(&cfg, r#"{"magnetometer": {"r_op": 400.0}}"#).unwrap();
    let a = out_dir(&tmp, "a");
    let b = out_dir(&tmp, "b");
    let c = cfg.to_str().unwrap();
    let run = |dir: &Path, extra: &[&str]| {
        let mut args = vec!["magnetometer", "--freqs", "10,100", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = zulf(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read_to_string(dir.join("response.csv")).unwrap()
    };
    assert_eq!(run(&a, &["--config", c]), run(&b, &["--r-op", "400"]));

    std::fs::write(&cfg, r#"{"magnetometer": {"pump": 1.0}}"#).unwrap();
    let o = zulf(&["magnetometer", "--config", c, "--freqs", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pump"), "{}", stderr(&o));
}

#[test]
fn grape_reports_controllability() {
    let o = zulf(&[
        "grape", "--system", &repo("systems/h_p.json"), "--target", "pi@H,z", "--pieces", "4", "--max-iter", "2",
        "--gamma-tolerance", "1e-3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.get("controllability").is_some(), "{v}");
}

#[test]
fn explicit_ramp_flags_are_accepted() {
    let o = zulf(&[
        "simulate", "--system", &repo("systems/formic_acid.json"), "--state", "adiabatic", "--bp-tesla", "1", "--temp-k",
        "300", "--ramp-ms", "20", "--ramp-steps", "2000", "--points", "1024",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
