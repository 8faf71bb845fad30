use std::fs;
use std::path::Path;
use std::process::Command;

use cascade_qed::scenario::CATALOG;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cascade-qed"));
    c.env_remove("CASCADE_QED_THREADS");
    c
}

fn scenario_path(name: &str) -> String {
    format!("{}/scenarios/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn run(file: &str, out: &Path) -> std::process::Output {
    bin().arg("run").arg(file).arg("--out").arg(out).output().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn list_is_stable_and_complete() {
    let a = bin().arg("list").output().unwrap();
    let b = bin().arg("list").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), CATALOG.len());
    assert!(!text.contains("INVALID"));
}

#[test]
fn every_catalog_file_validates_on_disk() {
    for (name, _) in CATALOG {
        let out = bin().arg("validate").arg(scenario_path(name)).output().unwrap();
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["emission_profiles", "spectrum_empty_cavity", "photoionization_synthetic"] {
        let (a, b) = (tmp.path().join(format!("{name}-a")), tmp.path().join(format!("{name}-b")));
        assert!(run(&scenario_path(name), &a).status.success());
        assert!(run(&scenario_path(name), &b).status.success());
        let (ma, mb) = (manifest(&a), manifest(&b));
        assert_eq!(ma["outputs"], mb["outputs"], "{name}");
        for entry in ma["outputs"].as_array().unwrap() {
            let file = entry["file"].as_str().unwrap();
            assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{name}/{file}");
        }
    }
}

#[test]
fn stirap_run_transfers_to_g() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&scenario_path("stirap"), tmp.path());
    assert!(out.status.success());
    let text = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "P_g").unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(last[col] > 0.95, "{}", last[col]);
    let m = manifest(tmp.path());
    assert_eq!(m["task"], "pulse");
    assert_eq!(m["scenario"], "stirap");
}

#[test]
fn digest_tracks_input_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(scenario_path("spectrum_empty_cavity")).unwrap();
    let a = tmp.path().join("a.json");
    let b = tmp.path().join("b.json");
    fs::write(&a, &src).unwrap();
    fs::write(&b, format!("{src} ")).unwrap();
    assert!(run(a.to_str().unwrap(), &tmp.path().join("outa")).status.success());
    assert!(run(a.to_str().unwrap(), &tmp.path().join("outa2")).status.success());
    assert!(run(b.to_str().unwrap(), &tmp.path().join("outb")).status.success());
    let da = &manifest(&tmp.path().join("outa"))["input_digest"];
    assert_eq!(da, &manifest(&tmp.path().join("outa2"))["input_digest"]);
    assert_ne!(da, &manifest(&tmp.path().join("outb"))["input_digest"]);
}

#[test]
fn validation_errors_exit_one_with_pointer() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(scenario_path("stirap")).unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, src.replace("\"kappa_u\": 1e-10", "\"kappa_u\": -1.0")).unwrap();
    for sub in ["validate", "run"] {
        let out = bin().arg(sub).arg(&bad).output().unwrap();
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("/params/kappa_u"));
    }
    let out = bin().arg("validate").arg(tmp.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(scenario_path("spectrum_empty_cavity")).unwrap();
    let short = tmp.path().join("short.json");
    fs::write(&short, src.replace("\"stop\": 20000.0", "\"stop\": 2000.0")).unwrap();
    let out = run(short.to_str().unwrap(), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extend the tau window"));
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_path("steady_detuning_lower_off");
    let one = tmp.path().join("one");
    let many = tmp.path().join("many");
    assert!(bin().args(["run", &file, "--threads", "1", "--out"]).arg(&one).output().unwrap().status.success());
    assert!(bin().args(["run", &file, "--out"]).arg(&many).env("CASCADE_QED_THREADS", "4").output().unwrap().status.success());
    assert_eq!(fs::read(one.join("sweep.csv")).unwrap(), fs::read(many.join("sweep.csv")).unwrap());
    assert_eq!(manifest(&one)["threads"], 1);
    assert_eq!(manifest(&many)["threads"], 4);
}
