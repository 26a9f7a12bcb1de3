//! End-to-end tests of the command-line interface through the built binary.

use std::path::PathBuf;
use std::process::Command;

use nalgebra::DVector;
use num_complex::Complex64;
use parrom::model::{PoleResidueMode, PoleResidueModel};
use parrom::schema::{model_to_json, write_json};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_parrom"))
}

fn temp_path(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("parrom_cli_{}_{tag}.json", std::process::id()))
}

/// One real mode with an affine pole, constant rank-one residue.
fn dyn_mode(l0: f64, l1: f64, b: f64, c: f64) -> PoleResidueMode {
    let mut m = PoleResidueMode::constant_rank_one(
        1,
        Complex64::new(l0, 0.0),
        DVector::from_element(1, Complex64::new(b, 0.0)),
        DVector::from_element(1, Complex64::new(c, 0.0)),
    );
    m.lambda_lin = vec![Complex64::new(l1, 0.0)];
    m
}

fn write_model(tag: &str, modes: Vec<PoleResidueMode>) -> PathBuf {
    let mut model = PoleResidueModel::new(1, 1, 1, modes);
    model.real_realizable = true;
    let path = temp_path(tag);
    write_json(&path, &model_to_json(&model)).unwrap();
    path
}

#[test]
fn missing_arguments_is_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_domain_is_usage_error() {
    let path = write_model("baddom", vec![dyn_mode(-1.0, -0.5, 1.0, 2.0)]);
    let out = bin()
        .args(["norm", "--model"])
        .arg(&path)
        .args(["--domain", "1:0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_file(&path).ok();
}

#[test]
fn norm_of_single_mode_model() {
    // |H(., q)|^2 = 4 / (2 + q), so the squared norm over [0, 1] is 4 ln(3/2)
    let path = write_model("norm1", vec![dyn_mode(-1.0, -0.5, 1.0, 2.0)]);
    let out = bin()
        .args(["norm", "--model"])
        .arg(&path)
        .args(["--domain", "0:1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total = v["total"].as_f64().unwrap();
    let expect = (4.0 * 1.5f64.ln()).sqrt();
    assert!((total - expect).abs() <= 1e-10 * expect, "{total} vs {expect}");
    std::fs::remove_file(&path).ok();
}

#[test]
fn check_accepts_exact_copy() {
    let modes = vec![
        dyn_mode(-1.0, -0.3, 1.0, 1.5),
        dyn_mode(-3.0, 0.4, -0.7, 2.0),
        dyn_mode(-5.0, -1.0, 0.9, -1.1),
    ];
    let fom = write_model("checkf", modes.clone());
    let rom = write_model("checkr", modes);
    let out = bin()
        .args(["check", "--fom"])
        .arg(&fom)
        .arg("--rom")
        .arg(&rom)
        .args(["--domain", "0:1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let conditions = v["conditions"].as_array().unwrap();
    assert!(!conditions.is_empty());
    for r in conditions {
        if !r["degenerate"].as_bool().unwrap() {
            assert!(r["rel_err"].as_f64().unwrap() <= 1e-12);
        }
    }
    std::fs::remove_file(&fom).ok();
    std::fs::remove_file(&rom).ok();
}

#[test]
fn reduce_emits_reduced_model() {
    let modes = vec![
        dyn_mode(-1.0, -0.3, 1.0, 1.5),
        dyn_mode(-10.0, 0.0, 0.1, 0.1),
    ];
    let fom = write_model("reducef", modes);
    let outfile = temp_path("reduceout");
    let out = bin()
        .args(["reduce", "--fom"])
        .arg(&fom)
        .args(["--order", "1", "--domain", "0:1", "--max-iter", "200"])
        .arg("--out")
        .arg(&outfile)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&outfile).unwrap()).unwrap();
    assert_eq!(v["rom"]["modes"].as_array().unwrap().len(), 1);
    assert!(v["converged"].as_bool().unwrap());
    std::fs::remove_file(&fom).ok();
    std::fs::remove_file(&outfile).ok();
}

#[test]
fn coarse_quadrature_benchmark_is_inconsistent() {
    let out = bin()
        .args(["bench", "synth6", "--quad-order", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn benchmark_output_is_deterministic() {
    let run = || {
        let out = bin().args(["bench", "synth6"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    assert_eq!(run(), run());
}
