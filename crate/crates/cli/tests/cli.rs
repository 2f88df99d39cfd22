use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use cocoa_cli::app::{resolve, Cli};
use cocoa_core::io::{read_aberration, read_sidecar, read_tiff};
use cocoa_core::metrics::pcc;
use serde_json::{json, Value};

fn cocoa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cocoa")).args(args).env("RUST_LOG", "error").output().expect("binary runs")
}

fn write_config(dir: &Path, value: Value) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let o = cocoa(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn small() -> Value {
    json!({
        "optical": {"nx": 24, "ny": 24, "nz": 12},
        "phantom": {"volume_fraction": 0.01},
        "illumination": {"photons_per_unit": 20000.0},
        "train": {"train_iterations": 4, "pretrain_iterations": 2, "hidden_width": 8, "layers": 3, "skip_layer": 1},
        "rld": {"iterations": 5, "psf_iterations": 3}
    })
}

#[test]
fn missing_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = cocoa(&["psf", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn psf_is_symmetric_and_coma_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"optical": {"nx": 32, "ny": 32, "nz": 16}}));
    let zero = dir.path().join("zero");
    run_ok(&["psf", "--config", cfg.to_str().unwrap(), "--out", zero.to_str().unwrap()]);
    let h = read_tiff(&zero.join("psf.tif")).unwrap();
    let (nz, ny, nx) = h.dim();
    let peak = h.iter().cloned().fold(0.0, f64::max);
    for z in 1..nz {
        for y in 1..ny {
            for x in 1..nx {
                let m = h[[nz - z, ny - y, nx - x]];
                assert!((h[[z, y, x]] - m).abs() < 1e-5 * peak, "{z} {y} {x}");
            }
        }
    }
    assert!(dir.path().join("zero").join("resolved_config.json").exists());

    let cfg = write_config(dir.path(), json!({"optical": {"nx": 32, "ny": 32, "nz": 16}, "aberration": {"7": 0.15}}));
    let coma = dir.path().join("coma");
    run_ok(&["psf", "--config", cfg.to_str().unwrap(), "--out", coma.to_str().unwrap()]);
    let hc = read_tiff(&coma.join("psf.tif")).unwrap();
    assert!(pcc(&h, &hc).unwrap() < 0.999);
    assert!((read_aberration(&coma.join("aberration.json")).unwrap().get(7) - 0.15).abs() < 1e-12);
}

#[test]
fn simulate_is_deterministic_and_declares_snr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]);
    }
    for f in ["structure.tif", "clean.tif", "noisy.tif", "noisy.json", "aberration.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let declared = read_sidecar(&a.join("noisy.tif")).unwrap().extra["declared_snr"].as_f64().unwrap();
    let m = dir.path().join("m");
    run_ok(&["metrics", "--config", cfg.to_str().unwrap(), "--input", a.join("noisy.tif").to_str().unwrap(), "--out", m.to_str().unwrap()]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(m.join("report.json")).unwrap()).unwrap();
    let measured = report["snr"].as_f64().unwrap();
    assert!((measured - declared).abs() <= 0.1 * declared, "declared {declared} measured {measured}");
}

#[test]
fn simulate_without_noise_gives_identical_stacks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c["noise"] = Value::Null;
    let cfg = write_config(dir.path(), c);
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    let clean = read_tiff(&dir.path().join("o/clean.tif")).unwrap();
    let noisy = read_tiff(&dir.path().join("o/noisy.tif")).unwrap();
    assert_eq!(clean, noisy);
}

#[test]
fn deconv_modes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small());
    let sim = dir.path().join("sim");
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let noisy = sim.join("noisy.tif");

    let blind = dir.path().join("blind");
    run_ok(&["deconv", "--mode", "blind", "--config", cfg.to_str().unwrap(), "--input", noisy.to_str().unwrap(), "--out", blind.to_str().unwrap()]);
    let tifs: Vec<_> = std::fs::read_dir(&blind)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "tif"))
        .collect();
    assert_eq!(tifs.len(), 2);
    assert_eq!(read_sidecar(&blind.join("structure.tif")).unwrap().extra["iterations"], json!(5));

    let nb = dir.path().join("nb");
    let o = cocoa(&["deconv", "--config", cfg.to_str().unwrap(), "--input", noisy.to_str().unwrap(), "--out", nb.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(nb.join(".failed").exists());
    run_ok(&[
        "deconv",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        noisy.to_str().unwrap(),
        "--aberration",
        sim.join("aberration.json").to_str().unwrap(),
        "--iterations",
        "7",
        "--out",
        nb.to_str().unwrap(),
    ]);
    assert!(!nb.join(".failed").exists());
    assert_eq!(read_sidecar(&nb.join("structure.tif")).unwrap().extra["iterations"], json!(7));
}

#[test]
fn estimate_reports_wavefront_error_against_truth() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c["aberration"] = json!({"7": 0.1});
    let cfg = write_config(dir.path(), c);
    let sim = dir.path().join("sim");
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let est = dir.path().join("est");
    run_ok(&[
        "estimate",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        sim.join("noisy.tif").to_str().unwrap(),
        "--truth",
        sim.join("aberration.json").to_str().unwrap(),
        "--truth-structure",
        sim.join("structure.tif").to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
    ]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(est.join("report.json")).unwrap()).unwrap();
    assert!(report["rms_wavefront_error"].as_f64().is_some());
    assert!(report["pcc"].as_f64().is_some());
    let trace = std::fs::read_to_string(est.join("loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2 + 4);
    for f in ["aberration.json", "structure.tif", "weights.nfld", "pretrain.csv"] {
        assert!(est.join(f).exists(), "{f}");
    }
}

#[test]
fn iteration_presets_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"train": {"train_iterations": 17}, "seed": 3}));
    let parse = |args: &[&str]| {
        let cli = Cli::try_parse_from(args).unwrap();
        resolve(&cli.common, &cli.command).unwrap()
    };
    let c = parse(&["cocoa", "estimate", "--input", "x.tif", "--config", cfg.to_str().unwrap()]);
    assert_eq!((c.train.train_iterations, c.seed), (17, 3));
    let c = parse(&["cocoa", "estimate", "--input", "x.tif", "--config", cfg.to_str().unwrap(), "--mode", "in-vivo", "--seed", "4"]);
    assert_eq!((c.train.train_iterations, c.seed), (1000, 4));
    let c = parse(&["cocoa", "estimate", "--input", "x.tif", "--mode", "slice"]);
    assert_eq!(c.train.train_iterations, 2000);
    let c = parse(&["cocoa", "estimate", "--input", "x.tif", "--mode", "slice", "--iterations", "50"]);
    assert_eq!(c.train.train_iterations, 50);
    let c = parse(&["cocoa", "gs", "--input", "x.tif", "--iterations", "9"]);
    assert_eq!(c.gs.iterations, 9);
}

#[test]
fn empty_sweep_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), json!({"sweep": {"values": []}}));
    let o = cocoa(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn correct_loop_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c["train"] = json!({"train_iterations": 150, "pretrain_iterations": 50, "hidden_width": 16});
    let cfg = write_config(dir.path(), c);
    let out = dir.path().join("loop");
    run_ok(&["correct-loop", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out.join("correction.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let residual: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        assert!(residual < 0.075, "{r}");
    }
}

#[test]
fn gs_without_bead_fails_with_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c["phantom"] = json!({"volume_fraction": 0.0});
    c["illumination"] = json!({"photons_per_unit": 0.0, "background_photons": 50.0});
    c["noise"] = Value::Null;
    let cfg = write_config(dir.path(), c);
    let sim = dir.path().join("sim");
    run_ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let out = dir.path().join("gs");
    let o = cocoa(&["gs", "--config", cfg.to_str().unwrap(), "--input", sim.join("noisy.tif").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join(".failed").exists());
    assert!(!out.join("aberration.json").exists());
}
