//! Degradation sweeps: simulate, estimate and score each point against the
//! reconstruction of an un-aberrated stack, then fit two-segment cutoffs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cocoa_core::forward::{make_phantom, random_mixed_aberration, simulate_stack, Illumination};
use cocoa_core::metrics::{emd_sliced, pcc, piecewise_cutoff, sbr, snr, wavefront_rms_error, PiecewiseFit};
use cocoa_core::optics::{psf_3d, WavefrontAberration};
use cocoa_core::solver::estimate;
use cocoa_core::volume::Structure3D;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{write_json, CmdResult};
use crate::config::{derive_seed, RunConfig, SweepVariable};
use crate::error::CliError;

pub const SWEEP_HEADER: &str = "# cocoa sweep v1";

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub x: f64,
    pub point: usize,
    pub repeat: usize,
    pub seed: u64,
    /// `ok`, or the error message of a failed point.
    pub status: String,
    pub pcc: f64,
    pub emd: f64,
    pub snr: f64,
    pub sbr: f64,
    pub rms_error: f64,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CutoffSummary {
    pub variable: SweepVariable,
    /// Distinct x values with at least one successful repeat.
    pub xs: Vec<f64>,
    pub mean_pcc: Vec<f64>,
    pub mean_emd: Vec<f64>,
    pub pcc_fit: Option<PiecewiseFit>,
    pub emd_fit: Option<PiecewiseFit>,
    /// Breakpoints mapped to `[0, 1]` over the swept range.
    pub pcc_breakpoint_normalized: Option<f64>,
    pub emd_breakpoint_normalized: Option<f64>,
    /// Mean PCC of the points right and left of the PCC breakpoint.
    pub pcc_above: Option<f64>,
    pub pcc_below: Option<f64>,
    pub failed_points: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summary: CutoffSummary,
}

struct Scenario {
    aberration: WavefrontAberration,
    illumination: Illumination,
}

fn scenario(config: &RunConfig, x: f64, seed: u64) -> Scenario {
    let sweep = &config.sweep;
    match sweep.variable {
        SweepVariable::Illumination => Scenario {
            aberration: sweep.fixed_aberration.clone(),
            illumination: Illumination { photons_per_unit: 10f64.powf(x), ..config.illumination },
        },
        SweepVariable::AberrationRms => Scenario {
            aberration: random_mixed_aberration(x, sweep.mode_set, seed),
            illumination: config.illumination,
        },
    }
}

fn reference_illumination(config: &RunConfig) -> Illumination {
    match config.sweep.variable {
        SweepVariable::Illumination => {
            let top = config.sweep.values.last().copied().unwrap_or(0.0);
            Illumination { photons_per_unit: 10f64.powf(top), ..config.illumination }
        }
        SweepVariable::AberrationRms => config.illumination,
    }
}

fn run_point(config: &RunConfig, phantom: &Structure3D, reference: &Structure3D, x: f64, seed: u64) -> cocoa_core::Result<[f64; 5]> {
    let sc = scenario(config, x, seed);
    let psf = psf_3d(&config.optical, &sc.aberration)?;
    let noise = config.noise.map(|n| cocoa_core::forward::NoiseModel { seed, ..n });
    let sim = simulate_stack(phantom, &psf, &sc.illumination, noise.as_ref())?;
    let result = estimate(&sim.noisy, &config.optical, &config.train)?;
    let classes = sbr(&sim.noisy.values, &config.metrics.sbr)?;
    let snr_v = snr(&sim.noisy.values, &classes.signal, sim.noisy.meta.gain, sim.noisy.meta.readout_noise)?;
    let p = pcc(&result.structure.values, &reference.values)?;
    let e = emd_sliced(&result.structure.values, &reference.values, phantom.pitch, config.metrics.emd_projections, config.emd_seed)?;
    Ok([p, e, snr_v, classes.sbr, wavefront_rms_error(&result.aberration, &sc.aberration)])
}

fn normalized(x: f64, xs: &[f64]) -> f64 {
    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(config: &RunConfig, rows: &[SweepRow]) -> CutoffSummary {
    let (mut xs, mut mean_pcc, mut mean_emd) = (Vec::new(), Vec::new(), Vec::new());
    for &x in &config.sweep.values {
        let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.x == x && r.ok()).collect();
        if ok.is_empty() {
            continue;
        }
        xs.push(x);
        mean_pcc.push(ok.iter().map(|r| r.pcc).sum::<f64>() / ok.len() as f64);
        mean_emd.push(ok.iter().map(|r| r.emd).sum::<f64>() / ok.len() as f64);
    }
    let fit = |ys: &[f64]| match piecewise_cutoff(&xs, ys) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("cutoff fit skipped: {e}");
            None
        }
    };
    let pcc_fit = fit(&mean_pcc);
    let emd_fit = fit(&mean_emd);
    let swept = &config.sweep.values;
    let (pcc_above, pcc_below) = match &pcc_fit {
        Some(f) => {
            let side = |above: bool| -> Vec<f64> {
                xs.iter().zip(&mean_pcc).filter(|(&x, _)| (x > f.breakpoint) == above).map(|(_, &p)| p).collect()
            };
            (mean(&side(true)), mean(&side(false)))
        }
        None => (None, None),
    };
    CutoffSummary {
        variable: config.sweep.variable,
        pcc_breakpoint_normalized: pcc_fit.map(|f| normalized(f.breakpoint, swept)),
        emd_breakpoint_normalized: emd_fit.map(|f| normalized(f.breakpoint, swept)),
        xs,
        mean_pcc,
        mean_emd,
        pcc_fit,
        emd_fit,
        pcc_above,
        pcc_below,
        failed_points: rows.iter().filter(|r| !r.ok()).count(),
    }
}

/// Runs every point and repeat. Failed points become rows with an error
/// status. The reference reconstruction itself must succeed.
pub fn run_sweep(config: &RunConfig) -> Result<SweepOutcome, CliError> {
    config.sweep.validate()?;
    let phantom = make_phantom(&config.phantom, &config.optical)?;
    let clean_psf = psf_3d(&config.optical, &WavefrontAberration::zero())?;
    let sim = simulate_stack(&phantom, &clean_psf, &reference_illumination(config), config.noise.as_ref())?;
    let reference = estimate(&sim.noisy, &config.optical, &config.train)?.structure;

    let global = config.seed.to_le_bytes();
    let tasks: Vec<(usize, usize, f64, u64)> = config
        .sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| {
            (0..config.sweep.repeats).map(move |r| {
                (i, r, x, derive_seed(&[&global, &(i as u64).to_le_bytes(), &(r as u64).to_le_bytes()]))
            })
        })
        .collect();
    let rows: Vec<SweepRow> = tasks
        .into_par_iter()
        .map(|(point, repeat, x, seed)| {
            let base = SweepRow { x, point, repeat, seed, status: "ok".into(), pcc: f64::NAN, emd: f64::NAN, snr: f64::NAN, sbr: f64::NAN, rms_error: f64::NAN };
            match run_point(config, &phantom, &reference, x, seed) {
                Ok([pcc, emd, snr, sbr, rms_error]) => {
                    log::info!("sweep x={x} repeat={repeat}: pcc {pcc:.4} emd {emd:.4}");
                    SweepRow { pcc, emd, snr, sbr, rms_error, ..base }
                }
                Err(e) => {
                    log::warn!("sweep x={x} repeat={repeat} failed: {e}");
                    SweepRow { status: format!("error: {e}"), ..base }
                }
            }
        })
        .collect();
    let summary = summarize(config, &rows);
    Ok(SweepOutcome { rows, summary })
}

fn csv_status(s: &str) -> String {
    s.replace([',', '\n', '\r'], " ")
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SWEEP_HEADER}")?;
    writeln!(w, "x,repeat,seed,status,pcc,emd,snr,sbr,rms_error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e}",
            r.x,
            r.repeat,
            r.seed,
            csv_status(&r.status),
            r.pcc,
            r.emd,
            r.snr,
            r.sbr,
            r.rms_error
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, out: &Path) -> CmdResult {
    let outcome = run_sweep(config)?;
    let csv: PathBuf = out.join("sweep.csv");
    write_sweep_csv(&csv, &outcome.rows)?;
    let json = out.join("cutoff.json");
    write_json(&json, &outcome.summary)?;
    Ok(vec![csv, json])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepSpec;

    fn row(x: f64, pcc: f64, emd: f64) -> SweepRow {
        SweepRow { x, point: 0, repeat: 0, seed: 0, status: "ok".into(), pcc, emd, snr: 1.0, sbr: 1.0, rms_error: 0.0 }
    }

    #[test]
    fn monotone_degradation_gives_matching_cutoffs() {
        let values: Vec<f64> = (0..8).map(|k| 0.04 * k as f64).collect();
        let config = RunConfig { sweep: SweepSpec { values: values.clone(), repeats: 1, ..Default::default() }, ..Default::default() };
        let rows: Vec<SweepRow> = values
            .iter()
            .map(|&x| {
                let d = (x - 0.16).max(0.0);
                row(x, 0.95 - 0.1 * x - 3.0 * d, 0.02 + 0.05 * x + 1.5 * d)
            })
            .collect();
        let s = summarize(&config, &rows);
        let (p, e) = (s.pcc_fit.unwrap().breakpoint, s.emd_fit.unwrap().breakpoint);
        assert!((p - e).abs() <= 0.05, "{p} vs {e}");
        assert!((p - 0.16).abs() < 0.01);
        assert!(s.pcc_below.unwrap() > s.pcc_above.unwrap());
    }

    #[test]
    fn failed_rows_are_excluded_and_counted() {
        let values = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let config = RunConfig { sweep: SweepSpec { values: values.clone(), repeats: 1, ..Default::default() }, ..Default::default() };
        let mut rows: Vec<SweepRow> = values.iter().map(|&x| row(x, 1.0 - 0.1 * x, 0.1 * x)).collect();
        rows[2].status = "error: boom".into();
        let s = summarize(&config, &rows);
        assert_eq!(s.failed_points, 1);
        assert_eq!(s.xs, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_has_versioned_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut r = row(0.5, 0.9, 0.1);
        r.status = "error: a, b".into();
        write_sweep_csv(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines[1].split(',').count(), lines[2].split(',').count());
    }
}
