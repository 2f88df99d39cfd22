//! One function per subcommand. Each writes into an output directory that
//! also receives `resolved_config.json`, and a `.failed` marker on error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cocoa_core::baselines::{gs_phase_retrieval, rld_blind, rld_nonblind};
use cocoa_core::forward::{make_phantom, simulate_stack};
use cocoa_core::io::{
    read_aberration, read_stack, read_tiff, write_aberration, write_loss_trace, write_tiff, write_weights, SampleFormat,
    Sidecar,
};
use cocoa_core::metrics::{emd_sliced, image_contrast, pcc, radial_psd, sbr, snr, wavefront_rms_error, MetricsReport};
use cocoa_core::optics::{psf_3d, OpticalConfig, Psf3D, WavefrontAberration};
use cocoa_core::solver::{estimate, iterative_correction, LoopConfig};
use cocoa_core::volume::{mip, ImageStack};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const FAILED_MARKER: &str = ".failed";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";

pub type CmdResult = Result<Vec<PathBuf>, CliError>;

/// Prepares `out`, runs `body`, and leaves a `.failed` marker holding the
/// error message if it fails.
pub fn run_in(out: &Path, config: &RunConfig, body: impl FnOnce(&Path) -> CmdResult) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker)?;
    }
    let result = write_json(&out.join(RESOLVED_CONFIG), config).and_then(|_| body(out));
    if let Err(e) = &result {
        let _ = std::fs::write(&marker, format!("{e}\n"));
    }
    result
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn f32_sidecar(values: &ndarray::Array3<f64>, pitch: cocoa_core::volume::VoxelPitch, optics: &OpticalConfig) -> Sidecar {
    Sidecar::new(SampleFormat::F32, values.dim(), pitch, Default::default()).with_optics(optics)
}

pub fn cmd_psf(config: &RunConfig, out: &Path) -> CmdResult {
    let psf = psf_3d(&config.optical, &config.aberration)?;
    let mut sidecar = f32_sidecar(&psf.values, config.optical.pitch(), &config.optical);
    sidecar.extra.insert("focal_plane_index".into(), psf.focal_plane_index.into());
    let psf_path = out.join("psf.tif");
    write_tiff(&psf_path, &psf.values, &sidecar)?;
    let ab = out.join("aberration.json");
    write_aberration(&ab, &config.aberration)?;
    Ok(vec![psf_path, ab])
}

/// SNR and SBR with the signal mask taken from the stack itself.
fn snr_sbr(stack: &ImageStack, config: &RunConfig) -> (Option<f64>, Option<f64>) {
    match sbr(&stack.values, &config.metrics.sbr) {
        Ok(r) => (snr(&stack.values, &r.signal, stack.meta.gain, stack.meta.readout_noise).ok(), Some(r.sbr)),
        Err(e) => {
            log::warn!("SBR classification failed: {e}");
            (None, None)
        }
    }
}

pub fn cmd_simulate(config: &RunConfig, out: &Path) -> CmdResult {
    let phantom = make_phantom(&config.phantom, &config.optical)?;
    let psf = psf_3d(&config.optical, &config.aberration)?;
    let sim = simulate_stack(&phantom, &psf, &config.illumination, config.noise.as_ref())?;
    let o = &config.optical;
    let structure = out.join("structure.tif");
    write_tiff(&structure, &phantom.values, &f32_sidecar(&phantom.values, phantom.pitch, o))?;
    let clean = out.join("clean.tif");
    let clean_sidecar = Sidecar::new(SampleFormat::F32, sim.clean.dims(), sim.clean.pitch, sim.clean.meta).with_optics(o);
    write_tiff(&clean, &sim.clean.values, &clean_sidecar)?;

    let (declared_snr, declared_sbr) = snr_sbr(&sim.clean, config);
    let format = if config.noise.is_some() { SampleFormat::U16 } else { SampleFormat::F32 };
    let mut noisy_sidecar = Sidecar::new(format, sim.noisy.dims(), sim.noisy.pitch, sim.noisy.meta).with_optics(o);
    if let Some(v) = declared_snr {
        noisy_sidecar.extra.insert("declared_snr".into(), v.into());
    }
    if let Some(v) = declared_sbr {
        noisy_sidecar.extra.insert("declared_sbr".into(), v.into());
    }
    let noisy = out.join("noisy.tif");
    write_tiff(&noisy, &sim.noisy.values, &noisy_sidecar)?;
    let ab = out.join("aberration.json");
    write_aberration(&ab, &config.aberration)?;
    Ok(vec![structure, clean, noisy, ab])
}

/// Optional ground truth for [`cmd_estimate`] reports.
#[derive(Debug, Default, Clone)]
pub struct Truth {
    pub aberration: Option<PathBuf>,
    pub structure: Option<PathBuf>,
}

pub fn cmd_estimate(config: &RunConfig, input: &Path, truth: &Truth, out: &Path) -> CmdResult {
    let (stack, sidecar) = read_stack(input)?;
    let optics = sidecar.optics(&config.optical);
    let trace_path = out.join("loss.csv");
    let result = match estimate(&stack, &optics, &config.train) {
        Ok(r) => r,
        Err(e @ cocoa_core::Error::Training { .. }) => {
            if let cocoa_core::Error::Training { trace, .. } = &e {
                write_loss_trace(&trace_path, trace)?;
            }
            return Err(CliError::Training { source: e, trace: trace_path });
        }
        Err(e) => return Err(e.into()),
    };

    let ab = out.join("aberration.json");
    write_aberration(&ab, &result.aberration)?;
    let structure = out.join("structure.tif");
    let mut s_sidecar = f32_sidecar(&result.structure.values, result.structure.pitch, &optics);
    s_sidecar.extra.insert("train_iterations".into(), config.train.train_iterations.into());
    s_sidecar.extra.insert("pretrain_iterations".into(), config.train.pretrain_iterations.into());
    write_tiff(&structure, &result.structure.values, &s_sidecar)?;
    write_loss_trace(&trace_path, &result.trace)?;
    let pre = out.join("pretrain.csv");
    {
        let mut w = BufWriter::new(File::create(&pre)?);
        writeln!(w, "# cocoa pretrain trace v1")?;
        writeln!(w, "iteration,mse")?;
        for (i, v) in result.pretrain_trace.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
        w.flush()?;
    }
    let weights = out.join("weights.nfld");
    write_weights(&weights, &result.field)?;

    let (snr_v, sbr_v) = snr_sbr(&stack, config);
    let mut report = MetricsReport { snr: snr_v, sbr: sbr_v, ..Default::default() };
    if let Some(p) = &truth.aberration {
        report.rms_wavefront_error = Some(wavefront_rms_error(&result.aberration, &read_aberration(p)?));
    }
    if let Some(p) = &truth.structure {
        let t = read_tiff(p)?;
        report.pcc = Some(pcc(&result.structure.values, &t)?);
        report.emd =
            Some(emd_sliced(&result.structure.values, &t, result.structure.pitch, config.metrics.emd_projections, config.emd_seed)?);
    }
    let rep = out.join("report.json");
    write_json(&rep, &report)?;
    Ok(vec![ab, structure, trace_path, pre, weights, rep])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeconvMode {
    NonBlind,
    Blind,
}

/// PSF source for non-blind deconvolution.
#[derive(Debug, Default, Clone)]
pub struct PsfSource {
    pub psf: Option<PathBuf>,
    pub aberration: Option<PathBuf>,
}

fn odd(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n - 1
    }
}

pub fn cmd_deconv(config: &RunConfig, input: &Path, mode: DeconvMode, source: &PsfSource, out: &Path) -> CmdResult {
    let (stack, sidecar) = read_stack(input)?;
    let optics = sidecar.optics(&config.optical);
    let structure = out.join("structure.tif");
    let mut s_sidecar = f32_sidecar(&stack.values, stack.pitch, &optics);
    s_sidecar.extra.insert("iterations".into(), config.rld.iterations.into());
    match mode {
        DeconvMode::NonBlind => {
            let psf = match (&source.psf, &source.aberration) {
                (Some(p), _) => Psf3D::from_values(read_tiff(p)?)?,
                (None, Some(a)) => psf_3d(&optics, &read_aberration(a)?)?,
                (None, None) => return Err(CliError::Config("non-blind deconvolution needs --psf or --aberration".into())),
            };
            let s = rld_nonblind(&stack, &psf, &config.rld)?;
            write_tiff(&structure, &s.values, &s_sidecar)?;
            Ok(vec![structure])
        }
        DeconvMode::Blind => {
            let shape = optics.with_dims(odd(optics.nz), odd(optics.ny), odd(optics.nx));
            let initial = psf_3d(&shape, &WavefrontAberration::zero())?;
            let (s, psf) = rld_blind(&stack, &initial, &config.rld)?;
            s_sidecar.extra.insert("psf_iterations".into(), config.rld.psf_iterations.into());
            write_tiff(&structure, &s.values, &s_sidecar)?;
            let psf_path = out.join("psf.tif");
            write_tiff(&psf_path, &psf.values, &f32_sidecar(&psf.values, stack.pitch, &optics))?;
            Ok(vec![structure, psf_path])
        }
    }
}

pub fn cmd_correct_loop(config: &RunConfig, out: &Path) -> CmdResult {
    let phantom = make_phantom(&config.phantom, &config.optical)?;
    let lc = LoopConfig { rounds: config.rounds, illumination: config.illumination, noise: config.noise };
    let rounds = iterative_correction(&config.aberration, &phantom, &config.optical, &config.train, &lc)?;
    let csv = out.join("correction.csv");
    let mut w = BufWriter::new(File::create(&csv)?);
    writeln!(w, "# cocoa correction loop v1")?;
    writeln!(w, "round,residual_rms,contrast")?;
    for r in &rounds {
        writeln!(w, "{},{:e},{:e}", r.round, r.residual_rms, r.contrast)?;
    }
    w.flush()?;
    let json = out.join("rounds.json");
    write_json(&json, &rounds)?;
    Ok(vec![csv, json])
}

pub fn cmd_gs(config: &RunConfig, input: &Path, out: &Path) -> CmdResult {
    let (stack, sidecar) = read_stack(input)?;
    let optics = sidecar.optics(&config.optical);
    let r = gs_phase_retrieval(&stack, &optics, &config.gs)?;
    let ab = out.join("aberration.json");
    write_aberration(&ab, &r.aberration)?;
    let (ny, nx) = r.phase.dim();
    let phase = r.phase.into_shape_with_order((1, ny, nx)).expect("plane reshape");
    let phase_path = out.join("pupil_phase.tif");
    let pupil_pitch = cocoa_core::volume::VoxelPitch::new(1.0 / (nx as f64 * optics.lateral_pixel), 1.0);
    write_tiff(&phase_path, &phase, &Sidecar::new(SampleFormat::F32, phase.dim(), pupil_pitch, Default::default()))?;
    let summary = out.join("gs.json");
    write_json(
        &summary,
        &serde_json::json!({ "initial_mismatch": r.initial_mismatch, "final_mismatch": r.final_mismatch, "iterations": config.gs.iterations }),
    )?;
    Ok(vec![ab, phase_path, summary])
}

/// Optional comparisons for [`cmd_metrics`].
#[derive(Debug, Default, Clone)]
pub struct MetricsInputs {
    /// Volume compared by PCC and EMD.
    pub reference: Option<PathBuf>,
    /// True and estimated aberrations for the RMS wavefront error.
    pub truth: Option<PathBuf>,
    pub estimate: Option<PathBuf>,
}

pub fn cmd_metrics(config: &RunConfig, input: &Path, extra: &MetricsInputs, out: &Path) -> CmdResult {
    let (stack, _) = read_stack(input)?;
    let (snr_v, sbr_v) = snr_sbr(&stack, config);
    let projection = mip(&stack.values);
    let mut report = MetricsReport {
        snr: snr_v,
        sbr: sbr_v,
        contrast: image_contrast(&projection).ok(),
        radial_psd: Some(radial_psd(&projection, stack.pitch.lateral)),
        ..Default::default()
    };
    if let Some(p) = &extra.reference {
        let r = read_tiff(p)?;
        report.pcc = Some(pcc(&stack.values, &r)?);
        report.emd = Some(emd_sliced(&stack.values, &r, stack.pitch, config.metrics.emd_projections, config.emd_seed)?);
    }
    match (&extra.truth, &extra.estimate) {
        (Some(t), Some(e)) => {
            report.rms_wavefront_error = Some(wavefront_rms_error(&read_aberration(e)?, &read_aberration(t)?));
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--truth and --estimate must be given together".into())),
    }
    let rep = out.join("report.json");
    write_json(&rep, &report)?;
    Ok(vec![rep])
}
