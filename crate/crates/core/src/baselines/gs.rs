//! Multi-plane Gerchberg–Saxton phase retrieval from a single bead stack.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::metrics::percentile;
use crate::optics::{OpticalConfig, PsfModel, WavefrontAberration, ZernikeBasis};
use crate::volume::ImageStack;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Piston, tilts and defocus: fitted alongside the basis and then dropped,
/// since they only encode bead position.
const NUISANCE: [u32; 4] = [0, 1, 2, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsConfig {
    pub iterations: usize,
    /// Minimum `(peak − median) / σ` for the brightest voxel, σ from the MAD.
    pub min_peak_snr: f64,
    /// Modes returned; defaults to the 17-mode estimation basis.
    pub modes: Vec<u32>,
}

impl Default for GsConfig {
    fn default() -> Self {
        Self { iterations: 100, min_peak_snr: 10.0, modes: ZernikeBasis::cocoa_default().modes.iter().map(|m| m.j).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct GsResult {
    pub aberration: WavefrontAberration,
    /// Retrieved pupil phase in radians (FFT ordering), zero outside the aperture.
    pub phase: Array2<f64>,
    /// Amplitude mismatch `Σ (|E| − √I)² / Σ I` before the first and after the last iteration.
    pub initial_mismatch: f64,
    pub final_mismatch: f64,
}

struct Bead {
    y: usize,
    x: usize,
}

fn find_bead(values: &Array3<f64>, min_snr: f64) -> Result<(Bead, f64)> {
    let flat: Vec<f64> = values.iter().copied().collect();
    let median = percentile(&flat, 50.0);
    let deviations: Vec<f64> = flat.iter().map(|v| (v - median).abs()).collect();
    let sigma = 1.4826 * percentile(&deviations, 50.0);
    let (idx, &peak) = values
        .indexed_iter()
        .map(|(i, v)| (i, v))
        .fold(None, |best: Option<((usize, usize, usize), &f64)>, (i, v)| match best {
            Some((_, b)) if *b >= *v => best,
            _ => Some((i, v)),
        })
        .ok_or_else(|| Error::Input("empty bead stack".into()))?;
    let contrast = peak - median;
    let snr = if sigma > 0.0 { contrast / sigma } else if contrast > 0.0 { f64::INFINITY } else { 0.0 };
    if !(snr >= min_snr) {
        return Err(Error::Input(format!("no bead found: peak SNR {snr:.2} below {min_snr}")));
    }
    Ok((Bead { y: idx.1, x: idx.2 }, median))
}

/// Retrieves the pupil phase from a stack holding one isolated bead whose
/// planes sit at the axial positions of `optical` (focus at `nz/2`).
pub fn gs_phase_retrieval(stack: &ImageStack, optical: &OpticalConfig, config: &GsConfig) -> Result<GsResult> {
    if config.iterations == 0 {
        return Err(Error::Config("GS iterations must be at least 1".into()));
    }
    let (nz, ny, nx) = stack.dims();
    let optical = optical.with_dims(nz, ny, nx);
    let (bead, background) = find_bead(&stack.values, config.min_peak_snr)?;

    let mut all_modes: Vec<u32> = NUISANCE.to_vec();
    all_modes.extend(config.modes.iter().copied().filter(|j| !NUISANCE.contains(j)));
    let basis = ZernikeBasis::from_ansi(all_modes.iter().copied());
    let model = PsfModel::new(&optical, basis.clone())?;
    let inside = model.inside();
    let n = (ny * nx) as f64;

    // measured amplitudes, bead moved to the lateral center, FFT ordering
    let mut amplitude: Vec<Vec<f64>> = Vec::with_capacity(nz);
    let mut total = 0.0;
    for z in 0..nz {
        let mut plane = vec![0.0; ny * nx];
        for y in 0..ny {
            let sy = (y + bead.y) % ny;
            for x in 0..nx {
                let sx = (x + bead.x) % nx;
                let v = (stack.values[[z, sy, sx]] - background).max(0.0);
                plane[y * nx + x] = v;
                total += v;
            }
        }
        amplitude.push(plane);
    }
    if !(total > 0.0) {
        return Err(Error::Input("bead stack has no signal above background".into()));
    }
    let scale = nz as f64 * n * inside.len() as f64 / total;
    for plane in &mut amplitude {
        plane.iter_mut().for_each(|v| *v = (*v * scale).sqrt());
    }
    let energy = nz as f64 * n * inside.len() as f64;

    let fft = Fft2::new(ny, nx);
    let mut pupil = vec![Complex64::new(1.0, 0.0); inside.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); ny * nx];
    let mut initial_mismatch = f64::NAN;
    let mut mismatch = f64::NAN;
    for it in 0..config.iterations {
        let mut acc = vec![Complex64::new(0.0, 0.0); inside.len()];
        let mut err = 0.0;
        for (kernel, amp) in model.defocus().iter().zip(&amplitude) {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for ((&i, p), d) in inside.iter().zip(&pupil).zip(kernel) {
                buf[i] = p * d;
            }
            fft.process(&mut buf, false);
            for (b, &a) in buf.iter_mut().zip(amp) {
                let m = b.norm();
                err += (m - a) * (m - a);
                *b = if m > 0.0 { *b * (a / m) } else { Complex64::new(a, 0.0) };
            }
            fft.process(&mut buf, true);
            for ((s, &i), d) in acc.iter_mut().zip(inside).zip(kernel) {
                *s += buf[i] * d.conj() / n;
            }
        }
        mismatch = err / energy;
        if it == 0 {
            initial_mismatch = mismatch;
        }
        for (p, a) in pupil.iter_mut().zip(&acc) {
            *p = if a.norm() > 0.0 { a / a.norm() } else { Complex64::new(1.0, 0.0) };
        }
    }

    // global phase reference, then the wrapped phase
    let mean: Complex64 = pupil.iter().sum::<Complex64>() / pupil.len() as f64;
    let reference = if mean.norm() > 0.0 { mean.conj() / mean.norm() } else { Complex64::new(1.0, 0.0) };
    let pupil: Vec<Complex64> = pupil.iter().map(|p| p * reference).collect();
    let wrapped: Vec<f64> = pupil.iter().map(|p| p.arg()).collect();
    let (lo, hi) = crate::volume::min_max(wrapped.iter().copied());

    let maps = basis.sample(model.grid());
    let modes: Vec<Vec<f64>> = maps.iter().map(|m| inside.iter().map(|&i| m.as_slice().unwrap()[i]).collect()).collect();
    let coeffs = if hi - lo > std::f64::consts::PI {
        fit_gradients(&pupil, &modes, inside, ny, nx)
    } else {
        fit_direct(&wrapped, &modes)
    }?;

    let mut aberration = WavefrontAberration::zero();
    for (m, c) in basis.modes.iter().zip(&coeffs) {
        if config.modes.contains(&m.j) && !NUISANCE.contains(&m.j) {
            aberration.set(m.j, *c);
        }
    }
    let mut phase = Array2::zeros((ny, nx));
    for (&i, w) in inside.iter().zip(&wrapped) {
        phase.as_slice_mut().unwrap()[i] = *w;
    }
    Ok(GsResult { aberration, phase, initial_mismatch, final_mismatch: mismatch })
}

fn solve(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Vec<f64>> {
    let a = DMatrix::from_row_slice(rows, cols, &a);
    let b = DVector::from_vec(b);
    let x = a.svd(true, true).solve(&b, 1e-10).map_err(|e| Error::Numerical { iteration: 0, message: e.into() })?;
    Ok(x.iter().map(|v| v / TWO_PI).collect())
}

/// Least squares of the phase on `2π Z_k` over the aperture.
fn fit_direct(phase: &[f64], modes: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (rows, cols) = (phase.len(), modes.len());
    let mut a = Vec::with_capacity(rows * cols);
    for p in 0..rows {
        a.extend(modes.iter().map(|m| m[p]));
    }
    solve(rows, cols, a, phase.to_vec())
}

/// Least squares on wrapped phase differences between aperture neighbors,
/// which tolerates wraps in the phase itself.
fn fit_gradients(pupil: &[Complex64], modes: &[Vec<f64>], inside: &[usize], ny: usize, nx: usize) -> Result<Vec<f64>> {
    let mut pos = vec![usize::MAX; ny * nx];
    for (p, &i) in inside.iter().enumerate() {
        pos[i] = p;
    }
    let cols = modes.len();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (p, &i) in inside.iter().enumerate() {
        let (y, x) = (i / nx, i % nx);
        for q in [pos[y * nx + (x + 1) % nx], pos[((y + 1) % ny) * nx + x]] {
            if q == usize::MAX {
                continue;
            }
            b.push((pupil[q] * pupil[p].conj()).arg());
            a.extend(modes.iter().map(|m| m[q] - m[p]));
        }
    }
    solve(b.len(), cols, a, b)
}
