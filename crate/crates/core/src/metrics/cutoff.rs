use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous two-segment least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseFit {
    pub breakpoint: f64,
    /// Left and right slopes.
    pub slopes: [f64; 2],
    /// Left and right intercepts (value of each line at x = 0).
    pub intercepts: [f64; 2],
    pub sse: f64,
}

impl PiecewiseFit {
    pub fn predict(&self, x: f64) -> f64 {
        let k = usize::from(x > self.breakpoint);
        self.intercepts[k] + self.slopes[k] * x
    }
}

fn fit_at(xs: &[f64], ys: &[f64], bp: f64) -> Option<([f64; 3], f64)> {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let row = Vector3::new(1.0, x, (x - bp).max(0.0));
        ata += row * row.transpose();
        aty += row * y;
    }
    let p = ata.lu().solve(&aty)?;
    let sse = xs.iter().zip(ys).map(|(&x, &y)| (p[0] + p[1] * x + p[2] * (x - bp).max(0.0) - y).powi(2)).sum();
    Some(([p[0], p[1], p[2]], sse))
}

/// Two-segment continuous fit with the breakpoint chosen by grid search
/// over `[x₁, x_{n−2}]` at 1/100 of the x-range; ties go to the smaller
/// breakpoint.
pub fn piecewise_cutoff(xs: &[f64], ys: &[f64]) -> Result<PiecewiseFit> {
    let n = xs.len();
    if n < 4 || ys.len() != n {
        return Err(Error::Input("piecewise fit needs at least 4 (x, y) pairs".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) || xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("x values must be finite and strictly increasing".into()));
    }
    let step = (xs[n - 1] - xs[0]) / 100.0;
    let (lo, hi) = (xs[1], xs[n - 2]);
    let scale = ys.iter().map(|y| y * y).sum::<f64>().max(1e-300);
    let mut best: Option<(f64, [f64; 3], f64)> = None;
    let mut k = 0usize;
    loop {
        let bp = (lo + k as f64 * step).min(hi);
        if let Some((p, sse)) = fit_at(xs, ys, bp) {
            let better = match best {
                None => true,
                Some((_, _, s)) => sse < s - 1e-12 * scale,
            };
            if better {
                best = Some((bp, p, sse));
            }
        }
        if bp >= hi {
            break;
        }
        k += 1;
    }
    let (bp, p, sse) = best.ok_or_else(|| Error::Numerical { iteration: 0, message: "degenerate piecewise fit".into() })?;
    Ok(PiecewiseFit { breakpoint: bp, slopes: [p[1], p[1] + p[2]], intercepts: [p[0], p[0] - p[2] * bp], sse })
}
