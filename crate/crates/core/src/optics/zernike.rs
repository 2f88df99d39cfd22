//! Zernike polynomials with ANSI single indexing and unit-RMS normalization.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::pupil::PupilGrid;

/// A Zernike mode `Z_n^m` with its ANSI index `j = (n(n+2) + m) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZernikeIndex {
    pub n: u32,
    pub m: i32,
    pub j: u32,
}

/// Builds the ANSI index for radial order `n` and azimuthal frequency `m`.
pub fn ansi_index(n: i64, m: i64) -> Result<ZernikeIndex> {
    if n < 0 {
        return Err(Error::InvalidMode { n, m, reason: "radial order must be non-negative" });
    }
    if m.abs() > n {
        return Err(Error::InvalidMode { n, m, reason: "|m| must not exceed n" });
    }
    if (n - m.abs()) % 2 != 0 {
        return Err(Error::InvalidMode { n, m, reason: "n - |m| must be even" });
    }
    let j = (n * (n + 2) + m) / 2;
    Ok(ZernikeIndex { n: n as u32, m: m as i32, j: j as u32 })
}

impl ZernikeIndex {
    /// Inverse of the ANSI mapping.
    pub fn from_ansi(j: u32) -> Self {
        let mut n = 0u32;
        while (n + 1) * (n + 2) / 2 <= j {
            n += 1;
        }
        let m = 2 * j as i64 - (n as i64) * (n as i64 + 2);
        ZernikeIndex { n, m: m as i32, j }
    }

    /// Normalization factor making the mode unit-RMS over the unit disk.
    pub fn norm_factor(&self) -> f64 {
        if self.m == 0 {
            ((self.n + 1) as f64).sqrt()
        } else {
            (2.0 * (self.n + 1) as f64).sqrt()
        }
    }

    /// Radial polynomial `R_n^{|m|}(ρ)`.
    pub fn radial(&self, rho: f64) -> f64 {
        let n = self.n as i64;
        let am = self.m.unsigned_abs() as i64;
        let mut acc = 0.0;
        for k in 0..=((n - am) / 2) {
            let c = factorial(n - k) / (factorial(k) * factorial((n + am) / 2 - k) * factorial((n - am) / 2 - k));
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * c * rho.powi((n - 2 * k) as i32);
        }
        acc
    }

    /// Orthonormal value at polar pupil coordinates.
    pub fn value(&self, rho: f64, theta: f64) -> f64 {
        let r = self.norm_factor() * self.radial(rho);
        match self.m {
            0 => r,
            m if m > 0 => r * (m as f64 * theta).cos(),
            m => r * ((-m) as f64 * theta).sin(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.j {
            0 => "piston",
            1 => "vertical tilt",
            2 => "horizontal tilt",
            3 => "oblique astigmatism",
            4 => "defocus",
            5 => "vertical astigmatism",
            6 => "vertical trefoil",
            7 => "vertical coma",
            8 => "horizontal coma",
            9 => "oblique trefoil",
            10 => "oblique quadrafoil",
            11 => "oblique secondary astigmatism",
            12 => "primary spherical",
            13 => "vertical secondary astigmatism",
            14 => "vertical quadrafoil",
            15 => "vertical pentafoil",
            16 => "vertical secondary trefoil",
            17 => "vertical secondary coma",
            18 => "horizontal secondary coma",
            19 => "oblique secondary trefoil",
            20 => "oblique pentafoil",
            _ => "higher order",
        }
    }
}

fn factorial(k: i64) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// Samples `mode` on the grid's normalized pupil coordinates, zero outside
/// the aperture, with unit-RMS scaling.
pub fn zernike_eval(mode: ZernikeIndex, grid: &PupilGrid) -> Array2<f64> {
    sample_mode(mode, grid, true)
}

fn sample_mode(mode: ZernikeIndex, grid: &PupilGrid, orthonormal: bool) -> Array2<f64> {
    let scale = if orthonormal { 1.0 } else { 1.0 / mode.norm_factor() };
    Array2::from_shape_fn(grid.dim(), |(y, x)| {
        if grid.mask[[y, x]] {
            scale * mode.value(grid.rho[[y, x]], grid.theta[[y, x]])
        } else {
            0.0
        }
    })
}

/// Ordered set of modes used to parameterize a wavefront.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZernikeBasis {
    pub modes: Vec<ZernikeIndex>,
    pub orthonormal: bool,
}

impl ZernikeBasis {
    /// The 17 modes from primary astigmatism (j=3) to pentafoil (j=20),
    /// skipping defocus (j=4).
    pub fn cocoa_default() -> Self {
        Self::from_ansi(std::iter::once(3).chain(5..=20))
    }

    pub fn from_ansi(js: impl IntoIterator<Item = u32>) -> Self {
        Self { modes: js.into_iter().map(ZernikeIndex::from_ansi).collect(), orthonormal: true }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn position(&self, j: u32) -> Option<usize> {
        self.modes.iter().position(|m| m.j == j)
    }

    pub fn sample(&self, grid: &PupilGrid) -> Vec<Array2<f64>> {
        self.modes.iter().map(|&m| sample_mode(m, grid, self.orthonormal)).collect()
    }
}

/// Wavefront aberration as ANSI index → coefficient in units of λ.
/// Serializes as a JSON object keyed by the index, e.g. `{"7": 0.15}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WavefrontAberration {
    pub coefficients: BTreeMap<u32, f64>,
}

impl WavefrontAberration {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut w = Self::zero();
        for (j, v) in pairs {
            *w.coefficients.entry(j).or_insert(0.0) += v;
        }
        w
    }

    /// Coefficients aligned with `basis`; modes not in the map are zero.
    pub fn to_vector(&self, basis: &ZernikeBasis) -> Vec<f64> {
        basis.modes.iter().map(|m| self.get(m.j)).collect()
    }

    pub fn from_vector(basis: &ZernikeBasis, values: &[f64]) -> Self {
        Self::from_pairs(basis.modes.iter().zip(values).map(|(m, &v)| (m.j, v)))
    }

    pub fn get(&self, j: u32) -> f64 {
        self.coefficients.get(&j).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, j: u32, value: f64) {
        self.coefficients.insert(j, value);
    }

    pub fn modes(&self) -> impl Iterator<Item = ZernikeIndex> + '_ {
        self.coefficients.keys().map(|&j| ZernikeIndex::from_ansi(j))
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { coefficients: self.coefficients.iter().map(|(&j, &v)| (j, v * k)).collect() }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }
}

/// ℓ2 norm of the coefficient vector, equal to the wavefront RMS in λ for an
/// orthonormal basis.
pub fn wavefront_rms(aberration: &WavefrontAberration) -> f64 {
    aberration.coefficients.values().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pupil phase in radians: `2π Σ α_j Z_j`, zero outside the aperture.
pub fn wavefront_phase(aberration: &WavefrontAberration, grid: &PupilGrid) -> Array2<f64> {
    let mut phase = Array2::zeros(grid.dim());
    for (&j, &c) in &aberration.coefficients {
        if c == 0.0 {
            continue;
        }
        let z = zernike_eval(ZernikeIndex::from_ansi(j), grid);
        phase.scaled_add(2.0 * std::f64::consts::PI * c, &z);
    }
    phase
}
