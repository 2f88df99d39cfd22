//! Radial Fourier feature mapping of normalized coordinates.
//!
//! Features, in order: `sin(2π f ρ)` and `cos(2π f ρ)` over the radial
//! frequencies with `ρ = √(x² + y²)`, then `sin`/`cos(2π f z)` over the axial
//! frequencies, then (when `directions > 0`) `sin`/`cos(2π f u_d)` with
//! `u_d = x cos(πd/D) + y sin(πd/D)` over the radial frequencies for each
//! in-plane direction, and finally raw `(x, y, z)` when enabled.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Real;
use crate::volume::normalized_centers;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencySpacing {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub radial_frequencies: usize,
    pub axial_frequencies: usize,
    /// Lowest radial frequency, cycles per normalized unit.
    pub radial_base: f64,
    pub radial_max: f64,
    pub axial_base: f64,
    pub axial_max: f64,
    pub spacing: FrequencySpacing,
    pub include_raw_coords: bool,
    /// In-plane projection directions; 0 keeps the encoding purely radial.
    #[serde(default)]
    pub directions: usize,
}

impl EncodingSpec {
    /// Geometric frequencies from 1 cycle up to half the grid Nyquist
    /// (`n/8` cycles per normalized unit), raw coordinates included.
    pub fn for_grid(nz: usize, ny: usize, nx: usize) -> Self {
        let lateral = nx.max(ny) as f64 / 8.0;
        let axial = nz as f64 / 8.0;
        Self {
            radial_frequencies: 10,
            axial_frequencies: 6,
            radial_base: 1.0,
            radial_max: lateral.max(2.0),
            axial_base: 1.0,
            axial_max: axial.max(2.0),
            spacing: FrequencySpacing::Geometric,
            include_raw_coords: true,
            directions: 0,
        }
    }

    pub fn with_directions(mut self, directions: usize) -> Self {
        self.directions = directions;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.radial_frequencies == 0 || self.axial_frequencies == 0 {
            return Err(Error::Config("encoding needs at least one radial and one axial frequency".into()));
        }
        for (f, what) in [(self.radial_frequencies(), "radial"), (self.axial_frequencies(), "axial")] {
            if f.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || f.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config(format!("{what} frequencies must be positive and strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn radial_frequencies(&self) -> Vec<f64> {
        ladder(self.radial_frequencies, self.radial_base, self.radial_max, self.spacing)
    }

    pub fn axial_frequencies(&self) -> Vec<f64> {
        ladder(self.axial_frequencies, self.axial_base, self.axial_max, self.spacing)
    }

    /// Length of the feature vector.
    pub fn feature_len(&self) -> usize {
        2 * self.radial_frequencies
            + 2 * self.axial_frequencies
            + 2 * self.directions * self.radial_frequencies
            + if self.include_raw_coords { 3 } else { 0 }
    }
}

fn ladder(n: usize, base: f64, max: f64, spacing: FrequencySpacing) -> Vec<f64> {
    if n == 1 {
        return vec![base];
    }
    (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            match spacing {
                FrequencySpacing::Linear => base + (max - base) * t,
                FrequencySpacing::Geometric => base * (max / base).powf(t),
            }
        })
        .collect()
}

/// Precomputed frequency tables for repeated encoding.
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncodingSpec,
    radial: Vec<f64>,
    axial: Vec<f64>,
    dirs: Vec<(f64, f64)>,
}

impl Encoder {
    pub fn new(spec: &EncodingSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.directions;
        let dirs = (0..d)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / d as f64;
                (a.cos(), a.sin())
            })
            .collect();
        Ok(Self { spec: spec.clone(), radial: spec.radial_frequencies(), axial: spec.axial_frequencies(), dirs })
    }

    pub fn len(&self) -> usize {
        self.spec.feature_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the features of `coords = [x, y, z]` into `out`.
    pub fn encode_into<T: Real>(&self, coords: [f64; 3], out: &mut [T]) -> Result<()> {
        if coords.iter().any(|c| !c.is_finite() || c.abs() > 1.0 + 1e-12) {
            return Err(Error::Domain(format!("coordinates {coords:?} outside [-1, 1]^3")));
        }
        debug_assert_eq!(out.len(), self.len());
        let [x, y, z] = coords;
        let rho = (x * x + y * y).sqrt();
        let mut i = 0;
        let mut push_pair = |arg: f64, freqs: &[f64], i: &mut usize| {
            let n = freqs.len();
            for (k, f) in freqs.iter().enumerate() {
                let (s, c) = (TWO_PI * f * arg).sin_cos();
                out[*i + k] = T::cast(s);
                out[*i + n + k] = T::cast(c);
            }
            *i += 2 * n;
        };
        push_pair(rho, &self.radial, &mut i);
        push_pair(z, &self.axial, &mut i);
        for &(c, s) in &self.dirs {
            push_pair(x * c + y * s, &self.radial, &mut i);
        }
        if self.spec.include_raw_coords {
            out[i] = T::cast(x);
            out[i + 1] = T::cast(y);
            out[i + 2] = T::cast(z);
        }
        Ok(())
    }

    /// Encodes a batch of coordinates into a `(batch, features)` matrix.
    pub fn encode_batch<T: Real>(&self, coords: &[[f64; 3]]) -> Result<Array2<T>> {
        let mut out = Array2::from_elem((coords.len(), self.len()), T::zero());
        for (row, c) in out.rows_mut().into_iter().zip(coords) {
            let mut row = row;
            self.encode_into(*c, row.as_slice_mut().expect("row-major"))?;
        }
        Ok(out)
    }
}

/// Features of a single normalized coordinate `[x, y, z]`.
pub fn encode(coords: [f64; 3], spec: &EncodingSpec) -> Result<Vec<f64>> {
    let enc = Encoder::new(spec)?;
    let mut out = vec![0.0; enc.len()];
    enc.encode_into(coords, &mut out)?;
    Ok(out)
}

/// Voxel-center coordinates `[x, y, z]` of a `(nz, ny, nx)` grid in
/// row-major `(z, y, x)` order.
pub fn grid_coordinates(nz: usize, ny: usize, nx: usize) -> Vec<[f64; 3]> {
    let (cz, cy, cx) = (normalized_centers(nz), normalized_centers(ny), normalized_centers(nx));
    let mut out = Vec::with_capacity(nz * ny * nx);
    for &z in &cz {
        for &y in &cy {
            for &x in &cx {
                out.push([x, y, z]);
            }
        }
    }
    out
}
