//! Synthetic fluorescent phantoms: sparse beads and dendrite-like filaments.

use std::collections::HashMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::OpticalConfig;
use crate::volume::Structure3D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    Beads,
    Filaments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Bead diameter in µm.
    pub bead_diameter: f64,
    /// Fraction of the volume occupied by beads.
    pub volume_fraction: f64,
    pub filament_count: usize,
    /// Filament diameter in µm.
    pub filament_thickness: f64,
    /// Standard deviation of the direction change per √µm of arc length.
    pub filament_curvature: f64,
    /// Spine-like protrusions per µm of filament (0 disables).
    pub spine_density: f64,
    /// Value of a fully occupied voxel.
    pub brightness: f64,
    /// Constant offset added to every voxel.
    pub background: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::Beads,
            bead_diameter: 0.5,
            volume_fraction: 1e-3,
            filament_count: 3,
            filament_thickness: 0.6,
            filament_curvature: 0.4,
            spine_density: 0.0,
            brightness: 1.0,
            background: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == PhantomKind::Beads {
            if !(self.volume_fraction >= 0.0 && self.volume_fraction <= 0.05) {
                return Err(Error::Config(format!("volume fraction {} outside (0, 0.05]", self.volume_fraction)));
            }
            if !(self.bead_diameter > 0.0) {
                return Err(Error::Config("bead diameter must be positive".into()));
            }
        } else if !(self.filament_thickness > 0.0) {
            return Err(Error::Config("filament thickness must be positive".into()));
        }
        if !(self.brightness >= 0.0) || !(self.background >= 0.0) {
            return Err(Error::Config("brightness and background must be non-negative".into()));
        }
        Ok(())
    }
}

/// Capsule primitive: points within `radius` of the segment `a`–`b` (µm).
#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

impl Capsule {
    fn sphere(c: [f64; 3], radius: f64) -> Self {
        Self { a: c, b: c, radius }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let ab = sub(self.b, self.a);
        let ap = sub(p, self.a);
        let len2 = dot(ab, ab);
        let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let d = sub(ap, scale(ab, t));
        dot(d, d) <= self.radius * self.radius
    }

    /// Inclusive voxel index bounds `(lo, hi)` per axis `(z, y, x)`.
    fn voxel_bounds(&self, pitch: [f64; 3], dims: [usize; 3]) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for ax in 0..3 {
            let min = self.a[ax].min(self.b[ax]) - self.radius;
            let max = self.a[ax].max(self.b[ax]) + self.radius;
            let l = (min / pitch[ax]).floor().max(0.0);
            let h = (max / pitch[ax]).floor().min(dims[ax] as f64 - 1.0);
            if h < l {
                return None;
            }
            lo[ax] = l as usize;
            hi[ax] = h as usize;
        }
        Some((lo, hi))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    scale(a, 1.0 / n)
}

const SUPERSAMPLE: usize = 3;

/// Fraction of each voxel's 3×3×3 subsamples covered by any of `capsules`.
fn occupancy(capsules: &[&Capsule], voxel: [usize; 3], pitch: [f64; 3]) -> f64 {
    let mut hits = 0usize;
    for sz in 0..SUPERSAMPLE {
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let sub = [sz, sy, sx];
                let p: [f64; 3] = std::array::from_fn(|ax| {
                    (voxel[ax] as f64 + (2 * sub[ax] + 1) as f64 / (2 * SUPERSAMPLE) as f64) * pitch[ax]
                });
                if capsules.iter().any(|c| c.contains(p)) {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE * SUPERSAMPLE) as f64
}

/// Rasterizes a phantom on the grid of `config`.
pub fn make_phantom(spec: &PhantomSpec, config: &OpticalConfig) -> Result<Structure3D> {
    spec.validate()?;
    config.validate()?;
    let dims = [config.nz, config.ny, config.nx];
    let pitch = [config.axial_step, config.lateral_pixel, config.lateral_pixel];
    let mut occ = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        PhantomKind::Beads => rasterize_beads(spec, dims, pitch, &mut occ, &mut rng)?,
        PhantomKind::Filaments => rasterize_filaments(spec, dims, pitch, &mut occ, &mut rng),
    }
    let values = occ.mapv(|o| o * spec.brightness + spec.background);
    Structure3D::new(values, config.pitch())
}

fn rasterize_beads(
    spec: &PhantomSpec,
    dims: [usize; 3],
    pitch: [f64; 3],
    occ: &mut Array3<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let extent: [f64; 3] = std::array::from_fn(|ax| dims[ax] as f64 * pitch[ax]);
    let box_volume = extent.iter().product::<f64>();
    let radius = spec.bead_diameter / 2.0;
    let bead_volume = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    let count = (spec.volume_fraction * box_volume / bead_volume).round() as usize;
    const MAX_TRIES: usize = 10_000;
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let c: [f64; 3] = std::array::from_fn(|ax| {
                if extent[ax] > 2.0 * radius {
                    rng.random_range(radius..extent[ax] - radius)
                } else {
                    rng.random_range(0.0..extent[ax])
                }
            });
            if centers.iter().all(|o| {
                let d = sub(c, *o);
                dot(d, d) >= (2.0 * radius) * (2.0 * radius)
            }) {
                centers.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place bead {} of {count} without overlap after {MAX_TRIES} tries",
                centers.len() + 1
            )));
        }
    }
    let voxel_volume = pitch.iter().product::<f64>();
    for c in centers {
        let cap = Capsule::sphere(c, radius);
        let Some((lo, hi)) = cap.voxel_bounds(pitch, dims) else { continue };
        let mut local = Vec::new();
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let o = occupancy(&[&cap], [z, y, x], pitch);
                    if o > 0.0 {
                        local.push(([z, y, x], o));
                    }
                }
            }
        }
        let covered: f64 = local.iter().map(|(_, o)| o).sum::<f64>() * voxel_volume;
        // Renormalize each bead to its analytic volume; coarse subsampling of
        // sub-voxel beads otherwise biases the achieved fraction.
        let k = if covered > 0.0 { bead_volume / covered } else { 1.0 };
        if local.is_empty() {
            let v: [usize; 3] = std::array::from_fn(|ax| ((c[ax] / pitch[ax]) as usize).min(dims[ax] - 1));
            local.push((v, bead_volume / voxel_volume));
        } else {
            for (_, o) in local.iter_mut() {
                *o *= k;
            }
        }
        for ([z, y, x], o) in local {
            let v = &mut occ[[z, y, x]];
            *v = (*v + o).min(1.0);
        }
    }
    Ok(())
}

fn rasterize_filaments(spec: &PhantomSpec, dims: [usize; 3], pitch: [f64; 3], occ: &mut Array3<f64>, rng: &mut ChaCha8Rng) {
    let extent: [f64; 3] = std::array::from_fn(|ax| dims[ax] as f64 * pitch[ax]);
    let radius = spec.filament_thickness / 2.0;
    let step = (0.25f64).min(radius);
    let mut capsules = Vec::new();
    for _ in 0..spec.filament_count {
        let p: [f64; 3] = std::array::from_fn(|ax| rng.random_range(0.0..extent[ax]));
        let mut dir = random_unit(rng);
        // mostly lateral, like dendrites imaged from above
        dir[0] *= 0.3;
        dir = normalize(dir);
        let length = 2.0 * extent.iter().cloned().fold(0.0, f64::max);
        let steps = (length / step) as usize;
        // grow in both directions from the seed point
        for sign in [1.0, -1.0] {
            let mut q = p;
            let mut d = scale(dir, sign);
            for _ in 0..steps / 2 {
                let kick: [f64; 3] = std::array::from_fn(|_| {
                    let n: f64 = StandardNormal.sample(rng);
                    n * spec.filament_curvature * step.sqrt()
                });
                d = normalize(add(d, kick));
                let next = add(q, scale(d, step));
                capsules.push(Capsule { a: q, b: next, radius });
                if spec.spine_density > 0.0 && rng.random::<f64>() < spec.spine_density * step {
                    let side = normalize(sub(random_unit(rng), scale(d, dot(random_unit(rng), d))));
                    let neck = rng.random_range(0.5..1.0);
                    let tip = add(next, scale(side, neck));
                    capsules.push(Capsule { a: next, b: tip, radius: radius * 0.4 });
                    capsules.push(Capsule::sphere(tip, radius * 0.9));
                }
                q = next;
                if (0..3).any(|ax| q[ax] < -radius || q[ax] > extent[ax] + radius) {
                    break;
                }
            }
        }
    }
    let mut candidates: HashMap<[usize; 3], Vec<usize>> = HashMap::new();
    for (i, c) in capsules.iter().enumerate() {
        if let Some((lo, hi)) = c.voxel_bounds(pitch, dims) {
            for z in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for x in lo[2]..=hi[2] {
                        candidates.entry([z, y, x]).or_default().push(i);
                    }
                }
            }
        }
    }
    let mut keys: Vec<_> = candidates.keys().copied().collect();
    keys.sort_unstable();
    for v in keys {
        let list: Vec<&Capsule> = candidates[&v].iter().map(|&i| &capsules[i]).collect();
        occ[[v[0], v[1], v[2]]] = occupancy(&list, v, pitch);
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = dot(v, v).sqrt();
        if n > 1e-9 {
            return scale(v, 1.0 / n);
        }
    }
}

/// Occupied volume fraction of a phantom rasterized with unit brightness
/// and zero background.
pub fn achieved_fraction(structure: &Structure3D) -> f64 {
    structure.values.sum() / structure.values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, nz: usize, lateral: f64, axial: f64) -> OpticalConfig {
        OpticalConfig { nx: n, ny: n, nz, lateral_pixel: lateral, axial_step: axial, ..Default::default() }
    }

    #[test]
    fn zero_fraction_is_empty() {
        let spec = PhantomSpec { volume_fraction: 0.0, ..Default::default() };
        let s = make_phantom(&spec, &cfg(16, 8, 0.1, 0.2)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_beads_hit_target_fraction() {
        // 80 µm cube at 0.5 µm pitch
        let spec = PhantomSpec { bead_diameter: 0.5, volume_fraction: 4.66e-6, seed: 3, ..Default::default() };
        let s = make_phantom(&spec, &cfg(160, 160, 0.5, 0.5)).unwrap();
        let f = achieved_fraction(&s);
        assert!((f - 4.66e-6).abs() / 4.66e-6 < 0.1, "fraction {f}");
    }

    #[test]
    fn dense_beads_hit_target_fraction() {
        let spec = PhantomSpec { bead_diameter: 1.0, volume_fraction: 0.01, seed: 1, ..Default::default() };
        let s = make_phantom(&spec, &cfg(64, 32, 0.12, 0.3)).unwrap();
        let f = achieved_fraction(&s);
        assert!((f - 0.01).abs() / 0.01 < 0.1, "fraction {f}");
        assert!(s.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn phantom_is_deterministic() {
        let spec = PhantomSpec { volume_fraction: 2e-3, seed: 11, ..Default::default() };
        let c = cfg(32, 16, 0.12, 0.3);
        assert_eq!(make_phantom(&spec, &c).unwrap(), make_phantom(&spec, &c).unwrap());
        let f = PhantomSpec { kind: PhantomKind::Filaments, spine_density: 0.5, ..spec };
        assert_eq!(make_phantom(&f, &c).unwrap(), make_phantom(&f, &c).unwrap());
    }

    #[test]
    fn filaments_are_nonempty_and_bounded() {
        let spec = PhantomSpec { kind: PhantomKind::Filaments, filament_count: 2, spine_density: 1.0, seed: 4, ..Default::default() };
        let s = make_phantom(&spec, &cfg(48, 16, 0.12, 0.3)).unwrap();
        let occupied = s.values.iter().filter(|&&v| v > 0.0).count();
        assert!(occupied > 50);
        assert!(s.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let spec = PhantomSpec { volume_fraction: 0.2, ..Default::default() };
        assert!(matches!(make_phantom(&spec, &cfg(8, 4, 0.1, 0.1)), Err(Error::Config(_))));
    }
}
