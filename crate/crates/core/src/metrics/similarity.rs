use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::volume::{check_same_shape, VoxelPitch};

/// Pearson correlation of two grids.
pub fn pcc(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    check_same_shape(a, b, "PCC operands")?;
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::Undefined("PCC undefined for a constant grid".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

struct Cloud {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

fn cloud(a: &Array3<f64>, pitch: VoxelPitch) -> Result<Cloud> {
    let total: f64 = a.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Input("transport distance needs positive total mass".into()));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for ((z, y, x), &v) in a.indexed_iter() {
        if v > 0.0 {
            points.push([x as f64 * pitch.lateral, y as f64 * pitch.lateral, z as f64 * pitch.axial]);
            weights.push(v / total);
        }
    }
    Ok(Cloud { points, weights })
}

fn project(c: &Cloud, u: [f64; 3]) -> Vec<(f64, f64)> {
    let mut p: Vec<(f64, f64)> =
        c.points.iter().zip(&c.weights).map(|(p, &w)| (p[0] * u[0] + p[1] * u[1] + p[2] * u[2], w)).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    p
}

/// Squared 2-Wasserstein distance between sorted weighted 1D samples of
/// equal total mass.
fn w2_squared_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    loop {
        let m = ra.min(rb);
        acc += m * (a[i].0 - b[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    acc
}

/// Spherical Fibonacci lattice under a uniformly random rotation: every
/// direction is marginally uniform on the sphere, with stratified coverage.
fn directions(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.map(|c| c / norm);
        }
    };
    let [w, x, y, z] = q;
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let cz = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let s = (1.0 - cz * cz).sqrt();
            let phi = golden * i as f64;
            let p = [s * phi.cos(), s * phi.sin(), cz];
            std::array::from_fn(|a| r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2])
        })
        .collect()
}

/// Sliced 2-Wasserstein distance (µm) between unit-mass point clouds at
/// voxel centers: `√(mean over random directions of W₂²)`. Negative values
/// carry no mass.
pub fn emd_sliced(a: &Array3<f64>, b: &Array3<f64>, pitch: VoxelPitch, projections: usize, seed: u64) -> Result<f64> {
    if projections == 0 {
        return Err(Error::Config("need at least one projection".into()));
    }
    let ca = cloud(a, pitch)?;
    let cb = cloud(b, pitch)?;
    let mut sum = 0.0;
    for u in directions(projections, seed) {
        sum += w2_squared_1d(&project(&ca, u), &project(&cb, u));
    }
    Ok((sum / projections as f64).sqrt())
}
