//! Per-plane structural similarity with an analytic gradient.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::Result;
use crate::volume::{check_same_shape, ImageStack};

const SIGMA: f64 = 1.5;
const RADIUS: usize = 5;

/// Normalized 1D Gaussian taps of radius `r`.
fn gaussian_taps(r: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..=2 * r)
        .map(|k| {
            let d = k as f64 - r as f64;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Window radius: 5 (11×11) unless the plane is smaller.
fn window_radius(ny: usize, nx: usize) -> usize {
    RADIUS.min((ny.min(nx).max(1) - 1) / 2)
}

/// "Valid" separable correlation of a plane with `w`.
fn filter_valid(img: ArrayView2<f64>, w: &[f64]) -> Array2<f64> {
    let k = w.len();
    let (ny, nx) = img.dim();
    let (oy, ox) = (ny + 1 - k, nx + 1 - k);
    let mut tmp = Array2::zeros((ny, ox));
    for y in 0..ny {
        for x in 0..ox {
            let mut acc = 0.0;
            for (t, wt) in w.iter().enumerate() {
                acc += wt * img[[y, x + t]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((oy, ox));
    for y in 0..oy {
        for (t, wt) in w.iter().enumerate() {
            let row = tmp.row(y + t);
            out.row_mut(y).scaled_add(*wt, &row);
        }
    }
    out
}

/// Transpose of [`filter_valid`]: scatters a valid-size map back to `(ny, nx)`.
fn filter_valid_adjoint(m: &Array2<f64>, w: &[f64], ny: usize, nx: usize) -> Array2<f64> {
    let (oy, ox) = m.dim();
    let mut tmp = Array2::zeros((ny, ox));
    for y in 0..oy {
        for (t, wt) in w.iter().enumerate() {
            tmp.row_mut(y + t).scaled_add(*wt, &m.row(y));
        }
    }
    let mut out = Array2::zeros((ny, nx));
    for y in 0..ny {
        for x in 0..ox {
            let v = tmp[[y, x]];
            for (t, wt) in w.iter().enumerate() {
                out[[y, x + t]] += wt * v;
            }
        }
    }
    out
}

/// Mean SSIM over planes and its gradient with respect to `x`.
pub(crate) fn ssim_with_grad(x: &Array3<f64>, y: &Array3<f64>, range: f64, want_grad: bool) -> (f64, Option<Array3<f64>>) {
    let (nz, ny, nx) = x.dim();
    let r = window_radius(ny, nx);
    let w = gaussian_taps(r);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros(x.dim()));
    for z in 0..nz {
        let xp = x.index_axis(Axis(0), z);
        let yp = y.index_axis(Axis(0), z);
        let mx = filter_valid(xp, &w);
        let my = filter_valid(yp, &w);
        let exx = filter_valid((&xp * &xp).view(), &w);
        let eyy = filter_valid((&yp * &yp).view(), &w);
        let exy = filter_valid((&xp * &yp).view(), &w);
        let count = mx.len() as f64;
        let mut d_mx = Array2::zeros(mx.dim());
        let mut d_exx = Array2::zeros(mx.dim());
        let mut d_exy = Array2::zeros(mx.dim());
        let mut plane = 0.0;
        for (i, &ux) in mx.iter().enumerate() {
            let idx = (i / mx.ncols(), i % mx.ncols());
            let uy = my[idx];
            let sxx = exx[idx] - ux * ux;
            let syy = eyy[idx] - uy * uy;
            let sxy = exy[idx] - ux * uy;
            let a1 = 2.0 * ux * uy + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = ux * ux + uy * uy + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            plane += s;
            if want_grad {
                let bb = b1 * b2;
                d_mx[idx] = (2.0 * uy * a2 - 2.0 * uy * a1) / bb - s * 2.0 * ux / b1 + s * 2.0 * ux / b2;
                d_exx[idx] = -s / b2;
                d_exy[idx] = 2.0 * a1 / bb;
            }
        }
        total += plane / count;
        if let Some(g) = grad.as_mut() {
            let scale = 1.0 / (count * nz as f64);
            let gm = filter_valid_adjoint(&d_mx, &w, ny, nx);
            let gxx = filter_valid_adjoint(&d_exx, &w, ny, nx);
            let gxy = filter_valid_adjoint(&d_exy, &w, ny, nx);
            let mut gp = g.index_axis_mut(Axis(0), z);
            ndarray::Zip::from(&mut gp)
                .and(&xp)
                .and(&yp)
                .and(&gm)
                .and(&gxx)
                .and(&gxy)
                .for_each(|o, &xv, &yv, &a, &b, &c| *o = scale * (a + 2.0 * xv * b + yv * c));
        }
    }
    (total / nz as f64, grad)
}

/// Mean over planes of the per-plane SSIM (11×11 Gaussian window, σ = 1.5,
/// valid positions only) with constants `(0.01 L)²` and `(0.03 L)²`.
pub fn ssim_3d(estimate: &ImageStack, reference: &ImageStack, dynamic_range: f64) -> Result<f64> {
    check_same_shape(&estimate.values, &reference.values, "SSIM operands")?;
    Ok(ssim_with_grad(&estimate.values, &reference.values, dynamic_range, false).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn(dims, |_| rng.random::<f64>())
    }

    #[test]
    fn identity_is_one() {
        let x = random((3, 16, 14), 1);
        let (s, g) = ssim_with_grad(&x, &x, 1.0, true);
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.unwrap().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn constant_pair_closed_form() {
        let x = Array3::from_elem((2, 16, 16), 100.0);
        let y = Array3::from_elem((2, 16, 16), 110.0);
        let c1 = (0.01f64 * 255.0).powi(2);
        let want = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
        let (s, _) = ssim_with_grad(&x, &y, 255.0, false);
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn anticorrelated_is_negative() {
        let x = random((1, 20, 20), 2).mapv(|v| v - 0.5);
        let y = x.mapv(|v| 0.5 - v);
        assert!(ssim_with_grad(&x, &y, 1.0, false).0 < 0.0);
    }

    #[test]
    fn adjoint_filter_is_transpose() {
        let w = gaussian_taps(3);
        let a = random((1, 13, 11), 3).index_axis(Axis(0), 0).to_owned();
        let b = random((1, 7, 5), 4).index_axis(Axis(0), 0).to_owned();
        let lhs: f64 = (&filter_valid(a.view(), &w) * &b).sum();
        let rhs: f64 = (&a * &filter_valid_adjoint(&b, &w, 13, 11)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random((2, 13, 12), 5);
        let y = random((2, 13, 12), 6);
        let (_, g) = ssim_with_grad(&x, &y, 1.0, true);
        let g = g.unwrap();
        let h = 1e-6;
        for idx in [[0, 0, 0], [1, 6, 6], [0, 12, 11], [1, 3, 9]] {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            let fd = (ssim_with_grad(&p, &y, 1.0, false).0 - ssim_with_grad(&m, &y, 1.0, false).0) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6 * fd.abs().max(1e-3), "{idx:?}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn small_planes_shrink_the_window() {
        let x = random((2, 6, 9), 7);
        let (s, _) = ssim_with_grad(&x, &x, 1.0, false);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
