use ndarray::{Array3, Axis};

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Separable Gaussian blur (σ in voxels per axis, taps to 4σ) with
/// symmetric reflection at the borders.
pub fn gaussian_blur_3d(a: &Array3<f64>, sigma: [f64; 3]) -> Array3<f64> {
    let mut out = a.clone();
    for (axis, &s) in sigma.iter().enumerate() {
        if s <= 0.0 {
            continue;
        }
        let r = (4.0 * s).ceil() as isize;
        let mut taps: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * s * s)).exp()).collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        let n = out.len_of(Axis(axis));
        let mut next = Array3::zeros(out.dim());
        for (src, mut dst) in out.lanes(Axis(axis)).into_iter().zip(next.lanes_mut(Axis(axis))) {
            for i in 0..n {
                let mut acc = 0.0;
                for (t, w) in taps.iter().enumerate() {
                    acc += w * src[reflect(i as isize + t as isize - r, n)];
                }
                dst[i] = acc;
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_preserved() {
        let a = Array3::from_elem((3, 5, 7), 2.5);
        let b = gaussian_blur_3d(&a, [1.0, 10.0, 2.0]);
        assert!(b.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn blur_keeps_mass_in_interior() {
        let mut a = Array3::zeros((1, 41, 41));
        a[[0, 20, 20]] = 1.0;
        let b = gaussian_blur_3d(&a, [0.0, 1.5, 1.5]);
        assert!((b.sum() - 1.0).abs() < 1e-9);
        assert!(b[[0, 20, 20]] < 0.1);
    }
}
