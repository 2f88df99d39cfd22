//! 3D and 2D FFT plumbing on top of `rustfft`.
//!
//! Buffers are row-major `(z, y, x)`. Transforms are unnormalized in both
//! directions; callers scale inverse results by `1/len` where needed. The
//! padded variants skip lines that are known to be zero (forward) or that
//! fall outside the requested crop (inverse).

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest integer ≥ `n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

struct AxisPlans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AxisPlans {
    fn new(planner: &mut FftPlanner<f64>, n: usize) -> Self {
        Self { fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    fn get(&self, inverse: bool) -> &Arc<dyn Fft<f64>> {
        if inverse {
            &self.inv
        } else {
            &self.fwd
        }
    }
}

/// Planned 3D transform over a fixed `(z, y, x)` shape.
pub struct Fft3 {
    dims: [usize; 3],
    plans: [AxisPlans; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let plans = [
            AxisPlans::new(&mut planner, dims[0]),
            AxisPlans::new(&mut planner, dims[1]),
            AxisPlans::new(&mut planner, dims[2]),
        ];
        Self { dims, plans }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full in-place transform.
    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let [mz, my, _] = self.dims;
        if inverse {
            self.axis_z(buf, inverse);
            self.axis_y(buf, 0..mz, inverse);
            self.axis_x(buf, 0..mz, 0..my, inverse);
        } else {
            self.axis_x(buf, 0..mz, 0..my, inverse);
            self.axis_y(buf, 0..mz, inverse);
            self.axis_z(buf, inverse);
        }
    }

    /// Zero-pads `input` (placed at the origin) to the planned shape and
    /// transforms it, skipping lines that are identically zero.
    pub fn forward_padded(&self, input: &Array3<f64>) -> Vec<Complex64> {
        self.forward_padded_at(input, [0, 0, 0])
    }

    /// As [`Fft3::forward_padded`] with `input` placed at `offset`.
    pub fn forward_padded_at(&self, input: &Array3<f64>, offset: [usize; 3]) -> Vec<Complex64> {
        let [mz, my, mx] = self.dims;
        let (nz, ny, nx) = input.dim();
        assert!(
            offset[0] + nz <= mz && offset[1] + ny <= my && offset[2] + nx <= mx,
            "input larger than transform"
        );
        let mut buf = vec![Complex64::new(0.0, 0.0); mz * my * mx];
        for ((z, y, x), &v) in input.indexed_iter() {
            buf[((z + offset[0]) * my + y + offset[1]) * mx + x + offset[2]] = Complex64::new(v, 0.0);
        }
        let zr = offset[0]..offset[0] + nz;
        self.axis_x(&mut buf, zr.clone(), offset[1]..offset[1] + ny, false);
        self.axis_y(&mut buf, zr, false);
        self.axis_z(&mut buf, false);
        buf
    }

    /// Inverse transform followed by a crop of `shape` voxels starting at
    /// `offset`, scaled by `1/len` so that `inverse_cropped(forward_padded(a))`
    /// returns `a`. Consumes the spectrum buffer.
    pub fn inverse_cropped(&self, mut buf: Vec<Complex64>, offset: [usize; 3], shape: [usize; 3]) -> Array3<f64> {
        let [mz, my, mx] = self.dims;
        for a in 0..3 {
            assert!(offset[a] + shape[a] <= self.dims[a], "crop outside transform");
        }
        self.axis_z(&mut buf, true);
        let zr = offset[0]..offset[0] + shape[0];
        let yr = offset[1]..offset[1] + shape[1];
        self.axis_y(&mut buf, zr.clone(), true);
        self.axis_x(&mut buf, zr, yr, true);
        let scale = 1.0 / (mz * my * mx) as f64;
        Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(z, y, x)| {
            buf[((z + offset[0]) * my + y + offset[1]) * mx + x + offset[2]].re * scale
        })
    }

    fn axis_x(&self, buf: &mut [Complex64], zs: std::ops::Range<usize>, ys: std::ops::Range<usize>, inverse: bool) {
        let [_, my, mx] = self.dims;
        let plan = self.plans[2].get(inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for z in zs {
            let start = (z * my + ys.start) * mx;
            let end = (z * my + ys.end) * mx;
            if end > start {
                plan.process_with_scratch(&mut buf[start..end], &mut scratch);
            }
        }
    }

    fn axis_y(&self, buf: &mut [Complex64], zs: std::ops::Range<usize>, inverse: bool) {
        let [_, my, mx] = self.dims;
        let plan = self.plans[1].get(inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut tmp = vec![Complex64::new(0.0, 0.0); my * mx];
        for z in zs {
            let plane = &mut buf[z * my * mx..(z + 1) * my * mx];
            transpose(plane, &mut tmp, my, mx);
            plan.process_with_scratch(&mut tmp, &mut scratch);
            transpose(&tmp, plane, mx, my);
        }
    }

    fn axis_z(&self, buf: &mut [Complex64], inverse: bool) {
        let [mz, my, mx] = self.dims;
        if mz == 1 {
            return;
        }
        let plan = self.plans[0].get(inverse);
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut tmp = vec![Complex64::new(0.0, 0.0); mz * my * mx];
        transpose(buf, &mut tmp, mz, my * mx);
        plan.process_with_scratch(&mut tmp, &mut scratch);
        transpose(&tmp, buf, my * mx, mz);
    }
}

/// Blocked out-of-place transpose of a `rows × cols` matrix.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Planned 2D transform over a fixed `(y, x)` shape.
pub struct Fft2 {
    ny: usize,
    nx: usize,
    plans: [AxisPlans; 2],
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("ny", &self.ny).field("nx", &self.nx).finish()
    }
}

impl Fft2 {
    pub fn new(ny: usize, nx: usize) -> Self {
        let mut planner = FftPlanner::new();
        let plans = [AxisPlans::new(&mut planner, ny), AxisPlans::new(&mut planner, nx)];
        Self { ny, nx, plans }
    }

    pub fn process(&self, buf: &mut [Complex64], inverse: bool) {
        let (ny, nx) = (self.ny, self.nx);
        let px = self.plans[1].get(inverse);
        let py = self.plans[0].get(inverse);
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); px.get_inplace_scratch_len().max(py.get_inplace_scratch_len())];
        px.process_with_scratch(buf, &mut scratch);
        let mut tmp = vec![Complex64::new(0.0, 0.0); ny * nx];
        transpose(buf, &mut tmp, ny, nx);
        py.process_with_scratch(&mut tmp, &mut scratch);
        transpose(&tmp, buf, nx, ny);
    }

    /// Forward transform of a real image.
    pub fn forward_real(&self, img: &Array2<f64>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = img.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.process(&mut buf, false);
        buf
    }
}

/// Frequencies in cycles per sample for an FFT of length `n`, in natural
/// FFT order (0, 1, …, −1).
pub fn fftfreq(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let k = if i < n.div_ceil(2) { i as isize } else { i as isize - n as isize };
            k as f64 / n as f64
        })
        .collect()
}

/// Moves the zero-frequency sample of each axis to index `n/2`.
pub fn fftshift2<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (ny, nx) = a.dim();
    Array2::from_shape_fn((ny, nx), |(y, x)| a[[(y + ny - ny / 2) % ny, (x + nx - nx / 2) % nx]].clone())
}

/// Inverse of [`fftshift2`].
pub fn ifftshift2<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (ny, nx) = a.dim();
    Array2::from_shape_fn((ny, nx), |(y, x)| a[[(y + ny / 2) % ny, (x + nx / 2) % nx]].clone())
}
