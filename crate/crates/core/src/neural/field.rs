//! Skip-connected perceptron mapping encoded coordinates to non-negative
//! structure values.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::encoding::{EncodingSpec, Encoder};
use crate::neural::Real;

/// Final non-negativity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMap {
    Softplus,
    Relu,
}

impl OutputMap {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputMap::Softplus => softplus(z),
            OutputMap::Relu => z.max(0.0),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            OutputMap::Softplus => sigmoid(z),
            OutputMap::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Layer layout of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Output width of every linear layer; the last must be 1.
    pub widths: Vec<usize>,
    /// Layer indices (0-based, ≥ 1) whose input re-concatenates the encoding.
    pub skips: Vec<usize>,
    pub output: OutputMap,
}

impl Architecture {
    /// Nine linear layers of `hidden` units with the encoding re-injected
    /// at the fifth layer.
    pub fn nine_layer(hidden: usize) -> Self {
        let mut widths = vec![hidden; 8];
        widths.push(1);
        Self { widths, skips: vec![4], output: OutputMap::Softplus }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if *self.widths.last().unwrap() != 1 {
            return Err(Error::Config("the last layer must have width 1".into()));
        }
        if self.skips.iter().any(|&k| k == 0 || k >= self.widths.len()) {
            return Err(Error::Config(format!("skip layers {:?} out of range", self.skips)));
        }
        Ok(())
    }
}

/// Coordinate network: encoding spec, architecture and flat parameters.
///
/// Parameters are stored per layer as the weight matrix (`in × out`,
/// row-major; rows for the previous activation first, then rows for the
/// re-injected encoding) followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    pub encoding: EncodingSpec,
    pub architecture: Architecture,
    pub params: Vec<f64>,
    pub seed: u64,
}

/// Per-layer parameter location.
#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    prev: usize,
    skip: usize,
    out: usize,
    offset: usize,
}

impl LayerLayout {
    fn fan_in(&self) -> usize {
        self.prev + self.skip
    }

    fn len(&self) -> usize {
        (self.fan_in() + 1) * self.out
    }
}

struct LayerWeights<T> {
    prev: Option<Array2<T>>,
    skip: Option<Array2<T>>,
    bias: Array1<T>,
}

/// Activations kept from a forward pass for [`NeuralField::backward`].
#[derive(Debug, Clone)]
pub struct FieldTape<T> {
    hidden: Vec<Array2<T>>,
    output_pre: Vec<f64>,
}

impl NeuralField {
    /// Uniform initialization in ±1/√fan_in for weights and biases.
    pub fn init(encoding: EncodingSpec, architecture: Architecture, seed: u64) -> Result<Self> {
        encoding.validate()?;
        architecture.validate()?;
        let mut field = Self { encoding, architecture, params: Vec::new(), seed };
        let layouts = field.layouts();
        let total = layouts.iter().map(LayerLayout::len).sum();
        let mut params = Vec::with_capacity(total);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layouts {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for _ in 0..l.len() {
                params.push(rng.random_range(-bound..bound));
            }
        }
        field.params = params;
        Ok(field)
    }

    /// Field with explicit parameters; the count must match the layout.
    pub fn with_params(encoding: EncodingSpec, architecture: Architecture, params: Vec<f64>, seed: u64) -> Result<Self> {
        encoding.validate()?;
        architecture.validate()?;
        let field = Self { encoding, architecture, params, seed };
        if field.params.len() != field.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                field.param_count(),
                field.params.len()
            )));
        }
        Ok(field)
    }

    pub fn num_layers(&self) -> usize {
        self.architecture.widths.len()
    }

    /// Σ (in + 1) × out over the layers.
    pub fn param_count(&self) -> usize {
        self.layouts().iter().map(LayerLayout::len).sum()
    }

    pub fn input_len(&self) -> usize {
        self.encoding.feature_len()
    }

    fn layouts(&self) -> Vec<LayerLayout> {
        let enc = self.encoding.feature_len();
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.architecture.widths.len());
        for (i, &w) in self.architecture.widths.iter().enumerate() {
            let (prev, skip) = if i == 0 {
                (0, enc)
            } else {
                (self.architecture.widths[i - 1], if self.architecture.skips.contains(&i) { enc } else { 0 })
            };
            let l = LayerLayout { prev, skip, out: w, offset };
            offset += l.len();
            out.push(l);
        }
        out
    }

    fn weights<T: Real>(&self, l: &LayerLayout) -> LayerWeights<T> {
        let p = &self.params[l.offset..l.offset + l.len()];
        let take = |rows: usize, start: usize| -> Option<Array2<T>> {
            (rows > 0).then(|| {
                Array2::from_shape_fn((rows, l.out), |(r, c)| T::cast(p[(start + r) * l.out + c]))
            })
        };
        let prev = take(l.prev, 0);
        let skip = take(l.skip, l.prev);
        let bias = Array1::from_iter(p[l.fan_in() * l.out..].iter().map(|&v| T::cast(v)));
        LayerWeights { prev, skip, bias }
    }

    fn check_input<T: Real>(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::Config(format!(
                "encoded input has {} features, the field expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        if self.params.len() != self.param_count() {
            return Err(Error::Config("parameter vector does not match the architecture".into()));
        }
        Ok(())
    }

    /// Forward pass over a batch of encoded coordinates `(batch, features)`.
    pub fn forward<T: Real>(&self, x: &Array2<T>) -> Result<(Vec<f64>, FieldTape<T>)> {
        self.check_input(&x.view())?;
        let layouts = self.layouts();
        let mut hidden: Vec<Array2<T>> = Vec::with_capacity(layouts.len() - 1);
        let mut output_pre = Vec::new();
        for (i, l) in layouts.iter().enumerate() {
            let w = self.weights::<T>(l);
            let mut z = Array2::from_elem((x.nrows(), l.out), T::zero());
            if let Some(wp) = &w.prev {
                ndarray::linalg::general_mat_mul(T::one(), &hidden[i - 1], wp, T::zero(), &mut z);
            }
            if let Some(ws) = &w.skip {
                ndarray::linalg::general_mat_mul(T::one(), x, ws, T::one(), &mut z);
            }
            z += &w.bias;
            if i + 1 < layouts.len() {
                z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                hidden.push(z);
            } else {
                output_pre = z.column(0).iter().map(|v| v.widen()).collect();
            }
        }
        let out = output_pre.iter().map(|&z| self.architecture.output.apply(z)).collect();
        Ok((out, FieldTape { hidden, output_pre }))
    }

    /// Forward pass returning only the outputs.
    pub fn evaluate<T: Real>(&self, x: &Array2<T>) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.0)
    }

    /// Evaluates the field at normalized coordinates `[x, y, z]`.
    pub fn evaluate_coords(&self, coords: &[[f64; 3]]) -> Result<Vec<f64>> {
        let enc = Encoder::new(&self.encoding)?;
        let x = enc.encode_batch::<f64>(coords)?;
        self.evaluate(&x)
    }

    /// Reverse-mode gradient of `Σ_b upstream[b] · output[b]` with respect
    /// to the parameters, for the batch of a prior [`NeuralField::forward`].
    pub fn backward<T: Real>(&self, x: &Array2<T>, tape: &FieldTape<T>, upstream: &[f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), x.nrows(), "one sensitivity per sample");
        let layouts = self.layouts();
        let mut grad = vec![0.0; self.param_count()];
        let map = self.architecture.output;
        let mut delta = Array2::from_shape_fn((x.nrows(), 1), |(b, _)| {
            T::cast(upstream[b] * map.derivative(tape.output_pre[b]))
        });
        for (i, l) in layouts.iter().enumerate().rev() {
            let w = self.weights::<T>(l);
            let g = &mut grad[l.offset..l.offset + l.len()];
            if l.prev > 0 {
                let a = &tape.hidden[i - 1];
                let gw = a.t().dot(&delta);
                write_block(g, &gw, 0, l.out);
            }
            if l.skip > 0 {
                let gw = x.t().dot(&delta);
                write_block(g, &gw, l.prev, l.out);
            }
            let gb = delta.sum_axis(Axis(0));
            for (dst, v) in g[l.fan_in() * l.out..].iter_mut().zip(gb.iter()) {
                *dst = v.widen();
            }
            if i == 0 {
                break;
            }
            let wp = w.prev.expect("hidden layer has a previous activation");
            let mut next = delta.dot(&wp.t());
            let a = &tape.hidden[i - 1];
            ndarray::Zip::from(&mut next).and(a).for_each(|d, &act| {
                if act <= T::zero() {
                    *d = T::zero();
                }
            });
            delta = next;
        }
        grad
    }

    /// Encoded inputs of a full `(nz, ny, nx)` voxel grid.
    pub fn encode_grid<T: Real>(&self, dims: (usize, usize, usize)) -> Result<Array2<T>> {
        let enc = Encoder::new(&self.encoding)?;
        enc.encode_batch(&crate::neural::encoding::grid_coordinates(dims.0, dims.1, dims.2))
    }

    /// First-layer weight slice used by tests to inspect the layout.
    #[doc(hidden)]
    pub fn layer_param_range(&self, layer: usize) -> std::ops::Range<usize> {
        let l = self.layouts()[layer];
        l.offset..l.offset + l.len()
    }
}

fn write_block<T: Real>(dst: &mut [f64], block: &Array2<T>, row_start: usize, cols: usize) {
    for ((r, c), v) in block.indexed_iter() {
        dst[(row_start + r) * cols + c] = v.widen();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use crate::neural::encoding::FrequencySpacing;

    fn small_encoding() -> EncodingSpec {
        EncodingSpec {
            radial_frequencies: 2,
            axial_frequencies: 2,
            radial_base: 1.0,
            radial_max: 3.0,
            axial_base: 1.0,
            axial_max: 2.0,
            spacing: FrequencySpacing::Linear,
            include_raw_coords: true,
            directions: 1,
        }
    }

    fn coords(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn nine_layer_param_count() {
        let enc = EncodingSpec::for_grid(32, 64, 64);
        let f = NeuralField::init(enc.clone(), Architecture::nine_layer(128), 0).unwrap();
        assert_eq!(f.num_layers(), 9);
        let e = enc.feature_len();
        let want = (e + 1) * 128 + 3 * 129 * 128 + (128 + e + 1) * 128 + 3 * 129 * 128 + 129;
        assert_eq!(f.param_count(), want);
        assert_eq!(f.params.len(), want);
    }

    #[test]
    fn zero_parameters_give_constant_output() {
        let arch = Architecture::nine_layer(8);
        let mut f = NeuralField::init(small_encoding(), arch, 1).unwrap();
        f.params.iter_mut().for_each(|p| *p = 0.0);
        let out = f.evaluate_coords(&coords(10, 2)).unwrap();
        for v in out {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Architecture::nine_layer(16);
        let a = NeuralField::init(small_encoding(), arch.clone(), 5).unwrap();
        let b = NeuralField::init(small_encoding(), arch.clone(), 5).unwrap();
        let c = NeuralField::init(small_encoding(), arch, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        for (i, l) in a.layouts().iter().enumerate() {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            assert!(a.params[a.layer_param_range(i)].iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn two_layer_matches_hand_computation() {
        let enc = small_encoding();
        let arch = Architecture { widths: vec![3, 1], skips: vec![], output: OutputMap::Softplus };
        let f = NeuralField::init(enc.clone(), arch, 9).unwrap();
        let c = [0.2, -0.4, 0.6];
        let feats = crate::neural::encoding::encode(c, &enc).unwrap();
        let e = feats.len();
        let p = &f.params;
        let mut hidden = [0.0; 3];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut z = p[e * 3 + j];
            for (i, v) in feats.iter().enumerate() {
                z += v * p[i * 3 + j];
            }
            *h = z.max(0.0);
        }
        let off = (e + 1) * 3;
        let mut z = p[off + 3];
        for (j, h) in hidden.iter().enumerate() {
            z += h * p[off + j];
        }
        let want = z.exp().ln_1p();
        let got = f.evaluate_coords(&[c]).unwrap()[0];
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let f = NeuralField::init(small_encoding(), Architecture::nine_layer(4), 0).unwrap();
        let bad = Array2::<f64>::zeros((2, f.input_len() + 1));
        assert!(matches!(f.forward(&bad), Err(Error::Config(_))));
    }

    fn fd_check(arch: Architecture, seed: u64) {
        let enc = small_encoding();
        let f = NeuralField::init(enc.clone(), arch, seed).unwrap();
        let pts = coords(7, seed + 100);
        let x = Encoder::new(&enc).unwrap().encode_batch::<f64>(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let up: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, tape) = f.forward(&x).unwrap();
        let g = f.backward(&x, &tape, &up);
        let objective = |p: &[f64]| -> f64 {
            let mut ff = f.clone();
            ff.params = p.to_vec();
            ff.evaluate(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        // central differences resolve gradients only down to roundoff
        let floor = 1e-4 * g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst: f64 = 0.0;
        for k in 0..f.params.len() {
            let mut pp = f.params.clone();
            pp[k] += h;
            let mut pm = f.params.clone();
            pm[k] -= h;
            let fd = (objective(&pp) - objective(&pm)) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(floor);
            worst = worst.max(err);
        }
        assert!(worst < 1e-6, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(Architecture { widths: vec![4, 1], skips: vec![], output: OutputMap::Softplus }, 1);
        fd_check(Architecture { widths: vec![5, 4, 3, 1], skips: vec![2], output: OutputMap::Softplus }, 2);
        fd_check(Architecture::nine_layer(3), 3);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = NeuralField::init(small_encoding(), Architecture::nine_layer(4), 0).unwrap();
        let x = f.encode_grid::<f64>((2, 3, 3)).unwrap();
        let (_, tape) = f.forward(&x).unwrap();
        assert!(f.backward(&x, &tape, &vec![0.0; 18]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let f = NeuralField::init(small_encoding(), Architecture::nine_layer(4), 4).unwrap();
        let x = Encoder::new(&f.encoding).unwrap().encode_batch::<f64>(&coords(3, 1)).unwrap();
        let (_, tape) = f.forward(&x).unwrap();
        let total = f.backward(&x, &tape, &[1.0, 1.0, 1.0]);
        let mut summed = vec![0.0; total.len()];
        for b in 0..3 {
            let xb = x.slice(s![b..b + 1, ..]).to_owned();
            let (_, tb) = f.forward(&xb).unwrap();
            for (s, g) in summed.iter_mut().zip(f.backward(&xb, &tb, &[1.0])) {
                *s += g;
            }
        }
        for (a, b) in total.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let f = NeuralField::init(small_encoding(), Architecture::nine_layer(16), 8).unwrap();
        let x64 = f.encode_grid::<f64>((3, 4, 4)).unwrap();
        let x32 = f.encode_grid::<f32>((3, 4, 4)).unwrap();
        let a = f.evaluate(&x64).unwrap();
        let b = f.evaluate(&x32).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-4);
        }
    }
}
