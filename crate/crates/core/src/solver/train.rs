//! Pretraining and joint optimization of the field parameters θ and the
//! Zernike coefficients α through image formation.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Convolver;
use crate::neural::{grid_coordinates, Architecture, Encoder, EncodingSpec, FieldTape, NeuralField, OutputMap, Real};
use crate::optics::{OpticalConfig, PsfModel, WavefrontAberration, ZernikeBasis};
use crate::solver::adam::{cosine_lr, Adam, AdamConfig};
use crate::solver::loss::{regularizer, regularizer_grad, LossBreakdown, LossWeights};
use crate::solver::ssim::ssim_with_grad;
use crate::volume::{crop_margin, normalize_min_max, ImageStack, Structure3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainLoss {
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pretrain_iterations: usize,
    pub train_iterations: usize,
    pub lr_pretrain: f64,
    pub lr_structure: f64,
    pub lr_zernike: f64,
    pub adam: AdamConfig,
    pub pretrain_loss: PretrainLoss,
    pub tv_weight: f64,
    pub l1_weight: f64,
    /// Half-width of the uniform α initialization (λ).
    pub alpha_init: f64,
    /// ANSI indices estimated.
    pub basis: Vec<u32>,
    pub hidden_width: usize,
    /// Linear layers including the output layer.
    pub layers: usize,
    /// 0-based layer re-injecting the encoding.
    pub skip_layer: usize,
    pub output: OutputMap,
    /// Encoding override; derived from the stack size when absent.
    pub encoding: Option<EncodingSpec>,
    /// In-plane directions added to the radial encoding.
    pub encoding_directions: usize,
    /// Structure voxels beyond the stack on each side, `[axial, lateral]`.
    pub margin: [usize; 2],
    pub precision: Precision,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_iterations: 400,
            train_iterations: 2000,
            lr_pretrain: 1e-2,
            lr_structure: 5e-3,
            lr_zernike: 1e-2,
            adam: AdamConfig::default(),
            pretrain_loss: PretrainLoss::Mse,
            tv_weight: 1e-3,
            l1_weight: 1e-4,
            alpha_init: 0.05,
            basis: ZernikeBasis::cocoa_default().modes.iter().map(|m| m.j).collect(),
            hidden_width: 128,
            layers: 9,
            skip_layer: 4,
            output: OutputMap::Softplus,
            encoding: None,
            encoding_directions: 4,
            margin: [0, 0],
            precision: Precision::F32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Shorter schedule for low-SBR, in-vivo-like stacks.
    pub fn in_vivo() -> Self {
        Self { train_iterations: 1000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [(self.lr_pretrain, "lr_pretrain"), (self.lr_structure, "lr_structure"), (self.lr_zernike, "lr_zernike")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.train_iterations == 0 {
            return Err(Error::Config("train_iterations must be at least 1".into()));
        }
        if self.layers < 1 || self.hidden_width == 0 {
            return Err(Error::Config("the field needs at least one layer of positive width".into()));
        }
        if self.tv_weight < 0.0 || self.l1_weight < 0.0 || self.alpha_init < 0.0 {
            return Err(Error::Config("regularizer weights and alpha_init must be non-negative".into()));
        }
        if self.basis.is_empty() {
            return Err(Error::Config("empty Zernike basis".into()));
        }
        Ok(())
    }

    pub fn zernike_basis(&self) -> ZernikeBasis {
        ZernikeBasis::from_ansi(self.basis.iter().copied())
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.hidden_width; self.layers - 1];
        widths.push(1);
        let skips = if self.skip_layer >= 1 && self.skip_layer < self.layers { vec![self.skip_layer] } else { vec![] };
        Architecture { widths, skips, output: self.output }
    }

    fn margin3(&self) -> [usize; 3] {
        [self.margin[0], self.margin[1], self.margin[1]]
    }

    /// Structure grid for a stack of `dims`.
    pub fn structure_dims(&self, dims: (usize, usize, usize)) -> [usize; 3] {
        let m = self.margin3();
        [dims.0 + 2 * m[0], dims.1 + 2 * m[1], dims.2 + 2 * m[2]]
    }

    pub fn encoding_for(&self, dims: (usize, usize, usize)) -> EncodingSpec {
        self.encoding.clone().unwrap_or_else(|| {
            let s = self.structure_dims(dims);
            EncodingSpec::for_grid(s[0], s[1], s[2]).with_directions(self.encoding_directions)
        })
    }

    fn weights(&self) -> LossWeights {
        LossWeights { tv: self.tv_weight, l1: self.l1_weight, range: 1.0 }
    }

    /// Fresh field for a stack of `dims`.
    pub fn init_field(&self, dims: (usize, usize, usize)) -> Result<NeuralField> {
        NeuralField::init(self.encoding_for(dims), self.architecture(), self.seed)
    }
}

/// Loss and gradients at one point.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: LossBreakdown,
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Cached forward chain `θ → s → s ∗ h(α) → loss` for a fixed measurement.
pub(crate) struct Problem<T: Real> {
    target: Array3<f64>,
    encoded: Array2<T>,
    structure_dims: [usize; 3],
    margin: [usize; 3],
    psf: PsfModel,
    conv: Convolver,
    weights: LossWeights,
    /// Fixed factor between the field output and the structure.
    gain: f64,
}

impl<T: Real> Problem<T> {
    /// `gain: None` derives the gain from `target`.
    pub(crate) fn new(
        target: Array3<f64>,
        optical: &OpticalConfig,
        config: &TrainConfig,
        encoding: &EncodingSpec,
        gain: Option<f64>,
    ) -> Result<Self> {
        let (nz, ny, nx) = target.dim();
        let optical = optical.with_dims(nz, ny, nx);
        optical.validate()?;
        let psf = PsfModel::new(&optical, config.zernike_basis())?;
        let margin = config.margin3();
        let structure_dims = config.structure_dims((nz, ny, nx));
        let conv = Convolver::with_margin(structure_dims, [nz, ny, nx], margin);
        let coords = grid_coordinates(structure_dims[0], structure_dims[1], structure_dims[2]);
        let encoded = Encoder::new(encoding)?.encode_batch::<T>(&coords)?;
        let gain = gain.unwrap_or_else(|| gain_for(&target, &psf));
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Config(format!("structure gain must be positive and finite, got {gain}")));
        }
        Ok(Self { target, encoded, structure_dims, margin, psf, conv, weights: config.weights(), gain })
    }

    pub(crate) fn gain(&self) -> f64 {
        self.gain
    }

    /// Field output on the structure grid (before the gain).
    fn structure(&self, field: &NeuralField) -> Result<(Array3<f64>, FieldTape<T>)> {
        let (values, tape) = field.forward(&self.encoded)?;
        let s = self.structure_dims;
        let values = Array3::from_shape_vec((s[0], s[1], s[2]), values).expect("grid size");
        Ok((values, tape))
    }

    /// Structure sampled on the stack grid.
    pub(crate) fn interior(&self, field: &NeuralField) -> Result<Array3<f64>> {
        Ok(crop_margin(&self.structure(field)?.0, self.margin))
    }

    pub(crate) fn predict(&self, field: &NeuralField, alpha: &[f64]) -> Result<Array3<f64>> {
        let (t, _) = self.structure(field)?;
        let h = self.psf.evaluate(alpha);
        Ok(self.conv.forward(&(t * self.gain), &h.values))
    }

    pub(crate) fn evaluate(&self, field: &NeuralField, alpha: &[f64], want_grad: bool) -> Result<Gradients> {
        let (t, ftape) = self.structure(field)?;
        let (h, ptape) = self.psf.evaluate_with_tape(alpha);
        let ss = self.conv.spectrum_of_structure(&(&t * self.gain));
        let hs = self.conv.spectrum_of_kernel(&h.values);
        let g_hat = self.conv.forward_spectra(&ss, &hs);
        let (ssim, dssim) = ssim_with_grad(&g_hat, &self.target, self.weights.range, want_grad);
        let (tv, l1) = regularizer(&t);
        let loss = LossBreakdown::new(ssim, tv, l1, self.weights);
        let Some(dssim) = dssim else {
            return Ok(Gradients { loss, theta: Vec::new(), alpha: Vec::new() });
        };
        let d_ghat = dssim.mapv(|v| -v);
        let (ds, dh) = self.conv.adjoint_both(&d_ghat, &ss, &hs);
        let mut ds = ds * self.gain;
        ds += &regularizer_grad(&t, self.weights.tv, self.weights.l1);
        let alpha_grad = self.psf.backward(&ptape, &dh);
        let upstream: Vec<f64> = ds.iter().copied().collect();
        let theta = field.backward(&self.encoded, &ftape, &upstream);
        Ok(Gradients { loss, theta, alpha: alpha_grad })
    }

    /// Mean squared error against the target over the stack interior.
    fn fit(&self, field: &NeuralField) -> Result<(f64, Vec<f64>)> {
        let (s, tape) = self.structure(field)?;
        let inner = crop_margin(&s, self.margin);
        let n = inner.len() as f64;
        let resid = &inner - &self.target;
        let mse = resid.iter().map(|r| r * r).sum::<f64>() / n;
        let mut up = Array3::<f64>::zeros(s.dim());
        let m = self.margin;
        up.slice_mut(ndarray::s![
            m[0]..m[0] + inner.dim().0,
            m[1]..m[1] + inner.dim().1,
            m[2]..m[2] + inner.dim().2
        ])
        .assign(&resid.mapv(|r| 2.0 * r / n));
        let upstream: Vec<f64> = up.iter().copied().collect();
        Ok((mse, field.backward(&self.encoded, &tape, &upstream)))
    }
}

/// Gain `c` with `s = c · field`, chosen so that blurring the target with
/// the unaberrated PSF preserves its peak: `c = max g / max (g ∗ h₀)`.
fn gain_for(target: &Array3<f64>, psf: &PsfModel) -> f64 {
    let h0 = psf.evaluate(&vec![0.0; psf.basis().len()]);
    let dims = crate::volume::dims3(target);
    let conv = Convolver::same(dims, crate::volume::dims3(&h0.values));
    let blurred = conv.forward(target, &h0.values);
    let peak = target.iter().fold(0.0f64, |m, &v| m.max(v));
    let blurred_peak = blurred.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 && blurred_peak > 0.0 {
        peak / blurred_peak
    } else {
        1.0
    }
}

/// Gain between field output and structure that [`estimate`] would use for
/// `measured` as given (it is computed after min-max normalization there,
/// and is invariant to scaling but not to offsets).
pub fn structure_gain(measured: &ImageStack, optical: &OpticalConfig, config: &TrainConfig) -> Result<f64> {
    let (nz, ny, nx) = measured.dims();
    let psf = PsfModel::new(&optical.with_dims(nz, ny, nx), config.zernike_basis())?;
    Ok(gain_for(&measured.values, &psf))
}

/// Exact loss gradients with respect to θ and α for a measured stack used
/// as-is (no normalization), with SSIM dynamic range 1.
pub fn full_gradients(
    field: &NeuralField,
    alpha: &[f64],
    gain: f64,
    measured: &ImageStack,
    optical: &OpticalConfig,
    config: &TrainConfig,
) -> Result<Gradients> {
    check_alpha(alpha, config)?;
    let problem = Problem::<f64>::new(measured.values.clone(), optical, config, &field.encoding, Some(gain))?;
    problem.evaluate(field, alpha, true)
}

/// Loss at a point, without gradients.
pub fn evaluate_loss(
    field: &NeuralField,
    alpha: &[f64],
    gain: f64,
    measured: &ImageStack,
    optical: &OpticalConfig,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    check_alpha(alpha, config)?;
    let problem = Problem::<f64>::new(measured.values.clone(), optical, config, &field.encoding, Some(gain))?;
    Ok(problem.evaluate(field, alpha, false)?.loss)
}

fn check_alpha(alpha: &[f64], config: &TrainConfig) -> Result<()> {
    if alpha.len() != config.basis.len() {
        return Err(Error::Config(format!("{} coefficients for a {}-mode basis", alpha.len(), config.basis.len())));
    }
    Ok(())
}

fn pretrain_with<T: Real>(problem: &Problem<T>, mut field: NeuralField, config: &TrainConfig) -> Result<(NeuralField, Vec<f64>)> {
    let n = config.pretrain_iterations;
    if n == 0 {
        return Ok((field, Vec::new()));
    }
    calibrate_output_bias(problem, &mut field)?;
    let mut adam = Adam::new(field.params.len(), config.adam);
    let mut trace = Vec::with_capacity(n);
    for t in 0..n {
        let (mse, grad) = problem.fit(&field)?;
        if !mse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training {
                iteration: t,
                message: "non-finite pretraining loss".into(),
                trace: trace.iter().map(|&v| LossBreakdown { total: v, ..Default::default() }).collect(),
            });
        }
        trace.push(mse);
        adam.step(&mut field.params, &grad, cosine_lr(config.lr_pretrain, t, n));
    }
    Ok((field, trace))
}

/// Shifts the last bias so the mean field output matches the target mean.
/// Starting far above a sparse target makes the first Adam steps push every
/// hidden unit below zero at once.
fn calibrate_output_bias<T: Real>(problem: &Problem<T>, field: &mut NeuralField) -> Result<()> {
    let (s, _) = problem.structure(field)?;
    let inner = crop_margin(&s, problem.margin);
    let mean_out = inner.mean().unwrap_or(0.0);
    let mean_target = problem.target.mean().unwrap_or(0.0).max(1e-3);
    let shift = match field.architecture.output {
        OutputMap::Softplus => inverse_softplus(mean_target) - inverse_softplus(mean_out.max(1e-3)),
        OutputMap::Relu => mean_target - mean_out,
    };
    if let Some(b) = field.params.last_mut() {
        *b += shift;
    }
    Ok(())
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Fits the field directly to a stack normalized to `[0, 1]`; returns the
/// conditioned field and the per-iteration mean squared error.
pub fn pretrain(measured: &ImageStack, field: NeuralField, optical: &OpticalConfig, config: &TrainConfig) -> Result<(NeuralField, Vec<f64>)> {
    config.validate()?;
    match config.precision {
        Precision::F32 => pretrain_with(&Problem::<f32>::new(measured.values.clone(), optical, config, &field.encoding, Some(1.0))?, field, config),
        Precision::F64 => pretrain_with(&Problem::<f64>::new(measured.values.clone(), optical, config, &field.encoding, Some(1.0))?, field, config),
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    /// Estimated α over the configured basis (λ).
    pub aberration: WavefrontAberration,
    /// Field sampled on the stack grid, in units of the input stack.
    pub structure: Structure3D,
    pub field: NeuralField,
    /// Structure = gain × field output (normalized units).
    pub gain: f64,
    pub pretrain_trace: Vec<f64>,
    pub trace: Vec<LossBreakdown>,
    /// Loss after the last update.
    pub final_loss: LossBreakdown,
}

fn train_with<T: Real>(measured: &ImageStack, optical: &OpticalConfig, config: &TrainConfig) -> Result<EstimationResult> {
    let dims = measured.dims();
    let target = normalize_min_max(&measured.values);
    let (lo, hi) = crate::volume::min_max(measured.values.iter().copied());
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let field = config.init_field(dims)?;
    let problem = Problem::<T>::new(target, optical, config, &field.encoding, None)?;
    let (mut field, pretrain_trace) = pretrain_with(&problem, field, config)?;

    let basis = config.zernike_basis();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_a1fa);
    let mut alpha: Vec<f64> = (0..basis.len())
        .map(|_| if config.alpha_init > 0.0 { rng.random_range(-config.alpha_init..config.alpha_init) } else { 0.0 })
        .collect();
    let mut adam_theta = Adam::new(field.params.len(), config.adam);
    let mut adam_alpha = Adam::new(alpha.len(), config.adam);
    let n = config.train_iterations;
    let mut trace = Vec::with_capacity(n);
    for t in 0..n {
        let g = problem.evaluate(&field, &alpha, true)?;
        if !g.loss.is_finite() || g.theta.iter().chain(&g.alpha).any(|v| !v.is_finite()) {
            return Err(Error::Training { iteration: t, message: "non-finite loss or gradient".into(), trace });
        }
        trace.push(g.loss);
        if t % 100 == 0 {
            log::debug!("iteration {t}: loss {:.5} (1-ssim {:.5})", g.loss.total, g.loss.ssim_term);
        }
        adam_theta.step(&mut field.params, &g.theta, cosine_lr(config.lr_structure, t, n));
        adam_alpha.step(&mut alpha, &g.alpha, cosine_lr(config.lr_zernike, t, n));
    }
    let final_loss = problem.evaluate(&field, &alpha, false)?.loss;
    if !final_loss.is_finite() {
        return Err(Error::Training { iteration: n, message: "non-finite final loss".into(), trace });
    }
    let values = problem.interior(&field)?.mapv(|v| v * problem.gain() * scale);
    let structure = Structure3D::new(values, measured.pitch)?;
    Ok(EstimationResult {
        aberration: WavefrontAberration::from_vector(&basis, &alpha),
        structure,
        field,
        gain: problem.gain(),
        pretrain_trace,
        trace,
        final_loss,
    })
}

/// Pretrains on the min-max normalized stack, then jointly optimizes θ and
/// α with Adam and cosine annealing.
pub fn estimate(measured: &ImageStack, optical: &OpticalConfig, config: &TrainConfig) -> Result<EstimationResult> {
    config.validate()?;
    let (nz, ny, nx) = measured.dims();
    if nz == 0 || ny == 0 || nx == 0 {
        return Err(Error::Shape("empty stack".into()));
    }
    if measured.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("stack contains non-finite values".into()));
    }
    match config.precision {
        Precision::F32 => train_with::<f32>(measured, optical, config),
        Precision::F64 => train_with::<f64>(measured, optical, config),
    }
}

/// Stack predicted by a field and α on the grid of `dims`.
pub fn predict_stack(
    field: &NeuralField,
    alpha: &[f64],
    gain: f64,
    dims: (usize, usize, usize),
    optical: &OpticalConfig,
    config: &TrainConfig,
) -> Result<Array3<f64>> {
    check_alpha(alpha, config)?;
    let problem = Problem::<f64>::new(Array3::zeros(dims), optical, config, &field.encoding, Some(gain))?;
    problem.predict(field, alpha)
}

