//! File formats: multi-page TIFF stacks with JSON sidecars, aberration JSON,
//! neural-field weight blobs and loss-trace CSV.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};
use crate::neural::{Architecture, EncodingSpec, NeuralField};
use crate::optics::{OpticalConfig, WavefrontAberration};
use crate::solver::LossBreakdown;
use crate::volume::{AcquisitionMeta, ImageStack, VoxelPitch};

pub const LOSS_TRACE_HEADER: &str = "# cocoa loss trace v1";
const WEIGHTS_MAGIC: &[u8; 4] = b"NFLD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    U16,
    F32,
}

/// Metadata stored next to every TIFF stack as `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: SampleFormat,
    /// `[nz, ny, nx]`.
    pub shape: [usize; 3],
    pub lateral_pitch: f64,
    pub axial_step: f64,
    pub gain: f64,
    pub readout_noise: f64,
    pub exposure_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refractive_index: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerical_aperture: Option<f64>,
    /// Free-form values such as iteration counts.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Sidecar {
    pub fn new(format: SampleFormat, shape: (usize, usize, usize), pitch: VoxelPitch, meta: AcquisitionMeta) -> Self {
        Self {
            format,
            shape: [shape.0, shape.1, shape.2],
            lateral_pitch: pitch.lateral,
            axial_step: pitch.axial,
            gain: meta.gain,
            readout_noise: meta.readout_noise,
            exposure_scale: meta.exposure_scale,
            refractive_index: None,
            wavelength: None,
            numerical_aperture: None,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with_optics(mut self, optics: &OpticalConfig) -> Self {
        self.refractive_index = Some(optics.refractive_index);
        self.wavelength = Some(optics.wavelength);
        self.numerical_aperture = Some(optics.numerical_aperture);
        self
    }

    pub fn pitch(&self) -> VoxelPitch {
        VoxelPitch::new(self.lateral_pitch, self.axial_step)
    }

    pub fn meta(&self) -> AcquisitionMeta {
        AcquisitionMeta { gain: self.gain, readout_noise: self.readout_noise, exposure_scale: self.exposure_scale }
    }

    /// Optical configuration matching the stack, with optics fields taken
    /// from the sidecar where present and from `base` otherwise.
    pub fn optics(&self, base: &OpticalConfig) -> OpticalConfig {
        OpticalConfig {
            numerical_aperture: self.numerical_aperture.unwrap_or(base.numerical_aperture),
            wavelength: self.wavelength.unwrap_or(base.wavelength),
            refractive_index: self.refractive_index.unwrap_or(base.refractive_index),
            lateral_pixel: self.lateral_pitch,
            axial_step: self.axial_step,
            nz: self.shape[0],
            ny: self.shape[1],
            nx: self.shape[2],
        }
    }
}

pub fn sidecar_path(tiff: &Path) -> PathBuf {
    tiff.with_extension("json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_sidecar(tiff: &Path, sidecar: &Sidecar) -> Result<()> {
    write_json(&sidecar_path(tiff), sidecar)
}

pub fn read_sidecar(tiff: &Path) -> Result<Sidecar> {
    read_json(&sidecar_path(tiff))
}

/// Writes `values` as one TIFF page per z plane plus the sidecar. Values are
/// rounded and clamped to `[0, 65535]` for [`SampleFormat::U16`].
pub fn write_tiff(path: &Path, values: &Array3<f64>, sidecar: &Sidecar) -> Result<()> {
    let (nz, ny, nx) = values.dim();
    if sidecar.shape != [nz, ny, nx] {
        return Err(Error::Shape(format!("sidecar shape {:?} vs data {:?}", sidecar.shape, (nz, ny, nx))));
    }
    let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path)?))?;
    for plane in values.outer_iter() {
        match sidecar.format {
            SampleFormat::U16 => {
                let data: Vec<u16> = plane.iter().map(|v| v.round().clamp(0.0, u16::MAX as f64) as u16).collect();
                encoder.write_image::<colortype::Gray16>(nx as u32, ny as u32, &data)?;
            }
            SampleFormat::F32 => {
                let data: Vec<f32> = plane.iter().map(|&v| v as f32).collect();
                encoder.write_image::<colortype::Gray32Float>(nx as u32, ny as u32, &data)?;
            }
        }
    }
    drop(encoder);
    write_sidecar(path, sidecar)
}

/// Reads every page of a 16-bit unsigned or 32-bit float grayscale TIFF.
pub fn read_tiff(path: &Path) -> Result<Array3<f64>> {
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut decoder = Decoder::new(BufReader::new(file))?;
    let mut data = Vec::new();
    let (w, h) = decoder.dimensions()?;
    let mut planes = 0;
    loop {
        if decoder.dimensions()? != (w, h) {
            return Err(Error::Shape(format!("{}: pages differ in size", path.display())));
        }
        match decoder.read_image()? {
            DecodingResult::U16(v) => data.extend(v.into_iter().map(f64::from)),
            DecodingResult::F32(v) => data.extend(v.into_iter().map(f64::from)),
            DecodingResult::U8(v) => data.extend(v.into_iter().map(f64::from)),
            DecodingResult::F64(v) => data.extend(v),
            _ => return Err(Error::Tiff(format!("{}: unsupported sample type", path.display()))),
        }
        planes += 1;
        if !decoder.more_images() {
            break;
        }
        decoder.next_image()?;
    }
    Array3::from_shape_vec((planes, h as usize, w as usize), data)
        .map_err(|e| Error::Shape(format!("{}: {e}", path.display())))
}

pub fn write_stack(path: &Path, stack: &ImageStack, format: SampleFormat, optics: Option<&OpticalConfig>) -> Result<()> {
    let mut sidecar = Sidecar::new(format, stack.dims(), stack.pitch, stack.meta);
    if let Some(o) = optics {
        sidecar = sidecar.with_optics(o);
    }
    write_tiff(path, &stack.values, &sidecar)
}

/// Stack and sidecar; the sidecar is required.
pub fn read_stack(path: &Path) -> Result<(ImageStack, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let values = read_tiff(path)?;
    let dims = values.dim();
    if sidecar.shape != [dims.0, dims.1, dims.2] {
        return Err(Error::Shape(format!("sidecar shape {:?} vs TIFF {:?}", sidecar.shape, dims)));
    }
    let stack = ImageStack::new(values, sidecar.pitch())?.with_meta(sidecar.meta());
    Ok((stack, sidecar))
}

pub fn write_aberration(path: &Path, aberration: &WavefrontAberration) -> Result<()> {
    write_json(path, aberration)
}

pub fn read_aberration(path: &Path) -> Result<WavefrontAberration> {
    let w: WavefrontAberration = read_json(path)?;
    if let Some((j, v)) = w.coefficients.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Input(format!("{}: coefficient {j} is {v}", path.display())));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    version: u32,
    architecture: Architecture,
    encoding: EncodingSpec,
    seed: u64,
    param_count: usize,
}

/// `NFLD`, header length (u32 LE), JSON header, parameters as f32 LE.
pub fn write_weights(path: &Path, field: &NeuralField) -> Result<()> {
    let header = serde_json::to_vec(&WeightsHeader {
        version: 1,
        architecture: field.architecture.clone(),
        encoding: field.encoding.clone(),
        seed: field.seed,
        param_count: field.params.len(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for &p in &field.params {
        w.write_all(&(p as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<NeuralField> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |what: &str| Error::Input(format!("{}: {what}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(bad("not a weight blob"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: WeightsHeader = serde_json::from_slice(bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?)?;
    let body = &bytes[8 + len..];
    if body.len() != 4 * header.param_count {
        return Err(bad("parameter count does not match the header"));
    }
    let params = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    NeuralField::with_params(header.encoding, header.architecture, params, header.seed)
}

pub fn write_loss_trace(path: &Path, trace: &[LossBreakdown]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{LOSS_TRACE_HEADER}")?;
    writeln!(w, "iteration,total,ssim_term,tv_term,l1_term")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{i},{:e},{:e},{:e},{:e}", l.total, l.ssim_term, l.tv_term, l.l1_term)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<LossBreakdown>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_TRACE_HEADER) {
        return Err(Error::Input(format!("{}: missing loss trace header", path.display())));
    }
    lines.next();
    lines
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Input(format!("{}: {e}", path.display()))))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(Error::Input(format!("{}: expected 5 columns", path.display())));
            }
            Ok(LossBreakdown { total: v[0], ssim_term: v[1], tv_term: v[2], l1_term: v[3] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::OutputMap;

    #[test]
    fn float_stack_round_trips_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tif");
        let values = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| z as f64 * 0.5 + y as f64 * 0.25 - x as f64);
        let stack = ImageStack::new(values.clone(), VoxelPitch::new(0.12, 0.3)).unwrap();
        write_stack(&path, &stack, SampleFormat::F32, Some(&OpticalConfig::default())).unwrap();
        let (back, sidecar) = read_stack(&path).unwrap();
        assert_eq!(back.values, values);
        assert_eq!(back.pitch, stack.pitch);
        assert_eq!(sidecar.wavelength, Some(OpticalConfig::default().wavelength));
    }

    #[test]
    fn u16_stack_rounds_and_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tif");
        let values = Array3::from_shape_vec((2, 1, 2), vec![1.4, 1.6, -3.0, 70000.0]).unwrap();
        let stack = ImageStack::new(values, VoxelPitch::new(0.1, 0.2)).unwrap();
        write_stack(&path, &stack, SampleFormat::U16, None).unwrap();
        let (back, _) = read_stack(&path).unwrap();
        assert_eq!(back.values.iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0, 65535.0]);
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tif");
        let stack = ImageStack::new(Array3::zeros((1, 2, 2)), VoxelPitch::new(0.1, 0.2)).unwrap();
        write_stack(&path, &stack, SampleFormat::F32, None).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(read_stack(&path).is_err());
    }

    #[test]
    fn aberration_json_uses_string_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let w = WavefrontAberration::from_pairs([(7, 0.15), (12, -0.02)]);
        write_aberration(&path, &w).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let raw: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(raw["7"], 0.15);
        assert_eq!(read_aberration(&path).unwrap(), w);
        std::fs::write(&path, "{\"x\": 1.0}").unwrap();
        assert!(read_aberration(&path).is_err());
    }

    #[test]
    fn weights_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let arch = Architecture { widths: vec![4, 3, 1], skips: vec![1], output: OutputMap::Softplus };
        let field = NeuralField::init(EncodingSpec::for_grid(4, 8, 8), arch, 3).unwrap();
        write_weights(&path, &field).unwrap();
        let back = read_weights(&path).unwrap();
        assert_eq!(back.architecture, field.architecture);
        assert_eq!(back.encoding, field.encoding);
        for (a, b) in back.params.iter().zip(&field.params) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_weights(&path).is_err());
    }

    #[test]
    fn loss_trace_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let trace = vec![
            LossBreakdown { total: 0.5, ssim_term: 0.4, tv_term: 0.07, l1_term: 0.03 },
            LossBreakdown { total: 0.25, ssim_term: 0.2, tv_term: 0.04, l1_term: 0.01 },
        ];
        write_loss_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(LOSS_TRACE_HEADER));
        assert_eq!(read_loss_trace(&path).unwrap(), trace);
    }
}
