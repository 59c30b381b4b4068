//! Sine-activated coordinate networks mapping normalized k-space positions
//! to per-coil complex values.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensorcore::{Activation, AdamState, Layer, MlpParams, Tensor};

/// Coordinates in `[0, 1]` are mapped to `2u - 1` before the first layer.
pub const INPUT_SCALE: f64 = 2.0;
pub const INPUT_SHIFT: f64 = -1.0;

/// Slack allowed outside `[0, 1]` for coordinates that went through f32.
pub const DOMAIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SirenConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    /// Total number of layers, output layer included.
    pub depth: usize,
    pub omega0: f64,
    pub n_coils: usize,
}

impl Default for SirenConfig {
    fn default() -> Self {
        SirenConfig {
            input_dim: 2,
            hidden_width: 256,
            depth: 8,
            omega0: 30.0,
            n_coils: 4,
        }
    }
}

impl SirenConfig {
    /// The full-size network: 22 layers of 512.
    pub fn paper_scale(input_dim: usize, n_coils: usize) -> Self {
        SirenConfig {
            input_dim,
            hidden_width: 512,
            depth: 22,
            omega0: 30.0,
            n_coils,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_coils
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.input_dim) {
            return Err(Error::domain(format!("input_dim {} must be 2 or 3", self.input_dim)));
        }
        if self.depth < 2 {
            return Err(Error::domain("depth must be at least 2"));
        }
        if self.hidden_width == 0 || self.n_coils == 0 {
            return Err(Error::domain("hidden_width and n_coils must be positive"));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::domain("omega0 must be positive"));
        }
        Ok(())
    }

    /// Recovers the configuration of a network built by [`init_siren`].
    pub fn of(params: &MlpParams) -> Result<Self> {
        let omega0 = match params.layers[0].activation {
            Activation::Sine(w) => w,
            other => return Err(Error::contract(format!("first layer is {other:?}, not a sine layer"))),
        };
        if params.output_dim() % 2 != 0 {
            return Err(Error::contract("output width is not a whole number of (re, im) pairs"));
        }
        Ok(SirenConfig {
            input_dim: params.input_dim(),
            hidden_width: params.layers[0].fan_out(),
            depth: params.layers.len(),
            omega0,
            n_coils: params.output_dim() / 2,
        })
    }
}

/// Layer stack `dims[0] -> ... -> dims[last]`, sine everywhere but the output.
///
/// Every sine layer computes `sin(omega0 * (W x + b))`. The first layer draws
/// `W ~ U(-1/fan_in, 1/fan_in)`; later layers draw
/// `W ~ U(-sqrt(6/fan_in)/omega0, +sqrt(6/fan_in)/omega0)`, so their
/// pre-activations have unit-frequency statistics. Biases start at zero.
fn siren_layers(dims: &[usize], omega0: f64, rng: &mut ChaCha8Rng) -> MlpParams {
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let bound = if i == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / omega0
            };
            Layer {
                weights: Tensor::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound)),
                bias: Tensor::zeros(&[fan_out]),
                activation: if i + 1 == n { Activation::Identity } else { Activation::Sine(omega0) },
            }
        })
        .collect();
    MlpParams { layers }
}

pub fn init_siren(cfg: &SirenConfig, seed: u64) -> Result<MlpParams> {
    cfg.validate()?;
    let mut dims = vec![cfg.input_dim];
    dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.depth - 1));
    dims.push(cfg.output_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(siren_layers(&dims, cfg.omega0, &mut rng))
}

/// Checks flattened `n x dim` coordinates lie in `[0, 1]` and applies the
/// internal centering map.
pub fn network_input(coords: &[f64], dim: usize) -> Result<Tensor> {
    if dim == 0 || coords.len() % dim != 0 {
        return Err(Error::shape(format!("{} coordinate values are not a multiple of {dim}", coords.len())));
    }
    if let Some((i, v)) = coords
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= -DOMAIN_TOLERANCE && **v <= 1.0 + DOMAIN_TOLERANCE))
    {
        return Err(Error::domain(format!("coordinate {} of sample {} is {v}, outside [0, 1]", i % dim, i / dim)));
    }
    let data = coords.iter().map(|u| INPUT_SCALE * u + INPUT_SHIFT).collect();
    Tensor::new(vec![coords.len() / dim, dim], data)
}

/// Network output for normalized coordinates: `n x 2 n_coils` real channels
/// laid out `[re_1, im_1, re_2, im_2, ...]`.
pub fn predict(params: &MlpParams, coords: &[f64]) -> Result<Tensor> {
    let x = network_input(coords, params.input_dim())?;
    params.evaluate(&x)
}

/// [`predict`] reinterpreted as complex values, sample-major (`j * n_coils + c`).
pub fn predict_values(params: &MlpParams, coords: &[f64]) -> Result<Vec<Complex64>> {
    Ok(channels_to_values(predict(params, coords)?.data()))
}

pub fn channels_to_values(channels: &[f64]) -> Vec<Complex64> {
    channels.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub fn values_to_channels(values: &[Complex64]) -> Vec<f64> {
    values.iter().flat_map(|v| [v.re, v.im]).collect()
}

/// `f(x) = a0 + sum_n a_n cos(2 pi n x) + b_n sin(2 pi n x)` on the unit period.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeriesTarget {
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl FourierSeriesTarget {
    pub fn zero() -> Self {
        FourierSeriesTarget {
            a0: 0.0,
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    /// `sin(2 pi n x)`.
    pub fn sine(n: usize) -> Self {
        let mut b = vec![0.0; n];
        b[n - 1] = 1.0;
        FourierSeriesTarget {
            a0: 0.0,
            a: vec![0.0; n],
            b,
        }
    }

    /// Harmonics `1..=n` with coefficients drawn from `U(-1, 1)`.
    pub fn random(harmonics: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FourierSeriesTarget {
            a0: rng.gen_range(-1.0..1.0),
            a: (0..harmonics).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            b: (0..harmonics).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * x;
        let cos: f64 = self.a.iter().enumerate().map(|(n, a)| a * (w * (n + 1) as f64).cos()).sum();
        let sin: f64 = self.b.iter().enumerate().map(|(n, b)| b * (w * (n + 1) as f64).sin()).sum();
        self.a0 + cos + sin
    }

    pub fn harmonics(&self) -> usize {
        self.a.len().max(self.b.len())
    }
}

#[derive(Clone, Debug)]
pub struct FourierFitConfig {
    pub hidden_width: usize,
    pub depth: usize,
    pub omega0: f64,
    pub iters: usize,
    pub lr: f64,
    /// Training grid size; the held-out grid sits at the midpoints.
    pub n_train: usize,
    pub seed: u64,
}

impl Default for FourierFitConfig {
    fn default() -> Self {
        FourierFitConfig {
            hidden_width: 64,
            depth: 4,
            omega0: 30.0,
            iters: 1000,
            lr: 3e-4,
            n_train: 200,
            seed: 0,
        }
    }
}

pub struct FourierFit {
    pub params: MlpParams,
    /// Training mean-squared error before each update.
    pub trace: Vec<f64>,
    /// Relative L2 error on the held-out grid (RMS error if the target is 0).
    pub error: f64,
}

/// `||p - t|| / ||t||`, or the RMS of `p - t` when `t` vanishes.
pub fn relative_l2(pred: &[f64], target: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    let den: f64 = target.iter().map(|t| t * t).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        (num / pred.len().max(1) as f64).sqrt()
    }
}

/// Regresses a one-dimensional sine network onto a Fourier series.
pub fn fit_fourier_demo(target: &FourierSeriesTarget, cfg: &FourierFitConfig) -> Result<FourierFit> {
    if cfg.depth < 2 || cfg.hidden_width == 0 || cfg.n_train < 2 {
        return Err(Error::domain("fit needs depth >= 2, a hidden layer and two grid points"));
    }
    if target.harmonics() > 8 {
        return Err(Error::domain("fit demo supports at most 8 harmonics"));
    }
    let mut dims = vec![1];
    dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.depth - 1));
    dims.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = siren_layers(&dims, cfg.omega0, &mut rng);

    let step = 1.0 / (cfg.n_train - 1) as f64;
    let train_x: Vec<f64> = (0..cfg.n_train).map(|i| i as f64 * step).collect();
    let test_x: Vec<f64> = (0..cfg.n_train - 1).map(|i| (i as f64 + 0.5) * step).collect();
    let input = network_input(&train_x, 1)?;
    let y = Tensor::new(vec![cfg.n_train, 1], train_x.iter().map(|&x| target.eval(x)).collect())?;

    let mut adam = AdamState::new(&params, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.iters);
    for it in 0..cfg.iters {
        let (loss, grads) = params.value_and_grad(&input, |tape, out| {
            let t = tape.leaf(y.clone());
            let d = tape.sub(out, t)?;
            let d = tape.square(d)?;
            tape.mean(d)
        })?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "fourier fit diverged at iteration {it} (last finite loss {:?})",
                trace.last()
            )));
        }
        trace.push(loss);
        adam.step(&mut params, &grads)?;
    }

    let pred = params.evaluate(&network_input(&test_x, 1)?)?;
    let truth: Vec<f64> = test_x.iter().map(|&x| target.eval(x)).collect();
    let error = relative_l2(pred.data(), &truth);
    Ok(FourierFit { params, trace, error })
}

const KGW_MAGIC: &[u8; 4] = b"KGWT";
const KGW_VERSION: u32 = 1;

/// Serializes a network in the `.kgw` layout (weights narrowed to f32).
pub fn encode_weights(params: &MlpParams) -> Result<Vec<u8>> {
    let cfg = SirenConfig::of(params)?;
    let mut w = Writer::new();
    w.bytes(KGW_MAGIC);
    w.u32(KGW_VERSION);
    w.u32(cfg.input_dim as u32);
    w.u32(cfg.n_coils as u32);
    w.f32(cfg.omega0 as f32);
    w.u32(params.layers.len() as u32);
    for l in &params.layers {
        w.u32(l.fan_in() as u32);
        w.u32(l.fan_out() as u32);
        for &v in l.weights.data() {
            w.f32(v as f32);
        }
        for &v in l.bias.data() {
            w.f32(v as f32);
        }
    }
    Ok(w.buf)
}

pub fn decode_weights(bytes: &[u8]) -> Result<MlpParams> {
    let mut r = Reader::new(bytes);
    r.magic(KGW_MAGIC)?;
    r.version(KGW_VERSION)?;
    let input_dim = r.u32("input_dim")? as usize;
    let n_coils = r.u32("n_coils")? as usize;
    let omega0 = r.f32("omega0")? as f64;
    let at = r.offset();
    let n_layers = r.u32("n_layers")? as usize;
    if n_layers == 0 {
        return Err(Error::format(at, "network has no layers"));
    }
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for i in 0..n_layers {
        let at = r.offset();
        let fan_in = r.u32("fan_in")? as usize;
        let fan_out = r.u32("fan_out")? as usize;
        let expected_in = if i == 0 { input_dim } else { layers.last().map(Layer::fan_out).unwrap_or(0) };
        if fan_in != expected_in || fan_out == 0 {
            return Err(Error::format(at, format!("layer {i} is {fan_in} -> {fan_out}, expected fan-in {expected_in}")));
        }
        let weights = r.f32s(fan_in * fan_out, &format!("layer {i} weights"))?;
        let bias = r.f32s(fan_out, &format!("layer {i} biases"))?;
        layers.push(Layer {
            weights: Tensor::new(vec![fan_out, fan_in], weights)?,
            bias: Tensor::new(vec![fan_out], bias)?,
            activation: if i + 1 == n_layers { Activation::Identity } else { Activation::Sine(omega0) },
        });
    }
    r.finish()?;
    if layers.last().map(Layer::fan_out) != Some(2 * n_coils) {
        return Err(Error::format(r.offset(), format!("output layer does not emit 2 x {n_coils} channels")));
    }
    MlpParams::new(layers)
}

pub fn save_weights(params: &MlpParams, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf = encode_weights(params)?;
    w.save(path)
}

pub fn load_weights(path: &Path) -> Result<MlpParams> {
    decode_weights(&read_file(path)?)
}

/// Rounds every parameter through f32, as a save/load cycle does.
pub fn quantize_f32(params: &MlpParams) -> MlpParams {
    let mut p = params.clone();
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v = *v as f32 as f64;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SirenConfig {
        SirenConfig {
            input_dim: 3,
            hidden_width: 4,
            depth: 2,
            omega0: 30.0,
            n_coils: 1,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = SirenConfig {
            hidden_width: 16,
            depth: 4,
            ..SirenConfig::default()
        };
        assert_eq!(init_siren(&cfg, 5).unwrap(), init_siren(&cfg, 5).unwrap());
        assert_ne!(init_siren(&cfg, 5).unwrap(), init_siren(&cfg, 6).unwrap());
    }

    #[test]
    fn param_count_from_dims() {
        assert_eq!(init_siren(&small(), 0).unwrap().param_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn init_bounds() {
        let cfg = SirenConfig {
            hidden_width: 64,
            depth: 4,
            ..SirenConfig::default()
        };
        let p = init_siren(&cfg, 1).unwrap();
        let first = p.layers[0].weights.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(first <= 1.0 / 2.0);
        for l in &p.layers[1..] {
            let bound = (6.0 / l.fan_in() as f64).sqrt() / cfg.omega0;
            assert!(l.weights.data().iter().all(|v| v.abs() <= bound));
            assert!(l.bias.data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn config_validation() {
        assert!(SirenConfig { input_dim: 1, ..small() }.validate().is_err());
        assert!(SirenConfig { depth: 1, ..small() }.validate().is_err());
        assert_eq!(SirenConfig::of(&init_siren(&small(), 0).unwrap()).unwrap(), small());
    }

    #[test]
    fn constant_network_and_shapes() {
        let mut p = init_siren(&SirenConfig { n_coils: 2, ..small() }, 0).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let v = [0.1, -0.2, 0.3, 0.4];
        p.layers[1].bias = Tensor::new(vec![4], v.to_vec()).unwrap();
        let coords: Vec<f64> = (0..7 * 3).map(|i| (i % 5) as f64 / 4.0).collect();
        let out = predict(&p, &coords).unwrap();
        assert_eq!(out.shape(), &[7, 4]);
        for r in 0..7 {
            assert_eq!(out.row(r), &v);
        }
        let vals = predict_values(&p, &coords).unwrap();
        assert_eq!(vals.len(), 14);
        assert_eq!(vals[1], Complex64::new(0.3, 0.4));
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let p = init_siren(&small(), 0).unwrap();
        assert!(matches!(predict(&p, &[0.5, 0.5, 1.01]), Err(Error::Domain(_))));
        assert!(matches!(predict(&p, &[-0.2, 0.5, 0.5]), Err(Error::Domain(_))));
        assert!(predict(&p, &[0.0, 1.0 + 1e-12, 0.5]).is_ok());
    }

    #[test]
    fn overfits_twenty_samples() {
        let cfg = SirenConfig {
            input_dim: 2,
            hidden_width: 32,
            depth: 3,
            omega0: 30.0,
            n_coils: 1,
        };
        let mut p = init_siren(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = network_input(&coords, 2).unwrap();
        let yt = Tensor::new(vec![20, 2], y.clone()).unwrap();
        let mut adam = AdamState::new(&p, 1e-3);
        for _ in 0..1500 {
            let (_, g) = p
                .value_and_grad(&x, |tape, out| {
                    let t = tape.leaf(yt.clone());
                    let d = tape.sub(out, t)?;
                    let d = tape.square(d)?;
                    tape.mean(d)
                })
                .unwrap();
            adam.step(&mut p, &g).unwrap();
        }
        let out = predict(&p, &coords).unwrap();
        assert!(relative_l2(out.data(), &y) < 1e-3);
    }

    #[test]
    fn zero_target_converges() {
        let fit = fit_fourier_demo(
            &FourierSeriesTarget::zero(),
            &FourierFitConfig {
                iters: 100,
                ..FourierFitConfig::default()
            },
        )
        .unwrap();
        // a zero target has no scale to be relative to: compare mean-squared error
        assert!(fit.error.powi(2) <= 1e-6, "{}", fit.error);
        assert!(*fit.trace.last().unwrap() <= 1e-6);
    }

    #[test]
    fn single_harmonic_fit() {
        let fit = fit_fourier_demo(
            &FourierSeriesTarget::sine(3),
            &FourierFitConfig {
                iters: 500,
                ..FourierFitConfig::default()
            },
        )
        .unwrap();
        assert!(fit.error < 1e-2, "{}", fit.error);
    }

    #[test]
    fn five_harmonic_trace_trends_down() {
        let fit = fit_fourier_demo(
            &FourierSeriesTarget::random(5, 9),
            &FourierFitConfig {
                iters: 300,
                ..FourierFitConfig::default()
            },
        )
        .unwrap();
        let best: Vec<f64> = fit
            .trace
            .iter()
            .scan(f64::INFINITY, |b, &v| {
                *b = b.min(v);
                Some(*b)
            })
            .collect();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(best[best.len() - 1] < 0.05 * best[0]);
    }

    #[test]
    fn weights_round_trip() {
        let p = init_siren(&SirenConfig { hidden_width: 8, depth: 3, ..SirenConfig::default() }, 2).unwrap();
        let bytes = encode_weights(&p).unwrap();
        let q = decode_weights(&bytes).unwrap();
        assert_eq!(q, quantize_f32(&p));
        assert_eq!(encode_weights(&q).unwrap(), bytes);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let p = init_siren(&small(), 2).unwrap();
        let mut bytes = encode_weights(&p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_names_lengths() {
        let p = init_siren(&small(), 2).unwrap();
        let bytes = encode_weights(&p).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        match decode_weights(cut) {
            Err(Error::Format { message, offset }) => {
                assert!(message.contains("expected") && message.contains("found"), "{message}");
                assert!(offset > 24);
            }
            other => panic!("{other:?}"),
        }
    }
}
