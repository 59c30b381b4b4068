//! Cohort prior training, patient-specific fine-tuning and INR image formation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{radial_gridding_recon, CoilMaps, Combine, GriddingKernel};
use crate::image::RealImage;
use crate::inr::{network_input, predict_values, values_to_channels, SirenConfig};
use crate::kspace::KSpaceSamples;
use crate::metrics::{
    gan_discriminator_loss_var, gan_generator_loss_var, kspace_ssim_loss, kspace_ssim_loss_var, norm_loss_var, Norm,
};
use crate::tensorcore::{Activation, AdamState, Layer, MlpParams, Tape, Tensor};
use crate::trajectory::{apply_map, CoordMap, Trajectory};

/// Network weights at one point of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub iteration: usize,
    pub l_train: Option<f64>,
    pub l_val: Option<f64>,
    pub wall_seconds: f64,
}

impl Checkpoint {
    pub fn initial(params: MlpParams) -> Self {
        Checkpoint {
            params,
            iteration: 0,
            l_train: None,
            l_val: None,
            wall_seconds: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub l_train: f64,
    pub l_val: Option<f64>,
}

/// Loss history, persisted as `iter,l_train,l_val` lines (`nan` when no
/// validation loss was computed).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn push(&mut self, iter: usize, l_train: f64, l_val: Option<f64>) {
        self.rows.push(TraceRow { iter, l_train, l_val });
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// First recorded iteration with `l_train <= tau`.
    pub fn first_below(&self, tau: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.l_train <= tau).map(|r| r.iter)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("iter,l_train,l_val\n");
        for r in &self.rows {
            let v = r.l_val.map_or("nan".to_string(), |v| format!("{v:.9e}"));
            let _ = writeln!(s, "{},{:.9e},{}", r.iter, r.l_train, v);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut trace = Trace::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with("iter")) {
                continue;
            }
            let bad = || Error::domain(format!("trace line {}: cannot parse {line:?}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let iter = f[0].parse().map_err(|_| bad())?;
            let l_train = f[1].parse().map_err(|_| bad())?;
            let l_val: f64 = f[2].parse().map_err(|_| bad())?;
            trace.push(iter, l_train, (!l_val.is_nan()).then_some(l_val));
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub hidden_layers: usize,
    pub width: usize,
    /// Discriminator learning rate as a multiple of the generator's.
    pub lr_ratio: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden_layers: 4,
            width: 128,
            lr_ratio: 10.0,
        }
    }
}

/// Classifier over `(coordinate, values)` tuples: sine hidden layers with
/// unit frequency, sigmoid output.
pub fn init_discriminator(input_dim: usize, cfg: &DiscriminatorConfig, seed: u64) -> Result<MlpParams> {
    if cfg.hidden_layers == 0 || cfg.width == 0 || input_dim == 0 {
        return Err(Error::domain("discriminator needs at least one hidden layer of positive width"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat(cfg.width).take(cfg.hidden_layers));
    dims.push(1);
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let bound = (6.0 / dims[i] as f64).sqrt();
            Layer {
                weights: Tensor::from_fn(dims[i + 1], dims[i], |_, _| rng.gen_range(-bound..=bound)),
                bias: Tensor::zeros(&[dims[i + 1]]),
                activation: if i + 1 == n { Activation::Sigmoid } else { Activation::Sine(1.0) },
            }
        })
        .collect();
    MlpParams::new(layers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorTrainConfig {
    pub lr_g: f64,
    /// One epoch visits every cohort case once, in seeded random order.
    pub epochs: usize,
    /// Samples drawn per step; 0 uses every sample.
    pub batch_samples: usize,
    pub rec_weight: f64,
    pub adv_weight: f64,
    pub disc: DiscriminatorConfig,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig {
            lr_g: 1e-6,
            epochs: 500,
            batch_samples: 0,
            rec_weight: 1.0,
            adv_weight: 0.01,
            disc: DiscriminatorConfig::default(),
            seed: 0,
        }
    }
}

impl PriorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_g > 0.0) || !(self.rec_weight >= 0.0) || !(self.adv_weight >= 0.0) || !(self.disc.lr_ratio > 0.0)
        {
            return Err(Error::domain("prior training needs lr_g > 0, non-negative weights, lr_ratio > 0"));
        }
        Ok(())
    }
}

pub struct PriorOutcome {
    pub checkpoint: Checkpoint,
    pub discriminator: MlpParams,
    /// `l_train` is the reconstruction MSE of each generator step.
    pub trace: Trace,
    pub generator_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
}

fn check_finite(what: &str, v: f64, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} became {v} at step {step}")))
    }
}

fn add_grads(a: &mut MlpParams, b: &MlpParams) {
    for (x, y) in a.tensors_mut().zip(b.tensors()) {
        x.add_assign(y);
    }
}

fn rows_of(data: &[f64], cols: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| data[i * cols..(i + 1) * cols].iter().copied()).collect()
}

/// Adversarial cohort prior. Every step picks a case, draws a batch of its
/// samples, updates the discriminator once on real versus generated tuples,
/// then the generator once on `adv_weight * L_g + rec_weight * MSE`.
pub fn train_prior(cohort: &[KSpaceSamples], net: &SirenConfig, cfg: &PriorTrainConfig) -> Result<PriorOutcome> {
    cfg.validate()?;
    net.validate()?;
    if cohort.len() < 2 {
        return Err(Error::contract(format!("a cohort needs at least two cases, got {}", cohort.len())));
    }
    let first = &cohort[0];
    if first.ndim != net.input_dim || first.n_coils != net.n_coils {
        return Err(Error::contract(format!(
            "network expects {}-D coordinates and {} coils, data has {} and {}",
            net.input_dim, net.n_coils, first.ndim, first.n_coils
        )));
    }
    for (i, c) in cohort.iter().enumerate() {
        if c.coords != first.coords || c.n_coils != first.n_coils {
            return Err(Error::contract(format!("case {i} does not share case 0's trajectory")));
        }
    }
    let start = Instant::now();
    let mut gen = crate::inr::init_siren(net, cfg.seed)?;
    let ndim = net.input_dim;
    let nch = net.output_dim();
    let mut disc = init_discriminator(ndim + nch, &cfg.disc, cfg.seed.wrapping_add(1))?;
    let mut opt_g = AdamState::new(&gen, cfg.lr_g);
    let mut opt_d = AdamState::new(&disc, cfg.lr_g * cfg.disc.lr_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let n = first.len();
    let x_all = network_input(&first.coords, ndim)?;
    let targets: Vec<Vec<f64>> = cohort.iter().map(|c| values_to_channels(&c.values)).collect();
    let adversarial = cfg.adv_weight > 0.0;

    let mut trace = Trace::default();
    let mut g_hist = Vec::new();
    let mut d_hist = Vec::new();
    let mut step = 0;
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &case in &order {
            let (x, real) = if cfg.batch_samples == 0 || cfg.batch_samples >= n {
                (x_all.clone(), Tensor::new(vec![n, nch], targets[case].clone())?)
            } else {
                let mut idx = rand::seq::index::sample(&mut rng, n, cfg.batch_samples).into_vec();
                idx.sort_unstable();
                let b = idx.len();
                (
                    Tensor::new(vec![b, ndim], rows_of(x_all.data(), ndim, &idx))?,
                    Tensor::new(vec![b, nch], rows_of(&targets[case], nch, &idx))?,
                )
            };

            if adversarial {
                let fake = gen.evaluate(&x)?;
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone());
                let rv = tape.leaf(real.clone());
                let fv = tape.leaf(fake);
                let real_in = tape.concat_cols(xv, rv)?;
                let fake_in = tape.concat_cols(xv, fv)?;
                let (d_real, vars_r) = disc.record(&mut tape, real_in)?;
                let (d_fake, vars_f) = disc.record(&mut tape, fake_in)?;
                let loss = gan_discriminator_loss_var(&mut tape, d_real, d_fake)?;
                let ld = tape.value(loss)?.data()[0];
                check_finite("discriminator loss", ld, step)?;
                let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
                let mut gd = disc.collect_grads(&grads, &vars_r)?;
                add_grads(&mut gd, &disc.collect_grads(&grads, &vars_f)?);
                opt_d.step(&mut disc, &gd)?;
                d_hist.push(ld);
            }

            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let (out, gvars) = gen.record(&mut tape, xv)?;
            let mse = norm_loss_var(&mut tape, out, &real, Norm::L2)?;
            let mse_value = tape.value(mse)?.data()[0];
            let mut total = tape.scale(mse, cfg.rec_weight)?;
            if adversarial {
                let fake_in = tape.concat_cols(xv, out)?;
                let (d_fake, _) = disc.record(&mut tape, fake_in)?;
                let lg = gan_generator_loss_var(&mut tape, d_fake)?;
                g_hist.push(tape.value(lg)?.data()[0]);
                let lg = tape.scale(lg, cfg.adv_weight)?;
                total = tape.add(total, lg)?;
            }
            let total_value = tape.value(total)?.data()[0];
            check_finite("generator loss", total_value, step)?;
            let grads = tape.backward(total, &Tensor::scalar(1.0))?;
            let gg = gen.collect_grads(&grads, &gvars)?;
            opt_g.step(&mut gen, &gg)?;
            trace.push(step, mse_value, None);
            step += 1;
        }
    }
    log::info!("prior: {step} generator steps in {:.1}s", start.elapsed().as_secs_f64());
    Ok(PriorOutcome {
        checkpoint: Checkpoint {
            params: gen,
            iteration: step,
            l_train: trace.last().map(|r| r.l_train),
            l_val: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
        discriminator: disc,
        trace,
        generator_loss: g_hist,
        discriminator_loss: d_hist,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// Stop once `1 - SSIM` on the acquired samples is at most this.
    pub stop_threshold: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 1e-5,
            max_iters: 2000,
            stop_threshold: 0.13,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.eval_every == 0 {
            return Err(Error::domain("fine-tuning needs lr > 0 and eval_every >= 1"));
        }
        if !(self.stop_threshold >= 0.0 && self.stop_threshold < 2.0) {
            return Err(Error::domain(format!("stop threshold {} outside [0, 2)", self.stop_threshold)));
        }
        Ok(())
    }
}

pub struct FineTuneOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Trace,
    /// Whether the threshold (rather than `max_iters`) ended the run.
    pub converged: bool,
}

fn check_compatible(params: &MlpParams, s: &KSpaceSamples, what: &str) -> Result<()> {
    let cfg = SirenConfig::of(params)?;
    if cfg.input_dim != s.ndim || cfg.n_coils != s.n_coils {
        return Err(Error::contract(format!(
            "network expects {}-D coordinates and {} coils, {what} has {} and {}",
            cfg.input_dim, cfg.n_coils, s.ndim, s.n_coils
        )));
    }
    Ok(())
}

/// Adam on the k-space SSIM loss of the acquired samples, starting from
/// `prior`. Losses are recorded every `eval_every` iterations (and at
/// `max_iters`); the run stops at the first recorded `L_train <= tau`.
/// The validation loss is the same functional against `full`.
pub fn finetune_patient(
    prior: &Checkpoint,
    sparse: &KSpaceSamples,
    full: Option<&KSpaceSamples>,
    cfg: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    check_compatible(&prior.params, sparse, "the sparse data")?;
    if let Some(f) = full {
        check_compatible(&prior.params, f, "the validation data")?;
    }
    if sparse.is_empty() {
        return Err(Error::contract("no acquired samples to fit"));
    }
    let start = Instant::now();
    let mut params = prior.params.clone();
    let mut opt = AdamState::new(&params, cfg.lr);
    let x = network_input(&sparse.coords, sparse.ndim)?;
    let target = Tensor::new(vec![sparse.len(), 2 * sparse.n_coils], values_to_channels(&sparse.values))?;
    let mut trace = Trace::default();
    let mut it = 0;
    loop {
        let (l_train, grads) = params.value_and_grad(&x, |tape, out| kspace_ssim_loss_var(tape, out, &target))?;
        check_finite("training loss", l_train, it)?;
        if it % cfg.eval_every == 0 || it == cfg.max_iters {
            let l_val = match full {
                Some(f) => Some(kspace_ssim_loss(&predict_values(&params, &f.coords)?, &f.values)?),
                None => None,
            };
            trace.push(it, l_train, l_val);
            let converged = l_train <= cfg.stop_threshold;
            if converged || it == cfg.max_iters {
                log::debug!("fine-tune stopped at {it} with L_train {l_train:.4}");
                return Ok(FineTuneOutcome {
                    checkpoint: Checkpoint {
                        params,
                        iteration: it,
                        l_train: Some(l_train),
                        l_val,
                        wall_seconds: start.elapsed().as_secs_f64(),
                    },
                    trace,
                    converged,
                });
            }
        }
        opt.step(&mut params, &grads)?;
        it += 1;
    }
}

/// A threshold chosen from validation traces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdChoice {
    pub tau: f64,
    /// Iteration minimizing the mean validation loss.
    pub iteration: usize,
    /// Mean training loss there, before snapping to the grid.
    pub raw_tau: f64,
    pub mean_l_val: f64,
}

/// Picks the iteration minimizing mean `L_val` across `traces` and returns
/// the mean `L_train` there, snapped to the smallest grid value at or above
/// it (the largest grid value if none is). Rounding upwards keeps a rerun
/// from stopping later than the selected iteration.
pub fn select_threshold(traces: &[Trace], grid: &[f64]) -> Result<ThresholdChoice> {
    if traces.is_empty() || grid.is_empty() {
        return Err(Error::contract("threshold selection needs at least one trace and one grid value"));
    }
    let iters: Vec<usize> = traces[0].rows.iter().map(|r| r.iter).collect();
    if iters.is_empty() {
        return Err(Error::contract("empty trace"));
    }
    for t in traces {
        if t.rows.iter().map(|r| r.iter).ne(iters.iter().copied()) {
            return Err(Error::contract("traces were recorded at different iterations"));
        }
    }
    let k = traces.len() as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    for (row, &iter) in iters.iter().enumerate() {
        let mut lv = 0.0;
        for t in traces {
            lv += t.rows[row]
                .l_val
                .ok_or_else(|| Error::contract(format!("trace has no validation loss at iteration {iter}")))?;
        }
        let lv = lv / k;
        let lt = traces.iter().map(|t| t.rows[row].l_train).sum::<f64>() / k;
        if best.map_or(true, |(_, b, _)| lv < b) {
            best = Some((iter, lv, lt));
        }
    }
    let (iteration, mean_l_val, raw_tau) = best.expect("non-empty");
    let tau = grid
        .iter()
        .copied()
        .filter(|&g| g >= raw_tau)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))))
        .unwrap_or_else(|| grid.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(ThresholdChoice {
        tau,
        iteration,
        raw_tau,
        mean_l_val,
    })
}

/// Fine-tunes every `(sparse, full)` validation case to `max_iters` without
/// early stopping and applies [`select_threshold`] to the traces.
pub fn tune_threshold(
    cases: &[(KSpaceSamples, KSpaceSamples)],
    prior: &Checkpoint,
    grid: &[f64],
    cfg: &FineTuneConfig,
) -> Result<(ThresholdChoice, Vec<Trace>)> {
    if cases.is_empty() || grid.is_empty() {
        return Err(Error::contract("threshold tuning needs validation cases and a grid"));
    }
    let run = FineTuneConfig {
        stop_threshold: 0.0,
        ..cfg.clone()
    };
    let traces = cases
        .iter()
        .map(|(sparse, full)| Ok(finetune_patient(prior, sparse, Some(full), &run)?.trace))
        .collect::<Result<Vec<_>>>()?;
    Ok((select_threshold(&traces, grid)?, traces))
}

/// Image formation: evaluate the network on the nominal trajectory (mapped
/// to `[0, 1]` by `map`), undo the data normalization `scale`, then
/// density-compensated gridding, coil combination and magnitude.
pub fn reconstruct_inr(
    params: &MlpParams,
    traj: &Trajectory,
    map: &CoordMap,
    scale: f64,
    maps: &CoilMaps,
) -> Result<RealImage> {
    let cfg = SirenConfig::of(params)?;
    if cfg.input_dim != map.ndim() || cfg.n_coils != maps.n_coils() {
        return Err(Error::contract(format!(
            "network ({}-D, {} coils) does not match the trajectory frame ({}-D) and {} coil maps",
            cfg.input_dim,
            cfg.n_coils,
            map.ndim(),
            maps.n_coils()
        )));
    }
    let coords = apply_map(traj, map.clone()).coords;
    let values: Vec<_> = predict_values(params, &coords)
        .map_err(|e| match e {
            Error::Domain(m) => Error::contract(format!("trajectory lies outside the training domain: {m}")),
            other => other,
        })?
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let img = radial_gridding_recon(traj, &values, maps, &GriddingKernel::default(), Combine::MatchedFilter)?;
    Ok(RealImage::normalized_magnitude(&img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::init_siren;
    use crate::metrics::{ssim, SsimConfig};
    use crate::phantom::{generate_phantom, make_cohort, AcquisitionSpec, PhantomSpec};
    use crate::trajectory::UndersamplingSpec;

    fn small_net(n_coils: usize) -> SirenConfig {
        SirenConfig {
            input_dim: 2,
            hidden_width: 16,
            depth: 3,
            omega0: 30.0,
            n_coils,
        }
    }

    fn tiny_cohort(n: usize, jitter: f64) -> crate::phantom::Cohort {
        let acq = AcquisitionSpec {
            nx: 16,
            n_coils: 2,
            ..AcquisitionSpec::default()
        };
        let traj = acq.trajectory().unwrap();
        make_cohort(n, &PhantomSpec::head([16, 16, 1]), jitter, &traj, &acq).unwrap()
    }

    fn trace_of(rows: &[(usize, f64, f64)]) -> Trace {
        let mut t = Trace::default();
        for &(i, lt, lv) in rows {
            t.push(i, lt, Some(lv));
        }
        t
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let c = tiny_cohort(2, 0.05);
        let samples: Vec<_> = c.cases.iter().map(|c| c.samples.clone()).collect();
        let cfg = PriorTrainConfig { epochs: 0, ..PriorTrainConfig::default() };
        let out = train_prior(&samples, &small_net(2), &cfg).unwrap();
        assert_eq!(out.checkpoint.params, init_siren(&small_net(2), cfg.seed).unwrap());
        assert_eq!(out.checkpoint.iteration, 0);
    }

    #[test]
    fn plain_regression_reduces_mse() {
        let c = tiny_cohort(3, 0.0);
        let samples: Vec<_> = c.cases.iter().map(|c| c.samples.clone()).collect();
        let cfg = PriorTrainConfig {
            lr_g: 1e-3,
            epochs: 30,
            adv_weight: 0.0,
            ..PriorTrainConfig::default()
        };
        let out = train_prior(&samples, &small_net(2), &cfg).unwrap();
        let first = out.trace.rows[0].l_train;
        let last = out.trace.last().unwrap().l_train;
        assert!(last < first, "{first} -> {last}");
        assert!(out.generator_loss.is_empty());
    }

    #[test]
    fn adversarial_training_runs_and_is_deterministic() {
        let c = tiny_cohort(2, 0.05);
        let samples: Vec<_> = c.cases.iter().map(|c| c.samples.clone()).collect();
        let cfg = PriorTrainConfig {
            lr_g: 1e-4,
            epochs: 3,
            batch_samples: 64,
            disc: DiscriminatorConfig { hidden_layers: 2, width: 16, lr_ratio: 10.0 },
            ..PriorTrainConfig::default()
        };
        let a = train_prior(&samples, &small_net(2), &cfg).unwrap();
        let b = train_prior(&samples, &small_net(2), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.discriminator_loss.len(), 6);
        assert!(a.discriminator_loss.iter().all(|&l| l >= 0.0));
        assert_eq!(a.checkpoint.params, b.checkpoint.params);
    }

    #[test]
    fn cohort_must_share_trajectory() {
        let c = tiny_cohort(2, 0.0);
        let mut samples: Vec<_> = c.cases.iter().map(|c| c.samples.clone()).collect();
        assert!(matches!(train_prior(&samples[..1], &small_net(2), &PriorTrainConfig::default()), Err(Error::Contract(_))));
        samples[1].coords[0] += 0.01;
        assert!(matches!(train_prior(&samples, &small_net(2), &PriorTrainConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let d = init_discriminator(6, &DiscriminatorConfig::default(), 3).unwrap();
        let x = Tensor::from_fn(20, 6, |i, j| ((i * 7 + j) as f64 * 0.3).sin() * 3.0);
        assert!(d.evaluate(&x).unwrap().data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_iterations_return_the_prior() {
        let c = tiny_cohort(2, 0.0);
        let prior = Checkpoint::initial(init_siren(&small_net(2), 5).unwrap());
        let cfg = FineTuneConfig { max_iters: 0, ..FineTuneConfig::default() };
        let out = finetune_patient(&prior, &c.cases[0].samples, None, &cfg).unwrap();
        assert_eq!(out.checkpoint.params, prior.params);
        assert_eq!(out.checkpoint.iteration, 0);
        assert_eq!(out.trace.rows.len(), 1);
    }

    #[test]
    fn unreachable_threshold_runs_to_max_iters() {
        let c = tiny_cohort(2, 0.0);
        let prior = Checkpoint::initial(init_siren(&small_net(2), 5).unwrap());
        let cfg = FineTuneConfig {
            lr: 1e-9,
            max_iters: 25,
            stop_threshold: 0.0,
            eval_every: 10,
            seed: 0,
        };
        let out = finetune_patient(&prior, &c.cases[0].samples, Some(&c.cases[1].samples), &cfg).unwrap();
        assert_eq!(out.checkpoint.iteration, 25);
        assert!(!out.converged);
        let iters: Vec<usize> = out.trace.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
        assert!(out.trace.rows.iter().all(|r| r.l_val.is_some()));
    }

    #[test]
    fn stops_at_first_recorded_loss_below_threshold() {
        let c = tiny_cohort(2, 0.0);
        let prior = Checkpoint::initial(init_siren(&small_net(2), 5).unwrap());
        let s = &c.cases[0].samples;
        let cfg = FineTuneConfig {
            lr: 1e-3,
            max_iters: 200,
            stop_threshold: 0.3,
            eval_every: 5,
            seed: 0,
        };
        let out = finetune_patient(&prior, s, None, &cfg).unwrap();
        let ck = &out.checkpoint;
        assert!(ck.l_train.unwrap() <= 0.3 || ck.iteration == 200);
        // every earlier record was above the threshold
        for r in &out.trace.rows[..out.trace.rows.len() - 1] {
            assert!(r.l_train > 0.3);
        }
        let check = kspace_ssim_loss(&predict_values(&ck.params, &s.coords).unwrap(), &s.values).unwrap();
        assert!((check - ck.l_train.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn incompatible_prior_is_rejected() {
        let c = tiny_cohort(2, 0.0);
        let prior = Checkpoint::initial(init_siren(&small_net(3), 5).unwrap());
        assert!(matches!(
            finetune_patient(&prior, &c.cases[0].samples, None, &FineTuneConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn planted_minimum_is_selected() {
        let rows: Vec<(usize, f64, f64)> = (0..=100)
            .map(|k| {
                let i = k * 10;
                let lt = 1.0 / (1.0 + i as f64 / 50.0);
                let lv = 0.2 + ((i as f64 - 300.0) / 400.0).powi(2);
                (i, lt, lv)
            })
            .collect();
        let choice = select_threshold(&[trace_of(&rows)], &[0.05, 0.1, 0.15, 0.2, 0.25, 0.3]).unwrap();
        assert_eq!(choice.iteration, 300);
        assert!((choice.raw_tau - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(choice.tau, 0.15);
    }

    #[test]
    fn monotone_validation_picks_the_end() {
        let t = trace_of(&[(0, 0.5, 0.4), (10, 0.3, 0.3), (20, 0.2, 0.25)]);
        let c = select_threshold(&[t], &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c.iteration, 20);
        assert_eq!(c.tau, 0.2);
        assert!(select_threshold(&[], &[0.1]).is_err());
        assert!(select_threshold(&[trace_of(&[(0, 0.1, 0.1)])], &[]).is_err());
    }

    #[test]
    fn mismatched_trace_iterations_rejected() {
        let a = trace_of(&[(0, 0.5, 0.4), (10, 0.3, 0.3)]);
        let b = trace_of(&[(0, 0.5, 0.4), (20, 0.3, 0.3)]);
        assert!(select_threshold(&[a, b], &[0.1]).is_err());
    }

    #[test]
    fn tuned_threshold_is_achievable() {
        let c = tiny_cohort(3, 0.05);
        let prior = Checkpoint::initial(init_siren(&small_net(2), 1).unwrap());
        let full = &c.cases[2].samples;
        let traj = &c.traj;
        let (sparse, _) = full.undersample(traj, UndersamplingSpec::new(2.0).unwrap()).unwrap();
        let cfg = FineTuneConfig {
            lr: 1e-3,
            max_iters: 150,
            stop_threshold: 0.0,
            eval_every: 10,
            seed: 0,
        };
        let grid: Vec<f64> = (1..400).map(|i| i as f64 * 0.0025).collect();
        let (choice, traces) = tune_threshold(&[(sparse.clone(), full.clone())], &prior, &grid, &cfg).unwrap();
        assert_eq!(traces.len(), 1);
        let rerun = finetune_patient(&prior, &sparse, None, &FineTuneConfig { stop_threshold: choice.tau, ..cfg }).unwrap();
        let (got, want) = (rerun.checkpoint.iteration, choice.iteration);
        assert!(got.abs_diff(want) <= 10, "stopped at {got}, selected {want} (tau {})", choice.tau);
    }

    #[test]
    fn trace_text_round_trip() {
        let mut t = trace_of(&[(0, 0.5, 0.25)]);
        t.push(10, 0.125, None);
        let text = t.to_text();
        assert!(text.starts_with("iter,l_train,l_val\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",nan"));
        assert_eq!(Trace::parse(&text).unwrap(), t);
        assert!(Trace::parse("iter,l_train,l_val\n1,2\n").is_err());
    }

    #[test]
    fn zero_network_gives_zero_image() {
        let c = tiny_cohort(2, 0.0);
        let mut p = init_siren(&small_net(2), 0).unwrap();
        let last = p.layers.last_mut().unwrap();
        last.weights.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let map = c.cases[0].samples.map.clone().unwrap();
        let img = reconstruct_inr(&p, &c.traj, &map, 1.0, &c.maps).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overfit_network_reconstructs_phantom() {
        let c = tiny_cohort(2, 0.0);
        let s = &c.cases[0].samples;
        let cfg = SirenConfig { hidden_width: 32, ..small_net(2) };
        let prior = Checkpoint::initial(init_siren(&cfg, 0).unwrap());
        let ft = FineTuneConfig {
            lr: 1e-3,
            max_iters: 300,
            stop_threshold: 0.0,
            eval_every: 50,
            seed: 0,
        };
        let out = finetune_patient(&prior, s, None, &ft).unwrap();
        let img = reconstruct_inr(&out.checkpoint.params, &c.traj, s.map.as_ref().unwrap(), s.scale, &c.maps).unwrap();
        assert!((img.max() - 1.0).abs() < 1e-12);
        assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let truth = RealImage::normalized_magnitude(&generate_phantom(&c.cases[0].spec).unwrap());
        let q = ssim(&img.data, &truth.data, img.dims, &SsimConfig::default()).unwrap();
        assert!(q > 0.85, "{q}");
    }

    #[test]
    fn reconstruction_rejects_foreign_trajectory() {
        let c = tiny_cohort(2, 0.0);
        let p = init_siren(&small_net(2), 0).unwrap();
        let mut map = c.cases[0].samples.map.clone().unwrap();
        // a frame half as wide puts the outer samples outside [0, 1]
        for (lo, hi) in map.lo.iter_mut().zip(map.hi.iter_mut()) {
            *lo /= 2.0;
            *hi /= 2.0;
        }
        assert!(matches!(reconstruct_inr(&p, &c.traj, &map, 1.0, &c.maps), Err(Error::Contract(_))));
    }
}
