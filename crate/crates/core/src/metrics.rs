//! Image-quality metrics, the k-space SSIM fidelity and adversarial losses.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::inr::values_to_channels;
use crate::tensorcore::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsimMode {
    /// One set of statistics over the whole array.
    Global,
    /// Mean over all fully contained `n x n` in-plane windows, uniform weights.
    Windowed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`.
    pub range: f64,
    pub mode: SsimMode,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
            mode: SsimMode::Global,
        }
    }
}

impl SsimConfig {
    /// The image-evaluation setting: 7x7 windows.
    pub fn windowed() -> Self {
        SsimConfig {
            mode: SsimMode::Windowed(7),
            ..Self::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.range > 0.0) {
            return Err(Error::domain("SSIM constants and range must be positive"));
        }
        if self.mode == SsimMode::Windowed(0) {
            return Err(Error::domain("SSIM window must be non-empty"));
        }
        Ok(())
    }
}

/// `(2 mu_a mu_b + c1)(2 cov + c2) / ((mu_a^2 + mu_b^2 + c1)(var_a + var_b + c2))`
/// with population (1/N) moments.
fn ssim_stats(a: impl Iterator<Item = f64> + Clone, b: impl Iterator<Item = f64> + Clone, c1: f64, c2: f64) -> f64 {
    let n = a.clone().count() as f64;
    let ma = a.clone().sum::<f64>() / n;
    let mb = b.clone().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// SSIM between two real arrays laid out on `dims` (x fastest). Windows are
/// in-plane; each z slice is windowed separately.
pub fn ssim(a: &[f64], b: &[f64], dims: [usize; 3], cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.len() != b.len() || a.len() != dims.iter().product::<usize>() || a.is_empty() {
        return Err(Error::shape(format!(
            "SSIM of arrays of length {} and {} on dims {:?}",
            a.len(),
            b.len(),
            dims
        )));
    }
    if a == b {
        return Ok(1.0);
    }
    let (c1, c2) = (cfg.c1(), cfg.c2());
    match cfg.mode {
        SsimMode::Global => Ok(ssim_stats(a.iter().copied(), b.iter().copied(), c1, c2)),
        SsimMode::Windowed(w) => {
            let [nx, ny, nz] = dims;
            let (wx, wy) = (w.min(nx), w.min(ny));
            let mut total = 0.0;
            let mut count = 0usize;
            let mut wa = Vec::with_capacity(wx * wy);
            let mut wb = Vec::with_capacity(wx * wy);
            for z in 0..nz {
                for y0 in 0..=ny - wy {
                    for x0 in 0..=nx - wx {
                        wa.clear();
                        wb.clear();
                        for y in y0..y0 + wy {
                            let row = (z * ny + y) * nx;
                            wa.extend_from_slice(&a[row + x0..row + x0 + wx]);
                            wb.extend_from_slice(&b[row + x0..row + x0 + wx]);
                        }
                        total += ssim_stats(wa.iter().copied(), wb.iter().copied(), c1, c2);
                        count += 1;
                    }
                }
            }
            Ok(total / count as f64)
        }
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("RMSE of lengths {} and {}", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

/// `20 log10(max_i / rmse)`; `+inf` when `rmse == 0`.
pub fn psnr_from_rmse(rmse: f64, max_i: f64) -> Result<f64> {
    if !(max_i > 0.0) {
        return Err(Error::domain(format!("max_i {max_i} must be positive")));
    }
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (max_i / rmse).log10())
}

pub fn psnr(a: &[f64], b: &[f64], max_i: f64) -> Result<f64> {
    psnr_from_rmse(rmse(a, b)?, max_i)
}

/// Normalized sample values `v` in `[-1, 1]` enter the SSIM as `(v + 1) / 2`.
pub const KSPACE_RESCALE: (f64, f64) = (0.5, 0.5);

fn kspace_ssim_config() -> SsimConfig {
    SsimConfig::default()
}

/// `1 - SSIM` (global) over all real and imaginary parts of all coils.
pub fn kspace_ssim_loss(pred: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "k-space loss of {} vs {} values",
            pred.len(),
            reference.len()
        )));
    }
    let (s, o) = KSPACE_RESCALE;
    let p: Vec<f64> = values_to_channels(pred).into_iter().map(|v| s * v + o).collect();
    let r: Vec<f64> = values_to_channels(reference).into_iter().map(|v| s * v + o).collect();
    let cfg = kspace_ssim_config();
    Ok(1.0 - ssim_stats(p.iter().copied(), r.iter().copied(), cfg.c1(), cfg.c2()))
}

/// [`kspace_ssim_loss`] recorded on a tape. `pred` holds network channels
/// (`n x 2 n_coils`), `reference` the matching target channels.
pub fn kspace_ssim_loss_var(tape: &mut Tape, pred: Var, reference: &Tensor) -> Result<Var> {
    let pv = tape.value(pred)?;
    if pv.len() != reference.len() || pv.is_empty() {
        return Err(Error::shape(format!(
            "k-space loss of {:?} vs {:?}",
            pv.shape(),
            reference.shape()
        )));
    }
    let cfg = kspace_ssim_config();
    let (s, o) = KSPACE_RESCALE;
    let n = reference.len() as f64;
    let r: Vec<f64> = reference.data().iter().map(|v| s * v + o).collect();
    let mr = r.iter().sum::<f64>() / n;
    let vr = r.iter().map(|v| (v - mr).powi(2)).sum::<f64>() / n;
    let rc = Tensor::new(pv.shape().to_vec(), r.iter().map(|v| v - mr).collect())?;

    let p = tape.scale(pred, s)?;
    let p = tape.add_scalar(p, o)?;
    let mp = tape.mean(p)?;
    let pc = tape.sub(p, mp)?;
    let sq = tape.square(pc)?;
    let vp = tape.mean(sq)?;
    let rc = tape.leaf(rc);
    let prod = tape.mul(pc, rc)?;
    let cov = tape.mean(prod)?;

    // luminance: (2 mp mr + c1) / (mp^2 + mr^2 + c1)
    let num_l = tape.scale(mp, 2.0 * mr)?;
    let num_l = tape.add_scalar(num_l, cfg.c1())?;
    let mp2 = tape.square(mp)?;
    let den_l = tape.add_scalar(mp2, mr * mr + cfg.c1())?;
    // contrast-structure: (2 cov + c2) / (vp + vr + c2)
    let num_c = tape.scale(cov, 2.0)?;
    let num_c = tape.add_scalar(num_c, cfg.c2())?;
    let den_c = tape.add_scalar(vp, vr + cfg.c2())?;

    let l = tape.div(num_l, den_l)?;
    let c = tape.div(num_c, den_c)?;
    let ssim = tape.mul(l, c)?;
    let neg = tape.scale(ssim, -1.0)?;
    tape.add_scalar(neg, 1.0)
}

/// Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `mean log(1 - d(g(c)))`, minimized by the generator.
pub fn gan_generator_loss(d_fake: &[f64]) -> f64 {
    d_fake.iter().map(|&p| (1.0 - clamp_p(p)).ln()).sum::<f64>() / d_fake.len() as f64
}

/// `-mean log d(real) - mean log(1 - d(fake))`.
pub fn gan_discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real = d_real.iter().map(|&p| clamp_p(p).ln()).sum::<f64>() / d_real.len() as f64;
    real.mul_add(-1.0, -gan_generator_loss(d_fake))
}

fn log_one_minus(tape: &mut Tape, p: Var) -> Result<Var> {
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(q, 1.0)?;
    tape.log(q)
}

pub fn gan_generator_loss_var(tape: &mut Tape, d_fake: Var) -> Result<Var> {
    let l = log_one_minus(tape, d_fake)?;
    tape.mean(l)
}

pub fn gan_discriminator_loss_var(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let p = tape.clamp(d_real, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let lr = tape.log(p)?;
    let lr = tape.mean(lr)?;
    let lf = log_one_minus(tape, d_fake)?;
    let lf = tape.mean(lf)?;
    let s = tape.add(lr, lf)?;
    tape.scale(s, -1.0)
}

/// Reduction used for plain data-fidelity terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Norm {
    L1,
    #[default]
    L2,
}

/// `mean |pred - target|` or `mean (pred - target)^2`.
pub fn norm_loss_var(tape: &mut Tape, pred: Var, target: &Tensor, norm: Norm) -> Result<Var> {
    let t = tape.leaf(target.clone());
    let d = tape.sub(pred, t)?;
    let e = match norm {
        Norm::L2 => tape.square(d)?,
        Norm::L1 => {
            // |d| = max(d, 0) + max(-d, 0)
            let pos = tape.clamp(d, 0.0, f64::INFINITY)?;
            let nd = tape.scale(d, -1.0)?;
            let neg = tape.clamp(nd, 0.0, f64::INFINITY)?;
            tape.add(pos, neg)?
        }
    };
    tape.mean(e)
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub case: String,
    pub method: String,
    pub accel: f64,
    pub ssim: f64,
    pub rmse: f64,
    pub psnr_db: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "case,method,accel,ssim,rmse,psnr_db,seconds";

impl MetricsRecord {
    /// Scores `image` against `truth` (both in `[0, 1]`) with windowed SSIM.
    pub fn evaluate(
        case: &str,
        method: &str,
        accel: f64,
        image: &[f64],
        truth: &[f64],
        dims: [usize; 3],
        seconds: f64,
    ) -> Result<Self> {
        let e = rmse(image, truth)?;
        Ok(MetricsRecord {
            case: case.into(),
            method: method.into(),
            accel,
            ssim: ssim(image, truth, dims, &SsimConfig::windowed())?,
            rmse: e,
            psnr_db: psnr_from_rmse(e, 1.0)?,
            seconds,
        })
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.case, self.method, self.accel, self.ssim, self.rmse, self.psnr_db, self.seconds
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::format(0, format!("metrics row needs 7 fields, got {}: {line:?}", f.len())));
        }
        let num = |i: usize| {
            f[i].trim()
                .parse::<f64>()
                .map_err(|_| Error::format(0, format!("field {i} {:?} is not a number", f[i])))
        };
        Ok(MetricsRecord {
            case: f[0].into(),
            method: f[1].into(),
            accel: num(2)?,
            ssim: num(3)?,
            rmse: num(4)?,
            psnr_db: num(5)?,
            seconds: num(6)?,
        })
    }
}

pub fn write_metrics_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        if r.case.contains(',') || r.method.contains(',') {
            return Err(Error::domain(format!("names may not contain commas: {} / {}", r.case, r.method)));
        }
        writeln!(out, "{}", r.to_csv_row()).expect("writing to a String");
    }
    Ok(out)
}

/// Parses CSV text, skipping header lines and blanks.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && l.trim() != METRICS_HEADER)
        .map(MetricsRecord::parse_csv_row)
        .collect()
}

/// Pearson correlation of two equal-length arrays.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape("pearson needs two equal arrays of length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}
