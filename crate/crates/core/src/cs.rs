//! Total-variation compressed sensing and zero-filled baselines.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::{lipschitz_estimate, radial_gridding_recon, CoilMaps, Combine, EncodingOperator, GriddingKernel};
use crate::image::{inner, ComplexImage, RealImage};
use crate::kspace::KSpaceSamples;
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct CsConfig {
    /// Weight of the TV term relative to the largest eigenvalue of `A^H A`,
    /// so one value suits any matrix size, coil count or spoke count. The
    /// image is solved in units where the zero-filled start has unit peak.
    pub lambda_tv: f64,
    pub huber_eps: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    /// Power iterations for the initial step size.
    pub power_iters: usize,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            lambda_tv: 5e-3,
            huber_eps: 0.01,
            max_iters: 200,
            tol: 1e-7,
            power_iters: 20,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_tv >= 0.0) || !(self.huber_eps > 0.0) || self.max_iters < 1 || !(self.tol >= 0.0) {
            return Err(Error::domain(
                "CS config needs lambda_tv >= 0, huber_eps > 0, max_iters >= 1, tol >= 0",
            ));
        }
        Ok(())
    }
}

fn huber(t: f64, eps: f64) -> (f64, f64) {
    // value and phi'(t)/t
    if t <= eps {
        (t * t / (2.0 * eps), 1.0 / eps)
    } else {
        (t - eps / 2.0, 1.0 / t)
    }
}

/// Isotropic total variation with Huber smoothing of the gradient magnitude:
/// `sum_v phi(|grad I(v)|)`, forward differences, replicated boundary.
/// Returns the value and its gradient (`d/d re + i d/d im`).
pub fn tv_huber(image: &ComplexImage, eps: f64) -> Result<(f64, ComplexImage)> {
    if !(eps > 0.0) {
        return Err(Error::domain("huber eps must be positive"));
    }
    let [nx, ny, nz] = image.dims();
    let d = image.data();
    let mut grad = ComplexImage::zeros(image.dims());
    let g = grad.data_mut();
    let strides = [1, nx, nx * ny];
    let extents = [nx, ny, nz];
    let zero = Complex64::new(0.0, 0.0);
    let mut total = 0.0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let pos = [x, y, z];
                let mut diffs = [zero; 3];
                for a in 0..3 {
                    if extents[a] > 1 && pos[a] + 1 < extents[a] {
                        diffs[a] = d[i + strides[a]] - d[i];
                    }
                }
                let t = diffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                let (phi, w) = huber(t, eps);
                total += phi;
                for a in 0..3 {
                    if diffs[a] != zero {
                        let gd = diffs[a] * w;
                        g[i + strides[a]] += gd;
                        g[i] -= gd;
                    }
                }
            }
        }
    }
    Ok((total, grad))
}

/// Outcome of a CS reconstruction.
pub struct CsResult {
    /// Magnitude normalized to `[0, 1]`.
    pub image: RealImage,
    /// Complex solution in solver units.
    pub complex: ComplexImage,
    /// Objective after each accepted iterate, starting point first.
    pub trace: Vec<f64>,
    /// The data were divided by this before solving.
    pub unit: f64,
}

fn axpy(x: &ComplexImage, a: f64, d: &ComplexImage) -> ComplexImage {
    let data = x.data().iter().zip(d.data()).map(|(x, d)| x + d * a).collect();
    ComplexImage::new(x.dims(), data).expect("same dims")
}

struct Problem<'a> {
    op: &'a EncodingOperator,
    data: Vec<Complex64>,
    lambda: f64,
    eps: f64,
}

impl Problem<'_> {
    fn objective(&self, x: &ComplexImage) -> Result<f64> {
        let r = self.op.forward(x)?;
        let fid: f64 = r.iter().zip(&self.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let tv = if self.lambda > 0.0 { tv_huber(x, self.eps)?.0 } else { 0.0 };
        Ok(fid + self.lambda * tv)
    }

    fn gradient(&self, x: &ComplexImage) -> Result<(f64, ComplexImage)> {
        let mut r = self.op.forward(x)?;
        let mut fid = 0.0;
        for (a, b) in r.iter_mut().zip(&self.data) {
            *a -= b;
            fid += a.norm_sqr();
        }
        let mut g = self.op.adjoint(&r)?;
        g.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let mut f = fid;
        if self.lambda > 0.0 {
            let (tv, gt) = tv_huber(x, self.eps)?;
            f += self.lambda * tv;
            for (a, b) in g.data_mut().iter_mut().zip(gt.data()) {
                *a += b * self.lambda;
            }
        }
        Ok((f, g))
    }
}

/// Minimizes `||A I - K||^2 + lambda TV_huber(I)` by gradient descent with
/// Barzilai-Borwein step proposals and Armijo backtracking, starting from the
/// least-squares-scaled zero-filled image.
pub fn cs_tv_reconstruct(
    samples: &KSpaceSamples,
    traj: &Trajectory,
    maps: &CoilMaps,
    cfg: &CsConfig,
) -> Result<CsResult> {
    cfg.validate()?;
    if samples.n_coils != maps.n_coils() {
        return Err(Error::shape(format!(
            "{} coils in the data, {} maps",
            samples.n_coils,
            maps.n_coils()
        )));
    }
    let op = EncodingOperator::new(traj, maps.clone(), &GriddingKernel::default())?;
    let x0 = radial_gridding_recon(traj, &samples.values, maps, &GriddingKernel::default(), Combine::MatchedFilter)?;

    // Put the start on the data's scale, then rescale the problem so it has
    // unit peak magnitude.
    let ax0 = op.forward(&x0)?;
    let den = inner(&ax0, &ax0).re;
    let alpha = if den > 0.0 { inner(&ax0, &samples.values).re / den } else { 0.0 };
    let peak = x0.magnitude().into_iter().fold(0.0, f64::max) * alpha.abs();
    let unit = if peak > 0.0 { peak } else { 1.0 };
    let mut x = x0;
    x.data_mut().iter_mut().for_each(|v| *v *= alpha / unit);
    let normal = lipschitz_estimate(&op, cfg.power_iters.max(5), 0)?;
    let lambda = cfg.lambda_tv * normal;
    let problem = Problem {
        op: &op,
        data: samples.values.iter().map(|v| v / unit).collect(),
        lambda,
        eps: cfg.huber_eps,
    };

    // Lipschitz constant of the gradient; TV's is at most 12 / eps in 3-D
    let lip = 2.0 * normal + lambda * 4.0 * 3.0 / cfg.huber_eps;
    let mut step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let (mut f, mut g) = problem.gradient(&x)?;
    let mut trace = vec![f];
    for _ in 0..cfg.max_iters {
        let gnorm2 = g.norm_sqr();
        if gnorm2 == 0.0 {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = axpy(&x, -t, &g);
            let fc = problem.objective(&cand)?;
            if !fc.is_finite() {
                return Err(Error::Numerical(format!("CS objective became {fc}; trace {trace:?}")));
            }
            if fc <= f - 1e-4 * t * gnorm2 {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // no representable descent left
            break;
        };
        let (fn_, gn) = problem.gradient(&next)?;
        // Barzilai-Borwein proposal for the next step: <s, s> / <s, y>
        let s: Vec<Complex64> = next.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        let yv: Vec<Complex64> = gn.data().iter().zip(g.data()).map(|(a, b)| a - b).collect();
        let sy = inner(&s, &yv).re;
        let ss = inner(&s, &s).re;
        step = if sy > 0.0 { ss / sy } else { t * 2.0 };
        let rel = (f - fn_) / f.abs().max(f64::MIN_POSITIVE);
        x = next;
        f = fn_;
        g = gn;
        trace.push(f);
        if rel < cfg.tol {
            break;
        }
    }
    Ok(CsResult {
        image: RealImage::normalized_magnitude(&x),
        complex: x,
        trace,
        unit,
    })
}

/// Density-compensated adjoint, coil combination, magnitude, unit peak.
pub fn zero_filled(samples: &KSpaceSamples, traj: &Trajectory, maps: &CoilMaps) -> Result<RealImage> {
    if samples.n_coils != maps.n_coils() {
        return Err(Error::shape(format!(
            "{} coils in the data, {} maps",
            samples.n_coils,
            maps.n_coils()
        )));
    }
    let img = radial_gridding_recon(traj, &samples.values, maps, &GriddingKernel::default(), Combine::MatchedFilter)?;
    Ok(RealImage::normalized_magnitude(&img))
}
