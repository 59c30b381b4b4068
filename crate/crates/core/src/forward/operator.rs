use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coils::{apply_coils, combine_coils_with, CoilMaps, Combine};
use super::kernel::GriddingKernel;
use super::nufft::NufftPlan;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::trajectory::Trajectory;

/// Multi-coil encoding `A I = [NUFFT(S_c I)]_c` restricted to a trajectory.
///
/// Sample values are laid out sample-major: `values[j * n_coils + c]`.
pub struct EncodingOperator {
    plan: NufftPlan,
    maps: CoilMaps,
}

impl EncodingOperator {
    pub fn new(traj: &Trajectory, maps: CoilMaps, kernel: &GriddingKernel) -> Result<Self> {
        let dims = maps.dims();
        if dims[0] != traj.nx || dims[1] != traj.nx {
            return Err(Error::shape(format!(
                "coil maps {:?} do not match trajectory matrix size {}",
                dims, traj.nx
            )));
        }
        Ok(EncodingOperator {
            plan: NufftPlan::new(dims, traj, kernel)?,
            maps,
        })
    }

    /// Operator on arbitrary sample locations in cycles/FOV.
    pub fn from_coords(coords: &[[f64; 3]], maps: CoilMaps, kernel: &GriddingKernel) -> Result<Self> {
        Ok(EncodingOperator {
            plan: NufftPlan::from_coords(maps.dims(), coords, kernel)?,
            maps,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.plan.dims()
    }

    pub fn n_coils(&self) -> usize {
        self.maps.n_coils()
    }

    pub fn n_samples(&self) -> usize {
        self.plan.n_samples()
    }

    pub fn maps(&self) -> &CoilMaps {
        &self.maps
    }

    pub fn plan(&self) -> &NufftPlan {
        &self.plan
    }

    pub fn forward(&self, image: &ComplexImage) -> Result<Vec<Complex64>> {
        let nc = self.n_coils();
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_samples() * nc];
        for (c, coil) in apply_coils(image, &self.maps)?.iter().enumerate() {
            for (j, v) in self.plan.forward(coil)?.into_iter().enumerate() {
                out[j * nc + c] = v;
            }
        }
        Ok(out)
    }

    /// Per-coil adjoint NUFFT images, optionally weighting samples first.
    pub fn coil_adjoints(&self, values: &[Complex64], weights: Option<&[f64]>) -> Result<Vec<ComplexImage>> {
        let nc = self.n_coils();
        if values.len() != self.n_samples() * nc {
            return Err(Error::shape(format!(
                "{} values for {} samples x {} coils",
                values.len(),
                self.n_samples(),
                nc
            )));
        }
        if let Some(w) = weights {
            if w.len() != self.n_samples() {
                return Err(Error::shape("density weights do not match sample count"));
            }
        }
        (0..nc)
            .map(|c| {
                let coil: Vec<Complex64> = (0..self.n_samples())
                    .map(|j| values[j * nc + c] * weights.map_or(1.0, |w| w[j]))
                    .collect();
                self.plan.adjoint(&coil)
            })
            .collect()
    }

    /// Exact adjoint `A^H y = sum_c conj(S_c) NUFFT^H(y_c)`.
    pub fn adjoint(&self, values: &[Complex64]) -> Result<ComplexImage> {
        let coils = self.coil_adjoints(values, None)?;
        let mut out = ComplexImage::zeros(self.dims());
        for (img, s) in coils.iter().zip(&self.maps.maps) {
            for (o, (v, sv)) in out.data_mut().iter_mut().zip(img.data().iter().zip(s.data())) {
                *o += sv.conj() * v;
            }
        }
        Ok(out)
    }

    /// Density-compensated adjoint followed by coil combination.
    pub fn gridding_recon(&self, values: &[Complex64], dcf: &[f64], mode: Combine) -> Result<ComplexImage> {
        let coils = self.coil_adjoints(values, Some(dcf))?;
        combine_coils_with(&coils, &self.maps, mode)
    }

    /// `A^H A x`.
    pub fn normal(&self, image: &ComplexImage) -> Result<ComplexImage> {
        self.adjoint(&self.forward(image)?)
    }
}

/// Largest eigenvalue of `A^H A` by power iteration from a seeded start.
pub fn lipschitz_estimate(op: &EncodingOperator, iters: usize, seed: u64) -> Result<f64> {
    if iters < 5 {
        return Err(Error::domain("power iteration needs at least 5 iterations"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = op.dims().iter().product();
    let mut x = ComplexImage::new(
        op.dims(),
        (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
    )?;
    let mut lambda = 0.0;
    for _ in 0..iters {
        let norm = x.norm_sqr().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for v in x.data_mut() {
            *v /= norm;
        }
        let y = op.normal(&x)?;
        // Rayleigh quotient with unit x
        lambda = crate::image::inner(x.data(), y.data()).re.max(0.0);
        x = y;
    }
    Ok(lambda)
}
