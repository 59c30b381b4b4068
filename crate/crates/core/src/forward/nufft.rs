//! Gridding NUFFT.
//!
//! The transform approximated is
//! `F(k) = sum_x I(x) exp(-2 pi i sum_a k_a x_a / N_a)` with `k` in cycles per
//! field of view and `x` voxel positions relative to the image origin (see
//! [`ComplexImage::position`]). The adjoint is applied exactly: spreading,
//! inverse FFT, cropping and apodization are each the transpose of their
//! forward counterpart.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::kernel::GriddingKernel;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::trajectory::Trajectory;

/// Precomputed interpolation weights and FFT plans for one trajectory.
pub struct NufftPlan {
    dims: [usize; 3],
    grid: [usize; 3],
    apod: [Vec<f64>; 3],
    taps: usize,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    n_samples: usize,
    fwd: [Option<Arc<dyn Fft<f64>>>; 3],
    inv: [Option<Arc<dyn Fft<f64>>>; 3],
}

fn grid_size(n: usize, oversampling: f64) -> usize {
    if n <= 1 {
        return 1;
    }
    let g = (n as f64 * oversampling).ceil() as usize;
    g + g % 2
}

impl NufftPlan {
    pub fn new(dims: [usize; 3], traj: &Trajectory, kernel: &GriddingKernel) -> Result<Self> {
        Self::from_coords(dims, &traj.coords, kernel)
    }

    /// Plan for arbitrary sample positions (cycles/FOV). Axes with a single
    /// voxel are not transformed and their coordinate is ignored.
    pub fn from_coords(dims: [usize; 3], coords: &[[f64; 3]], kernel: &GriddingKernel) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape("image dims must be positive"));
        }
        let active = [dims[0] > 1, dims[1] > 1, dims[2] > 1];
        let grid = [
            grid_size(dims[0], kernel.oversampling),
            grid_size(dims[1], kernel.oversampling),
            grid_size(dims[2], kernel.oversampling),
        ];
        let apod = [0, 1, 2].map(|a| {
            (0..dims[a])
                .map(|i| {
                    if !active[a] {
                        return 1.0;
                    }
                    let x = i as f64 - (dims[a] / 2) as f64;
                    kernel.transform(x / grid[a] as f64)
                })
                .collect::<Vec<_>>()
        });

        let w = kernel.width.ceil() as usize;
        let per_axis = active.map(|a| if a { w } else { 1 });
        let taps = per_axis.iter().product::<usize>();
        let mut neighbors = Vec::with_capacity(coords.len() * taps);
        let mut weights = Vec::with_capacity(coords.len() * taps);
        let half = kernel.width / 2.0;
        let mut axis_idx = [[0usize; 16]; 3];
        let mut axis_w = [[0.0f64; 16]; 3];
        for k in coords {
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain("non-finite sample coordinate"));
            }
            for a in 0..3 {
                if !active[a] {
                    axis_idx[a][0] = 0;
                    axis_w[a][0] = 1.0;
                    continue;
                }
                let g = grid[a] as i64;
                let u = k[a] * grid[a] as f64 / dims[a] as f64;
                let m0 = (u - half).ceil() as i64;
                for t in 0..w {
                    let m = m0 + t as i64;
                    axis_idx[a][t] = m.rem_euclid(g) as usize;
                    axis_w[a][t] = kernel.eval(u - m as f64);
                }
            }
            for tz in 0..per_axis[2] {
                for ty in 0..per_axis[1] {
                    for tx in 0..per_axis[0] {
                        let idx = axis_idx[0][tx] + grid[0] * (axis_idx[1][ty] + grid[1] * axis_idx[2][tz]);
                        neighbors.push(idx as u32);
                        weights.push(axis_w[0][tx] * axis_w[1][ty] * axis_w[2][tz]);
                    }
                }
            }
        }

        let mut planner = FftPlanner::new();
        let fwd = [0, 1, 2].map(|a| active[a].then(|| planner.plan_fft_forward(grid[a])));
        let inv = [0, 1, 2].map(|a| active[a].then(|| planner.plan_fft_inverse(grid[a])));
        Ok(NufftPlan {
            dims,
            grid,
            apod,
            taps,
            neighbors,
            weights,
            n_samples: coords.len(),
            fwd,
            inv,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    fn apod_at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.apod[0][x] * self.apod[1][y] * self.apod[2][z]
    }

    fn grid_index(&self, x: usize, y: usize, z: usize) -> usize {
        let wrap = |i: usize, a: usize| {
            let pos = i as i64 - (self.dims[a] / 2) as i64;
            pos.rem_euclid(self.grid[a] as i64) as usize
        };
        wrap(x, 0) + self.grid[0] * (wrap(y, 1) + self.grid[1] * wrap(z, 2))
    }

    fn fft_axes(&self, buf: &mut [Complex64], inverse: bool) {
        let plans = if inverse { &self.inv } else { &self.fwd };
        let [gx, gy, gz] = self.grid;
        for (a, plan) in plans.iter().enumerate() {
            let Some(plan) = plan else { continue };
            let (len, stride) = match a {
                0 => (gx, 1),
                1 => (gy, gx),
                _ => (gz, gx * gy),
            };
            let mut line = vec![Complex64::new(0.0, 0.0); len];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            let outer = gx * gy * gz / len;
            for o in 0..outer {
                // start of the o-th line along axis a
                let base = match a {
                    0 => o * gx,
                    1 => (o / gx) * gx * gy + (o % gx),
                    _ => o,
                };
                for (t, v) in line.iter_mut().enumerate() {
                    *v = buf[base + t * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (t, v) in line.iter().enumerate() {
                    buf[base + t * stride] = *v;
                }
            }
        }
    }

    /// Type-2 transform: image to per-sample values.
    pub fn forward(&self, image: &ComplexImage) -> Result<Vec<Complex64>> {
        image.check_dims(self.dims, "nufft forward")?;
        let [nx, ny, nz] = self.dims;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid.iter().product()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = image.get(x, y, z) / self.apod_at(x, y, z);
                    buf[self.grid_index(x, y, z)] = v;
                }
            }
        }
        self.fft_axes(&mut buf, false);
        let out = self
            .neighbors
            .chunks(self.taps)
            .zip(self.weights.chunks(self.taps))
            .map(|(idx, w)| idx.iter().zip(w).map(|(&i, &w)| buf[i as usize] * w).sum())
            .collect();
        Ok(out)
    }

    /// Exact adjoint of [`NufftPlan::forward`].
    pub fn adjoint(&self, samples: &[Complex64]) -> Result<ComplexImage> {
        if samples.len() != self.n_samples {
            return Err(Error::shape(format!(
                "{} sample values for a {}-sample trajectory",
                samples.len(),
                self.n_samples
            )));
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid.iter().product()];
        for ((idx, w), s) in self.neighbors.chunks(self.taps).zip(self.weights.chunks(self.taps)).zip(samples) {
            for (&i, &w) in idx.iter().zip(w) {
                buf[i as usize] += s * w;
            }
        }
        self.fft_axes(&mut buf, true);
        let [nx, ny, nz] = self.dims;
        let mut img = ComplexImage::zeros(self.dims);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let v = buf[self.grid_index(x, y, z)] / self.apod_at(x, y, z);
                    let i = img.index(x, y, z);
                    img.data_mut()[i] = v;
                }
            }
        }
        Ok(img)
    }
}

fn check_traj(dims: [usize; 3], traj: &Trajectory) -> Result<()> {
    if dims[0] != traj.nx || dims[1] != traj.nx {
        return Err(Error::shape(format!(
            "image {:?} does not match trajectory matrix size {}",
            dims, traj.nx
        )));
    }
    Ok(())
}

/// One-shot forward NUFFT.
pub fn nufft_forward(image: &ComplexImage, traj: &Trajectory, kernel: &GriddingKernel) -> Result<Vec<Complex64>> {
    check_traj(image.dims(), traj)?;
    NufftPlan::new(image.dims(), traj, kernel)?.forward(image)
}

/// One-shot adjoint NUFFT.
pub fn nufft_adjoint(
    samples: &[Complex64],
    traj: &Trajectory,
    kernel: &GriddingKernel,
    dims: [usize; 3],
) -> Result<ComplexImage> {
    check_traj(dims, traj)?;
    NufftPlan::new(dims, traj, kernel)?.adjoint(samples)
}
