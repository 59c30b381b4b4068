use std::f64::consts::PI;

use num_complex::Complex64;

use super::coils::{CoilMaps, Combine};
use super::dcf::check_radial;
use super::kernel::GriddingKernel;
use super::operator::EncodingOperator;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::trajectory::Trajectory;

/// Readout oversampling used before density-compensated gridding.
///
/// A spoke of `nx` samples spaced one cycle/FOV apart determines the object's
/// projection only modulo the FOV. Ramp filtering spreads each projection far
/// beyond the object, so gridding the samples directly wraps those tails back
/// into the image as a smooth positive haze. Interpolating every readout onto
/// a twice-as-dense line first (exact for objects inside the inscribed
/// circle) gives the filtered projections room to decay.
pub const READOUT_OVERSAMPLING: usize = 2;

/// `(os * nx) x nx` matrix taking a readout at `j - nx/2 + 1/2` to one at
/// `(m + 1/2) / os - nx/2`.
fn interpolation_matrix(nx: usize, os: usize) -> Vec<Complex64> {
    let n = nx as f64;
    let half = n / 2.0;
    let src: Vec<f64> = (0..nx).map(|j| j as f64 + 0.5 - half).collect();
    let dst: Vec<f64> = (0..os * nx).map(|m| (m as f64 + 0.5) / os as f64 - half).collect();
    let mut out = Vec::with_capacity(dst.len() * nx);
    for &kd in &dst {
        for &ks in &src {
            // (1/n) sum over projection positions s = -n/2 .. n/2 - 1
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..nx {
                let pos = s as f64 - half;
                acc += Complex64::from_polar(1.0, 2.0 * PI * (ks - kd) * pos / n);
            }
            out.push(acc / n);
        }
    }
    out
}

/// A radial trajectory's readouts resampled `os` times more densely, with
/// matching ramp weights.
///
/// Values are interpolated through the readout's periodic projection on
/// integer positions; off-axis spokes place voxels between those positions,
/// which costs about 1e-3 relative accuracy.
pub struct DenseReadout {
    pub coords: Vec<[f64; 3]>,
    pub values: Vec<Complex64>,
    pub dcf: Vec<f64>,
    pub n_coils: usize,
}

/// Resamples each readout line of `traj` (values sample-major with
/// `n_coils` channels) onto `os * nx` points.
pub fn densify_readouts(traj: &Trajectory, values: &[Complex64], n_coils: usize, os: usize) -> Result<DenseReadout> {
    check_radial(traj)?;
    if os == 0 {
        return Err(Error::domain("readout oversampling must be at least 1"));
    }
    if values.len() != traj.len() * n_coils {
        return Err(Error::shape(format!(
            "{} values for {} samples x {} coils",
            values.len(),
            traj.len(),
            n_coils
        )));
    }
    let nx = traj.nx;
    let dense = os * nx;
    let m = interpolation_matrix(nx, os);
    let n_lines = traj.len() / nx;
    let mut coords = Vec::with_capacity(n_lines * dense);
    let mut out = vec![Complex64::new(0.0, 0.0); n_lines * dense * n_coils];
    let half = nx as f64 / 2.0;
    for line in 0..n_lines {
        let pts = &traj.coords[line * nx..(line + 1) * nx];
        // unit direction of the readout in cycles/FOV per step
        let steps = (nx - 1) as f64;
        let dir = [(pts[nx - 1][0] - pts[0][0]) / steps, (pts[nx - 1][1] - pts[0][1]) / steps];
        for i in 0..dense {
            let r = (i as f64 + 0.5) / os as f64 - half;
            coords.push([r * dir[0], r * dir[1], pts[0][2]]);
        }
        for c in 0..n_coils {
            for i in 0..dense {
                let row = &m[i * nx..(i + 1) * nx];
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, w) in row.iter().enumerate() {
                    acc += w * values[(line * nx + j) * n_coils + c];
                }
                out[(line * dense + i) * n_coils + c] = acc;
            }
        }
    }
    let mut dcf: Vec<f64> = coords.iter().map(|k| k[0].hypot(k[1])).collect();
    let total: f64 = dcf.iter().sum();
    let cells = PI * half * half * traj.n_partitions as f64;
    if total > 0.0 {
        for w in dcf.iter_mut() {
            *w *= cells / total;
        }
    }
    Ok(DenseReadout {
        coords,
        values: out,
        dcf,
        n_coils,
    })
}

/// Density-compensated gridding reconstruction of radial data, coil-combined.
pub fn radial_gridding_recon(
    traj: &Trajectory,
    values: &[Complex64],
    maps: &CoilMaps,
    kernel: &GriddingKernel,
    mode: Combine,
) -> Result<ComplexImage> {
    let dense = densify_readouts(traj, values, maps.n_coils(), READOUT_OVERSAMPLING)?;
    let op = EncodingOperator::from_coords(&dense.coords, maps.clone(), kernel)?;
    op.gridding_recon(&dense.values, &dense.dcf, mode)
}
