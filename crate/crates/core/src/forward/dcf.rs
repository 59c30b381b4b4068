use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Ramp density compensation for radial and stack-of-stars trajectories.
///
/// Each sample is weighted by its in-plane radius; a sample exactly at the
/// center gets a quarter cell (the mean radius over the central cell). The
/// weights are scaled to sum to the number of Cartesian cells inside the
/// sampled disk, `pi (nx/2)^2` per partition.
pub fn dcf_radial(traj: &Trajectory) -> Result<Vec<f64>> {
    check_radial(traj)?;
    let mut w: Vec<f64> = traj
        .coords
        .iter()
        .map(|k| {
            let r = k[0].hypot(k[1]);
            if r < 1e-12 {
                0.25
            } else {
                r
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    let cells = PI * (traj.nx as f64 / 2.0).powi(2) * traj.n_partitions as f64;
    if total > 0.0 {
        for v in w.iter_mut() {
            *v *= cells / total;
        }
    }
    Ok(w)
}

pub(super) fn check_radial(traj: &Trajectory) -> Result<()> {
    let per = traj.samples_per_spoke();
    if per == 0 || traj.len() != per * traj.n_spokes {
        return Err(Error::Unsupported("trajectory is not organized in spokes".into()));
    }
    // every readout must be a line through the center, symmetric about it
    for spoke in traj.coords.chunks(traj.nx) {
        for j in 0..traj.nx / 2 {
            let (a, b) = (spoke[j], spoke[traj.nx - 1 - j]);
            if (a[0] + b[0]).abs() > 1e-9 || (a[1] + b[1]).abs() > 1e-9 || (a[2] - b[2]).abs() > 1e-9 {
                return Err(Error::Unsupported("dcf_radial needs radial spokes".into()));
            }
        }
    }
    Ok(())
}
