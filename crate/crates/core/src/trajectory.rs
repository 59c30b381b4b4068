//! Golden-angle radial and stack-of-stars sampling.
//!
//! Coordinates are in cycles per field of view. Samples are stored
//! spoke-major (spoke, then partition, then readout point) so that keeping
//! the first spokes of an acquisition keeps a prefix of the sample list.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Golden-angle increment in degrees, `180 (sqrt(5) - 1) / 2`.
pub fn golden_angle_deg() -> f64 {
    180.0 * (5f64.sqrt() - 1.0) / 2.0
}

/// Spokes needed to fully sample an `nx` readout radially: `round(pi/2 * nx)`.
pub fn nyquist_spokes(nx: usize) -> Result<usize> {
    if nx < 1 {
        return Err(Error::domain("matrix size must be at least 1"));
    }
    Ok((PI / 2.0 * nx as f64).round() as usize)
}

/// Ordered k-space sample positions with their acquisition structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `(kx, ky, kz)` per sample; `kz = 0` for planar trajectories.
    pub coords: Vec<[f64; 3]>,
    pub spoke_index: Vec<u32>,
    pub partition_index: Vec<u32>,
    pub nx: usize,
    pub n_spokes: usize,
    pub n_partitions: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Largest in-plane radius, `nx/2 - 0.5`.
    pub fn kmax(&self) -> f64 {
        self.nx as f64 / 2.0 - 0.5
    }

    pub fn kzmax(&self) -> f64 {
        self.n_partitions as f64 / 2.0 - 0.5
    }

    pub fn samples_per_spoke(&self) -> usize {
        self.nx * self.n_partitions
    }

    /// 2 for planar radial, 3 for stack-of-stars with several partitions.
    pub fn ndim(&self) -> usize {
        if self.n_partitions > 1 {
            3
        } else {
            2
        }
    }

    /// Spoke angle in degrees for acquisition index `k`.
    pub fn spoke_angle_deg(k: usize) -> f64 {
        (k as f64 * golden_angle_deg()).rem_euclid(180.0)
    }

    /// Keeps the first `n` spokes.
    pub fn first_spokes(&self, n: usize) -> Trajectory {
        let n = n.min(self.n_spokes);
        let len = n * self.samples_per_spoke();
        Trajectory {
            coords: self.coords[..len].to_vec(),
            spoke_index: self.spoke_index[..len].to_vec(),
            partition_index: self.partition_index[..len].to_vec(),
            nx: self.nx,
            n_spokes: n,
            n_partitions: self.n_partitions,
        }
    }
}

/// Planar golden-angle radial trajectory; spoke 0 lies along `kx`.
pub fn golden_angle_radial(nx: usize, n_spokes: usize) -> Result<Trajectory> {
    stack_of_stars(nx, n_spokes, 1)
}

/// The radial pattern of [`golden_angle_radial`] repeated on `n_partitions`
/// equispaced `kz` planes.
pub fn stack_of_stars(nx: usize, n_spokes: usize, n_partitions: usize) -> Result<Trajectory> {
    if nx < 2 {
        return Err(Error::domain("readout length must be at least 2"));
    }
    if n_spokes < 1 || n_partitions < 1 {
        return Err(Error::domain("need at least one spoke and one partition"));
    }
    let n = nx * n_spokes * n_partitions;
    let mut coords = Vec::with_capacity(n);
    let mut spoke_index = Vec::with_capacity(n);
    let mut partition_index = Vec::with_capacity(n);
    let kmax = nx as f64 / 2.0 - 0.5;
    let kzmax = n_partitions as f64 / 2.0 - 0.5;
    for s in 0..n_spokes {
        let theta = Trajectory::spoke_angle_deg(s).to_radians();
        let (sin, cos) = theta.sin_cos();
        for p in 0..n_partitions {
            let kz = p as f64 - kzmax;
            for j in 0..nx {
                let r = j as f64 - kmax;
                coords.push([r * cos, r * sin, kz]);
                spoke_index.push(s as u32);
                partition_index.push(p as u32);
            }
        }
    }
    Ok(Trajectory {
        coords,
        spoke_index,
        partition_index,
        nx,
        n_spokes,
        n_partitions,
    })
}

/// Per-axis affine map between physical k-space and `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap {
    /// Physical axes (0 = kx, 1 = ky, 2 = kz) that were kept.
    pub axes: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordMap {
    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn normalize(&self, k: &[f64; 3]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&a, (&lo, &hi))| (k[a] - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> [f64; 3] {
        let mut k = [0.0; 3];
        for (i, &a) in self.axes.iter().enumerate() {
            k[a] = self.lo[i] + u[i] * (self.hi[i] - self.lo[i]);
        }
        k
    }
}

/// Coordinates rescaled to `[0, 1]` per axis, flattened `n x ndim`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedCoords {
    pub coords: Vec<f64>,
    pub map: CoordMap,
}

impl NormalizedCoords {
    pub fn len(&self) -> usize {
        self.coords.len() / self.map.ndim().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.map.ndim();
        &self.coords[i * d..(i + 1) * d]
    }
}

/// Maps each axis's [min, max] onto [0, 1]; axes with zero extent are dropped.
pub fn normalize_coords(traj: &Trajectory) -> Result<NormalizedCoords> {
    if traj.is_empty() {
        return Err(Error::domain("empty trajectory"));
    }
    let mut map = CoordMap {
        axes: Vec::new(),
        lo: Vec::new(),
        hi: Vec::new(),
    };
    for axis in 0..3 {
        let (lo, hi) = traj
            .coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| (lo.min(k[axis]), hi.max(k[axis])));
        if hi > lo {
            map.axes.push(axis);
            map.lo.push(lo);
            map.hi.push(hi);
        }
    }
    if map.axes.is_empty() {
        return Err(Error::domain("trajectory has zero extent on every axis"));
    }
    Ok(apply_map(traj, map))
}

/// Normalizes `traj` with a map computed elsewhere (typically from the
/// fully sampled trajectory so that prefixes share its frame).
pub fn apply_map(traj: &Trajectory, map: CoordMap) -> NormalizedCoords {
    let mut coords = Vec::with_capacity(traj.len() * map.ndim());
    for k in &traj.coords {
        coords.extend(map.normalize(k));
    }
    NormalizedCoords { coords, map }
}

/// Retrospective acceleration: keep the first acquired spokes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UndersamplingSpec {
    pub acceleration: f64,
}

impl UndersamplingSpec {
    pub fn new(acceleration: f64) -> Result<Self> {
        if !(acceleration >= 1.0) {
            return Err(Error::domain(format!("acceleration {acceleration} must be >= 1")));
        }
        Ok(UndersamplingSpec { acceleration })
    }

    /// `max(1, floor(n_spokes / R))`.
    pub fn kept_spokes(&self, n_spokes: usize) -> usize {
        // nudge guards against 484/4.0 style quotients landing just under an integer
        let q = n_spokes as f64 / self.acceleration;
        ((q + 1e-9).floor() as usize).max(1)
    }
}

pub fn retrospective_undersample(traj: &Trajectory, spec: UndersamplingSpec) -> Trajectory {
    traj.first_spokes(spec.kept_spokes(traj.n_spokes))
}
