//! Ellipse phantoms, synthetic coil sensitivities and simulated acquisitions.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::forward::{CoilMaps, EncodingOperator, GriddingKernel};
use crate::image::ComplexImage;
use crate::kspace::KSpaceSamples;
use crate::trajectory::{nyquist_spokes, normalize_coords, stack_of_stars, Trajectory};

/// One ellipsoid. Positions and semi-axes are in field-of-view units where
/// the image spans `[-1, 1)` along every axis; `rotation` is in-plane, radians.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 3],
    pub axes: [f64; 3],
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn planar(cx: f64, cy: f64, a: f64, b: f64, rotation_deg: f64, intensity: f64) -> Self {
        Ellipse {
            center: [cx, cy, 0.0],
            axes: [a, b, 1.0],
            rotation: rotation_deg.to_radians(),
            intensity,
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.radius_sq(p) <= 1.0
    }

    /// Squared normalized radius: 1 on the boundary.
    pub fn radius_sq(&self, p: [f64; 3]) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let w = p[2] - self.center[2];
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) + (w / self.axes[2]).powi(2)
    }

    /// `intensity (1 - q)^2` inside, zero outside: continuously differentiable.
    pub fn smooth_value(&self, p: [f64; 3]) -> f64 {
        let q = self.radius_sq(p);
        if q < 1.0 {
            self.intensity * (1.0 - q).powi(2)
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub ellipses: Vec<Ellipse>,
    pub seed: u64,
}

impl PhantomSpec {
    /// Head-like layout: a body ellipse with brighter inclusions, all additive.
    pub fn head(dims: [usize; 3]) -> Self {
        let e = Ellipse::planar;
        let mut ellipses = vec![
            e(0.0, 0.0, 0.72, 0.92, 0.0, 0.35),
            e(0.0, 0.0, 0.62, 0.82, 0.0, 0.15),
            e(0.22, 0.0, 0.11, 0.31, -18.0, 0.3),
            e(-0.22, 0.0, 0.16, 0.41, 18.0, 0.3),
            e(0.0, 0.35, 0.21, 0.25, 0.0, 0.2),
            e(0.0, 0.1, 0.06, 0.06, 0.0, 0.3),
            e(0.0, -0.1, 0.06, 0.06, 0.0, 0.3),
            e(-0.1, -0.6, 0.08, 0.05, 0.0, 0.4),
            e(0.1, -0.6, 0.05, 0.08, 0.0, 0.4),
        ];
        if dims[2] > 1 {
            // taper the inclusions along z; the body spans the whole slab
            for (i, el) in ellipses.iter_mut().enumerate() {
                el.axes[2] = if i < 2 { 1.5 } else { 0.8 };
            }
        }
        PhantomSpec { dims, ellipses, seed: 0 }
    }

    /// Seeded random layout of `n` inclusions inside a body ellipse.
    pub fn random(dims: [usize; 3], n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ellipses = vec![Ellipse::planar(0.0, 0.0, 0.75, 0.9, 0.0, 0.4)];
        for _ in 0..n {
            let a = rng.gen_range(0.05..0.3);
            let b = rng.gen_range(0.05..0.3);
            let r = rng.gen_range(0.0..0.55);
            let t = rng.gen_range(0.0..2.0 * PI);
            ellipses.push(Ellipse {
                center: [r * t.cos(), r * t.sin(), 0.0],
                axes: [a, b, if dims[2] > 1 { rng.gen_range(0.3..1.0) } else { 1.0 }],
                rotation: rng.gen_range(0.0..PI),
                intensity: rng.gen_range(0.1..0.5),
            });
        }
        PhantomSpec { dims, ellipses, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::shape("phantom dims must be positive"));
        }
        if self.ellipses.is_empty() {
            return Err(Error::domain("phantom needs at least one ellipse"));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(0.0..=1.0).contains(&e.intensity) {
                return Err(Error::domain(format!("ellipse {i} intensity {} outside [0, 1]", e.intensity)));
            }
            if e.axes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return Err(Error::domain(format!("ellipse {i} has a non-positive axis")));
            }
        }
        Ok(())
    }

    /// Position of voxel `(x, y, z)` in field-of-view units.
    pub fn voxel_position(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let f = |i: usize, n: usize| if n > 1 { (i as f64 - (n / 2) as f64) / (n as f64 / 2.0) } else { 0.0 };
        [f(x, self.dims[0]), f(y, self.dims[1]), f(z, self.dims[2])]
    }
}

/// Sum of the intensities of the ellipses containing each voxel center,
/// clamped to `[0, 1]`; zero phase.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = spec.voxel_position(x, y, z);
                let v: f64 = spec.ellipses.iter().filter(|e| e.contains(p)).map(|e| e.intensity).sum();
                data.push(Complex64::new(v.clamp(0.0, 1.0), 0.0));
            }
        }
    }
    ComplexImage::new(spec.dims, data)
}

/// Like [`generate_phantom`] with every ellipse replaced by its smooth bump
/// (see [`Ellipse::smooth_value`]).
pub fn generate_smooth_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = spec.voxel_position(x, y, z);
                let v: f64 = spec.ellipses.iter().map(|e| e.smooth_value(p)).sum();
                data.push(Complex64::new(v.clamp(0.0, 1.0), 0.0));
            }
        }
    }
    ComplexImage::new(spec.dims, data)
}

/// Lobe width (FOV units) of the synthetic coil profiles.
const LOBE_WIDTH: f64 = 0.9;
/// Radius of the circle the lobe centers sit on.
const LOBE_RADIUS: f64 = 1.0;

/// Angle (radians) of coil `c`'s lobe center.
pub fn lobe_angle(c: usize, n_coils: usize) -> f64 {
    2.0 * PI * c as f64 / n_coils as f64
}

/// Unnormalized coil profiles: Gaussian lobes centered on the FOV boundary
/// with a smooth, seeded phase. Coil 0 has zero phase.
pub fn coil_lobes(dims: [usize; 3], n_coils: usize, seed: u64) -> Result<Vec<ComplexImage>> {
    if n_coils == 0 {
        return Err(Error::domain("need at least one coil"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<(f64, f64, f64)> = (0..n_coils)
        .map(|c| {
            if c == 0 {
                (0.0, 0.0, 0.0)
            } else {
                (rng.gen_range(-PI..PI), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }
        })
        .collect();
    let spec = PhantomSpec {
        dims,
        ellipses: Vec::new(),
        seed,
    };
    let [nx, ny, nz] = dims;
    (0..n_coils)
        .map(|c| {
            let t = lobe_angle(c, n_coils);
            let (cx, cy) = (LOBE_RADIUS * t.cos(), LOBE_RADIUS * t.sin());
            let (p0, gx, gy) = phases[c];
            let mut data = Vec::with_capacity(nx * ny * nz);
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let p = spec.voxel_position(x, y, z);
                        let d2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
                        let mag = (-d2 / (2.0 * LOBE_WIDTH * LOBE_WIDTH)).exp();
                        let phase = p0 + gx * p[0] + gy * p[1];
                        data.push(Complex64::from_polar(mag, phase));
                    }
                }
            }
            ComplexImage::new(dims, data)
        })
        .collect()
}

/// Coil lobes normalized to unit sum of squares at every voxel.
pub fn generate_coil_maps(dims: [usize; 3], n_coils: usize, seed: u64) -> Result<CoilMaps> {
    let mut maps = coil_lobes(dims, n_coils, seed)?;
    let n = maps[0].len();
    let mut sos = vec![0.0; n];
    for m in &maps {
        for (s, v) in sos.iter_mut().zip(m.data()) {
            *s += v.norm_sqr();
        }
    }
    for m in maps.iter_mut() {
        for (v, s) in m.data_mut().iter_mut().zip(&sos) {
            *v /= s.sqrt();
        }
    }
    CoilMaps::new(maps)
}

/// Sampling, coil and noise settings of a simulated scan.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionSpec {
    pub nx: usize,
    /// Defaults to the Nyquist count for `nx` when `None`.
    pub n_spokes: Option<usize>,
    pub n_partitions: usize,
    pub n_coils: usize,
    /// Standard deviation of the real and of the imaginary noise part,
    /// relative to the largest noiseless sample magnitude.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            nx: 64,
            n_spokes: None,
            n_partitions: 1,
            n_coils: 4,
            noise_sigma: 0.005,
            seed: 0,
        }
    }
}

impl AcquisitionSpec {
    pub fn spokes(&self) -> Result<usize> {
        match self.n_spokes {
            Some(n) => Ok(n),
            None => nyquist_spokes(self.nx),
        }
    }

    pub fn trajectory(&self) -> Result<Trajectory> {
        stack_of_stars(self.nx, self.spokes()?, self.n_partitions)
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [self.nx, self.nx, self.n_partitions]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::domain(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.n_coils == 0 || self.n_partitions == 0 || self.nx < 2 {
            return Err(Error::domain("n_coils and n_partitions must be positive and nx >= 2"));
        }
        Ok(())
    }
}

/// `n` i.i.d. complex Gaussian draws with standard deviation `sigma` on each part.
pub fn complex_noise(n: usize, sigma: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    if sigma == 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    (0..n)
        .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Encodes `image` through `maps` along `traj`, adds noise and normalizes the
/// values to unit maximum magnitude.
pub fn simulate_kspace(
    image: &ComplexImage,
    maps: &CoilMaps,
    traj: &Trajectory,
    acq: &AcquisitionSpec,
) -> Result<KSpaceSamples> {
    acq.validate()?;
    let op = EncodingOperator::new(traj, maps.clone(), &GriddingKernel::default())?;
    let mut values = op.forward(image)?;
    let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
    let noise = complex_noise(values.len(), acq.noise_sigma * peak, &mut rng);
    for (v, n) in values.iter_mut().zip(noise) {
        *v += n;
    }
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for v in values.iter_mut() {
        *v /= scale;
    }
    let norm = normalize_coords(traj)?;
    KSpaceSamples::new(norm.map.ndim(), maps.n_coils(), norm.coords, values, scale)?.with_map(norm.map)
}

pub struct CohortCase {
    pub spec: PhantomSpec,
    pub image: ComplexImage,
    pub samples: KSpaceSamples,
}

/// Phantoms scanned with one shared trajectory and coil set.
pub struct Cohort {
    pub cases: Vec<CohortCase>,
    pub traj: Trajectory,
    pub maps: CoilMaps,
    /// Clamps applied while jittering.
    pub warnings: Vec<String>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Voxelwise mean of the case images.
    pub fn mean_image(&self) -> ComplexImage {
        let mut out = ComplexImage::zeros(self.cases[0].image.dims());
        for c in &self.cases {
            for (o, v) in out.data_mut().iter_mut().zip(c.image.data()) {
                *o += v;
            }
        }
        let n = self.cases.len() as f64;
        out.data_mut().iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Perturbs centers by up to `jitter` (FOV units), axes and intensities by up
/// to a relative `jitter`, and rotations by up to `jitter` radians. Invalid
/// results are clamped and reported in `warnings`.
pub fn jitter_spec(base: &PhantomSpec, jitter: f64, seed: u64, warnings: &mut Vec<String>) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |s: f64| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
    let mut spec = base.clone();
    spec.seed = seed;
    for (i, e) in spec.ellipses.iter_mut().enumerate() {
        for a in 0..3 {
            if base.dims[a] > 1 {
                e.center[a] += u(jitter);
            }
            e.axes[a] *= 1.0 + u(jitter);
            if e.axes[a] < 1e-3 {
                warnings.push(format!("case seed {seed}: ellipse {i} axis {a} clamped to 1e-3"));
                e.axes[a] = 1e-3;
            }
        }
        e.rotation += u(jitter);
        e.intensity *= 1.0 + u(jitter);
        if !(0.0..=1.0).contains(&e.intensity) {
            warnings.push(format!("case seed {seed}: ellipse {i} intensity {:.4} clamped", e.intensity));
            e.intensity = e.intensity.clamp(0.0, 1.0);
        }
    }
    spec
}

/// Jittered copies of `base`, each scanned along `traj`. Case `i` uses
/// phantom seed `acq.seed * 1000 + i` and noise seed `acq.seed + i`.
pub fn make_cohort(
    n_cases: usize,
    base: &PhantomSpec,
    jitter: f64,
    traj: &Trajectory,
    acq: &AcquisitionSpec,
) -> Result<Cohort> {
    if n_cases < 2 {
        return Err(Error::domain("a cohort needs at least two cases"));
    }
    if !(jitter >= 0.0) {
        return Err(Error::domain("jitter must be non-negative"));
    }
    base.validate()?;
    let maps = generate_coil_maps(base.dims, acq.n_coils, acq.seed)?;
    let mut warnings = Vec::new();
    let mut cases = Vec::with_capacity(n_cases);
    for i in 0..n_cases {
        let spec = jitter_spec(base, jitter, acq.seed.wrapping_mul(1000).wrapping_add(i as u64), &mut warnings);
        let image = generate_phantom(&spec)?;
        let case_acq = AcquisitionSpec {
            seed: acq.seed.wrapping_add(i as u64),
            ..acq.clone()
        };
        let samples = simulate_kspace(&image, &maps, traj, &case_acq)?;
        cases.push(CohortCase { spec, image, samples });
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(Cohort {
        cases,
        traj: traj.clone(),
        maps,
        warnings,
    })
}
