use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-Bessel interpolation kernel for gridding.
#[derive(Clone, Debug)]
pub struct GriddingKernel {
    /// Support in grid cells.
    pub width: f64,
    /// Grid inflation factor.
    pub oversampling: f64,
    pub beta: f64,
    /// Kernel values on `[0, width/2]`, normalized to 1 at the center.
    lookup: Vec<f64>,
    per_cell: usize,
}

const TABLE_PER_CELL: usize = 4096;

impl Default for GriddingKernel {
    fn default() -> Self {
        GriddingKernel::new(4.0, 2.0).expect("default kernel parameters are valid")
    }
}

impl GriddingKernel {
    /// Kernel with the shape parameter from Beatty et al.'s formula
    /// `beta = pi * sqrt((W/s)^2 (s - 1/2)^2 - 0.8)`.
    pub fn new(width: f64, oversampling: f64) -> Result<Self> {
        if !(width >= 2.0) {
            return Err(Error::domain(format!("kernel width {width} must be >= 2")));
        }
        if !(oversampling >= 1.25) {
            return Err(Error::domain(format!("oversampling {oversampling} must be >= 1.25")));
        }
        let arg = (width / oversampling).powi(2) * (oversampling - 0.5).powi(2) - 0.8;
        let beta = PI * arg.max(0.0).sqrt();
        Ok(Self::with_beta(width, oversampling, beta))
    }

    pub fn with_beta(width: f64, oversampling: f64, beta: f64) -> Self {
        let half = width / 2.0;
        let n = (half * TABLE_PER_CELL as f64).ceil() as usize + 2;
        let i0b = bessel_i0(beta);
        let lookup = (0..n)
            .map(|i| {
                let t = i as f64 / TABLE_PER_CELL as f64;
                let s = 1.0 - (t / half).powi(2);
                if s < 0.0 {
                    0.0
                } else {
                    bessel_i0(beta * s.sqrt()) / i0b
                }
            })
            .collect();
        GriddingKernel {
            width,
            oversampling,
            beta,
            lookup,
            per_cell: TABLE_PER_CELL,
        }
    }

    pub fn table(&self) -> &[f64] {
        &self.lookup
    }

    /// Kernel value at offset `t` grid cells (linear table interpolation).
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.abs();
        if t > self.width / 2.0 {
            return 0.0;
        }
        let pos = t * self.per_cell as f64;
        let i = pos as usize;
        let frac = pos - i as f64;
        let a = self.lookup[i];
        let b = self.lookup.get(i + 1).copied().unwrap_or(0.0);
        a + frac * (b - a)
    }

    /// Continuous Fourier transform of the kernel at `nu` cycles per grid
    /// cell, used for apodization correction.
    pub fn transform(&self, nu: f64) -> f64 {
        let w = self.width;
        let z2 = self.beta * self.beta - (PI * w * nu).powi(2);
        let i0b = bessel_i0(self.beta);
        let shape = if z2 > 1e-12 {
            let z = z2.sqrt();
            z.sinh() / z
        } else if z2 < -1e-12 {
            let z = (-z2).sqrt();
            z.sin() / z
        } else {
            1.0
        };
        w * shape / i0b
    }
}
