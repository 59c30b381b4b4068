//! Brute-force nonuniform DFT. Exact, quadratic, for testing small problems.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// Refuse problems larger than this many multiply-adds.
pub const DIRECT_DFT_WORK_CAP: usize = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DftDirection {
    /// Image to samples, `exp(-2 pi i k.x / N)`.
    Forward,
    /// Samples to image, the conjugate transpose.
    Adjoint,
}

fn check_work(voxels: usize, samples: usize) -> Result<()> {
    if voxels.saturating_mul(samples) > DIRECT_DFT_WORK_CAP {
        return Err(Error::Unsupported(format!(
            "direct DFT of {voxels} voxels x {samples} samples exceeds the {DIRECT_DFT_WORK_CAP} work cap"
        )));
    }
    Ok(())
}

fn phase(k: &[f64; 3], x: &[f64; 3], dims: [usize; 3]) -> f64 {
    let mut p = 0.0;
    for a in 0..3 {
        if dims[a] > 1 {
            p += k[a] * x[a] / dims[a] as f64;
        }
    }
    -2.0 * PI * p
}

pub fn direct_dft_forward(image: &ComplexImage, coords: &[[f64; 3]]) -> Result<Vec<Complex64>> {
    check_work(image.len(), coords.len())?;
    let dims = image.dims();
    let positions: Vec<[f64; 3]> = (0..image.len()).map(|i| image.position(i)).collect();
    Ok(coords
        .iter()
        .map(|k| {
            image
                .data()
                .iter()
                .zip(&positions)
                .map(|(v, x)| v * Complex64::from_polar(1.0, phase(k, x, dims)))
                .sum()
        })
        .collect())
}

pub fn direct_dft_adjoint(samples: &[Complex64], coords: &[[f64; 3]], dims: [usize; 3]) -> Result<ComplexImage> {
    if samples.len() != coords.len() {
        return Err(Error::shape("sample values and coordinates differ in length"));
    }
    let mut img = ComplexImage::zeros(dims);
    check_work(img.len(), coords.len())?;
    for i in 0..img.len() {
        let x = img.position(i);
        img.data_mut()[i] = samples
            .iter()
            .zip(coords)
            .map(|(s, k)| s * Complex64::from_polar(1.0, -phase(k, &x, dims)))
            .sum();
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_at_origin_is_constant() {
        let mut img = ComplexImage::zeros([8, 8, 1]);
        let o = img.index(4, 4, 0);
        img.data_mut()[o] = Complex64::new(1.0, 0.0);
        let coords = [[0.3, -2.1, 0.0], [3.9, 1.0, 0.0], [0.0, 0.0, 0.0]];
        for v in direct_dft_forward(&img, &coords).unwrap() {
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn cartesian_roundtrip_is_scaled_identity() {
        // Full Cartesian grid of integer frequencies: A^H A = N I.
        let n = 6;
        let coords: Vec<[f64; 3]> = (0..n * n)
            .map(|i| [(i % n) as f64 - 3.0, (i / n) as f64 - 3.0, 0.0])
            .collect();
        let mut img = ComplexImage::zeros([n, n, 1]);
        let i = img.index(1, 4, 0);
        img.data_mut()[i] = Complex64::new(1.0, 0.0);
        let back = direct_dft_adjoint(&direct_dft_forward(&img, &coords).unwrap(), &coords, [n, n, 1]).unwrap();
        for (j, v) in back.data().iter().enumerate() {
            let expected = if j == i { (n * n) as f64 } else { 0.0 };
            assert!((v - Complex64::new(expected, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn linear() {
        let coords = [[1.3, -0.4, 0.0], [-2.2, 3.1, 0.0]];
        let x = ComplexImage::planar(4, 4, (0..16).map(|i| Complex64::new(i as f64, 1.0)).collect()).unwrap();
        let y = ComplexImage::planar(4, 4, (0..16).map(|i| Complex64::new(-1.0, 0.5 * i as f64)).collect()).unwrap();
        let (a, b) = (Complex64::new(0.7, -1.2), Complex64::new(2.0, 0.3));
        let combo = ComplexImage::planar(
            4,
            4,
            x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let fx = direct_dft_forward(&x, &coords).unwrap();
        let fy = direct_dft_forward(&y, &coords).unwrap();
        let fc = direct_dft_forward(&combo, &coords).unwrap();
        for j in 0..2 {
            assert!((fc[j] - (a * fx[j] + b * fy[j])).norm() < 1e-12);
        }
    }

    #[test]
    fn refuses_large_problems() {
        let img = ComplexImage::zeros([128, 128, 8]);
        let coords = vec![[0.0; 3]; 1000];
        assert!(matches!(direct_dft_forward(&img, &coords), Err(Error::Unsupported(_))));
    }
}
