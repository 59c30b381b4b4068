//! Dense Cartesian complex grids.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex voxel grid, `x` fastest: index `x + nx * (y + ny * z)`.
///
/// Voxel `ix` sits at position `ix - nx / 2` (integer division), so the
/// spatial origin is voxel `(nx/2, ny/2, nz/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    dims: [usize; 3],
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(dims: [usize; 3]) -> Self {
        ComplexImage {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn new(dims: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() || dims.contains(&0) {
            return Err(Error::shape(format!(
                "dims {:?} do not match {} voxels",
                dims,
                data.len()
            )));
        }
        Ok(ComplexImage { dims, data })
    }

    pub fn from_real(dims: [usize; 3], real: &[f64]) -> Result<Self> {
        Self::new(dims, real.iter().map(|&r| Complex64::new(r, 0.0)).collect())
    }

    /// 2-D image (`nz = 1`).
    pub fn planar(nx: usize, ny: usize, data: Vec<Complex64>) -> Result<Self> {
        Self::new([nx, ny, 1], data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn ndim(&self) -> usize {
        if self.dims[2] > 1 {
            3
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.index(x, y, z)]
    }

    /// Voxel coordinates relative to the spatial origin.
    pub fn position(&self, i: usize) -> [f64; 3] {
        let [nx, ny, nz] = self.dims;
        let x = i % nx;
        let y = (i / nx) % ny;
        let z = i / (nx * ny);
        [
            x as f64 - (nx / 2) as f64,
            y as f64 - (ny / 2) as f64,
            z as f64 - (nz / 2) as f64,
        ]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub(crate) fn check_dims(&self, other: [usize; 3], what: &str) -> Result<()> {
        if self.dims != other {
            return Err(Error::shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other
            )));
        }
        Ok(())
    }
}

/// Real voxel grid with the same layout as [`ComplexImage`].
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() || dims.contains(&0) {
            return Err(Error::shape(format!("dims {:?} do not match {} voxels", dims, data.len())));
        }
        Ok(RealImage { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        RealImage {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Magnitude scaled to a maximum of one. An all-zero input stays zero
    /// and logs a warning.
    pub fn normalized_magnitude(image: &ComplexImage) -> Self {
        let mut data = image.magnitude();
        if !normalize_max(&mut data) {
            log::warn!("image is identically zero; leaving it unnormalized");
        }
        RealImage { dims: image.dims(), data }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    /// Row `y` of slice `z`.
    pub fn row(&self, y: usize, z: usize) -> &[f64] {
        let [nx, ny, _] = self.dims;
        let start = nx * (y + ny * z);
        &self.data[start..start + nx]
    }
}

/// Scales `values` so the maximum is one. Returns `false` (leaving zeros)
/// when the input is identically zero.
pub fn normalize_max(values: &mut [f64]) -> bool {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 && max.is_finite() {
        for v in values.iter_mut() {
            *v /= max;
        }
        true
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
        false
    }
}

/// Inner product `<a, b> = sum conj(a) b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_position() {
        let img = ComplexImage::zeros([4, 6, 1]);
        let i = img.index(2, 3, 0);
        assert_eq!(img.position(i), [0.0, 0.0, 0.0]);
        assert_eq!(img.position(0), [-2.0, -3.0, 0.0]);
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(ComplexImage::new([2, 2, 1], vec![Complex64::new(0.0, 0.0); 3]).is_err());
    }

    #[test]
    fn normalize_zero_guard() {
        let mut v = vec![0.0; 4];
        assert!(!normalize_max(&mut v));
        let mut w = vec![0.5, 2.0, 1.0];
        assert!(normalize_max(&mut w));
        assert_eq!(w, vec![0.25, 1.0, 0.5]);
    }
}
