use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// Floor on the sum of squared sensitivities when inverting coil weighting.
pub const COMBINE_FLOOR: f64 = 1e-6;

/// Per-coil complex sensitivity profiles sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMaps {
    pub maps: Vec<ComplexImage>,
}

/// How coil images are merged into one image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Combine {
    /// Sensitivity-weighted (matched filter): `sum conj(S_c) I_c / sum |S_c|^2`.
    #[default]
    MatchedFilter,
    /// Root sum of squares of coil magnitudes (real, non-negative).
    RootSumOfSquares,
}

impl CoilMaps {
    pub fn new(maps: Vec<ComplexImage>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::shape("need at least one coil map"));
        };
        let dims = first.dims();
        for m in &maps {
            m.check_dims(dims, "coil maps")?;
        }
        Ok(CoilMaps { maps })
    }

    /// Single coil with unit sensitivity.
    pub fn unit(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        CoilMaps {
            maps: vec![ComplexImage::new(dims, vec![Complex64::new(1.0, 0.0); n]).expect("dims")],
        }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.maps[0].dims()
    }

    /// Sum over coils of `|S_c|^2` per voxel.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut sos = vec![0.0; self.maps[0].len()];
        for m in &self.maps {
            for (s, v) in sos.iter_mut().zip(m.data()) {
                *s += v.norm_sqr();
            }
        }
        sos
    }
}

/// `S_c * I` for every coil.
pub fn apply_coils(image: &ComplexImage, maps: &CoilMaps) -> Result<Vec<ComplexImage>> {
    image.check_dims(maps.dims(), "apply_coils")?;
    maps.maps
        .iter()
        .map(|s| {
            ComplexImage::new(
                image.dims(),
                image.data().iter().zip(s.data()).map(|(i, s)| i * s).collect(),
            )
        })
        .collect()
}

pub fn combine_coils(coil_images: &[ComplexImage], maps: &CoilMaps) -> Result<ComplexImage> {
    combine_coils_with(coil_images, maps, Combine::MatchedFilter)
}

pub fn combine_coils_with(coil_images: &[ComplexImage], maps: &CoilMaps, mode: Combine) -> Result<ComplexImage> {
    if coil_images.len() != maps.n_coils() {
        return Err(Error::shape(format!(
            "{} coil images for {} maps",
            coil_images.len(),
            maps.n_coils()
        )));
    }
    let dims = maps.dims();
    for c in coil_images {
        c.check_dims(dims, "combine_coils")?;
    }
    let n = maps.maps[0].len();
    let mut out = ComplexImage::zeros(dims);
    match mode {
        Combine::MatchedFilter => {
            let sos = maps.sum_of_squares();
            for (img, s) in coil_images.iter().zip(&maps.maps) {
                for (o, (v, sv)) in out.data_mut().iter_mut().zip(img.data().iter().zip(s.data())) {
                    *o += sv.conj() * v;
                }
            }
            for (o, s) in out.data_mut().iter_mut().zip(&sos) {
                *o /= s.max(COMBINE_FLOOR);
            }
        }
        Combine::RootSumOfSquares => {
            let mut acc = vec![0.0; n];
            for img in coil_images {
                for (a, v) in acc.iter_mut().zip(img.data()) {
                    *a += v.norm_sqr();
                }
            }
            for (o, a) in out.data_mut().iter_mut().zip(acc) {
                *o = Complex64::new(a.sqrt(), 0.0);
            }
        }
    }
    Ok(out)
}
