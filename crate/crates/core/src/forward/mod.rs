//! The MRI encoding operator: coil weighting, NUFFT, density compensation.

mod coils;
mod dcf;
mod dft;
mod kernel;
mod nufft;
mod operator;
mod readout;

pub use coils::{apply_coils, combine_coils, combine_coils_with, CoilMaps, Combine, COMBINE_FLOOR};
pub use dcf::dcf_radial;
pub use dft::{direct_dft_adjoint, direct_dft_forward, DftDirection, DIRECT_DFT_WORK_CAP};
pub use kernel::{bessel_i0, GriddingKernel};
pub use nufft::{nufft_adjoint, nufft_forward, NufftPlan};
pub use operator::{lipschitz_estimate, EncodingOperator};
pub use readout::{densify_readouts, radial_gridding_recon, DenseReadout, READOUT_OVERSAMPLING};

use num_complex::Complex64;

use crate::error::Result;
use crate::image::ComplexImage;

/// Direct DFT in either direction; `image` is required for `Forward` and
/// `samples`/`dims` for `Adjoint`.
pub enum DftInput<'a> {
    Image(&'a ComplexImage),
    Samples(&'a [Complex64], [usize; 3]),
}

pub enum DftOutput {
    Samples(Vec<Complex64>),
    Image(ComplexImage),
}

pub fn direct_dft(input: DftInput<'_>, coords: &[[f64; 3]]) -> Result<DftOutput> {
    match input {
        DftInput::Image(img) => direct_dft_forward(img, coords).map(DftOutput::Samples),
        DftInput::Samples(s, dims) => direct_dft_adjoint(s, coords, dims).map(DftOutput::Image),
    }
}

/// `max |a - b| / max |b|`.
pub fn max_relative_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let err = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// `||a - b||_2 / ||b||_2`.
pub fn relative_l2_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
