mod binio;
pub mod cs;
pub mod error;
pub mod forward;
pub mod image;
pub mod inr;
pub mod kspace;
pub mod metrics;
pub mod pgm;
pub mod phantom;
pub mod tensorcore;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
