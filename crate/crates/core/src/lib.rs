pub mod config;
pub mod conley;
pub mod connections;
pub mod critical;
pub mod error;
pub mod filtration;
pub mod homology;
pub mod morse_complex;
pub mod raster;
pub mod reports;
pub mod semiflow;
pub mod systems;

pub use error::{Error, Result};
