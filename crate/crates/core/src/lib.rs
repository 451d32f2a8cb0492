pub mod data;
pub mod degrade;
pub mod error;
pub mod fid;
pub mod losses;
pub mod models;
pub mod nn;
pub mod raster;
pub mod scheduler;
pub mod train;

pub use error::{Error, Result};
// re-exported because statistics types expose nalgebra matrices
pub use nalgebra;
