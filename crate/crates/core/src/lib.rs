pub mod distances;
pub mod embed;
pub mod error;
pub mod heat;
pub mod mmspace;
pub mod reconstruct;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
