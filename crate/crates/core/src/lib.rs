pub mod approximant;
pub mod bundles;
pub mod cli;
pub mod cuntz;
pub mod error;
pub mod linalg;
pub mod matfield;
pub mod simplicial;
pub mod traces;

pub use error::{Error, Result};
