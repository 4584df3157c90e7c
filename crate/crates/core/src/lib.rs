pub mod analysis;
pub mod error;
pub mod ica;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod subspace;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use subspace::*;
pub use trajectory::*;
