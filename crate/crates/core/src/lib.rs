pub mod diffusion;
pub mod error;
pub mod laplace;
pub mod mlf;
pub mod montecarlo;
pub mod process;
pub mod solvers;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
