pub mod bias;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod latent;
pub mod math;
pub mod nn;
pub mod optim;
pub mod penalty;
pub mod pipeline;
pub mod protocol;

pub use error::{ErrorKind, Result, SabrError};
pub use math::{Matrix, SeededRng, Tape, Var};
