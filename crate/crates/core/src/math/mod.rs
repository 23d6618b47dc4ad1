//! Dense linear algebra, seeded randomness and reverse-mode differentiation.

mod matrix;
mod rng;
mod tape;

pub use matrix::Matrix;
pub use rng::SeededRng;
pub use tape::{softmax_rows, Gradients, Tape, Var};
