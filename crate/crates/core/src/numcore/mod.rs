//! Dense `f64` arrays with reverse-mode differentiation and an Adam optimizer.

mod matrix;
mod optim;
mod tape;
mod tensor;

pub use matrix::Matrix;
pub use optim::{Adam, AdamState};
pub use tape::{NodeGrads, Tape, Var, PROB_CLAMP};
pub use tensor::{Gradients, ParamStore, ParamTensor};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
