//! Minimal dense-tensor reverse-mode differentiation: the layer set needed
//! by the dispatch actor, critic, and travel-time predictor, plus an Adam
//! optimizer and a finite-difference checker.

pub mod check;
pub mod layers;
pub mod store;
pub mod tape;
pub mod tensor;

pub use check::max_rel_grad_error;
pub use store::{ParamStore, StoreError};
pub use tape::{Gradients, Tape, TapeError, Var};
pub use tensor::Tensor;
