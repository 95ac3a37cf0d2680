//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Operations record backward rules on a [`Tape`] whenever any input is
//! tracked on it; tensors without a node id are plain values and never
//! receive gradients. Passing `None` for the tape runs the same arithmetic
//! without recording, which is how evaluation and finite-difference probes
//! are done.
//!
//! Everything is double precision: the gradient checks in this crate run at
//! tolerances (1e-4 and tighter) that single precision cannot meet.

mod check;
mod lstm;
pub mod ops;
mod tape;
mod tensor;

pub use check::finite_difference_check;
pub use lstm::{lstm_step, lstm_step_batch, LstmState, LstmWeights};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Train/eval switch for the stochastic and statistics-bearing ops
/// (dropout, batch norm). Orthogonal to whether a tape is recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
