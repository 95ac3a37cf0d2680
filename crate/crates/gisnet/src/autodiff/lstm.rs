use rand::Rng;

use crate::error::{Error, Result};

use super::ops;
use super::tape::Tape;
use super::Tensor;

/// LSTM cell weights with the four gates packed along columns in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmWeights {
    /// `[d_in x 4*d_h]`
    pub w_x: Tensor,
    /// `[d_h x 4*d_h]`
    pub w_h: Tensor,
    /// `[4*d_h]`
    pub bias: Tensor,
}

impl LstmWeights {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        LstmWeights {
            w_x: Tensor::zeros(vec![d_in, 4 * d_h]),
            w_h: Tensor::zeros(vec![d_h, 4 * d_h]),
            bias: Tensor::zeros(vec![4 * d_h]),
        }
    }

    /// Uniform init in +-1/sqrt(d_h).
    pub fn init(d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_h as f64).sqrt();
        LstmWeights {
            w_x: Tensor::uniform(vec![d_in, 4 * d_h], -bound, bound, rng),
            w_h: Tensor::uniform(vec![d_h, 4 * d_h], -bound, bound, rng),
            bias: Tensor::uniform(vec![4 * d_h], -bound, bound, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }
}

/// Hidden and cell state, either rank-1 (`[d_h]`) or batched (`[B x d_h]`).
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(d_h: usize) -> Self {
        LstmState {
            h: Tensor::zeros(vec![d_h]),
            c: Tensor::zeros(vec![d_h]),
        }
    }

    pub fn zeros_batch(batch: usize, d_h: usize) -> Self {
        LstmState {
            h: Tensor::zeros(vec![batch, d_h]),
            c: Tensor::zeros(vec![batch, d_h]),
        }
    }
}

/// One LSTM step over a batch of rows: gates from `x.W_x + h.W_h + bias`,
/// `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step_batch(
    mut tape: Option<&mut Tape>,
    x: &Tensor,
    state: &LstmState,
    w: &LstmWeights,
) -> Result<LstmState> {
    let d_h = w.hidden_dim();
    if state.h.rank() != 2
        || state.c.rank() != 2
        || state.h.shape() != state.c.shape()
        || state.h.shape()[1] != d_h
    {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "state shapes {:?}/{:?} do not match hidden dim {d_h}",
                state.h.shape(),
                state.c.shape()
            ),
        ));
    }
    let zx = ops::matmul(tape.as_deref_mut(), x, &w.w_x)?;
    let zh = ops::matmul(tape.as_deref_mut(), &state.h, &w.w_h)?;
    let z = ops::add(tape.as_deref_mut(), &zx, &zh)?;
    let z = ops::add_row_bias(tape.as_deref_mut(), &z, &w.bias)?;

    let zi = ops::slice_cols(tape.as_deref_mut(), &z, 0, d_h)?;
    let zf = ops::slice_cols(tape.as_deref_mut(), &z, d_h, d_h)?;
    let zg = ops::slice_cols(tape.as_deref_mut(), &z, 2 * d_h, d_h)?;
    let zo = ops::slice_cols(tape.as_deref_mut(), &z, 3 * d_h, d_h)?;
    let i = ops::sigmoid(tape.as_deref_mut(), &zi)?;
    let f = ops::sigmoid(tape.as_deref_mut(), &zf)?;
    let g = ops::tanh(tape.as_deref_mut(), &zg)?;
    let o = ops::sigmoid(tape.as_deref_mut(), &zo)?;

    let fc = ops::mul(tape.as_deref_mut(), &f, &state.c)?;
    let ig = ops::mul(tape.as_deref_mut(), &i, &g)?;
    let c_next = ops::add(tape.as_deref_mut(), &fc, &ig)?;
    let tc = ops::tanh(tape.as_deref_mut(), &c_next)?;
    let h_next = ops::mul(tape.as_deref_mut(), &o, &tc)?;
    Ok(LstmState {
        h: h_next,
        c: c_next,
    })
}

/// One LSTM step for a single rank-1 input and state.
pub fn lstm_step(
    mut tape: Option<&mut Tape>,
    x: &Tensor,
    state: &LstmState,
    w: &LstmWeights,
) -> Result<LstmState> {
    if x.rank() != 1 || state.h.rank() != 1 || state.c.rank() != 1 {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "expected rank-1 input and state, got x {:?}, h {:?}, c {:?}",
                x.shape(),
                state.h.shape(),
                state.c.shape()
            ),
        ));
    }
    if state.h.numel() != w.hidden_dim() || state.c.numel() != w.hidden_dim() {
        return Err(Error::shape(
            "lstm_step",
            format!(
                "state dim {} does not match hidden dim {}",
                state.h.numel(),
                w.hidden_dim()
            ),
        ));
    }
    let xb = ops::reshape(tape.as_deref_mut(), x, vec![1, x.numel()])?;
    let batch_state = LstmState {
        h: ops::reshape(tape.as_deref_mut(), &state.h, vec![1, state.h.numel()])?,
        c: ops::reshape(tape.as_deref_mut(), &state.c, vec![1, state.c.numel()])?,
    };
    let next = lstm_step_batch(tape.as_deref_mut(), &xb, &batch_state, w)?;
    Ok(LstmState {
        h: ops::reshape(tape.as_deref_mut(), &next.h, vec![next.h.numel()])?,
        c: ops::reshape(tape.as_deref_mut(), &next.c, vec![next.c.numel()])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_zero_state_give_zero_hidden() {
        let w = LstmWeights::zeros(3, 4);
        let state = LstmState::zeros(4);
        let x = Tensor::vector(&[0.5, -1.0, 2.0]);
        let next = lstm_step(None, &x, &state, &w).unwrap();
        assert_eq!(next.h.values(), &[0.0; 4]);
        assert_eq!(next.c.values(), &[0.0; 4]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        // Forget bias +50, all other biases -50: c' ~ c, h' ~ 0.
        let d_h = 3;
        let mut w = LstmWeights::zeros(2, d_h);
        {
            let b = w.bias.values_mut();
            for j in 0..4 * d_h {
                let gate = j / d_h;
                b[j] = if gate == 1 { 50.0 } else { -50.0 };
            }
        }
        let state = LstmState {
            h: Tensor::vector(&[0.0; 3]),
            c: Tensor::vector(&[0.7, -0.3, 1.2]),
        };
        let x = Tensor::vector(&[1.0, -1.0]);
        let next = lstm_step(None, &x, &state, &w).unwrap();
        for (c_next, c_prev) in next.c.values().iter().zip(state.c.values()) {
            assert!((c_next - c_prev).abs() < 1e-9, "{c_next} vs {c_prev}");
        }
        for h in next.h.values() {
            assert!(h.abs() < 1e-9);
        }
    }

    #[test]
    fn state_dim_mismatch_is_shape_error() {
        let w = LstmWeights::zeros(2, 4);
        let state = LstmState::zeros(3);
        let x = Tensor::vector(&[1.0, 2.0]);
        assert!(lstm_step(None, &x, &state, &w).is_err());
    }
}
