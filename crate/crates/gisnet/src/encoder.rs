//! Shared-weight LSTM embedding of vehicle histories.
//!
//! Every vehicle's history runs through the same lift + LSTM weights, so all
//! embeddings live in one representation space. The LSTM consumes per-step
//! coordinate deltas, not absolute positions: NGSIM coordinates span hundreds
//! of meters of study area, and feeding deltas makes the embedding exactly
//! translation invariant (relative positions between vehicles are carried
//! separately by the occupancy grid).

use rand::Rng;

use crate::autodiff::{lstm_step_batch, ops, LstmState, LstmWeights, Tape, Tensor};
use crate::error::{Error, Result};

/// A vehicle's observed history: uniformly sampled planar coordinates in
/// meters, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistorySequence {
    frames: Vec<(f64, f64)>,
}

impl HistorySequence {
    pub fn new(frames: Vec<(f64, f64)>) -> Result<Self> {
        if frames.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::argument("history", "non-finite coordinate"));
        }
        Ok(HistorySequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[(f64, f64)] {
        &self.frames
    }

    pub fn last_position(&self) -> (f64, f64) {
        *self.frames.last().expect("non-empty history")
    }
}

/// 1-d trajectory feature produced by the encoder.
#[derive(Debug, Clone)]
pub struct TrajectoryEmbedding {
    vector: Tensor,
}

impl TrajectoryEmbedding {
    pub fn vector(&self) -> &Tensor {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.numel()
    }
}

/// Encoder weights: dense 2 -> lift with ReLU, then an LSTM over the lifted
/// delta sequence.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    /// `[2 x lift]`
    pub lift_w: Tensor,
    /// `[lift]`
    pub lift_b: Tensor,
    pub lstm: LstmWeights,
}

impl EncoderWeights {
    pub fn zeros(lift_dim: usize, embed_dim: usize) -> Self {
        EncoderWeights {
            lift_w: Tensor::zeros(vec![2, lift_dim]),
            lift_b: Tensor::zeros(vec![lift_dim]),
            lstm: LstmWeights::zeros(lift_dim, embed_dim),
        }
    }

    pub fn init(lift_dim: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (2.0f64).sqrt();
        EncoderWeights {
            lift_w: Tensor::uniform(vec![2, lift_dim], -bound, bound, rng),
            lift_b: Tensor::uniform(vec![lift_dim], -bound, bound, rng),
            lstm: LstmWeights::init(lift_dim, embed_dim, rng),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }
}

/// Encode a batch of equal-length histories into an `[n x embed]` matrix of
/// trajectory features, one row per vehicle, all through the same weights.
///
/// The step input is the coordinate delta from the previous frame (zero for
/// the first frame), lifted by a dense layer with ReLU; the final LSTM
/// hidden state is the embedding.
pub fn encode_scene_matrix(
    mut tape: Option<&mut Tape>,
    histories: &[&HistorySequence],
    weights: &EncoderWeights,
    expected_frames: usize,
) -> Result<Tensor> {
    if histories.is_empty() {
        return Err(Error::argument("encode_scene", "empty history list"));
    }
    for h in histories {
        if h.len() != expected_frames {
            return Err(Error::argument(
                "encode_history",
                format!("history has {} frames, expected {expected_frames}", h.len()),
            ));
        }
    }
    let n = histories.len();
    let mut state = LstmState::zeros_batch(n, weights.embed_dim());
    for t in 0..expected_frames {
        let mut deltas = Vec::with_capacity(n * 2);
        for h in histories {
            let (dx, dy) = if t == 0 {
                (0.0, 0.0)
            } else {
                let (x0, y0) = h.frames()[t - 1];
                let (x1, y1) = h.frames()[t];
                (x1 - x0, y1 - y0)
            };
            deltas.push(dx);
            deltas.push(dy);
        }
        let x = Tensor::from_vec(vec![n, 2], deltas)?;
        let lifted = ops::matmul(tape.as_deref_mut(), &x, &weights.lift_w)?;
        let lifted = ops::add_row_bias(tape.as_deref_mut(), &lifted, &weights.lift_b)?;
        let lifted = ops::relu(tape.as_deref_mut(), &lifted)?;
        state = lstm_step_batch(tape.as_deref_mut(), &lifted, &state, &weights.lstm)?;
    }
    Ok(state.h)
}

/// Encode one history into its trajectory feature.
pub fn encode_history(
    mut tape: Option<&mut Tape>,
    history: &HistorySequence,
    weights: &EncoderWeights,
    expected_frames: usize,
) -> Result<TrajectoryEmbedding> {
    let matrix = encode_scene_matrix(tape.as_deref_mut(), &[history], weights, expected_frames)?;
    let vector = ops::reshape(tape, &matrix, vec![weights.embed_dim()])?;
    Ok(TrajectoryEmbedding { vector })
}

/// Encode every history of a scene with the shared weights; output order
/// matches input order and, by convention, the target comes first.
pub fn encode_scene(
    mut tape: Option<&mut Tape>,
    histories: &[&HistorySequence],
    weights: &EncoderWeights,
    expected_frames: usize,
) -> Result<Vec<TrajectoryEmbedding>> {
    let matrix = encode_scene_matrix(tape.as_deref_mut(), histories, weights, expected_frames)?;
    let dim = weights.embed_dim();
    let mut out = Vec::with_capacity(histories.len());
    for i in 0..histories.len() {
        let row = ops::select_rows(tape.as_deref_mut(), &matrix, &[i])?;
        let vector = ops::reshape(tape.as_deref_mut(), &row, vec![dim])?;
        out.push(TrajectoryEmbedding { vector });
    }
    Ok(out)
}
