//! Feature fusion and the LSTM trajectory decoder.
//!
//! The three 1-d features are concatenated in the fixed order (trajectory,
//! social, shared-info), batch-normalized and passed through dropout; the
//! decoder LSTM receives the fused feature as its input at every step
//! (constant-input decoding) and a dense head turns each hidden state into a
//! per-step displacement. Displacements accumulate into positions relative
//! to the target's last observed position, which keeps the whole model
//! translation invariant end to end.

use rand::Rng;

use crate::autodiff::{lstm_step_batch, ops, LstmState, LstmWeights, Mode, Tape, Tensor};
use crate::autodiff::ops::RunningStats;
use crate::error::{Error, Result};

/// Concatenated `(x_traj, x_social, x_info)` feature for one sample.
#[derive(Debug, Clone)]
pub struct FusedFeature {
    vector: Tensor,
}

impl FusedFeature {
    pub fn vector(&self) -> &Tensor {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.numel()
    }
}

/// Predicted future positions, meters, relative to the target's last
/// observed position.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTrajectory {
    frames: Vec<(f64, f64)>,
}

impl PredictedTrajectory {
    pub fn new(frames: Vec<(f64, f64)>) -> Result<Self> {
        if frames.is_empty() || frames.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::argument(
                "predicted_trajectory",
                "frames must be non-empty and finite",
            ));
        }
        Ok(PredictedTrajectory { frames })
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

    /// Shift into absolute coordinates given the last observed position.
    pub fn to_absolute(&self, anchor: (f64, f64)) -> Vec<(f64, f64)> {
        self.frames
            .iter()
            .map(|(x, y)| (x + anchor.0, y + anchor.1))
            .collect()
    }
}

/// Batch-norm scale/shift and running statistics for the fused feature.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

impl FusionParams {
    pub fn new(dim: usize) -> Self {
        FusionParams {
            gamma: Tensor::from_vec(vec![dim], vec![1.0; dim]).expect("sized"),
            beta: Tensor::zeros(vec![dim]),
            running: RunningStats::new(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }
}

/// Decoder weights: a dense layer seeding the initial hidden state from the
/// fused feature, the decoder LSTM, and the 2-d displacement head.
#[derive(Debug, Clone)]
pub struct DecoderWeights {
    /// `[d_fuse x d_h]`
    pub init_w: Tensor,
    /// `[d_h]`
    pub init_b: Tensor,
    pub lstm: LstmWeights,
    /// `[d_h x 2]`
    pub head_w: Tensor,
    /// `[2]`
    pub head_b: Tensor,
}

impl DecoderWeights {
    pub fn zeros(d_fuse: usize, d_h: usize) -> Self {
        DecoderWeights {
            init_w: Tensor::zeros(vec![d_fuse, d_h]),
            init_b: Tensor::zeros(vec![d_h]),
            lstm: LstmWeights::zeros(d_fuse, d_h),
            head_w: Tensor::zeros(vec![d_h, 2]),
            head_b: Tensor::zeros(vec![2]),
        }
    }

    pub fn init(d_fuse: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let bi = 1.0 / (d_fuse as f64).sqrt();
        let bh = 1.0 / (d_h as f64).sqrt();
        DecoderWeights {
            init_w: Tensor::uniform(vec![d_fuse, d_h], -bi, bi, rng),
            init_b: Tensor::uniform(vec![d_h], -bi, bi, rng),
            lstm: LstmWeights::init(d_fuse, d_h, rng),
            head_w: Tensor::uniform(vec![d_h, 2], -bh, bh, rng),
            head_b: Tensor::uniform(vec![2], -bh, bh, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn fused_dim(&self) -> usize {
        self.init_w.shape()[0]
    }
}

/// Fuse a batch of feature rows: concatenate columns in (traj, social, info)
/// order, batch-normalize, apply dropout. All three inputs are `[B x _]`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_features_batch(
    mut tape: Option<&mut Tape>,
    x_traj: &Tensor,
    x_social: &Tensor,
    x_info: &Tensor,
    params: &mut FusionParams,
    bn_momentum: f64,
    bn_epsilon: f64,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let joined = ops::concat_cols(tape.as_deref_mut(), &[x_traj, x_social, x_info])?;
    if joined.shape()[1] != params.dim() {
        return Err(Error::shape(
            "fuse_features",
            format!(
                "fused width {} does not match batch-norm width {}",
                joined.shape()[1],
                params.dim()
            ),
        ));
    }
    // Batch statistics are undefined for a single row; such a batch
    // normalizes with the frozen running statistics even in train mode.
    let bn_mode = if mode == Mode::Train && joined.shape()[0] < 2 {
        Mode::Eval
    } else {
        mode
    };
    let normed = ops::batchnorm(
        tape.as_deref_mut(),
        &joined,
        &params.gamma,
        &params.beta,
        &mut params.running,
        bn_momentum,
        bn_epsilon,
        bn_mode,
    )?;
    ops::dropout(tape, &normed, dropout_rate, mode, rng)
}

/// Fuse a single sample's rank-1 features.
#[allow(clippy::too_many_arguments)]
pub fn fuse_features(
    mut tape: Option<&mut Tape>,
    x_traj: &Tensor,
    x_social: &Tensor,
    x_info: &Tensor,
    params: &mut FusionParams,
    bn_momentum: f64,
    bn_epsilon: f64,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<FusedFeature> {
    if x_traj.rank() != 1 || x_social.rank() != 1 || x_info.rank() != 1 {
        return Err(Error::shape(
            "fuse_features",
            format!(
                "expected rank-1 features, got {:?}, {:?}, {:?}",
                x_traj.shape(),
                x_social.shape(),
                x_info.shape()
            ),
        ));
    }
    let rows = [
        ops::reshape(tape.as_deref_mut(), x_traj, vec![1, x_traj.numel()])?,
        ops::reshape(tape.as_deref_mut(), x_social, vec![1, x_social.numel()])?,
        ops::reshape(tape.as_deref_mut(), x_info, vec![1, x_info.numel()])?,
    ];
    let fused = fuse_features_batch(
        tape.as_deref_mut(),
        &rows[0],
        &rows[1],
        &rows[2],
        params,
        bn_momentum,
        bn_epsilon,
        dropout_rate,
        mode,
        rng,
    )?;
    let vector = ops::reshape(tape, &fused, vec![fused.numel()])?;
    Ok(FusedFeature { vector })
}

/// Decode a batch of fused feature rows into per-step position tensors.
///
/// The initial hidden state is a linear map of the fused feature, the cell
/// state starts at zero, and every step feeds the fused feature back in.
/// Returns `future_frames` tensors of shape `[B x 2]` holding positions
/// relative to the last observed position.
pub fn decode_future_batch(
    mut tape: Option<&mut Tape>,
    fused: &Tensor,
    weights: &DecoderWeights,
    future_frames: usize,
) -> Result<Vec<Tensor>> {
    if fused.rank() != 2 || fused.shape()[1] != weights.fused_dim() {
        return Err(Error::shape(
            "decode_future",
            format!(
                "fused features {:?} do not match decoder input width {}",
                fused.shape(),
                weights.fused_dim()
            ),
        ));
    }
    let batch = fused.shape()[0];
    let h0 = ops::matmul(tape.as_deref_mut(), fused, &weights.init_w)?;
    let h0 = ops::add_row_bias(tape.as_deref_mut(), &h0, &weights.init_b)?;
    let mut state = LstmState {
        h: h0,
        c: Tensor::zeros(vec![batch, weights.hidden_dim()]),
    };
    let mut positions = Vec::with_capacity(future_frames);
    let mut last: Option<Tensor> = None;
    for _ in 0..future_frames {
        state = lstm_step_batch(tape.as_deref_mut(), fused, &state, &weights.lstm)?;
        let disp = ops::matmul(tape.as_deref_mut(), &state.h, &weights.head_w)?;
        let disp = ops::add_row_bias(tape.as_deref_mut(), &disp, &weights.head_b)?;
        let pos = match &last {
            None => disp,
            Some(prev) => ops::add(tape.as_deref_mut(), prev, &disp)?,
        };
        positions.push(pos.clone());
        last = Some(pos);
    }
    Ok(positions)
}

/// Decode one fused feature into a predicted trajectory.
pub fn decode_future(
    mut tape: Option<&mut Tape>,
    fused: &FusedFeature,
    weights: &DecoderWeights,
    future_frames: usize,
) -> Result<PredictedTrajectory> {
    let row = ops::reshape(tape.as_deref_mut(), fused.vector(), vec![1, fused.dim()])?;
    let steps = decode_future_batch(tape, &row, weights, future_frames)?;
    let frames = steps
        .iter()
        .map(|t| (t.values()[0], t.values()[1]))
        .collect();
    PredictedTrajectory::new(frames)
}
