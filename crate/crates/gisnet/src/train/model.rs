//! Full-model parameter set and the end-to-end forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, Gradients, Mode, Tape, Tensor};
use crate::config::RunConfig;
use crate::data::Sample;
use crate::decoder::{
    decode_future_batch, fuse_features_batch, DecoderWeights, FusionParams, PredictedTrajectory,
};
use crate::encoder::{encode_scene_matrix, EncoderWeights, HistorySequence};
use crate::error::{Error, Result};
use crate::graph::{block_diagonal_batch, build_star_adjacency, extract_target_feature, gcn_forward, normalize_adjacency};
use crate::social::{build_social_tensor_from_matrix, social_conv, GridCell, SocialConvWeights};

/// Every learnable weight of the model plus the batch-norm running buffers.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderWeights,
    pub social: SocialConvWeights,
    /// `[embed x gcn]`
    pub gcn_w0: Tensor,
    /// `[gcn x gcn]`
    pub gcn_w1: Tensor,
    pub fusion: FusionParams,
    pub decoder: DecoderWeights,
}

impl ModelParams {
    pub fn zeros(config: &RunConfig) -> Result<Self> {
        let fused = config.fused_dim()?;
        Ok(ModelParams {
            encoder: EncoderWeights::zeros(config.lift_dim, config.embed_dim),
            social: SocialConvWeights::zeros(config),
            gcn_w0: Tensor::zeros(vec![config.embed_dim, config.gcn_dim]),
            gcn_w1: Tensor::zeros(vec![config.gcn_dim, config.gcn_dim]),
            fusion: FusionParams::new(fused),
            decoder: DecoderWeights::zeros(fused, config.decoder_hidden),
        })
    }

    pub fn init(config: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        let fused = config.fused_dim()?;
        let gb = 1.0 / (config.embed_dim as f64).sqrt();
        Ok(ModelParams {
            encoder: EncoderWeights::init(config.lift_dim, config.embed_dim, rng),
            social: SocialConvWeights::init(config, rng),
            gcn_w0: Tensor::uniform(vec![config.embed_dim, config.gcn_dim], -gb, gb, rng),
            gcn_w1: Tensor::uniform(vec![config.gcn_dim, config.gcn_dim], -gb, gb, rng),
            fusion: FusionParams::new(fused),
            decoder: DecoderWeights::init(fused, config.decoder_hidden, rng),
        })
    }

    /// Deterministic initialization from the config seed.
    pub fn init_seeded(config: &RunConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x494e_4954);
        Self::init(config, &mut rng)
    }

    /// The learnable tensors in their canonical order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("encoder.lift_w", &self.encoder.lift_w),
            ("encoder.lift_b", &self.encoder.lift_b),
            ("encoder.lstm.w_x", &self.encoder.lstm.w_x),
            ("encoder.lstm.w_h", &self.encoder.lstm.w_h),
            ("encoder.lstm.bias", &self.encoder.lstm.bias),
            ("social.conv1_kernels", &self.social.conv1_kernels),
            ("social.conv1_bias", &self.social.conv1_bias),
            ("social.conv2_kernels", &self.social.conv2_kernels),
            ("social.conv2_bias", &self.social.conv2_bias),
            ("gcn.w0", &self.gcn_w0),
            ("gcn.w1", &self.gcn_w1),
            ("fusion.gamma", &self.fusion.gamma),
            ("fusion.beta", &self.fusion.beta),
            ("decoder.init_w", &self.decoder.init_w),
            ("decoder.init_b", &self.decoder.init_b),
            ("decoder.lstm.w_x", &self.decoder.lstm.w_x),
            ("decoder.lstm.w_h", &self.decoder.lstm.w_h),
            ("decoder.lstm.bias", &self.decoder.lstm.bias),
            ("decoder.head_w", &self.decoder.head_w),
            ("decoder.head_b", &self.decoder.head_b),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("encoder.lift_w", &mut self.encoder.lift_w),
            ("encoder.lift_b", &mut self.encoder.lift_b),
            ("encoder.lstm.w_x", &mut self.encoder.lstm.w_x),
            ("encoder.lstm.w_h", &mut self.encoder.lstm.w_h),
            ("encoder.lstm.bias", &mut self.encoder.lstm.bias),
            ("social.conv1_kernels", &mut self.social.conv1_kernels),
            ("social.conv1_bias", &mut self.social.conv1_bias),
            ("social.conv2_kernels", &mut self.social.conv2_kernels),
            ("social.conv2_bias", &mut self.social.conv2_bias),
            ("gcn.w0", &mut self.gcn_w0),
            ("gcn.w1", &mut self.gcn_w1),
            ("fusion.gamma", &mut self.fusion.gamma),
            ("fusion.beta", &mut self.fusion.beta),
            ("decoder.init_w", &mut self.decoder.init_w),
            ("decoder.init_b", &mut self.decoder.init_b),
            ("decoder.lstm.w_x", &mut self.decoder.lstm.w_x),
            ("decoder.lstm.w_h", &mut self.decoder.lstm.w_h),
            ("decoder.lstm.bias", &mut self.decoder.lstm.bias),
            ("decoder.head_w", &mut self.decoder.head_w),
            ("decoder.head_b", &mut self.decoder.head_b),
        ]
    }

    /// Non-learnable buffers that still belong in checkpoints.
    pub fn buffer_names() -> [&'static str; 2] {
        ["fusion.running_mean", "fusion.running_var"]
    }

    /// Track every learnable tensor on the tape.
    pub fn watch_all(&mut self, tape: &mut Tape) {
        for (_, t) in self.named_mut() {
            tape.watch(t);
        }
    }
}

/// Per-sample placement inputs for the occupancy grid: cell list and
/// longitudinal tie-breaks, target first.
fn placement_inputs(sample: &Sample, config: &RunConfig) -> Result<(Vec<Option<GridCell>>, Vec<f64>)> {
    let (center_row, center_col) = config.center_cell();
    let mut cells = vec![Some(GridCell::new(center_row, center_col, config)?)];
    let mut ties = vec![0.0];
    for n in &sample.neighbors {
        cells.push(Some(n.cell));
        ties.push(n.abs_longitudinal);
    }
    Ok((cells, ties))
}

/// End-to-end forward over a batch of samples.
///
/// All vehicles of all scenes encode in one shared-weight LSTM batch; the
/// social grid pools per scene; the star graphs propagate through one
/// block-diagonal GCN; the fused features decode in one batched LSTM.
/// Returns `future_frames` tensors of shape `[B x 2]`: positions relative to
/// each sample's last observed target position.
pub fn forward_batch(
    mut tape: Option<&mut Tape>,
    params: &mut ModelParams,
    samples: &[&Sample],
    config: &RunConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Vec<Tensor>> {
    if samples.is_empty() {
        return Err(Error::argument("forward", "empty sample batch"));
    }
    // Gather every vehicle history, target first within each scene.
    let mut histories: Vec<&HistorySequence> = Vec::new();
    let mut offsets = Vec::with_capacity(samples.len());
    for s in samples {
        offsets.push(histories.len());
        histories.push(&s.target_history);
        for n in &s.neighbors {
            histories.push(&n.history);
        }
    }
    let encoded = encode_scene_matrix(
        tape.as_deref_mut(),
        &histories,
        &params.encoder,
        config.history_frames,
    )?;

    // Target trajectory features: the first row of each scene block.
    let x_traj = ops::select_rows(tape.as_deref_mut(), &encoded, &offsets)?;

    // Social context per scene.
    let mut social_rows = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let n_vehicles = 1 + s.neighbors.len();
        let rows: Vec<usize> = (offsets[k]..offsets[k] + n_vehicles).collect();
        let scene_embeddings = ops::select_rows(tape.as_deref_mut(), &encoded, &rows)?;
        let (cells, ties) = placement_inputs(s, config)?;
        let (social_tensor, _) = build_social_tensor_from_matrix(
            tape.as_deref_mut(),
            &scene_embeddings,
            &cells,
            &ties,
            config,
        )?;
        social_rows.push(social_conv(
            tape.as_deref_mut(),
            &social_tensor,
            &params.social,
            config,
        )?);
    }
    let row_refs: Vec<&Tensor> = social_rows.iter().collect();
    let x_social = ops::stack_rows(tape.as_deref_mut(), &row_refs)?;

    // Graph information sharing over a block-diagonal star batch.
    let graphs: Vec<_> = samples
        .iter()
        .map(|s| Ok(normalize_adjacency(&build_star_adjacency(1 + s.neighbors.len(), 0)?)))
        .collect::<Result<Vec<_>>>()?;
    let batched = block_diagonal_batch(&graphs)?;
    let shared = gcn_forward(
        tape.as_deref_mut(),
        &encoded,
        &batched,
        &params.gcn_w0,
        &params.gcn_w1,
    )?;
    let targets = vec![0usize; samples.len()];
    let x_info = extract_target_feature(tape.as_deref_mut(), &shared, &batched, &targets)?;

    let fused = fuse_features_batch(
        tape.as_deref_mut(),
        &x_traj,
        &x_social,
        &x_info,
        &mut params.fusion,
        config.bn_momentum,
        config.bn_epsilon,
        config.dropout_rate,
        mode,
        rng,
    )?;
    decode_future_batch(tape, &fused, &params.decoder, config.future_frames)
}

/// Forward a single sample to a predicted trajectory.
pub fn forward(
    tape: Option<&mut Tape>,
    params: &mut ModelParams,
    sample: &Sample,
    config: &RunConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<PredictedTrajectory> {
    let steps = forward_batch(tape, params, &[sample], config, mode, rng)?;
    let frames = steps
        .iter()
        .map(|t| (t.values()[0], t.values()[1]))
        .collect();
    PredictedTrajectory::new(frames)
}

/// Mean squared displacement loss over a batch, on the tape: the mean over
/// samples and future frames of the squared Euclidean error in meters^2.
pub fn batch_mse_loss(
    mut tape: Option<&mut Tape>,
    positions: &[Tensor],
    samples: &[&Sample],
) -> Result<Tensor> {
    if positions.is_empty() {
        return Err(Error::argument("batch_mse_loss", "no prediction steps"));
    }
    let batch = samples.len();
    for s in samples {
        if s.future.len() != positions.len() {
            return Err(Error::argument(
                "batch_mse_loss",
                format!(
                    "future has {} frames but prediction has {} steps",
                    s.future.len(),
                    positions.len()
                ),
            ));
        }
    }
    let mut total: Option<Tensor> = None;
    for (t, pos) in positions.iter().enumerate() {
        let truth_values: Vec<f64> = samples
            .iter()
            .flat_map(|s| [s.future[t].0, s.future[t].1])
            .collect();
        let truth = Tensor::from_vec(vec![batch, 2], truth_values)?;
        let diff = ops::sub(tape.as_deref_mut(), pos, &truth)?;
        let sq = ops::mul(tape.as_deref_mut(), &diff, &diff)?;
        let frame_sum = ops::sum(tape.as_deref_mut(), &sq)?;
        total = Some(match total {
            None => frame_sum,
            Some(acc) => ops::add(tape.as_deref_mut(), &acc, &frame_sum)?,
        });
    }
    ops::scale(
        tape,
        &total.expect("at least one step"),
        1.0 / (batch * positions.len()) as f64,
    )
}

/// Gradient check bundle: loss of `forward_batch` + `batch_mse_loss` for a
/// single parameter tensor substituted by name. Used by the gradient suite.
pub fn loss_with_substituted_param(
    tape: Option<&mut Tape>,
    base: &ModelParams,
    name: &str,
    value: &Tensor,
    samples: &[&Sample],
    config: &RunConfig,
    mode: Mode,
) -> Result<Tensor> {
    let mut params = base.clone();
    {
        let mut found = false;
        for (n, t) in params.named_mut() {
            if n == name {
                *t = value.clone();
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::argument(
                "loss_with_substituted_param",
                format!("unknown parameter {name}"),
            ));
        }
    }
    let mut tape = tape;
    // Dropout must be inert for perturbation probes; the toy config used by
    // the gradient suite sets the rate to zero.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let positions = forward_batch(
        tape.as_deref_mut(),
        &mut params,
        samples,
        config,
        mode,
        &mut rng,
    )?;
    batch_mse_loss(tape, &positions, samples)
}

/// Gradients of the batch loss with respect to every learnable parameter, by
/// name.
pub fn parameter_gradients(
    params: &mut ModelParams,
    samples: &[&Sample],
    config: &RunConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<(f64, Gradients, Vec<&'static str>)> {
    let mut tape = Tape::new();
    params.watch_all(&mut tape);
    let positions = forward_batch(Some(&mut tape), params, samples, config, mode, rng)?;
    let loss = batch_mse_loss(Some(&mut tape), &positions, samples)?;
    let grads = tape.backward(&loss)?;
    let names = params.named().iter().map(|(n, _)| *n).collect();
    Ok((loss.item()?, grads, names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Scenario};

    #[test]
    fn zero_params_predict_zero_trajectory() {
        let mut config = RunConfig::toy();
        config.synth_noise_sigma_m = 0.0;
        let data = generate_synthetic(Scenario::ConstantVelocity, 1, 1, &config).unwrap();
        let mut params = ModelParams::zeros(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = forward(None, &mut params, &data.samples[0], &config, Mode::Eval, &mut rng).unwrap();
        assert_eq!(pred.len(), config.future_frames);
        for &(x, y) in pred.frames() {
            assert_eq!((x, y), (0.0, 0.0));
        }
    }

    #[test]
    fn forward_output_length_is_future_frames() {
        let config = RunConfig::toy();
        let data = generate_synthetic(Scenario::Crowded, 1, 3, &config).unwrap();
        let mut params = ModelParams::init_seeded(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in &data.samples {
            let pred = forward(None, &mut params, s, &config, Mode::Eval, &mut rng).unwrap();
            assert_eq!(pred.len(), config.future_frames);
        }
    }

    #[test]
    fn forward_composes_module_calls() {
        // The batched forward must equal chaining the per-module calls by
        // hand for a single sample in eval mode.
        let config = RunConfig::toy();
        let data = generate_synthetic(Scenario::LaneChange, 2, 9, &config).unwrap();
        let sample = &data.samples[0];
        let mut params = ModelParams::init_seeded(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = forward(None, &mut params, sample, &config, Mode::Eval, &mut rng).unwrap();

        // Hand-chained: encode, social, gcn, fuse, decode.
        let mut histories = vec![&sample.target_history];
        histories.extend(sample.neighbors.iter().map(|n| &n.history));
        let encoded =
            encode_scene_matrix(None, &histories, &params.encoder, config.history_frames).unwrap();
        let x_traj = ops::select_rows(None, &encoded, &[0]).unwrap();
        let (cells, ties) = placement_inputs(sample, &config).unwrap();
        let (social_tensor, _) =
            build_social_tensor_from_matrix(None, &encoded, &cells, &ties, &config).unwrap();
        let x_social_v = social_conv(None, &social_tensor, &params.social, &config).unwrap();
        let x_social = ops::reshape(None, &x_social_v, vec![1, x_social_v.numel()]).unwrap();
        let graph = normalize_adjacency(&build_star_adjacency(histories.len(), 0).unwrap());
        let batched = block_diagonal_batch(std::slice::from_ref(&graph)).unwrap();
        let shared = gcn_forward(None, &encoded, &batched, &params.gcn_w0, &params.gcn_w1).unwrap();
        let x_info = extract_target_feature(None, &shared, &batched, &[0]).unwrap();
        let fused = fuse_features_batch(
            None,
            &x_traj,
            &x_social,
            &x_info,
            &mut params.fusion,
            config.bn_momentum,
            config.bn_epsilon,
            config.dropout_rate,
            Mode::Eval,
            &mut rng,
        )
        .unwrap();
        let steps = decode_future_batch(None, &fused, &params.decoder, config.future_frames).unwrap();
        for (k, step) in steps.iter().enumerate() {
            let (x, y) = got.frames()[k];
            assert!((step.values()[0] - x).abs() < 1e-12);
            assert!((step.values()[1] - y).abs() < 1e-12);
        }
    }

    #[test]
    fn named_params_cover_named_mut_in_same_order() {
        let config = RunConfig::toy();
        let mut params = ModelParams::zeros(&config).unwrap();
        let names: Vec<_> = params.named().iter().map(|(n, _)| *n).collect();
        let names_mut: Vec<_> = params.named_mut().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, names_mut);
        assert_eq!(names.len(), 20);
    }
}
