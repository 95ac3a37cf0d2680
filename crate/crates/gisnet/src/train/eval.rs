//! Point losses and horizon RMSE evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::config::RunConfig;
use crate::data::Sample;
use crate::decoder::PredictedTrajectory;
use crate::error::{Error, Result};

use super::model::{forward_batch, ModelParams};

/// Mean over frames of the squared Euclidean displacement error, meters^2.
pub fn mse_loss(pred: &PredictedTrajectory, truth: &[(f64, f64)]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::argument(
            "mse_loss",
            format!("prediction has {} frames, truth {}", pred.len(), truth.len()),
        ));
    }
    let total: f64 = pred
        .frames()
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.0 - t.0).powi(2) + (p.1 - t.1).powi(2))
        .sum();
    Ok(total / pred.len() as f64)
}

/// RMSE in meters at the whole-second horizons 1..=5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Indexed by horizon-1; horizons are exactly 1..=5 seconds.
    pub rmse_by_horizon: [f64; 5],
    pub sample_count: usize,
    pub config_hash: String,
}

pub const HORIZONS_S: [usize; 5] = [1, 2, 3, 4, 5];

/// Future frame index evaluated for a horizon: the frame closest to `T`
/// seconds (at 5 Hz and a 25-frame future this is `5T - 1`), clamped to the
/// configured future length.
pub fn horizon_frame(horizon_s: usize, config: &RunConfig) -> usize {
    let ideal = horizon_s * config.sample_rate_hz;
    ideal.saturating_sub(1).min(config.future_frames - 1)
}

/// Accumulates per-horizon squared errors sample by sample.
pub struct RmseAccumulator {
    sums: [f64; 5],
    count: usize,
}

impl RmseAccumulator {
    pub fn new() -> Self {
        RmseAccumulator {
            sums: [0.0; 5],
            count: 0,
        }
    }

    pub fn add(&mut self, pred: &PredictedTrajectory, truth: &[(f64, f64)], config: &RunConfig) {
        for (slot, &h) in HORIZONS_S.iter().enumerate() {
            let k = horizon_frame(h, config);
            let p = pred.frames()[k];
            let t = truth[k];
            self.sums[slot] += (p.0 - t.0).powi(2) + (p.1 - t.1).powi(2);
        }
        self.count += 1;
    }

    pub fn finish(self, config_hash: String) -> Result<EvalReport> {
        if self.count == 0 {
            return Err(Error::argument("evaluate_rmse", "empty evaluation set"));
        }
        let mut rmse = [0.0; 5];
        for (slot, sum) in self.sums.iter().enumerate() {
            rmse[slot] = (sum / self.count as f64).sqrt();
        }
        Ok(EvalReport {
            rmse_by_horizon: rmse,
            sample_count: self.count,
            config_hash,
        })
    }
}

impl Default for RmseAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Evaluate the model on a sample set in eval mode (frozen batch norm, no
/// dropout). Batching is an implementation detail: eval has no cross-sample
/// coupling, so the report is independent of batch size and order.
pub fn evaluate_rmse(
    samples: &[Sample],
    params: &mut ModelParams,
    config: &RunConfig,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::argument("evaluate_rmse", "empty evaluation set"));
    }
    let mut acc = RmseAccumulator::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in eval mode
    for chunk in samples.chunks(config.batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let steps = forward_batch(None, params, &refs, config, Mode::Eval, &mut rng)?;
        for (row, sample) in refs.iter().enumerate() {
            let frames: Vec<(f64, f64)> = steps
                .iter()
                .map(|t| (t.at2(row, 0), t.at2(row, 1)))
                .collect();
            let pred = PredictedTrajectory::new(frames)?;
            acc.add(&pred, &sample.future, config);
        }
    }
    acc.finish(config.hash())
}

/// Same evaluation loop for the Kalman baseline.
pub fn evaluate_rmse_baseline(samples: &[Sample], config: &RunConfig) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::argument("evaluate_rmse", "empty evaluation set"));
    }
    let mut acc = RmseAccumulator::new();
    for sample in samples {
        let pred = super::kalman::cv_kalman_baseline(sample, config)?;
        acc.add(&pred, &sample.future, config);
    }
    acc.finish(config.hash())
}

/// Mean Euclidean displacement over all future frames and samples, eval
/// mode; the overfit sanity metric.
pub fn mean_displacement_error(
    samples: &[Sample],
    params: &mut ModelParams,
    config: &RunConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::argument("mean_displacement_error", "empty sample set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut frames = 0usize;
    for chunk in samples.chunks(config.batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let steps = forward_batch(None, params, &refs, config, Mode::Eval, &mut rng)?;
        for (row, sample) in refs.iter().enumerate() {
            for (t, step) in steps.iter().enumerate() {
                let dx = step.at2(row, 0) - sample.future[t].0;
                let dy = step.at2(row, 1) - sample.future[t].1;
                total += (dx * dx + dy * dy).sqrt();
                frames += 1;
            }
        }
    }
    Ok(total / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleMeta;
    use crate::encoder::HistorySequence;

    fn sample_with_future(future: Vec<(f64, f64)>, config: &RunConfig) -> Sample {
        Sample {
            target_history: HistorySequence::new(vec![(0.0, 0.0); config.history_frames]).unwrap(),
            neighbors: vec![],
            future,
            meta: SampleMeta {
                source: "test".into(),
                vehicle_id: 1,
                anchor_frame: 0,
            },
        }
    }

    #[test]
    fn mse_loss_zero_for_perfect_prediction() {
        let frames = vec![(1.0, 2.0), (3.0, 4.0)];
        let pred = PredictedTrajectory::new(frames.clone()).unwrap();
        assert_eq!(mse_loss(&pred, &frames).unwrap(), 0.0);
    }

    #[test]
    fn mse_loss_constant_offset_is_pythagorean() {
        let truth = vec![(0.0, 0.0); 7];
        let pred = PredictedTrajectory::new(vec![(3.0, 4.0); 7]).unwrap();
        assert_eq!(mse_loss(&pred, &truth).unwrap(), 25.0);
    }

    #[test]
    fn mse_loss_matches_brute_force_loop() {
        let truth: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let pred_frames: Vec<(f64, f64)> =
            (0..10).map(|i| (i as f64 + 0.3, 2.0 * i as f64 - 0.7)).collect();
        let pred = PredictedTrajectory::new(pred_frames.clone()).unwrap();
        let mut brute = 0.0;
        for (p, t) in pred_frames.iter().zip(&truth) {
            brute += (p.0 - t.0) * (p.0 - t.0) + (p.1 - t.1) * (p.1 - t.1);
        }
        brute /= 10.0;
        assert!((mse_loss(&pred, &truth).unwrap() - brute).abs() < 1e-15);
    }

    #[test]
    fn mse_loss_length_mismatch_is_argument_error() {
        let pred = PredictedTrajectory::new(vec![(0.0, 0.0); 3]).unwrap();
        assert!(mse_loss(&pred, &[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn horizon_frames_follow_five_hz_mapping() {
        let config = RunConfig::default();
        let idx: Vec<usize> = HORIZONS_S.iter().map(|&h| horizon_frame(h, &config)).collect();
        assert_eq!(idx, vec![4, 9, 14, 19, 24]);
        // Short toy future clamps to the last frame.
        let toy = RunConfig::toy();
        assert_eq!(horizon_frame(5, &toy), toy.future_frames - 1);
    }

    #[test]
    fn rmse_constant_offset_is_five_meters_at_every_horizon() {
        let config = RunConfig::default();
        let truth = vec![(0.0, 0.0); config.future_frames];
        let sample = sample_with_future(truth.clone(), &config);
        let mut acc = RmseAccumulator::new();
        let pred = PredictedTrajectory::new(vec![(3.0, 4.0); config.future_frames]).unwrap();
        acc.add(&pred, &sample.future, &config);
        let report = acc.finish("h".into()).unwrap();
        for v in report.rmse_by_horizon {
            assert!((v - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_matches_brute_force_double_loop() {
        let config = RunConfig::default();
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut acc = RmseAccumulator::new();
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..12 {
            let truth: Vec<(f64, f64)> = (0..config.future_frames)
                .map(|_| (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let pred_frames: Vec<(f64, f64)> = truth
                .iter()
                .map(|t| (t.0 + rng.random_range(-1.0..1.0), t.1 + rng.random_range(-1.0..1.0)))
                .collect();
            let pred = PredictedTrajectory::new(pred_frames).unwrap();
            acc.add(&pred, &truth, &config);
            preds.push(pred);
            truths.push(truth);
        }
        let report = acc.finish("h".into()).unwrap();
        for (slot, &h) in HORIZONS_S.iter().enumerate() {
            let k = horizon_frame(h, &config);
            let mut sum = 0.0;
            for (pred, truth) in preds.iter().zip(&truths) {
                let p = pred.frames()[k];
                let t = truth[k];
                sum += (p.0 - t.0).powi(2) + (p.1 - t.1).powi(2);
            }
            let expect = (sum / preds.len() as f64).sqrt();
            assert!((report.rmse_by_horizon[slot] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_set_is_argument_error() {
        let config = RunConfig::toy();
        let mut params = ModelParams::zeros(&config).unwrap();
        assert!(evaluate_rmse(&[], &mut params, &config).is_err());
    }
}
