//! The training loop: seeded mini-batch Adam with per-epoch validation,
//! best-checkpoint tracking and early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::config::RunConfig;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::checkpoint::save_checkpoint;
use super::eval::{evaluate_rmse, EvalReport};
use super::model::{parameter_gradients, ModelParams};

/// One JSON-lines log record per epoch. Wall time is the only field that
/// varies between identically seeded runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation RMSE per horizon (1..=5 s); absent when the split has no
    /// validation samples.
    pub val_rmse: Option<[f64; 5]>,
    pub wall_time_s: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogRecord>,
    /// Validation report of the best epoch, when validation ran.
    pub best_val: Option<EvalReport>,
}

/// Train on `split.train`, validating on `split.val` after each epoch.
///
/// The best-validation parameters are checkpointed to `checkpoint_path`
/// (atomically, so killing the process cannot corrupt it) and returned.
/// With an empty validation set the loop runs all epochs, tracks the best
/// training loss instead, and never stops early. Everything is seeded; two
/// runs with the same inputs produce identical parameters and logs up to
/// wall time.
pub fn train_loop(
    split: &DatasetSplit,
    config: &RunConfig,
    checkpoint_path: Option<&Path>,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(Error::argument("train_loop", "empty training split"));
    }
    let started = Instant::now();
    let hyper = AdamHyper::from_config(config);
    let mut params = ModelParams::init_seeded(config)?;
    let mut adam = AdamState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x4452_4f50);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546);

    let mut best_metric = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_val: Option<EvalReport> = None;
    let mut epochs_since_best = 0usize;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&crate::data::Sample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (loss, grads, _) =
                parameter_gradients(&mut params, &batch, config, Mode::Train, &mut dropout_rng)?;
            adam_step(&mut params, &grads, &mut adam, &hyper)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;

        let (metric, val_rmse, val_report) = if split.val.is_empty() {
            (train_loss, None, None)
        } else {
            let report = evaluate_rmse(&split.val, &mut params, config)?;
            let mean_rmse =
                report.rmse_by_horizon.iter().sum::<f64>() / report.rmse_by_horizon.len() as f64;
            (mean_rmse, Some(report.rmse_by_horizon), Some(report))
        };

        if metric < best_metric {
            best_metric = metric;
            best_params = params.clone();
            best_val = val_report;
            epochs_since_best = 0;
            if let Some(path) = checkpoint_path {
                save_checkpoint(path, &best_params, &config.hash())?;
            }
        } else {
            epochs_since_best += 1;
        }

        let record = TrainLogRecord {
            epoch,
            train_loss,
            val_rmse,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        if let Some(sink) = log_sink.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("log record serializes");
            writeln!(sink, "{line}").map_err(|e| Error::io("train log".to_string(), e))?;
        }
        log.push(record);

        if !split.val.is_empty() && epochs_since_best > config.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        log,
        best_val,
    })
}
