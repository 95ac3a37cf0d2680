//! End-to-end model assembly, Adam optimization, RMSE evaluation, the
//! constant-velocity Kalman baseline and checkpointing.

mod adam;
mod checkpoint;
mod eval;
mod kalman;
mod model;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint};
pub use eval::{
    evaluate_rmse, evaluate_rmse_baseline, horizon_frame, mean_displacement_error, mse_loss,
    EvalReport, RmseAccumulator, HORIZONS_S,
};
pub use kalman::{cv_kalman_baseline, cv_kalman_velocity_estimate};
pub use model::{
    batch_mse_loss, forward, forward_batch, loss_with_substituted_param, parameter_gradients,
    ModelParams,
};
pub use trainer::{train_loop, TrainLogRecord, TrainOutcome};
