use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every tunable of the pipeline in one flat block. Config files are JSON
/// with exactly these keys; a missing key is an error naming it, and unknown
/// keys are rejected. The hash of everything except `seed` is embedded in
/// dataset caches, checkpoints and eval reports so mismatched artifacts are
/// caught instead of silently mixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Occupancy grid rows (longitudinal); must be odd so the target sits on
    /// the center row.
    pub grid_rows: usize,
    /// Occupancy grid columns (one per lane); must be odd.
    pub grid_cols: usize,
    /// Longitudinal extent of one grid cell, meters (15 ft).
    pub cell_length_m: f64,
    /// Lane width, meters.
    pub lane_width_m: f64,
    /// Trajectory embedding size `l` (encoder LSTM hidden dim).
    pub embed_dim: usize,
    /// Dense lift applied to the 2-d coordinate delta before the encoder LSTM.
    pub lift_dim: usize,
    pub social_conv1_channels: usize,
    pub social_conv1_kernel: (usize, usize),
    pub social_conv2_channels: usize,
    pub social_conv2_kernel: (usize, usize),
    pub social_pool: (usize, usize),
    /// Feature width of both graph-convolution layers.
    pub gcn_dim: usize,
    pub decoder_hidden: usize,
    /// History length in frames at `sample_rate_hz` (3 s -> 15).
    pub history_frames: usize,
    /// Future length in frames at `sample_rate_hz` (5 s -> 25).
    pub future_frames: usize,
    pub sample_rate_hz: usize,
    /// Recording rate of the source data (NGSIM: 10 Hz).
    pub source_rate_hz: usize,
    /// Anchor stride between overlapping samples, in resampled frames.
    pub anchor_stride_frames: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    /// Acceleration noise standard deviation of the discrete white-noise
    /// acceleration model, m/s^2.
    pub kalman_process_noise: f64,
    /// Measurement noise covariance entry of the filter, m^2.
    pub kalman_measurement_noise: f64,
    /// Positional noise applied to synthetic observed histories, meters.
    pub synth_noise_sigma_m: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid_rows: 13,
            grid_cols: 3,
            cell_length_m: 4.57,
            lane_width_m: 3.7,
            embed_dim: 64,
            lift_dim: 32,
            social_conv1_channels: 64,
            social_conv1_kernel: (3, 3),
            social_conv2_channels: 16,
            social_conv2_kernel: (3, 1),
            social_pool: (2, 1),
            gcn_dim: 64,
            decoder_hidden: 128,
            history_frames: 15,
            future_frames: 25,
            sample_rate_hz: 5,
            source_rate_hz: 10,
            anchor_stride_frames: 5,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            dropout_rate: 0.2,
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
            split_train: 0.7,
            split_val: 0.1,
            split_test: 0.2,
            kalman_process_noise: 0.5,
            kalman_measurement_noise: 0.1,
            synth_noise_sigma_m: 0.1,
            seed: 7,
        }
    }
}

impl RunConfig {
    /// Miniature configuration for gradient checks and fast tests: all
    /// hidden sizes 8, a 5x3 grid, 1 s history and 1 s future, no dropout.
    pub fn toy() -> Self {
        RunConfig {
            grid_rows: 5,
            grid_cols: 3,
            embed_dim: 8,
            lift_dim: 8,
            social_conv1_channels: 8,
            social_conv1_kernel: (3, 3),
            social_conv2_channels: 8,
            social_conv2_kernel: (3, 1),
            social_pool: (1, 1),
            gcn_dim: 8,
            decoder_hidden: 8,
            history_frames: 5,
            future_frames: 5,
            batch_size: 4,
            dropout_rate: 0.0,
            ..RunConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::format_at(format!("bad config: {e}"), path.display().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Err(Error::argument("config", detail));
        if self.grid_rows % 2 == 0 || self.grid_cols % 2 == 0 {
            return fail(format!(
                "grid {}x{} must have odd dimensions",
                self.grid_rows, self.grid_cols
            ));
        }
        for (name, v) in [
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
            ("embed_dim", self.embed_dim),
            ("lift_dim", self.lift_dim),
            ("social_conv1_channels", self.social_conv1_channels),
            ("social_conv2_channels", self.social_conv2_channels),
            ("gcn_dim", self.gcn_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("sample_rate_hz", self.sample_rate_hz),
            ("source_rate_hz", self.source_rate_hz),
            ("anchor_stride_frames", self.anchor_stride_frames),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.history_frames < 2 || self.future_frames < 1 {
            return fail("need at least 2 history frames and 1 future frame".into());
        }
        if self.source_rate_hz % self.sample_rate_hz != 0 {
            return fail(format!(
                "source rate {} Hz not divisible by sample rate {} Hz",
                self.source_rate_hz, self.sample_rate_hz
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        let ratio_sum = self.split_train + self.split_val + self.split_test;
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return fail(format!("split ratios sum to {ratio_sum}, expected 1"));
        }
        for (name, v) in [
            ("cell_length_m", self.cell_length_m),
            ("lane_width_m", self.lane_width_m),
            ("learning_rate", self.learning_rate),
            ("bn_epsilon", self.bn_epsilon),
            ("adam_epsilon", self.adam_epsilon),
            ("kalman_process_noise", self.kalman_process_noise),
            ("kalman_measurement_noise", self.kalman_measurement_noise),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.synth_noise_sigma_m < 0.0 {
            return fail(format!(
                "synth_noise_sigma_m must be non-negative, got {}",
                self.synth_noise_sigma_m
            ));
        }
        // The social conv stack must leave at least one cell after pooling.
        self.social_feature_dim().map(|_| ())
    }

    /// Output height/width chain of the social conv stack.
    fn social_stack_dims(&self) -> Result<(usize, usize)> {
        let fail = |stage: &str, h: isize, w: isize| {
            Err(Error::argument(
                "config",
                format!("social conv stack collapses at {stage}: {h}x{w}"),
            ))
        };
        let (mut h, mut w) = (self.grid_rows as isize, self.grid_cols as isize);
        h -= self.social_conv1_kernel.0 as isize - 1;
        w -= self.social_conv1_kernel.1 as isize - 1;
        if h < 1 || w < 1 {
            return fail("conv1", h, w);
        }
        h -= self.social_conv2_kernel.0 as isize - 1;
        w -= self.social_conv2_kernel.1 as isize - 1;
        if h < 1 || w < 1 {
            return fail("conv2", h, w);
        }
        if self.social_pool.0 == 0 || self.social_pool.1 == 0 {
            return Err(Error::argument("config", "social_pool dims must be positive"));
        }
        h /= self.social_pool.0 as isize;
        w /= self.social_pool.1 as isize;
        if h < 1 || w < 1 {
            return fail("pool", h, w);
        }
        Ok((h as usize, w as usize))
    }

    /// Width of the pooled social feature vector.
    pub fn social_feature_dim(&self) -> Result<usize> {
        let (h, w) = self.social_stack_dims()?;
        Ok(self.social_conv2_channels * h * w)
    }

    /// Width of the fused feature: trajectory + social + graph features.
    pub fn fused_dim(&self) -> Result<usize> {
        Ok(self.embed_dim + self.social_feature_dim()? + self.gcn_dim)
    }

    /// Grid cell occupied by the target itself.
    pub fn center_cell(&self) -> (usize, usize) {
        (self.grid_rows / 2, self.grid_cols / 2)
    }

    /// Source frames per resampled frame (10 Hz -> 5 Hz gives 2).
    pub fn decimation(&self) -> usize {
        self.source_rate_hz / self.sample_rate_hz
    }

    /// Fields that do not affect artifact compatibility: the seed, optimizer
    /// and loop knobs, train-time regularization and the baseline's filter
    /// constants. Everything else pins either the data pipeline or the
    /// architecture, so caches, checkpoints and reports refuse to mix when
    /// any of it drifts.
    const HASH_EXEMPT: [&'static str; 10] = [
        "seed",
        "learning_rate",
        "beta1",
        "beta2",
        "adam_epsilon",
        "batch_size",
        "max_epochs",
        "patience",
        "dropout_rate",
        "bn_momentum",
    ];

    /// Hex SHA-256 over the canonical JSON of the compatibility-relevant
    /// fields (see [`RunConfig::HASH_EXEMPT`] for what is left out).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        for key in Self::HASH_EXEMPT {
            map.remove(key);
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
