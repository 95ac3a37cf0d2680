//! Constant-velocity Kalman filter baseline.
//!
//! State `[x, y, vx, vy]` with a discrete white-noise acceleration model.
//! The filter initializes position and velocity from the first two observed
//! frames (which makes it exact on noiseless constant-velocity data), runs
//! measurement updates over the rest of the history, then coasts through the
//! future horizon with no input.

use crate::config::RunConfig;
use crate::data::Sample;
use crate::decoder::PredictedTrajectory;
use crate::error::{Error, Result};

type Mat4 = [[f64; 4]; 4];

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat4_transpose(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

struct CvFilter {
    x: [f64; 4],
    p: Mat4,
    f: Mat4,
    q: Mat4,
    r: f64,
}

impl CvFilter {
    fn new(dt: f64, accel_std: f64, r: f64) -> Self {
        let f = [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        // Q = sigma_a^2 * G G^T per axis with G = [dt^2/2, dt]^T.
        let qa = accel_std * accel_std;
        let (g1, g2) = (dt * dt / 2.0, dt);
        let mut q = [[0.0; 4]; 4];
        for axis in 0..2 {
            q[axis][axis] = qa * g1 * g1;
            q[axis][axis + 2] = qa * g1 * g2;
            q[axis + 2][axis] = qa * g1 * g2;
            q[axis + 2][axis + 2] = qa * g2 * g2;
        }
        CvFilter {
            x: [0.0; 4],
            p: [[0.0; 4]; 4],
            f,
            q,
            r,
        }
    }

    /// Two-point initialization: position from the second frame, velocity
    /// from the first difference, covariance from the differencing algebra.
    fn init(&mut self, z0: (f64, f64), z1: (f64, f64), dt: f64) {
        self.x = [z1.0, z1.1, (z1.0 - z0.0) / dt, (z1.1 - z0.1) / dt];
        let r = self.r;
        let mut p = [[0.0; 4]; 4];
        for axis in 0..2 {
            p[axis][axis] = r;
            p[axis][axis + 2] = r / dt;
            p[axis + 2][axis] = r / dt;
            p[axis + 2][axis + 2] = 2.0 * r / (dt * dt);
        }
        self.p = p;
    }

    fn predict(&mut self) {
        let x = self.x;
        self.x = [
            x[0] + self.f[0][2] * x[2],
            x[1] + self.f[1][3] * x[3],
            x[2],
            x[3],
        ];
        let fp = mat4_mul(&self.f, &self.p);
        let mut p = mat4_mul(&fp, &mat4_transpose(&self.f));
        for i in 0..4 {
            for j in 0..4 {
                p[i][j] += self.q[i][j];
            }
        }
        self.p = p;
    }

    fn update(&mut self, z: (f64, f64)) {
        // H = [I2 | 0], so S = P[0..2][0..2] + R and K = P[:, 0..2] S^-1.
        let s = [
            [self.p[0][0] + self.r, self.p[0][1]],
            [self.p[1][0], self.p[1][1] + self.r],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let s_inv = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                k[i][j] = self.p[i][0] * s_inv[0][j] + self.p[i][1] * s_inv[1][j];
            }
        }
        let innov = [z.0 - self.x[0], z.1 - self.x[1]];
        for i in 0..4 {
            self.x[i] += k[i][0] * innov[0] + k[i][1] * innov[1];
        }
        // P = (I - K H) P; K H affects only the first two columns of the
        // projector.
        let mut p = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let correction = k[i][0] * self.p[0][j] + k[i][1] * self.p[1][j];
                p[i][j] = self.p[i][j] - correction;
            }
        }
        self.p = p;
    }
}

/// Filter the sample's history and coast forward `future_frames` steps,
/// reporting positions relative to the last observed target position.
pub fn cv_kalman_baseline(sample: &Sample, config: &RunConfig) -> Result<PredictedTrajectory> {
    let frames = sample.target_history.frames();
    if frames.len() < 2 {
        return Err(Error::argument(
            "cv_kalman_baseline",
            "history needs at least two frames",
        ));
    }
    let dt = 1.0 / config.sample_rate_hz as f64;
    let mut filter = CvFilter::new(dt, config.kalman_process_noise, config.kalman_measurement_noise);
    filter.init(frames[0], frames[1], dt);
    for &z in &frames[2..] {
        filter.predict();
        filter.update(z);
    }
    let anchor = sample.anchor_position();
    let mut out = Vec::with_capacity(config.future_frames);
    let mut pos = (filter.x[0], filter.x[1]);
    let vel = (filter.x[2], filter.x[3]);
    for _ in 0..config.future_frames {
        pos = (pos.0 + vel.0 * dt, pos.1 + vel.1 * dt);
        out.push((pos.0 - anchor.0, pos.1 - anchor.1));
    }
    PredictedTrajectory::new(out)
}

/// Filter state exposed for the consistency check: after running over the
/// history, the velocity estimate and its filter covariance.
pub fn cv_kalman_velocity_estimate(sample: &Sample, config: &RunConfig) -> Result<((f64, f64), (f64, f64))> {
    let frames = sample.target_history.frames();
    if frames.len() < 2 {
        return Err(Error::argument(
            "cv_kalman_baseline",
            "history needs at least two frames",
        ));
    }
    let dt = 1.0 / config.sample_rate_hz as f64;
    let mut filter = CvFilter::new(dt, config.kalman_process_noise, config.kalman_measurement_noise);
    filter.init(frames[0], frames[1], dt);
    for &z in &frames[2..] {
        filter.predict();
        filter.update(z);
    }
    Ok(((filter.x[2], filter.x[3]), (filter.p[2][2], filter.p[3][3])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Scenario};

    #[test]
    fn exact_on_noiseless_constant_velocity() {
        let mut config = RunConfig::default();
        config.synth_noise_sigma_m = 0.0;
        let data = generate_synthetic(Scenario::ConstantVelocity, 5, 2, &config).unwrap();
        for s in &data.samples {
            let pred = cv_kalman_baseline(s, &config).unwrap();
            for (p, t) in pred.frames().iter().zip(&s.future) {
                let err = ((p.0 - t.0).powi(2) + (p.1 - t.1).powi(2)).sqrt();
                assert!(err < 1e-6, "error {err}");
            }
        }
    }

    #[test]
    fn stationary_history_predicts_stationary() {
        let config = RunConfig::default();
        let frames = vec![(3.7, 120.0); config.history_frames];
        let sample = Sample {
            target_history: crate::encoder::HistorySequence::new(frames).unwrap(),
            neighbors: vec![],
            future: vec![(0.0, 0.0); config.future_frames],
            meta: crate::data::SampleMeta {
                source: "test".into(),
                vehicle_id: 1,
                anchor_frame: 0,
            },
        };
        let pred = cv_kalman_baseline(&sample, &config).unwrap();
        for &(x, y) in pred.frames() {
            assert!(x.abs() < 1e-12 && y.abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_estimate_is_consistent_on_noisy_cv_data() {
        // The filter's claimed velocity variance must cover its actual error
        // on data from the generator's known noise model.
        let config = RunConfig::default(); // sigma = 0.1
        let data = generate_synthetic(Scenario::ConstantVelocity, 30, 6, &config).unwrap();
        let mut within = 0;
        let mut total = 0;
        for s in &data.samples {
            // True velocity from the exact future (noiseless by construction).
            let f = &s.future;
            let dt = 1.0 / config.sample_rate_hz as f64;
            let true_v = (
                (f[1].0 - f[0].0) / dt,
                (f[1].1 - f[0].1) / dt,
            );
            let ((vx, vy), (pxx, pyy)) = cv_kalman_velocity_estimate(s, &config).unwrap();
            if (vx - true_v.0).abs() <= 3.0 * pxx.sqrt() {
                within += 1;
            }
            if (vy - true_v.1).abs() <= 3.0 * pyy.sqrt() {
                within += 1;
            }
            total += 2;
        }
        // 3-sigma coverage: essentially all estimates should fall inside.
        assert!(
            within as f64 >= 0.99 * total as f64,
            "{within}/{total} within 3 sigma"
        );
    }
}
