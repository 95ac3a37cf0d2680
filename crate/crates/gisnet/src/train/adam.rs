//! Adam optimizer with bias correction.

use crate::autodiff::Gradients;
use crate::config::RunConfig;
use crate::error::{Error, Result};

use super::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn from_config(config: &RunConfig) -> Self {
        AdamHyper {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.adam_epsilon,
        }
    }
}

/// Per-parameter first and second moments, aligned with the canonical
/// parameter order of [`ModelParams::named`].
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.named().iter().map(|(_, t)| t.numel()).collect();
        AdamState {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every learnable parameter. Every
/// parameter must have a gradient in `grads` (it does whenever the loss came
/// from a tape on which the parameters were watched).
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    // Collect gradients first: `grads.of` needs the immutable tensors.
    let mut per_param: Vec<Vec<f64>> = Vec::with_capacity(state.first.len());
    for (name, tensor) in params.named() {
        let g = grads
            .of(tensor)
            .ok_or_else(|| Error::Invariant(format!("missing gradient for parameter {name}")))?;
        per_param.push(g.to_vec());
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);

    for (idx, (_, tensor)) in params.named_mut().into_iter().enumerate() {
        let g = &per_param[idx];
        let m = &mut state.first[idx];
        let v = &mut state.second[idx];
        let w = tensor.values_mut();
        for i in 0..g.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            w[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ops, Tape, Tensor};

    fn hyper(lr: f64) -> AdamHyper {
        AdamHyper {
            learning_rate: lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn toy_params() -> ModelParams {
        ModelParams::init_seeded(&RunConfig::toy()).unwrap()
    }

    /// Loss = sum of squares of every parameter element; analytic gradient
    /// 2w per element, produced through the tape.
    fn quadratic_grads(params: &mut ModelParams) -> Gradients {
        let mut tape = Tape::new();
        params.watch_all(&mut tape);
        let mut total: Option<Tensor> = None;
        for (_, t) in params.named() {
            let sq = ops::mul(Some(&mut tape), t, t).unwrap();
            let s = ops::sum(Some(&mut tape), &sq).unwrap();
            total = Some(match total {
                None => s,
                Some(acc) => ops::add(Some(&mut tape), &acc, &s).unwrap(),
            });
        }
        tape.backward(&total.unwrap()).unwrap()
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut params = toy_params();
        let reference = params.clone();
        let mut state = AdamState::new(&params);
        // Zero loss: grads of sum(0 * w) are all zero.
        let mut tape = Tape::new();
        params.watch_all(&mut tape);
        let mut total: Option<Tensor> = None;
        for (_, t) in params.named() {
            let z = ops::scale(Some(&mut tape), t, 0.0).unwrap();
            let s = ops::sum(Some(&mut tape), &z).unwrap();
            total = Some(match total {
                None => s,
                Some(acc) => ops::add(Some(&mut tape), &acc, &s).unwrap(),
            });
        }
        let grads = tape.backward(&total.unwrap()).unwrap();
        adam_step(&mut params, &grads, &mut state, &hyper(0.01)).unwrap();
        assert_eq!(state.step_count(), 1);
        for ((_, a), (_, b)) in params.named().iter().zip(reference.named().iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn first_step_is_sign_scaled_by_learning_rate() {
        // At t=1 bias correction gives m_hat = g, v_hat = g^2, so the update
        // is -lr * g / (|g| + eps): a signed step of size ~lr.
        let mut params = toy_params();
        let before: Vec<Vec<f64>> = params.named().iter().map(|(_, t)| t.values().to_vec()).collect();
        let grads = quadratic_grads(&mut params);
        let expected_signs: Vec<Vec<f64>> = params
            .named()
            .iter()
            .map(|(_, t)| t.values().iter().map(|w| (2.0 * w).signum()).collect())
            .collect();
        let mut state = AdamState::new(&params);
        let lr = 0.001;
        adam_step(&mut params, &grads, &mut state, &hyper(lr)).unwrap();
        for (idx, (_, t)) in params.named().iter().enumerate() {
            for (i, (after, prev)) in t.values().iter().zip(&before[idx]).enumerate() {
                let delta = after - prev;
                let g = 2.0 * prev;
                if g.abs() > 1e-9 {
                    let expect = -lr * g / (g.abs() + 1e-8);
                    assert!(
                        (delta - expect).abs() < 1e-12,
                        "param {idx}[{i}]: delta {delta} vs {expect}"
                    );
                    assert_eq!(delta.signum(), -expected_signs[idx][i]);
                }
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic_bowl() {
        // 100 steps on f(w) = ||w||^2 from w = [1, 1].
        let mut w = [1.0f64, 1.0];
        let h = hyper(0.02);
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        for t in 1..=100 {
            let g = [2.0 * w[0], 2.0 * w[1]];
            for i in 0..2 {
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                let m_hat = m[i] / (1.0 - h.beta1.powi(t));
                let v_hat = v[i] / (1.0 - h.beta2.powi(t));
                w[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
            }
        }
        let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(norm < 0.05, "||w|| = {norm}");
    }
}
