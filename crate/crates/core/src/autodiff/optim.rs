use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter list. A new state is the
/// "fresh optimizer" every training phase starts from.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    config: AdamConfig,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        let second = first.clone();
        Self {
            step: 0,
            first,
            second,
            config,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// True when every accumulator entry is exactly zero.
    pub fn moments_are_zero(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn num_tensors(&self) -> usize {
        self.first.len()
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// Gradients are checked for finiteness before anything is touched, so
    /// a failed step leaves both the parameters and the state unchanged.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Config(format!(
                "adam: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !p.same_shape(g) || !p.same_shape(&self.first[i]) {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter tensor {i}"
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::update`].
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.update(params, grads, lr)
}

/// Linear warmup to `base_lr` over `warmup_fraction * total_steps`, then
/// linear decay to zero at `total_steps`.
pub fn lr_schedule(
    step: usize,
    total_steps: usize,
    base_lr: f64,
    warmup_fraction: f64,
) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config(
            "lr schedule: total_steps must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::Config(format!(
            "lr schedule: warmup fraction {warmup_fraction} outside [0, 1)"
        )));
    }
    if step > total_steps {
        return Err(Error::OutOfRange {
            what: "lr schedule step",
            index: step,
            limit: total_steps,
        });
    }
    let total = total_steps as f64;
    let warmup = warmup_fraction * total;
    let s = step as f64;
    let lr = if s < warmup {
        base_lr * s / warmup
    } else {
        base_lr * (total - s) / (total - warmup)
    };
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![0.5, -2.0, 3.25])];
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..7 {
            adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        }
        assert_eq!(params[0].data(), &[0.5, -2.0, 3.25]);
        assert_eq!(state.step(), 7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 at step one, so the update is lr / (1 + eps).
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, 0.1).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((params[0].item() - want).abs() < 1e-15);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * params[0].item());
            adam_step(&mut params, &[g], &mut state, 0.05).unwrap();
        }
        assert!(params[0].item().abs() < 0.05, "{}", params[0].item());
    }

    #[test]
    fn non_finite_gradient_aborts_without_side_effects() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        let err = adam_step(
            &mut params,
            &[Tensor::vector(vec![0.0, f64::NAN])],
            &mut state,
            0.1,
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(state.step(), 0);
        assert!(state.moments_are_zero());
        assert_eq!(params[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn fresh_state_has_zero_moments() {
        let params = vec![Tensor::zeros(&[2, 2]), Tensor::zeros(&[3])];
        let state = AdamState::new(&params, AdamConfig::default());
        assert_eq!(state.step(), 0);
        assert!(state.moments_are_zero());
        assert_eq!(state.num_tensors(), 2);
    }

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 100, 2e-5, 0.1).unwrap(), 0.0);
        assert_eq!(lr_schedule(10, 100, 2e-5, 0.1).unwrap(), 2e-5);
        assert!((lr_schedule(55, 100, 2e-5, 0.1).unwrap() - 1e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(100, 100, 2e-5, 0.1).unwrap(), 0.0);
        assert!((lr_schedule(5, 100, 2e-5, 0.1).unwrap() - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        assert_eq!(lr_schedule(0, 10, 1.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn schedule_rejects_zero_total() {
        assert!(lr_schedule(0, 0, 1.0, 0.1).is_err());
    }
}
