use super::encoder::{EncoderGrads, EncoderParams};
use super::matrix::Real;
use crate::error::{MrisError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(MrisError::Config(format!("invalid AdamW settings {self:?}")))
        }
    }
}

/// First and second moments, flat in [`EncoderParams::to_flat`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub config: AdamWConfig,
}

impl OptimizerState {
    pub fn new<S: Real>(config: AdamWConfig, params: &EncoderParams<S>) -> Result<Self> {
        config.validate()?;
        let n = params.num_params();
        Ok(OptimizerState {
            step: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            config,
        })
    }
}

/// AdamW update with bias correction and decoupled weight decay:
/// `p ← p − lr·(m̂ / (√v̂ + ε) + λ·p)`.
pub struct AdamW;

impl AdamW {
    pub fn step<S: Real>(
        params: &mut EncoderParams<S>,
        grads: &EncoderGrads,
        state: &mut OptimizerState,
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(MrisError::Config(format!("learning rate must be > 0, got {lr}")));
        }
        let shapes_match = grads.weights.len() == params.layers().len()
            && params.layers().iter().enumerate().all(|(i, l)| {
                grads.weights[i].len() == l.weight.data().len()
                    && grads.biases[i].len() == l.bias.len()
            })
            && state.first_moment.len() == params.num_params();
        if !shapes_match {
            return Err(MrisError::DimensionMismatch {
                context: "optimizer gradients",
                expected: params.num_params(),
                actual: grads.to_flat().len(),
            });
        }
        if !grads.is_finite() {
            return Err(MrisError::NonFinite("optimizer gradients"));
        }

        let cfg = state.config;
        state.step += 1;
        let t = state.step as i32;
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);

        let mut idx = 0;
        let m = &mut state.first_moment;
        let v = &mut state.second_moment;
        let mut update = |p: &mut S, g: f64| {
            m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * g;
            v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[idx] / correction1;
            let v_hat = v[idx] / correction2;
            let old = p.to_f64();
            *p = S::from_f64(old - lr * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * old));
            idx += 1;
        };
        for (l, layer) in params.layers_mut().iter_mut().enumerate() {
            for (p, &g) in layer.weight.data_mut().iter_mut().zip(&grads.weights[l]) {
                update(p, g);
            }
            for (p, &g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                update(p, g);
            }
        }
        Ok(())
    }
}

/// Step decay: `lr(epoch) = initial · factor^⌊epoch / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every: usize) -> Result<Self> {
        if !(initial_lr > 0.0 && initial_lr.is_finite()) {
            return Err(MrisError::Config(format!("initial lr must be > 0, got {initial_lr}")));
        }
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(MrisError::Config(format!(
                "decay factor must lie in (0, 1], got {decay_factor}"
            )));
        }
        if decay_every == 0 {
            return Err(MrisError::Config("decay interval must be positive".into()));
        }
        Ok(LrSchedule {
            initial_lr,
            decay_factor,
            decay_every,
        })
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial_lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}
