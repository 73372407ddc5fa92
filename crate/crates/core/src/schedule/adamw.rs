use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients so their global L2 norm is at most this value.
    pub grad_clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip_norm: None,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("AdamW betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("AdamW eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if self.grad_clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// AdamW with decoupled weight decay. Moments live in `f32` alongside the
/// parameters; bias corrections are computed in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuilds a saved state.
    pub fn from_state(
        config: AdamWConfig,
        step: u64,
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Format {
                what: "optimizer state",
                message: "first and second moments differ in shape".into(),
            });
        }
        Ok(Self { config, step, m, v })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: AdamWConfig) {
        self.config = config;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }

    /// One update. Every gradient is checked before anything is modified, so
    /// a non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f32]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adamw_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() || p.numel() != self.m[i].len() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::PoisonedGradient { param: i });
            }
        }
        let clip = match self.config.grad_clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.iter())
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    (max / norm) as f32
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = (1.0 - c.beta1.powi(t)) as f32;
        let bc2 = (1.0 - c.beta2.powi(t)) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.eps as f32);
        let (rb1, rb2) = ((1.0 - c.beta1) as f32, (1.0 - c.beta2) as f32);
        let decay = (1.0 - lr * c.weight_decay) as f32;
        let lr = lr as f32;
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j] * clip;
                m[j] = b1 * m[j] + rb1 * g;
                v[j] = b2 * v[j] + rb2 * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w *= decay;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
