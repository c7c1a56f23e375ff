use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::apply_precision;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// Restores saved moment estimates.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Checkpoint("inconsistent optimizer moments".into()));
        }
        Ok(Adam { config, step, m, v })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update from the gradients held in `params`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient in parameter {name} at index {i}"
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        for ((_, t), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (data, grad) = t.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
            apply_precision(data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Tensor::scalar(w));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        for _ in 0..5 {
            p.zero_grads();
            adam.step(&mut p).unwrap();
        }
        assert_eq!(p.iter().next().unwrap().1.data(), &[0.7]);
    }

    #[test]
    fn quadratic_shrinks() {
        // Reference trajectory from a scalar simulation of the same update:
        // monotone until the first sign change at step 12, then a damped
        // oscillation ending near |w| = 0.0048.
        let mut p = single(1.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &p).unwrap();
        let mut path = vec![1.0];
        for _ in 0..50 {
            p.zero_grads();
            let w = p.iter().next().unwrap().1.item();
            p.iter_mut().next().unwrap().1.accumulate_grad(&[2.0 * w]);
            adam.step(&mut p).unwrap();
            path.push(p.iter().next().unwrap().1.item());
        }
        assert!(path[..12].windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!((path[1] - 0.9000000005).abs() < 1e-12);
        assert!((path[50] + 0.0048182232226613286).abs() < 1e-12);
        assert!(path[12..].iter().all(|w| w.abs() < 0.3));
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = single(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        p.iter_mut().next().unwrap().1.accumulate_grad(&[f64::NAN]);
        let err = adam.step(&mut p).unwrap_err().to_string();
        assert!(err.contains("parameter w"), "{err}");
        assert_eq!(p.iter().next().unwrap().1.item(), 1.0);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn rejects_bad_betas() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
