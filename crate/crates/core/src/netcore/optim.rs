use alloc::vec;
use alloc::vec::Vec;

use super::model::{Gradients, Model};
use crate::pruner::MaskSet;
use crate::{Error, Result};

/// Step decay: `base_lr · decay^⌊epoch / interval⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub interval: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            decay: 0.5,
            interval: 30,
        }
    }
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = epoch / self.interval.max(1);
        self.base_lr * libm::pow(self.decay, steps as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators of one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMoments {
    pub m_weight: Vec<f64>,
    pub v_weight: Vec<f64>,
    pub m_bias: Vec<f64>,
    pub v_bias: Vec<f64>,
}

/// Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<LayerMoments>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, model: &Model) -> Self {
        let moments = model
            .params()
            .map(|(w, b)| LayerMoments {
                m_weight: vec![0.0; w.len()],
                v_weight: vec![0.0; w.len()],
                m_bias: vec![0.0; b.len()],
                v_bias: vec![0.0; b.len()],
            })
            .collect();
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.config.schedule.lr_at_epoch(epoch)
    }

    /// One Adam update at the learning rate of `epoch`.
    ///
    /// With `masks`, gradients at pruned positions are zeroed before the
    /// moment update and the mask is re-applied afterwards, so pruned
    /// weights stay exactly zero.
    pub fn step(
        &mut self,
        model: &mut Model,
        grads: &Gradients,
        epoch: usize,
        masks: Option<&MaskSet>,
    ) -> Result<()> {
        let n_params = model.params().count();
        let n_grads = grads.params().count();
        if n_params != self.moments.len() || n_grads != n_params {
            return Err(Error::shape(
                "optimizer parameter groups",
                self.moments.len(),
                (n_params, n_grads),
            ));
        }
        for (i, ((w, b), g)) in model.params().zip(grads.params()).enumerate() {
            if w.shape() != g.weight.shape() || b.shape() != g.bias.shape() {
                return Err(Error::shape(
                    alloc::format!("gradient of weight layer {}", i + 1),
                    (w.shape(), b.shape()),
                    (g.weight.shape(), g.bias.shape()),
                ));
            }
            if !g.weight.all_finite() || !g.bias.all_finite() {
                return Err(Error::NonFinite(alloc::format!(
                    "gradient of weight layer {}",
                    i + 1
                )));
            }
        }
        if let Some(m) = masks {
            m.check(model)?;
        }

        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.lr_at_epoch(epoch);
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        let update = |p: &mut [f64],
                      m: &mut [f64],
                      v: &mut [f64],
                      g: &[f64],
                      keep: &dyn Fn(usize) -> bool| {
            for i in 0..p.len() {
                let gi = if keep(i) { g[i] } else { 0.0 };
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        };
        for (pos, (((w, b), g), mom)) in model
            .params_mut()
            .zip(grads.params())
            .zip(self.moments.iter_mut())
            .enumerate()
        {
            let mask = masks.map(|m| &m.masks()[pos]);
            let keep = |i: usize| mask.is_none_or(|m| m.get(i));
            update(
                w.data_mut(),
                &mut mom.m_weight,
                &mut mom.v_weight,
                g.weight.data(),
                &keep,
            );
            update(
                b.data_mut(),
                &mut mom.m_bias,
                &mut mom.v_bias,
                g.bias.data(),
                &|_| true,
            );
        }
        if let Some(m) = masks {
            m.apply(model)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::LayerKind;

    #[test]
    fn step_decay_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr_at_epoch(0), 0.05);
        assert_eq!(s.lr_at_epoch(29), 0.05);
        assert_eq!(s.lr_at_epoch(30), 0.025);
        assert_eq!(s.lr_at_epoch(60), 0.0125);
        assert_eq!(s.lr_at_epoch(90), 0.00625);
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut model = Model::new(
            vec![3],
            &[LayerKind::Linear {
                in_features: 3,
                out_features: 2,
            }],
            4,
        )
        .unwrap();
        let before = model.clone();
        let mut opt = OptimizerState::new(AdamConfig::default(), &model);
        let (y, cache) = model.forward(&crate::Tensor::zeros(vec![1, 3])).unwrap();
        let mut g = model.backward(&cache, &y).unwrap();
        for p in g.params_mut() {
            p.weight.data_mut().fill(0.0);
            p.bias.data_mut().fill(0.0);
        }
        for _ in 0..3 {
            opt.step(&mut model, &g, 0, None).unwrap();
        }
        assert_eq!(model, before);
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut model = Model::new(
            vec![2],
            &[LayerKind::Linear {
                in_features: 2,
                out_features: 2,
            }],
            1,
        )
        .unwrap();
        let mut opt = OptimizerState::new(AdamConfig::default(), &model);
        let (y, cache) = model.forward(&crate::Tensor::zeros(vec![1, 2])).unwrap();
        let mut g = model.backward(&cache, &y).unwrap();
        g.params_mut().next().unwrap().weight.data_mut()[0] = f64::NAN;
        assert!(matches!(
            opt.step(&mut model, &g, 0, None),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(opt.step, 0);
    }
}
