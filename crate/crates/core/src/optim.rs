//! Adam with optional global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 7e-5,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
        }
    }
}

/// Optimizer state: first and second moments per trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |id: ParamId| (store.kind(id) == ParamKind::Trainable).then(|| Tensor::zeros(store.get(id).shape()));
        Adam {
            config,
            step: 0,
            m: store.ids().map(zeros).collect(),
            v: store.ids().map(zeros).collect(),
        }
    }

    /// Global L2 norm of the gradients that are present.
    pub fn grad_norm(grads: &[Option<Tensor>]) -> f64 {
        grads
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Apply one update. `grads` is indexed by [`ParamId`]; a missing
    /// gradient counts as zero.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() > store.len() {
            return Err(Error::Invalid(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        let c = self.config;
        let scale = match c.clip {
            Some(max) => {
                let n = Self::grad_norm(grads);
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for id in ids {
            let i = id.index();
            let (Some(m), Some(v)) = (self.m[i].as_mut(), self.v[i].as_mut()) else {
                continue;
            };
            let g = grads.get(i).and_then(|g| g.as_ref());
            let p = store.get_mut(id);
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                let gk = g.map_or(0.0, |g| g.data()[k] * scale);
                md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gk;
                vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gk * gk;
                pd[k] -= c.lr * (md[k] / bc1) / ((vd[k] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let a = store.insert("a", ParamKind::Trainable, Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        let b = store.insert("b", ParamKind::Buffer, Tensor::scalar(3.0)).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &store);
        let g = Tensor::new([1, 1, 1, 2], vec![2.0, -0.5]).unwrap();
        opt.update(&mut store, &[Some(g), Some(Tensor::scalar(1.0))]).unwrap();
        // bias-corrected first step is lr * sign(g)
        let v = store.get(a).data();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] - 1.1).abs() < 1e-6);
        assert_eq!(store.get(b).item(), 3.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let a = store.insert("a", ParamKind::Trainable, Tensor::scalar(5.0)).unwrap();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..AdamConfig::default() }, &store);
        for _ in 0..2000 {
            let x = store.get(a).item();
            opt.update(&mut store, &[Some(Tensor::scalar(2.0 * (x - 1.0)))]).unwrap();
        }
        assert!((store.get(a).item() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let grads = vec![Some(Tensor::full([1, 1, 1, 4], 10.0))];
        assert_eq!(Adam::grad_norm(&grads), 20.0);
    }
}
