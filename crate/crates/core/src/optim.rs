use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::params::ParamStore;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW with decoupled weight decay. Decay applies to matrices only
/// (both dimensions > 1); biases, vectors and scalars are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![None; n_params],
            v: vec![None; n_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Mat>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.trainable)).collect();
        for (id, trainable) in ids {
            let i = id.index();
            let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else {
                continue;
            };
            if !trainable {
                continue;
            }
            let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps);
            let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = store.get_mut(id);
            let wd = if p.nrows() > 1 && p.ncols() > 1 {
                self.cfg.weight_decay
            } else {
                0.0
            };
            let (m, v) = (self.m[i].as_ref().unwrap(), self.v[i].as_ref().unwrap());
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let update = (m / bc1) / ((v / bc2).sqrt() + eps) + wd * *p;
                *p -= lr * update;
            });
        }
    }
}

/// Linear warmup to `peak` followed by cosine decay to zero.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct WarmupCosine {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
}

impl WarmupCosine {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        if step < warm {
            return self.peak * step as f64 / warm as f64;
        }
        let span = self.total_steps.saturating_sub(warm).max(1);
        let progress = ((step - warm) as f64 / span as f64).min(1.0);
        0.5 * self.peak * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Global L2 norm over all present gradients.
pub fn grad_norm(grads: &[Option<Mat>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Option<Mat>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}
