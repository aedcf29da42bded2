use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{write_file, ParamStore};

use super::{OptimizerConfig, OptimizerKind};

/// `w ← w − lr·g`.
pub fn sgd_step(w: &mut [f64], g: &[f64], lr: f64) {
    for (w, g) in w.iter_mut().zip(g) {
        *w -= lr * g;
    }
}

/// First and second moment estimates of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Bias-corrected Adam update; `t` is the 1-based step count.
pub fn adam_step(
    w: &mut [f64],
    g: &[f64],
    state: &mut AdamMoments,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..w.len() {
        let gi = g[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gi;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gi * gi;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        w[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so that their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    moments: Vec<AdamMoments>,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, store: &ParamStore) -> Self {
        let moments = match cfg.kind {
            OptimizerKind::Adam => store.iter().map(|(_, p)| AdamMoments::zeros(p.value.len())).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind: cfg.kind,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            moments,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Applies one update; `grads` are in parameter-store order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let w = store.tensor_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Sgd => sgd_step(w, &grads[k], lr),
                OptimizerKind::Adam => adam_step(
                    w,
                    &grads[k],
                    &mut self.moments[k],
                    self.t,
                    lr,
                    self.beta1,
                    self.beta2,
                    self.eps,
                ),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        for m in &self.moments {
            for v in m.m.iter().chain(&m.v) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_file(path, &bytes)
    }

    pub fn load(&mut self, path: &Path, t: u64) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let expected: usize = self.moments.iter().map(|m| 16 * m.m.len()).sum();
        if bytes.len() != expected {
            return Err(Error::Config(format!(
                "{}: {} bytes, expected {expected}",
                path.display(),
                bytes.len()
            )));
        }
        let mut vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for m in &mut self.moments {
            for v in m.m.iter_mut().chain(m.v.iter_mut()) {
                *v = vals.next().unwrap();
            }
        }
        self.t = t;
        Ok(())
    }
}
