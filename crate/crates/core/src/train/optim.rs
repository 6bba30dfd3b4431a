//! Adaptive-moment optimizer, global-norm gradient clipping, and the
//! per-block gradient accumulator.

use ndarray::Array2;

use crate::model::params::ParamStore;
use crate::tape::{BlockId, Grads, Tape};

/// Per-block gradient buffers, indexed by BlockId.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub by_block: Vec<Array2<f64>>,
}

impl GradStore {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            by_block: store.blocks.iter().map(|b| Array2::zeros(b.value.dim())).collect(),
        }
    }

    /// Pull the gradients of the given blocks off a finished tape.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads, trainable: &[BlockId]) {
        for &(block, node) in tape.param_nodes() {
            if !trainable.contains(&block) {
                continue;
            }
            if let Some(g) = grads.of(crate::tape::Var(node)) {
                self.by_block[block] += g;
            }
        }
    }

    pub fn add(&mut self, other: &GradStore) {
        for (a, b) in self.by_block.iter_mut().zip(other.by_block.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_block.iter_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn global_norm(&self, ids: &[BlockId]) -> f64 {
        ids.iter()
            .map(|&i| self.by_block[i].iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients so the global norm does not exceed `clip`; returns the
    /// post-clip norm.
    pub fn clip_global_norm(&mut self, ids: &[BlockId], clip: f64) -> f64 {
        let norm = self.global_norm(ids);
        if norm > clip && norm > 0.0 {
            let factor = clip / norm;
            for &i in ids {
                self.by_block[i].mapv_inplace(|v| v * factor);
            }
            clip
        } else {
            norm
        }
    }
}

/// Adam with bias correction; default moment constants.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.blocks.iter().map(|b| Array2::zeros(b.value.dim())).collect(),
            v: store.blocks.iter().map(|b| Array2::zeros(b.value.dim())).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradStore, trainable: &[BlockId]) {
        self.t += 1;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for &i in trainable {
            let g = &grads.by_block[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            azip(m, g, |m, g| b1 * m + (1.0 - b1) * g);
            azip(v, g, |v, g| b2 * v + (1.0 - b2) * g * g);
            let value = &mut store.blocks[i].value;
            for ((p, m), v) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn azip(dst: &mut Array2<f64>, src: &Array2<f64>, f: impl Fn(f64, f64) -> f64) {
    dst.zip_mut_with(src, |d, &s| *d = f(*d, s));
}
