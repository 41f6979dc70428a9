//! Adam with per-group update masks, global-norm clipping and a plateau
//! learning-rate schedule.

use crate::model::ParamGrads;
use crate::nn::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix<S>>,
    v: Vec<Matrix<S>>,
    /// Updates applied so far, per parameter; drives bias correction.
    t: Vec<u64>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParamStore<S>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |e: &crate::nn::ParamEntry<S>| Matrix::zeros(e.value.rows(), e.value.cols());
        Self {
            beta1,
            beta2,
            eps,
            m: params.entries().iter().map(zeros).collect(),
            v: params.entries().iter().map(zeros).collect(),
            t: vec![0; params.len()],
        }
    }

    pub fn updates(&self, id: usize) -> u64 {
        self.t[id]
    }

    /// One step. Parameters of a decoder group `k` with `!decoder_mask[k]`
    /// are skipped entirely, moments included. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &ParamGrads<S>, lr: f64, decoder_mask: Option<&[bool]>) {
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let eps = S::lit(self.eps);
        for id in 0..params.len() {
            if let (ParamGroup::Decoder(k), Some(mask)) = (params.group(id), decoder_mask) {
                if !mask[k] {
                    continue;
                }
            }
            self.t[id] += 1;
            let t = self.t[id] as i32;
            let c1 = S::one() - b1.powi(t);
            let c2 = S::one() - b2.powi(t);
            let step = S::lit(lr);
            let value = params.value_mut(id).data_mut();
            let m = self.m[id].data_mut();
            let v = self.v[id].data_mut();
            let g = grads[id].as_ref().map(|g| g.data());
            for i in 0..value.len() {
                let gi = g.map_or(S::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (S::one() - b1) * gi;
                v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                value[i] -= step * mh / (vh.sqrt() + eps);
            }
        }
    }
}

pub fn grad_norm<S: Scalar>(grads: &ParamGrads<S>) -> S {
    grads.iter().flatten().map(|g| g.sum_squares()).sum::<S>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm == 0` disables clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut ParamGrads<S>, max_norm: f64) -> S {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > S::lit(max_norm) {
        let scale = S::lit(max_norm) / norm;
        grads.iter_mut().flatten().for_each(|g| g.scale_in_place(scale));
    }
    norm
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// validations that fail to beat the best value by more than `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    delta: f64,
    best: f64,
    bad: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, delta: f64) -> Self {
        Self { lr, factor, patience, delta, best: f64::INFINITY, bad: 0, reductions: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Records a validation value; returns true when the rate was reduced.
    pub fn observe(&mut self, metric: f64) -> bool {
        if metric < self.best - self.delta {
            self.best = metric;
            self.bad = 0;
            return false;
        }
        self.best = self.best.min(metric);
        self.bad += 1;
        if self.bad >= self.patience {
            self.lr *= self.factor;
            self.bad = 0;
            self.reductions += 1;
            return true;
        }
        false
    }
}
