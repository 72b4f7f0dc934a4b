//! Learning-rate schedules and optimizers over flat parameter vectors.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::layout::Group;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Linear warm-up from 0 over `warmup_fraction` of the steps, then
    /// cosine decay to 0.
    Cosine,
}

/// Multiplier applied to the base learning rate at `step` of `total`.
pub fn lr_factor(schedule: Schedule, warmup_fraction: f64, step: usize, total: usize) -> f64 {
    match schedule {
        Schedule::Constant => 1.0,
        Schedule::Cosine => {
            if total == 0 {
                return 0.0;
            }
            let warmup = (warmup_fraction * total as f64).floor() as usize;
            if step < warmup {
                return step as f64 / warmup as f64;
            }
            let span = (total - warmup).max(1) as f64;
            let progress = ((step - warmup) as f64 / span).min(1.0);
            0.5 * (1.0 + (PI * progress).cos())
        }
    }
}

/// Learning rates of the two parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLrs {
    pub encoder: f64,
    pub classifier: f64,
}

impl GroupLrs {
    pub fn new(encoder: f64, classifier: f64) -> Self {
        GroupLrs { encoder, classifier }
    }

    pub fn get(&self, group: Group) -> f64 {
        match group {
            Group::Encoder => self.encoder,
            Group::Classifier => self.classifier,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GroupLrs {
            encoder: self.encoder * factor,
            classifier: self.classifier * factor,
        }
    }
}

/// Adam with decoupled weight decay.
///
/// Decay is applied only to coordinates that have received a nonzero
/// gradient at some point, so parameters that masking keeps out of every
/// forward pass stay exactly where they were.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of the coordinates in `groups` (ranges not listed are
    /// left untouched, including their moment estimates).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], groups: &[(Range<usize>, Group)], lrs: GroupLrs) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (range, group) in groups {
            let lr = lrs.get(*group);
            for i in range.clone() {
                let g = grad[i];
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                if self.v[i] == 0.0 {
                    continue;
                }
                let mhat = self.m[i] / bc1;
                let vhat = self.v[i] / bc2;
                params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
            }
        }
    }

    /// Update for a free-standing vector (e.g. soft mask weights), without
    /// weight decay.
    pub fn step_plain(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.v[i] == 0.0 {
                continue;
            }
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + self.eps);
        }
    }
}

/// Plain gradient descent: θ ← θ − lr·g per group.
pub fn sgd_step(params: &mut [f64], grad: &[f64], groups: &[(Range<usize>, Group)], lrs: GroupLrs) {
    for (range, group) in groups {
        let lr = lrs.get(*group);
        for i in range.clone() {
            params[i] -= lr * grad[i];
        }
    }
}

/// Outer or non-episodic optimizer choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(Adam),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize, weight_decay: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n, weight_decay)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], groups: &[(Range<usize>, Group)], lrs: GroupLrs) {
        match self {
            Optimizer::Adam(a) => a.step(params, grad, groups, lrs),
            Optimizer::Sgd => sgd_step(params, grad, groups, lrs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_shape() {
        let total = 100;
        assert_eq!(lr_factor(Schedule::Cosine, 0.1, 0, total), 0.0);
        assert_eq!(lr_factor(Schedule::Cosine, 0.1, 10, total), 1.0);
        assert!((lr_factor(Schedule::Cosine, 0.1, 5, total) - 0.5).abs() < 1e-12);
        let last = lr_factor(Schedule::Cosine, 0.1, total - 1, total);
        assert!((0.0..1e-3).contains(&last));
        let mut prev = 1.0;
        for s in 10..total {
            let f = lr_factor(Schedule::Cosine, 0.1, s, total);
            assert!(f <= prev && f >= 0.0);
            prev = f;
        }
        assert_eq!(lr_factor(Schedule::Constant, 0.1, 0, total), 1.0);
    }

    #[test]
    fn adam_leaves_untouched_coordinates_alone() {
        let mut p = vec![1.0, 2.0, 3.0];
        let mut adam = Adam::new(3, 0.1);
        let groups = vec![(0..2, Group::Encoder), (2..3, Group::Classifier)];
        for _ in 0..5 {
            adam.step(&mut p, &[0.5, 0.0, -1.0], &groups, GroupLrs::new(0.1, 0.2));
        }
        assert_eq!(p[1], 2.0);
        assert!(p[0] < 1.0 && p[2] > 3.0);
    }

    #[test]
    fn first_adam_step_is_signed_lr() {
        let mut p = vec![0.0, 0.0];
        let mut adam = Adam::new(2, 0.0);
        adam.step(&mut p, &[3.0, -0.01], &[(0..2, Group::Encoder)], GroupLrs::new(0.1, 0.0));
        assert!((p[0] + 0.1).abs() < 1e-6 && (p[1] - 0.1).abs() < 1e-5);
    }
}
