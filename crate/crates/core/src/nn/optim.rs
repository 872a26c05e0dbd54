use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::tensor::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// Multiply by `gamma` every `step_epochs` epochs.
    StepDecay { base: f64, step_epochs: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::StepDecay { base, step_epochs, gamma } => {
                base * gamma.powi((epoch / step_epochs.max(1)) as i32)
            }
        }
    }
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct OptState<T> {
    pub schedule: LrSchedule,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptState<T> {
    pub fn new(schedule: LrSchedule, momentum: f64, weight_decay: f64) -> Self {
        let lr = schedule.lr_at(0);
        Self {
            schedule,
            lr,
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.schedule.lr_at(epoch);
    }

    pub fn buffer(&self, name: &str) -> Option<&[T]> {
        self.buffers.get(name).map(Vec::as_slice)
    }
}

/// `v <- mu v + g + lambda w; w <- w - lr v`, then clear gradients.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, opt: &mut OptState<T>) -> Result<()> {
    for (name, t) in params.iter() {
        if t.requires_grad && t.grad.is_none() {
            return Err(Error::structural(format!("parameter {name} has no gradient")));
        }
    }
    let lr = T::from_f64_lossy(opt.lr);
    let mu = T::from_f64_lossy(opt.momentum);
    let wd = T::from_f64_lossy(opt.weight_decay);
    for (name, t) in params.iter_mut() {
        if !t.requires_grad {
            continue;
        }
        let grad = t.grad.take().expect("checked above");
        let buf = opt
            .buffers
            .entry(name.clone())
            .or_insert_with(|| vec![T::zero(); grad.len()]);
        for ((w, v), g) in t.values.iter_mut().zip(buf.iter_mut()).zip(&grad) {
            *v = mu * *v + *g + wd * *w;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn single(w: f64, g: Option<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let mut t = Tensor::new(vec![1], vec![w], true).unwrap();
        t.grad = g.map(|g| vec![g]);
        p.insert("w", t);
        p
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut p = single(0.7, Some(3.0));
        let mut opt = OptState::new(LrSchedule::Constant(0.0), 0.9, 5e-4);
        sgd_step(&mut p, &mut opt).unwrap();
        assert_eq!(p.values("w").unwrap(), &[0.7]);
        assert!(p.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn plain_gradient_descent_without_momentum() {
        let mut p = single(0.7, Some(3.0));
        let mut opt = OptState::new(LrSchedule::Constant(0.1), 0.0, 0.0);
        sgd_step(&mut p, &mut opt).unwrap();
        assert_eq!(p.values("w").unwrap(), &[0.7 - 0.1 * 3.0]);
    }

    /// Closed-form oracle for `f(w) = w^2 / 2` from `w = 1`: `(v, w)` evolves
    /// linearly via `v' = mu v + w`, `w' = (1 - lr) w - lr mu v`.
    fn bowl_closed_form(lr: f64, mu: f64, steps: usize) -> f64 {
        let m = [[mu, 1.0], [-lr * mu, 1.0 - lr]];
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..steps {
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = (0..2).map(|k| m[i][k] * acc[k][j]).sum();
                }
            }
            acc = next;
        }
        acc[1][1]
    }

    #[test]
    fn quadratic_bowl_converges_with_momentum() {
        let mut p = single(1.0, None);
        let mut opt = OptState::new(LrSchedule::Constant(0.1), 0.9, 0.0);
        let mut trajectory = Vec::new();
        for _ in 0..200 {
            let w = p.values("w").unwrap()[0];
            p.get_mut("w").unwrap().grad = Some(vec![w]);
            sgd_step(&mut p, &mut opt).unwrap();
            trajectory.push(p.values("w").unwrap()[0]);
        }
        for steps in [1, 10, 100, 200] {
            let closed = bowl_closed_form(0.1, 0.9, steps);
            assert!((trajectory[steps - 1] - closed).abs() < 1e-12, "{steps}: {} vs {closed}", trajectory[steps - 1]);
        }
        // spectral radius sqrt(0.9): |w_100| is about 3.7e-3, below 1e-3 by step 150
        assert!(trajectory[99].abs() < 5e-3);
        assert!(trajectory[149].abs() < 1e-3);
    }

    #[test]
    fn missing_gradient_is_structural() {
        let mut p = single(1.0, None);
        let mut opt = OptState::new(LrSchedule::Constant(0.1), 0.0, 0.0);
        assert!(matches!(sgd_step(&mut p, &mut opt), Err(Error::Structural(_))));
    }

    #[test]
    fn step_decay_schedule() {
        let s = LrSchedule::StepDecay { base: 0.1, step_epochs: 10, gamma: 0.1 };
        assert_eq!(s.lr_at(0), 0.1);
        assert_eq!(s.lr_at(9), 0.1);
        assert!((s.lr_at(10) - 0.01).abs() < 1e-15);
    }
}
