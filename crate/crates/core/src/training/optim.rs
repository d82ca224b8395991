//! Adam, reduce-on-plateau learning rate, early stopping.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update of every trainable parameter, in store
/// order. `t` is the 1-based step count.
pub fn adam_step<T: Real>(store: &mut ParamStore<T>, lr: f64, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("adam step count starts at 1".into()));
    }
    if let Some(e) = store.iter().find(|e| e.trainable && !e.has_grad) {
        return Err(Error::MissingGradient(e.name.clone()));
    }
    let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
    let c1 = T::one() - T::of(ADAM_BETA1.powi(t as i32));
    let c2 = T::one() - T::of(ADAM_BETA2.powi(t as i32));
    let (lr, eps) = (T::of(lr), T::of(ADAM_EPS));
    for e in store.iter_mut().filter(|e| e.trainable) {
        let g = e.grad.data();
        let m = e.m.data_mut();
        for (m, &g) in m.iter_mut().zip(g) {
            *m = b1 * *m + (T::one() - b1) * g;
        }
        let v = e.v.data_mut();
        for (v, &g) in v.iter_mut().zip(g) {
            *v = b2 * *v + (T::one() - b2) * g * g;
        }
        let (m, v) = (e.m.data(), e.v.data());
        for ((p, &m), &v) in e.value.data_mut().iter_mut().zip(m).zip(v) {
            *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a strict decrease of the monitored loss.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    min_lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, min_lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            min_lr,
            factor,
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopSignal {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    wait: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    pub fn step(&mut self, val_loss: f64) -> StopSignal {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        if self.wait >= self.patience {
            StopSignal::Stop
        } else {
            StopSignal::Continue
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_trace() {
        let mut s = PlateauScheduler::new(1e-4, 1e-8, 0.5, 2);
        assert_eq!([1.0, 0.9, 0.8].map(|v| s.step(v)), [1e-4; 3]);
        let mut s = PlateauScheduler::new(1e-4, 1e-8, 0.5, 2);
        assert_eq!([1.0, 1.1, 1.2].map(|v| s.step(v)), [1e-4, 1e-4, 5e-5]);
    }

    #[test]
    fn stopper_trace() {
        let mut s = EarlyStopper::new(10);
        let signals: Vec<_> = (0..11).map(|_| s.step(1.0)).collect();
        assert!(signals[..10].iter().all(|&x| x == StopSignal::Continue));
        assert_eq!(signals[10], StopSignal::Stop);
    }
}
