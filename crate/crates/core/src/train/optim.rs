use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Network, ParamGroup, Tensor};
use crate::real::Real;

/// Lower bound applied to every clip value after an update.
pub const ALPHA_FLOOR: f64 = 1e-4;

/// Learning rate at `step` of `total`: a linear ramp from `floor·lr` to `lr`
/// over `warmup` steps, then cosine decay `lr·(1 + cos(π·t))/2` with `t` the
/// fraction of post-warmup steps completed.
pub fn lr_schedule(step: usize, total: usize, warmup: usize, lr: f64, floor: f64) -> f64 {
    if step < warmup {
        let t = step as f64 / warmup as f64;
        return lr * (floor + (1.0 - floor) * t);
    }
    let span = total.saturating_sub(warmup).max(1);
    let t = ((step - warmup) as f64 / span as f64).min(1.0);
    0.5 * lr * (1.0 + (PI * t).cos())
}

/// One Nesterov SGD update of a parameter slice.
///
/// With `g ← g + wd·p`:
///
/// ```text
/// v ← μ·v + g
/// p ← p − lr·(g + μ·v)
/// ```
///
/// From rest the first update is `−lr·(1 + μ)·g`.
pub fn sgd_nesterov_step<T: Real>(p: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, wd: f64) {
    let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(wd));
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * (g + mu * *v);
    }
}

/// Learning rates for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRates {
    /// Weights and batch-norm affine parameters.
    pub weights: f64,
    /// Clip values and companding parameters.
    pub quant: f64,
}

/// Nesterov SGD over a network's parameter groups.
///
/// Weights get `lr_w` and weight decay; batch-norm affine parameters get
/// `lr_w` without decay; quantizer parameters get `lr_q` without decay;
/// buffers are not touched.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Vec<T>>,
}

pub const VELOCITY_SUFFIX: &str = ".velocity";

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[T]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn step(&mut self, net: &mut Network<T>, rates: StepRates) {
        for p in net.params_mut() {
            let (lr, wd) = match p.group {
                ParamGroup::Weight => (rates.weights, self.weight_decay),
                ParamGroup::Norm => (rates.weights, 0.0),
                ParamGroup::Quant => (rates.quant, 0.0),
                ParamGroup::Buffer => continue,
            };
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::zero(); p.value.len()]);
            let g = p.grad.data().to_vec();
            sgd_nesterov_step(p.value.data_mut(), &g, v, lr, self.momentum, wd);
            if p.group == ParamGroup::Quant && p.name.ends_with(".alpha") {
                for a in p.value.data_mut() {
                    *a = a.max(T::lit(ALPHA_FLOOR));
                }
            }
        }
    }

    /// Adds the velocity buffers to a checkpoint.
    pub fn save_into(&self, ck: &mut Checkpoint) {
        let mut names: Vec<&String> = self.velocity.keys().collect();
        names.sort();
        for n in names {
            let v = &self.velocity[n];
            let t = Tensor::from_vec(&[v.len()], v.clone()).expect("flat shape");
            ck.push(format!("{n}{VELOCITY_SUFFIX}"), &t);
        }
    }

    /// Loads velocity buffers saved by [`Sgd::save_into`].
    pub fn load_from(&mut self, ck: &Checkpoint, net: &Network<T>) -> Result<usize> {
        let mut n = 0;
        for p in net.params() {
            if let Some(t) = ck.get(&format!("{}{VELOCITY_SUFFIX}", p.name)) {
                if t.len() != p.value.len() {
                    return Err(Error::shape(format!("velocity of {} has {} entries", p.name, t.len())));
                }
                self.velocity.insert(p.name.clone(), t.cast::<T>().into_data());
                n += 1;
            }
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert_eq!(lr_schedule(0, 100, 10, 0.1, 0.1), 0.1 * 0.1);
        assert!((lr_schedule(5, 100, 10, 0.1, 0.0) - 0.05).abs() < 1e-15);
        assert_eq!(lr_schedule(10, 100, 10, 0.1, 0.1), 0.1);
        assert!((lr_schedule(55, 100, 10, 0.1, 0.1) - 0.05).abs() < 1e-15);
        assert!(lr_schedule(99, 100, 10, 0.1, 0.1) < 1e-4);
        assert!((lr_schedule(50, 100, 0, 0.2, 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn nesterov_from_rest_and_recursion() {
        let (lr, mu) = (0.1, 0.9);
        let mut p = [1.0f64];
        let mut v = [0.0];
        sgd_nesterov_step(&mut p, &[0.0], &mut v, lr, mu, 0.0);
        assert_eq!((p[0], v[0]), (1.0, 0.0));
        sgd_nesterov_step(&mut p, &[2.0], &mut v, lr, mu, 0.0);
        assert!((p[0] - (1.0 - lr * (1.0 + mu) * 2.0)).abs() < 1e-15);
        // Second step with g2: v2 = μ·g1 + g2, Δp = −lr·(g2 + μ·v2).
        let before = p[0];
        sgd_nesterov_step(&mut p, &[-1.0], &mut v, lr, mu, 0.0);
        let v2 = mu * 2.0 - 1.0;
        assert!((v[0] - v2).abs() < 1e-15);
        assert!((p[0] - (before - lr * (-1.0 + mu * v2))).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let mut p = [2.0f64];
        let mut v = [0.0];
        sgd_nesterov_step(&mut p, &[0.0], &mut v, 1.0, 0.0, 0.5);
        assert_eq!(p[0], 1.0);
    }
}
