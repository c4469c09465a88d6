use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::{Error, Result};

/// `λ·‖θ − θ₀‖²`.
pub fn l2init_penalty(params: &[f64], init: &[f64], lambda: f64) -> Result<f64> {
    if params.len() != init.len() {
        return Err(Error::shape(init.len(), params.len()));
    }
    Ok(lambda * params.iter().zip(init).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Adds `2λ(θ − θ₀)` into `g`.
pub fn l2init_grad(params: &[f64], init: &[f64], lambda: f64, g: &mut [f64]) {
    for ((gi, a), b) in g.iter_mut().zip(params).zip(init) {
        *gi += 2.0 * lambda * (a - b);
    }
}

/// `α·θ + s·ε`, `ε ~ N(0, I)`.
pub fn shrink_and_perturb(params: &[f64], alpha: f64, noise: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("shrink factor {alpha} outside [0, 1]")));
    }
    Ok(params
        .iter()
        .map(|p| {
            let e: f64 = StandardNormal.sample(rng);
            alpha * p + noise * e
        })
        .collect())
}
