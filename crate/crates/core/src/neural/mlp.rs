use serde::{Deserialize, Serialize};

use super::{Dense, ParamLayout};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    /// Chain rule expressed through the post-activation value `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Stack of dense layers with one activation per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub acts: Vec<Activation>,
}

/// Post-activation values; `0` is the input.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds the input")
    }
}

impl Mlp {
    /// `dims = [in, h1, …, out]`; `hidden` follows every layer but the last,
    /// which uses `out`.
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        out: Activation,
    ) -> Mlp {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| Dense::register(layout, &format!("{name}.{i}"), dims[i], dims[i + 1]))
            .collect();
        let acts = (0..n).map(|i| if i + 1 == n { out } else { hidden }).collect();
        Mlp { layers, acts }
    }

    pub fn inp(&self) -> usize {
        self.layers[0].inp
    }

    pub fn out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out)
    }

    pub fn init(&self, p: &mut [f64], hidden_gain: f64, out_gain: f64, rng: &mut Rng) {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            l.init(p, if i + 1 == n { out_gain } else { hidden_gain }, rng);
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> MlpCache {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for (l, act) in self.layers.iter().zip(&self.acts) {
            let mut y = vec![0.0; l.out];
            l.forward(p, values.last().expect("non-empty"), &mut y);
            act.apply(&mut y);
            values.push(y);
        }
        MlpCache { values }
    }

    /// Output only, no cache kept.
    pub fn eval(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (l, act) in self.layers.iter().zip(&self.acts) {
            let mut y = vec![0.0; l.out];
            l.forward(p, &cur, &mut y);
            act.apply(&mut y);
            cur = y;
        }
        cur
    }

    /// `dy` is the gradient with respect to the post-activation output.
    pub fn backward(&self, p: &[f64], cache: &MlpCache, dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        let n = self.layers.len();
        let mut delta = dy.to_vec();
        let mut dx = dx;
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let y = &cache.values[i + 1];
            for (d, yv) in delta.iter_mut().zip(y) {
                *d *= self.acts[i].grad_from_output(*yv);
            }
            if i == 0 {
                l.backward(p, &cache.values[0], &delta, g, dx.take());
            } else {
                let mut prev = vec![0.0; l.inp];
                l.backward(p, &cache.values[i], &delta, g, Some(&mut prev));
                delta = prev;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{numeric_gradient, relative_error};
    use crate::rng::rng_from;
    use rand::Rng as _;

    #[test]
    fn gradient_check_tanh_and_relu() {
        let mut rng = rng_from(9);
        for act in [Activation::Tanh, Activation::Relu] {
            let mut layout = ParamLayout::new();
            let mlp = Mlp::register(&mut layout, "m", &[5, 7, 6, 3], act, Activation::Identity);
            let mut p = vec![0.0; layout.len];
            mlp.init(&mut p, 1.5, 1.0, &mut rng);
            for v in p.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |p: &[f64], x: &[f64]| mlp.eval(p, x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let cache = mlp.forward(&p, &x);
            let mut g = vec![0.0; layout.len];
            let mut dx = vec![0.0; 5];
            mlp.backward(&p, &cache, &w, &mut g, Some(&mut dx));
            assert!(relative_error(&g, &numeric_gradient(&p, 1e-5, |q| loss(q, &x))) < 1e-6);
            assert!(relative_error(&dx, &numeric_gradient(&x, 1e-5, |q| loss(&p, q))) < 1e-6);
        }
    }
}
