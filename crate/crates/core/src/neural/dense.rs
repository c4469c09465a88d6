use rand::Rng as _;

use super::{ParamLayout, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Affine layer `y = W x + b` with `W` stored `(out × in)` row-major inside a
/// flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn register(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Dense {
        let w = layout.push(format!("{name}.weight"), &[out, inp]);
        let b = layout.push(format!("{name}.bias"), &[out]);
        Dense { inp, out, w, b }
    }

    pub fn weight<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w..self.w + self.inp * self.out]
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b..self.b + self.out]
    }

    /// Uniform in `±gain/√in`, zero bias.
    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        let bound = gain / (self.inp as f64).sqrt();
        for v in &mut p[self.w..self.w + self.inp * self.out] {
            *v = rng.random_range(-bound..=bound);
        }
        p[self.b..self.b + self.out].fill(0.0);
    }

    /// Single row forward. Skips zero inputs, which makes one-hot
    /// observations cheap.
    pub fn forward(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inp);
        debug_assert_eq!(y.len(), self.out);
        let w = self.weight(p);
        y.copy_from_slice(self.bias(p));
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        if nnz * 4 < self.inp {
            let idx: Vec<usize> = (0..self.inp).filter(|&i| x[i] != 0.0).collect();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                *yo += idx.iter().map(|&i| row[i] * x[i]).sum::<f64>();
            }
        } else {
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    pub fn forward_batch(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        let n = x.len() / self.inp;
        for r in 0..n {
            self.forward(
                p,
                &x[r * self.inp..(r + 1) * self.inp],
                &mut y[r * self.out..(r + 1) * self.out],
            );
        }
    }

    /// Accumulate parameter gradients into `g` (same layout as `p`) and,
    /// when requested, write the input gradient into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], dx: Option<&mut [f64]>) {
        let inp = self.inp;
        let nz: Vec<usize> = (0..inp).filter(|&i| x[i] != 0.0).collect();
        let sparse = nz.len() * 4 < inp;
        {
            let gw = &mut g[self.w..self.w + inp * self.out];
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * inp..(o + 1) * inp];
                if sparse {
                    for &i in &nz {
                        row[i] += d * x[i];
                    }
                } else {
                    for (r, xi) in row.iter_mut().zip(x) {
                        *r += d * xi;
                    }
                }
            }
        }
        for (gb, d) in g[self.b..self.b + self.out].iter_mut().zip(dy) {
            *gb += d;
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            let w = self.weight(p);
            for (o, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * inp..(o + 1) * inp];
                for (a, wi) in dx.iter_mut().zip(row) {
                    *a += d * wi;
                }
            }
        }
    }
}

/// Standalone dense parameters, `weight` as `(out × in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub inp: usize,
    pub out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(inp: usize, out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<DenseParams> {
        if weight.len() != inp * out {
            return Err(Error::shape(inp * out, weight.len()));
        }
        if bias.len() != out {
            return Err(Error::shape(out, bias.len()));
        }
        Ok(DenseParams {
            inp,
            out,
            weight,
            bias,
        })
    }
}

/// `y = W x + b` for every row of `x` (`[.., in]`).
pub fn dense_forward(p: &DenseParams, x: &Tensor) -> Result<Tensor> {
    if x.inner() != p.inp {
        return Err(Error::shape(format!("inner dim {}", p.inp), x.inner()));
    }
    let layer = Dense {
        inp: p.inp,
        out: p.out,
        w: 0,
        b: p.inp * p.out,
    };
    let mut flat = p.weight.clone();
    flat.extend_from_slice(&p.bias);
    let rows = x.rows();
    let mut y = vec![0.0; rows * p.out];
    layer.forward_batch(&flat, &x.values, &mut y);
    let mut shape = x.shape.clone();
    if let Some(last) = shape.last_mut() {
        *last = p.out;
    }
    Tensor::new(shape, y)
}
