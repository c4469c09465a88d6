use rand_distr::{Distribution, StandardNormal};

use super::{sigmoid, Dense, ParamLayout};
use crate::rng::Rng;
use crate::{Error, Result};

/// Gated recurrent unit, gate order `(reset, update, candidate)`:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// u  = σ(W_iu x + b_iu + W_hu h + b_hu)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub inp: usize,
    pub hid: usize,
    pub ih: Dense,
    pub hh: Dense,
}

/// Activations retained for backpropagation through time.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    /// `h_0 .. h_ℓ`, with `h_0 = 0`.
    pub hidden: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    n: Vec<Vec<f64>>,
    gh_n: Vec<Vec<f64>>,
}

impl GruCache {
    pub fn last(&self) -> &[f64] {
        self.hidden.last().expect("cache holds h_0")
    }

    pub fn steps(&self) -> usize {
        self.hidden.len() - 1
    }
}

impl Gru {
    pub fn register(layout: &mut ParamLayout, name: &str, inp: usize, hid: usize) -> Gru {
        let ih = Dense::register(layout, &format!("{name}.ih"), inp, 3 * hid);
        let hh = Dense::register(layout, &format!("{name}.hh"), hid, 3 * hid);
        Gru { inp, hid, ih, hh }
    }

    /// Scaled-uniform input weights, orthogonal recurrent blocks, zero biases.
    pub fn init(&self, p: &mut [f64], rng: &mut Rng) {
        self.ih.init(p, 1.0, rng);
        let h = self.hid;
        for gate in 0..3 {
            let q = orthogonal(h, h, rng);
            let start = self.hh.w + gate * h * h;
            p[start..start + h * h].copy_from_slice(&q);
        }
        p[self.hh.b..self.hh.b + 3 * h].fill(0.0);
    }

    /// Run over `steps` rows of `inputs` (flat, `steps × inp`) from `h_0 = 0`.
    pub fn forward(&self, p: &[f64], inputs: &[f64], steps: usize) -> GruCache {
        let h = self.hid;
        let mut cache = GruCache {
            hidden: Vec::with_capacity(steps + 1),
            r: Vec::with_capacity(steps),
            u: Vec::with_capacity(steps),
            n: Vec::with_capacity(steps),
            gh_n: Vec::with_capacity(steps),
        };
        cache.hidden.push(vec![0.0; h]);
        let mut gi = vec![0.0; 3 * h];
        let mut gh = vec![0.0; 3 * h];
        for t in 0..steps {
            let x = &inputs[t * self.inp..(t + 1) * self.inp];
            let prev = &cache.hidden[t];
            self.ih.forward(p, x, &mut gi);
            self.hh.forward(p, prev, &mut gh);
            let mut r = vec![0.0; h];
            let mut u = vec![0.0; h];
            let mut n = vec![0.0; h];
            let mut next = vec![0.0; h];
            for k in 0..h {
                r[k] = sigmoid(gi[k] + gh[k]);
                u[k] = sigmoid(gi[h + k] + gh[h + k]);
                n[k] = (gi[2 * h + k] + r[k] * gh[2 * h + k]).tanh();
                next[k] = (1.0 - u[k]) * n[k] + u[k] * prev[k];
            }
            cache.gh_n.push(gh[2 * h..].to_vec());
            cache.r.push(r);
            cache.u.push(u);
            cache.n.push(n);
            cache.hidden.push(next);
        }
        cache
    }

    /// Backpropagate `dh_last = ∂L/∂h_ℓ`, plus optional per-step hidden
    /// gradients `dh_steps[t] = ∂L/∂h_{t+1}`. Parameter gradients accumulate
    /// into `g`; `dx` (flat, `steps × inp`) receives input gradients.
    pub fn backward(
        &self,
        p: &[f64],
        inputs: &[f64],
        cache: &GruCache,
        dh_last: &[f64],
        dh_steps: Option<&[Vec<f64>]>,
        g: &mut [f64],
        mut dx: Option<&mut [f64]>,
    ) {
        let h = self.hid;
        let steps = cache.steps();
        let mut dh = dh_last.to_vec();
        let mut dgi = vec![0.0; 3 * h];
        let mut dgh = vec![0.0; 3 * h];
        let mut dprev = vec![0.0; h];
        let mut dx_t = vec![0.0; self.inp];
        for t in (0..steps).rev() {
            if let Some(extra) = dh_steps {
                for (a, b) in dh.iter_mut().zip(&extra[t]) {
                    *a += b;
                }
            }
            let prev = &cache.hidden[t];
            let (r, u, n, ghn) = (&cache.r[t], &cache.u[t], &cache.n[t], &cache.gh_n[t]);
            for k in 0..h {
                let dn = dh[k] * (1.0 - u[k]);
                let du = dh[k] * (prev[k] - n[k]);
                let dan = dn * (1.0 - n[k] * n[k]);
                let dr = dan * ghn[k];
                let dar = dr * r[k] * (1.0 - r[k]);
                let dau = du * u[k] * (1.0 - u[k]);
                dgi[k] = dar;
                dgi[h + k] = dau;
                dgi[2 * h + k] = dan;
                dgh[k] = dar;
                dgh[h + k] = dau;
                dgh[2 * h + k] = dan * r[k];
            }
            let x = &inputs[t * self.inp..(t + 1) * self.inp];
            let want_dx = dx.is_some();
            self.ih
                .backward(p, x, &dgi, g, if want_dx { Some(&mut dx_t) } else { None });
            if let Some(dx) = dx.as_deref_mut() {
                dx[t * self.inp..(t + 1) * self.inp].copy_from_slice(&dx_t);
            }
            self.hh.backward(p, prev, &dgh, g, Some(&mut dprev));
            for k in 0..h {
                dh[k] = dprev[k] + dh[k] * u[k];
            }
        }
    }
}

/// Standalone GRU parameters (PyTorch layout, gates stacked `r, u, n`).
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub inp: usize,
    pub hid: usize,
    pub w_ih: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl GruParams {
    pub fn zeros(inp: usize, hid: usize) -> GruParams {
        GruParams {
            inp,
            hid,
            w_ih: vec![0.0; 3 * hid * inp],
            w_hh: vec![0.0; 3 * hid * hid],
            b_ih: vec![0.0; 3 * hid],
            b_hh: vec![0.0; 3 * hid],
        }
    }

    fn flatten(&self) -> Result<(Gru, Vec<f64>)> {
        let (i, h) = (self.inp, self.hid);
        if self.w_ih.len() != 3 * h * i
            || self.w_hh.len() != 3 * h * h
            || self.b_ih.len() != 3 * h
            || self.b_hh.len() != 3 * h
        {
            return Err(Error::shape(format!("GRU({i}->{h})"), "inconsistent gate tensors"));
        }
        let mut layout = ParamLayout::new();
        let gru = Gru::register(&mut layout, "gru", i, h);
        let mut flat = Vec::with_capacity(layout.len);
        flat.extend_from_slice(&self.w_ih);
        flat.extend_from_slice(&self.b_ih);
        flat.extend_from_slice(&self.w_hh);
        flat.extend_from_slice(&self.b_hh);
        Ok((gru, flat))
    }
}

/// Final hidden state after the first `valid_len` inputs; padding beyond
/// `valid_len` is ignored.
pub fn gru_forward(p: &GruParams, inputs: &[Vec<f64>], valid_len: usize) -> Result<Vec<f64>> {
    if valid_len == 0 {
        return Err(Error::Empty("GRU input has zero valid steps".into()));
    }
    if valid_len > inputs.len() {
        return Err(Error::shape(format!("<= {} steps", inputs.len()), valid_len));
    }
    let (gru, flat) = p.flatten()?;
    let mut x = Vec::with_capacity(valid_len * p.inp);
    for row in &inputs[..valid_len] {
        if row.len() != p.inp {
            return Err(Error::shape(p.inp, row.len()));
        }
        x.extend_from_slice(row);
    }
    Ok(gru.forward(&flat, &x, valid_len).last().to_vec())
}

/// Row-orthonormal `(rows × cols)` matrix from Gram–Schmidt on Gaussian
/// samples (`rows ≤ cols`), or its transpose otherwise.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let (r, c) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(r);
    while q.len() < r {
        let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(rng)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= d * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..r {
        for j in 0..c {
            if rows <= cols {
                out[i * cols + j] = q[i][j];
            } else {
                out[j * cols + i] = q[i][j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{numeric_gradient, relative_error};
    use crate::rng::rng_from;
    use rand::Rng as _;

    /// Straight-line reference recurrence written without the layer helpers.
    fn reference(p: &GruParams, xs: &[Vec<f64>]) -> Vec<f64> {
        let (i_n, h_n) = (p.inp, p.hid);
        let mut h = vec![0.0; h_n];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for x in xs {
            let lin = |w: &[f64], b: &[f64], v: &[f64], gate: usize, k: usize, width: usize| {
                let row = (gate * h_n + k) * width;
                b[gate * h_n + k] + (0..width).map(|j| w[row + j] * v[j]).sum::<f64>()
            };
            let mut next = vec![0.0; h_n];
            for k in 0..h_n {
                let r = sig(lin(&p.w_ih, &p.b_ih, x, 0, k, i_n) + lin(&p.w_hh, &p.b_hh, &h, 0, k, h_n));
                let u = sig(lin(&p.w_ih, &p.b_ih, x, 1, k, i_n) + lin(&p.w_hh, &p.b_hh, &h, 1, k, h_n));
                let n = (lin(&p.w_ih, &p.b_ih, x, 2, k, i_n) + r * lin(&p.w_hh, &p.b_hh, &h, 2, k, h_n)).tanh();
                next[k] = (1.0 - u) * n + u * h[k];
            }
            h = next;
        }
        h
    }

    fn random_params(inp: usize, hid: usize, rng: &mut Rng) -> GruParams {
        let mut gen = |n: usize| (0..n).map(|_| rng.random_range(-0.8..0.8)).collect::<Vec<f64>>();
        GruParams {
            inp,
            hid,
            w_ih: gen(3 * hid * inp),
            w_hh: gen(3 * hid * hid),
            b_ih: gen(3 * hid),
            b_hh: gen(3 * hid),
        }
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = GruParams::zeros(3, 4);
        let xs = vec![vec![1.0, -2.0, 0.5]; 5];
        assert_eq!(gru_forward(&p, &xs, 5).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let p = GruParams::zeros(3, 4);
        assert!(matches!(gru_forward(&p, &[vec![0.0; 3]], 0), Err(Error::Empty(_))));
    }

    #[test]
    fn matches_reference_recurrence() {
        let mut rng = rng_from(11);
        let p = random_params(3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = gru_forward(&p, &xs, 3).unwrap();
        let want = reference(&p, &xs);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // single step equals one recurrence from zero
        let one = gru_forward(&p, &xs, 1).unwrap();
        for (a, b) in one.iter().zip(&reference(&p, &xs[..1])) {
            assert!((a - b).abs() < 1e-12);
        }
        // padding past the valid length is ignored
        let mut padded = xs.clone();
        padded.push(vec![9.0; 3]);
        assert_eq!(gru_forward(&p, &padded, 3).unwrap(), got);
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = rng_from(2);
        let mut layout = ParamLayout::new();
        let gru = Gru::register(&mut layout, "g", 3, 4);
        let mut p = vec![0.0; layout.len];
        gru.init(&mut p, &mut rng);
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let steps = 5;
        let xs: Vec<f64> = (0..steps * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |p: &[f64], xs: &[f64]| {
            let cache = gru.forward(p, xs, steps);
            cache.last().iter().zip(&c).map(|(h, c)| c * h * h).sum::<f64>()
        };
        let cache = gru.forward(&p, &xs, steps);
        let dh: Vec<f64> = cache.last().iter().zip(&c).map(|(h, c)| 2.0 * c * h).collect();
        let mut g = vec![0.0; layout.len];
        let mut dx = vec![0.0; xs.len()];
        gru.backward(&p, &xs, &cache, &dh, None, &mut g, Some(&mut dx));
        let num = numeric_gradient(&p, 1e-5, |q| loss(q, &xs));
        assert!(relative_error(&g, &num) < 1e-6);
        let num_x = numeric_gradient(&xs, 1e-5, |q| loss(&p, q));
        assert!(relative_error(&dx, &num_x) < 1e-6);
    }

    #[test]
    fn orthogonal_rows() {
        let mut rng = rng_from(4);
        let q = orthogonal(6, 6, &mut rng);
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = (0..6).map(|k| q[i * 6 + k] * q[j * 6 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-10);
            }
        }
    }
}
