//! Small differentiable substrate: flat parameter storage with named layouts,
//! dense and GRU layers with explicit reverse-mode passes, Adam, and the
//! binary parameter blob.
//!
//! Every model keeps its parameters in one `Vec<f64>`; layers are offset
//! descriptors into that vector, so optimisers, mutation operators and
//! serialisation all work on plain slices.

mod adam;
mod blob;
mod dense;
mod gru;
mod layout;
mod mlp;
mod ops;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use blob::{read_blob, read_params, write_blob, write_params, BlobManifest};
pub use dense::{dense_forward, Dense, DenseParams};
pub use gru::{gru_forward, orthogonal, Gru, GruCache, GruParams};
pub use layout::{ParamLayout, Tensor, TensorInfo};
pub use mlp::{Activation, Mlp, MlpCache};
pub use ops::{log_softmax, relu, relu_grad, sigmoid, softmax};

/// `‖a‖₂`.
pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Relative error `‖a − b‖ / (‖a‖ + ‖b‖)` used by gradient checks.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let denom = l2_norm(a) + l2_norm(b);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}
