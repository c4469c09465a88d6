use crate::neural::{l2_norm, log_softmax, softmax};
use crate::{Error, Result};

const NORM_EPS: f64 = 1e-12;

fn normalise_rows(z: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let norms: Vec<f64> = z.iter().map(|r| l2_norm(r)).collect();
    let unit = z
        .iter()
        .zip(&norms)
        .map(|(r, n)| r.iter().map(|v| v / (n + NORM_EPS)).collect())
        .collect();
    (unit, norms)
}

/// Pull a gradient on `u = z / (‖z‖ + ε)` back to `z`.
fn unnormalise_grad(z: &[f64], norm: f64, du: &[f64]) -> Vec<f64> {
    let d = norm + NORM_EPS;
    let dot: f64 = du.iter().zip(z).map(|(a, b)| a * b).sum();
    let coef = if norm > 0.0 { dot / (d * d * norm) } else { 0.0 };
    du.iter().zip(z).map(|(g, zi)| g / d - coef * zi).collect()
}

fn check_pair(z1: &[Vec<f64>], z2: &[Vec<f64>], tau: f64) -> Result<()> {
    if z1.is_empty() {
        return Err(Error::Empty("contrastive batch".into()));
    }
    if z1.len() != z2.len() {
        return Err(Error::shape(z1.len(), z2.len()));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Symmetric InfoNCE on L2-normalised rows with temperature `tau`.
pub fn contrastive_loss(z1: &[Vec<f64>], z2: &[Vec<f64>], tau: f64) -> Result<f64> {
    Ok(contrastive_loss_grad(z1, z2, tau)?.0)
}

/// Loss and gradients with respect to both inputs.
pub fn contrastive_loss_grad(
    z1: &[Vec<f64>],
    z2: &[Vec<f64>],
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_pair(z1, z2, tau)?;
    let b = z1.len();
    let (u1, n1) = normalise_rows(z1);
    let (u2, n2) = normalise_rows(z2);
    let dim = z1[0].len();
    let s: Vec<Vec<f64>> = (0..b)
        .map(|i| {
            (0..b)
                .map(|j| u1[i].iter().zip(&u2[j]).map(|(a, c)| a * c).sum::<f64>() / tau)
                .collect()
        })
        .collect();
    let mut loss = 0.0;
    let mut ds = vec![vec![0.0; b]; b];
    let inv = 0.5 / b as f64;
    for i in 0..b {
        let lp = log_softmax(&s[i]);
        loss -= lp[i] * inv;
        let p = softmax(&s[i]);
        for j in 0..b {
            ds[i][j] += inv * (p[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| s[i][j]).collect();
        let lp = log_softmax(&col);
        loss -= lp[j] * inv;
        let p = softmax(&col);
        for i in 0..b {
            ds[i][j] += inv * (p[i] - if i == j { 1.0 } else { 0.0 });
        }
    }
    let mut g1 = Vec::with_capacity(b);
    let mut g2 = Vec::with_capacity(b);
    for i in 0..b {
        let du: Vec<f64> = (0..dim)
            .map(|k| (0..b).map(|j| ds[i][j] * u2[j][k]).sum::<f64>() / tau)
            .collect();
        g1.push(unnormalise_grad(&z1[i], n1[i], &du));
    }
    for j in 0..b {
        let du: Vec<f64> = (0..dim)
            .map(|k| (0..b).map(|i| ds[i][j] * u1[i][k]).sum::<f64>() / tau)
            .collect();
        g2.push(unnormalise_grad(&z2[j], n2[j], &du));
    }
    Ok((loss, g1, g2))
}

/// Direction plus magnitude matching on masked rows:
/// `mean ‖ŝ − t̂‖² + λ_norm · mean (‖s‖ − ‖t‖)²`.
pub fn distill_loss(student: &[Vec<f64>], teacher: &[Vec<f64>], mask: &[bool], lambda_norm: f64) -> Result<f64> {
    Ok(distill_loss_grad(student, teacher, mask, lambda_norm)?.0)
}

pub fn distill_loss_grad(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    mask: &[bool],
    lambda_norm: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if student.len() != teacher.len() || student.len() != mask.len() {
        return Err(Error::shape(student.len(), format!("{} teacher / {} mask", teacher.len(), mask.len())));
    }
    let mut grads: Vec<Vec<f64>> = student.iter().map(|r| vec![0.0; r.len()]).collect();
    let k = mask.iter().filter(|m| **m).count();
    if k == 0 {
        return Ok((0.0, grads));
    }
    let (us, ns) = normalise_rows(student);
    let (ut, nt) = normalise_rows(teacher);
    let mut loss = 0.0;
    let kf = k as f64;
    for i in (0..student.len()).filter(|&i| mask[i]) {
        let diff: Vec<f64> = us[i].iter().zip(&ut[i]).map(|(a, b)| a - b).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / kf;
        let gap = ns[i] - nt[i];
        loss += lambda_norm * gap * gap / kf;
        let du: Vec<f64> = diff.iter().map(|d| 2.0 * d / kf).collect();
        let mut gi = unnormalise_grad(&student[i], ns[i], &du);
        let scale = 2.0 * lambda_norm * gap / kf / (ns[i] + NORM_EPS);
        for (g, s) in gi.iter_mut().zip(&student[i]) {
            *g += scale * s;
        }
        grads[i] = gi;
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{numeric_gradient, relative_error};
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn pad(v: &[f64]) -> Vec<f64> {
        let mut r = v.to_vec();
        r.resize(8, 0.0);
        r
    }

    #[test]
    fn two_orthogonal_rows_closed_form() {
        let z = vec![pad(&[1.0, 0.0]), pad(&[0.0, 1.0])];
        let tau: f64 = 0.15;
        let got = contrastive_loss(&z, &z, tau).unwrap();
        let e = (1.0 / tau).exp();
        let want = -(e / (e + 1.0)).ln();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 1.27e-3).abs() < 1e-5);
    }

    #[test]
    fn single_row_has_zero_loss() {
        let z = vec![pad(&[0.3, -2.0])];
        assert_eq!(contrastive_loss(&z, &[pad(&[5.0, 1.0])], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_and_scale_invariant() {
        let mut rng = rng_from(0);
        let z1: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let z2: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let a = contrastive_loss(&z1, &z2, 0.15).unwrap();
        assert_eq!(a, contrastive_loss(&z2, &z1, 0.15).unwrap());
        let mut scaled = z1.clone();
        scaled[2].iter_mut().for_each(|v| *v *= 7.5);
        assert!((contrastive_loss(&scaled, &z2, 0.15).unwrap() - a).abs() < 1e-9);
    }

    #[test]
    fn contrastive_gradient_check() {
        let mut rng = rng_from(1);
        let b = 4;
        let flat: Vec<f64> = (0..2 * b * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let split = |f: &[f64]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let rows: Vec<Vec<f64>> = f.chunks(8).map(|c| c.to_vec()).collect();
            (rows[..b].to_vec(), rows[b..].to_vec())
        };
        let (z1, z2) = split(&flat);
        let (_, g1, g2) = contrastive_loss_grad(&z1, &z2, 0.15).unwrap();
        let analytic: Vec<f64> = g1.into_iter().chain(g2).flatten().collect();
        let num = numeric_gradient(&flat, 1e-5, |f| {
            let (a, c) = split(f);
            contrastive_loss(&a, &c, 0.15).unwrap()
        });
        assert!(relative_error(&analytic, &num) < 1e-6);
    }

    #[test]
    fn distill_cases() {
        let t = vec![vec![0.6, 0.8, 0.0], vec![1.0, 2.0, 2.0]];
        let mask = [true, true];
        assert_eq!(distill_loss(&t, &t, &mask, 1.0).unwrap(), 0.0);
        let s: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        // ‖t‖ = 1 and 3, so the scale term is (1 + 9) / 2
        let l = distill_loss(&s, &t, &mask, 1.0).unwrap();
        assert!((l - 5.0).abs() < 1e-9);
        assert!(distill_loss(&s, &t, &mask, 0.0).unwrap().abs() < 1e-12);
        assert_eq!(distill_loss(&s, &t, &[false, false], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn distill_gradient_check() {
        let mut rng = rng_from(2);
        let teacher: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let flat: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = |f: &[f64]| f.chunks(8).map(|c| c.to_vec()).collect::<Vec<_>>();
        let mask = [true, false, true, true];
        let (_, g) = distill_loss_grad(&rows(&flat), &teacher, &mask, 0.7).unwrap();
        let num = numeric_gradient(&flat, 1e-5, |f| distill_loss(&rows(f), &teacher, &mask, 0.7).unwrap());
        let analytic: Vec<f64> = g.into_iter().flatten().collect();
        assert!(relative_error(&analytic, &num) < 1e-6);
    }
}
