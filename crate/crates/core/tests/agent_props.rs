use qdcl::agent::{l2init_grad, l2init_penalty, shrink_and_perturb};
use qdcl::rng::rng_from;

#[test]
fn shrink_and_perturb_moments() {
    let params: Vec<f64> = (0..50).map(|i| (i as f64 - 25.0) / 10.0).collect();
    let (alpha, noise) = (0.9, 0.01);
    let mut rng = rng_from(8);
    let n = 4000;
    let mut mean = vec![0.0; params.len()];
    let mut var = vec![0.0; params.len()];
    for _ in 0..n {
        let out = shrink_and_perturb(&params, alpha, noise, &mut rng).unwrap();
        for (k, v) in out.iter().enumerate() {
            let r = v - alpha * params[k];
            mean[k] += r / n as f64;
            var[k] += r * r / n as f64;
        }
    }
    for k in 0..params.len() {
        assert!(mean[k].abs() < 4.0 * noise / (n as f64).sqrt() * 1.5);
        assert!((var[k] / (noise * noise) - 1.0).abs() < 0.12, "var ratio {}", var[k] / (noise * noise));
    }
}

#[test]
fn shrink_and_perturb_edges() {
    let mut rng = rng_from(0);
    let p = vec![1.0, -2.0];
    assert_eq!(shrink_and_perturb(&p, 1.0, 0.0, &mut rng).unwrap(), p);
    assert_eq!(shrink_and_perturb(&p, 0.0, 0.0, &mut rng).unwrap(), vec![0.0, 0.0]);
    assert!(shrink_and_perturb(&p, 1.5, 0.0, &mut rng).is_err());
}

#[test]
fn l2init_examples() {
    let init = [1.0, 2.0, 3.0];
    let params = [2.0, 2.0, 1.0];
    assert!((l2init_penalty(&params, &init, 0.5).unwrap() - 2.5).abs() < 1e-12);
    assert_eq!(l2init_penalty(&init, &init, 3.0).unwrap(), 0.0);
    assert!(l2init_penalty(&params[..2], &init, 1.0).is_err());
    let mut g = vec![0.0; 3];
    l2init_grad(&params, &init, 0.5, &mut g);
    assert_eq!(g, vec![1.0, 0.0, -2.0]);
}
