use blindqe_core::losses::*;
use blindqe_core::Error;
use blindqe_tensor::gradcheck::{check_gradients, compare_gradients};
use blindqe_tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

/// `-(1/m) sum_i log(exp(z_iy) / sum_c exp(z_ic))`, computed naively.
fn ce_oracle(logits: &[f64], labels: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total -= (row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn nce_oracle(v: &[f64], dim: usize, pos: &[usize], tau: f64) -> f64 {
    let m = pos.len();
    let row = |i: usize| &v[i * dim..(i + 1) * dim];
    let mut total = 0.0;
    for i in 0..m {
        // -ln(e^a / (e^a + rest)) written as ln(1 + rest / e^a).
        let a = cosine(row(i), row(pos[i])) / tau;
        let mut rest = 0.0;
        for k in 0..m {
            if k != i && k != pos[i] {
                rest += (cosine(row(i), row(k)) / tau - a).exp();
            }
        }
        total += rest.ln_1p();
    }
    total / m as f64
}

fn charbonnier_oracle(x: &[f64], t: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += ((x[i] - t[i]) * (x[i] - t[i]) + eps).sqrt();
    }
    s / x.len() as f64
}

fn pairs_of(m: usize) -> Vec<usize> {
    (0..m).map(|i| i ^ 1).collect()
}

#[test]
fn cross_entropy_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (m, c) = (rng.random_range(2..10), rng.random_range(2..7));
        let logits: Vec<f64> = (0..m * c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..c)).collect();
        let got = cross_entropy_loss(&logits, &one_hot(&labels, c), c).unwrap();
        assert!(rel(got, ce_oracle(&logits, &labels, c)) < 1e-6);
    }
}

#[test]
fn info_nce_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let m = 2 * rng.random_range(2..5);
        let dim = rng.random_range(2..9);
        let v: Vec<f64> = (0..m * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pos = pairs_of(m);
        for tau in [0.07, 0.5] {
            let got = info_nce_loss(&v, dim, &pos, tau).unwrap();
            assert!(rel(got, nce_oracle(&v, dim, &pos, tau)) < 1e-6);
        }
    }
}

#[test]
fn charbonnier_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let got = charbonnier_loss(&x, &t, 1e-6).unwrap();
        assert!(rel(got, charbonnier_oracle(&x, &t, 1e-6)) < 1e-9);
    }
}

#[test]
fn info_nce_tends_to_log_others_for_large_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let v: Vec<f64> = (0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let l = info_nce_loss(&v, 4, &pairs_of(6), 1e9).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-6);
}

#[test]
fn info_nce_rejects_zero_vector() {
    let mut v = vec![1.0, 0.5, 0.2, 1.0, 0.3, 0.3, 0.9, 0.1];
    v[2] = 0.0;
    v[3] = 0.0;
    assert!(matches!(info_nce_loss(&v, 2, &pairs_of(4), 0.1), Err(Error::Validation(_))));
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for m in [4, 6] {
        let logits = random_tensor(&[m, 5], &mut rng);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..5)).collect();
        let err = check_gradients(&[logits], 1e-4, |v| cross_entropy_var(&v[0], &labels).unwrap());
        assert!(err < 1e-3, "{err}");
    }
}

#[test]
fn info_nce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for (m, dim) in [(4, 3), (6, 8)] {
        let x = random_tensor(&[m, dim], &mut rng);
        let err = check_gradients(&[x], 1e-4, |v| info_nce_var(&v[0], &pairs_of(m), 0.07).unwrap());
        assert!(err < 1e-3, "{err}");
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let logits = random_tensor(&[6, 5], &mut rng);
    let vecs = random_tensor(&[6, 4], &mut rng);
    let labels = [0, 0, 3, 3, 1, 1];
    let lambda = 0.7;
    let err = check_gradients(&[logits, vecs], 1e-4, |v| {
        let ce = cross_entropy_var(&v[0], &labels).unwrap();
        let nce = info_nce_var(&v[1], &pairs_of(6), 0.07).unwrap();
        blindqe_tensor::ops::add(&ce, &blindqe_tensor::ops::scale(&nce, lambda))
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn charbonnier_gradient_is_smooth_at_zero_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let t = random_tensor(&[1, 1, 4, 4], &mut rng);
    let far = random_tensor(&[1, 1, 4, 4], &mut rng);
    for x in [far, t.clone()] {
        let target = t.clone();
        let check = compare_gradients(&[x], 1e-4, |v| charbonnier_var(&v[0], &target, 1e-6).unwrap());
        assert!(check.relative_error < 1e-4, "{check:?}");
    }
}

#[test]
fn var_wrappers_agree_with_slice_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let logits = random_tensor(&[4, 3], &mut rng);
    let labels = [2, 0, 1, 1];
    let v = cross_entropy_var(&Var::constant(logits.clone()), &labels).unwrap();
    let direct = cross_entropy_loss(logits.data(), &one_hot(&labels, 3), 3).unwrap();
    assert!((v.value().data()[0] - direct).abs() < 1e-12);
}

#[test]
fn info_nce_keeps_precision_when_positives_dominate() {
    let v = [1.0, 0.0, 1.0, 1e-3, -1.0, 0.0, -1.0, 1e-3];
    let got = info_nce_loss(&v, 2, &pairs_of(4), 0.07).unwrap();
    let want = nce_oracle(&v, 2, &pairs_of(4), 0.07);
    assert!(want < 1e-10);
    assert!(rel(got, want) < 1e-6, "{got} vs {want}");
}
