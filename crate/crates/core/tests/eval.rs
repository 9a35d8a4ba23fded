use blindqe_core::codec::{Clip, Frame};
use blindqe_core::eval::*;
use blindqe_core::net::StageTrace;
use blindqe_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frame(w: usize, h: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::from_fn(w, h, |_, _| rng.random_range(0.0..=255.0f64).round())
}

#[test]
fn psnr_reference_values() {
    let a = random_frame(8, 8, 1);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    let b = Frame::from_fn(8, 8, |x, y| a.at(x, y) + if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
    assert!((psnr(&a, &b).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
}

#[test]
fn psnr_matches_mse_loop() {
    for seed in 0..10 {
        let (a, b) = (random_frame(9, 7, seed), random_frame(9, 7, seed + 100));
        let mut m = 0.0;
        for y in 0..7 {
            for x in 0..9 {
                m += (a.at(x, y) - b.at(x, y)).powi(2);
            }
        }
        m /= 63.0;
        let want = 10.0 * (255.0f64 * 255.0 / m).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn psnr_rejects_shape_mismatch() {
    assert!(matches!(psnr(&random_frame(4, 4, 0), &random_frame(4, 5, 0)), Err(Error::Shape(_))));
}

/// Windowed SSIM with an explicit 2-D Gaussian at every valid position.
fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut w2 = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, gi) in g.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            w2[i][j] = gi * gj;
            z += gi * gj;
        }
    }
    let (c1, c2) = (6.5025, 58.5225);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height() - 11 {
        for x0 in 0..=a.width() - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = w2[i][j] / z;
                    ma += w * a.at(x0 + j, y0 + i);
                    mb += w * b.at(x0 + j, y0 + i);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = w2[i][j] / z;
                    let (da, db) = (a.at(x0 + j, y0 + i) - ma, b.at(x0 + j, y0 + i) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_windowed_oracle() {
    let a = random_frame(16, 16, 3);
    let b = Frame::from_fn(16, 16, |x, y| (a.at(x, y) * 0.7 + 20.0 + ((x * 7 + y * 3) % 11) as f64).min(255.0));
    let got = ssim(&a, &b).unwrap();
    assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6, "{got} vs {}", ssim_oracle(&a, &b));
}

#[test]
fn ssim_identity_and_inversion() {
    let a = Frame::from_fn(20, 14, |x, y| ((x * 13 + y * 29) % 200) as f64 + 30.0);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let inv = Frame::from_fn(20, 14, |x, y| 255.0 - a.at(x, y));
    assert!(ssim(&a, &inv).unwrap() < 1.0);
    assert!(matches!(ssim(&random_frame(10, 20, 0), &random_frame(10, 20, 1)), Err(Error::Shape(_))));
}

fn clip(seed: u64) -> Clip {
    Clip::new((0..3).map(|k| random_frame(16, 12, seed * 10 + k)).collect()).unwrap()
}

#[test]
fn delta_metrics_edge_cases() {
    let (raw, deg) = (clip(1), clip(2));
    let same = delta_metrics(&raw, &deg, &deg).unwrap();
    assert!(same.frames.iter().all(|f| f.delta_psnr == 0.0 && f.delta_ssim == 0.0));
    let perfect = delta_metrics(&raw, &deg, &raw).unwrap();
    for f in &perfect.frames {
        assert!((f.delta_psnr - (100.0 - f.psnr_degraded)).abs() < 1e-12);
    }
    let short = Clip::new(vec![random_frame(16, 12, 0)]).unwrap();
    assert!(matches!(delta_metrics(&raw, &deg, &short), Err(Error::Shape(_))));
}

#[test]
fn reports_export() {
    let dir = tempfile::tempdir().unwrap();
    let r = delta_metrics(&clip(1), &clip(2), &clip(3)).unwrap();
    r.write_json(dir.path().join("m.json")).unwrap();
    r.write_csv(dir.path().join("m.csv")).unwrap();
    let back: MetricsReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(back, r);
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

fn trace(level: usize, qp: i32) -> StageTrace {
    StageTrace {
        level,
        executed_stages: level + 1,
        per_stage_cost: vec![1000; level + 1],
        wall_time: 0.0,
        htar_wall_time: 0.0,
        qp: Some(qp),
    }
}

#[test]
fn profile_groups_by_qp() {
    let all_zero: Vec<_> = (0..4).map(|i| trace(0, 22 + i)).collect();
    let p = profile_stages(&all_zero).unwrap();
    assert!(p.groups.iter().all(|g| g.mean_executed_stages == 1.0));
    let rising: Vec<_> = (0..5).map(|l| trace(l, 22 + 5 * l as i32)).collect();
    let p = profile_stages(&rising).unwrap();
    let costs: Vec<f64> = p.groups.iter().map(|g| g.mean_cost).collect();
    assert!(costs.windows(2).all(|w| w[0] < w[1]));
    assert!(p.cost_monotone && p.stages_monotone && p.cost_proportional);
    assert!((p.cost_ratio - 0.2).abs() < 1e-12);
    assert!(profile_stages(&[]).is_err());
}

#[test]
fn separated_classes_score_perfectly() {
    let centres = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut emb = Vec::new();
    let mut labels = Vec::new();
    for (c, v) in centres.iter().enumerate() {
        for _ in 0..4 {
            emb.extend_from_slice(v);
            labels.push(c);
        }
    }
    assert_eq!(knn_accuracy(&emb, 3, &labels).unwrap(), 1.0);
    assert!((silhouette(&emb, 3, &labels).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn random_embeddings_sit_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    let runs = 10;
    for _ in 0..runs {
        let labels: Vec<usize> = (0..250).map(|i| i % 5).collect();
        let emb: Vec<f64> = (0..250 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        total += knn_accuracy(&emb, 16, &labels).unwrap();
    }
    // 2500 draws at p = 0.2: standard error 0.008.
    let mean = total / runs as f64;
    assert!((mean - 0.2).abs() < 0.04, "{mean}");
}

#[test]
fn singleton_class_is_rejected() {
    let emb = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    assert!(matches!(knn_accuracy(&emb, 2, &[0, 0, 1]), Err(Error::Validation(_))));
}
