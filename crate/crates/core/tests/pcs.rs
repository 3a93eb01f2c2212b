//! PCS against an independent per-pixel recount.

use dinn::eval::{binarize, euclidean_distance, pcs, Binarize, PcsReport, Role, THRESHOLDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PIXELS: usize = 120 * 160;

/// Counts the pixels where exactly one image is on and compares the count to
/// `θ²`, all in integers.
fn brute_force_correct(a: &[u8], b: &[u8], theta: u64) -> bool {
    let mut differing = 0u64;
    for y in 0..120 {
        for x in 0..160 {
            if a[y * 160 + x] != b[y * 160 + x] {
                differing += 1;
            }
        }
    }
    differing <= theta * theta
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let truth: Vec<u8> = (0..PIXELS).map(|_| rng.gen_bool(0.05) as u8).collect();
    // Flip a number of pixels that straddles the thresholds.
    let flips = rng.gen_range(0..3000);
    let mut pred = truth.clone();
    for _ in 0..flips {
        let i = rng.gen_range(0..PIXELS);
        pred[i] ^= 1;
    }
    (pred, truth)
}

#[test]
fn pcs_matches_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pairs: Vec<_> = (0..100).map(|_| random_pair(&mut rng)).collect();
    for n in [625, 626] {
        let truth = vec![0u8; PIXELS];
        let mut pred = truth.clone();
        pred[..n].fill(1);
        pairs.push((pred, truth));
    }
    let distances: Vec<f64> = pairs.iter().map(|(p, t)| euclidean_distance(p, t).unwrap()).collect();
    for theta in [25u64, 30, 40, 50] {
        let expected =
            pairs.iter().filter(|(p, t)| brute_force_correct(p, t, theta)).count() as f64 / pairs.len() as f64;
        assert_eq!(pcs(&distances, theta as f64).unwrap(), expected, "theta {theta}");
    }
}

#[test]
fn boundary_at_twenty_five() {
    let truth = vec![0u8; PIXELS];
    let mut pred = truth.clone();
    pred[..625].fill(1);
    let d625 = euclidean_distance(&pred, &truth).unwrap();
    pred[625] = 1;
    let d626 = euclidean_distance(&pred, &truth).unwrap();
    assert_eq!(d625, 25.0);
    assert!((d626 - 25.02).abs() < 0.001);
    assert_eq!(pcs(&[d625], 25.0).unwrap(), 1.0);
    assert_eq!(pcs(&[d626], 25.0).unwrap(), 0.0);
    assert_eq!(pcs(&[d626], 30.0).unwrap(), 1.0);
    assert_eq!(pcs(&[0.0; 5], 25.0).unwrap(), 1.0);
}

#[test]
fn binarized_sigmoid_output_uses_the_strict_threshold() {
    let pred = [0.5, 0.51, 0.49, 1.0];
    let truth = [0.0, 1.0, 1.0, 1.0];
    let a = binarize(&pred, Binarize::Prediction { tau: 0.5 });
    let b = binarize(&truth, Binarize::GroundTruth);
    assert_eq!(euclidean_distance(&a, &b).unwrap(), 1.0);
}

#[test]
fn pooled_row_is_the_sample_weighted_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<(u32, f64)> = (0..70)
        .map(|i| (if i < 20 { 4 } else { 1 }, rng.gen_range(0.0..60.0)))
        .collect();
    let report = PcsReport::from_distances(&samples, 4, 0.5, &THRESHOLDS).unwrap();
    assert_eq!(report.rows[0].role, Role::Target);
    let (target, source) = (report.subject(4).unwrap(), report.subject(1).unwrap());
    for (i, &theta) in THRESHOLDS.iter().enumerate() {
        let weighted = (20.0 * target.pcs_percent[i] + 50.0 * source.pcs_percent[i]) / 70.0;
        let pooled = 100.0 * samples.iter().filter(|s| s.1 <= theta).count() as f64 / 70.0;
        assert!((report.overall().pcs_percent[i] - weighted).abs() < 1e-9);
        assert!((report.overall().pcs_percent[i] - pooled).abs() < 1e-9);
    }

    let perfect = PcsReport::from_distances(&[(0, 0.0), (0, 0.0)], 0, 0.5, &THRESHOLDS).unwrap();
    assert_eq!(perfect.target().unwrap().pcs_percent, [100.0; 4]);
    assert_eq!(perfect.target().unwrap().mean_distance, 0.0);
}
