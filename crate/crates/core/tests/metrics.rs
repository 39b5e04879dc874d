use icon_core::evalbench::{global_pattern_metrics, relative_error, relative_or_absolute};
use icon_core::{Error, RngStream};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn single_coordinate_bump() {
    let truth = [0.3, -1.2, 2.5, 0.7];
    let n = norm(&truth);
    let mut pred = truth;
    pred[0] += n;
    // |e1 * n| / n
    assert!((relative_error(&pred, &truth).unwrap() - 1.0).abs() < 1e-15);
    let mut pred = truth;
    pred[2] -= 0.5;
    let direct = 0.5 / n;
    assert!((relative_error(&pred, &truth).unwrap() - direct).abs() < 1e-15);
}

#[test]
fn zero_truth_falls_back_to_absolute() {
    assert!(matches!(relative_error(&[0.1], &[0.0]), Err(Error::ZeroNorm)));
    let (e, flagged) = relative_or_absolute(&[0.6, 0.8], &[0.0, 0.0]).unwrap();
    assert!(flagged);
    assert!((e - 1.0).abs() < 1e-15);
    assert!(!relative_or_absolute(&[1.0], &[1.0]).unwrap().1);
}

/// Straightforward recomputation used as the reference for the metrics.
fn pattern_reference(p: &[Vec<f64>], t: &[Vec<f64>]) -> (f64, f64) {
    let (e, cols) = (p.len(), p[0].len());
    let mut sq = 0.0;
    for i in 0..e {
        for j in 0..cols {
            sq += (p[i][j] - t[i][j]).powi(2);
        }
    }
    let mut avg = 0.0;
    for j in 0..cols {
        let mp: f64 = (0..e).map(|i| p[i][j]).sum::<f64>() / e as f64;
        let mt: f64 = (0..e).map(|i| t[i][j]).sum::<f64>() / e as f64;
        avg += (mp - mt).powi(2);
    }
    (sq / (e * cols) as f64, avg / cols as f64)
}

fn random_matrix(rng: &mut RngStream, e: usize, p: usize) -> Vec<Vec<f64>> {
    (0..e).map(|_| (0..p).map(|_| rng.normal()).collect()).collect()
}

#[test]
fn pattern_metrics_match_recomputation() {
    let mut rng = RngStream::new(12, 0);
    for &(e, p) in &[(1, 1), (6, 50), (3, 7), (20, 2)] {
        let a = random_matrix(&mut rng, e, p);
        let b = random_matrix(&mut rng, e, p);
        let m = global_pattern_metrics(&a, &b).unwrap();
        let (tok, avg) = pattern_reference(&a, &b);
        assert!((m.token_error - tok).abs() < 1e-12);
        assert!((m.average_error - avg).abs() < 1e-12);
    }
}

#[test]
fn row_shuffle_keeps_average_error() {
    let mut rng = RngStream::new(13, 0);
    let t = random_matrix(&mut rng, 6, 10);
    let mut rows: Vec<usize> = (0..6).collect();
    rows.rotate_left(2);
    let shuffled: Vec<Vec<f64>> = rows.iter().map(|&i| t[i].clone()).collect();
    let m = global_pattern_metrics(&shuffled, &t).unwrap();
    assert!(m.average_error < 1e-28);
    assert!(m.token_error > 0.1);
}

#[test]
fn averages_track_better_than_tokens_for_random_pairs() {
    let mut rng = RngStream::new(14, 0);
    let trials = 200;
    let wins = (0..trials)
        .filter(|_| {
            let a = random_matrix(&mut rng, 6, 50);
            let b = random_matrix(&mut rng, 6, 50);
            let m = global_pattern_metrics(&a, &b).unwrap();
            m.average_error < m.token_error
        })
        .count();
    assert!(wins >= trials * 95 / 100, "{wins}/{trials}");
}

#[test]
fn shape_mismatch_rejected() {
    assert!(global_pattern_metrics(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
    assert!(global_pattern_metrics(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn relative_error_of_scaled_truth(alpha in 0.0f64..10.0, v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        prop_assume!(norm(&v) > 1e-3);
        let pred: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        let e = relative_error(&pred, &v).unwrap();
        prop_assert!((e - (alpha - 1.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn average_error_never_exceeds_token_error(seed in any::<u64>(), e in 1usize..8, p in 1usize..20) {
        let mut rng = RngStream::new(seed, 0);
        let a = random_matrix(&mut rng, e, p);
        let b = random_matrix(&mut rng, e, p);
        let m = global_pattern_metrics(&a, &b).unwrap();
        prop_assert!(m.average_error <= m.token_error * (1.0 + 1e-12));
    }
}
