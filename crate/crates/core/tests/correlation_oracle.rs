//! Correlation metrics against O(n²) brute-force oracles.

use proptest::prelude::*;
use sfd_core::correlation::{average_ranks, kendall_counts, krcc, plcc, srcc, KendallCounts};

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_kendall(x: &[f64], y: &[f64]) -> KendallCounts {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty, mut txy) = (0i64, 0i64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx == 0.0 && dy == 0.0 {
                txy += 1;
            }
            if dx * dy > 0.0 {
                conc += 1;
            } else if dx * dy < 0.0 {
                disc += 1;
            }
        }
    }
    KendallCounts {
        pairs: (n * (n - 1) / 2) as u64,
        ties_x: tx,
        ties_y: ty,
        ties_xy: txy,
        score: conc - disc,
    }
}

fn brute_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().rev().sum::<f64>() / n;
    let my = y.iter().rev().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).rev().map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().rev().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().rev().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=50, any::<bool>()).prop_flat_map(|(n, tied)| {
        let values = if tied {
            (0i32..6).prop_map(f64::from).boxed()
        } else {
            (-100.0f64..100.0).boxed()
        };
        (
            proptest::collection::vec(values.clone(), n),
            proptest::collection::vec(values, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kendall_counts_match_pair_enumeration((x, y) in sample()) {
        let fast = kendall_counts(&x, &y);
        let slow = brute_kendall(&x, &y);
        prop_assert_eq!(fast, slow);
        match (krcc(&x, &y), slow.tau_b()) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn ranks_and_spearman_match_brute_force((x, y) in sample()) {
        prop_assert_eq!(average_ranks(&x), brute_ranks(&x));
        let oracle = brute_pearson(&brute_ranks(&x), &brute_ranks(&y));
        match (srcc(&x, &y), oracle) {
            (Ok(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn pearson_matches_direct_formula((x, y) in sample()) {
        match (plcc(&x, &y), brute_pearson(&x, &y)) {
            (Ok(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn rank_metrics_ignore_monotone_maps(
        (x, y) in sample(),
        k in 0.1f64..3.0,
        c in -5.0f64..5.0,
    ) {
        let fx: Vec<f64> = x.iter().map(|v| (v * 0.05).exp() * k + c).collect();
        let gy: Vec<f64> = y.iter().map(|v| v * v * v + 3.0 * v).collect();
        if let (Ok(a), Ok(b)) = (srcc(&x, &y), srcc(&fx, &gy)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        if let (Ok(a), Ok(b)) = (krcc(&x, &y), krcc(&fx, &gy)) {
            prop_assert_eq!(a, b);
        }
        let ax: Vec<f64> = x.iter().map(|v| v * k + c).collect();
        if let (Ok(a), Ok(b)) = (plcc(&x, &y), plcc(&ax, &y)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
