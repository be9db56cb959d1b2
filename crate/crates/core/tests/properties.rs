use proptest::prelude::*;

use nashgame::harness::{csv_string, parse_config, parse_csv};
use nashgame::solvers::{egpo_step, ipo_gradient, ipo_loss, SigmaOperator};
use nashgame::stochastic::estimate_p_pi;
use nashgame::{
    best_response_regularized, dual_gap, dual_gap_regularized, generate_preference_matrix, kl,
    policy_probs, qre_solve, regularized_value, value, EstimatorMode, GameSpec, MetricRow,
    RngStream, Side, VectorEstimator,
};

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn probs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    logits(n).prop_map(|l| policy_probs(&l).unwrap())
}

/// Game seed, arm count, two policies and a logit vector of that size.
fn instance() -> impl Strategy<Value = (u64, usize, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (any::<u64>(), 2usize..9)
        .prop_flat_map(|(seed, n)| (Just(seed), Just(n), probs(n), probs(n), logits(n)))
}

fn spec(seed: u64, n: usize, ref_logits: Vec<f64>, beta: f64) -> GameSpec {
    GameSpec::new(
        generate_preference_matrix(seed, n).unwrap(),
        ref_logits,
        beta,
    )
    .unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn value_is_constant_sum((seed, n, a, b, _) in instance()) {
        let p = generate_preference_matrix(seed, n).unwrap();
        let ab = value(&p, &a, &b).unwrap();
        let ba = value(&p, &b, &a).unwrap();
        prop_assert!((ab + ba - 1.0).abs() < 1e-12);
        prop_assert!((value(&p, &a, &a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn difference_quadratic_form_vanishes((seed, n, a, b, _) in instance()) {
        let p = generate_preference_matrix(seed, n).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let pd = p.mul_vec(&d);
        let q: f64 = d.iter().zip(&pd).map(|(x, y)| x * y).sum();
        prop_assert!(q.abs() < 1e-12);
    }

    #[test]
    fn pinsker((_seed, _n, a, b, _) in instance()) {
        let l1: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let k = kl(&a, &b).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert!(k + 1e-12 >= 0.5 * l1 * l1);
    }

    #[test]
    fn best_response_dominates((seed, n, a, b, r) in instance(), beta in 0.05f64..1.0) {
        let spec = spec(seed, n, r, beta);
        let hi = best_response_regularized(&spec, &a, Side::Max).unwrap();
        let lo = best_response_regularized(&spec, &a, Side::Min).unwrap();
        prop_assert!((regularized_value(&spec, &hi.probs, &a).unwrap() - hi.value).abs() < 1e-9);
        prop_assert!(regularized_value(&spec, &b, &a).unwrap() <= hi.value + 1e-12);
        prop_assert!(regularized_value(&spec, &a, &b).unwrap() >= lo.value - 1e-12);
    }

    #[test]
    fn dual_gaps_are_nonnegative((seed, n, a, _b, r) in instance(), beta in 0.05f64..1.0) {
        let spec = spec(seed, n, r, beta);
        prop_assert!(dual_gap(spec.matrix(), &a).unwrap() >= 0.0);
        prop_assert!(dual_gap_regularized(&spec, &a).unwrap() >= 0.0);
        let star = qre_solve(&spec, 1e-12, 100_000).unwrap().probs();
        prop_assert!(dual_gap_regularized(&spec, &star).unwrap() < 1e-9);
    }

    #[test]
    fn equilibrium_is_a_fixed_point((seed, n, _a, _b, r) in instance(), beta in 0.05f64..1.0, eta in 0.01f64..0.3) {
        let spec = spec(seed, n, r, beta);
        let cert = qre_solve(&spec, 1e-12, 100_000).unwrap();
        let next = egpo_step(&spec, &cert.logits, eta, &mut VectorEstimator::exact()).unwrap().next_logits;
        prop_assert!(max_diff(&policy_probs(&next).unwrap(), &cert.probs()) < 1e-10);
    }

    #[test]
    fn logit_shift_is_a_gauge((seed, n, _a, _b, r) in instance(), theta in logits(8), c in -50.0f64..50.0) {
        let spec = spec(seed, n, r, 0.1);
        let theta = &theta[..n];
        let shifted: Vec<f64> = theta.iter().map(|t| t + c).collect();
        let mut est = VectorEstimator::exact();
        let a = egpo_step(&spec, theta, 0.2, &mut est).unwrap().next_logits;
        let b = egpo_step(&spec, &shifted, 0.2, &mut est).unwrap().next_logits;
        prop_assert!(max_diff(&policy_probs(&a).unwrap(), &policy_probs(&b).unwrap()) < 1e-12);
    }

    #[test]
    fn ipo_gradient_matches_finite_differences((seed, n, rho, mu, r) in instance(), theta in logits(8)) {
        let spec = spec(seed, n, r, 0.5);
        let theta = &theta[..n];
        let sigma = SigmaOperator::product_pairs(&rho);
        let g = ipo_gradient(&spec, theta, &sigma, &mu).unwrap();
        let h = 1e-5;
        for i in 0..n {
            let mut t = theta.to_vec();
            t[i] += h;
            let up = ipo_loss(&spec, &t, &sigma, &mu).unwrap();
            t[i] -= 2.0 * h;
            let down = ipo_loss(&spec, &t, &sigma, &mu).unwrap();
            let fd = (up - down) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "coord {}: fd {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn sigma_is_symmetric_with_zero_rows(mu in (2usize..9).prop_flat_map(probs)) {
        let n = mu.len();
        for sigma in [SigmaOperator::uniform_pairs(n), SigmaOperator::product_pairs(&mu)] {
            for i in 0..n {
                let row: f64 = (0..n).map(|j| sigma.get(i, j)).sum();
                prop_assert!(row.abs() < 1e-14);
                for j in 0..n {
                    prop_assert_eq!(sigma.get(i, j), sigma.get(j, i));
                }
            }
            let ones = sigma.apply(&vec![1.0; n]).unwrap();
            prop_assert!(ones.iter().all(|x| x.abs() < 1e-14));
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(rows in prop::collection::vec(
        (0usize..1_000_000, prop::array::uniform5(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO)),
        0..20,
    )) {
        let rows: Vec<MetricRow> = rows
            .into_iter()
            .map(|(iter, v)| MetricRow {
                iter,
                kl_star_pi: v[0],
                kl_pi_star: v[1],
                dualgap_beta: v[2],
                dualgap: v[3],
                residual: v[4],
            })
            .collect();
        let back = parse_csv(&csv_string(&rows)).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            prop_assert_eq!(a.iter, b.iter);
            for m in ["kl_star_pi", "kl_pi_star", "dualgap_beta", "dualgap", "residual"] {
                prop_assert_eq!(a.get(m).unwrap().to_bits(), b.get(m).unwrap().to_bits());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_estimate_is_unbiased((seed, n, pi, _b, _r) in instance(), stream in 0u64..1000) {
        let p = generate_preference_matrix(seed, n).unwrap();
        let exact = p.mul_vec(&pi);
        let reps = 400;
        let n_samples = 50;
        let mut est = VectorEstimator::new(EstimatorMode::Sampled { n_samples }, RngStream::new(seed, stream));
        let mut sum = vec![0.0; n];
        for _ in 0..reps {
            for (s, x) in sum.iter_mut().zip(estimate_p_pi(&p, &pi, &mut est)) {
                *s += x;
            }
        }
        let total = (reps * n_samples) as f64;
        for y in 0..n {
            let mean = sum[y] / reps as f64;
            // Binomial standard error of the pooled comparisons; 5 SE bound.
            let se = (exact[y] * (1.0 - exact[y]) / total).sqrt().max(1e-3);
            prop_assert!((mean - exact[y]).abs() <= 5.0 * se, "coord {}: {} vs {}", y, mean, exact[y]);
        }
    }
}

#[test]
fn sampled_error_shrinks_as_inverse_root_n() {
    let p = generate_preference_matrix(3, 6).unwrap();
    let pi = policy_probs(&[0.3, -0.2, 1.0, 0.0, -1.1, 0.4]).unwrap();
    let exact = p.mul_vec(&pi);
    let rmse = |n_samples: usize| {
        let mut est = VectorEstimator::new(
            EstimatorMode::Sampled { n_samples },
            RngStream::new(8, n_samples as u64),
        );
        let reps = 300;
        let mut sq = 0.0;
        for _ in 0..reps {
            sq += estimate_p_pi(&p, &pi, &mut est)
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
        }
        (sq / (reps * exact.len()) as f64).sqrt()
    };
    let ratio = rmse(100) / rmse(1600);
    assert!((3.0..5.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn gaussian_estimate_has_requested_spread() {
    let p = generate_preference_matrix(1, 4).unwrap();
    let pi = vec![0.25; 4];
    let exact = p.mul_vec(&pi);
    let sigma = 0.3;
    let mut est = VectorEstimator::new(EstimatorMode::Gaussian { sigma }, RngStream::new(4, 1));
    let reps = 20_000;
    let mut sq = 0.0;
    for _ in 0..reps {
        sq += estimate_p_pi(&p, &pi, &mut est)
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    let sd = (sq / (reps * 4) as f64).sqrt();
    assert!((sd - sigma).abs() < 0.01, "{sd}");
}

#[test]
fn configs_in_repo_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(&path).unwrap();
            let cfg = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            count += 1;
        }
    }
    assert!(count >= 6);
}
