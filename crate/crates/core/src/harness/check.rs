//! The invariant suite behind `nashgame check`: quick, seeded versions of
//! every module property.

use crate::game::{
    best_response_regularized, dual_gap, dual_gap_regularized, generate_preference_matrix, kl,
    max_abs_diff, softmax, value, GameSpec, Side,
};
use crate::harness::config::reference_logits;
use crate::harness::output::{csv_string, parse_csv};
use crate::neural::mlp_init;
use crate::qre::{fixed_point_residual, mixture_fixed_point, qre_solve, qre_solve_from};
use crate::solvers::{
    egpo_step, egpo_step_via_ipo, ipo_gradient, nash_md_step, omd_step, online_ipo2_step,
    run_solver, Algorithm, SigmaOperator, SolverRunConfig,
};
use crate::stochastic::{sampled_ipo_gradient, EstimatorMode, RngStream, VectorEstimator};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("matrix_constant_sum", matrix_constant_sum),
    ("value_antisymmetry", value_antisymmetry),
    ("kl_nonnegative_pinsker", kl_pinsker),
    ("dual_gaps_nonnegative", dual_gaps_nonnegative),
    ("best_response_dominance", best_response_dominance),
    ("qre_certified_unique", qre_certified_unique),
    ("sigma_symmetric_zero_rows", sigma_structure),
    ("fixed_point_invariance", fixed_point_invariance),
    ("egpo_ipo_equivalence", egpo_ipo_equivalence),
    ("shift_gauge", shift_gauge),
    ("sampled_gradient_unbiased", sampled_gradient_unbiased),
    ("rng_determinism", rng_determinism),
    ("neural_gradient_fd", neural_gradient_fd),
    ("neural_snapshot_restore", neural_snapshot_restore),
    ("csv_round_trip", csv_round_trip),
    ("rerun_identity", rerun_identity),
];

pub fn run_checks() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
            }
        })
        .collect()
}

fn game(seed: u64, n: usize, beta: f64) -> GameSpec {
    GameSpec::new(
        generate_preference_matrix(seed, n).unwrap(),
        reference_logits(seed, n),
        beta,
    )
    .unwrap()
}

fn random_policy(rng: &mut RngStream, n: usize) -> Vec<f64> {
    softmax(
        &(0..n)
            .map(|_| 2.0 * rng.standard_normal())
            .collect::<Vec<_>>(),
    )
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matrix_constant_sum() -> Result<String, String> {
    for seed in 0..20 {
        let p = generate_preference_matrix(seed, 12).map_err(|e| e.to_string())?;
        for y in 0..12 {
            ensure(p.get(y, y) == 0.5, || {
                format!("seed {seed}: diagonal {y} is {}", p.get(y, y))
            })?;
            for z in 0..12 {
                let s = p.get(y, z) + p.get(z, y);
                ensure((s - 1.0).abs() <= 1e-12, || {
                    format!("seed {seed}: P+Pᵀ at ({y},{z}) = {s}")
                })?;
            }
        }
    }
    Ok("20 matrices".into())
}

fn value_antisymmetry() -> Result<String, String> {
    let p = generate_preference_matrix(1, 8).unwrap();
    let mut rng = RngStream::new(1, 0);
    for _ in 0..1000 {
        let (a, b) = (random_policy(&mut rng, 8), random_policy(&mut rng, 8));
        let s = value(&p, &a, &b).unwrap() + value(&p, &b, &a).unwrap();
        ensure((s - 1.0).abs() <= 1e-12, || format!("value sum {s}"))?;
    }
    Ok("1000 pairs".into())
}

fn kl_pinsker() -> Result<String, String> {
    let mut rng = RngStream::new(2, 0);
    for _ in 0..1000 {
        let (p, q) = (random_policy(&mut rng, 6), random_policy(&mut rng, 6));
        let d = kl(&p, &q).unwrap();
        let tv: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        ensure(d >= 0.0 && d + 1e-12 >= 2.0 * tv * tv, || {
            format!("KL {d} vs 2 TV² {}", 2.0 * tv * tv)
        })?;
    }
    Ok("1000 pairs".into())
}

fn dual_gaps_nonnegative() -> Result<String, String> {
    let spec = game(3, 7, 0.1);
    let mut rng = RngStream::new(3, 0);
    for _ in 0..500 {
        let pi = random_policy(&mut rng, 7);
        let g = dual_gap(spec.matrix(), &pi).unwrap();
        let gb = dual_gap_regularized(&spec, &pi).unwrap();
        ensure(g >= 0.0 && gb >= 0.0, || format!("gaps {g}, {gb}"))?;
    }
    let cert = qre_solve(&spec, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let at_star = dual_gap_regularized(&spec, &cert.probs()).unwrap();
    ensure(at_star < 1e-10, || {
        format!("DualGap_β at the QRE is {at_star}")
    })?;
    Ok(format!("500 policies; gap at QRE {at_star:.1e}"))
}

fn best_response_dominance() -> Result<String, String> {
    let spec = game(4, 5, 0.2);
    let mut rng = RngStream::new(4, 0);
    let pi = random_policy(&mut rng, 5);
    let br_max = best_response_regularized(&spec, &pi, Side::Max).unwrap();
    let br_min = best_response_regularized(&spec, &pi, Side::Min).unwrap();
    for _ in 0..2000 {
        let probe = random_policy(&mut rng, 5);
        let vmax = crate::game::regularized_value(&spec, &probe, &pi).unwrap();
        let vmin = crate::game::regularized_value(&spec, &pi, &probe).unwrap();
        ensure(vmax <= br_max.value + 1e-12, || {
            format!("probe beats max response: {vmax} > {}", br_max.value)
        })?;
        ensure(vmin >= br_min.value - 1e-12, || {
            format!("probe beats min response: {vmin} < {}", br_min.value)
        })?;
    }
    Ok("2000 probes".into())
}

fn qre_certified_unique() -> Result<String, String> {
    let spec = game(5, 10, 0.1);
    let a = qre_solve(&spec, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let init: Vec<f64> = (0..10).map(|i| 3.0 - i as f64).collect();
    let b = qre_solve_from(&spec, &init, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let r = fixed_point_residual(&spec, &a.logits);
    ensure(r <= 1e-12 && a.is_valid() && b.is_valid(), || {
        format!("residual {r}")
    })?;
    let d = max_abs_diff(&a.probs(), &b.probs());
    ensure(d < 1e-10, || format!("two initializations differ by {d}"))?;
    Ok(format!("residual {r:.1e}, spread {d:.1e}"))
}

fn sigma_structure() -> Result<String, String> {
    let mut rng = RngStream::new(6, 0);
    for s in [
        SigmaOperator::uniform_pairs(6),
        SigmaOperator::product_pairs(&random_policy(&mut rng, 6)),
    ] {
        for i in 0..6 {
            let row: f64 = (0..6).map(|j| s.get(i, j)).sum();
            ensure(row.abs() < 1e-15, || format!("row {i} sums to {row}"))?;
            for j in 0..6 {
                ensure(s.get(i, j) == s.get(j, i), || {
                    format!("asymmetric at ({i},{j})")
                })?;
            }
        }
    }
    Ok("uniform and product pairs".into())
}

fn fixed_point_invariance() -> Result<String, String> {
    let spec = game(7, 10, 0.1);
    let cert = qre_solve(&spec, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let mut est = VectorEstimator::exact();
    for (name, out) in [
        ("egpo", egpo_step(&spec, &cert.logits, 0.3, &mut est)),
        ("omd", omd_step(&spec, &cert.logits, 0.3, &mut est)),
        (
            "online_ipo2",
            online_ipo2_step(&spec, &cert.logits, 0.3, &mut est),
        ),
    ] {
        let next = out.map_err(|e| e.to_string())?.next_logits;
        let d = max_abs_diff(&next, &cert.logits);
        ensure(d < 1e-10, || format!("{name} moves the QRE by {d}"))?;
    }
    let mix = mixture_fixed_point(&spec, 0.125, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let next = nash_md_step(&spec, &mix.logits, 0.3, 0.125, &mut est)
        .map_err(|e| e.to_string())?
        .next_logits;
    let d = max_abs_diff(&next, &mix.logits);
    ensure(d < 1e-10, || {
        format!("nash_md moves its own fixed point by {d}")
    })?;
    Ok("egpo, omd, online_ipo2, nash_md".into())
}

fn egpo_ipo_equivalence() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let spec = game(seed, 10, 0.1);
        let (mut a, mut b) = (spec.ref_logits().to_vec(), spec.ref_logits().to_vec());
        let mut est = VectorEstimator::exact();
        for _ in 0..200 {
            a = egpo_step(&spec, &a, 0.1, &mut est).unwrap().next_logits;
            b = egpo_step_via_ipo(&spec, &b, 0.1, &mut est)
                .unwrap()
                .next_logits;
            worst = worst.max(max_abs_diff(&softmax(&a), &softmax(&b)));
        }
    }
    ensure(worst <= 1e-12, || format!("softmax gap {worst}"))?;
    Ok(format!("max softmax gap {worst:.1e}"))
}

fn shift_gauge() -> Result<String, String> {
    let spec = game(8, 6, 0.1);
    let theta = reference_logits(80, 6);
    let shifted: Vec<f64> = theta.iter().map(|t| t + 3.7).collect();
    let mut est = VectorEstimator::exact();
    let a = egpo_step(&spec, &theta, 0.2, &mut est).unwrap().next_logits;
    let b = egpo_step(&spec, &shifted, 0.2, &mut est)
        .unwrap()
        .next_logits;
    let d = max_abs_diff(&softmax(&a), &softmax(&b));
    ensure(d <= 1e-12, || format!("shift changes the policy by {d}"))?;
    Ok(format!("{d:.1e}"))
}

fn sampled_gradient_unbiased() -> Result<String, String> {
    let spec = game(9, 4, 0.5);
    let mut rng = RngStream::new(9, 0);
    let theta = reference_logits(90, 4);
    let mu = random_policy(&mut rng, 4);
    let exact = ipo_gradient(&spec, &theta, &SigmaOperator::uniform_pairs(4), &mu).unwrap();
    let mut est = VectorEstimator::new(
        EstimatorMode::Sampled { n_samples: 1 },
        RngStream::new(9, 1),
    );
    let m = 20_000;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..m {
        let g = sampled_ipo_gradient(&spec, &theta, &mu, 1, &mut est).unwrap();
        for k in 0..4 {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    for k in 0..4 {
        let mean = sum[k] / m as f64;
        let se = ((sq[k] / m as f64 - mean * mean) / m as f64).sqrt();
        ensure((mean - exact[k]).abs() <= 4.0 * se, || {
            format!("coordinate {k}: {mean} vs {} (se {se})", exact[k])
        })?;
    }
    Ok(format!("{m} samples"))
}

fn rng_determinism() -> Result<String, String> {
    let draw = |seed, stream| {
        let mut r = RngStream::new(seed, stream);
        (0..16).map(|_| r.uniform()).collect::<Vec<_>>()
    };
    ensure(draw(1, 2) == draw(1, 2), || {
        "same seed and stream differ".into()
    })?;
    ensure(draw(1, 2) != draw(1, 3), || "streams coincide".into())?;
    ensure(draw(1, 2) != draw(2, 2), || "seeds coincide".into())?;
    Ok("seed and stream separation".into())
}

fn neural_gradient_fd() -> Result<String, String> {
    let p = mlp_init(10, 10).unwrap();
    let mut rng = RngStream::new(10, 0);
    let up: Vec<f64> = (0..10).map(|_| rng.standard_normal()).collect();
    let grad = p.backward(&p.forward(), &up).map_err(|e| e.to_string())?;
    let base = p.params();
    let obj = |params: &[f64]| {
        let mut q = p.clone();
        q.set_params(params).unwrap();
        q.logits().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
    };
    for _ in 0..50 {
        let i = rng.index(base.len());
        let (mut a, mut b) = (base.clone(), base.clone());
        a[i] += 1e-6;
        b[i] -= 1e-6;
        let fd = (obj(&a) - obj(&b)) / 2e-6;
        let err = (fd - grad[i]).abs();
        ensure(
            err <= 1e-5 * fd.abs().max(grad[i].abs()) || err < 1e-9,
            || format!("param {i}: {fd} vs {}", grad[i]),
        )?;
    }
    Ok("50 parameters".into())
}

fn neural_snapshot_restore() -> Result<String, String> {
    let mut p = mlp_init(11, 10).unwrap();
    let before = p.logits();
    let snap = p.snapshot();
    p.descend(&vec![0.1; p.num_params()], 0.5)
        .map_err(|e| e.to_string())?;
    p.restore(&snap).map_err(|e| e.to_string())?;
    ensure(p.logits() == before, || "restore is not bit-exact".into())?;
    Ok("bit-exact".into())
}

fn csv_round_trip() -> Result<String, String> {
    let spec = game(12, 5, 0.1);
    let cert = qre_solve(&spec, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let rec = run_solver(
        &spec,
        &SolverRunConfig::new(Algorithm::Egpo, 0.1, 50),
        spec.ref_logits(),
        &cert,
    )
    .map_err(|e| e.to_string())?;
    let back = parse_csv(&csv_string(&rec.rows))?;
    ensure(back == rec.rows, || "parsed rows differ".into())?;
    Ok(format!("{} rows", back.len()))
}

fn rerun_identity() -> Result<String, String> {
    let spec = game(13, 6, 0.1);
    let cert = qre_solve(&spec, 1e-12, 1_000_000).map_err(|e| e.to_string())?;
    let cfg = SolverRunConfig::new(Algorithm::Egpo, 0.1, 100)
        .with_mode(EstimatorMode::Gaussian { sigma: 0.1 })
        .with_seed(5);
    let a = run_solver(&spec, &cfg, spec.ref_logits(), &cert).map_err(|e| e.to_string())?;
    let b = run_solver(&spec, &cfg, spec.ref_logits(), &cert).map_err(|e| e.to_string())?;
    ensure(csv_string(&a.rows) == csv_string(&b.rows), || {
        "CSV bytes differ".into()
    })?;
    Ok("byte-identical".into())
}
