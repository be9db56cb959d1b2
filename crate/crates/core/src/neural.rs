//! A three-layer ReLU MLP policy over the arms, trained through the
//! logit-space online-IPO gradients with hand-written backpropagation.
//!
//! The network has no context: it maps one frozen Gaussian input vector to
//! the arm logits. The reference policy is the frozen output of the freshly
//! initialized network, so a neural run plays the game whose reference
//! logits are `f_ref`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{softmax, GameSpec, PreferenceMatrix};
use crate::qre::{mixture_logits, qre_solve, EquilibriumCertificate};
use crate::record::{MetricRow, RunRecord, RunStatus};
use crate::solvers::{
    apply_product, ipo_residual, optimizer_lr, uniform_ipo_gradient, Algorithm, SolverRunConfig,
    ESTIMATOR_STREAM,
};
use crate::stochastic::{sampled_ipo2_gradient, EstimatorMode, RngStream, VectorEstimator};

pub const INPUT_DIM: usize = 10;
pub const HIDDEN: usize = 10;

/// Stream id of the initialization draws.
pub const INIT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    fan_in: usize,
    fan_out: usize,
    /// row-major `fan_out × fan_in`
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Linear {
    fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| std * rng.standard_normal())
            .collect();
        Self {
            fan_in,
            fan_out,
            w,
            b: vec![0.0; fan_out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.fan_in)
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn len(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Activations of one forward pass, tied to the parameter version that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    version: u64,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Flat copy of all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSnapshot(Vec<f64>);

impl ParamSnapshot {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    input: Vec<f64>,
    layers: [Linear; 3],
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub n_arms: usize,
}

/// Checkpoint file layout: shape header, frozen input, flat parameters in
/// the order W1, b1, W2, b2, W3, b3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub shape: MlpShape,
    pub input: Vec<f64>,
    pub params: Vec<f64>,
}

/// Xavier-normal weights, zero biases, then the input drawn from `N(0, I)`.
pub fn mlp_init(seed: u64, n_arms: usize) -> Result<MlpPolicy> {
    if n_arms < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 arms, got {n_arms}"
        )));
    }
    let mut rng = RngStream::new(seed, INIT_STREAM);
    let l1 = Linear::xavier(INPUT_DIM, HIDDEN, &mut rng);
    let l2 = Linear::xavier(HIDDEN, HIDDEN, &mut rng);
    let l3 = Linear::xavier(HIDDEN, n_arms, &mut rng);
    let input = (0..INPUT_DIM).map(|_| rng.standard_normal()).collect();
    Ok(MlpPolicy {
        input,
        layers: [l1, l2, l3],
        version: 0,
    })
}

impl MlpPolicy {
    pub fn n_arms(&self) -> usize {
        self.layers[2].fan_out
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input_dim: INPUT_DIM,
            hidden: HIDDEN,
            n_arms: self.n_arms(),
        }
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::len).sum()
    }

    /// Bumped on every parameter change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn forward(&self) -> ForwardPass {
        let [l1, l2, l3] = &self.layers;
        let z1 = l1.apply(&self.input);
        let h1 = relu(&z1);
        let z2 = l2.apply(&h1);
        let h2 = relu(&z2);
        let logits = l3.apply(&h2);
        ForwardPass {
            version: self.version,
            z1,
            h1,
            z2,
            h2,
            logits,
        }
    }

    pub fn logits(&self) -> Vec<f64> {
        self.forward().logits
    }

    /// Gradient of `upstreamᵀ·logits` with respect to the flat parameters.
    pub fn backward(&self, pass: &ForwardPass, upstream: &[f64]) -> Result<Vec<f64>> {
        if pass.version != self.version {
            return Err(Error::State(format!(
                "forward pass is from parameter version {}, policy is at {}",
                pass.version, self.version
            )));
        }
        check_len(self.n_arms(), upstream.len())?;
        let [_, l2, l3] = &self.layers;
        let mut grad = Vec::with_capacity(self.num_params());

        let dh2 = transpose_apply(l3, upstream);
        let dz2: Vec<f64> = dh2
            .iter()
            .zip(&pass.z2)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let dh1 = transpose_apply(l2, &dz2);
        let dz1: Vec<f64> = dh1
            .iter()
            .zip(&pass.z1)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();

        push_outer(&mut grad, &dz1, &self.input);
        grad.extend_from_slice(&dz1);
        push_outer(&mut grad, &dz2, &pass.h1);
        grad.extend_from_slice(&dz2);
        push_outer(&mut grad, upstream, &pass.h2);
        grad.extend_from_slice(upstream);
        Ok(grad)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len(self.num_params(), params.len())?;
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.w.len());
            let (b, r) = r.split_at(l.b.len());
            l.w.copy_from_slice(w);
            l.b.copy_from_slice(b);
            rest = r;
        }
        self.version += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot(self.params())
    }

    pub fn restore(&mut self, snap: &ParamSnapshot) -> Result<()> {
        self.set_params(&snap.0)
    }

    /// `params −= lr · grad`.
    pub fn descend(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        check_len(self.num_params(), grad.len())?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iter: 0,
                what: format!("parameter gradient[{i}] = {}", grad[i]),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            for p in l.w.iter_mut().chain(l.b.iter_mut()) {
                *p -= lr * grad[k];
                k += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Multiplies the last layer's weights and bias by `c`.
    pub fn scale_output_layer(&mut self, c: f64) {
        let l3 = &mut self.layers[2];
        l3.w.iter_mut().chain(l3.b.iter_mut()).for_each(|p| *p *= c);
        self.version += 1;
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.layers[layer].w
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.layers[layer].b
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            shape: self.shape(),
            input: self.input.clone(),
            params: self.params(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.shape.input_dim != INPUT_DIM || ck.shape.hidden != HIDDEN {
            return Err(Error::invalid(format!(
                "checkpoint shape {}x{} does not match the {INPUT_DIM}x{HIDDEN} architecture",
                ck.shape.input_dim, ck.shape.hidden
            )));
        }
        check_len(INPUT_DIM, ck.input.len())?;
        let n = ck.shape.n_arms;
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 arms, got {n}")));
        }
        let zero = |i, o| Linear {
            fan_in: i,
            fan_out: o,
            w: vec![0.0; i * o],
            b: vec![0.0; o],
        };
        let mut p = MlpPolicy {
            input: ck.input.clone(),
            layers: [
                zero(INPUT_DIM, HIDDEN),
                zero(HIDDEN, HIDDEN),
                zero(HIDDEN, n),
            ],
            version: 0,
        };
        p.set_params(&ck.params)?;
        p.version = 0;
        Ok(p)
    }
}

fn transpose_apply(l: &Linear, g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; l.fan_in];
    for (row, gi) in l.w.chunks_exact(l.fan_in).zip(g) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * gi;
        }
    }
    out
}

fn push_outer(out: &mut Vec<f64>, a: &[f64], b: &[f64]) {
    for ai in a {
        out.extend(b.iter().map(|bj| ai * bj));
    }
}

/// What a neural step produced, in logit space.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralStepOutcome {
    /// `f` at the EGPO half-step parameters.
    pub half_logits: Option<Vec<f64>>,
    pub noise_draws_consumed: u64,
}

/// Logit-space online-IPO gradient for `algorithm` at logits `f`.
fn logit_gradient(
    spec: &GameSpec,
    algorithm: Algorithm,
    f: &[f64],
    mu: &[f64],
    est: &mut VectorEstimator,
) -> Result<Vec<f64>> {
    match algorithm {
        Algorithm::OnlineIpo2 => match est.mode {
            EstimatorMode::Sampled { n_samples } => {
                sampled_ipo2_gradient(spec, f, mu, n_samples, est)
            }
            _ => {
                let p_mu = crate::stochastic::estimate_p_pi(spec.matrix(), mu, est);
                let r = ipo_residual(spec, f, &p_mu);
                Ok(apply_product(mu, &r).into_iter().map(|x| 2.0 * x).collect())
            }
        },
        _ => uniform_ipo_gradient(spec, f, mu, est),
    }
}

fn descend_through(policy: &mut MlpPolicy, pass: &ForwardPass, g: &[f64], lr: f64) -> Result<()> {
    let grad = policy.backward(pass, g)?;
    policy.descend(&grad, lr)
}

/// One neural update of `policy`; `spec` must carry the frozen reference
/// network output as its reference logits.
///
/// EGPO snapshots the parameters, takes the half-step, reads `π^{t+1/2}`,
/// restores and takes the full step from the snapshot with `μ = π^{t+1/2}`.
pub fn neural_step(
    spec: &GameSpec,
    policy: &mut MlpPolicy,
    algorithm: Algorithm,
    eta: f64,
    gamma: f64,
    est: &mut VectorEstimator,
) -> Result<NeuralStepOutcome> {
    check_len(spec.n(), policy.n_arms())?;
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let start = est.rng.counter();
    let lr = optimizer_lr(spec, eta);
    let pass = policy.forward();
    let f = pass.logits.clone();
    let pi = softmax(&f);
    let mut half_logits = None;
    match algorithm {
        Algorithm::Egpo => {
            let snap = policy.snapshot();
            let g = logit_gradient(spec, algorithm, &f, &pi, est)?;
            descend_through(policy, &pass, &g, lr)?;
            let half = policy.logits();
            let pi_half = softmax(&half);
            policy.restore(&snap)?;
            let pass = policy.forward();
            let g = logit_gradient(spec, algorithm, &f, &pi_half, est)?;
            descend_through(policy, &pass, &g, lr)?;
            half_logits = Some(half);
        }
        Algorithm::Omd | Algorithm::OnlineIpo2 => {
            let g = logit_gradient(spec, algorithm, &f, &pi, est)?;
            descend_through(policy, &pass, &g, lr)?;
        }
        Algorithm::NashMd => {
            let opp = softmax(&mixture_logits(spec, &f, gamma));
            let g = logit_gradient(spec, algorithm, &f, &opp, est)?;
            descend_through(policy, &pass, &g, lr)?;
        }
        Algorithm::NashMdPg => {
            return Err(Error::invalid("nash_md_pg has no neural online-IPO form"));
        }
    }
    Ok(NeuralStepOutcome {
        half_logits,
        noise_draws_consumed: est.rng.counter() - start,
    })
}

/// A finished neural run.
#[derive(Debug, Clone)]
pub struct NeuralRun {
    pub record: RunRecord,
    pub policy: MlpPolicy,
    /// Game with the frozen initial network output as reference.
    pub spec: GameSpec,
}

/// Trains a freshly initialized network on `matrix`. `config.seed` drives
/// both the initialization and the estimator, on separate streams.
pub fn run_neural(
    matrix: &PreferenceMatrix,
    beta: f64,
    config: &SolverRunConfig,
    qre_tol: f64,
) -> Result<NeuralRun> {
    if config.algorithm == Algorithm::NashMdPg {
        return Err(Error::config(
            "nash_md_pg is not available for the neural policy",
        ));
    }
    let mut policy = mlp_init(config.seed, matrix.n())?;
    let f_ref = policy.logits();
    let spec = GameSpec::new(matrix.clone(), f_ref, beta)?;
    let warnings = config.validate(beta)?;
    let cert = qre_solve(&spec, qre_tol, crate::qre::DEFAULT_MAX_ITERS)?;
    let record = train(&spec, &mut policy, config, &cert, warnings)?;
    Ok(NeuralRun {
        record,
        policy,
        spec,
    })
}

fn train(
    spec: &GameSpec,
    policy: &mut MlpPolicy,
    config: &SolverRunConfig,
    cert: &EquilibriumCertificate,
    warnings: Vec<String>,
) -> Result<RunRecord> {
    let started = Instant::now();
    let gamma = config.mixture_gamma.resolve(config.eta, spec.beta());
    let mut est = VectorEstimator::new(config.mode, RngStream::new(config.seed, ESTIMATOR_STREAM));
    let star = &cert.logits;
    let mut f = policy.logits();
    let mut rows = vec![MetricRow::evaluate(spec, star, 0, &f)];
    let mut half_rows = Vec::new();
    let mut status = RunStatus::Ok;
    let mut noise_draws = 0;
    for t in 0..config.iters {
        let out = match neural_step(spec, policy, config.algorithm, config.eta, gamma, &mut est) {
            Ok(out) => out,
            Err(Error::NonFinite { what, .. }) => {
                status = RunStatus::Diverged {
                    iter: t + 1,
                    reason: what,
                };
                break;
            }
            Err(e) => return Err(e),
        };
        noise_draws += out.noise_draws_consumed;
        if config.record_half && t % config.metric_every == 0 {
            if let Some(h) = &out.half_logits {
                half_rows.push(MetricRow::evaluate(spec, star, t, h));
            }
        }
        f = policy.logits();
        let it = t + 1;
        if it % config.metric_every == 0 || it == config.iters {
            let row = MetricRow::evaluate(spec, star, it, &f);
            rows.push(row);
            if !row.is_finite() {
                status = RunStatus::Diverged {
                    iter: it,
                    reason: "non-finite metric".into(),
                };
                break;
            }
        }
    }
    Ok(RunRecord {
        label: format!("neural_{}", config.algorithm.name()),
        config: config.clone(),
        n_arms: spec.n(),
        beta: spec.beta(),
        certificate: Some(cert.clone()),
        rows,
        half_rows,
        final_logits: f,
        checkpoint: None,
        comparisons: est.comparisons(),
        noise_draws,
        warnings,
        status,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate_preference_matrix;
    use crate::qre::fixed_point_residual;

    fn policy() -> MlpPolicy {
        mlp_init(5, 10).unwrap()
    }

    /// Plain matrix-vector recomputation of the forward pass.
    fn oracle_forward(p: &MlpPolicy) -> Vec<f64> {
        let mut h = p.input().to_vec();
        for layer in 0..3 {
            let w = p.layer_weights(layer);
            let b = p.layer_biases(layer);
            let out = b.len();
            let inp = w.len() / out;
            let mut z = vec![0.0; out];
            for i in 0..out {
                z[i] = b[i];
                for j in 0..inp {
                    z[i] += w[i * inp + j] * h[j];
                }
            }
            if layer < 2 {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        h
    }

    #[test]
    fn parameter_count_and_determinism() {
        let p = policy();
        assert_eq!(p.num_params(), 10 * 10 + 10 + 10 * 10 + 10 + 10 * 10 + 10);
        assert_eq!(p.params(), policy().params());
        assert_ne!(p.params(), mlp_init(6, 10).unwrap().params());
        assert!((0..3).all(|l| p.layer_biases(l).iter().all(|&b| b == 0.0)));
        assert!(mlp_init(1, 1).is_err());
    }

    #[test]
    fn xavier_variance_within_20_percent() {
        let p = mlp_init(9, 100).unwrap();
        for (layer, (fi, fo)) in [(10, 10), (10, 10), (10, 100)].into_iter().enumerate() {
            let w = p.layer_weights(layer);
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
            let want = 2.0 / (fi + fo) as f64;
            assert!(
                (var / want - 1.0).abs() < 0.2,
                "layer {layer}: {var} vs {want}"
            );
        }
    }

    #[test]
    fn forward_matches_oracle() {
        let p = policy();
        let f = p.logits();
        for (a, b) in f.iter().zip(oracle_forward(&p)) {
            assert!((a - b).abs() < 1e-14);
        }
        let mut q = p.clone();
        q.scale_output_layer(2.0);
        for (a, b) in q.logits().iter().zip(&f) {
            assert_eq!(*a, 2.0 * b);
        }
        let mut z = p.clone();
        z.set_params(&vec![0.0; p.num_params()]).unwrap();
        assert!(z.logits().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        let p = policy();
        let mut rng = RngStream::new(3, 0);
        let upstream: Vec<f64> = (0..10).map(|_| rng.standard_normal()).collect();
        let grad = p.backward(&p.forward(), &upstream).unwrap();
        let base = p.params();
        let objective = |params: &[f64]| {
            let mut q = p.clone();
            q.set_params(params).unwrap();
            q.logits()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let h = 1e-6;
        for k in 0..50 {
            // every layer represented: first draws cover each block
            let idx = match k {
                0 => 3,
                1 => 105,
                2 => 150,
                3 => 215,
                4 => 250,
                5 => 325,
                _ => rng.index(base.len()),
            };
            let mut plus = base.clone();
            plus[idx] += h;
            let mut minus = base.clone();
            minus[idx] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / grad[idx].abs().max(fd.abs()).max(1e-8);
            assert!(
                rel <= 1e-5 || (fd - grad[idx]).abs() < 1e-9,
                "param {idx}: fd {fd} vs {}",
                grad[idx]
            );
        }
        assert!(p
            .backward(&p.forward(), &[0.0; 10])
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn stale_forward_is_rejected() {
        let mut p = policy();
        let pass = p.forward();
        p.scale_output_layer(1.0);
        assert!(matches!(
            p.backward(&pass, &[1.0; 10]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn snapshot_restore_is_bit_exact() {
        let mut p = policy();
        let before = p.logits();
        let snap = p.snapshot();
        let g = vec![0.3; p.num_params()];
        p.descend(&g, 0.1).unwrap();
        assert_ne!(p.logits(), before);
        p.restore(&snap).unwrap();
        assert_eq!(p.logits(), before);
        assert_eq!(p.snapshot(), snap);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = policy();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let q = MlpPolicy::from_checkpoint(&back).unwrap();
        assert_eq!(q.logits(), p.logits());
        let mut bad = back.clone();
        bad.params.pop();
        assert!(MlpPolicy::from_checkpoint(&bad).is_err());
    }

    fn neural_spec(p: &MlpPolicy, beta: f64) -> GameSpec {
        GameSpec::new(
            generate_preference_matrix(2, p.n_arms()).unwrap(),
            p.logits(),
            beta,
        )
        .unwrap()
    }

    #[test]
    fn egpo_half_step_matters_and_omd_matches_it() {
        let p = policy();
        let spec = neural_spec(&p, 0.1);
        let mut egpo = p.clone();
        let out = neural_step(
            &spec,
            &mut egpo,
            Algorithm::Egpo,
            0.3,
            0.0,
            &mut VectorEstimator::exact(),
        )
        .unwrap();
        let mut omd = p.clone();
        neural_step(
            &spec,
            &mut omd,
            Algorithm::Omd,
            0.3,
            0.0,
            &mut VectorEstimator::exact(),
        )
        .unwrap();
        // the OMD update is exactly EGPO's half-step
        assert_eq!(omd.logits(), out.half_logits.unwrap());
        assert_ne!(egpo.params(), omd.params());
    }

    #[test]
    fn fixed_point_does_not_move() {
        // at an indifferent game with f_ref = f − 0.5/β, the residual vanishes
        let p = policy();
        let beta = 0.1;
        let f_ref: Vec<f64> = p.logits().iter().map(|x| x - 0.5 / beta).collect();
        let spec = GameSpec::new(PreferenceMatrix::indifferent(10), f_ref, beta).unwrap();
        assert!(fixed_point_residual(&spec, &p.logits()) < 1e-12);
        for alg in [Algorithm::Egpo, Algorithm::Omd, Algorithm::OnlineIpo2] {
            let mut q = p.clone();
            neural_step(&spec, &mut q, alg, 0.3, 0.0, &mut VectorEstimator::exact()).unwrap();
            for (a, b) in q.params().iter().zip(p.params()) {
                assert!((a - b).abs() < 1e-12, "{alg}");
            }
        }
    }

    #[test]
    fn nash_md_pg_is_rejected() {
        let mut p = policy();
        let spec = neural_spec(&p, 0.1);
        assert!(neural_step(
            &spec,
            &mut p,
            Algorithm::NashMdPg,
            0.1,
            0.1,
            &mut VectorEstimator::exact()
        )
        .is_err());
    }
}
