//! Randomness: seeded streams, the Bernoulli preference oracle, noisy and
//! sample-based estimators of `Pπ`, and the sampled online-IPO gradients.
//!
//! Every draw in the crate comes from an [`RngStream`], a ChaCha8 generator
//! keyed by `(seed, stream_id)`. The generator and its seeding are pinned so
//! that reruns reproduce bit-for-bit.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::game::{GameSpec, PreferenceMatrix};

/// Identifies the generator behind [`RngStream`]. Bump if the algorithm or
/// seeding ever changes.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64/v1";

/// Seeded, stream-separated random source.
///
/// `(seed, stream_id)` and the number of words consumed fully determine the
/// next draw. Not shareable across threads; each run owns its streams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            counter: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of generator calls served so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.counter += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.counter += 1;
        self.inner.fill_bytes(dst)
    }
}

/// How `Pπ` is obtained in an update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorMode {
    Exact,
    /// `Pπ + ε`, `ε_y` i.i.d. `N(0, σ²)`.
    Gaussian {
        sigma: f64,
    },
    /// Bernoulli comparisons against draws from `π`.
    Sampled {
        n_samples: usize,
    },
}

impl EstimatorMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorMode::Exact => Ok(()),
            EstimatorMode::Gaussian { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            EstimatorMode::Gaussian { sigma } => Err(Error::config(format!(
                "gaussian sigma must be >= 0, got {sigma}"
            ))),
            EstimatorMode::Sampled { n_samples } if n_samples >= 1 => Ok(()),
            EstimatorMode::Sampled { .. } => {
                Err(Error::config("sampled mode needs n_samples >= 1"))
            }
        }
    }
}

/// An estimator mode bound to its random stream.
#[derive(Debug, Clone)]
pub struct VectorEstimator {
    pub mode: EstimatorMode,
    pub rng: RngStream,
    comparisons: u64,
}

impl VectorEstimator {
    pub fn new(mode: EstimatorMode, rng: RngStream) -> Self {
        Self {
            mode,
            rng,
            comparisons: 0,
        }
    }

    pub fn exact() -> Self {
        Self::new(EstimatorMode::Exact, RngStream::new(0, 0))
    }

    /// Preference queries issued through this estimator.
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    pub(crate) fn compare(&mut self, p: &PreferenceMatrix, y: usize, z: usize) -> f64 {
        self.comparisons += 1;
        bernoulli(&mut self.rng, p.get(y, z))
    }
}

fn bernoulli(rng: &mut RngStream, prob: f64) -> f64 {
    if rng.uniform() < prob {
        1.0
    } else {
        0.0
    }
}

/// One Bernoulli query of the preference oracle: 1 if `y` wins against `z`.
///
/// Queries are independent, so `I(y,z) + I(z,y) = 1` holds only in
/// expectation.
pub fn preference_sample(
    p: &PreferenceMatrix,
    y: usize,
    z: usize,
    rng: &mut RngStream,
) -> Result<u8> {
    let n = p.n();
    if y >= n || z >= n {
        return Err(Error::invalid(format!(
            "arm index out of range: ({y}, {z}) with n = {n}"
        )));
    }
    Ok(bernoulli(rng, p.get(y, z)) as u8)
}

fn categorical(pi: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(pi).expect("policy has positive finite mass")
}

/// Estimate of `Pπ` under the estimator's mode.
///
/// Sampled mode spends `n_samples` comparisons per coordinate.
pub fn estimate_p_pi(p: &PreferenceMatrix, pi: &[f64], est: &mut VectorEstimator) -> Vec<f64> {
    match est.mode {
        EstimatorMode::Exact => p.mul_vec(pi),
        EstimatorMode::Gaussian { sigma } => {
            let mut v = p.mul_vec(pi);
            if sigma > 0.0 {
                for x in &mut v {
                    *x += sigma * est.rng.standard_normal();
                }
            }
            v
        }
        EstimatorMode::Sampled { n_samples } => {
            let dist = categorical(pi);
            (0..p.n())
                .map(|y| {
                    let mut wins = 0.0;
                    for _ in 0..n_samples {
                        let z = dist.sample(&mut est.rng);
                        wins += est.compare(p, y, z);
                    }
                    wins / n_samples as f64
                })
                .collect()
        }
    }
}

/// Sample-mean gradient of the population IPO loss with pairs drawn
/// uniformly and the opponent `y''` drawn from `mu`.
///
/// Each summand is `2 d (e_y − e_{y'})` with
/// `d = (θ − θ_ref)_y − (θ − θ_ref)_{y'} − (I(y,y'') − I(y',y''))/β`.
pub fn sampled_ipo_gradient(
    spec: &GameSpec,
    logits: &[f64],
    mu: &[f64],
    n_samples: usize,
    est: &mut VectorEstimator,
) -> Result<Vec<f64>> {
    let n = spec.n();
    check_len(n, logits.len())?;
    check_len(n, mu.len())?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let dist = categorical(mu);
    let diff: Vec<f64> = logits
        .iter()
        .zip(spec.ref_logits())
        .map(|(a, b)| a - b)
        .collect();
    let mut grad = vec![0.0; n];
    for _ in 0..n_samples {
        let y = est.rng.index(n);
        let y2 = est.rng.index(n);
        let opp = dist.sample(&mut est.rng);
        let iy = est.compare(spec.matrix(), y, opp);
        let iy2 = est.compare(spec.matrix(), y2, opp);
        let d = diff[y] - diff[y2] - (iy - iy2) / spec.beta();
        grad[y] += 2.0 * d;
        grad[y2] -= 2.0 * d;
    }
    let scale = n_samples as f64;
    grad.iter_mut().for_each(|g| *g /= scale);
    Ok(grad)
}

/// Sample-mean gradient of the variance-reduced Online IPO 2 loss: pairs
/// drawn from `pi × pi`, target `(I(y,y') − ½)/β`.
pub fn sampled_ipo2_gradient(
    spec: &GameSpec,
    logits: &[f64],
    pi: &[f64],
    n_samples: usize,
    est: &mut VectorEstimator,
) -> Result<Vec<f64>> {
    let n = spec.n();
    check_len(n, logits.len())?;
    check_len(n, pi.len())?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let dist = categorical(pi);
    let diff: Vec<f64> = logits
        .iter()
        .zip(spec.ref_logits())
        .map(|(a, b)| a - b)
        .collect();
    let mut grad = vec![0.0; n];
    for _ in 0..n_samples {
        let y = dist.sample(&mut est.rng);
        let y2 = dist.sample(&mut est.rng);
        let i = est.compare(spec.matrix(), y, y2);
        let d = diff[y] - diff[y2] - (i - 0.5) / spec.beta();
        grad[y] += 2.0 * d;
        grad[y2] -= 2.0 * d;
    }
    let scale = n_samples as f64;
    grad.iter_mut().for_each(|g| *g /= scale);
    Ok(grad)
}

/// Monte Carlo estimate of `E‖X‖∞²` for `X ~ N(0, σ² I_d)` alongside the
/// sub-Gaussian bound `4σ² log(3d)`.
pub fn inf_norm_square_diagnostic(
    sigma: f64,
    d: usize,
    n_trials: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)> {
    if n_trials == 0 || d == 0 {
        return Err(Error::invalid("need n_trials >= 1 and d >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let bound = 4.0 * sigma * sigma * (3.0 * d as f64).ln();
    if sigma == 0.0 {
        return Ok((0.0, bound));
    }
    let mut acc = 0.0;
    for _ in 0..n_trials {
        let mut m: f64 = 0.0;
        for _ in 0..d {
            m = m.max((sigma * rng.standard_normal()).abs());
        }
        acc += m * m;
    }
    Ok((acc / n_trials as f64, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate_preference_matrix;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |seed, stream| {
            let mut r = RngStream::new(seed, stream);
            (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 1), draw(7, 1));
        assert_ne!(draw(7, 1), draw(7, 2));
        assert_ne!(draw(7, 1), draw(8, 1));
        let mut r = RngStream::new(1, 1);
        r.uniform();
        r.standard_normal();
        assert!(r.counter() >= 2);
    }

    #[test]
    fn degenerate_and_diagonal_preferences() {
        let p = PreferenceMatrix::from_rows(&[vec![0.5, 1.0], vec![0.0, 0.5]]).unwrap();
        let mut rng = RngStream::new(3, 0);
        for _ in 0..1000 {
            assert_eq!(preference_sample(&p, 0, 1, &mut rng).unwrap(), 1);
            assert_eq!(preference_sample(&p, 1, 0, &mut rng).unwrap(), 0);
        }
        let draws = 100_000;
        let wins: u32 = (0..draws)
            .map(|_| preference_sample(&p, 1, 1, &mut rng).unwrap() as u32)
            .sum();
        let mean = wins as f64 / draws as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        assert!(preference_sample(&p, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn exact_and_zero_noise_estimates_match_matvec() {
        let p = generate_preference_matrix(5, 6).unwrap();
        let pi = crate::game::policy_probs(&[0.1, -0.4, 1.0, 0.0, 0.3, -2.0]).unwrap();
        let want = p.mul_vec(&pi);
        let mut ex = VectorEstimator::exact();
        assert_eq!(estimate_p_pi(&p, &pi, &mut ex), want);
        let mut g =
            VectorEstimator::new(EstimatorMode::Gaussian { sigma: 0.0 }, RngStream::new(1, 1));
        assert_eq!(estimate_p_pi(&p, &pi, &mut g), want);
        assert_eq!(g.rng.counter(), 0);
    }

    #[test]
    fn sampled_estimate_within_binomial_band() {
        let p = generate_preference_matrix(9, 3).unwrap();
        let pi = [0.2, 0.5, 0.3];
        let mut est = VectorEstimator::new(
            EstimatorMode::Sampled { n_samples: 100_000 },
            RngStream::new(2, 9),
        );
        let got = estimate_p_pi(&p, &pi, &mut est);
        let want = p.mul_vec(&pi);
        let err = crate::game::max_abs_diff(&got, &want);
        assert!(err < 0.01, "L∞ error {err}");
        assert_eq!(est.comparisons(), 300_000);
    }

    #[test]
    fn sampled_gradients_are_mean_zero() {
        let p = generate_preference_matrix(4, 5).unwrap();
        let spec = GameSpec::new(p, vec![0.2, -0.3, 0.0, 1.0, 0.5], 0.1).unwrap();
        let logits = [1.0, 0.0, -1.0, 0.5, 0.25];
        let mu = crate::game::policy_probs(&logits).unwrap();
        let mut est = VectorEstimator::new(
            EstimatorMode::Sampled { n_samples: 100 },
            RngStream::new(1, 2),
        );
        for _ in 0..20 {
            let g = sampled_ipo_gradient(&spec, &logits, &mu, 100, &mut est).unwrap();
            assert!(g.iter().sum::<f64>().abs() < 1e-12);
            let g2 = sampled_ipo2_gradient(&spec, &logits, &mu, 100, &mut est).unwrap();
            assert!(g2.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn inf_norm_diagnostic_examples() {
        let mut rng = RngStream::new(0, 5);
        assert_eq!(
            inf_norm_square_diagnostic(0.0, 4, 10, &mut rng).unwrap(),
            (0.0, 0.0)
        );
        let (m, b) = inf_norm_square_diagnostic(1.0, 1, 100_000, &mut rng).unwrap();
        assert!((m - 1.0).abs() < 0.03, "scalar second moment {m}");
        assert!((b - 4.0 * 3f64.ln()).abs() < 1e-12);
        let (m, b) = inf_norm_square_diagnostic(1.0, 10, 100_000, &mut rng).unwrap();
        assert!(m <= b && (b - 4.0 * 30f64.ln()).abs() < 1e-12);
    }
}
