//! Preference games: matrices, softmax policies, values, divergences and
//! duality gaps.
//!
//! Everything here is a pure function of its inputs. Probability vectors are
//! plain `&[f64]` slices; logit vectors likewise. Policies derived from logits
//! are always computed with max-subtraction so that very small `beta` (and
//! therefore logits in the thousands) stays finite in double precision.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::stochastic::RngStream;

/// Tolerance for the constant-sum identity `P + Pᵀ = 1`.
pub const CONSTANT_SUM_TOL: f64 = 1e-12;

/// Stream id used when drawing preference matrices from a seed.
pub const MATRIX_STREAM: u64 = 0x6d61_7472;

/// Win-probability matrix; entry `(y, y')` is the probability that `y` is
/// preferred over `y'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct PreferenceMatrix {
    n: usize,
    entries: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl TryFrom<RawMatrix> for PreferenceMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        PreferenceMatrix::new(raw.n, raw.entries)
    }
}

impl PreferenceMatrix {
    /// Validates and wraps a row-major `n × n` matrix.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("preference matrix needs at least one arm"));
        }
        check_len(n * n, entries.len())?;
        for y in 0..n {
            if entries[y * n + y] != 0.5 {
                return Err(Error::invalid(format!(
                    "diagonal entry ({y},{y}) is {} instead of 0.5",
                    entries[y * n + y]
                )));
            }
            for z in 0..n {
                let v = entries[y * n + z];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "entry ({y},{z}) = {v} is outside [0,1]"
                    )));
                }
                let sum = v + entries[z * n + y];
                if (sum - 1.0).abs() > CONSTANT_SUM_TOL {
                    return Err(Error::invalid(format!(
                        "entries ({y},{z}) and ({z},{y}) sum to {sum}, not 1"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    /// Builds a matrix from a row-major list of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            check_len(n, row.len())?;
            entries.extend_from_slice(row);
        }
        Self::new(n, entries)
    }

    /// Every pair tied at one half.
    pub fn indifferent(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.5; n * n],
        }
    }

    /// Cyclic rock-paper-scissors preferences on three arms.
    pub fn rock_paper_scissors() -> Self {
        Self::from_rows(&[
            vec![0.5, 1.0, 0.0],
            vec![0.0, 0.5, 1.0],
            vec![1.0, 0.0, 0.5],
        ])
        .expect("rock-paper-scissors is a valid preference matrix")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, y: usize, z: usize) -> f64 {
        self.entries[y * self.n + z]
    }

    /// `P π`: probability that each arm beats a draw from `pi`.
    pub fn mul_vec(&self, pi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(pi.len(), self.n);
        self.entries
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(pi).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Pᵀ π`.
    pub fn tmul_vec(&self, pi: &[f64]) -> Vec<f64> {
        debug_assert_eq!(pi.len(), self.n);
        let mut out = vec![0.0; self.n];
        for (row, &w) in self.entries.chunks_exact(self.n).zip(pi) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * w;
            }
        }
        out
    }
}

/// Draws a preference matrix whose strict lower triangle is i.i.d.
/// `Uniform[0,1]`, with diagonal one half and the upper triangle filled by
/// complement. Deterministic per seed.
pub fn generate_preference_matrix(seed: u64, n: usize) -> Result<PreferenceMatrix> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 arms, got {n}")));
    }
    let mut rng = RngStream::new(seed, MATRIX_STREAM);
    let mut entries = vec![0.5; n * n];
    for y in 1..n {
        for z in 0..y {
            let u = rng.uniform();
            entries[y * n + z] = u;
            entries[z * n + y] = 1.0 - u;
        }
    }
    PreferenceMatrix::new(n, entries)
}

/// Softmax policy over `n` arms, parametrized by raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        ensure_finite(&logits, "logit")?;
        Ok(Self { logits })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            logits: vec![0.0; n],
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probs(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    /// Logits shifted to zero mean; the canonical representative of the
    /// policy's gauge class.
    pub fn centered_logits(&self) -> Vec<f64> {
        centered(&self.logits)
    }
}

/// The KL-regularized game: preferences, reference policy and `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    p: PreferenceMatrix,
    ref_logits: Vec<f64>,
    beta: f64,
    ref_log_probs: Vec<f64>,
    ref_probs: Vec<f64>,
}

impl GameSpec {
    pub fn new(p: PreferenceMatrix, ref_logits: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta must be a positive real, got {beta}"
            )));
        }
        check_len(p.n(), ref_logits.len())?;
        ensure_finite(&ref_logits, "reference logit")?;
        let ref_log_probs = log_softmax(&ref_logits);
        let ref_probs = ref_log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self {
            p,
            ref_logits,
            beta,
            ref_log_probs,
            ref_probs,
        })
    }

    /// Game with a uniform reference policy.
    pub fn with_uniform_ref(p: PreferenceMatrix, beta: f64) -> Result<Self> {
        let n = p.n();
        Self::new(p, vec![0.0; n], beta)
    }

    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn matrix(&self) -> &PreferenceMatrix {
        &self.p
    }

    pub fn ref_logits(&self) -> &[f64] {
        &self.ref_logits
    }

    pub fn ref_probs(&self) -> &[f64] {
        &self.ref_probs
    }

    pub fn ref_log_probs(&self) -> &[f64] {
        &self.ref_log_probs
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `KL(pi || pi_ref)` evaluated against the reference log-probabilities,
    /// so reference entries that underflow to zero do not blow up.
    pub fn kl_to_ref(&self, pi: &[f64]) -> f64 {
        kl_against_log(pi, &self.ref_log_probs)
    }
}

/// Which player's best response to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `argmax_{π'} V_β(π', π)`
    Max,
    /// `argmin_{π''} V_β(π, π'')`
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Softmax probabilities of `logits`; rejects non-finite input.
pub fn policy_probs(logits: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(logits, "logit")?;
    Ok(softmax(logits))
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = max_of(logits);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// `log Σ exp(v_i)` with max-subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = max_of(v);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log Σ_y w_y exp(v_y)` given `log w`.
fn log_weighted_sum_exp(log_w: &[f64], v: &[f64]) -> f64 {
    let shifted: Vec<f64> = log_w.iter().zip(v).map(|(a, b)| a + b).collect();
    log_sum_exp(&shifted)
}

pub(crate) fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn ensure_finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!(
            "{what} {i} is not finite ({})",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_prob_vector(p: &[f64], name: &str) -> Result<()> {
    if let Some(i) = p.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!(
            "{name}[{i}] = {} is not a probability",
            p[i]
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// `KL(p || q) = Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len())?;
    check_prob_vector(p, "p")?;
    check_prob_vector(q, "q")?;
    let mut acc = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b == 0.0 {
                return Err(Error::InfiniteDivergence { index: i });
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// KL divergence against a distribution given by its log-probabilities.
pub(crate) fn kl_against_log(p: &[f64], log_q: &[f64]) -> f64 {
    let acc: f64 = p
        .iter()
        .zip(log_q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &lq)| a * (a.ln() - lq))
        .sum();
    acc.max(0.0)
}

/// `KL(π_a || π_b)` for two softmax policies, computed in log space.
pub fn kl_logits(a: &[f64], b: &[f64]) -> f64 {
    let la = log_softmax(a);
    let lb = log_softmax(b);
    let acc: f64 = la.iter().zip(&lb).map(|(x, y)| x.exp() * (x - y)).sum();
    acc.max(0.0)
}

/// `π₁ᵀ P π₂`.
pub fn value(p: &PreferenceMatrix, pi1: &[f64], pi2: &[f64]) -> Result<f64> {
    check_len(p.n(), pi1.len())?;
    check_len(p.n(), pi2.len())?;
    Ok(dot(pi1, &p.mul_vec(pi2)))
}

/// `π₁ᵀ P π₂ − β KL(π₁ || π_ref) + β KL(π₂ || π_ref)`.
pub fn regularized_value(spec: &GameSpec, pi1: &[f64], pi2: &[f64]) -> Result<f64> {
    let v = value(spec.matrix(), pi1, pi2)?;
    let kl1 = kl(pi1, spec.ref_probs())?;
    let kl2 = kl(pi2, spec.ref_probs())?;
    Ok(v - spec.beta() * kl1 + spec.beta() * kl2)
}

/// Closed-form best response in the regularized game.
///
/// The maximizer facing `pi` plays logits `θ_ref + Pπ/β` and attains
/// `β log Σ π_ref e^{(Pπ)/β} + β KL(π||π_ref)`; the minimizer plays
/// `θ_ref − Pᵀπ/β` and attains `−β log Σ π_ref e^{−(Pᵀπ)/β} − β KL(π||π_ref)`.
pub fn best_response_regularized(spec: &GameSpec, pi: &[f64], side: Side) -> Result<BestResponse> {
    check_len(spec.n(), pi.len())?;
    check_prob_vector(pi, "pi")?;
    let beta = spec.beta();
    let kl_pi = spec.kl_to_ref(pi);
    let (scaled, sign) = match side {
        Side::Max => (spec.matrix().mul_vec(pi), 1.0),
        Side::Min => (spec.matrix().tmul_vec(pi), -1.0),
    };
    let scaled: Vec<f64> = scaled.iter().map(|s| sign * s / beta).collect();
    let logits: Vec<f64> = spec
        .ref_logits()
        .iter()
        .zip(&scaled)
        .map(|(r, s)| r + s)
        .collect();
    let lse = log_weighted_sum_exp(spec.ref_log_probs(), &scaled);
    let value = sign * (beta * lse + beta * kl_pi);
    Ok(BestResponse {
        probs: softmax(&logits),
        logits,
        value,
    })
}

/// Duality gap in the unregularized game: `max_y (Pπ)_y − min_y (Pᵀπ)_y`.
///
/// Both optima are attained at pure strategies; ties resolve to the first
/// index, which does not affect the value.
pub fn dual_gap(p: &PreferenceMatrix, pi: &[f64]) -> Result<f64> {
    check_len(p.n(), pi.len())?;
    let hi = max_of(&p.mul_vec(pi));
    let lo = p.tmul_vec(pi).into_iter().fold(f64::INFINITY, f64::min);
    Ok((hi - lo).max(0.0))
}

/// Duality gap of `pi` in the regularized game, from the two closed-form
/// best-response values.
pub fn dual_gap_regularized(spec: &GameSpec, pi: &[f64]) -> Result<f64> {
    check_len(spec.n(), pi.len())?;
    let hi = best_response_regularized(spec, pi, Side::Max)?.value;
    let lo = best_response_regularized(spec, pi, Side::Min)?.value;
    Ok((hi - lo).max(0.0))
}

/// Regularized duality gap of a softmax policy, skipping input validation.
pub(crate) fn dual_gap_regularized_logits(spec: &GameSpec, logits: &[f64]) -> f64 {
    let pi = softmax(logits);
    let beta = spec.beta();
    let up: Vec<f64> = spec
        .matrix()
        .mul_vec(&pi)
        .iter()
        .map(|v| v / beta)
        .collect();
    let down: Vec<f64> = spec
        .matrix()
        .tmul_vec(&pi)
        .iter()
        .map(|v| -v / beta)
        .collect();
    let kl_pi = kl_against_log(&pi, spec.ref_log_probs());
    let gap = beta * log_weighted_sum_exp(spec.ref_log_probs(), &up)
        + beta * log_weighted_sum_exp(spec.ref_log_probs(), &down)
        + 2.0 * beta * kl_pi;
    gap.max(0.0)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
