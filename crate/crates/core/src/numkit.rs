//! Flat-vector kernels, keyed RNG streams, and the scalar geometry
//! (cosine similarity, angle) that feeds the personalization step.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Norm threshold below which a vector is treated as vanishing.
///
/// Cosine similarity of a vanishing vector is reported as 0 (angle pi/2),
/// a neutral value for the downstream aggregation weight.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Flat vector of model parameters.
///
/// The same type carries models, gradients, gradient updates and update
/// steps; all arithmetic is elementwise over matched lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::Dimension {
                left: self.len(),
                right: other.len(),
            })
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|a| a * s).collect())
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// In-place `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: f64) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Cosine similarity between two matched-length vectors, clamped to
/// [-1, 1] to absorb floating-point overshoot.
///
/// If either norm is at most [`ZERO_NORM_EPS`] the result is 0.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_len(b)?;
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na <= ZERO_NORM_EPS || nb <= ZERO_NORM_EPS {
        return Ok(0.0);
    }
    let sim = a.dot(b)? / (na * nb);
    Ok(sim.clamp(-1.0, 1.0))
}

/// Angle in radians recovered from a cosine similarity in [-1, 1].
pub fn angle_from_similarity(sim: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&sim) {
        return Err(Error::parameter(
            "sim",
            format!("must lie in [-1, 1], got {sim}"),
        ));
    }
    Ok(sim.acos())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic random stream keyed by `(master_seed, label, subject, round)`.
///
/// `label` names the purpose of the stream ("sgd", "sample", "partition", ...),
/// `subject` is a client id (0 for server-side streams). Identical keys give
/// bit-identical draw sequences, so per-client work can run in any order or
/// in parallel without changing results.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str, subject: u64, round: u64) -> Self {
        let mut acc = splitmix(master_seed ^ 0x243f_6a88_85a3_08d3);
        acc = splitmix(acc ^ fnv1a(label.as_bytes()));
        acc = splitmix(acc ^ subject);
        acc = splitmix(acc ^ round);
        let mut key = [0u8; 32];
        let mut s = acc;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        Self {
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Gamma(shape, 1) draw; shape must be positive.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.rng)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Draw from a symmetric Dirichlet(alpha, ..., alpha) over `k` categories,
/// as normalized Gamma(alpha, 1) draws.
pub fn dirichlet_draw(alpha: f64, k: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::parameter(
            "alpha",
            format!("must be > 0, got {alpha}"),
        ));
    }
    if k == 0 {
        return Err(Error::parameter("k", "must be >= 1"));
    }
    let mut draws: Vec<f64> = (0..k).map(|_| rng.gamma(alpha)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        // All gammas underflowed (possible for extreme alpha); fall back to uniform.
        return Ok(vec![1.0 / k as f64; k]);
    }
    for d in &mut draws {
        *d /= sum;
    }
    Ok(draws)
}
