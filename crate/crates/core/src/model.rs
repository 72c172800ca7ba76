//! Model description: single-site law, block profile, background potential,
//! and sampled disorder realizations.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Absolute tolerance on the total mass of a single-site law.
const MASS_TOL: f64 = 1e-9;

/// Distribution of one block coupling `ω`. Either an absolutely continuous
/// law with piecewise-constant density, or a purely atomic law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SingleSiteLaw {
    /// Density `r` equal to `values[i]` on `[breakpoints[i], breakpoints[i+1])`
    /// and zero outside `[breakpoints.first(), breakpoints.last()]`.
    Density {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Point masses `probs[i]` at `points[i]`.
    Atomic { points: Vec<f64>, probs: Vec<f64> },
}

impl SingleSiteLaw {
    pub fn uniform(a: f64, b: f64) -> Self {
        SingleSiteLaw::Density {
            breakpoints: vec![a, b],
            values: vec![1.0 / (b - a)],
        }
    }

    pub fn dirac(c: f64) -> Self {
        SingleSiteLaw::Atomic {
            points: vec![c],
            probs: vec![1.0],
        }
    }

    /// Uniform atomic law on the given support points.
    pub fn uniform_atoms(points: &[f64]) -> Self {
        let p = 1.0 / points.len() as f64;
        SingleSiteLaw::Atomic {
            points: points.to_vec(),
            probs: vec![p; points.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SingleSiteLaw::Density {
                breakpoints,
                values,
            } => {
                if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
                    return Err(Error::InvalidModel(
                        "density law needs n+1 breakpoints for n pieces".into(),
                    ));
                }
                if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidModel(
                        "density breakpoints must be strictly increasing".into(),
                    ));
                }
                if values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidModel("density values must be >= 0".into()));
                }
                if (self.mass() - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidModel(format!(
                        "density mass {} != 1",
                        self.mass()
                    )));
                }
            }
            SingleSiteLaw::Atomic { points, probs } => {
                if points.is_empty() || points.len() != probs.len() {
                    return Err(Error::InvalidModel(
                        "atomic law needs matching nonempty points/probs".into(),
                    ));
                }
                if points.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::InvalidModel(
                        "atomic points must be strictly increasing".into(),
                    ));
                }
                if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidModel("atomic probs must be >= 0".into()));
                }
                if (self.mass() - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidModel(format!(
                        "atomic mass {} != 1",
                        self.mass()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total mass (should be 1 for a probability law).
    pub fn mass(&self) -> f64 {
        match self {
            SingleSiteLaw::Density {
                breakpoints,
                values,
            } => values
                .iter()
                .zip(breakpoints.windows(2))
                .map(|(v, w)| v * (w[1] - w[0]))
                .sum(),
            SingleSiteLaw::Atomic { probs, .. } => probs.iter().sum(),
        }
    }

    /// `M = sup { |λ| : λ ∈ supp ν }`.
    pub fn support_bound(&self) -> f64 {
        match self {
            SingleSiteLaw::Density { breakpoints, .. } => breakpoints
                .iter()
                .fold(0.0f64, |m, &b| m.max(b.abs())),
            SingleSiteLaw::Atomic { points, .. } => {
                points.iter().fold(0.0f64, |m, &p| m.max(p.abs()))
            }
        }
    }

    /// Density value `r(λ)`; zero for atomic laws (no a.c. part).
    pub fn density(&self, lambda: f64) -> f64 {
        match self {
            SingleSiteLaw::Density {
                breakpoints,
                values,
            } => {
                if lambda < breakpoints[0] || lambda >= *breakpoints.last().unwrap() {
                    return 0.0;
                }
                // partition_point: first breakpoint > lambda
                let idx = breakpoints.partition_point(|&b| b <= lambda);
                values[idx - 1]
            }
            SingleSiteLaw::Atomic { .. } => 0.0,
        }
    }

    pub fn density_sup(&self) -> f64 {
        match self {
            SingleSiteLaw::Density { values, .. } => {
                values.iter().fold(0.0f64, |m, &v| m.max(v))
            }
            SingleSiteLaw::Atomic { .. } => f64::INFINITY,
        }
    }

    /// CDF `F(λ)`.
    pub fn cdf(&self, lambda: f64) -> f64 {
        match self {
            SingleSiteLaw::Density {
                breakpoints,
                values,
            } => {
                if lambda <= breakpoints[0] {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(breakpoints.windows(2)) {
                    if lambda >= w[1] {
                        acc += v * (w[1] - w[0]);
                    } else {
                        acc += v * (lambda - w[0]);
                        break;
                    }
                }
                acc
            }
            SingleSiteLaw::Atomic { points, probs } => points
                .iter()
                .zip(probs)
                .filter(|(p, _)| **p <= lambda)
                .map(|(_, q)| q)
                .sum(),
        }
    }

    /// Generalized inverse CDF for `p ∈ [0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            SingleSiteLaw::Density {
                breakpoints,
                values,
            } => {
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(breakpoints.windows(2)) {
                    let piece = v * (w[1] - w[0]);
                    if acc + piece >= p && *v > 0.0 {
                        return w[0] + (p - acc) / v;
                    }
                    acc += piece;
                }
                *breakpoints.last().unwrap()
            }
            SingleSiteLaw::Atomic { points, probs } => {
                let mut acc = 0.0;
                for (x, q) in points.iter().zip(probs) {
                    acc += q;
                    if acc >= p {
                        return *x;
                    }
                }
                *points.last().unwrap()
            }
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Density breakpoints (kink locations of `r`); empty for atomic laws.
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            SingleSiteLaw::Density { breakpoints, .. } => breakpoints.clone(),
            SingleSiteLaw::Atomic { .. } => Vec::new(),
        }
    }

    /// A finite sample of the support: the atoms themselves, or at least
    /// `min_count` quantiles including both support endpoints.
    pub fn support_sample(&self, min_count: usize) -> Vec<f64> {
        match self {
            SingleSiteLaw::Atomic { points, .. } => points.clone(),
            SingleSiteLaw::Density { .. } => {
                let n = min_count.max(2);
                (0..n)
                    .map(|i| self.quantile(i as f64 / (n - 1) as f64))
                    .collect()
            }
        }
    }
}

/// Block length `α` and the positive coupling profile `f_0, …, f_{α-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockProfile {
    pub alpha: usize,
    pub f: Vec<f64>,
}

impl BlockProfile {
    pub fn new(f: Vec<f64>) -> Result<Self> {
        if f.is_empty() {
            return Err(Error::InvalidModel("profile must be nonempty".into()));
        }
        if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidModel("profile entries must be > 0".into()));
        }
        Ok(BlockProfile { alpha: f.len(), f })
    }

    pub fn f_min(&self) -> f64 {
        self.f.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn f_max(&self) -> f64 {
        self.f.iter().cloned().fold(0.0f64, f64::max)
    }
}

/// Deterministic background `V₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BackgroundPotential {
    Zero,
    Constant(f64),
    /// `V₀(n) = table[n mod period]` with `period = table.len()`.
    Periodic(Vec<f64>),
    /// `table` on sites `start .. start + table.len()`, zero elsewhere.
    Window { start: i64, table: Vec<f64> },
}

impl BackgroundPotential {
    pub fn at(&self, n: i64) -> f64 {
        match self {
            BackgroundPotential::Zero => 0.0,
            BackgroundPotential::Constant(c) => *c,
            BackgroundPotential::Periodic(t) => {
                let p = t.len() as i64;
                t[(n.rem_euclid(p)) as usize]
            }
            BackgroundPotential::Window { start, table } => {
                let i = n - start;
                if i >= 0 && (i as usize) < table.len() {
                    table[i as usize]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            BackgroundPotential::Zero => 0.0,
            BackgroundPotential::Constant(c) => c.abs(),
            BackgroundPotential::Periodic(t) | BackgroundPotential::Window { table: t, .. } => {
                t.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BackgroundPotential::Zero => true,
            BackgroundPotential::Constant(c) => *c == 0.0,
            BackgroundPotential::Periodic(t) | BackgroundPotential::Window { table: t, .. } => {
                t.iter().all(|&v| v == 0.0)
            }
        }
    }
}

/// Complete model: profile, single-site law and background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: BlockProfile,
    pub law: SingleSiteLaw,
    pub v0: BackgroundPotential,
}

impl ModelConfig {
    pub fn new(profile: BlockProfile, law: SingleSiteLaw, v0: BackgroundPotential) -> Result<Self> {
        law.validate()?;
        Ok(ModelConfig { profile, law, v0 })
    }

    pub fn alpha(&self) -> usize {
        self.profile.alpha
    }

    /// Deterministic spectral window `Σ₀ = [-M-2-‖V₀‖∞, M+2+‖V₀‖∞]` scaled by
    /// the profile: every eigenvalue of every realization lies inside.
    pub fn sigma0(&self) -> (f64, f64) {
        let m = self.profile.f_max() * self.law.support_bound() + 2.0 + self.v0.sup_norm();
        (-m, m)
    }

    /// Potential at site `n = αk + i` given the block coupling `ω_k`.
    pub fn potential_at(&self, n: i64, omega_k: f64) -> f64 {
        let alpha = self.alpha() as i64;
        let i = n.rem_euclid(alpha) as usize;
        self.profile.f[i] * omega_k + self.v0.at(n)
    }

    /// Block index of site `n`.
    pub fn block_of(&self, n: i64) -> i64 {
        n.div_euclid(self.alpha() as i64)
    }

    /// Background values on block `k`, sites `αk .. αk+α-1`.
    pub fn v0_block(&self, k: i64) -> Vec<f64> {
        let alpha = self.alpha() as i64;
        (0..alpha).map(|i| self.v0.at(alpha * k + i)).collect()
    }

    /// Full potential on block `k` for the coupling value `omega_k`.
    pub fn pot_block(&self, k: i64, omega_k: f64) -> Vec<f64> {
        let alpha = self.alpha() as i64;
        (0..alpha)
            .map(|i| self.potential_at(alpha * k + i, omega_k))
            .collect()
    }
}

/// One sampled disorder configuration on blocks `-L .. L-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Realization {
    pub l: usize,
    pub seed: u64,
    /// `omega[j]` is the coupling of block `k = j - L`.
    pub omega: Vec<f64>,
}

impl Realization {
    /// Draw the `2L` block couplings from the law. Each realization owns its
    /// seed, so Monte Carlo batches are order-independent and reproducible.
    pub fn sample(cfg: &ModelConfig, l: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = (0..2 * l).map(|_| cfg.law.sample(&mut rng)).collect();
        Realization { l, seed, omega }
    }

    pub fn from_omegas(omega: Vec<f64>) -> Result<Self> {
        if omega.len() % 2 != 0 || omega.is_empty() {
            return Err(Error::InvalidModel(
                "realization needs an even, positive number of blocks".into(),
            ));
        }
        let l = omega.len() / 2;
        Ok(Realization { l, seed: 0, omega })
    }

    pub fn omega(&self, k: i64) -> f64 {
        self.omega[(k + self.l as i64) as usize]
    }

    pub fn omega_mut(&mut self, k: i64) -> &mut f64 {
        &mut self.omega[(k + self.l as i64) as usize]
    }
}

/// Per-sample seed derivation: a splitmix64 step keeps neighbouring sample
/// indices statistically independent while staying counter-based.
pub fn realization_seed(base_seed: u64, sample_index: u64) -> u64 {
    let mut z = base_seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(sample_index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_law_mass_and_bounds() {
        let law = SingleSiteLaw::uniform(0.0, 1.0);
        law.validate().unwrap();
        assert!((law.mass() - 1.0).abs() < 1e-15);
        assert_eq!(law.support_bound(), 1.0);
        assert_eq!(law.density(0.5), 1.0);
        assert_eq!(law.density(-0.1), 0.0);
        assert_eq!(law.density(1.1), 0.0);
        assert!((law.cdf(0.25) - 0.25).abs() < 1e-15);
        assert!((law.quantile(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_piece_density_cdf_quantile_roundtrip() {
        // mass 0.5 on [-1,0) at height 0.5, mass 0.5 on [0,2) at 0.25
        let law = SingleSiteLaw::Density {
            breakpoints: vec![-1.0, 0.0, 2.0],
            values: vec![0.5, 0.25],
        };
        law.validate().unwrap();
        for &p in &[0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let q = law.quantile(p);
            assert!((law.cdf(q) - p).abs() < 1e-12, "p={p} q={q}");
        }
    }

    #[test]
    fn atomic_law_sampling_hits_only_atoms() {
        let law = SingleSiteLaw::Atomic {
            points: vec![-1.0, 0.5, 2.0],
            probs: vec![0.25, 0.5, 0.25],
        };
        law.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let x = law.sample(&mut rng);
            assert!(x == -1.0 || x == 0.5 || x == 2.0);
        }
    }

    #[test]
    fn law_mass_mismatch_rejected() {
        let law = SingleSiteLaw::Density {
            breakpoints: vec![0.0, 1.0],
            values: vec![0.7],
        };
        assert!(law.validate().is_err());
    }

    #[test]
    fn sample_mean_lln() {
        // mean of uniform [0,1] is 0.5, sd = 1/sqrt(12); n = 40_000 draws
        let law = SingleSiteLaw::uniform(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let n = 40_000;
        let mean: f64 = (0..n).map(|_| law.sample(&mut rng)).sum::<f64>() / n as f64;
        let three_sigma = 3.0 / (12.0f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5).abs() < three_sigma, "mean={mean}");
    }

    #[test]
    fn potential_block_structure() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0, 2.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Constant(0.25),
        )
        .unwrap();
        // site 2k carries f0*w, site 2k+1 carries f1*w, background everywhere
        assert_eq!(cfg.potential_at(4, 0.5), 1.0 * 0.5 + 0.25);
        assert_eq!(cfg.potential_at(5, 0.5), 2.0 * 0.5 + 0.25);
        assert_eq!(cfg.potential_at(-2, 0.5), 1.0 * 0.5 + 0.25);
        assert_eq!(cfg.potential_at(-1, 0.5), 2.0 * 0.5 + 0.25);
        assert_eq!(cfg.block_of(-1), -1);
        assert_eq!(cfg.block_of(0), 0);
    }

    #[test]
    fn sigma0_window() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0]).unwrap(),
            SingleSiteLaw::uniform(-1.0, 3.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        assert_eq!(cfg.sigma0(), (-5.0, 5.0));
    }

    #[test]
    fn realization_is_reproducible_and_counter_based() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        let a = Realization::sample(&cfg, 10, realization_seed(42, 3));
        let b = Realization::sample(&cfg, 10, realization_seed(42, 3));
        assert_eq!(a.omega, b.omega);
        let c = Realization::sample(&cfg, 10, realization_seed(42, 4));
        assert_ne!(a.omega, c.omega);
        assert_eq!(a.omega.len(), 20);
    }

    #[test]
    fn support_sample_quantiles_cover_endpoints() {
        let law = SingleSiteLaw::uniform(-1.0, 1.0);
        let s = law.support_sample(17);
        assert_eq!(s.len(), 17);
        assert!((s[0] + 1.0).abs() < 1e-12);
        assert!((s[16] - 1.0).abs() < 1e-12);
    }
}
