//! Almost-sure spectrum estimation through periodic approximations.
//!
//! The almost-sure spectrum of the block random operator is the closure of
//! the union of spectra of the operators whose couplings repeat a finite
//! word drawn from the support of the single-site law. Each periodic
//! operator's spectrum is the set `{E : |Δ(E)| ≤ 2}` where `Δ` is the
//! discriminant (trace of the monodromy over one period), so scanning the
//! discriminant over many words and taking the union of the resulting
//! bands approximates the spectrum from inside.

use crate::error::{Error, Result};
use crate::hamiltonian::FiniteBox;
use crate::lyapunov::{transfer, Mat2};
use crate::model::{BackgroundPotential, ModelConfig, Realization};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Union of closed energy intervals, sorted and disjoint.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    pub bands: Vec<(f64, f64)>,
}

impl SpectrumEstimate {
    pub fn from_bands(mut bands: Vec<(f64, f64)>) -> Self {
        bands.retain(|&(a, b)| b >= a);
        bands.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in bands {
            match merged.last_mut() {
                Some(last) if a <= last.1 + 1e-9 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        SpectrumEstimate { bands: merged }
    }

    /// Distance from `e` to the estimated set (0 inside a band).
    pub fn distance(&self, e: f64) -> f64 {
        self.bands
            .iter()
            .map(|&(a, b)| {
                if e < a {
                    a - e
                } else if e > b {
                    e - b
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, e: f64, tol: f64) -> bool {
        self.distance(e) <= tol
    }

    pub fn min(&self) -> f64 {
        self.bands.first().map_or(f64::NAN, |b| b.0)
    }

    pub fn max(&self) -> f64 {
        self.bands.last().map_or(f64::NAN, |b| b.1)
    }

    /// Hausdorff distance to another interval union, computed by dense
    /// sampling of both sets.
    pub fn hausdorff(&self, other: &SpectrumEstimate) -> f64 {
        fn one_sided(from: &SpectrumEstimate, to: &SpectrumEstimate) -> f64 {
            let mut worst = 0.0f64;
            for &(a, b) in &from.bands {
                let n = 2000;
                for i in 0..=n {
                    let e = a + (b - a) * i as f64 / n as f64;
                    worst = worst.max(to.distance(e));
                }
            }
            worst
        }
        one_sided(self, other).max(one_sided(other, self))
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Number of sites after which the potential built from a `p_blocks`-block
/// word repeats, accounting for a periodic background.
fn full_period_sites(cfg: &ModelConfig, p_blocks: usize) -> Result<usize> {
    let word_sites = cfg.alpha() * p_blocks;
    match &cfg.v0 {
        BackgroundPotential::Zero | BackgroundPotential::Constant(_) => Ok(word_sites),
        BackgroundPotential::Periodic(t) => Ok(lcm(word_sites, t.len())),
        BackgroundPotential::Window { .. } => Err(Error::InvalidRequest(
            "spectrum estimation needs a periodic background potential".into(),
        )),
    }
}

/// Discriminant of the periodic operator whose couplings cycle through
/// `word` (one coupling per block): the trace of the transfer monodromy
/// over one full period of the potential.
pub fn discriminant(cfg: &ModelConfig, word: &[f64], e: f64) -> Result<f64> {
    let alpha = cfg.alpha();
    let sites = full_period_sites(cfg, word.len())?;
    let mut m = Mat2::IDENTITY;
    for n in 0..sites {
        let k = n / alpha;
        let v = cfg.potential_at(n as i64, word[k % word.len()]);
        m = transfer(e, v).mul(&m);
    }
    Ok(m.trace())
}

/// Bands `{E : |Δ(E)| ≤ 2}` of one periodic word, located by a grid scan
/// with bisection-refined edges.
fn word_bands(
    cfg: &ModelConfig,
    word: &[f64],
    lo: f64,
    hi: f64,
    grid_n: usize,
) -> Result<Vec<(f64, f64)>> {
    let g = |e: f64| -> Result<f64> { Ok(discriminant(cfg, word, e)?.abs() - 2.0) };
    let h = (hi - lo) / grid_n as f64;
    let mut vals = Vec::with_capacity(grid_n + 1);
    for i in 0..=grid_n {
        vals.push(g(lo + h * i as f64)?);
    }
    // refine a sign change of |Δ| - 2 inside [a, b] down to 1e-8
    let refine = |mut a: f64, mut b: f64, inside_left: bool| -> Result<f64> {
        for _ in 0..60 {
            if b - a < 1e-8 {
                break;
            }
            let mid = 0.5 * (a + b);
            let inside = g(mid)? <= 0.0;
            if inside == inside_left {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    };
    let mut bands = Vec::new();
    let mut start: Option<f64> = None;
    for i in 0..=grid_n {
        let e = lo + h * i as f64;
        let inside = vals[i] <= 0.0;
        match (start, inside) {
            (None, true) => {
                let a = if i == 0 { e } else { refine(e - h, e, false)? };
                start = Some(a);
            }
            (Some(a), false) => {
                bands.push((a, refine(e - h, e, true)?));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        bands.push((a, hi));
    }
    Ok(bands)
}

/// Parameters for the periodic-word spectrum scan.
#[derive(Debug, Clone)]
pub struct SpectrumScan {
    /// Word length in blocks.
    pub period_blocks: usize,
    /// Energy grid points across `Σ₀`.
    pub grid_n: usize,
    /// Cap on the number of words; below the cap all words over the
    /// support sample are enumerated, above it words are drawn at random.
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SpectrumScan {
    fn default() -> Self {
        SpectrumScan {
            period_blocks: 3,
            grid_n: 600,
            max_words: 4096,
            seed: 1,
        }
    }
}

/// Estimate the almost-sure spectrum as a union of periodic-word bands.
pub fn spectrum_estimate(cfg: &ModelConfig, scan: &SpectrumScan) -> Result<SpectrumEstimate> {
    if scan.period_blocks == 0 || scan.grid_n < 2 {
        return Err(Error::InvalidRequest(
            "spectrum scan needs a positive period and at least two grid points".into(),
        ));
    }
    let support = cfg.law.support_sample(17);
    let (lo, hi) = cfg.sigma0();
    let p = scan.period_blocks;
    let n_exhaustive = (support.len() as f64).powi(p as i32);
    let mut bands = Vec::new();
    if n_exhaustive <= scan.max_words as f64 {
        // odometer over support^p
        let mut idx = vec![0usize; p];
        loop {
            let word: Vec<f64> = idx.iter().map(|&i| support[i]).collect();
            bands.extend(word_bands(cfg, &word, lo, hi, scan.grid_n)?);
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < support.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == p {
                    return Ok(SpectrumEstimate::from_bands(bands));
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(scan.seed);
        for _ in 0..scan.max_words {
            let word: Vec<f64> = (0..p)
                .map(|_| support[rng.gen_range(0..support.len())])
                .collect();
            bands.extend(word_bands(cfg, &word, lo, hi, scan.grid_n)?);
        }
        Ok(SpectrumEstimate::from_bands(bands))
    }
}

/// Fraction of finite-box eigenvalues (over random realizations) lying
/// within `tol` of the estimated spectrum.
pub fn containment_fraction(
    cfg: &ModelConfig,
    est: &SpectrumEstimate,
    l: usize,
    n_realizations: usize,
    tol: f64,
    seed: u64,
) -> Result<f64> {
    let mut inside = 0usize;
    let mut total = 0usize;
    for s in 0..n_realizations {
        let re = Realization::sample(cfg, l, seed.wrapping_add(s as u64));
        let eig = FiniteBox::assemble(cfg, &re).eigensystem()?;
        for &e in &eig.values {
            total += 1;
            if est.contains(e, tol) {
                inside += 1;
            }
        }
    }
    Ok(inside as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockProfile, SingleSiteLaw};

    fn cfg(
        f: Vec<f64>,
        law: SingleSiteLaw,
        v0: BackgroundPotential,
    ) -> ModelConfig {
        ModelConfig::new(BlockProfile::new(f).unwrap(), law, v0).unwrap()
    }

    #[test]
    fn constant_word_discriminant_is_chebyshev() {
        // V ≡ c over an n-site period: Δ(E) = 2 T_n((E - c)/2) with the
        // Chebyshev polynomial T_n, i.e. 2 cos(nθ) for E - c = 2 cos θ
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::dirac(0.4),
            BackgroundPotential::Zero,
        );
        let word = vec![0.4; 5];
        for theta in [0.3, 1.0, 2.2] {
            let e = 0.4 + 2.0 * f64::cos(theta);
            let d = discriminant(&c, &word, e).unwrap();
            assert!((d - 2.0 * f64::cos(5.0 * theta)).abs() < 1e-10);
        }
    }

    #[test]
    fn free_spectrum_is_the_band() {
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::dirac(0.0),
            BackgroundPotential::Zero,
        );
        let est = spectrum_estimate(&c, &SpectrumScan::default()).unwrap();
        assert_eq!(est.bands.len(), 1);
        assert!((est.min() + 2.0).abs() < 1e-6);
        assert!((est.max() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn flat_profile_uniform_law_fills_the_sum_interval() {
        // f ≡ 1: the spectrum is [-2, 2] + supp ν = [-2, 3] for uniform [0, 1]
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        );
        let scan = SpectrumScan {
            period_blocks: 4,
            grid_n: 900,
            ..Default::default()
        };
        let est = spectrum_estimate(&c, &scan).unwrap();
        let target = SpectrumEstimate::from_bands(vec![(-2.0, 3.0)]);
        let d = est.hausdorff(&target);
        assert!(d <= 0.05, "hausdorff = {d}");
    }

    #[test]
    fn atomic_gap_splits_the_spectrum() {
        // two far-separated atoms: bands around each atom, with a gap
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::uniform_atoms(&[0.0, 10.0]),
            BackgroundPotential::Zero,
        );
        let scan = SpectrumScan {
            period_blocks: 3,
            grid_n: 2000,
            ..Default::default()
        };
        let est = spectrum_estimate(&c, &scan).unwrap();
        assert!(!est.contains(5.0, 0.5));
        assert!(est.contains(0.0, 1e-6));
        assert!(est.contains(10.0, 1e-6));
    }

    #[test]
    fn periodic_background_period_is_respected() {
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::dirac(0.0),
            BackgroundPotential::Periodic(vec![1.5, -1.5]),
        );
        // word of 1 block (1 site), background period 2: full period 2
        let e = 0.7;
        let d = discriminant(&c, &[0.0], e).unwrap();
        let m = transfer(e, -1.5).mul(&transfer(e, 1.5));
        assert!((d - m.trace()).abs() < 1e-12);
    }

    #[test]
    fn box_eigenvalues_sit_inside_the_estimate() {
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        );
        let est = spectrum_estimate(
            &c,
            &SpectrumScan {
                period_blocks: 3,
                grid_n: 600,
                ..Default::default()
            },
        )
        .unwrap();
        let tol = 2.0 * 5.0 / 600.0 + 0.02;
        let frac = containment_fraction(&c, &est, 40, 10, tol, 77).unwrap();
        assert!(frac >= 0.99, "containment fraction {frac}");
    }

    #[test]
    fn window_background_is_rejected() {
        let c = cfg(
            vec![1.0],
            SingleSiteLaw::dirac(0.0),
            BackgroundPotential::Window {
                start: 0,
                table: vec![1.0],
            },
        );
        assert!(spectrum_estimate(&c, &SpectrumScan::default()).is_err());
    }

    #[test]
    fn interval_union_merging_and_distance() {
        let est = SpectrumEstimate::from_bands(vec![(0.0, 1.0), (0.5, 2.0), (3.0, 4.0)]);
        assert_eq!(est.bands, vec![(0.0, 2.0), (3.0, 4.0)]);
        assert!((est.distance(2.5) - 0.5).abs() < 1e-15);
        assert_eq!(est.distance(1.5), 0.0);
        assert!((est.distance(-1.0) - 1.0).abs() < 1e-15);
    }
}
