//! Finite-box eigenfunction correlators and their exponential-decay fit.
//!
//! For a realization on the box `[-αL, αL - 1]` the eigenfunction
//! correlator between sites `m` and `n` is `Σ_l |v_l(m)| |v_l(n)|`, which
//! dominates the dynamical amplitude `|⟨δ_m, e^{-itH} δ_n⟩|` uniformly in
//! `t` and is at most one by Cauchy–Schwarz. Averaging over realizations
//! and reading the profile as a function of the block distance exposes the
//! localization length: `log ρ̂` is fit by least squares against the block
//! distance, skipping distances contaminated by the box boundary.

use crate::error::{Error, Result};
use crate::hamiltonian::FiniteBox;
use crate::model::{ModelConfig, Realization};
use crate::model::realization_seed;
use rayon::prelude::*;

/// Averaged correlator profile from a fixed reference site.
#[derive(Debug, Clone)]
pub struct CorrelatorProfile {
    /// Block distances `0, 1, …`.
    pub distances: Vec<usize>,
    /// `rho[d]` estimates `E Σ_l |v_l(0)| |v_l(αd)|`.
    pub rho: Vec<f64>,
    /// Standard error of each entry over the realization sample.
    pub stderr: Vec<f64>,
    pub n_realizations: usize,
    pub l: usize,
}

/// Restriction of the correlator sum to eigenvalues inside a window.
#[derive(Debug, Clone, Copy)]
pub enum EnergyWindow {
    All,
    Interval(f64, f64),
}

impl EnergyWindow {
    fn admits(&self, e: f64) -> bool {
        match *self {
            EnergyWindow::All => true,
            EnergyWindow::Interval(a, b) => a <= e && e <= b,
        }
    }
}

fn windowed_entry(
    sys: &crate::hamiltonian::EigenSystem,
    m: usize,
    n: usize,
    window: EnergyWindow,
) -> f64 {
    sys.values
        .iter()
        .zip(&sys.vectors)
        .filter(|(e, _)| window.admits(**e))
        .map(|(_, v)| (v[m] * v[n]).abs())
        .sum()
}

/// Average the correlator from lattice site 0 to sites `αd`, `d = 0 …
/// L - 1`, over `n_realizations` independent realizations.
pub fn correlator_profile(
    cfg: &ModelConfig,
    l: usize,
    n_realizations: usize,
    window: EnergyWindow,
    seed: u64,
) -> Result<CorrelatorProfile> {
    if l < 2 || n_realizations == 0 {
        return Err(Error::InvalidRequest(
            "correlator profile needs L >= 2 and at least one realization".into(),
        ));
    }
    let alpha = cfg.alpha();
    let per_sample: Vec<Vec<f64>> = (0..n_realizations)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let re = Realization::sample(cfg, l, realization_seed(seed, s as u64));
            let fb = FiniteBox::assemble(cfg, &re);
            let sys = fb.eigensystem()?;
            let m0 = fb.index(0);
            Ok((0..l)
                .map(|d| windowed_entry(&sys, m0, fb.index((alpha * d) as i64), window))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut rho = vec![0.0f64; l];
    let mut sq = vec![0.0f64; l];
    for row in &per_sample {
        for (d, &x) in row.iter().enumerate() {
            rho[d] += x;
            sq[d] += x * x;
        }
    }
    let nn = n_realizations as f64;
    let stderr: Vec<f64> = (0..l)
        .map(|d| {
            let mean = rho[d] / nn;
            if n_realizations > 1 {
                let var = (sq[d] / nn - mean * mean).max(0.0) * nn / (nn - 1.0);
                (var / nn).sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    for r in &mut rho {
        *r /= nn;
    }
    Ok(CorrelatorProfile {
        distances: (0..l).collect(),
        rho,
        stderr,
        n_realizations,
        l,
    })
}

/// Least-squares exponential decay fit of a correlator profile.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Decay rate per block (positive for decaying profiles).
    pub gamma: f64,
    /// 95% confidence interval for `gamma`.
    pub ci: (f64, f64),
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of distances entering the fit.
    pub n_points: usize,
}

/// Fit `log ρ̂(d) ≈ intercept - γ d` by ordinary least squares over the
/// block distances `1 ≤ d < L - skip_boundary` (distance zero is the
/// normalization point, the last distances feel the box edge).
pub fn fit_exponential_decay(
    profile: &CorrelatorProfile,
    skip_boundary: usize,
) -> Result<DecayFit> {
    let upper = profile
        .l
        .checked_sub(skip_boundary)
        .ok_or_else(|| Error::InvalidRequest("boundary skip exceeds profile".into()))?;
    let pts: Vec<(f64, f64)> = profile
        .distances
        .iter()
        .zip(&profile.rho)
        .filter(|(&d, &r)| d >= 1 && d < upper && r > 0.0)
        .map(|(&d, &r)| (d as f64, r.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InvalidRequest(
            "too few correlator points for a decay fit".into(),
        ));
    }
    let nf = n as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = nf * sxx - sx * sx;
    let slope = (nf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / nf;
    let mean_y = sy / nf;
    let ss_res: f64 = pts
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = pts.iter().map(|&(_, y)| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    let se_slope = if n > 2 {
        (ss_res / (nf - 2.0) * nf / denom).sqrt()
    } else {
        f64::INFINITY
    };
    // 97.5% Student t quantile, adequate over the relevant range of df
    let t = t_quantile_975(n - 2);
    let gamma = -slope;
    Ok(DecayFit {
        gamma,
        ci: (gamma - t * se_slope, gamma + t * se_slope),
        intercept,
        r_squared,
        n_points: n,
    })
}

fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        TABLE[df - 1]
    } else {
        1.96 + 2.4 / df as f64
    }
}

/// Verify the dynamical bound `sup_t |⟨δ_m, e^{-itH} δ_n⟩| ≤ Σ_l |v_l(m)
/// v_l(n)|` on a realization, over a geometric ladder plus uniform random
/// times in `[0, t_max]`. Returns the worst ratio `sup |a| / ρ` observed.
pub fn dynamical_bound_ratio(
    cfg: &ModelConfig,
    l: usize,
    t_max: f64,
    n_times: usize,
    seed: u64,
) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let re = Realization::sample(cfg, l, seed);
    let fb = FiniteBox::assemble(cfg, &re);
    let sys = fb.eigensystem()?;
    let mut times: Vec<f64> = (0..n_times)
        .map(|i| t_max * 2.0f64.powi(-(i as i32)))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    times.extend((0..n_times).map(|_| rng.gen::<f64>() * t_max));
    let m0 = fb.index(0);
    let mut worst = 0.0f64;
    for d in 0..l {
        let n_idx = fb.index((cfg.alpha() * d) as i64);
        let (sup, rho) = crate::hamiltonian::dynamical_bound_check(&sys, m0, n_idx, &times);
        if rho > 1e-300 {
            worst = worst.max(sup / rho);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackgroundPotential, BlockProfile, SingleSiteLaw};

    fn cfg(f: Vec<f64>, law: SingleSiteLaw) -> ModelConfig {
        ModelConfig::new(BlockProfile::new(f).unwrap(), law, BackgroundPotential::Zero)
            .unwrap()
    }

    #[test]
    fn correlator_entries_are_at_most_one() {
        let c = cfg(vec![1.0, 2.0], SingleSiteLaw::uniform(0.0, 1.0));
        let re = Realization::sample(&c, 8, 3);
        let fb = FiniteBox::assemble(&c, &re);
        let sys = fb.eigensystem().unwrap();
        for m in 0..fb.dim() {
            for n in (0..fb.dim()).step_by(3) {
                assert!(sys.correlator_entry(m, n) <= 1.0 + 1e-10);
            }
        }
    }

    #[test]
    fn profile_normalizes_at_distance_zero() {
        // at d = 0 the entry is Σ_l v_l(0)² = 1 for every realization
        let c = cfg(vec![1.0], SingleSiteLaw::uniform(0.0, 1.0));
        let p = correlator_profile(&c, 10, 5, EnergyWindow::All, 4).unwrap();
        assert!((p.rho[0] - 1.0).abs() < 1e-10);
        assert!(p.stderr[0] < 1e-10);
    }

    #[test]
    fn profile_decays_with_distance() {
        let c = cfg(vec![1.0], SingleSiteLaw::uniform(-3.0, 3.0));
        let p = correlator_profile(&c, 14, 40, EnergyWindow::All, 9).unwrap();
        assert!(p.rho[6] < 0.5 * p.rho[1]);
        assert!(p.rho[10] < 0.2 * p.rho[1]);
    }

    #[test]
    fn energy_window_reduces_the_correlator() {
        let c = cfg(vec![1.0], SingleSiteLaw::uniform(0.0, 1.0));
        let all = correlator_profile(&c, 8, 6, EnergyWindow::All, 12).unwrap();
        let win =
            correlator_profile(&c, 8, 6, EnergyWindow::Interval(-1.0, 1.0), 12).unwrap();
        for d in 0..8 {
            assert!(win.rho[d] <= all.rho[d] + 1e-12);
        }
        assert!(win.rho[0] < all.rho[0]);
    }

    #[test]
    fn decay_fit_recovers_a_synthetic_rate() {
        let gamma = 0.37;
        let profile = CorrelatorProfile {
            distances: (0..20).collect(),
            rho: (0..20).map(|d| 0.8 * (-gamma * d as f64).exp()).collect(),
            stderr: vec![0.0; 20],
            n_realizations: 1,
            l: 20,
        };
        let fit = fit_exponential_decay(&profile, 2).unwrap();
        assert!((fit.gamma - gamma).abs() < 1e-10);
        assert!(fit.r_squared > 0.999999);
        // an exact profile collapses the CI to a point
        assert!(fit.ci.0 <= gamma + 1e-9 && gamma <= fit.ci.1 + 1e-9);
    }

    #[test]
    fn anderson_profile_fit_is_positive_and_tight() {
        let c = cfg(vec![1.0], SingleSiteLaw::uniform(0.0, 2.0));
        let p = correlator_profile(&c, 16, 80, EnergyWindow::All, 21).unwrap();
        let fit = fit_exponential_decay(&p, 2).unwrap();
        assert!(fit.gamma > 0.0);
        assert!(fit.ci.0 > 0.0, "ci = {:?}", fit.ci);
        assert!(fit.r_squared > 0.9, "r² = {}", fit.r_squared);
    }

    #[test]
    fn dynamics_never_exceed_the_correlator() {
        let c = cfg(vec![1.0, 1.0], SingleSiteLaw::uniform(0.0, 1.0));
        let worst = dynamical_bound_ratio(&c, 8, 1e4, 64, 31).unwrap();
        assert!(worst <= 1.0 + 1e-10, "worst ratio {worst}");
    }

    #[test]
    fn degenerate_requests_are_rejected() {
        let c = cfg(vec![1.0], SingleSiteLaw::uniform(0.0, 1.0));
        assert!(correlator_profile(&c, 1, 5, EnergyWindow::All, 0).is_err());
        assert!(correlator_profile(&c, 8, 0, EnergyWindow::All, 0).is_err());
        let p = correlator_profile(&c, 4, 2, EnergyWindow::All, 0).unwrap();
        assert!(fit_exponential_decay(&p, 4).is_err());
    }
}
