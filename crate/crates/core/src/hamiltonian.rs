//! Finite-box Hamiltonians and a symmetric tridiagonal eigensolver
//! (Sturm-sequence bisection plus inverse iteration).

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Realization};
use num_complex::Complex64;

/// Restriction of `H_ω` to the window `[-αL, αL-1]` with Dirichlet ends.
/// Off-diagonal entries are all 1; only the diagonal is stored.
#[derive(Debug, Clone)]
pub struct FiniteBox {
    pub l: usize,
    pub alpha: usize,
    pub diag: Vec<f64>,
}

impl FiniteBox {
    pub fn assemble(cfg: &ModelConfig, re: &Realization) -> Self {
        let alpha = cfg.alpha();
        let l = re.l;
        let lo = -((alpha * l) as i64);
        let diag = (0..2 * alpha * l)
            .map(|idx| {
                let n = lo + idx as i64;
                cfg.potential_at(n, re.omega(cfg.block_of(n)))
            })
            .collect();
        FiniteBox { l, alpha, diag }
    }

    pub fn dim(&self) -> usize {
        2 * self.alpha * self.l
    }

    /// Lattice site of matrix row `idx`.
    pub fn site(&self, idx: usize) -> i64 {
        idx as i64 - (self.alpha * self.l) as i64
    }

    /// Matrix row of lattice site `n` (must lie in the window).
    pub fn index(&self, n: i64) -> usize {
        (n + (self.alpha * self.l) as i64) as usize
    }

    pub fn eigensystem(&self) -> Result<EigenSystem> {
        let e = vec![1.0; self.dim().saturating_sub(1)];
        eigh_tridiagonal(&self.diag, &e)
    }
}

/// Full spectral data of a symmetric tridiagonal matrix; eigenvalues are
/// ascending and eigenvectors normalized with the first component whose
/// modulus exceeds `1e-8 * max` made positive.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// `vectors[l]` is the eigenvector of `values[l]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Number of eigenvalues of the tridiagonal matrix `(diag, off)` that are
/// strictly below `x` (Sturm sequence count).
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let n = diag.len();
    let scale: f64 = diag.iter().fold(0.0f64, |m, &d| m.max(d.abs()))
        + 2.0 * off.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let tiny = f64::EPSILON * scale.max(1.0);
    let mut count = 0usize;
    let mut q = 1.0f64;
    for i in 0..n {
        let e2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - e2 / q;
        // a vanishing pivot counts as negative (right-continuous convention;
        // keeps the counting function monotone in x)
        if q.abs() < tiny {
            q = -tiny;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn bisect_eigenvalue(diag: &[f64], off: &[f64], k: usize, mut lo: f64, mut hi: f64) -> f64 {
    // smallest x with sturm_count(x) >= k+1
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) >= k + 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solve `(T - mu) x = b` in place by tridiagonal LU with partial pivoting.
fn tridiag_shifted_solve(diag: &[f64], off: &[f64], mu: f64, b: &mut [f64]) {
    let n = diag.len();
    // band storage: d (main), u1 (first super), u2 (second super, fill-in)
    let mut d: Vec<f64> = diag.iter().map(|&x| x - mu).collect();
    let mut u1: Vec<f64> = off.to_vec();
    let mut u2 = vec![0.0f64; n];
    let mut lower = vec![0.0f64; n]; // multiplier applied at step i
    let mut swapped = vec![false; n];
    for i in 0..n - 1 {
        let sub = off[i];
        if sub.abs() > d[i].abs() {
            // pivot: swap row i and i+1
            swapped[i] = true;
            let (ra, rb) = (d[i], u1[i]);
            d[i] = sub;
            u1[i] = d[i + 1];
            u2[i] = if i + 1 < n - 1 { off[i + 1] } else { 0.0 };
            let m = ra / d[i];
            lower[i] = m;
            d[i + 1] = rb - m * u1[i];
            if i + 1 < n - 1 {
                u1[i + 1] = -m * u2[i];
            }
            b.swap(i, i + 1);
            b[i + 1] -= m * b[i];
        } else {
            let safe = if d[i].abs() < 1e-300 {
                1e-300f64.copysign(if d[i] == 0.0 { 1.0 } else { d[i] })
            } else {
                d[i]
            };
            d[i] = safe;
            let m = sub / safe;
            lower[i] = m;
            d[i + 1] -= m * u1[i];
            u2[i] = 0.0;
            b[i + 1] -= m * b[i];
        }
    }
    if d[n - 1].abs() < 1e-300 {
        d[n - 1] = 1e-300f64.copysign(if d[n - 1] == 0.0 { 1.0 } else { d[n - 1] });
    }
    // back substitution
    b[n - 1] /= d[n - 1];
    if n >= 2 {
        b[n - 2] = (b[n - 2] - u1[n - 2] * b[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        b[i] = (b[i] - u1[i] * b[i + 1] - u2[i] * b[i + 2]) / d[i];
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    // scale by the largest entry first: a near-singular solve can return
    // entries ~1e150+ whose sum of squares overflows to infinity, and
    // dividing by an infinite norm would silently zero the vector
    let maxabs = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if maxabs == 0.0 {
        return 0.0;
    }
    for x in v.iter_mut() {
        *x /= maxabs;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    maxabs * norm
}

fn fix_sign(v: &mut [f64]) {
    let maxabs = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-8 * maxabs) {
        if first < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }
}

/// Eigenvalues by Sturm bisection, eigenvectors by inverse iteration with
/// reorthogonalization inside near-degenerate clusters (gap `< 1e-8 * scale`).
pub fn eigh_tridiagonal(diag: &[f64], off: &[f64]) -> Result<EigenSystem> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(Error::InvalidRequest(
            "eigh_tridiagonal: need n diagonal and n-1 off-diagonal entries".into(),
        ));
    }
    if n == 1 {
        return Ok(EigenSystem {
            values: vec![diag[0]],
            vectors: vec![vec![1.0]],
        });
    }
    let scale: f64 = diag.iter().fold(0.0f64, |m, &d| m.max(d.abs()))
        + 2.0 * off.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
    let scale = scale.max(1.0);
    let lo0 = diag
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            d - if i > 0 { off[i - 1].abs() } else { 0.0 }
                - if i < n - 1 { off[i].abs() } else { 0.0 }
        })
        .fold(f64::INFINITY, f64::min)
        - scale * 1e-12;
    let hi0 = diag
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            d + if i > 0 { off[i - 1].abs() } else { 0.0 }
                + if i < n - 1 { off[i].abs() } else { 0.0 }
        })
        .fold(f64::NEG_INFINITY, f64::max)
        + scale * 1e-12;

    let values: Vec<f64> = (0..n)
        .map(|k| bisect_eigenvalue(diag, off, k, lo0, hi0))
        .collect();

    // cluster boundaries for reorthogonalization
    let cluster_tol = 1e-8 * scale;
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut cluster_start = 0usize;
    for k in 0..n {
        if k > 0 && values[k] - values[k - 1] > cluster_tol {
            cluster_start = k;
        }
        // deterministic start vector
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as u64)
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407 ^ k as u64);
                ((t >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        normalize(&mut v);
        // tiny shift separation inside clusters keeps the solves well posed
        let mu = values[k] + (k - cluster_start) as f64 * 1e-13 * scale;
        let mut ok = false;
        for _iter in 0..100 {
            tridiag_shifted_solve(diag, off, mu, &mut v);
            for prev in &vectors[cluster_start..k] {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
            let growth = normalize(&mut v);
            if growth > 1.0 / (1e-10 * scale) || _iter >= 2 {
                // residual check
                let res = residual(diag, off, values[k], &v);
                if res <= 1e-10 * scale {
                    ok = true;
                    break;
                }
            }
        }
        if !ok {
            let res = residual(diag, off, values[k], &v);
            if res > 1e-8 * scale {
                return Err(Error::Numerical(format!(
                    "inverse iteration stagnated at eigenvalue {k} (residual {res:.3e})"
                )));
            }
        }
        fix_sign(&mut v);
        vectors.push(v);
    }
    Ok(EigenSystem { values, vectors })
}

fn residual(diag: &[f64], off: &[f64], lambda: f64, v: &[f64]) -> f64 {
    let n = diag.len();
    let mut r = 0.0f64;
    for i in 0..n {
        let mut t = (diag[i] - lambda) * v[i];
        if i > 0 {
            t += off[i - 1] * v[i - 1];
        }
        if i < n - 1 {
            t += off[i] * v[i + 1];
        }
        r += t * t;
    }
    r.sqrt()
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `⟨δ_m, e^{-itH} δ_n⟩ = Σ_l e^{-i t E_l} v_l(m) v_l(n)`.
    pub fn amplitude(&self, m: usize, n: usize, t: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (e, v) in self.values.iter().zip(&self.vectors) {
            acc += Complex64::from_polar(v[m] * v[n], -e * t);
        }
        acc
    }

    /// Eigenfunction correlator entry `Σ_l |v_l(m)| |v_l(n)|` of this
    /// realization; dominates `|⟨δ_m, e^{-itH} δ_n⟩|` for every `t`.
    pub fn correlator_entry(&self, m: usize, n: usize) -> f64 {
        self.vectors.iter().map(|v| (v[m] * v[n]).abs()).sum()
    }
}

/// Checks `sup_t |amplitude| <= correlator entry` on the supplied times.
/// Returns `(sup |amplitude|, correlator entry)`.
pub fn dynamical_bound_check(sys: &EigenSystem, m: usize, n: usize, times: &[f64]) -> (f64, f64) {
    let sup = times
        .iter()
        .map(|&t| sys.amplitude(m, n, t).norm())
        .fold(0.0f64, f64::max);
    (sup, sys.correlator_entry(m, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackgroundPotential, BlockProfile, SingleSiteLaw};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Free Laplacian on n sites: eigenvalues 2 cos(pi j/(n+1)).
    #[test]
    fn free_laplacian_closed_form() {
        let n = 40;
        let diag = vec![0.0; n];
        let off = vec![1.0; n - 1];
        let sys = eigh_tridiagonal(&diag, &off).unwrap();
        let mut expect: Vec<f64> = (1..=n)
            .map(|j| 2.0 * (PI * j as f64 / (n as f64 + 1.0)).cos())
            .collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in sys.values.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "got {got} want {want}");
        }
        // eigenvector of E_j is sin(pi j (i+1)/(n+1)) up to sign/norm
        for (l, v) in sys.vectors.iter().enumerate() {
            // match ascending eigenvalue order: E asc corresponds to j desc
            let j = n - l;
            let norm = (2.0 / (n as f64 + 1.0)).sqrt();
            let model: Vec<f64> = (0..n)
                .map(|i| norm * (PI * j as f64 * (i as f64 + 1.0) / (n as f64 + 1.0)).sin())
                .collect();
            let dot: f64 = v.iter().zip(&model).map(|(a, b)| a * b).sum();
            assert!(
                (dot.abs() - 1.0).abs() < 1e-9,
                "eigenvector {l} overlap {dot}"
            );
        }
    }

    #[test]
    fn matches_dense_symmetric_eigensolver() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let diag: Vec<f64> = (0..n).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
        let off = vec![1.0; n - 1];
        let sys = eigh_tridiagonal(&diag, &off).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = diag[i];
            if i + 1 < n {
                dense[(i, i + 1)] = 1.0;
                dense[(i + 1, i)] = 1.0;
            }
        }
        let mut oracle: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().cloned().collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in sys.values.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9, "got {got} want {want}");
        }
    }

    #[test]
    fn eigenvectors_orthonormal_with_small_residual() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0, 2.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        let re = Realization::sample(&cfg, 15, 5);
        let fb = FiniteBox::assemble(&cfg, &re);
        let n = fb.dim();
        let off = vec![1.0; n - 1];
        let sys = fb.eigensystem().unwrap();
        let scale: f64 = fb.diag.iter().fold(0.0f64, |m, &d| m.max(d.abs())) + 2.0;
        for l in 0..n {
            let r = residual(&fb.diag, &off, sys.values[l], &sys.vectors[l]);
            assert!(r < 1e-10 * scale, "residual {r} at {l}");
            for l2 in 0..l {
                let dot: f64 = sys.vectors[l]
                    .iter()
                    .zip(&sys.vectors[l2])
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(dot.abs() < 1e-8, "overlap {dot} between {l2},{l}");
            }
        }
    }

    #[test]
    fn shifted_solve_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let n = 12;
            let diag: Vec<f64> = (0..n).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
            let off = vec![1.0; n - 1];
            let mu = 0.37;
            let b0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut b = b0.clone();
            super::tridiag_shifted_solve(&diag, &off, mu, &mut b);
            let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                dense[(i, i)] = diag[i] - mu;
                if i + 1 < n { dense[(i, i+1)] = 1.0; dense[(i+1, i)] = 1.0; }
            }
            let x = dense.lu().solve(&nalgebra::DVector::from_vec(b0.clone())).unwrap();
            for i in 0..n {
                assert!((b[i] - x[i]).abs() < 1e-8 * x[i].abs().max(1.0), "trial {trial} i {i}: {} vs {}", b[i], x[i]);
            }
        }
    }

    #[test]
    fn sturm_count_is_spectral_counting_function() {
        let diag = vec![0.5, -0.25, 1.0, 0.0, -1.5, 0.75];
        let off = vec![1.0; 5];
        let sys = eigh_tridiagonal(&diag, &off).unwrap();
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.4, 1.2, 3.0] {
            let count = sys.values.iter().filter(|&&e| e < x).count();
            assert_eq!(sturm_count(&diag, &off, x), count, "at x={x}");
        }
    }

    #[test]
    fn amplitude_at_t0_and_unitarity() {
        let diag = vec![0.3, -0.7, 0.1, 0.9];
        let off = vec![1.0; 3];
        let sys = eigh_tridiagonal(&diag, &off).unwrap();
        // t = 0: amplitude(m, n) = delta_{mn}
        for m in 0..4 {
            for n in 0..4 {
                let a = sys.amplitude(m, n, 0.0);
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((a.re - want).abs() < 1e-10 && a.im.abs() < 1e-10);
            }
        }
        // unitarity: column norm 1 at any t
        let t = 2.375;
        for n in 0..4 {
            let s: f64 = (0..4).map(|m| sys.amplitude(m, n, t).norm_sqr()).sum();
            assert!((s - 1.0).abs() < 1e-10, "column norm {s}");
        }
    }

    #[test]
    fn dynamical_bound_holds_on_random_times() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        let re = Realization::sample(&cfg, 10, 17);
        let sys = FiniteBox::assemble(&cfg, &re).eigensystem().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let times: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() * 1e4).collect();
        let (sup, bound) = dynamical_bound_check(&sys, 10, 3, &times);
        assert!(sup <= bound + 1e-12, "sup {sup} > bound {bound}");
        assert!(bound <= 1.0 + 1e-12, "Cauchy-Schwarz cap violated: {bound}");
    }

    #[test]
    fn finite_box_indexing() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0, 1.0, 1.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        let re = Realization::sample(&cfg, 4, 1);
        let fb = FiniteBox::assemble(&cfg, &re);
        assert_eq!(fb.dim(), 24);
        assert_eq!(fb.site(0), -12);
        assert_eq!(fb.site(23), 11);
        assert_eq!(fb.index(-12), 0);
        assert_eq!(fb.index(11), 23);
        // diagonal equals the block potential
        for idx in 0..fb.dim() {
            let n = fb.site(idx);
            let k = cfg.block_of(n);
            assert_eq!(fb.diag[idx], cfg.potential_at(n, re.omega(k)));
        }
    }

    /// Regression: this realization once produced a shifted solve whose
    /// output overflowed the naive sum-of-squares norm, and the eigenvector
    /// came back as the zero vector (which passes a residual check
    /// trivially). Completeness at the reference site catches that.
    #[test]
    fn eigenvectors_survive_a_near_singular_solve() {
        let cfg = ModelConfig::new(
            BlockProfile::new(vec![1.0]).unwrap(),
            SingleSiteLaw::uniform(0.0, 1.0),
            BackgroundPotential::Zero,
        )
        .unwrap();
        let re = Realization::sample(&cfg, 6, crate::model::realization_seed(3, 7));
        let fb = FiniteBox::assemble(&cfg, &re);
        let sys = fb.eigensystem().unwrap();
        for (i, v) in sys.vectors.iter().enumerate() {
            let norm2: f64 = v.iter().map(|x| x * x).sum();
            assert!((norm2 - 1.0).abs() < 1e-10, "vector {i} has norm² {norm2}");
        }
        let m0 = fb.index(0);
        let complete: f64 = sys.vectors.iter().map(|v| v[m0] * v[m0]).sum();
        assert!((complete - 1.0).abs() < 1e-10, "completeness {complete}");
    }
}
