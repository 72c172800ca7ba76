//! Transfer matrices, Lyapunov-exponent estimation and Fürstenberg
//! criteria for block random potentials.
//!
//! The one-step transfer at energy `E` over a site with potential `V` is
//! `T = [[E - V, -1], [1, 0]]`, so that `(u(n+1), u(n)) = T (u(n), u(n-1))`.
//! Block transfers multiply the α site factors right-to-left. The Lyapunov
//! exponent is the almost-sure per-site growth rate of `‖M_k ⋯ M_1 v‖`.

use crate::model::{ModelConfig, SingleSiteLaw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Small dense 2×2 real matrix; enough linear algebra for transfer cocycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn sub(&self, rhs: &Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] - rhs.0[0][0], self.0[0][1] - rhs.0[0][1]],
            [self.0[1][0] - rhs.0[1][0], self.0[1][1] - rhs.0[1][1]],
        ])
    }

    pub fn neg(&self) -> Mat2 {
        Mat2([
            [-self.0[0][0], -self.0[0][1]],
            [-self.0[1][0], -self.0[1][1]],
        ])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn pow(&self, n: u32) -> Mat2 {
        let mut acc = Mat2::IDENTITY;
        for _ in 0..n {
            acc = self.mul(&acc);
        }
        acc
    }

    /// Deviation from `±I` or a given target, as a Frobenius distance.
    pub fn distance_to(&self, target: &Mat2) -> f64 {
        self.sub(target).frobenius_norm()
    }
}

/// One-step transfer matrix `[[E - V, -1], [1, 0]]`.
pub fn transfer(e: f64, v: f64) -> Mat2 {
    Mat2([[e - v, -1.0], [1.0, 0.0]])
}

/// Transfer across one block: product of the site factors, first site
/// applied first (rightmost in the product).
pub fn block_transfer(pot: &[f64], e: f64) -> Mat2 {
    let mut m = Mat2::IDENTITY;
    for &v in pot {
        m = transfer(e, v).mul(&m);
    }
    m
}

/// Free (zero-potential) monodromy over `n` sites, `[[E, -1], [1, 0]]^n`.
pub fn free_monodromy(e: f64, n: u32) -> Mat2 {
    transfer(e, 0.0).pow(n)
}

/// Exceptional energies of the period-`n` free monodromy: the elliptic
/// energies `E_j = 2 cos(2πj/n)` at which `[[E, -1], [1, 0]]^n = I`.
/// Duplicates (`j` and `n - j`) are dropped; `E = ±2` is parabolic, not
/// elliptic, and excluded. Empty for `n ≤ 2`.
pub fn exceptional_support(n: u32) -> Vec<f64> {
    let upper = n.div_ceil(2); // exclusive: j = 1 .. ⌈n/2⌉ - 1
    (1..upper)
        .map(|j| 2.0 * (2.0 * PI * j as f64 / n as f64).cos())
        .collect()
}

/// Monte-Carlo Lyapunov estimate with batch-mean error bars.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovEstimate {
    /// Per-site exponent estimate.
    pub gamma: f64,
    /// Standard error from 32 batch means.
    pub stderr: f64,
    /// Total number of lattice sites traversed.
    pub sites: u64,
}

const N_BATCHES: usize = 32;

/// Estimate the Lyapunov exponent at energy `e` by driving a normalized
/// vector through `n_blocks` i.i.d. blocks and averaging the per-site log
/// growth. The blocks are split into 32 batches; the reported standard
/// error is that of the batch means.
pub fn lyapunov_estimate(
    cfg: &ModelConfig,
    e: f64,
    n_blocks: usize,
    seed: u64,
) -> LyapunovEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = cfg.alpha();
    let mut v = [1.0f64, 0.0];
    let batch_len = (n_blocks / N_BATCHES).max(1);
    let mut batch_means = Vec::with_capacity(N_BATCHES);
    let mut batch_log = 0.0f64;
    let mut batch_count = 0usize;
    let mut total_log = 0.0f64;
    let mut blocks_done = 0usize;
    while blocks_done < n_blocks {
        let omega = cfg.law.sample(&mut rng);
        let pot = cfg.pot_block(0, omega);
        v = block_transfer(&pot, e).apply(v);
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let l = norm.ln();
        v = [v[0] / norm, v[1] / norm];
        batch_log += l;
        total_log += l;
        batch_count += 1;
        blocks_done += 1;
        if batch_count == batch_len && batch_means.len() < N_BATCHES - 1 {
            batch_means.push(batch_log / (batch_count * alpha) as f64);
            batch_log = 0.0;
            batch_count = 0;
        }
    }
    if batch_count > 0 {
        batch_means.push(batch_log / (batch_count * alpha) as f64);
    }
    let gamma = total_log / (n_blocks * alpha) as f64;
    let nb = batch_means.len();
    let stderr = if nb > 1 {
        let mean = batch_means.iter().sum::<f64>() / nb as f64;
        let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
            / (nb as f64 - 1.0);
        (var / nb as f64).sqrt()
    } else {
        f64::INFINITY
    };
    LyapunovEstimate {
        gamma,
        stderr,
        sites: (n_blocks * alpha) as u64,
    }
}

/// Exact Lyapunov exponent of the constant potential `V ≡ c`:
/// zero on the band `|E - c| ≤ 2`, `arccosh(|E - c| / 2)` outside it.
pub fn constant_potential_lyapunov(e: f64, c: f64) -> f64 {
    let x = (e - c).abs() / 2.0;
    if x <= 1.0 {
        0.0
    } else {
        x.acosh()
    }
}

/// Outcome of the Fürstenberg positivity criteria for a finite family of
/// SL(2, ℝ) matrices.
#[derive(Debug, Clone)]
pub struct FurstenbergReport {
    /// The closed group generated by the family is noncompact.
    pub noncompact: bool,
    /// No common invariant set of one or two projective lines.
    pub strongly_irreducible: bool,
}

impl FurstenbergReport {
    pub fn positive(&self) -> bool {
        self.noncompact && self.strongly_irreducible
    }
}

/// Projective line through direction `(x, y)`, as an angle in `[0, π)`.
fn line_angle(v: [f64; 2]) -> f64 {
    let mut t = v[1].atan2(v[0]);
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        t -= PI;
    }
    t
}

fn line_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Real eigendirections of `m` as projective angles (empty in the elliptic
/// case, one angle for a parabolic matrix, two for a hyperbolic one).
fn fixed_lines(m: &Mat2, tol: f64) -> Vec<f64> {
    // direction (1, z) is fixed iff c z² + (d - a) z - b = 0 for the action
    // of [[a, b], [c, d]] on slopes z = y/x; the vertical line (0, 1) is
    // fixed iff b = 0
    let [[a, b], [c, d]] = m.0;
    let scale = m.frobenius_norm().max(1.0);
    let mut out = Vec::new();
    if c.abs() < tol * scale {
        // linear (or constant) slope equation
        if b.abs() < tol * scale {
            out.push(line_angle([0.0, 1.0]));
        }
        if (d - a).abs() > tol * scale {
            out.push(line_angle([1.0, b / (d - a)]));
        } else if b.abs() < tol * scale {
            // m ∝ I: every line is fixed; report empty so callers treat it
            // as unconstraining
            return Vec::new();
        }
    } else {
        let disc = (d - a) * (d - a) + 4.0 * c * b;
        if disc < 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        for z in [((a - d) + s) / (2.0 * c), ((a - d) - s) / (2.0 * c)] {
            out.push(line_angle([1.0, z]));
        }
        out.dedup_by(|x, y| line_distance(*x, *y) < 1e-12);
    }
    out
}

fn is_scalar(m: &Mat2, tol: f64) -> bool {
    let scale = m.frobenius_norm().max(1.0);
    m.0[0][1].abs() < tol * scale
        && m.0[1][0].abs() < tol * scale
        && (m.0[0][0] - m.0[1][1]).abs() < tol * scale
}

/// Check whether the set of projective lines `set` is invariant (as a set)
/// under every matrix in `mats`.
fn set_invariant(mats: &[Mat2], set: &[f64], tol: f64) -> bool {
    mats.iter().all(|m| {
        set.iter().all(|&t| {
            let img = line_angle(m.apply([t.cos(), t.sin()]));
            set.iter().any(|&s| line_distance(img, s) < tol)
        })
    })
}

/// Fürstenberg criteria for the group generated by `mats` (assumed to be
/// determinant-one). Noncompactness holds when some generator has
/// `|tr| > 2` or two generators fail to commute (every compact subgroup of
/// SL(2, ℝ) is conjugate into SO(2), hence abelian). Strong irreducibility
/// fails exactly when a set of at most two lines is invariant; candidate
/// sets are built from the fixed lines and 2-cycles of the first
/// non-scalar generator.
pub fn furstenberg_check(mats: &[Mat2], tol: f64) -> FurstenbergReport {
    let noncompact = mats.iter().any(|m| m.trace().abs() > 2.0 + tol)
        || mats.iter().enumerate().any(|(i, m)| {
            mats[i + 1..].iter().any(|n| {
                m.mul(n).sub(&n.mul(m)).frobenius_norm()
                    > tol * m.frobenius_norm() * n.frobenius_norm()
            })
        });

    let strongly_irreducible = match mats.iter().find(|m| !is_scalar(m, tol)) {
        None => false, // scalar family: every line is invariant
        Some(g) => {
            let mut candidates: Vec<Vec<f64>> = Vec::new();
            let fixed = fixed_lines(g, tol);
            for &t in &fixed {
                candidates.push(vec![t]);
            }
            if fixed.len() == 2 {
                candidates.push(fixed.clone());
            }
            // 2-cycles of g: fixed lines of g² that g does not fix
            for &t in &fixed_lines(&g.mul(g), tol) {
                let img = line_angle(g.apply([t.cos(), t.sin()]));
                if line_distance(img, t) > tol {
                    candidates.push(vec![t, img]);
                }
            }
            !candidates
                .iter()
                .any(|set| set_invariant(mats, set, tol.max(1e-9)))
        }
    };

    FurstenbergReport {
        noncompact,
        strongly_irreducible,
    }
}

/// Block transfer matrices over the (finite) support of the single-site
/// law; errors if the law is not atomic.
pub fn support_block_transfers(cfg: &ModelConfig, e: f64) -> Option<Vec<Mat2>> {
    match &cfg.law {
        SingleSiteLaw::Atomic { points, .. } => Some(
            points
                .iter()
                .map(|&w| block_transfer(&cfg.pot_block(0, w), e))
                .collect(),
        ),
        _ => None,
    }
}
