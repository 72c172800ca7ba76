//! Discrete Prüfer variables: amplitude/phase form of transfer-matrix
//! solutions, continuous phase lifting along a block homotopy, boundary
//! phase maps, local (one-block) solutions, the coupling map `λ(x, y, E)`
//! and the closed-form Jacobian of the coordinate change
//! `ω ↦ (E_l, boundary phases)`.
//!
//! Conventions. A solution of `u(n+1) + u(n-1) + V(n) u(n) = E u(n)` is
//! written `u(n) = R(n) sin φ(n)`, `u(n+1) = R(n) cos φ(n)`; the recursion
//! becomes `cot φ(n) + tan φ(n-1) = E - V(n)`. Phases are lifted to real
//! numbers block by block: the one-block transfer is joined to the identity
//! through a rotation stage followed by a potential-scaling stage, and the
//! winding of that path fixes the lift. Per block the lifted increment
//! stays inside `(-π, (α+1)π)`, and — what the coupling map actually
//! relies on — sweeping the block coupling over its full support moves the
//! end phase by less than the torus circumference `2πB(α)`, where
//! `B(1) = 1` and `B(α) = α + 1` for `α ≥ 2` (checked empirically by
//! `WindingBound::validated`).

use crate::error::{Error, Result};
use crate::model::{BlockProfile, ModelConfig, Realization};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{FRAC_PI_2, PI};

/// Principal angle of the state vector `(u(n+1), u(n))`, in `(-π, π]`.
pub fn principal_phase(u_n: f64, u_next: f64) -> f64 {
    u_n.atan2(u_next)
}

fn wrap_pi(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    } else if y <= -PI {
        y += 2.0 * PI;
    }
    y
}

/// Snap `lifted` to the representative of `principal` (mod 2π) nearest it.
fn snap_to_principal(lifted: f64, principal: f64) -> f64 {
    principal + 2.0 * PI * ((lifted - principal) / (2.0 * PI)).round()
}

/// One block step: starting state `(u_cur, u_prev) = (u(αk), u(αk-1))` with
/// lifted phase `phi_start` at site `αk-1`, apply the block potential
/// `pot[i] = V(αk+i)` and return the new amplitudes and the lifted phase at
/// site `αk+α-1`.
#[derive(Debug, Clone)]
pub struct BlockStep {
    /// `u(αk+1) .. u(αk+α)` (the α new amplitudes).
    pub u: Vec<f64>,
    /// Lifted phase at site `αk+α-1`.
    pub phi_end: f64,
}

/// Apply `∏_{i=α-1..0} [[g(E - pot[i]), -1], [1, 0]]` to `(a, b)`.
fn apply_scaled_block(pot: &[f64], e: f64, g: f64, a: f64, b: f64) -> (f64, f64) {
    let (mut x, mut y) = (a, b);
    for &v in pot {
        let nx = g * (e - v) * x - y;
        y = x;
        x = nx;
    }
    (x, y)
}

/// Continuous-lift tracking along the scaling stage `g: 0 → 1`.
/// The path never passes through the origin (each factor has det 1), so the
/// angle is well defined; steps are subdivided until the half-step phase
/// increments are small and consistent with the full step, which rules out
/// a fast whirl aliasing to a small principal difference.
fn track_scaling_stage(pot: &[f64], e: f64, a: f64, b: f64, start_angle: f64) -> Result<f64> {
    let mut g = 0.0f64;
    let mut ang = start_angle;
    let mut cur = {
        let (x, y) = apply_scaled_block(pot, e, 0.0, a, b);
        y.atan2(x)
    };
    let mut step = 0.5f64;
    while g < 1.0 {
        let gn = (g + step).min(1.0);
        let (x, y) = apply_scaled_block(pot, e, gn, a, b);
        let next = y.atan2(x);
        let d = wrap_pi(next - cur);
        // midpoint check guards against a fast whirl aliasing to a small
        // principal difference over the full step
        let (xm, ym) = apply_scaled_block(pot, e, 0.5 * (g + gn), a, b);
        let mid = ym.atan2(xm);
        let d1 = wrap_pi(mid - cur);
        let d2 = wrap_pi(next - mid);
        let consistent = d1.abs() < 0.3 * PI
            && d2.abs() < 0.3 * PI
            && (d - d1 - d2).abs() < 1e-9;
        if consistent {
            ang += d;
            cur = next;
            g = gn;
            step = (step * 1.7).min(1.0 - g + 1e-16);
            if step <= 0.0 {
                break;
            }
            step = step.max(1e-12);
        } else {
            step *= 0.5;
            if step < 1e-13 {
                return Err(Error::Numerical(
                    "phase lift subdivision exhausted".into(),
                ));
            }
        }
    }
    Ok(ang)
}

/// Forward block map with lifted end phase.
///
/// `u_cur = u(αk)`, `u_prev = u(αk-1)`, `phi_start` is a lift of the
/// principal phase of `(u_cur, u_prev)`.
pub fn block_forward(
    pot: &[f64],
    e: f64,
    u_prev: f64,
    u_cur: f64,
    phi_start: f64,
) -> Result<BlockStep> {
    let alpha = pot.len();
    // rotation stage winds by exactly alpha * pi/2
    let ang0 = phi_start + alpha as f64 * FRAC_PI_2;
    let ang = track_scaling_stage(pot, e, u_cur, u_prev, ang0)?;
    // amplitudes by direct recursion
    let mut u = Vec::with_capacity(alpha);
    let (mut x, mut y) = (u_cur, u_prev);
    for &v in pot {
        let nx = (e - v) * x - y;
        y = x;
        x = nx;
        u.push(x);
    }
    // u now holds u(αk+1)..u(αk+α); end phase is the angle of (u(αk+α), u(αk+α-1))
    let phi_end = snap_to_principal(ang, principal_phase(y, x));
    Ok(BlockStep { u, phi_end })
}

/// Winding bound `B(α)`: boundary phases live on the torus `ℝ / 2πB ℤ`,
/// sized so a full coupling sweep cannot wrap the end phase around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindingBound(pub u32);

impl WindingBound {
    /// Default choice: `B(1) = 1`, `B(α) = α + 1` for `α ≥ 2`.
    pub fn default_for(alpha: usize) -> Self {
        if alpha == 1 {
            WindingBound(1)
        } else {
            WindingBound(alpha as u32 + 1)
        }
    }

    pub fn torus_circumference(&self) -> f64 {
        2.0 * PI * self.0 as f64
    }

    /// Empirical validation of the torus size. What the coupling map needs
    /// is that a full coupling sweep `λ: -M → M` moves the lifted end phase
    /// by strictly less than one torus circumference `2πB` (then at most one
    /// representative of any target is reachable and `λ` is unique). The
    /// sweep range is measured over random boundary angles and energies in
    /// `Σ₀`; on violation `B` doubles and the sweep repeats.
    pub fn validated(cfg: &ModelConfig, n_samples: usize, seed: u64) -> Self {
        let mut b = Self::default_for(cfg.alpha());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = cfg.law.support_bound();
        let sweep = |theta: f64, e: f64| -> f64 {
            let end = |lam: f64| {
                let pot = cfg.pot_block(0, lam);
                block_forward(&pot, e, theta.sin(), theta.cos(), theta)
                    .map(|st| st.phi_end)
                    .unwrap_or(f64::NAN)
            };
            end(m) - end(-m)
        };
        loop {
            let worst = (0..n_samples)
                .map(|_| {
                    use rand::Rng;
                    let theta = rng.gen::<f64>() * 2.0 * PI - PI;
                    let (lo, hi) = cfg.sigma0();
                    let e = lo + rng.gen::<f64>() * (hi - lo);
                    sweep(theta, e)
                })
                .fold(0.0f64, |acc, x| if x.is_nan() { f64::INFINITY } else { acc.max(x) });
            if worst < b.torus_circumference() {
                return b;
            }
            b = WindingBound(b.0 * 2);
        }
    }
}

/// Prüfer data of the left-normalized solution on the box `[-αL, αL-1]`:
/// `u(-αL-1) = 0`, `u(-αL) = 1` (so `R(-αL-1) = 1`, `φ(-αL-1) = 0`).
///
/// Amplitudes are stored scaled (`u(n) = u[idx] * exp(log_scale[idx])`) so
/// exponentially growing solutions never overflow.
#[derive(Debug, Clone)]
pub struct PruferTrajectory {
    pub l: usize,
    pub alpha: usize,
    /// Scaled amplitudes at sites `-αL-1 .. αL` (length `2αL + 2`).
    pub u: Vec<f64>,
    /// Per-site log scale; constant within a block.
    pub log_scale: Vec<f64>,
    /// Lifted phases at sites `-αL-1 .. αL-1` (length `2αL + 1`).
    pub phi: Vec<f64>,
}

impl PruferTrajectory {
    fn idx(&self, n: i64) -> usize {
        (n + (self.alpha * self.l) as i64 + 1) as usize
    }

    /// True amplitude `u(n)`, `n ∈ [-αL-1, αL]`. May overflow for long boxes;
    /// prefer the scaled accessors in growth estimates.
    pub fn u(&self, n: i64) -> f64 {
        let i = self.idx(n);
        self.u[i] * self.log_scale[i].exp()
    }

    pub fn u_scaled(&self, n: i64) -> (f64, f64) {
        let i = self.idx(n);
        (self.u[i], self.log_scale[i])
    }

    pub fn phi(&self, n: i64) -> f64 {
        self.phi[self.idx(n)]
    }

    /// `log R(n)` with `R(n) = hypot(u(n), u(n+1))`, `n ∈ [-αL-1, αL-1]`.
    pub fn log_r(&self, n: i64) -> f64 {
        let i = self.idx(n);
        let (a, sa) = (self.u[i], self.log_scale[i]);
        let (b, sb) = (self.u[i + 1], self.log_scale[i + 1]);
        let s = sa.max(sb);
        s + (a * (sa - s).exp()).hypot(b * (sb - s).exp()).ln()
    }

    pub fn first_site(&self) -> i64 {
        -((self.alpha * self.l) as i64) - 1
    }

    pub fn last_phase_site(&self) -> i64 {
        (self.alpha * self.l) as i64 - 1
    }

    /// Lifted boundary phase `θ_k = φ(αk+α-1)`, `k ∈ [-L-1, L-1]`.
    pub fn boundary_phase(&self, k: i64) -> f64 {
        self.phi((k + 1) * self.alpha as i64 - 1)
    }
}

/// Run the Prüfer recursion across the whole box at energy `e`.
pub fn prufer_trajectory(cfg: &ModelConfig, re: &Realization, e: f64) -> Result<PruferTrajectory> {
    let alpha = cfg.alpha();
    let l = re.l;
    let nsites = 2 * alpha * l;
    let mut u = Vec::with_capacity(nsites + 2);
    let mut log_scale = Vec::with_capacity(nsites + 2);
    let mut phi = Vec::with_capacity(nsites + 1);
    // site -αL-1 and -αL
    u.push(0.0);
    u.push(1.0);
    log_scale.push(0.0);
    log_scale.push(0.0);
    phi.push(0.0);
    let (mut prev, mut cur) = (0.0f64, 1.0f64);
    let mut scale = 0.0f64;
    let mut phi_boundary = 0.0f64;
    for k in -(l as i64)..(l as i64) {
        let pot = cfg.pot_block(k, re.omega(k));
        let st = block_forward(&pot, e, prev, cur, phi_boundary)?;
        // phases at sites αk .. αk+α-1: the boundary comes from the lift,
        // interior ones are principal values snapped next to their neighbour
        let mut anchor = phi_boundary;
        for i in 0..alpha {
            u.push(st.u[i]); // u(αk+i+1)
            log_scale.push(scale);
            let p = if i + 1 == alpha {
                st.phi_end
            } else {
                let u_site = if i == 0 { cur } else { st.u[i - 1] };
                let snapped = snap_to_principal(anchor, principal_phase(u_site, st.u[i]));
                anchor = snapped;
                snapped
            };
            phi.push(p);
        }
        phi_boundary = st.phi_end;
        // next block starts from (u(αk+α-1), u(αk+α))
        prev = if alpha >= 2 { st.u[alpha - 2] } else { cur };
        cur = st.u[alpha - 1];
        // rescale between blocks to dodge overflow of growing solutions
        let m = prev.abs().max(cur.abs());
        if m > 1e100 {
            let lg = m.ln();
            prev /= m;
            cur /= m;
            scale += lg;
        }
    }
    Ok(PruferTrajectory {
        l,
        alpha,
        u,
        log_scale,
        phi,
    })
}

/// Side of the anchor for a local one-block solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `u(αk-1) = sin θ`, `u(αk) = cos θ` (anchored at the left edge).
    Minus,
    /// `u(αk+α) = cos θ`, `u(αk+α-1) = sin θ` (anchored at the right edge).
    Plus,
}

/// One-block solution through block `k = 0` (sites `-1 .. α`) with potential
/// `pot[i] = V(i)`, boundary angle `θ` on the anchored side.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub side: Side,
    /// `u(-1), u(0), …, u(α)` (length α + 2).
    pub u: Vec<f64>,
    /// Lifted phase at site `-1`.
    pub phi_left: f64,
    /// Lifted phase at site `α-1`.
    pub phi_right: f64,
}

impl LocalSolution {
    /// `R(n)² = u(n)² + u(n+1)²` for `n ∈ [-1, α-1]`.
    pub fn r_sq(&self, n: i64) -> f64 {
        let i = (n + 1) as usize;
        self.u[i] * self.u[i] + self.u[i + 1] * self.u[i + 1]
    }

    /// `Σ_i f_i u(i)²` over the block sites `0 .. α-1`.
    pub fn weighted_mass(&self, profile: &BlockProfile) -> f64 {
        (0..profile.alpha)
            .map(|i| profile.f[i] * self.u[i + 1] * self.u[i + 1])
            .sum()
    }
}

/// Solve through one block from the anchored side. For `Side::Minus` the
/// lifted `phi_right` continues `θ`; for `Side::Plus` the lifted `phi_left`
/// is the unique preimage of `θ` under the (strictly increasing) forward
/// lift.
pub fn local_solution(
    side: Side,
    profile: &BlockProfile,
    v0_block: &[f64],
    theta: f64,
    lambda: f64,
    e: f64,
) -> Result<LocalSolution> {
    let alpha = profile.alpha;
    let pot: Vec<f64> = (0..alpha)
        .map(|i| profile.f[i] * lambda + v0_block[i])
        .collect();
    match side {
        Side::Minus => {
            let (up, uc) = (theta.sin(), theta.cos());
            let st = block_forward(&pot, e, up, uc, theta)?;
            let mut u = vec![up, uc];
            u.extend_from_slice(&st.u);
            Ok(LocalSolution {
                side,
                u,
                phi_left: theta,
                phi_right: st.phi_end,
            })
        }
        Side::Plus => {
            // backward recursion u(n-1) = (E - V(n)) u(n) - u(n+1)
            let mut u = vec![0.0f64; alpha + 2];
            u[alpha + 1] = theta.cos();
            u[alpha] = theta.sin();
            for n in (0..alpha).rev() {
                u[n] = (e - pot[n]) * u[n + 1] - u[n + 2];
            }
            let phi_left = invert_forward_lift(&pot, e, theta, principal_phase(u[0], u[1]))?;
            Ok(LocalSolution {
                side,
                u,
                phi_left,
                phi_right: theta,
            })
        }
    }
}

/// Find the lifted left phase `x` with forward lift `x ↦ θ`; the forward
/// lift is strictly increasing and commutes with `x ↦ x + π`, so a bracket
/// of width `2π` around the principal candidate suffices.
fn invert_forward_lift(pot: &[f64], e: f64, theta_right: f64, principal_left: f64) -> Result<f64> {
    let lift = |x: f64| -> Result<f64> {
        Ok(block_forward(pot, e, x.sin(), x.cos(), x)?.phi_end)
    };
    // candidate congruent to principal_left mod 2π, shifted by multiples of π
    let t0 = lift(principal_left)?;
    // lift(x + mπ) = lift(x) + mπ; choose m so the value lands at theta_right
    let m = ((theta_right - t0) / PI).round();
    let mut lo = principal_left + (m - 1.0) * PI;
    let mut hi = principal_left + (m + 1.0) * PI;
    let mut flo = lift(lo)? - theta_right;
    let mut fhi = lift(hi)? - theta_right;
    if flo > 0.0 || fhi < 0.0 {
        // widen once; should not happen given monotonicity
        lo -= PI;
        hi += PI;
        flo = lift(lo)? - theta_right;
        fhi = lift(hi)? - theta_right;
        if flo > 0.0 || fhi < 0.0 {
            return Err(Error::Numerical("forward lift inversion lost bracket".into()));
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = lift(mid)? - theta_right;
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The coupling map: the unique `λ ∈ [-M, M]` whose forward (minus-side)
/// lift carries the left boundary angle `y` to the right boundary angle `x`
/// modulo `2πB`. Returns `None` when no representative of `x` is reachable.
///
/// The lifted end phase is strictly increasing in `λ`, which drives the
/// bisection (resolved to `1e-11` in `λ`).
pub fn coupling_lambda(
    x: f64,
    y: f64,
    e: f64,
    profile: &BlockProfile,
    v0_block: &[f64],
    support_bound: f64,
    b: WindingBound,
) -> Result<Option<f64>> {
    let m = support_bound;
    let circ = b.torus_circumference();
    let end = |lam: f64| -> Result<f64> {
        let pot: Vec<f64> = (0..profile.alpha)
            .map(|i| profile.f[i] * lam + v0_block[i])
            .collect();
        Ok(block_forward(&pot, e, y.sin(), y.cos(), y)?.phi_end)
    };
    let a = end(-m)?;
    let bb = end(m)?;
    // candidates x + circ * j inside [a, bb] (at most one since bb - a < circ)
    let jlo = ((a - x) / circ).ceil() as i64;
    let jhi = ((bb - x) / circ).floor() as i64;
    if jlo > jhi {
        return Ok(None);
    }
    let target = x + circ * jlo as f64;
    let (mut lo, mut hi) = (-m, m);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if end(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-11 {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// `∂φ(n)/∂ω_j` from the closed-form identity
/// `R²(n) ∂φ(n)/∂ω_j = Σ_i f_i u(αj+i)²` (sum truncated at `n` when `j`
/// is the block containing `n`; zero for later blocks).
pub fn dphi_domega(cfg: &ModelConfig, traj: &PruferTrajectory, j: i64, n: i64) -> f64 {
    let alpha = cfg.alpha() as i64;
    let block_n = n.div_euclid(alpha);
    if j > block_n {
        return 0.0;
    }
    let last = if j == block_n { n - alpha * j } else { alpha - 1 };
    let log_r = traj.log_r(n);
    let mut acc = 0.0;
    for i in 0..=last {
        let (us, ls) = traj.u_scaled(alpha * j + i);
        let term = cfg.profile.f[i as usize] * us * us * (2.0 * (ls - log_r)).exp();
        acc += term;
    }
    acc
}

/// `∂φ(n)/∂E = -Σ_{m=-αL}^{n} u(m)² / R(n)²`.
pub fn dphi_de(traj: &PruferTrajectory, n: i64) -> f64 {
    let log_r = traj.log_r(n);
    let mut acc = 0.0;
    let first = traj.first_site() + 1;
    for m in first..=n {
        let (us, ls) = traj.u_scaled(m);
        acc += us * us * (2.0 * (ls - log_r)).exp();
    }
    -acc
}

/// Closed-form Jacobian determinant of `ω ↦ (E_l, θ_{-L}, …, θ_{L-2})` at an
/// eigenvalue `E_l`:
///
/// `det = - Π_{j=-L}^{L-1} (Σ_i f_i u(αj+i)²) / Π_{k=-L}^{L-2} R(αk+α-1)²
///        / Σ_n u(n)²`.
///
/// Always negative; returned in log/sign form with the plain value when it
/// fits in `f64`.
#[derive(Debug, Clone, Copy)]
pub struct JacobianDet {
    pub log_abs: f64,
    pub sign: f64,
    pub value: f64,
}

pub fn jacobian_det(cfg: &ModelConfig, re: &Realization, e_l: f64) -> Result<JacobianDet> {
    let traj = prufer_trajectory(cfg, re, e_l)?;
    let alpha = cfg.alpha() as i64;
    let l = re.l as i64;
    // reference scale: normalize u² sums by exp(2 s) with per-block scales
    let mut log_num = 0.0f64;
    for j in -l..l {
        let mut acc = 0.0f64;
        let (_, s0) = traj.u_scaled(alpha * j);
        for i in 0..alpha {
            let (us, ls) = traj.u_scaled(alpha * j + i);
            acc += cfg.profile.f[i as usize] * us * us * (2.0 * (ls - s0)).exp();
        }
        log_num += acc.ln() + 2.0 * s0;
    }
    let mut log_den = 0.0f64;
    for k in -l..l - 1 {
        log_den += 2.0 * traj.log_r(alpha * k + alpha - 1);
    }
    // Σ u² over the box
    let smax = (-(alpha * l)..alpha * l)
        .map(|n| traj.u_scaled(n).1)
        .fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = (-(alpha * l)..alpha * l)
        .map(|n| {
            let (us, ls) = traj.u_scaled(n);
            us * us * (2.0 * (ls - smax)).exp()
        })
        .sum();
    let log_mass = mass.ln() + 2.0 * smax;
    let log_abs = log_num - log_den - log_mass;
    Ok(JacobianDet {
        log_abs,
        sign: -1.0,
        value: -log_abs.exp(),
    })
}

/// Boundary phases `θ_{-L} .. θ_{L-2}` of the trajectory (the coordinates
/// that, together with `E_l`, form the change of variables).
pub fn boundary_phases(traj: &PruferTrajectory) -> Vec<f64> {
    let l = traj.l as i64;
    (-l..l - 1).map(|k| traj.boundary_phase(k)).collect()
}

/// Winding-validated exceptional-energy support (used by the lyapunov
/// module's zero-exponent constructions): re-exported sampling seed helper.
pub use crate::model::realization_seed;
