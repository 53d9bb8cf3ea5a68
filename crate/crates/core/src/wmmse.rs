//! Weighted-MMSE machinery for one slot.
//!
//! The rate reward `-f_SN(Γ)` of a user is rewritten through a receive
//! coefficient `δ`, an MSE weight `ω` and the clamp `max(-R_max, k)` with
//! `k = (ω e − ln ω − 1)/ln 2`. For fixed `(δ, ω)` the problem in the
//! precoders is convex; [`solve_qcqp_slot`] solves it by spectral projected
//! gradient, and [`slot_block_descent`] alternates the three blocks.

use std::f64::consts::LN_2;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{col_dot, frob_sq, row_powers, whiten};
use crate::model::{beam_power, sinr_unchecked, CMat};
use crate::modcod::ShannonFit;

/// `Θ_m = |h_mᴴw_m|²/ξ + Σ_{j≠m}|h_mᴴw_j|² + σ²`.
pub fn effective_cov(h: &CMat, w: &CMat, noise: f64, xi: f64, m: usize) -> f64 {
    (0..w.ncols())
        .map(|j| {
            let g = col_dot(h, m, w, j).norm_sqr();
            if j == m {
                g / xi
            } else {
                g
            }
        })
        .sum::<f64>()
        + noise
}

/// MMSE receive coefficient `conj(h_mᴴw_m) / (√ξ Θ_m)`.
pub fn delta_star(h: &CMat, w: &CMat, noise: f64, xi: f64, m: usize) -> Result<Complex64> {
    let theta = effective_cov(h, w, noise, xi, m);
    if !(theta > 0.0) {
        return Err(Error::Degenerate(format!("user {m} has zero effective covariance")));
    }
    Ok(col_dot(h, m, w, m).conj() / (xi.sqrt() * theta))
}

/// Optimal MSE weight `1 + Γ/ξ`.
pub fn omega_star(gamma: f64, xi: f64) -> f64 {
    1.0 + gamma / xi
}

/// Alternative weight `1 + |h_mᴴw_m|²/(ξ Θ_m)`, normalized by the full covariance.
pub fn omega_cov_normalized(h: &CMat, w: &CMat, noise: f64, xi: f64, m: usize) -> f64 {
    1.0 + col_dot(h, m, w, m).norm_sqr() / (xi * effective_cov(h, w, noise, xi, m))
}

/// Which closed form supplies `ω` in block descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OmegaForm {
    /// `1 + Γ/ξ`, the reciprocal of the MMSE.
    #[default]
    InverseMse,
    /// See [`omega_cov_normalized`].
    CovNormalized,
}

/// Mean-square error of user `m` for receive coefficient `delta`.
pub fn mse_e(h: &CMat, w: &CMat, delta: Complex64, noise: f64, xi: f64, m: usize) -> f64 {
    let a = col_dot(h, m, w, m);
    1.0 - 2.0 / xi.sqrt() * (delta * a).re + delta.norm_sqr() * effective_cov(h, w, noise, xi, m)
}

/// `(ω e − ln ω − 1)/ln 2`.
pub fn clamp_term(omega: f64, e: f64) -> f64 {
    (omega * e - omega.ln() - 1.0) / LN_2
}

/// Auxiliary variables of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotAuxiliaries {
    pub delta: Vec<Complex64>,
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Data of the convex subproblem in the precoders of one slot.
#[derive(Debug, Clone, Copy)]
pub struct QcqpInputs<'a> {
    /// Channel, `N × M`, raw units.
    pub h: &'a CMat,
    pub noise: &'a [f64],
    /// Per-beam power prices, `≥ 1`.
    pub beta: &'a [f64],
    /// Per-user rate prices, `≥ 0`.
    pub mu: &'a [f64],
    /// Reweighting weights for the relaxed activity cap.
    pub psi: &'a [f64],
    pub max_beam_power: &'a [f64],
    /// Right-hand side of the relaxed activity cap; `f64::INFINITY` disables it.
    pub activity_budget: f64,
    pub fit: ShannonFit,
    /// Users that may be served in this slot.
    pub served: &'a [bool],
}

impl QcqpInputs<'_> {
    fn check(&self) -> Result<()> {
        let (n, m) = self.h.shape();
        let ok = self.noise.len() == m
            && self.beta.len() == n
            && self.mu.len() == m
            && self.psi.len() == n
            && self.max_beam_power.len() == n
            && self.served.len() == m;
        if !ok {
            return Err(Error::Contract("subproblem inputs have inconsistent lengths".into()));
        }
        if self.beta.iter().any(|&b| !(b >= 1.0)) || self.mu.iter().any(|&u| !(u >= 0.0)) {
            return Err(Error::Contract("beam prices must be >= 1 and rate prices >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpSettings {
    pub max_iterations: usize,
    /// Projected-gradient residual tolerance.
    pub tolerance: f64,
    /// Half-width of the smoothing band around the rate clamp, bit/s/Hz.
    pub smoothing: f64,
}

impl Default for QcqpSettings {
    fn default() -> Self {
        Self { max_iterations: 5000, tolerance: 1e-6, smoothing: 1e-3 }
    }
}

/// Result of the projected-gradient solve, including diagnostics.
#[derive(Debug, Clone)]
pub(crate) struct QcqpOutcome {
    pub w: CMat,
    pub alpha: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// The subproblem in preconditioned, noise-whitened variables
/// `y_n = √β_n w_n` with channel `h̃_{n,m} = h_{n,m}/(σ_m √β_n)`.
struct Scaled {
    h: CMat,
    cap: Vec<f64>,
    psi: Vec<f64>,
    budget: f64,
    served: Vec<bool>,
    /// `μ_m ω_m / ln 2`; zero for users without reward.
    weight: Vec<f64>,
    /// Whitened receive coefficients.
    delta: Vec<Complex64>,
    omega: Vec<f64>,
    mu: Vec<f64>,
    sqrt_beta: Vec<f64>,
    inv_sqrt_xi: f64,
    inv_xi: f64,
    r_max: f64,
    tau: f64,
}

impl Scaled {
    fn new(inputs: &QcqpInputs, delta: &[Complex64], omega: &[f64], tau: f64) -> Self {
        let (n, m) = inputs.h.shape();
        let sqrt_beta: Vec<f64> = inputs.beta.iter().map(|b| b.sqrt()).collect();
        let mut h = whiten(inputs.h, inputs.noise);
        for r in 0..n {
            h.row_mut(r).scale_mut(1.0 / sqrt_beta[r]);
        }
        let served = inputs.served.to_vec();
        Self {
            h,
            cap: (0..n).map(|r| inputs.beta[r] * inputs.max_beam_power[r]).collect(),
            psi: (0..n).map(|r| inputs.psi[r] / inputs.beta[r]).collect(),
            budget: inputs.activity_budget,
            weight: (0..m)
                .map(|u| if served[u] { inputs.mu[u] * omega[u] / LN_2 } else { 0.0 })
                .collect(),
            delta: (0..m).map(|u| delta[u] * inputs.noise[u].sqrt()).collect(),
            omega: omega.to_vec(),
            mu: inputs.mu.to_vec(),
            served,
            sqrt_beta,
            inv_sqrt_xi: 1.0 / inputs.fit.xi.sqrt(),
            inv_xi: 1.0 / inputs.fit.xi,
            r_max: inputs.fit.r_max,
            tau,
        }
    }

    fn to_scaled(&self, w: &CMat) -> CMat {
        let mut y = w.clone();
        for r in 0..y.nrows() {
            y.row_mut(r).scale_mut(self.sqrt_beta[r]);
        }
        for (u, &s) in self.served.iter().enumerate() {
            if !s {
                y.column_mut(u).fill(Complex64::new(0.0, 0.0));
            }
        }
        y
    }

    fn from_scaled(&self, y: &CMat) -> CMat {
        let mut w = y.clone();
        for r in 0..w.nrows() {
            w.row_mut(r).scale_mut(1.0 / self.sqrt_beta[r]);
        }
        w
    }

    /// Clamp arguments `k_m` for the served users (others get `-R_max`).
    fn clamp_args(&self, y: &CMat, cross: &mut CMat) -> Vec<f64> {
        let m = y.ncols();
        for u in 0..m {
            for j in 0..m {
                cross[(u, j)] = if self.served[u] && self.served[j] {
                    col_dot(&self.h, u, y, j)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
        (0..m)
            .map(|u| {
                if !self.served[u] {
                    return -self.r_max;
                }
                let mut theta = 1.0;
                for j in 0..m {
                    let g = cross[(u, j)].norm_sqr();
                    theta += if j == u { g * self.inv_xi } else { g };
                }
                let d = self.delta[u];
                let e = 1.0 - 2.0 * self.inv_sqrt_xi * (d * cross[(u, u)]).re + d.norm_sqr() * theta;
                clamp_term(self.omega[u], e)
            })
            .collect()
    }

    fn smooth(&self, k: f64) -> (f64, f64) {
        let lo = -self.r_max;
        let tau = self.tau;
        if k >= lo + tau {
            (k, 1.0)
        } else if k <= lo - tau {
            (lo, 0.0)
        } else {
            let s = k - lo + tau;
            (lo + s * s / (4.0 * tau), s / (2.0 * tau))
        }
    }

    fn exact_objective(&self, y: &CMat) -> f64 {
        let mut cross = CMat::zeros(y.ncols(), y.ncols());
        let k = self.clamp_args(y, &mut cross);
        frob_sq(y) + self.reward(&k, |k| k.max(-self.r_max))
    }

    fn reward(&self, k: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        (0..k.len())
            .filter(|&u| self.served[u] && self.mu[u] > 0.0)
            .map(|u| self.mu[u] * f(k[u]))
            .sum()
    }

    /// Smoothed objective and its gradient.
    fn eval(&self, y: &CMat, cross: &mut CMat, grad: &mut CMat) -> f64 {
        let k = self.clamp_args(y, cross);
        let m = y.ncols();
        let mut value = frob_sq(y);
        grad.copy_from(y);
        grad.scale_mut(2.0);
        for u in 0..m {
            if !self.served[u] || self.mu[u] == 0.0 {
                continue;
            }
            let (s, ds) = self.smooth(k[u]);
            value += self.mu[u] * s;
            let c = self.weight[u] * ds;
            if c == 0.0 {
                continue;
            }
            let d2 = self.delta[u].norm_sqr();
            for j in 0..m {
                if !self.served[j] {
                    continue;
                }
                let scale = if j == u { self.inv_xi } else { 1.0 };
                let mut coef = cross[(u, j)] * (2.0 * c * d2 * scale);
                if j == u {
                    coef -= self.delta[u].conj() * (2.0 * c * self.inv_sqrt_xi);
                }
                for r in 0..y.nrows() {
                    grad[(r, j)] += self.h[(r, u)] * coef;
                }
            }
        }
        value
    }

    /// Euclidean projection onto the per-beam balls intersected with the
    /// weighted total-power ball. Rows are shrunk by
    /// `min(1/(1+νψ_n), √cap_n/‖r_n‖)` with `ν` found by bisection.
    fn project(&self, y: &mut CMat) {
        let n = y.nrows();
        for (u, &s) in self.served.iter().enumerate() {
            if !s {
                y.column_mut(u).fill(Complex64::new(0.0, 0.0));
            }
        }
        let norms: Vec<f64> = row_powers(y);
        let factor = |nu: f64, r: usize| -> f64 {
            let ball = if norms[r] > self.cap[r] { (self.cap[r] / norms[r]).sqrt() } else { 1.0 };
            ball.min(1.0 / (1.0 + nu * self.psi[r]))
        };
        let weighted = |nu: f64| -> f64 { (0..n).map(|r| self.psi[r] * norms[r] * factor(nu, r).powi(2)).sum() };
        let mut nu = 0.0;
        if self.budget.is_finite() && weighted(0.0) > self.budget {
            let mut hi = 1.0;
            while weighted(hi) > self.budget {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if weighted(mid) > self.budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            nu = hi;
        }
        for r in 0..n {
            let f = factor(nu, r);
            if f < 1.0 {
                y.row_mut(r).scale_mut(f);
            }
        }
    }

    fn residual(&self, y: &CMat, grad: &CMat) -> f64 {
        let mut p = y - grad.map(|x| x * 0.5);
        self.project(&mut p);
        (y - p).norm() / y.norm().max(1.0)
    }
}

fn real_dot(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Spectral projected gradient on the smoothed subproblem.
pub(crate) fn solve_qcqp_outcome(
    inputs: &QcqpInputs,
    delta: &[Complex64],
    omega: &[f64],
    w0: Option<&CMat>,
    settings: &QcqpSettings,
) -> Result<QcqpOutcome> {
    inputs.check()?;
    let (n, m) = inputs.h.shape();
    let sc = Scaled::new(inputs, delta, omega, settings.smoothing);
    let start = w0.cloned().unwrap_or_else(|| CMat::zeros(n, m));
    let mut y = sc.to_scaled(&start);
    sc.project(&mut y);
    // A served user with a reward but an exactly-zero precoder sits on a
    // stationary point of the reward only because δ·0 = 0; seed it.
    for u in 0..m {
        if sc.served[u] && sc.weight[u] > 0.0 && y.column(u).iter().all(|x| x.norm_sqr() == 0.0) {
            let hn = sc.h.column(u).norm();
            if hn > 0.0 {
                let seed = sc.h.column(u) * Complex64::new(1e-3 / hn, 0.0);
                y.set_column(u, &seed);
            }
        }
    }
    sc.project(&mut y);

    let mut cross = CMat::zeros(m, m);
    let mut grad = CMat::zeros(n, m);
    let mut f = sc.eval(&y, &mut cross, &mut grad);
    let mut step = {
        let curvature: f64 = (0..m)
            .map(|u| sc.weight[u] * sc.delta[u].norm_sqr() * sc.h.column(u).norm_squared())
            .sum();
        1.0 / (2.0 + 2.0 * curvature)
    };
    let mut residual = sc.residual(&y, &grad);
    let mut iterations = 0;
    let mut g_new = CMat::zeros(n, m);
    while residual > settings.tolerance && iterations < settings.max_iterations {
        iterations += 1;
        let mut target = &y - grad.map(|x| x * step);
        sc.project(&mut target);
        let d = &target - &y;
        let slope = real_dot(&grad, &d);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &y + d.map(|x| x * t);
            let ft = sc.eval(&trial, &mut cross, &mut g_new);
            if ft <= f + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((y_next, f_next)) = accepted else { break };
        let s = &y_next - &y;
        let dg = &g_new - &grad;
        let sy = real_dot(&s, &dg);
        step = if sy > 0.0 { (real_dot(&s, &s) / sy).clamp(1e-12, 1e12) } else { 1e12 };
        y = y_next;
        f = f_next;
        std::mem::swap(&mut grad, &mut g_new);
        residual = sc.residual(&y, &grad);
    }
    let converged = residual <= settings.tolerance;
    let mut cross = CMat::zeros(m, m);
    let k = sc.clamp_args(&y, &mut cross);
    let alpha = k.iter().map(|&v| v.max(-sc.r_max)).collect();
    Ok(QcqpOutcome {
        objective: sc.exact_objective(&y),
        w: sc.from_scaled(&y),
        alpha,
        iterations,
        residual,
        converged,
    })
}

/// Solves the convex slot subproblem for fixed `(δ, ω)`.
///
/// Returns the precoders and `α = max(-R_max, k(W))`. Fails with
/// [`Error::NonConvergence`] if the residual tolerance is not reached.
pub fn solve_qcqp_slot(
    inputs: &QcqpInputs,
    delta: &[Complex64],
    omega: &[f64],
    settings: &QcqpSettings,
) -> Result<(CMat, Vec<f64>)> {
    let out = solve_qcqp_outcome(inputs, delta, omega, None, settings)?;
    if !out.converged {
        return Err(Error::NonConvergence { iterations: out.iterations, residual: out.residual });
    }
    Ok((out.w, out.alpha))
}

/// `Σ β_n P_n + Σ μ_m max(-R_max, k_m)` for fixed `(δ, ω)`.
pub fn qcqp_objective(inputs: &QcqpInputs, delta: &[Complex64], omega: &[f64], w: &CMat) -> f64 {
    let sc = Scaled::new(inputs, delta, omega, 0.0);
    sc.exact_objective(&sc.to_scaled(w))
}

/// Slot Lagrangian `Σ β_n P_n − Σ μ_m f_SN(Γ_m)` over served users.
pub fn slot_lagrangian(inputs: &QcqpInputs, w: &CMat) -> f64 {
    let power: f64 = (0..w.nrows()).map(|n| inputs.beta[n] * beam_power(w, n)).sum();
    let reward: f64 = (0..w.ncols())
        .filter(|&u| inputs.served[u])
        .map(|u| inputs.mu[u] * inputs.fit.f_sn(sinr_unchecked(inputs.h, w, inputs.noise[u], u)))
        .sum();
    power - reward
}

/// Closed-form `(δ, ω)` for the current precoders.
pub fn update_auxiliaries(
    h: &CMat,
    w: &CMat,
    noise: &[f64],
    xi: f64,
    form: OmegaForm,
) -> (Vec<Complex64>, Vec<f64>) {
    let m = w.ncols();
    let delta = (0..m)
        .map(|u| {
            let theta = effective_cov(h, w, noise[u], xi, u);
            col_dot(h, u, w, u).conj() / (xi.sqrt() * theta)
        })
        .collect();
    let omega = (0..m)
        .map(|u| match form {
            OmegaForm::InverseMse => omega_star(sinr_unchecked(h, w, noise[u], u), xi),
            OmegaForm::CovNormalized => omega_cov_normalized(h, w, noise[u], xi, u),
        })
        .collect();
    (delta, omega)
}

/// Outcome of [`slot_block_descent`].
#[derive(Debug, Clone)]
pub struct BlockDescent {
    pub w: CMat,
    pub aux: SlotAuxiliaries,
    pub objective: f64,
    /// Slot Lagrangian after each round, starting with the initial point.
    pub history: Vec<f64>,
}

/// One round of `δ, ω ← closed forms` then `(W, α) ← subproblem`.
///
/// The new precoders are kept only if they do not increase the slot
/// Lagrangian, so repeated rounds are monotone.
pub(crate) fn block_round(
    inputs: &QcqpInputs,
    w: &CMat,
    form: OmegaForm,
    settings: &QcqpSettings,
) -> Result<(CMat, SlotAuxiliaries, QcqpOutcome)> {
    let (delta, omega) = update_auxiliaries(inputs.h, w, inputs.noise, inputs.fit.xi, form);
    let out = solve_qcqp_outcome(inputs, &delta, &omega, Some(w), settings)?;
    let before = qcqp_objective(inputs, &delta, &omega, w);
    let (w_next, alpha) = if out.objective <= before {
        (out.w.clone(), out.alpha.clone())
    } else {
        let sc = Scaled::new(inputs, &delta, &omega, 0.0);
        let mut cross = CMat::zeros(w.ncols(), w.ncols());
        let k = sc.clamp_args(&sc.to_scaled(w), &mut cross);
        (w.clone(), k.iter().map(|v| v.max(-inputs.fit.r_max)).collect())
    };
    Ok((w_next, SlotAuxiliaries { delta, omega, alpha }, out))
}

/// Alternates the three blocks until the slot Lagrangian changes by less
/// than `tol_rel` (relative) or `max_rounds` is reached.
pub fn slot_block_descent(
    inputs: &QcqpInputs,
    w0: &CMat,
    settings: &QcqpSettings,
    tol_rel: f64,
    max_rounds: usize,
) -> Result<BlockDescent> {
    inputs.check()?;
    let mut w = w0.clone();
    let mut history = vec![slot_lagrangian(inputs, &w)];
    let mut aux = None;
    for _ in 0..max_rounds {
        let (w_next, a, _) = block_round(inputs, &w, OmegaForm::InverseMse, settings)?;
        w = w_next;
        aux = Some(a);
        let value = slot_lagrangian(inputs, &w);
        let prev = *history.last().unwrap();
        history.push(value);
        if (prev - value).abs() <= tol_rel * prev.abs().max(1e-12) {
            break;
        }
    }
    let aux = aux.expect("at least one round");
    Ok(BlockDescent { objective: *history.last().unwrap(), w, aux, history })
}

/// Matched-filter start `h_m/‖h_m‖` for served users, scaled so that every
/// beam cap and the weighted activity cap hold with 50% margin.
pub fn matched_filter_start(
    h: &CMat,
    served: &[bool],
    max_beam_power: &[f64],
    psi: &[f64],
    activity_budget: f64,
) -> CMat {
    let (n, m) = h.shape();
    let mut w = CMat::zeros(n, m);
    for u in (0..m).filter(|&u| served[u]) {
        let norm = h.column(u).norm();
        if norm > 0.0 {
            w.set_column(u, &(h.column(u) / Complex64::new(norm, 0.0)));
        }
    }
    let p = row_powers(&w);
    let mut scale = f64::INFINITY;
    for r in 0..n {
        if p[r] > 0.0 {
            scale = scale.min(0.5 * max_beam_power[r] / p[r]);
        }
    }
    let weighted: f64 = (0..n).map(|r| psi[r] * p[r]).sum();
    if activity_budget.is_finite() && weighted > 0.0 {
        scale = scale.min(0.5 * activity_budget / weighted);
    }
    if scale.is_finite() {
        w.scale_mut(scale.sqrt());
    }
    w
}

/// Rescales precoders so every positive target is met with equality.
///
/// Directions are kept; the per-user powers are the solution of the linear
/// SINR-equality system, followed by a few sequential rescaling sweeps to
/// remove round-off. Users with a zero target are switched off.
pub fn tighten(w: &CMat, g: &[f64], h: &CMat, noise: &[f64]) -> Result<CMat> {
    if w.shape() != h.shape() || g.len() != w.ncols() || noise.len() != w.ncols() {
        return Err(Error::Contract("tighten inputs have inconsistent shapes".into()));
    }
    let m = w.ncols();
    for u in 0..m {
        if g[u] > 0.0 {
            let gamma = sinr_unchecked(h, w, noise[u], u);
            if gamma < g[u] * (1.0 - 1e-9) {
                return Err(Error::Contract(format!(
                    "user {u} has SINR {gamma:.6e} below its target {:.6e}",
                    g[u]
                )));
            }
        }
    }
    let active: Vec<usize> = (0..m).filter(|&u| g[u] > 0.0).collect();
    let mut out = w.clone();
    for u in (0..m).filter(|&u| g[u] <= 0.0) {
        out.column_mut(u).fill(Complex64::new(0.0, 0.0));
    }
    if active.is_empty() {
        return Ok(out);
    }
    let k = active.len();
    let gains = crate::linalg::cross_gains(h, &out);
    let current: Vec<f64> = active.iter().map(|&u| out.column(u).norm_squared()).collect();
    // Unit-power gains: G[a][b] = |h_aᴴ u_b|² with u_b = w_b/‖w_b‖.
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut rhs = nalgebra::DVector::<f64>::zeros(k);
    for (i, &u) in active.iter().enumerate() {
        for (j, &v) in active.iter().enumerate() {
            let unit = gains[(u, v)] / current[j];
            a[(i, j)] = if i == j { unit / g[u] } else { -unit };
        }
        rhs[i] = noise[u];
    }
    if let Some(p) = a.lu().solve(&rhs) {
        if p.iter().zip(&current).all(|(&x, &c)| x > 0.0 && x <= c * (1.0 + 1e-9)) {
            for (j, &u) in active.iter().enumerate() {
                let s = (p[j].min(current[j]) / current[j]).sqrt();
                out.column_mut(u).scale_mut(s);
            }
        }
    }
    for _ in 0..200 {
        let mut worst: f64 = 0.0;
        for &u in &active {
            let gamma = sinr_unchecked(h, &out, noise[u], u);
            worst = worst.max((gamma - g[u]).abs() / g[u].max(1.0));
        }
        if worst <= 1e-9 {
            break;
        }
        for &u in &active {
            let gamma = sinr_unchecked(h, &out, noise[u], u);
            if gamma > g[u] {
                out.column_mut(u).scale_mut((g[u] / gamma).sqrt());
            }
        }
    }
    Ok(out)
}
