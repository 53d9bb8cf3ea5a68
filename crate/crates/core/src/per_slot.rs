//! Sparse power-minimizing precoding for one slot with fixed SINR targets.
//!
//! [`inner_power_min`] solves the weighted SINR-constrained power
//! minimization through uplink-downlink duality: a fixed-point iteration on
//! the uplink powers yields MMSE directions, and the downlink powers follow
//! from a linear system. Per-beam caps and the weighted activity cap are
//! enforced by adjusting per-beam prices that are added to the weights.
//! [`solve_psp`] wraps it in a reweighted-ℓ1 loop and a final support polish
//! that enforces the integer beam budget.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Binding, Error, Result};
use crate::linalg::{col_dot, row_powers, whiten};
use crate::model::{sinr_unchecked, CMat};
use crate::sparsity::{update_weights, DEFAULT_EPSILON, MIN_EPSILON};

/// One slot's power-minimization problem.
#[derive(Debug, Clone, Copy)]
pub struct PspInstance<'a> {
    /// Channel, `N × M`, raw units.
    pub h: &'a CMat,
    /// Target SINR per user; users with a zero target are not served.
    pub g: &'a [f64],
    pub noise: &'a [f64],
    pub max_beam_power: &'a [f64],
    /// Integer cap on illuminated beams.
    pub slot_budget: usize,
    pub hw_power: f64,
    /// Initial reweighting weights.
    pub psi: &'a [f64],
    pub activity_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PspSettings {
    pub max_reweight: usize,
    /// Relative objective change that ends reweighting.
    pub tol_rel: f64,
    pub fixed_point_max_iter: usize,
    pub fixed_point_tol: f64,
    /// Relative margin kept below every power cap.
    pub cap_margin: f64,
    /// Coordinate sweeps over the cap prices.
    pub max_price_sweeps: usize,
}

impl Default for PspSettings {
    fn default() -> Self {
        Self {
            max_reweight: 20,
            tol_rel: 1e-5,
            fixed_point_max_iter: 5000,
            fixed_point_tol: 1e-11,
            cap_margin: 1e-6,
            max_price_sweeps: 40,
        }
    }
}

/// Returned plan of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PspSolution {
    pub w: CMat,
    pub active: Vec<bool>,
    /// Transmit power, W.
    pub transmit_power: f64,
    /// Transmit power plus hardware power of illuminated beams, W.
    pub payload_power: f64,
    pub reweight_iterations: usize,
}

impl PspSolution {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            w: CMat::zeros(n, m),
            active: vec![false; n],
            transmit_power: 0.0,
            payload_power: 0.0,
            reweight_iterations: 0,
        }
    }

    fn from_w(w: CMat, hw_power: f64, threshold: f64, iterations: usize) -> Self {
        let p = row_powers(&w);
        let active: Vec<bool> = p.iter().map(|&x| x > threshold).collect();
        let transmit: f64 = p.iter().sum();
        let count = active.iter().filter(|&&a| a).count();
        Self {
            w,
            active,
            transmit_power: transmit,
            payload_power: transmit + hw_power * count as f64,
            reweight_iterations: iterations,
        }
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Weighted power minimization without caps, in whitened units.
struct Duality<'a> {
    /// Whitened channels of the served users, `N × K`.
    h: &'a CMat,
    targets: &'a [f64],
    settings: &'a PspSettings,
    /// Beams allowed to radiate.
    allowed: &'a [bool],
}

struct DualityResult {
    w: CMat,
    uplink: Vec<f64>,
}

impl Duality<'_> {
    fn covariance(&self, q: &[f64], uplink: &[f64]) -> DMatrix<Complex64> {
        let n = self.h.nrows();
        let mut s = DMatrix::<Complex64>::zeros(n, n);
        for r in 0..n {
            s[(r, r)] = Complex64::new(q[r], 0.0);
        }
        for (k, &lam) in uplink.iter().enumerate() {
            let col = self.h.column(k);
            for a in 0..n {
                let ha = col[a] * lam;
                for b in 0..n {
                    s[(a, b)] += ha * col[b].conj();
                }
            }
        }
        s
    }

    /// Solves with per-beam weights `q`, warm-starting from `warm`. The
    /// uplink powers sum to the optimal weighted power, so a sum far beyond
    /// `Σ q_n P̄_n` certifies that the targets cannot be met within the caps.
    fn solve(&self, q: &[f64], warm: Option<&[f64]>, caps: &[f64]) -> Result<DualityResult> {
        let k = self.targets.len();
        let n = self.h.nrows();
        let mut uplink: Vec<f64> = warm.map_or_else(|| vec![0.0; k], |w| w.to_vec());
        let blowup = 1e3 * (0..n).map(|r| q[r] * caps[r]).sum::<f64>();
        let mut over = 0usize;
        let mut converged = false;
        let mut inv = DMatrix::<Complex64>::zeros(n, k);
        for _ in 0..self.settings.fixed_point_max_iter {
            let sigma = self.covariance(q, &uplink);
            let chol = sigma.cholesky().ok_or_else(|| {
                Error::infeasible(Binding::SinrTargets, "uplink covariance lost definiteness")
            })?;
            inv = chol.solve(self.h);
            let mut change: f64 = 0.0;
            for j in 0..k {
                let quad = col_dot(self.h, j, &inv, j).re;
                if !(quad > 0.0) {
                    return Err(Error::infeasible(
                        Binding::SinrTargets,
                        format!("served user {j} has no usable channel"),
                    ));
                }
                // Own-signal-free quadratic form via Sherman-Morrison; the
                // update `λ_j = g_j / x_j` shares its fixed point with
                // `1 / ((1 + 1/g_j)·quad)` but contracts much faster at high SINR.
                let denom = 1.0 - uplink[j] * quad;
                let next = if denom > 1e-12 {
                    self.targets[j] * denom / quad
                } else {
                    1.0 / ((1.0 + 1.0 / self.targets[j]) * quad)
                };
                change = change.max((next - uplink[j]).abs() / next);
                uplink[j] = next;
            }
            let total: f64 = uplink.iter().sum();
            over = if total > blowup { over + 1 } else { 0 };
            if over >= 100 || !total.is_finite() {
                return Err(Error::infeasible(
                    Binding::SinrTargets,
                    format!("uplink powers diverged (sum {total:.3e})"),
                ));
            }
            if change <= self.settings.fixed_point_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            // Slow convergence is the signature of targets at the edge of the
            // feasible region; treat it as infeasible rather than return a
            // plan that misses its targets.
            return Err(Error::infeasible(Binding::SinrTargets, "uplink fixed point did not settle"));
        }
        let sigma = self.covariance(q, &uplink);
        if let Some(chol) = sigma.cholesky() {
            inv = chol.solve(self.h);
        }
        // Unit-norm MMSE directions.
        let mut dirs = CMat::zeros(n, k);
        for j in 0..k {
            let mut col = inv.column(j).clone_owned();
            for r in 0..n {
                if !self.allowed[r] {
                    col[r] = Complex64::new(0.0, 0.0);
                }
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= Complex64::new(norm, 0.0);
            }
            dirs.set_column(j, &col);
        }
        let mut a = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let gain = col_dot(self.h, i, &dirs, j).norm_sqr();
                a[(i, j)] = if i == j { gain / self.targets[i] } else { -gain };
            }
        }
        let p = a
            .lu()
            .solve(&DVector::from_element(k, 1.0))
            .ok_or_else(|| Error::infeasible(Binding::SinrTargets, "downlink power system is singular"))?;
        if p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::infeasible(Binding::SinrTargets, "downlink powers are not positive"));
        }
        let mut w = dirs;
        for j in 0..k {
            // A hair above the exact solution so round-off cannot leave a target unmet.
            w.column_mut(j).scale_mut((p[j] * (1.0 + 1e-9)).sqrt());
        }
        Ok(DualityResult { w, uplink })
    }
}

/// Power-min with per-beam weights, per-beam caps and an optional weighted
/// activity cap `Σ ψ_n P_n ≤ budget`, in whitened units over served users.
struct CappedProblem<'a> {
    duality: Duality<'a>,
    base_weights: Vec<f64>,
    caps: Vec<f64>,
    activity: Option<(&'a [f64], f64)>,
    /// Weighted cost above which the solve is abandoned.
    cutoff: f64,
}

struct CappedResult {
    w: CMat,
}

impl CappedProblem<'_> {
    fn weights(&self, prices: &[f64], nu: f64) -> Vec<f64> {
        let psi = self.activity.map(|(p, _)| p);
        (0..self.base_weights.len())
            .map(|r| self.base_weights[r] + prices[r] + psi.map_or(0.0, |p| nu * p[r]))
            .collect()
    }

    /// `None` when the dual bound proves the optimum costs more than the
    /// cutoff.
    fn solve(&self, margin: f64) -> Result<Option<CappedResult>> {
        let n = self.base_weights.len();
        let mut prices = vec![0.0; n];
        let mut nu = 0.0;
        let mut warm: Option<Vec<f64>> = None;
        let limit = |r: usize| self.caps[r] * (1.0 - margin);
        let weighted = |p: &[f64]| self.activity.map_or(0.0, |(psi, _)| (0..n).map(|r| psi[r] * p[r]).sum());
        let budget = self.activity.map_or(f64::INFINITY, |(_, b)| b * (1.0 - margin));
        // Every feasible point costs at most this much.
        let primal_bound: f64 = (0..n).map(|r| self.base_weights[r] * limit(r)).sum();
        let eval = |prices: &[f64], nu: f64, warm: &mut Option<Vec<f64>>| -> Result<Option<(CMat, Vec<f64>)>> {
            let q = self.weights(prices, nu);
            let res = self.duality.solve(&q, warm.as_deref(), &self.caps)?;
            // The uplink sum is the optimum with weights `q`, so the
            // Lagrangian dual bound below must stay under any feasible cost.
            let dual = res.uplink.iter().sum::<f64>()
                - (0..n).map(|r| prices[r] * limit(r)).sum::<f64>()
                - if nu > 0.0 { nu * budget } else { 0.0 };
            if dual > primal_bound * (1.0 + 1e-9) {
                let binding = if nu > 0.0 && prices.iter().all(|&x| x == 0.0) { Binding::Activity } else { Binding::BeamPower };
                return Err(Error::infeasible(binding, "beam caps and activity cap admit no solution"));
            }
            if dual > self.cutoff * (1.0 + 1e-9) {
                return Ok(None);
            }
            *warm = Some(res.uplink);
            let p = row_powers(&res.w);
            Ok(Some((res.w, p)))
        };
        // Evaluates, or returns `None` from `solve` once the cutoff is proven.
        macro_rules! eval {
            ($prices:expr, $nu:expr) => {
                match eval($prices, $nu, &mut warm)? {
                    Some(x) => x,
                    None => return Ok(None),
                }
            };
        }
        let (mut w, mut p) = eval!(&prices, nu);
        let price_ceiling = 1e8 * self.base_weights.iter().copied().fold(1.0, f64::max);
        let slack_tol = 1e-3;
        for _ in 0..self.duality.settings.max_price_sweeps {
            let mut done = true;
            for r in 0..n {
                let over = p[r] > limit(r);
                let loose = prices[r] > 0.0 && p[r] < limit(r) * (1.0 - slack_tol);
                if !over && !loose {
                    continue;
                }
                done = false;
                let (mut lo, mut hi) = if over { (prices[r], prices[r].max(1e-3) * 2.0) } else { (0.0, prices[r]) };
                if over {
                    loop {
                        let mut trial = prices.clone();
                        trial[r] = hi;
                        let (_, pt) = eval!(&trial, nu);
                        if pt[r] <= limit(r) {
                            break;
                        }
                        lo = hi;
                        hi *= 4.0;
                        if hi > price_ceiling {
                            return Err(Error::infeasible(Binding::BeamPower, format!("beam {r} cannot meet its power cap")));
                        }
                    }
                }
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    let mut trial = prices.clone();
                    trial[r] = mid;
                    let (_, pt) = eval!(&trial, nu);
                    if pt[r] > limit(r) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-6 * hi.max(1e-9) {
                        break;
                    }
                }
                if hi > price_ceiling {
                    return Err(Error::infeasible(Binding::BeamPower, format!("beam {r} cannot meet its power cap")));
                }
                prices[r] = hi;
                (w, p) = eval!(&prices, nu);
            }
            if self.activity.is_some() {
                let a = weighted(&p);
                let over = a > budget;
                let loose = nu > 0.0 && a < budget * (1.0 - slack_tol);
                if over || loose {
                    done = false;
                    let (mut lo, mut hi) = if over { (nu, nu.max(1e-3) * 2.0) } else { (0.0, nu) };
                    if over {
                        loop {
                            let (_, pt) = eval!(&prices, hi);
                            if weighted(&pt) <= budget {
                                break;
                            }
                            lo = hi;
                            hi *= 4.0;
                            if hi > price_ceiling {
                                return Err(Error::infeasible(Binding::Activity, "weighted activity cap cannot be met"));
                            }
                        }
                    }
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        let (_, pt) = eval!(&prices, mid);
                        if weighted(&pt) > budget {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo <= 1e-6 * hi.max(1e-9) {
                            break;
                        }
                    }
                    if hi > price_ceiling {
                        return Err(Error::infeasible(Binding::Activity, "weighted activity cap cannot be met"));
                    }
                    nu = hi;
                    (w, p) = eval!(&prices, nu);
                }
            }
            if done {
                break;
            }
        }
        let violated = (0..n).find(|&r| p[r] >= self.caps[r]);
        if let Some(r) = violated {
            return Err(Error::infeasible(Binding::BeamPower, format!("beam {r} exceeds its power cap")));
        }
        if let Some((psi, b)) = self.activity {
            if (0..n).map(|r| psi[r] * p[r]).sum::<f64>() > b {
                return Err(Error::infeasible(Binding::Activity, "weighted activity cap exceeded"));
            }
        }
        Ok(Some(CappedResult { w }))
    }
}

/// Served users (positive target) of an instance.
fn served_users(g: &[f64]) -> Vec<usize> {
    (0..g.len()).filter(|&m| g[m] > 0.0).collect()
}

/// Solves min `Σ q_n P_n` s.t. targets, caps and optional weighted activity
/// cap, restricted to the `allowed` beams. Returns raw-unit precoders, or
/// `None` if the weighted power provably exceeds `cutoff`.
fn power_min(
    inst: &PspInstance,
    weights: &[f64],
    allowed: &[bool],
    activity: Option<(&[f64], f64)>,
    settings: &PspSettings,
    cutoff: f64,
) -> Result<Option<CMat>> {
    let (n, m) = inst.h.shape();
    let served = served_users(inst.g);
    if served.is_empty() {
        return Ok(Some(CMat::zeros(n, m)));
    }
    // Whitened channels of served users; disallowed beams are removed by
    // zeroing their rows, which zeroes the corresponding precoder rows.
    let white = whiten(inst.h, inst.noise);
    let mut hs = CMat::zeros(n, served.len());
    for (j, &u) in served.iter().enumerate() {
        for r in 0..n {
            hs[(r, j)] = if allowed[r] { white[(r, u)] } else { Complex64::new(0.0, 0.0) };
        }
    }
    let targets: Vec<f64> = served.iter().map(|&u| inst.g[u]).collect();
    // Interference-free, full-power SINR bounds every user from above.
    for (j, &u) in served.iter().enumerate() {
        let amp: f64 = (0..n).map(|r| hs[(r, j)].norm() * inst.max_beam_power[r].sqrt()).sum();
        if amp * amp < targets[j] {
            return Err(Error::infeasible(
                Binding::BeamPower,
                format!("user {u} cannot reach its target even alone at full power"),
            ));
        }
    }
    let problem = CappedProblem {
        duality: Duality { h: &hs, targets: &targets, settings, allowed },
        base_weights: weights.to_vec(),
        caps: inst.max_beam_power.to_vec(),
        activity,
        cutoff,
    };
    let Some(res) = problem.solve(settings.cap_margin)? else {
        return Ok(None);
    };
    let mut w = CMat::zeros(n, m);
    for (j, &u) in served.iter().enumerate() {
        w.set_column(u, &res.w.column(j));
    }
    Ok(Some(w))
}

fn check_instance(inst: &PspInstance) -> Result<()> {
    let (n, m) = inst.h.shape();
    if inst.g.len() != m || inst.noise.len() != m || inst.max_beam_power.len() != n || inst.psi.len() != n {
        return Err(Error::Contract("slot problem inputs have inconsistent lengths".into()));
    }
    if inst.g.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Contract("SINR targets must be finite and non-negative".into()));
    }
    Ok(())
}

/// Minimizes `Σ (1 + ρψ_n) P_n` subject to the SINR targets, the beam caps
/// and `Σ ψ_n P_n ≤ K_t`.
pub fn inner_power_min(inst: &PspInstance, settings: &PspSettings) -> Result<CMat> {
    check_instance(inst)?;
    let n = inst.h.nrows();
    let weights: Vec<f64> = inst.psi.iter().map(|&p| 1.0 + inst.hw_power * p).collect();
    let w = power_min(inst, &weights, &vec![true; n], Some((inst.psi, inst.slot_budget as f64)), settings, f64::INFINITY)?;
    Ok(w.expect("no cutoff"))
}

/// Plain transmit-power minimization with only the per-beam caps.
pub fn plain_power_min(inst: &PspInstance, settings: &PspSettings) -> Result<CMat> {
    check_instance(inst)?;
    let n = inst.h.nrows();
    let w = power_min(inst, &vec![1.0; n], &vec![true; n], None, settings, f64::INFINITY)?;
    Ok(w.expect("no cutoff"))
}

/// Beam strength used for deterministic tie-breaks.
fn beam_strength(h: &CMat, r: usize) -> f64 {
    h.row(r).iter().map(|x| x.norm_sqr()).sum()
}

/// Transmit-power-optimal solution on a fixed support, or `None` when its
/// transmit power provably exceeds `cutoff`.
fn support_power(
    inst: &PspInstance,
    support: &[bool],
    settings: &PspSettings,
    cutoff: f64,
) -> Result<Option<PspSolution>> {
    let n = inst.h.nrows();
    let w = power_min(inst, &vec![1.0; n], support, None, settings, cutoff)?;
    Ok(w.map(|w| PspSolution::from_w(w, inst.hw_power, inst.activity_threshold, 0)))
}

/// Greedy backward elimination from the full beam set down to `budget` beams.
fn backward_elimination(inst: &PspInstance, settings: &PspSettings) -> Result<PspSolution> {
    let n = inst.h.nrows();
    let mut support = vec![true; n];
    let mut current = support_power(inst, &support, settings, f64::INFINITY)?.expect("no cutoff");
    while support.iter().filter(|&&s| s).count() > inst.slot_budget {
        let mut best: Option<(usize, PspSolution)> = None;
        for r in (0..n).filter(|&r| support[r]) {
            let mut trial = support.clone();
            trial[r] = false;
            let cutoff = best.as_ref().map_or(f64::INFINITY, |(_, b)| b.transmit_power);
            if let Ok(Some(sol)) = support_power(inst, &trial, settings, cutoff) {
                if best.as_ref().is_none_or(|(_, b)| sol.transmit_power < b.transmit_power) {
                    best = Some((r, sol));
                }
            }
        }
        let Some((r, sol)) = best else {
            return Err(Error::infeasible(
                Binding::Activity,
                format!("no set of {} beams meets the SINR targets", inst.slot_budget),
            ));
        };
        support[r] = false;
        current = sol;
    }
    Ok(current)
}

/// Restricts a reweighted solution to at most `K_t` beams, re-solves for
/// pure transmit power and prunes beams while the payload power drops.
fn polish(inst: &PspInstance, w: &CMat, settings: &PspSettings) -> Result<PspSolution> {
    let n = inst.h.nrows();
    let p = row_powers(w);
    let max_p = p.iter().copied().fold(0.0, f64::max);
    let floor = inst.activity_threshold.max(1e-4 * max_p);
    let mut order: Vec<usize> = (0..n).filter(|&r| p[r] > floor).collect();
    order.sort_by(|&a, &b| {
        p[b].total_cmp(&p[a]).then(beam_strength(inst.h, b).total_cmp(&beam_strength(inst.h, a))).then(a.cmp(&b))
    });
    order.truncate(inst.slot_budget);
    let mut support = vec![false; n];
    for &r in &order {
        support[r] = true;
    }
    let mut best = match support_power(inst, &support, settings, f64::INFINITY) {
        Ok(Some(sol)) if sol.active_count() <= inst.slot_budget => sol,
        _ => backward_elimination(inst, settings)?,
    };
    support = best.active.clone();
    loop {
        let mut improved: Option<(Vec<bool>, PspSolution)> = None;
        for r in (0..n).filter(|&r| support[r]) {
            let mut trial = support.clone();
            trial[r] = false;
            // Payload power is at least the transmit power.
            let target = improved.as_ref().map_or(best.payload_power, |(_, s)| s.payload_power);
            if let Ok(Some(sol)) = support_power(inst, &trial, settings, target) {
                if sol.payload_power < target {
                    improved = Some((trial, sol));
                }
            }
        }
        match improved {
            Some((s, sol)) => {
                support = s;
                best = sol;
            }
            None => break,
        }
    }
    Ok(best)
}

/// Reweighting loop `ψ ← (P² + ε)^{-1/2}` on the weighted power-min.
/// Returns the last precoder and the iteration count, or the error of the
/// first iteration.
fn reweighted(inst: &PspInstance, settings: &PspSettings) -> Result<(CMat, usize)> {
    let n = inst.h.nrows();
    let mut psi = inst.psi.to_vec();
    let mut eps = DEFAULT_EPSILON;
    let mut best_w: Option<CMat> = None;
    let mut prev: Option<(Vec<bool>, f64)> = None;
    let mut iterations = 0;
    for k in 0..settings.max_reweight {
        let attempt = PspInstance { psi: &psi, ..*inst };
        let w = match inner_power_min(&attempt, settings) {
            Ok(w) => w,
            Err(e) if k == 0 => return Err(e),
            // Later weights are heuristics; keep the last good precoder.
            Err(_) => break,
        };
        iterations = k + 1;
        let p = row_powers(&w);
        let pattern: Vec<bool> = p.iter().map(|&x| x > inst.activity_threshold).collect();
        let objective: f64 =
            p.iter().sum::<f64>() + inst.hw_power * pattern.iter().filter(|&&a| a).count() as f64;
        let stable = prev
            .as_ref()
            .is_some_and(|(pat, obj)| *pat == pattern && (obj - objective).abs() <= settings.tol_rel * objective);
        best_w = Some(w);
        if stable {
            break;
        }
        prev = Some((pattern, objective));
        let pm = DMatrix::from_column_slice(n, 1, &p);
        psi = update_weights(&pm, eps).column(0).iter().copied().collect();
        eps = (0.5 * eps).max(MIN_EPSILON);
    }
    Ok((best_w.expect("first reweighting iteration succeeded"), iterations))
}

/// Reweighted sparse precoding for one slot.
///
/// Runs the reweighting with and without the weighted activity cap, prunes
/// each result down to `K_t` beams, also tries greedy backward elimination,
/// and keeps the cheapest payload.
pub fn solve_psp(inst: &PspInstance, settings: &PspSettings) -> Result<PspSolution> {
    check_instance(inst)?;
    let (n, m) = inst.h.shape();
    if served_users(inst.g).is_empty() {
        return Ok(PspSolution::zeros(n, m));
    }
    let mut best: Option<PspSolution> = None;
    let mut first_err: Option<Error> = None;
    let mut keep = |sol: Result<PspSolution>| match sol {
        Ok(sol) if best.as_ref().is_none_or(|b| sol.payload_power < b.payload_power) => best = Some(sol),
        Ok(_) => {}
        Err(e) => {
            if first_err.is_none() {
                first_err = Some(e);
            }
        }
    };
    let budgets = if inst.slot_budget < n { vec![inst.slot_budget, n] } else { vec![n] };
    for budget in budgets {
        let relaxed = PspInstance { slot_budget: budget, ..*inst };
        match reweighted(&relaxed, settings) {
            Ok((w, iterations)) => keep(polish(inst, &w, settings).map(|s| PspSolution { reweight_iterations: iterations, ..s })),
            // Without the activity cap the relaxation is implied by the true
            // constraints, so its infeasibility is conclusive.
            Err(e) if budget == n && e.is_infeasible() => return Err(e),
            Err(e) if !e.is_infeasible() => return Err(e),
            Err(e) => keep(Err(e)),
        }
    }
    keep(backward_elimination(inst, settings).and_then(|sol| polish(inst, &sol.w, settings)));
    match best {
        Some(sol) => Ok(sol),
        None => Err(first_err.expect("some candidate was attempted")),
    }
}

/// Outcome of [`attempt_psp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PspAttempt {
    pub solution: PspSolution,
    /// Common scale applied to the targets; 1 when the instance is feasible.
    pub target_scale: f64,
    pub feasible: bool,
}

/// Solves the slot problem, or if it is infeasible, the problem with all
/// targets scaled by the largest common factor in `(0, 1)` that is feasible
/// with the beam budget lifted. Used to score candidate rate vectors.
pub fn attempt_psp(inst: &PspInstance, settings: &PspSettings) -> Result<PspAttempt> {
    match solve_psp(inst, settings) {
        Ok(solution) => return Ok(PspAttempt { solution, target_scale: 1.0, feasible: true }),
        Err(e) if !e.is_infeasible() => return Err(e),
        Err(_) => {}
    }
    let n = inst.h.nrows();
    let relaxed = PspInstance { slot_budget: n, ..*inst };
    let try_scale = |c: f64| -> Option<PspSolution> {
        let g: Vec<f64> = inst.g.iter().map(|&x| x * c).collect();
        solve_psp(&PspInstance { g: &g, ..relaxed }, settings).ok()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = None;
    if let Some(sol) = try_scale(1.0) {
        return Ok(PspAttempt { solution: sol, target_scale: 1.0, feasible: false });
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        match try_scale(mid) {
            Some(sol) => {
                lo = mid;
                best = Some(sol);
            }
            None => hi = mid,
        }
    }
    let solution = best.unwrap_or_else(|| PspSolution::zeros(n, inst.h.ncols()));
    Ok(PspAttempt { solution, target_scale: lo, feasible: false })
}

/// SINR of every user for a slot solution.
pub fn slot_sinrs(h: &CMat, w: &CMat, noise: &[f64]) -> Vec<f64> {
    (0..h.ncols()).map(|m| sinr_unchecked(h, w, noise[m], m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{c, random_cmat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned {
        h: CMat,
        g: Vec<f64>,
        noise: Vec<f64>,
        caps: Vec<f64>,
        psi: Vec<f64>,
        budget: usize,
        hw: f64,
    }

    impl Owned {
        fn new(h: CMat, g: Vec<f64>) -> Self {
            let (n, m) = h.shape();
            Self { h, g, noise: vec![1.0; m], caps: vec![1e6; n], psi: vec![1e-6; n], budget: n, hw: 5.0 }
        }

        fn inst(&self) -> PspInstance<'_> {
            PspInstance {
                h: &self.h,
                g: &self.g,
                noise: &self.noise,
                max_beam_power: &self.caps,
                slot_budget: self.budget,
                hw_power: self.hw,
                psi: &self.psi,
                activity_threshold: 1e-6,
            }
        }
    }

    #[test]
    fn single_user_single_beam_closed_form() {
        let hv = c(0.6, -0.8) * 0.5;
        let o = Owned::new(CMat::from_element(1, 1, hv), vec![3.0]);
        let w = inner_power_min(&o.inst(), &PspSettings::default()).unwrap();
        let want = 3.0 / hv.norm_sqr();
        assert!((w[(0, 0)].norm_sqr() / want - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cutoff_prunes_only_costlier_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..20 {
            let h = random_cmat(&mut rng, 4, 2);
            let mut o = Owned::new(h, vec![rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)]);
            o.caps = vec![rng.random_range(0.5..5.0); 4];
            let support = [true, true, rng.random_bool(0.5), true];
            let s = PspSettings::default();
            let Ok(Some(full)) = support_power(&o.inst(), &support, &s, f64::INFINITY) else { continue };
            let above = support_power(&o.inst(), &support, &s, full.transmit_power * 1.01).unwrap().unwrap();
            assert_eq!(above.w, full.w);
            assert!(support_power(&o.inst(), &support, &s, full.transmit_power * 0.9).unwrap().is_none());
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} feasible instances");
    }

    #[test]
    fn orthogonal_users_decouple() {
        let h = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 2.0)]);
        let o = Owned::new(h, vec![2.0, 3.0]);
        let w = inner_power_min(&o.inst(), &PspSettings::default()).unwrap();
        assert!((w.column(0).norm_squared() / 2.0 - 1.0).abs() < 1e-8);
        assert!((w.column(1).norm_squared() / (3.0 / 4.0) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn targets_are_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_cmat(&mut rng, 4, 3);
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..3.0)).collect();
            let o = Owned::new(h, g.clone());
            let sol = solve_psp(&o.inst(), &PspSettings::default()).unwrap();
            let gammas = slot_sinrs(&o.h, &sol.w, &o.noise);
            for (gm, tm) in gammas.iter().zip(&g) {
                assert!(*gm >= *tm && *gm <= tm * (1.0 + 1e-6), "{gm} vs {tm}");
            }
        }
    }

    #[test]
    fn zero_targets_give_zero_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = Owned::new(random_cmat(&mut rng, 3, 2), vec![0.0, 0.0]);
        let sol = solve_psp(&o.inst(), &PspSettings::default()).unwrap();
        assert_eq!(sol.active_count(), 0);
        assert_eq!(sol.w.norm(), 0.0);
    }

    #[test]
    fn budget_of_one_picks_strongest_beam() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let h = random_cmat(&mut rng, 5, 1);
            let mut o = Owned::new(h, vec![2.0]);
            o.budget = 1;
            o.psi = vec![1.0 / 1e6; 5];
            let sol = solve_psp(&o.inst(), &PspSettings::default()).unwrap();
            let best = (0..5).max_by(|&a, &b| o.h[(a, 0)].norm().total_cmp(&o.h[(b, 0)].norm())).unwrap();
            assert_eq!(sol.active_count(), 1);
            assert!(sol.active[best]);
        }
    }

    #[test]
    fn beam_cap_is_respected() {
        let h = CMat::from_row_slice(2, 1, &[c(1.0, 0.0), c(0.5, 0.0)]);
        let mut o = Owned::new(h, vec![4.0]);
        o.caps = vec![2.0, 1e6];
        o.psi = vec![0.0; 2];
        let w = inner_power_min(&o.inst(), &PspSettings::default()).unwrap();
        let p = row_powers(&w);
        assert!(p[0] < 2.0 && p[0] > 2.0 * (1.0 - 1e-4), "{p:?}");
        let gamma = slot_sinrs(&o.h, &w, &o.noise)[0];
        assert!(gamma >= 4.0);
    }

    #[test]
    fn impossible_targets_report_family() {
        // Two users with identical channels cannot both exceed SINR 1.
        let h = CMat::from_element(2, 2, c(1.0, 0.0));
        let o = Owned::new(h, vec![2.0, 2.0]);
        match inner_power_min(&o.inst(), &PspSettings::default()) {
            Err(Error::Infeasible { binding, .. }) => assert_eq!(binding, Binding::SinrTargets),
            other => panic!("expected infeasibility, got {other:?}"),
        }
        let h = CMat::from_element(1, 1, c(1.0, 0.0));
        let mut o = Owned::new(h, vec![10.0]);
        o.caps = vec![1.0];
        match inner_power_min(&o.inst(), &PspSettings::default()) {
            Err(Error::Infeasible { binding, .. }) => assert_eq!(binding, Binding::BeamPower),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn no_cap_pressure_matches_plain_power_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let h = random_cmat(&mut rng, 3, 2);
            let mut o = Owned::new(h, vec![1.5, 2.5]);
            o.hw = 1e-3;
            o.psi = vec![1e-6; 3];
            let sol = solve_psp(&o.inst(), &PspSettings::default()).unwrap();
            let plain = plain_power_min(&o.inst(), &PspSettings::default()).unwrap();
            let plain_p: f64 = row_powers(&plain).iter().sum();
            assert!(sol.transmit_power <= plain_p * 1.02 + 1e-3, "{} vs {}", sol.transmit_power, plain_p);
        }
    }

    #[test]
    fn channel_scaling_scales_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = random_cmat(&mut rng, 4, 2);
        let o = Owned::new(h.clone(), vec![1.0, 2.0]);
        let base = solve_psp(&o.inst(), &PspSettings::default()).unwrap();
        let o2 = Owned::new(h * c(3.0, 0.0), vec![1.0, 2.0]);
        let scaled = solve_psp(&Owned { psi: o.psi.clone(), ..o2 }.inst(), &PspSettings::default()).unwrap();
        assert_eq!(base.active, scaled.active);
        assert!((scaled.transmit_power * 9.0 / base.transmit_power - 1.0).abs() < 1e-3);
    }

    #[test]
    fn attempt_scales_down_infeasible_targets() {
        let h = CMat::from_element(2, 2, c(1.0, 0.0));
        let o = Owned::new(h, vec![2.0, 2.0]);
        let a = attempt_psp(&o.inst(), &PspSettings::default()).unwrap();
        assert!(!a.feasible);
        assert!(a.target_scale > 0.0 && a.target_scale < 0.5 + 1e-3);
    }
}
