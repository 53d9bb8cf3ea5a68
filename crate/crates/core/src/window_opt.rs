//! Window-wide joint precoding, beam hopping and rate planning.
//!
//! The relaxed problem replaces discrete MODCODs by the Shannon surrogate
//! and the beam count by reweighted ℓ1 weights. An outer loop updates the
//! weights; an inner loop prices each user's demand with a dual variable
//! `μ_m` and runs one weighted-MMSE block round per slot between price
//! updates. The relaxed SINRs are finally rounded onto the MODCOD set and
//! every slot is re-solved with [`crate::per_slot::solve_psp`].

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Binding, Error, Result};
use crate::linalg::{row_powers, whiten};
use crate::model::{
    beam_power, check_feasibility, payload_power, sinr_unchecked, CMat, PrecodingPlan, RateAssignment, Scenario,
};
use crate::modcod::{ModcodTable, ShannonFit};
use crate::per_slot::{solve_psp, PspInstance, PspSettings, PspSolution};
use crate::sparsity::ReweightState;
use crate::wmmse::{block_round, matched_filter_start, OmegaForm, QcqpInputs, QcqpSettings};

/// How the demand prices move with the demand gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStep {
    /// `μ ← max(0, μ + r_ℓ·gap)`.
    Additive,
    /// `μ ← μ·exp(r_ℓ·ln2·gap/T̄_m)`: a step in `ln μ` sized by the slope of
    /// the accumulated rate with respect to `ln μ`.
    Scaled,
    /// The scaled step with a per-user factor instead of `1/√ℓ` decay: the
    /// factor grows while a user's gap keeps its sign and halves when it
    /// flips.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative change of the weighted power that ends the inner loop.
    pub inner_tol_rel: f64,
    /// Demand gap tolerance, relative to each user's demand.
    pub gap_tol: f64,
    /// Relative objective change that ends the outer loop.
    pub outer_tol_rel: f64,
    pub step0: f64,
    pub dual_step: DualStep,
    pub mu_init: f64,
    /// Price level that certifies an unmeetable demand.
    pub mu_max: f64,
    /// Largest factor by which a scaled step may move a price.
    pub max_price_factor: f64,
    /// Block rounds per slot between price updates.
    pub rounds_per_update: usize,
    /// Iterations without movement after which an unconverged pass stops.
    pub stall_iterations: usize,
    pub max_repair_steps: usize,
    #[serde(skip)]
    pub omega_form: OmegaForm,
    #[serde(skip)]
    pub qcqp: QcqpSettings,
    #[serde(skip)]
    pub psp: PspSettings,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            max_outer: 10,
            max_inner: 200,
            inner_tol_rel: 1e-5,
            gap_tol: 1e-3,
            outer_tol_rel: 1e-4,
            step0: 1.0,
            dual_step: DualStep::Adaptive,
            mu_init: 1.0,
            mu_max: 1e6,
            max_price_factor: 4.0,
            rounds_per_update: 4,
            stall_iterations: 20,
            max_repair_steps: 400,
            omega_form: OmegaForm::InverseMse,
            qcqp: QcqpSettings { max_iterations: 500, tolerance: 1e-6, smoothing: 1e-3 },
            psp: PspSettings::default(),
        }
    }
}

/// Demand prices and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu: Vec<f64>,
    /// Number of updates applied so far.
    pub iteration: usize,
    pub step0: f64,
}

impl DualState {
    pub fn new(mu: Vec<f64>, step0: f64) -> Self {
        Self { mu, iteration: 0, step0 }
    }

    /// Step size `r_ℓ = r₀/√ℓ` of the next update.
    pub fn step(&self) -> f64 {
        self.step0 / ((self.iteration + 1) as f64).sqrt()
    }
}

/// Additive projected subgradient step `μ ← max(0, μ + r_ℓ·gap)`.
pub fn update_mu(state: &DualState, gaps: &[f64]) -> DualState {
    let r = state.step();
    DualState {
        mu: state.mu.iter().zip(gaps).map(|(m, g)| (m + r * g).max(0.0)).collect(),
        iteration: state.iteration + 1,
        step0: state.step0,
    }
}

/// Multiplicative step in `ln μ`, clipped to a factor of `max_factor`.
pub fn update_mu_scaled(state: &DualState, gaps: &[f64], deadlines: &[usize], max_factor: f64) -> DualState {
    let r = state.step();
    let limit = max_factor.ln();
    DualState {
        mu: state
            .mu
            .iter()
            .zip(gaps)
            .zip(deadlines)
            .map(|((&m, &g), &d)| m * (r * std::f64::consts::LN_2 * g / d as f64).clamp(-limit, limit).exp())
            .collect(),
        iteration: state.iteration + 1,
        step0: state.step0,
    }
}

/// Per-user step factors of [`DualStep::Adaptive`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSteps {
    pub factor: Vec<f64>,
    pub last_gap: Vec<f64>,
}

impl AdaptiveSteps {
    const GROW: f64 = 1.2;
    const SHRINK: f64 = 0.5;
    const MAX_FACTOR: f64 = 3.0;

    pub fn new(n_users: usize) -> Self {
        Self { factor: vec![1.0; n_users], last_gap: vec![0.0; n_users] }
    }
}

/// Multiplicative step in `ln μ` with per-user adaptive factors.
pub fn update_mu_adaptive(
    state: &DualState,
    steps: &mut AdaptiveSteps,
    gaps: &[f64],
    deadlines: &[usize],
    max_factor: f64,
) -> DualState {
    let limit = max_factor.ln();
    let mu = (0..state.mu.len())
        .map(|m| {
            let (g, last) = (gaps[m], steps.last_gap[m]);
            if g * last < 0.0 {
                steps.factor[m] *= AdaptiveSteps::SHRINK;
            } else if g * last > 0.0 {
                steps.factor[m] = (steps.factor[m] * AdaptiveSteps::GROW).min(AdaptiveSteps::MAX_FACTOR);
            }
            steps.last_gap[m] = g;
            let r = state.step0 * steps.factor[m];
            state.mu[m] * (r * std::f64::consts::LN_2 * g / deadlines[m] as f64).clamp(-limit, limit).exp()
        })
        .collect();
    DualState { mu, iteration: state.iteration + 1, step0: state.step0 }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub outer: usize,
    /// Inner iteration counted across the whole run.
    pub iteration: usize,
    pub user: usize,
    /// Demand gap relative to the user's demand.
    pub demand_gap: f64,
    /// Weighted relaxed power, W.
    pub objective: f64,
    pub active_beams: usize,
}

/// Final plan of any planner.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSolution {
    pub plan: PrecodingPlan,
    pub g: RateAssignment,
    /// Payload power summed over slots, W.
    pub power: f64,
    /// Illuminated beams, `N × T`.
    pub active: DMatrix<bool>,
    pub trace: Vec<TraceRow>,
    /// Inner iterations of the first outer pass (zero for planners without one).
    pub first_pass_iterations: usize,
    /// Total inner iterations.
    pub inner_iterations: usize,
}

impl WindowSolution {
    pub fn total_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Writes the trace as `iter,user,demand_gap,objective,active_beams`.
    pub fn write_trace<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "user", "demand_gap", "objective", "active_beams"])?;
        for r in &self.trace {
            w.write_record(&[
                r.iteration.to_string(),
                r.user.to_string(),
                format!("{:e}", r.demand_gap),
                format!("{:e}", r.objective),
                r.active_beams.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Q̄_m/(Δ_T·BW) − Σ_{t<T̄_m} f_SN(Γ_m[t])` for every user.
pub fn demand_gaps(scenario: &Scenario, channel: &[CMat], plan: &PrecodingPlan, fit: &ShannonFit) -> Vec<f64> {
    (0..scenario.n_users)
        .map(|m| {
            let rate: f64 = (0..scenario.deadline[m])
                .map(|t| fit.f_sn(sinr_unchecked(&channel[t], &plan.slots[t], scenario.noise_power[m], m)))
                .sum();
            scenario.demand_rate(m) - rate
        })
        .collect()
}

/// Window Lagrangian `Σ_t Σ_n β_n[t] P_n[t] + Σ_m μ_m·gap_m`.
pub fn lagrangian(
    scenario: &Scenario,
    channel: &[CMat],
    plan: &PrecodingPlan,
    beta: &DMatrix<f64>,
    mu: &[f64],
    fit: &ShannonFit,
) -> f64 {
    let power: f64 = (0..scenario.n_slots)
        .map(|t| (0..scenario.n_beams).map(|n| beta[(n, t)] * beam_power(&plan.slots[t], n)).sum::<f64>())
        .sum();
    let gaps = demand_gaps(scenario, channel, plan, fit);
    power + mu.iter().zip(&gaps).map(|(m, g)| m * g).sum::<f64>()
}

fn check_channel(scenario: &Scenario, channel: &[CMat]) -> Result<()> {
    scenario.validate()?;
    if channel.len() != scenario.n_slots
        || channel.iter().any(|h| h.shape() != (scenario.n_beams, scenario.n_users))
    {
        return Err(Error::Contract("channel tensor does not match the scenario".into()));
    }
    Ok(())
}

struct InnerOutcome {
    plan: PrecodingPlan,
    iterations: usize,
    converged: bool,
}

/// Runs the price loop for fixed reweighting weights.
#[allow(clippy::too_many_arguments)]
fn inner_loop(
    scenario: &Scenario,
    channel: &[CMat],
    fit: &ShannonFit,
    cfg: &WindowConfig,
    reweight: &ReweightState,
    plan: &mut PrecodingPlan,
    dual: &mut DualState,
    trace: &mut Vec<TraceRow>,
    outer: usize,
    iteration_offset: usize,
) -> Result<InnerOutcome> {
    let n = scenario.n_beams;
    let beta = reweight.psi.map(|p| 1.0 + scenario.hw_power * p);
    let served: Vec<Vec<bool>> =
        (0..scenario.n_slots).map(|t| (0..scenario.n_users).map(|m| scenario.is_served(m, t)).collect()).collect();
    let demand: Vec<f64> = (0..scenario.n_users).map(|m| scenario.demand_rate(m)).collect();
    let mut prev_obj = f64::INFINITY;
    let mut steps = AdaptiveSteps::new(scenario.n_users);
    let mut prev_rel: Option<Vec<f64>> = None;
    let mut still = 0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_inner {
        iterations = it + 1;
        let mu = dual.mu.clone();
        let slots: Vec<Result<CMat>> = (0..scenario.n_slots)
            .into_par_iter()
            .map(|t| {
                let beta_t: Vec<f64> = beta.column(t).iter().copied().collect();
                let psi_t: Vec<f64> = reweight.psi.column(t).iter().copied().collect();
                let inputs = QcqpInputs {
                    h: &channel[t],
                    noise: &scenario.noise_power,
                    beta: &beta_t,
                    mu: &mu,
                    psi: &psi_t,
                    max_beam_power: &scenario.max_beam_power,
                    activity_budget: scenario.slot_budget[t] as f64,
                    fit: *fit,
                    served: &served[t],
                };
                let mut w = plan.slots[t].clone();
                for _ in 0..cfg.rounds_per_update.max(1) {
                    w = block_round(&inputs, &w, cfg.omega_form, &cfg.qcqp)?.0;
                }
                Ok(w)
            })
            .collect();
        for (t, w) in slots.into_iter().enumerate() {
            plan.slots[t] = w?;
        }
        let gaps = demand_gaps(scenario, channel, plan, fit);
        let objective: f64 = (0..scenario.n_slots)
            .map(|t| (0..n).map(|b| beta[(b, t)] * beam_power(&plan.slots[t], b)).sum::<f64>())
            .sum();
        let active: usize = plan.active_counts(scenario.activity_threshold).iter().sum();
        let rel_gaps: Vec<f64> =
            gaps.iter().zip(&demand).map(|(g, d)| if *d > 0.0 { g / d } else { 0.0 }).collect();
        for (m, &g) in rel_gaps.iter().enumerate() {
            trace.push(TraceRow {
                outer,
                iteration: iteration_offset + it,
                user: m,
                demand_gap: g,
                objective,
                active_beams: active,
            });
        }
        let gaps_met = rel_gaps.iter().zip(&demand).all(|(g, d)| if *d > 0.0 { g.abs() <= cfg.gap_tol } else { true });
        let stable = (prev_obj - objective).abs() <= cfg.inner_tol_rel * objective.max(1e-12);
        prev_obj = objective;
        if gaps_met && stable {
            converged = true;
            break;
        }
        // Gaps that no longer respond to the prices mean the weighted caps
        // bind; more price steps only waste time.
        let moved = prev_rel
            .as_ref()
            .is_none_or(|p| p.iter().zip(&rel_gaps).any(|(a, b)| (a - b).abs() > 0.1 * cfg.gap_tol));
        still = if stable && !moved { still + 1 } else { 0 };
        prev_rel = Some(rel_gaps);
        if cfg.stall_iterations > 0 && still >= cfg.stall_iterations {
            break;
        }
        *dual = match cfg.dual_step {
            DualStep::Additive => update_mu(dual, &gaps),
            DualStep::Scaled => update_mu_scaled(dual, &gaps, &scenario.deadline, cfg.max_price_factor),
            DualStep::Adaptive => {
                update_mu_adaptive(dual, &mut steps, &gaps, &scenario.deadline, cfg.max_price_factor)
            }
        };
        for (m, d) in demand.iter().enumerate() {
            if *d == 0.0 {
                dual.mu[m] = 0.0;
            }
        }
        if let Some(m) = (0..scenario.n_users).find(|&m| dual.mu[m] > cfg.mu_max) {
            return Err(Error::infeasible(
                Binding::Demand,
                format!("demand price of user {m} exceeded {:.1e}; demand cannot be met", cfg.mu_max),
            ));
        }
    }
    Ok(InnerOutcome { plan: plan.clone(), iterations, converged })
}

/// Joint planning over the whole window.
pub fn run_window(
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<WindowSolution> {
    check_channel(scenario, channel)?;
    let fit = table.fit()?;
    let (n, m, t_len) = (scenario.n_beams, scenario.n_users, scenario.n_slots);
    for u in 0..m {
        if scenario.demand_rate(u) > fit.r_max * scenario.deadline[u] as f64 {
            return Err(Error::infeasible(
                Binding::Demand,
                format!("user {u} needs more than the top MODCOD in every slot before its deadline"),
            ));
        }
    }
    if scenario.demand_bits.iter().all(|&q| q == 0.0) {
        return Ok(WindowSolution {
            plan: PrecodingPlan::zeros(n, m, t_len),
            g: RateAssignment::zeros(m, t_len),
            power: 0.0,
            active: DMatrix::from_element(n, t_len, false),
            trace: Vec::new(),
            first_pass_iterations: 0,
            inner_iterations: 0,
        });
    }
    let mut reweight = ReweightState::new(&scenario.max_beam_power, t_len);
    let mut plan = PrecodingPlan {
        slots: (0..t_len)
            .map(|t| {
                let served: Vec<bool> =
                    (0..m).map(|u| scenario.is_served(u, t) && scenario.demand_bits[u] > 0.0).collect();
                let psi: Vec<f64> = reweight.psi.column(t).iter().copied().collect();
                matched_filter_start(&channel[t], &served, &scenario.max_beam_power, &psi, scenario.slot_budget[t] as f64)
            })
            .collect(),
    };
    let mut dual = DualState::new(
        (0..m).map(|u| if scenario.demand_bits[u] > 0.0 { cfg.mu_init } else { 0.0 }).collect(),
        cfg.step0,
    );
    let mut trace = Vec::new();
    let mut total_inner = 0;
    let mut first_pass = 0;
    // Reweighting is a heuristic, so every pass that meets the demands is
    // rounded and the cheapest discrete plan is kept.
    let mut best: Option<WindowSolution> = None;
    let mut last_err: Option<Error> = None;
    let mut fallback: Option<PrecodingPlan> = None;
    let mut prev: Option<(Vec<bool>, f64)> = None;
    let mut stable_count = 0;
    for outer in 0..cfg.max_outer {
        dual.iteration = 0;
        let start = plan.clone();
        let outcome = match inner_loop(
            scenario, channel, &fit, cfg, &reweight, &mut plan, &mut dual, &mut trace, outer, total_inner,
        ) {
            Ok(o) => o,
            // The first relaxation is implied by the true constraints; later
            // weights are heuristic, so fall back to the last good plan.
            Err(e) if outer == 0 || !e.is_infeasible() => return Err(e),
            Err(_) => {
                plan = start;
                break;
            }
        };
        total_inner += outcome.iterations;
        if outer == 0 {
            first_pass = outcome.iterations;
        }
        let gaps = demand_gaps(scenario, channel, &outcome.plan, &fit);
        let met = gaps
            .iter()
            .enumerate()
            .all(|(u, g)| scenario.demand_rate(u) == 0.0 || *g <= cfg.gap_tol * scenario.demand_rate(u));
        if met {
            match return_solution(&outcome.plan, scenario, channel, table, cfg) {
                Ok(sol) if best.as_ref().is_none_or(|b| sol.power < b.power) => best = Some(sol),
                Ok(_) => {}
                Err(e) if e.is_infeasible() => last_err = Some(e),
                Err(e) => return Err(e),
            }
        } else if fallback.is_none() {
            fallback = Some(outcome.plan.clone());
        }
        let powers = outcome.plan.beam_powers();
        let pattern: Vec<bool> = powers.iter().map(|&p| p > scenario.activity_threshold).collect();
        let objective = payload_power(&outcome.plan, scenario.hw_power, scenario.activity_threshold);
        if let Some((p, o)) = &prev {
            if *p == pattern && (o - objective).abs() <= cfg.outer_tol_rel * objective.max(1e-12) {
                stable_count += 1;
            } else {
                stable_count = 0;
            }
        }
        prev = Some((pattern, objective));
        // A pass that cannot meet the demands under the current weights
        // would only be sparsified further by the next reweighting.
        if !outcome.converged || stable_count >= 1 {
            break;
        }
        reweight.advance(&powers);
    }
    let mut sol = match best {
        Some(sol) => sol,
        None => match return_solution(fallback.as_ref().unwrap_or(&plan), scenario, channel, table, cfg) {
            Ok(sol) => sol,
            Err(e) => return Err(last_err.unwrap_or(e)),
        },
    };
    sol.trace = trace;
    sol.first_pass_iterations = first_pass;
    sol.inner_iterations = total_inner;
    Ok(sol)
}

/// Rounds the relaxed SINRs onto the MODCOD set, repairs the rounding and
/// re-solves every slot for the discrete targets.
pub fn return_solution(
    relaxed: &PrecodingPlan,
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<WindowSolution> {
    check_channel(scenario, channel)?;
    let mut g = RateAssignment::zeros(scenario.n_users, scenario.n_slots);
    for t in 0..scenario.n_slots {
        for m in 0..scenario.n_users {
            if scenario.is_served(m, t) && scenario.demand_bits[m] > 0.0 {
                let gamma = sinr_unchecked(&channel[t], &relaxed.slots[t], scenario.noise_power[m], m);
                g.g[(m, t)] = table.round_to_omega(gamma);
            }
        }
    }
    finalize(g, scenario, channel, table, cfg)
}

/// Repairs a rate assignment and solves every slot for it.
pub(crate) fn finalize(
    g: RateAssignment,
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<WindowSolution> {
    let (g, slots) = repair_with_solutions(g, scenario, channel, table, cfg)?;
    let plan = PrecodingPlan { slots: slots.into_iter().map(|s| s.w).collect() };
    let active = DMatrix::from_fn(scenario.n_beams, scenario.n_slots, |n, t| {
        beam_power(&plan.slots[t], n) > scenario.activity_threshold
    });
    let report = check_feasibility(&plan, &g, scenario, channel, table);
    if !report.is_feasible(1e-6) {
        return Err(Error::infeasible(
            Binding::Demand,
            format!("returned plan violates {:?}", report.violations(1e-6)),
        ));
    }
    Ok(WindowSolution {
        power: payload_power(&plan, scenario.hw_power, scenario.activity_threshold),
        plan,
        g,
        active,
        trace: Vec::new(),
        first_pass_iterations: 0,
        inner_iterations: 0,
    })
}

fn slot_instance<'a>(
    scenario: &'a Scenario,
    channel: &'a [CMat],
    col: &'a [f64],
    psi: &'a [f64],
    t: usize,
) -> PspInstance<'a> {
    PspInstance {
        h: &channel[t],
        g: col,
        noise: &scenario.noise_power,
        max_beam_power: &scenario.max_beam_power,
        slot_budget: scenario.slot_budget[t],
        hw_power: scenario.hw_power,
        psi,
        activity_threshold: scenario.activity_threshold,
    }
}

/// Greedy repair of a rate assignment.
///
/// While some slot problem is infeasible, the largest target in that slot
/// is lowered one MODCOD step and capped there. While some user is short of
/// its demand, one of its entries is raised one step; the entry is chosen by
/// the estimated power per unit of added rate, using the user's strongest
/// beam gain in the slot and charging hardware power for opening a new
/// stream. Slots with spare beams are preferred.
pub fn repair_rounding(
    g: &RateAssignment,
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<RateAssignment> {
    check_channel(scenario, channel)?;
    repair_with_solutions(g.clone(), scenario, channel, table, cfg).map(|(g, _)| g)
}

fn repair_with_solutions(
    g: RateAssignment,
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &WindowConfig,
) -> Result<(RateAssignment, Vec<PspSolution>)> {
    let (m_users, t_len) = (scenario.n_users, scenario.n_slots);
    let top = table.len();
    let mut idx = DMatrix::<usize>::zeros(m_users, t_len);
    for t in 0..t_len {
        for m in 0..m_users {
            let v = g.g[(m, t)];
            idx[(m, t)] = table
                .index_of(v)
                .ok_or_else(|| Error::Contract(format!("target {v} of user {m} in slot {t} is not a MODCOD level")))?;
            if !scenario.is_served(m, t) {
                idx[(m, t)] = 0;
            }
        }
    }
    let mut ceiling = DMatrix::<usize>::from_element(m_users, t_len, top);
    let psi: Vec<f64> = scenario.max_beam_power.iter().map(|p| 1.0 / p).collect();
    let strength: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let white = whiten(&channel[t], &scenario.noise_power);
            (0..m_users).map(|m| white.column(m).iter().map(|x| x.norm_sqr()).fold(0.0, f64::max)).collect()
        })
        .collect();
    let mut solutions: Vec<Option<PspSolution>> = vec![None; t_len];
    let mut dirty: Vec<bool> = vec![true; t_len];
    let mut steps = 0usize;
    loop {
        // Solve every changed slot.
        let todo: Vec<usize> = (0..t_len).filter(|&t| dirty[t]).collect();
        let results: Vec<(usize, Result<PspSolution>)> = todo
            .par_iter()
            .map(|&t| {
                let col: Vec<f64> = (0..m_users).map(|m| table.sinr_at(idx[(m, t)])).collect();
                (t, solve_psp(&slot_instance(scenario, channel, &col, &psi, t), &cfg.psp))
            })
            .collect();
        let mut lowered = false;
        for (t, res) in results {
            dirty[t] = false;
            match res {
                Ok(sol) => solutions[t] = Some(sol),
                Err(e) if e.is_infeasible() => {
                    let m = (0..m_users)
                        .filter(|&m| idx[(m, t)] > 0)
                        .max_by(|&a, &b| table.sinr_at(idx[(a, t)]).total_cmp(&table.sinr_at(idx[(b, t)])).then(b.cmp(&a)))
                        .expect("an infeasible slot has a positive target");
                    idx[(m, t)] -= 1;
                    ceiling[(m, t)] = idx[(m, t)];
                    dirty[t] = true;
                    lowered = true;
                    steps += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if steps > cfg.max_repair_steps {
            return Err(Error::infeasible(Binding::Demand, "rate repair exhausted its step budget"));
        }
        if lowered {
            continue;
        }
        // Most under-served user, by missing rate.
        let deficit = |m: usize, idx: &DMatrix<usize>| -> f64 {
            scenario.demand_rate(m) - (0..scenario.deadline[m]).map(|t| table.rate_at(idx[(m, t)])).sum::<f64>()
        };
        let short = (0..m_users)
            .map(|m| (m, deficit(m, &idx)))
            .filter(|&(m, d)| d > 1e-9 * scenario.demand_rate(m).max(1.0))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((m, _)) = short else { break };
        let mut best: Option<(bool, f64, usize)> = None;
        for t in 0..scenario.deadline[m] {
            let l = idx[(m, t)];
            if l >= ceiling[(m, t)] || strength[t][m] <= 0.0 {
                continue;
            }
            let d_gamma = table.sinr_at(l + 1) - table.sinr_at(l);
            let d_rate = table.rate_at(l + 1) - table.rate_at(l);
            let opens = l == 0;
            let cost = (d_gamma / strength[t][m] + if opens { scenario.hw_power } else { 0.0 }) / d_rate;
            let headroom = solutions[t]
                .as_ref()
                .is_some_and(|s| !opens || s.active_count() < scenario.slot_budget[t]);
            let key = (headroom, cost, t);
            let better = match &best {
                None => true,
                Some((h, c, _)) => (headroom && !h) || (headroom == *h && cost < *c),
            };
            if better {
                best = Some(key);
            }
        }
        let Some((_, _, t)) = best else {
            return Err(Error::infeasible(
                Binding::Demand,
                format!("user {m} cannot be raised further before its deadline"),
            ));
        };
        idx[(m, t)] += 1;
        dirty[t] = true;
        steps += 1;
        if steps > cfg.max_repair_steps {
            return Err(Error::infeasible(Binding::Demand, "rate repair exhausted its step budget"));
        }
    }
    let mut out = RateAssignment::zeros(m_users, t_len);
    for t in 0..t_len {
        for m in 0..m_users {
            out.g[(m, t)] = table.sinr_at(idx[(m, t)]);
        }
    }
    let solutions = solutions.into_iter().map(|s| s.expect("every slot solved")).collect();
    Ok((out, solutions))
}

/// Transmit powers `N × T` of a plan, for reporting.
pub fn plan_powers(plan: &PrecodingPlan) -> DMatrix<f64> {
    let n = plan.slots.first().map_or(0, |w| w.nrows());
    let cols: Vec<Vec<f64>> = plan.slots.iter().map(row_powers).collect();
    DMatrix::from_fn(n, plan.slots.len(), |r, t| cols[t][r])
}
