//! Scenario parameters and physical-layer accounting.
//!
//! Channels and precoders are stored per slot as `N × M` complex matrices:
//! column `m` of a channel matrix is user `m`'s channel vector across beams,
//! column `m` of a precoder matrix is the beamforming vector of user `m`'s
//! stream. Slot indices are 0-based; a user with deadline `d` is served in
//! slots `0..d`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::col_dot;
use crate::modcod::ModcodTable;

pub type CMat = DMatrix<Complex64>;

/// Static system parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub n_beams: usize,
    pub n_users: usize,
    pub n_slots: usize,
    /// Maximum illuminated beams per slot.
    pub slot_budget: Vec<usize>,
    /// Hardware power per illuminated beam, W.
    pub hw_power: f64,
    /// Per-beam transmit power cap, W.
    pub max_beam_power: Vec<f64>,
    /// Slot duration, s.
    pub slot_duration: f64,
    /// Bandwidth, Hz.
    pub bandwidth: f64,
    /// Per-user noise power, W.
    pub noise_power: Vec<f64>,
    /// Per-user demand, bits.
    pub demand_bits: Vec<f64>,
    /// Per-user deadline as a 1-based slot count.
    pub deadline: Vec<usize>,
    /// Beams with power strictly above this are counted as illuminated, W.
    pub activity_threshold: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_beams == 0 || self.n_users == 0 || self.n_slots == 0 {
            return bad("beam, user and slot counts must be positive".into());
        }
        if self.slot_budget.len() != self.n_slots || self.slot_budget.iter().any(|&k| k == 0) {
            return bad(format!("slot budget must list {} values >= 1", self.n_slots));
        }
        if self.max_beam_power.len() != self.n_beams {
            return bad(format!("expected {} beam power caps", self.n_beams));
        }
        for (name, v) in [
            ("noise power", &self.noise_power),
            ("demand", &self.demand_bits),
        ] {
            if v.len() != self.n_users {
                return bad(format!("expected {} {name} values", self.n_users));
            }
        }
        if self.deadline.len() != self.n_users {
            return bad(format!("expected {} deadlines", self.n_users));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.hw_power)
            || !positive(self.slot_duration)
            || !positive(self.bandwidth)
            || !positive(self.activity_threshold)
            || !self.max_beam_power.iter().all(|&p| positive(p))
            || !self.noise_power.iter().all(|&p| positive(p))
        {
            return bad("powers, durations and bandwidth must be positive and finite".into());
        }
        if !self.demand_bits.iter().all(|&q| q.is_finite() && q >= 0.0) {
            return bad("demands must be finite and non-negative".into());
        }
        if self.deadline.iter().any(|&d| d == 0 || d > self.n_slots) {
            return bad(format!("deadlines must lie in 1..={}", self.n_slots));
        }
        Ok(())
    }

    /// Bits carried per slot by one bit/s/Hz.
    pub fn bits_per_rate(&self) -> f64 {
        self.slot_duration * self.bandwidth
    }

    /// Demand of user `m` expressed in bit/s/Hz·slots.
    pub fn demand_rate(&self, m: usize) -> f64 {
        self.demand_bits[m] / self.bits_per_rate()
    }

    pub fn is_served(&self, m: usize, t: usize) -> bool {
        t < self.deadline[m]
    }

    pub fn served_users(&self, t: usize) -> Vec<usize> {
        (0..self.n_users).filter(|&m| self.is_served(m, t)).collect()
    }
}

/// Precoder tensor, one `N × M` matrix per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingPlan {
    pub slots: Vec<CMat>,
}

impl PrecodingPlan {
    pub fn zeros(n_beams: usize, n_users: usize, n_slots: usize) -> Self {
        Self { slots: vec![CMat::zeros(n_beams, n_users); n_slots] }
    }

    /// Beam powers as an `N × T` matrix.
    pub fn beam_powers(&self) -> DMatrix<f64> {
        let n = self.slots.first().map_or(0, |w| w.nrows());
        DMatrix::from_fn(n, self.slots.len(), |b, t| beam_power(&self.slots[t], b))
    }

    /// Illuminated beam count per slot.
    pub fn active_counts(&self, threshold: f64) -> Vec<usize> {
        self.slots
            .iter()
            .map(|w| (0..w.nrows()).filter(|&n| beam_power(w, n) > threshold).count())
            .collect()
    }
}

/// Target SINR per user and slot, stored `M × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAssignment {
    pub g: DMatrix<f64>,
}

impl RateAssignment {
    pub fn zeros(n_users: usize, n_slots: usize) -> Self {
        Self { g: DMatrix::zeros(n_users, n_slots) }
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        self.g.column(t).iter().copied().collect()
    }

    pub fn set_column(&mut self, t: usize, col: &[f64]) {
        for (m, &v) in col.iter().enumerate() {
            self.g[(m, t)] = v;
        }
    }
}

fn check_shape(h: &CMat, w: &CMat) -> Result<()> {
    if h.shape() != w.shape() {
        return Err(Error::Contract(format!(
            "channel shape {:?} does not match precoder shape {:?}",
            h.shape(),
            w.shape()
        )));
    }
    Ok(())
}

/// SINR of user `m` in one slot.
pub fn compute_sinr(h: &CMat, w: &CMat, noise: f64, m: usize) -> Result<f64> {
    check_shape(h, w)?;
    if m >= h.ncols() {
        return Err(Error::Contract(format!("user index {m} out of range")));
    }
    if !(noise > 0.0) {
        return Err(Error::Contract("noise power must be positive".into()));
    }
    Ok(sinr_unchecked(h, w, noise, m))
}

pub(crate) fn sinr_unchecked(h: &CMat, w: &CMat, noise: f64, m: usize) -> f64 {
    let signal = col_dot(h, m, w, m).norm_sqr();
    if signal == 0.0 {
        return 0.0;
    }
    let interference: f64 = (0..w.ncols())
        .filter(|&j| j != m)
        .map(|j| col_dot(h, m, w, j).norm_sqr())
        .sum();
    signal / (interference + noise)
}

/// SINR of every user in one slot.
pub fn sinr_all(h: &CMat, w: &CMat, noise: &[f64]) -> Result<Vec<f64>> {
    check_shape(h, w)?;
    Ok((0..h.ncols()).map(|m| sinr_unchecked(h, w, noise[m], m)).collect())
}

/// Transmit power of beam `n`.
pub fn beam_power(w: &CMat, n: usize) -> f64 {
    w.row(n).iter().map(|x| x.norm_sqr()).sum()
}

/// Transmit power plus hardware power of every illuminated beam-slot.
pub fn payload_power(plan: &PrecodingPlan, hw_power: f64, activity_threshold: f64) -> f64 {
    plan.slots
        .iter()
        .flat_map(|w| (0..w.nrows()).map(move |n| beam_power(w, n)))
        .map(|p| if p > activity_threshold { p + hw_power } else { p })
        .sum()
}

/// Bits delivered to user `m` up to its deadline.
pub fn delivered_bits(
    g: &RateAssignment,
    scenario: &Scenario,
    table: &ModcodTable,
    m: usize,
) -> Result<f64> {
    let mut rate = 0.0;
    for t in 0..scenario.deadline[m].min(g.g.ncols()) {
        rate += table.f_dvb(g.g[(m, t)])?;
    }
    Ok(rate * scenario.bits_per_rate())
}

/// Worst-case slack of every constraint of the joint problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Minimum of `(Γ − g)/g` over entries with a positive target.
    pub sinr_slack: f64,
    /// Minimum of `K_t − active` over slots.
    pub activity_slack: i64,
    /// Minimum of `P̄_n − P_n` over beams and slots, W.
    pub power_slack: f64,
    /// Delivered minus demanded bits, per user.
    pub demand_slack: Vec<f64>,
    /// Every target is a member of Ω.
    pub targets_in_omega: bool,
    /// No positive target lies after a user's deadline.
    pub deadlines_respected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Sinr,
    Activity,
    BeamPower,
    Demand,
    Omega,
}

impl FeasibilityReport {
    /// Violated constraints, allowing a relative SINR shortfall of `sinr_rtol`.
    pub fn violations(&self, sinr_rtol: f64) -> Vec<(Constraint, f64)> {
        let mut out = Vec::new();
        if self.sinr_slack < -sinr_rtol {
            out.push((Constraint::Sinr, self.sinr_slack));
        }
        if self.activity_slack < 0 {
            out.push((Constraint::Activity, self.activity_slack as f64));
        }
        if self.power_slack < 0.0 {
            out.push((Constraint::BeamPower, self.power_slack));
        }
        let worst_demand = self.demand_slack.iter().copied().fold(f64::INFINITY, f64::min);
        // Demands are sums of table rates; allow for accumulation round-off only.
        if worst_demand < -1e-6 {
            out.push((Constraint::Demand, worst_demand));
        }
        if !self.targets_in_omega || !self.deadlines_respected {
            out.push((Constraint::Omega, -1.0));
        }
        out
    }

    pub fn is_feasible(&self, sinr_rtol: f64) -> bool {
        self.violations(sinr_rtol).is_empty()
    }
}

/// Evaluates every constraint of the joint problem for a plan.
pub fn check_feasibility(
    plan: &PrecodingPlan,
    g: &RateAssignment,
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
) -> FeasibilityReport {
    let mut sinr_slack = f64::INFINITY;
    let mut activity_slack = i64::MAX;
    let mut power_slack = f64::INFINITY;
    let mut targets_in_omega = true;
    let mut deadlines_respected = true;
    for t in 0..scenario.n_slots {
        let (h, w) = (&channel[t], &plan.slots[t]);
        for m in 0..scenario.n_users {
            let target = g.g[(m, t)];
            if table.index_of(target).is_none() {
                targets_in_omega = false;
            }
            if target > 0.0 {
                if !scenario.is_served(m, t) {
                    deadlines_respected = false;
                }
                let gamma = sinr_unchecked(h, w, scenario.noise_power[m], m);
                sinr_slack = sinr_slack.min((gamma - target) / target);
            }
        }
        let mut active = 0i64;
        for n in 0..scenario.n_beams {
            let p = beam_power(w, n);
            if p > scenario.activity_threshold {
                active += 1;
            }
            power_slack = power_slack.min(scenario.max_beam_power[n] - p);
        }
        activity_slack = activity_slack.min(scenario.slot_budget[t] as i64 - active);
    }
    let demand_slack = (0..scenario.n_users)
        .map(|m| {
            let bits: f64 = (0..scenario.deadline[m])
                .map(|t| table.index_of(g.g[(m, t)]).map_or(0.0, |i| table.rate_at(i)))
                .sum::<f64>()
                * scenario.bits_per_rate();
            bits - scenario.demand_bits[m]
        })
        .collect();
    FeasibilityReport {
        sinr_slack,
        activity_slack,
        power_slack,
        demand_slack,
        targets_in_omega,
        deadlines_respected,
    }
}
