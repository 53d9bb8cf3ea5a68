//! Learned per-slot MODCOD policy.
//!
//! Training data come from rollouts on independent channel realizations.
//! In each slot, candidates are drawn around the previous action, every
//! candidate is scored by solving its slot problem and evaluating
//! [`penalty_metric`], and the rollout continues with the best candidate.
//! The network learns the map from (channel, pacing, candidate) features to
//! that score; at run time the candidate with the lowest predicted score is
//! played.

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use super::features::{build_features, delivered_rates, penalty_metric, sample_candidates, PacingPenalty, PenaltyWeights};
use super::heuristic::heuristic_assign;
use super::mlp::{train, Mlp, TrainSettings};
use crate::channel::{generate_realization, ChannelModel};
use crate::error::{Error, Result};
use crate::modcod::ModcodTable;
use crate::model::{CMat, RateAssignment, Scenario};
use crate::per_slot::{attempt_psp, solve_psp, PspInstance, PspSettings};
use crate::rng::{stream_rng, Stream};
use crate::window_opt::{finalize, WindowConfig, WindowSolution};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Candidate window half-width in MODCOD steps.
    pub half_width: usize,
    pub candidates: usize,
    /// Hinge weights for SINR, beam budget and pacing; `10·ρ_hw` each when absent.
    pub penalty_weights: Option<[f64; 3]>,
    pub pacing: PacingPenalty,
    pub training_realizations: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100; 4],
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 300,
            half_width: 2,
            candidates: 32,
            penalty_weights: None,
            pacing: PacingPenalty::BehindPace,
            training_realizations: 50,
        }
    }
}

impl DnnConfig {
    pub fn weights(&self, hw_power: f64) -> PenaltyWeights {
        let [sinr, activity, pacing] = self.penalty_weights.unwrap_or([10.0 * hw_power; 3]);
        PenaltyWeights { sinr, activity, pacing }
    }

    pub fn layer_sizes(&self, n_users: usize) -> Vec<usize> {
        let mut sizes = vec![5 * n_users];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings { epochs: self.epochs, learning_rate: self.learning_rate, batch_size: self.batch_size }
    }
}

/// One labeled candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub features: Vec<f64>,
    pub label: f64,
    pub slot: usize,
}

fn instance<'a>(scenario: &'a Scenario, h: &'a CMat, g: &'a [f64], psi: &'a [f64], t: usize) -> PspInstance<'a> {
    PspInstance {
        h,
        g,
        noise: &scenario.noise_power,
        max_beam_power: &scenario.max_beam_power,
        slot_budget: scenario.slot_budget[t],
        hw_power: scenario.hw_power,
        psi,
        activity_threshold: scenario.activity_threshold,
    }
}

/// Candidates for slot `t`, with unserved users forced off.
fn slot_candidates<R: Rng + ?Sized>(
    g_prev: &[f64],
    t: usize,
    scenario: &Scenario,
    table: &ModcodTable,
    cfg: &DnnConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut cands = sample_candidates(g_prev, cfg.half_width, cfg.candidates.max(1), table, rng)?;
    for c in &mut cands {
        for (m, v) in c.iter_mut().enumerate() {
            if !scenario.is_served(m, t) || scenario.demand_bits[m] == 0.0 {
                *v = 0.0;
            }
        }
    }
    Ok(cands)
}

/// Rolls out one realization and labels every candidate it meets.
pub fn collect_samples<R: Rng + ?Sized>(
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    cfg: &DnnConfig,
    psp: &PspSettings,
    rng: &mut R,
) -> Result<Vec<PolicySample>> {
    let weights = cfg.weights(scenario.hw_power);
    let psi: Vec<f64> = scenario.max_beam_power.iter().map(|p| 1.0 / p).collect();
    let mut g_prev = heuristic_assign(scenario, table)?.column(0);
    let mut remaining = scenario.demand_bits.clone();
    let mut out = Vec::new();
    for t in 0..scenario.n_slots {
        let h = &channel[t];
        let cands = slot_candidates(&g_prev, t, scenario, table, cfg, rng)?;
        let scored: Vec<Result<(f64, Vec<f64>)>> = cands
            .par_iter()
            .map(|g| {
                let att = attempt_psp(&instance(scenario, h, g, &psi, t), psp)?;
                let w = &att.solution.w;
                let label = penalty_metric(w, g, h, scenario, &remaining, t, table, &weights, cfg.pacing);
                Ok((label, delivered_rates(h, w, g, &scenario.noise_power, table)))
            })
            .collect();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for (i, (g, s)) in cands.iter().zip(scored).enumerate() {
            let (label, rates) = s?;
            out.push(PolicySample { features: build_features(h, g, &remaining, t, scenario), label, slot: t });
            if best.as_ref().is_none_or(|b| label < b.0) {
                best = Some((label, i, rates));
            }
        }
        let (_, i, rates) = best.expect("at least one candidate");
        for m in 0..scenario.n_users {
            remaining[m] -= rates[m] * scenario.bits_per_rate();
        }
        g_prev = cands[i].clone();
    }
    Ok(out)
}

/// Labels rollouts on `cfg.training_realizations` channel draws and fits a
/// fresh network. Returns the model, its loss curve and the sample count.
pub fn train_policy(
    scenario: &Scenario,
    model: &ChannelModel,
    table: &ModcodTable,
    cfg: &DnnConfig,
    psp: &PspSettings,
    seed: u64,
) -> Result<(Mlp, Vec<f64>, usize)> {
    let mut seeds_rng = stream_rng(seed, Stream::Training);
    let seeds: Vec<u64> = (0..cfg.training_realizations).map(|_| seeds_rng.random()).collect();
    let batches: Vec<Result<Vec<PolicySample>>> = seeds
        .par_iter()
        .map(|&s| {
            let h = generate_realization(scenario, model, s)?.h;
            collect_samples(scenario, &h, table, cfg, psp, &mut stream_rng(s, Stream::Candidates))
        })
        .collect();
    let mut samples = Vec::new();
    for b in batches {
        samples.extend(b?);
    }
    if samples.is_empty() {
        return Err(Error::Config("no training samples; raise training_realizations".into()));
    }
    let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let mut init_rng = stream_rng(seed, Stream::Dropout);
    let net = Mlp::new(&cfg.layer_sizes(scenario.n_users), cfg.dropout, &mut init_rng)?;
    let (net, curve) = train(net, &xs, &ys, &cfg.train_settings(), &mut init_rng)?;
    Ok((net, curve, samples.len()))
}

/// Candidate with the lowest predicted score; ties go to the first.
#[allow(clippy::too_many_arguments)]
pub fn infer_action<R: Rng + ?Sized>(
    model: &Mlp,
    h: &CMat,
    remaining_bits: &[f64],
    g_prev: &[f64],
    t: usize,
    scenario: &Scenario,
    table: &ModcodTable,
    cfg: &DnnConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if model.input_len() != 5 * scenario.n_users {
        return Err(Error::Config(format!(
            "model expects {} features, scenario produces {}",
            model.input_len(),
            5 * scenario.n_users
        )));
    }
    let mut cands = slot_candidates(g_prev, t, scenario, table, cfg, rng)?;
    let scores: Vec<f64> =
        cands.par_iter().map(|g| model.predict(&build_features(h, g, remaining_bits, t, scenario))).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(cands.swap_remove(best))
}

/// Plays the learned policy slot by slot, then repairs any demand still
/// unmet and re-solves the slots.
pub fn run_dnn_pipeline(
    scenario: &Scenario,
    channel: &[CMat],
    table: &ModcodTable,
    model: &Mlp,
    cfg: &DnnConfig,
    window: &WindowConfig,
    seed: u64,
) -> Result<WindowSolution> {
    let mut rng = stream_rng(seed, Stream::Candidates);
    let psi: Vec<f64> = scenario.max_beam_power.iter().map(|p| 1.0 / p).collect();
    let mut g_prev = heuristic_assign(scenario, table)?.column(0);
    let mut remaining = scenario.demand_bits.clone();
    let mut g = RateAssignment::zeros(scenario.n_users, scenario.n_slots);
    for t in 0..scenario.n_slots {
        let h = &channel[t];
        let mut action = infer_action(model, h, &remaining, &g_prev, t, scenario, table, cfg, &mut rng)?;
        // Lower the largest target until the slot is solvable.
        let sol = loop {
            match solve_psp(&instance(scenario, h, &action, &psi, t), &window.psp) {
                Ok(sol) => break sol,
                Err(e) if e.is_infeasible() => {
                    let m = (0..action.len()).max_by(|&a, &b| action[a].total_cmp(&action[b])).expect("users");
                    action[m] = table.sinr_at(table.index_of(action[m]).expect("Ω member") - 1);
                }
                Err(e) => return Err(e),
            }
        };
        let rates = delivered_rates(h, &sol.w, &action, &scenario.noise_power, table);
        for m in 0..scenario.n_users {
            remaining[m] -= rates[m] * scenario.bits_per_rate();
        }
        g.set_column(t, &action);
        g_prev = action;
    }
    finalize(g, scenario, channel, table, window)
}
