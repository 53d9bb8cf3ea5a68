//! Inputs, candidate actions and training labels of the learned policy.

use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::modcod::ModcodTable;
use crate::model::{beam_power, sinr_unchecked, CMat, Scenario};

/// Per-user remaining rate per remaining slot, in bit/s/Hz.
pub fn pacing_rates(remaining_bits: &[f64], t: usize, scenario: &Scenario) -> Vec<f64> {
    (0..scenario.n_users)
        .map(|m| {
            if t >= scenario.deadline[m] {
                return 0.0;
            }
            let slots_left = (scenario.deadline[m] - t) as f64;
            (remaining_bits[m] / scenario.bits_per_rate()).max(0.0) / slots_left
        })
        .collect()
}

/// Feature vector of length `5M`: for each user the three strongest beam
/// magnitudes (descending, zero-padded) and its pacing rate, then the `M`
/// candidate targets.
pub fn build_features(h: &CMat, candidate: &[f64], remaining_bits: &[f64], t: usize, scenario: &Scenario) -> Vec<f64> {
    let m_users = h.ncols();
    let pace = pacing_rates(remaining_bits, t, scenario);
    let mut out = Vec::with_capacity(5 * m_users);
    for m in 0..m_users {
        let mut mags: Vec<f64> = h.column(m).iter().map(|x| x.norm()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        mags.resize(3.max(mags.len()), 0.0);
        out.extend_from_slice(&mags[..3]);
        out.push(pace[m]);
    }
    out.extend_from_slice(candidate);
    out
}

/// Draws `count` candidate target vectors. Entry `m` is uniform over the
/// Ω-indices within `half_width` of `g_prev[m]`'s index, clipped to the
/// table.
pub fn sample_candidates<R: Rng + ?Sized>(
    g_prev: &[f64],
    half_width: usize,
    count: usize,
    table: &ModcodTable,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let idx = g_prev
        .iter()
        .map(|&g| table.index_of(g).ok_or_else(|| Error::Contract(format!("previous target {g} is not a MODCOD level"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..count)
        .map(|_| {
            idx.iter()
                .map(|&l| {
                    let lo = l.saturating_sub(half_width);
                    let hi = (l + half_width).min(table.len());
                    table.sinr_at(rng.random_range(lo..=hi))
                })
                .collect()
        })
        .collect())
}

/// Direction of the pacing hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingPenalty {
    /// `[mean(R − S)]⁺`: penalizes serving ahead of the remaining pace.
    AheadOfPace,
    /// `[mean(S − R)]⁺`: penalizes falling behind it.
    #[default]
    BehindPace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyWeights {
    pub sinr: f64,
    pub activity: f64,
    pub pacing: f64,
}

/// Rates actually delivered in a slot: the MODCOD of each target, or the
/// best level the achieved SINR supports when the target is missed.
pub fn delivered_rates(h: &CMat, w: &CMat, g: &[f64], noise: &[f64], table: &ModcodTable) -> Vec<f64> {
    (0..h.ncols())
        .map(|m| {
            if g[m] <= 0.0 {
                return 0.0;
            }
            let gamma = sinr_unchecked(h, w, noise[m], m);
            let target = table.floor_index(g[m]);
            table.rate_at(table.floor_index(gamma * (1.0 + 1e-6)).min(target))
        })
        .collect()
}

/// Slot payload power plus weighted hinges on SINR shortfall, beam-budget
/// excess and pacing mismatch.
#[allow(clippy::too_many_arguments)]
pub fn penalty_metric(
    w: &CMat,
    g: &[f64],
    h: &CMat,
    scenario: &Scenario,
    remaining_bits: &[f64],
    t: usize,
    table: &ModcodTable,
    weights: &PenaltyWeights,
    pacing: PacingPenalty,
) -> f64 {
    let m_users = g.len() as f64;
    let powers: Vec<f64> = (0..w.nrows()).map(|n| beam_power(w, n)).collect();
    let active = powers.iter().filter(|&&p| p > scenario.activity_threshold).count();
    let objective = powers.iter().sum::<f64>() + scenario.hw_power * active as f64;
    let shortfall: f64 =
        (0..g.len()).map(|m| g[m] - sinr_unchecked(h, w, scenario.noise_power[m], m)).sum::<f64>() / m_users;
    let excess = active.saturating_sub(scenario.slot_budget[t]) as f64;
    let rates = delivered_rates(h, w, g, &scenario.noise_power, table);
    let pace = pacing_rates(remaining_bits, t, scenario);
    let ahead: f64 = rates.iter().zip(&pace).map(|(r, s)| r - s).sum::<f64>() / m_users;
    let pacing_gap = match pacing {
        PacingPenalty::AheadOfPace => ahead,
        PacingPenalty::BehindPace => -ahead,
    };
    objective + weights.sinr * shortfall.max(0.0) + weights.activity * excess + weights.pacing * pacing_gap.max(0.0)
}
