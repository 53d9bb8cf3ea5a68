//! DVB-S2X MODCOD handling.
//!
//! A [`ModcodTable`] holds the admissible target SINRs (`Ω`) and their
//! spectral efficiencies. [`ShannonFit`] is the continuous surrogate
//! `min(R_max, log2(1 + g/ξ))` used by the relaxed solvers.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// The table shipped with the crate.
pub const SHIPPED_TABLE_CSV: &str = include_str!("../data/modcod_table.csv");

/// Relative tolerance used when matching a value against a member of `Ω`.
const MEMBER_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ModcodEntry {
    pub label: String,
    /// Minimum working SINR, linear.
    pub sinr: f64,
    /// Spectral efficiency in bit/s/Hz.
    pub rate: f64,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    label: String,
    esn0_db: f64,
    spectral_efficiency: f64,
}

/// Ordered MODCOD list with strictly increasing SINR and rate.
///
/// Index 0 refers to the implicit "off" entry `(0, 0)`; indices `1..=L`
/// refer to the table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModcodTable {
    entries: Vec<ModcodEntry>,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl ModcodTable {
    /// Builds a table from rows that must already be strictly increasing in
    /// both SINR and rate.
    pub fn new(entries: Vec<ModcodEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Degenerate("empty MODCOD table".into()));
        }
        for e in &entries {
            if !(e.sinr.is_finite() && e.sinr > 0.0 && e.rate.is_finite() && e.rate > 0.0) {
                return Err(Error::Contract(format!(
                    "MODCOD entry {:?} must have positive finite SINR and rate",
                    e.label
                )));
            }
        }
        for pair in entries.windows(2) {
            if pair[1].sinr <= pair[0].sinr || pair[1].rate <= pair[0].rate {
                return Err(Error::Contract(format!(
                    "MODCOD entries {:?} and {:?} are not strictly increasing",
                    pair[0].label, pair[1].label
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a table from arbitrary rows, keeping only the efficient
    /// frontier: rows are sorted by SINR and any row whose rate does not
    /// exceed every cheaper row's rate is dropped.
    pub fn from_rows(mut rows: Vec<ModcodEntry>) -> Result<Self> {
        rows.sort_by(|a, b| a.sinr.total_cmp(&b.sinr).then(b.rate.total_cmp(&a.rate)));
        let mut frontier: Vec<ModcodEntry> = Vec::with_capacity(rows.len());
        for row in rows {
            let dominated = frontier
                .last()
                .is_some_and(|last| row.rate <= last.rate || row.sinr <= last.sinr);
            if !dominated {
                frontier.push(row);
            }
        }
        Self::new(frontier)
    }

    /// Parses `label,esn0_db,spectral_efficiency` CSV data.
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.deserialize() {
            let row: CsvRow = rec?;
            rows.push(ModcodEntry {
                label: row.label,
                sinr: db_to_linear(row.esn0_db),
                rate: row.spectral_efficiency,
            });
        }
        Self::from_rows(rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn shipped() -> Self {
        Self::from_csv_reader(SHIPPED_TABLE_CSV.as_bytes()).expect("shipped MODCOD table is valid")
    }

    pub fn entries(&self) -> &[ModcodEntry] {
        &self.entries
    }

    /// Number of non-zero MODCODs.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SINR of Ω-index `idx` (0 is the off entry).
    pub fn sinr_at(&self, idx: usize) -> f64 {
        if idx == 0 {
            0.0
        } else {
            self.entries[idx - 1].sinr
        }
    }

    /// Rate of Ω-index `idx` (0 is the off entry).
    pub fn rate_at(&self, idx: usize) -> f64 {
        if idx == 0 {
            0.0
        } else {
            self.entries[idx - 1].rate
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.rate)
    }

    pub fn max_sinr(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.sinr)
    }

    /// All members of Ω, starting with 0.
    pub fn omega(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.entries.iter().map(|e| e.sinr)).collect()
    }

    /// Ω-index of `g`, if `g` is a member.
    pub fn index_of(&self, g: f64) -> Option<usize> {
        if g == 0.0 {
            return Some(0);
        }
        let pos = self.entries.partition_point(|e| e.sinr < g * (1.0 - MEMBER_RTOL));
        self.entries
            .get(pos)
            .filter(|e| (e.sinr - g).abs() <= MEMBER_RTOL * e.sinr)
            .map(|_| pos + 1)
    }

    /// Exact rate lookup for a member of Ω.
    pub fn f_dvb(&self, g: f64) -> Result<f64> {
        self.index_of(g)
            .map(|i| self.rate_at(i))
            .ok_or_else(|| Error::Contract(format!("SINR target {g} is not a MODCOD level")))
    }

    /// Nearest member of Ω in linear scale; exact midpoints round up.
    pub fn round_to_omega(&self, g: f64) -> f64 {
        self.sinr_at(self.round_index(g))
    }

    /// Ω-index of [`Self::round_to_omega`].
    pub fn round_index(&self, g: f64) -> usize {
        if g.is_nan() || g <= 0.0 {
            return 0;
        }
        // First index whose SINR is >= g.
        let upper = self.entries.partition_point(|e| e.sinr < g) + 1;
        if upper > self.len() {
            return self.len();
        }
        let lower = upper - 1;
        let (lo, hi) = (self.sinr_at(lower), self.sinr_at(upper));
        if g - lo < hi - g {
            lower
        } else {
            upper
        }
    }

    /// Ω-index of the largest level not above `g`.
    pub fn floor_index(&self, g: f64) -> usize {
        if g.is_nan() {
            return 0;
        }
        self.entries.partition_point(|e| e.sinr <= g)
    }

    /// Smallest Ω-index whose rate is at least `rate`, if any.
    pub fn min_index_for_rate(&self, rate: f64) -> Option<usize> {
        if rate <= 0.0 {
            return Some(0);
        }
        let pos = self.entries.partition_point(|e| e.rate < rate);
        (pos < self.len()).then_some(pos + 1)
    }

    /// Least-squares fit of the Shannon surrogate to this table.
    pub fn fit(&self) -> Result<ShannonFit> {
        fit_xi(self)
    }
}

/// Continuous rate surrogate `min(R_max, log2(1 + g/ξ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShannonFit {
    pub xi: f64,
    pub rmse: f64,
    pub r_max: f64,
}

impl ShannonFit {
    pub fn f_sn(&self, g: f64) -> f64 {
        f_sn(g, self)
    }

    /// Unclamped `log2(1 + g/ξ)`.
    pub fn log_rate(&self, g: f64) -> f64 {
        (g.max(0.0) / self.xi).ln_1p() / std::f64::consts::LN_2
    }

    /// SINR at which the unclamped surrogate reaches `rate`.
    pub fn sinr_for_rate(&self, rate: f64) -> f64 {
        self.xi * (rate * std::f64::consts::LN_2).exp_m1()
    }
}

pub fn f_sn(g: f64, fit: &ShannonFit) -> f64 {
    fit.log_rate(g).min(fit.r_max)
}

fn fit_residuals(table: &ModcodTable, xi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    table.entries().iter().map(move |e| {
        let model = (e.sinr / xi).ln_1p() / std::f64::consts::LN_2;
        (e.rate - model, e.sinr)
    })
}

/// Derivative of the squared-error sum with respect to `ξ`, up to a positive factor.
fn fit_slope(table: &ModcodTable, xi: f64) -> f64 {
    fit_residuals(table, xi).map(|(r, g)| r * g / (xi + g)).sum()
}

/// Fits `ξ` by bisection on the derivative of the squared error in log-`ξ`.
pub fn fit_xi(table: &ModcodTable) -> Result<ShannonFit> {
    if table.len() < 2 {
        return Err(Error::Degenerate(
            "at least two MODCOD entries are needed to fit the surrogate".into(),
        ));
    }
    let g_min = table.entries()[0].sinr;
    let g_max = table.max_sinr();
    let mut lo = (g_min * 1e-9).ln();
    let mut hi = (g_max * 1e9).ln();
    if fit_slope(table, lo.exp()) > 0.0 || fit_slope(table, hi.exp()) < 0.0 {
        return Err(Error::Degenerate("surrogate fit has no interior minimum".into()));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if fit_slope(table, mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xi = (0.5 * (lo + hi)).exp();
    let sse: f64 = fit_residuals(table, xi).map(|(r, _)| r * r).sum();
    Ok(ShannonFit {
        xi,
        rmse: (sse / table.len() as f64).sqrt(),
        r_max: table.max_rate(),
    })
}
