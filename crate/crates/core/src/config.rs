//! TOML scenario files.
//!
//! A file has the sections `system`, `power`, `demands`, `channel` and an
//! optional `solver`. Scalars given for per-beam or per-slot quantities are
//! broadcast. Relative paths are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::channel::{BeamPattern, ChannelModel, GridPattern, PathLossConvention, UserGeometry, WalkParams, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::modcod::{db_to_linear, ModcodTable};
use crate::model::Scenario;
use crate::policies::DnnConfig;
use crate::window_opt::WindowConfig;

/// The sample ten-beam scenario shipped with the crate.
pub const SAMPLE_SCENARIO_TOML: &str = include_str!("../data/europe10.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn expand(&self, len: usize, what: &str) -> Result<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); len]),
            OneOrMany::Many(v) if v.len() == len => Ok(v.clone()),
            OneOrMany::Many(v) => Err(Error::Config(format!("{what} has {} entries, expected {len}", v.len()))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    beams: usize,
    users: usize,
    slots: usize,
    beams_per_slot: OneOrMany<usize>,
    slot_duration_s: f64,
    bandwidth_hz: f64,
    #[serde(default = "default_threshold")]
    activity_threshold_w: f64,
}

fn default_threshold() -> f64 {
    1e-6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerSection {
    hardware_w: f64,
    max_beam_w: OneOrMany<f64>,
    noise_dbw: OneOrMany<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandSection {
    mbits: Vec<f64>,
    /// Number of slots, counted from the first, in which each user may be served.
    deadlines: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    lat: f64,
    lon: f64,
    rx_gain_db: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum PatternSection {
    Parametric { peak_gain_dbi: f64, rolloff_per_deg2: f64, boresights: Vec<(f64, f64)> },
    Grid { csv: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    carrier_hz: f64,
    orbit_lon_deg: f64,
    rician_factor_db: f64,
    #[serde(default)]
    path_loss: PathLossConvention,
    #[serde(default = "default_walk")]
    walk_factor: f64,
    #[serde(default = "default_phase_std")]
    geo_phase_std_deg: f64,
    #[serde(default = "default_phase_std")]
    user_phase_std_deg: f64,
    #[serde(default = "default_fading")]
    fading_variance: f64,
    #[serde(default = "default_initial_phase")]
    initial_phase_std_deg: f64,
    #[serde(default)]
    users: Vec<UserEntry>,
    users_csv: Option<PathBuf>,
    pattern: PatternSection,
}

fn default_walk() -> f64 {
    0.05
}
fn default_phase_std() -> f64 {
    1.0
}
fn default_fading() -> f64 {
    1.0
}
fn default_initial_phase() -> f64 {
    180.0
}

/// Solver knobs; every field is optional in the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub window: WindowConfig,
    pub dnn: DnnConfig,
    /// MODCOD table CSV; the shipped table when absent.
    pub modcod_table: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    system: SystemSection,
    power: PowerSection,
    demands: DemandSection,
    channel: ChannelSection,
    #[serde(default)]
    solver: SolverConfig,
}

/// Everything a run needs apart from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub channel: ChannelModel,
    pub solver: SolverConfig,
    pub table: ModcodTable,
}

impl ScenarioConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The shipped sample scenario.
    pub fn sample() -> Self {
        Self::from_toml(SAMPLE_SCENARIO_TOML, Path::new(".")).expect("shipped scenario parses")
    }

    /// Parses `text`; relative file references are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let FileConfig { system, power, demands, channel, mut solver } = file;
        let (n, m, t) = (system.beams, system.users, system.slots);
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        if demands.mbits.len() != m || demands.deadlines.len() != m {
            return Err(Error::Config(format!("demands need {m} entries per list")));
        }
        let scenario = Scenario {
            n_beams: n,
            n_users: m,
            n_slots: t,
            slot_budget: system.beams_per_slot.expand(t, "beams_per_slot")?,
            hw_power: power.hardware_w,
            max_beam_power: power.max_beam_w.expand(n, "max_beam_w")?,
            slot_duration: system.slot_duration_s,
            bandwidth: system.bandwidth_hz,
            noise_power: power.noise_dbw.expand(m, "noise_dbw")?.into_iter().map(db_to_linear).collect(),
            demand_bits: demands.mbits.iter().map(|q| q * 1e6).collect(),
            deadline: demands.deadlines,
            activity_threshold: system.activity_threshold_w,
        };
        scenario.validate().map_err(|e| Error::Config(e.to_string()))?;

        let orbit = channel.orbit_lon_deg;
        let users = match &channel.users_csv {
            Some(p) => UserGeometry::from_csv_reader(std::fs::File::open(resolve(p))?, orbit)?,
            None => channel.users.iter().map(|u| UserGeometry::new(u.lat, u.lon, u.rx_gain_db, orbit)).collect(),
        };
        let pattern = match channel.pattern {
            PatternSection::Parametric { peak_gain_dbi, rolloff_per_deg2, boresights } => BeamPattern::Parametric {
                boresights,
                peak_gain: db_to_linear(peak_gain_dbi),
                rolloff: rolloff_per_deg2,
            },
            PatternSection::Grid { csv } => {
                BeamPattern::Grid(GridPattern::from_csv_reader(std::fs::File::open(resolve(&csv))?)?)
            }
        };
        if users.len() != m || pattern.n_beams() != n {
            return Err(Error::Config(format!(
                "channel describes {} users and {} beams, system has {m} and {n}",
                users.len(),
                pattern.n_beams()
            )));
        }
        let model = ChannelModel {
            users,
            pattern,
            walk: WalkParams {
                walk_factor: channel.walk_factor,
                geo_phase_std: channel.geo_phase_std_deg.to_radians(),
                user_phase_std: channel.user_phase_std_deg.to_radians(),
                fading_variance: channel.fading_variance,
                initial_phase_std: channel.initial_phase_std_deg.to_radians(),
            },
            rician_factor: db_to_linear(channel.rician_factor_db),
            wavelength: SPEED_OF_LIGHT / channel.carrier_hz,
            convention: channel.path_loss,
        };
        let table = match &solver.modcod_table {
            Some(p) => {
                let p = resolve(p);
                solver.modcod_table = Some(p.clone());
                ModcodTable::from_csv_path(p)?
            }
            None => ModcodTable::shipped(),
        };
        Ok(Self { scenario, channel: model, solver, table })
    }

    /// Same configuration with a different beam budget in every slot.
    pub fn with_slot_budget(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.scenario.slot_budget = vec![k; out.scenario.n_slots];
        out
    }

    /// Same configuration with user `m`'s demand replaced, in Mbit.
    pub fn with_demand(&self, m: usize, mbits: f64) -> Self {
        let mut out = self.clone();
        out.scenario.demand_bits[m] = mbits * 1e6;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_scenario_matches_reference_values() {
        let cfg = ScenarioConfig::sample();
        let s = &cfg.scenario;
        assert_eq!((s.n_beams, s.n_users, s.n_slots), (10, 4, 10));
        assert_eq!(s.demand_bits, vec![200e6, 200e6, 300e6, 400e6]);
        assert_eq!(s.deadline, vec![7, 5, 6, 10]);
        assert_eq!(s.slot_budget, vec![4; 10]);
        assert!((s.noise_power[0] / 1.439e-12 - 1.0).abs() < 1e-3);
        assert_eq!(s.max_beam_power, vec![100.0; 10]);
        assert!((cfg.channel.wavelength - SPEED_OF_LIGHT / 19.5e9).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_a_config_error() {
        let text = SAMPLE_SCENARIO_TOML.replace("max_beam_w = 100.0", "max_beam_w = [100.0, 50.0]");
        assert!(matches!(ScenarioConfig::from_toml(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE_SCENARIO_TOML.replace("[power]", "[power]\nwatts = 3");
        assert!(ScenarioConfig::from_toml(&text, Path::new(".")).is_err());
    }

    #[test]
    fn solver_section_overrides_defaults() {
        let text = format!("{SAMPLE_SCENARIO_TOML}\n[solver.window]\nmax_inner = 17\n");
        let cfg = ScenarioConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.solver.window.max_inner, 17);
        assert_eq!(cfg.solver.window.gap_tol, WindowConfig::default().gap_tol);
    }
}
