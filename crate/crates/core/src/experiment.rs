//! Seeded experiment runs and sweeps with CSV output.
//!
//! A run is one planner on one channel realization. Every run writes its
//! precoders to `plans/<label>.csv` and its convergence trace to
//! `traces/<label>.csv`; the runs are summarized in `results.csv`.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::channel::generate_realization;
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::model::{check_feasibility, payload_power, sinr_unchecked, CMat, PrecodingPlan, RateAssignment};
use crate::policies::{run_dnn_pipeline, run_heuristic_pipeline, train_policy, Mlp};
use crate::window_opt::{run_window, WindowSolution};
use crate::Complex64;

/// Column order of `results.csv`.
pub const RESULT_HEADER: [&str; 8] =
    ["seed", "pipeline", "kt", "q1_mbits", "total_power_w", "total_active_beams", "feasible", "wall_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Window,
    Heuristic,
    /// Trains a policy on the base scenario, then plays it at every sweep value.
    DnnTrain,
    /// Plays a previously trained policy.
    DnnRun,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Window => "window",
            Pipeline::Heuristic => "heuristic",
            Pipeline::DnnTrain => "dnn-train",
            Pipeline::DnnRun => "dnn-run",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Pipeline::Window, Pipeline::Heuristic, Pipeline::DnnTrain, Pipeline::DnnRun]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    /// Illuminated-beam budget, the same in every slot.
    Kt,
    /// Demand of the first user, Mbit.
    Q1,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SweepAxis::None),
            "kt" => Ok(SweepAxis::Kt),
            "q1" => Ok(SweepAxis::Q1),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub seeds: Vec<u64>,
    pub pipeline: Pipeline,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub out_dir: PathBuf,
    /// Policy to play for `dnn-run`; where to store it for `dnn-train`.
    pub model: Option<PathBuf>,
    /// Seed of the training stream for `dnn-train`.
    pub train_seed: u64,
    /// Record wall-clock time; off keeps the results byte-reproducible.
    pub timing: bool,
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub pipeline: Pipeline,
    /// Uniform beam budget; `None` when the slots differ.
    pub kt: Option<usize>,
    pub q1_mbits: f64,
    pub total_power_w: Option<f64>,
    pub total_active_beams: Option<usize>,
    pub feasible: bool,
    pub wall_ms: u64,
}

impl ResultRow {
    /// File stem of the run's plan and trace.
    pub fn label(&self) -> String {
        let kt = self.kt.map_or_else(|| "var".to_string(), |k| k.to_string());
        format!("{}_seed{}_kt{}_q1{}", self.pipeline, self.seed, kt, self.q1_mbits)
    }
}

/// Parses `a..b` (inclusive) or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds `{text}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

/// One configuration per sweep value, paired with that value.
pub fn sweep_configs(base: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<(Option<f64>, ScenarioConfig)>> {
    if axis == SweepAxis::None {
        return Ok(vec![(None, base.clone())]);
    }
    if values.is_empty() {
        return Err(Error::Config("a sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let cfg = match axis {
                SweepAxis::Kt => {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::Config(format!("beam budget {v} is not a count")));
                    }
                    base.with_slot_budget(v as usize)
                }
                SweepAxis::Q1 => {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::Config(format!("demand {v} Mbit is not valid")));
                    }
                    base.with_demand(0, v)
                }
                SweepAxis::None => unreachable!(),
            };
            cfg.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
            Ok((Some(v), cfg))
        })
        .collect()
}

/// Runs a planner that needs no training on realization `seed`.
pub fn run_pipeline(cfg: &ScenarioConfig, pipeline: Pipeline, seed: u64, model: Option<&Mlp>) -> Result<WindowSolution> {
    let h = generate_realization(&cfg.scenario, &cfg.channel, seed)?.h;
    let (s, t, w) = (&cfg.scenario, &cfg.table, &cfg.solver.window);
    match pipeline {
        Pipeline::Window => run_window(s, &h, t, w),
        Pipeline::Heuristic => run_heuristic_pipeline(s, &h, t, w),
        Pipeline::DnnTrain | Pipeline::DnnRun => {
            let model = model.ok_or_else(|| Error::Config("the learned pipeline needs a model".into()))?;
            run_dnn_pipeline(s, &h, t, model, &cfg.solver.dnn, w, seed)
        }
    }
}

fn uniform_budget(cfg: &ScenarioConfig) -> Option<usize> {
    let b = &cfg.scenario.slot_budget;
    b.first().copied().filter(|k| b.iter().all(|x| x == k))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes a plan as `t,n,m,re,im`, one row per precoder entry.
pub fn write_plan_csv<W: Write>(plan: &PrecodingPlan, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "n", "m", "re", "im"])?;
    for (t, slot) in plan.slots.iter().enumerate() {
        for n in 0..slot.nrows() {
            for m in 0..slot.ncols() {
                let x = slot[(n, m)];
                w.write_record(&[t.to_string(), n.to_string(), m.to_string(), format!("{:e}", x.re), format!("{:e}", x.im)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a plan written by [`write_plan_csv`]; absent entries are zero.
pub fn read_plan_csv<R: Read>(input: R, n_beams: usize, n_users: usize, n_slots: usize) -> Result<PrecodingPlan> {
    let mut plan = PrecodingPlan::zeros(n_beams, n_users, n_slots);
    let mut r = csv::Reader::from_reader(input);
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Config("short plan row".into()));
        let idx = |i: usize| field(i)?.parse::<usize>().map_err(|_| Error::Config("bad plan index".into()));
        let val = |i: usize| field(i)?.parse::<f64>().map_err(|_| Error::Config("bad plan value".into()));
        let (t, n, m) = (idx(0)?, idx(1)?, idx(2)?);
        if t >= n_slots || n >= n_beams || m >= n_users {
            return Err(Error::Config(format!("plan entry ({t},{n},{m}) is outside the scenario")));
        }
        plan.slots[t][(n, m)] = Complex64::new(val(3)?, val(4)?);
    }
    Ok(plan)
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.seed.to_string(),
            r.pipeline.to_string(),
            r.kt.map_or_else(String::new, |k| k.to_string()),
            r.q1_mbits.to_string(),
            r.total_power_w.map_or_else(String::new, |p| format!("{p:.6}")),
            r.total_active_beams.map_or_else(String::new, |a| a.to_string()),
            r.feasible.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(RESULT_HEADER) {
        return Err(Error::Config("results file has unexpected columns".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let bad = |c: &str| Error::Config(format!("bad `{c}` in results row {:?}", rec.position().map(|p| p.line())));
            let get = |i: usize| rec.get(i).unwrap_or("");
            let opt = |i: usize| Some(get(i)).filter(|s| !s.is_empty());
            Ok(ResultRow {
                seed: get(0).parse().map_err(|_| bad("seed"))?,
                pipeline: get(1).parse()?,
                kt: opt(2).map(|s| s.parse().map_err(|_| bad("kt"))).transpose()?,
                q1_mbits: get(3).parse().map_err(|_| bad("q1_mbits"))?,
                total_power_w: opt(4).map(|s| s.parse().map_err(|_| bad("total_power_w"))).transpose()?,
                total_active_beams: opt(5).map(|s| s.parse().map_err(|_| bad("total_active_beams"))).transpose()?,
                feasible: get(6).parse().map_err(|_| bad("feasible"))?,
                wall_ms: get(7).parse().map_err(|_| bad("wall_ms"))?,
            })
        })
        .collect()
}

/// Runs every (sweep value, seed) pair, writes plans, traces and
/// `results.csv` under `spec.out_dir`, and returns the rows in input order.
pub fn run_experiment(base: &ScenarioConfig, spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    if spec.seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let configs = sweep_configs(base, spec.axis, &spec.values)?;
    for dir in ["plans", "traces"] {
        fs::create_dir_all(spec.out_dir.join(dir))?;
    }
    // A trained policy comes from the base scenario and is played unchanged
    // at every sweep value, so the sweep compares one policy across
    // operating points.
    let model: Option<Mlp> = match spec.pipeline {
        Pipeline::DnnRun => {
            let path = spec.model.as_ref().ok_or_else(|| Error::Config("dnn-run needs a model file".into()))?;
            Some(Mlp::load(path)?)
        }
        Pipeline::DnnTrain => {
            let (model, _, _) =
                train_policy(&base.scenario, &base.channel, &base.table, &base.solver.dnn, &base.solver.window.psp, spec.train_seed)?;
            let path = match &spec.model {
                Some(p) => p.clone(),
                None => {
                    fs::create_dir_all(spec.out_dir.join("models"))?;
                    spec.out_dir.join("models").join("policy.bin")
                }
            };
            model.save(path)?;
            Some(model)
        }
        _ => None,
    };
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| spec.seeds.iter().map(move |&s| (c, s))).collect();
    let rows: Vec<Result<ResultRow>> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cfg = &configs[c].1;
            let start = Instant::now();
            let outcome = run_pipeline(cfg, spec.pipeline, seed, model.as_ref());
            let wall_ms = if spec.timing { start.elapsed().as_millis() as u64 } else { 0 };
            let mut row = ResultRow {
                seed,
                pipeline: spec.pipeline,
                kt: uniform_budget(cfg),
                q1_mbits: cfg.scenario.demand_bits[0] / 1e6,
                total_power_w: None,
                total_active_beams: None,
                feasible: false,
                wall_ms,
            };
            let label = row.label();
            match outcome {
                Ok(sol) => {
                    row.total_power_w = Some(sol.power);
                    row.total_active_beams = Some(sol.total_active());
                    row.feasible = true;
                    let mut plan = Vec::new();
                    write_plan_csv(&sol.plan, &mut plan)?;
                    write_atomic(&spec.out_dir.join("plans").join(format!("{label}.csv")), &plan)?;
                    let mut trace = Vec::new();
                    sol.write_trace(&mut trace)?;
                    write_atomic(&spec.out_dir.join("traces").join(format!("{label}.csv")), &trace)?;
                }
                Err(e) if e.is_infeasible() => {}
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    write_results(&rows, &mut out)?;
    write_atomic(&spec.out_dir.join("results.csv"), &out)?;
    Ok(rows)
}

/// Result of re-checking one stored run.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub label: String,
    /// Feasibility recomputed from the stored plan.
    pub feasible: bool,
    /// Payload power recomputed from the stored plan, W.
    pub power: Option<f64>,
    /// Recomputed values match the row.
    pub agrees: bool,
}

/// Largest rate targets a plan's achieved SINRs support, within `rtol`.
pub fn supported_targets(
    plan: &PrecodingPlan,
    cfg: &ScenarioConfig,
    channel: &[CMat],
    rtol: f64,
) -> RateAssignment {
    let s = &cfg.scenario;
    let mut g = RateAssignment::zeros(s.n_users, s.n_slots);
    for t in 0..s.n_slots {
        for m in 0..s.n_users {
            if s.is_served(m, t) {
                let gamma = sinr_unchecked(&channel[t], &plan.slots[t], s.noise_power[m], m);
                g.g[(m, t)] = cfg.table.sinr_at(cfg.table.floor_index(gamma * (1.0 + rtol)));
            }
        }
    }
    g
}

/// Re-derives feasibility, power and beam count of every run in a results
/// file from its stored plan and the regenerated channel.
pub fn verify_results(base: &ScenarioConfig, results_path: &Path) -> Result<Vec<VerifyOutcome>> {
    const SINR_RTOL: f64 = 1e-6;
    let dir = results_path.parent().unwrap_or(Path::new("."));
    let rows = read_results(fs::File::open(results_path)?)?;
    rows.par_iter()
        .map(|row| {
            let mut cfg = base.with_demand(0, row.q1_mbits);
            if let Some(k) = row.kt {
                if uniform_budget(&cfg) != Some(k) {
                    cfg = cfg.with_slot_budget(k);
                }
            }
            let label = row.label();
            let path = dir.join("plans").join(format!("{label}.csv"));
            if !path.exists() {
                return Ok(VerifyOutcome { label, feasible: false, power: None, agrees: !row.feasible });
            }
            let s = &cfg.scenario;
            let plan = read_plan_csv(fs::File::open(&path)?, s.n_beams, s.n_users, s.n_slots)?;
            let h = generate_realization(s, &cfg.channel, row.seed)?.h;
            let g = supported_targets(&plan, &cfg, &h, SINR_RTOL);
            let feasible = check_feasibility(&plan, &g, s, &h, &cfg.table).is_feasible(SINR_RTOL);
            let power = payload_power(&plan, s.hw_power, s.activity_threshold);
            let active: usize = plan.active_counts(s.activity_threshold).iter().sum();
            let power_matches = row.total_power_w.is_some_and(|p| (p - power).abs() <= 1e-6 * power.max(1.0));
            let agrees = feasible == row.feasible && power_matches && row.total_active_beams == Some(active);
            Ok(VerifyOutcome { label, feasible, power: Some(power), agrees })
        })
        .collect()
}
