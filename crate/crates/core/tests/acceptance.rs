//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::{LN_2, PI};
use std::time::Instant;

use beamhop::channel::generate_realization;
use beamhop::config::ScenarioConfig;
use beamhop::experiment::{run_experiment, ExperimentSpec, Pipeline, SweepAxis};
use beamhop::modcod::{fit_xi, ModcodTable};
use beamhop::model::{beam_power, sinr_all, CMat, PrecodingPlan};
use beamhop::per_slot::{inner_power_min, solve_psp, PspInstance, PspSettings};
use beamhop::policies::{run_dnn_pipeline, run_heuristic_pipeline, train_policy, DnnConfig, Mlp};
use beamhop::window_opt::run_window;
use beamhop::wmmse::{
    clamp_term, delta_star, mse_e, omega_star, solve_qcqp_slot, tighten, update_auxiliaries, OmegaForm, QcqpInputs,
    QcqpSettings,
};
use beamhop::Complex64;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_cmat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CMat {
    CMat::from_fn(n, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn modcod_fit() -> Outcome {
    let start = Instant::now();
    let fit = fit_xi(&ModcodTable::shipped()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        (1.33..=1.62).contains(&fit.xi) && (0.05..=0.09).contains(&fit.rmse) && secs < 1.0,
        format!("xi={:.4} rmse={:.5} in {secs:.3}s", fit.xi, fit.rmse),
    )
}

fn wmmse_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_product, mut worst_rate) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..6);
        let m = rng.random_range(1..5);
        let h = random_cmat(&mut rng, n, m);
        let w = random_cmat(&mut rng, n, m);
        let noise = rng.random_range(0.01..2.0);
        let xi = rng.random_range(1.0..2.0);
        let u = rng.random_range(0..m);
        let gamma = sinr_all(&h, &w, &vec![noise; m]).map_err(|e| e.to_string())?[u];
        let d = delta_star(&h, &w, noise, xi, u).map_err(|e| e.to_string())?;
        let e = mse_e(&h, &w, d, noise, xi, u);
        let om = omega_star(gamma, xi);
        worst_product = worst_product.max((om * e - 1.0).abs());
        worst_rate = worst_rate.max((clamp_term(om, e) + (1.0 + gamma / xi).log2()).abs());
    }
    check(
        worst_product <= 1e-10 && worst_rate <= 1e-9,
        format!("max |w*e*-1|={worst_product:.2e}, max rate residual={worst_rate:.2e} over 1000 instances"),
    )
}

fn tightening() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_slack, mut worst_increase) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..200 {
        let n = rng.random_range(2..6);
        let m = rng.random_range(1..4);
        let h = random_cmat(&mut rng, n, m);
        let w = random_cmat(&mut rng, n, m);
        let noise: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let gamma = sinr_all(&h, &w, &noise).map_err(|e| e.to_string())?;
        let g: Vec<f64> = gamma.iter().map(|x| x * rng.random_range(0.2..1.0)).collect();
        let t = tighten(&w, &g, &h, &noise).map_err(|e| e.to_string())?;
        let after = sinr_all(&h, &t, &noise).map_err(|e| e.to_string())?;
        for u in 0..m {
            worst_slack = worst_slack.max(((after[u] - g[u]) / g[u]).abs());
        }
        let power = |x: &CMat| (0..n).map(|r| beam_power(x, r)).sum::<f64>();
        worst_increase = worst_increase.max(power(&t) - power(&w));
    }
    check(
        worst_slack <= 1e-6 && worst_increase <= 0.0,
        format!("max relative slack={worst_slack:.2e}, max power change={worst_increase:.3e} W over 200 instances"),
    )
}

/// Subproblem objective for one user and one beam, written out directly.
fn scalar_objective(h: Complex64, w: Complex64, noise: f64, beta: f64, mu: f64, delta: Complex64, omega: f64, xi: f64, r_max: f64) -> f64 {
    let a = h.conj() * w;
    let theta = a.norm_sqr() / xi + noise;
    let e = 1.0 - 2.0 / xi.sqrt() * (delta * a).re + delta.norm_sqr() * theta;
    let k = (omega * e - omega.ln() - 1.0) / LN_2;
    beta * w.norm_sqr() + mu * k.max(-r_max)
}

/// Real channel and receiver scalar, so the optimum lies on the non-negative
/// real axis and a 1-D grid over [0, √cap] covers it.
fn qcqp_oracle() -> Outcome {
    let table = ModcodTable::shipped();
    let fit = table.fit().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let h = CMat::from_element(1, 1, c(rng.random_range(0.3..2.0), 0.0));
        let noise = [rng.random_range(0.05..1.0)];
        let beta = [rng.random_range(1.0..3.0)];
        let mu = [rng.random_range(0.2..5.0)];
        let cap = [rng.random_range(0.5..5.0)];
        let psi = [1.0 / cap[0]];
        let budget = if rng.random_bool(0.5) { f64::INFINITY } else { rng.random_range(0.2..1.0) };
        let w0 = CMat::from_element(1, 1, c(rng.random_range(0.1..1.5), 0.0));
        let (delta, omega) = update_auxiliaries(&h, &w0, &noise, fit.xi, OmegaForm::InverseMse);
        let inputs = QcqpInputs {
            h: &h,
            noise: &noise,
            beta: &beta,
            mu: &mu,
            psi: &psi,
            max_beam_power: &cap,
            activity_budget: budget,
            fit,
            served: &[true],
        };
        let (w, _) = solve_qcqp_slot(&inputs, &delta, &omega, &QcqpSettings::default()).map_err(|e| e.to_string())?;
        let f = |x: Complex64| scalar_objective(h[(0, 0)], x, noise[0], beta[0], mu[0], delta[0], omega[0], fit.xi, fit.r_max);
        let radius = cap[0].min(budget / psi[0]).sqrt();
        let grid = (0..10_000).map(|i| f(c(radius * i as f64 / 9999.0, 0.0))).fold(f64::INFINITY, f64::min);
        worst = worst.max((f(w[(0, 0)]) - grid).abs() / grid.abs());
    }
    check(worst <= 0.02, format!("max relative gap to a 10^4-point real grid={worst:.2e} over 100 instances"))
}

/// Smallest weighted power of a real 2-beam, 2-user slot over a grid of
/// precoding directions; the user powers for each direction pair solve the
/// SINR equalities.
fn psp_grid(h: &DMatrix<f64>, noise: &[f64], g: &[f64], cap: &[f64], q: &[f64], psi: &[f64], budget: f64) -> Option<f64> {
    const STEPS: usize = 400;
    let mut best: Option<f64> = None;
    for i in 0..STEPS {
        let t1 = PI * i as f64 / STEPS as f64;
        let u1 = [t1.cos(), t1.sin()];
        for j in 0..STEPS {
            let t2 = PI * j as f64 / STEPS as f64;
            let u2 = [t2.cos(), t2.sin()];
            let gain = |user: usize, u: &[f64; 2]| (h[(0, user)] * u[0] + h[(1, user)] * u[1]).powi(2);
            let (a11, a12, a21, a22) = (gain(0, &u1), gain(0, &u2), gain(1, &u1), gain(1, &u2));
            let (m11, m12, m21, m22) = (a11, -g[0] * a12, -g[1] * a21, a22);
            let det = m11 * m22 - m12 * m21;
            if det <= 0.0 {
                continue;
            }
            let (b1, b2) = (g[0] * noise[0], g[1] * noise[1]);
            let p1 = (m22 * b1 - m12 * b2) / det;
            let p2 = (m11 * b2 - m21 * b1) / det;
            if p1 < 0.0 || p2 < 0.0 {
                continue;
            }
            let beams = [p1 * u1[0] * u1[0] + p2 * u2[0] * u2[0], p1 * u1[1] * u1[1] + p2 * u2[1] * u2[1]];
            if beams[0] > cap[0] || beams[1] > cap[1] || psi[0] * beams[0] + psi[1] * beams[1] > budget {
                continue;
            }
            let value = q[0] * beams[0] + q[1] * beams[1];
            if best.is_none_or(|b| value < b) {
                best = Some(value);
            }
        }
    }
    best
}

fn psp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = PspSettings::default();
    let (mut worst, mut compared) = (0.0f64, 0);
    while compared < 100 {
        let hr = DMatrix::from_fn(2, 2, |r, u| if r == u { rng.random_range(0.8..1.5) } else { rng.random_range(-0.6..0.6) });
        let h = hr.map(|x| c(x, 0.0));
        let noise = [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)];
        let g = [rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)];
        let cap = [rng.random_range(1.0..6.0), rng.random_range(1.0..6.0)];
        let psi = [1.0 / cap[0], 1.0 / cap[1]];
        let hw = 5.0;
        let q = [1.0 + hw * psi[0], 1.0 + hw * psi[1]];
        let budget = 2usize;
        let Some(grid) = psp_grid(&hr, &noise, &g, &cap, &q, &psi, budget as f64) else {
            continue;
        };
        compared += 1;
        let inst = PspInstance {
            h: &h,
            g: &g,
            noise: &noise,
            max_beam_power: &cap,
            slot_budget: budget,
            hw_power: hw,
            psi: &psi,
            activity_threshold: 1e-9,
        };
        let w = inner_power_min(&inst, &settings).map_err(|e| format!("grid-feasible instance rejected: {e}"))?;
        let value: f64 = (0..2).map(|r| q[r] * beam_power(&w, r)).sum();
        worst = worst.max((value - grid).abs() / grid);
    }
    let mut picks = 0;
    for _ in 0..100 {
        let h = CMat::from_fn(4, 2, |_, _| Complex64::from_polar(rng.random_range(0.2..1.5), rng.random_range(0.0..2.0 * PI)));
        let g = [rng.random_range(0.5..3.0), 0.0];
        let inst = PspInstance {
            h: &h,
            g: &g,
            noise: &[1.0, 1.0],
            max_beam_power: &[1e3; 4],
            slot_budget: 1,
            hw_power: 5.0,
            psi: &[1e-3; 4],
            activity_threshold: 1e-9,
        };
        let sol = solve_psp(&inst, &PspSettings::default()).map_err(|e| e.to_string())?;
        let strongest = (0..4).max_by(|&a, &b| h[(a, 0)].norm().total_cmp(&h[(b, 0)].norm())).unwrap();
        let active: Vec<usize> = (0..4).filter(|&r| sol.active[r]).collect();
        if active == [strongest] {
            picks += 1;
        }
    }
    check(
        worst <= 0.02 && picks == 100,
        format!("max relative gap to the direction grid={worst:.2e} over 100 instances; strongest beam chosen {picks}/100"),
    )
}

fn window_convergence(cfg: &ScenarioConfig) -> Outcome {
    let h = generate_realization(&cfg.scenario, &cfg.channel, 1).map_err(|e| e.to_string())?.h;
    let start = Instant::now();
    let sol = run_window(&cfg.scenario, &h, &cfg.table, &cfg.solver.window).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let m = cfg.scenario.n_users;
    let first: Vec<_> = sol.trace.iter().filter(|r| r.outer == 0).collect();
    let reached = first
        .chunks(m)
        .position(|rows| rows.iter().all(|r| r.demand_gap.abs() <= 1e-3))
        .map(|i| i + 1);
    check(
        reached.is_some_and(|i| i <= 200) && secs < 600.0,
        format!(
            "gaps within 1e-3 after {} inner iterations, {} in total, run took {secs:.1}s",
            reached.map_or_else(|| "never".to_string(), |i| i.to_string()),
            sol.inner_iterations
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = Mlp::new(&[6, 8, 5, 1], 0.0, &mut rng).map_err(|e| e.to_string())?;
    let params: Vec<f64> = net.params().iter().map(|_| rng.random_range(-0.8..0.8)).collect();
    net.set_params(&params);
    let x = DMatrix::from_fn(6, 5, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, grad) = net.loss_and_gradient(&x, &y, None);
    let analytic: Vec<f64> =
        grad.weights.iter().zip(&grad.biases).flat_map(|(w, b)| w.transpose().iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect();
    let step = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += step;
        net.set_params(&p);
        let up = net.loss_and_gradient(&x, &y, None).0;
        p[k] -= 2.0 * step;
        net.set_params(&p);
        let down = net.loss_and_gradient(&x, &y, None).0;
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    check(worst <= 1e-4, format!("max relative error={worst:.2e} over {} parameters", params.len()))
}

/// Count and size of order violations in a sequence that should be
/// non-increasing (`sign = 1`) or non-decreasing (`sign = -1`).
fn inversions(means: &[f64], sign: f64) -> (usize, f64) {
    let mut count = 0;
    let mut worst = 0.0f64;
    for w in means.windows(2) {
        let rise = sign * (w[1] - w[0]) / w[0];
        if rise > 1e-9 {
            count += 1;
            worst = worst.max(rise);
        }
    }
    (count, worst)
}

struct Point {
    label: String,
    budget: usize,
    /// Powers per pipeline (window, dnn, heuristic), one per seed.
    powers: [Vec<f64>; 3],
    failures: Vec<String>,
    cap_violations: Vec<String>,
}

impl Point {
    fn mean(&self, p: usize) -> Option<f64> {
        let v = &self.powers[p];
        (self.failures.is_empty() && !v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

const PIPELINES: [&str; 3] = ["window", "dnn", "heuristic"];

fn hard_caps(plan: &PrecodingPlan, cfg: &ScenarioConfig) -> Option<String> {
    let s = &cfg.scenario;
    for (t, w) in plan.slots.iter().enumerate() {
        let active = (0..s.n_beams).filter(|&n| beam_power(w, n) > s.activity_threshold).count();
        if active > s.slot_budget[t] {
            return Some(format!("slot {t} lights {active} beams"));
        }
        if let Some(n) = (0..s.n_beams).find(|&n| beam_power(w, n) > s.max_beam_power[n]) {
            return Some(format!("beam {n} over its cap in slot {t}"));
        }
    }
    None
}

fn evaluate_point(label: String, cfg: &ScenarioConfig, model: &Mlp, dnn: &DnnConfig, seeds: &[u64]) -> Point {
    let mut point = Point {
        label,
        budget: cfg.scenario.slot_budget[0],
        powers: Default::default(),
        failures: Vec::new(),
        cap_violations: Vec::new(),
    };
    let s = &cfg.scenario;
    for &seed in seeds {
        let h = match generate_realization(s, &cfg.channel, seed) {
            Ok(r) => r.h,
            Err(e) => {
                point.failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let w = &cfg.solver.window;
        let runs = [
            run_window(s, &h, &cfg.table, w),
            run_dnn_pipeline(s, &h, &cfg.table, model, dnn, w, seed),
            run_heuristic_pipeline(s, &h, &cfg.table, w),
        ];
        for (p, run) in runs.into_iter().enumerate() {
            match run {
                Ok(sol) => {
                    if let Some(v) = hard_caps(&sol.plan, cfg) {
                        point.cap_violations.push(format!("{} seed {seed}: {v}", PIPELINES[p]));
                    }
                    point.powers[p].push(sol.power);
                }
                Err(e) => point.failures.push(format!("{} seed {seed}: {e}", PIPELINES[p])),
            }
        }
    }
    point
}

fn trends(kt: &[Point], q1: &[Point]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, points, sign) in [("K_t", kt, 1.0), ("Q1", q1, -1.0)] {
        for (p, pipeline) in PIPELINES.iter().enumerate() {
            let means: Option<Vec<f64>> = points.iter().map(|pt| pt.mean(p)).collect();
            match means {
                Some(means) => {
                    let (count, worst) = inversions(&means, sign);
                    ok &= count == 0 || (count == 1 && worst <= 0.02);
                    let text: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
                    parts.push(format!("{name} {pipeline} [{}] inversions={count}", text.join(", ")));
                }
                None => {
                    ok = false;
                    let failed: Vec<&String> = points.iter().flat_map(|pt| &pt.failures).collect();
                    parts.push(format!("{name} {pipeline}: incomplete ({} failures, first: {:?})", failed.len(), failed.first()));
                }
            }
        }
    }
    check(ok, parts.join("; "))
}

fn ordering(point: &Point) -> Outcome {
    let means: Option<Vec<f64>> = (0..3).map(|p| point.mean(p)).collect();
    let Some(m) = means else {
        return Err(format!("runs failed at {}: {:?}", point.label, point.failures));
    };
    let gain = 1.0 - m[0] / m[2];
    check(
        m[0] <= m[1] && m[1] <= m[2] && gain >= 0.05,
        format!(
            "K_t={}: window {:.1} W, dnn {:.1} W, heuristic {:.1} W; window saves {:.1}%",
            point.budget,
            m[0],
            m[1],
            m[2],
            100.0 * gain
        ),
    )
}

fn cap_compliance(points: &[&Point]) -> Outcome {
    let plans: usize = points.iter().map(|p| p.powers.iter().map(Vec::len).sum::<usize>()).sum();
    let violations: Vec<&String> = points.iter().flat_map(|p| &p.cap_violations).collect();
    check(
        violations.is_empty() && plans > 0,
        format!("{plans} plans checked, {} violations{}", violations.len(), violations.first().map_or(String::new(), |v| format!(" (first: {v})"))),
    )
}

fn determinism(cfg: &ScenarioConfig) -> Outcome {
    let mut files = Vec::new();
    for pipeline in [Pipeline::Heuristic, Pipeline::Window, Pipeline::DnnTrain] {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let spec = ExperimentSpec {
                seeds: vec![1, 2],
                pipeline,
                axis: SweepAxis::Kt,
                values: vec![4.0, 5.0],
                out_dir: dir.path().to_path_buf(),
                model: None,
                train_seed: 0,
                timing: false,
            };
            run_experiment(cfg, &spec).map_err(|e| e.to_string())?;
            let mut contents = Vec::new();
            for sub in ["", "plans", "traces", "models"] {
                let Ok(entries) = std::fs::read_dir(dir.path().join(sub)) else { continue };
                let mut paths: Vec<_> = entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect();
                paths.sort();
                for p in paths {
                    let name = p.strip_prefix(dir.path()).unwrap().to_path_buf();
                    contents.push((name, std::fs::read(&p).map_err(|e| e.to_string())?));
                }
            }
            outputs.push(contents);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{pipeline} outputs differ between identical runs"));
        }
        files.push(outputs[0].len());
    }
    check(true, format!("heuristic, window and dnn-train runs reproduced byte for byte ({} files)", files.iter().sum::<usize>()))
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut report = |id: u8, name: &'static str, outcome: Outcome| {
        match &outcome {
            Ok(d) => println!("PASS {id:>2} {name}: {d}"),
            Err(d) => println!("FAIL {id:>2} {name}: {d}"),
        }
        results.push((id, name, outcome));
    };
    let sample = ScenarioConfig::sample();
    report(1, "MODCOD fit", modcod_fit());
    report(2, "WMMSE identities", wmmse_identities());
    report(3, "tightening", tightening());
    report(4, "subproblem oracle", qcqp_oracle());
    report(5, "slot problem oracle", psp_oracle());
    report(6, "window convergence", window_convergence(&sample));
    report(9, "gradient check", gradient_check());

    let seeds: Vec<u64> = (1..=10).collect();
    // Four users with separate main beams cannot all be served at the full
    // demands with two or three beams, so the budget sweep uses a tenth of
    // each demand.
    let light = (0..sample.scenario.n_users)
        .fold(sample.clone(), |cfg, m| cfg.with_demand(m, sample.scenario.demand_bits[m] / 1e6 * 0.1));
    // One policy per sweep, trained on the sweep's base scenario and played
    // at every sweep value, as `dnn-train` does.
    let dnn = &sample.solver.dnn;
    let train = |cfg: &ScenarioConfig| train_policy(&cfg.scenario, &cfg.channel, &cfg.table, dnn, &cfg.solver.window.psp, 0);
    let (kt_points, q1_points) = match (train(&light), train(&sample)) {
        (Ok((light_model, _, _)), Ok((full_model, _, _))) => (
            (2..=6)
                .map(|k| evaluate_point(format!("K_t={k}"), &light.with_slot_budget(k), &light_model, dnn, &seeds))
                .collect::<Vec<_>>(),
            [100.0, 200.0, 300.0, 400.0]
                .iter()
                .map(|&q| evaluate_point(format!("Q1={q}"), &sample.with_demand(0, q), &full_model, dnn, &seeds))
                .collect::<Vec<_>>(),
        ),
        (a, b) => {
            let e = a.err().or(b.err()).expect("one training failed");
            for (id, name) in [(7, "monotonic trends"), (8, "pipeline ordering"), (10, "hard-cap compliance")] {
                report(id, name, Err(format!("policy training failed: {e}")));
            }
            (Vec::new(), Vec::new())
        }
    };
    if !q1_points.is_empty() {
        report(7, "monotonic trends", trends(&kt_points, &q1_points));
        report(8, "pipeline ordering", ordering(&q1_points[1]));
        let all: Vec<&Point> = kt_points.iter().chain(&q1_points).collect();
        report(10, "hard-cap compliance", cap_compliance(&all));
    }
    // Reproducibility does not depend on policy quality; a small training
    // set keeps this check quick.
    let small = DnnConfig { training_realizations: 4, candidates: 8, epochs: 20, ..dnn.clone() };
    let det_cfg = ScenarioConfig { solver: beamhop::config::SolverConfig { dnn: small, ..sample.solver.clone() }, ..sample.clone() };
    report(11, "determinism", determinism(&det_cfg));

    results.sort_by_key(|r| r.0);
    let failed: Vec<u8> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
