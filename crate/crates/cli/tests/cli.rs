use std::path::Path;
use std::process::{Command, Output};

fn beamhop(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamhop")).args(args).current_dir(dir).output().expect("binary runs")
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).expect("file exists")
}

#[test]
fn run_writes_one_row_per_seed_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamhop(&["run", "--pipeline", "heuristic", "--seeds", "1..3", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = read(dir.path().join("a/results.csv"));
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines[0], "seed,pipeline,kt,q1_mbits,total_power_w,total_active_beams,feasible,wall_ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.starts_with(char::is_numeric) && l.ends_with(",true,0")));
    assert!(read(dir.path().join("a/plans/heuristic_seed2_kt4_q1200.csv")).starts_with("t,n,m,re,im"));
    assert!(read(dir.path().join("a/traces/heuristic_seed2_kt4_q1200.csv")).starts_with("iter,user,demand_gap"));

    let verify = beamhop(&["verify", "a/results.csv"], dir.path());
    assert!(verify.status.success(), "{}", String::from_utf8_lossy(&verify.stderr));
}

#[test]
fn identical_invocations_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = beamhop(&["sweep", "--pipeline", "heuristic", "--axis", "q1", "--values", "150,250", "--seeds", "1,2", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = read(dir.path().join("a/results.csv"));
    assert_eq!(a, read(dir.path().join("b/results.csv")));
    assert_eq!(a.lines().count(), 1 + 2 * 2);
    let plan = "plans/heuristic_seed1_kt4_q1250.csv";
    assert_eq!(read(dir.path().join("a").join(plan)), read(dir.path().join("b").join(plan)));
}

#[test]
fn kt_sweep_rows_and_tampered_plans_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let o = beamhop(&["sweep", "--pipeline", "heuristic", "--axis", "kt", "--values", "4,5", "--seeds", "1", "--out", "s"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path().join("s/results.csv")).lines().count(), 3);

    // Halving every precoder entry breaks the SINR targets.
    let plan_path = dir.path().join("s/plans/heuristic_seed1_kt5_q1200.csv");
    let halved: String = read(&plan_path)
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return format!("{l}\n");
            }
            let f: Vec<&str> = l.split(',').collect();
            let re: f64 = f[3].parse().unwrap();
            let im: f64 = f[4].parse().unwrap();
            format!("{},{},{},{:e},{:e}\n", f[0], f[1], f[2], re * 0.5, im * 0.5)
        })
        .collect();
    std::fs::write(&plan_path, halved).unwrap();
    let verify = beamhop(&["verify", "s/results.csv"], dir.path());
    assert!(!verify.status.success());
    assert!(String::from_utf8_lossy(&verify.stderr).contains("heuristic_seed1_kt5_q1200"));
}

#[test]
fn fit_modcod_prints_the_surrogate() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamhop(&["fit-modcod"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let xi: f64 = text.lines().find_map(|l| l.strip_prefix("xi_fit = ")).unwrap().parse().unwrap();
    assert!((1.33..=1.62).contains(&xi));

    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    assert!(!beamhop(&["fit-modcod", "empty.csv"], dir.path()).status.success());
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--pipeline", "dnn-run", "--out", "x"][..],
        &["run", "--pipeline", "alg9"][..],
        &["sweep", "--pipeline", "heuristic", "--axis", "kt", "--values", "2.5"][..],
        &["run", "--pipeline", "heuristic", "--scenario", "missing.toml"][..],
    ] {
        let out = beamhop(args, dir.path());
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
