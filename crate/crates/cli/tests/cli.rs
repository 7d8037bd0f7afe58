use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use heavyfpca::heavytail_sim::sample_radius;
use heavyfpca_cli::panel::PricePanel;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_heavyfpca"));
    c.env_remove("HEAVYFPCA_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Log-price random walk with Pareto(3) magnitudes and alternating signs.
fn write_panel(path: &Path, days: usize, minutes: usize) {
    let steps = sample_radius(3.0, days * minutes, 4).unwrap();
    let labels = (0..minutes)
        .map(|m| format!("{:02}:{:02}", 9 + (30 + m) / 60, (30 + m) % 60))
        .collect();
    let prices = (0..days)
        .map(|d| {
            let mut lp = 3.0;
            (0..minutes)
                .map(|m| {
                    let sign = if (d + m) % 2 == 0 { 1.0 } else { -1.0 };
                    lp += sign * 1e-3 * (steps[d * minutes + m] - 1.0);
                    lp.exp()
                })
                .collect()
        })
        .collect();
    PricePanel::new(labels, prices)
        .unwrap()
        .write(fs::File::create(path).unwrap())
        .unwrap();
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let o = run(&["frobnicate", "-c", "x.toml", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = run(&[
        "--threads",
        "0",
        "simulate",
        "-c",
        s(&configs().join("simulate.toml")),
        "-o",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_config_is_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n = \"many\"\n[model]\ntype = \"reference\"\nalpha = 3.0\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "-c", s(&cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.exists());

    fs::write(&cfg, "n = 10\nwobble = 1\n[model]\ntype = \"reference\"\nalpha = 3.0\n").unwrap();
    assert_eq!(run(&["simulate", "-c", s(&cfg), "-o", s(&out)]).status.code(), Some(3));

    fs::write(&cfg, "n = 10\n[model]\ntype = \"reference\"\nalpha = 1.5\n").unwrap();
    assert_eq!(run(&["simulate", "-c", s(&cfg), "-o", s(&out)]).status.code(), Some(3));
}

#[test]
fn bad_panel_reports_location() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("prices.csv"), "09:30,09:31,09:32\n10,11,12\n10,-1,12\n").unwrap();
    let cfg = dir.path().join("hill.toml");
    fs::write(&cfg, "[input]\nprices = \"prices.csv\"\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["hill", "-c", s(&cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("row 3, column 2"), "{}", stderr(&o));
    assert!(!out.exists());

    fs::write(dir.path().join("prices.csv"), "09:30,09:31\n10,11\n10\n").unwrap();
    let o = run(&["hill", "-c", s(&cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn hill_on_price_panel() {
    let dir = TempDir::new().unwrap();
    write_panel(&dir.path().join("prices.csv"), 400, 30);
    let cfg = dir.path().join("hill.toml");
    fs::write(
        &cfg,
        "levels = 3\nk_grid = [10, 20, 40, 80]\n[input]\nprices = \"prices.csv\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["hill", "-c", s(&cfg), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for level in 1..=3 {
        let csv = fs::read_to_string(out.join(format!("hill_level_{level}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("k,alpha_hat"));
        assert_eq!(lines.count(), 4);
    }
    let report = json(&out.join("hill.json"));
    assert_eq!(report["command"], "hill");
    assert_eq!(report["config"]["levels"], 3);
}

#[test]
fn simulate_then_fpca() {
    let dir = TempDir::new().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&["simulate", "-c", s(&configs().join("simulate.toml")), "-o", s(&sim)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&sim.join("simulate.json"));
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["n"], 500);

    let cfg = dir.path().join("fpca.json");
    fs::write(&cfg, r#"{"input": {"curves": "sim/curves.csv"}, "components": 4}"#).unwrap();
    let out = dir.path().join("fpca");
    let o = run(&["fpca", "-c", s(&cfg), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 501);
    let eig = fs::read_to_string(out.join("eigenfunctions.csv")).unwrap();
    assert_eq!(eig.lines().count(), 5);
    let report = json(&out.join("fpca.json"));
    let lambda = report["report"]["eigenvalues"].as_array().unwrap();
    assert_eq!(lambda.len(), 4);
    assert!(lambda.windows(2).all(|w| w[0].as_f64() >= w[1].as_f64()));
}

#[test]
fn rate_check_passes_on_reference() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("rate");
    let o = run(&[
        "rate",
        "-c",
        s(&configs().join("rate_reference.toml")),
        "-o",
        s(&out),
        "--check",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.lines().all(|l| l.starts_with("PASS")) && stdout.lines().count() == 3,
        "{stdout}"
    );
    let report = json(&out.join("rate.json"));
    assert_eq!(report["seed"], 1);
    assert_eq!(report["passed"], true);
    assert_eq!(report["config"]["model"]["type"], "reference");
    assert!(report["report"]["control"].is_object());
    assert!(fs::read_to_string(out.join("rate_series.csv"))
        .unwrap()
        .starts_with("run,metric,level,n,mean_error"));
}

#[test]
fn impossible_window_is_acceptance_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("rate.toml");
    fs::write(
        &cfg,
        "grid_points = 32\nn_grid = [100, 200, 400]\nreplicates = 20\nslope_window = 1e-9\n[model]\ntype = \"reference\"\nalpha = 3.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["rate", "-c", s(&cfg), "-o", s(&out), "--check"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(out.join("rate.json").exists());
    assert_eq!(json(&out.join("rate.json"))["passed"], false);
    let o = run(&["rate", "-c", s(&cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("flr.toml");
    fs::write(
        &cfg,
        "grid_points = 48\nn_grid = [1000, 2000]\nreplicates = 12\n\
         psi = [{ from = 1, to = 2 }]\n[x_model]\ntype = \"kl-scores\"\nalpha = 3.0\ntau = [1.0, 0.5, 0.3]\n",
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = run(&["--threads", "1", "flr", "-c", s(&cfg), "-o", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .env("HEAVYFPCA_THREADS", "4")
        .args(["flr", "-c", s(&cfg), "-o", s(&b)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["flr.json", "flr.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let rate = dir.path().join("rate.toml");
    fs::write(
        &rate,
        "grid_points = 32\nn_grid = [100, 200]\nreplicates = 16\n[model]\ntype = \"reference\"\nalpha = 3.0\n",
    )
    .unwrap();
    let o = run(&["--threads", "1", "rate", "-c", s(&rate), "-o", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["--threads", "3", "rate", "-c", s(&rate), "-o", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("rate.json")).unwrap(),
        fs::read(b.join("rate.json")).unwrap()
    );
}

#[test]
fn stable_limit_probe_from_config() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("stable.toml");
    fs::write(
        &cfg,
        "grid_points = 32\nn = 500\nreplicates = 400\n\
         probes = [{ left = [1.0, 0.0], right = [1.0, 0.0] }, { left = [0.0, 1.0], right = [0.0, 1.0] }]\n\
         [model]\ntype = \"polar\"\nalpha = 3.0\natoms = [[1.0, 0.0]]\nweights = [1.0]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["stable-limit", "-c", s(&cfg), "-o", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out.join("stable.json"));
    let probes = report["report"]["probes"].as_array().unwrap();
    assert_eq!(probes.len(), 2);
    assert_eq!(probes[0]["degenerate"], false);
    assert_eq!(probes[1]["degenerate"], true);
    assert_eq!(
        fs::read_to_string(out.join("stable_probes.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn panel_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("p.csv");
    write_panel(&path, 5, 7);
    let a = PricePanel::read(fs::File::open(&path).unwrap()).unwrap();
    let copy = dir.path().join("q.csv");
    a.write(fs::File::create(&copy).unwrap()).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());
    assert_eq!((a.days(), a.minutes()), (5, 7));
}
