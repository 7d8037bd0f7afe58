//! Subcommand pipelines. Each loads its config, runs, and writes a JSON
//! report (with the resolved config embedded) plus plot-ready CSV files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use heavyfpca::flr::{flr_consistency_experiment, FlrExperimentConfig, FlrModel, FlrReport, Trend};
use heavyfpca::fpca::fpca;
use heavyfpca::heavytail_sim::{sample_curves, ScoreLaw};
use heavyfpca::io::{create, read_sample_file, write_csv, write_hill_curve, write_json, write_sample};
use heavyfpca::rate_harness::{run_cov_rate, run_eigen_rate, run_stable_limit, ExperimentConfig, RateReport};
use heavyfpca::tail_diag::{default_k_grid, score_tail_report};
use heavyfpca::{CurveSample, Grid, HsOperator};

use crate::config::{
    self, combination, FlrConfig, FpcaConfig, HillConfig, InputSpec, ModelSpec, RateConfig, SimulateConfig,
    StableConfig,
};
use crate::panel::{returns_from_prices, PricePanel};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fpca,
    Hill,
    Simulate,
    Rate,
    StableLimit,
    Flr,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fpca => "fpca",
            Command::Hill => "hill",
            Command::Simulate => "simulate",
            Command::Rate => "rate",
            Command::StableLimit => "stable-limit",
            Command::Flr => "flr",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    command: &'a str,
    seed: Option<u64>,
    config: &'a C,
    passed: bool,
    checks: &'a [Check],
    report: &'a R,
}

/// Loads the config, runs the pipeline and writes into `out`. With `check`,
/// a failed acceptance check becomes [`CliError::Acceptance`] after all
/// outputs are written.
pub fn dispatch(cmd: Command, config_path: &Path, out: &Path, check: bool) -> Result<Vec<Check>, CliError> {
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let checks = match cmd {
        Command::Fpca => run_fpca(&config::load(config_path)?, &base, out)?,
        Command::Hill => run_hill(&config::load(config_path)?, &base, out)?,
        Command::Simulate => run_simulate(&config::load(config_path)?, out)?,
        Command::Rate => run_rate(&config::load(config_path)?, out)?,
        Command::StableLimit => run_stable(&config::load(config_path)?, out)?,
        Command::Flr => run_flr(&config::load(config_path)?, out)?,
    };
    if check {
        let failed = checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect::<Vec<_>>();
        if !failed.is_empty() {
            return Err(CliError::Acceptance(failed.join(", ")));
        }
    }
    Ok(checks)
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))
}

fn emit<C: Serialize, R: Serialize>(
    out: &Path,
    file: &str,
    cmd: Command,
    seed: Option<u64>,
    config: &C,
    checks: &[Check],
    report: &R,
) -> Result<(), CliError> {
    let env = Envelope {
        command: cmd.name(),
        seed,
        config,
        passed: checks.iter().all(|c| c.passed),
        checks,
        report,
    };
    let mut w = create(out.join(file))?;
    write_json(&mut w, &env)?;
    w.flush()?;
    Ok(())
}

fn write_table(out: &Path, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = create(out.join(file))?;
    write_csv(&mut w, header, rows)?;
    w.flush()?;
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_input(input: &InputSpec, base: &Path) -> Result<CurveSample, CliError> {
    match (&input.curves, &input.prices) {
        (Some(c), None) => {
            read_sample_file(resolve(base, c)).map_err(|e| CliError::Data(format!("{}: {e}", c.display())))
        }
        (None, Some(p)) => {
            let path = resolve(base, p);
            let f = std::fs::File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let panel = PricePanel::read(std::io::BufReader::new(f))
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            returns_from_prices(&panel)
        }
        _ => Err(CliError::Config(
            "input needs exactly one of `curves` or `prices`".into(),
        )),
    }
}

fn grid(points: usize) -> Result<Arc<Grid>, CliError> {
    Grid::uniform(points).map_err(|e| CliError::Config(e.to_string()))
}

fn model(spec: &ModelSpec, g: &Arc<Grid>) -> Result<heavyfpca::heavytail_sim::RvCurveModel, CliError> {
    spec.build(g).map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Serialize)]
struct FpcaSummary {
    n: usize,
    grid_points: usize,
    eigenvalues: Vec<f64>,
    /// `λ̂_j / tr Ĉ`.
    explained: Vec<f64>,
}

fn run_fpca(cfg: &FpcaConfig, base: &Path, out: &Path) -> Result<Vec<Check>, CliError> {
    let sample = load_input(&cfg.input, base)?;
    let res = fpca(&sample, cfg.components, cfg.subtract_mean)?;
    let mean = res.mean.clone();
    let trace = sample
        .curves()
        .map(|c| match &mean {
            Some(m) => c.sub(m).map(|d| d.l2_norm().powi(2)),
            None => Ok(c.l2_norm().powi(2)),
        })
        .sum::<heavyfpca::Result<f64>>()?
        / sample.len() as f64;
    let summary = FpcaSummary {
        n: sample.len(),
        grid_points: sample.grid().len(),
        explained: res
            .eigenvalues
            .iter()
            .map(|l| if trace > 0.0 { l / trace } else { 0.0 })
            .collect(),
        eigenvalues: res.eigenvalues.clone(),
    };
    prepare_out(out)?;
    let mut w = create(out.join("eigenfunctions.csv"))?;
    write_sample(&mut w, &CurveSample::from_curves(&res.eigenfunctions)?)?;
    w.flush()?;
    let header = (1..=cfg.components).map(|j| format!("score_{j}")).collect::<Vec<_>>();
    let header = header.iter().map(String::as_str).collect::<Vec<_>>();
    let rows = res
        .scores
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v}")).collect())
        .collect::<Vec<_>>();
    write_table(out, "scores.csv", &header, &rows)?;
    emit(out, "fpca.json", Command::Fpca, None, cfg, &[], &summary)?;
    Ok(Vec::new())
}

fn run_hill(cfg: &HillConfig, base: &Path, out: &Path) -> Result<Vec<Check>, CliError> {
    let sample = load_input(&cfg.input, base)?;
    let k_grid = cfg.k_grid.clone().unwrap_or_else(|| default_k_grid(sample.len()));
    let report = score_tail_report(&sample, cfg.levels, &k_grid, cfg.subtract_mean)?;
    let checks = report
        .levels
        .iter()
        .map(|l| {
            Check::new(
                &format!("level-{}-heavy", l.level),
                l.plateau.is_some() && l.in_two_four,
                format!("median alpha {:?}, plateau {:?}", l.median_alpha, l.plateau),
            )
        })
        .collect::<Vec<_>>();
    prepare_out(out)?;
    for l in &report.levels {
        let mut w = create(out.join(format!("hill_level_{}.csv", l.level)))?;
        write_hill_curve(&mut w, &l.curve)?;
        w.flush()?;
    }
    emit(out, "hill.json", Command::Hill, None, cfg, &checks, &report)?;
    Ok(checks)
}

#[derive(Serialize)]
struct SimulateSummary {
    n: usize,
    grid_points: usize,
    mean_sq_norm: f64,
    max_norm: f64,
}

fn run_simulate(cfg: &SimulateConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let g = grid(cfg.grid_points)?;
    let m = model(&cfg.model, &g)?;
    if cfg.n == 0 {
        return Err(CliError::Config("n must be positive".into()));
    }
    let sample = sample_curves(&m, cfg.n, &g, cfg.seed)?;
    let norms = sample.l2_norms();
    let summary = SimulateSummary {
        n: cfg.n,
        grid_points: cfg.grid_points,
        mean_sq_norm: norms.iter().map(|x| x * x).sum::<f64>() / cfg.n as f64,
        max_norm: norms.iter().copied().fold(0.0, f64::max),
    };
    prepare_out(out)?;
    let mut w = create(out.join("curves.csv"))?;
    write_sample(&mut w, &sample)?;
    w.flush()?;
    emit(
        out,
        "simulate.json",
        Command::Simulate,
        Some(cfg.seed),
        cfg,
        &[],
        &summary,
    )?;
    Ok(Vec::new())
}

fn experiment(cfg: &RateConfig, spec: &ModelSpec, window: f64) -> Result<ExperimentConfig, CliError> {
    let g = grid(cfg.grid_points)?;
    let mut e = ExperimentConfig::new(model(spec, &g)?, cfg.n_grid.clone(), cfg.replicates, cfg.seed);
    e.gamma = cfg.gamma;
    e.backend = cfg.backend;
    e.slope_window = window;
    Ok(e)
}

fn run_rate_once(cfg: &RateConfig, e: &ExperimentConfig) -> Result<RateReport, CliError> {
    let r = if cfg.levels.is_empty() {
        run_cov_rate(e)
    } else {
        run_eigen_rate(e, &cfg.levels)
    };
    r.map_err(|err| match err {
        heavyfpca::Error::Domain(_) | heavyfpca::Error::InvalidModel(_) => CliError::Config(err.to_string()),
        other => CliError::Data(other.to_string()),
    })
}

#[derive(Serialize)]
struct RateOutput {
    main: RateReport,
    control: Option<RateReport>,
}

fn cov_slope(r: &RateReport) -> Option<f64> {
    r.series.iter().find(|s| s.metric == "cov_hs").map(|s| s.slope)
}

fn run_rate(cfg: &RateConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let e = experiment(cfg, &cfg.model, cfg.slope_window)?;
    let control_spec = if cfg.control {
        Some(
            cfg.model
                .gaussian_control()
                .ok_or_else(|| CliError::Config("a Gaussian control needs a kl-scores or reference model".into()))?,
        )
    } else {
        None
    };
    let main = run_rate_once(cfg, &e)?;
    let mut checks = main
        .series
        .iter()
        .filter(|s| s.metric != "cov_hs" || cfg.levels.is_empty())
        .map(|s| {
            Check::new(
                &format!(
                    "{}{}-slope",
                    s.metric,
                    s.level.map(|l| format!("-{l}")).unwrap_or_default()
                ),
                s.pass,
                format!("slope {:.4} vs {:.4} ± {}", s.slope, s.theoretical_slope, s.window),
            )
        })
        .collect::<Vec<_>>();
    if let Some(p) = &main.perturbation {
        checks.push(Check::new(
            "perturbation-inequalities",
            p.violations == 0,
            format!("{} violations in {} checks", p.violations, p.checks),
        ));
    }
    let control = match control_spec {
        Some(spec) => {
            let ce = experiment(cfg, &spec, cfg.control_window)?;
            let c = run_rate_once(cfg, &ce)?;
            for s in c
                .series
                .iter()
                .filter(|s| s.metric != "cov_hs" || cfg.levels.is_empty())
            {
                checks.push(Check::new(
                    &format!("control-{}-slope", s.metric),
                    s.pass,
                    format!("slope {:.4} vs {:.4} ± {}", s.slope, s.theoretical_slope, s.window),
                ));
            }
            if let (Some(h), Some(l)) = (cov_slope(&main), cov_slope(&c)) {
                checks.push(Check::new(
                    "heavy-slower-than-control",
                    h > l,
                    format!("heavy {h:.4} vs control {l:.4}"),
                ));
            }
            Some(c)
        }
        None => None,
    };
    prepare_out(out)?;
    let mut rows = Vec::new();
    for (run, r) in [("main", Some(&main)), ("control", control.as_ref())] {
        let Some(r) = r else { continue };
        for s in &r.series {
            for (n, m) in s.n.iter().zip(&s.mean_error) {
                rows.push(vec![
                    run.to_string(),
                    s.metric.clone(),
                    s.level.map(|l| l.to_string()).unwrap_or_default(),
                    n.to_string(),
                    format!("{m}"),
                ]);
            }
        }
    }
    write_table(
        out,
        "rate_series.csv",
        &["run", "metric", "level", "n", "mean_error"],
        &rows,
    )?;
    emit(
        out,
        "rate.json",
        Command::Rate,
        Some(cfg.seed),
        cfg,
        &checks,
        &RateOutput { main, control },
    )?;
    Ok(checks)
}

fn run_stable(cfg: &StableConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let g = grid(cfg.grid_points)?;
    let m = model(&cfg.model, &g)?;
    let probes = if cfg.probes.is_empty() {
        let first = match m.angular() {
            Some(a) => a.atoms()[0].clone(),
            None => m.basis()[0].clone(),
        };
        vec![HsOperator::tensor_product(&first, &first)?]
    } else {
        cfg.probes
            .iter()
            .map(|p| {
                let l = combination(m.basis(), &p.left, false)?;
                let r = combination(m.basis(), &p.right, false)?;
                HsOperator::tensor_product(&l, &r)
            })
            .collect::<heavyfpca::Result<Vec<_>>>()
            .map_err(|e| CliError::Config(e.to_string()))?
    };
    let alpha = m.alpha();
    let mut e = ExperimentConfig::new(m, vec![cfg.n], cfg.replicates, cfg.seed);
    e.probes = probes;
    e.hill_fraction = cfg.hill_fraction;
    e.c0 = cfg.c0;
    let report = run_stable_limit(&e).map_err(|err| match err {
        heavyfpca::Error::Domain(_) | heavyfpca::Error::InvalidModel(_) => CliError::Config(err.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    let mut checks = Vec::new();
    for p in report.probes.iter().filter(|p| !p.degenerate) {
        let target = alpha / 2.0;
        checks.push(Check::new(
            &format!("probe-{}-tail-index", p.probe),
            p.hill_alpha.is_some_and(|h| (h - target).abs() <= cfg.hill_window),
            match p.hill_alpha {
                Some(h) => format!("hill {h:.4} vs {target} ± {}", cfg.hill_window),
                None => "hill estimate undefined".into(),
            },
        ));
        if let Some(o) = p.offset_projection.filter(|o| o.abs() > 0.0) {
            let got = p.empirical_offset_at_tail_level;
            checks.push(Check::new(
                &format!("probe-{}-centering", p.probe),
                (got - o).abs() <= cfg.centering_tolerance * o.abs(),
                format!("empirical {got:.4} vs {o:.4} within {}", cfg.centering_tolerance),
            ));
        }
    }
    prepare_out(out)?;
    let rows = report
        .probes
        .iter()
        .map(|p| {
            vec![
                p.probe.to_string(),
                p.degenerate.to_string(),
                p.hill_k.to_string(),
                p.hill_alpha.map(|h| format!("{h}")).unwrap_or_default(),
                format!("{}", p.target_alpha),
                format!("{}", p.mean_projection),
                format!("{}", p.median_projection),
                p.offset_projection.map(|o| format!("{o}")).unwrap_or_default(),
                format!("{}", p.empirical_offset_at_tail_level),
                format!("{}", p.empirical_offset_at_k_n),
            ]
        })
        .collect::<Vec<_>>();
    write_table(
        out,
        "stable_probes.csv",
        &[
            "probe",
            "degenerate",
            "hill_k",
            "hill_alpha",
            "target_alpha",
            "mean_projection",
            "median_projection",
            "offset_projection",
            "empirical_offset_at_tail_level",
            "empirical_offset_at_k_n",
        ],
        &rows,
    )?;
    emit(
        out,
        "stable.json",
        Command::StableLimit,
        Some(cfg.seed),
        cfg,
        &checks,
        &report,
    )?;
    Ok(checks)
}

fn run_flr(cfg: &FlrConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let g = grid(cfg.grid_points)?;
    let build = || -> heavyfpca::Result<FlrModel> {
        let basis = cfg.basis(&g)?;
        let psi = cfg.psi_operator(&basis)?;
        let x = cfg.x_model.build(&g)?;
        FlrModel::new(psi, x, cfg.noise_scale, basis[..cfg.noise_dim].to_vec())
    };
    let flr_model = build().map_err(|e| CliError::Config(e.to_string()))?;
    if matches!(
        cfg.x_model,
        ModelSpec::KlScores {
            law: ScoreLaw::Gaussian,
            ..
        }
    ) && cfg.gamma <= 1.0
    {
        return Err(CliError::Config("gamma must exceed 1".into()));
    }
    let mut e = FlrExperimentConfig::new(flr_model, cfg.n_grid.clone(), cfg.replicates, cfg.gamma, cfg.seed);
    e.bound = cfg.bound;
    e.caps = cfg.caps.map(|[k, l]| (k, l));
    let report: FlrReport = flr_consistency_experiment(&e).map_err(|err| match err {
        heavyfpca::Error::Domain(_) | heavyfpca::Error::InvalidModel(_) => CliError::Config(err.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    let checks = vec![
        Check::new(
            "error-decreasing",
            report.trend == Trend::Decreasing,
            format!("trend {:?}, spearman rho {:.3}", report.trend, report.spearman_rho),
        ),
        Check::new(
            "error-ratio",
            report.error_ratio <= cfg.max_error_ratio,
            format!("ratio {:.4} vs {}", report.error_ratio, cfg.max_error_ratio),
        ),
    ];
    prepare_out(out)?;
    let rows = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                format!("{}", p.median_error),
                p.k.to_string(),
                p.l.to_string(),
            ]
        })
        .collect::<Vec<_>>();
    write_table(out, "flr.csv", &["n", "median_error", "k", "l"], &rows)?;
    emit(out, "flr.json", Command::Flr, Some(cfg.seed), cfg, &checks, &report)?;
    Ok(checks)
}
