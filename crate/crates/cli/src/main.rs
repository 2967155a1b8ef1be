mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use olqr_core::algorithms::synthetic_warm_start;
use olqr_core::bench::{config_template, regret_sweep, ExperimentConfig};
use olqr_core::estimate::{estimate_bundle, stationary_sqrt};
use olqr_core::lyapunov::{dlyap, stationary_cov};
use olqr_core::operator::{op_norm, spectral_radius};
use olqr_core::riccati::{perturbation_probe, solve_dare, DareOptions};
use olqr_core::simulate::{initial_state, regret_accounting, rollout, Policy};
use olqr_core::verify::{covariance_suite, lyapunov_suite};

#[derive(Parser, Debug)]
#[command(name = "olqr", version, about = "Online LQR experiments under spectrally decaying noise")]
struct Cli {
    /// Experiment configuration (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every master seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "OLQR_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit SVG plots.
    #[arg(long, global = true)]
    plots: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Solve the Riccati equation for the configured instance or a matrix file.
    Dare {
        /// TOML file with `a`, `b`, `q`, `r` as arrays of rows.
        #[arg(long)]
        matrices: Option<PathBuf>,
    },
    /// Solve X = AᵀXA + Λ; without a matrix file, the stationary covariance under K⋆.
    Dlyap {
        /// TOML file with `a` and `lambda` as arrays of rows.
        #[arg(long)]
        matrices: Option<PathBuf>,
    },
    /// Roll out the configured system and write the cost trace.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        /// Exploration variance added to u = K⋆x.
        #[arg(long, default_value_t = 0.0)]
        sigma2_u: f64,
    },
    /// Explore under a warm-start controller and report the estimates.
    Estimate {
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
        #[arg(long, default_value_t = 1e-3)]
        lambda: f64,
    },
    /// OnlineCE sweep over horizons and seeds with a scaling fit.
    Regret,
    /// Certainty-equivalence gap under synthetic model perturbations.
    ProbePerturbation,
    /// Numerical checks of the Lyapunov and covariance inequalities.
    VerifyLemmas {
        /// Negative control: halve the change-of-covariance constants.
        #[arg(long, hide = true)]
        break_constant: bool,
    },
    /// Print (or write to --out) a commented configuration template.
    ConfigInit,
}

#[derive(Debug, Deserialize)]
struct MatrixFile {
    a: Vec<Vec<f64>>,
    b: Option<Vec<Vec<f64>>>,
    q: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    lambda: Option<Vec<Vec<f64>>>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(olqr_core::Error::DimensionMismatch(format!("{what} has ragged rows")).into());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(olqr_core::operator::from_row_major(n, m, &flat)?)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.sweep.master_seed = s;
        cfg.online_ce.seed = s;
        cfg.warm_start.seed = s;
        cfg.verify.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.display().to_string();
    }
    cfg.emit_plots |= cli.plots;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cli.config.as_ref().map(|_| PathBuf::from(&cfg.output_dir)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_dare(cli: &Cli, cfg: &ExperimentConfig, matrices: Option<&Path>) -> Result<bool> {
    let (a, b, q, r) = match matrices {
        Some(p) => {
            let f: MatrixFile = toml::from_str(&std::fs::read_to_string(p)?)?;
            let a = to_matrix(&f.a, "a")?;
            let d = a.nrows();
            let b = to_matrix(f.b.as_deref().unwrap_or(&[]), "b")?;
            let q = f.q.as_deref().map_or(Ok(DMatrix::identity(d, d)), |m| to_matrix(m, "q"))?;
            let du = b.ncols();
            let r = f.r.as_deref().map_or(Ok(DMatrix::identity(du, du)), |m| to_matrix(m, "r"))?;
            (a, b, q, r)
        }
        None => {
            let sys = cfg.instance.build()?;
            (sys.a, sys.b, sys.q, sys.r)
        }
    };
    let sol = solve_dare(&a, &b, &q, &r, &DareOptions::default())?;
    println!("P =");
    output::print_matrix(&sol.p);
    println!("K =");
    output::print_matrix(&sol.k);
    println!("residual = {:.3e}", sol.residual);
    println!("iterations = {}", sol.iterations);
    println!("|P|_op = {}", op_norm(&sol.p));
    println!("closed-loop spectral radius = {}", spectral_radius(&(&a + &b * &sol.k))?);
    if let Some(dir) = out_dir(cli, cfg) {
        ensure_dir(&dir)?;
        output::write_matrix(&dir.join("dare_P.csv"), &sol.p)?;
        output::write_matrix(&dir.join("dare_K.csv"), &sol.k)?;
    }
    Ok(true)
}

fn cmd_dlyap(cli: &Cli, cfg: &ExperimentConfig, matrices: Option<&Path>) -> Result<bool> {
    let (a, lam) = match matrices {
        Some(p) => {
            let f: MatrixFile = toml::from_str(&std::fs::read_to_string(p)?)?;
            let a = to_matrix(&f.a, "a")?;
            let d = a.nrows();
            let lam = f.lambda.as_deref().map_or(Ok(DMatrix::identity(d, d)), |m| to_matrix(m, "lambda"))?;
            (a, lam)
        }
        None => {
            let sys = cfg.instance.build()?;
            let k = sys.optimal()?.k.clone();
            (sys.closed_loop(&k)?.transpose(), sys.sigma_w.clone())
        }
    };
    let sol = dlyap(&a, &lam)?;
    println!("X =");
    output::print_matrix(&sol.x);
    println!("residual = {:.3e}", sol.residual);
    println!("method = {:?}", sol.method);
    println!("|X|_op = {}", op_norm(&sol.x));
    println!("trace X = {}", sol.x.trace());
    if let Some(dir) = out_dir(cli, cfg) {
        ensure_dir(&dir)?;
        output::write_matrix(&dir.join("dlyap_X.csv"), &sol.x)?;
    }
    Ok(true)
}

fn cmd_simulate(cli: &Cli, cfg: &ExperimentConfig, horizon: usize, sigma2_u: f64) -> Result<bool> {
    let sys = cfg.instance.build()?;
    let k = sys.optimal()?.k.clone();
    let seed = cfg.online_ce.seed;
    let x1 = initial_state(&sys, &k, sigma2_u, cfg.online_ce.initial, seed)?;
    let traj = rollout(&sys, &Policy::new(k, sigma2_u), horizon, &x1, seed)?;
    let trace = regret_accounting(&[traj.segment(&sys, "rollout")], sys.j_star()?)?;
    println!("J* = {}", trace.j_star);
    println!("average cost = {}", trace.cumulative_cost.last().copied().unwrap_or(0.0) / horizon as f64);
    println!("final regret = {}", trace.final_regret());
    let dir = out_dir(cli, cfg).unwrap_or_else(|| PathBuf::from("out"));
    ensure_dir(&dir)?;
    output::write_trace(&dir.join("simulate.csv"), &trace)?;
    println!("wrote {}", dir.join("simulate.csv").display());
    Ok(true)
}

fn cmd_estimate(cli: &Cli, cfg: &ExperimentConfig, horizon: usize, lambda: f64) -> Result<bool> {
    let sys = cfg.instance.build()?;
    let mode = cfg.online_ce.c_stable_mode;
    let seed = cfg.online_ce.seed;
    let (a0, b0) = synthetic_warm_start(&sys, 0.9, mode, seed)?;
    let sol0 = solve_dare(&a0, &b0, &sys.q, &sys.r, &DareOptions::default())?;
    let k0 = sol0.k;
    let sigma2 = cfg.online_ce.sigma2_u;
    let traj = rollout(&sys, &Policy::new(k0.clone(), sigma2), horizon, &DVector::zeros(sys.dim()), seed)?;
    let center = &a0 + &b0 * &k0;
    let radius = 0.5 * olqr_core::riccati::c_stable(&sol0.p, mode);
    let half = stationary_sqrt(&sys, &k0, sigma2)?;
    let est = estimate_bundle(&traj, &k0, lambda, Some((&center, radius)), Some((&sys, &half)))?;
    let acl = sys.closed_loop(&k0)?;
    println!("d = {}, d_u = {}, T = {}, lambda = {}", sys.dim(), sys.input_dim(), horizon, lambda);
    println!("|A_cl_ridge - A_cl|_op = {}", op_norm(&(&est.a_cl_ridge - &acl)));
    println!("|A_cl_hat - A_cl|_op = {}", op_norm(&(&est.a_cl_hat - &acl)));
    println!("weighted error A_cl = {}", est.weighted_err_acl.unwrap_or(f64::NAN));
    println!("|B_hat - B|_HS = {}", est.hs_err_b.unwrap_or(f64::NAN));
    println!("|A_hat - A|_op = {}", op_norm(&(&est.a_hat - &sys.a)));
    println!("safe-set radius = {radius}, projection iterations = {}", est.projection_iterations);
    let cov = stationary_cov(&sys, &k0, sigma2)?;
    println!("|Sigma_hat - Sigma_x0|_op = {}", op_norm(&(&est.empirical_cov - &cov)));
    if let Some(dir) = out_dir(cli, cfg) {
        ensure_dir(&dir)?;
        output::write_matrix(&dir.join("A_hat.csv"), &est.a_hat)?;
        output::write_matrix(&dir.join("B_hat.csv"), &est.b_hat)?;
        output::write_matrix(&dir.join("A_cl_hat.csv"), &est.a_cl_hat)?;
    }
    Ok(true)
}

fn cmd_regret(cli: &Cli, cfg: &ExperimentConfig) -> Result<bool> {
    cfg.validate()?;
    let dir = out_dir(cli, cfg).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    ensure_dir(&dir)?;
    let specs = cfg.instances();
    let multi = specs.len() > 1;
    let mut series = Vec::new();
    let mut ok = true;
    for spec in specs {
        let sub = if multi { dir.join(format!("alpha_{}", spec.alpha)) } else { dir.clone() };
        ensure_dir(&sub)?;
        let sys = spec.build()?;
        let run_cfg = ExperimentConfig { instance: spec.clone(), ..cfg.clone() };
        let res = regret_sweep(&sys, &run_cfg, true)?;
        for (t, seed, trace) in &res.traces {
            output::write_trace(&sub.join(format!("trace_T{t}_seed{seed}.csv")), trace)?;
        }
        output::write_summary(&sub.join("summary.csv"), &res.rows)?;
        let scheduled = cfg.sweep.horizons.len() * cfg.sweep.seeds;
        println!(
            "alpha = {}: runs scheduled = {scheduled}, succeeded = {}, failed = {}, unstabilized = {}",
            spec.alpha,
            res.rows.len(),
            res.failures.len(),
            res.rows.iter().filter(|r| !r.stabilized).count()
        );
        for (t, seed, name) in &res.failures {
            println!("  failed run T = {t}, seed = {seed}: {name}");
        }
        match &res.fit {
            Some(fit) => {
                println!(
                    "  slope = {:.4} (95% bootstrap [{:.4}, {:.4}], half-width {:.4}), intercept = {:.4}, r2 = {:.4}",
                    fit.slope, fit.interval.0, fit.interval.1, fit.half_width, fit.intercept, fit.r2
                );
                std::fs::write(sub.join("fit.toml"), toml::to_string(fit)?)?;
                series.push(olqr_core::plot::Series {
                    label: format!("alpha = {}", spec.alpha),
                    points: fit.points.iter().map(|(x, y)| (x.exp(), y.exp())).collect(),
                });
            }
            None => {
                println!("  scaling fit unavailable (DegenerateFit)");
                ok = false;
            }
        }
        ok &= res.failures.is_empty();
    }
    if cfg.emit_plots {
        let svg = olqr_core::plot::loglog_svg("median regret", "T", "regret", &series);
        std::fs::write(dir.join("regret.svg"), svg)?;
    }
    Ok(ok)
}

fn cmd_probe(cli: &Cli, cfg: &ExperimentConfig) -> Result<bool> {
    let sys = cfg.instance.build()?;
    let k0 = sys.optimal()?.k.clone();
    let seeds: Vec<u64> =
        (0..cfg.probe.seeds as u64).map(|i| olqr_core::rng::run_seed(cfg.sweep.master_seed, i)).collect();
    let table = perturbation_probe(&sys, &k0, cfg.probe.sigma2_u, &cfg.probe.eps, &seeds)?;
    println!(
        "slope = {:.4}, r2 = {:.4}, median doubling ratio = {:.4}",
        table.slope, table.r2, table.median_doubling_ratio
    );
    println!(
        "C_stable = {:.4e}, rows outside C_stable = {}, unstabilized rows = {}",
        table.c_stable, table.rows_outside_c_stable, table.rows_unstabilized
    );
    let dir = out_dir(cli, cfg).unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    ensure_dir(&dir)?;
    output::write_probe(&dir.join("probe.csv"), &table)?;
    if cfg.emit_plots {
        let mut pts = Vec::new();
        for &e in &cfg.probe.eps {
            let g: Vec<f64> = table.rows.iter().filter(|r| r.eps == e && r.stabilized).map(|r| r.gap).collect();
            pts.push((e, olqr_core::stats::median(&g)));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let s = olqr_core::plot::Series { label: "median gap".into(), points: pts };
        std::fs::write(dir.join("probe.svg"), olqr_core::plot::loglog_svg("J(K) - J*", "eps", "gap", &[s]))?;
    }
    Ok(table.slope.is_finite())
}

fn cmd_verify(cfg: &ExperimentConfig, break_constant: bool) -> Result<bool> {
    let mut vc = cfg.verify.clone();
    if break_constant {
        vc.constant_scale = 0.5;
    }
    let mut reports = lyapunov_suite(&vc)?;
    let cov_dims: Vec<usize> = vc.dims.clone();
    reports.extend(covariance_suite(&olqr_core::verify::SuiteConfig { dims: cov_dims, ..vc.clone() })?);
    let mut all = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        all &= r.passed();
        println!(
            "{status} {}: runs = {}, violations = {}, min slack = {:.3e}, lhs = {:.4e}, rhs = {:.4e}, tol = {:.1e}",
            r.name, r.seeds_run, r.violations, r.min_slack, r.lhs, r.rhs, r.tol
        );
        for n in &r.notes {
            println!("    note: {n}");
        }
    }
    if !all {
        let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
        eprintln!("failing checks: {}", failing.join(", "));
    }
    Ok(all)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().ok();
    }
    if let Cmd::ConfigInit = cli.cmd {
        match &cli.out {
            Some(dir) => {
                ensure_dir(dir)?;
                std::fs::write(dir.join("config.toml"), config_template())?;
                println!("wrote {}", dir.join("config.toml").display());
            }
            None => print!("{}", config_template()),
        }
        return Ok(true);
    }
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Cmd::Dare { matrices } => cmd_dare(cli, &cfg, matrices.as_deref()),
        Cmd::Dlyap { matrices } => cmd_dlyap(cli, &cfg, matrices.as_deref()),
        Cmd::Simulate { horizon, sigma2_u } => cmd_simulate(cli, &cfg, *horizon, *sigma2_u),
        Cmd::Estimate { horizon, lambda } => cmd_estimate(cli, &cfg, *horizon, *lambda),
        Cmd::Regret => cmd_regret(cli, &cfg),
        Cmd::ProbePerturbation => cmd_probe(cli, &cfg),
        Cmd::VerifyLemmas { break_constant } => cmd_verify(&cfg, *break_constant),
        Cmd::ConfigInit => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            match e.downcast_ref::<olqr_core::Error>() {
                Some(core) => eprintln!("error: {}: {core}", core.name()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(2)
        }
    }
}
