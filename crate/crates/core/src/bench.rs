//! Experiment configuration, regret sweeps and log-log scaling fits.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    online_ce, stitched_pipeline, synthetic_warm_start, OnlineCEParams, RunReport, WarmStartParams, COMMIT, EXPLORE,
};
use crate::error::{Error, Result};
use crate::operator::is_stable;
use crate::rng;
use crate::simulate::RegretTrace;
use crate::stats::{line_fit, median, quantile};
use crate::systems::{InstanceKind, InstanceSpec, SystemInstance};
use crate::verify::SuiteConfig;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// (log x, log median y)
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Half-width of the central 95% bootstrap interval of the slope.
    pub half_width: f64,
    pub interval: (f64, f64),
    pub resamples: usize,
}

/// OLS of log median(y) on log x; the slope interval resamples seeds with
/// replacement independently at each x.
pub fn fit_scaling(groups: &[(f64, Vec<f64>)], seed: u64) -> Result<ScalingFit> {
    if groups.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points, need at least 3", groups.len())));
    }
    let mut xs = Vec::with_capacity(groups.len());
    let mut ys = Vec::with_capacity(groups.len());
    for (x, vals) in groups {
        let m = median(vals);
        if !(*x > 0.0) || !(m > 0.0) {
            return Err(Error::DegenerateFit(format!("nonpositive value at x = {x}: median {m}")));
        }
        xs.push(x.ln());
        ys.push(m.ln());
    }
    let fit = line_fit(&xs, &ys).ok_or_else(|| Error::DegenerateFit("x values are not distinct".into()))?;
    let mut r = rng::stream(seed, 0xB0);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut buf = Vec::new();
    'resample: for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut yb = Vec::with_capacity(groups.len());
        for (_, vals) in groups {
            buf.clear();
            buf.extend((0..vals.len()).map(|_| vals[r.random_range(0..vals.len())]));
            let m = median(&buf);
            if !(m > 0.0) {
                continue 'resample;
            }
            yb.push(m.ln());
        }
        if let Some(f) = line_fit(&xs, &yb) {
            slopes.push(f.slope);
        }
    }
    let (lo, hi) = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (quantile(&slopes, 0.025), quantile(&slopes, 0.975))
    };
    Ok(ScalingFit {
        points: xs.into_iter().zip(ys).collect(),
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        half_width: 0.5 * (hi - lo),
        interval: (lo, hi),
        resamples: slopes.len(),
    })
}

/// How (A₀, B₀) is obtained before OnlineCE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WarmMode {
    /// The true system.
    Exact,
    /// A random model at `fraction`·½C_stable from the truth.
    Synthetic { fraction: f64 },
    /// WarmStart from data, burn-in, then OnlineCE.
    Estimated,
}

impl Default for WarmMode {
    fn default() -> Self {
        WarmMode::Synthetic { fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub horizons: Vec<usize>,
    pub seeds: usize,
    /// Decay exponents to sweep; the instance's own α when empty.
    pub alphas: Vec<f64>,
    pub master_seed: u64,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self { horizons: vec![2000, 4000, 8000, 16000], seeds: 20, alphas: Vec::new(), master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub eps: Vec<f64>,
    pub seeds: usize,
    pub sigma2_u: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { eps: (0..8).map(|k| 0.1 * 0.5f64.powi(k)).collect(), seeds: 50, sigma2_u: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub online_ce: OnlineCEParams,
    pub warm_start: WarmStartParams,
    pub warm_mode: WarmMode,
    pub sweep: SweepAxes,
    pub probe: ProbeConfig,
    pub verify: SuiteConfig,
    pub output_dir: String,
    pub emit_plots: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            instance: InstanceSpec::decay(InstanceKind::Polynomial, 16, 2, 2.0, 0),
            online_ce: OnlineCEParams::default(),
            warm_start: WarmStartParams::default(),
            warm_mode: WarmMode::default(),
            sweep: SweepAxes::default(),
            probe: ProbeConfig::default(),
            verify: SuiteConfig::default(),
            output_dir: "out".into(),
            emit_plots: false,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::BadSpec(e.to_string()))
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::BadSpec(e.to_string()))
    }

    /// Instances to run, one per swept α.
    pub fn instances(&self) -> Vec<InstanceSpec> {
        if self.sweep.alphas.is_empty() {
            vec![self.instance.clone()]
        } else {
            self.sweep.alphas.iter().map(|&alpha| InstanceSpec { alpha, ..self.instance.clone() }).collect()
        }
    }

    /// Fail-fast check of every referenced spec.
    pub fn validate(&self) -> Result<()> {
        for spec in self.instances() {
            spec.build()?.optimal()?;
        }
        self.online_ce.validate()?;
        if self.sweep.horizons.iter().any(|&t| t < 2) {
            return Err(Error::BadSpec("sweep horizons must be at least 2".into()));
        }
        if let WarmMode::Synthetic { fraction } = self.warm_mode {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::BadSpec("warm fraction must lie in (0, 1]".into()));
            }
        }
        if self.probe.eps.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::BadSpec("probe eps must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Commented template equal to `ExperimentConfig::default()`.
pub fn config_template() -> &'static str {
    r#"# Experiment configuration. Every field is optional; the values below are the defaults.
output_dir = "out"
# Write SVG plots next to the CSV output.
emit_plots = false

[instance]
# polynomial | exponential | identity | illustrative | lower_bound_zero_b | lower_bound_controllable
kind = "polynomial"
d = 16
d_u = 2
# Decay exponent of the noise spectrum (polynomial: j^-alpha, exponential: e^-alpha j).
alpha = 2.0
seed = 0
# Spectral radius of the generated A.
rho_target = 0.7
# Align the top singular directions of A with the noise spectrum.
aligned = false

[online_ce]
horizon = 10000
# t_exp = 100       # explicit explore length; otherwise from texp_mode
# lambda = 0.01     # explicit ridge weight; otherwise c_lambda W_tr / (t_exp |A0 + B0 K0|_HS^2)
c_lambda = 1.0
sigma2_u = 1.0
# burn_in = 50      # stitched pipeline only; default 10 ceil(|P0|)
# zero | stationary
initial = "zero"
seed = 0

[online_ce.texp_mode]
# sqrt: t_exp = ceil(c_exp sqrt(T)); formula: the balanced expression with problem constants
mode = "sqrt"
c_exp = 1.0

[online_ce.c_stable_mode]
# fixed229: 1/(229 |P0|^3); data_dependent: 1/(c1 |P0|^3)
mode = "fixed229"

[warm_start]
t_init = 2000
sigma2_u = 1.0
lambda_safe = 0.001
seed = 0

[warm_mode]
# exact | synthetic (random model at fraction * C_stable/2) | estimated (WarmStart + burn-in)
mode = "synthetic"
fraction = 0.9

[sweep]
horizons = [2000, 4000, 8000, 16000]
seeds = 20
# alphas = [1.0, 2.0]   # overrides instance.alpha
alphas = []
master_seed = 0

[probe]
eps = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125, 0.0015625, 0.00078125]
seeds = 50
sigma2_u = 1.0

[verify]
dims = [12]
instances = 200
master_seed = 0
constant_scale = 1.0
"#
}

/// One (T, seed) run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub horizon: usize,
    pub seed: u64,
    pub final_regret: f64,
    pub explore_regret: f64,
    pub commit_regret: f64,
    pub stabilized: bool,
    pub dare_failed: bool,
    pub eps_cov: f64,
    pub eps_op: f64,
    pub j_gap: f64,
    pub t_exp: usize,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub traces: Vec<(usize, u64, RegretTrace)>,
    pub fit: Option<ScalingFit>,
    pub failures: Vec<(usize, u64, String)>,
}

/// Initial stabilizing controller handed to WarmStart: zero when A⋆ is stable.
pub fn initial_controller(sys: &SystemInstance) -> Result<DMatrix<f64>> {
    if is_stable(&sys.a)? {
        Ok(DMatrix::zeros(sys.input_dim(), sys.dim()))
    } else {
        Ok(sys.optimal()?.k.clone())
    }
}

/// One run under the configured warm mode.
pub fn run_once(sys: &SystemInstance, cfg: &ExperimentConfig, horizon: usize, seed: u64) -> Result<RunReport> {
    let params = OnlineCEParams { horizon, seed, ..cfg.online_ce.clone() };
    match cfg.warm_mode {
        WarmMode::Exact => online_ce(sys, &sys.a, &sys.b, &params),
        WarmMode::Synthetic { fraction } => {
            let (a0, b0) = synthetic_warm_start(sys, fraction, params.c_stable_mode, rng::run_seed(seed, 0x57))?;
            online_ce(sys, &a0, &b0, &params)
        }
        WarmMode::Estimated => {
            let warm = WarmStartParams { seed, ..cfg.warm_start.clone() };
            stitched_pipeline(sys, &initial_controller(sys)?, &warm, &params)
        }
    }
}

/// Run every (T, seed) pair; run seeds are `run_seed(master_seed, i)` for seed
/// index i, shared across horizons.
pub fn regret_sweep(sys: &SystemInstance, cfg: &ExperimentConfig, keep_traces: bool) -> Result<SweepResult> {
    if cfg.sweep.horizons.is_empty() || cfg.sweep.seeds == 0 {
        return Err(Error::EmptyGrid);
    }
    let jobs: Vec<(usize, u64)> = cfg
        .sweep
        .horizons
        .iter()
        .flat_map(|&t| (0..cfg.sweep.seeds as u64).map(move |i| (t, rng::run_seed(cfg.sweep.master_seed, i))))
        .collect();
    let alpha = cfg.instance.alpha;
    let outcomes: Vec<(usize, u64, Result<RunReport>)> =
        jobs.par_iter().map(|&(t, s)| (t, s, run_once(sys, cfg, t, s))).collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for (t, s, out) in outcomes {
        match out {
            Ok(rep) => {
                let d = &rep.diagnostics;
                rows.push(SweepRow {
                    alpha,
                    horizon: t,
                    seed: s,
                    final_regret: rep.regret.final_regret(),
                    explore_regret: rep.regret.phase_regret(EXPLORE).unwrap_or(0.0),
                    commit_regret: rep.regret.phase_regret(COMMIT).unwrap_or(0.0),
                    stabilized: d.stabilized,
                    dare_failed: d.dare_failed,
                    eps_cov: d.eps_cov,
                    eps_op: d.eps_op,
                    j_gap: d.j_gap,
                    t_exp: rep.t_exp,
                });
                if keep_traces {
                    traces.push((t, s, rep.regret));
                }
            }
            Err(e) => failures.push((t, s, e.name().to_string())),
        }
    }
    let groups: Vec<(f64, Vec<f64>)> = cfg
        .sweep
        .horizons
        .iter()
        .map(|&t| (t as f64, rows.iter().filter(|r| r.horizon == t).map(|r| r.final_regret).collect()))
        .collect();
    let fit = fit_scaling(&groups, cfg.sweep.master_seed).ok();
    Ok(SweepResult { rows, traces, fit, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let groups: Vec<(f64, Vec<f64>)> =
            [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&x: &f64| (x, vec![x.powf(0.75)])).collect();
        let f = fit_scaling(&groups, 0).unwrap();
        assert!((f.slope - 0.75).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, Vec<f64>)> = [1.0, 2.0, 4.0].iter().map(|&x| (x, vec![3.0, 3.0])).collect();
        assert!(fit_scaling(&flat, 0).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let two = vec![(1.0, vec![1.0]), (2.0, vec![2.0])];
        assert!(matches!(fit_scaling(&two, 0), Err(Error::DegenerateFit(_))));
        let neg = vec![(1.0, vec![1.0]), (2.0, vec![-2.0]), (3.0, vec![1.0])];
        assert!(matches!(fit_scaling(&neg, 0), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn template_is_default_and_round_trips() {
        let parsed = ExperimentConfig::parse(config_template()).unwrap();
        assert_eq!(parsed, ExperimentConfig::default());
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.render().unwrap()).unwrap(), c);
        assert!(c.validate().is_ok());
    }
}
