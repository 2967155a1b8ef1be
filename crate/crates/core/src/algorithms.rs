//! WarmStart and OnlineCE (explore-then-commit certainty equivalence), with
//! the horizon split and ridge schedules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{empirical_cov, estimate_bundle, ols_b, project_safe, ridge_acl, stationary_sqrt, EstimateBundle};
use crate::operator::{hs_norm, is_stable, op_norm, spectral_radius, DenseOperator};
use crate::riccati::{c_stable, c_stable_from_norm, infinite_horizon_cost, optimal_gain, CStableMode};
use crate::rng;
use crate::simulate::{
    initial_state, regret_accounting, rollout, rollout_at, rollout_costs, CostSegment, InitialMode, Policy,
    RegretTrace,
};
use crate::systems::{w_tr, SystemInstance};

pub const EXPLORE: &str = "explore";
pub const COMMIT: &str = "commit";
pub const WARM_START: &str = "warm_start";
pub const BURN_IN: &str = "burn_in";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TexpMode {
    /// ⌈c_exp·√T⌉
    Sqrt { c_exp: f64 },
    /// The balanced explore length with all problem constants plugged in.
    Formula,
}

impl Default for TexpMode {
    fn default() -> Self {
        TexpMode::Sqrt { c_exp: 1.0 }
    }
}

/// Problem statistics entering the balanced explore length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TexpStats {
    pub d_u: usize,
    pub w_tr: f64,
    pub trace_sigma_x0: f64,
    pub d_lambda: f64,
    pub c_tail: f64,
    pub m_star: f64,
    pub sigma2_u: f64,
    pub trace_r: f64,
}

impl TexpStats {
    pub fn minimal(d_u: usize) -> Self {
        Self {
            d_u,
            w_tr: 1.0,
            trace_sigma_x0: 1.0,
            d_lambda: 1.0,
            c_tail: 0.0,
            m_star: 1.0,
            sigma2_u: 1.0,
            trace_r: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub t_exp: usize,
    /// The clamping interval [d_u+1, T−1] was empty; T−1 is returned.
    pub infeasible: bool,
}

/// √(T·M⋆³⁶(d_u tr Σ_{x,0} + W_tr(d_λ + C_tail)) / (σ²_u tr R + M⋆² tr Σ_{x,0})).
pub fn texp_formula(t: usize, s: &TexpStats) -> f64 {
    let num = t as f64 * s.m_star.powi(36) * (s.d_u as f64 * s.trace_sigma_x0 + s.w_tr * (s.d_lambda + s.c_tail));
    let den = s.sigma2_u * s.trace_r + s.m_star.powi(2) * s.trace_sigma_x0;
    (num / den).sqrt()
}

pub fn choose_texp(t: usize, stats: &TexpStats, mode: TexpMode) -> Split {
    let raw = match mode {
        TexpMode::Sqrt { c_exp } => (c_exp * (t as f64).sqrt()).ceil(),
        TexpMode::Formula => texp_formula(t, stats).ceil(),
    };
    let lo = stats.d_u + 1;
    let hi = t.saturating_sub(1);
    if lo > hi {
        return Split { t_exp: hi, infeasible: true };
    }
    let raw = if raw.is_finite() { raw.min(hi as f64).max(lo as f64) as usize } else { hi };
    Split { t_exp: raw.clamp(lo, hi), infeasible: false }
}

/// λ = c_λ·W_tr / (T_exp‖A₀+B₀K₀‖²_HS).
pub fn lambda_schedule(c_lambda: f64, w_tr: f64, t_exp: usize, acl_prior: &DenseOperator) -> f64 {
    let hs2 = hs_norm(acl_prior).powi(2).max(f64::MIN_POSITIVE);
    c_lambda * w_tr / (t_exp as f64 * hs2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineCEParams {
    pub horizon: usize,
    /// Explicit explore length; chosen by `texp_mode` when absent.
    pub t_exp: Option<usize>,
    pub texp_mode: TexpMode,
    /// Explicit ridge weight; the schedule with `c_lambda` when absent.
    pub lambda: Option<f64>,
    pub c_lambda: f64,
    pub sigma2_u: f64,
    pub c_stable_mode: CStableMode,
    /// Burn-in steps under K₀ in the stitched pipeline; 10⌈‖P₀‖⌉ when absent.
    pub burn_in: Option<usize>,
    pub initial: InitialMode,
    pub seed: u64,
}

impl Default for OnlineCEParams {
    fn default() -> Self {
        Self {
            horizon: 10_000,
            t_exp: None,
            texp_mode: TexpMode::default(),
            lambda: None,
            c_lambda: 1.0,
            sigma2_u: 1.0,
            c_stable_mode: CStableMode::Fixed229,
            burn_in: None,
            initial: InitialMode::Zero,
            seed: 0,
        }
    }
}

impl OnlineCEParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::BadSpec("horizon must be at least 2".into()));
        }
        if let Some(te) = self.t_exp {
            if te < 1 || te >= self.horizon {
                return Err(Error::BadSpec(format!("t_exp = {te} must lie in [1, horizon)")));
            }
        }
        if !(self.sigma2_u >= 0.0) || !self.sigma2_u.is_finite() {
            return Err(Error::BadSpec("sigma2_u must be a nonnegative number".into()));
        }
        if (self.t_exp.is_none() || self.lambda.is_none()) && self.sigma2_u < 1.0 && self.sigma2_u != 0.0 {
            return Err(Error::BadSpec("automatic schedules require sigma2_u >= 1".into()));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::BadSpec("lambda must be positive".into()));
            }
        }
        if !(self.c_lambda > 0.0) {
            return Err(Error::BadSpec("c_lambda must be positive".into()));
        }
        if let CStableMode::DataDependent { c1 } = self.c_stable_mode {
            if !(c1 > 0.0) {
                return Err(Error::BadSpec("c1 must be positive".into()));
            }
        }
        if let TexpMode::Sqrt { c_exp } = self.texp_mode {
            if !(c_exp > 0.0) {
                return Err(Error::BadSpec("c_exp must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartParams {
    pub t_init: usize,
    pub sigma2_u: f64,
    pub lambda_safe: f64,
    pub seed: u64,
}

impl Default for WarmStartParams {
    fn default() -> Self {
        Self { t_init: 2000, sigma2_u: 1.0, lambda_safe: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// max{‖(Â−A⋆)Σ_{x,0}^{1/2}‖_HS, ‖B̂−B⋆‖_HS}; NaN if K₀ does not stabilize the true system.
    pub eps_cov: f64,
    /// max{‖Â−A⋆‖_op, ‖B̂−B⋆‖_op}
    pub eps_op: f64,
    /// max{‖A₀−A⋆‖_op, ‖B₀−B⋆‖_op}
    pub warm_eps_op: f64,
    /// C_stable evaluated at ‖P₀‖.
    pub c_stable: f64,
    /// J(K̂) − J⋆, infinite when K̂ does not stabilize.
    pub j_gap: f64,
    pub stabilized: bool,
    pub k0_stabilizing: bool,
    pub projection_active: bool,
    pub dare_failed: bool,
    pub infeasible_split: bool,
    pub closed_loop_radius: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub regret: RegretTrace,
    pub estimates: EstimateBundle,
    pub k0: DenseOperator,
    pub k_hat: DenseOperator,
    pub t_exp: usize,
    pub lambda: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}

/// Flat, serializable summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub t_exp: usize,
    pub lambda: f64,
    pub burn_in: usize,
    pub seed: u64,
    pub final_regret: f64,
    pub phase_regret: Vec<(String, f64)>,
    pub weighted_err_acl: Option<f64>,
    pub hs_err_b: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl RunReport {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            horizon: self.regret.len(),
            t_exp: self.t_exp,
            lambda: self.lambda,
            burn_in: self.burn_in,
            seed: self.seed,
            final_regret: self.regret.final_regret(),
            phase_regret: self
                .regret
                .phases
                .iter()
                .map(|p| (p.name.clone(), self.regret.phase_regret(&p.name).unwrap_or(0.0)))
                .collect(),
            weighted_err_acl: self.estimates.weighted_err_acl,
            hs_err_b: self.estimates.hs_err_b,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    pub a0: DenseOperator,
    pub b0: DenseOperator,
    pub trajectory: crate::simulate::Trajectory,
}

/// Explore under u = K_init x + v from x₁ = 0, then B₀ by least squares and
/// A₀ = Â_cl − B₀K_init with a ridge estimate Â_cl at λ_safe.
pub fn warm_start(
    sys: &SystemInstance,
    k_init: &DenseOperator,
    t_init: usize,
    sigma2_u: f64,
    lambda_safe: f64,
    seed: u64,
) -> Result<WarmStart> {
    let rad = spectral_radius(&sys.closed_loop(k_init)?)?;
    if rad >= 1.0 {
        return Err(Error::Unstable(rad));
    }
    let x1 = DVector::zeros(sys.dim());
    let traj = rollout(sys, &Policy::new(k_init.clone(), sigma2_u), t_init.max(1), &x1, seed)?;
    let b0 = ols_b(&traj)?;
    let acl = ridge_acl(&traj, lambda_safe)?;
    let a0 = acl - &b0 * k_init;
    Ok(WarmStart { a0, b0, trajectory: traj })
}

/// max{‖A₀−A⋆‖_op, ‖B₀−B⋆‖_op}.
pub fn model_error(sys: &SystemInstance, a: &DenseOperator, b: &DenseOperator) -> f64 {
    op_norm(&(a - &sys.a)).max(op_norm(&(b - &sys.b)))
}

/// Warm-start closeness: ε_op,0 ≤ ½·C_stable(P₀). Returns (ε_op,0, C_stable(P₀), holds).
pub fn warm_start_closeness(
    sys: &SystemInstance,
    a0: &DenseOperator,
    b0: &DenseOperator,
    mode: CStableMode,
) -> Result<(f64, f64, bool)> {
    let p0 = optimal_gain(a0, b0, &sys.q, &sys.r)?.p;
    let cs = c_stable(&p0, mode);
    let e = model_error(sys, a0, b0);
    Ok((e, cs, e <= 0.5 * cs))
}

/// (A₀, B₀) at operator-norm distance `fraction`·½C_stable from the truth along a
/// random direction, shrunk until the closeness test passes with ‖P₀‖.
pub fn synthetic_warm_start(
    sys: &SystemInstance,
    fraction: f64,
    mode: CStableMode,
    seed: u64,
) -> Result<(DenseOperator, DenseOperator)> {
    let mut r = rng::stream(seed, 0xB7);
    let g = rng::normal_matrix(&mut r, sys.dim(), sys.dim());
    let h = rng::normal_matrix(&mut r, sys.dim(), sys.input_dim());
    let (gn, hn) = (op_norm(&g).max(f64::MIN_POSITIVE), op_norm(&h).max(f64::MIN_POSITIVE));
    let mut radius = fraction * 0.5 * c_stable_from_norm(op_norm(&sys.optimal()?.p), mode);
    for _ in 0..200 {
        let a0 = &sys.a + &g * (radius / gn);
        let b0 = &sys.b + &h * (radius / hn);
        if let Ok((e, cs, _)) = warm_start_closeness(sys, &a0, &b0, mode) {
            if e <= fraction * 0.5 * cs {
                return Ok((a0, b0));
            }
        }
        radius *= 0.9;
    }
    Err(Error::NoConvergence { what: "synthetic warm start", iterations: 200 })
}

struct CeState<'a> {
    sys: &'a SystemInstance,
    params: &'a OnlineCEParams,
    start: usize,
    x1: DVector<f64>,
    segments: Vec<CostSegment>,
    burn_in: usize,
}

fn explore_split(sys: &SystemInstance, params: &OnlineCEParams) -> Split {
    match params.t_exp {
        Some(t_exp) => Split { t_exp, infeasible: false },
        None => {
            let stats = match params.texp_mode {
                TexpMode::Formula => texp_stats(sys, params.sigma2_u),
                TexpMode::Sqrt { .. } => TexpStats::minimal(sys.input_dim()),
            };
            choose_texp(params.horizon, &stats, params.texp_mode)
        }
    }
}

/// Statistics for the formula mode, evaluated at the optimal controller with
/// λ = W_tr/√T-free effective dimension at λ = 1e−3.
pub fn texp_stats(sys: &SystemInstance, sigma2_u: f64) -> TexpStats {
    let d_u = sys.input_dim();
    let fallback = TexpStats::minimal(d_u);
    let Ok(opt) = sys.optimal() else { return fallback };
    let Ok(cov) = crate::lyapunov::stationary_cov(sys, &opt.k, sigma2_u) else { return fallback };
    let Ok(sd) = crate::operator::SpectralDecomposition::new(&cov) else { return fallback };
    let (d_lambda, c_tail) = sd.effective_dim_and_tail(1e-3);
    TexpStats {
        d_u,
        w_tr: w_tr(sys),
        trace_sigma_x0: cov.trace(),
        d_lambda: d_lambda as f64,
        c_tail,
        m_star: crate::systems::m_star(sys).unwrap_or(1.0),
        sigma2_u: sigma2_u.max(f64::MIN_POSITIVE),
        trace_r: sys.r.trace(),
    }
}

fn run_ce(state: CeState<'_>, a0: &DenseOperator, b0: &DenseOperator) -> Result<RunReport> {
    let CeState { sys, params, start, x1, mut segments, burn_in } = state;
    params.validate()?;
    let k0 = optimal_gain(a0, b0, &sys.q, &sys.r)?;
    let p0 = k0.p;
    let k0 = k0.k;
    let split = explore_split(sys, params);
    let t_exp = split.t_exp.max(1);
    let acl0 = a0 + b0 * &k0;
    let lambda = params.lambda.unwrap_or_else(|| lambda_schedule(params.c_lambda, w_tr(sys), t_exp, &acl0));
    let cs = c_stable(&p0, params.c_stable_mode);
    let k0_stabilizing = is_stable(&sys.closed_loop(&k0)?)?;

    let explore = rollout_at(
        sys,
        &Policy::new(k0.clone(), params.sigma2_u),
        t_exp,
        &x1,
        rng::run_seed(params.seed, 1),
        start,
    )?;
    segments.push(explore.segment(sys, EXPLORE));
    let sigma_half = if k0_stabilizing && params.sigma2_u > 0.0 {
        Some(stationary_sqrt(sys, &k0, params.sigma2_u)?)
    } else {
        None
    };
    let oracle = sigma_half.as_ref().map(|s| (sys, s));
    let mut est = if params.sigma2_u > 0.0 {
        estimate_bundle(&explore, &k0, lambda, Some((&acl0, 0.5 * cs)), oracle)?
    } else {
        // No excitation: B̂ is kept at B₀ and Â_cl at the prior closed loop when the states carry no signal.
        let emp = empirical_cov(&explore);
        let ridge = ridge_acl(&explore, lambda)?;
        let acl_hat = if emp.trace() > 0.0 {
            let w = &emp + DMatrix::identity(sys.dim(), sys.dim()) * lambda;
            project_safe(&ridge, &acl0, 0.5 * cs, &w)?
        } else {
            acl0.clone()
        };
        EstimateBundle {
            a_cl_ridge: ridge,
            a_hat: &acl_hat - b0 * &k0,
            a_cl_hat: acl_hat,
            b_hat: b0.clone(),
            lambda,
            empirical_cov: emp,
            weighted_err_acl: None,
            hs_err_b: Some(hs_norm(&(b0 - &sys.b))),
            projection_iterations: 0,
        }
    };
    est.lambda = lambda;
    let projection_active = est.a_cl_hat != est.a_cl_ridge;

    let (k_hat, dare_failed) = match optimal_gain(&est.a_hat, &est.b_hat, &sys.q, &sys.r) {
        Ok(s) => (s.k, false),
        Err(Error::NoConvergence { .. }) | Err(Error::Unstable(_)) | Err(Error::SingularInnerSolve) => {
            (k0.clone(), true)
        }
        Err(e) => return Err(e),
    };
    let acl_hat_true = sys.closed_loop(&k_hat)?;
    let radius = spectral_radius(&acl_hat_true)?;
    let stabilized = radius < 1.0;
    let j_gap = if stabilized { infinite_horizon_cost(sys, &k_hat)? - sys.j_star()? } else { f64::INFINITY };

    let commit_len = params.horizon.saturating_sub(t_exp);
    let last = explore.final_state();
    let commit = rollout_costs(
        sys,
        &Policy::new(k_hat.clone(), 0.0),
        commit_len,
        &last,
        rng::run_seed(params.seed, 2),
        start + t_exp,
        COMMIT,
    )?;
    segments.push(commit);
    let regret = regret_accounting(&segments, sys.j_star()?)?;

    let eps_op = model_error(sys, &est.a_hat, &est.b_hat);
    let eps_cov = match &sigma_half {
        Some(s) => hs_norm(&((&est.a_hat - &sys.a) * s)).max(hs_norm(&(&est.b_hat - &sys.b))),
        None => f64::NAN,
    };
    let diagnostics = Diagnostics {
        eps_cov,
        eps_op,
        warm_eps_op: model_error(sys, a0, b0),
        c_stable: cs,
        j_gap,
        stabilized,
        k0_stabilizing,
        projection_active,
        dare_failed,
        infeasible_split: split.infeasible,
        closed_loop_radius: radius,
    };
    Ok(RunReport {
        regret,
        estimates: est,
        k0,
        k_hat,
        t_exp,
        lambda,
        burn_in,
        seed: params.seed,
        diagnostics,
    })
}

/// OnlineCE from (A₀, B₀): explore T_exp steps under K₀ = K∞(A₀,B₀) with
/// v ~ N(0, σ²_u I), estimate and project, then commit to K̂ = K∞(Â,B̂).
pub fn online_ce(sys: &SystemInstance, a0: &DenseOperator, b0: &DenseOperator, params: &OnlineCEParams) -> Result<RunReport> {
    params.validate()?;
    let k0 = optimal_gain(a0, b0, &sys.q, &sys.r)?.k;
    let x1 = initial_state(sys, &k0, params.sigma2_u, params.initial, rng::run_seed(params.seed, 3))?;
    run_ce(CeState { sys, params, start: 1, x1, segments: Vec::new(), burn_in: 0 }, a0, b0)
}

/// WarmStart, burn-in under K₀ with exploration noise, then OnlineCE; regret is
/// accounted over all phases.
pub fn stitched_pipeline(
    sys: &SystemInstance,
    k_init: &DenseOperator,
    warm: &WarmStartParams,
    ce: &OnlineCEParams,
) -> Result<RunReport> {
    ce.validate()?;
    let ws = warm_start(sys, k_init, warm.t_init, warm.sigma2_u, warm.lambda_safe, rng::run_seed(warm.seed, 10))?;
    let warm_seg = ws.trajectory.segment(sys, WARM_START);
    let sol0 = optimal_gain(&ws.a0, &ws.b0, &sys.q, &sys.r)?;
    let burn_in = ce.burn_in.unwrap_or_else(|| 10 * op_norm(&sol0.p).ceil() as usize);
    let mut segments = vec![warm_seg];
    let mut x = ws.trajectory.final_state();
    let mut start = ws.trajectory.len() + 1;
    if burn_in > 0 {
        let seg = rollout_costs(
            sys,
            &Policy::new(sol0.k.clone(), ce.sigma2_u),
            burn_in,
            &x,
            rng::run_seed(ce.seed, 11),
            start,
            BURN_IN,
        )?;
        x = seg.final_state.clone();
        start += burn_in;
        segments.push(seg);
    }
    run_ce(CeState { sys, params: ce, start, x1: x, segments, burn_in }, &ws.a0, &ws.b0)
}

/// Cost-only rollout of a fixed controller without exploration, as a null baseline.
pub fn oracle_run(sys: &SystemInstance, k: &DenseOperator, horizon: usize, seed: u64) -> Result<RegretTrace> {
    let x1 = DVector::zeros(sys.dim());
    let seg = rollout_costs(sys, &Policy::new(k.clone(), 0.0), horizon, &x1, rng::run_seed(seed, 2), 1, COMMIT)?;
    regret_accounting(&[seg], sys.j_star()?)
}
