//! wasm-bindgen bindings for the browser demo. Every entry point returns a JSON
//! string; errors come back as `{"error": "<name>: <message>"}`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use olqr_core::algorithms::{online_ce, synthetic_warm_start, OnlineCEParams, TexpMode};
use olqr_core::lyapunov::stationary_cov;
use olqr_core::operator::{effective_dim_and_tail, SpectralDecomposition};
use olqr_core::riccati::{solve_dare, CStableMode, DareOptions};
use olqr_core::systems::{make_lower_bound, w_tr, InstanceKind, InstanceSpec, LowerBoundKind};
use olqr_core::Error;

#[derive(Debug, Serialize)]
pub struct SpectrumProfile {
    pub noise: Vec<f64>,
    pub state: Vec<f64>,
    pub w_tr: f64,
    pub d_lambda: usize,
    pub c_tail: f64,
}

#[derive(Debug, Serialize)]
pub struct LowerBoundSolve {
    pub p_eigenvalues: Vec<f64>,
    pub closed_loop_min_singular: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Serialize)]
pub struct RegretCurve {
    pub t: Vec<usize>,
    pub regret: Vec<f64>,
    pub t_exp: usize,
    pub stabilized: bool,
    pub j_gap: f64,
    pub j_star: f64,
}

fn decay_kind(kind: &str) -> Result<InstanceKind, Error> {
    match kind {
        "polynomial" => Ok(InstanceKind::Polynomial),
        "exponential" => Ok(InstanceKind::Exponential),
        other => Err(Error::BadSpec(format!("unknown decay kind {other:?}"))),
    }
}

/// Σ_w spectrum and Σ_{x,0} spectrum under K⋆ with unit exploration, plus d_λ and C_tail of the latter.
pub fn spectrum_profile_impl(kind: &str, d: usize, alpha: f64, lambda: f64) -> Result<SpectrumProfile, Error> {
    let sys = InstanceSpec { aligned: true, ..InstanceSpec::decay(decay_kind(kind)?, d, 1, alpha, 0) }.build()?;
    let k = sys.optimal()?.k.clone();
    let state = SpectralDecomposition::new(&stationary_cov(&sys, &k, 1.0)?)?.eigenvalues;
    let (d_lambda, c_tail) = effective_dim_and_tail(&state, lambda);
    Ok(SpectrumProfile { noise: sys.sigma_w_spectrum.eigenvalues.clone(), state, w_tr: w_tr(&sys), d_lambda, c_tail })
}

pub fn lower_bound_dare_impl(d_x: usize, d_u: usize, zero_b: bool) -> Result<LowerBoundSolve, Error> {
    let kind = if zero_b { LowerBoundKind::ZeroB } else { LowerBoundKind::Controllable };
    let sys = make_lower_bound(kind, d_x, d_u)?;
    let sol = solve_dare(&sys.a, &sys.b, &sys.q, &sys.r, &DareOptions::default())?;
    let acl = sys.closed_loop(&sol.k)?;
    let smin = acl.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LowerBoundSolve {
        p_eigenvalues: SpectralDecomposition::new(&sol.p)?.eigenvalues,
        closed_loop_min_singular: smin,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// One OnlineCE run from a synthetic warm start; the regret trace is thinned to at most `points` samples.
#[allow(clippy::too_many_arguments)]
pub fn regret_curve_impl(
    kind: &str,
    d: usize,
    d_u: usize,
    alpha: f64,
    horizon: usize,
    c_exp: f64,
    seed: u64,
    points: usize,
) -> Result<RegretCurve, Error> {
    let sys = InstanceSpec { aligned: true, ..InstanceSpec::decay(decay_kind(kind)?, d, d_u, alpha, 0) }.build()?;
    let mode = CStableMode::DataDependent { c1: 0.01 };
    let (a0, b0) = synthetic_warm_start(&sys, 0.01, mode, seed)?;
    let params = OnlineCEParams {
        horizon,
        texp_mode: TexpMode::Sqrt { c_exp },
        c_stable_mode: mode,
        seed,
        ..OnlineCEParams::default()
    };
    let rep = online_ce(&sys, &a0, &b0, &params)?;
    let n = rep.regret.len();
    let step = n.div_ceil(points.max(2)).max(1);
    let idx: Vec<usize> = (0..n).step_by(step).chain(std::iter::once(n - 1)).collect();
    Ok(RegretCurve {
        t: idx.iter().map(|i| i + 1).collect(),
        regret: idx.iter().map(|&i| rep.regret.regret[i]).collect(),
        t_exp: rep.t_exp,
        stabilized: rep.diagnostics.stabilized,
        j_gap: rep.diagnostics.j_gap,
        j_star: rep.regret.j_star,
    })
}

fn to_json<T: Serialize>(r: Result<T, Error>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": format!("{}: {e}", e.name()) }).to_string(),
    }
}

#[wasm_bindgen]
pub fn spectrum_profile(kind: &str, d: usize, alpha: f64, lambda: f64) -> String {
    to_json(spectrum_profile_impl(kind, d, alpha, lambda))
}

#[wasm_bindgen]
pub fn lower_bound_dare(d_x: usize, d_u: usize, zero_b: bool) -> String {
    to_json(lower_bound_dare_impl(d_x, d_u, zero_b))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn regret_curve(kind: &str, d: usize, d_u: usize, alpha: f64, horizon: usize, c_exp: f64, seed: u32) -> String {
    to_json(regret_curve_impl(kind, d, d_u, alpha, horizon, c_exp, seed as u64, 400))
}
