//! Numerical checks of the structural inequalities: change of covariance,
//! change of controller, performance difference, Lyapunov bounds and the
//! end-to-end ε² law.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{
    check_monotonicity, check_repeated_identity, check_series_bound, check_trace_bound, dlyap,
    dlyap_direct, dlyap_series, dlyapm, stationary_cov, LyapunovOptions, PSD_TOL,
};
use crate::operator::{
    hs_norm, op_norm, psd_slack, spectral_radius, symmetrize, DenseOperator, SpectralDecomposition,
};
use crate::riccati::{infinite_horizon_cost, perturbation_probe, value_of_controller, ProbeTable};
use crate::rng;
use crate::stats::median;
use crate::systems::{make_decay_instance, DecayKind, DecaySpec, SystemInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub hypothesis_satisfied: bool,
    /// Summaries (operator norms or scalars) at the worst recorded slack.
    pub lhs: f64,
    pub rhs: f64,
    /// Normalized slack; PSD checks use λ_min(RHS − LHS)/(1 + ‖RHS‖).
    pub min_slack: f64,
    pub seeds_run: usize,
    pub violations: usize,
    pub tol: f64,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: &str, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            hypothesis_satisfied: true,
            lhs: 0.0,
            rhs: 0.0,
            min_slack: f64::INFINITY,
            seeds_run: 0,
            violations: 0,
            tol,
            notes: Vec::new(),
        }
    }

    pub fn record(&mut self, lhs: f64, rhs: f64, slack: f64) {
        if slack < -self.tol || slack.is_nan() {
            self.violations += 1;
        }
        if slack < self.min_slack || slack.is_nan() {
            self.min_slack = slack;
            self.lhs = lhs;
            self.rhs = rhs;
        }
    }

    /// Fold another report of the same check into this one.
    pub fn merge(&mut self, other: &CheckReport) {
        self.seeds_run += other.seeds_run;
        self.violations += other.violations;
        if other.min_slack < self.min_slack || other.min_slack.is_nan() {
            self.min_slack = other.min_slack;
            self.lhs = other.lhs;
            self.rhs = other.rhs;
        }
        for n in &other.notes {
            if !self.notes.contains(n) && self.notes.len() < 8 {
                self.notes.push(n.clone());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && !(self.min_slack < -self.tol) && !self.min_slack.is_nan()
    }
}

/// Merge per-instance reports by name, keeping first-seen order.
pub fn merge_reports(reports: impl IntoIterator<Item = CheckReport>) -> Vec<CheckReport> {
    let mut out: Vec<CheckReport> = Vec::new();
    for r in reports {
        match out.iter_mut().find(|o| o.name == r.name) {
            Some(o) => o.merge(&r),
            None => out.push(r),
        }
    }
    out
}

/// C_{K,σ²} = max{2, (128/σ²)‖Σ_w‖‖K−K₀‖²‖P_K‖³ log(3‖P_K‖)²}.
pub fn change_of_covariance_constant(sys: &SystemInstance, k: &DenseOperator, k0: &DenseOperator, sigma2_u: f64) -> Result<f64> {
    let pk = op_norm(&value_of_controller(&sys.a, &sys.b, &sys.q, &sys.r, k)?);
    let dk = op_norm(&(k - k0));
    let c = 128.0 / sigma2_u * op_norm(&sys.sigma_w) * dk * dk * pk.powi(3) * (3.0 * pk).ln().powi(2);
    Ok(c.max(2.0))
}

/// Σ(K, 0) ⪯ C_{K,σ²}·Σ(K₀, σ²). `scale` multiplies the constant (1 in normal use).
pub fn verify_change_of_covariance(
    sys: &SystemInstance,
    k: &DenseOperator,
    k0: &DenseOperator,
    sigma2_u: f64,
) -> Result<CheckReport> {
    verify_change_of_covariance_scaled(sys, k, k0, sigma2_u, 1.0)
}

pub fn verify_change_of_covariance_scaled(
    sys: &SystemInstance,
    k: &DenseOperator,
    k0: &DenseOperator,
    sigma2_u: f64,
    scale: f64,
) -> Result<CheckReport> {
    let target = stationary_cov(sys, k, 0.0)?;
    let explore = stationary_cov(sys, k0, sigma2_u)?;
    let c = change_of_covariance_constant(sys, k, k0, sigma2_u)? * scale;
    let rhs = explore * c;
    let mut report = CheckReport::new("change_of_covariance", PSD_TOL);
    report.hypothesis_satisfied = sigma2_u >= 1.0;
    report.record(op_norm(&target), op_norm(&rhs), psd_slack(&rhs, &target)?);
    report.seeds_run = 1;
    Ok(report)
}

/// dlyap((A+BK₁)ᵀ, Λ) ⪯ dlyap((A+BK₂)ᵀ, Λ̄) with
/// Λ̄ = 2Λ + 4B(K₁−K₂)·Σ_j A_cl1ʲ Λ A_cl1ᵀʲ (j+1)²·(K₁−K₂)ᵀBᵀ.
pub fn verify_change_of_covariance_general(
    a: &DenseOperator,
    b: &DenseOperator,
    k1: &DenseOperator,
    k2: &DenseOperator,
    lambda: &DenseOperator,
) -> Result<CheckReport> {
    verify_change_of_covariance_general_scaled(a, b, k1, k2, lambda, 1.0)
}

/// As above with Λ̄ multiplied by `scale`.
pub fn verify_change_of_covariance_general_scaled(
    a: &DenseOperator,
    b: &DenseOperator,
    k1: &DenseOperator,
    k2: &DenseOperator,
    lambda: &DenseOperator,
    scale: f64,
) -> Result<CheckReport> {
    let acl1 = a + b * k1;
    let acl2 = a + b * k2;
    let lhs = dlyap(&acl1.transpose(), lambda)?.x;
    let weighted = dlyapm(&acl1.transpose(), lambda, 2)?.x;
    let dk = k1 - k2;
    let bar = symmetrize(&(lambda * 2.0 + b * &dk * weighted * dk.transpose() * b.transpose() * 4.0)) * scale;
    let rhs = dlyap(&acl2.transpose(), &bar)?.x;
    let mut report = CheckReport::new("change_of_covariance_general", PSD_TOL);
    report.record(op_norm(&lhs), op_norm(&rhs), psd_slack(&rhs, &lhs)?);
    report.seeds_run = 1;
    Ok(report)
}

/// C_K = 2(1 + 64‖K₂−K₁‖²/σ²·‖Σ_{x,0}‖‖P₁‖³ log(2‖P₁‖)²), P₁ = P_{K₁}.
pub fn change_of_controller_constant(
    sys: &SystemInstance,
    k1: &DenseOperator,
    k2: &DenseOperator,
    sigma_x0: &DenseOperator,
    sigma2_u: f64,
) -> Result<f64> {
    let p1 = op_norm(&value_of_controller(&sys.a, &sys.b, &sys.q, &sys.r, k1)?);
    let dk = op_norm(&(k2 - k1));
    Ok(2.0 * (1.0 + 64.0 * dk * dk / sigma2_u * op_norm(sigma_x0) * p1.powi(3) * (2.0 * p1).ln().powi(2)))
}

/// dlyap((A+BK₁)ᵀ, Σ_{x,0}) ⪯ C_K·dlyap((A+BK₂)ᵀ, Σ_{x,0}) with Σ_{x,0} = Σ(K₀, σ²).
pub fn verify_change_of_controller(
    sys: &SystemInstance,
    k1: &DenseOperator,
    k2: &DenseOperator,
    k0: &DenseOperator,
    sigma2_u: f64,
) -> Result<CheckReport> {
    let sigma_x0 = stationary_cov(sys, k0, sigma2_u)?;
    let acl1 = sys.closed_loop(k1)?;
    let acl2 = sys.closed_loop(k2)?;
    let lhs = dlyap(&acl1.transpose(), &sigma_x0)?.x;
    let c = change_of_controller_constant(sys, k1, k2, &sigma_x0, sigma2_u)?;
    let rhs = dlyap(&acl2.transpose(), &sigma_x0)?.x * c;
    let mut report = CheckReport::new("change_of_controller", PSD_TOL);
    report.hypothesis_satisfied = sigma2_u > 0.0;
    report.record(op_norm(&lhs), op_norm(&rhs), psd_slack(&rhs, &lhs)?);
    report.seeds_run = 1;
    Ok(report)
}

/// Returns the identity report and the bound report.
///
/// Identity: J(K) − J⋆ = tr((R+BᵀP⋆B)(K−K⋆)Σ(K)(K−K⋆)ᵀ), relative tolerance 1e−6.
/// Bound: J(K) − J⋆ ≤ C_{K,σ²}‖R+BᵀP⋆B‖‖(K−K⋆)Σ_{x,0}^{1/2}‖²_HS.
pub fn verify_performance_difference(
    sys: &SystemInstance,
    k: &DenseOperator,
    k0: &DenseOperator,
    sigma2_u: f64,
) -> Result<(CheckReport, CheckReport)> {
    let opt = sys.optimal()?;
    let gap = infinite_horizon_cost(sys, k)? - sys.j_star()?;
    let dk = k - &opt.k;
    let inner = symmetrize(&(&sys.r + sys.b.transpose() * &opt.p * &sys.b));
    let sig_k = stationary_cov(sys, k, 0.0)?;
    let identity = (&inner * &dk * sig_k * dk.transpose()).trace();
    let scale = gap.abs().max(identity.abs()).max(1e-300);
    let mut id = CheckReport::new("performance_difference_identity", 1e-6);
    id.record(gap, identity, -(gap - identity).abs() / scale);
    id.seeds_run = 1;
    let rad = spectral_radius(&sys.closed_loop(k)?)?;
    if rad > 0.99 {
        id.notes.push(format!("closed-loop spectral radius {rad:.4}; ill-conditioned evaluation"));
    }

    let sigma_half = SpectralDecomposition::new(&stationary_cov(sys, k0, sigma2_u)?)?.sqrt();
    let c = change_of_covariance_constant(sys, k, k0, sigma2_u)?;
    let rhs = c * op_norm(&inner) * hs_norm(&(&dk * sigma_half)).powi(2);
    let mut bound = CheckReport::new("performance_difference_bound", PSD_TOL);
    bound.hypothesis_satisfied = sigma2_u >= 1.0;
    bound.record(gap, rhs, (rhs - gap) / (1.0 + rhs.abs()));
    bound.seeds_run = 1;
    Ok((id, bound))
}

/// End-to-end ε² law from a perturbation probe: slope in [1.8, 2.2], median
/// doubling ratio in [3.4, 4.6] and median gap non-decreasing in ε.
pub fn verify_end_to_end(
    sys: &SystemInstance,
    k0: &DenseOperator,
    sigma2_u: f64,
    eps_grid: &[f64],
    seeds: &[u64],
) -> Result<(CheckReport, ProbeTable)> {
    let table = perturbation_probe(sys, k0, sigma2_u, eps_grid, seeds)?;
    Ok((end_to_end_report(&table, eps_grid), table))
}

pub fn end_to_end_report(table: &ProbeTable, eps_grid: &[f64]) -> CheckReport {
    let mut report = CheckReport::new("end_to_end_eps_squared", 0.0);
    report.seeds_run = table.rows.len();
    let slope_slack = (table.slope - 1.8).min(2.2 - table.slope);
    report.record(table.slope, 2.0, slope_slack);
    let ratio = table.median_doubling_ratio;
    report.record(ratio, 4.0, (ratio - 3.4).min(4.6 - ratio));
    let mut grid: Vec<f64> = eps_grid.iter().copied().filter(|e| *e > 0.0).collect();
    grid.sort_by(f64::total_cmp);
    let medians: Vec<f64> = grid
        .iter()
        .map(|&e| {
            let g: Vec<f64> = table.rows.iter().filter(|r| r.eps == e && r.stabilized).map(|r| r.gap).collect();
            median(&g)
        })
        .collect();
    for w in medians.windows(2) {
        report.record(w[1], w[0], (w[1] - w[0]) / (1.0 + w[0].abs()));
    }
    if table.rows_outside_c_stable > 0 {
        report.notes.push(format!(
            "{} of {} rows have ε_op above C_stable = {:.3e}",
            table.rows_outside_c_stable,
            table.rows.len(),
            table.c_stable
        ));
    }
    report
}

/// K = K⋆ + δG with G Gaussian, δ halved from 0.5 until the closed loop is stable.
pub fn random_stabilizing_gain(sys: &SystemInstance, rng: &mut ChaCha8Rng) -> Result<DenseOperator> {
    let kstar = sys.optimal()?.k.clone();
    let g = rng::normal_matrix(rng, sys.input_dim(), sys.dim());
    let mut delta = 0.5;
    for _ in 0..60 {
        let k = &kstar + &g * delta;
        if spectral_radius(&sys.closed_loop(&k)?)? < 1.0 - 1e-6 {
            return Ok(k);
        }
        delta *= 0.5;
    }
    Ok(kstar)
}

/// K = K⋆ + δG with δ bisected so that the closed-loop spectral radius is `target`.
pub fn gain_at_radius(sys: &SystemInstance, rng: &mut ChaCha8Rng, target: f64) -> Result<DenseOperator> {
    let kstar = sys.optimal()?.k.clone();
    let g = rng::normal_matrix(rng, sys.input_dim(), sys.dim());
    let radius = |delta: f64| -> Result<f64> { spectral_radius(&sys.closed_loop(&(&kstar + &g * delta))?) };
    let mut hi = 1.0;
    while radius(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::BadSpec("could not reach the target spectral radius".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if radius(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(&kstar + &g * lo)
}

/// Gaussian matrix rescaled to the given spectral radius.
pub fn random_stable_matrix(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Result<DenseOperator> {
    let g = rng::normal_matrix(rng, d, d);
    let r = spectral_radius(&g)?;
    Ok(if r > 0.0 { g * (radius / r) } else { g })
}

/// G Gᵀ / cols for a Gaussian d×cols G.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, cols: usize) -> DenseOperator {
    let g = rng::normal_matrix(rng, d, cols);
    symmetrize(&(&g * g.transpose() / cols.max(1) as f64))
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    lo + (hi - lo) * rng.random::<f64>()
}

/// Spectrum comparison over a (j, n) grid sharing one Σ and P.
pub fn verify_spectrum_comparison_grid(
    a: &DenseOperator,
    lambda: &DenseOperator,
    js: &[usize],
    ns: &[usize],
) -> Result<CheckReport> {
    let d = a.nrows();
    let sigma = dlyap(&a.transpose(), lambda)?.x;
    let pn = op_norm(&dlyap(a, &DMatrix::identity(d, d))?.x);
    let q = (1.0 - 1.0 / pn).max(0.0);
    let s_eigs = SpectralDecomposition::new(&sigma)?.clamped();
    let l_eigs = SpectralDecomposition::new(&symmetrize(lambda))?.clamped();
    let at = |v: &[f64], i: usize| if i >= 1 && i <= v.len() { v[i - 1] } else { 0.0 };
    let lam_norm = op_norm(lambda);
    let mut report = CheckReport::new("spectrum_comparison", 1e-9);
    for &n in ns {
        let qn = q.powi(n as i32);
        for &j in js {
            let idx = j.div_ceil(n + 1);
            let lhs1 = at(&s_eigs, j);
            let rhs1 = pn * pn * (at(&l_eigs, idx) + qn * lam_norm);
            report.record(lhs1, rhs1, (rhs1 - lhs1) / (1.0 + rhs1.abs()));
            let lhs2: f64 = s_eigs.iter().skip(j.saturating_sub(1)).sum();
            let tail: f64 = l_eigs.iter().skip(idx.saturating_sub(1)).sum();
            let rhs2 = (n as f64 + 1.0) * pn * pn * (tail + qn * lambda.trace());
            report.record(lhs2, rhs2, (rhs2 - lhs2) / (1.0 + rhs2.abs()));
        }
    }
    report.seeds_run = 1;
    Ok(report)
}

/// dlyapm truncation bound over a grid of n for m ∈ {1, 2}, sharing the series.
pub fn verify_dlyapm_bound_grid(a: &DenseOperator, sigma: &DenseOperator, ns: &[usize]) -> Result<Vec<CheckReport>> {
    let d = a.nrows();
    let at = a.transpose();
    let base = dlyap(&at, sigma)?.x;
    let pn = op_norm(&dlyap(a, &DMatrix::identity(d, d))?.x);
    let sn = op_norm(sigma);
    let mut out = Vec::new();
    for m in 1..=2u32 {
        let lhs = dlyapm(&at, sigma, m)?.x;
        let mut report = CheckReport::new(&format!("dlyapm_bound_m{m}"), PSD_TOL);
        for &n in ns {
            let nf = n as f64;
            let poly = if m == 1 { nf + 1.0 } else { nf * nf + 2.0 * nf + 2.0 };
            let shift = poly * sn * pn.powi(2 + m as i32) * (-nf / pn).exp();
            let rhs = &base * nf.powi(m as i32) + DMatrix::identity(d, d) * shift;
            report.record(op_norm(&lhs), op_norm(&rhs), psd_slack(&rhs, &lhs)?);
        }
        report.seeds_run = 1;
        out.push(report);
    }
    Ok(out)
}

/// Direct (Kronecker) and series solutions agree within 1e−7 op-norm.
pub fn check_direct_series_agreement(a: &DenseOperator, lambda: &DenseOperator) -> Result<CheckReport> {
    let x1 = dlyap_direct(a, lambda)?.x;
    let x2 = dlyap_series(a, lambda, &LyapunovOptions::default())?.x;
    let err = op_norm(&(&x1 - &x2));
    let mut report = CheckReport::new("direct_series_agreement", 1e-7);
    report.record(op_norm(&x1), op_norm(&x2), -err);
    report.seeds_run = 1;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub dims: Vec<usize>,
    /// Random instances per dimension.
    pub instances: usize,
    pub master_seed: u64,
    /// Multiplier on the change-of-covariance constants (both the lemma and the
    /// general form); below 1 is a negative control.
    #[serde(default = "one")]
    pub constant_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { dims: vec![12], instances: 200, master_seed: 0, constant_scale: 1.0 }
    }
}

fn lyapunov_instance(d: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut r = rng::stream(seed, 0x11);
    let rho = uniform(&mut r, 0.2, 0.95);
    let a = random_stable_matrix(&mut r, d, rho)?;
    let lam1 = random_psd(&mut r, d, 1 + (seed as usize % d));
    let lam2 = &lam1 + random_psd(&mut r, d, d);
    let sigma_ge_i = DMatrix::identity(d, d) + random_psd(&mut r, d, d);
    let mut reps = vec![
        check_repeated_identity(&a, &lam2)?,
        check_monotonicity(&a, &lam1, &lam2)?,
        check_series_bound(&a, &sigma_ge_i, 20)?,
        check_trace_bound(&a, &lam2)?,
        verify_spectrum_comparison_grid(&a, &lam1, &(1..=d).collect::<Vec<_>>(), &[1, 2, 4, 8, 16])?,
    ];
    reps.extend(verify_dlyapm_bound_grid(&a, &lam2, &[0, 1, 2, 4, 8, 16, 32])?);
    Ok(reps)
}

/// Lyapunov identity and bound checks over random stable instances.
pub fn lyapunov_suite(cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    if cfg.dims.is_empty() || cfg.instances == 0 {
        return Err(Error::EmptyGrid);
    }
    let jobs: Vec<(usize, u64)> = cfg
        .dims
        .iter()
        .flat_map(|&d| (0..cfg.instances as u64).map(move |i| (d, i)))
        .collect();
    let all = jobs
        .par_iter()
        .map(|&(d, i)| lyapunov_instance(d, rng::run_seed(cfg.master_seed ^ (d as u64) << 32, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_reports(all.into_iter().flatten()))
}

fn covariance_instance(d: usize, seed: u64, scale: f64) -> Result<Vec<CheckReport>> {
    let d_u = 1 + (seed as usize % 4);
    let spec = DecaySpec {
        aligned: seed.is_multiple_of(2),
        ..DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, d, d_u.min(d))
    };
    let sys = make_decay_instance(&spec, seed)?;
    let mut r = rng::stream(seed, 0x22);
    let k = random_stabilizing_gain(&sys, &mut r)?;
    let k0 = random_stabilizing_gain(&sys, &mut r)?;
    let k2 = random_stabilizing_gain(&sys, &mut r)?;
    let sigma2 = 1.0;
    let lam = random_psd(&mut r, d, d);
    let (id, bound) = verify_performance_difference(&sys, &k, &k0, sigma2)?;
    let opt = sys.optimal()?;
    let pk = value_of_controller(&sys.a, &sys.b, &sys.q, &sys.r, &k)?;
    let mut dom = CheckReport::new("value_dominates_optimal", 1e-7);
    dom.record(op_norm(&opt.p), op_norm(&pk), psd_slack(&pk, &opt.p)?);
    dom.seeds_run = 1;
    Ok(vec![
        verify_change_of_covariance_scaled(&sys, &k, &k0, sigma2, scale)?,
        verify_change_of_covariance_general_scaled(&sys.a, &sys.b, &k, &k2, &lam, scale)?,
        verify_change_of_controller(&sys, &k, &k2, &k0, sigma2)?,
        id,
        bound,
        dom,
    ])
}

/// Change-of-covariance, change-of-controller and performance-difference checks
/// over random stabilizing controller pairs.
pub fn covariance_suite(cfg: &SuiteConfig) -> Result<Vec<CheckReport>> {
    if cfg.dims.is_empty() || cfg.instances == 0 {
        return Err(Error::EmptyGrid);
    }
    let jobs: Vec<(usize, u64)> = cfg
        .dims
        .iter()
        .flat_map(|&d| (0..cfg.instances as u64).map(move |i| (d, i)))
        .collect();
    let all = jobs
        .par_iter()
        .map(|&(d, i)| covariance_instance(d, rng::run_seed(cfg.master_seed ^ (d as u64) << 32, i), cfg.constant_scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_reports(all.into_iter().flatten()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_lower_bound, LowerBoundKind};

    #[test]
    fn report_bookkeeping() {
        let mut r = CheckReport::new("x", 1e-8);
        r.record(1.0, 2.0, 0.5);
        r.record(1.0, 1.0, -1e-9);
        assert!(r.passed());
        r.record(3.0, 1.0, -0.1);
        assert!(!r.passed());
        assert_eq!(r.violations, 1);
        assert_eq!(r.lhs, 3.0);
    }

    #[test]
    fn trivial_cases() {
        let sys = make_decay_instance(&DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 6, 2), 1).unwrap();
        let k0 = sys.optimal().unwrap().k.clone();
        let r = verify_change_of_covariance(&sys, &k0, &k0, 1.0).unwrap();
        assert!(r.passed());
        let r = verify_change_of_covariance_general(&sys.a, &sys.b, &k0, &k0, &DMatrix::identity(6, 6)).unwrap();
        assert!(r.passed() && r.min_slack >= 0.0);
        let r = verify_change_of_controller(&sys, &k0, &k0, &k0, 1.0).unwrap();
        assert!(r.passed());
        let (id, bound) = verify_performance_difference(&sys, &k0, &k0, 1.0).unwrap();
        assert!(id.lhs.abs() < 1e-9 && id.rhs.abs() < 1e-12);
        assert!(bound.passed());

        let zb = make_lower_bound(LowerBoundKind::ZeroB, 3, 2).unwrap();
        let k = DMatrix::from_element(2, 3, 0.7);
        let r = verify_change_of_covariance(&zb, &k, &DMatrix::zeros(2, 3), 1.0).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn controller_constant_non_increasing_in_sigma() {
        let sys = make_decay_instance(&DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 5, 2), 4).unwrap();
        let mut r = rng::stream(4, 9);
        let k1 = random_stabilizing_gain(&sys, &mut r).unwrap();
        let k2 = random_stabilizing_gain(&sys, &mut r).unwrap();
        let s = stationary_cov(&sys, &k1, 1.0).unwrap();
        let c1 = change_of_controller_constant(&sys, &k1, &k2, &s, 1.0).unwrap();
        let c10 = change_of_controller_constant(&sys, &k1, &k2, &s, 10.0).unwrap();
        assert!(c10 <= c1);
    }

    #[test]
    fn near_unstable_identity() {
        let sys = make_decay_instance(&DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 8, 2), 2).unwrap();
        let mut r = rng::stream(2, 5);
        let k = gain_at_radius(&sys, &mut r, 0.999).unwrap();
        let rad = spectral_radius(&sys.closed_loop(&k).unwrap()).unwrap();
        assert!((rad - 0.999).abs() < 1e-6);
        let k0 = sys.optimal().unwrap().k.clone();
        let (id, _) = verify_performance_difference(&sys, &k, &k0, 1.0).unwrap();
        assert!(id.passed(), "{id:?}");
        assert!(!id.notes.is_empty());
    }
}
