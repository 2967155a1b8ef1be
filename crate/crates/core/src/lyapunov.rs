//! Discrete Lyapunov operators and checks of their structural bounds.
//!
//! `dlyap(A, Λ)` solves X = AᵀXA + Λ, i.e. X = Σ_j (Aᵀ)ʲΛAʲ.
//! `dlyapm(A, Λ, m)` is the weighted series Σ_j (Aᵀ)ʲΛAʲ (j+1)ᵐ.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{
    ensure_square, ensure_stable, ensure_symmetric, hs_norm, op_norm, psd_slack, symmetrize,
    DenseOperator, SpectralDecomposition,
};
use crate::systems::SystemInstance;
use crate::verify::CheckReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovMethod {
    Direct,
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    /// Relative accuracy target for the series path.
    pub tol: f64,
    /// Dimensions up to this use the vectorized Kronecker solve.
    pub direct_max_dim: usize,
    pub max_terms: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self { tol: 1e-14, direct_max_dim: 20, max_terms: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub x: DenseOperator,
    /// ‖AᵀXA + Λ − X‖_op for dlyap; the certified tail bound for dlyapm.
    pub residual: f64,
    pub method: LyapunovMethod,
    /// Number of series terms summed (0 for the direct method).
    pub terms: usize,
    /// Set when the term cap was hit before the tail bound met the tolerance.
    pub truncated: bool,
}

pub fn tol_lyap(lambda: &DenseOperator) -> f64 {
    1e-8 * (1.0 + op_norm(lambda))
}

fn check_inputs(a: &DenseOperator, lambda: &DenseOperator) -> Result<()> {
    ensure_square(a)?;
    ensure_symmetric(lambda)?;
    if a.nrows() != lambda.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, Λ is {}x{}",
            a.nrows(),
            a.ncols(),
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    ensure_stable(a)
}

pub fn lyapunov_residual(a: &DenseOperator, lambda: &DenseOperator, x: &DenseOperator) -> f64 {
    op_norm(&(a.transpose() * x * a + lambda - x))
}

pub fn dlyap(a: &DenseOperator, lambda: &DenseOperator) -> Result<LyapunovSolution> {
    dlyap_with(a, lambda, &LyapunovOptions::default())
}

pub fn dlyap_with(
    a: &DenseOperator,
    lambda: &DenseOperator,
    opts: &LyapunovOptions,
) -> Result<LyapunovSolution> {
    check_inputs(a, lambda)?;
    if a.nrows() <= opts.direct_max_dim {
        direct_unchecked(a, lambda)
    } else {
        Ok(series_unchecked(a, lambda, opts))
    }
}

/// Kronecker solve of (I − Aᵀ⊗Aᵀ) vec X = vec Λ.
pub fn dlyap_direct(a: &DenseOperator, lambda: &DenseOperator) -> Result<LyapunovSolution> {
    check_inputs(a, lambda)?;
    direct_unchecked(a, lambda)
}

/// Squared-doubling series: S ← S + MᵀSM, M ← M².
pub fn dlyap_series(
    a: &DenseOperator,
    lambda: &DenseOperator,
    opts: &LyapunovOptions,
) -> Result<LyapunovSolution> {
    check_inputs(a, lambda)?;
    Ok(series_unchecked(a, lambda, opts))
}

fn direct_unchecked(a: &DenseOperator, lambda: &DenseOperator) -> Result<LyapunovSolution> {
    let n = a.nrows();
    if n == 0 {
        return Ok(LyapunovSolution {
            x: DMatrix::zeros(0, 0),
            residual: 0.0,
            method: LyapunovMethod::Direct,
            terms: 0,
            truncated: false,
        });
    }
    let at = a.transpose();
    let m = DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at);
    let rhs = nalgebra::DVector::from_column_slice(lambda.as_slice());
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or(Error::Unstable(1.0))?;
    let x = symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice()));
    let residual = lyapunov_residual(a, lambda, &x);
    Ok(LyapunovSolution { x, residual, method: LyapunovMethod::Direct, terms: 0, truncated: false })
}

fn series_unchecked(
    a: &DenseOperator,
    lambda: &DenseOperator,
    opts: &LyapunovOptions,
) -> LyapunovSolution {
    let tol_abs = opts.tol * (1.0 + op_norm(lambda));
    let mut s = lambda.clone();
    let mut m = a.clone();
    let mut terms = 1usize;
    let mut truncated = false;
    loop {
        // ‖M‖_op² ≤ ‖M‖_F² bounds every remaining block: X − S = MᵀXM.
        let q = hs_norm(&m).powi(2);
        if q == 0.0 || (q < 1.0 && q * hs_norm(&s) / (1.0 - q) <= tol_abs) {
            break;
        }
        if terms.saturating_mul(2) > opts.max_terms {
            truncated = true;
            break;
        }
        s = &s + m.transpose() * &s * &m;
        s = symmetrize(&s);
        m = &m * &m;
        terms *= 2;
    }
    let residual = lyapunov_residual(a, lambda, &s);
    LyapunovSolution { x: s, residual, method: LyapunovMethod::Series, terms, truncated }
}

/// Σ_{j≥0} (i+N+1)ᵐ qⁱ in closed form, c = 1 − q.
fn shifted_weight_sum(m: u32, n: f64, c: f64) -> f64 {
    match m {
        0 => 1.0 / c,
        1 => 1.0 / (c * c) + n / c,
        _ => (2.0 - c) / c.powi(3) + 2.0 * n / (c * c) + n * n / c,
    }
}

pub fn dlyapm(a: &DenseOperator, lambda: &DenseOperator, m: u32) -> Result<LyapunovSolution> {
    dlyapm_with(a, lambda, m, &LyapunovOptions::default())
}

/// Weighted series by doubling on the moment sums U_p(N) = Σ_{j<N} jᵖ (Aᵀ)ʲΛAʲ.
///
/// The tail past N = 2ᵏ is bounded by ‖Λ‖‖Aᴺ‖²‖P‖ Σ_i (i+N+1)ᵐ qⁱ with
/// P = dlyap(A, I) and q = 1 − 1/‖P‖.
pub fn dlyapm_with(
    a: &DenseOperator,
    lambda: &DenseOperator,
    m: u32,
    opts: &LyapunovOptions,
) -> Result<LyapunovSolution> {
    if m > 2 {
        return Err(Error::UnsupportedOrder(m));
    }
    check_inputs(a, lambda)?;
    let n = a.nrows();
    let p_norm = op_norm(&dlyap_with(a, &DMatrix::identity(n, n), opts)?.x).max(1.0);
    let c = 1.0 / p_norm;
    let lam_norm = op_norm(lambda);
    let tol_abs = opts.tol * (1.0 + lam_norm);
    let mu = m as usize;

    let mut u: Vec<DenseOperator> = vec![lambda.clone(); mu + 1];
    for up in u.iter_mut().skip(1) {
        up.fill(0.0);
    }
    let mut mpow = a.clone();
    let mut big_n = 1usize;
    let mut truncated = false;
    let mut tail;
    loop {
        let mn = op_norm(&mpow);
        tail = lam_norm * mn * mn * p_norm * shifted_weight_sum(m, big_n as f64, c);
        if mn == 0.0 || tail <= tol_abs {
            break;
        }
        if big_n.saturating_mul(2) > opts.max_terms {
            truncated = true;
            break;
        }
        let nf = big_n as f64;
        let mt = mpow.transpose();
        let mut next = u.clone();
        for p in 0..=mu {
            // Σ_{j<N} (j+N)ᵖ T_j = Σ_q C(p,q) N^{p−q} U_q.
            let mut inner = DMatrix::zeros(n, n);
            for (q, uq) in u.iter().enumerate().take(p + 1) {
                inner += uq * (binom(p, q) * nf.powi((p - q) as i32));
            }
            next[p] = symmetrize(&(&u[p] + &mt * inner * &mpow));
        }
        u = next;
        mpow = &mpow * &mpow;
        big_n *= 2;
    }
    // Σ_j (j+1)ᵐ T_j = Σ_q C(m,q) U_q.
    let mut x = DMatrix::zeros(n, n);
    for (q, uq) in u.iter().enumerate().take(mu + 1) {
        x += uq * binom(mu, q);
    }
    Ok(LyapunovSolution {
        x: symmetrize(&x),
        residual: tail,
        method: LyapunovMethod::Series,
        terms: big_n,
        truncated,
    })
}

fn binom(n: usize, k: usize) -> f64 {
    match (n, k) {
        (_, 0) => 1.0,
        (n, k) if k == n => 1.0,
        (2, 1) => 2.0,
        _ => {
            let mut r = 1.0;
            for i in 0..k {
                r = r * (n - i) as f64 / (i + 1) as f64;
            }
            r
        }
    }
}

/// Σ(K, σ²) = dlyap((A+BK)ᵀ, Σ_w + σ² BBᵀ).
pub fn stationary_cov(sys: &SystemInstance, k: &DenseOperator, sigma2_u: f64) -> Result<DenseOperator> {
    let acl = sys.closed_loop(k)?;
    let lam = &sys.sigma_w + (&sys.b * sys.b.transpose()) * sigma2_u;
    Ok(dlyap(&acl.transpose(), &symmetrize(&lam))?.x)
}

pub const PSD_TOL: f64 = 1e-8;

fn sorted_eigs(s: &DenseOperator) -> Result<Vec<f64>> {
    Ok(SpectralDecomposition::new(&symmetrize(s))?.clamped())
}

/// σ_j(Σ) ≤ ‖P‖²(σ_⌈j/(n+1)⌉(Λ) + qⁿ‖Λ‖) and the tail-sum variant, with
/// Σ = dlyap(Aᵀ, Λ), P = dlyap(A, I), q = 1 − 1/‖P‖. Indices are 1-based.
pub fn verify_spectrum_comparison(
    a: &DenseOperator,
    lambda: &DenseOperator,
    j: usize,
    n: usize,
) -> Result<CheckReport> {
    let d = a.nrows();
    let sigma = dlyap(&a.transpose(), lambda)?.x;
    let p = dlyap(a, &DMatrix::identity(d, d))?.x;
    let pn = op_norm(&p);
    let q = (1.0 - 1.0 / pn).max(0.0);
    let s_eigs = sorted_eigs(&sigma)?;
    let l_eigs = sorted_eigs(lambda)?;
    let at = |v: &[f64], i: usize| if i >= 1 && i <= v.len() { v[i - 1] } else { 0.0 };
    let idx = j.div_ceil(n + 1);
    let lam_norm = op_norm(lambda);
    let qn = q.powi(n as i32);

    let mut report = CheckReport::new("spectrum_comparison", 1e-9);
    let lhs1 = at(&s_eigs, j);
    let rhs1 = pn * pn * (at(&l_eigs, idx) + qn * lam_norm);
    report.record(lhs1, rhs1, (rhs1 - lhs1) / (1.0 + rhs1.abs()));
    let lhs2: f64 = s_eigs.iter().skip(j.saturating_sub(1)).sum();
    let tail_l: f64 = l_eigs.iter().skip(idx.saturating_sub(1)).sum();
    let rhs2 = (n as f64 + 1.0) * pn * pn * (tail_l + qn * lambda.trace());
    report.record(lhs2, rhs2, (rhs2 - lhs2) / (1.0 + rhs2.abs()));
    report.seeds_run = 1;
    Ok(report)
}

/// dlyapm(Aᵀ,Σ,m) ⪯ nᵐ·dlyap(Aᵀ,Σ) + c_m(n)‖Σ‖‖P‖^{2+m} e^{−n/‖P‖} I with
/// P = dlyap(A, I), c_1 = n+1, c_2 = n²+2n+2.
pub fn verify_dlyapm_bound(
    a: &DenseOperator,
    sigma: &DenseOperator,
    n: usize,
    m: u32,
) -> Result<CheckReport> {
    if m == 0 || m > 2 {
        return Err(Error::UnsupportedOrder(m));
    }
    let d = a.nrows();
    let at = a.transpose();
    let lhs = dlyapm(&at, sigma, m)?.x;
    let base = dlyap(&at, sigma)?.x;
    let pn = op_norm(&dlyap(a, &DMatrix::identity(d, d))?.x);
    let nf = n as f64;
    let poly = if m == 1 { nf + 1.0 } else { nf * nf + 2.0 * nf + 2.0 };
    let shift = poly * op_norm(sigma) * pn.powi(2 + m as i32) * (-nf / pn).exp();
    let rhs = base * nf.powi(m as i32) + DMatrix::identity(d, d) * shift;
    let mut report = CheckReport::new(&format!("dlyapm_bound_m{m}"), PSD_TOL);
    report.record(op_norm(&lhs), op_norm(&rhs), psd_slack(&rhs, &lhs)?);
    report.seeds_run = 1;
    Ok(report)
}

/// dlyap(Aᵀ, dlyap(Aᵀ,Σ)) against the weighted series dlyapm(Aᵀ,Σ,1).
pub fn check_repeated_identity(a: &DenseOperator, sigma: &DenseOperator) -> Result<CheckReport> {
    let at = a.transpose();
    let twice = dlyap(&at, &dlyap(&at, sigma)?.x)?.x;
    let weighted = dlyapm(&at, sigma, 1)?.x;
    let err = op_norm(&(&twice - &weighted)) / (1.0 + op_norm(&weighted));
    let mut report = CheckReport::new("repeated_dlyap_identity", 1e-7);
    report.record(op_norm(&twice), op_norm(&weighted), -err);
    report.seeds_run = 1;
    Ok(report)
}

/// Λ₁ ⪯ Λ₂ ⇒ dlyap(A,Λ₁) ⪯ dlyap(A,Λ₂).
pub fn check_monotonicity(
    a: &DenseOperator,
    lambda1: &DenseOperator,
    lambda2: &DenseOperator,
) -> Result<CheckReport> {
    let x1 = dlyap(a, lambda1)?.x;
    let x2 = dlyap(a, lambda2)?.x;
    let mut report = CheckReport::new("dlyap_monotonicity", PSD_TOL);
    report.hypothesis_satisfied = psd_slack(lambda2, lambda1)? >= -1e-12;
    if report.hypothesis_satisfied {
        report.record(op_norm(&x1), op_norm(&x2), psd_slack(&x2, &x1)?);
    }
    report.seeds_run = 1;
    Ok(report)
}

/// (Aᵀ)ʲPAʲ ⪯ P(1 − 1/‖P‖)ʲ for P = dlyap(A,Σ), Σ ⪰ I, j = 1..=j_max.
pub fn check_series_bound(a: &DenseOperator, sigma: &DenseOperator, j_max: usize) -> Result<CheckReport> {
    let p = dlyap(a, sigma)?.x;
    let pn = op_norm(&p);
    let q = 1.0 - 1.0 / pn;
    let mut report = CheckReport::new("lyapunov_series_bound", PSD_TOL);
    report.hypothesis_satisfied =
        crate::operator::min_eigenvalue(sigma) >= 1.0 - 1e-12;
    if report.hypothesis_satisfied {
        let mut aj = a.clone();
        for j in 1..=j_max {
            let lhs = aj.transpose() * &p * &aj;
            let rhs = &p * q.powi(j as i32);
            report.record(op_norm(&lhs), op_norm(&rhs), psd_slack(&rhs, &symmetrize(&lhs))?);
            aj = &aj * a;
        }
    }
    report.seeds_run = 1;
    Ok(report)
}

/// tr(dlyap(A,Λ)) ≤ ‖dlyap(Aᵀ,I)‖ tr(Λ) for PSD Λ.
pub fn check_trace_bound(a: &DenseOperator, lambda: &DenseOperator) -> Result<CheckReport> {
    let d = a.nrows();
    let lhs = dlyap(a, lambda)?.x.trace();
    let rhs = op_norm(&dlyap(&a.transpose(), &DMatrix::identity(d, d))?.x) * lambda.trace();
    let mut report = CheckReport::new("dlyap_trace_bound", PSD_TOL);
    report.record(lhs, rhs, (rhs - lhs) / (1.0 + rhs.abs()));
    report.seeds_run = 1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar(v: f64) -> DenseOperator {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_geometric_series() {
        let s = dlyap(&scalar(0.5), &scalar(1.0)).unwrap();
        assert!((s.x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        let opts = LyapunovOptions { direct_max_dim: 0, ..Default::default() };
        let s = dlyap_with(&scalar(0.5), &scalar(1.0), &opts).unwrap();
        assert_eq!(s.method, LyapunovMethod::Series);
        assert!((s.x[(0, 0)] - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn nilpotent_and_half_identity() {
        let lam = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = dlyap(&DMatrix::zeros(2, 2), &lam).unwrap();
        assert!((s.x - &lam).amax() < 1e-15);
        let s = dlyap(&(DMatrix::identity(4, 4) * 0.5), &DMatrix::identity(4, 4)).unwrap();
        assert!(op_norm(&(s.x - DMatrix::identity(4, 4) * (4.0 / 3.0))) < 1e-12);
        assert!(s.residual <= tol_lyap(&DMatrix::identity(4, 4)));
    }

    #[test]
    fn unstable_and_mismatch_rejected() {
        assert!(matches!(dlyap(&scalar(1.2), &scalar(1.0)), Err(Error::Unstable(_))));
        assert!(matches!(
            dlyap(&DMatrix::zeros(2, 2), &DMatrix::identity(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            dlyapm(&scalar(0.5), &scalar(1.0), 3),
            Err(Error::UnsupportedOrder(3))
        ));
    }

    #[test]
    fn dlyapm_scalar_closed_forms() {
        // Σ(j+1)·0.25ʲ = 1/(1−0.25)² = 16/9.
        let s = dlyapm(&scalar(0.5), &scalar(1.0), 1).unwrap();
        assert!((s.x[(0, 0)] - 16.0 / 9.0).abs() < 1e-12);
        // Σ(j+1)²rʲ = (1+r)/(1−r)³ at r = 0.25.
        let s = dlyapm(&scalar(0.5), &scalar(1.0), 2).unwrap();
        assert!((s.x[(0, 0)] - 1.25 / 0.421875).abs() < 1e-12);
        let lam = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        for m in 1..=2 {
            let s = dlyapm(&DMatrix::zeros(2, 2), &lam, m).unwrap();
            assert!((s.x - &lam).amax() < 1e-15);
        }
    }

    #[test]
    fn dlyapm_bound_scalar_closed_form() {
        // a = 0.9, σ = 1, n = 10, m = 1: LHS = 1/(1−0.81)², dlyap = 1/(1−0.81), ‖P‖ = 1/0.19.
        let r = verify_dlyapm_bound(&scalar(0.9), &scalar(1.0), 10, 1).unwrap();
        let lhs = 1.0 / 0.19f64.powi(2);
        let p: f64 = 1.0 / 0.19;
        let rhs = 10.0 / 0.19 + 11.0 * p.powi(3) * (-10.0 / p).exp();
        assert!((r.lhs - lhs).abs() < 1e-9 * lhs);
        assert!((r.rhs - rhs).abs() < 1e-9 * rhs);
        assert!(r.passed());
    }

    #[test]
    fn shifted_weight_sums_match_direct_summation() {
        for &c in &[0.05, 0.3, 0.9] {
            for &n in &[0.0, 3.0, 17.0] {
                for m in 0..=2u32 {
                    let q: f64 = 1.0 - c;
                    let direct: f64 =
                        (0..20000).map(|i| (i as f64 + n + 1.0).powi(m as i32) * q.powi(i)).sum();
                    let closed = shifted_weight_sum(m, n, c);
                    assert!((direct - closed).abs() < 1e-9 * closed, "m={m} n={n} c={c}");
                }
            }
        }
    }

    #[test]
    fn spectrum_comparison_half_identity() {
        let a = DMatrix::identity(6, 6) * 0.5;
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(
            6,
            (1..=6).map(|j| 1.0 / (j as f64).powi(2)),
        ));
        for j in 1..=6 {
            for &n in &[1, 4, 16] {
                assert!(verify_spectrum_comparison(&a, &lam, j, n).unwrap().passed());
            }
        }
        let z = DMatrix::zeros(6, 6);
        let r = verify_spectrum_comparison(&z, &lam, 2, 1).unwrap();
        assert!(r.min_slack >= 0.0);
    }
}
