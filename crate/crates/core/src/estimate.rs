//! Ridge and least-squares identification from one trajectory, the weighted
//! safe-set projection, and empirical covariance checks.

use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{stationary_cov, PSD_TOL};
use crate::operator::{
    hs_norm, max_eigenvalue, min_eigenvalue, op_norm, psd_slack, symmetrize, DenseOperator,
    SpectralDecomposition,
};
use crate::simulate::{initial_state, rollout, InitialMode, Policy, Trajectory};
use crate::systems::SystemInstance;

/// (1/T) Σ x_t x_tᵀ over the T pre-transition states.
pub fn empirical_cov(traj: &Trajectory) -> DenseOperator {
    let t = traj.len();
    let x = traj.states.columns(0, t);
    symmetrize(&(x * x.transpose() / t as f64))
}

/// Â_cl = (1/T Σ x_{t+1}x_tᵀ)(1/T Σ x_t x_tᵀ + λI)⁻¹.
pub fn ridge_acl(traj: &Trajectory, lambda: f64) -> Result<DenseOperator> {
    if !(lambda > 0.0) {
        return Err(Error::BadSpec(format!("ridge weight must be positive, got {lambda}")));
    }
    let t = traj.len();
    let d = traj.states.nrows();
    let x = traj.states.columns(0, t);
    let y = traj.states.columns(1, t);
    let tf = t as f64;
    let gram = symmetrize(&(x * x.transpose() / tf)) + DMatrix::identity(d, d) * lambda;
    let cross = y * x.transpose() / tf;
    let chol = Cholesky::new(gram).ok_or_else(|| Error::SingularGram("ridge Gram".into()))?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// B̂ = (Σ x_{t+1}v_tᵀ)(Σ v_t v_tᵀ)⁻¹.
pub fn ols_b(traj: &Trajectory) -> Result<DenseOperator> {
    let t = traj.len();
    let du = traj.explorations.nrows();
    if t < du {
        return Err(Error::SingularGram(format!("{t} samples for {du} inputs")));
    }
    let v = &traj.explorations;
    let gram = symmetrize(&(v * v.transpose()));
    let top = max_eigenvalue(&gram);
    if !(top > 0.0) || min_eigenvalue(&gram) <= 1e-12 * top {
        return Err(Error::SingularGram("exploration Gram is rank deficient".into()));
    }
    let cross = traj.states.columns(1, t) * v.transpose();
    let chol = Cholesky::new(gram).ok_or_else(|| Error::SingularGram("exploration Gram".into()))?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// center + U min(S, radius) Vᵀ for A − center = U S Vᵀ.
pub fn clip_to_ball(a: &DenseOperator, center: &DenseOperator, radius: f64) -> DenseOperator {
    let dev = a - center;
    let mut svd = dev.svd(true, true);
    if svd.singular_values.iter().all(|s| *s <= radius) {
        return a.clone();
    }
    for s in svd.singular_values.iter_mut() {
        *s = s.min(radius);
    }
    center + svd.recompose().expect("singular vectors requested")
}

/// ½ tr((A − Ã) W (A − Ã)ᵀ).
pub fn weighted_objective(a: &DenseOperator, a_tilde: &DenseOperator, w: &DenseOperator) -> f64 {
    let e = a - a_tilde;
    0.5 * (&e * w).dot(&e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub a: DenseOperator,
    pub iterations: usize,
    pub objective: f64,
}

pub fn project_safe(
    a_tilde: &DenseOperator,
    center: &DenseOperator,
    radius: f64,
    w: &DenseOperator,
) -> Result<DenseOperator> {
    Ok(project_safe_with(a_tilde, center, radius, w, &ProjectionOptions::default())?.a)
}

/// argmin over ‖A − center‖_op ≤ radius of ½ tr((A−Ã)W(A−Ã)ᵀ), by accelerated
/// projected gradient (step 1/λ_max(W), restart on objective increase).
pub fn project_safe_with(
    a_tilde: &DenseOperator,
    center: &DenseOperator,
    radius: f64,
    w: &DenseOperator,
    opts: &ProjectionOptions,
) -> Result<Projection> {
    if !(radius > 0.0) {
        return Err(Error::BadSpec(format!("projection radius must be positive, got {radius}")));
    }
    if op_norm(&(a_tilde - center)) <= radius {
        return Ok(Projection { a: a_tilde.clone(), iterations: 0, objective: 0.0 });
    }
    let lmax = max_eigenvalue(w);
    if !(lmax > 0.0) {
        return Ok(Projection { a: clip_to_ball(a_tilde, center, radius), iterations: 0, objective: 0.0 });
    }
    let step = 1.0 / lmax;
    let grad = |a: &DenseOperator| (a - a_tilde) * w;
    let mut x = clip_to_ball(a_tilde, center, radius);
    let mut fx = weighted_objective(&x, a_tilde, w);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut quiet = 0;
    for it in 1..=opts.max_iter {
        let x_new = clip_to_ball(&(&y - grad(&y) * step), center, radius);
        let f_new = weighted_objective(&x_new, a_tilde, w);
        if f_new > fx {
            if t == 1.0 {
                // A plain projected-gradient step no longer decreases the objective.
                return Ok(Projection { a: x, iterations: it, objective: fx });
            }
            // Restart momentum from the last accepted iterate.
            y = x.clone();
            t = 1.0;
            quiet = 0;
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        t = t_new;
        if decrease <= opts.tol * fx.max(f64::MIN_POSITIVE) {
            quiet += 1;
            if quiet >= 5 {
                return Ok(Projection { a: x, iterations: it, objective: fx });
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::NoConvergence { what: "safe-set projection", iterations: opts.max_iter })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    /// Ridge estimate before projection.
    pub a_cl_ridge: DenseOperator,
    pub a_cl_hat: DenseOperator,
    pub b_hat: DenseOperator,
    pub a_hat: DenseOperator,
    pub lambda: f64,
    pub empirical_cov: DenseOperator,
    /// ‖(Â_cl − A_cl⋆)Σ_{x,0}^{1/2}‖_HS when the true system is supplied.
    pub weighted_err_acl: Option<f64>,
    pub hs_err_b: Option<f64>,
    pub projection_iterations: usize,
}

/// Weighted error ‖(M − A_cl⋆)Σ^{1/2}‖_HS, with Σ given through its square root.
pub fn weighted_error(m: &DenseOperator, acl_star: &DenseOperator, sigma_half: &DenseOperator) -> f64 {
    hs_norm(&((m - acl_star) * sigma_half))
}

/// Estimate (Â_cl, B̂, Â) from exploration data collected under K₀.
/// `safe_set` = (center, radius) enables the projection; `oracle` = (system, Σ_{x,0}^{1/2})
/// fills the error diagnostics.
pub fn estimate_bundle(
    traj: &Trajectory,
    k0: &DenseOperator,
    lambda: f64,
    safe_set: Option<(&DenseOperator, f64)>,
    oracle: Option<(&SystemInstance, &DenseOperator)>,
) -> Result<EstimateBundle> {
    let b_hat = ols_b(traj)?;
    let a_cl_ridge = ridge_acl(traj, lambda)?;
    let emp = empirical_cov(traj);
    let d = emp.nrows();
    let (a_cl_hat, iters) = match safe_set {
        Some((center, radius)) => {
            let w = &emp + DMatrix::identity(d, d) * lambda;
            let p = project_safe_with(&a_cl_ridge, center, radius, &w, &ProjectionOptions::default())?;
            (p.a, p.iterations)
        }
        None => (a_cl_ridge.clone(), 0),
    };
    let a_hat = &a_cl_hat - &b_hat * k0;
    let (weighted_err_acl, hs_err_b) = match oracle {
        Some((sys, sigma_half)) => {
            let acl = sys.closed_loop(k0)?;
            (Some(weighted_error(&a_cl_hat, &acl, sigma_half)), Some(hs_norm(&(&b_hat - &sys.b))))
        }
        None => (None, None),
    };
    Ok(EstimateBundle {
        a_cl_ridge,
        a_cl_hat,
        b_hat,
        a_hat,
        lambda,
        empirical_cov: emp,
        weighted_err_acl,
        hs_err_b,
        projection_iterations: iters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub seeds_run: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub min_slack: f64,
}

/// Fraction of seeds with Σ_{x,0} ⪯ c(Σ̂_{x,0} + λI) for a stationary-start
/// rollout of length T under u = K₀x + v.
#[allow(clippy::too_many_arguments)]
pub fn check_empirical_domination(
    sys: &SystemInstance,
    k0: &DenseOperator,
    sigma2_u: f64,
    lambda: f64,
    horizon: usize,
    seeds: &[u64],
    c: f64,
) -> Result<MonteCarloReport> {
    if seeds.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let sigma0 = stationary_cov(sys, k0, sigma2_u)?;
    let d = sys.dim();
    let policy = Policy::new(k0.clone(), sigma2_u);
    let slacks = seeds
        .par_iter()
        .map(|&seed| {
            let x1 = initial_state(sys, k0, sigma2_u, InitialMode::Stationary, seed)?;
            let tr = rollout(sys, &policy, horizon, &x1, seed)?;
            let rhs = (empirical_cov(&tr) + DMatrix::identity(d, d) * lambda) * c;
            psd_slack(&rhs, &sigma0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let successes = slacks.iter().filter(|s| **s >= -PSD_TOL).count();
    Ok(MonteCarloReport {
        seeds_run: seeds.len(),
        successes,
        success_fraction: successes as f64 / seeds.len() as f64,
        min_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Σ^{1/2} of the stationary covariance Σ(K₀, σ²_u).
pub fn stationary_sqrt(sys: &SystemInstance, k0: &DenseOperator, sigma2_u: f64) -> Result<DenseOperator> {
    Ok(SpectralDecomposition::new(&stationary_cov(sys, k0, sigma2_u)?)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::Policy;
    use nalgebra::DVector;

    fn plain_sys(a: DenseOperator, b: DenseOperator, sw: DenseOperator) -> SystemInstance {
        let d = a.nrows();
        let du = b.ncols();
        SystemInstance::new(a, b, sw, DMatrix::identity(d, d), DMatrix::identity(du, du)).unwrap()
    }

    #[test]
    fn noiseless_ridge_recovers_closed_loop() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.0, -0.1, 0.3, 0.1, 0.0, 0.2, 0.4]);
        let sys = plain_sys(a.clone(), DMatrix::identity(3, 3), DMatrix::zeros(3, 3));
        let k = DMatrix::zeros(3, 3);
        let x1 = DVector::from_vec(vec![1.0, -0.5, 0.3]);
        let tr = rollout(&sys, &Policy::new(k, 0.0), 20, &x1, 8).unwrap();
        let est = ridge_acl(&tr, 1e-12).unwrap();
        assert!(op_norm(&(est - &a)) < 1e-6);
    }

    #[test]
    fn ridge_limits() {
        let sys = plain_sys(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 1), DMatrix::zeros(2, 2));
        let tr = rollout(&sys, &Policy::new(DMatrix::zeros(1, 2), 0.0), 10, &DVector::zeros(2), 0).unwrap();
        assert_eq!(ridge_acl(&tr, 0.1).unwrap().amax(), 0.0);
        assert_eq!(empirical_cov(&tr).amax(), 0.0);
        let sys = plain_sys(DMatrix::identity(2, 2) * 0.5, DMatrix::identity(2, 1), DMatrix::identity(2, 2));
        let tr = rollout(&sys, &Policy::new(DMatrix::zeros(1, 2), 1.0), 50, &DVector::zeros(2), 0).unwrap();
        assert!(ridge_acl(&tr, 1e12).unwrap().amax() < 1e-9);
        assert!(matches!(ridge_acl(&tr, 0.0), Err(Error::BadSpec(_))));
    }

    #[test]
    fn ols_exact_and_rank_deficient() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.0, 0.7]);
        let sys = plain_sys(DMatrix::zeros(3, 3), b.clone(), DMatrix::zeros(3, 3));
        let tr = rollout(&sys, &Policy::new(DMatrix::zeros(2, 3), 1.0), 20, &DVector::zeros(3), 2).unwrap();
        assert!((ols_b(&tr).unwrap() - &b).amax() < 1e-10);
        let short = rollout(&sys, &Policy::new(DMatrix::zeros(2, 3), 1.0), 1, &DVector::zeros(3), 2).unwrap();
        assert!(matches!(ols_b(&short), Err(Error::SingularGram(_))));
    }

    #[test]
    fn projection_feasible_and_euclidean() {
        let c = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.3]);
        let inside = &c + DMatrix::from_row_slice(2, 2, &[0.01, 0.0, 0.0, -0.02]);
        assert_eq!(project_safe(&inside, &c, 0.05, &DMatrix::identity(2, 2)).unwrap(), inside);
        let far = &c + DMatrix::from_row_slice(2, 2, &[1.0, 0.4, -0.3, 0.5]);
        let got = project_safe(&far, &c, 0.2, &DMatrix::identity(2, 2)).unwrap();
        let oracle = clip_to_ball(&far, &c, 0.2);
        assert!((got - oracle).amax() < 1e-8);
    }

    #[test]
    fn single_state_cov() {
        let sys = plain_sys(DMatrix::zeros(2, 2), DMatrix::identity(2, 1), DMatrix::zeros(2, 2));
        let mut e1 = DVector::zeros(2);
        e1[0] = 1.0;
        let tr = rollout(&sys, &Policy::new(DMatrix::zeros(1, 2), 0.0), 1, &e1, 0).unwrap();
        assert_eq!(empirical_cov(&tr), &e1 * e1.transpose());
    }
}
