//! Benchmark instances (A⋆, B⋆, Σ_w, Q, R) and instance-level statistics.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::stationary_cov;
use crate::operator::{
    ensure_shape, ensure_square, ensure_symmetric, hs_norm, min_eigenvalue, op_norm,
    spectral_radius, symmetrize, DenseOperator, SpectralDecomposition, EIG_CLAMP,
};
use crate::riccati::{c_stable, solve_dare, CStableMode, DareOptions, RiccatiSolution};
use crate::rng;

#[derive(Debug, Clone)]
pub struct SystemInstance {
    pub a: DenseOperator,
    pub b: DenseOperator,
    pub sigma_w: DenseOperator,
    pub q: DenseOperator,
    pub r: DenseOperator,
    pub sigma_w_spectrum: SpectralDecomposition,
    /// F with FFᵀ = Σ_w, built from clamped eigenvalues.
    pub noise_factor: DenseOperator,
    pub notes: Vec<String>,
    optimal: OnceLock<Result<RiccatiSolution>>,
}

impl SystemInstance {
    pub fn new(
        a: DenseOperator,
        b: DenseOperator,
        sigma_w: DenseOperator,
        q: DenseOperator,
        r: DenseOperator,
    ) -> Result<Self> {
        ensure_square(&a)?;
        let d = a.nrows();
        let du = b.ncols();
        ensure_shape(&b, d, du, "B")?;
        ensure_shape(&sigma_w, d, d, "Σ_w")?;
        ensure_shape(&q, d, d, "Q")?;
        ensure_shape(&r, du, du, "R")?;
        for m in [&a, &b, &sigma_w, &q, &r] {
            crate::operator::ensure_finite(m)?;
        }
        ensure_symmetric(&sigma_w)?;
        ensure_symmetric(&q)?;
        ensure_symmetric(&r)?;
        let sigma_w = symmetrize(&sigma_w);
        if min_eigenvalue(&sigma_w) < EIG_CLAMP * (1.0 + op_norm(&sigma_w)) {
            return Err(Error::BadSpec("Σ_w is not positive semidefinite".into()));
        }
        let mut q = symmetrize(&q);
        let mut r = symmetrize(&r);
        let mut notes = Vec::new();
        let lam = min_eigenvalue(&q).min(if du > 0 { min_eigenvalue(&r) } else { f64::INFINITY });
        if lam <= 0.0 {
            return Err(Error::BadSpec("Q and R must be positive definite".into()));
        }
        if lam < 1.0 {
            q /= lam;
            r /= lam;
            notes.push(format!("Q and R rescaled by 1/{lam:.6e} so that both dominate I"));
        }
        let sigma_w_spectrum = SpectralDecomposition::new(&sigma_w)?;
        let noise_factor = sigma_w_spectrum.sqrt_factor();
        Ok(Self { a, b, sigma_w, q, r, sigma_w_spectrum, noise_factor, notes, optimal: OnceLock::new() })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// A + BK.
    pub fn closed_loop(&self, k: &DenseOperator) -> Result<DenseOperator> {
        ensure_shape(k, self.input_dim(), self.dim(), "K")?;
        Ok(&self.a + &self.b * k)
    }

    /// P⋆ and K⋆, solved once and cached.
    pub fn optimal(&self) -> Result<&RiccatiSolution> {
        self.optimal
            .get_or_init(|| solve_dare(&self.a, &self.b, &self.q, &self.r, &DareOptions::default()))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn j_star(&self) -> Result<f64> {
        Ok((&self.optimal()?.p * &self.sigma_w).trace())
    }

    pub fn c_stable(&self) -> Result<f64> {
        Ok(c_stable(&self.optimal()?.p, CStableMode::Fixed229))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayKind {
    Polynomial { alpha: f64 },
    Exponential { alpha: f64 },
    Identity,
}

impl DecayKind {
    pub fn sigma(&self, j: usize) -> f64 {
        let jf = j as f64;
        match *self {
            DecayKind::Polynomial { alpha } => jf.powf(-alpha),
            DecayKind::Exponential { alpha } => (-alpha * jf).exp(),
            DecayKind::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub decay: DecayKind,
    pub d: usize,
    pub d_u: usize,
    pub rho_target: f64,
    pub aligned: bool,
}

impl DecaySpec {
    pub fn new(decay: DecayKind, d: usize, d_u: usize) -> Self {
        Self { decay, d, d_u, rho_target: 0.7, aligned: false }
    }

    pub fn validate(&self) -> Result<()> {
        match self.decay {
            DecayKind::Polynomial { alpha } if !(alpha > 1.0) => {
                return Err(Error::BadSpec(format!("polynomial decay needs α > 1, got {alpha}")))
            }
            DecayKind::Exponential { alpha } if !(alpha > 0.0) => {
                return Err(Error::BadSpec(format!("exponential decay needs α > 0, got {alpha}")))
            }
            _ => {}
        }
        if self.d_u < 1 || self.d < self.d_u {
            return Err(Error::BadSpec(format!("need d ≥ d_u ≥ 1, got d={} d_u={}", self.d, self.d_u)));
        }
        if !(self.rho_target > 0.0 && self.rho_target < 1.0) {
            return Err(Error::BadSpec(format!("rho_target must lie in (0,1), got {}", self.rho_target)));
        }
        Ok(())
    }
}

fn column_embedding(d: usize, d_u: usize) -> DenseOperator {
    let mut b = DMatrix::zeros(d, d_u);
    for i in 0..d.min(d_u) {
        b[(i, i)] = 1.0;
    }
    b
}

/// Σ_w = diag(σ_j); A⋆ a Gaussian matrix rescaled to spectral radius ρ_target,
/// optionally averaged with diag(ρ_target·σ_j/σ_1); B⋆ = [I; 0]; Q = R = I.
pub fn make_decay_instance(spec: &DecaySpec, seed: u64) -> Result<SystemInstance> {
    spec.validate()?;
    let d = spec.d;
    let mut g_rng = rng::stream(seed, 0xA5);
    let g = rng::normal_matrix(&mut g_rng, d, d);
    let rad = spectral_radius(&g)?;
    let mut a = if rad > 0.0 { g * (spec.rho_target / rad) } else { g };
    let sig: Vec<f64> = (1..=d).map(|j| spec.decay.sigma(j)).collect();
    if spec.aligned {
        let diag = DVector::from_iterator(d, sig.iter().map(|s| spec.rho_target * s / sig[0]));
        a = a * 0.5 + DMatrix::from_diagonal(&diag) * 0.5;
        let rad = spectral_radius(&a)?;
        if rad > spec.rho_target {
            a *= spec.rho_target / rad;
        }
    }
    let sigma_w = DMatrix::from_diagonal(&DVector::from_vec(sig));
    SystemInstance::new(a, column_embedding(d, spec.d_u), sigma_w, DMatrix::identity(d, d), DMatrix::identity(spec.d_u, spec.d_u))
}

/// A⋆ = diag(½ for i ≤ d_u, 1/i² after), B⋆ = Σ_{i≤d_u} e_i⊗f_i, Σ_w = diag(1/i²).
pub fn make_illustrative(d: usize, d_u: usize) -> Result<SystemInstance> {
    if d <= d_u || d_u == 0 {
        return Err(Error::BadSpec(format!("illustrative instance needs d > d_u ≥ 1, got d={d} d_u={d_u}")));
    }
    let a = DVector::from_fn(d, |i, _| {
        let j = (i + 1) as f64;
        if i < d_u { 0.5 } else { 1.0 / (j * j) }
    });
    let s = DVector::from_fn(d, |i, _| 1.0 / ((i + 1) as f64).powi(2));
    SystemInstance::new(
        DMatrix::from_diagonal(&a),
        column_embedding(d, d_u),
        DMatrix::from_diagonal(&s),
        DMatrix::identity(d, d),
        DMatrix::identity(d_u, d_u),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundKind {
    ZeroB,
    Controllable,
}

/// A⋆ = ½I with B⋆ = 0 (zero_b) or B⋆ = [I 0] with d_u ≥ d_x (controllable); Q = R = Σ_w = I.
pub fn make_lower_bound(kind: LowerBoundKind, d_x: usize, d_u: usize) -> Result<SystemInstance> {
    if d_x == 0 || d_u == 0 {
        return Err(Error::BadSpec("dimensions must be positive".into()));
    }
    let b = match kind {
        LowerBoundKind::ZeroB => DMatrix::zeros(d_x, d_u),
        LowerBoundKind::Controllable => {
            if d_u < d_x {
                return Err(Error::BadSpec(format!("controllable instance needs d_u ≥ d_x, got {d_u} < {d_x}")));
            }
            column_embedding(d_x, d_u)
        }
    };
    SystemInstance::new(
        DMatrix::identity(d_x, d_x) * 0.5,
        b,
        DMatrix::identity(d_x, d_x),
        DMatrix::identity(d_x, d_x),
        DMatrix::identity(d_u, d_u),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Polynomial,
    Exponential,
    Identity,
    Illustrative,
    LowerBoundZeroB,
    LowerBoundControllable,
}

fn default_rho() -> f64 {
    0.7
}

/// Parameters that regenerate an instance; matrices are rebuilt from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub d: usize,
    pub d_u: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rho")]
    pub rho_target: f64,
    #[serde(default)]
    pub aligned: bool,
}

impl InstanceSpec {
    pub fn decay(kind: InstanceKind, d: usize, d_u: usize, alpha: f64, seed: u64) -> Self {
        Self { kind, d, d_u, alpha, seed, rho_target: default_rho(), aligned: false }
    }

    pub fn build(&self) -> Result<SystemInstance> {
        let decay = |decay| DecaySpec {
            decay,
            d: self.d,
            d_u: self.d_u,
            rho_target: self.rho_target,
            aligned: self.aligned,
        };
        match self.kind {
            InstanceKind::Polynomial => {
                make_decay_instance(&decay(DecayKind::Polynomial { alpha: self.alpha }), self.seed)
            }
            InstanceKind::Exponential => {
                make_decay_instance(&decay(DecayKind::Exponential { alpha: self.alpha }), self.seed)
            }
            InstanceKind::Identity => make_decay_instance(&decay(DecayKind::Identity), self.seed),
            InstanceKind::Illustrative => make_illustrative(self.d, self.d_u),
            InstanceKind::LowerBoundZeroB => make_lower_bound(LowerBoundKind::ZeroB, self.d, self.d_u),
            InstanceKind::LowerBoundControllable => {
                make_lower_bound(LowerBoundKind::Controllable, self.d, self.d_u)
            }
        }
    }
}

/// W_tr = ‖B⋆‖²_HS + Σ_j σ_j(Σ_w) log j.
pub fn w_tr(sys: &SystemInstance) -> f64 {
    let spec: f64 = sys
        .sigma_w_spectrum
        .clamped()
        .iter()
        .enumerate()
        .map(|(i, s)| s * ((i + 1) as f64).ln())
        .sum();
    hs_norm(&sys.b).powi(2) + spec
}

/// M⋆ = max{‖A⋆‖², ‖B⋆‖², ‖P⋆‖, ‖Σ_w‖, 1}.
pub fn m_star(sys: &SystemInstance) -> Result<f64> {
    let p = op_norm(&sys.optimal()?.p);
    Ok([op_norm(&sys.a).powi(2), op_norm(&sys.b).powi(2), p, op_norm(&sys.sigma_w), 1.0]
        .into_iter()
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub r: usize,
    pub rho: f64,
    pub s_next: f64,
    pub c_stable: f64,
    pub satisfied: bool,
}

/// Largest generalized eigenvalue of (M, Σ) on the range of Σ; infinite when M
/// has mass outside that range.
pub fn generalized_max_eigenvalue(m: &DenseOperator, sigma: &DenseOperator) -> Result<f64> {
    let sd = SpectralDecomposition::new(&symmetrize(sigma))?;
    let w = sd.pinv_sqrt(1e-12);
    let proj = sd.map(|l| if l > 1e-12 * sd.eigenvalues[0].max(0.0) && l > 0.0 { 1.0 } else { 0.0 });
    let d = m.nrows();
    let outside = (DMatrix::identity(d, d) - proj) * m;
    if op_norm(&outside) > 1e-10 * (1.0 + op_norm(m)) {
        return Ok(f64::INFINITY);
    }
    Ok(crate::operator::max_eigenvalue(&(&w * m * &w)))
}

/// Smallest r ≤ r_max with s_{r+1} < C_stable/16 and VᵀΛ_r²V ⪯ ρ Σ_init for finite ρ.
pub fn check_alignment(
    sys: &SystemInstance,
    k_init: &DenseOperator,
    sigma2_u: f64,
    r_max: usize,
) -> Result<AlignmentReport> {
    let acl = sys.closed_loop(k_init)?;
    let sigma_init = stationary_cov(sys, k_init, sigma2_u)?;
    let cs = sys.c_stable()?;
    let d = sys.dim();
    let svd = acl.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let mut m = DMatrix::zeros(d, d);
    for r in 0..=r_max.min(d) {
        if r > 0 {
            let v = vt.row(order[r - 1]).transpose();
            m += &v * v.transpose() * s[r - 1].powi(2);
        }
        let s_next = s.get(r).copied().unwrap_or(0.0);
        if s_next < cs / 16.0 {
            let rho = if r == 0 { 0.0 } else { generalized_max_eigenvalue(&m, &sigma_init)? };
            return Ok(AlignmentReport { r, rho, s_next, c_stable: cs, satisfied: rho.is_finite() });
        }
    }
    let r = r_max.min(d);
    Ok(AlignmentReport {
        r,
        rho: f64::INFINITY,
        s_next: s.get(r).copied().unwrap_or(0.0),
        c_stable: cs,
        satisfied: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_examples() {
        let spec = DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 64, 4);
        let sys = make_decay_instance(&spec, 3).unwrap();
        assert!((sys.sigma_w[(2, 2)] - 1.0 / 9.0).abs() < 1e-15);
        let spec = DecaySpec::new(DecayKind::Exponential { alpha: 1.0 }, 32, 2);
        let sys = make_decay_instance(&spec, 3).unwrap();
        let e1 = (-1.0f64).exp();
        let closed = (e1 - (-33.0f64).exp()) / (1.0 - e1);
        assert!((sys.sigma_w.trace() - closed).abs() < 1e-12);
        assert!((sys.sigma_w.trace() - 0.5820).abs() < 1e-4);
        let spec = DecaySpec::new(DecayKind::Identity, 8, 2);
        let sys = make_decay_instance(&spec, 3).unwrap();
        assert_eq!(sys.sigma_w.trace(), 8.0);
        assert!(make_decay_instance(&DecaySpec::new(DecayKind::Polynomial { alpha: 1.0 }, 8, 2), 0).is_err());
        assert!(make_decay_instance(&DecaySpec::new(DecayKind::Identity, 2, 3), 0).is_err());
    }

    #[test]
    fn decay_instances_are_seed_deterministic_and_stabilizable() {
        let spec = DecaySpec { aligned: true, ..DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 16, 3) };
        let a = make_decay_instance(&spec, 11).unwrap();
        let b = make_decay_instance(&spec, 11).unwrap();
        assert_eq!(a.a, b.a);
        assert!((spectral_radius(&a.a).unwrap() - 0.7).abs() < 1e-9 || spectral_radius(&a.a).unwrap() < 0.7);
        let opt = a.optimal().unwrap();
        assert!(spectral_radius(&a.closed_loop(&opt.k).unwrap()).unwrap() < 1.0);
    }

    #[test]
    fn illustrative_instance() {
        let sys = make_illustrative(64, 4).unwrap();
        for i in 0..64 {
            let expect = if i < 4 { 0.5 } else { 1.0 / ((i + 1) as f64).powi(2) };
            assert_eq!(sys.a[(i, i)], expect);
        }
        assert!((op_norm(&sys.a) - 0.5).abs() < 1e-14);
        let m = m_star(&sys).unwrap();
        assert!((1.0..=4.0 / 3.0 + 1e-9).contains(&m), "M⋆ = {m}");
        assert!(make_illustrative(4, 4).is_err());
    }

    #[test]
    fn w_tr_examples() {
        let d = 8;
        let sys = SystemInstance::new(
            DMatrix::zeros(d, d),
            DMatrix::zeros(d, 1),
            DMatrix::identity(d, d),
            DMatrix::identity(d, d),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let log8f: f64 = (2..=8).map(|j| (j as f64).ln()).sum();
        assert!((w_tr(&sys) - log8f).abs() < 1e-12);
        assert!((w_tr(&sys) - 10.6046).abs() < 1e-4);
        let sys = SystemInstance::new(
            DMatrix::zeros(32, 32),
            DMatrix::zeros(32, 1),
            DMatrix::from_diagonal(&DVector::from_fn(32, |i, _| (-((i + 1) as f64)).exp())),
            DMatrix::identity(32, 32),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let direct: f64 = (1..=32).map(|j| (-(j as f64)).exp() * (j as f64).ln()).sum();
        assert!((w_tr(&sys) - direct).abs() < 1e-12);
        assert!((w_tr(&sys) - 0.192093).abs() < 1e-6);
        let sys = SystemInstance::new(
            DMatrix::zeros(3, 3),
            DMatrix::from_element(3, 2, 1.0),
            DMatrix::zeros(3, 3),
            DMatrix::identity(3, 3),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert!((w_tr(&sys) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn q_r_rescaled_when_below_identity() {
        let sys = SystemInstance::new(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((min_eigenvalue(&sys.q) - 1.0).abs() < 1e-14);
        assert!((sys.r[(0, 0)] - 2.0).abs() < 1e-14);
        assert_eq!(sys.notes.len(), 1);
    }

    #[test]
    fn alignment_examples() {
        let sys = make_decay_instance(&DecaySpec::new(DecayKind::Polynomial { alpha: 2.0 }, 6, 2), 5).unwrap();
        let k = sys.optimal().unwrap().k.clone();
        let rep = check_alignment(&sys, &k, 1.0, 6).unwrap();
        assert!(rep.satisfied && rep.r <= 6 && rep.rho.is_finite());

        let sys = make_lower_bound(LowerBoundKind::Controllable, 3, 3).unwrap();
        let k = -DMatrix::identity(3, 3) * 0.5;
        let rep = check_alignment(&sys, &k, 1.0, 3).unwrap();
        assert_eq!(rep.r, 0);
        assert!(rep.satisfied);
    }

    #[test]
    fn instance_spec_round_trip() {
        let spec = InstanceSpec::decay(InstanceKind::Polynomial, 48, 4, 2.0, 9);
        let text = toml::to_string(&spec).unwrap();
        let back: InstanceSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.build().unwrap().a, back.build().unwrap().a);
    }
}
