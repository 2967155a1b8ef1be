//! Seeded closed-loop rollouts and regret bookkeeping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::stationary_cov;
use crate::operator::{ensure_shape, DenseOperator, SpectralDecomposition};
use crate::rng::{self, INIT_STREAM, V_STREAM, W_STREAM};
use crate::systems::SystemInstance;

/// u_t = K x_t + v_t with v_t ~ N(0, σ²_u I).
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub k: DenseOperator,
    pub sigma2_u: f64,
}

impl Policy {
    pub fn new(k: DenseOperator, sigma2_u: f64) -> Self {
        Self { k, sigma2_u }
    }
}

/// Columns are time-indexed: state column i is x_{start+i}.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub start: usize,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub explorations: DMatrix<f64>,
    pub disturbances: DMatrix<f64>,
    pub policy: Policy,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_state(&self) -> DVector<f64> {
        self.states.column(0).into_owned()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.states.column(self.len()).into_owned()
    }

    /// ⟨x_t, Q x_t⟩ + ⟨u_t, R u_t⟩ for each step.
    pub fn costs(&self, sys: &SystemInstance) -> Vec<f64> {
        (0..self.len())
            .map(|t| {
                let x = self.states.column(t);
                let u = self.inputs.column(t);
                (x.transpose() * &sys.q * x)[(0, 0)] + (u.transpose() * &sys.r * u)[(0, 0)]
            })
            .collect()
    }

    /// x_{t+1} − A x_t − B u_t for each step.
    pub fn dynamics_residuals(&self, sys: &SystemInstance) -> DMatrix<f64> {
        let t = self.len();
        self.states.columns(1, t) - &sys.a * self.states.columns(0, t) - &sys.b * &self.inputs
    }

    pub fn segment(&self, sys: &SystemInstance, phase: &str) -> CostSegment {
        CostSegment {
            start: self.start,
            phase: phase.to_string(),
            costs: self.costs(sys),
            first_state: self.first_state(),
            final_state: self.final_state(),
        }
    }
}

/// Per-step costs of one contiguous stretch of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSegment {
    pub start: usize,
    pub phase: String,
    pub costs: Vec<f64>,
    pub first_state: DVector<f64>,
    pub final_state: DVector<f64>,
}

fn check_policy(sys: &SystemInstance, policy: &Policy, x1: &DVector<f64>) -> Result<()> {
    ensure_shape(&policy.k, sys.input_dim(), sys.dim(), "K")?;
    if x1.len() != sys.dim() {
        return Err(Error::DimensionMismatch(format!("x1 has length {}, expected {}", x1.len(), sys.dim())));
    }
    if !(policy.sigma2_u >= 0.0) {
        return Err(Error::BadSpec("exploration variance must be nonnegative".into()));
    }
    Ok(())
}

struct Stepper<'a> {
    sys: &'a SystemInstance,
    policy: &'a Policy,
    w_rng: rand_chacha::ChaCha8Rng,
    v_rng: rand_chacha::ChaCha8Rng,
    sigma_u: f64,
    z: DVector<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a SystemInstance, policy: &'a Policy, seed: u64) -> Self {
        Self {
            sys,
            policy,
            w_rng: rng::stream(seed, W_STREAM),
            v_rng: rng::stream(seed, V_STREAM),
            sigma_u: policy.sigma2_u.sqrt(),
            z: DVector::zeros(sys.dim()),
        }
    }

    /// Fills u, v, w and the next state from x.
    fn step(
        &mut self,
        x: &DVector<f64>,
        u: &mut DVector<f64>,
        v: &mut DVector<f64>,
        w: &mut DVector<f64>,
        next: &mut DVector<f64>,
    ) {
        for vi in v.iter_mut() {
            *vi = if self.sigma_u > 0.0 { self.sigma_u * rng::normal(&mut self.v_rng) } else { 0.0 };
        }
        u.copy_from(v);
        u.gemv(1.0, &self.policy.k, x, 1.0);
        for zi in self.z.iter_mut() {
            *zi = rng::normal(&mut self.w_rng);
        }
        w.gemv(1.0, &self.sys.noise_factor, &self.z, 0.0);
        next.copy_from(w);
        next.gemv(1.0, &self.sys.a, x, 1.0);
        next.gemv(1.0, &self.sys.b, u, 1.0);
    }
}

pub fn rollout(
    sys: &SystemInstance,
    policy: &Policy,
    horizon: usize,
    x1: &DVector<f64>,
    seed: u64,
) -> Result<Trajectory> {
    rollout_at(sys, policy, horizon, x1, seed, 1)
}

/// Rollout whose first state is x_{start}.
pub fn rollout_at(
    sys: &SystemInstance,
    policy: &Policy,
    horizon: usize,
    x1: &DVector<f64>,
    seed: u64,
    start: usize,
) -> Result<Trajectory> {
    check_policy(sys, policy, x1)?;
    if horizon == 0 {
        return Err(Error::BadSpec("rollout horizon must be at least 1".into()));
    }
    let d = sys.dim();
    let du = sys.input_dim();
    let mut states = DMatrix::zeros(d, horizon + 1);
    let mut inputs = DMatrix::zeros(du, horizon);
    let mut explorations = DMatrix::zeros(du, horizon);
    let mut disturbances = DMatrix::zeros(d, horizon);
    states.set_column(0, x1);
    let mut stepper = Stepper::new(sys, policy, seed);
    let (mut x, mut u, mut v, mut w, mut next) =
        (x1.clone(), DVector::zeros(du), DVector::zeros(du), DVector::zeros(d), DVector::zeros(d));
    for t in 0..horizon {
        stepper.step(&x, &mut u, &mut v, &mut w, &mut next);
        inputs.set_column(t, &u);
        explorations.set_column(t, &v);
        disturbances.set_column(t, &w);
        states.set_column(t + 1, &next);
        std::mem::swap(&mut x, &mut next);
    }
    Ok(Trajectory { start, states, inputs, explorations, disturbances, policy: policy.clone(), seed })
}

/// Same dynamics and random streams as `rollout_at`, keeping only costs.
pub fn rollout_costs(
    sys: &SystemInstance,
    policy: &Policy,
    horizon: usize,
    x1: &DVector<f64>,
    seed: u64,
    start: usize,
    phase: &str,
) -> Result<CostSegment> {
    check_policy(sys, policy, x1)?;
    let d = sys.dim();
    let du = sys.input_dim();
    let mut stepper = Stepper::new(sys, policy, seed);
    let (mut x, mut u, mut v, mut w, mut next) =
        (x1.clone(), DVector::zeros(du), DVector::zeros(du), DVector::zeros(d), DVector::zeros(d));
    let mut qx = DVector::zeros(d);
    let mut ru = DVector::zeros(du);
    let mut costs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        stepper.step(&x, &mut u, &mut v, &mut w, &mut next);
        qx.gemv(1.0, &sys.q, &x, 0.0);
        ru.gemv(1.0, &sys.r, &u, 0.0);
        costs.push(x.dot(&qx) + u.dot(&ru));
        std::mem::swap(&mut x, &mut next);
    }
    Ok(CostSegment { start, phase: phase.to_string(), costs, first_state: x1.clone(), final_state: x })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialMode {
    #[default]
    Zero,
    Stationary,
}

/// The zero state, or a draw from N(0, Σ(K₀, σ²_u)).
pub fn initial_state(
    sys: &SystemInstance,
    k0: &DenseOperator,
    sigma2_u: f64,
    mode: InitialMode,
    seed: u64,
) -> Result<DVector<f64>> {
    match mode {
        InitialMode::Zero => Ok(DVector::zeros(sys.dim())),
        InitialMode::Stationary => {
            let cov = stationary_cov(sys, k0, sigma2_u)?;
            let f = SpectralDecomposition::new(&cov)?.sqrt_factor();
            let mut r = rng::stream(seed, INIT_STREAM);
            Ok(f * rng::normal_vector(&mut r, sys.dim()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub name: String,
    /// First and last time index (inclusive, 1-based).
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub j_star: f64,
    pub costs: Vec<f64>,
    pub cumulative_cost: Vec<f64>,
    pub regret: Vec<f64>,
    pub phases: Vec<PhaseSpan>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }

    /// Regret accumulated inside one named phase.
    pub fn phase_regret(&self, name: &str) -> Option<f64> {
        let span = self.phases.iter().find(|p| p.name == name)?;
        let first = self.phases[0].start;
        let before = if span.start > first { self.regret[span.start - first - 1] } else { 0.0 };
        Some(self.regret[span.end - first] - before)
    }

    /// End of the first phase (the explore/commit boundary for OnlineCE runs).
    pub fn phase_boundary(&self, name: &str) -> Option<usize> {
        self.phases.iter().find(|p| p.name == name).map(|p| p.end)
    }

    pub fn phase_at(&self, index: usize) -> &str {
        let t = self.phases.first().map_or(1, |p| p.start) + index;
        self.phases.iter().find(|p| p.start <= t && t <= p.end).map_or("", |p| p.name.as_str())
    }
}

/// Concatenate contiguous segments and subtract t·J⋆ from the running cost.
pub fn regret_accounting(segments: &[CostSegment], j_star: f64) -> Result<RegretTrace> {
    let mut costs = Vec::new();
    let mut phases = Vec::new();
    let mut expected: Option<(usize, &DVector<f64>)> = None;
    for seg in segments {
        if let Some((t, x)) = expected {
            if seg.start != t || seg.first_state != *x {
                return Err(Error::GapBetweenSegments { expected: t, found: seg.start });
            }
        }
        if !seg.costs.is_empty() {
            phases.push(PhaseSpan {
                name: seg.phase.clone(),
                start: seg.start,
                end: seg.start + seg.costs.len() - 1,
            });
        }
        costs.extend_from_slice(&seg.costs);
        expected = Some((seg.start + seg.costs.len(), &seg.final_state));
    }
    let mut cumulative_cost = Vec::with_capacity(costs.len());
    let mut regret = Vec::with_capacity(costs.len());
    let mut acc = 0.0;
    for (i, c) in costs.iter().enumerate() {
        acc += c;
        cumulative_cost.push(acc);
        regret.push(acc - (i + 1) as f64 * j_star);
    }
    Ok(RegretTrace { j_star, costs, cumulative_cost, regret, phases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_lower_bound, LowerBoundKind};

    fn quiet(d: usize) -> SystemInstance {
        SystemInstance::new(
            DMatrix::identity(d, d) * 0.5,
            DMatrix::identity(d, 1),
            DMatrix::zeros(d, d),
            DMatrix::identity(d, d),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_rollouts() {
        let sys = quiet(3);
        let pol = Policy::new(DMatrix::zeros(1, 3), 0.0);
        let tr = rollout(&sys, &pol, 10, &DVector::zeros(3), 4).unwrap();
        assert_eq!(tr.states.amax(), 0.0);
        let mut e1 = DVector::zeros(3);
        e1[0] = 1.0;
        let tr = rollout(&sys, &pol, 10, &e1, 4).unwrap();
        for t in 0..=10 {
            assert_eq!(tr.states[(0, t)], 2f64.powi(-(t as i32)));
        }
    }

    #[test]
    fn rollout_determinism_and_recorded_noise() {
        let sys = make_lower_bound(LowerBoundKind::Controllable, 3, 4).unwrap();
        let pol = Policy::new(sys.optimal().unwrap().k.clone(), 1.0);
        let x1 = DVector::from_vec(vec![0.3, -0.1, 2.0]);
        let a = rollout(&sys, &pol, 50, &x1, 99).unwrap();
        let b = rollout(&sys, &pol, 50, &x1, 99).unwrap();
        assert_eq!(a.states, b.states);
        assert!((a.dynamics_residuals(&sys) - &a.disturbances).amax() < 1e-12);
        let c = rollout_costs(&sys, &pol, 50, &x1, 99, 1, "x").unwrap();
        let costs = a.costs(&sys);
        for (p, q) in c.costs.iter().zip(&costs) {
            assert!((p - q).abs() < 1e-12);
        }
        assert!(costs.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn single_step_regret_by_hand() {
        let sys = make_lower_bound(LowerBoundKind::Controllable, 2, 2).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[-0.2, 0.1, 0.0, -0.3]);
        let pol = Policy::new(k.clone(), 0.0);
        let x1 = DVector::from_vec(vec![1.0, -2.0]);
        let tr = rollout(&sys, &pol, 1, &x1, 0).unwrap();
        let js = sys.j_star().unwrap();
        let trace = regret_accounting(&[tr.segment(&sys, "only")], js).unwrap();
        let m = &sys.q + k.transpose() * &sys.r * &k;
        let by_hand = (x1.transpose() * m * &x1)[(0, 0)] - js;
        assert!((trace.regret[0] - by_hand).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_optimal_regret_vanishes() {
        let sys = quiet(2);
        let k = sys.optimal().unwrap().k.clone();
        let tr = rollout(&sys, &Policy::new(k, 0.0), 20, &DVector::zeros(2), 1).unwrap();
        let trace = regret_accounting(&[tr.segment(&sys, "a")], sys.j_star().unwrap()).unwrap();
        assert!(trace.regret.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn gaps_are_rejected() {
        let sys = quiet(2);
        let pol = Policy::new(DMatrix::zeros(1, 2), 0.0);
        let mut x = DVector::zeros(2);
        x[1] = 1.0;
        let a = rollout(&sys, &pol, 3, &x, 0).unwrap().segment(&sys, "a");
        let b = rollout_at(&sys, &pol, 3, &a.final_state, 0, 4).unwrap().segment(&sys, "b");
        let tr = regret_accounting(&[a.clone(), b.clone()], 0.0).unwrap();
        assert_eq!(tr.len(), 6);
        assert_eq!(tr.phase_boundary("a"), Some(3));
        assert!((tr.phase_regret("a").unwrap() + tr.phase_regret("b").unwrap() - tr.final_regret()).abs() < 1e-15);
        let c = rollout_at(&sys, &pol, 3, &a.final_state, 0, 5).unwrap().segment(&sys, "c");
        assert!(matches!(
            regret_accounting(&[a.clone(), c], 0.0),
            Err(Error::GapBetweenSegments { expected: 4, found: 5 })
        ));
        let d = rollout_at(&sys, &pol, 3, &x, 0, 4).unwrap().segment(&sys, "d");
        assert!(regret_accounting(&[a, d], 0.0).is_err());
    }

    #[test]
    fn initial_state_modes() {
        let sys = quiet(2);
        let k = DMatrix::zeros(1, 2);
        assert_eq!(initial_state(&sys, &k, 0.0, InitialMode::Zero, 1).unwrap().amax(), 0.0);
        assert_eq!(initial_state(&sys, &k, 0.0, InitialMode::Stationary, 1).unwrap().amax(), 0.0);
    }
}
