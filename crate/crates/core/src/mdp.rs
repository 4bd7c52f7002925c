//! Finite-horizon MDP primitives: transition kernels, state-action flows,
//! backward induction and forward density propagation.
//!
//! Index conventions used throughout the crate:
//!
//! * stages run `t = 0..=T`; a [`Horizon`] of `T` therefore has `T + 1`
//!   stages and `T` transitions;
//! * `kernel.prob(t, to, from, a)` is the probability of arriving in `to`
//!   at stage `t` after playing `a` in `from` at stage `t - 1`, for
//!   `t = 1..=T` (destination first);
//! * flows and costs are `(t, s, a)` tensors stored row-major.

use std::sync::Arc;

use crate::{Error, Result, Scalar};

/// Simplex tolerance for constructed objects.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Tolerance for quantities accumulated over many stages.
pub const ACCUMULATED_TOL: f64 = 1e-10;

/// Number of transitions `T`; stages are `0..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Horizon(usize);

impl Horizon {
    pub fn new(transitions: usize) -> Result<Self> {
        if transitions == 0 {
            return Err(Error::param("horizon", "T must be at least 1"));
        }
        Ok(Horizon(transitions))
    }

    pub fn transitions(self) -> usize {
        self.0
    }

    pub fn stages(self) -> usize {
        self.0 + 1
    }
}

/// Shape shared by every `(t, s, a)` tensor of a game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub horizon: Horizon,
    pub states: usize,
    pub actions: usize,
}

impl Dims {
    pub fn new(horizon: usize, states: usize, actions: usize) -> Result<Self> {
        if states == 0 {
            return Err(Error::param("states", "need at least one state"));
        }
        if actions == 0 {
            return Err(Error::param("actions", "need at least one action"));
        }
        Ok(Dims {
            horizon: Horizon::new(horizon)?,
            states,
            actions,
        })
    }

    pub fn transitions(&self) -> usize {
        self.horizon.transitions()
    }

    pub fn stages(&self) -> usize {
        self.horizon.stages()
    }

    /// Entries in one `(t, s, a)` tensor.
    pub fn len(&self) -> usize {
        self.stages() * self.states * self.actions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.states + s) * self.actions + a
    }

    /// Inverse of [`Dims::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let a = idx % self.actions;
        let ts = idx / self.actions;
        (ts / self.states, ts % self.states, a)
    }
}

/// Dense `(t, s, a)` tensor. Used both for state-action flows and for stage
/// costs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTensor<T> {
    dims: Dims,
    data: Vec<T>,
}

/// Occupancy measure `x[t][s][a]` of one player.
pub type StateActionDistribution<T> = StageTensor<T>;

/// Frozen stage costs `c[t][s][a]` handed to the single-player MDP solve.
pub type StageCosts<T> = StageTensor<T>;

impl<T: Scalar> StageTensor<T> {
    pub fn zeros(dims: Dims) -> Self {
        StageTensor {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim("stage tensor", dims.len(), data.len()));
        }
        Ok(StageTensor { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for t in 0..dims.stages() {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    data.push(f(t, s, a));
                }
            }
        }
        StageTensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize, a: usize) -> T {
        self.data[self.dims.index(t, s, a)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, s: usize, a: usize, v: T) {
        let i = self.dims.index(t, s, a);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Action row `[a]` at `(t, s)`.
    pub fn row(&self, t: usize, s: usize) -> &[T] {
        let start = self.dims.index(t, s, 0);
        &self.data[start..start + self.dims.actions]
    }

    pub fn row_mut(&mut self, t: usize, s: usize) -> &mut [T] {
        let start = self.dims.index(t, s, 0);
        &mut self.data[start..start + self.dims.actions]
    }

    /// `Σ_a x[t][s][a]`.
    pub fn state_mass(&self, t: usize, s: usize) -> T {
        self.row(t, s).iter().copied().sum()
    }

    /// `Σ_{s,a} x[t][s][a]`.
    pub fn stage_mass(&self, t: usize) -> T {
        let n = self.dims.states * self.dims.actions;
        self.data[t * n..(t + 1) * n].iter().copied().sum()
    }

    pub fn norm2(&self) -> T {
        self.data.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    /// Euclidean distance `‖self − other‖₂`.
    pub fn distance(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// In-place convex step `self ← (1 − w)·self + w·target`.
    pub fn step_towards(&mut self, target: &Self, w: T) {
        let keep = T::one() - w;
        for (x, b) in self.data.iter_mut().zip(&target.data) {
            *x = keep * *x + w * *b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-state initial probability vector `z[s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> InitialDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::param("initial distribution", "empty"));
        }
        let tol = T::lit(SIMPLEX_TOL);
        let total: T = probs.iter().copied().sum();
        if probs.iter().any(|p| !p.is_finite() || *p < T::zero()) || (total - T::one()).abs() > tol
        {
            return Err(Error::param(
                "initial distribution",
                format!("entries must be nonnegative and sum to 1 (sum = {total})"),
            ));
        }
        Ok(InitialDistribution { probs })
    }

    pub fn point_mass(states: usize, s: usize) -> Result<Self> {
        if s >= states {
            return Err(Error::param("initial distribution", "state out of range"));
        }
        let mut probs = vec![T::zero(); states];
        probs[s] = T::one();
        Ok(InitialDistribution { probs })
    }

    pub fn uniform(states: usize) -> Result<Self> {
        let p = T::one() / T::lit(states as f64);
        Self::new(vec![p; states])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn states(&self) -> usize {
        self.probs.len()
    }
}

#[derive(Debug)]
struct KernelStage<T> {
    /// `[to][from][a]`
    dense: Vec<T>,
    /// Nonzero `(to, p)` pairs per `(from, a)` column, ascending in `to`.
    columns: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> KernelStage<T> {
    fn new(states: usize, actions: usize, dense: Vec<T>) -> Self {
        let mut columns = vec![Vec::new(); states * actions];
        for to in 0..states {
            for from in 0..states {
                for a in 0..actions {
                    let p = dense[(to * states + from) * actions + a];
                    if p != T::zero() {
                        columns[from * actions + a].push((to, p));
                    }
                }
            }
        }
        KernelStage { dense, columns }
    }
}

/// Per-player transition tensor `p[t][s'][s][a]` for `t = 1..=T`.
///
/// Entries are stored densely per stage. Time-stationary kernels share a
/// single stage buffer across all `t`.
#[derive(Debug, Clone)]
pub struct TransitionKernel<T> {
    dims: Dims,
    stages: Vec<Arc<KernelStage<T>>>,
}

impl<T: Scalar> TransitionKernel<T> {
    /// `data` is laid out `[t − 1][to][from][a]` for `t = 1..=T`.
    pub fn from_dense(dims: Dims, data: Vec<T>) -> Result<Self> {
        let per_stage = dims.states * dims.states * dims.actions;
        let expected = dims.transitions() * per_stage;
        if data.len() != expected {
            return Err(Error::dim("transition kernel", expected, data.len()));
        }
        let stages = data
            .chunks(per_stage)
            .map(|chunk| Arc::new(KernelStage::new(dims.states, dims.actions, chunk.to_vec())))
            .collect();
        Ok(TransitionKernel { dims, stages })
    }

    /// One `[to][from][a]` stage replicated over every transition.
    pub fn stationary(dims: Dims, stage: Vec<T>) -> Result<Self> {
        let per_stage = dims.states * dims.states * dims.actions;
        if stage.len() != per_stage {
            return Err(Error::dim("stationary kernel stage", per_stage, stage.len()));
        }
        let shared = Arc::new(KernelStage::new(dims.states, dims.actions, stage));
        Ok(TransitionKernel {
            dims,
            stages: vec![shared; dims.transitions()],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let (n, m) = (dims.states, dims.actions);
        let stages = (1..=dims.transitions())
            .map(|t| {
                let mut dense = Vec::with_capacity(n * n * m);
                for to in 0..n {
                    for from in 0..n {
                        for a in 0..m {
                            dense.push(f(t, to, from, a));
                        }
                    }
                }
                Arc::new(KernelStage::new(n, m, dense))
            })
            .collect();
        TransitionKernel { dims, stages }
    }

    /// Deterministic self-loop for every action.
    pub fn identity(dims: Dims) -> Self {
        Self::from_fn(dims, |_, to, from, _| {
            if to == from {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Probability of reaching `to` at stage `t` from `(from, a)` at `t − 1`.
    #[inline]
    pub fn prob(&self, t: usize, to: usize, from: usize, a: usize) -> T {
        let n = self.dims.states;
        self.stages[t - 1].dense[(to * n + from) * self.dims.actions + a]
    }

    /// Nonzero successors `(to, p)` of `(from, a)` for the transition into `t`.
    #[inline]
    pub fn column(&self, t: usize, from: usize, a: usize) -> &[(usize, T)] {
        &self.stages[t - 1].columns[from * self.dims.actions + a]
    }
}

/// Column of a kernel that leaves the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelViolation<T> {
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub column_sum: T,
    pub min_entry: T,
    pub max_entry: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport<T> {
    pub violations: Vec<KernelViolation<T>>,
}

impl<T> KernelReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every `(t, s, a)` column with an entry outside `[0, 1]` or a sum
/// further than [`SIMPLEX_TOL`] from one.
pub fn validate_kernel<T: Scalar>(kernel: &TransitionKernel<T>) -> KernelReport<T> {
    let dims = kernel.dims();
    let tol = T::lit(SIMPLEX_TOL);
    let mut violations = Vec::new();
    for t in 1..=dims.transitions() {
        for s in 0..dims.states {
            for a in 0..dims.actions {
                let mut sum = T::zero();
                let mut lo = T::infinity();
                let mut hi = T::neg_infinity();
                for to in 0..dims.states {
                    let p = kernel.prob(t, to, s, a);
                    sum = sum + p;
                    lo = lo.min(p);
                    hi = hi.max(p);
                }
                let bad_entry = !(lo >= -tol && hi <= T::one() + tol) || lo.is_nan() || hi.is_nan();
                if bad_entry || !((sum - T::one()).abs() <= tol) {
                    violations.push(KernelViolation {
                        t,
                        s,
                        a,
                        column_sum: sum,
                        min_entry: lo,
                        max_entry: hi,
                    });
                }
            }
        }
    }
    KernelReport { violations }
}

/// Action per `(t, s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicPolicy {
    states: usize,
    actions: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(dims: Dims, actions: Vec<usize>) -> Result<Self> {
        let expected = dims.stages() * dims.states;
        if actions.len() != expected {
            return Err(Error::dim("deterministic policy", expected, actions.len()));
        }
        if let Some(bad) = actions.iter().find(|a| **a >= dims.actions) {
            return Err(Error::param(
                "deterministic policy",
                format!("action {bad} out of range 0..{}", dims.actions),
            ));
        }
        Ok(DeterministicPolicy {
            states: dims.states,
            actions,
        })
    }

    pub fn constant(dims: Dims, a: usize) -> Result<Self> {
        Self::new(dims, vec![a; dims.stages() * dims.states])
    }

    #[inline]
    pub fn action(&self, t: usize, s: usize) -> usize {
        self.actions[t * self.states + s]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.actions
    }
}

/// Optimal cost-to-go `V[t][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction<T> {
    states: usize,
    values: Vec<T>,
}

impl<T: Scalar> ValueFunction<T> {
    #[inline]
    pub fn get(&self, t: usize, s: usize) -> T {
        self.values[t * self.states + s]
    }

    pub fn stage(&self, t: usize) -> &[T] {
        &self.values[t * self.states..(t + 1) * self.states]
    }

    /// `Σ_s z[s]·V[0][s]`.
    pub fn expected_initial(&self, z: &InitialDistribution<T>) -> T {
        self.stage(0)
            .iter()
            .zip(z.as_slice())
            .map(|(v, p)| *v * *p)
            .sum()
    }
}

fn check_dims(what: &'static str, expected: Dims, got: Dims) -> Result<()> {
    if expected.stages() != got.stages() {
        return Err(Error::dim(what, expected.stages(), got.stages()));
    }
    if expected.states != got.states {
        return Err(Error::dim(what, expected.states, got.states));
    }
    if expected.actions != got.actions {
        return Err(Error::dim(what, expected.actions, got.actions));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(what: &'static str, expected: Dims, got: Dims) -> Result<()> {
    check_dims(what, expected, got)
}

/// Lowest-index minimiser of a non-empty row.
#[inline]
pub fn argmin<T: Scalar>(row: &[T]) -> (usize, T) {
    let mut best = 0;
    let mut val = row[0];
    for (a, v) in row.iter().enumerate().skip(1) {
        if *v < val {
            best = a;
            val = *v;
        }
    }
    (best, val)
}

/// Backward recursion for the state-action cost-to-go:
/// `Q[T] = c[T]`, `Q[t−1][s][a] = c[t−1][s][a] + γ Σ_{s'} p[t][s'][s][a] min_{a'} Q[t][s'][a']`.
pub fn backward_q<T: Scalar>(
    costs: &StageCosts<T>,
    kernel: &TransitionKernel<T>,
    discount: T,
) -> Result<StageTensor<T>> {
    let dims = kernel.dims();
    check_dims("stage costs vs kernel", dims, costs.dims())?;
    if !(discount > T::zero() && discount <= T::one()) {
        return Err(Error::param("discount", "must lie in (0, 1]"));
    }
    let (n, m) = (dims.states, dims.actions);
    let mut q = costs.clone();
    let mut next_v = vec![T::zero(); n];
    for s in 0..n {
        next_v[s] = argmin(q.row(dims.transitions(), s)).1;
    }
    for t in (1..=dims.transitions()).rev() {
        for s in 0..n {
            for a in 0..m {
                let expected: T = kernel
                    .column(t, s, a)
                    .iter()
                    .map(|(to, p)| *p * next_v[*to])
                    .sum();
                let i = dims.index(t - 1, s, a);
                q.data[i] = q.data[i] + discount * expected;
            }
        }
        for s in 0..n {
            next_v[s] = argmin(q.row(t - 1, s)).1;
        }
    }
    Ok(q)
}

/// Finite-horizon value iteration with argmin ties broken towards the
/// lowest action index.
pub fn value_iteration<T: Scalar>(
    costs: &StageCosts<T>,
    kernel: &TransitionKernel<T>,
    discount: T,
) -> Result<(ValueFunction<T>, DeterministicPolicy)> {
    if !costs.is_finite() {
        return Err(Error::param("stage costs", "entries must be finite"));
    }
    let q = backward_q(costs, kernel, discount)?;
    let dims = kernel.dims();
    let mut values = Vec::with_capacity(dims.stages() * dims.states);
    let mut actions = Vec::with_capacity(dims.stages() * dims.states);
    for t in 0..dims.stages() {
        for s in 0..dims.states {
            let (a, v) = argmin(q.row(t, s));
            values.push(v);
            actions.push(a);
        }
    }
    Ok((
        ValueFunction {
            states: dims.states,
            values,
        },
        DeterministicPolicy {
            states: dims.states,
            actions,
        },
    ))
}

/// Pushes `z` forward through `kernel` under a (possibly randomised)
/// policy. `policy(t, s, row)` must fill `row` with action probabilities
/// for `(t, s)`.
pub fn propagate<T: Scalar>(
    kernel: &TransitionKernel<T>,
    z: &InitialDistribution<T>,
    mut policy: impl FnMut(usize, usize, &mut [T]),
) -> Result<StateActionDistribution<T>> {
    let dims = kernel.dims();
    if z.states() != dims.states {
        return Err(Error::dim("initial distribution", dims.states, z.states()));
    }
    let mut d = StageTensor::zeros(dims);
    let mut inflow = z.as_slice().to_vec();
    let mut probs = vec![T::zero(); dims.actions];
    for t in 0..dims.stages() {
        if t > 0 {
            inflow.iter_mut().for_each(|v| *v = T::zero());
            for from in 0..dims.states {
                for a in 0..dims.actions {
                    let mass = d.get(t - 1, from, a);
                    if mass == T::zero() {
                        continue;
                    }
                    for (to, p) in kernel.column(t, from, a) {
                        inflow[*to] = inflow[*to] + *p * mass;
                    }
                }
            }
        }
        for s in 0..dims.states {
            if inflow[s] == T::zero() {
                continue;
            }
            probs.iter_mut().for_each(|v| *v = T::zero());
            policy(t, s, &mut probs);
            let row = d.row_mut(t, s);
            for (x, p) in row.iter_mut().zip(&probs) {
                *x = inflow[s] * *p;
            }
        }
    }
    Ok(d)
}

/// State-action distribution generated by a deterministic policy: all mass
/// reaching `(t, s)` is placed on `policy[t][s]`.
pub fn retrieve_density<T: Scalar>(
    kernel: &TransitionKernel<T>,
    z: &InitialDistribution<T>,
    policy: &DeterministicPolicy,
) -> Result<StateActionDistribution<T>> {
    let dims = kernel.dims();
    let expected = dims.stages() * dims.states;
    if policy.as_slice().len() != expected {
        return Err(Error::dim("deterministic policy", expected, policy.as_slice().len()));
    }
    propagate(kernel, z, |t, s, row| row[policy.action(t, s)] = T::one())
}

/// Flow of the policy that splits every state's mass evenly over actions.
pub fn uniform_density<T: Scalar>(
    kernel: &TransitionKernel<T>,
    z: &InitialDistribution<T>,
) -> Result<StateActionDistribution<T>> {
    let w = T::one() / T::lit(kernel.dims().actions as f64);
    propagate(kernel, z, |_, _, row| row.iter_mut().for_each(|p| *p = w))
}

/// Largest violation of the feasible-flow constraints (initial condition,
/// flow conservation at every stage, nonnegativity). Zero iff `x` is a
/// feasible occupancy measure for `(kernel, z)`.
pub fn flow_residual<T: Scalar>(
    x: &StateActionDistribution<T>,
    kernel: &TransitionKernel<T>,
    z: &InitialDistribution<T>,
) -> Result<T> {
    let dims = kernel.dims();
    check_dims("flow vs kernel", dims, x.dims())?;
    if z.states() != dims.states {
        return Err(Error::dim("initial distribution", dims.states, z.states()));
    }
    let mut worst = T::zero();
    for v in x.as_slice() {
        if v.is_nan() {
            return Ok(T::infinity());
        }
        worst = worst.max(-*v);
    }
    for s in 0..dims.states {
        worst = worst.max((x.state_mass(0, s) - z.as_slice()[s]).abs());
    }
    let mut inflow = vec![T::zero(); dims.states];
    for t in 1..dims.stages() {
        inflow.iter_mut().for_each(|v| *v = T::zero());
        for from in 0..dims.states {
            for a in 0..dims.actions {
                let mass = x.get(t - 1, from, a);
                for (to, p) in kernel.column(t, from, a) {
                    inflow[*to] = inflow[*to] + *p * mass;
                }
            }
        }
        for s in 0..dims.states {
            worst = worst.max((inflow[s] - x.state_mass(t, s)).abs());
        }
    }
    Ok(worst)
}
