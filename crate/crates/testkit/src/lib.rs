//! Independent oracles and instance generators for testing `mdpcg`.
//!
//! Nothing here calls the solver under test: policy enumeration evaluates
//! policies by its own forward pass, and the potential minimiser is a
//! projected-gradient method with exact Euclidean projections onto each
//! player's flow polytope.

use mdpcg::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors, JointDistribution};
use mdpcg::mdp::{Dims, InitialDistribution, StageTensor, TransitionKernel};
use mdpcg::solver::GameInstance;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub players: usize,
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Shape {
    pub fn variables(&self) -> usize {
        self.players * (self.horizon + 1) * self.states * self.actions
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.horizon, self.states, self.actions).unwrap()
    }
}

/// Random probability vector with some zero entries.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if sparse && rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() + 0.05 })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        let k = rng.gen_range(0..n);
        w[k] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

pub fn random_kernel<R: Rng>(rng: &mut R, dims: Dims) -> TransitionKernel<f64> {
    let (n, m) = (dims.states, dims.actions);
    let mut data = vec![0.0; dims.transitions() * n * n * m];
    for t in 0..dims.transitions() {
        for from in 0..n {
            for a in 0..m {
                let col = random_simplex(rng, n, true);
                for (to, p) in col.into_iter().enumerate() {
                    data[((t * n + to) * n + from) * m + a] = p;
                }
            }
        }
    }
    TransitionKernel::from_dense(dims, data).unwrap()
}

fn nondecreasing<R: Rng>(rng: &mut R) -> CostPrimitive<f64> {
    match rng.gen_range(0..3) {
        0 => CostPrimitive::constant(rng.gen_range(-1.0..1.0)),
        1 => CostPrimitive::linear(rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0)),
        _ => CostPrimitive::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.0..2.0),
        )
        .unwrap(),
    }
}

fn strictly_increasing<R: Rng>(rng: &mut R) -> CostPrimitive<f64> {
    if rng.gen_bool(0.5) {
        CostPrimitive::linear(rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0))
    } else {
        CostPrimitive::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.0..1.5),
        )
        .unwrap()
    }
}

/// Random cost model satisfying the admissibility conditions. States are
/// grouped at random for the shared congestion term.
pub fn random_model<R: Rng>(rng: &mut R, shape: Shape) -> CostModel<f64> {
    let dims = shape.dims();
    let groups = rng.gen_range(1..=shape.states);
    let group_of: Vec<usize> = (0..shape.states)
        .map(|s| if s < groups { s } else { rng.gen_range(0..groups) })
        .collect();
    let alpha: Vec<f64> = (0..shape.players).map(|_| rng.gen_range(0.5..1.5)).collect();
    let f: Vec<_> = (0..dims.stages() * groups).map(|_| nondecreasing(rng)).collect();
    let g: Vec<_> = (0..dims.len()).map(|_| nondecreasing(rng)).collect();
    let h: Vec<_> = (0..shape.players * dims.len()).map(|_| strictly_increasing(rng)).collect();
    CostModel::new(
        dims,
        ImpactFactors::new(alpha).unwrap(),
        CongestionGrouping::new(group_of).unwrap(),
        f,
        g,
        h,
    )
    .unwrap()
}

pub fn random_instance<R: Rng>(rng: &mut R, shape: Shape) -> GameInstance<f64> {
    let dims = shape.dims();
    let kernels = (0..shape.players).map(|_| random_kernel(rng, dims)).collect();
    let initial = (0..shape.players)
        .map(|_| InitialDistribution::new(random_simplex(rng, shape.states, false)).unwrap())
        .collect();
    let model = random_model(rng, shape);
    GameInstance::new(kernels, initial, model).unwrap()
}

/// Random shape with `N ≤ 3, S ≤ 4, A ≤ 3, T ≤ 4`.
pub fn random_shape<R: Rng>(rng: &mut R) -> Shape {
    Shape {
        players: rng.gen_range(1..=3),
        states: rng.gen_range(1..=4),
        actions: rng.gen_range(1..=3),
        horizon: rng.gen_range(1..=4),
    }
}

/// Seeded instance small enough for the potential minimiser (at most 32
/// variables).
pub fn oracle_instance(seed: u64) -> GameInstance<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape {
        players: 2,
        states: 2,
        actions: 2,
        horizon: rng.gen_range(1..=3),
    };
    assert!(shape.variables() <= 32);
    random_instance(&mut rng, shape)
}

/// Expected total cost of a deterministic policy, `actions[t][s]`, from
/// initial distribution `z`, by a direct forward pass over state
/// distributions.
pub fn evaluate_policy(
    costs: &StageTensor<f64>,
    kernel: &TransitionKernel<f64>,
    z: &[f64],
    actions: &[usize],
) -> f64 {
    let dims = kernel.dims();
    let n = dims.states;
    let mut dist = z.to_vec();
    let mut total = 0.0;
    for t in 0..dims.stages() {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let a = actions[t * n + s];
            total += dist[s] * costs.get(t, s, a);
            if t < dims.transitions() {
                for (to, slot) in next.iter_mut().enumerate() {
                    *slot += kernel.prob(t + 1, to, s, a) * dist[s];
                }
            }
        }
        dist = next;
    }
    total
}

/// Minimum expected cost over all deterministic Markov policies starting
/// from state `start`, by exhaustive enumeration.
pub fn enumerate_optimal_value(costs: &StageTensor<f64>, kernel: &TransitionKernel<f64>, start: usize) -> f64 {
    let dims = kernel.dims();
    let slots = dims.stages() * dims.states;
    let count = (dims.actions as u64).pow(slots as u32);
    assert!(count <= 1 << 22, "too many policies to enumerate");
    let mut z = vec![0.0; dims.states];
    z[start] = 1.0;
    let mut actions = vec![0usize; slots];
    let mut best = f64::INFINITY;
    for code in 0..count {
        let mut c = code;
        for slot in actions.iter_mut() {
            *slot = (c % dims.actions as u64) as usize;
            c /= dims.actions as u64;
        }
        best = best.min(evaluate_policy(costs, kernel, &z, &actions));
    }
    best
}

/// Equality constraints `E x = b` of one player's flow polytope.
fn flow_constraints(kernel: &TransitionKernel<f64>, z: &InitialDistribution<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let dims = kernel.dims();
    let (n, m) = (dims.states, dims.actions);
    let rows = dims.stages() * n;
    let mut e = DMatrix::zeros(rows, dims.len());
    let mut b = DVector::zeros(rows);
    for t in 0..dims.stages() {
        for s in 0..n {
            let r = t * n + s;
            for a in 0..m {
                e[(r, dims.index(t, s, a))] = 1.0;
            }
            if t == 0 {
                b[r] = z.as_slice()[s];
            } else {
                for from in 0..n {
                    for a in 0..m {
                        e[(r, dims.index(t - 1, from, a))] -= kernel.prob(t, s, from, a);
                    }
                }
            }
        }
    }
    (e, b)
}

/// Euclidean projection onto `{x : E x = b, x ≥ 0}` by Dykstra's
/// alternating projections.
pub struct FlowProjector {
    e: DMatrix<f64>,
    b: DVector<f64>,
    gram_inv: DMatrix<f64>,
}

impl FlowProjector {
    pub fn new(kernel: &TransitionKernel<f64>, z: &InitialDistribution<f64>) -> Self {
        let (e, b) = flow_constraints(kernel, z);
        let gram = &e * e.transpose();
        let gram_inv = gram.try_inverse().expect("flow constraints have full row rank");
        FlowProjector { e, b, gram_inv }
    }

    fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.e * x - &self.b;
        x - self.e.transpose() * (&self.gram_inv * r)
    }

    /// Exact projection by a primal-dual active-set iteration on the KKT
    /// system, falling back to Dykstra if the active set does not settle.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        self.active_set(v).unwrap_or_else(|| self.dykstra(v))
    }

    fn active_set(&self, v: &DVector<f64>) -> Option<DVector<f64>> {
        let n = v.len();
        let mut active: Vec<bool> = vec![false; n];
        for _ in 0..200 {
            let free: Vec<usize> = (0..n).filter(|j| !active[*j]).collect();
            let ef = self.e.select_columns(&free);
            let vf = DVector::from_iterator(free.len(), free.iter().map(|j| v[*j]));
            let gram = &ef * ef.transpose();
            let rhs = &ef * &vf - &self.b;
            let lambda = gram.svd(true, true).solve(&rhs, 1e-13).ok()?;
            let mut x = DVector::zeros(n);
            let xf = &vf - ef.transpose() * &lambda;
            for (k, j) in free.iter().enumerate() {
                x[*j] = xf[k];
            }
            let mu = self.e.transpose() * &lambda - v;
            let next: Vec<bool> = (0..n)
                .map(|j| if active[j] { mu[j] > 0.0 || mu[j] - x[j] > 0.0 } else { -x[j] > 0.0 })
                .collect();
            if next == active {
                let ok = self.residual(&x) < 1e-11 && (0..n).all(|j| !active[j] || mu[j] >= -1e-11);
                return ok.then_some(x.map(|v| v.max(0.0)));
            }
            active = next;
        }
        None
    }

    fn dykstra(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut x = v.clone();
        let mut p = DVector::zeros(v.len());
        let mut q = DVector::zeros(v.len());
        for _ in 0..20_000 {
            let y = self.affine(&(&x + &p));
            p = &x + &p - &y;
            let next = (&y + &q).map(|v| v.max(0.0));
            q = &y + &q - &next;
            let change = (&next - &x).amax();
            x = next;
            if change < 1e-15 {
                break;
            }
        }
        x
    }

    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        (&self.e * x - &self.b).amax().max(-x.min().min(0.0))
    }
}

#[derive(Debug, Clone)]
pub struct PotentialMinimum {
    pub x: JointDistribution<f64>,
    pub potential: f64,
    pub iterations: usize,
}

/// Minimises the potential by projected gradient descent with a
/// backtracked step. Potential and gradient are evaluated through closures
/// so the oracle carries no solver logic of its own.
pub fn minimize_potential(
    instance: &GameInstance<f64>,
    potential: impl Fn(&JointDistribution<f64>) -> f64,
    gradient: impl Fn(&JointDistribution<f64>) -> Vec<StageTensor<f64>>,
    max_iters: usize,
) -> PotentialMinimum {
    let dims = instance.dims();
    let projectors: Vec<FlowProjector> = (0..instance.players())
        .map(|i| FlowProjector::new(instance.kernel(i), instance.initial(i)))
        .collect();
    let to_joint = |v: &[DVector<f64>]| {
        JointDistribution::new(
            v.iter()
                .map(|xi| StageTensor::from_vec(dims, xi.iter().copied().collect()).unwrap())
                .collect(),
        )
        .unwrap()
    };
    let uniform = vec![0.0; dims.len()];
    let mut x: Vec<DVector<f64>> = projectors
        .iter()
        .map(|p| p.project(&DVector::from_vec(uniform.clone())))
        .collect();
    let flat = |g: &[StageTensor<f64>]| -> Vec<DVector<f64>> {
        g.iter().map(|gi| DVector::from_column_slice(gi.as_slice())).collect()
    };
    let mut grad = flat(&gradient(&to_joint(&x)));
    let mut step = 1.0;
    let mut iterations = 0;
    for k in 0..max_iters {
        iterations = k + 1;
        // backtrack on a local Lipschitz estimate from gradient differences,
        // which stays accurate long after potential values stop resolving
        let (candidate, cand_grad) = loop {
            let candidate: Vec<DVector<f64>> = x
                .iter()
                .zip(&grad)
                .zip(&projectors)
                .map(|((xi, gi), p)| p.project(&(xi - step * gi)))
                .collect();
            let cand_grad = flat(&gradient(&to_joint(&candidate)));
            let (mut curv, mut dist) = (0.0, 0.0);
            for i in 0..x.len() {
                let d = &candidate[i] - &x[i];
                curv += (&cand_grad[i] - &grad[i]).dot(&d);
                dist += d.norm_squared();
            }
            if curv <= dist / step || step < 1e-12 {
                break (candidate, cand_grad);
            }
            step *= 0.5;
        };
        let moved: f64 = x.iter().zip(&candidate).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        x = candidate;
        grad = cand_grad;
        step *= 1.25;
        if moved < 1e-15 {
            break;
        }
    }
    let fx = potential(&to_joint(&x));
    PotentialMinimum {
        x: to_joint(&x),
        potential: fx,
        iterations,
    }
}

/// Central difference `(F(x + h e) − F(x − h e)) / 2h` along one coordinate.
pub fn central_difference(
    f: impl Fn(&JointDistribution<f64>) -> f64,
    x: &JointDistribution<f64>,
    player: usize,
    index: usize,
    h: f64,
) -> f64 {
    let mut plus = x.clone();
    plus.player_mut(player).as_mut_slice()[index] += h;
    let mut minus = x.clone();
    minus.player_mut(player).as_mut_slice()[index] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Random nonnegative joint distribution (not necessarily feasible).
pub fn random_joint<R: Rng>(rng: &mut R, players: usize, dims: Dims) -> JointDistribution<f64> {
    JointDistribution::new(
        (0..players)
            .map(|_| StageTensor::from_fn(dims, |_, _, _| rng.gen_range(0.0..1.0)))
            .collect(),
    )
    .unwrap()
}
