//! Seeded Monte Carlo rollouts of equilibrium policies: trajectory
//! sampling, collision counts and package wait times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::game::JointDistribution;
use crate::mdp::{Dims, StateActionDistribution};
use crate::solver::GameInstance;
use crate::warehouse::{GridSpec, Mode, PlayerSpec};
use crate::{Error, Result, Scalar};

/// Below this state mass the policy row falls back to uniform.
pub const MASS_FLOOR: f64 = 1e-12;

/// Randomised Markov policy `π[t][s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    dims: Dims,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(dims: Dims, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != dims.len() {
            return Err(Error::dim("policy", dims.len(), probs.len()));
        }
        for row in probs.chunks(dims.actions) {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::param("policy", "every row must be a probability vector"));
            }
        }
        Ok(StochasticPolicy { dims, probs })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn row(&self, t: usize, s: usize) -> &[f64] {
        let start = self.dims.index(t, s, 0);
        &self.probs[start..start + self.dims.actions]
    }

    pub fn prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.probs[self.dims.index(t, s, a)]
    }
}

/// Conditional action probabilities `x[t][s][a] / Σ_a' x[t][s][a']`, uniform
/// where the state carries no mass.
pub fn policy_from_distribution<T: Scalar>(x: &StateActionDistribution<T>) -> StochasticPolicy {
    let dims = x.dims();
    let uniform = 1.0 / dims.actions as f64;
    let mut probs = Vec::with_capacity(dims.len());
    for t in 0..dims.stages() {
        for s in 0..dims.states {
            let row = x.row(t, s);
            let mass: f64 = row.iter().map(|v| v.as_f64().max(0.0)).sum();
            if mass > MASS_FLOOR {
                probs.extend(row.iter().map(|v| v.as_f64().max(0.0) / mass));
            } else {
                probs.extend(std::iter::repeat_n(uniform, dims.actions));
            }
        }
    }
    StochasticPolicy { dims, probs }
}

/// Sampled state and action sequences laid out `[trial][player][t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectorySet {
    pub trials: usize,
    pub players: usize,
    pub stages: usize,
    pub seed: u64,
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl TrajectorySet {
    fn offset(&self, trial: usize, player: usize) -> usize {
        (trial * self.players + player) * self.stages
    }

    pub fn states(&self, trial: usize, player: usize) -> &[usize] {
        let o = self.offset(trial, player);
        &self.states[o..o + self.stages]
    }

    pub fn actions(&self, trial: usize, player: usize) -> &[usize] {
        let o = self.offset(trial, player);
        &self.actions[o..o + self.stages]
    }
}

fn sample_index<R: Rng>(rng: &mut R, weights: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (idx, w) in weights {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = idx;
        if u < acc {
            return idx;
        }
    }
    last
}

/// Stream of player `i` in `trial`. Streams are fixed by `(seed, trial,
/// player)` alone, so adding trials leaves earlier ones unchanged.
fn stream(seed: u64, trial: usize, player: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((trial as u64) << 20) | player as u64);
    rng
}

/// Samples every player's chain independently in each trial.
pub fn sample_trajectories<T: Scalar>(
    instance: &GameInstance<T>,
    policies: &[StochasticPolicy],
    trials: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    let players = instance.players();
    let dims = instance.dims();
    if policies.len() != players {
        return Err(Error::dim("policies", players, policies.len()));
    }
    for p in policies {
        crate::mdp::ensure_same_dims("policy vs instance", dims, p.dims())?;
    }
    let stages = dims.stages();
    let initial: Vec<Vec<f64>> = instance
        .initials()
        .iter()
        .map(|z| z.as_slice().iter().map(|v| v.as_f64()).collect())
        .collect();
    let chunks: Vec<(Vec<usize>, Vec<usize>)> = (0..trials * players)
        .into_par_iter()
        .map(|job| {
            let (trial, i) = (job / players, job % players);
            let mut rng = stream(seed, trial, i);
            let kernel = instance.kernel(i);
            let mut states = Vec::with_capacity(stages);
            let mut actions = Vec::with_capacity(stages);
            let mut s = sample_index(&mut rng, initial[i].iter().copied().enumerate());
            for t in 0..stages {
                let a = sample_index(&mut rng, policies[i].row(t, s).iter().copied().enumerate());
                states.push(s);
                actions.push(a);
                if t + 1 < stages {
                    let column = kernel.column(t + 1, s, a);
                    s = sample_index(&mut rng, column.iter().map(|(to, p)| (*to, p.as_f64())));
                }
            }
            (states, actions)
        })
        .collect();
    let mut set = TrajectorySet {
        trials,
        players,
        stages,
        seed,
        states: Vec::with_capacity(trials * players * stages),
        actions: Vec::with_capacity(trials * players * stages),
    };
    for (s, a) in chunks {
        set.states.extend(s);
        set.actions.extend(a);
    }
    Ok(set)
}

/// Collision tallies: `per_trial[trial][player]` totals and the mean per
/// player and time step.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionCounts {
    pub per_trial: Vec<Vec<usize>>,
    /// `[player][t]`, averaged over trials.
    pub mean_per_t: Vec<Vec<f64>>,
}

impl CollisionCounts {
    /// Mean collisions of each player over the whole horizon.
    pub fn mean_total(&self) -> Vec<f64> {
        self.mean_per_t.iter().map(|row| row.iter().sum()).collect()
    }
}

/// Every unordered pair of players on the same grid cell at the same time
/// (modes ignored) adds one collision to each member of the pair.
pub fn count_collisions(trajectories: &TrajectorySet, grid: &GridSpec) -> CollisionCounts {
    let (n, stages) = (trajectories.players, trajectories.stages);
    let mut per_trial = vec![vec![0usize; n]; trajectories.trials];
    let mut sums = vec![vec![0usize; stages]; n];
    let mut cells = vec![0usize; n];
    for (trial, totals) in per_trial.iter_mut().enumerate() {
        for t in 0..stages {
            for (i, cell) in cells.iter_mut().enumerate() {
                *cell = grid.location_index(grid.decode(trajectories.states(trial, i)[t]).0);
            }
            for i in 0..n {
                let hits = (0..n).filter(|j| *j != i && cells[*j] == cells[i]).count();
                totals[i] += hits;
                sums[i][t] += hits;
            }
        }
    }
    let trials = trajectories.trials.max(1) as f64;
    let mean_per_t = sums
        .into_iter()
        .map(|row| row.into_iter().map(|c| c as f64 / trials).collect())
        .collect();
    CollisionCounts { per_trial, mean_per_t }
}

/// Completed package cycles of one player.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WaitStats {
    /// Length of every completed cycle, from the previous delivery (or the
    /// start) to the next delivery.
    pub cycles: Vec<usize>,
    /// Steps spent on the pickup chute waiting for a package in each
    /// completed cycle.
    pub dwell: Vec<usize>,
    /// Packages picked up but not yet delivered at the horizon.
    pub incomplete: usize,
}

impl WaitStats {
    pub fn mean(&self) -> Option<f64> {
        if self.cycles.is_empty() {
            None
        } else {
            Some(self.cycles.iter().sum::<usize>() as f64 / self.cycles.len() as f64)
        }
    }

    pub fn worst(&self) -> Option<usize> {
        self.cycles.iter().copied().max()
    }

    pub fn shortest(&self) -> Option<usize> {
        self.cycles.iter().copied().min()
    }

    /// Cycle lengths minus time spent waiting on the pickup chute.
    pub fn travel(&self) -> Vec<usize> {
        self.cycles.iter().zip(&self.dwell).map(|(c, d)| c - d).collect()
    }
}

/// Package cycles per player, pooled over trials.
///
/// Entering dropoff mode means a package was acquired; re-entering pickup
/// mode on the dropoff chute means it was delivered. A cycle runs from the
/// start of the trajectory or the previous delivery to the next delivery.
/// Packages still carried at the horizon are counted as incomplete.
pub fn wait_times(trajectories: &TrajectorySet, grid: &GridSpec, players: &[PlayerSpec]) -> Result<Vec<WaitStats>> {
    if players.len() != trajectories.players {
        return Err(Error::dim("player specs", trajectories.players, players.len()));
    }
    let mut out = vec![WaitStats::default(); players.len()];
    for trial in 0..trajectories.trials {
        for (i, spec) in players.iter().enumerate() {
            let states = trajectories.states(trial, i);
            let stats = &mut out[i];
            let mut start = 0;
            let mut dwell = 0;
            let mut carrying = false;
            let mut acquired = false;
            for t in 0..states.len() {
                let (u, mode) = grid.decode(states[t]);
                if t > 0 {
                    let (_, before) = grid.decode(states[t - 1]);
                    if before == Mode::Pickup && mode == Mode::Dropoff {
                        carrying = true;
                        acquired = true;
                    } else if before == Mode::Dropoff && mode == Mode::Pickup && u == spec.dropoff {
                        if acquired {
                            stats.cycles.push(t - start);
                            stats.dwell.push(dwell);
                        }
                        start = t;
                        dwell = 0;
                        carrying = false;
                        acquired = false;
                    }
                }
                if mode == Mode::Pickup && u == spec.pickup {
                    dwell += 1;
                }
            }
            if carrying {
                stats.incomplete += 1;
            }
        }
    }
    Ok(out)
}

/// Summary statistics behind the collision and wait-time figures.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutReport {
    pub trials: usize,
    pub seed: u64,
    /// Mean collisions per player over the horizon.
    pub mean_collisions: Vec<f64>,
    /// `[player][t]` mean collisions.
    pub collisions_per_t: Vec<Vec<f64>>,
    pub mean_wait: Vec<Option<f64>>,
    pub worst_wait: Vec<Option<usize>>,
    pub completed: Vec<usize>,
    pub incomplete: Vec<usize>,
}

/// Samples `trials` rollouts of the policies induced by `x` and summarises
/// collisions and package cycles.
pub fn evaluate<T: Scalar>(
    instance: &GameInstance<T>,
    grid: &GridSpec,
    players: &[PlayerSpec],
    x: &JointDistribution<T>,
    trials: usize,
    seed: u64,
) -> Result<RolloutReport> {
    if trials == 0 {
        return Err(Error::param("trials", "need at least one trial"));
    }
    if grid.states() != instance.dims().states {
        return Err(Error::dim("grid states", instance.dims().states, grid.states()));
    }
    let policies: Vec<_> = x.players().iter().map(policy_from_distribution).collect();
    let trajectories = sample_trajectories(instance, &policies, trials, seed)?;
    let collisions = count_collisions(&trajectories, grid);
    let waits = wait_times(&trajectories, grid, players)?;
    Ok(RolloutReport {
        trials,
        seed,
        mean_collisions: collisions.mean_total(),
        collisions_per_t: collisions.mean_per_t,
        mean_wait: waits.iter().map(WaitStats::mean).collect(),
        worst_wait: waits.iter().map(WaitStats::worst).collect(),
        completed: waits.iter().map(|w| w.cycles.len()).collect(),
        incomplete: waits.iter().map(|w| w.incomplete).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors};
    use crate::mdp::{propagate, retrieve_density, DeterministicPolicy, InitialDistribution, StageTensor, TransitionKernel};
    use crate::warehouse::{build_kernel_with_arrival, Location};

    fn pinned(grid: &GridSpec, cells: &[Location], horizon: usize) -> (GameInstance<f64>, Vec<StochasticPolicy>) {
        let dims = Dims::new(horizon, grid.states(), 5).unwrap();
        let kernels = cells.iter().map(|_| TransitionKernel::identity(dims)).collect();
        let initial = cells
            .iter()
            .map(|u| InitialDistribution::point_mass(grid.states(), grid.state(*u, Mode::Pickup)).unwrap())
            .collect();
        let model = CostModel::from_fn(
            dims,
            ImpactFactors::uniform(cells.len()).unwrap(),
            CongestionGrouping::per_state(grid.states()),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
        )
        .unwrap();
        let instance = GameInstance::new(kernels, initial, model).unwrap();
        let uniform = policy_from_distribution(&StageTensor::<f64>::zeros(dims));
        (instance, vec![uniform; cells.len()])
    }

    #[test]
    fn zero_mass_rows_are_uniform() {
        let dims = Dims::new(1, 2, 4).unwrap();
        let mut x = StageTensor::zeros(dims);
        x.set(0, 0, 1, 0.5);
        x.set(0, 0, 3, 0.5);
        let pi = policy_from_distribution(&x);
        assert_eq!(pi.row(0, 0), &[0.0, 0.5, 0.0, 0.5]);
        assert_eq!(pi.row(1, 1), &[0.25; 4]);
    }

    #[test]
    fn deterministic_density_gives_source_policy() {
        let dims = Dims::new(3, 3, 2).unwrap();
        let kernel = TransitionKernel::from_fn(dims, |_, to, from, a| if to == (from + a) % 3 { 1.0 } else { 0.0 });
        let z = InitialDistribution::point_mass(3, 0).unwrap();
        let policy = DeterministicPolicy::new(dims, vec![1, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0]).unwrap();
        let x = retrieve_density(&kernel, &z, &policy).unwrap();
        let pi = policy_from_distribution(&x);
        for t in 0..dims.stages() {
            for s in 0..3 {
                if x.state_mass(t, s) > 0.0 {
                    assert_eq!(pi.prob(t, s, policy.action(t, s)), 1.0);
                }
            }
        }
        let back = propagate(&kernel, &z, |t, s, row| row.copy_from_slice(pi.row(t, s))).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn pinned_pair_collides_every_step() {
        let grid = GridSpec::new(2, 2).unwrap();
        let here = Location::new(1, 1);
        let (instance, policies) = pinned(&grid, &[here, here], 6);
        let traj = sample_trajectories(&instance, &policies, 3, 9).unwrap();
        let counts = count_collisions(&traj, &grid);
        for totals in &counts.per_trial {
            assert_eq!(totals, &vec![7, 7]);
        }
        assert_eq!(counts.mean_total(), vec![7.0, 7.0]);
    }

    #[test]
    fn disjoint_players_never_collide() {
        let grid = GridSpec::new(2, 2).unwrap();
        let (instance, policies) = pinned(&grid, &[Location::new(0, 0), Location::new(1, 1)], 4);
        let traj = sample_trajectories(&instance, &policies, 5, 1).unwrap();
        assert_eq!(count_collisions(&traj, &grid).mean_total(), vec![0.0, 0.0]);
    }

    #[test]
    fn triple_counts_two_pairs_each() {
        let grid = GridSpec::new(2, 2).unwrap();
        let here = Location::new(0, 1);
        let (instance, policies) = pinned(&grid, &[here, here, here], 1);
        let traj = sample_trajectories(&instance, &policies, 1, 0).unwrap();
        let counts = count_collisions(&traj, &grid);
        assert_eq!(counts.mean_per_t[0], vec![2.0, 2.0]);
        assert_eq!(counts.per_trial[0], vec![4, 4, 4]);
    }

    #[test]
    fn modes_are_ignored_for_collisions() {
        let grid = GridSpec::new(1, 2).unwrap();
        let traj = TrajectorySet {
            trials: 1,
            players: 2,
            stages: 1,
            seed: 0,
            states: vec![grid.state(Location::new(0, 1), Mode::Pickup), grid.state(Location::new(0, 1), Mode::Dropoff)],
            actions: vec![0, 0],
        };
        assert_eq!(count_collisions(&traj, &grid).per_trial[0], vec![1, 1]);
    }

    #[test]
    fn same_seed_same_trajectories() {
        let grid = GridSpec::new(2, 3).unwrap();
        let spec = PlayerSpec {
            pickup: Location::new(1, 2),
            dropoff: Location::new(0, 0),
            arrival_rate: 0.5,
            alpha: 1.0,
            initial_mode: Mode::Pickup,
        };
        let kernel = build_kernel_with_arrival::<f64>(&grid, &spec, 0.8, 0.5, 10).unwrap();
        let dims = kernel.dims();
        let z = InitialDistribution::point_mass(grid.states(), grid.state(spec.dropoff, Mode::Pickup)).unwrap();
        let model = CostModel::from_fn(
            dims,
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(grid.states()),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
        )
        .unwrap();
        let instance = GameInstance::new(vec![kernel], vec![z], model).unwrap();
        let pi = vec![policy_from_distribution(&StageTensor::<f64>::zeros(dims))];
        let a = sample_trajectories(&instance, &pi, 20, 42).unwrap();
        let b = sample_trajectories(&instance, &pi, 20, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectories(&instance, &pi, 30, 42).unwrap();
        assert_eq!(a.states(7, 0), c.states(7, 0));
        let d = sample_trajectories(&instance, &pi, 20, 43).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn wait_cycle_from_events() {
        let grid = GridSpec::new(1, 3).unwrap();
        let spec = PlayerSpec {
            pickup: Location::new(0, 2),
            dropoff: Location::new(0, 0),
            arrival_rate: 0.5,
            alpha: 1.0,
            initial_mode: Mode::Pickup,
        };
        let st = |c: usize, m: Mode| grid.state(Location::new(0, c), m);
        // start at d, walk to p, wait one step, acquire, walk back, deliver, leave again and acquire
        let states = vec![
            st(0, Mode::Pickup),
            st(1, Mode::Pickup),
            st(2, Mode::Pickup),
            st(2, Mode::Dropoff),
            st(1, Mode::Dropoff),
            st(0, Mode::Pickup),
            st(1, Mode::Pickup),
            st(2, Mode::Dropoff),
        ];
        let traj = TrajectorySet {
            trials: 1,
            players: 1,
            stages: states.len(),
            seed: 0,
            actions: vec![0; states.len()],
            states,
        };
        let w = &wait_times(&traj, &grid, &[spec]).unwrap()[0];
        assert_eq!(w.cycles, vec![5]);
        assert_eq!(w.dwell, vec![1]);
        assert_eq!(w.travel(), vec![4]);
        assert_eq!(w.incomplete, 1);
        assert_eq!((w.mean(), w.worst()), (Some(5.0), Some(5)));
    }

    #[test]
    fn no_switch_means_no_packages() {
        let grid = GridSpec::new(1, 3).unwrap();
        let spec = PlayerSpec {
            pickup: Location::new(0, 2),
            dropoff: Location::new(0, 0),
            arrival_rate: 0.5,
            alpha: 1.0,
            initial_mode: Mode::Pickup,
        };
        let kernel = build_kernel_with_arrival::<f64>(&grid, &spec, 1.0, 0.0, 12).unwrap();
        let dims = kernel.dims();
        let z = InitialDistribution::point_mass(grid.states(), grid.state(spec.dropoff, Mode::Pickup)).unwrap();
        let model = CostModel::from_fn(
            dims,
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(grid.states()),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
        )
        .unwrap();
        let instance = GameInstance::new(vec![kernel], vec![z], model).unwrap();
        let pi = vec![policy_from_distribution(&StageTensor::<f64>::zeros(dims))];
        let traj = sample_trajectories(&instance, &pi, 50, 3).unwrap();
        let w = &wait_times(&traj, &grid, &[spec]).unwrap()[0];
        assert!(w.cycles.is_empty());
        assert_eq!(w.incomplete, 0);
        assert_eq!(w.mean(), None);
    }
}
