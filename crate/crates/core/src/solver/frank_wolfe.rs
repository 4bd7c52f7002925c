use rayon::prelude::*;

use super::{GameInstance, SolveOptions, UpdateOrder};
use crate::game::{potential, Congestion, JointDistribution};
use crate::mdp::{retrieve_density, uniform_density, value_iteration, StageCosts, StateActionDistribution};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    /// Iteration number, starting at 1.
    pub k: usize,
    /// `F(x^k)` of the iterate produced by this iteration.
    pub potential: T,
    /// `Σ_i ⟨ℓ^i(x^{k−1}), x^{i,k−1} − b^{ik}⟩`, measured before the update.
    pub fw_gap: T,
    /// `‖x^{ik} − x^{i,k−1}‖₂` per player.
    pub movement: Vec<T>,
    /// `‖x^{ik}‖₂` per player.
    pub norms: Vec<T>,
}

impl<T: Scalar> IterationRecord<T> {
    pub fn max_movement(&self) -> T {
        self.movement.iter().fold(T::zero(), |m, v| m.max(*v))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace<T> {
    pub records: Vec<IterationRecord<T>>,
}

impl<T> ConvergenceTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord<T>> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GapTolerance,
    MovementTolerance,
    MaxIterations,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations)
    }
}

#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub x: JointDistribution<T>,
    pub trace: ConvergenceTrace<T>,
    pub stop: StopReason,
}

/// Starting point: every state splits its mass evenly over actions.
pub fn initial_iterate<T: Scalar>(instance: &GameInstance<T>) -> Result<JointDistribution<T>> {
    let players = (0..instance.players())
        .map(|i| uniform_density(instance.kernel(i), instance.initial(i)))
        .collect::<Result<Vec<_>>>()?;
    JointDistribution::new(players)
}

fn best_response<T: Scalar>(
    instance: &GameInstance<T>,
    i: usize,
    costs: &StageCosts<T>,
    discount: T,
) -> Result<StateActionDistribution<T>> {
    let (_, policy) = value_iteration(costs, instance.kernel(i), discount)?;
    retrieve_density(instance.kernel(i), instance.initial(i), &policy)
}

/// Frozen costs `ℓ^i(x)` and the deterministic best response of every
/// player against them.
pub fn best_responses<T: Scalar>(
    instance: &GameInstance<T>,
    x: &JointDistribution<T>,
    discount: T,
    parallel: bool,
) -> Result<(Vec<StageCosts<T>>, JointDistribution<T>)> {
    let model = instance.model();
    let congestion = Congestion::new(x, model)?;
    let respond = |i: usize| -> Result<(StageCosts<T>, StateActionDistribution<T>)> {
        let costs = congestion.player_cost(model, i, x.player(i))?;
        let b = best_response(instance, i, &costs, discount)?;
        Ok((costs, b))
    };
    let pairs: Vec<_> = if parallel {
        (0..x.len()).into_par_iter().map(respond).collect::<Result<_>>()?
    } else {
        (0..x.len()).map(respond).collect::<Result<_>>()?
    };
    let (costs, bs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((costs, JointDistribution::new(bs)?))
}

/// Frank-Wolfe duality gap `Σ_i ⟨c^i, x^i − b^i⟩`.
pub fn fw_gap<T: Scalar>(
    x: &JointDistribution<T>,
    b: &JointDistribution<T>,
    costs: &[StageCosts<T>],
) -> Result<T> {
    if x.len() != b.len() || x.len() != costs.len() {
        return Err(Error::dim("players", x.len(), b.len().min(costs.len())));
    }
    Ok(x.players()
        .iter()
        .zip(b.players())
        .zip(costs)
        .map(|((xi, bi), ci)| ci.dot(xi) - ci.dot(bi))
        .sum())
}

/// Frank-Wolfe over the potential with a dynamic-programming linear
/// oracle.
///
/// Iteration `k` freezes the costs at the current iterate, solves each
/// player's MDP by value iteration, turns the policy into its occupancy
/// measure `b^{ik}` and moves `x^i ← (1 − 2/(k+1))·x^i + 2/(k+1)·b^{ik}`.
/// Iterates stay feasible because every step is a convex combination of
/// feasible flows. Stops when the gap or the largest player movement
/// reaches its tolerance, or after `max_iters` iterations. On a gap stop the
/// returned iterate is the one the gap was measured at, and the last record
/// shows zero movement.
pub fn frank_wolfe<T: Scalar>(
    instance: &GameInstance<T>,
    opts: &SolveOptions<T>,
) -> Result<Solution<T>> {
    opts.validate()?;
    let model = instance.model();
    let mut x = initial_iterate(instance)?;
    let mut trace = ConvergenceTrace {
        records: Vec::with_capacity(opts.max_iters.min(1 << 16)),
    };
    let two = T::lit(2.0);
    let mut stop = StopReason::MaxIterations;
    for k in 1..=opts.max_iters {
        let step = two / T::lit((k + 1) as f64);
        let previous = x.clone();
        let gap = match opts.order {
            UpdateOrder::Jacobi => {
                let (costs, b) = best_responses(instance, &x, opts.discount, opts.parallel)?;
                let gap = fw_gap(&x, &b, &costs)?;
                for i in 0..x.len() {
                    x.player_mut(i).step_towards(b.player(i), step);
                }
                gap
            }
            UpdateOrder::GaussSeidel => {
                let mut gap = T::zero();
                for i in 0..x.len() {
                    let congestion = Congestion::new(&x, model)?;
                    let costs = congestion.player_cost(model, i, x.player(i))?;
                    let b = best_response(instance, i, &costs, opts.discount)?;
                    gap = gap + costs.dot(x.player(i)) - costs.dot(&b);
                    x.player_mut(i).step_towards(&b, step);
                }
                gap
            }
        };
        // the gap certifies the pre-step iterate; a step towards a tied best
        // response could leave the equilibrium
        let gap_met = gap <= opts.gap_tol;
        if gap_met {
            x.clone_from(&previous);
        }
        let movement: Vec<T> = x
            .players()
            .iter()
            .zip(previous.players())
            .map(|(a, b)| a.distance(b))
            .collect();
        let norms = x.players().iter().map(|xi| xi.norm2()).collect();
        let record = IterationRecord {
            k,
            potential: potential(&x, model)?,
            fw_gap: gap,
            movement,
            norms,
        };
        let max_move = record.max_movement();
        trace.records.push(record);
        if gap_met {
            stop = StopReason::GapTolerance;
            break;
        }
        if max_move <= opts.move_tol {
            stop = StopReason::MovementTolerance;
            break;
        }
    }
    Ok(Solution { x, trace, stop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::nash_gap;
    use crate::mdp::flow_residual;
    use crate::solver::fixtures;

    #[test]
    fn first_step_lands_on_best_response() {
        let inst = fixtures::constant_costs();
        let x0 = initial_iterate(&inst).unwrap();
        let (_, b) = best_responses(&inst, &x0, 1.0, false).unwrap();
        let opts = SolveOptions {
            max_iters: 5,
            gap_tol: 1e-300,
            move_tol: 1e-300,
            ..SolveOptions::default()
        };
        let sol = frank_wolfe(&inst, &opts).unwrap();
        let one = frank_wolfe(&inst, &SolveOptions { max_iters: 1, ..opts.clone() }).unwrap();
        assert_eq!(one.x.player(0), b.player(0));
        let gap = nash_gap(&sol.x, inst.model(), inst.kernels()).unwrap();
        assert!(gap.gap <= 1e-10);
        assert_eq!(sol.stop, StopReason::GapTolerance);
    }

    #[test]
    fn gap_of_point_against_itself_is_zero() {
        let inst = fixtures::congested();
        let x = initial_iterate(&inst).unwrap();
        let costs = crate::game::player_costs(&x, inst.model()).unwrap();
        assert_eq!(fw_gap(&x, &x, &costs).unwrap(), 0.0);
        let (costs, b) = best_responses(&inst, &x, 1.0, true).unwrap();
        assert!(fw_gap(&x, &b, &costs).unwrap() > 0.0);
    }

    #[test]
    fn iterates_stay_feasible_and_trace_is_bounded() {
        let inst = fixtures::congested();
        let opts = SolveOptions {
            max_iters: 50,
            gap_tol: 1e-300,
            move_tol: 1e-300,
            ..SolveOptions::default()
        };
        let sol = frank_wolfe(&inst, &opts).unwrap();
        assert_eq!(sol.trace.len(), 50);
        assert_eq!(sol.stop, StopReason::MaxIterations);
        for i in 0..2 {
            assert!(flow_residual(sol.x.player(i), inst.kernel(i), inst.initial(i)).unwrap() <= 1e-9);
        }
        let r = sol.trace.records.last().unwrap();
        assert_eq!(r.k, 50);
        assert_eq!(r.movement.len(), 2);
        assert!(r.fw_gap >= 0.0);
    }

    #[test]
    fn parallel_and_serial_traces_match() {
        let inst = fixtures::congested();
        let base = SolveOptions {
            max_iters: 30,
            ..SolveOptions::default()
        };
        let a = frank_wolfe(&inst, &base).unwrap();
        let b = frank_wolfe(&inst, &SolveOptions { parallel: false, ..base }).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn gauss_seidel_reaches_same_potential() {
        let inst = fixtures::congested();
        let base = SolveOptions {
            max_iters: 3000,
            gap_tol: 1e-300,
            move_tol: 1e-300,
            ..SolveOptions::default()
        };
        let a = frank_wolfe(&inst, &base).unwrap();
        let b = frank_wolfe(&inst, &SolveOptions { order: UpdateOrder::GaussSeidel, ..base }).unwrap();
        let (fa, fb) = (a.trace.last().unwrap().potential, b.trace.last().unwrap().potential);
        assert!((fa - fb).abs() < 1e-4, "{fa} vs {fb}");
    }

    #[test]
    fn invalid_options_rejected() {
        let inst = fixtures::congested();
        for opts in [
            SolveOptions { max_iters: 0, ..SolveOptions::default() },
            SolveOptions { gap_tol: 0.0, ..SolveOptions::default() },
            SolveOptions { move_tol: -1.0, ..SolveOptions::default() },
            SolveOptions { discount: 1.5, ..SolveOptions::default() },
        ] {
            assert!(frank_wolfe(&inst, &opts).is_err());
        }
    }

    #[test]
    fn gap_stop_returns_the_certified_iterate() {
        use crate::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors};
        use crate::mdp::{Dims, InitialDistribution, TransitionKernel};
        // best responses tie here, so stepping after the gap test leaves
        // the equilibrium
        let dims = Dims::new(2, 2, 2).unwrap();
        let steer = TransitionKernel::from_fn(dims, |_, to, from, a| if (to == from) == (a == 0) { 1.0 } else { 0.0 });
        let noise = TransitionKernel::from_fn(dims, |_, _, _, _| 0.5);
        let model = CostModel::from_fn(
            dims,
            ImpactFactors::new(vec![1.0, 2.0]).unwrap(),
            CongestionGrouping::per_state(2),
            |_, _| CostPrimitive::linear(0.0, 1.0),
            |_, _, _| CostPrimitive::zero(),
            |i, _, _, a| CostPrimitive::linear(if (a == 1) == (i == 0) { 1.0 } else { 0.0 }, 1.0),
        )
        .unwrap();
        let inst = GameInstance::new(
            vec![steer, noise],
            vec![InitialDistribution::point_mass(2, 0).unwrap(), InitialDistribution::uniform(2).unwrap()],
            model,
        )
        .unwrap();
        let opts = SolveOptions::<f64> { max_iters: 2000, gap_tol: 1e-9, ..SolveOptions::default() };
        let sol = frank_wolfe(&inst, &opts).unwrap();
        assert_eq!(sol.stop, StopReason::GapTolerance);
        let last = sol.trace.last().unwrap();
        assert!(last.max_movement() == 0.0);
        assert!((last.potential - potential(&sol.x, inst.model()).unwrap()).abs() <= 1e-12);
        let (costs, b) = best_responses(&inst, &sol.x, 1.0, false).unwrap();
        assert!(fw_gap(&sol.x, &b, &costs).unwrap() <= 1e-9);
        assert!(nash_gap(&sol.x, inst.model(), inst.kernels()).unwrap().gap <= 1e-6);
    }
}
