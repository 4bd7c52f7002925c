//! Congestion-game layer: joint distributions, congestion, player costs,
//! the potential, Q-values and equilibrium measurements.

mod cost;
mod jacobian;

pub use cost::{
    check_cost_admissibility, Admissibility, AdmissibilityViolation, CongestionGrouping,
    CostModel, CostPrimitive, ImpactFactors, PrimitiveKind,
};
pub use jacobian::{check_jacobian_symmetry, Coord, JacobianFailure, JacobianVerdict};

use rayon::prelude::*;

use crate::mdp::{argmin, backward_q, ensure_same_dims, Dims, StageCosts, StageTensor, StateActionDistribution, TransitionKernel};
use crate::{Error, Result, Scalar};

/// Mass at or below this value is treated as "not played" by [`nash_gap`].
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

/// One state-action distribution per player.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution<T> {
    players: Vec<StateActionDistribution<T>>,
}

impl<T: Scalar> JointDistribution<T> {
    pub fn new(players: Vec<StateActionDistribution<T>>) -> Result<Self> {
        let first = players
            .first()
            .ok_or_else(|| Error::param("joint distribution", "need at least one player"))?
            .dims();
        for x in &players[1..] {
            ensure_same_dims("joint distribution player", first, x.dims())?;
        }
        Ok(JointDistribution { players })
    }

    pub fn dims(&self) -> Dims {
        self.players[0].dims()
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }

    pub fn player(&self, i: usize) -> &StateActionDistribution<T> {
        &self.players[i]
    }

    pub fn player_mut(&mut self, i: usize) -> &mut StateActionDistribution<T> {
        &mut self.players[i]
    }

    pub fn players(&self) -> &[StateActionDistribution<T>] {
        &self.players
    }

    pub fn into_players(self) -> Vec<StateActionDistribution<T>> {
        self.players
    }

    /// `Σ_i ‖x^i − other^i‖²`.
    pub fn squared_distance(&self, other: &Self) -> T {
        self.players
            .iter()
            .zip(&other.players)
            .map(|(a, b)| {
                let d = a.distance(b);
                d * d
            })
            .sum()
    }
}

/// Anything that maps a joint distribution to per-player stage costs.
pub trait CostOperator<T: Scalar>: Sync {
    fn players(&self) -> usize;
    fn dims(&self) -> Dims;
    fn costs(&self, x: &JointDistribution<T>) -> Result<Vec<StageCosts<T>>>;
}

impl<T: Scalar> CostOperator<T> for CostModel<T> {
    fn players(&self) -> usize {
        CostModel::players(self)
    }

    fn dims(&self) -> Dims {
        CostModel::dims(self)
    }

    fn costs(&self, x: &JointDistribution<T>) -> Result<Vec<StageCosts<T>>> {
        player_costs(x, self)
    }
}

fn check_model<T: Scalar>(x: &JointDistribution<T>, model: &CostModel<T>) -> Result<()> {
    ensure_same_dims("joint distribution vs cost model", model.dims(), x.dims())?;
    if x.len() != model.players() {
        return Err(Error::dim("players", model.players(), x.len()));
    }
    Ok(())
}

/// `y[t][s][a] = Σ_i α_i x^i[t][s][a]`.
pub fn congestion_distribution<T: Scalar>(
    x: &JointDistribution<T>,
    alpha: &ImpactFactors<T>,
) -> Result<StageTensor<T>> {
    if x.len() != alpha.len() {
        return Err(Error::dim("impact factors", x.len(), alpha.len()));
    }
    let mut y = StageTensor::zeros(x.dims());
    for (xi, ai) in x.players().iter().zip(alpha.as_slice()) {
        for (yv, xv) in y.as_mut_slice().iter_mut().zip(xi.as_slice()) {
            *yv = *yv + *ai * *xv;
        }
    }
    Ok(y)
}

/// Shared congestion quantities of one joint distribution: `y`, the pooled
/// loads per `(t, group)` and the congestion part of every player's cost
/// before scaling by `α_i`.
#[derive(Debug, Clone)]
pub struct Congestion<T> {
    pub y: StageTensor<T>,
    /// `w[t][group]`
    pub loads: Vec<T>,
    /// `f[t][G(s)](w) + g[t][s][a](y)`, indexed like `y`.
    pub shared_cost: StageTensor<T>,
}

impl<T: Scalar> Congestion<T> {
    pub fn new(x: &JointDistribution<T>, model: &CostModel<T>) -> Result<Self> {
        check_model(x, model)?;
        let dims = model.dims();
        let grouping = model.grouping();
        let groups = grouping.groups();
        let y = congestion_distribution(x, model.alpha())?;
        let mut loads = vec![T::zero(); dims.stages() * groups];
        for t in 0..dims.stages() {
            for s in 0..dims.states {
                let k = t * groups + grouping.group(s);
                loads[k] = loads[k] + y.state_mass(t, s);
            }
        }
        let mut shared_cost = StageTensor::zeros(dims);
        for t in 0..dims.stages() {
            for s in 0..dims.states {
                let fv = model.f(t, grouping.group(s)).eval(loads[t * groups + grouping.group(s)]);
                for a in 0..dims.actions {
                    let gv = model.g(t, s, a).eval(y.get(t, s, a));
                    shared_cost.set(t, s, a, fv + gv);
                }
            }
        }
        Ok(Congestion {
            y,
            loads,
            shared_cost,
        })
    }

    /// Stage costs `ℓ^i` of player `i` whose own flow is `xi`.
    pub fn player_cost(
        &self,
        model: &CostModel<T>,
        i: usize,
        xi: &StateActionDistribution<T>,
    ) -> Result<StageCosts<T>> {
        let dims = model.dims();
        let alpha = model.alpha().as_slice()[i];
        let h = model.h_player(i);
        let mut out = StageTensor::zeros(dims);
        for (idx, ((o, shared), xv)) in out
            .as_mut_slice()
            .iter_mut()
            .zip(self.shared_cost.as_slice())
            .zip(xi.as_slice())
            .enumerate()
        {
            let v = alpha * *shared + h[idx].eval(*xv);
            if !v.is_finite() {
                let (t, s, a) = dims.coords(idx);
                return Err(Error::NonFiniteCost { player: i, t, s, a });
            }
            *o = v;
        }
        Ok(out)
    }
}

/// Stage costs `ℓ^i(x)` of every player.
pub fn player_costs<T: Scalar>(
    x: &JointDistribution<T>,
    model: &CostModel<T>,
) -> Result<Vec<StageCosts<T>>> {
    let congestion = Congestion::new(x, model)?;
    (0..x.len())
        .into_par_iter()
        .map(|i| congestion.player_cost(model, i, x.player(i)))
        .collect()
}

/// Potential `F(x)`: the sum of the antiderivatives of `f`, `g` and every
/// `h^i`, each taken from zero up to its congestion or flow argument.
pub fn potential<T: Scalar>(x: &JointDistribution<T>, model: &CostModel<T>) -> Result<T> {
    check_model(x, model)?;
    let dims = model.dims();
    let groups = model.grouping().groups();
    let congestion_y = congestion_distribution(x, model.alpha())?;
    let mut loads = vec![T::zero(); dims.stages() * groups];
    for t in 0..dims.stages() {
        for s in 0..dims.states {
            let k = t * groups + model.grouping().group(s);
            loads[k] = loads[k] + congestion_y.state_mass(t, s);
        }
    }
    let mut total = T::zero();
    for (k, w) in loads.iter().enumerate() {
        total = total + model.f(k / groups, k % groups).integral(*w);
    }
    for (p, yv) in model.g_all().iter().zip(congestion_y.as_slice()) {
        total = total + p.integral(*yv);
    }
    for i in 0..x.len() {
        for (p, xv) in model.h_player(i).iter().zip(x.player(i).as_slice()) {
            total = total + p.integral(*xv);
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinitePotential);
    }
    Ok(total)
}

/// Per-player Q-values at a frozen joint distribution.
pub type QValues<T> = Vec<StageTensor<T>>;

/// `Q^i[T] = ℓ^i[T]`, `Q^i[t−1] = ℓ^i[t−1] + Σ_{s'} p^i[t][s'][s][a] min_{a'} Q^i[t][s'][a']`.
pub fn q_values<T: Scalar>(
    x: &JointDistribution<T>,
    model: &CostModel<T>,
    kernels: &[TransitionKernel<T>],
) -> Result<QValues<T>> {
    let costs = player_costs(x, model)?;
    q_values_from_costs(&costs, kernels)
}

pub fn q_values_from_costs<T: Scalar>(
    costs: &[StageCosts<T>],
    kernels: &[TransitionKernel<T>],
) -> Result<QValues<T>> {
    if costs.len() != kernels.len() {
        return Err(Error::dim("kernels", costs.len(), kernels.len()));
    }
    costs
        .iter()
        .zip(kernels)
        .map(|(c, k)| backward_q(c, k, T::one()))
        .collect()
}

/// Largest Q-value excess over actions played with positive probability.
#[derive(Debug, Clone, PartialEq)]
pub struct NashGap<T> {
    pub gap: T,
    pub per_player: Vec<T>,
}

/// `max_{(i,t,s,a): x > threshold} Q^i[t][s][a] − min_{a'} Q^i[t][s][a']`,
/// using [`SUPPORT_THRESHOLD`].
pub fn nash_gap<T: Scalar>(
    x: &JointDistribution<T>,
    model: &CostModel<T>,
    kernels: &[TransitionKernel<T>],
) -> Result<NashGap<T>> {
    nash_gap_with_threshold(x, model, kernels, T::lit(SUPPORT_THRESHOLD))
}

pub fn nash_gap_with_threshold<T: Scalar>(
    x: &JointDistribution<T>,
    model: &CostModel<T>,
    kernels: &[TransitionKernel<T>],
    threshold: T,
) -> Result<NashGap<T>> {
    let q = q_values(x, model, kernels)?;
    Ok(gap_from_q(x, &q, threshold))
}

pub(crate) fn gap_from_q<T: Scalar>(x: &JointDistribution<T>, q: &QValues<T>, threshold: T) -> NashGap<T> {
    let dims = x.dims();
    let per_player: Vec<T> = x
        .players()
        .iter()
        .zip(q)
        .map(|(xi, qi)| {
            let mut worst = T::zero();
            for t in 0..dims.stages() {
                for s in 0..dims.states {
                    let row = qi.row(t, s);
                    let best = argmin(row).1;
                    for (a, m) in xi.row(t, s).iter().enumerate() {
                        if *m > threshold {
                            worst = worst.max(row[a] - best);
                        }
                    }
                }
            }
            worst
        })
        .collect();
    let gap = per_player.iter().fold(T::zero(), |m, v| m.max(*v));
    NashGap { gap, per_player }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{retrieve_density, uniform_density, value_iteration, InitialDistribution};

    fn dims() -> Dims {
        Dims::new(2, 2, 2).unwrap()
    }

    fn kernel() -> TransitionKernel<f64> {
        TransitionKernel::from_fn(dims(), |_, to, from, a| {
            if (to == from) == (a == 0) {
                0.8
            } else {
                0.2
            }
        })
    }

    fn zero_model(players: usize) -> CostModel<f64> {
        CostModel::from_fn(
            dims(),
            ImpactFactors::uniform(players).unwrap(),
            CongestionGrouping::per_state(2),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::zero(),
        )
        .unwrap()
    }

    fn some_flow() -> StageTensor<f64> {
        let z = InitialDistribution::new(vec![0.3, 0.7]).unwrap();
        uniform_density(&kernel(), &z).unwrap()
    }

    #[test]
    fn single_player_unit_alpha_congestion_is_identity() {
        let x = JointDistribution::new(vec![some_flow()]).unwrap();
        let y = congestion_distribution(&x, &ImpactFactors::uniform(1).unwrap()).unwrap();
        assert_eq!(&y, x.player(0));
    }

    #[test]
    fn weighted_congestion_of_equal_flows() {
        let xi = some_flow();
        let x = JointDistribution::new(vec![xi.clone(), xi.clone(), xi.clone()]).unwrap();
        let alpha = ImpactFactors::new(vec![0.5, 1.0, 1.5]).unwrap();
        let y = congestion_distribution(&x, &alpha).unwrap();
        for (yv, xv) in y.as_slice().iter().zip(xi.as_slice()) {
            assert!((yv - 3.0 * xv).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_model_has_zero_costs_and_potential() {
        let x = JointDistribution::new(vec![some_flow(), some_flow()]).unwrap();
        let model = zero_model(2);
        for c in player_costs(&x, &model).unwrap() {
            assert!(c.as_slice().iter().all(|v| *v == 0.0));
        }
        assert_eq!(potential(&x, &model).unwrap(), 0.0);
        for q in q_values(&x, &model, &[kernel(), kernel()]).unwrap() {
            assert!(q.as_slice().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn pure_regularizer_cost_is_the_flow() {
        let model = CostModel::from_fn(
            dims(),
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(2),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
        )
        .unwrap();
        let x = JointDistribution::new(vec![some_flow()]).unwrap();
        let c = player_costs(&x, &model).unwrap();
        assert_eq!(&c[0], x.player(0));
        let half_sq: f64 = x.player(0).as_slice().iter().map(|v| 0.5 * v * v).sum();
        assert!((potential(&x, &model).unwrap() - half_sq).abs() < 1e-15);
    }

    #[test]
    fn overflow_names_coordinate() {
        let model = CostModel::from_fn(
            dims(),
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(2),
            |t, _| {
                if t == 1 {
                    CostPrimitive::exponential(1.0, 1e4)
                } else {
                    CostPrimitive::zero()
                }
            },
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, _| CostPrimitive::linear(0.0, 1.0),
        )
        .unwrap();
        let x = JointDistribution::new(vec![some_flow()]).unwrap();
        let err = player_costs(&x, &model).unwrap_err();
        assert!(matches!(err, Error::NonFiniteCost { player: 0, t: 1, .. }));
        assert_eq!(potential(&x, &model).unwrap_err(), Error::NonFinitePotential);
    }

    #[test]
    fn terminal_q_equals_stage_cost() {
        let model = CostModel::from_fn(
            dims(),
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(2),
            |_, _| CostPrimitive::exponential(0.5, 1.0),
            |_, _, _| CostPrimitive::zero(),
            |_, s, a, _| CostPrimitive::linear((s + 2 * a) as f64, 1.0),
        )
        .unwrap();
        let x = JointDistribution::new(vec![some_flow()]).unwrap();
        let c = player_costs(&x, &model).unwrap();
        let q = q_values(&x, &model, &[kernel()]).unwrap();
        for s in 0..2 {
            assert_eq!(q[0].row(2, s), c[0].row(2, s));
        }
    }

    #[test]
    fn single_state_q_is_tail_sum() {
        let d = Dims::new(3, 1, 1).unwrap();
        let k = TransitionKernel::identity(d);
        let model = CostModel::from_fn(
            d,
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(1),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, t, _, _| CostPrimitive::constant((t + 1) as f64),
        )
        .unwrap();
        let z = InitialDistribution::point_mass(1, 0).unwrap();
        let x = JointDistribution::new(vec![uniform_density(&k, &z).unwrap()]).unwrap();
        let q = q_values(&x, &model, &[k]).unwrap();
        assert_eq!(q[0].get(0, 0, 0), 10.0);
        assert_eq!(q[0].get(1, 0, 0), 9.0);
        assert_eq!(q[0].get(3, 0, 0), 4.0);
    }

    #[test]
    fn single_player_optimum_has_zero_gap() {
        let model = CostModel::from_fn(
            dims(),
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(2),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, t, s, a| CostPrimitive::constant(((t * 7 + s * 3 + a * 5) % 4) as f64),
        )
        .unwrap();
        let z = InitialDistribution::new(vec![0.5, 0.5]).unwrap();
        let zero = JointDistribution::new(vec![StageTensor::zeros(dims())]).unwrap();
        let c = player_costs(&zero, &model).unwrap();
        let (_, pi) = value_iteration(&c[0], &kernel(), 1.0).unwrap();
        let x = JointDistribution::new(vec![retrieve_density(&kernel(), &z, &pi).unwrap()]).unwrap();
        assert!(nash_gap(&x, &model, &[kernel()]).unwrap().gap <= 1e-10);
    }

    #[test]
    fn dominated_action_gap_equals_excess() {
        // action 1 costs 0.75 more at every stage; x plays it at t = 1
        let d = Dims::new(1, 1, 2).unwrap();
        let k = TransitionKernel::identity(d);
        let model = CostModel::from_fn(
            d,
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(1),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, a| CostPrimitive::constant(0.75 * a as f64),
        )
        .unwrap();
        let x = StageTensor::from_vec(d, vec![1.0, 0.0, 0.4, 0.6]).unwrap();
        let x = JointDistribution::new(vec![x]).unwrap();
        let gap = nash_gap(&x, &model, &[k]).unwrap();
        assert!((gap.gap - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dust_below_threshold_is_ignored() {
        let d = Dims::new(1, 1, 2).unwrap();
        let k = TransitionKernel::identity(d);
        let model = CostModel::from_fn(
            d,
            ImpactFactors::uniform(1).unwrap(),
            CongestionGrouping::per_state(1),
            |_, _| CostPrimitive::zero(),
            |_, _, _| CostPrimitive::zero(),
            |_, _, _, a| CostPrimitive::constant(a as f64),
        )
        .unwrap();
        let x = StageTensor::from_vec(d, vec![1.0, 0.0, 1.0 - 1e-10, 1e-10]).unwrap();
        let x = JointDistribution::new(vec![x]).unwrap();
        assert_eq!(nash_gap(&x, &model, &[k]).unwrap().gap, 0.0);
    }

    #[test]
    fn player_count_mismatch_is_error() {
        let x = JointDistribution::new(vec![some_flow()]).unwrap();
        assert!(player_costs(&x, &zero_model(2)).is_err());
    }
}
