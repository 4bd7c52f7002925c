use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GameInstance;
use crate::game::{player_costs, potential, JointDistribution};
use crate::mdp::{propagate, StateActionDistribution};
use crate::{Error, Result, Scalar};

/// Sampled lower bound on the curvature constant of the potential.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureEstimate<T> {
    /// Largest sampled value of `2/γ²·(F(w) − F(x) − ⟨∇F(x), w − x⟩)`.
    pub value: T,
    pub samples: usize,
}

/// Random feasible flow of player `i`: with probability one half a
/// deterministic vertex (one random action per `(t, s)`), otherwise the flow
/// of a random stochastic policy.
pub fn random_feasible_point<T: Scalar, R: Rng>(
    instance: &GameInstance<T>,
    i: usize,
    rng: &mut R,
) -> Result<StateActionDistribution<T>> {
    let vertex = rng.gen_bool(0.5);
    let actions = instance.dims().actions;
    propagate(instance.kernel(i), instance.initial(i), |_, _, row| {
        if vertex {
            row[rng.gen_range(0..actions)] = T::one();
        } else {
            let weights: Vec<f64> = (0..actions).map(|_| rng.gen::<f64>() + 1e-12).collect();
            let total: f64 = weights.iter().sum();
            for (p, w) in row.iter_mut().zip(weights) {
                *p = T::lit(w / total);
            }
        }
    })
}

fn random_joint<T: Scalar, R: Rng>(instance: &GameInstance<T>, rng: &mut R) -> Result<JointDistribution<T>> {
    let players = (0..instance.players())
        .map(|i| random_feasible_point(instance, i, rng))
        .collect::<Result<Vec<_>>>()?;
    JointDistribution::new(players)
}

/// Estimates the curvature constant
/// `sup 2/γ²·(F(x + γ(s − x)) − F(x) − γ⟨∇F(x), s − x⟩)` over sampled feasible
/// pairs `(x, s)` and `γ ∈ (0, 1]`.
///
/// The supremum runs over a continuum, so the result is only a lower bound
/// on the true constant.
pub fn estimate_curvature<T: Scalar>(
    instance: &GameInstance<T>,
    samples: usize,
    seed: u64,
) -> Result<CurvatureEstimate<T>> {
    if samples == 0 {
        return Err(Error::param("samples", "need at least one sample"));
    }
    let model = instance.model();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two = T::lit(2.0);
    let mut best = T::zero();
    for _ in 0..samples {
        let x = random_joint(instance, &mut rng)?;
        let s = random_joint(instance, &mut rng)?;
        let gamma = if rng.gen_bool(0.25) {
            T::one()
        } else {
            T::lit(1.0 - rng.gen::<f64>()).max(T::lit(1e-3))
        };
        let mut w = x.clone();
        for i in 0..w.len() {
            w.player_mut(i).step_towards(s.player(i), gamma);
        }
        let grad = player_costs(&x, model)?;
        let linear: T = grad
            .iter()
            .enumerate()
            .map(|(i, g)| g.dot(w.player(i)) - g.dot(x.player(i)))
            .sum();
        let excess = potential(&w, model)? - potential(&x, model)? - linear;
        let value = two * excess / (gamma * gamma);
        if value > best {
            best = value;
        }
    }
    Ok(CurvatureEstimate {
        value: best,
        samples,
    })
}
