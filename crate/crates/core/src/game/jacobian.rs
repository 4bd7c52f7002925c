use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CostOperator, JointDistribution};
use crate::{Error, Result, Scalar};

/// Flat coordinate `x^player[t][s][a]` of the joint distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coord {
    pub player: usize,
    pub t: usize,
    pub s: usize,
    pub a: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JacobianFailure<T> {
    Asymmetric {
        row: Coord,
        col: Coord,
        forward: T,
        backward: T,
    },
    NonPositiveCurvature {
        probe: usize,
        curvature: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianVerdict<T> {
    pub probes: usize,
    /// Largest `|J[p][q] − J[q][p]| / (1 + max(|J[p][q]|, |J[q][p]|))` seen.
    pub max_asymmetry: T,
    /// Smallest `dᵀ J d / ‖d‖²` over the random directions.
    pub min_curvature: T,
    pub failures: Vec<JacobianFailure<T>>,
}

impl<T> JacobianVerdict<T> {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

const SYMMETRY_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

fn perturbed<T: Scalar>(x: &JointDistribution<T>, dir: &[(usize, usize, T)]) -> JointDistribution<T> {
    let mut out = x.clone();
    for (player, idx, delta) in dir {
        let v = &mut out.player_mut(*player).as_mut_slice()[*idx];
        *v = *v + *delta;
    }
    out
}

/// Central-difference directional derivative of the stacked cost vector.
fn directional<T: Scalar, C: CostOperator<T>>(
    op: &C,
    x: &JointDistribution<T>,
    dir: &[(usize, usize, T)],
    step: T,
) -> Result<Vec<Vec<T>>> {
    let plus: Vec<_> = dir.iter().map(|(p, i, d)| (*p, *i, *d * step)).collect();
    let minus: Vec<_> = dir.iter().map(|(p, i, d)| (*p, *i, -*d * step)).collect();
    let hi = op.costs(&perturbed(x, &plus))?;
    let lo = op.costs(&perturbed(x, &minus))?;
    let two_h = step + step;
    Ok(hi
        .iter()
        .zip(&lo)
        .map(|(a, b)| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(u, v)| (*u - *v) / two_h)
                .collect()
        })
        .collect())
}

/// Probes the Jacobian of the stacked cost vector `ξ(x)` by central finite
/// differences.
///
/// Each probe draws a coordinate pair `(p, q)` (half of the time from the
/// same stage, where congestion couples coordinates) and compares
/// `∂ξ_p/∂x_q` with `∂ξ_q/∂x_p`; it also checks `dᵀ ∇ξ d > 0` along a random
/// direction `d`. Asymmetry means no potential exists; nonpositive
/// curvature means the cost Jacobian is not positive definite at `x`.
pub fn check_jacobian_symmetry<T: Scalar, C: CostOperator<T>>(
    x: &JointDistribution<T>,
    op: &C,
    probes: usize,
    seed: u64,
) -> Result<JacobianVerdict<T>> {
    if probes == 0 {
        return Err(Error::param("probes", "need at least one probe"));
    }
    if x.len() != op.players() {
        return Err(Error::dim("players", op.players(), x.len()));
    }
    let dims = x.dims();
    let n = dims.len();
    let players = x.len();
    let stage_block = dims.states * dims.actions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = T::lit(FD_STEP);
    let tol = T::lit(SYMMETRY_TOL);

    let coord = |player: usize, idx: usize| {
        let (t, s, a) = dims.coords(idx);
        Coord { player, t, s, a }
    };

    let mut max_asymmetry = T::zero();
    let mut min_curvature = T::infinity();
    let mut failures = Vec::new();
    for probe in 0..probes {
        let (pi, pidx) = (rng.gen_range(0..players), rng.gen_range(0..n));
        let qi = rng.gen_range(0..players);
        let qidx = if probe % 2 == 0 {
            let t = pidx / stage_block;
            t * stage_block + rng.gen_range(0..stage_block)
        } else {
            rng.gen_range(0..n)
        };
        let col_q = directional(op, x, &[(qi, qidx, T::one())], step)?;
        let col_p = directional(op, x, &[(pi, pidx, T::one())], step)?;
        let forward = col_q[pi][pidx];
        let backward = col_p[qi][qidx];
        let scale = T::one() + forward.abs().max(backward.abs());
        let asym = (forward - backward).abs() / scale;
        max_asymmetry = max_asymmetry.max(asym);
        if !(asym <= tol) {
            failures.push(JacobianFailure::Asymmetric {
                row: coord(pi, pidx),
                col: coord(qi, qidx),
                forward,
                backward,
            });
        }

        let dir: Vec<(usize, usize, T)> = (0..players)
            .flat_map(|i| (0..n).map(move |k| (i, k)))
            .map(|(i, k)| (i, k, T::lit(rng.gen_range(-1.0..1.0))))
            .collect();
        let norm_sq: T = dir.iter().map(|(_, _, d)| *d * *d).sum();
        let jd = directional(op, x, &dir, step)?;
        let quad: T = dir.iter().map(|(i, k, d)| *d * jd[*i][*k]).sum();
        let curvature = quad / norm_sq;
        min_curvature = min_curvature.min(curvature);
        if !(curvature > T::zero()) {
            failures.push(JacobianFailure::NonPositiveCurvature { probe, curvature });
        }
    }
    Ok(JacobianVerdict {
        probes,
        max_asymmetry,
        min_curvature,
        failures,
    })
}
