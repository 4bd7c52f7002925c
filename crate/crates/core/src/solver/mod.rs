//! Frank-Wolfe learning dynamics, convergence bookkeeping and KKT
//! certificates for potential MDP congestion games.

mod certificate;
mod curvature;
mod frank_wolfe;

pub use certificate::{
    certificate_residuals, extract_certificate, verify_certificate, CertificateResiduals,
    CertificateVerdict, DualCertificate, KktCondition,
};
pub use curvature::{estimate_curvature, random_feasible_point, CurvatureEstimate};
pub use frank_wolfe::{
    best_responses, frank_wolfe, fw_gap, initial_iterate, ConvergenceTrace, IterationRecord,
    Solution, StopReason,
};

use crate::game::{check_cost_admissibility, CostModel};
use crate::mdp::{ensure_same_dims, validate_kernel, Dims, InitialDistribution, TransitionKernel};
use crate::{Error, Result, Scalar};

/// Complete problem statement: one kernel and initial distribution per
/// player plus the shared cost model.
#[derive(Debug, Clone)]
pub struct GameInstance<T> {
    kernels: Vec<TransitionKernel<T>>,
    initial: Vec<InitialDistribution<T>>,
    model: CostModel<T>,
    admissible: bool,
}

impl<T: Scalar> GameInstance<T> {
    /// Validates every kernel and initial distribution and requires the cost
    /// model to pass [`check_cost_admissibility`].
    pub fn new(
        kernels: Vec<TransitionKernel<T>>,
        initial: Vec<InitialDistribution<T>>,
        model: CostModel<T>,
    ) -> Result<Self> {
        let instance = Self::build(kernels, initial, model)?;
        if !instance.admissible {
            let verdict = check_cost_admissibility(&instance.model);
            return Err(Error::Inadmissible(format!(
                "{} primitive(s) violate the monotonicity requirements, first: {:?}",
                verdict.violations.len(),
                verdict.violations[0]
            )));
        }
        Ok(instance)
    }

    /// Same validation as [`GameInstance::new`] but accepts a cost model
    /// that fails the admissibility check. Equilibrium guarantees no longer
    /// apply to such instances.
    pub fn new_allow_inadmissible(
        kernels: Vec<TransitionKernel<T>>,
        initial: Vec<InitialDistribution<T>>,
        model: CostModel<T>,
    ) -> Result<Self> {
        Self::build(kernels, initial, model)
    }

    fn build(
        kernels: Vec<TransitionKernel<T>>,
        initial: Vec<InitialDistribution<T>>,
        model: CostModel<T>,
    ) -> Result<Self> {
        let players = model.players();
        if kernels.len() != players {
            return Err(Error::dim("kernels", players, kernels.len()));
        }
        if initial.len() != players {
            return Err(Error::dim("initial distributions", players, initial.len()));
        }
        let dims = model.dims();
        for (i, (k, z)) in kernels.iter().zip(&initial).enumerate() {
            ensure_same_dims("kernel vs cost model", dims, k.dims())?;
            if z.states() != dims.states {
                return Err(Error::dim("initial distribution", dims.states, z.states()));
            }
            let report = validate_kernel(k);
            if let Some(first) = report.violations.first() {
                return Err(Error::InvalidKernel {
                    player: i,
                    violations: report.violations.len(),
                    t: first.t,
                    s: first.s,
                    a: first.a,
                });
            }
        }
        let admissible = check_cost_admissibility(&model).passed();
        Ok(GameInstance {
            kernels,
            initial,
            model,
            admissible,
        })
    }

    pub fn players(&self) -> usize {
        self.model.players()
    }

    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    pub fn kernels(&self) -> &[TransitionKernel<T>] {
        &self.kernels
    }

    pub fn kernel(&self, i: usize) -> &TransitionKernel<T> {
        &self.kernels[i]
    }

    pub fn initial(&self, i: usize) -> &InitialDistribution<T> {
        &self.initial[i]
    }

    pub fn initials(&self) -> &[InitialDistribution<T>] {
        &self.initial
    }

    pub fn model(&self) -> &CostModel<T> {
        &self.model
    }

    pub fn is_admissible(&self) -> bool {
        self.admissible
    }
}

/// How players are updated inside one Frank-Wolfe iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// Every best response is computed against the same frozen iterate.
    #[default]
    Jacobi,
    /// Player `i` responds to the already-updated flows of players `< i`.
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions<T> {
    pub max_iters: usize,
    /// Stop once the Frank-Wolfe gap drops to this value.
    pub gap_tol: T,
    /// Stop once every player's iterate moves less than this (2-norm).
    pub move_tol: T,
    pub seed: u64,
    pub parallel: bool,
    pub order: UpdateOrder,
    /// Discount used inside the best-response value iteration.
    pub discount: T,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            max_iters: 100,
            gap_tol: T::lit(1e-6),
            move_tol: T::lit(1e-6),
            seed: 0,
            parallel: true,
            order: UpdateOrder::Jacobi,
            discount: T::one(),
        }
    }
}

impl<T: Scalar> SolveOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        if !(self.gap_tol > T::zero()) {
            return Err(Error::param("gap_tol", "must be positive"));
        }
        if !(self.move_tol > T::zero()) {
            return Err(Error::param("move_tol", "must be positive"));
        }
        if !(self.discount > T::zero() && self.discount <= T::one()) {
            return Err(Error::param("discount", "must lie in (0, 1]"));
        }
        Ok(())
    }
}
