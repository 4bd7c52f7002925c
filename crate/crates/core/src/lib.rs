//! Finite-horizon, N-player MDP congestion games.
//!
//! Players share a state-action space but carry their own transition
//! kernels, and each player's stage cost depends on the joint state-action
//! distribution through an impact-factor weighted congestion measure. For
//! the cost family in [`game::CostModel`] the game admits a convex
//! potential, so its Nash equilibrium is computed by Frank-Wolfe with a
//! dynamic-programming linear oracle ([`solver::frank_wolfe`]) and
//! certified by an explicit KKT dual construction
//! ([`solver::extract_certificate`]).
//!
//! The numerical core is generic over the scalar type ([`Scalar`]); the
//! aliases at the crate root fix it to `f64`, which is what the warehouse
//! scenario and the CLI use.

pub mod error;
pub mod game;
pub mod mdp;
pub mod rollout;
pub mod solver;
pub mod warehouse;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use error::{Error, Result};

/// Floating point scalar the solver is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Kernel = mdp::TransitionKernel<f64>;
pub type Flow = mdp::StageTensor<f64>;
pub type Initial = mdp::InitialDistribution<f64>;
pub type Costs = mdp::StageTensor<f64>;
pub type Primitive = game::CostPrimitive<f64>;
pub type Model = game::CostModel<f64>;
pub type Joint = game::JointDistribution<f64>;
pub type Game = solver::GameInstance<f64>;
pub type Options = solver::SolveOptions<f64>;
pub type Certificate = solver::DualCertificate<f64>;

pub type Kernel32 = mdp::TransitionKernel<f32>;
pub type Flow32 = mdp::StageTensor<f32>;
pub type Model32 = game::CostModel<f32>;
pub type Game32 = solver::GameInstance<f32>;
