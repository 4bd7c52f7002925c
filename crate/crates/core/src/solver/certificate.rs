use super::GameInstance;
use crate::game::{player_costs, q_values_from_costs, JointDistribution};
use crate::mdp::{argmin, flow_residual, StageTensor};
use crate::{Error, Result, Scalar};

/// Residuals of the four KKT conditions of a player's potential
/// minimisation, maximised over players.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateResiduals<T> {
    /// Largest feasible-flow violation.
    pub primal: T,
    /// `min μ̂`; dual feasibility needs this to be nonnegative.
    pub dual_min: T,
    /// `max |x·μ̂|`.
    pub complementary: T,
    /// Largest violation of `ℓ + Σ_{s'} p ν̂[t+1] = ν̂[t] + μ̂` (`ℓ = ν̂ + μ̂` at `T`).
    pub stationarity: T,
}

/// Dual multipliers per player: `ν̂[t][s]` for the flow equalities and
/// `μ̂[t][s][a] ≥ 0` for nonnegativity.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate<T> {
    /// Per player, laid out `[t][s]`.
    pub nu: Vec<Vec<T>>,
    pub mu: Vec<StageTensor<T>>,
    pub residuals: CertificateResiduals<T>,
}

/// Builds the dual certificate of `x`.
///
/// Starts from `ν = min_a Q(x)`, `μ = Q(x) − ν`, then applies the backward
/// shift `λ = μ + Σ_{s'} p[t+1] Δ[t+1]`, `Δ[t] = min_a λ`, `μ̂ = λ − Δ`,
/// `ν̂ = ν + Δ` with `Δ[T+1] = 0`. Residuals are stored on the certificate.
pub fn extract_certificate<T: Scalar>(
    x: &JointDistribution<T>,
    instance: &GameInstance<T>,
) -> Result<DualCertificate<T>> {
    check(x, instance)?;
    let dims = instance.dims();
    let (n, m, horizon) = (dims.states, dims.actions, dims.transitions());
    let costs = player_costs(x, instance.model())?;
    let q = q_values_from_costs(&costs, instance.kernels())?;
    let mut nus = Vec::with_capacity(x.len());
    let mut mus = Vec::with_capacity(x.len());
    for (i, qi) in q.iter().enumerate() {
        let kernel = instance.kernel(i);
        let mut nu = vec![T::zero(); dims.stages() * n];
        let mut mu = StageTensor::zeros(dims);
        for t in 0..dims.stages() {
            for s in 0..n {
                let row = qi.row(t, s);
                let best = argmin(row).1;
                nu[t * n + s] = best;
                for (a, qv) in row.iter().enumerate() {
                    mu.set(t, s, a, *qv - best);
                }
            }
        }
        // backward shift, Δ at T + 1 is zero
        let mut next_delta = vec![T::zero(); n];
        let mut lambda = vec![T::zero(); m];
        for t in (0..=horizon).rev() {
            let mut delta = vec![T::zero(); n];
            for s in 0..n {
                for (a, l) in lambda.iter_mut().enumerate() {
                    let carry: T = if t < horizon {
                        kernel
                            .column(t + 1, s, a)
                            .iter()
                            .map(|(to, p)| *p * next_delta[*to])
                            .sum()
                    } else {
                        T::zero()
                    };
                    *l = mu.get(t, s, a) + carry;
                }
                let d = argmin(&lambda).1;
                delta[s] = d;
                for (a, l) in lambda.iter().enumerate() {
                    mu.set(t, s, a, *l - d);
                }
                nu[t * n + s] = nu[t * n + s] + d;
            }
            next_delta = delta;
        }
        nus.push(nu);
        mus.push(mu);
    }
    let mut certificate = DualCertificate {
        nu: nus,
        mu: mus,
        residuals: CertificateResiduals {
            primal: T::zero(),
            dual_min: T::zero(),
            complementary: T::zero(),
            stationarity: T::zero(),
        },
    };
    certificate.residuals = residuals_with_costs(x, &certificate, instance, &costs)?;
    Ok(certificate)
}

fn check<T: Scalar>(x: &JointDistribution<T>, instance: &GameInstance<T>) -> Result<()> {
    if x.len() != instance.players() {
        return Err(Error::dim("players", instance.players(), x.len()));
    }
    Ok(())
}

/// Recomputes the KKT residuals of `(x, certificate)` on `instance`.
pub fn certificate_residuals<T: Scalar>(
    x: &JointDistribution<T>,
    certificate: &DualCertificate<T>,
    instance: &GameInstance<T>,
) -> Result<CertificateResiduals<T>> {
    check(x, instance)?;
    let costs = player_costs(x, instance.model())?;
    residuals_with_costs(x, certificate, instance, &costs)
}

fn residuals_with_costs<T: Scalar>(
    x: &JointDistribution<T>,
    certificate: &DualCertificate<T>,
    instance: &GameInstance<T>,
    costs: &[StageTensor<T>],
) -> Result<CertificateResiduals<T>> {
    let dims = instance.dims();
    let (n, horizon) = (dims.states, dims.transitions());
    if certificate.nu.len() != x.len() || certificate.mu.len() != x.len() {
        return Err(Error::dim("certificate players", x.len(), certificate.nu.len()));
    }
    let mut primal = T::zero();
    let mut dual_min = T::infinity();
    let mut complementary = T::zero();
    let mut stationarity = T::zero();
    for i in 0..x.len() {
        let kernel = instance.kernel(i);
        let (nu, mu, xi, ci) = (&certificate.nu[i], &certificate.mu[i], x.player(i), &costs[i]);
        if nu.len() != dims.stages() * n {
            return Err(Error::dim("certificate nu", dims.stages() * n, nu.len()));
        }
        crate::mdp::ensure_same_dims("certificate mu", dims, mu.dims())?;
        primal = primal.max(flow_residual(xi, kernel, instance.initial(i))?);
        for t in 0..dims.stages() {
            for s in 0..n {
                for a in 0..dims.actions {
                    let m = mu.get(t, s, a);
                    dual_min = dual_min.min(m);
                    complementary = complementary.max((xi.get(t, s, a) * m).abs());
                    let carry: T = if t < horizon {
                        kernel
                            .column(t + 1, s, a)
                            .iter()
                            .map(|(to, p)| *p * nu[(t + 1) * n + *to])
                            .sum()
                    } else {
                        T::zero()
                    };
                    let lhs = ci.get(t, s, a) + carry;
                    let rhs = nu[t * n + s] + m;
                    stationarity = stationarity.max((lhs - rhs).abs());
                }
            }
        }
    }
    Ok(CertificateResiduals {
        primal,
        dual_min,
        complementary,
        stationarity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktCondition {
    PrimalFeasibility,
    DualFeasibility,
    ComplementarySlackness,
    Stationarity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateVerdict<T> {
    pub residuals: CertificateResiduals<T>,
    pub tol: T,
    pub failed: Vec<KktCondition>,
}

impl<T> CertificateVerdict<T> {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Checks primal feasibility, `μ̂ ≥ −tol`, `|x·μ̂| ≤ tol` and stationarity
/// within `tol`. Residuals are recomputed, not read from the certificate.
pub fn verify_certificate<T: Scalar>(
    x: &JointDistribution<T>,
    certificate: &DualCertificate<T>,
    instance: &GameInstance<T>,
    tol: T,
) -> Result<CertificateVerdict<T>> {
    if !(tol >= T::zero()) {
        return Err(Error::param("tol", "must be nonnegative"));
    }
    let residuals = certificate_residuals(x, certificate, instance)?;
    let mut failed = Vec::new();
    if !(residuals.primal <= tol) {
        failed.push(KktCondition::PrimalFeasibility);
    }
    if !(residuals.dual_min >= -tol) {
        failed.push(KktCondition::DualFeasibility);
    }
    if !(residuals.complementary <= tol) {
        failed.push(KktCondition::ComplementarySlackness);
    }
    if !(residuals.stationarity <= tol) {
        failed.push(KktCondition::Stationarity);
    }
    Ok(CertificateVerdict {
        residuals,
        tol,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fixtures, frank_wolfe, SolveOptions};

    fn solved() -> (GameInstance<f64>, JointDistribution<f64>) {
        let inst = fixtures::congested();
        let opts = SolveOptions {
            max_iters: 2000,
            gap_tol: 1e-300,
            move_tol: 1e-300,
            ..SolveOptions::default()
        };
        let x = frank_wolfe(&inst, &opts).unwrap().x;
        (inst, x)
    }

    #[test]
    fn terminal_multiplier_is_cost_excess() {
        let (inst, x) = solved();
        let cert = extract_certificate(&x, &inst).unwrap();
        let costs = player_costs(&x, inst.model()).unwrap();
        let last = inst.dims().transitions();
        for i in 0..2 {
            for s in 0..2 {
                let row = costs[i].row(last, s);
                let best = row[0].min(row[1]);
                for a in 0..2 {
                    assert!((cert.mu[i].get(last, s, a) - (row[a] - best)).abs() < 1e-12);
                    assert!(cert.mu[i].get(last, s, a) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn every_state_has_a_tight_action() {
        let (inst, x) = solved();
        let cert = extract_certificate(&x, &inst).unwrap();
        let dims = inst.dims();
        for mu in &cert.mu {
            for t in 0..dims.stages() {
                for s in 0..dims.states {
                    assert!(mu.row(t, s).iter().any(|m| *m <= 1e-9));
                }
            }
        }
        assert!(cert.residuals.stationarity <= 1e-12);
        assert!(cert.residuals.dual_min >= -1e-9);
    }

    #[test]
    fn stored_residuals_match_recomputed() {
        let (inst, x) = solved();
        let cert = extract_certificate(&x, &inst).unwrap();
        assert_eq!(certificate_residuals(&x, &cert, &inst).unwrap(), cert.residuals);
    }

    #[test]
    fn mass_on_suboptimal_action_breaks_complementarity() {
        let inst = fixtures::constant_costs();
        let x = crate::solver::initial_iterate(&inst).unwrap();
        let cert = extract_certificate(&x, &inst).unwrap();
        let verdict = verify_certificate(&x, &cert, &inst, 1e-6).unwrap();
        assert!(verdict.failed.contains(&KktCondition::ComplementarySlackness));
        assert!(!verdict.failed.contains(&KktCondition::Stationarity));
    }

    #[test]
    fn perturbed_nu_breaks_stationarity_proportionally() {
        let (inst, x) = solved();
        let mut cert = extract_certificate(&x, &inst).unwrap();
        let delta = 3e-3;
        cert.nu[1][1] += delta;
        let r = certificate_residuals(&x, &cert, &inst).unwrap();
        assert!(r.stationarity >= delta * (1.0 - 1e-9));
        assert!(r.stationarity <= delta * (1.0 + 1e-9) + 1e-12);
        let verdict = verify_certificate(&x, &cert, &inst, 1e-4).unwrap();
        assert!(verdict.failed.contains(&KktCondition::Stationarity));
    }

    #[test]
    fn negative_tolerance_rejected() {
        let (inst, x) = solved();
        let cert = extract_certificate(&x, &inst).unwrap();
        assert!(verify_certificate(&x, &cert, &inst, -1.0).is_err());
    }
}
