use serde::{Deserialize, Serialize};

use crate::mdp::Dims;
use crate::{Error, Result, Scalar};

/// Shape of a [`CostPrimitive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveKind {
    Constant,
    Linear,
    Exponential,
    AffineExponential,
}

/// Scalar cost `w ↦ c0 + c1·w + c2·exp(c3·w)`.
///
/// Every primitive has the closed-form antiderivative
/// `c0·w + c1·w²/2 + (c2/c3)·(exp(c3·w) − 1)` (or `c2·w` when `c3 = 0`),
/// which is what makes the game potential exact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostPrimitive<T> {
    pub c0: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

impl<T: Scalar> CostPrimitive<T> {
    pub fn new(c0: T, c1: T, c2: T, c3: T) -> Result<Self> {
        if ![c0, c1, c2, c3].iter().all(|c| c.is_finite()) {
            return Err(Error::param("cost primitive", "parameters must be finite"));
        }
        Ok(CostPrimitive { c0, c1, c2, c3 })
    }

    pub fn zero() -> Self {
        CostPrimitive {
            c0: T::zero(),
            c1: T::zero(),
            c2: T::zero(),
            c3: T::zero(),
        }
    }

    pub fn constant(c0: T) -> Self {
        CostPrimitive { c0, ..Self::zero() }
    }

    pub fn linear(c0: T, c1: T) -> Self {
        CostPrimitive {
            c0,
            c1,
            ..Self::zero()
        }
    }

    /// `c2·exp(c3·w)`.
    pub fn exponential(c2: T, c3: T) -> Self {
        CostPrimitive {
            c2,
            c3,
            ..Self::zero()
        }
    }

    pub fn kind(&self) -> PrimitiveKind {
        let has_exp = self.c2 != T::zero();
        let has_affine = self.c1 != T::zero() || self.c0 != T::zero();
        match (has_exp, has_affine) {
            (false, _) if self.c1 == T::zero() => PrimitiveKind::Constant,
            (false, _) => PrimitiveKind::Linear,
            (true, false) => PrimitiveKind::Exponential,
            (true, true) => PrimitiveKind::AffineExponential,
        }
    }

    #[inline]
    pub fn eval(&self, w: T) -> T {
        let mut v = self.c0 + self.c1 * w;
        if self.c2 != T::zero() {
            v = v + self.c2 * (self.c3 * w).exp();
        }
        v
    }

    #[inline]
    pub fn derivative(&self, w: T) -> T {
        let mut v = self.c1;
        if self.c2 != T::zero() && self.c3 != T::zero() {
            v = v + self.c2 * self.c3 * (self.c3 * w).exp();
        }
        v
    }

    /// `∫_0^w` of the primitive.
    #[inline]
    pub fn integral(&self, w: T) -> T {
        let two = T::one() + T::one();
        let mut v = self.c0 * w + self.c1 * w * w / two;
        if self.c2 != T::zero() {
            if self.c3 == T::zero() {
                v = v + self.c2 * w;
            } else {
                v = v + self.c2 / self.c3 * (self.c3 * w).exp_m1();
            }
        }
        v
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.c1 >= T::zero() && self.c2 * self.c3 >= T::zero()
    }

    pub fn is_strictly_increasing(&self) -> bool {
        self.is_nondecreasing() && (self.c1 > T::zero() || self.c2 * self.c3 > T::zero())
    }

    /// Lower bound of the derivative over `[lo, hi]`.
    pub fn min_slope_on(&self, lo: T, hi: T) -> T {
        self.derivative(lo).min(self.derivative(hi))
    }
}

/// Which state coordinates are pooled into one congestion argument of `f`.
///
/// The default pools all actions of a single state. Coarser groupings (for
/// instance all modes at one grid location) pool several states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CongestionGrouping {
    group_of: Vec<usize>,
    groups: usize,
}

impl CongestionGrouping {
    pub fn per_state(states: usize) -> Self {
        CongestionGrouping {
            group_of: (0..states).collect(),
            groups: states,
        }
    }

    pub fn new(group_of: Vec<usize>) -> Result<Self> {
        if group_of.is_empty() {
            return Err(Error::param("congestion grouping", "empty"));
        }
        let groups = group_of.iter().max().map_or(0, |g| g + 1);
        Ok(CongestionGrouping { group_of, groups })
    }

    #[inline]
    pub fn group(&self, s: usize) -> usize {
        self.group_of[s]
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn states(&self) -> usize {
        self.group_of.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.group_of
    }
}

/// Player impact factors `α_i > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactFactors<T>(Vec<T>);

impl<T: Scalar> ImpactFactors<T> {
    pub fn new(alpha: Vec<T>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::param("impact factors", "need at least one player"));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a > T::zero())) {
            return Err(Error::param("impact factors", "every alpha must be positive"));
        }
        Ok(ImpactFactors(alpha))
    }

    pub fn uniform(players: usize) -> Result<Self> {
        Self::new(vec![T::one(); players])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Congestion cost family
/// `ℓ^i[t][s][a] = α_i·f[t][G(s)](w) + α_i·g[t][s][a](y[t][s][a]) + h^i[t][s][a](x^i[t][s][a])`
/// where `y = Σ_i α_i x^i` and `w = Σ_{s' ∈ G(s)} Σ_a y[t][s'][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<T> {
    dims: Dims,
    alpha: ImpactFactors<T>,
    grouping: CongestionGrouping,
    f: Vec<CostPrimitive<T>>,
    g: Vec<CostPrimitive<T>>,
    h: Vec<CostPrimitive<T>>,
}

impl<T: Scalar> CostModel<T> {
    /// `f` is indexed `[t][group]`, `g` `[t][s][a]` and `h` `[i][t][s][a]`.
    pub fn new(
        dims: Dims,
        alpha: ImpactFactors<T>,
        grouping: CongestionGrouping,
        f: Vec<CostPrimitive<T>>,
        g: Vec<CostPrimitive<T>>,
        h: Vec<CostPrimitive<T>>,
    ) -> Result<Self> {
        if grouping.states() != dims.states {
            return Err(Error::dim("congestion grouping", dims.states, grouping.states()));
        }
        let nf = dims.stages() * grouping.groups();
        if f.len() != nf {
            return Err(Error::dim("f primitives", nf, f.len()));
        }
        if g.len() != dims.len() {
            return Err(Error::dim("g primitives", dims.len(), g.len()));
        }
        let nh = alpha.len() * dims.len();
        if h.len() != nh {
            return Err(Error::dim("h primitives", nh, h.len()));
        }
        let all_finite = f
            .iter()
            .chain(&g)
            .chain(&h)
            .all(|p| [p.c0, p.c1, p.c2, p.c3].iter().all(|c| c.is_finite()));
        if !all_finite {
            return Err(Error::param("cost model", "primitive parameters must be finite"));
        }
        Ok(CostModel {
            dims,
            alpha,
            grouping,
            f,
            g,
            h,
        })
    }

    /// Builds a model from index functions; `f(t, group)`, `g(t, s, a)` and
    /// `h(i, t, s, a)`.
    pub fn from_fn(
        dims: Dims,
        alpha: ImpactFactors<T>,
        grouping: CongestionGrouping,
        mut f: impl FnMut(usize, usize) -> CostPrimitive<T>,
        mut g: impl FnMut(usize, usize, usize) -> CostPrimitive<T>,
        mut h: impl FnMut(usize, usize, usize, usize) -> CostPrimitive<T>,
    ) -> Result<Self> {
        let groups = grouping.groups();
        let fv = (0..dims.stages())
            .flat_map(|t| (0..groups).map(move |k| (t, k)))
            .map(|(t, k)| f(t, k))
            .collect();
        let mut gv = Vec::with_capacity(dims.len());
        for idx in 0..dims.len() {
            let (t, s, a) = dims.coords(idx);
            gv.push(g(t, s, a));
        }
        let mut hv = Vec::with_capacity(alpha.len() * dims.len());
        for i in 0..alpha.len() {
            for idx in 0..dims.len() {
                let (t, s, a) = dims.coords(idx);
                hv.push(h(i, t, s, a));
            }
        }
        Self::new(dims, alpha, grouping, fv, gv, hv)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn players(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &ImpactFactors<T> {
        &self.alpha
    }

    pub fn grouping(&self) -> &CongestionGrouping {
        &self.grouping
    }

    #[inline]
    pub fn f(&self, t: usize, group: usize) -> &CostPrimitive<T> {
        &self.f[t * self.grouping.groups() + group]
    }

    #[inline]
    pub fn g(&self, t: usize, s: usize, a: usize) -> &CostPrimitive<T> {
        &self.g[self.dims.index(t, s, a)]
    }

    #[inline]
    pub fn h(&self, i: usize, t: usize, s: usize, a: usize) -> &CostPrimitive<T> {
        &self.h[i * self.dims.len() + self.dims.index(t, s, a)]
    }

    pub(crate) fn f_all(&self) -> &[CostPrimitive<T>] {
        &self.f
    }

    pub(crate) fn g_all(&self) -> &[CostPrimitive<T>] {
        &self.g
    }

    pub(crate) fn h_player(&self, i: usize) -> &[CostPrimitive<T>] {
        let n = self.dims.len();
        &self.h[i * n..(i + 1) * n]
    }

    /// Smallest slope of any `h` primitive on `[0, 1]`; a lower bound on the
    /// strong convexity modulus of the potential over feasible flows.
    pub fn strong_convexity_bound(&self) -> T {
        self.h
            .iter()
            .map(|p| p.min_slope_on(T::zero(), T::one()))
            .fold(T::infinity(), |m, v| m.min(v))
    }
}

/// Primitive that breaks the monotonicity requirements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdmissibilityViolation {
    /// `f[t][group]` is decreasing somewhere.
    CongestionDecreasing { t: usize, group: usize },
    /// `g[t][s][a]` is decreasing somewhere.
    ActionCongestionDecreasing { t: usize, s: usize, a: usize },
    /// `h^i[t][s][a]` is not strictly increasing.
    RegularizerNotStrict {
        player: usize,
        t: usize,
        s: usize,
        a: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Admissibility {
    pub violations: Vec<AdmissibilityViolation>,
}

impl Admissibility {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parametric check that every `h` is strictly increasing and every `f`, `g`
/// is non-decreasing, which makes the cost Jacobian positive definite.
pub fn check_cost_admissibility<T: Scalar>(model: &CostModel<T>) -> Admissibility {
    let dims = model.dims();
    let groups = model.grouping().groups();
    let mut violations = Vec::new();
    for (k, p) in model.f_all().iter().enumerate() {
        if !p.is_nondecreasing() {
            violations.push(AdmissibilityViolation::CongestionDecreasing {
                t: k / groups,
                group: k % groups,
            });
        }
    }
    for (k, p) in model.g_all().iter().enumerate() {
        if !p.is_nondecreasing() {
            let (t, s, a) = dims.coords(k);
            violations.push(AdmissibilityViolation::ActionCongestionDecreasing { t, s, a });
        }
    }
    for i in 0..model.players() {
        for (k, p) in model.h_player(i).iter().enumerate() {
            if !p.is_strictly_increasing() {
                let (t, s, a) = dims.coords(k);
                violations.push(AdmissibilityViolation::RegularizerNotStrict { player: i, t, s, a });
            }
        }
    }
    Admissibility { violations }
}
