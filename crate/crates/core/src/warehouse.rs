//! Multi-robot warehouse pickup/delivery scenario.
//!
//! Robots move on a `rows × cols` grid and carry a binary mode: seeking a
//! package (pickup) or carrying one (dropoff). Locations are zero-based
//! `(row, col)` pairs. A robot in pickup mode that lands on its pickup chute
//! receives a package with probability `r`; a robot in dropoff mode that
//! lands on its dropoff chute delivers and returns to pickup mode.

use serde::{Deserialize, Serialize};

use crate::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors};
use crate::mdp::{Dims, InitialDistribution, TransitionKernel};
use crate::solver::GameInstance;
use crate::{Error, Result, Scalar};

pub const MODES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub row: usize,
    pub col: usize,
}

impl Location {
    pub fn new(row: usize, col: usize) -> Self {
        Location { row, col }
    }

    pub fn manhattan(self, other: Location) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl From<(usize, usize)> for Location {
    fn from((row, col): (usize, usize)) -> Self {
        Location { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Looking for a package (mode 1).
    Pickup,
    /// Carrying a package (mode 2).
    Dropoff,
}

impl Mode {
    pub fn index(self) -> usize {
        match self {
            Mode::Pickup => 0,
            Mode::Dropoff => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Right,
    Left,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Up, Action::Down, Action::Right, Action::Left, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("grid", "rows and cols must be at least 1"));
        }
        Ok(GridSpec { rows, cols })
    }

    pub fn locations(&self) -> usize {
        self.rows * self.cols
    }

    pub fn states(&self) -> usize {
        self.locations() * MODES
    }

    pub fn actions(&self) -> usize {
        Action::ALL.len()
    }

    pub fn contains(&self, u: Location) -> bool {
        u.row < self.rows && u.col < self.cols
    }

    pub fn check(&self, u: Location) -> Result<()> {
        if self.contains(u) {
            Ok(())
        } else {
            Err(Error::OutsideGrid {
                row: u.row,
                col: u.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn location_index(&self, u: Location) -> usize {
        u.row * self.cols + u.col
    }

    pub fn location(&self, idx: usize) -> Location {
        Location::new(idx / self.cols, idx % self.cols)
    }

    pub fn state(&self, u: Location, mode: Mode) -> usize {
        self.location_index(u) * MODES + mode.index()
    }

    pub fn decode(&self, s: usize) -> (Location, Mode) {
        let mode = if s % MODES == 0 { Mode::Pickup } else { Mode::Dropoff };
        (self.location(s / MODES), mode)
    }

    /// Target of `a` from `u`, or `None` when it would leave the grid.
    pub fn target(&self, u: Location, a: Action) -> Option<Location> {
        let (r, c) = (u.row, u.col);
        let t = match a {
            Action::Up => Location::new(r.checked_sub(1)?, c),
            Action::Down => Location::new(r + 1, c),
            Action::Right => Location::new(r, c + 1),
            Action::Left => Location::new(r, c.checked_sub(1)?),
            Action::Stay => u,
        };
        self.contains(t).then_some(t)
    }
}

/// `u` itself plus every in-grid orthogonal neighbour, ordered by location
/// index.
pub fn neighbor_set(u: Location, grid: &GridSpec) -> Vec<Location> {
    let mut out: Vec<Location> = Action::ALL.iter().filter_map(|a| grid.target(u, *a)).collect();
    out.sort();
    out.dedup();
    out
}

/// Location-level kernel `P0[u'][u][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationKernel {
    locations: usize,
    data: Vec<f64>,
}

impl LocationKernel {
    pub fn prob(&self, to: usize, from: usize, a: usize) -> f64 {
        self.data[(to * self.locations + from) * Action::ALL.len() + a]
    }
}

/// A feasible action reaches its target with probability `q` and each other
/// member of the neighbour set with `(1 − q)/(|𝒩(u)| − 1)`; an infeasible
/// action lands uniformly on the neighbour set. `q = 1` gives deterministic
/// motion.
pub fn build_location_kernel(grid: &GridSpec, q: f64) -> Result<LocationKernel> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::param("q", "must lie in (0, 1]"));
    }
    let l = grid.locations();
    let na = Action::ALL.len();
    let mut data = vec![0.0; l * l * na];
    for from in 0..l {
        let u = grid.location(from);
        let hood = neighbor_set(u, grid);
        for a in Action::ALL {
            let mut put = |to: Location, p: f64| {
                data[(grid.location_index(to) * l + from) * na + a.index()] += p;
            };
            match grid.target(u, a) {
                Some(target) if hood.len() > 1 => {
                    let slip = (1.0 - q) / (hood.len() - 1) as f64;
                    for v in &hood {
                        put(*v, if *v == target { q } else { slip });
                    }
                }
                Some(target) => put(target, 1.0),
                None => {
                    let p = 1.0 / hood.len() as f64;
                    for v in &hood {
                        put(*v, p);
                    }
                }
            }
        }
    }
    Ok(LocationKernel { locations: l, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalRule {
    /// `r = exp(−λ·Δt)`.
    #[default]
    PaperLiteral,
    /// `r = 1 − exp(−λ·Δt)`, the probability of at least one arrival.
    Complement,
}

/// Probability `r` that a robot waiting at its pickup chute gets a package
/// during one step.
pub fn arrival_probability(lambda: f64, dt: f64, rule: ArrivalRule) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::param("arrival rate", "must be positive"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    let none = (-lambda * dt).exp();
    Ok(match rule {
        ArrivalRule::PaperLiteral => none,
        ArrivalRule::Complement => -(-lambda * dt).exp_m1(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerSpec {
    pub pickup: Location,
    pub dropoff: Location,
    /// Package arrival rate per second.
    pub arrival_rate: f64,
    pub alpha: f64,
    pub initial_mode: Mode,
}

impl PlayerSpec {
    /// Robots start on their dropoff chute.
    pub fn initial_location(&self) -> Location {
        self.dropoff
    }

    /// Length of the shortest dropoff → pickup → dropoff cycle.
    pub fn shortest_cycle(&self) -> usize {
        2 * self.pickup.manhattan(self.dropoff)
    }
}

/// Full per-player kernels over `(location, mode)` states.
///
/// Motion follows the location kernel within a mode. Landing on the pickup
/// chute in pickup mode switches to dropoff mode with probability `r`;
/// landing on the dropoff chute in dropoff mode always switches back. The
/// same stage is used for every transition.
pub fn build_full_kernel<T: Scalar>(
    grid: &GridSpec,
    players: &[PlayerSpec],
    q: f64,
    dt: f64,
    rule: ArrivalRule,
    horizon: usize,
) -> Result<Vec<TransitionKernel<T>>> {
    let location_kernel = build_location_kernel(grid, q)?;
    let dims = Dims::new(horizon, grid.states(), grid.actions())?;
    players
        .iter()
        .map(|spec| {
            grid.check(spec.pickup)?;
            grid.check(spec.dropoff)?;
            let r = arrival_probability(spec.arrival_rate, dt, rule)?;
            let stage = full_stage(grid, &location_kernel, spec, r);
            TransitionKernel::stationary(dims, stage.into_iter().map(T::lit).collect())
        })
        .collect()
}

/// Same as [`build_full_kernel`] with an explicit arrival probability.
pub fn build_kernel_with_arrival<T: Scalar>(
    grid: &GridSpec,
    spec: &PlayerSpec,
    q: f64,
    r: f64,
    horizon: usize,
) -> Result<TransitionKernel<T>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::param("arrival probability", "must lie in [0, 1]"));
    }
    grid.check(spec.pickup)?;
    grid.check(spec.dropoff)?;
    let location_kernel = build_location_kernel(grid, q)?;
    let dims = Dims::new(horizon, grid.states(), grid.actions())?;
    let stage = full_stage(grid, &location_kernel, spec, r);
    TransitionKernel::stationary(dims, stage.into_iter().map(T::lit).collect())
}

fn full_stage(grid: &GridSpec, p0: &LocationKernel, spec: &PlayerSpec, r: f64) -> Vec<f64> {
    let n = grid.states();
    let na = grid.actions();
    let mut stage = vec![0.0; n * n * na];
    let pickup = grid.location_index(spec.pickup);
    let dropoff = grid.location_index(spec.dropoff);
    for from in 0..n {
        let (u, mode) = grid.decode(from);
        let from_loc = grid.location_index(u);
        for a in 0..na {
            for to_loc in 0..grid.locations() {
                let p = p0.prob(to_loc, from_loc, a);
                if p == 0.0 {
                    continue;
                }
                let to_u = grid.location(to_loc);
                let mut put = |m: Mode, v: f64| {
                    stage[(grid.state(to_u, m) * n + from) * na + a] += v;
                };
                match mode {
                    Mode::Pickup if to_loc == pickup => {
                        put(Mode::Dropoff, r * p);
                        put(Mode::Pickup, (1.0 - r) * p);
                    }
                    Mode::Pickup => put(Mode::Pickup, p),
                    Mode::Dropoff if to_loc == dropoff => put(Mode::Pickup, p),
                    Mode::Dropoff => put(Mode::Dropoff, p),
                }
            }
        }
    }
    stage
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CongestionSign {
    /// `+β·exp(β(w − 1))`: congestion is penalised; admissible.
    #[default]
    Penalty,
    /// `−β·exp(β(w − 1))`: congestion is rewarded; fails the admissibility check.
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rows: usize,
    pub cols: usize,
    pub players: usize,
    pub q: f64,
    /// Optional best-response discount; the game itself is undiscounted.
    pub gamma: Option<f64>,
    pub arrival_rates: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dt: f64,
    pub horizon: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub congestion_sign: CongestionSign,
    pub arrival_rule: ArrivalRule,
    pub pickups: Vec<(usize, usize)>,
    pub dropoffs: Vec<(usize, usize)>,
    pub initial_mode: Mode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rows: 5,
            cols: 10,
            players: 3,
            q: 0.98,
            gamma: None,
            arrival_rates: vec![0.5; 3],
            alpha: vec![0.5, 1.0, 1.5],
            dt: 1.0,
            horizon: 120,
            epsilon: 1e-3,
            beta: 40.0,
            congestion_sign: CongestionSign::Penalty,
            arrival_rule: ArrivalRule::PaperLiteral,
            pickups: vec![(4, 8), (4, 7), (4, 2)],
            dropoffs: vec![(0, 4), (0, 5), (0, 8)],
            initial_mode: Mode::Pickup,
        }
    }
}

impl ScenarioConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.rows, self.cols)
    }

    pub fn player_specs(&self) -> Result<Vec<PlayerSpec>> {
        let n = self.players;
        if n == 0 {
            return Err(Error::param("players", "need at least one player"));
        }
        for (name, len) in [
            ("arrival_rates", self.arrival_rates.len()),
            ("alpha", self.alpha.len()),
            ("pickups", self.pickups.len()),
            ("dropoffs", self.dropoffs.len()),
        ] {
            if len != n {
                return Err(Error::param(name, format!("expected {n} entries, got {len}")));
            }
        }
        Ok((0..n)
            .map(|i| PlayerSpec {
                pickup: self.pickups[i].into(),
                dropoff: self.dropoffs[i].into(),
                arrival_rate: self.arrival_rates[i],
                alpha: self.alpha[i],
                initial_mode: self.initial_mode,
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        for spec in self.player_specs()? {
            grid.check(spec.pickup)?;
            grid.check(spec.dropoff)?;
            if !(spec.arrival_rate > 0.0) {
                return Err(Error::param("arrival_rates", "must be positive"));
            }
            if !(spec.alpha > 0.0 && spec.alpha.is_finite()) {
                return Err(Error::param("alpha", "must be positive"));
            }
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::param("q", "must lie in (0, 1]"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be nonnegative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be nonnegative"));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::param("gamma", "must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// Goal indicator: 1 on `(pickup, pickup mode)` and `(dropoff, dropoff mode)`.
pub fn goal_reward(grid: &GridSpec, spec: &PlayerSpec, s: usize) -> f64 {
    let (u, mode) = grid.decode(s);
    match mode {
        Mode::Pickup if u == spec.pickup => 1.0,
        Mode::Dropoff if u == spec.dropoff => 1.0,
        _ => 0.0,
    }
}

/// Cost model `ℓ^i = ε·x^i − c^i + α_i·f(w)` where `w` pools the congestion
/// of both modes and all actions at a location and
/// `f(w) = ±β·exp(β(w − 1))`.
pub fn build_cost_model<T: Scalar>(
    grid: &GridSpec,
    players: &[PlayerSpec],
    config: &ScenarioConfig,
) -> Result<CostModel<T>> {
    let dims = Dims::new(config.horizon, grid.states(), grid.actions())?;
    let alpha = ImpactFactors::new(players.iter().map(|p| T::lit(p.alpha)).collect())?;
    let grouping = CongestionGrouping::new((0..grid.states()).map(|s| s / MODES).collect())?;
    let beta = config.beta;
    let f = if beta == 0.0 {
        CostPrimitive::zero()
    } else {
        let sign = match config.congestion_sign {
            CongestionSign::Penalty => 1.0,
            CongestionSign::PaperLiteral => -1.0,
        };
        CostPrimitive::exponential(T::lit(sign * beta * (-beta).exp()), T::lit(beta))
    };
    let eps = T::lit(config.epsilon);
    CostModel::from_fn(
        dims,
        alpha,
        grouping,
        |_, _| f,
        |_, _, _| CostPrimitive::zero(),
        |i, _, s, _| CostPrimitive::linear(T::lit(-goal_reward(grid, &players[i], s)), eps),
    )
}

/// Assembled warehouse game plus the layout needed to interpret it.
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub config: ScenarioConfig,
    pub grid: GridSpec,
    pub players: Vec<PlayerSpec>,
    pub instance: GameInstance<T>,
}

impl<T: Scalar> Scenario<T> {
    /// Best-response discount requested by the configuration.
    pub fn discount(&self) -> T {
        T::lit(self.config.gamma.unwrap_or(1.0))
    }
}

/// Builds kernels, point-mass initial distributions on each dropoff chute
/// and the cost model. The paper-literal congestion sign is inadmissible and
/// is accepted only through that explicit flag.
pub fn build_scenario<T: Scalar>(config: &ScenarioConfig) -> Result<Scenario<T>> {
    config.validate()?;
    let grid = config.grid()?;
    let players = config.player_specs()?;
    let kernels = build_full_kernel(&grid, &players, config.q, config.dt, config.arrival_rule, config.horizon)?;
    let initial = players
        .iter()
        .map(|p| InitialDistribution::point_mass(grid.states(), grid.state(p.initial_location(), p.initial_mode)))
        .collect::<Result<Vec<_>>>()?;
    let model = build_cost_model(&grid, &players, config)?;
    let instance = match config.congestion_sign {
        CongestionSign::Penalty => GameInstance::new(kernels, initial, model)?,
        CongestionSign::PaperLiteral => GameInstance::new_allow_inadmissible(kernels, initial, model)?,
    };
    Ok(Scenario {
        config: config.clone(),
        grid,
        players,
        instance,
    })
}
