use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mdpcg::game::{CongestionGrouping, CostModel, CostPrimitive, ImpactFactors};
use mdpcg::mdp::{Dims, InitialDistribution, TransitionKernel};
use mdpcg::solver::{GameInstance, SolveOptions, UpdateOrder};
use mdpcg::warehouse::{build_scenario, Scenario, ScenarioConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    #[default]
    Jacobi,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub max_iters: usize,
    pub gap_tol: f64,
    pub move_tol: f64,
    pub seed: u64,
    pub parallel: bool,
    pub order: Order,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let d = SolveOptions::<f64>::default();
        SolverBlock {
            max_iters: d.max_iters,
            gap_tol: d.gap_tol,
            move_tol: d.move_tol,
            seed: d.seed,
            parallel: d.parallel,
            order: Order::Jacobi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutBlock {
    pub trials: usize,
    pub seed: u64,
}

impl Default for RolloutBlock {
    fn default() -> Self {
        RolloutBlock { trials: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: PathBuf::from("run") }
    }
}

/// Points at a JSON game description used instead of the warehouse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBlock {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomBlock>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub rollout: RolloutBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario: ScenarioConfig::default(),
            custom: None,
            solver: SolverBlock::default(),
            rollout: RolloutBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative custom-game paths resolve against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(custom) = &mut config.custom {
            if custom.path.is_relative() {
                if let Some(dir) = path.parent() {
                    custom.path = dir.join(&custom.path);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            self.schema_version
        );
        self.scenario.validate().context("scenario")?;
        self.solve_options()?.validate().context("solver")?;
        if let Some(custom) = &self.custom {
            ensure!(
                custom.path.is_file(),
                "custom.path: {} does not exist",
                custom.path.display()
            );
        }
        Ok(())
    }

    pub fn solve_options(&self) -> Result<SolveOptions<f64>> {
        let s = &self.solver;
        Ok(SolveOptions {
            max_iters: s.max_iters,
            gap_tol: s.gap_tol,
            move_tol: s.move_tol,
            seed: s.seed,
            parallel: s.parallel,
            order: match s.order {
                Order::Jacobi => UpdateOrder::Jacobi,
                Order::GaussSeidel => UpdateOrder::GaussSeidel,
            },
            discount: self.scenario.gamma.unwrap_or(1.0),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn build(&self) -> Result<Problem> {
        match &self.custom {
            Some(custom) => Ok(Problem::Custom(CustomGame::load(&custom.path)?.build()?)),
            None => Ok(Problem::Warehouse(Box::new(build_scenario(&self.scenario).context("scenario")?))),
        }
    }
}

pub enum Problem {
    Warehouse(Box<Scenario<f64>>),
    Custom(GameInstance<f64>),
}

impl Problem {
    pub fn instance(&self) -> &GameInstance<f64> {
        match self {
            Problem::Warehouse(s) => &s.instance,
            Problem::Custom(g) => g,
        }
    }
}

/// Explicit game tables. Kernels are `[t − 1][to][from][a]` per player,
/// `f` is `[t][group]`, `g` is `[t][s][a]` and `h` is `[i][t][s][a]`, each
/// primitive given as `[c0, c1, c2, c3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomGame {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub alpha: Vec<f64>,
    pub kernels: Vec<Vec<f64>>,
    pub initial: Vec<Vec<f64>>,
    #[serde(default)]
    pub grouping: Option<Vec<usize>>,
    pub f: Vec<[f64; 4]>,
    pub g: Vec<[f64; 4]>,
    pub h: Vec<[f64; 4]>,
    #[serde(default)]
    pub allow_inadmissible: bool,
}

impl CustomGame {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading custom game {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing custom game {}", path.display()))
    }

    pub fn build(&self) -> Result<GameInstance<f64>> {
        let dims = Dims::new(self.horizon, self.states, self.actions)?;
        let players = self.alpha.len();
        if self.kernels.len() != players || self.initial.len() != players {
            bail!("custom game: alpha, kernels and initial must list {players} players");
        }
        let kernels = self
            .kernels
            .iter()
            .map(|k| TransitionKernel::from_dense(dims, k.clone()))
            .collect::<mdpcg::Result<Vec<_>>>()?;
        let initial = self
            .initial
            .iter()
            .map(|z| InitialDistribution::new(z.clone()))
            .collect::<mdpcg::Result<Vec<_>>>()?;
        let grouping = match &self.grouping {
            Some(map) => CongestionGrouping::new(map.clone())?,
            None => CongestionGrouping::per_state(self.states),
        };
        let prims = |v: &[[f64; 4]]| {
            v.iter()
                .map(|c| CostPrimitive::new(c[0], c[1], c[2], c[3]))
                .collect::<mdpcg::Result<Vec<_>>>()
        };
        let model = CostModel::new(
            dims,
            ImpactFactors::new(self.alpha.clone())?,
            grouping,
            prims(&self.f)?,
            prims(&self.g)?,
            prims(&self.h)?,
        )?;
        let instance = if self.allow_inadmissible {
            GameInstance::new_allow_inadmissible(kernels, initial, model)?
        } else {
            GameInstance::new(kernels, initial, model)?
        };
        Ok(instance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = toml::from_str::<RunConfig>("schema_version = 1\n[solver]\nmax_iter = 3\n").unwrap_err();
        assert!(err.to_string().contains("max_iter"));
    }

    #[test]
    fn wrong_schema_rejected() {
        let c = RunConfig { schema_version: 7, ..RunConfig::default() };
        assert!(c.validate().unwrap_err().to_string().contains("schema_version"));
    }

    #[test]
    fn invalid_scenario_field_is_named() {
        let mut c = RunConfig::default();
        c.scenario.q = 1.5;
        assert!(format!("{:#}", c.validate().unwrap_err()).contains("q"));
    }

    #[test]
    fn custom_game_builds() {
        let game = CustomGame {
            horizon: 1,
            states: 1,
            actions: 2,
            alpha: vec![1.0],
            kernels: vec![vec![1.0, 1.0]],
            initial: vec![vec![1.0]],
            grouping: None,
            f: vec![[0.0, 1.0, 0.0, 0.0]; 2],
            g: vec![[0.0; 4]; 4],
            h: vec![[0.0, 1.0, 0.0, 0.0]; 4],
            allow_inadmissible: false,
        };
        let inst = game.build().unwrap();
        assert_eq!(inst.players(), 1);
        let bad = CustomGame { kernels: vec![vec![0.5, 1.0]], ..game };
        assert!(bad.build().is_err());
    }
}
