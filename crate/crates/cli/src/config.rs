//! Run configuration and the bundled example setups.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use stochreach::chance::{ChanceOptions, RiskAllocatedProblem};
use stochreach::geometry::{spread_directions, DirectionSet};
use stochreach::reachalgo::{AnchorChoice, Backend, GenzOptions, ReachOptions};
use stochreach::sysmodel::{Broadcast, CwhParams, DubinsParams, SetSpec, StochasticLTVSystem, SystemSpec, TargetTube, TubeSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Alphas {
    One(f64),
    Many(Vec<f64>),
}

impl Alphas {
    pub fn list(&self) -> Vec<f64> {
        match self {
            Alphas::One(a) => vec![*a],
            Alphas::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionsConfig {
    pub count: usize,
    /// Coordinate plane of the directions when the state has more than two
    /// dimensions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<(usize, usize)>,
}

impl Default for DirectionsConfig {
    fn default() -> Self {
        Self { count: 32, slice: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub state_spacing: f64,
    pub input_spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            trajectories: 100_000,
            seed: 0,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub horizon: usize,
    pub tube: TubeSpec,
    pub alpha: Alphas,
    #[serde(default)]
    pub directions: DirectionsConfig,
    /// `[index, value]` pairs pinning initial-state coordinates.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_initial: Vec<(usize, f64)>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_mode: Option<AnchorChoice>,
    #[serde(default)]
    pub chance: ChanceOptions,
    #[serde(default)]
    pub genz: GenzOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_directions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
    /// Relative paths are taken from the directory holding the config.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// A config with every model object built and checked.
pub struct Prepared {
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub system: StochasticLTVSystem,
    pub tube: TargetTube,
    pub problem: RiskAllocatedProblem,
    pub directions: DirectionSet,
    pub alphas: Vec<f64>,
}

impl Prepared {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::new(config, base)
    }

    pub fn new(config: RunConfig, base: &Path) -> anyhow::Result<Self> {
        if config.horizon == 0 {
            bail!(stochreach::Error::InvalidArgument("horizon must be positive".into()));
        }
        let alphas = config.alpha.list();
        if alphas.is_empty() {
            bail!(stochreach::Error::InvalidArgument("alpha list is empty".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            bail!(stochreach::Error::InvalidArgument(format!("alpha {a} outside (0, 1]")));
        }
        if let Some(t) = config.time_budget_s {
            if !(t >= 0.0 && t.is_finite()) {
                bail!(stochreach::Error::InvalidArgument("time_budget_s must be finite and nonnegative".into()));
            }
        }
        let system = config.system.build(config.horizon).context("building the system")?;
        let tube = config.tube.build(&system, &config.system).context("building the target tube")?;
        let mut problem = RiskAllocatedProblem::new(system.clone(), tube.clone(), config.chance.clone())
            .context("setting up the risk allocation")?;
        if !config.fixed_initial.is_empty() {
            problem = problem.with_fixed_initial(config.fixed_initial.clone()).context("fixing initial coordinates")?;
        }
        let directions = spread_directions(config.directions.count, system.state_dim(), config.directions.slice)
            .context("building directions")?;
        let output_dir = if config.output_dir.is_absolute() {
            config.output_dir.clone()
        } else {
            base.join(&config.output_dir)
        };
        Ok(Self {
            config,
            output_dir,
            system,
            tube,
            problem,
            directions,
            alphas,
        })
    }

    pub fn reach_options(&self, alpha: f64, jobs: usize) -> ReachOptions {
        ReachOptions {
            alpha,
            backend: self.config.backend,
            anchor_mode: self.config.anchor_mode,
            max_directions: self.config.max_directions,
            time_budget: self.config.time_budget_s.map(std::time::Duration::from_secs_f64),
            jobs,
            genz: self.config.genz.clone(),
        }
    }

    /// Coordinates used for 2D plot exports.
    pub fn plot_dims(&self) -> (usize, usize) {
        self.config.directions.slice.unwrap_or((0, 1))
    }
}

pub const EXAMPLES: [&str; 5] = ["integrator2", "integrator40", "stochy-uncontrolled", "cwh", "dubins"];

fn bounds(lo: f64, hi: f64) -> SetSpec {
    SetSpec::Bounds {
        lower: Broadcast::Scalar(lo),
        upper: Broadcast::Scalar(hi),
    }
}

fn base(system: SystemSpec, horizon: usize, tube: TubeSpec, alpha: Alphas) -> RunConfig {
    RunConfig {
        system,
        horizon,
        tube,
        alpha,
        directions: DirectionsConfig::default(),
        fixed_initial: Vec::new(),
        backend: Backend::Chance,
        anchor_mode: None,
        chance: ChanceOptions::default(),
        genz: GenzOptions::default(),
        max_directions: None,
        time_budget_s: None,
        dp: None,
        validation: ValidationConfig::default(),
        output_dir: default_output_dir(),
    }
}

pub fn example(name: &str) -> Option<RunConfig> {
    let cfg = match name {
        "integrator2" => {
            let mut c = base(
                SystemSpec::Integrator {
                    dim: 2,
                    sampling_time: 0.1,
                    cov: 0.01,
                    input_bound: 0.1,
                },
                10,
                TubeSpec::Constant {
                    set: bounds(-1.0, 1.0),
                    terminal: None,
                },
                Alphas::Many(vec![0.6, 0.9]),
            );
            c.dp = Some(DpConfig {
                state_spacing: 0.05,
                input_spacing: 0.01,
            });
            c
        }
        "integrator40" => {
            let mut c = base(
                SystemSpec::Integrator {
                    dim: 40,
                    sampling_time: 0.1,
                    cov: 0.01,
                    input_bound: 1.0,
                },
                5,
                TubeSpec::Constant {
                    set: bounds(-10.0, 10.0),
                    terminal: Some(bounds(-8.0, 8.0)),
                },
                Alphas::Many(vec![0.6, 0.9]),
            );
            c.directions = DirectionsConfig {
                count: 8,
                slice: Some((0, 1)),
            };
            c.fixed_initial = (2..40).map(|i| (i, 0.0)).collect();
            c.validation.trajectories = 10_000;
            c
        }
        "stochy-uncontrolled" => {
            let mut c = base(
                SystemSpec::Custom {
                    a: vec![vec![vec![0.8, 0.0], vec![0.0, 0.8]]],
                    b: vec![vec![vec![], vec![]]],
                    noise_mean: None,
                    noise_cov: vec![vec![0.05, 0.0], vec![0.0, 0.05]],
                    input_set: None,
                },
                10,
                TubeSpec::Constant {
                    set: bounds(-1.0, 1.0),
                    terminal: None,
                },
                Alphas::One(0.6),
            );
            c.dp = Some(DpConfig {
                state_spacing: 0.05,
                input_spacing: 0.05,
            });
            c
        }
        "cwh" => {
            let mut c = base(SystemSpec::Cwh(CwhParams::default()), 5, TubeSpec::Cwh, Alphas::One(0.8));
            c.directions = DirectionsConfig {
                count: 32,
                slice: Some((0, 1)),
            };
            c.fixed_initial = vec![(2, 0.0), (3, 0.0)];
            c.anchor_mode = Some(AnchorChoice::Cheby);
            c
        }
        "dubins" => {
            let mut c = base(
                SystemSpec::Dubins(DubinsParams::default()),
                50,
                TubeSpec::DubinsNominal {
                    delta: 0.7,
                    decay: 100.0,
                    base_half_width: 4.0,
                },
                Alphas::One(0.8),
            );
            c.directions.count = 16;
            c.anchor_mode = Some(AnchorChoice::Cheby);
            c
        }
        _ => return None,
    };
    Some(cfg)
}
