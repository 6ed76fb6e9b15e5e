//! Experiment configuration: the scenario constants, the algorithm choice
//! with its knobs, and the run block (seeds, budgets, output directory).
//! Every field has a default, so an empty document is a valid config.

use serde::{Deserialize, Serialize};

use crate::env::PerturbNoise;
use crate::geometry::TrackGeometry;
use crate::meta::ValidationMode;
use crate::planner::{Budgets, DepthPolicy, PlannerConfig, Selection, WidthPolicy};
use crate::sim::{CarShape, MotionLimits, Scenario, SensorParams};

use super::HarnessError;

fn five_pi() -> f64 {
    5.0 * std::f64::consts::PI
}

fn four_and_half_pi() -> f64 {
    4.5 * std::f64::consts::PI
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub amplitude: f64,
    pub x_start: f64,
    pub x_end: f64,
    pub track_width: f64,
    pub end_zone_start: f64,
    pub car_width: f64,
    pub car_length: f64,
    pub wheelbase: f64,
    pub max_speed: f64,
    pub max_steer_rate_deg: f64,
    pub max_steer_deg: f64,
    pub sensor_range: f64,
    pub fov_half_angle_deg: f64,
    pub image_cols: usize,
    pub image_rows: usize,
    pub control_dt: f64,
    pub obstacle_count: usize,
    pub obstacle_radius: f64,
    pub horizon: usize,
    pub timeout_is_violation: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            amplitude: 0.8,
            x_start: 0.0,
            x_end: five_pi(),
            track_width: 1.6,
            end_zone_start: four_and_half_pi(),
            car_width: 0.2,
            car_length: 0.4,
            wheelbase: 0.3,
            max_speed: 0.4,
            max_steer_rate_deg: 10.0,
            max_steer_deg: 60.0,
            sensor_range: 2.0,
            fov_half_angle_deg: 72.0,
            image_cols: 100,
            image_rows: 50,
            control_dt: 1.0,
            obstacle_count: 3,
            obstacle_radius: 0.1,
            horizon: 300,
            timeout_is_violation: false,
        }
    }
}

impl ScenarioConfig {
    pub fn to_scenario(&self) -> Result<Scenario, HarnessError> {
        let positive = [
            ("track_width", self.track_width),
            ("car_width", self.car_width),
            ("car_length", self.car_length),
            ("wheelbase", self.wheelbase),
            ("max_speed", self.max_speed),
            ("max_steer_rate_deg", self.max_steer_rate_deg),
            ("max_steer_deg", self.max_steer_deg),
            ("sensor_range", self.sensor_range),
            ("fov_half_angle_deg", self.fov_half_angle_deg),
            ("control_dt", self.control_dt),
            ("obstacle_radius", self.obstacle_radius),
        ];
        for (name, v) in positive {
            if v <= 0.0 || v.is_nan() {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
        }
        if self.x_start >= self.x_end {
            return Err(HarnessError::Config("x_start must be below x_end".into()));
        }
        if self.end_zone_start <= self.x_start || self.end_zone_start >= self.x_end {
            return Err(HarnessError::Config(
                "end_zone_start must lie inside the x range".into(),
            ));
        }
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.image_cols < 2 || self.image_rows < 1 {
            return Err(HarnessError::Config("image must be at least 2x1".into()));
        }
        if self.fov_half_angle_deg > 180.0 {
            return Err(HarnessError::Config(
                "fov_half_angle_deg must be at most 180".into(),
            ));
        }
        Ok(Scenario {
            track: TrackGeometry::new(
                self.amplitude,
                self.x_start,
                self.x_end,
                self.track_width / 2.0,
            )
            .with_end_zone(self.end_zone_start),
            obstacle_count: self.obstacle_count,
            obstacle_radius: self.obstacle_radius,
            car: CarShape {
                width: self.car_width,
                length: self.car_length,
                wheelbase: self.wheelbase,
            },
            sensor: SensorParams {
                range: self.sensor_range,
                half_angle: self.fov_half_angle_deg.to_radians(),
                cols: self.image_cols,
                rows: self.image_rows,
            },
            limits: MotionLimits {
                max_speed: self.max_speed,
                max_steer_rate: self.max_steer_rate_deg.to_radians(),
                max_steer: self.max_steer_deg.to_radians(),
            },
            control_dt: self.control_dt,
            substeps: 10,
            horizon: self.horizon,
            timeout_is_violation: self.timeout_is_violation,
        })
    }
}

/// The falsification algorithms under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum AlgoId {
    Uniform,
    Genetic,
    RandomTree,
    RandomTreePerturb,
    Greedy,
    RrtSimplified,
    Rrt,
}

impl AlgoId {
    pub const ALL: [AlgoId; 7] = [
        AlgoId::Uniform,
        AlgoId::Genetic,
        AlgoId::RandomTree,
        AlgoId::RandomTreePerturb,
        AlgoId::Greedy,
        AlgoId::RrtSimplified,
        AlgoId::Rrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AlgoId::Uniform => "uniform",
            AlgoId::Genetic => "genetic",
            AlgoId::RandomTree => "random-tree",
            AlgoId::RandomTreePerturb => "random-tree-perturb",
            AlgoId::Greedy => "greedy",
            AlgoId::RrtSimplified => "rrt-simplified",
            AlgoId::Rrt => "rrt",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthConfig {
    Unlimited,
    Perturb { sigma_x: f64, sigma_y: f64 },
}

/// Algorithm block: the id plus optional overrides of the per-id defaults.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub id: Option<AlgoId>,
    pub goal_bias: Option<f64>,
    pub meta_distance_weight: Option<f64>,
    pub expansion_breadth: Option<usize>,
    pub constant_width: Option<usize>,
    pub depth: Option<DepthConfig>,
    pub generic_validation: Option<bool>,
    pub restrict_full_width_to_exploration: Option<bool>,
}

impl AlgorithmConfig {
    /// Resolve the planner configuration for a tree-search algorithm id.
    pub fn planner_config(
        &self,
        algo: AlgoId,
        budgets: Budgets,
    ) -> Result<PlannerConfig, HarnessError> {
        let selection = match algo {
            AlgoId::RandomTree | AlgoId::RandomTreePerturb => Selection::Random,
            AlgoId::Greedy => Selection::Greedy,
            AlgoId::RrtSimplified => Selection::RrtSimplified,
            AlgoId::Rrt => Selection::RrtStandard,
            AlgoId::Uniform | AlgoId::Genetic => {
                return Err(HarnessError::Config(format!(
                    "{} is not a tree-search algorithm",
                    algo.name()
                )))
            }
        };
        let depth = match (algo, self.depth) {
            (_, Some(DepthConfig::Unlimited)) | (AlgoId::RandomTree, None) => {
                DepthPolicy::Unlimited
            }
            (_, Some(DepthConfig::Perturb { sigma_x, sigma_y })) => {
                DepthPolicy::Perturb { sigma_x, sigma_y }
            }
            (_, None) => DepthPolicy::Perturb {
                sigma_x: 2.0,
                sigma_y: 2.0,
            },
        };
        let goal_bias = self.goal_bias.unwrap_or(0.8);
        if !(0.0..=1.0).contains(&goal_bias) {
            return Err(HarnessError::Config("goal_bias must be in [0, 1]".into()));
        }
        let w = self.meta_distance_weight.unwrap_or(0.5);
        if !(0.0..=1.0).contains(&w) {
            return Err(HarnessError::Config(
                "meta_distance_weight must be in [0, 1]".into(),
            ));
        }
        let breadth = self.expansion_breadth.unwrap_or(1);
        if breadth == 0 {
            return Err(HarnessError::Config(
                "expansion_breadth must be at least 1".into(),
            ));
        }
        Ok(PlannerConfig {
            selection,
            goal_bias,
            width: match self.constant_width {
                Some(0) => {
                    return Err(HarnessError::Config(
                        "constant_width must be at least 1".into(),
                    ))
                }
                Some(k) => WidthPolicy::Constant(k),
                None => WidthPolicy::Random,
            },
            depth,
            expansion_breadth: breadth,
            meta_distance_weight: w,
            validation: if self.generic_validation.unwrap_or(false) {
                ValidationMode::Generic
            } else {
                ValidationMode::FastSector
            },
            restrict_full_width_to_exploration: self
                .restrict_full_width_to_exploration
                .unwrap_or(false),
            budgets,
        })
    }

    pub fn perturb_noise(&self) -> PerturbNoise {
        match self.depth {
            Some(DepthConfig::Perturb { sigma_x, sigma_y }) => {
                PerturbNoise::positional(sigma_x, sigma_y)
            }
            _ => PerturbNoise::positional(2.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit per-run seeds; must be distinct.
    pub seeds: Option<Vec<u64>>,
    /// Number of seeds to enumerate from `base_seed` when `seeds` is unset.
    pub seed_count: u64,
    pub base_seed: u64,
    pub max_envs: Option<u64>,
    pub max_controller_calls: Option<u64>,
    pub max_wall_ms: Option<u64>,
    /// Algorithms for `bench`; defaults to the full suite.
    pub algos: Option<Vec<AlgoId>>,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: None,
            seed_count: 20,
            base_seed: 0,
            max_envs: Some(500),
            max_controller_calls: None,
            max_wall_ms: None,
            algos: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn budgets(&self) -> Budgets {
        Budgets {
            max_envs: self.max_envs,
            max_controller_calls: self.max_controller_calls,
            max_wall_ms: self.max_wall_ms,
        }
    }

    pub fn seed_list(&self) -> Result<Vec<u64>, HarnessError> {
        let seeds = match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.seed_count)
                .map(|i| self.base_seed.wrapping_add(i))
                .collect(),
        };
        if seeds.is_empty() {
            return Err(HarnessError::Config("no seeds configured".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        Ok(seeds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub algorithm: AlgorithmConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.scenario.to_scenario()?;
        self.run.seed_list()?;
        if self.scenario.obstacle_count == 0 {
            return Err(HarnessError::Config(
                "obstacle_count must be at least 1 for mutation search".into(),
            ));
        }
        Ok(())
    }
}
