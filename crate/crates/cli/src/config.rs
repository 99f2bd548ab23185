//! Run configuration: a TOML file with nested sections, plus command-line
//! overrides (flags win). Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use blearner_core::blearner::{
    BLearnerConfig, NuisanceSpec, RhoRoute, SecondStageSpec,
};
use blearner_core::domain::FoldScheme;
use blearner_core::learners::{
    ForestSpec, KernelSpec, MinLeaf, PropensitySpec, SmootherSpec,
};

use crate::CliError;

fn default_folds() -> usize {
    5
}
fn default_clip_eps() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_estimators: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf_fraction: Option<f64>,
    pub min_samples_leaf: Option<usize>,
    pub max_features: Option<usize>,
}

impl ForestConfig {
    pub fn to_spec(&self) -> Result<ForestSpec, CliError> {
        let mut spec = ForestSpec::default();
        if let Some(v) = self.n_estimators {
            spec.n_estimators = v;
        }
        if let Some(v) = self.max_depth {
            spec.max_depth = v;
        }
        match (self.min_samples_leaf_fraction, self.min_samples_leaf) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "set min_samples_leaf_fraction or min_samples_leaf, not both".into(),
                ))
            }
            (Some(f), None) => spec.min_leaf = MinLeaf::Fraction(f),
            (None, Some(c)) => spec.min_leaf = MinLeaf::Count(c),
            (None, None) => {}
        }
        spec.max_features = self.max_features;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub length_scale: Option<f64>,
}

impl KernelConfig {
    pub fn to_spec(&self) -> KernelSpec {
        KernelSpec {
            length_scale: self.length_scale,
        }
    }
}

/// Estimator configuration shared by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Sensitivity level; exactly one of `lambda` / `log_lambda`.
    pub lambda: Option<f64>,
    pub log_lambda: Option<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// "kernel" | "forest" | "logistic-e"
    #[serde(default = "ModelConfig::default_nuisance")]
    pub nuisance: String,
    /// "kernel" | "forest" | "smoother"
    #[serde(default = "ModelConfig::default_second_stage")]
    pub second_stage: String,
    #[serde(default = "default_clip_eps")]
    pub clip_eps: f64,
    #[serde(default)]
    pub clamp_bounds: bool,
    /// "composed" | "direct-r"
    #[serde(default = "ModelConfig::default_rho_route")]
    pub rho_route: String,
    /// "modular" | "shuffled"
    #[serde(default = "ModelConfig::default_fold_scheme")]
    pub fold_scheme: String,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            log_lambda: None,
            folds: default_folds(),
            nuisance: Self::default_nuisance(),
            second_stage: Self::default_second_stage(),
            clip_eps: default_clip_eps(),
            clamp_bounds: false,
            rho_route: Self::default_rho_route(),
            fold_scheme: Self::default_fold_scheme(),
            forest: ForestConfig::default(),
            kernel: KernelConfig::default(),
        }
    }
}

impl ModelConfig {
    fn default_nuisance() -> String {
        "forest".into()
    }
    fn default_second_stage() -> String {
        "forest".into()
    }
    fn default_rho_route() -> String {
        "composed".into()
    }
    fn default_fold_scheme() -> String {
        "modular".into()
    }

    /// The scalar Λ; defaults to 1 when neither field is set.
    pub fn resolve_lambda(&self) -> Result<f64, CliError> {
        match (self.lambda, self.log_lambda) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "set lambda or log_lambda, not both".into(),
            )),
            (Some(l), None) => Ok(l),
            (None, Some(ll)) => Ok(ll.exp()),
            (None, None) => Ok(1.0),
        }
    }

    pub fn smoother_spec(&self) -> Result<SmootherSpec, CliError> {
        match self.nuisance.as_str() {
            "kernel" => Ok(SmootherSpec::Kernel(self.kernel.to_spec())),
            "forest" | "logistic-e" => Ok(SmootherSpec::Forest(self.forest.to_spec()?)),
            other => Err(CliError::Config(format!(
                "unknown nuisance '{other}' (kernel | forest | logistic-e)"
            ))),
        }
    }

    pub fn nuisance_spec(&self) -> Result<NuisanceSpec, CliError> {
        let propensity = match self.nuisance.as_str() {
            "kernel" => PropensitySpec::Kernel(self.kernel.to_spec()),
            "forest" => PropensitySpec::Forest(self.forest.to_spec()?),
            "logistic-e" => PropensitySpec::Logistic,
            other => {
                return Err(CliError::Config(format!(
                    "unknown nuisance '{other}' (kernel | forest | logistic-e)"
                )))
            }
        };
        let rho_route = match self.rho_route.as_str() {
            "composed" => RhoRoute::Composed,
            "direct-r" => RhoRoute::DirectR,
            other => {
                return Err(CliError::Config(format!(
                    "unknown rho_route '{other}' (composed | direct-r)"
                )))
            }
        };
        Ok(NuisanceSpec {
            propensity,
            smoother: self.smoother_spec()?,
            clip_eps: self.clip_eps,
            rho_route,
        })
    }

    pub fn second_stage_spec(&self) -> Result<SecondStageSpec, CliError> {
        match self.second_stage.as_str() {
            "kernel" => Ok(SecondStageSpec::Erm(SmootherSpec::Kernel(
                self.kernel.to_spec(),
            ))),
            "forest" => Ok(SecondStageSpec::Erm(SmootherSpec::Forest(
                self.forest.to_spec()?,
            ))),
            "smoother" => Ok(SecondStageSpec::HalfSmoother(SmootherSpec::Kernel(
                self.kernel.to_spec(),
            ))),
            other => Err(CliError::Config(format!(
                "unknown second_stage '{other}' (kernel | forest | smoother)"
            ))),
        }
    }

    pub fn fold_scheme(&self) -> Result<FoldScheme, CliError> {
        match self.fold_scheme.as_str() {
            "modular" => Ok(FoldScheme::Modular),
            "shuffled" => Ok(FoldScheme::Shuffled),
            other => Err(CliError::Config(format!(
                "unknown fold_scheme '{other}' (modular | shuffled)"
            ))),
        }
    }

    pub fn blearner_config(&self, seed: u64) -> Result<BLearnerConfig, CliError> {
        Ok(BLearnerConfig {
            nuisance: self.nuisance_spec()?,
            second_stage: self.second_stage_spec()?,
            folds: self.folds,
            fold_scheme: self.fold_scheme()?,
            seed,
            clamp_bounds: self.clamp_bounds,
        })
    }
}

fn default_n_grid() -> Vec<u64> {
    vec![100, 200, 400, 800, 1600, 3200, 6400, 12800]
}
fn default_reps() -> u64 {
    50
}
fn default_estimators() -> Vec<String> {
    vec!["blearner".into(), "oracle".into(), "plugin".into()]
}
fn default_test_size() -> u64 {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<u64>,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_test_size")]
    pub test_size: u64,
    /// Seed for the fixed test draw; defaults to a stream derived from the
    /// run seed.
    pub test_seed: Option<u64>,
    /// Reuse one max-size draw per replication so sample sizes are nested
    /// (variance reduction across the grid).
    #[serde(default = "default_true")]
    pub nested: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            reps: default_reps(),
            estimators: default_estimators(),
            test_size: default_test_size(),
            test_seed: None,
            nested: true,
        }
    }
}

fn default_defer_n() -> u64 {
    2000
}
fn default_defer_eval() -> u64 {
    1000
}
fn default_defer_reps() -> u64 {
    10
}
fn default_log_lambda_star() -> f64 {
    1.0
}
fn default_confounder_effect() -> f64 {
    1.0
}
fn default_deferral_points() -> usize {
    21
}
fn default_eval_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeferConfig {
    /// "synthetic" | "csv"
    #[serde(default = "DeferConfig::default_source")]
    pub source: String,
    #[serde(default = "default_defer_n")]
    pub n: u64,
    #[serde(default = "default_defer_eval")]
    pub n_eval: u64,
    #[serde(default = "default_defer_reps")]
    pub reps: u64,
    #[serde(default = "default_log_lambda_star")]
    pub log_lambda_star: f64,
    #[serde(default = "default_confounder_effect")]
    pub confounder_effect: f64,
    #[serde(default)]
    pub cate_shift: f64,
    #[serde(default = "default_deferral_points")]
    pub deferral_points: usize,
    pub input_csv: Option<String>,
    pub treatment_col: Option<String>,
    pub outcome_col: Option<String>,
    pub y0_col: Option<String>,
    pub y1_col: Option<String>,
    /// Held-out share scored for deferral in csv mode.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

impl Default for DeferConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty defer config")
    }
}

impl DeferConfig {
    fn default_source() -> String {
        "synthetic".into()
    }
}

fn default_sweep_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}
fn default_sweep_n() -> u64 {
    2000
}
fn default_sweep_shift() -> f64 {
    6.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// "synthetic" | "csv"
    #[serde(default = "DeferConfig::default_source")]
    pub source: String,
    #[serde(default = "default_sweep_grid")]
    pub log_lambda_grid: Vec<f64>,
    #[serde(default = "default_sweep_n")]
    pub n: u64,
    #[serde(default = "default_log_lambda_star")]
    pub log_lambda_star: f64,
    #[serde(default = "default_confounder_effect")]
    pub confounder_effect: f64,
    /// Uniform CATE lift keeping the synthetic effects positive.
    #[serde(default = "default_sweep_shift")]
    pub cate_shift: f64,
    pub input_csv: Option<String>,
    pub treatment_col: Option<String>,
    pub outcome_col: Option<String>,
    /// Emit per-row bound files alongside the results table.
    #[serde(default = "default_true")]
    pub write_bounds: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty sweep config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub train_csv: Option<String>,
    pub query_csv: Option<String>,
    #[serde(default = "EstimateConfig::default_treatment_col")]
    pub treatment_col: String,
    #[serde(default = "EstimateConfig::default_outcome_col")]
    pub outcome_col: String,
}

impl EstimateConfig {
    fn default_treatment_col() -> String {
        "a".into()
    }
    fn default_outcome_col() -> String {
        "y".into()
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 = library default.
    #[serde(default)]
    pub threads: usize,
    pub out: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub defer: DeferConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub estimate: EstimateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The resolved config as TOML, echoed into every output directory.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Command-line overrides; flags win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub lambda: Option<String>,
    pub log_lambda: Option<String>,
    pub folds: Option<usize>,
    pub nuisance: Option<String>,
    pub second_stage: Option<String>,
    pub threads: Option<usize>,
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad grid entry '{t}': {e}")))
        })
        .collect()
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        if let Some(folds) = self.folds {
            cfg.model.folds = folds;
        }
        if let Some(nuisance) = &self.nuisance {
            cfg.model.nuisance = nuisance.clone();
        }
        if let Some(second) = &self.second_stage {
            cfg.model.second_stage = second.clone();
        }
        if self.lambda.is_some() && self.log_lambda.is_some() {
            return Err(CliError::Config(
                "pass --lambda or --log-lambda, not both".into(),
            ));
        }
        if let Some(text) = &self.lambda {
            let grid = parse_grid(text)?;
            if grid.len() == 1 {
                cfg.model.lambda = Some(grid[0]);
                cfg.model.log_lambda = None;
            } else {
                cfg.sweep.log_lambda_grid = grid.iter().map(|l| l.ln()).collect();
            }
        }
        if let Some(text) = &self.log_lambda {
            let grid = parse_grid(text)?;
            if grid.len() == 1 {
                cfg.model.log_lambda = Some(grid[0]);
                cfg.model.lambda = None;
            } else {
                cfg.sweep.log_lambda_grid = grid;
            }
        }
        Ok(())
    }
}
