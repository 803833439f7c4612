//! Run configuration: defaults, JSON config files and command-line flags.
//!
//! Resolution order is flags over config file over defaults. Every layer is
//! merged as a JSON object and deserialized once, so unknown keys are
//! rejected the same way wherever they come from.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use famtune::costmodel::CostModelConfig;
use famtune::experiment::RunSetup;
use famtune::family::ClusterAlgo;
use famtune::graph::{load_model, ModelGraph};
use famtune::scheduler::{Mode, PotentialFn, SearchConfig};
use famtune::simbackend::{ClockConfig, LandscapeParams, SimClock};
use famtune::fixtures;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Prefix selecting a built-in model instead of a file.
pub const BUILTIN_PREFIX: &str = "builtin:";

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model file path, or `builtin:NAME`.
    pub model: String,
    /// Measurement budget B.
    pub budget: usize,
    pub policy: Mode,
    /// Foresee fraction p, strictly between 0 and 1.
    pub foresee_p: f64,
    pub cluster_algo: ClusterAlgo,
    /// Clustering that assigns landscape archetypes.
    pub truth_algo: ClusterAlgo,
    pub potential: PotentialFn,
    pub seed: u64,
    /// Number of consecutive seeds for compare, heatmap and bars.
    pub seeds: u64,
    pub workers: usize,
    pub noise: f64,
    pub t_measure: f64,
    pub t_train_per_sample: f64,
    pub train_speedup: f64,
    pub cm_accelerated: bool,
    pub cm_trees: usize,
    pub cm_depth: usize,
    pub cm_lr: f64,
    pub cm_min_leaf: usize,
    pub pool_random: usize,
    pub pool_evolved: usize,
    pub epsilon: f64,
    pub gradient_window: usize,
    pub base_min_ms: f64,
    pub base_max_ms: f64,
    pub shift_max: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub interaction_max: f64,
    /// Samples per subgraph for heatmap and bars.
    pub samples: usize,
    /// Training-set caps for bars, subgraph id to sample count.
    pub starve: BTreeMap<usize, usize>,
    pub out_dir: PathBuf,
    /// Curve file name inside `out_dir`.
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let setup = RunSetup::default();
        let (l, c, s) = (setup.landscape, setup.clock, setup.search);
        RunConfig {
            model: format!("{BUILTIN_PREFIX}bert-large"),
            budget: setup.budget,
            policy: Mode::Foresee,
            foresee_p: setup.foresee_p,
            cluster_algo: setup.cluster_algo,
            truth_algo: setup.truth_algo,
            potential: setup.potential,
            seed: 0,
            seeds: 1,
            workers: setup.workers,
            noise: l.noise_sigma,
            t_measure: c.t_measure,
            t_train_per_sample: c.t_train_per_sample,
            train_speedup: c.train_speedup,
            cm_accelerated: s.accelerated_training,
            cm_trees: s.cost_model.trees,
            cm_depth: s.cost_model.max_depth,
            cm_lr: s.cost_model.learning_rate,
            cm_min_leaf: s.cost_model.min_samples_leaf,
            pool_random: s.pool_random,
            pool_evolved: s.pool_evolved,
            epsilon: s.epsilon,
            gradient_window: s.gradient_window,
            base_min_ms: l.base_min_ms,
            base_max_ms: l.base_max_ms,
            shift_max: l.shift_max,
            curvature_min: l.curvature_min,
            curvature_max: l.curvature_max,
            interaction_max: l.interaction_max,
            samples: 256,
            starve: BTreeMap::new(),
            out_dir: PathBuf::from("results"),
            out: "curve.csv".into(),
        }
    }
}

/// Flags shared by every run subcommand. Unset flags leave lower layers alone.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// JSON config file; flags override its values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model file, or builtin:NAME (bert-large, resnet50, tiny, small-space)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// foresee or monolithic
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub foresee_p: Option<f64>,
    /// core-op, op-count or op-sequence
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_algo: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_algo: Option<String>,
    /// greedy or gradient
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Lognormal measurement noise sigma
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_measure: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_train_per_sample: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_speedup: Option<f64>,
    /// Charge cost-model training at the accelerated rate
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub cm_accelerated: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cm_trees: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cm_depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cm_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cm_min_leaf: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_random: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_evolved: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Cap a subgraph's training samples in bars, as ID:N (repeatable)
    #[arg(long, value_name = "ID:N")]
    #[serde(skip)]
    pub starve: Vec<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Curve CSV file name, written inside the output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl Flags {
    fn to_layer(&self) -> Result<Map<String, Value>> {
        // enums go through FromStr first so bad names fail with a clear message
        if let Some(p) = &self.policy {
            p.parse::<Mode>()?;
        }
        if let Some(p) = &self.potential {
            p.parse::<PotentialFn>()?;
        }
        for a in [&self.cluster_algo, &self.truth_algo].into_iter().flatten() {
            a.parse::<ClusterAlgo>()?;
        }
        let mut map = match serde_json::to_value(self)? {
            Value::Object(m) => m,
            _ => unreachable!("flags serialize to an object"),
        };
        if !self.starve.is_empty() {
            let mut starve = Map::new();
            for item in &self.starve {
                let (id, n) = parse_starve(item)?;
                starve.insert(id.to_string(), Value::from(n));
            }
            map.insert("starve".into(), Value::Object(starve));
        }
        Ok(map)
    }

    fn check_conflicts(&self) -> Result<()> {
        if self.policy.as_deref() == Some("monolithic") && self.foresee_p.is_some() {
            bail!("conflicting flags: --foresee-p has no effect with --policy monolithic");
        }
        Ok(())
    }
}

fn parse_starve(item: &str) -> Result<(usize, usize)> {
    let (id, n) = item
        .split_once(':')
        .with_context(|| format!("--starve expects ID:N, got {item:?}"))?;
    Ok((
        id.trim().parse().with_context(|| format!("bad subgraph id in {item:?}"))?,
        n.trim().parse().with_context(|| format!("bad sample count in {item:?}"))?,
    ))
}

/// Reads a config file as a JSON object of config keys.
pub fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("malformed config file {}", path.display()))? {
        Value::Object(m) => Ok(m),
        _ => bail!("config file {} must hold a JSON object", path.display()),
    }
}

/// Merges layers left to right (later wins) over the defaults and validates.
pub fn resolve(layers: &[Map<String, Value>]) -> Result<RunConfig> {
    let mut merged = match serde_json::to_value(RunConfig::default())? {
        Value::Object(m) => m,
        _ => unreachable!(),
    };
    for layer in layers {
        for (k, v) in layer {
            merged.insert(k.clone(), v.clone());
        }
    }
    let config: RunConfig = serde_json::from_value(Value::Object(merged)).context("invalid configuration")?;
    config.validate()?;
    Ok(config)
}

/// Resolves a run configuration from parsed flags and their optional config file.
pub fn parse_config(flags: &Flags) -> Result<RunConfig> {
    flags.check_conflicts()?;
    let mut layers = Vec::new();
    if let Some(path) = &flags.config {
        layers.push(read_config_file(path)?);
    }
    layers.push(flags.to_layer()?);
    resolve(&layers)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.foresee_p > 0.0 && self.foresee_p < 1.0) {
            bail!("foresee_p must lie strictly between 0 and 1, got {}", self.foresee_p);
        }
        if self.budget == 0 {
            bail!("budget must be positive");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.seeds == 0 {
            bail!("seeds must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            bail!("epsilon must lie in [0, 1], got {}", self.epsilon);
        }
        if self.gradient_window == 0 {
            bail!("gradient_window must be at least 1");
        }
        if self.pool_random + self.pool_evolved == 0 {
            bail!("candidate pools cannot both be empty");
        }
        let name = Path::new(&self.out);
        if self.out.is_empty() || name.file_name().map(|f| f != name.as_os_str()).unwrap_or(true) {
            bail!("out must be a plain file name, got {:?}", self.out);
        }
        let setup = self.setup();
        setup.landscape.validate()?;
        setup.search.cost_model.validate()?;
        SimClock::new(setup.clock)?;
        Ok(())
    }

    pub fn setup(&self) -> RunSetup {
        RunSetup {
            budget: self.budget,
            foresee_p: self.foresee_p,
            cluster_algo: self.cluster_algo,
            truth_algo: self.truth_algo,
            potential: self.potential,
            workers: self.workers,
            landscape: LandscapeParams {
                base_min_ms: self.base_min_ms,
                base_max_ms: self.base_max_ms,
                noise_sigma: self.noise,
                shift_max: self.shift_max,
                curvature_min: self.curvature_min,
                curvature_max: self.curvature_max,
                interaction_max: self.interaction_max,
            },
            clock: ClockConfig {
                t_measure: self.t_measure,
                t_train_per_sample: self.t_train_per_sample,
                train_speedup: self.train_speedup,
            },
            search: SearchConfig {
                pool_random: self.pool_random,
                pool_evolved: self.pool_evolved,
                epsilon: self.epsilon,
                gradient_window: self.gradient_window,
                cost_model: CostModelConfig {
                    trees: self.cm_trees,
                    max_depth: self.cm_depth,
                    learning_rate: self.cm_lr,
                    min_samples_leaf: self.cm_min_leaf,
                },
                accelerated_training: self.cm_accelerated,
                seed: self.seed,
            },
        }
    }

    pub fn load_model(&self) -> Result<ModelGraph> {
        match self.model.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => fixtures::by_name(name)
                .with_context(|| format!("unknown builtin model {name:?}; known: {}", fixtures::NAMES.join(", "))),
            None => Ok(load_model(&self.model)?),
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).map(|i| self.seed + i).collect()
    }
}
