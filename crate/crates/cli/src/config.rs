//! Experiment configuration: one TOML file with `[env]`, `[policy]` and
//! `[run]` tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Deserialize;

use spanner_cb::oracles::{ActionSet, BilinearRegressor, FiniteActionSet, Regressor, RidgeRegressor};
use spanner_cb::policies::{
    epsilon_schedule, greedy_gamma_schedule, igw_gamma_schedule, PolicySpec, ScheduleConfig, DEFAULT_FACTOR,
};
use spanner_cb::simulator::{duplicate_augment, make_linear_env, EnvSpec, LinearEnvironment, NoiseModel};
use spanner_cb::ActionId;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub dim: usize,
    #[serde(default = "default_actions")]
    pub actions: usize,
    /// 0 gives a fixed `theta*`; otherwise `g*(x) = W* x` with contexts in R^k.
    #[serde(default)]
    pub context_dim: usize,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub duplicates: usize,
    /// Action id to duplicate; defaults to the last action.
    pub duplicate_action: Option<u64>,
    /// Embedding CSV (`action_id,dim_0,...`), relative to the config file.
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pool")]
    pub pool_size: usize,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    SpannerGreedy,
    SpannerIgw,
    SpannerIgwPractical,
    Squarecb,
    EpsilonGreedy,
}

/// A number or the keyword `auto`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Keyword(String),
}

impl Param {
    fn resolve(&self, name: &str, auto: impl FnOnce() -> Result<f64>) -> Result<f64> {
        match self {
            Param::Value(v) => Ok(*v),
            Param::Keyword(k) if k == "auto" => auto(),
            Param::Keyword(k) => bail!("{name} must be a number or \"auto\", got {k:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    #[default]
    Auto,
    Ridge,
    Bilinear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: PolicyName,
    pub gamma: Option<Param>,
    pub epsilon: Option<Param>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Overrides the default `d ln T`.
    pub regsq_bound: Option<f64>,
    #[serde(default)]
    pub regressor: RegressorKind,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

/// A seed list or a count `n` meaning `0..n`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Seeds,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            seeds: default_seeds(),
            out: default_out(),
        }
    }
}

fn default_actions() -> usize {
    100
}
fn default_sigma() -> f64 {
    0.5
}
fn default_pool() -> usize {
    EnvSpec::DEFAULT_POOL_SIZE
}
fn default_factor() -> f64 {
    DEFAULT_FACTOR
}
fn default_delta() -> f64 {
    0.05
}
fn default_ridge() -> f64 {
    RidgeRegressor::DEFAULT_RIDGE
}
fn default_step() -> f64 {
    BilinearRegressor::DEFAULT_STEP
}
fn default_horizon() -> usize {
    1000
}
fn default_seeds() -> Seeds {
    Seeds::List(vec![0])
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub practical: bool,
    pub duplicates: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(file) = &cfg.env.embeddings {
            if file.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.env.embeddings = Some(base.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.run.seeds = Seeds::List(vec![seed]);
        }
        if let Some(t) = o.horizon {
            self.run.horizon = t;
        }
        if let Some(g) = o.gamma {
            self.policy.gamma = Some(Param::Value(g));
        }
        if let Some(e) = o.epsilon {
            self.policy.epsilon = Some(Param::Value(e));
        }
        if o.practical {
            if self.policy.name == PolicyName::SpannerIgw {
                self.policy.name = PolicyName::SpannerIgwPractical;
            }
        }
        if let Some(n) = o.duplicates {
            self.env.duplicates = n;
        }
        if let Some(out) = &o.out {
            self.run.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.horizon == 0 {
            bail!("run.T must be at least 1");
        }
        if self.run.seeds.to_vec().is_empty() {
            bail!("run.seeds is empty");
        }
        if let Some(file) = &self.env.embeddings {
            if !file.is_file() {
                bail!("embedding file {} does not exist", file.display());
            }
        }
        if self.policy.regressor == RegressorKind::Ridge && self.env.context_dim > 0 {
            bail!("the ridge regressor models a fixed theta*; use regressor = \"bilinear\" when env.context_dim > 0");
        }
        Ok(())
    }

    pub fn build_env(&self) -> Result<LinearEnvironment> {
        let embeddings = match &self.env.embeddings {
            Some(path) => Some(
                FiniteActionSet::from_csv_path(path).with_context(|| format!("loading embeddings {}", path.display()))?,
            ),
            None => None,
        };
        let spec = EnvSpec {
            dim: self.env.dim,
            num_actions: self.env.actions,
            context_dim: self.env.context_dim,
            noise: match self.env.noise {
                NoiseKind::Bernoulli => NoiseModel::Bernoulli,
                NoiseKind::Gaussian => NoiseModel::Gaussian { sigma: self.env.sigma },
            },
            pool_size: self.env.pool_size,
            seed: self.env.seed,
            embeddings,
            worst_action_last: false,
        };
        let env = make_linear_env(spec)?;
        if self.env.duplicates == 0 {
            return Ok(env);
        }
        let target = match self.env.duplicate_action {
            Some(id) => ActionId(id),
            None => *env.actions().ids().last().expect("environment has actions"),
        };
        Ok(duplicate_augment(&env, target, self.env.duplicates)?)
    }

    fn schedule(&self, dim: usize, num_actions: usize, finite: bool) -> Result<ScheduleConfig> {
        let mut cfg = ScheduleConfig::for_spanner(self.run.horizon, self.policy.delta, dim, self.policy.factor)?;
        if finite {
            // Uniform exploration over all of A plays the role of the design.
            cfg.c_opt = num_actions as f64 / dim as f64;
        }
        if let Some(r) = self.policy.regsq_bound {
            cfg.regsq_bound = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves `auto` parameters against the environment.
    pub fn policy_spec(&self, env: &LinearEnvironment) -> Result<PolicySpec> {
        let p = &self.policy;
        let d = env.dim();
        let n = env.actions().len();
        let auto = Param::Keyword("auto".into());
        let gamma = p.gamma.clone().unwrap_or(auto.clone());
        let epsilon = p.epsilon.clone().unwrap_or(auto);
        Ok(match p.name {
            PolicyName::SpannerGreedy | PolicyName::EpsilonGreedy => {
                let finite = p.name == PolicyName::EpsilonGreedy;
                let cfg = self.schedule(d, n, finite)?;
                let eps = match (&epsilon, &p.gamma) {
                    (Param::Keyword(_), Some(g)) => {
                        let g = g.resolve("gamma", || Ok(greedy_gamma_schedule(&cfg)))?;
                        epsilon_schedule(g, &cfg)
                    }
                    _ => epsilon.resolve("epsilon", || Ok(epsilon_schedule(greedy_gamma_schedule(&cfg), &cfg)))?,
                };
                if finite {
                    PolicySpec::EpsilonGreedy { epsilon: eps }
                } else {
                    PolicySpec::SpannerGreedy {
                        epsilon: eps,
                        factor: p.factor,
                    }
                }
            }
            PolicyName::SpannerIgw | PolicyName::SpannerIgwPractical => {
                let cfg = self.schedule(d, n, false)?;
                PolicySpec::SpannerIgw {
                    gamma: gamma.resolve("gamma", || Ok(igw_gamma_schedule(&cfg)))?,
                    factor: p.factor,
                    practical: p.name == PolicyName::SpannerIgwPractical,
                }
            }
            PolicyName::Squarecb => {
                let cfg = self.schedule(d, n, true)?;
                PolicySpec::SquareCb {
                    gamma: gamma.resolve("gamma", || Ok(igw_gamma_schedule(&cfg)))?,
                }
            }
        })
    }

    pub fn build_regressor(&self, dim: usize) -> Result<Box<dyn Regressor>> {
        let bilinear = match self.policy.regressor {
            RegressorKind::Auto => self.env.context_dim > 0,
            RegressorKind::Ridge => false,
            RegressorKind::Bilinear => true,
        };
        Ok(if bilinear {
            Box::new(BilinearRegressor::new(dim, self.env.context_dim, self.policy.step)?)
        } else {
            Box::new(RidgeRegressor::new(dim, self.policy.ridge)?)
        })
    }
}
