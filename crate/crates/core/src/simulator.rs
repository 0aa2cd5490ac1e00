//! Synthetic realizable environments, regret accounting and bootstrap
//! summaries.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::oracles::{dot, ActionId, ActionSet, Context, FiniteActionSet, Regressor, RegressorStats};
use crate::par::{self, Execution};
use crate::policies::Policy;

/// Independent random streams. Each round of each stream owns its own
/// block of the ChaCha keystream, so draws never shift between streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Environment = 0,
    Context = 1,
    Noise = 2,
    CounterfactualNoise = 3,
    Policy = 4,
    Bootstrap = 5,
}

/// Generator for `(seed, stream, counter)`.
pub fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos((counter as u128) << 20);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `r` in `{-1, +1}` with `P(r = +1) = (1 + f*) / 2`.
    Bernoulli,
    /// `f* + N(0, sigma^2)` truncated to `[f* - m, f* + m]`, `m = 1 - |f*|`.
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    /// A reward with mean exactly `mean`, inside `[-1, 1]`.
    pub fn sample(&self, mean: f64, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            NoiseModel::Bernoulli => {
                if rng.random::<f64>() < 0.5 * (1.0 + mean) {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseModel::Gaussian { sigma } => {
                let m = 1.0 - mean.abs();
                if m <= 0.0 || sigma <= 0.0 {
                    return mean;
                }
                for _ in 0..64 {
                    let z: f64 = StandardNormal.sample(rng);
                    if (sigma * z).abs() <= m {
                        return mean + sigma * z;
                    }
                }
                mean + rng.random_range(-m..=m)
            }
        }
    }
}

/// The true embedding map `g*`.
#[derive(Debug, Clone, PartialEq)]
pub enum GStar {
    Fixed(Vec<f64>),
    /// `g*(x) = W x` with spectral norm of `W` at most one.
    Bilinear(DMatrix<f64>),
}

impl GStar {
    pub fn eval(&self, x: &Context) -> Vec<f64> {
        match self {
            GStar::Fixed(theta) => theta.clone(),
            GStar::Bilinear(w) => (w * DVector::from_column_slice(&x.features)).as_slice().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GStar::Fixed(theta) => theta.len(),
            GStar::Bilinear(w) => w.nrows(),
        }
    }
}

/// `g*` itself, as a regressor that never learns.
impl Regressor for GStar {
    fn dim(&self) -> usize {
        GStar::dim(self)
    }

    fn predict(&self, x: &Context) -> Vec<f64> {
        self.eval(x)
    }

    fn update(&mut self, _x: &Context, _embedding: &[f64], _reward: f64) {}

    fn stats(&self) -> RegressorStats {
        RegressorStats::default()
    }
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub dim: usize,
    pub num_actions: usize,
    /// Zero selects a fixed `theta*`; otherwise `g*(x) = W* x`.
    pub context_dim: usize,
    pub noise: NoiseModel,
    pub pool_size: usize,
    pub seed: u64,
    /// Replaces the random embeddings.
    pub embeddings: Option<FiniteActionSet>,
    /// Swap the lowest-reward action into the last slot (fixed `theta*` only).
    pub worst_action_last: bool,
}

impl EnvSpec {
    pub const DEFAULT_POOL_SIZE: usize = 512;

    pub fn new(dim: usize, num_actions: usize, seed: u64) -> Self {
        Self {
            dim,
            num_actions,
            context_dim: 0,
            noise: NoiseModel::Bernoulli,
            pool_size: Self::DEFAULT_POOL_SIZE,
            seed,
            embeddings: None,
            worst_action_last: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearEnvironment {
    g_star: GStar,
    actions: FiniteActionSet,
    contexts: Vec<Context>,
    noise: NoiseModel,
}

fn unit_ball_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 0.0 {
            let radius = rng.random::<f64>().powf(1.0 / dim as f64);
            return v.iter().map(|x| x * radius / n).collect();
        }
    }
}

fn unit_sphere_point(rng: &mut ChaCha8Rng, dim: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = dot(&v, &v).sqrt();
    if !(n > 0.0) {
        return Err(Error::Config("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Builds an environment deterministically from `spec.seed`.
pub fn make_linear_env(spec: EnvSpec) -> Result<LinearEnvironment> {
    if spec.dim == 0 {
        return Err(Error::Config("dimension must be positive".into()));
    }
    if spec.pool_size == 0 {
        return Err(Error::Config("context pool must be nonempty".into()));
    }
    if let NoiseModel::Gaussian { sigma } = spec.noise {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
        }
    }
    let mut rng = stream_rng(spec.seed, Stream::Environment, 0);
    let g_star = if spec.context_dim == 0 {
        GStar::Fixed(unit_sphere_point(&mut rng, spec.dim)?)
    } else {
        let w = DMatrix::<f64>::from_fn(spec.dim, spec.context_dim, |_, _| StandardNormal.sample(&mut rng));
        let spectral = w.singular_values().max();
        if !(spectral > 0.0) {
            return Err(Error::Config("cannot normalize a zero matrix".into()));
        }
        GStar::Bilinear(w / spectral)
    };
    let mut actions = match spec.embeddings {
        Some(set) => {
            if set.dim() != spec.dim {
                return Err(Error::Config(format!(
                    "embedding file has dimension {}, environment expects {}",
                    set.dim(),
                    spec.dim
                )));
            }
            set
        }
        None => {
            if spec.num_actions == 0 {
                return Err(Error::EmptyActionSet);
            }
            let rows = (0..spec.num_actions).map(|_| unit_ball_point(&mut rng, spec.dim)).collect();
            FiniteActionSet::from_embeddings(rows)?
        }
    };
    if spec.worst_action_last {
        let GStar::Fixed(theta) = &g_star else {
            return Err(Error::Config("worst_action_last needs a fixed theta*".into()));
        };
        let n = actions.len();
        let mut rows: Vec<(ActionId, Vec<f64>)> =
            (0..n).map(|i| (actions.id(i), actions.row(i).to_vec())).collect();
        let worst = (0..n)
            .min_by(|&a, &b| dot(&rows[a].1, theta).total_cmp(&dot(&rows[b].1, theta)))
            .ok_or(Error::EmptyActionSet)?;
        let last = rows[n - 1].1.clone();
        rows[n - 1].1 = std::mem::replace(&mut rows[worst].1, last);
        actions = FiniteActionSet::new(rows)?;
    }
    let contexts = (0..spec.pool_size)
        .map(|i| Context::new(i, unit_ball_point(&mut rng, spec.context_dim)))
        .collect();
    Ok(LinearEnvironment {
        g_star,
        actions,
        contexts,
        noise: spec.noise,
    })
}

/// Appends `copies` exact copies of the action with id `id`.
pub fn duplicate_augment(env: &LinearEnvironment, id: ActionId, copies: usize) -> Result<LinearEnvironment> {
    let index = env
        .actions
        .index_of(id)
        .ok_or_else(|| Error::InvalidInput(format!("no action with id {id}")))?;
    Ok(LinearEnvironment {
        actions: env.actions.with_duplicates(index, copies)?,
        ..env.clone()
    })
}

impl LinearEnvironment {
    pub fn actions(&self) -> &FiniteActionSet {
        &self.actions
    }

    pub fn g_star(&self) -> &GStar {
        &self.g_star
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn dim(&self) -> usize {
        self.actions.dim()
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.actions = self.actions.with_execution(execution);
        self
    }

    /// `f*(x, a) = <phi(x, a), g*(x)>`.
    pub fn expected_reward(&self, x: &Context, index: usize) -> f64 {
        dot(&self.actions.embedding(x, index), &self.g_star.eval(x))
    }

    /// `pi*(x)` through the exact argmax oracle.
    pub fn optimal_action(&self, x: &Context) -> Result<usize> {
        self.actions.argmax(x, &self.g_star.eval(x))
    }

    /// The context for round `t`, drawn uniformly from the pool.
    pub fn context(&self, seed: u64, round: usize) -> &Context {
        let mut rng = stream_rng(seed, Stream::Context, round as u64);
        &self.contexts[rng.random_range(0..self.contexts.len())]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub context_id: usize,
    pub action_id: ActionId,
    pub embedding: Vec<f64>,
    pub reward: f64,
    pub expected_reward: f64,
    pub pseudo_regret_cum: f64,
    pub realized_regret_cum: f64,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub spanner_recomputed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTracker {
    pub cumulative_true_regret: f64,
    pub cumulative_realized_regret: f64,
    pub reward_sum: f64,
    /// `reward_sum / rounds`.
    pub progressive_reward: f64,
    pub records: Vec<RoundRecord>,
}

impl RegretTracker {
    fn push(&mut self, mut rec: RoundRecord, optimal_value: f64, optimal_reward: f64) {
        self.cumulative_true_regret += optimal_value - rec.expected_reward;
        self.cumulative_realized_regret += optimal_reward - rec.reward;
        self.reward_sum += rec.reward;
        self.progressive_reward = self.reward_sum / (self.records.len() + 1) as f64;
        rec.pseudo_regret_cum = self.cumulative_true_regret;
        rec.realized_regret_cum = self.cumulative_realized_regret;
        self.records.push(rec);
    }

    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    /// Cumulative pseudo-regret after `t` rounds.
    pub fn regret_at(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.records[t - 1].pseudo_regret_cum
        }
    }

    /// Mean of `f*(x_t, a_t)` over the episode.
    pub fn mean_expected_reward(&self) -> f64 {
        self.records.iter().map(|r| r.expected_reward).sum::<f64>() / self.records.len().max(1) as f64
    }
}

/// Runs `horizon` rounds of the contextual bandit protocol.
pub fn run_episode(
    env: &LinearEnvironment,
    policy: &mut dyn Policy,
    regressor: &mut dyn Regressor,
    horizon: usize,
    seed: u64,
) -> Result<RegretTracker> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if regressor.dim() != env.dim() {
        return Err(Error::Config(format!(
            "regressor dimension {} does not match environment dimension {}",
            regressor.dim(),
            env.dim()
        )));
    }
    let mut tracker = RegretTracker {
        records: Vec::with_capacity(horizon),
        ..Default::default()
    };
    let wrap = |module: &'static str, round: usize| {
        move |e: Error| Error::Round {
            module,
            round,
            source: Box::new(e),
        }
    };
    for t in 0..horizon {
        let x = env.context(seed, t);
        let u: f64 = stream_rng(seed, Stream::Policy, t as u64).random();
        let out = policy.step(x, &*regressor, &env.actions, u).map_err(|e| {
            let module = e.module();
            wrap(if module == "cli" { "policies" } else { module }, t)(e)
        })?;
        let expected = env.expected_reward(x, out.action);
        let reward = env.noise.sample(expected, &mut stream_rng(seed, Stream::Noise, t as u64));
        let best = env.optimal_action(x).map_err(wrap("simulator", t))?;
        let best_value = env.expected_reward(x, best);
        let best_reward = env
            .noise
            .sample(best_value, &mut stream_rng(seed, Stream::CounterfactualNoise, t as u64));
        let embedding = env.actions.row(out.action).to_vec();
        regressor.update(x, &embedding, reward);
        tracker.push(
            RoundRecord {
                round: t,
                context_id: x.id,
                action_id: env.actions.id(out.action),
                embedding,
                reward,
                expected_reward: expected,
                pseudo_regret_cum: 0.0,
                realized_regret_cum: 0.0,
                lambda: out.diagnostics.lambda,
                gamma: out.diagnostics.gamma,
                spanner_recomputed: out.diagnostics.spanner_recomputed,
            },
            best_value,
            best_reward,
        );
    }
    Ok(tracker)
}

/// Column order of the per-round CSV log.
pub const ROUND_LOG_HEADER: [&str; 9] = [
    "round",
    "context_id",
    "action_id",
    "reward",
    "pseudo_regret_cum",
    "realized_regret_cum",
    "lambda",
    "gamma",
    "spanner_recomputed",
];

/// Writes `records` as CSV. Floats use the shortest round-trip decimal
/// form; absent values are empty fields.
pub fn write_round_log<W: std::io::Write>(records: &[RoundRecord], writer: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ROUND_LOG_HEADER)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.context_id.to_string(),
            r.action_id.0.to_string(),
            r.reward.to_string(),
            r.pseudo_regret_cum.to_string(),
            r.realized_regret_cum.to_string(),
            opt(r.lambda),
            opt(r.gamma),
            r.spanner_recomputed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `job` for every seed, possibly concurrently; results come back in
/// seed order.
pub fn sweep<T, F>(seeds: &[u64], exec: Execution, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    par::map_indexed(seeds.len(), exec, |i| job(seeds[i])).into_iter().collect()
}

/// Linearly interpolated empirical quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidInput(format!(
            "bootstrap level {level} or resample count {resamples} out of range"
        )));
    }
    let n = values.len();
    let mut means = par::map_indexed(resamples, Execution::default(), |b| {
        let mut rng = stream_rng(seed, Stream::Bootstrap, b as u64);
        (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
    });
    means.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}
