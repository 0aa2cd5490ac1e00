//! Exploration policies and their parameter schedules.
//!
//! Every policy maps `(x, g_hat, action set)` to a sparse distribution over
//! action indices and samples from it with a single uniform draw supplied by
//! the caller, so a round consumes exactly one random number.

use crate::error::{Error, Result};
use crate::oracles::{dot, ActionSet, Context, Regressor};
use crate::par::Execution;
use crate::reweighted::{reweighted_spanner, ReweightingContext};
use crate::spanner::{barycentric_spanner, local_search_init, SpannerState};

/// Absolute tolerance on the normalizer found by bisection.
pub const LAMBDA_TOLERANCE: f64 = 1e-10;
/// Largest residual `|sum p - 1|` accepted from the normalizer search.
pub const LAMBDA_RESIDUAL: f64 = 1e-8;
const LAMBDA_MAX_ITERATIONS: usize = 100;

/// Default spanner approximation factor.
pub const DEFAULT_FACTOR: f64 = 2.0;

/// A probability distribution over action indices with finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationDistribution {
    atoms: Vec<(usize, f64)>,
}

impl ExplorationDistribution {
    /// Atoms for the same index are merged, keeping first-occurrence order.
    pub fn new(atoms: Vec<(usize, f64)>) -> Result<Self> {
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(atoms.len());
        for (idx, p) in atoms {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::Numerical(format!("atom {idx} has probability {p}")));
            }
            match merged.iter_mut().find(|(i, _)| *i == idx) {
                Some(slot) => slot.1 += p,
                None => merged.push((idx, p)),
            }
        }
        let total: f64 = merged.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("distribution sums to {total}")));
        }
        Ok(Self { atoms: merged })
    }

    pub fn atoms(&self) -> &[(usize, f64)] {
        &self.atoms
    }

    pub fn support_size(&self) -> usize {
        self.atoms.len()
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.atoms.iter().find(|(i, _)| *i == index).map_or(0.0, |a| a.1)
    }

    /// Inverse-CDF sample for a uniform draw `u` in `[0, 1)`.
    pub fn sample(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for &(idx, p) in &self.atoms {
            acc += p;
            if u < acc {
                return idx;
            }
        }
        // Rounding left u above the total; fall back to the last positive atom.
        self.atoms
            .iter()
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map_or(self.atoms[0].0, |a| a.0)
    }
}

/// Per-round policy diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepDiagnostics {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub spanner_size: usize,
    pub spanner_recomputed: bool,
    pub oracle_calls: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub distribution: ExplorationDistribution,
    pub action: usize,
    pub greedy: usize,
    pub diagnostics: StepDiagnostics,
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Builds this round's distribution and samples from it with `u`.
    fn step(&mut self, x: &Context, regressor: &dyn Regressor, set: &dyn ActionSet, u: f64) -> Result<StepOutcome>;
}

/// Solves `sum_k weight_k / (lambda + gap_k) = 1` for `lambda` in
/// `[lo, hi]`, where the left side is decreasing in `lambda`. Bisection to
/// [`LAMBDA_TOLERANCE`], then Newton polishing inside the bracket.
fn solve_normalizer(weights: &[f64], gaps: &[f64], mut lo: f64, mut hi: f64) -> Result<f64> {
    let h = |l: f64| -> f64 { weights.iter().zip(gaps).map(|(w, g)| w / (l + g)).sum() };
    let dh = |l: f64| -> f64 { -weights.iter().zip(gaps).map(|(w, g)| w / (l + g).powi(2)).sum::<f64>() };
    if h(hi) >= 1.0 {
        return Ok(hi);
    }
    let mut iters = 0;
    while hi - lo > LAMBDA_TOLERANCE && iters < LAMBDA_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..3 {
        let next = lambda - (h(lambda) - 1.0) / dh(lambda);
        if !(next >= lo && next <= hi) {
            break;
        }
        lambda = next;
    }
    let residual = (h(lambda) - 1.0).abs();
    if residual > LAMBDA_RESIDUAL {
        return Err(Error::Numerical(format!(
            "normalizer residual {residual:e} after {iters} bisection steps"
        )));
    }
    Ok(lambda)
}

/// The `lambda` in `[1/2, 1]` with `sum_a q(a) / (lambda + eta gap(a)) = 1`.
/// `atoms` holds `(q(a), eta * gap(a))`; the greedy atom must carry mass at
/// least one half and zero gap.
pub fn solve_lambda(atoms: &[(f64, f64)]) -> Result<f64> {
    let weights: Vec<f64> = atoms.iter().map(|a| a.0).collect();
    let gaps: Vec<f64> = atoms.iter().map(|a| a.1).collect();
    if gaps.iter().any(|g| *g < 0.0) {
        return Err(Error::Numerical("negative scaled gap".into()));
    }
    let anchored: f64 = atoms.iter().filter(|a| a.1 == 0.0).map(|a| a.0).sum();
    if anchored < 0.5 - 1e-12 {
        return Err(Error::Numerical(format!(
            "zero-gap mass {anchored} is below 1/2; lambda is not bracketed by [1/2, 1]"
        )));
    }
    solve_normalizer(&weights, &gaps, 0.5, 1.0)
}

/// Parameters feeding the exploration schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub horizon: usize,
    pub delta: f64,
    pub regsq_bound: f64,
    pub c_opt: f64,
    pub dim: usize,
}

impl ScheduleConfig {
    /// Uses `regsq_bound = d ln T` and `C_opt = C^2 d` for a `C`-spanner.
    pub fn for_spanner(horizon: usize, delta: f64, dim: usize, factor: f64) -> Result<Self> {
        let cfg = Self {
            horizon,
            delta,
            regsq_bound: dim as f64 * (horizon as f64).ln().max(1.0),
            c_opt: factor * factor * dim as f64,
            dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.c_opt >= 1.0) {
            return Err(Error::Config(format!("C_opt must be >= 1, got {}", self.c_opt)));
        }
        if !(self.regsq_bound >= 0.0) {
            return Err(Error::Config(format!("regression regret bound must be >= 0, got {}", self.regsq_bound)));
        }
        Ok(())
    }

    fn log_term(&self) -> f64 {
        (2.0 / self.delta).ln()
    }
}

/// `eps = sqrt(C_opt d / (4 gamma)) ^ 1`.
pub fn epsilon_schedule(gamma: f64, cfg: &ScheduleConfig) -> f64 {
    (cfg.c_opt * cfg.dim as f64 / (4.0 * gamma)).sqrt().min(1.0)
}

/// `gamma = (3 T sqrt(C_opt d) / (2 RegSq + 64 log(2/delta)))^{2/3} v 1`.
pub fn greedy_gamma_schedule(cfg: &ScheduleConfig) -> f64 {
    let num = 3.0 * cfg.horizon as f64 * (cfg.c_opt * cfg.dim as f64).sqrt();
    let den = 2.0 * cfg.regsq_bound + 64.0 * cfg.log_term();
    (num / den).powf(2.0 / 3.0).max(1.0)
}

/// `gamma = (C_opt d T / (RegSq + 32 log(2/delta)))^{1/2}`.
pub fn igw_gamma_schedule(cfg: &ScheduleConfig) -> f64 {
    let num = cfg.c_opt * cfg.dim as f64 * cfg.horizon as f64;
    let den = cfg.regsq_bound + 32.0 * cfg.log_term();
    (num / den).sqrt()
}

fn check_unit_interval(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { (0.0..=1.0).contains(&v) } else { v > 0.0 && v <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} out of range: {v}")))
    }
}

fn estimated_values(set: &dyn ActionSet, x: &Context, ghat: &[f64]) -> Vec<f64> {
    (0..set.len()).map(|i| dot(&set.embedding(x, i), ghat)).collect()
}

/// Uniform exploration over a barycentric spanner mixed with the greedy
/// action: `p = eps * unif(S) + (1 - eps) * delta_{a_hat}`.
#[derive(Debug, Clone)]
pub struct SpannerGreedy {
    epsilon: f64,
    factor: f64,
    cached: Option<SpannerState>,
}

impl SpannerGreedy {
    pub fn new(epsilon: f64, factor: f64) -> Result<Self> {
        check_unit_interval("epsilon", epsilon, false)?;
        if !(factor > 1.0) {
            return Err(Error::Config(format!("spanner factor must be > 1, got {factor}")));
        }
        Ok(Self {
            epsilon,
            factor,
            cached: None,
        })
    }
}

impl Policy for SpannerGreedy {
    fn name(&self) -> &'static str {
        "spanner-greedy"
    }

    fn step(&mut self, x: &Context, regressor: &dyn Regressor, set: &dyn ActionSet, u: f64) -> Result<StepOutcome> {
        let ghat = regressor.predict(x);
        let greedy = set.argmax(x, &ghat)?;
        let mut diagnostics = StepDiagnostics {
            epsilon: Some(self.epsilon),
            oracle_calls: 1,
            ..Default::default()
        };
        let spanner = match &self.cached {
            Some(sp) if set.context_independent() => sp.clone(),
            _ => {
                let sp = barycentric_spanner(set, x, self.factor)?;
                diagnostics.spanner_recomputed = true;
                diagnostics.oracle_calls += sp.stats().oracle_calls;
                if set.context_independent() {
                    self.cached = Some(sp.clone());
                }
                sp
            }
        };
        let d = spanner.dim();
        diagnostics.spanner_size = d;
        let mut atoms: Vec<(usize, f64)> = spanner
            .action_indices()
            .iter()
            .map(|&i| (i, self.epsilon / d as f64))
            .collect();
        atoms.push((greedy, 1.0 - self.epsilon));
        let distribution = ExplorationDistribution::new(atoms)?;
        let action = distribution.sample(u);
        Ok(StepOutcome {
            distribution,
            action,
            greedy,
            diagnostics,
        })
    }
}

/// Inverse-gap weighting over an optimal design for the reweighted
/// embedding.
///
/// The strict variant mixes the uniform design on a reweighted spanner with
/// the greedy action, `q = unif(S)/2 + delta_{a_hat}/2`, then sets
/// `p(a) = q(a) / (lambda + eta gap(a))` with `eta = gamma / (C_opt d)`.
/// The practical variant reweights with `1 + d + gamma/(4d) gap`, gives each
/// spanner action `1 / (d_bar + gamma/(4d) gap)` and puts the rest on
/// `a_hat`, which avoids solving for `lambda`.
#[derive(Debug, Clone)]
pub struct SpannerIgw {
    gamma: f64,
    factor: f64,
    practical: bool,
    execution: Execution,
    cached_init: Option<(SpannerState, f64)>,
}

impl SpannerIgw {
    pub fn new(gamma: f64, factor: f64, practical: bool) -> Result<Self> {
        let gamma_ok = if practical { gamma >= 0.0 } else { gamma > 0.0 };
        if !gamma_ok || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma out of range: {gamma}")));
        }
        if !(factor > std::f64::consts::SQRT_2) {
            return Err(Error::Config(format!("spanner factor must exceed sqrt(2), got {factor}")));
        }
        Ok(Self {
            gamma,
            factor,
            practical,
            execution: Execution::default(),
            cached_init: None,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// `eta = gamma / (C_opt d)` with `C_opt = C^2 d`.
    pub fn eta(&self, dim: usize) -> f64 {
        let d = dim as f64;
        if self.practical {
            self.gamma / (4.0 * d)
        } else {
            self.gamma / (self.factor * self.factor * d * d)
        }
    }
}

impl Policy for SpannerIgw {
    fn name(&self) -> &'static str {
        if self.practical {
            "spanner-igw-practical"
        } else {
            "spanner-igw"
        }
    }

    fn step(&mut self, x: &Context, regressor: &dyn Regressor, set: &dyn ActionSet, u: f64) -> Result<StepOutcome> {
        let d = set.dim();
        let eta = self.eta(d);
        let mut rc = ReweightingContext::new(set, x, regressor.predict(x), eta)?;
        if self.practical {
            rc = rc.with_base(1.0 + d as f64)?;
        }
        let greedy = rc.greedy();
        let mut diagnostics = StepDiagnostics {
            gamma: Some(self.gamma),
            oracle_calls: 1,
            spanner_recomputed: true,
            ..Default::default()
        };
        let (init, r) = match &self.cached_init {
            Some(c) if set.context_independent() => c.clone(),
            _ => {
                let c = local_search_init(set, x)?;
                diagnostics.oracle_calls += c.0.stats().oracle_calls;
                if set.context_independent() {
                    self.cached_init = Some(c.clone());
                }
                c
            }
        };
        let spanner = reweighted_spanner(&rc, set, x, self.factor, &init, r, self.execution)?;
        diagnostics.oracle_calls += spanner.stats().oracle_calls;
        diagnostics.spanner_size = spanner.dim();

        let gap_of = |i: usize| rc.gap(&set.embedding(x, i));
        let atoms = if self.practical {
            let mut support: Vec<usize> = spanner.action_indices().to_vec();
            if !support.contains(&greedy) {
                support.push(greedy);
            }
            let d_bar = support.len() as f64;
            let mut atoms = Vec::with_capacity(support.len() + 1);
            let mut used = 0.0;
            for &i in spanner.action_indices() {
                let p = 1.0 / (d_bar + eta * gap_of(i)?);
                used += p;
                atoms.push((i, p));
            }
            atoms.push((greedy, (1.0 - used).max(0.0)));
            atoms
        } else {
            let dd = spanner.dim() as f64;
            let mut q: Vec<(usize, f64)> = spanner.action_indices().iter().map(|&i| (i, 0.5 / dd)).collect();
            match q.iter_mut().find(|(i, _)| *i == greedy) {
                Some(slot) => slot.1 += 0.5,
                None => q.push((greedy, 0.5)),
            }
            let scaled = q
                .iter()
                .map(|&(i, w)| Ok((w, if i == greedy { 0.0 } else { eta * gap_of(i)? })))
                .collect::<Result<Vec<(f64, f64)>>>()?;
            let lambda = solve_lambda(&scaled)?;
            diagnostics.lambda = Some(lambda);
            q.iter()
                .zip(&scaled)
                .map(|(&(i, _), &(w, g))| (i, w / (lambda + g)))
                .collect()
        };
        let distribution = ExplorationDistribution::new(atoms)?;
        let action = distribution.sample(u);
        Ok(StepOutcome {
            distribution,
            action,
            greedy,
            diagnostics,
        })
    }
}

/// Finite-action inverse gap weighting: `p(a) = 1 / (lambda + gamma gap(a))`.
#[derive(Debug, Clone)]
pub struct SquareCb {
    gamma: f64,
}

impl SquareCb {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma out of range: {gamma}")));
        }
        Ok(Self { gamma })
    }

    /// Normalizer in `(0, |A|]` for scaled gaps `gamma * gap(a)`.
    pub fn solve_lambda(scaled_gaps: &[f64]) -> Result<f64> {
        let weights = vec![1.0; scaled_gaps.len()];
        solve_normalizer(&weights, scaled_gaps, 0.0, scaled_gaps.len() as f64)
    }
}

impl Policy for SquareCb {
    fn name(&self) -> &'static str {
        "squarecb"
    }

    fn step(&mut self, x: &Context, regressor: &dyn Regressor, set: &dyn ActionSet, u: f64) -> Result<StepOutcome> {
        let ghat = regressor.predict(x);
        let greedy = set.argmax(x, &ghat)?;
        let values = estimated_values(set, x, &ghat);
        let best = values[greedy];
        let scaled: Vec<f64> = values.iter().map(|v| self.gamma * (best - v).max(0.0)).collect();
        let lambda = Self::solve_lambda(&scaled)?;
        let atoms = scaled.iter().enumerate().map(|(i, g)| (i, 1.0 / (lambda + g))).collect();
        let distribution = ExplorationDistribution::new(atoms)?;
        let action = distribution.sample(u);
        Ok(StepOutcome {
            distribution,
            action,
            greedy,
            diagnostics: StepDiagnostics {
                lambda: Some(lambda),
                gamma: Some(self.gamma),
                oracle_calls: 1,
                ..Default::default()
            },
        })
    }
}

/// `p = eps * unif(A) + (1 - eps) * delta_{a_hat}`.
#[derive(Debug, Clone)]
pub struct EpsilonGreedy {
    epsilon: f64,
}

impl EpsilonGreedy {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_unit_interval("epsilon", epsilon, true)?;
        Ok(Self { epsilon })
    }
}

impl Policy for EpsilonGreedy {
    fn name(&self) -> &'static str {
        "epsilon-greedy"
    }

    fn step(&mut self, x: &Context, regressor: &dyn Regressor, set: &dyn ActionSet, u: f64) -> Result<StepOutcome> {
        let ghat = regressor.predict(x);
        let greedy = set.argmax(x, &ghat)?;
        let n = set.len();
        let mut atoms: Vec<(usize, f64)> = if self.epsilon > 0.0 {
            (0..n).map(|i| (i, self.epsilon / n as f64)).collect()
        } else {
            Vec::new()
        };
        atoms.push((greedy, 1.0 - self.epsilon));
        let distribution = ExplorationDistribution::new(atoms)?;
        let action = distribution.sample(u);
        Ok(StepOutcome {
            distribution,
            action,
            greedy,
            diagnostics: StepDiagnostics {
                epsilon: Some(self.epsilon),
                oracle_calls: 1,
                ..Default::default()
            },
        })
    }
}

/// A buildable description of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    SpannerGreedy { epsilon: f64, factor: f64 },
    SpannerIgw { gamma: f64, factor: f64, practical: bool },
    SquareCb { gamma: f64 },
    EpsilonGreedy { epsilon: f64 },
}

impl PolicySpec {
    pub fn build(&self) -> Result<Box<dyn Policy>> {
        Ok(match *self {
            PolicySpec::SpannerGreedy { epsilon, factor } => Box::new(SpannerGreedy::new(epsilon, factor)?),
            PolicySpec::SpannerIgw {
                gamma,
                factor,
                practical,
            } => Box::new(SpannerIgw::new(gamma, factor, practical)?),
            PolicySpec::SquareCb { gamma } => Box::new(SquareCb::new(gamma)?),
            PolicySpec::EpsilonGreedy { epsilon } => Box::new(EpsilonGreedy::new(epsilon)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::SpannerGreedy { .. } => "spanner-greedy",
            PolicySpec::SpannerIgw { practical: false, .. } => "spanner-igw",
            PolicySpec::SpannerIgw { practical: true, .. } => "spanner-igw-practical",
            PolicySpec::SquareCb { .. } => "squarecb",
            PolicySpec::EpsilonGreedy { .. } => "epsilon-greedy",
        }
    }
}
