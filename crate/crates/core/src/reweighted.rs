//! Spanners for the gap-reweighted embedding
//! `phi_bar(x, a) = phi(x, a) / sqrt(base + eta * gap(a))`, where
//! `gap(a) = f_hat(x, a_hat) - f_hat(x, a)` and `base = 1` unless the
//! practical sampling variant is used.
//!
//! The reweighted embedding is not linear in `phi`, so the plain oracle
//! cannot maximize `<phi_bar, theta>^2` directly. [`igw_argmax`] uses
//! `X^2 / Y^2 = sup_eps { 2 eps X - eps^2 Y^2 }`: for a fixed `eps` the
//! objective is linear in the unweighted embedding with parameter
//! `2 eps theta + eps^2 eta g_hat(x)`, so a geometric grid of `eps` values
//! reduces the problem to `2N` oracle calls and loses at most a factor 2.

use crate::error::{Error, Result};
use crate::linalg::DesignMatrixState;
use crate::oracles::{dot, ActionSet, Context};
use crate::par::{self, Execution};
use crate::spanner::{local_search, SearchStats, SpannerState, GUARD_CONSTANT};

/// Gaps below `-GAP_TOLERANCE` mean the greedy action was not a maximizer.
pub const GAP_TOLERANCE: f64 = 1e-9;

/// Largest grid size accepted before the approximation guarantee is
/// considered void.
pub const MAX_GRID_SIZE: usize = 10_000;

const GRID_RATIO: f64 = 0.75;

/// The estimate `g_hat(x)`, its greedy action and the reweighting strength.
#[derive(Debug, Clone)]
pub struct ReweightingContext {
    ghat: Vec<f64>,
    greedy: usize,
    greedy_value: f64,
    eta: f64,
    base: f64,
}

impl ReweightingContext {
    /// Finds the greedy action `argmax_a <phi(x, a), g_hat>` with the oracle.
    pub fn new<A: ActionSet + ?Sized>(set: &A, x: &Context, ghat: Vec<f64>, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::Config(format!("reweighting parameter must be >= 0, got {eta}")));
        }
        let greedy = set.argmax(x, &ghat)?;
        let greedy_value = dot(&set.embedding(x, greedy), &ghat);
        Ok(Self {
            ghat,
            greedy,
            greedy_value,
            eta,
            base: 1.0,
        })
    }

    /// Replaces the constant `1` in the denominator by `base >= 1`.
    pub fn with_base(mut self, base: f64) -> Result<Self> {
        if !(base >= 1.0) {
            return Err(Error::Config(format!("reweighting base must be >= 1, got {base}")));
        }
        self.base = base;
        Ok(self)
    }

    pub fn ghat(&self) -> &[f64] {
        &self.ghat
    }

    pub fn greedy(&self) -> usize {
        self.greedy
    }

    pub fn greedy_value(&self) -> f64 {
        self.greedy_value
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Estimated gap of an embedding to the greedy action, clamped at zero.
    pub fn gap(&self, phi: &[f64]) -> Result<f64> {
        let gap = self.greedy_value - dot(phi, &self.ghat);
        if gap < -GAP_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "negative gap {gap:e}: greedy action is not the maximizer"
            )));
        }
        Ok(gap.max(0.0))
    }

    /// `base + eta * gap`.
    pub fn denominator(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.base + self.eta * self.gap(phi)?)
    }

    pub fn reweight(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let s = self.denominator(phi)?.sqrt();
        Ok(phi.iter().map(|v| v / s).collect())
    }

    /// `<phi_bar, theta>^2`.
    pub fn iota(&self, phi: &[f64], theta: &[f64]) -> Result<f64> {
        Ok(dot(phi, theta).powi(2) / self.denominator(phi)?)
    }
}

/// The line-search grid `{+-(3/4)^i : i = 1..N}`, positives first.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    size: usize,
    r: f64,
    points: Vec<f64>,
}

impl GridSpec {
    /// `N = ceil(d * log_{4/3}((2 eta + base) / r))`.
    pub fn new(dim: usize, eta: f64, r: f64, base: f64) -> Result<Self> {
        // |det| <= 1 up to the ingestion norm tolerance, so r may exceed 1 by rounding.
        if !(r > 0.0 && r <= 1.0 + 1e-9) {
            return Err(Error::Config(format!("initialization constant must lie in (0, 1], got {r}")));
        }
        let r = r.min(1.0);
        let ratio = (2.0 * eta + base) / r;
        let raw = dim as f64 * ratio.ln() / (1.0 / GRID_RATIO).ln();
        if !raw.is_finite() || raw > MAX_GRID_SIZE as f64 {
            return Err(Error::Config(format!(
                "line-search grid would need {raw:.0} points per sign (limit {MAX_GRID_SIZE}); \
                 eta = {eta}, r = {r}"
            )));
        }
        let size = (raw.ceil() as usize).max(1);
        let mut points = Vec::with_capacity(2 * size);
        let mut p = 1.0;
        for _ in 0..size {
            p *= GRID_RATIO;
            points.push(p);
        }
        let negatives: Vec<f64> = points.iter().map(|p| -p).collect();
        points.extend(negatives);
        Ok(Self { size, r, points })
    }

    /// `N`, the number of points per sign.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// Result of [`igw_argmax`].
#[derive(Debug, Clone)]
pub struct IgwChoice {
    pub index: usize,
    pub iota: f64,
    /// Reweighted embedding of the chosen action.
    pub reweighted: Vec<f64>,
}

/// Approximate `argmax_a <phi_bar(x, a), theta>^2` with one oracle call per
/// grid point; the returned action attains at least half the optimum
/// whenever `sqrt(iota*)` lies in `[zeta, 1]`.
pub fn igw_argmax<A: ActionSet + ?Sized>(
    rc: &ReweightingContext,
    theta: &[f64],
    grid: &GridSpec,
    set: &A,
    x: &Context,
    exec: Execution,
) -> Result<IgwChoice> {
    let candidates = par::map_indexed(grid.points.len(), exec, |k| {
        let eps = grid.points[k];
        let shifted: Vec<f64> = theta
            .iter()
            .zip(&rc.ghat)
            .map(|(t, g)| 2.0 * eps * t + eps * eps * rc.eta * g)
            .collect();
        set.argmax(x, &shifted)
    });
    let mut best: Option<(usize, f64)> = None;
    let mut seen: Vec<usize> = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let idx = cand?;
        if seen.contains(&idx) {
            continue;
        }
        seen.push(idx);
        let iota = rc.iota(&set.embedding(x, idx), theta)?;
        // Grid order decides near-ties.
        if best.is_none_or(|(_, b)| iota > b + 1e-12 * b) {
            best = Some((idx, iota));
        }
    }
    let (index, iota) =
        best.ok_or_else(|| Error::Numerical("line search produced no candidates".into()))?;
    let reweighted = rc.reweight(&set.embedding(x, index))?;
    Ok(IgwChoice {
        index,
        iota,
        reweighted,
    })
}

/// Bound on while-loop passes: `50 d log(e v eta / r) + 50`.
pub fn reweighted_iteration_guard(dim: usize, eta: f64, r: f64) -> usize {
    let log = (eta / r).max(std::f64::consts::E).ln();
    (GUARD_CONSTANT * dim as f64 * log).ceil() as usize + GUARD_CONSTANT as usize
}

/// Lower bound on `|det|` of the reweighted spanner matrix maintained
/// throughout the search: `(r / sqrt(base + 2 eta))^d`.
pub fn reweighted_det_floor(dim: usize, eta: f64, r: f64, base: f64) -> f64 {
    (r / (base + 2.0 * eta).sqrt()).powi(dim as i32)
}

/// A `factor`-approximate barycentric spanner of the reweighted embeddings,
/// started from `init` (whose unweighted determinant is at least `r^d`).
/// A swap is accepted when it grows `|det|` by `factor / sqrt(2)`.
pub fn reweighted_spanner<A: ActionSet + ?Sized>(
    rc: &ReweightingContext,
    set: &A,
    x: &Context,
    factor: f64,
    init: &SpannerState,
    r: f64,
    exec: Execution,
) -> Result<SpannerState> {
    if !(factor > std::f64::consts::SQRT_2) {
        return Err(Error::Config(format!(
            "reweighted spanner factor must exceed sqrt(2), got {factor}"
        )));
    }
    let d = set.dim();
    if init.dim() != d {
        return Err(Error::InvalidInput(format!(
            "initial spanner has {} actions for dimension {d}",
            init.dim()
        )));
    }
    let columns = init
        .action_indices()
        .iter()
        .map(|&i| rc.reweight(&set.embedding(x, i)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let mut matrix = DesignMatrixState::from_column_slices(&views)
        .map_err(|e| Error::RankDeficient(format!("reweighted initial spanner: {e}")))?;
    let mut indices = init.action_indices().to_vec();
    let grid = GridSpec::new(d, rc.eta, r, rc.base)?;
    let guard = reweighted_iteration_guard(d, rc.eta, r);
    let threshold = factor / std::f64::consts::SQRT_2;
    let mut stats = SearchStats::default();
    local_search(&mut matrix, &mut indices, threshold, guard, &mut stats, |theta, stats| {
        let choice = igw_argmax(rc, theta.as_slice(), &grid, set, x, exec)?;
        stats.oracle_calls += grid.points().len();
        Ok((choice.index, choice.reweighted))
    })?;
    let ids = indices.iter().map(|&i| set.id(i)).collect();
    Ok(SpannerState::from_parts(indices, ids, matrix, factor, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::FiniteActionSet;
    use crate::spanner::{barycentric_spanner, local_search_init};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> Context {
        Context::new(0, vec![])
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize, max_norm: f64) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = dot(&v, &v).sqrt() / rng.random_range(0.1..max_norm);
        v.iter().map(|x| x / s).collect()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FiniteActionSet {
        FiniteActionSet::from_embeddings((0..n).map(|_| random_vec(rng, d, 1.0)).collect()).unwrap()
    }

    #[test]
    fn reweight_greedy_is_identity() {
        let set = FiniteActionSet::from_embeddings(vec![vec![0.8, 0.0], vec![0.0, 0.5]]).unwrap();
        let rc = ReweightingContext::new(&set, &ctx(), vec![1.0, 0.0], 3.0).unwrap();
        assert_eq!(rc.greedy(), 0);
        assert_eq!(rc.reweight(set.row(0)).unwrap(), set.row(0));
    }

    #[test]
    fn reweight_halves_at_gap_one_eta_three() {
        let set = FiniteActionSet::from_embeddings(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let rc = ReweightingContext::new(&set, &ctx(), vec![1.0, 0.0], 3.0).unwrap();
        let phi = [0.0, 1.0];
        assert_eq!(rc.gap(&phi).unwrap(), 1.0);
        assert_eq!(rc.reweight(&phi).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn reweight_identity_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let set = random_set(&mut rng, 50, 4);
        let ghat = random_vec(&mut rng, 4, 1.0);
        let rc = ReweightingContext::new(&set, &ctx(), ghat, 7.0).unwrap();
        for i in 0..50 {
            let phi = set.row(i);
            let bar = rc.reweight(phi).unwrap();
            let lhs = dot(&bar, &bar) * (1.0 + 7.0 * rc.gap(phi).unwrap());
            assert!((lhs - dot(phi, phi)).abs() < 1e-12);
            assert!(dot(&bar, &bar) <= dot(phi, phi) + 1e-15);
        }
    }

    #[test]
    fn reweight_rejects_negative_gap() {
        let set = FiniteActionSet::from_embeddings(vec![vec![0.5], vec![0.1]]).unwrap();
        let rc = ReweightingContext::new(&set, &ctx(), vec![1.0], 1.0).unwrap();
        assert!(matches!(rc.reweight(&[0.9]), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn grid_size_examples() {
        // ceil(2 * log_{4/3}(6)) = ceil(12.45..) = 13
        let g = GridSpec::new(2, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(g.size(), 13);
        assert_eq!(g.points().len(), 26);
        assert!(GridSpec::new(50, 1e9, 1e-30, 1.0).is_err());
    }

    #[test]
    fn grid_covers_every_scale() {
        for &(d, eta, r) in &[(2usize, 1.0, 0.5), (3, 10.0, 0.2), (5, 0.1, 0.9)] {
            let grid = GridSpec::new(d, eta, r, 1.0).unwrap();
            let rbar = r / (1.0 + 2.0 * eta).sqrt();
            let zeta_bar = rbar.powi(d as i32) / (1.0 + 2.0 * eta).sqrt();
            let smallest = grid.points()[grid.size() - 1];
            assert!(smallest <= zeta_bar);
            let steps = 2000;
            for k in 0..=steps {
                let mag = zeta_bar * (1.0 / zeta_bar).powf(k as f64 / steps as f64);
                for eps_star in [mag, -mag] {
                    let ok = grid.points().iter().any(|&e| {
                        e * eps_star > 0.0
                            && e.abs() <= eps_star.abs() * (1.0 + 1e-12)
                            && e.abs() >= 0.75 * eps_star.abs() * (1.0 - 1e-12)
                    });
                    assert!(ok, "no grid point covers {eps_star}");
                }
            }
        }
    }

    #[test]
    fn quotient_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let y2: f64 = rng.random_range(0.01..5.0);
            let eps = x / y2;
            let v = 2.0 * eps * x - eps * eps * y2;
            assert!((v - x * x / y2).abs() <= 1e-12 * (x * x / y2).max(1e-300));
        }
    }

    #[test]
    fn vanishing_eta_recovers_plain_abs_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let set = random_set(&mut rng, 100, 3);
        let rc = ReweightingContext::new(&set, &ctx(), random_vec(&mut rng, 3, 1.0), 1e-12).unwrap();
        let grid = GridSpec::new(3, 1e-12, 0.5, 1.0).unwrap();
        for _ in 0..50 {
            let theta = random_vec(&mut rng, 3, 1.0);
            let choice = igw_argmax(&rc, &theta, &grid, &set, &ctx(), Execution::Sequential).unwrap();
            let brute = (0..100).map(|i| dot(set.row(i), &theta).powi(2)).fold(0.0, f64::max);
            assert!((choice.iota - brute).abs() <= 1e-9 * brute);
        }
    }

    #[test]
    fn half_approximation_against_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for trial in 0..60 {
            let d = if trial % 2 == 0 { 3 } else { 5 };
            let eta = [0.1, 1.0, 10.0][trial % 3];
            let set = random_set(&mut rng, 200, d);
            let rc = ReweightingContext::new(&set, &ctx(), random_vec(&mut rng, d, 1.0), eta).unwrap();
            let (_, r) = local_search_init(&set, &ctx()).unwrap();
            let grid = GridSpec::new(d, eta, r, 1.0).unwrap();
            let theta = random_vec(&mut rng, d, 1.0);
            let choice = igw_argmax(&rc, &theta, &grid, &set, &ctx(), Execution::Parallel).unwrap();
            let best = (0..200).map(|i| rc.iota(set.row(i), &theta).unwrap()).fold(0.0, f64::max);
            assert!(choice.iota >= 0.5 * best - 1e-12);
        }
    }

    #[test]
    fn tiny_eta_spanner_has_unweighted_coefficient_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let set = random_set(&mut rng, 80, 3);
        let rc = ReweightingContext::new(&set, &ctx(), random_vec(&mut rng, 3, 1.0), 1e-12).unwrap();
        let (init, r) = local_search_init(&set, &ctx()).unwrap();
        let sp = reweighted_spanner(&rc, &set, &ctx(), 2.0, &init, r, Execution::Sequential).unwrap();
        let plain = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
        for i in 0..80 {
            assert!(sp.coefficient_bound(set.row(i)) <= 2.0 + 1e-9);
            assert!(plain.coefficient_bound(set.row(i)) <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn reweighted_coefficients_and_det_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..10 {
            let set = random_set(&mut rng, 100, 3);
            let eta = 10.0;
            let rc = ReweightingContext::new(&set, &ctx(), random_vec(&mut rng, 3, 1.0), eta).unwrap();
            let (init, r) = local_search_init(&set, &ctx()).unwrap();
            let sp = reweighted_spanner(&rc, &set, &ctx(), 2.0, &init, r, Execution::Sequential).unwrap();
            for i in 0..100 {
                let bar = rc.reweight(set.row(i)).unwrap();
                let coeffs = sp
                    .matrix()
                    .columns()
                    .clone()
                    .lu()
                    .solve(&nalgebra::DVector::from_column_slice(&bar))
                    .unwrap();
                assert!(coeffs.amax() <= 2.0 + 1e-6);
            }
            assert!(sp.det().abs() >= reweighted_det_floor(3, eta, r, 1.0));
            assert!(sp.det().abs() <= 1.0);
            assert!(sp.stats().iterations <= reweighted_iteration_guard(3, eta, r));
        }
    }

    #[test]
    fn rejects_small_factor() {
        let set = FiniteActionSet::from_embeddings(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let rc = ReweightingContext::new(&set, &ctx(), vec![0.0, 0.0], 1.0).unwrap();
        let (init, r) = local_search_init(&set, &ctx()).unwrap();
        assert!(reweighted_spanner(&rc, &set, &ctx(), 1.4, &init, r, Execution::Sequential).is_err());
    }
}
