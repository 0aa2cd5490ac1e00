//! Approximate barycentric spanners over an action set, computed with the
//! linear-maximization oracle alone, and their use as exploration designs.
//!
//! The search keeps `d` actions whose embedding matrix has large
//! `|det|`. A swap is accepted only when it multiplies `|det|` by at least
//! the approximation factor, so on termination every action's coefficients
//! in the spanner basis lie in `[-C, C]`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{at_least_factor, DesignMatrixState, WeightedDesign};
use crate::oracles::{dot, ActionId, ActionSet, Context};

/// Smallest `|det|` accepted for an initial spanner.
pub const INIT_DET_THRESHOLD: f64 = 1e-12;

/// Constant in the while-loop guards `c * d * log(..) + c`.
pub const GUARD_CONSTANT: f64 = 50.0;

/// Approximation factor used for initialization certificates.
pub const LOCAL_SEARCH_FACTOR: f64 = 2.0;

/// Bound on while-loop passes for the unweighted search: `50 d log_C d + 50`.
pub fn iteration_guard(dim: usize, factor: f64) -> usize {
    let d = dim as f64;
    (GUARD_CONSTANT * d * d.ln() / factor.ln()).ceil() as usize + GUARD_CONSTANT as usize
}

/// Counters describing how a spanner was found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Passes of the outer while-loop, including the final confirming pass.
    pub iterations: usize,
    /// Accepted column swaps.
    pub swaps: usize,
    /// Calls to the linear-maximization oracle.
    pub oracle_calls: usize,
}

/// `d` actions forming an approximate barycentric spanner, with the cached
/// state of their embedding matrix.
#[derive(Debug, Clone)]
pub struct SpannerState {
    indices: Vec<usize>,
    ids: Vec<ActionId>,
    matrix: DesignMatrixState,
    factor: f64,
    stats: SearchStats,
}

impl SpannerState {
    pub(crate) fn from_parts(
        indices: Vec<usize>,
        ids: Vec<ActionId>,
        matrix: DesignMatrixState,
        factor: f64,
        stats: SearchStats,
    ) -> Self {
        Self {
            indices,
            ids,
            matrix,
            factor,
            stats,
        }
    }

    /// Action indices, in column order.
    pub fn action_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn action_ids(&self) -> &[ActionId] {
        &self.ids
    }

    pub fn matrix(&self) -> &DesignMatrixState {
        &self.matrix
    }

    pub fn det(&self) -> f64 {
        self.matrix.det()
    }

    /// Approximation factor `C`; `1.0` for an unrefined initial set.
    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    /// `max_k |(Phi_S^{-1} z)_k|`.
    pub fn coefficient_bound(&self, z: &[f64]) -> f64 {
        self.matrix.coefficients(z).amax()
    }
}

/// Index maximizing `|<phi(x, a), theta>|` using two oracle calls (for
/// `theta` and `-theta`). Ties go to the lower index.
pub fn abs_argmax<A: ActionSet + ?Sized>(set: &A, x: &Context, theta: &[f64]) -> Result<(usize, f64)> {
    let plus = set.argmax(x, theta)?;
    let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
    let minus = set.argmax(x, &neg)?;
    let v_plus = dot(&set.embedding(x, plus), theta).abs();
    let v_minus = dot(&set.embedding(x, minus), theta).abs();
    Ok(if v_minus > v_plus || (v_minus == v_plus && minus < plus) {
        (minus, v_minus)
    } else {
        (plus, v_plus)
    })
}

/// Greedy construction of `d` actions with nonzero determinant: column `i`
/// maximizes `|det(phi(a_1), .., phi(a_{i-1}), phi(a), e_{i+1}, .., e_d)|`.
pub fn init_spanner<A: ActionSet + ?Sized>(set: &A, x: &Context) -> Result<SpannerState> {
    if set.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    let d = set.dim();
    let mut matrix = DesignMatrixState::identity(d);
    let mut indices = Vec::with_capacity(d);
    let mut stats = SearchStats::default();
    let deficient = |i: usize| {
        Error::RankDeficient(format!(
            "embeddings do not span R^{d}: no action extends the first {i} spanner columns"
        ))
    };
    for i in 0..d {
        let theta = matrix.det_functional(i)?;
        let (idx, _) = abs_argmax(set, x, theta.as_slice())?;
        stats.oracle_calls += 2;
        matrix
            .rank_one_replace(i, &set.embedding(x, idx))
            .map_err(|_| deficient(i))?;
        indices.push(idx);
    }
    if matrix.det().abs() <= INIT_DET_THRESHOLD {
        return Err(Error::RankDeficient(format!(
            "initial spanner determinant {:e} is below {INIT_DET_THRESHOLD:e}",
            matrix.det()
        )));
    }
    let ids = indices.iter().map(|&i| set.id(i)).collect();
    Ok(SpannerState::from_parts(indices, ids, matrix, 1.0, stats))
}

/// Swap-based determinant local search shared by the plain and reweighted
/// spanner routines. `candidate` returns the proposed action index and its
/// (possibly reweighted) embedding for a determinant functional `theta`.
/// Scans `i = 1..d` and restarts after every accepted swap.
pub(crate) fn local_search<F>(
    matrix: &mut DesignMatrixState,
    indices: &mut [usize],
    threshold: f64,
    guard: usize,
    stats: &mut SearchStats,
    mut candidate: F,
) -> Result<()>
where
    F: FnMut(&DVector<f64>, &mut SearchStats) -> Result<(usize, Vec<f64>)>,
{
    let d = matrix.dim();
    loop {
        stats.iterations += 1;
        if stats.iterations > guard {
            return Err(Error::NonTermination {
                iterations: stats.iterations,
                bound: guard,
            });
        }
        let mut swapped = false;
        for i in 0..d {
            let theta = matrix.det_functional(i)?;
            let (idx, column) = candidate(&theta, stats)?;
            let replaced = dot(&column, theta.as_slice()).abs();
            if at_least_factor(replaced, threshold, matrix.det().abs()) {
                matrix.rank_one_replace(i, &column)?;
                indices[i] = idx;
                stats.swaps += 1;
                debug_assert!(matrix.det().abs() <= 1.0 + 1e-9, "Hadamard bound violated");
                swapped = true;
                break;
            }
        }
        if !swapped {
            return Ok(());
        }
    }
}

/// Refines `init` into a `factor`-approximate barycentric spanner.
pub fn compute_spanner<A: ActionSet + ?Sized>(
    set: &A,
    x: &Context,
    factor: f64,
    init: SpannerState,
) -> Result<SpannerState> {
    if !(factor > 1.0) {
        return Err(Error::Config(format!("spanner factor must be > 1, got {factor}")));
    }
    if init.dim() != set.dim() {
        return Err(Error::InvalidInput(format!(
            "initial spanner has {} actions for dimension {}",
            init.dim(),
            set.dim()
        )));
    }
    let guard = iteration_guard(set.dim(), factor);
    let SpannerState {
        mut indices,
        mut matrix,
        mut stats,
        ..
    } = init;
    stats.iterations = 0;
    stats.swaps = 0;
    local_search(&mut matrix, &mut indices, factor, guard, &mut stats, |theta, stats| {
        let (idx, _) = abs_argmax(set, x, theta.as_slice())?;
        stats.oracle_calls += 2;
        Ok((idx, set.embedding(x, idx).into_owned()))
    })?;
    let ids = indices.iter().map(|&i| set.id(i)).collect();
    Ok(SpannerState::from_parts(indices, ids, matrix, factor, stats))
}

/// `init_spanner` followed by `compute_spanner`.
pub fn barycentric_spanner<A: ActionSet + ?Sized>(set: &A, x: &Context, factor: f64) -> Result<SpannerState> {
    let init = init_spanner(set, x)?;
    compute_spanner(set, x, factor, init)
}

/// Uniform design over the spanner's columns. For a `C`-approximate spanner
/// every embedding has design norm at most `C^2 d^2`.
pub fn spanner_to_design(sp: &SpannerState) -> Result<WeightedDesign> {
    let d = sp.dim();
    let cols = sp.matrix().columns();
    let columns: Vec<Vec<f64>> = (0..d).map(|j| cols.column(j).iter().copied().collect()).collect();
    let atoms: Vec<(ActionId, f64, &[f64])> = sp
        .action_ids()
        .iter()
        .zip(&columns)
        .map(|(&id, c)| (id, 1.0 / d as f64, c.as_slice()))
        .collect();
    WeightedDesign::new(&atoms)
}

/// A `C = 2` spanner together with `r = |det|^{1/d}`, the initialization
/// certificate consumed by the reweighted spanner search.
pub fn local_search_init<A: ActionSet + ?Sized>(set: &A, x: &Context) -> Result<(SpannerState, f64)> {
    let sp = barycentric_spanner(set, x, LOCAL_SEARCH_FACTOR)?;
    let r = sp.det().abs().powf(1.0 / sp.dim() as f64);
    Ok((sp, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::FiniteActionSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> Context {
        Context::new(0, vec![])
    }

    fn basis(d: usize) -> Vec<Vec<f64>> {
        (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FiniteActionSet {
        let rows = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let s = dot(&v, &v).sqrt() / rng.random_range(0.2..1.0);
                v.iter().map(|x| x / s).collect()
            })
            .collect();
        FiniteActionSet::from_embeddings(rows).unwrap()
    }

    fn det2(a: &[f64], b: &[f64]) -> f64 {
        a[0] * b[1] - a[1] * b[0]
    }

    #[test]
    fn init_on_basis_is_permutation() {
        let set = FiniteActionSet::from_embeddings(basis(4)).unwrap();
        let sp = init_spanner(&set, &ctx()).unwrap();
        assert!((sp.det().abs() - 1.0).abs() < 1e-12);
        let mut idx = sp.action_indices().to_vec();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn init_matches_greedy_exhaustive_in_2d() {
        let rows = vec![vec![0.5, 0.0], vec![1.0, 0.0], vec![0.0, 0.8], vec![0.6, 0.6]];
        let set = FiniteActionSet::from_embeddings(rows.clone()).unwrap();
        let sp = init_spanner(&set, &ctx()).unwrap();
        // First column maximizes |phi_1|; second maximizes |det(a1, a)|.
        let first = (0..rows.len())
            .max_by(|&a, &b| rows[a][0].abs().total_cmp(&rows[b][0].abs()).then(b.cmp(&a)))
            .unwrap();
        let best_second = (0..rows.len())
            .map(|b| det2(&rows[first], &rows[b]).abs())
            .fold(0.0, f64::max);
        assert_eq!(sp.action_indices()[0], first);
        assert!((sp.det().abs() - best_second).abs() < 1e-12);
    }

    #[test]
    fn ball_initialization_determinant() {
        let r = 0.3;
        let d = 3;
        let mut rows: Vec<Vec<f64>> = basis(d).into_iter().map(|v| v.iter().map(|x| x * r).collect()).collect();
        rows.push(vec![0.1, 0.1, 0.1]);
        let set = FiniteActionSet::from_embeddings(rows).unwrap();
        let sp = init_spanner(&set, &ctx()).unwrap();
        assert!((sp.det().abs() - r.powi(d as i32)).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_set_is_rejected() {
        let set = FiniteActionSet::from_embeddings(vec![
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.0],
            vec![0.3, 0.3, 0.0],
        ])
        .unwrap();
        assert!(matches!(init_spanner(&set, &ctx()), Err(Error::RankDeficient(_))));
        assert!(matches!(local_search_init(&set, &ctx()), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn optimal_init_is_returned_after_one_pass() {
        let set = FiniteActionSet::from_embeddings(basis(3)).unwrap();
        let init = init_spanner(&set, &ctx()).unwrap();
        let before = init.action_indices().to_vec();
        let sp = compute_spanner(&set, &ctx(), 2.0, init).unwrap();
        assert_eq!(sp.action_indices(), &before[..]);
        assert_eq!(sp.stats().iterations, 1);
        assert_eq!(sp.stats().swaps, 0);
    }

    #[test]
    fn coefficients_bounded_on_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let set = random_set(&mut rng, 50, 3);
            let sp = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
            for i in 0..set.len() {
                // Direct solve against the explicit matrix, not the cached inverse.
                let coeffs = sp
                    .matrix()
                    .columns()
                    .clone()
                    .lu()
                    .solve(&DVector::from_column_slice(set.row(i)))
                    .unwrap();
                assert!(coeffs.amax() <= 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn iterations_within_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let set = random_set(&mut rng, 200, 5);
        let sp = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
        assert!(sp.stats().iterations <= iteration_guard(5, 2.0));
        assert_eq!(iteration_guard(5, 2.0), (50.0 * 5.0 * 5f64.log2()).ceil() as usize + 50);
    }

    #[test]
    fn rejects_factor_at_most_one() {
        let set = FiniteActionSet::from_embeddings(basis(2)).unwrap();
        let init = init_spanner(&set, &ctx()).unwrap();
        assert!(matches!(compute_spanner(&set, &ctx(), 1.0, init), Err(Error::Config(_))));
    }

    #[test]
    fn design_bound_on_orthonormal_spanner() {
        let set = FiniteActionSet::from_embeddings(basis(4)).unwrap();
        let sp = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
        let design = spanner_to_design(&sp).unwrap();
        for i in 0..4 {
            assert!((design.design_norm(set.row(i)).unwrap() - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn design_bound_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let set = random_set(&mut rng, 40, 4);
        let sp = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
        let design = spanner_to_design(&sp).unwrap();
        let worst = (0..set.len())
            .map(|i| design.design_norm(set.row(i)).unwrap())
            .fold(0.0, f64::max);
        assert!(worst <= 4.0 * 16.0);
        assert!(worst >= 4.0 - 1e-9);
    }

    fn best_subset_det(rows: &[Vec<f64>], d: usize) -> f64 {
        fn rec(rows: &[Vec<f64>], d: usize, start: usize, chosen: &mut Vec<usize>, best: &mut f64) {
            if chosen.len() == d {
                let cols: Vec<&[f64]> = chosen.iter().map(|&i| rows[i].as_slice()).collect();
                if let Ok(m) = DesignMatrixState::from_column_slices(&cols) {
                    *best = best.max(m.det().abs());
                }
                return;
            }
            for i in start..rows.len() {
                chosen.push(i);
                rec(rows, d, i + 1, chosen, best);
                chosen.pop();
            }
        }
        let mut best = 0.0;
        rec(rows, d, 0, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn local_search_certificate_vs_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for d in 2..=4 {
            for _ in 0..5 {
                let set = random_set(&mut rng, 15, d);
                let rows: Vec<Vec<f64>> = (0..15).map(|i| set.row(i).to_vec()).collect();
                let (sp, r) = local_search_init(&set, &ctx()).unwrap();
                assert!((r - sp.det().abs().powf(1.0 / d as f64)).abs() < 1e-15);
                let best = best_subset_det(&rows, d);
                assert!(r >= best.powf(1.0 / d as f64) / (8.0 * d as f64));
            }
        }
        let set = FiniteActionSet::from_embeddings(basis(3)).unwrap();
        let (_, r) = local_search_init(&set, &ctx()).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_leave_spanner_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let set = random_set(&mut rng, 60, 4);
        let base = barycentric_spanner(&set, &ctx(), 2.0).unwrap();
        for (idx, copies) in [(59, 16), (base.action_indices()[0], 5)] {
            let dup = set.with_duplicates(idx, copies).unwrap();
            let sp = barycentric_spanner(&dup, &ctx(), 2.0).unwrap();
            assert_eq!(sp.matrix().columns(), base.matrix().columns());
            assert_eq!(sp.det(), base.det());
        }
    }
}
