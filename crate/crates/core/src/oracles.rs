//! Action sets with an exact linear-maximization oracle, and online
//! regression oracles producing the estimate `g_hat(x)`.

use std::borrow::Cow;
use std::fmt;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::REFRESH_INTERVAL;
use crate::par::{self, Execution};

/// Tolerance on the unit-norm constraint for ingested embeddings.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Action sets smaller than this are scanned sequentially.
pub const PARALLEL_ARGMAX_MIN: usize = 4096;

/// Stable external identifier of an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub u64);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A context `x`: an identifier plus its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub id: usize,
    pub features: Vec<f64>,
}

impl Context {
    pub fn new(id: usize, features: Vec<f64>) -> Self {
        Self { id, features }
    }
}

/// An action space with embedding map `phi(x, a)` and an exact oracle for
/// `argmax_a <phi(x, a), theta>`.
///
/// Actions are addressed by a dense index `0..len()`. Indices are ordered
/// like ids, so "lowest index" and "lowest id" tie-breaks coincide.
pub trait ActionSet: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn id(&self, index: usize) -> ActionId;

    fn embedding(&self, x: &Context, index: usize) -> Cow<'_, [f64]>;

    /// Exact maximizer of `<phi(x, a), theta>`, lowest index on ties.
    fn argmax(&self, x: &Context, theta: &[f64]) -> Result<usize>;

    /// True when `phi(x, a)` does not depend on `x`.
    fn context_independent(&self) -> bool {
        false
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` onto the closed unit ball if it lies outside.
pub fn project_unit_ball(v: &mut [f64]) {
    let n = norm(v);
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// A finite, context-independent action set stored as a dense table.
#[derive(Debug, Clone)]
pub struct FiniteActionSet {
    ids: Vec<ActionId>,
    data: Vec<f64>,
    dim: usize,
    execution: Execution,
}

impl FiniteActionSet {
    /// Builds the set from `(id, embedding)` rows. Rows are ordered by id;
    /// duplicate ids and rows with norm above one are rejected.
    pub fn new(rows: Vec<(ActionId, Vec<f64>)>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyActionSet);
        };
        let dim = first.1.len();
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension is zero".into()));
        }
        let mut rows = rows;
        for (row, (id, phi)) in rows.iter().enumerate() {
            if phi.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {} (action {id}) has {} coordinates, expected {dim}",
                    row + 1,
                    phi.len()
                )));
            }
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "row {} (action {id}) has a non-finite coordinate",
                    row + 1
                )));
            }
            let n = norm(phi);
            if n > 1.0 + NORM_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "row {} (action {id}) has norm {n} > 1",
                    row + 1
                )));
            }
        }
        rows.sort_by_key(|(id, _)| *id);
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidInput(format!("duplicate action id {}", w[0].0)));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, phi) in rows {
            ids.push(id);
            data.extend_from_slice(&phi);
        }
        Ok(Self {
            ids,
            data,
            dim,
            execution: Execution::default(),
        })
    }

    /// Rows with ids `0..n`.
    pub fn from_embeddings(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            embeddings
                .into_iter()
                .enumerate()
                .map(|(i, e)| (ActionId(i as u64), e))
                .collect(),
        )
    }

    /// Reads the `action_id,dim_0,...,dim_{d-1}` CSV format.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("action_id") {
            return Err(Error::InvalidInput(
                "embedding CSV must start with an `action_id` column".into(),
            ));
        }
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("dim_{j}") {
                return Err(Error::InvalidInput(format!(
                    "embedding CSV column {} should be `dim_{j}`, found `{h}`",
                    j + 2
                )));
            }
        }
        let mut rows = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let parse_err = |what: &str| {
                Error::InvalidInput(format!("row {}: cannot parse {what}", row + 1))
            };
            let id: u64 = record
                .get(0)
                .ok_or_else(|| parse_err("action_id"))?
                .trim()
                .parse()
                .map_err(|_| parse_err("action_id"))?;
            let phi = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map_err(|_| parse_err("coordinate")))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((ActionId(id), phi));
        }
        Self::new(rows)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["action_id".to_string()];
        header.extend((0..self.dim).map(|j| format!("dim_{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn ids(&self) -> &[ActionId] {
        &self.ids
    }

    /// Position of an id, if present.
    pub fn index_of(&self, id: ActionId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Appends `copies` exact copies of the action at `index`, with fresh ids
    /// above every existing id.
    pub fn with_duplicates(&self, index: usize, copies: usize) -> Result<Self> {
        if index >= self.len() {
            return Err(Error::InvalidInput(format!("no action at index {index}")));
        }
        let mut out = self.clone();
        let next = self.ids.last().map_or(0, |id| id.0 + 1);
        let phi = self.row(index).to_vec();
        for k in 0..copies {
            out.ids.push(ActionId(next + k as u64));
            out.data.extend_from_slice(&phi);
        }
        Ok(out)
    }
}

impl ActionSet for FiniteActionSet {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self, index: usize) -> ActionId {
        self.ids[index]
    }

    fn embedding(&self, _x: &Context, index: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.row(index))
    }

    fn argmax(&self, _x: &Context, theta: &[f64]) -> Result<usize> {
        if theta.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "theta has dimension {}, expected {}",
                theta.len(),
                self.dim
            )));
        }
        par::argmax_by_score(self.len(), self.execution, PARALLEL_ARGMAX_MIN, |i| {
            dot(self.row(i), theta)
        })
        .ok_or(Error::EmptyActionSet)
    }

    fn context_independent(&self) -> bool {
        true
    }
}

/// Exhaustive scan for `argmax_a <phi(x, a), theta>` through any action
/// set's embedding map, lowest index on ties.
pub fn enumeration_argmax<A: ActionSet + ?Sized>(set: &A, x: &Context, theta: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..set.len() {
        let v = dot(&set.embedding(x, i), theta);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyActionSet)
}

/// Running diagnostics every regressor keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegressorStats {
    pub updates: usize,
    /// Sum of `(f_hat(x, a) - r)^2` measured before each update.
    pub cumulative_square_loss: f64,
    /// Rewards outside `[-1, 1]` that were clipped.
    pub clipped_rewards: usize,
}

impl RegressorStats {
    fn record(&mut self, prediction: f64, reward: f64) -> f64 {
        let clipped = reward.clamp(-1.0, 1.0);
        if clipped != reward {
            self.clipped_rewards += 1;
        }
        self.updates += 1;
        self.cumulative_square_loss += (prediction - clipped).powi(2);
        clipped
    }
}

/// An online square-loss regression oracle.
pub trait Regressor: Send {
    fn dim(&self) -> usize;

    /// The estimate `g_hat(x)`, inside the unit ball.
    fn predict(&self, x: &Context) -> Vec<f64>;

    /// Incorporates one observation of reward `reward` for an action with
    /// embedding `embedding` under context `x`.
    fn update(&mut self, x: &Context, embedding: &[f64], reward: f64);

    fn stats(&self) -> RegressorStats;
}

/// Online ridge regression for the context-free case `g(x) = theta`.
#[derive(Debug, Clone)]
pub struct RidgeRegressor {
    ridge: f64,
    gram: DMatrix<f64>,
    gram_inverse: DMatrix<f64>,
    target: DVector<f64>,
    estimate: Vec<f64>,
    since_refresh: usize,
    stats: RegressorStats,
}

impl RidgeRegressor {
    pub const DEFAULT_RIDGE: f64 = 1.0;

    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) {
            return Err(Error::Config(format!("ridge parameter must be > 0, got {ridge}")));
        }
        Ok(Self {
            ridge,
            gram: DMatrix::identity(dim, dim) * ridge,
            gram_inverse: DMatrix::identity(dim, dim) / ridge,
            target: DVector::zeros(dim),
            estimate: vec![0.0; dim],
            since_refresh: 0,
            stats: RegressorStats::default(),
        })
    }

    /// The unprojected regularized least-squares solution.
    pub fn raw_estimate(&self) -> DVector<f64> {
        &self.gram_inverse * &self.target
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }
}

impl Regressor for RidgeRegressor {
    fn dim(&self) -> usize {
        self.target.len()
    }

    fn predict(&self, _x: &Context) -> Vec<f64> {
        self.estimate.clone()
    }

    fn update(&mut self, _x: &Context, embedding: &[f64], reward: f64) {
        let reward = self.stats.record(dot(&self.estimate, embedding), reward);
        let z = DVector::from_column_slice(embedding);
        self.gram.ger(1.0, &z, &z, 1.0);
        self.target.axpy(reward, &z, 1.0);
        let w = &self.gram_inverse * &z;
        let denom = 1.0 + z.dot(&w);
        self.gram_inverse.ger(-1.0 / denom, &w, &w, 1.0);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            if let Some(chol) = self.gram.clone().cholesky() {
                self.gram_inverse = chol.inverse();
            }
            self.since_refresh = 0;
        }
        let mut est: Vec<f64> = self.raw_estimate().iter().copied().collect();
        project_unit_ball(&mut est);
        self.estimate = est;
    }

    fn stats(&self) -> RegressorStats {
        self.stats
    }
}

/// Bilinear model `f(x, a) = <phi(a), W x>` trained by SGD on the loss
/// `(f - r)^2 / 2`, with step size `step / sqrt(t)`.
#[derive(Debug, Clone)]
pub struct BilinearRegressor {
    weights: DMatrix<f64>,
    step: f64,
    stats: RegressorStats,
}

impl BilinearRegressor {
    pub const DEFAULT_STEP: f64 = 0.05;

    pub fn new(action_dim: usize, context_dim: usize, step: f64) -> Result<Self> {
        if !(step >= 0.0) {
            return Err(Error::Config(format!("step size must be >= 0, got {step}")));
        }
        Ok(Self {
            weights: DMatrix::zeros(action_dim, context_dim),
            step,
            stats: RegressorStats::default(),
        })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Raw model output before any projection.
    pub fn raw_value(&self, x: &Context, embedding: &[f64]) -> f64 {
        let wx = &self.weights * DVector::from_column_slice(&x.features);
        dot(wx.as_slice(), embedding)
    }

    pub fn loss(&self, x: &Context, embedding: &[f64], reward: f64) -> f64 {
        0.5 * (self.raw_value(x, embedding) - reward).powi(2)
    }

    /// Gradient of [`Self::loss`] with respect to `W`.
    pub fn gradient(&self, x: &Context, embedding: &[f64], reward: f64) -> DMatrix<f64> {
        let residual = self.raw_value(x, embedding) - reward;
        DVector::from_column_slice(embedding)
            * DVector::from_column_slice(&x.features).transpose()
            * residual
    }

    pub fn current_step(&self) -> f64 {
        self.step / ((self.stats.updates + 1) as f64).sqrt()
    }
}

impl Regressor for BilinearRegressor {
    fn dim(&self) -> usize {
        self.weights.nrows()
    }

    fn predict(&self, x: &Context) -> Vec<f64> {
        let mut g: Vec<f64> = (&self.weights * DVector::from_column_slice(&x.features))
            .iter()
            .copied()
            .collect();
        project_unit_ball(&mut g);
        g
    }

    fn update(&mut self, x: &Context, embedding: &[f64], reward: f64) {
        let step = self.current_step();
        let prediction = dot(&self.predict(x), embedding);
        let reward = self.stats.record(prediction, reward);
        let grad = self.gradient(x, embedding, reward);
        self.weights -= grad * step;
    }

    fn stats(&self) -> RegressorStats {
        self.stats
    }
}

/// A regressor that always predicts the same vector and ignores updates.
#[derive(Debug, Clone)]
pub struct FixedRegressor {
    value: Vec<f64>,
    stats: RegressorStats,
}

impl FixedRegressor {
    pub fn new(mut value: Vec<f64>) -> Self {
        project_unit_ball(&mut value);
        Self {
            value,
            stats: RegressorStats::default(),
        }
    }
}

impl Regressor for FixedRegressor {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn predict(&self, _x: &Context) -> Vec<f64> {
        self.value.clone()
    }

    fn update(&mut self, _x: &Context, embedding: &[f64], reward: f64) {
        self.stats.record(dot(&self.value, embedding), reward);
    }

    fn stats(&self) -> RegressorStats {
        self.stats
    }
}
