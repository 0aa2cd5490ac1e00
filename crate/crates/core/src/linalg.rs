//! Cached inverse/determinant of a square column matrix with rank-one column
//! replacement, and weighted designs with their second-moment matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::oracles::ActionId;

/// Determinants at or below this magnitude are treated as singular.
pub const SINGULAR_DET: f64 = 1e-300;

/// Cached state is recomputed from scratch after this many rank-one updates.
pub const REFRESH_INTERVAL: usize = 500;

/// Largest condition number accepted for a design's second-moment matrix.
pub const MAX_DESIGN_CONDITION: f64 = 1e12;

/// Relative slack applied to "A >= c * B" determinant comparisons.
pub const COMPARISON_SLACK: f64 = 1e-12;

/// `a >= factor * b` with a relative guard against floating-point ties.
#[inline]
pub fn at_least_factor(a: f64, factor: f64, b: f64) -> bool {
    a >= factor * b * (1.0 - COMPARISON_SLACK)
}

/// A `d x d` matrix whose columns are the embeddings of a spanner, together
/// with its cached inverse and determinant.
#[derive(Debug, Clone)]
pub struct DesignMatrixState {
    columns: DMatrix<f64>,
    inverse: DMatrix<f64>,
    det: f64,
    updates_since_refresh: usize,
}

impl DesignMatrixState {
    pub fn identity(dim: usize) -> Self {
        Self {
            columns: DMatrix::identity(dim, dim),
            inverse: DMatrix::identity(dim, dim),
            det: 1.0,
            updates_since_refresh: 0,
        }
    }

    /// Builds the state from an explicit square matrix, factorizing it once.
    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        if !columns.is_square() {
            return Err(Error::InvalidInput(format!(
                "design matrix must be square, got {}x{}",
                columns.nrows(),
                columns.ncols()
            )));
        }
        let (inverse, det) = factorize(&columns)?;
        Ok(Self {
            columns,
            inverse,
            det,
            updates_since_refresh: 0,
        })
    }

    /// Builds the state from a list of column vectors.
    pub fn from_column_slices(cols: &[&[f64]]) -> Result<Self> {
        let dim = cols.len();
        let mut m = DMatrix::zeros(dim, dim);
        for (j, c) in cols.iter().enumerate() {
            if c.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "column {j} has length {}, expected {dim}",
                    c.len()
                )));
            }
            m.column_mut(j).copy_from_slice(c);
        }
        Self::from_columns(m)
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.dim() {
            return Err(Error::InvalidInput(format!(
                "column index {i} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// The vector `theta = det * (inverse^T) e_i`; `<y, theta>` is the
    /// determinant of the matrix with column `i` replaced by `y`.
    pub fn det_functional(&self, i: usize) -> Result<DVector<f64>> {
        self.check_index(i)?;
        if self.det.abs() <= SINGULAR_DET {
            return Err(Error::Singular(format!(
                "determinant {:e} is degenerate",
                self.det
            )));
        }
        Ok(self.inverse.row(i).transpose() * self.det)
    }

    /// Determinant after substituting `y` for column `i`, without mutating.
    pub fn replacement_det(&self, i: usize, y: &[f64]) -> f64 {
        let row = self.inverse.row(i);
        let dot: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
        self.det * dot
    }

    /// `inverse * z`, i.e. the coefficients of `z` in the column basis.
    pub fn coefficients(&self, z: &[f64]) -> DVector<f64> {
        &self.inverse * DVector::from_column_slice(z)
    }

    /// Replaces column `i` by `new_column`, updating the determinant and the
    /// inverse with the matrix determinant lemma and Sherman-Morrison.
    pub fn rank_one_replace(&mut self, i: usize, new_column: &[f64]) -> Result<()> {
        self.check_index(i)?;
        let d = self.dim();
        if new_column.len() != d {
            return Err(Error::InvalidInput(format!(
                "replacement column has length {}, expected {d}",
                new_column.len()
            )));
        }
        let delta = DVector::from_iterator(
            d,
            new_column
                .iter()
                .zip(self.columns.column(i).iter())
                .map(|(n, o)| n - o),
        );
        // w = inverse * (new - old); the determinant scales by 1 + w_i.
        let w = &self.inverse * &delta;
        let denom = 1.0 + w[i];
        let new_det = self.det * denom;
        if !new_det.is_finite() || new_det.abs() <= SINGULAR_DET {
            return Err(Error::Singular(format!(
                "replacing column {i} would give determinant {new_det:e}"
            )));
        }
        let row_i = self.inverse.row(i).clone_owned();
        self.inverse.ger(-1.0 / denom, &w, &row_i.transpose(), 1.0);
        self.columns.column_mut(i).copy_from_slice(new_column);
        self.det = new_det;
        self.updates_since_refresh += 1;
        if self.updates_since_refresh >= REFRESH_INTERVAL {
            self.refresh()?;
        }
        Ok(())
    }

    /// Recomputes inverse and determinant from the stored columns.
    pub fn refresh(&mut self) -> Result<()> {
        let (inverse, det) = factorize(&self.columns)?;
        self.inverse = inverse;
        self.det = det;
        self.updates_since_refresh = 0;
        Ok(())
    }
}

fn factorize(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let lu = m.clone().lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= SINGULAR_DET {
        return Err(Error::Singular(format!("determinant {det:e}")));
    }
    let inverse = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular("LU inverse failed".into()))?;
    Ok((inverse, det))
}

/// A probability distribution over embedded actions with its second-moment
/// matrix `V(q) = E[z z^T]`.
#[derive(Debug, Clone)]
pub struct WeightedDesign {
    support: Vec<(ActionId, f64)>,
    second_moment: DMatrix<f64>,
    factor: std::result::Result<Cholesky<f64, Dyn>, String>,
}

impl WeightedDesign {
    /// `atoms` pairs each action id and probability with its embedding.
    pub fn new(atoms: &[(ActionId, f64, &[f64])]) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidInput("design has no atoms".into()));
        };
        let d = first.2.len();
        let mut total = 0.0;
        let mut v = DMatrix::zeros(d, d);
        for &(id, p, z) in atoms {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "atom {id} has invalid probability {p}"
                )));
            }
            if z.len() != d {
                return Err(Error::InvalidInput(format!(
                    "atom {id} has dimension {}, expected {d}",
                    z.len()
                )));
            }
            let z = DVector::from_column_slice(z);
            v.ger(p, &z, &z, 1.0);
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "design probabilities sum to {total}"
            )));
        }
        // Symmetrize away rounding asymmetry before factorizing.
        let v = (&v + v.transpose()) * 0.5;
        let support: Vec<(ActionId, f64)> = atoms.iter().map(|&(id, p, _)| (id, p)).collect();
        let factor = factor_design(&v, &support);
        Ok(Self {
            support,
            second_moment: v,
            factor,
        })
    }

    pub fn support(&self) -> &[(ActionId, f64)] {
        &self.support
    }

    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second_moment
    }

    pub fn dim(&self) -> usize {
        self.second_moment.nrows()
    }

    /// `<z, V(q)^{-1} z>` via a Cholesky solve.
    pub fn design_norm(&self, z: &[f64]) -> Result<f64> {
        let chol = self
            .factor
            .as_ref()
            .map_err(|msg| Error::RankDeficient(msg.clone()))?;
        let z = DVector::from_column_slice(z);
        let solved = chol.solve(&z);
        Ok(z.dot(&solved).max(0.0))
    }
}

fn factor_design(
    v: &DMatrix<f64>,
    support: &[(ActionId, f64)],
) -> std::result::Result<Cholesky<f64, Dyn>, String> {
    let name = || {
        let ids: Vec<String> = support.iter().map(|(id, _)| id.to_string()).collect();
        format!("design over actions [{}]", ids.join(", "))
    };
    let eig = SymmetricEigen::new(v.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_DESIGN_CONDITION {
        return Err(format!(
            "{} has singular second moment (eigenvalues in [{min:e}, {max:e}])",
            name()
        ));
    }
    Cholesky::new(v.clone()).ok_or_else(|| format!("{} is not positive definite", name()))
}
