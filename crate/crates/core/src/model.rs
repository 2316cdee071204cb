//! Nonnegative CP model of a joint PMF.
//!
//! A model of rank `F` over `N` variables holds a mixing vector `λ` (the prior
//! of a latent variable with `F` states) and one `I_n × F` factor per variable
//! whose column `f` is the conditional PMF of that variable given state `f`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix, PMF_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct CpdModel {
    weights: Vec<f64>,
    factors: Vec<Matrix>,
}

impl CpdModel {
    /// Builds a model and checks the stochasticity invariants at [`PMF_TOL`].
    pub fn new(weights: Vec<f64>, factors: Vec<Matrix>) -> Result<Self> {
        let model = Self::from_parts(weights, factors)?;
        model.validate(PMF_TOL)?;
        Ok(model)
    }

    /// Builds a model checking only shapes. Used by the solver and tests that
    /// construct intermediate, not yet normalized, parameters.
    pub fn from_parts(weights: Vec<f64>, factors: Vec<Matrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("rank must be at least 1".into()));
        }
        if factors.is_empty() {
            return Err(Error::InvalidInput("model needs at least one factor".into()));
        }
        for (n, a) in factors.iter().enumerate() {
            if a.ncols() != weights.len() || a.nrows() == 0 {
                return Err(Error::Dimension(format!(
                    "factor {n} is {}x{}, expected I_n x {}",
                    a.nrows(),
                    a.ncols(),
                    weights.len()
                )));
            }
        }
        Ok(Self { weights, factors })
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn ndim(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.nrows()).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Matrix {
        &self.factors[n]
    }

    pub(crate) fn factor_mut(&mut self, n: usize) -> &mut Matrix {
        &mut self.factors[n]
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Vec<f64> {
        &mut self.weights
    }

    /// Checks that `λ` and every factor column lie on the simplex within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if !on_simplex(&self.weights, tol) {
            return Err(Error::InvalidInput(format!(
                "weights are not a PMF (sum = {})",
                self.weights.iter().sum::<f64>()
            )));
        }
        for (n, a) in self.factors.iter().enumerate() {
            for (f, col) in a.column_iter().enumerate() {
                if !on_simplex(col.as_slice(), tol) {
                    return Err(Error::InvalidInput(format!(
                        "column {f} of factor {n} is not a PMF (sum = {})",
                        col.sum()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reconstructs the tensor `Σ_f λ(f) ∏_{n∈S} A_n(i_n, f)` over the modes
    /// in `modes` (in the given order), or over all modes when `None`.
    ///
    /// For a valid model the modes outside `S` marginalize away because the
    /// factor columns sum to one, so the result is the marginal PMF of `S`.
    pub fn reconstruct(&self, modes: Option<&[usize]>) -> Result<DenseTensor> {
        let all: Vec<usize>;
        let modes = match modes {
            Some(m) => m,
            None => {
                all = (0..self.ndim()).collect();
                &all
            }
        };
        if modes.is_empty() {
            return Err(Error::InvalidInput("mode subset must be non-empty".into()));
        }
        let mut seen = vec![false; self.ndim()];
        for &m in modes {
            if m >= self.ndim() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidInput(format!("invalid mode subset {modes:?}")));
            }
        }
        let shape: Vec<usize> = modes.iter().map(|&m| self.factors[m].nrows()).collect();
        let total: usize = shape.iter().product();
        let mut data = vec![0.0; total];
        let mut term = Vec::with_capacity(total);
        let mut next = Vec::with_capacity(total);
        for (f, &w) in self.weights.iter().enumerate() {
            term.clear();
            term.push(w);
            // Outer product built up so that the first mode varies fastest.
            for &m in modes {
                let col = self.factors[m].column(f);
                next.clear();
                for &a in col.iter() {
                    next.extend(term.iter().map(|t| a * t));
                }
                std::mem::swap(&mut term, &mut next);
            }
            for (d, t) in data.iter_mut().zip(&term) {
                *d += t;
            }
        }
        DenseTensor::new(shape, data)
    }

    /// Returns the model with columns reordered so that new column `f` is old
    /// column `perm[f]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        let f = self.rank();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..f).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation of 0..{f}")));
        }
        let weights = perm.iter().map(|&p| self.weights[p]).collect();
        let factors = self
            .factors
            .iter()
            .map(|a| Matrix::from_fn(a.nrows(), f, |r, c| a[(r, perm[c])]))
            .collect();
        Ok(Self { weights, factors })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn on_simplex(v: &[f64], tol: f64) -> bool {
    v.iter().all(|&x| x.is_finite() && x >= -tol) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// On-disk model layout. Factors are stored column-major; floats are written
/// in shortest round-trip form so a save/load cycle is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    rank: usize,
    cardinalities: Vec<usize>,
    weights: Vec<f64>,
    factors: Vec<Vec<f64>>,
}

impl From<&CpdModel> for ModelFile {
    fn from(m: &CpdModel) -> Self {
        Self {
            rank: m.rank(),
            cardinalities: m.cardinalities(),
            weights: m.weights.clone(),
            factors: m.factors.iter().map(|a| a.as_slice().to_vec()).collect(),
        }
    }
}

impl TryFrom<ModelFile> for CpdModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.weights.len() != file.rank || file.factors.len() != file.cardinalities.len() {
            return Err(Error::InvalidInput(
                "model file: rank/cardinalities disagree with weights/factors".into(),
            ));
        }
        let factors = file
            .factors
            .into_iter()
            .zip(&file.cardinalities)
            .enumerate()
            .map(|(n, (data, &card))| {
                if data.len() != card * file.rank {
                    return Err(Error::Dimension(format!(
                        "model file: factor {n} has {} entries, expected {}",
                        data.len(),
                        card * file.rank
                    )));
                }
                Ok(Matrix::from_vec(card, file.rank, data))
            })
            .collect::<Result<Vec<_>>>()?;
        CpdModel::new(file.weights, factors)
    }
}
