//! Low-order marginal PMFs: estimation from data, generation from a model, and
//! the coupled least-squares residual between the two.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingsDataset;
use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::tensor::DenseTensor;

/// One marginal tensor together with the number of samples it was counted
/// from (zero when it did not come from data).
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub tensor: DenseTensor,
    pub support: usize,
}

/// Marginals of a fixed order keyed by strictly increasing variable tuples.
/// Mode `k` of each stored tensor corresponds to variable `key[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    order: usize,
    cardinalities: Vec<usize>,
    entries: BTreeMap<Vec<usize>, Marginal>,
}

/// All strictly increasing `m`-tuples drawn from `0..n`, in lexicographic order.
pub fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m == 0 || m > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.clone());
        let mut k = m;
        while k > 0 && idx[k - 1] == n - m + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return out;
        }
        idx[k - 1] += 1;
        for j in k..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

impl MarginalSet {
    /// An empty set; fill it with [`MarginalSet::insert`].
    pub fn new(order: usize, cardinalities: Vec<usize>) -> Result<Self> {
        if order == 0 || order > cardinalities.len() {
            return Err(Error::InvalidInput(format!(
                "marginal order {order} must be in 1..={}",
                cardinalities.len()
            )));
        }
        if cardinalities.contains(&0) {
            return Err(Error::InvalidInput("cardinalities must be positive".into()));
        }
        Ok(Self { order, cardinalities, entries: BTreeMap::new() })
    }

    pub fn insert(&mut self, vars: Vec<usize>, marginal: Marginal) -> Result<()> {
        if vars.len() != self.order || vars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "tuple {vars:?} must be {} strictly increasing variables",
                self.order
            )));
        }
        if vars.iter().any(|&v| v >= self.cardinalities.len()) {
            return Err(Error::InvalidInput(format!("tuple {vars:?} names an unknown variable")));
        }
        let shape: Vec<usize> = vars.iter().map(|&v| self.cardinalities[v]).collect();
        if marginal.tensor.shape() != shape.as_slice() {
            return Err(Error::Dimension(format!(
                "marginal {vars:?} has shape {:?}, expected {shape:?}",
                marginal.tensor.shape()
            )));
        }
        marginal.tensor.validate_pmf(&format!("marginal {vars:?}"))?;
        self.entries.insert(vars, marginal);
        Ok(())
    }

    /// Inserts without shape or PMF checks. Degenerate inputs such as all-zero
    /// tensors are legal for the solver kernels; this is how tests build them.
    #[doc(hidden)]
    pub fn insert_unchecked(&mut self, vars: Vec<usize>, marginal: Marginal) {
        self.entries.insert(vars, marginal);
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn n_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, vars: &[usize]) -> Option<&Marginal> {
        self.entries.get(vars)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], &Marginal)> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v))
    }

    /// Tuples that involve variable `var`.
    pub fn tuples_containing(&self, var: usize) -> impl Iterator<Item = (&[usize], &Marginal)> {
        self.iter().filter(move |(k, _)| k.contains(&var))
    }

    /// The first tuple of the full `C(N, m)` design that is absent, if any.
    pub fn first_missing(&self) -> Option<Vec<usize>> {
        combinations(self.n_vars(), self.order)
            .into_iter()
            .find(|t| !self.entries.contains_key(t))
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() == binomial(self.n_vars(), self.order) && self.first_missing().is_none()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MarginalFile {
            order: self.order,
            cardinalities: self.cardinalities.clone(),
            marginals: self
                .entries
                .iter()
                .map(|(k, m)| MarginalRecord {
                    vars: k.clone(),
                    support: m.support,
                    values: m.tensor.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MarginalFile = serde_json::from_str(s)?;
        let mut set = Self::new(file.order, file.cardinalities)?;
        for rec in file.marginals {
            let shape = rec
                .vars
                .iter()
                .map(|&v| {
                    set.cardinalities.get(v).copied().ok_or_else(|| {
                        Error::InvalidInput(format!("tuple {:?} names an unknown variable", rec.vars))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let tensor = DenseTensor::new(shape, rec.values)?;
            set.insert(rec.vars, Marginal { tensor, support: rec.support })?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Serialized marginal set. `vars` are 0-based variable indices; `values`
/// is the tensor vectorized with the first listed variable varying fastest.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginalFile {
    order: usize,
    cardinalities: Vec<usize>,
    marginals: Vec<MarginalRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginalRecord {
    vars: Vec<usize>,
    support: usize,
    values: Vec<f64>,
}

/// Estimates every order-`m` marginal by counting the samples in which all
/// `m` variables are observed, adding `alpha` to each cell and normalizing.
pub fn estimate_marginals(data: &RatingsDataset, order: usize, alpha: f64) -> Result<MarginalSet> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::InvalidInput(format!("smoothing must be finite and >= 0, got {alpha}")));
    }
    let mut set = MarginalSet::new(order, data.cardinalities().to_vec())?;
    let cards = data.cardinalities();
    let estimated = combinations(data.n_vars(), order)
        .into_par_iter()
        .map(|vars| {
            let shape: Vec<usize> = vars.iter().map(|&v| cards[v]).collect();
            let mut counts = DenseTensor::zeros(shape)?;
            let mut support = 0usize;
            let mut idx = vec![0usize; order];
            'rows: for row in data.rows() {
                for (slot, &v) in idx.iter_mut().zip(&vars) {
                    match row[v] {
                        Some(c) => *slot = c,
                        None => continue 'rows,
                    }
                }
                let off = counts.offset(&idx);
                counts.data_mut()[off] += 1.0;
                support += 1;
            }
            if support == 0 && alpha == 0.0 {
                return Err(Error::NoSupport { tuple: vars });
            }
            let total = support as f64 + alpha * counts.len() as f64;
            for x in counts.data_mut() {
                *x = (*x + alpha) / total;
            }
            Ok((vars, Marginal { tensor: counts, support }))
        })
        .collect::<Result<Vec<_>>>()?;
    for (vars, m) in estimated {
        set.insert(vars, m)?;
    }
    Ok(set)
}

/// The exact order-`m` marginals implied by a model.
pub fn marginals_from_model(model: &CpdModel, order: usize) -> Result<MarginalSet> {
    let mut set = MarginalSet::new(order, model.cardinalities())?;
    for vars in combinations(model.ndim(), order) {
        let tensor = model.reconstruct(Some(&vars))?;
        set.insert(vars, Marginal { tensor, support: 0 })?;
    }
    Ok(set)
}

/// The exact order-`m` marginals of a full joint tensor.
pub fn marginals_from_joint(joint: &DenseTensor, order: usize) -> Result<MarginalSet> {
    let mut set = MarginalSet::new(order, joint.shape().to_vec())?;
    for vars in combinations(joint.ndim(), order) {
        let tensor = joint.marginalize(&vars)?;
        set.insert(vars, Marginal { tensor, support: 0 })?;
    }
    Ok(set)
}

/// `Σ_tuples ½‖X_tuple − model marginal over the tuple‖²_F`.
pub fn marginal_residual(model: &CpdModel, marginals: &MarginalSet) -> Result<f64> {
    if model.cardinalities() != marginals.cardinalities() {
        return Err(Error::Dimension(format!(
            "model cardinalities {:?} differ from marginal cardinalities {:?}",
            model.cardinalities(),
            marginals.cardinalities()
        )));
    }
    let mut total = 0.0;
    for (vars, m) in marginals.iter() {
        let fitted = model.reconstruct(Some(vars))?;
        let sq: f64 = m
            .tensor
            .data()
            .iter()
            .zip(fitted.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += 0.5 * sq;
    }
    Ok(total)
}
