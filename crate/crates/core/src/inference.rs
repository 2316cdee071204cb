//! Exact queries against a fitted model: posteriors over the latent state,
//! conditional PMFs, conditional expectations and MAP estimates.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::Cell;
use crate::error::{Error, Result};
use crate::model::CpdModel;

/// Observed variables and their (0-based) codes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence(BTreeMap<usize, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds evidence from `(variable, code)` pairs, checking them against
    /// the model's cardinalities.
    pub fn from_pairs(model: &CpdModel, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let cards = model.cardinalities();
        let mut map = BTreeMap::new();
        for (var, code) in pairs {
            let card = *cards
                .get(var)
                .ok_or_else(|| Error::InvalidInput(format!("evidence names unknown variable {var}")))?;
            if code >= card {
                return Err(Error::InvalidInput(format!(
                    "evidence code {} for variable {var} exceeds cardinality {card}",
                    code + 1
                )));
            }
            if map.insert(var, code).is_some() {
                return Err(Error::InvalidInput(format!("variable {var} observed twice")));
            }
        }
        Ok(Self(map))
    }

    /// Every observed cell of a data row except `exclude`.
    pub fn from_row(model: &CpdModel, row: &[Option<usize>], exclude: Option<usize>) -> Result<Self> {
        Self::from_pairs(
            model,
            row.iter()
                .enumerate()
                .filter(|&(n, _)| Some(n) != exclude)
                .filter_map(|(n, c)| c.map(|c| (n, c))),
        )
    }

    pub fn insert(&mut self, var: usize, code: usize) {
        self.0.insert(var, code);
    }

    pub fn contains(&self, var: usize) -> bool {
        self.0.contains_key(&var)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&v, &c)| (v, c))
    }
}

/// `P(H = f | evidence)`. Fails with [`Error::ZeroEvidence`] when the
/// evidence has zero probability under the model.
pub fn posterior_mixture(model: &CpdModel, evidence: &Evidence) -> Result<Vec<f64>> {
    let mut w = model.weights().to_vec();
    for (var, code) in evidence.iter() {
        let a = model.factor(var);
        for (f, wf) in w.iter_mut().enumerate() {
            *wf *= a[(code, f)];
        }
        // Renormalize as we go so long evidence lists cannot underflow.
        let s: f64 = w.iter().sum();
        if s <= 0.0 {
            return Err(Error::ZeroEvidence);
        }
        w.iter_mut().for_each(|x| *x /= s);
    }
    let s: f64 = w.iter().sum();
    if s <= 0.0 {
        return Err(Error::ZeroEvidence);
    }
    w.iter_mut().for_each(|x| *x /= s);
    Ok(w)
}

/// A conditional PMF and whether it fell back to the prior marginal because
/// the evidence had zero probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional {
    pub pmf: Vec<f64>,
    pub zero_evidence: bool,
}

/// `P(X_target | evidence) = A_target · w`.
pub fn conditional_pmf(model: &CpdModel, evidence: &Evidence, target: usize) -> Result<Conditional> {
    if target >= model.ndim() {
        return Err(Error::InvalidInput(format!("target variable {target} out of range")));
    }
    if evidence.contains(target) {
        return Err(Error::InvalidInput(format!("target variable {target} is part of the evidence")));
    }
    let (w, zero_evidence) = match posterior_mixture(model, evidence) {
        Ok(w) => (w, false),
        Err(Error::ZeroEvidence) => (model.weights().to_vec(), true),
        Err(e) => return Err(e),
    };
    let a = model.factor(target);
    let pmf = (0..a.nrows())
        .map(|c| w.iter().enumerate().map(|(f, wf)| a[(c, f)] * wf).sum())
        .collect();
    Ok(Conditional { pmf, zero_evidence })
}

/// Numeric value attached to each code of a variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMap(Vec<f64>);

impl ValueMap {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Code `c` (1-based) maps to `c`.
    pub fn identity(cardinality: usize) -> Self {
        Self::affine(cardinality, 1.0, 0.0)
    }

    /// Code `c` (1-based) maps to `offset + scale * c`; e.g. half-star ratings
    /// use `scale = 0.5`.
    pub fn affine(cardinality: usize, scale: f64, offset: f64) -> Self {
        Self((1..=cardinality).map(|c| offset + scale * c as f64).collect())
    }

    pub fn constant(cardinality: usize, value: f64) -> Self {
        Self(vec![value; cardinality])
    }

    pub fn value(&self, code: usize) -> f64 {
        self.0[code]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `E[value(X_target) | evidence]`, with the zero-evidence flag.
pub fn conditional_expectation(
    model: &CpdModel,
    evidence: &Evidence,
    target: usize,
    values: &ValueMap,
) -> Result<(f64, bool)> {
    let cond = conditional_pmf(model, evidence, target)?;
    if values.len() != cond.pmf.len() {
        return Err(Error::InvalidInput(format!(
            "value map covers {} codes, variable {target} has {}",
            values.len(),
            cond.pmf.len()
        )));
    }
    let e = cond.pmf.iter().zip(values.values()).map(|(p, v)| p * v).sum();
    Ok((e, cond.zero_evidence))
}

/// Most probable code of `X_target` given the evidence; ties go to the
/// smallest code.
pub fn map_estimate(model: &CpdModel, evidence: &Evidence, target: usize) -> Result<(usize, bool)> {
    let cond = conditional_pmf(model, evidence, target)?;
    Ok((argmax_first(&cond.pmf), cond.zero_evidence))
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One answered query cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub row: usize,
    pub var: usize,
    pub expectation: f64,
    /// 0-based MAP code.
    pub map_code: usize,
    pub zero_evidence: bool,
}

/// Answers every [`Cell::Target`] in `rows`, conditioning on all observed
/// cells of the same row. `values[n]` maps codes of variable `n`.
pub fn predict_queries(model: &CpdModel, rows: &[Vec<Cell>], values: &[ValueMap]) -> Result<Vec<Prediction>> {
    if values.len() != model.ndim() {
        return Err(Error::InvalidInput("one value map per variable required".into()));
    }
    let per_row = rows
        .par_iter()
        .enumerate()
        .map(|(r, row)| {
            if row.len() != model.ndim() {
                return Err(Error::Dimension(format!(
                    "query row {r} has {} fields, model has {} variables",
                    row.len(),
                    model.ndim()
                )));
            }
            let evidence = Evidence::from_pairs(
                model,
                row.iter().enumerate().filter_map(|(n, c)| match c {
                    Cell::Observed(c) => Some((n, *c)),
                    _ => None,
                }),
            )?;
            row.iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, Cell::Target))
                .map(|(n, _)| {
                    let cond = conditional_pmf(model, &evidence, n)?;
                    if values[n].len() != cond.pmf.len() {
                        return Err(Error::InvalidInput(format!(
                            "value map for variable {n} covers {} codes, expected {}",
                            values[n].len(),
                            cond.pmf.len()
                        )));
                    }
                    let expectation =
                        cond.pmf.iter().zip(values[n].values()).map(|(p, v)| p * v).sum();
                    Ok(Prediction {
                        row: r,
                        var: n,
                        expectation,
                        map_code: argmax_first(&cond.pmf),
                        zero_evidence: cond.zero_evidence,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_row.into_iter().flatten().collect())
}
