//! Error metrics and column alignment.

use crate::error::{Error, Result};
use crate::model::CpdModel;
use crate::tensor::DenseTensor;

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, `O(n³)`). Returns `assign` with row `r`
/// matched to column `assign[r]`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("assignment cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost"));
    }
    // 1-based arrays with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[matched_row[j] - 1] = j - 1;
    }
    Ok(assign)
}

/// Cost of pairing true column `f` with estimated column `g`: squared
/// column differences summed over every factor, plus the squared weight
/// difference.
pub fn column_match_cost(truth: &CpdModel, est: &CpdModel) -> Result<Vec<Vec<f64>>> {
    if truth.rank() != est.rank() {
        return Err(Error::Dimension(format!(
            "cannot align rank {} with rank {}",
            truth.rank(),
            est.rank()
        )));
    }
    if truth.cardinalities() != est.cardinalities() {
        return Err(Error::Dimension("models have different cardinalities".into()));
    }
    let f = truth.rank();
    let mut cost = vec![vec![0.0; f]; f];
    for (r, row) in cost.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let dw = truth.weights()[r] - est.weights()[c];
            *cell = dw * dw
                + truth
                    .factors()
                    .iter()
                    .zip(est.factors())
                    .map(|(a, b)| (a.column(r) - b.column(c)).norm_squared())
                    .sum::<f64>();
        }
    }
    Ok(cost)
}

/// Permutation `perm` such that estimated column `perm[f]` matches true
/// column `f`.
pub fn align_columns(truth: &CpdModel, est: &CpdModel) -> Result<Vec<usize>> {
    min_cost_assignment(&column_match_cost(truth, est)?)
}

/// `(1/N) Σ_n ‖A_n − Â_n Π‖_F / ‖A_n‖_F` for one trial, with `Π` the optimal
/// column alignment.
pub fn mre_factors(truth: &CpdModel, est: &CpdModel) -> Result<f64> {
    let perm = align_columns(truth, est)?;
    Ok(mre_factors_with(truth, est, &perm))
}

/// Factor error under a given alignment.
pub fn mre_factors_with(truth: &CpdModel, est: &CpdModel, perm: &[usize]) -> f64 {
    let n = truth.ndim() as f64;
    truth
        .factors()
        .iter()
        .zip(est.factors())
        .map(|(a, b)| {
            let mut diff = 0.0;
            for (f, &g) in perm.iter().enumerate() {
                diff += (a.column(f) - b.column(g)).norm_squared();
            }
            diff.sqrt() / a.norm()
        })
        .sum::<f64>()
        / n
}

/// `‖X − X̂‖_F / ‖X‖_F`.
pub fn mre_tensor(truth: &DenseTensor, est: &DenseTensor) -> Result<f64> {
    if truth.shape() != est.shape() {
        return Err(Error::Dimension(format!(
            "tensor shapes {:?} and {:?} differ",
            truth.shape(),
            est.shape()
        )));
    }
    let diff: f64 = truth
        .data()
        .iter()
        .zip(est.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(diff.sqrt() / truth.frobenius_norm())
}

/// Relative error between the full joints of two models.
pub fn mre_tensor_models(truth: &CpdModel, est: &CpdModel) -> Result<f64> {
    mre_tensor(&truth.reconstruct(None)?, &est.reconstruct(None)?)
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
