//! Euclidean projection onto the probability simplex `{x ≥ 0, Σx = 1}`.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Projects `v` onto the probability simplex using the sort-and-threshold
/// method: find the largest `k` with `u_k - (Σ_{j≤k} u_j - 1)/k > 0` over the
/// descending sort `u`, then shift and clip.
pub fn simplex_project(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    simplex_project_in_place(&mut out)?;
    Ok(out)
}

pub fn simplex_project_in_place(v: &mut [f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("simplex projection input"));
    }
    let theta = threshold(v);
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    Ok(())
}

fn threshold(v: &[f64]) -> f64 {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

/// Projects every column of `m` onto the simplex.
pub fn simplex_project_columns(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    project_columns_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn project_columns_in_place(m: &mut Matrix) -> Result<()> {
    if m.nrows() == 0 {
        return Err(Error::InvalidInput("cannot project columns of an empty matrix".into()));
    }
    for mut col in m.column_iter_mut() {
        simplex_project_in_place(col.as_mut_slice())?;
    }
    Ok(())
}
