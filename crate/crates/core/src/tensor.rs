//! Dense multilinear algebra: tensors, unfoldings, Khatri-Rao and Hadamard
//! products.
//!
//! Tensors are linearized with the first index varying fastest: the entry at
//! multi-index `(i_0, .., i_{N-1})` lives at `Σ_k i_k · J_k` with
//! `J_k = Π_{m<k} I_m`. Every unfolding in the crate derives from this order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Tolerance used when validating that a tensor or vector is a PMF.
pub const PMF_TOL: f64 = 1e-9;

/// An N-way array of reals stored in first-index-fastest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The vectorized tensor.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in index.iter().zip(&self.shape) {
            debug_assert!(i < n);
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Checks nonnegativity and unit mass within `tol`.
    pub fn is_pmf(&self, tol: f64) -> bool {
        self.data.iter().all(|&x| x >= -tol && x.is_finite()) && (self.sum() - 1.0).abs() <= tol
    }

    pub fn validate_pmf(&self, what: &str) -> Result<()> {
        if self.is_pmf(PMF_TOL) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "{what} is not a probability tensor (sum = {})",
                self.sum()
            )))
        }
    }

    /// Sums out every mode not listed in `keep`. The result's modes follow the
    /// order of `keep`, which may be any arrangement of distinct modes.
    pub fn marginalize(&self, keep: &[usize]) -> Result<DenseTensor> {
        check_modes(keep, self.ndim())?;
        let out_shape: Vec<usize> = keep.iter().map(|&k| self.shape[k]).collect();
        let mut out = DenseTensor::zeros(out_shape)?;
        let mut out_strides = vec![0usize; self.ndim()];
        let mut stride = 1;
        for &k in keep {
            out_strides[k] = stride;
            stride *= self.shape[k];
        }
        for_each_index(&self.shape, |lin, idx| {
            let o: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
            out.data[o] += self.data[lin];
        });
        Ok(out)
    }
}

fn check_modes(modes: &[usize], ndim: usize) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::InvalidInput("mode subset must be non-empty".into()));
    }
    let mut seen = vec![false; ndim];
    for &m in modes {
        if m >= ndim {
            return Err(Error::Dimension(format!("mode {m} out of range for {ndim}-way tensor")));
        }
        if std::mem::replace(&mut seen[m], true) {
            return Err(Error::InvalidInput(format!("mode {m} listed twice")));
        }
    }
    Ok(())
}

/// Calls `f(linear_offset, multi_index)` for every cell in linearization order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for lin in 0..total {
        f(lin, &idx);
        for (k, &n) in shape.iter().enumerate() {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Columnwise Kronecker product. Row `a * J + b` of the result holds
/// `A[a, f] * B[b, f]`, so the row index of `a` varies slowest.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (i, j) = (a.nrows(), b.nrows());
    Ok(Matrix::from_fn(i * j, a.ncols(), |r, f| a[(r / j, f)] * b[(r % j, f)]))
}

/// Khatri-Rao product of a list, `M_0 ⊙ M_1 ⊙ ... ⊙ M_{k-1}`.
pub fn khatri_rao_chain(mats: &[&Matrix]) -> Result<Matrix> {
    let (first, rest) = mats
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty khatri-rao chain".into()))?;
    rest.iter()
        .try_fold((*first).clone(), |acc, m| khatri_rao(&acc, m))
}

/// Elementwise product of equally shaped matrices.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "hadamard needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// Mode-`n` unfolding in the tall orientation: a `(Π_{k≠n} I_k) × I_n`
/// matrix whose row index linearizes the remaining modes first-fastest.
pub fn mode_unfold(t: &DenseTensor, n: usize) -> Result<Matrix> {
    if n >= t.ndim() {
        return Err(Error::Dimension(format!(
            "mode {n} out of range for {}-way tensor",
            t.ndim()
        )));
    }
    let cols = t.shape[n];
    let rows = t.len() / cols;
    let strides = unfold_row_strides(&t.shape, n);
    let mut m = Matrix::zeros(rows, cols);
    for_each_index(&t.shape, |lin, idx| {
        let r: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        m[(r, idx[n])] = t.data[lin];
    });
    Ok(m)
}

/// Inverse of [`mode_unfold`].
pub fn fold(m: &Matrix, n: usize, shape: &[usize]) -> Result<DenseTensor> {
    if n >= shape.len() {
        return Err(Error::Dimension(format!("mode {n} out of range for shape {shape:?}")));
    }
    let total: usize = shape.iter().product();
    if m.ncols() != shape[n] || m.nrows() * m.ncols() != total {
        return Err(Error::Dimension(format!(
            "{}x{} matrix does not fold into {shape:?} along mode {n}",
            m.nrows(),
            m.ncols()
        )));
    }
    let strides = unfold_row_strides(shape, n);
    let mut data = vec![0.0; total];
    for_each_index(shape, |lin, idx| {
        let r: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data[lin] = m[(r, idx[n])];
    });
    DenseTensor::new(shape.to_vec(), data)
}

// Row strides for the unfolding along `n`; the stride of mode `n` itself is 0.
fn unfold_row_strides(shape: &[usize], n: usize) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for (k, &dim) in shape.iter().enumerate() {
        if k != n {
            strides[k] = s;
            s *= dim;
        }
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn khatri_rao_small() {
        let a = m(2, 2, &[1., 2., 3., 4.]);
        let b = m(2, 2, &[0., 1., 1., 0.]);
        let expected = m(4, 2, &[0., 2., 1., 0., 0., 4., 3., 0.]);
        assert_eq!(khatri_rao(&a, &b).unwrap(), expected);
        assert_eq!(khatri_rao(&m(1, 1, &[1.]), &m(1, 1, &[1.])).unwrap(), m(1, 1, &[1.]));
    }

    #[test]
    fn khatri_rao_with_ones_row_is_identity() {
        let a = m(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let ones = m(1, 2, &[1., 1.]);
        assert_eq!(khatri_rao(&a, &ones).unwrap(), a);
    }

    #[test]
    fn khatri_rao_rejects_column_mismatch() {
        let err = khatri_rao(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3));
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn hadamard_cases() {
        assert_eq!(hadamard(&m(1, 2, &[2., 3.]), &m(1, 2, &[4., 5.])).unwrap(), m(1, 2, &[8., 15.]));
        let x = m(2, 2, &[1., -2., 3.5, 4.]);
        assert_eq!(hadamard(&x, &Matrix::from_element(2, 2, 1.0)).unwrap(), x);
        assert_eq!(hadamard(&x, &Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(2, 2));
        assert!(hadamard(&x, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn unfold_cube() {
        let t = DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        assert_eq!(mode_unfold(&t, 0).unwrap(), m(4, 2, &[1., 2., 3., 4., 5., 6., 7., 8.]));
        assert_eq!(mode_unfold(&t, 2).unwrap(), m(4, 2, &[1., 5., 2., 6., 3., 7., 4., 8.]));
        assert!(mode_unfold(&t, 3).is_err());
    }

    #[test]
    fn unfold_one_way_is_column_vector() {
        let t = DenseTensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let u = mode_unfold(&t, 0).unwrap();
        assert_eq!(u.shape(), (1, 4));
        // a 1-way tensor has an empty set of remaining modes, so the
        // unfolding is a single row; its transpose is vec(T)
        assert_eq!(u.transpose().as_slice(), t.data());
    }

    #[test]
    fn marginalize_sums_out_modes() {
        let t = DenseTensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.marginalize(&[0]).unwrap().data(), &[9., 12.]);
        assert_eq!(t.marginalize(&[1]).unwrap().data(), &[3., 7., 11.]);
        let tr = t.marginalize(&[1, 0]).unwrap();
        assert_eq!(tr.shape(), &[3, 2]);
        assert_eq!(tr.get(&[2, 0]), 5.0);
        assert!(t.marginalize(&[0, 0]).is_err());
        assert!(t.marginalize(&[]).is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
    }
}
