//! Normal-equation terms of the per-block least-squares subproblems.
//!
//! For factor `i`, every stored tuple `S ∋ i` contributes
//! `D(λ) Q_Sᵀ Q_S D(λ)` to the Gram matrix and `D(λ) Q_Sᵀ X_S⁽ⁱ⁾` to the
//! right-hand side, where `Q_S` is the Khatri-Rao product of the other factors
//! in `S` and `X_S⁽ⁱ⁾` is the unfolding of the tuple's marginal with variable
//! `i` as the column mode. Neither `Q_S` nor the unfolding is formed: the Gram
//! matrix uses `(Q_Sᵀ Q_S) = ⊛_{j∈S∖i} A_jᵀA_j` and the right-hand side is an
//! MTTKRP accumulated directly over the nonzero cells of `X_S`.

use crate::error::{Error, Result};
use crate::marginals::{combinations, MarginalSet};
use crate::model::CpdModel;
use crate::tensor::{DenseTensor, Matrix};

/// `A_nᵀ A_n` for every factor.
pub fn factor_grams(model: &CpdModel) -> Vec<Matrix> {
    model.factors().iter().map(|a| a.tr_mul(a)).collect()
}

/// Gram matrix `G_i` of the subproblem for factor `i`.
pub fn compute_gi(marginals: &MarginalSet, model: &CpdModel, i: usize) -> Matrix {
    gi_from_grams(marginals, model.weights(), &factor_grams(model), i)
}

pub(crate) fn gi_from_grams(
    marginals: &MarginalSet,
    weights: &[f64],
    grams: &[Matrix],
    i: usize,
) -> Matrix {
    let f = weights.len();
    let mut g = Matrix::zeros(f, f);
    for (vars, _) in marginals.tuples_containing(i) {
        let mut term = Matrix::from_element(f, f, 1.0);
        for &j in vars.iter().filter(|&&j| j != i) {
            term.component_mul_assign(&grams[j]);
        }
        g += term;
    }
    for r in 0..f {
        for c in 0..f {
            g[(r, c)] *= weights[r] * weights[c];
        }
    }
    g
}

/// Right-hand side `V_i` (`F × I_i`) of the subproblem for factor `i`.
///
/// Fails with [`Error::MissingTuple`] when the set lacks a tuple of the full
/// design that contains `i`.
pub fn compute_vi(marginals: &MarginalSet, model: &CpdModel, i: usize) -> Result<Matrix> {
    require_tuples_with(marginals, i)?;
    Ok(vi_unchecked(marginals, model, i))
}

pub(crate) fn vi_unchecked(marginals: &MarginalSet, model: &CpdModel, i: usize) -> Matrix {
    let f = model.rank();
    let rows = transposed(model);
    let mut v = Matrix::zeros(f, model.factor(i).nrows());
    let mut kernel = Mttkrp::new(f);
    for (vars, m) in marginals.tuples_containing(i) {
        let pos = vars.iter().position(|&x| x == i).expect("tuple contains i");
        kernel.run(&m.tensor, vars, &rows, Some(pos), v.as_mut_slice());
    }
    let w = model.weights();
    for (r, mut row) in v.row_iter_mut().enumerate() {
        row *= w[r];
    }
    v
}

/// Gram matrix of the weight subproblem, `Σ_S ⊛_{j∈S} A_jᵀA_j`.
pub fn lambda_gram(marginals: &MarginalSet, model: &CpdModel) -> Matrix {
    lambda_gram_from_grams(marginals, model.rank(), &factor_grams(model))
}

pub(crate) fn lambda_gram_from_grams(marginals: &MarginalSet, f: usize, grams: &[Matrix]) -> Matrix {
    let mut g = Matrix::zeros(f, f);
    for (vars, _) in marginals.iter() {
        let mut term = Matrix::from_element(f, f, 1.0);
        for &j in vars {
            term.component_mul_assign(&grams[j]);
        }
        g += term;
    }
    g
}

/// Right-hand side of the weight subproblem, `Σ_S Q_Sᵀ vec(X_S)` as an
/// `F × 1` matrix.
pub fn lambda_rhs(marginals: &MarginalSet, model: &CpdModel) -> Matrix {
    let f = model.rank();
    let rows = transposed(model);
    let mut v = Matrix::zeros(f, 1);
    let mut kernel = Mttkrp::new(f);
    for (vars, m) in marginals.iter() {
        kernel.run(&m.tensor, vars, &rows, None, v.as_mut_slice());
    }
    v
}

/// MTTKRP over one dense marginal without forming the Khatri-Rao product.
///
/// Walks the tensor from its slowest mode to its fastest, carrying the
/// elementwise product of the factor rows chosen so far. The fastest mode is
/// contracted as a whole fiber, so the cost is about `cells × F`. Zero
/// entries are skipped.
struct Mttkrp {
    f: usize,
    partial: Vec<Vec<f64>>,
    fiber: Vec<f64>,
}

impl Mttkrp {
    fn new(f: usize) -> Self {
        Self { f, partial: Vec::new(), fiber: vec![0.0; f] }
    }

    /// Accumulates into `out`: an `F × I_target` column-major block when
    /// `target` is the position of the free mode, or `F × 1` for a full
    /// contraction.
    fn run(&mut self, x: &DenseTensor, vars: &[usize], rows: &[Matrix], target: Option<usize>, out: &mut [f64]) {
        let ndim = x.ndim();
        self.partial.resize(ndim + 1, Vec::new());
        for p in &mut self.partial {
            p.clear();
            p.resize(self.f, 1.0);
        }
        let strides: Vec<usize> = x
            .shape()
            .iter()
            .scan(1, |acc, &n| {
                let s = *acc;
                *acc *= n;
                Some(s)
            })
            .collect();
        let ctx = Ctx { x, vars, rows, target, strides: &strides };
        self.descend(&ctx, ndim - 1, 0, 0, out);
    }

    fn descend(&mut self, ctx: &Ctx<'_>, k: usize, base: usize, free: usize, out: &mut [f64]) {
        let f = self.f;
        let n = ctx.x.shape()[k];
        if k == 0 {
            let data = &ctx.x.data()[base..base + n];
            let partial = &self.partial[1];
            if ctx.target == Some(0) {
                for (i, &xv) in data.iter().enumerate() {
                    if xv != 0.0 {
                        for (o, p) in out[i * f..(i + 1) * f].iter_mut().zip(partial) {
                            *o += xv * p;
                        }
                    }
                }
            } else {
                self.fiber.fill(0.0);
                let at = ctx.rows[ctx.vars[0]].as_slice();
                for (i, &xv) in data.iter().enumerate() {
                    if xv != 0.0 {
                        for (s, a) in self.fiber.iter_mut().zip(&at[i * f..(i + 1) * f]) {
                            *s += xv * a;
                        }
                    }
                }
                let col = if ctx.target.is_some() { free } else { 0 };
                for ((o, p), s) in out[col * f..(col + 1) * f].iter_mut().zip(partial).zip(&self.fiber) {
                    *o += p * s;
                }
            }
            return;
        }
        let at = ctx.rows[ctx.vars[k]].as_slice();
        for i in 0..n {
            let off = base + i * ctx.strides[k];
            let (head, tail) = self.partial.split_at_mut(k + 1);
            let parent = &tail[0];
            let child = &mut head[k];
            if ctx.target == Some(k) {
                child.copy_from_slice(parent);
                self.descend(ctx, k - 1, off, i, out);
            } else {
                for ((c, p), a) in child.iter_mut().zip(parent).zip(&at[i * f..(i + 1) * f]) {
                    *c = p * a;
                }
                self.descend(ctx, k - 1, off, free, out);
            }
        }
    }
}

struct Ctx<'a> {
    x: &'a DenseTensor,
    vars: &'a [usize],
    rows: &'a [Matrix],
    target: Option<usize>,
    strides: &'a [usize],
}

// Factor transposes: row `r` of `A_n` is the contiguous slice `r*F..(r+1)*F`.
fn transposed(model: &CpdModel) -> Vec<Matrix> {
    model.factors().iter().map(|a| a.transpose()).collect()
}

/// Number of stored tuples that involve variable `i`.
pub fn term_count(marginals: &MarginalSet, i: usize) -> usize {
    marginals.tuples_containing(i).count()
}

fn require_tuples_with(marginals: &MarginalSet, i: usize) -> Result<()> {
    if i >= marginals.n_vars() {
        return Err(Error::Dimension(format!("variable {i} out of range")));
    }
    for t in combinations(marginals.n_vars(), marginals.order()) {
        if t.contains(&i) && marginals.get(&t).is_none() {
            return Err(Error::MissingTuple { tuple: t });
        }
    }
    Ok(())
}
