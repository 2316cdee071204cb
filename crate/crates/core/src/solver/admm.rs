//! ADMM for simplex-constrained least squares.
//!
//! Each block update minimizes `h(A) = ½ tr(A G Aᵀ) − tr(Vᵀ Aᵀ)` over a
//! `K × F` block `A` (a factor, or `λᵀ` with `K = 1`) subject to simplex
//! constraints, via the splitting
//!
//! ```text
//! Ã = (Vᵀ + ρ(A + U)) (G + ρI)⁻¹
//! A = Π(Ã − U)
//! U = U + A − Ã
//! ```
//!
//! where `Π` projects each column (factor blocks) or the whole row (`λ`) onto
//! the probability simplex and `U` is the scaled dual.


use crate::error::{Error, Result};
use crate::simplex::simplex_project_in_place;
use crate::tensor::Matrix;

use super::{RhoPolicy, SolverConfig};

/// Floor applied to the automatic penalty.
pub const RHO_FLOOR: f64 = 1e-6;

/// Outcome of one block solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmReport {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    /// False when the inner solution would have increased `h` and the
    /// previous block value was kept instead.
    pub accepted: bool,
}

/// Which constraint set the block lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Each column of the `K × F` block is a PMF.
    Columns,
    /// The whole `1 × F` block is one PMF.
    Whole,
}

pub fn choose_rho(policy: RhoPolicy, g: &Matrix) -> f64 {
    match policy {
        RhoPolicy::Fixed(r) => r,
        RhoPolicy::Auto => (g.trace() / g.nrows() as f64).max(RHO_FLOOR),
    }
}

fn project(a: &mut Matrix, constraint: Constraint) -> Result<()> {
    match constraint {
        Constraint::Whole => simplex_project_in_place(a.as_mut_slice()),
        Constraint::Columns => {
            let k = a.nrows();
            for col in a.as_mut_slice().chunks_mut(k) {
                simplex_project_in_place(col)?;
            }
            Ok(())
        }
    }
}

/// `h(new) − h(old)` evaluated without forming either value, so the sign is
/// reliable even when both are dominated by a large constant.
fn objective_change(g: &Matrix, vt: &Matrix, old: &Matrix, new: &Matrix) -> f64 {
    let delta = new - old;
    let sum = new + old;
    0.5 * (sum * g).dot(&delta) - vt.dot(&delta)
}

/// Runs ADMM on one block. `a` holds the current feasible block on entry and
/// the accepted block on exit; `dual` is warm-started and updated in place.
/// `vt` is the transposed right-hand side, shaped like `a`.
pub fn solve_block(
    g: &Matrix,
    vt: &Matrix,
    a: &mut Matrix,
    dual: &mut Matrix,
    constraint: Constraint,
    config: &SolverConfig,
) -> Result<AdmmReport> {
    let f = g.nrows();
    if g.ncols() != f || vt.ncols() != f || a.shape() != vt.shape() || dual.shape() != vt.shape() {
        return Err(Error::Dimension("ADMM block shapes disagree".into()));
    }
    if constraint == Constraint::Whole && a.nrows() != 1 {
        return Err(Error::Dimension("whole-block constraint needs a single row".into()));
    }
    if g.iter().chain(vt.iter()).chain(a.iter()).chain(dual.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ADMM inputs"));
    }
    let rho = choose_rho(config.rho, g);
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("ADMM penalty must be positive, got {rho}")));
    }
    // G + ρI is fixed for the whole block solve; factor it once.
    let shifted = g + Matrix::identity(f, f) * rho;
    let inverse = shifted
        .cholesky()
        .ok_or_else(|| Error::Numerical("G + rho*I is not positive definite".into()))?
        .inverse();

    let start = a.clone();
    let tol = config.admm_tol * (a.len() as f64).sqrt();
    let mut report = AdmmReport {
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        rho,
        accepted: true,
    };
    let mut rhs = vt.clone();
    let mut aux = vt.clone();
    let mut prev = a.clone();
    for it in 1..=config.admm_max_iters {
        for (((r, &v), &x), &u) in rhs.iter_mut().zip(vt.iter()).zip(a.iter()).zip(dual.iter()) {
            *r = v + rho * (x + u);
        }
        aux.gemm(1.0, &rhs, &inverse, 0.0);
        prev.copy_from(a);
        a.copy_from(&aux);
        *a -= &*dual;
        project(a, constraint)?;
        let mut primal = 0.0;
        let mut change = 0.0;
        for (((d, &x), &t), &p) in dual.iter_mut().zip(a.iter()).zip(aux.iter()).zip(prev.iter()) {
            *d += x - t;
            primal += (x - t) * (x - t);
            change += (x - p) * (x - p);
        }
        report.iterations = it;
        report.primal_residual = primal.sqrt();
        report.dual_residual = rho * change.sqrt();
        if report.primal_residual < tol && report.dual_residual < tol {
            break;
        }
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ADMM iterate"));
    }
    let change = objective_change(g, vt, &start, a);
    let scale = 0.5 * (&start * g).dot(&start).abs() + vt.dot(&start).abs();
    if change > 1e-14 * scale {
        a.copy_from(&start);
        dual.fill(0.0);
        report.accepted = false;
    }
    Ok(report)
}
