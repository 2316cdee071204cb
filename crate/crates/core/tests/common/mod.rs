//! Slow, independent reference implementations used by the integration
//! tests.
#![allow(dead_code)]

use pmfcpd::rng::StreamRng;
use pmfcpd::tensor::for_each_index;
use pmfcpd::{khatri_rao_chain, mode_unfold, CpdModel, DenseTensor, MarginalSet, Matrix};
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn random_model(rng: &mut StreamRng, cards: &[usize], rank: usize) -> CpdModel {
    let mut w: Vec<f64> = (0..rank).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    let factors = cards
        .iter()
        .map(|&c| {
            let mut a = Matrix::from_fn(c, rank, |_, _| rng.random::<f64>() + 1e-3);
            for mut col in a.column_iter_mut() {
                let s = col.sum();
                col /= s;
            }
            a
        })
        .collect();
    CpdModel::new(w, factors).unwrap()
}

pub fn random_joint(rng: &mut StreamRng, cards: &[usize]) -> DenseTensor {
    let len: usize = cards.iter().product();
    let mut data: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let s: f64 = data.iter().sum();
    data.iter_mut().for_each(|x| *x /= s);
    DenseTensor::new(cards.to_vec(), data).unwrap()
}

/// `A_{S_last} ⊙ … ⊙ A_{S_first}` over the listed modes, matching a
/// column-major linearization with the first index fastest.
fn kr_of(model: &CpdModel, modes: &[usize]) -> Matrix {
    let mats: Vec<&Matrix> = modes.iter().rev().map(|&m| model.factor(m)).collect();
    khatri_rao_chain(&mats).unwrap()
}

/// Naive factor subproblem terms for factor `i`: for each tuple `S ∋ i`,
/// `H = ⊙_{j∈S∖i} A_j`, `G += D(λ) HᵀH D(λ)`, `V += D(λ) Hᵀ X_(i)`.
pub fn naive_gi_vi(marginals: &MarginalSet, model: &CpdModel, i: usize) -> (Matrix, Matrix) {
    let f = model.rank();
    let d = Matrix::from_diagonal(&nalgebra::DVector::from_row_slice(model.weights()));
    let mut g = Matrix::zeros(f, f);
    let mut v = Matrix::zeros(f, model.cardinalities()[i]);
    for (vars, m) in marginals.iter() {
        let Some(pos) = vars.iter().position(|&x| x == i) else { continue };
        let others: Vec<usize> = vars.iter().copied().filter(|&x| x != i).collect();
        let h = kr_of(model, &others);
        let unfolded = mode_unfold(&m.tensor, pos).unwrap();
        g += &d * h.transpose() * &h * &d;
        v += &d * h.transpose() * unfolded;
    }
    (g, v)
}

/// Naive weight subproblem: `Q = ⊙_{j∈S} A_j`, `G += QᵀQ`, `V += Qᵀ vec(X)`.
pub fn naive_lambda_terms(marginals: &MarginalSet, model: &CpdModel) -> (Matrix, Matrix) {
    let f = model.rank();
    let mut g = Matrix::zeros(f, f);
    let mut v = Matrix::zeros(f, 1);
    for (vars, m) in marginals.iter() {
        let q = kr_of(model, vars);
        let x = Matrix::from_column_slice(m.tensor.len(), 1, m.tensor.data());
        g += q.transpose() * &q;
        v += q.transpose() * x;
    }
    (g, v)
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let scale = b.norm();
    if scale == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / scale
    }
}

/// Euclidean projection onto the simplex by enumerating every support set:
/// on support `S`, `x_S = v_S − τ` with `τ = (Σ v_S − 1)/|S|`; keep the
/// feasible candidate closest to `v`.
pub fn simplex_oracle(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let k = mask.count_ones() as f64;
        let tau = ((0..n).filter(|&j| mask >> j & 1 == 1).map(|j| v[j]).sum::<f64>() - 1.0) / k;
        let x: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 1 { v[j] - tau } else { 0.0 }).collect();
        if x.iter().any(|&e| e < 0.0) {
            continue;
        }
        let dist: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |b| dist < b.0) {
            best = Some((dist, x));
        }
    }
    best.unwrap().1
}

/// `P(X_target = · | evidence)` by summing the reconstructed joint.
pub fn brute_conditional(model: &CpdModel, evidence: &[(usize, usize)], target: usize) -> Vec<f64> {
    let joint = model.reconstruct(None).unwrap();
    let mut out = vec![0.0; model.cardinalities()[target]];
    for_each_index(joint.shape(), |lin, idx| {
        if evidence.iter().all(|&(n, c)| idx[n] == c) {
            out[idx[target]] += joint.data()[lin];
        }
    });
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}
