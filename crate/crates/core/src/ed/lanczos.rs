//! Lanczos iteration with full reorthogonalization for the lowest eigenpair
//! of a real symmetric operator.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ed::hamiltonian::LinearOperator;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    /// Bound on the residual `‖Hψ − Eψ‖` of the returned pair.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// True residual `‖Hψ − Eψ‖` of the normalized vector.
    pub residual: f64,
    pub iterations: usize,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(w: &mut [f64], vecs: &[&[f64]]) {
    for v in vecs {
        let c = dot(v, w);
        axpy(-c, v, w);
    }
}

/// Lowest eigenpair of the tridiagonal matrix with diagonal `alpha` and
/// off-diagonal `beta`.
fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    if k == 1 {
        return (alpha[0], vec![1.0]);
    }
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (imin, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    (theta, eig.eigenvectors.column(imin).iter().copied().collect())
}

struct Krylov {
    value: f64,
    ritz: Vec<f64>,
    basis: Vec<Vec<f64>>,
    estimate: f64,
    converged: bool,
    iterations: usize,
}

fn run<O: LinearOperator>(op: &O, tol: f64, max_iter: usize, deflate: &[&[f64]]) -> Result<Krylov> {
    let n = op.dim();
    let effective = n.saturating_sub(deflate.len());
    if effective == 0 {
        return Err(Error::DimensionMismatch {
            expected: deflate.len() + 1,
            got: n,
        });
    }

    // Fixed seed, so results are a deterministic function of the operator. The
    // seed changes with the deflation count: reusing the start vector of the
    // undeflated run would leave no overlap with a degenerate partner state.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_05e5 ^ n as u64 ^ ((deflate.len() as u64) << 40));
    let mut q0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    project_out(&mut q0, deflate);
    project_out(&mut q0, deflate);
    let norm = dot(&q0, &q0).sqrt();
    q0.iter_mut().for_each(|x| *x /= norm);

    let mut basis = vec![q0];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut scale = 1.0f64;
    let mut last = (f64::INFINITY, vec![1.0], f64::INFINITY);

    for j in 0..max_iter.max(1) {
        op.apply(&basis[j], &mut w);
        project_out(&mut w, deflate);
        let a = dot(&basis[j], &w);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        // Two passes of classical Gram-Schmidt against the whole Krylov basis.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
            project_out(&mut w, deflate);
        }
        let b = dot(&w, &w).sqrt();
        alpha.push(a);
        scale = scale.max(a.abs()).max(b);
        let k = j + 1;
        let exhausted = b <= 1e-12 * scale || k >= effective;
        let at_end = k >= max_iter;
        if exhausted || at_end || k < 40 || k % 4 == 0 {
            let (theta, y) = tridiagonal_lowest(&alpha, &beta);
            let estimate = if exhausted { 0.0 } else { b * y[k - 1].abs() };
            last = (theta, y, estimate);
            if estimate <= tol || exhausted {
                return Ok(Krylov {
                    value: last.0,
                    ritz: last.1,
                    basis,
                    estimate,
                    converged: true,
                    iterations: k,
                });
            }
        }
        if at_end {
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        let next = std::mem::replace(&mut w, vec![0.0; n]);
        basis.push(next);
    }
    let iterations = alpha.len();
    Ok(Krylov {
        value: last.0,
        ritz: last.1,
        basis,
        estimate: last.2,
        converged: false,
        iterations,
    })
}

fn assemble<O: LinearOperator>(op: &O, k: Krylov) -> Eigenpair {
    let n = op.dim();
    let mut v = vec![0.0; n];
    for (q, &c) in k.basis.iter().zip(&k.ritz) {
        axpy(c, q, &mut v);
    }
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut hv = vec![0.0; n];
    op.apply(&v, &mut hv);
    axpy(-k.value, &v, &mut hv);
    Eigenpair {
        value: k.value,
        residual: dot(&hv, &hv).sqrt(),
        vector: v,
        iterations: k.iterations,
    }
}

/// Lowest eigenpair of `op` restricted to the orthogonal complement of the
/// (orthonormal) `deflate` vectors.
pub fn lowest_eigenpair<O: LinearOperator>(
    op: &O,
    cfg: &LanczosConfig,
    deflate: &[&[f64]],
) -> Result<Eigenpair> {
    let k = run(op, cfg.tol, cfg.max_iter, deflate)?;
    if !k.converged {
        return Err(Error::NotConverged {
            iterations: k.iterations,
            residual: k.estimate,
        });
    }
    Ok(assemble(op, k))
}

/// Lowest Ritz value without forming the eigenvector. Returns the value and
/// its residual estimate even when `max_iter` is exhausted.
pub fn lowest_ritz_value<O: LinearOperator>(
    op: &O,
    tol: f64,
    max_iter: usize,
    deflate: &[&[f64]],
) -> Result<(f64, f64)> {
    let k = run(op, tol, max_iter, deflate)?;
    Ok((k.value, k.estimate))
}
