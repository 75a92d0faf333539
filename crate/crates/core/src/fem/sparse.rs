//! Symmetric sparse systems and their direct solution.
//!
//! Matrices are stored in compressed rows with the full symmetric pattern,
//! which doubles as the compressed-column form of the same matrix. The
//! symbolic Cholesky analysis depends only on the pattern and is cached with
//! it, so repeated solves on one mesh only refactor numerically.

use std::collections::BTreeMap;
use std::sync::{Arc, Once, OnceLock};

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, Mat, Par, Side};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("relative residual {residual:.3e} above tolerance {tol:.1e}")]
    Residual { residual: f64, tol: f64 },
    #[error("non-finite value in system")]
    NonFinite,
}

/// Square sparsity pattern with sorted column indices.
#[derive(Debug)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    symbolic: OnceLock<Result<SymbolicLlt<usize>, String>>,
}

impl SparsityPattern {
    /// Builds the pattern from per-row column lists (need not be sorted).
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().is_none_or(|&c| c < n));
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        SparsityPattern { n, row_ptr, col_idx, symbolic: OnceLock::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Storage index of entry `(i, j)`, if present in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&j).ok().map(|k| start + k)
    }

    fn symbolic(&self) -> Result<SymbolicLlt<usize>, SolveError> {
        self.symbolic
            .get_or_init(|| {
                let sym = SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.row_ptr, None, &self.col_idx);
                SymbolicLlt::try_new(sym, Side::Lower).map_err(|e| format!("{e:?}"))
            })
            .clone()
            .map_err(SolveError::Factorization)
    }
}

/// Matrix and right-hand side sharing a pattern.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pattern: Arc<SparsityPattern>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let (n, nnz) = (pattern.n(), pattern.nnz());
        SparseSystem { pattern, values: vec![0.0; nnz], rhs: vec![0.0; n] }
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    /// Adds `v` to entry `(i, j)`; the entry must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.pattern.position(i, j).expect("entry outside sparsity pattern");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        (0..p.n())
            .map(|i| {
                let (s, e) = (p.row_ptr[i], p.row_ptr[i + 1]);
                (s..e).map(|k| self.values[k] * x[p.col_idx[k]]).sum()
            })
            .collect()
    }

    /// Largest asymmetry `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let mut worst = 0.0f64;
        for i in 0..p.n() {
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                let j = p.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Imposes `x_d = g` for every `(d, g)` by symmetric elimination: the
    /// couplings move to the right-hand side, pinned rows and columns become
    /// identity rows and columns. The pattern is kept intact.
    pub fn eliminate_dirichlet(&mut self, pins: &BTreeMap<usize, f64>) {
        if pins.is_empty() {
            return;
        }
        let p = Arc::clone(&self.pattern);
        for (&d, &g) in pins {
            for k in p.row_ptr[d]..p.row_ptr[d + 1] {
                let j = p.col_idx[k];
                if j != d && !pins.contains_key(&j) {
                    let kj = p.position(j, d).expect("pattern is symmetric");
                    self.rhs[j] -= self.values[kj] * g;
                    self.values[kj] = 0.0;
                }
            }
        }
        for (&d, &g) in pins {
            for k in p.row_ptr[d]..p.row_ptr[d + 1] {
                let j = p.col_idx[k];
                self.values[k] = if j == d { 1.0 } else { 0.0 };
            }
            self.rhs[d] = g;
        }
    }
}

fn sequential() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(Par::Seq));
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the symmetric positive definite system by sparse Cholesky with up
/// to three steps of iterative refinement. Fails if the relative residual
/// stays above `tol`.
pub fn solve(system: &SparseSystem, tol: f64) -> Result<Vec<f64>, SolveError> {
    sequential();
    let n = system.n();
    if system.values.iter().chain(&system.rhs).any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite);
    }
    let bnorm = norm(&system.rhs);
    if n == 0 || bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let p = &system.pattern;
    let symbolic = p.symbolic()?;
    let sym = SymbolicSparseColMatRef::new_checked(n, n, &p.row_ptr, None, &p.col_idx);
    let mat = SparseColMatRef::new(sym, &system.values);
    let llt = Llt::try_new_with_symbolic(symbolic, mat, Side::Lower).map_err(|e| match e {
        faer::sparse::linalg::LltError::Numeric(faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot {
            index,
        }) => SolveError::NotPositiveDefinite(index),
        other => SolveError::Factorization(format!("{other:?}")),
    })?;

    let solve_rhs = |r: &[f64]| -> Vec<f64> {
        let mut b = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
        llt.solve_in_place_with_conj(Conj::No, b.as_mut());
        (0..n).map(|i| b[(i, 0)]).collect()
    };
    let mut x = solve_rhs(&system.rhs);
    let mut residual = f64::INFINITY;
    for _ in 0..4 {
        let ax = system.matvec(&x);
        let r: Vec<f64> = system.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        residual = norm(&r) / bnorm;
        if !residual.is_finite() {
            return Err(SolveError::NonFinite);
        }
        if residual <= tol {
            return Ok(x);
        }
        let dx = solve_rhs(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
    }
    Err(SolveError::Residual { residual, tol })
}
