//! Small dense linear algebra: a sign-normalized SVD, orthonormal completion,
//! polar factors and the set of trace maximizers over matrices with
//! orthonormal columns.
//!
//! The maximizer set matters because the block updates of the generalized CCA
//! algorithm are set-valued whenever the cross-product matrix is rank
//! deficient. Every maximizer of `tr(Oᵀ B)` subject to `Oᵀ O = I_r` can be
//! written as
//!
//! ```text
//! O = P₁ Q₁ᵀ + N_P W N_Qᵀ
//! ```
//!
//! where `P₁ D₁ Q₁ᵀ` is the rank-`k` part of the SVD of `B`, `N_P` and `N_Q`
//! complete `P₁` and `Q₁` to orthonormal bases, and `W` ranges over the
//! `(d−k) × (r−k)` matrices with orthonormal columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{MmError, Result};

pub type RealVector = DVector<f64>;
pub type RealMatrix = DMatrix<f64>;

/// Default relative tolerance used to decide the numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Residual below which a canonical basis vector is considered to lie in the
/// span of the vectors already accepted during completion.
const COMPLETION_TOL: f64 = 1e-6;

pub fn ensure_finite_vector(x: &RealVector, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MmError::InvalidInput(format!("{what} has non-finite entries")))
    }
}

pub fn ensure_finite_matrix(m: &RealMatrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MmError::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Frobenius inner product `tr(Aᵀ B)`.
pub fn frobenius_inner(a: &RealMatrix, b: &RealMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Largest absolute entry of `OᵀO − I`.
pub fn stiefel_residual(o: &RealMatrix) -> f64 {
    let gram = o.transpose() * o;
    let id = DMatrix::<f64>::identity(o.ncols(), o.ncols());
    (gram - id).amax()
}

/// Thin singular value decomposition `B = P D Qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// `rows × p` with orthonormal columns, `p = min(rows, cols)`.
    pub left: RealMatrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: RealVector,
    /// `cols × p` with orthonormal columns.
    pub right: RealMatrix,
    pub rank: usize,
}

impl SvdResult {
    pub fn reconstruct(&self) -> RealMatrix {
        let scaled = &self.left * DMatrix::from_diagonal(&self.singular_values);
        scaled * self.right.transpose()
    }
}

/// SVD with a deterministic sign convention: the largest-magnitude entry of
/// each left singular vector is positive, ties going to the lowest row index.
/// The numerical rank counts `σ_l > rank_tol · σ_1`.
pub fn svd(b: &RealMatrix, rank_tol: f64) -> Result<SvdResult> {
    ensure_finite_matrix(b, "matrix")?;
    if !(rank_tol > 0.0) || !rank_tol.is_finite() {
        return Err(MmError::InvalidParameter(format!(
            "rank_tol must be positive, got {rank_tol}"
        )));
    }
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(MmError::Shape("svd of an empty matrix".into()));
    }

    let raw = b.clone().svd_unordered(true, true);
    let u = raw
        .u
        .ok_or_else(|| MmError::Numerical("svd did not return U".into()))?;
    let v_t = raw
        .v_t
        .ok_or_else(|| MmError::Numerical("svd did not return Vᵀ".into()))?;
    let sigma = raw.singular_values;
    let p = sigma.len();

    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps the decomposition's own order among equal values
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let mut left = DMatrix::zeros(b.nrows(), p);
    let mut right = DMatrix::zeros(b.ncols(), p);
    let mut values = DVector::zeros(p);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u.column(src).into_owned();
        let mut vcol = v_t.row(src).transpose();
        if leading_entry_sign(&ucol) < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        left.set_column(dst, &ucol);
        right.set_column(dst, &vcol);
        values[dst] = sigma[src].max(0.0);
    }

    let rank = numerical_rank(&values, rank_tol);
    Ok(SvdResult {
        left,
        singular_values: values,
        right,
        rank,
    })
}

fn numerical_rank(values: &RealVector, rank_tol: f64) -> usize {
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    values.iter().filter(|&&s| s > rank_tol * top).count()
}

/// Sign of the entry with the largest magnitude, lowest index winning ties.
fn leading_entry_sign(v: &RealVector) -> f64 {
    let max = v.amax();
    if max == 0.0 {
        return 1.0;
    }
    let cutoff = max * (1.0 - 1e-12);
    v.iter()
        .find(|x| x.abs() >= cutoff)
        .map(|x| if *x < 0.0 { -1.0 } else { 1.0 })
        .unwrap_or(1.0)
}

/// Completes the orthonormal columns of `basis` (`n × k`) to an orthonormal
/// basis of `ℝⁿ`, returning the `n × (n−k)` complement. Candidates are the
/// canonical basis vectors taken in index order, orthogonalized twice.
pub fn complete_basis(basis: &RealMatrix) -> RealMatrix {
    let n = basis.nrows();
    let k = basis.ncols();
    let mut accepted: Vec<RealVector> = (0..k).map(|j| basis.column(j).into_owned()).collect();
    let mut extra: Vec<RealVector> = Vec::with_capacity(n.saturating_sub(k));

    for idx in 0..n {
        if accepted.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[idx] = 1.0;
        for _ in 0..2 {
            for q in &accepted {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > COMPLETION_TOL {
            v /= norm;
            accepted.push(v.clone());
            extra.push(v);
        }
    }

    if extra.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&extra)
    }
}

/// Polar factor `U Vᵀ` of a tall (`p ≥ q`) matrix: the nearest matrix with
/// orthonormal columns in Frobenius norm, and the maximizer of `tr(Oᵀ M)`.
pub fn polar_factor(m: &RealMatrix) -> Result<RealMatrix> {
    if m.nrows() < m.ncols() {
        return Err(MmError::Shape(format!(
            "polar factor needs rows >= cols, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let s = svd(m, DEFAULT_RANK_TOL)?;
    Ok(&s.left * s.right.transpose())
}

/// Parameterization of `argmax { tr(Oᵀ B) : Oᵀ O = I_r }`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaximizerParameterization {
    /// `P₁ Q₁ᵀ`, the part shared by every maximizer.
    pub base: RealMatrix,
    /// `d × (d−k)` orthonormal complement of the leading left vectors.
    pub null_left: RealMatrix,
    /// `r × (r−k)` orthonormal complement of the leading right vectors.
    pub null_right: RealMatrix,
    /// Numerical rank `k` of `B`.
    pub rank: usize,
    /// `Σ σ_l(B)`, the common trace value of all maximizers.
    pub max_trace: f64,
}

impl MaximizerParameterization {
    pub fn is_singleton(&self) -> bool {
        self.null_right.ncols() == 0
    }

    /// Free dimensions `(d−k, r−k)` of the matrix `W`.
    pub fn free_shape(&self) -> (usize, usize) {
        (self.null_left.ncols(), self.null_right.ncols())
    }

    /// The maximizer `P₁Q₁ᵀ + N_P W N_Qᵀ`. `W` must have orthonormal columns.
    pub fn member(&self, w: &RealMatrix) -> Result<RealMatrix> {
        let (rows, cols) = self.free_shape();
        if w.nrows() != rows || w.ncols() != cols {
            return Err(MmError::Shape(format!(
                "free block must be {rows}x{cols}, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if cols == 0 {
            return Ok(self.base.clone());
        }
        Ok(&self.base + &self.null_left * w * self.null_right.transpose())
    }
}

/// Builds the maximizer set for a `d × r` matrix with `d ≥ r`.
pub fn trace_maximizer_set(b: &RealMatrix, rank_tol: f64) -> Result<MaximizerParameterization> {
    let (d, r) = b.shape();
    if d < r {
        return Err(MmError::Shape(format!(
            "trace maximizer needs rows >= cols, got {d}x{r}"
        )));
    }
    let s = svd(b, rank_tol)?;
    let k = s.rank;
    let p1 = s.left.columns(0, k).into_owned();
    let q1 = s.right.columns(0, k).into_owned();
    let base = &p1 * q1.transpose();
    Ok(MaximizerParameterization {
        base,
        null_left: complete_basis(&p1),
        null_right: complete_basis(&q1),
        rank: k,
        max_trace: s.singular_values.sum(),
    })
}

/// How to pick one element of a set-valued maximizer.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchPolicy {
    /// `W = [I; 0]`.
    Canonical,
    /// The maximizer closest to the target in Frobenius norm.
    NearestTo(RealMatrix),
}

pub fn select_maximizer(
    params: &MaximizerParameterization,
    policy: &BranchPolicy,
) -> Result<RealMatrix> {
    let (rows, cols) = params.free_shape();
    if cols == 0 {
        return Ok(params.base.clone());
    }
    let w = match policy {
        BranchPolicy::Canonical => DMatrix::identity(rows, cols),
        BranchPolicy::NearestTo(target) => {
            if target.shape() != params.base.shape() {
                return Err(MmError::Shape(format!(
                    "target is {}x{}, maximizers are {}x{}",
                    target.nrows(),
                    target.ncols(),
                    params.base.nrows(),
                    params.base.ncols()
                )));
            }
            ensure_finite_matrix(target, "target")?;
            // ‖base + N_P W N_Qᵀ − T‖² is minimized by maximizing tr(Wᵀ N_Pᵀ T N_Q)
            let m = params.null_left.transpose() * target * &params.null_right;
            polar_factor(&m)?
        }
    };
    params.member(&w)
}

/// Convenience: the canonical maximizer of `tr(Oᵀ B)`.
pub fn maximize_trace(b: &RealMatrix, policy: &BranchPolicy) -> Result<RealMatrix> {
    let params = trace_maximizer_set(b, DEFAULT_RANK_TOL)?;
    select_maximizer(&params, policy)
}
