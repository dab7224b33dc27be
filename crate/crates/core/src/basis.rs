//! Invariant-direction basis for a formation: the six tangent directions that
//! the control law is allowed to leave free (translations, overall scale,
//! z-rotation, z-scale), and an orthonormal basis of their orthogonal
//! complement, on which stability is imposed.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::model::FormationSpec;

/// Relative singular-value threshold for numerical rank decisions.
const RANK_TOL: f64 = 1e-10;

/// Invariance directions and their orthogonal complement.
#[derive(Debug, Clone)]
pub struct InvarianceBasis {
    /// 3n x 6 matrix whose columns are, in order: the target coordinates, the
    /// coordinates rotated 90 degrees about z, the coordinates projected on
    /// the x-y plane, and the three axis translations.
    invariant_directions: DMatrix<f64>,
    /// 3n x k orthonormal complement of the invariant directions,
    /// k = 3n - rank.
    complement: DMatrix<f64>,
    /// Numerical rank of the invariant-direction matrix.
    rank: usize,
}

impl InvarianceBasis {
    pub fn invariant_directions(&self) -> &DMatrix<f64> {
        &self.invariant_directions
    }

    pub fn complement(&self) -> &DMatrix<f64> {
        &self.complement
    }

    pub fn rank(&self) -> usize {
        self.rank
    }
}

/// Rotates each agent's coordinates 90 degrees about the z-axis:
/// (x, y, z) -> (-y, x, z).
pub fn rotate90_about_z(q: &DVector<f64>) -> Result<DVector<f64>> {
    per_agent(q, |x, y, z| (-y, x, z))
}

/// Projects each agent's coordinates on the x-y plane: (x, y, z) -> (x, y, 0).
pub fn project_xy(q: &DVector<f64>) -> Result<DVector<f64>> {
    per_agent(q, |x, y, _| (x, y, 0.0))
}

fn per_agent(
    q: &DVector<f64>,
    f: impl Fn(f64, f64, f64) -> (f64, f64, f64),
) -> Result<DVector<f64>> {
    if !q.len().is_multiple_of(3) {
        return Err(CoreError::BadAggregateLength(q.len()));
    }
    let mut out = DVector::zeros(q.len());
    for i in 0..q.len() / 3 {
        let (x, y, z) = f(q[3 * i], q[3 * i + 1], q[3 * i + 2]);
        out[3 * i] = x;
        out[3 * i + 1] = y;
        out[3 * i + 2] = z;
    }
    Ok(out)
}

/// The replicated axis direction 1_axis = 1_n (x) e_axis.
pub fn axis_translation(n: usize, axis: usize) -> DVector<f64> {
    let mut v = DVector::zeros(3 * n);
    for i in 0..n {
        v[3 * i + axis] = 1.0;
    }
    v
}

/// Assembles the 3n x 6 invariant-direction matrix for aggregate coordinates
/// `q`: [q, rot90(q), proj_xy(q), 1_x, 1_y, 1_z].
pub fn invariance_matrix(q: &DVector<f64>) -> Result<DMatrix<f64>> {
    if !q.len().is_multiple_of(3) {
        return Err(CoreError::BadAggregateLength(q.len()));
    }
    let n = q.len() / 3;
    let mut m = DMatrix::zeros(3 * n, 6);
    m.set_column(0, q);
    m.set_column(1, &rotate90_about_z(q)?);
    m.set_column(2, &project_xy(q)?);
    for axis in 0..3 {
        m.set_column(3 + axis, &axis_translation(n, axis));
    }
    Ok(m)
}

/// Builds the invariance basis of a formation: assembles the invariant
/// directions, determines their numerical rank, and computes an orthonormal
/// basis of the orthogonal complement.
///
/// The complement has 3n - rank columns. When the directions are rank
/// deficient (horizontally planar formations) this keeps the complement
/// spanning the full orthogonal subspace instead of letting part of the
/// kernel leak into it.
pub fn build_basis(spec: &FormationSpec) -> Result<InvarianceBasis> {
    let n = spec.agent_count();
    if n < 3 {
        return Err(CoreError::TooFewAgents(n));
    }
    let q = spec.aggregate();
    let invariant_directions = invariance_matrix(&q)?;

    // Orthonormal basis of the column space by a Gram-Schmidt sweep. Symmetric
    // formations make the singular values repeat, where dense SVD vectors are
    // not reliable; Gram-Schmidt keeps the complement orthogonal to the span
    // at machine precision regardless.
    let cols: Vec<DVector<f64>> = (0..6)
        .map(|c| invariant_directions.column(c).into_owned())
        .collect();
    let range = orthonormal_span(&cols);
    let rank = range.len();
    if rank < 4 {
        return Err(CoreError::DegenerateFormation { rank });
    }
    let mut range_basis = DMatrix::zeros(3 * n, rank);
    for (c, v) in range.iter().enumerate() {
        range_basis.set_column(c, v);
    }

    let complement = orthogonal_complement(&range_basis, 3 * n - rank);
    Ok(InvarianceBasis {
        invariant_directions,
        complement,
        rank,
    })
}

/// Orthonormal basis of the span of `vectors`, built by a two-pass
/// Gram-Schmidt sweep in input order. A vector whose residual drops below
/// RANK_TOL times the largest input norm counts as dependent and is skipped,
/// so the result length is the numerical rank.
pub(crate) fn orthonormal_span(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    if scale == 0.0 {
        return accepted;
    }
    for v0 in vectors {
        let mut v = v0.clone();
        for _ in 0..2 {
            for w in &accepted {
                let c = w.dot(&v);
                v.axpy(-c, w, 1.0);
            }
        }
        let norm = v.norm();
        if norm > RANK_TOL * scale {
            accepted.push(v / norm);
        }
    }
    accepted
}

/// Extends an orthonormal set to the full space by sweeping the standard
/// basis, and returns the new vectors. Canonical: independent of the sign or
/// order conventions of the SVD that produced `range_basis`.
pub(crate) fn orthogonal_complement(range_basis: &DMatrix<f64>, want: usize) -> DMatrix<f64> {
    let dim = range_basis.nrows();
    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(want);
    for k in 0..dim {
        if accepted.len() == want {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        // Two Gram-Schmidt passes keep orthogonality near machine precision.
        for _ in 0..2 {
            let coeffs = range_basis.transpose() * &v;
            v -= range_basis * coeffs;
            for w in &accepted {
                let c = w.dot(&v);
                v.axpy(-c, w, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            canonicalize_sign(&mut v);
            accepted.push(v);
        }
    }
    assert_eq!(
        accepted.len(),
        want,
        "standard basis sweep must complete the complement"
    );
    let mut out = DMatrix::zeros(dim, want);
    for (c, v) in accepted.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// Fixes the sign so the first entry of visible magnitude is positive.
fn canonicalize_sign(v: &mut DVector<f64>) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            *v = -&*v;
        }
    }
}
