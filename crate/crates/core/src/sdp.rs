//! Gain synthesis: maximize the smallest eigenvalue of the reduced closed-loop
//! matrix over the structured edge gains, subject to the invariance
//! constraints.
//!
//! The equality constraints are eliminated by an explicit nullspace
//! parameterization, so every iterate is feasible; the remaining concave
//! eigenvalue maximization over a norm ball is solved by projected
//! supergradient ascent with a Polyak-style step and iterate averaging.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::{orthogonal_complement, InvarianceBasis};
use crate::error::{CoreError, Result};
use crate::model::{assemble_aggregate, FormationSpec, GainBlock, GainSet};

/// Feasibility tolerance on the invariance constraints.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Relative singular-value threshold for the kernel-dimension check.
pub const KERNEL_TOL: f64 = 1e-9;

/// Ordered gain-variable layout: for each directed edge, three consecutive
/// coefficients (horizontal diagonal, horizontal skew, vertical).
#[derive(Debug, Clone)]
pub struct VariableLayout {
    directed_edges: Vec<(usize, usize)>,
}

impl VariableLayout {
    pub fn from_graph(graph: &crate::model::SensingGraph) -> Self {
        Self {
            directed_edges: graph.directed_edges(),
        }
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.directed_edges
    }

    pub fn var_count(&self) -> usize {
        3 * self.directed_edges.len()
    }

    pub fn gain_set(
        &self,
        graph: &crate::model::SensingGraph,
        g: &DVector<f64>,
    ) -> Result<GainSet> {
        if g.len() != self.var_count() {
            return Err(CoreError::InvalidConfig(format!(
                "gain vector has {} entries, layout expects {}",
                g.len(),
                self.var_count()
            )));
        }
        let mut blocks = std::collections::BTreeMap::new();
        for (e, &(i, j)) in self.directed_edges.iter().enumerate() {
            blocks.insert((i, j), GainBlock::new(g[3 * e], g[3 * e + 1], g[3 * e + 2]));
        }
        GainSet::new(graph, blocks)
    }

    pub fn to_vector(&self, gains: &GainSet) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(self.var_count());
        for (e, &(i, j)) in self.directed_edges.iter().enumerate() {
            let block = gains.block(i, j).ok_or_else(|| {
                CoreError::GainDomainMismatch(format!("missing block ({i}, {j})"))
            })?;
            g[3 * e] = block.a;
            g[3 * e + 1] = block.b;
            g[3 * e + 2] = block.c;
        }
        Ok(g)
    }
}

/// The structured eigenvalue-maximization problem for one formation.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub spec: FormationSpec,
    pub basis: InvarianceBasis,
    pub layout: VariableLayout,
    /// Radius of the gain-vector norm ball. The objective is positively
    /// homogeneous, so this only sets the closed-loop time scale.
    pub rho: f64,
}

impl SdpProblem {
    pub fn new(spec: FormationSpec, basis: InvarianceBasis, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "normalization radius must be positive, got {rho}"
            )));
        }
        let layout = VariableLayout::from_graph(spec.graph());
        Ok(Self {
            spec,
            basis,
            layout,
            rho,
        })
    }

    /// Default radius: sqrt of the undirected edge count.
    pub fn default_rho(spec: &FormationSpec) -> f64 {
        (spec.graph().edge_count() as f64).sqrt()
    }
}

/// Solver knobs.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Independent random restarts; the best result is returned.
    pub restarts: usize,
    /// Iteration cap per restart.
    pub max_iterations: usize,
    /// Relative target-level tolerance at which a restart is considered
    /// stationary.
    pub gap_tol: f64,
    /// Seed for the restart initializers.
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iterations: 20_000,
            gap_tol: 1e-4,
            seed: 0,
        }
    }
}

/// Synthesized gains plus the certificates a caller needs to trust them.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub gains: GainSet,
    /// Smallest eigenvalue of the reduced, symmetrized closed-loop matrix,
    /// recomputed from the returned gains.
    pub objective: f64,
    /// Total iterations across restarts.
    pub iterations: usize,
    /// Max-entry residual of the invariance constraints on the returned gains.
    pub residual: f64,
    /// True when some restart exhausted its iteration cap before reaching the
    /// stationarity tolerance.
    pub hit_iteration_cap: bool,
}

/// Post-hoc verification report; failures are reported, not thrown, so this
/// can be used as an oracle on hand-written gains.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    /// Max-entry residual of A applied to the invariant directions.
    pub residual: f64,
    /// Smallest eigenvalue of the reduced symmetrized closed-loop matrix.
    pub margin: f64,
    /// Numerical kernel dimension of the aggregate gain matrix.
    pub kernel_dim: usize,
    /// Rank of the invariant-direction matrix; the kernel must match it.
    pub expected_kernel_dim: usize,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.residual <= FEASIBILITY_TOL
            && self.margin > 0.0
            && self.kernel_dim == self.expected_kernel_dim
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "constraint residual : {:.3e}", self.residual)?;
        writeln!(f, "lambda_1 margin     : {:.6e}", self.margin)?;
        writeln!(
            f,
            "kernel dimension    : {} (expected {})",
            self.kernel_dim, self.expected_kernel_dim
        )?;
        write!(
            f,
            "verdict             : {}",
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Assembles the aggregate gain matrix directly from a flat gain vector.
fn assemble_from_vector(
    spec: &FormationSpec,
    layout: &VariableLayout,
    g: &DVector<f64>,
) -> DMatrix<f64> {
    let n = spec.agent_count();
    let mut a = DMatrix::zeros(3 * n, 3 * n);
    for (e, &(i, j)) in layout.directed_edges().iter().enumerate() {
        let block = GainBlock::new(g[3 * e], g[3 * e + 1], g[3 * e + 2]).materialize();
        a.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&block);
        let mut diag = a.fixed_view_mut::<3, 3>(3 * i, 3 * i);
        diag -= block;
    }
    a
}

/// Builds an affine parameterization of all gain vectors satisfying the
/// invariance constraints: a particular point (zero) and an orthonormal basis
/// of the homogeneous solutions.
///
/// Only the three formation-derived constraint vectors bind; the axis
/// translations are annihilated structurally by the diagonal blocks.
pub fn affine_feasible_basis(p: &SdpProblem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nv = p.layout.var_count();
    let n = p.spec.agent_count();
    let dirs = p.basis.invariant_directions();

    // Constraint matrix: variable -> stacked action of A on the three
    // formation-derived invariant directions.
    let mut c = DMatrix::zeros(9 * n, nv);
    for (e, &(i, j)) in p.layout.directed_edges().iter().enumerate() {
        for target in 0..3 {
            let col = dirs.column(target);
            let wx = col[3 * j] - col[3 * i];
            let wy = col[3 * j + 1] - col[3 * i + 1];
            let wz = col[3 * j + 2] - col[3 * i + 2];
            let row0 = 3 * n * target + 3 * i;
            // coefficient a: identity on the horizontal plane
            c[(row0, 3 * e)] = wx;
            c[(row0 + 1, 3 * e)] = wy;
            // coefficient b: quarter-turn on the horizontal plane
            c[(row0, 3 * e + 1)] = -wy;
            c[(row0 + 1, 3 * e + 1)] = wx;
            // coefficient c: vertical scaling
            c[(row0 + 2, 3 * e + 2)] = wz;
        }
    }

    // Row-space basis by a Gram-Schmidt sweep, then its canonical orthogonal
    // complement is the homogeneous solution space. The sweep (rather than an
    // SVD) keeps the complement orthogonal to every constraint row at machine
    // precision even when the spectrum of C repeats, so feasibility of the
    // parameterization is exact up to roundoff.
    let rows: Vec<DVector<f64>> = (0..c.nrows()).map(|r| c.row(r).transpose()).collect();
    let range = crate::basis::orthonormal_span(&rows);
    let rank = range.len();
    if nv == rank {
        return Err(CoreError::InfeasibleStructure);
    }
    let mut row_space = DMatrix::zeros(nv, rank);
    for (c_idx, v) in range.iter().enumerate() {
        row_space.set_column(c_idx, v);
    }
    let hom = orthogonal_complement(&row_space, nv - rank);
    Ok((DVector::zeros(nv), hom))
}

/// Smallest eigenvalue of a symmetric matrix together with the rank-one
/// supergradient v v^T built from a unit eigenvector of it.
pub fn min_eig_and_subgradient(m: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let max_asym = (m - m.transpose()).amax();
    let tol = 1e-12 * m.amax().max(1.0);
    if max_asym > tol.max(1e-12) {
        return Err(CoreError::NotSymmetric {
            max_asym,
            tol: 1e-12,
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut arg = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[arg] {
            arg = i;
        }
    }
    let v = eig.eigenvectors.column(arg).clone_owned();
    let g = &v * v.transpose();
    Ok((eig.eigenvalues[arg], g))
}

/// Objective of the reduced problem at a gain vector: the smallest eigenvalue
/// of minus the symmetrized restriction of the closed loop to the complement
/// subspace.
pub fn objective(p: &SdpProblem, g: &DVector<f64>) -> f64 {
    let (f, _) = objective_with_supergradient(p, g);
    f
}

/// Objective plus its supergradient pulled back to gain space via the chain
/// rule through the reduction map.
pub fn objective_with_supergradient(p: &SdpProblem, g: &DVector<f64>) -> (f64, DVector<f64>) {
    let a = assemble_from_vector(&p.spec, &p.layout, g);
    let q = p.basis.complement();
    let reduced = -(q.transpose() * (&a + a.transpose()) * q) * 0.5;
    let (f, vvt) = min_eig_and_subgradient(&reduced).expect("reduced matrix is symmetric");

    // d f / d g_e = <v v^T, -sym(Q^T A(e_var) Q)>, evaluated per variable.
    let w = q * &vvt * q.transpose(); // 3n x 3n, symmetric
    let mut grad = DVector::zeros(p.layout.var_count());
    for (e, &(i, j)) in p.layout.directed_edges().iter().enumerate() {
        // A(e) has block E at (i, j) and -E at (i, i); the inner product with
        // the symmetrized pullback only needs two 3x3 windows of w.
        let wij = w.fixed_view::<3, 3>(3 * i, 3 * j).clone_owned();
        let wii = w.fixed_view::<3, 3>(3 * i, 3 * i).clone_owned();
        let d = wij - wii;
        grad[3 * e] = -(d[(0, 0)] + d[(1, 1)]);
        grad[3 * e + 1] = -(d[(1, 0)] - d[(0, 1)]);
        grad[3 * e + 2] = -d[(2, 2)];
    }
    (f, grad)
}

/// Reduced-coordinate evaluation data: the objective restricted to the
/// feasible subspace, as a linear matrix pencil.
struct ReducedPencil {
    /// m x k^2; row per feasible direction, columns the flattened reduced
    /// matrices.
    stack: DMatrix<f64>,
    k: usize,
}

impl ReducedPencil {
    fn build(p: &SdpProblem, hom: &DMatrix<f64>) -> Self {
        let q = p.basis.complement();
        let k = q.ncols();
        let m = hom.ncols();
        let mut stack = DMatrix::zeros(m, k * k);
        for c in 0..m {
            let g = hom.column(c).clone_owned();
            let a = assemble_from_vector(&p.spec, &p.layout, &g);
            let reduced = -(q.transpose() * (&a + a.transpose()) * q) * 0.5;
            for (idx, val) in reduced.as_slice().iter().enumerate() {
                stack[(c, idx)] = *val;
            }
        }
        Self { stack, k }
    }

    fn eval(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let flat = self.stack.tr_mul(theta);
        let mat = DMatrix::from_column_slice(self.k, self.k, flat.as_slice());
        let eig = SymmetricEigen::new(mat);
        let mut arg = 0;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i] < eig.eigenvalues[arg] {
                arg = i;
            }
        }
        let v = eig.eigenvectors.column(arg);
        let mut vvt = DVector::zeros(self.k * self.k);
        for col in 0..self.k {
            for row in 0..self.k {
                vvt[col * self.k + row] = v[row] * v[col];
            }
        }
        let grad = &self.stack * vvt;
        (eig.eigenvalues[arg], grad)
    }
}

fn project_ball(theta: &mut DVector<f64>, rho: f64) {
    let norm = theta.norm();
    if norm > rho {
        *theta *= rho / norm;
    }
}

struct RestartOutcome {
    theta: DVector<f64>,
    objective: f64,
    iterations: usize,
    hit_cap: bool,
}

/// One projected supergradient ascent run with Polyak-style target levels and
/// iterate averaging.
fn ascend(
    pencil: &ReducedPencil,
    rho: f64,
    theta0: DVector<f64>,
    opts: &SolveOptions,
) -> RestartOutcome {
    const STALL_WINDOW: usize = 100;
    const AVG_EVERY: usize = 32;

    let mut theta = theta0;
    project_ball(&mut theta, rho);
    let (f0, g0) = pencil.eval(&theta);
    let mut f_best = f0;
    let mut theta_best = theta.clone();

    // Upper estimate of the attainable improvement: gradient slope across the
    // ball diameter.
    let mut delta = (g0.norm() * rho).max(1e-12);
    // Progress marker: the level delta halves after a window of iterations
    // that never gain at least delta/2 over the mark.
    let mut f_mark = f0;
    let mut since_mark = 0usize;
    let mut avg_sum = theta.clone();
    let mut avg_count = 1usize;
    let mut iterations = 0usize;
    let mut hit_cap = true;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let (f, grad) = pencil.eval(&theta);
        if f > f_best {
            f_best = f;
            theta_best.copy_from(&theta);
        }
        if f >= f_mark + 0.5 * delta {
            f_mark = f;
            since_mark = 0;
        } else {
            since_mark += 1;
        }

        let gn2 = grad.norm_squared();
        if gn2 < 1e-28 {
            hit_cap = false;
            break;
        }
        let target = f_best + delta;
        let step = (target - f) / gn2;
        theta.axpy(step, &grad, 1.0);
        project_ball(&mut theta, rho);

        avg_sum += &theta;
        avg_count += 1;
        if avg_count.is_multiple_of(AVG_EVERY) {
            let mut avg = avg_sum.clone() / avg_count as f64;
            project_ball(&mut avg, rho);
            let (fa, _) = pencil.eval(&avg);
            if fa > f_best {
                f_best = fa;
                theta_best.copy_from(&avg);
            }
        }

        if since_mark >= STALL_WINDOW {
            delta *= 0.5;
            since_mark = 0;
            f_mark = f_best;
            theta.copy_from(&theta_best);
            avg_sum.copy_from(&theta_best);
            avg_count = 1;
            if delta <= opts.gap_tol * f_best.abs().max(1e-9) {
                hit_cap = false;
                break;
            }
        }
    }

    RestartOutcome {
        theta: theta_best,
        objective: f_best,
        iterations,
        hit_cap,
    }
}

/// Maximizes the reduced smallest-eigenvalue objective over the feasible
/// subspace intersected with the norm ball, and returns the best gains found
/// together with recomputed certificates.
pub fn solve(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    let (_, hom) = affine_feasible_basis(p)?;
    let pencil = ReducedPencil::build(p, &hom);
    let m = hom.ncols();

    let restarts = opts.restarts.max(1);
    let mut best: Option<RestartOutcome> = None;
    let mut total_iterations = 0usize;
    let mut hit_cap = false;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed
                .wrapping_add(r as u64)
                .wrapping_mul(0x9E3779B97F4A7C15),
        );
        let mut theta0 = DVector::zeros(m);
        for v in theta0.iter_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let norm = theta0.norm();
        if norm > 0.0 {
            theta0 *= p.rho / norm;
        }
        let outcome = ascend(&pencil, p.rho, theta0, opts);
        total_iterations += outcome.iterations;
        hit_cap |= outcome.hit_cap;
        let better = match &best {
            None => true,
            Some(b) => outcome.objective > b.objective,
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one restart");

    if best.objective <= 0.0 {
        return Err(CoreError::NotStabilizable {
            best: best.objective,
        });
    }

    let g = &hom * &best.theta;
    let gains = p.layout.gain_set(p.spec.graph(), &g)?;

    // Recompute certificates from the returned gains, independent of the
    // solver's bookkeeping.
    let agg = assemble_aggregate(&p.spec, &gains)?;
    let reduced = {
        let q = p.basis.complement();
        -(q.transpose() * (agg.matrix() + agg.matrix().transpose()) * q) * 0.5
    };
    let (objective, _) = min_eig_and_subgradient(&reduced)?;
    let residual = (agg.matrix() * p.basis.invariant_directions()).amax();

    Ok(SdpSolution {
        gains,
        objective,
        iterations: total_iterations,
        residual,
        hit_iteration_cap: hit_cap,
    })
}

/// Recomputes the three stability certificates for a gain set: constraint
/// residual, smallest-eigenvalue margin, and the kernel dimension of the
/// aggregate matrix.
pub fn verify_gains(
    spec: &FormationSpec,
    basis: &InvarianceBasis,
    gains: &GainSet,
) -> Result<VerifyReport> {
    let agg = assemble_aggregate(spec, gains)?;
    let residual = (agg.matrix() * basis.invariant_directions()).amax();

    let q = basis.complement();
    let reduced = -(q.transpose() * (agg.matrix() + agg.matrix().transpose()) * q) * 0.5;
    let (margin, _) = min_eig_and_subgradient(&reduced)?;

    let svd = agg.matrix().clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let rank = if sigma_max > 0.0 {
        svd.singular_values
            .iter()
            .filter(|&&s| s > KERNEL_TOL * sigma_max)
            .count()
    } else {
        0
    };
    let kernel_dim = agg.matrix().nrows() - rank;

    Ok(VerifyReport {
        residual,
        margin,
        kernel_dim,
        expected_kernel_dim: basis.rank(),
    })
}
