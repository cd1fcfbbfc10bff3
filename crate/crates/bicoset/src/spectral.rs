//! Averaging operators and their norms on the mean-zero subspace.
//!
//! Two operator families: the bipartite averaging operator of a coset graph
//! (symmetric, so its norm is sqrt of the top eigenvalue of A^2) and the
//! Cayley averaging operator f(g) -> (1/|S|) sum_s f(sg) on a full group
//! index (not symmetric in general, so norms go through M^T M). Both
//! preserve the relevant trivial subspace (constants per part / global
//! constants), which keeps the restriction to l^2_0 well-defined.
//!
//! Norms come from power iteration on the positive semidefinite composite
//! with re-projection each step, or from a dense symmetric eigensolve when
//! the dimension is small enough. Both paths are exposed so tests can hold
//! them against each other.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cosetgraph::BipartiteCosetGraph;
use crate::error::{Error, Result};
use crate::field::FieldCtx;
use crate::group::{self, GroupIndex, ProjMat};

/// Dimension at or below which `operator_norm_l20` uses the dense path.
pub const DEFAULT_DENSE_CAP: usize = 4000;
pub const DEFAULT_NORM_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: u64 = 100_000;

/// An operator together with the projection defining its l^2_0 restriction.
/// `apply_gram` is the PSD composite whose top eigenvalue is the squared
/// restricted norm: A^2 for symmetric operators, M^T M otherwise.
pub trait L20Operator {
    fn dim(&self) -> usize;
    fn apply(&self, src: &[f64], dst: &mut [f64]);
    fn apply_transpose(&self, src: &[f64], dst: &mut [f64]);
    fn project(&self, v: &mut [f64]);

    fn apply_gram(&self, src: &[f64], dst: &mut [f64], scratch: &mut [f64]) {
        self.apply(src, scratch);
        self.apply_transpose(scratch, dst);
    }
}

fn block_project(v: &mut [f64], blocks: &[std::ops::Range<usize>]) {
    for b in blocks {
        let len = (b.end - b.start) as f64;
        let mean: f64 = v[b.clone()].iter().sum::<f64>() / len;
        for x in &mut v[b.clone()] {
            *x -= mean;
        }
    }
}

/// The bipartite averaging operator on functions on L ∪ R (left block
/// first). Requires the same degree throughout; that makes it symmetric.
pub struct BipartiteOperator<'g> {
    graph: &'g BipartiteCosetGraph,
    degree: usize,
}

impl<'g> BipartiteOperator<'g> {
    pub fn new(graph: &'g BipartiteCosetGraph) -> Result<Self> {
        let mut degrees = (0..graph.n_left)
            .map(|i| graph.neighbors_left(i as u32).len())
            .chain((0..graph.n_right).map(|j| graph.neighbors_right(j as u32).len()));
        let d = degrees.next().ok_or_else(|| {
            Error::Precondition("empty graph has no averaging operator".into())
        })?;
        if d == 0 || !degrees.all(|e| e == d) {
            return Err(Error::Precondition(
                "bipartite averaging operator needs a d-regular graph".into(),
            ));
        }
        Ok(BipartiteOperator { graph, degree: d })
    }
}

impl L20Operator for BipartiteOperator<'_> {
    fn dim(&self) -> usize {
        self.graph.n_left + self.graph.n_right
    }

    fn apply(&self, src: &[f64], dst: &mut [f64]) {
        let (nl, inv_d) = (self.graph.n_left, 1.0 / self.degree as f64);
        for i in 0..nl {
            let s: f64 = self
                .graph
                .neighbors_left(i as u32)
                .iter()
                .map(|&j| src[nl + j as usize])
                .sum();
            dst[i] = s * inv_d;
        }
        for j in 0..self.graph.n_right {
            let s: f64 = self
                .graph
                .neighbors_right(j as u32)
                .iter()
                .map(|&i| src[i as usize])
                .sum();
            dst[nl + j] = s * inv_d;
        }
    }

    fn apply_transpose(&self, src: &[f64], dst: &mut [f64]) {
        // Symmetric by d-regularity.
        self.apply(src, dst);
    }

    fn project(&self, v: &mut [f64]) {
        let nl = self.graph.n_left;
        block_project(v, &[0..nl, nl..nl + self.graph.n_right]);
    }
}

/// The Cayley averaging operator f(g) -> (1/|S|) sum_{s in S} f(sg), stored
/// as one index permutation per generator. The transpose averages over
/// inverse generators.
pub struct CayleyOperator {
    n: usize,
    perms: Vec<Vec<u32>>,
    inv_perms: Vec<Vec<u32>>,
}

impl CayleyOperator {
    pub fn new(ctx: &FieldCtx, index: &GroupIndex, gens: &[ProjMat]) -> Result<Self> {
        if gens.is_empty() {
            return Err(Error::Precondition("empty generator list".into()));
        }
        let build = |s: ProjMat| -> Result<Vec<u32>> {
            index
                .elements()
                .iter()
                .map(|&g| {
                    index
                        .index_of(&group::mul(ctx, s, g))
                        .ok_or_else(|| Error::Math("generator left the group index".into()))
                })
                .collect()
        };
        let mut perms = Vec::with_capacity(gens.len());
        let mut inv_perms = Vec::with_capacity(gens.len());
        for &s in gens {
            perms.push(build(s)?);
            inv_perms.push(build(group::inv(ctx, s))?);
        }
        Ok(CayleyOperator { n: index.order(), perms, inv_perms })
    }

    fn avg(&self, tables: &[Vec<u32>], src: &[f64], dst: &mut [f64]) {
        let inv_k = 1.0 / tables.len() as f64;
        dst.fill(0.0);
        for t in tables {
            for (d, &i) in dst.iter_mut().zip(t.iter()) {
                *d += src[i as usize];
            }
        }
        for d in dst.iter_mut() {
            *d *= inv_k;
        }
    }
}

impl L20Operator for CayleyOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, src: &[f64], dst: &mut [f64]) {
        self.avg(&self.perms, src, dst);
    }

    fn apply_transpose(&self, src: &[f64], dst: &mut [f64]) {
        self.avg(&self.inv_perms, src, dst);
    }

    fn project(&self, v: &mut [f64]) {
        block_project(v, &[0..self.n]);
    }
}

/// Exposed so callers can project vectors consistently with an operator.
pub fn project_l20(op: &dyn L20Operator, v: &mut [f64]) {
    op.project(v);
}

/// A norm estimate and how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub method: String,
    pub iterations: u64,
    /// ||gram v - lambda v|| at the returned eigenpair; 0 for the dense path.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub tol: f64,
    pub max_iter: u64,
    pub restarts: u32,
    pub seed: u64,
    pub dense_cap: usize,
}

impl Default for NormParams {
    fn default() -> Self {
        NormParams {
            tol: DEFAULT_NORM_TOL,
            max_iter: DEFAULT_MAX_ITER,
            restarts: 3,
            seed: 0,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Power iteration on the projected PSD composite. Convergence requires the
/// Rayleigh quotient to move by less than tol (relative) for 10 consecutive
/// steps with the eigenpair residual below sqrt(tol); the best of `restarts`
/// seeded starts wins. Returns the operator norm (square root of the
/// composite's top eigenvalue). The residual bounds the eigenvalue error:
/// the top gram eigenvalue lies within residual^2 / gap of the estimate.
pub fn power_norm(op: &dyn L20Operator, params: &NormParams) -> NormEstimate {
    let n = op.dim();
    let mut best_lambda = 0.0f64;
    let mut best_vec: Option<Vec<f64>> = None;
    let mut total_iters = 0u64;
    let mut converged_all = true;
    for restart in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(restart as u64));
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        op.project(&mut v);
        let nv = norm2(&v);
        if nv < 1e-300 {
            continue;
        }
        for x in &mut v {
            *x /= nv;
        }
        let mut w = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut lambda = 0.0f64;
        let mut stable = 0u32;
        let mut converged = false;
        let res_cap = params.tol.sqrt();
        while total_iters < params.max_iter {
            total_iters += 1;
            op.apply_gram(&v, &mut w, &mut scratch);
            op.project(&mut w);
            let new_lambda = dot(&v, &w);
            let mut res_sq = 0.0;
            for (wi, vi) in w.iter().zip(&v) {
                let r = wi - new_lambda * vi;
                res_sq += r * r;
            }
            let wn = norm2(&w);
            if wn < 1e-300 {
                lambda = 0.0;
                converged = true;
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / wn;
            }
            let rayleigh_stable =
                (new_lambda - lambda).abs() <= params.tol * new_lambda.abs().max(1.0);
            if rayleigh_stable && res_sq.sqrt() <= res_cap {
                stable += 1;
                if stable >= 10 {
                    lambda = new_lambda;
                    converged = true;
                    break;
                }
            } else {
                stable = 0;
            }
            lambda = new_lambda;
        }
        converged_all &= converged;
        if lambda > best_lambda {
            best_lambda = lambda;
            best_vec = Some(v.clone());
        } else if best_vec.is_none() {
            best_vec = Some(v.clone());
        }
    }
    let residual = match &best_vec {
        Some(v) => {
            let mut w = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            op.apply_gram(v, &mut w, &mut scratch);
            op.project(&mut w);
            let r: Vec<f64> = w.iter().zip(v).map(|(wi, vi)| wi - best_lambda * vi).collect();
            norm2(&r)
        }
        None => 0.0,
    };
    NormEstimate {
        value: best_lambda.max(0.0).sqrt(),
        method: "power".into(),
        iterations: total_iters,
        residual,
        converged: converged_all,
    }
}

/// Projected gram matrix P (M^T M) P as a dense symmetric matrix.
fn dense_projected_gram(op: &dyn L20Operator) -> DMatrix<f64> {
    let n = op.dim();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let mut scratch = vec![0.0f64; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        op.apply_gram(&e, &mut w, &mut scratch);
        for i in 0..n {
            g[(i, j)] = w[i];
        }
    }
    // P G P: project every column, then every row.
    let mut buf = vec![0.0f64; n];
    for j in 0..n {
        for i in 0..n {
            buf[i] = g[(i, j)];
        }
        op.project(&mut buf);
        for i in 0..n {
            g[(i, j)] = buf[i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            buf[j] = g[(i, j)];
        }
        op.project(&mut buf);
        for j in 0..n {
            g[(i, j)] = buf[j];
        }
    }
    // Symmetrize away round-off before the eigensolve.
    let gt = g.transpose();
    (g + gt) * 0.5
}

/// Exact restricted norm by dense symmetric eigensolve of P (M^T M) P.
pub fn dense_norm(op: &dyn L20Operator) -> f64 {
    let g = dense_projected_gram(op);
    let eig = g.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .fold(0.0f64, |m, &l| m.max(l))
        .sqrt()
}

/// Norm with automatic path choice: dense at or below `dense_cap`, power
/// iteration above it.
pub fn operator_norm_l20(op: &dyn L20Operator, params: &NormParams) -> NormEstimate {
    if op.dim() <= params.dense_cap {
        NormEstimate {
            value: dense_norm(op),
            method: "dense".into(),
            iterations: 0,
            residual: 0.0,
            converged: true,
        }
    } else {
        power_norm(op, params)
    }
}

/// ||A_0(bipartite)||^2 <= ||A_0(Cayley on S)||, within `slack`.
pub fn verify_coset2cayley(norm_bipartite: f64, norm_cayley_s: f64, slack: f64) -> bool {
    norm_bipartite * norm_bipartite <= norm_cayley_s + slack
}

/// The convex split of the S-average into its S0 part and the boundary
/// terms: ((d-1)/d)^2 ||A_0(S0)|| + (2d-1)/d^2.
pub fn convexity_bound(d: u64, norm_s0: f64) -> f64 {
    let df = d as f64;
    ((df - 1.0) * (df - 1.0) / (df * df)) * norm_s0 + (2.0 * df - 1.0) / (df * df)
}

/// Summary of the three norms a verification run cares about.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub norm_bipartite_a0: f64,
    pub norm_cayley_s_a0: f64,
    pub norm_cayley_s0_a0: f64,
    pub method: String,
    pub iterations: u64,
    pub residual: f64,
}

/// One eigenvalue cluster of the restricted gram operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCluster {
    pub value: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub dim: usize,
    pub clusters: Vec<EigenCluster>,
    pub min_cluster_size: usize,
    /// |Tr(B) + 1 - n/|S|| where B is the restricted gram; both sides count
    /// the same Frobenius mass, so this is a pure consistency number.
    pub trace_error: f64,
    pub ok: bool,
}

/// Spectrum of M^T M restricted to the mean-zero subspace, computed in an
/// explicit orthonormal basis (no artificial zero eigenvalues), clustered by
/// gaps larger than `cluster_tol`. Right translations commute with M, so
/// every eigenspace carries a representation of the group and every cluster
/// must have size at least `min_expected`.
pub fn eigenvalue_multiplicity_check(
    op: &CayleyOperator,
    min_expected: usize,
    cluster_tol: f64,
) -> MultiplicityReport {
    let n = op.dim();
    // Orthonormal basis of the mean-zero subspace: column k (1-based) has
    // 1/sqrt(k(k+1)) in the first k slots and -k/sqrt(k(k+1)) in slot k.
    let mut mv_data = vec![0.0f64; n * (n - 1)];
    let mut col = vec![0.0f64; n];
    let mut out = vec![0.0f64; n];
    for k in 1..n {
        let s = 1.0 / ((k as f64) * (k as f64 + 1.0)).sqrt();
        col.fill(0.0);
        for slot in col.iter_mut().take(k) {
            *slot = s;
        }
        col[k] = -(k as f64) * s;
        op.apply(&col, &mut out);
        mv_data[(k - 1) * n..k * n].copy_from_slice(&out);
    }
    let mv = DMatrix::<f64>::from_vec(n, n - 1, mv_data);
    let b = mv.transpose() * &mv;
    let bt = b.transpose();
    let b = (b + bt) * 0.5;
    let trace_b = b.trace();
    let mut eigs: Vec<f64> = b.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut clusters: Vec<EigenCluster> = Vec::new();
    for &l in &eigs {
        match clusters.last_mut() {
            Some(c) if (l - c.value).abs() <= cluster_tol => {
                c.value = (c.value * c.size as f64 + l) / (c.size as f64 + 1.0);
                c.size += 1;
            }
            _ => clusters.push(EigenCluster { value: l, size: 1 }),
        }
    }
    let min_cluster_size = clusters.iter().map(|c| c.size).min().unwrap_or(0);
    // Frobenius identity: each row of M holds |S| entries of value 1/|S|,
    // so Tr(M^T M) = n/|S|; the trivial subspace contributes exactly 1.
    let k = op.perms.len() as f64;
    let trace_error = (trace_b + 1.0 - n as f64 / k).abs();
    MultiplicityReport {
        dim: n - 1,
        min_cluster_size,
        trace_error,
        ok: min_cluster_size >= min_expected && trace_error < 1e-6 * n as f64,
        clusters,
    }
}

/// All eigenvalues of the projected bipartite operator (dense; tests only).
pub fn bipartite_spectrum(op: &BipartiteOperator) -> Vec<f64> {
    let n = op.dim();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        op.apply(&e, &mut w);
        for i in 0..n {
            a[(i, j)] = w[i];
        }
    }
    let mut buf = vec![0.0f64; n];
    for j in 0..n {
        for i in 0..n {
            buf[i] = a[(i, j)];
        }
        op.project(&mut buf);
        for i in 0..n {
            a[(i, j)] = buf[i];
        }
    }
    for i in 0..n {
        for j in 0..n {
            buf[j] = a[(i, j)];
        }
        op.project(&mut buf);
        for j in 0..n {
            a[(i, j)] = buf[j];
        }
    }
    let at = a.transpose();
    let a = (a + at) * 0.5;
    let mut eigs: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}
