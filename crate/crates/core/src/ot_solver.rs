//! Discrete optimal transport between uniform point clouds.
//!
//! [`solve_ot`] is the inexact proximal-point iteration: Sinkhorn scalings
//! of the kernel `exp(-C/beta)` blended with the previous plan. The exact
//! solver [`exact_ot_small`] enumerates vertices of the transportation
//! polytope and is only meant for tiny instances (tests, diagnostics).

use itertools::Itertools;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
    /// Rows or columns whose embedding had zero norm (similarity taken as 0).
    pub degenerate_rows: usize,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix {
            entries,
            degenerate_rows: 0,
        })
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    entries: Array2<f64>,
}

impl TransportPlan {
    pub fn new(entries: Array2<f64>) -> Self {
        TransportPlan { entries }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }

    /// Largest deviation of a row (column) sum from `1/n` (`1/m`).
    pub fn marginal_error(&self) -> f64 {
        marginal_error(self.entries.view())
    }

    /// Fraction of entries above `rel_threshold * max`.
    pub fn nonzero_fraction(&self, rel_threshold: f64) -> f64 {
        nonzero_fraction(self.entries.view(), rel_threshold)
    }
}

pub fn marginal_error(plan: ArrayView2<f64>) -> f64 {
    let (n, m) = plan.dim();
    let rows = plan
        .sum_axis(Axis(1))
        .iter()
        .map(|s| (s - 1.0 / n as f64).abs())
        .fold(0.0, f64::max);
    let cols = plan
        .sum_axis(Axis(0))
        .iter()
        .map(|s| (s - 1.0 / m as f64).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

pub fn nonzero_fraction(matrix: ArrayView2<f64>, rel_threshold: f64) -> f64 {
    let max = matrix.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = rel_threshold * max;
    let count = matrix.iter().filter(|&&x| x > cut).count();
    count as f64 / matrix.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtConfig {
    /// Inverse of the proximal step size.
    pub beta: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Marginal tolerance for a plan to count as feasible.
    pub tolerance: f64,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            beta: 0.5,
            outer_iters: 50,
            inner_iters: 1,
            tolerance: 1e-2,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.outer_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidArgument(
                "outer and inner iteration counts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `C_ij = 1 - cos(x_i, y_j)`. Zero-norm rows have similarity 0 (cost 1).
pub fn cosine_cost(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<CostMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!(
            "cosine cost: feature dims {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let norms = |a: ArrayView2<f64>| -> Array1<f64> {
        a.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    };
    let (nx, ny) = (norms(x), norms(y));
    let degenerate = nx.iter().chain(ny.iter()).filter(|&&n| n == 0.0).count();
    let dots = x.dot(&y.t());
    let entries = Array2::from_shape_fn(dots.dim(), |(i, j)| {
        let denom = nx[i] * ny[j];
        let sim = if denom > 0.0 { dots[[i, j]] / denom } else { 0.0 };
        (1.0 - sim).clamp(0.0, 2.0)
    });
    Ok(CostMatrix {
        entries,
        degenerate_rows: degenerate,
    })
}

/// Inexact proximal-point OT with uniform marginals `1/n`, `1/m`.
pub fn solve_ot(cost: &CostMatrix, cfg: &OtConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    let c = cost.entries();
    let (n, m) = c.dim();
    if n == 0 || m == 0 {
        return Err(Error::Shape("transport between empty supports".into()));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
    }
    let kernel = c.mapv(|x| (-x / cfg.beta).exp());
    if kernel.iter().any(|&a| a == 0.0 || !a.is_finite()) {
        return Err(Error::Numerical(format!(
            "exp(-C/beta) underflows at beta = {}; use a larger beta",
            cfg.beta
        )));
    }
    let (nf, mf) = (n as f64, m as f64);
    let mut sigma = Array1::from_elem(m, 1.0 / mf);
    let mut delta = Array1::zeros(n);
    let mut plan = Array2::<f64>::ones((n, m));
    for _ in 0..cfg.outer_iters {
        let q = &kernel * &plan;
        for _ in 0..cfg.inner_iters {
            delta = q.dot(&sigma).mapv(|s| 1.0 / (nf * s));
            sigma = q.t().dot(&delta).mapv(|s| 1.0 / (mf * s));
        }
        if delta.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(
                "non-finite scaling vector in OT iteration; use a larger beta".into(),
            ));
        }
        plan = q;
        for (i, mut row) in plan.rows_mut().into_iter().enumerate() {
            let d = delta[i];
            row.iter_mut().zip(sigma.iter()).for_each(|(t, s)| *t *= d * s);
        }
    }
    Ok(TransportPlan { entries: plan })
}

/// `sum_ij T_ij C_ij`.
pub fn transport_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.shape() != cost.shape() {
        return Err(Error::Shape(format!(
            "plan {:?} vs cost {:?}",
            plan.shape(),
            cost.shape()
        )));
    }
    Ok((plan.entries() * cost.entries()).sum())
}

/// Largest supported side for [`exact_ot_small`].
pub const EXACT_MAX_SIDE: usize = 4;

/// Exact OT by enumerating spanning-tree bases of the transportation
/// polytope. Returns the cheapest basic feasible solution (first in
/// enumeration order on ties), which has at most `n + m - 1` nonzeros.
pub fn exact_ot_small(cost: &CostMatrix) -> Result<TransportPlan> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Err(Error::Shape("transport between empty supports".into()));
    }
    if n > EXACT_MAX_SIDE || m > EXACT_MAX_SIDE {
        return Err(Error::InvalidArgument(format!(
            "exact OT supports at most {EXACT_MAX_SIDE}x{EXACT_MAX_SIDE}, got {n}x{m}"
        )));
    }
    let cells: Vec<(usize, usize)> = (0..n).cartesian_product(0..m).collect();
    let c = cost.entries();
    let mut best: Option<(f64, Array2<f64>)> = None;
    for basis in cells.iter().copied().combinations(n + m - 1) {
        let Some(flow) = basis_flow(n, m, &basis) else {
            continue;
        };
        if flow.iter().any(|&f| f < -1e-12) {
            continue;
        }
        let plan = flow.mapv(|f| f.max(0.0));
        let total = (&plan * c).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b - 1e-15) {
            best = Some((total, plan));
        }
    }
    let (_, plan) = best.ok_or_else(|| Error::Numerical("no basic feasible solution".into()))?;
    Ok(TransportPlan { entries: plan })
}

/// Unique flow on a spanning tree of the bipartite row/column graph, or
/// `None` if the cells contain a cycle.
fn basis_flow(n: usize, m: usize, basis: &[(usize, usize)]) -> Option<Array2<f64>> {
    // union-find over rows 0..n and columns n..n+m
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(i, j) in basis {
        let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
        if a == b {
            return None;
        }
        parent[a] = b;
    }

    // peel leaves: a vertex with one remaining cell fixes that cell's flow
    let mut residual: Vec<f64> = (0..n)
        .map(|_| 1.0 / n as f64)
        .chain((0..m).map(|_| 1.0 / m as f64))
        .collect();
    let mut remaining: Vec<(usize, usize)> = basis.to_vec();
    let mut flow = Array2::zeros((n, m));
    while !remaining.is_empty() {
        let mut degree = vec![0usize; n + m];
        for &(i, j) in &remaining {
            degree[i] += 1;
            degree[n + j] += 1;
        }
        let pos = remaining
            .iter()
            .position(|&(i, j)| degree[i] == 1 || degree[n + j] == 1)?;
        let (i, j) = remaining.swap_remove(pos);
        let (leaf, other) = if degree[i] == 1 { (i, n + j) } else { (n + j, i) };
        let f = residual[leaf];
        flow[[i, j]] = f;
        residual[leaf] = 0.0;
        residual[other] -= f;
    }
    Some(flow)
}
