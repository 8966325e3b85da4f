//! Context matching through the transport plan: the plan aligns context
//! rows to each position of the target text (local alignment), then target
//! and aligned features are max-pooled over positions and projected.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Rows are token positions, columns word-embedding features.
pub type EmbeddedSequence = Array2<f64>;

/// Bias-free linear map from pooled features to the semantic embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    /// `d_s x input_dim`.
    pub projection: Array2<f64>,
}

impl AggregatorParams {
    pub fn new(projection: Array2<f64>) -> Self {
        AggregatorParams { projection }
    }

    pub fn output_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.ncols()
    }
}

pub fn embed_sequence(tokens: &[u32], table: ArrayView2<f64>) -> Result<EmbeddedSequence> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot embed an empty token sequence".into()));
    }
    let p = table.ncols();
    let mut out = Array2::zeros((tokens.len(), p));
    for (mut row, &tok) in out.rows_mut().into_iter().zip(tokens) {
        let src = table.row(tok as usize);
        row.assign(&src);
    }
    Ok(out)
}

/// `plan * context`: each target position receives the plan-weighted
/// context rows. No renormalization.
pub fn align_local(plan: ArrayView2<f64>, context: ArrayView2<f64>) -> Result<Array2<f64>> {
    if plan.ncols() != context.nrows() {
        return Err(Error::Shape(format!(
            "plan has {} columns but context has {} rows",
            plan.ncols(),
            context.nrows()
        )));
    }
    Ok(plan.dot(&context))
}

/// Scales each plan row to sum to one.
pub fn renormalize_rows(plan: ArrayView2<f64>) -> Array2<f64> {
    let mut out = plan.to_owned();
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
        }
    }
    out
}

/// Column-wise max over positions of horizontally concatenated blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub values: Array1<f64>,
    /// Winning row per feature; first index on ties.
    pub argmax: Vec<usize>,
}

pub fn max_pool(blocks: &[ArrayView2<f64>]) -> Result<MaxPool> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if rows == 0 || blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::Shape("max-pool blocks need equal, nonzero row counts".into()));
    }
    let width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut values = Vec::with_capacity(width);
    let mut argmax = Vec::with_capacity(width);
    for block in blocks {
        for col in block.columns() {
            let mut best = (0, col[0]);
            for (i, &x) in col.iter().enumerate().skip(1) {
                if x > best.1 {
                    best = (i, x);
                }
            }
            argmax.push(best.0);
            values.push(best.1);
        }
    }
    Ok(MaxPool {
        values: Array1::from(values),
        argmax,
    })
}

pub fn project(params: &AggregatorParams, pooled: ArrayView1<f64>) -> Result<Array1<f64>> {
    if pooled.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "aggregator expects {} pooled features, got {}",
            params.input_dim(),
            pooled.len()
        )));
    }
    Ok(params.projection.dot(&pooled))
}

/// Accumulates `g_out * pooled^T` into `grad_projection` and returns the
/// gradient w.r.t. the pooled vector.
pub fn project_backward(
    params: &AggregatorParams,
    pooled: ArrayView1<f64>,
    g_out: ArrayView1<f64>,
    grad_projection: &mut Array2<f64>,
) -> Array1<f64> {
    for (mut row, &g) in grad_projection.rows_mut().into_iter().zip(g_out) {
        row.scaled_add(g, &pooled);
    }
    params.projection.t().dot(&g_out)
}

/// Concatenate `[s_u | aligned]`, max-pool over positions, project.
pub fn aggregate(
    s_u: ArrayView2<f64>,
    aligned: ArrayView2<f64>,
    params: &AggregatorParams,
) -> Result<Array1<f64>> {
    if s_u.dim() != aligned.dim() {
        return Err(Error::Shape(format!(
            "target {:?} and aligned {:?} differ",
            s_u.dim(),
            aligned.dim()
        )));
    }
    let pooled = max_pool(&[s_u, aligned])?;
    project(params, pooled.values.view())
}
