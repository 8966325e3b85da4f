//! Attention parsing: a one-layer convolutional parser over the raw
//! attention matrix produces one softmax weight per context position; the
//! weighted context row is broadcast to every target position before
//! aggregation (global alignment).
//!
//! The raw matrix is `n_target x n_context`. Logits are obtained by
//! max-pooling over the target axis so that the weight vector indexes the
//! context rows it multiplies.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::mutual_attention::{self, AggregatorParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsingParams {
    /// `h x w x c` filter bank.
    pub filters: Array3<f64>,
    /// Channel-to-logit projection, length `c`.
    pub projection: Array1<f64>,
}

impl ParsingParams {
    pub fn new(filters: Array3<f64>, projection: Array1<f64>) -> Result<Self> {
        let (h, w, c) = filters.dim();
        if h % 2 == 0 || w % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter window must be odd for centered padding, got {h}x{w}"
            )));
        }
        if c == 0 || projection.len() != c {
            return Err(Error::Shape(format!(
                "{c} filter channels with a projection of length {}",
                projection.len()
            )));
        }
        Ok(ParsingParams {
            filters,
            projection,
        })
    }

    pub fn channels(&self) -> usize {
        self.filters.dim().2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAttention {
    /// One weight per context position; sums to one.
    pub weights: Array1<f64>,
    /// `weights^T * context`.
    pub context: Array1<f64>,
}

/// Zero-padded "same" cross-correlation of a single-channel input with each
/// filter, followed by ReLU.
pub fn conv2d_relu(raw: ArrayView2<f64>, params: &ParsingParams) -> Array3<f64> {
    conv2d(raw, params.filters.view()).mapv(|x| x.max(0.0))
}

fn conv2d(raw: ArrayView2<f64>, filters: ArrayView3<f64>) -> Array3<f64> {
    let (n, m) = raw.dim();
    let (h, w, c) = filters.dim();
    let (ph, pw) = ((h / 2) as isize, (w / 2) as isize);
    let mut out = Array3::zeros((n, m, c));
    for r in 0..n {
        for j in 0..m {
            for a in 0..h {
                let y = r as isize + a as isize - ph;
                if y < 0 || y >= n as isize {
                    continue;
                }
                for b in 0..w {
                    let x = j as isize + b as isize - pw;
                    if x < 0 || x >= m as isize {
                        continue;
                    }
                    let v = raw[[y as usize, x as usize]];
                    for ch in 0..c {
                        out[[r, j, ch]] += filters[[a, b, ch]] * v;
                    }
                }
            }
        }
    }
    out
}

/// Max over the target axis, channel projection, stable softmax.
pub fn parse_weights(hidden: ArrayView3<f64>, projection: ArrayView1<f64>) -> Result<Array1<f64>> {
    let pooled = pool_targets(hidden)?;
    if pooled.values.ncols() != projection.len() {
        return Err(Error::Shape(format!(
            "{} channels but projection of length {}",
            pooled.values.ncols(),
            projection.len()
        )));
    }
    Ok(softmax(pooled.values.dot(&projection).view()))
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|x| (x - max).exp());
    let total = exp.sum();
    exp / total
}

/// `weights^T * context`, a convex combination of context rows.
pub fn align_global(weights: ArrayView1<f64>, context: ArrayView2<f64>) -> Result<Array1<f64>> {
    if weights.len() != context.nrows() {
        return Err(Error::Shape(format!(
            "{} weights for {} context rows",
            weights.len(),
            context.nrows()
        )));
    }
    Ok(context.t().dot(&weights))
}

/// Tiles the aligned context over all target positions and aggregates.
pub fn broadcast_aggregate(
    s_u: ArrayView2<f64>,
    aligned: ArrayView1<f64>,
    params: &AggregatorParams,
) -> Result<Array1<f64>> {
    if aligned.len() != s_u.ncols() {
        return Err(Error::Shape(format!(
            "aligned context has {} features, target has {}",
            aligned.len(),
            s_u.ncols()
        )));
    }
    let tiled = aligned
        .broadcast((s_u.nrows(), aligned.len()))
        .expect("broadcast to target rows");
    mutual_attention::aggregate(s_u, tiled, params)
}

struct TargetPool {
    /// `n_context x c`.
    values: Array2<f64>,
    /// Winning target row per (context, channel).
    argmax: Array2<usize>,
}

fn pool_targets(hidden: ArrayView3<f64>) -> Result<TargetPool> {
    let (n, m, c) = hidden.dim();
    if n == 0 || m == 0 {
        return Err(Error::Shape("empty attention matrix".into()));
    }
    let mut values = Array2::zeros((m, c));
    let mut argmax = Array2::zeros((m, c));
    for j in 0..m {
        for ch in 0..c {
            let mut best = (0, hidden[[0, j, ch]]);
            for r in 1..n {
                let x = hidden[[r, j, ch]];
                if x > best.1 {
                    best = (r, x);
                }
            }
            argmax[[j, ch]] = best.0;
            values[[j, ch]] = best.1;
        }
    }
    Ok(TargetPool { values, argmax })
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ParseCache {
    raw: Array2<f64>,
    hidden: Array3<f64>,
    pooled: Array2<f64>,
    argmax: Array2<usize>,
    pub parsed: ParsedAttention,
}

/// Full parser: raw attention (`n_target x n_context`) and context rows to
/// parsed weights and globally aligned context.
pub fn parse_attention(
    raw: ArrayView2<f64>,
    context: ArrayView2<f64>,
    params: &ParsingParams,
) -> Result<ParseCache> {
    if raw.ncols() != context.nrows() {
        return Err(Error::Shape(format!(
            "attention has {} context columns, context has {} rows",
            raw.ncols(),
            context.nrows()
        )));
    }
    let hidden = conv2d_relu(raw, params);
    let pool = pool_targets(hidden.view())?;
    let weights = softmax(pool.values.dot(&params.projection).view());
    let aligned = align_global(weights.view(), context)?;
    Ok(ParseCache {
        raw: raw.to_owned(),
        hidden,
        pooled: pool.values,
        argmax: pool.argmax,
        parsed: ParsedAttention {
            weights,
            context: aligned,
        },
    })
}

/// Parameter gradients of the parser.
#[derive(Debug, Clone)]
pub struct ParseGrads {
    pub filters: Array3<f64>,
    pub projection: Array1<f64>,
    /// Gradient w.r.t. the context rows, `n_context x p`.
    pub context: Array2<f64>,
}

/// Backpropagates `g_aligned` (gradient w.r.t. the aligned context vector).
/// The raw attention matrix is a constant.
pub fn parse_backward(
    cache: &ParseCache,
    context: ArrayView2<f64>,
    params: &ParsingParams,
    g_aligned: ArrayView1<f64>,
) -> ParseGrads {
    let w = &cache.parsed.weights;
    let (h, wid, c) = params.filters.dim();
    let (ph, pw) = ((h / 2) as isize, (wid / 2) as isize);
    let (n, m) = cache.raw.dim();

    // aligned = context^T w
    let mut g_context = Array2::zeros(context.dim());
    for (mut row, &wj) in g_context.rows_mut().into_iter().zip(w.iter()) {
        row.scaled_add(wj, &g_aligned);
    }
    let g_w = context.dot(&g_aligned);
    let inner = w.dot(&g_w);
    let g_logits = w * &(g_w - inner);

    let g_projection = cache.pooled.t().dot(&g_logits);
    let mut g_filters = Array3::zeros(params.filters.dim());
    for j in 0..m {
        for ch in 0..c {
            let r = cache.argmax[[j, ch]];
            // relu gate: zero activations pass no gradient
            if cache.hidden[[r, j, ch]] <= 0.0 {
                continue;
            }
            let g = g_logits[j] * params.projection[ch];
            for a in 0..h {
                let y = r as isize + a as isize - ph;
                if y < 0 || y >= n as isize {
                    continue;
                }
                for b in 0..wid {
                    let x = j as isize + b as isize - pw;
                    if x < 0 || x >= m as isize {
                        continue;
                    }
                    g_filters[[a, b, ch]] += g * cache.raw[[y as usize, x as usize]];
                }
            }
        }
    }
    ParseGrads {
        filters: g_filters,
        projection: g_projection,
        context: g_context,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use proptest::prelude::*;

    fn params(filters: Array3<f64>) -> ParsingParams {
        let c = filters.dim().2;
        ParsingParams::new(filters, Array1::ones(c)).unwrap()
    }

    #[test]
    fn zero_filter_gives_zero() {
        let raw = array![[0.3, 0.1], [0.2, 0.4]];
        let out = conv2d_relu(raw.view(), &params(Array3::zeros((3, 3, 2))));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_kernel() {
        let raw = array![[0.3, 0.1, 0.0], [0.2, 0.4, 0.9]];
        let out = conv2d_relu(raw.view(), &params(Array3::ones((1, 1, 1))));
        assert_eq!(out.slice(s![.., .., 0]), raw);
    }

    #[test]
    fn box_filter_moving_average() {
        let raw = array![[3.0, 6.0, 9.0, 12.0], [1.0, 0.0, 2.0, 4.0]];
        let out = conv2d_relu(raw.view(), &params(Array3::from_elem((1, 3, 1), 1.0 / 3.0)));
        // zero padding at both ends of each row
        let expected = array![[3.0, 6.0, 9.0, 7.0], [1.0 / 3.0, 1.0, 2.0, 2.0]];
        for (a, b) in out.slice(s![.., .., 0]).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn even_filters_rejected() {
        assert!(ParsingParams::new(Array3::zeros((1, 4, 1)), Array1::ones(1)).is_err());
        assert!(ParsingParams::new(Array3::zeros((1, 3, 2)), Array1::ones(1)).is_err());
    }

    #[test]
    fn parse_weight_cases() {
        let constant = Array3::from_elem((3, 3, 2), 0.7);
        let w = parse_weights(constant.view(), array![1.0, -2.0].view()).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let w = softmax(array![0.0, 3f64.ln()].view());
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);

        let huge = softmax(array![1e300, 1e300 - 1e290, -1e300].view());
        assert!((huge.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn align_global_cases() {
        let ctx = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(align_global(array![0.25, 0.75].view(), ctx.view()).unwrap(), array![0.25, 0.75]);
        assert_eq!(align_global(array![0.0, 1.0].view(), ctx.view()).unwrap(), array![0.0, 1.0]);
        let ctx3 = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
        let mean = align_global(Array1::from_elem(3, 1.0 / 3.0).view(), ctx3.view()).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-15 && (mean[1] - 2.0).abs() < 1e-15);
        assert!(align_global(array![1.0].view(), ctx.view()).is_err());
    }

    #[test]
    fn broadcast_aggregate_cases() {
        let agg = AggregatorParams::new(array![[1.0, 1.0, 1.0, 1.0], [0.0, 2.0, -1.0, 0.0]]);
        let one = broadcast_aggregate(array![[1.0, 2.0]].view(), array![3.0, 4.0].view(), &agg)
            .unwrap();
        let direct =
            mutual_attention::aggregate(array![[1.0, 2.0]].view(), array![[3.0, 4.0]].view(), &agg)
                .unwrap();
        assert_eq!(one, direct);

        let s_u = array![[1.0, -1.0], [-2.0, 5.0]];
        let zero = broadcast_aggregate(s_u.view(), array![0.0, 0.0].view(), &agg).unwrap();
        // pooled = [1, 5, 0, 0]
        assert_eq!(zero, array![6.0, 10.0]);

        let two = broadcast_aggregate(s_u.view(), array![0.5, -0.25].view(), &agg).unwrap();
        // pooled = [1, 5, 0.5, -0.25]
        assert_eq!(two, array![6.25, 9.5]);
    }

    fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(lo..hi, rows * cols)
            .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(h in proptest::collection::vec(-1e6..1e6f64, 12), b in proptest::collection::vec(-50.0..50.0f64, 2)) {
            let hidden = Array3::from_shape_vec((2, 3, 2), h).unwrap();
            let w = parse_weights(hidden.view(), Array1::from(b).view()).unwrap();
            prop_assert!((w.sum() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn global_alignment_in_convex_hull(ctx in matrix(4, 3, -5.0, 5.0), logits in proptest::collection::vec(-10.0..10.0f64, 4)) {
            let w = softmax(Array1::from(logits).view());
            let out = align_global(w.view(), ctx.view()).unwrap();
            for (k, col) in ctx.columns().into_iter().enumerate() {
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out[k] >= lo - 1e-12 && out[k] <= hi + 1e-12);
            }
        }

        #[test]
        fn conv_is_nonnegative_and_translation_equivariant(
            raw in matrix(3, 4, -1.0, 1.0),
            f in proptest::collection::vec(-1.0..1.0f64, 3 * 5),
            dy in 0usize..3, dx in 0usize..3,
        ) {
            let p = ParsingParams::new(Array3::from_shape_vec((3, 5, 1), f).unwrap(), Array1::ones(1)).unwrap();
            let out = conv2d_relu(raw.view(), &p);
            prop_assert!(out.iter().all(|&x| x >= 0.0));
            // place the input inside a larger zero canvas; padding radius is (1, 2)
            let mut canvas = Array2::zeros((3 + 2 + 2, 4 + 4 + 2));
            canvas.slice_mut(s![1 + dy..4 + dy, 2 + dx..6 + dx]).assign(&raw);
            let big = conv2d_relu(canvas.view(), &p);
            for r in 0..3 {
                for j in 0..4 {
                    prop_assert!((big[[r + 1 + dy, j + 2 + dx, 0]] - out[[r, j, 0]]).abs() < 1e-12);
                }
            }
        }
    }
}
