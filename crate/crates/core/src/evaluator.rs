//! Link-prediction AUC, linear node classification and run aggregation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::network_data::{Edge, LabelMap, NodeId, TextualNetwork};
use crate::trainer::derive_seed;

/// Draws for a non-neighbor before a test edge is skipped.
pub const NEGATIVE_RETRIES: usize = 100;

/// `(wins + ties / 2) / n` over `(positive, negative)` score pairs.
pub fn auc_from_scores(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("AUC needs at least one scored pair".into()));
    }
    let total: f64 = pairs
        .iter()
        .map(|&(p, n)| {
            if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Uniform node `v'` with no edge `u -> v'` in the full graph and `v' != u`.
pub fn sample_non_neighbor<R: Rng>(
    u: NodeId,
    successors: &BTreeSet<NodeId>,
    num_nodes: usize,
    rng: &mut R,
) -> Option<NodeId> {
    (0..NEGATIVE_RETRIES)
        .map(|_| rng.gen_range(0..num_nodes))
        .find(|&c| c != u && !successors.contains(&c))
}

/// Scores each test edge against one sampled non-edge with contextual
/// scores. Edges whose source links to every node are skipped.
pub fn auc_link_prediction(
    params: &ModelParams,
    test: &[Edge],
    network: &TextualNetwork,
    seed: u64,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("no test edges".into()));
    }
    let successors = network.successor_sets();
    let n = network.num_nodes();
    let scored: Vec<Option<(f64, f64)>> = test
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64]));
            let Some(neg) = sample_non_neighbor(e.src, &successors[e.src], n, &mut rng) else {
                return Ok(None);
            };
            let pos = model::pair_score(e.src, e.dst, network, params)?;
            let negs = model::pair_score(e.src, neg, network, params)?;
            Ok(Some((pos, negs)))
        })
        .collect::<Result<_>>()?;
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    if skipped > 0 {
        log::warn!("skipped {skipped} test edges whose source links to every node");
    }
    let pairs: Vec<(f64, f64)> = scored.into_iter().flatten().collect();
    auc_from_scores(&pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 200,
            seed: 1,
        }
    }
}

/// One-vs-rest hinge-loss classifier trained with Pegasos. Features are
/// standardized with training statistics; the bias is a constant feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    /// `classes x (features + 1)`, last column is the bias.
    pub weights: Array2<f64>,
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub classes: Vec<usize>,
}

impl LinearSvm {
    fn prepare(&self, x: ArrayView2<f64>) -> Array2<f64> {
        augment(&((&x - &self.mean) / &self.scale))
    }

    pub fn decision(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.prepare(x).dot(&self.weights.t())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        self.decision(x)
            .rows()
            .into_iter()
            .map(|r| self.classes[argmax(r)])
            .collect()
    }
}

fn augment(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
    out
}

fn pegasos(x: &Array2<f64>, y: &[f64], cfg: &SvmConfig, seed: u64) -> Array1<f64> {
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let xi = x.row(i);
            let margin = y[i] * w.dot(&xi);
            w *= 1.0 - eta * cfg.lambda;
            if margin < 1.0 {
                w.scaled_add(eta * y[i], &xi);
            }
            let norm = w.dot(&w).sqrt();
            if norm > radius {
                w *= radius / norm;
            }
        }
    }
    w
}

pub fn train_linear_classifier(
    features: ArrayView2<f64>,
    labels: &[usize],
    cfg: &SvmConfig,
) -> Result<LinearSvm> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be > 0".into()));
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mean = features.mean_axis(Axis(0)).expect("nonempty");
    let scale = features
        .std_axis(Axis(0), 0.0)
        .mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let x = augment(&((&features - &mean) / &scale));
    let rows: Vec<Array1<f64>> = classes
        .par_iter()
        .enumerate()
        .map(|(ci, &c)| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            pegasos(&x, &y, cfg, derive_seed(&[cfg.seed, ci as u64]))
        })
        .collect();
    let mut weights = Array2::zeros((classes.len(), x.ncols()));
    for (mut row, w) in weights.rows_mut().into_iter().zip(rows) {
        row.assign(&w);
    }
    Ok(LinearSvm {
        weights,
        mean,
        scale,
        classes,
    })
}

/// Unweighted mean of per-class F1 over the classes present in `truth`.
pub fn macro_f1(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    if truth.is_empty() || predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "macro-F1 needs equal nonempty inputs, got {} predictions and {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let classes: BTreeSet<usize> = truth.iter().copied().collect();
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&p, &t) in predictions.iter().zip(truth) {
                match (p == c, t == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes.len() as f64)
}

/// Splits the labeled nodes, fits the classifier on the first
/// `round(ratio * n)` of a seeded shuffle and scores the rest.
pub fn classification_macro_f1(
    embeddings: ArrayView2<f64>,
    labels: &LabelMap,
    train_ratio: f64,
    seed: u64,
    svm: &SvmConfig,
) -> Result<f64> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "label ratio must be in (0, 1), got {train_ratio}"
        )));
    }
    let (mut nodes, _) = labels.labeled();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_ratio * nodes.len() as f64).round() as usize).clamp(1, nodes.len().saturating_sub(1));
    if n_train == 0 || n_train >= nodes.len() {
        return Err(Error::InvalidArgument("need at least two labeled nodes".into()));
    }
    let (train, test) = nodes.split_at(n_train);
    let label = |v: &NodeId| labels.labels[*v].expect("labeled");
    let x_train = embeddings.select(Axis(0), train);
    let y_train: Vec<usize> = train.iter().map(label).collect();
    let cfg = SvmConfig {
        seed: derive_seed(&[seed, svm.seed]),
        ..svm.clone()
    };
    let clf = train_linear_classifier(x_train.view(), &y_train, &cfg)?;
    let pred = clf.predict(embeddings.select(Axis(0), test).view());
    let truth: Vec<usize> = test.iter().map(label).collect();
    macro_f1(&pred, &truth)
}

/// Dense row-softmax of cosine similarities, the baseline attention that
/// the transport plan is compared against.
pub fn cosine_softmax_attention(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let norms = |m: ArrayView2<f64>| m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let (nx, ny) = (norms(x), norms(y));
    let mut sim = x.dot(&y.t());
    for ((i, j), s) in sim.indexed_iter_mut() {
        let d = nx[i] * ny[j];
        *s = if d > 0.0 { *s / d } else { 0.0 };
    }
    for mut row in sim.rows_mut() {
        let soft = crate::attention_parsing::softmax(row.view());
        row.assign(&soft);
    }
    sim
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_values(metric: &str, values: Vec<f64>, config: Vec<(String, String)>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("report needs at least one run".into()));
        }
        let (mean, std) = mean_std(&values);
        Ok(EvalReport {
            metric: metric.to_string(),
            values,
            mean,
            std,
            config,
        })
    }

    /// `# key = value` header, then `metric,run,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            writeln!(out, "# {k} = {v}").unwrap();
        }
        out.push_str("metric,run,value\n");
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{i},{v}", self.metric).unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        format!("{} mean={:.6} std={:.6} runs={}", self.metric, self.mean, self.std, self.values.len())
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `eval` with seeds `base_seed..base_seed + runs`.
pub fn repeated_eval<F>(metric: &str, runs: usize, base_seed: u64, eval: F) -> Result<EvalReport>
where
    F: Fn(u64) -> Result<f64>,
{
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be >= 1".into()));
    }
    let values = (0..runs as u64)
        .map(|r| eval(base_seed + r))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_values(metric, values, Vec::new())
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
