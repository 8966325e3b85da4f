//! Negative-sampling training with hand-derived gradients and Adam.
//!
//! Each edge `(u, v, w)` contributes
//! `-w [log s(<z_{u|v}, z_{v|u}>) + sum_k log s(-<z_{u|v}, z_{v_k|u}>)]`
//! with negatives `v_k` drawn from the degree^{3/4} noise distribution.
//! Transport plans are computed once per batch and treated as constants.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    self, GradAccumulator, Gradients, ModelConfig, ModelParams, SideForward, Tensors,
};
use crate::network_data::{noise_distribution, Edge, NodeId, NoiseDistribution, TextualNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            epochs: 10,
            batch_size: 64,
            negatives: 1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.negatives == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "negatives and batch size must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = self.model.to_pairs();
        out.extend(
            [
                ("lr", self.lr.to_string()),
                ("epochs", self.epochs.to_string()),
                ("batch", self.batch_size.to_string()),
                ("neg", self.negatives.to_string()),
                ("seed", self.seed.to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v)),
        );
        out
    }
}

/// SplitMix64 over a sequence of words; used to derive independent streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// An edge with its sampled negatives and the frozen transport plans.
#[derive(Debug, Clone)]
pub struct PreparedEdge {
    pub edge: Edge,
    pub negatives: Vec<NodeId>,
    positive_plan: Array2<f64>,
    negative_plans: Vec<Array2<f64>>,
}

impl PreparedEdge {
    pub fn new(
        edge: Edge,
        negatives: Vec<NodeId>,
        network: &TextualNetwork,
        params: &ModelParams,
    ) -> Result<Self> {
        let positive_plan = model::pair_plan(edge.src, edge.dst, network, params)?.into_entries();
        let negative_plans = negatives
            .iter()
            .map(|&n| Ok(model::pair_plan(edge.src, n, network, params)?.into_entries()))
            .collect::<Result<_>>()?;
        Ok(PreparedEdge {
            edge,
            negatives,
            positive_plan,
            negative_plans,
        })
    }
}

/// Samples negatives (excluding both endpoints) and solves the plans.
pub fn prepare_edge(
    edge: Edge,
    negatives: usize,
    noise: &NoiseDistribution,
    rng: &mut ChaCha8Rng,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<PreparedEdge> {
    let negs = (0..negatives)
        .map(|_| noise.sample_excluding(rng, &[edge.src, edge.dst]))
        .collect::<Result<Vec<_>>>()?;
    PreparedEdge::new(edge, negs, network, params)
}

pub fn prepare_batch(
    edges: &[Edge],
    negatives: usize,
    noise: &NoiseDistribution,
    batch_seed: u64,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<Vec<PreparedEdge>> {
    edges
        .par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[batch_seed, i as u64]));
            prepare_edge(e, negatives, noise, &mut rng, network, params)
        })
        .collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct EdgeForward {
    u_side: SideForward,
    v_side: SideForward,
    neg_sides: Vec<SideForward>,
    pos_score: f64,
    neg_scores: Vec<f64>,
    loss: f64,
}

fn edge_forward(
    prepared: &PreparedEdge,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<EdgeForward> {
    let Edge { src: u, dst: v, weight } = prepared.edge;
    let (u_side, v_side) = model::pair_forward(u, v, prepared.positive_plan.view(), network, params)?;
    let zu = u_side.embedding(params);
    let pos_score = model::score(&zu, &v_side.embedding(params), params);
    let mut loss = softplus(-pos_score);
    let mut neg_sides = Vec::with_capacity(prepared.negatives.len());
    let mut neg_scores = Vec::with_capacity(prepared.negatives.len());
    for (&n, plan) in prepared.negatives.iter().zip(&prepared.negative_plans) {
        let side = model::side_forward(n, u, plan.t(), network, params)?;
        let s = model::score(&zu, &side.embedding(params), params);
        loss += softplus(s);
        neg_sides.push(side);
        neg_scores.push(s);
    }
    Ok(EdgeForward {
        u_side,
        v_side,
        neg_sides,
        pos_score,
        neg_scores,
        loss: weight * loss,
    })
}

/// Loss of one prepared edge.
pub fn prepared_edge_loss(
    prepared: &PreparedEdge,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<f64> {
    Ok(edge_forward(prepared, network, params)?.loss)
}

/// Edge loss with fresh negatives from `rng`.
pub fn edge_loss(
    edge: Edge,
    params: &ModelParams,
    network: &TextualNetwork,
    noise: &NoiseDistribution,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let prepared = prepare_edge(edge, negatives, noise, rng, network, params)?;
    prepared_edge_loss(&prepared, network, params)
}

fn edge_backward(
    prepared: &PreparedEdge,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<(f64, GradAccumulator)> {
    let fwd = edge_forward(prepared, network, params)?;
    let w = prepared.edge.weight;
    let mut acc = GradAccumulator::new(params);
    let zu = fwd.u_side.embedding(params);

    let g_pos = -w * sigmoid(-fwd.pos_score);
    let sg = model::score_backward(&zu, &fwd.v_side.embedding(params), params, g_pos, &mut acc);
    let mut g_topo_u = sg.topo_u;
    let mut g_sem_u = sg.sem_u;
    model::topo_backward(fwd.v_side.target, sg.topo_v.view(), params, &mut acc);
    model::side_backward(&fwd.v_side, sg.sem_v.view(), params, &mut acc);

    for (side, &s) in fwd.neg_sides.iter().zip(&fwd.neg_scores) {
        let g_neg = w * sigmoid(s);
        let sg = model::score_backward(&zu, &side.embedding(params), params, g_neg, &mut acc);
        g_topo_u += &sg.topo_u;
        g_sem_u += &sg.sem_u;
        model::topo_backward(side.target, sg.topo_v.view(), params, &mut acc);
        model::side_backward(side, sg.sem_v.view(), params, &mut acc);
    }
    model::topo_backward(fwd.u_side.target, g_topo_u.view(), params, &mut acc);
    model::side_backward(&fwd.u_side, g_sem_u.view(), params, &mut acc);
    Ok((fwd.loss, acc))
}

/// Mean loss over a prepared batch.
pub fn batch_loss(batch: &[PreparedEdge], network: &TextualNetwork, params: &ModelParams) -> Result<f64> {
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|p| prepared_edge_loss(p, network, params))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len().max(1) as f64)
}

/// Mean loss and its exact gradient (plans held fixed).
pub fn backward(
    batch: &[PreparedEdge],
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<(f64, Gradients)> {
    let per_edge: Vec<(f64, GradAccumulator)> = batch
        .par_iter()
        .map(|p| edge_backward(p, network, params))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut grads = params.tensors.zeros_like();
    let mut loss = 0.0;
    for (l, acc) in &per_edge {
        loss += l;
        acc.add_to(&mut grads, scale);
    }
    if let Err(tensor) = grads.is_finite() {
        return Err(Error::NonFiniteGradient { tensor });
    }
    Ok((loss * scale, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Tensors,
    pub second: Tensors,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            first: params.tensors.zeros_like(),
            second: params.tensors.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut OptimizerState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let tensors = params.tensors.named_mut();
    let grads = grads.named();
    let firsts = state.first.named_mut();
    let seconds = state.second.named_mut();
    for (((_, p), (_, g)), ((_, m), (_, v))) in tensors
        .into_iter()
        .zip(grads)
        .zip(firsts.into_iter().zip(seconds))
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean edge loss per epoch, measured during the epoch.
    pub loss_trace: Vec<f64>,
}

fn epoch_batches(num_edges: usize, cfg: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..num_edges).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, 0])));
    order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
}

fn batch_seed(cfg: &TrainConfig, epoch: usize, batch: usize) -> u64 {
    derive_seed(&[cfg.seed, epoch as u64, 1, batch as u64])
}

/// Trains from a seeded initialization; see [`train_from`].
pub fn train(network: &TextualNetwork, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = ModelParams::init(
        network.num_nodes(),
        network.vocab().len(),
        &cfg.model,
        derive_seed(&[cfg.seed, 0xA11CE]),
    )?;
    train_from(network, params, cfg)
}

/// Shuffled mini-batch Adam over the network's edges. Deterministic in
/// `(network, params, cfg)` regardless of thread count.
pub fn train_from(network: &TextualNetwork, mut params: ModelParams, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if network.edges().is_empty() {
        return Err(Error::InvalidArgument("training needs at least one edge".into()));
    }
    let noise = noise_distribution(network)?;
    let mut state = OptimizerState::new(&params);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for (b, idx) in epoch_batches(network.edges().len(), cfg, epoch).iter().enumerate() {
            let edges: Vec<Edge> = idx.iter().map(|&i| network.edges()[i]).collect();
            let step = prepare_batch(&edges, cfg.negatives, &noise, batch_seed(cfg, epoch, b), network, &params)
                .and_then(|batch| backward(&batch, network, &params));
            let (loss, grads) = match step {
                Ok(r) if r.0.is_finite() => r,
                Ok(r) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("batch loss {}", r.0),
                        last_good: Box::new(params),
                    })
                }
                Err(e @ (Error::NonFiniteGradient { .. } | Error::Numerical(_))) => {
                    return Err(Error::Diverged {
                        epoch,
                        reason: e.to_string(),
                        last_good: Box::new(params),
                    })
                }
                Err(e) => return Err(e),
            };
            total += loss * edges.len() as f64;
            adam_step(&mut params, &grads, &mut state, cfg.lr);
        }
        let mean = total / network.edges().len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        trace.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

/// Mean loss of one epoch's sampling at fixed parameters.
pub fn epoch_loss(network: &TextualNetwork, params: &ModelParams, cfg: &TrainConfig, epoch: usize) -> Result<f64> {
    let noise = noise_distribution(network)?;
    let mut total = 0.0;
    for (b, idx) in epoch_batches(network.edges().len(), cfg, epoch).iter().enumerate() {
        let edges: Vec<Edge> = idx.iter().map(|&i| network.edges()[i]).collect();
        let batch = prepare_batch(&edges, cfg.negatives, &noise, batch_seed(cfg, epoch, b), network, params)?;
        total += batch_loss(&batch, network, params)? * edges.len() as f64;
    }
    Ok(total / network.edges().len() as f64)
}

/// Per-tensor result of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub tensors: Vec<(&'static str, f64)>,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|(_, e)| *e <= self.tol)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.tensors
            .iter()
            .filter(|(_, e)| !(*e <= self.tol))
            .map(|(n, _)| *n)
            .collect()
    }
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

/// Central differences of the batch loss for every scalar parameter.
pub fn numeric_gradients(
    params: &ModelParams,
    batch: &[PreparedEdge],
    network: &TextualNetwork,
) -> Result<Gradients> {
    let mut grads = params.tensors.zeros_like();
    let mut probe = params.clone();
    let names: Vec<&'static str> = params.tensors.named().iter().map(|(n, _)| *n).collect();
    for (ti, _) in names.iter().enumerate() {
        let len = params.tensors.named()[ti].1.len();
        for i in 0..len {
            let orig = params.tensors.named()[ti].1[i];
            probe.tensors.named_mut()[ti].1[i] = orig + FD_STEP;
            let plus = batch_loss(batch, network, &probe)?;
            probe.tensors.named_mut()[ti].1[i] = orig - FD_STEP;
            let minus = batch_loss(batch, network, &probe)?;
            probe.tensors.named_mut()[ti].1[i] = orig;
            grads.named_mut()[ti].1[i] = (plus - minus) / (2.0 * FD_STEP);
        }
    }
    Ok(grads)
}

/// Max relative error per tensor, `|a - n| / max(|a|, |n|, FD_FLOOR)`.
/// Empty tensors are omitted.
pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients, tol: f64) -> FdReport {
    let tensors = analytic
        .named()
        .into_iter()
        .zip(numeric.named())
        .filter(|((_, a), _)| !a.is_empty())
        .map(|((name, a), (_, n))| {
            let err = a
                .iter()
                .zip(n)
                .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(FD_FLOOR))
                .fold(0.0, |m: f64, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
            (name, err)
        })
        .collect();
    FdReport { tensors, tol }
}

/// Checks [`backward`] against central differences on a prepared batch.
pub fn finite_difference_check(
    params: &ModelParams,
    batch: &[PreparedEdge],
    network: &TextualNetwork,
    tol: f64,
) -> Result<FdReport> {
    let (_, analytic) = backward(batch, network, params)?;
    let numeric = numeric_gradients(params, batch, network)?;
    Ok(compare_gradients(&analytic, &numeric, tol))
}

/// Euclidean norm over all gradient entries.
pub fn grad_norm(grads: &Gradients) -> f64 {
    grads
        .named()
        .iter()
        .flat_map(|(_, d)| d.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}
