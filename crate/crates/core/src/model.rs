//! Trainable parameters and the context-aware embedding.
//!
//! A node embedding is `[z_t; z_s]`: a static topological row and a semantic
//! part computed from the node's text with the partner's text as context.
//! Pair scores use the decomposed inner product
//!
//! ```text
//! <z_u, z_v> = z_u^t . z_v^t + z_u^s . z_v^s + z_u^t . (A_ts z_v^s) + z_u^s . (A_st z_v^t)
//! ```
//!
//! The transport plan between the two texts is an input to the
//! differentiable part ([`side_forward`]) and is never differentiated.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attention_parsing::{self, ParseCache, ParsingParams};
use crate::error::{Error, Result};
use crate::mutual_attention::{self, AggregatorParams, MaxPool};
use crate::network_data::{NodeId, TextualNetwork};
use crate::ot_solver::{self, OtConfig, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Local alignment through the transport plan.
    Ot,
    /// Parsed global alignment on top of the transport plan.
    Ap,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ot => "gane-ot",
            Mode::Ap => "gane-ap",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gane-ot" | "ot" => Ok(Mode::Ot),
            "gane-ap" | "ap" => Ok(Mode::Ap),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected gane-ot or gane-ap)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Total embedding dimension `d`; topology gets `d/2`, semantics the rest.
    pub dim: usize,
    pub word_dim: usize,
    pub ot: OtConfig,
    /// Texts are truncated to this many tokens before matching.
    pub max_len: usize,
    /// Parser filter width (the n-gram length).
    pub ngram: usize,
    pub filter_height: usize,
    pub channels: usize,
    /// Row-normalize the plan before local alignment (ablation switch).
    pub renormalize_plan: bool,
    /// In AP mode, also pool the locally aligned context.
    pub combine_local: bool,
    /// Use `A_st = A_ts^T` instead of an independent map.
    pub tie_realignment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::Ot,
            dim: 100,
            word_dim: 100,
            ot: OtConfig::default(),
            max_len: 300,
            ngram: 21,
            filter_height: 1,
            channels: 1,
            renormalize_plan: false,
            combine_local: false,
            tie_realignment: false,
        }
    }
}

impl ModelConfig {
    pub fn topo_dim(&self) -> usize {
        self.dim / 2
    }

    pub fn semantic_dim(&self) -> usize {
        self.dim - self.topo_dim()
    }

    fn uses_local(&self) -> bool {
        self.mode == Mode::Ot || self.combine_local
    }

    pub fn aggregator_input_dim(&self) -> usize {
        match self.mode {
            Mode::Ot => 2 * self.word_dim,
            Mode::Ap if self.combine_local => 3 * self.word_dim,
            Mode::Ap => 2 * self.word_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ot.validate()?;
        if self.max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        if self.mode == Mode::Ap {
            if self.ngram.is_multiple_of(2) || self.filter_height.is_multiple_of(2) {
                return Err(Error::InvalidArgument(format!(
                    "filter sizes must be odd for centered padding, got {}x{}",
                    self.filter_height, self.ngram
                )));
            }
            if self.channels == 0 {
                return Err(Error::InvalidArgument("channels must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Flat `key = value` form, used for config echo and checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("mode", self.mode.to_string()),
            ("dim", self.dim.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("beta", self.ot.beta.to_string()),
            ("ot_iters", self.ot.outer_iters.to_string()),
            ("ot_inner_iters", self.ot.inner_iters.to_string()),
            ("ot_tolerance", self.ot.tolerance.to_string()),
            ("max_len", self.max_len.to_string()),
            ("ngram", self.ngram.to_string()),
            ("filter_height", self.filter_height.to_string()),
            ("channels", self.channels.to_string()),
            ("renormalize_plan", self.renormalize_plan.to_string()),
            ("combine_local", self.combine_local.to_string()),
            ("tie_realignment", self.tie_realignment.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(pairs: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = pairs
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing config key `{key}`")))?;
            raw.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value `{raw}` for `{key}`")))
        }
        let mode: String = get(pairs, "mode")?;
        let cfg = ModelConfig {
            mode: mode.parse()?,
            dim: get(pairs, "dim")?,
            word_dim: get(pairs, "word_dim")?,
            ot: OtConfig {
                beta: get(pairs, "beta")?,
                outer_iters: get(pairs, "ot_iters")?,
                inner_iters: get(pairs, "ot_inner_iters")?,
                tolerance: get(pairs, "ot_tolerance")?,
            },
            max_len: get(pairs, "max_len")?,
            ngram: get(pairs, "ngram")?,
            filter_height: get(pairs, "filter_height")?,
            channels: get(pairs, "channels")?,
            renormalize_plan: get(pairs, "renormalize_plan")?,
            combine_local: get(pairs, "combine_local")?,
            tie_realignment: get(pairs, "tie_realignment")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every trainable tensor. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `vocab x p`.
    pub word: Array2<f64>,
    /// `nodes x d_t`.
    pub topo: Array2<f64>,
    /// `d_t x d_s`.
    pub realign_ts: Array2<f64>,
    /// `d_s x d_t`; absent when tied to `realign_ts^T`.
    pub realign_st: Option<Array2<f64>>,
    pub aggregator: AggregatorParams,
    pub parsing: Option<ParsingParams>,
}

pub type Gradients = Tensors;

impl Tensors {
    pub fn zeros_like(&self) -> Tensors {
        let mut t = self.clone();
        for (_, x) in t.named_mut() {
            x.fill(0.0);
        }
        t
    }

    /// Tensor names with their row-major data, in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![
            ("word_embeddings", slice(&self.word)),
            ("topology", slice(&self.topo)),
            ("realign_ts", slice(&self.realign_ts)),
        ];
        if let Some(st) = &self.realign_st {
            out.push(("realign_st", slice(st)));
        }
        out.push(("aggregator", slice(&self.aggregator.projection)));
        if let Some(p) = &self.parsing {
            out.push(("conv_filters", p.filters.as_slice().expect("standard layout")));
            out.push(("parse_projection", p.projection.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = vec![
            ("word_embeddings", slice_mut(&mut self.word)),
            ("topology", slice_mut(&mut self.topo)),
            ("realign_ts", slice_mut(&mut self.realign_ts)),
        ];
        if let Some(st) = &mut self.realign_st {
            out.push(("realign_st", slice_mut(st)));
        }
        out.push(("aggregator", slice_mut(&mut self.aggregator.projection)));
        if let Some(p) = &mut self.parsing {
            out.push(("conv_filters", p.filters.as_slice_mut().expect("standard layout")));
            out.push(("parse_projection", p.projection.as_slice_mut().expect("standard layout")));
        }
        out
    }

    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut out = vec![
            ("word_embeddings", self.word.shape().to_vec()),
            ("topology", self.topo.shape().to_vec()),
            ("realign_ts", self.realign_ts.shape().to_vec()),
        ];
        if let Some(st) = &self.realign_st {
            out.push(("realign_st", st.shape().to_vec()));
        }
        out.push(("aggregator", self.aggregator.projection.shape().to_vec()));
        if let Some(p) = &self.parsing {
            out.push(("conv_filters", p.filters.shape().to_vec()));
            out.push(("parse_projection", p.projection.shape().to_vec()));
        }
        out
    }

    pub fn is_finite(&self) -> std::result::Result<(), &'static str> {
        for (name, data) in self.named() {
            if data.iter().any(|x| !x.is_finite()) {
                return Err(name);
            }
        }
        Ok(())
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Tensors,
}

impl ModelParams {
    /// Tables uniform in `(-0.1, 0.1)`; linear maps uniform in `±1/sqrt(fan_in)`.
    pub fn init(num_nodes: usize, vocab_size: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |shape: (usize, usize), bound: f64| {
            let dist = Uniform::new_inclusive(-bound, bound);
            Array2::from_shape_simple_fn(shape, || dist.sample(&mut rng))
        };
        let fan = |n: usize| 1.0 / (n.max(1) as f64).sqrt();
        let (p, dt, ds) = (config.word_dim, config.topo_dim(), config.semantic_dim());
        let word = uniform((vocab_size, p), 0.1);
        let topo = uniform((num_nodes, dt), 0.1);
        let realign_ts = uniform((dt, ds), fan(ds));
        let realign_st = (!config.tie_realignment).then(|| uniform((ds, dt), fan(dt)));
        let agg_in = config.aggregator_input_dim();
        let aggregator = AggregatorParams::new(uniform((ds, agg_in), fan(agg_in)));
        let parsing = match config.mode {
            Mode::Ot => None,
            Mode::Ap => {
                let (h, w, c) = (config.filter_height, config.ngram, config.channels);
                let filters = uniform((h * w, c), fan(h * w))
                    .into_shape_with_order((h, w, c))
                    .expect("filter shape");
                let proj = uniform((c, 1), fan(c)).into_shape_with_order(c).expect("projection");
                Some(ParsingParams::new(filters, proj)?)
            }
        };
        Ok(ModelParams {
            config: config.clone(),
            tensors: Tensors {
                word,
                topo,
                realign_ts,
                realign_st,
                aggregator,
                parsing,
            },
        })
    }

    /// All tensors zero.
    pub fn zeros(num_nodes: usize, vocab_size: usize, config: &ModelConfig) -> Result<Self> {
        let mut params = Self::init(num_nodes, vocab_size, config, 0)?;
        params.tensors = params.tensors.zeros_like();
        Ok(params)
    }

    pub fn num_nodes(&self) -> usize {
        self.tensors.topo.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.tensors.word.nrows()
    }

    /// `A_st`, or `A_ts^T` when tied.
    pub fn realign_st(&self) -> ArrayView2<'_, f64> {
        match &self.tensors.realign_st {
            Some(st) => st.view(),
            None => self.tensors.realign_ts.t(),
        }
    }

    /// Fails with the first tensor whose shape disagrees with the dataset.
    pub fn check_dataset(&self, network: &TextualNetwork) -> Result<()> {
        let check = |tensor: &str, found: &[usize], expected: Vec<usize>| {
            if found != expected.as_slice() {
                Err(Error::DimensionMismatch {
                    tensor: tensor.to_string(),
                    expected,
                    found: found.to_vec(),
                })
            } else {
                Ok(())
            }
        };
        check(
            "word_embeddings",
            self.tensors.word.shape(),
            vec![network.vocab().len(), self.config.word_dim],
        )?;
        check(
            "topology",
            self.tensors.topo.shape(),
            vec![network.num_nodes(), self.config.topo_dim()],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextualEmbedding {
    pub topo: Array1<f64>,
    pub semantic: Array1<f64>,
    pub mode: Mode,
}

impl ContextualEmbedding {
    pub fn dim(&self) -> usize {
        self.topo.len() + self.semantic.len()
    }

    pub fn to_vector(&self) -> Array1<f64> {
        concatenate(Axis(0), &[self.topo.view(), self.semantic.view()]).expect("1-d concat")
    }
}

/// Transport plan between the (truncated) texts of `u` and `v`.
pub fn pair_plan(
    u: NodeId,
    v: NodeId,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<TransportPlan> {
    let cfg = &params.config;
    let su = mutual_attention::embed_sequence(
        network.text(u)?.truncated(cfg.max_len),
        params.tensors.word.view(),
    )?;
    let sv = mutual_attention::embed_sequence(
        network.text(v)?.truncated(cfg.max_len),
        params.tensors.word.view(),
    )?;
    let cost = ot_solver::cosine_cost(su.view(), sv.view())?;
    let plan = ot_solver::solve_ot(&cost, &cfg.ot)?;
    if plan.marginal_error() > cfg.ot.tolerance {
        log::debug!(
            "plan ({u}, {v}) marginal error {:.3e} exceeds tolerance {:.1e}",
            plan.marginal_error(),
            cfg.ot.tolerance
        );
    }
    Ok(plan)
}

/// Forward state of one side of a pair: the target node's semantic
/// embedding given the context node's text.
#[derive(Debug, Clone)]
pub struct SideForward {
    pub target: NodeId,
    target_tokens: Vec<u32>,
    context_tokens: Vec<u32>,
    s_context: Array2<f64>,
    align_plan: Option<Array2<f64>>,
    parse: Option<ParseCache>,
    pooled: MaxPool,
    pub semantic: Array1<f64>,
}

impl SideForward {
    pub fn embedding(&self, params: &ModelParams) -> ContextualEmbedding {
        ContextualEmbedding {
            topo: params.tensors.topo.row(self.target).to_owned(),
            semantic: self.semantic.clone(),
            mode: params.config.mode,
        }
    }

    pub fn parsed_weights(&self) -> Option<&Array1<f64>> {
        self.parse.as_ref().map(|p| &p.parsed.weights)
    }
}

/// `plan` is oriented `target x context`.
pub fn side_forward(
    target: NodeId,
    context: NodeId,
    plan: ArrayView2<f64>,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<SideForward> {
    let cfg = &params.config;
    let t = &params.tensors;
    let target_tokens = network.text(target)?.truncated(cfg.max_len).to_vec();
    let context_tokens = network.text(context)?.truncated(cfg.max_len).to_vec();
    let s_target = mutual_attention::embed_sequence(&target_tokens, t.word.view())?;
    let s_context = mutual_attention::embed_sequence(&context_tokens, t.word.view())?;
    if plan.dim() != (target_tokens.len(), context_tokens.len()) {
        return Err(Error::Shape(format!(
            "plan {:?} for texts of length {} and {}",
            plan.dim(),
            target_tokens.len(),
            context_tokens.len()
        )));
    }

    let align_plan = cfg.uses_local().then(|| {
        if cfg.renormalize_plan {
            mutual_attention::renormalize_rows(plan)
        } else {
            plan.to_owned()
        }
    });
    let aligned = match &align_plan {
        Some(p) => Some(mutual_attention::align_local(p.view(), s_context.view())?),
        None => None,
    };
    let parse = match (&cfg.mode, &t.parsing) {
        (Mode::Ap, Some(pp)) => Some(attention_parsing::parse_attention(plan, s_context.view(), pp)?),
        (Mode::Ap, None) => {
            return Err(Error::InvalidArgument("AP mode requires parser parameters".into()))
        }
        _ => None,
    };

    let n = s_target.nrows();
    let mut blocks = vec![s_target.view()];
    if let Some(a) = &aligned {
        blocks.push(a.view());
    }
    if let Some(pc) = &parse {
        let ctx = &pc.parsed.context;
        blocks.push(ctx.broadcast((n, ctx.len())).expect("broadcast"));
    }
    let pooled = mutual_attention::max_pool(&blocks)?;
    let semantic = mutual_attention::project(&t.aggregator, pooled.values.view())?;
    Ok(SideForward {
        target,
        target_tokens,
        context_tokens,
        s_context,
        align_plan,
        parse,
        pooled,
        semantic,
    })
}

/// Both directions of a pair from one plan (`T` for `u`, `T^T` for `v`).
pub fn pair_forward(
    u: NodeId,
    v: NodeId,
    plan: ArrayView2<f64>,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<(SideForward, SideForward)> {
    let fu = side_forward(u, v, plan, network, params)?;
    let fv = side_forward(v, u, plan.t(), network, params)?;
    Ok((fu, fv))
}

/// `(z_{u|v}, z_{v|u})`.
pub fn contextual_embedding(
    u: NodeId,
    v: NodeId,
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<(ContextualEmbedding, ContextualEmbedding)> {
    let plan = pair_plan(u, v, network, params)?;
    let (fu, fv) = pair_forward(u, v, plan.entries().view(), network, params)?;
    Ok((fu.embedding(params), fv.embedding(params)))
}

pub fn score(zu: &ContextualEmbedding, zv: &ContextualEmbedding, params: &ModelParams) -> f64 {
    score_parts(zu.topo.view(), zu.semantic.view(), zv.topo.view(), zv.semantic.view(), params)
}

fn score_parts(
    tu: ArrayView1<f64>,
    su: ArrayView1<f64>,
    tv: ArrayView1<f64>,
    sv: ArrayView1<f64>,
    params: &ModelParams,
) -> f64 {
    tu.dot(&tv)
        + su.dot(&sv)
        + tu.dot(&params.tensors.realign_ts.dot(&sv))
        + su.dot(&params.realign_st().dot(&tv))
}

/// Score of the pair `(u, v)` under mutual context.
pub fn pair_score(u: NodeId, v: NodeId, network: &TextualNetwork, params: &ModelParams) -> Result<f64> {
    let (zu, zv) = contextual_embedding(u, v, network, params)?;
    Ok(score(&zu, &zv, params))
}

/// Mean of `z_{u|v}` over undirected neighbors; `z_{u|u}` for isolated nodes.
pub fn static_embedding(u: NodeId, network: &TextualNetwork, params: &ModelParams) -> Result<Array1<f64>> {
    let neighbors = network.undirected_neighbors();
    static_from_neighbors(u, neighbors.get(u).ok_or(Error::UnknownNode(u))?, network, params)
}

fn static_from_neighbors(
    u: NodeId,
    neighbors: &[NodeId],
    network: &TextualNetwork,
    params: &ModelParams,
) -> Result<Array1<f64>> {
    if neighbors.is_empty() {
        return Ok(contextual_embedding(u, u, network, params)?.0.to_vector());
    }
    let mut sum = Array1::zeros(params.config.dim);
    for &v in neighbors {
        sum += &contextual_embedding(u, v, network, params)?.0.to_vector();
    }
    Ok(sum / neighbors.len() as f64)
}

/// Static embeddings of every node, `nodes x d`.
pub fn static_embeddings(network: &TextualNetwork, params: &ModelParams) -> Result<Array2<f64>> {
    let neighbors = network.undirected_neighbors();
    let rows: Vec<Array1<f64>> = (0..network.num_nodes())
        .into_par_iter()
        .map(|u| static_from_neighbors(u, &neighbors[u], network, params))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((rows.len(), params.config.dim));
    for (mut row, r) in out.rows_mut().into_iter().zip(rows) {
        row.assign(&r);
    }
    Ok(out)
}

/// Per-pair gradient accumulator with sparse rows for the lookup tables.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    pub word: BTreeMap<u32, Array1<f64>>,
    pub topo: BTreeMap<NodeId, Array1<f64>>,
    pub realign_ts: Array2<f64>,
    pub realign_st: Array2<f64>,
    pub aggregator: Array2<f64>,
    pub filters: Option<Array3<f64>>,
    pub parse_projection: Option<Array1<f64>>,
}

impl GradAccumulator {
    pub fn new(params: &ModelParams) -> Self {
        let t = &params.tensors;
        GradAccumulator {
            word: BTreeMap::new(),
            topo: BTreeMap::new(),
            realign_ts: Array2::zeros(t.realign_ts.dim()),
            realign_st: Array2::zeros((params.config.semantic_dim(), params.config.topo_dim())),
            aggregator: Array2::zeros(t.aggregator.projection.dim()),
            filters: t.parsing.as_ref().map(|p| Array3::zeros(p.filters.dim())),
            parse_projection: t.parsing.as_ref().map(|p| Array1::zeros(p.projection.len())),
        }
    }

    fn word_row(&mut self, token: u32, p: usize) -> &mut Array1<f64> {
        self.word.entry(token).or_insert_with(|| Array1::zeros(p))
    }

    fn topo_row(&mut self, node: NodeId, dt: usize) -> &mut Array1<f64> {
        self.topo.entry(node).or_insert_with(|| Array1::zeros(dt))
    }

    /// `dense += scale * self`.
    pub fn add_to(&self, dense: &mut Gradients, scale: f64) {
        for (&tok, g) in &self.word {
            dense.word.row_mut(tok as usize).scaled_add(scale, g);
        }
        for (&node, g) in &self.topo {
            dense.topo.row_mut(node).scaled_add(scale, g);
        }
        dense.realign_ts.scaled_add(scale, &self.realign_ts);
        match &mut dense.realign_st {
            Some(st) => st.scaled_add(scale, &self.realign_st),
            None => dense.realign_ts.scaled_add(scale, &self.realign_st.t()),
        }
        dense.aggregator.projection.scaled_add(scale, &self.aggregator);
        if let (Some(dp), Some(f), Some(b)) =
            (&mut dense.parsing, &self.filters, &self.parse_projection)
        {
            dp.filters.scaled_add(scale, f);
            dp.projection.scaled_add(scale, b);
        }
    }
}

/// Gradients of the score w.r.t. both embeddings; realignment gradients
/// are accumulated with weight `g`.
pub struct ScoreGrads {
    pub topo_u: Array1<f64>,
    pub sem_u: Array1<f64>,
    pub topo_v: Array1<f64>,
    pub sem_v: Array1<f64>,
}

pub fn score_backward(
    zu: &ContextualEmbedding,
    zv: &ContextualEmbedding,
    params: &ModelParams,
    g: f64,
    acc: &mut GradAccumulator,
) -> ScoreGrads {
    let a_ts = &params.tensors.realign_ts;
    let a_st = params.realign_st();
    let (tu, su, tv, sv) = (&zu.topo, &zu.semantic, &zv.topo, &zv.semantic);
    add_outer(&mut acc.realign_ts, g, tu.view(), sv.view());
    add_outer(&mut acc.realign_st, g, su.view(), tv.view());
    ScoreGrads {
        topo_u: (tv + &a_ts.dot(sv)) * g,
        sem_u: (sv + &a_st.dot(tv)) * g,
        topo_v: (tu + &a_st.t().dot(su)) * g,
        sem_v: (su + &a_ts.t().dot(tu)) * g,
    }
}

fn add_outer(m: &mut Array2<f64>, g: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a) {
        row.scaled_add(g * ai, &b);
    }
}

pub fn topo_backward(node: NodeId, g_topo: ArrayView1<f64>, params: &ModelParams, acc: &mut GradAccumulator) {
    let dt = params.config.topo_dim();
    *acc.topo_row(node, dt) += &g_topo;
}

/// Backpropagates a gradient on the semantic embedding of one side.
pub fn side_backward(
    fwd: &SideForward,
    g_semantic: ArrayView1<f64>,
    params: &ModelParams,
    acc: &mut GradAccumulator,
) {
    let t = &params.tensors;
    let p = params.config.word_dim;
    let g_pooled = mutual_attention::project_backward(
        &t.aggregator,
        fwd.pooled.values.view(),
        g_semantic,
        &mut acc.aggregator,
    );
    let argmax = &fwd.pooled.argmax;

    for k in 0..p {
        let g = g_pooled[k];
        if g != 0.0 {
            let tok = fwd.target_tokens[argmax[k]];
            acc.word_row(tok, p)[k] += g;
        }
    }

    let mut g_context = Array2::<f64>::zeros(fwd.s_context.dim());
    let mut offset = p;
    if let Some(plan) = &fwd.align_plan {
        for k in 0..p {
            let g = g_pooled[offset + k];
            if g == 0.0 {
                continue;
            }
            let i = argmax[offset + k];
            g_context
                .column_mut(k)
                .scaled_add(g, &plan.row(i));
        }
        offset += p;
    }
    if let (Some(pc), Some(pp)) = (&fwd.parse, &t.parsing) {
        let g_aligned = g_pooled.slice(s![offset..offset + p]);
        let pg = attention_parsing::parse_backward(pc, fwd.s_context.view(), pp, g_aligned);
        g_context += &pg.context;
        if let Some(f) = &mut acc.filters {
            *f += &pg.filters;
        }
        if let Some(b) = &mut acc.parse_projection {
            *b += &pg.projection;
        }
    }
    for (row, &tok) in g_context.rows().into_iter().zip(&fwd.context_tokens) {
        if row.iter().any(|&x| x != 0.0) {
            *acc.word_row(tok, p) += &row;
        }
    }
}
