//! Textual network datasets: file loading, vocabulary, edge splits and the
//! degree-based noise distribution used for negative sampling.
//!
//! File formats:
//!
//! - graph: one edge per line, `u v [w]` separated by tabs or spaces, `#` comments.
//! - text: `id<TAB>raw text`.
//! - labels: `id<TAB>label`.
//!
//! Node ids are dense integers `0..n`; every id must have a text line.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Reserved id for out-of-vocabulary tokens.
pub const UNK: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    /// Empty input is padded to a single UNK token.
    pub fn new(ids: Vec<u32>) -> Self {
        if ids.is_empty() {
            TokenSequence(vec![UNK])
        } else {
            TokenSequence(ids)
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Leading `max_len` tokens.
    pub fn truncated(&self, max_len: usize) -> &[u32] {
        &self.0[..self.0.len().min(max_len.max(1))]
    }
}

pub fn tokenize(raw: &str) -> impl Iterator<Item = String> + '_ {
    raw.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

impl Vocabulary {
    /// Tokens seen at least `min_count` times get ids `1..` in first-occurrence order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                let c = counts.entry(tok.clone()).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
        let mut tokens = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        for tok in order {
            if counts[&tok] >= min_count && tok != UNK_TOKEN {
                index.insert(tok.clone(), tokens.len() as u32);
                tokens.push(tok);
            }
        }
        Vocabulary {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, raw: &str) -> TokenSequence {
        TokenSequence::new(tokenize(raw).map(|t| self.id(&t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextualNetwork {
    edges: Vec<Edge>,
    texts: Vec<TokenSequence>,
    vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStats {
    pub nodes: usize,
    pub edges: usize,
    pub avg_text_len: f64,
}

impl TextualNetwork {
    pub fn new(edges: Vec<Edge>, texts: Vec<TokenSequence>, vocab: Vocabulary) -> Result<Self> {
        let n = texts.len();
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::UnknownNode(e.src.max(e.dst)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "edge {}->{} has weight {}",
                    e.src, e.dst, e.weight
                )));
            }
        }
        for (v, t) in texts.iter().enumerate() {
            if let Some(&bad) = t.ids().iter().find(|&&id| id as usize >= vocab.len()) {
                return Err(Error::InvalidArgument(format!(
                    "node {v} has token id {bad} outside vocabulary of size {}",
                    vocab.len()
                )));
            }
        }
        Ok(TextualNetwork {
            edges,
            texts,
            vocab,
        })
    }

    /// Builds a network from raw texts, tokenizing with a fresh vocabulary.
    pub fn from_raw(edges: Vec<Edge>, raw_texts: &[String], min_count: usize) -> Result<Self> {
        let vocab = Vocabulary::build(raw_texts.iter().map(String::as_str), min_count);
        let texts = raw_texts.iter().map(|t| vocab.encode(t)).collect();
        Self::new(edges, texts, vocab)
    }

    pub fn num_nodes(&self) -> usize {
        self.texts.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn text(&self, v: NodeId) -> Result<&TokenSequence> {
        self.texts.get(v).ok_or(Error::UnknownNode(v))
    }

    pub fn texts(&self) -> &[TokenSequence] {
        &self.texts
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Same nodes and texts with a different edge set.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self> {
        Self::new(edges, self.texts.clone(), self.vocab.clone())
    }

    pub fn stats(&self) -> NetworkStats {
        let total: usize = self.texts.iter().map(TokenSequence::len).sum();
        NetworkStats {
            nodes: self.num_nodes(),
            edges: self.edges.len(),
            avg_text_len: if self.texts.is_empty() {
                0.0
            } else {
                total as f64 / self.texts.len() as f64
            },
        }
    }

    /// Weighted out-degree of every node.
    pub fn out_degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.num_nodes()];
        for e in &self.edges {
            deg[e.src] += e.weight;
        }
        deg
    }

    /// Undirected neighbor lists (in- and out-neighbors, deduplicated, sorted).
    pub fn undirected_neighbors(&self) -> Vec<Vec<NodeId>> {
        let mut sets = vec![BTreeSet::new(); self.num_nodes()];
        for e in &self.edges {
            if e.src != e.dst {
                sets[e.src].insert(e.dst);
                sets[e.dst].insert(e.src);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Directed successor sets, for membership tests.
    pub fn successor_sets(&self) -> Vec<BTreeSet<NodeId>> {
        let mut sets = vec![BTreeSet::new(); self.num_nodes()];
        for e in &self.edges {
            sets[e.src].insert(e.dst);
        }
        sets
    }
}

/// Node labels; `None` for unlabeled nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub classes: Vec<String>,
    pub labels: Vec<Option<usize>>,
}

impl LabelMap {
    /// Labeled nodes and their class indices.
    pub fn labeled(&self) -> (Vec<NodeId>, Vec<usize>) {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(v, l)| l.map(|c| (v, c)))
            .unzip()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn lines(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<NodeId> {
    field
        .parse::<NodeId>()
        .map_err(|_| Error::parse(path, line, format!("invalid node id `{field}`")))
}

pub fn parse_graph(path: &Path, content: &str) -> Result<Vec<(Edge, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in lines(content) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(path, lineno, "expected `u v [w]`"));
        }
        let src = parse_id(path, lineno, fields[0])?;
        let dst = parse_id(path, lineno, fields[1])?;
        let weight = match fields.get(2) {
            Some(w) => w
                .parse::<f64>()
                .ok()
                .filter(|w| w.is_finite() && *w >= 0.0)
                .ok_or_else(|| Error::parse(path, lineno, format!("invalid weight `{w}`")))?,
            None => 1.0,
        };
        edges.push((Edge { src, dst, weight }, lineno));
    }
    Ok(edges)
}

fn parse_keyed(path: &Path, content: &str) -> Result<Vec<(NodeId, String, usize)>> {
    let mut out = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `id<TAB>text`"))?;
        let id = parse_id(path, lineno, id.trim())?;
        out.push((id, rest.to_string(), lineno));
    }
    Ok(out)
}

/// Loads and validates a textual network, plus labels when a label file is given.
pub fn load_dataset(
    graph_path: &Path,
    text_path: &Path,
    label_path: Option<&Path>,
    min_count: usize,
) -> Result<(TextualNetwork, Option<LabelMap>)> {
    let text_content = read(text_path)?;
    let entries = parse_keyed(text_path, &text_content)?;
    let n = entries.iter().map(|(id, _, _)| id + 1).max().unwrap_or(0);
    let mut raw: Vec<Option<String>> = vec![None; n];
    for (id, text, lineno) in entries {
        if raw[id].replace(text).is_some() {
            return Err(Error::parse(text_path, lineno, format!("duplicate text for node {id}")));
        }
    }
    if let Some(missing) = raw.iter().position(Option::is_none) {
        return Err(Error::parse(
            text_path,
            0,
            format!("node ids must be dense; node {missing} has no text"),
        ));
    }
    let raw: Vec<String> = raw.into_iter().map(Option::unwrap).collect();

    let graph_content = read(graph_path)?;
    let parsed = parse_graph(graph_path, &graph_content)?;
    let mut edges = Vec::with_capacity(parsed.len());
    for (e, lineno) in parsed {
        if e.src >= n || e.dst >= n {
            return Err(Error::parse(
                graph_path,
                lineno,
                format!("edge references node {} which has no text", e.src.max(e.dst)),
            ));
        }
        edges.push(e);
    }
    let network = TextualNetwork::from_raw(edges, &raw, min_count)?;

    let labels = match label_path {
        Some(p) => Some(load_labels(p, n)?),
        None => None,
    };
    Ok((network, labels))
}

pub fn load_labels(path: &Path, num_nodes: usize) -> Result<LabelMap> {
    let content = read(path)?;
    let mut classes: Vec<String> = Vec::new();
    let mut labels = vec![None; num_nodes];
    for (id, label, lineno) in parse_keyed(path, &content)? {
        if id >= num_nodes {
            return Err(Error::parse(path, lineno, format!("label for unknown node {id}")));
        }
        let label = label.trim().to_string();
        let class = match classes.iter().position(|c| *c == label) {
            Some(c) => c,
            None => {
                classes.push(label);
                classes.len() - 1
            }
        };
        if labels[id].replace(class).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate label for node {id}")));
        }
    }
    Ok(LabelMap { classes, labels })
}

/// Canonical graph serialization: `u<TAB>v<TAB>w` per edge.
pub fn format_graph(edges: &[Edge]) -> String {
    let mut out = String::new();
    for e in edges {
        let _ = writeln!(out, "{}\t{}\t{}", e.src, e.dst, e.weight);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train: Vec<Edge>,
    pub test: Vec<Edge>,
    pub ratio: f64,
    pub seed: u64,
}

/// Uniform random split; `round(ratio * |E|)` edges go to training. Both
/// halves keep the original edge order.
pub fn split_edges(network: &TextualNetwork, ratio: f64, seed: u64) -> Result<EdgeSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in (0, 1], got {ratio}"
        )));
    }
    let edges = network.edges();
    let n_train = (ratio * edges.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; edges.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = edges
        .iter()
        .zip(in_train)
        .partition(|(_, is_train)| *is_train);
    Ok(EdgeSplit {
        train: train.into_iter().map(|(e, _)| *e).collect(),
        test: test.into_iter().map(|(e, _)| *e).collect(),
        ratio,
        seed,
    })
}

/// Categorical distribution over nodes with mass proportional to `d_v^{3/4}`.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

pub fn noise_distribution(network: &TextualNetwork) -> Result<NoiseDistribution> {
    NoiseDistribution::from_degrees(&network.out_degrees())
}

impl NoiseDistribution {
    pub fn from_degrees(degrees: &[f64]) -> Result<Self> {
        let weights: Vec<f64> = degrees
            .iter()
            .map(|&d| if d > 0.0 { d.powf(0.75) } else { 0.0 })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument(
                "noise distribution needs at least one node with positive out-degree".into(),
            ));
        }
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::Numerical(format!("noise distribution: {e}")))?;
        Ok(NoiseDistribution {
            probs: weights.iter().map(|w| w / total).collect(),
            sampler,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draws a node outside `exclude`, i.e. from the distribution
    /// renormalized over the allowed support.
    pub fn sample_excluding<R: Rng>(&self, rng: &mut R, exclude: &[NodeId]) -> Result<NodeId> {
        const MAX_REJECTIONS: usize = 64;
        for _ in 0..MAX_REJECTIONS {
            let v = self.sampler.sample(rng);
            if !exclude.contains(&v) {
                return Ok(v);
            }
        }
        // allowed mass is small; sample it explicitly
        let allowed: Vec<(NodeId, f64)> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(v, p)| **p > 0.0 && !exclude.contains(v))
            .map(|(v, p)| (v, *p))
            .collect();
        if allowed.is_empty() {
            return Err(Error::InvalidArgument(
                "negative sampling support is entirely excluded".into(),
            ));
        }
        let idx = WeightedIndex::new(allowed.iter().map(|(_, p)| *p))
            .map_err(|e| Error::Numerical(format!("negative sampling: {e}")))?
            .sample(rng);
        Ok(allowed[idx].0)
    }
}

pub fn sample_negative<R: Rng>(
    dist: &NoiseDistribution,
    rng: &mut R,
    exclude: &[NodeId],
) -> Result<NodeId> {
    dist.sample_excluding(rng, exclude)
}
