//! Planted-partition textual networks for offline experiments and tests.
//!
//! Nodes belong to communities; edges prefer same-community targets and
//! texts mix community topic words with a shared background vocabulary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network_data::{format_graph, Edge, LabelMap, TextualNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub communities: usize,
    /// Out-edges attempted per node.
    pub out_degree: usize,
    /// Probability an edge stays inside the source's community.
    pub p_in: f64,
    pub text_len: usize,
    pub topic_words: usize,
    pub background_words: usize,
    /// Probability a token is drawn from the community's topic words.
    pub topic_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            nodes: 60,
            communities: 3,
            out_degree: 3,
            p_in: 0.9,
            text_len: 12,
            topic_words: 8,
            background_words: 30,
            topic_fraction: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedNetwork {
    pub network: TextualNetwork,
    pub labels: LabelMap,
    pub texts: Vec<String>,
}

pub fn planted_network(cfg: &PlantedConfig) -> Result<PlantedNetwork> {
    if cfg.nodes < 2 || cfg.communities == 0 || cfg.communities > cfg.nodes {
        return Err(Error::InvalidArgument(format!(
            "need 2 <= nodes and 1 <= communities <= nodes, got {} / {}",
            cfg.nodes, cfg.communities
        )));
    }
    if cfg.text_len == 0 || cfg.topic_words == 0 || cfg.background_words == 0 {
        return Err(Error::InvalidArgument("text sizes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let community: Vec<usize> = (0..cfg.nodes).map(|v| v % cfg.communities).collect();
    let members: Vec<Vec<usize>> = (0..cfg.communities)
        .map(|c| (0..cfg.nodes).filter(|&v| community[v] == c).collect())
        .collect();

    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for u in 0..cfg.nodes {
        for _ in 0..cfg.out_degree {
            let v = if rng.gen_bool(cfg.p_in) {
                let m = &members[community[u]];
                m[rng.gen_range(0..m.len())]
            } else {
                rng.gen_range(0..cfg.nodes)
            };
            if v != u && seen.insert((u, v)) {
                edges.push(Edge { src: u, dst: v, weight: 1.0 });
            }
        }
    }

    let texts: Vec<String> = (0..cfg.nodes)
        .map(|v| {
            (0..cfg.text_len)
                .map(|_| {
                    if rng.gen_bool(cfg.topic_fraction) {
                        format!("topic{}x{}", community[v], rng.gen_range(0..cfg.topic_words))
                    } else {
                        format!("word{}", rng.gen_range(0..cfg.background_words))
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let network = TextualNetwork::from_raw(edges, &texts, 1)?;
    let labels = LabelMap {
        classes: (0..cfg.communities).map(|c| format!("c{c}")).collect(),
        labels: community.into_iter().map(Some).collect(),
    };
    Ok(PlantedNetwork { network, labels, texts })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub graph: PathBuf,
    pub text: PathBuf,
    pub labels: PathBuf,
}

/// Writes `graph.txt`, `data.txt` and `group.txt` under `dir`.
pub fn write_dataset(dir: &Path, planted: &PlantedNetwork) -> Result<DatasetPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = DatasetPaths {
        graph: dir.join("graph.txt"),
        text: dir.join("data.txt"),
        labels: dir.join("group.txt"),
    };
    let mut text = String::new();
    let mut labels = String::new();
    for (v, t) in planted.texts.iter().enumerate() {
        writeln!(text, "{v}\t{t}").unwrap();
        if let Some(c) = planted.labels.labels[v] {
            writeln!(labels, "{v}\t{}", planted.labels.classes[c]).unwrap();
        }
    }
    let write = |p: &Path, s: &str| fs::write(p, s).map_err(|e| Error::io(p, e));
    write(&paths.graph, &format_graph(planted.network.edges()))?;
    write(&paths.text, &text)?;
    write(&paths.labels, &labels)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network_data::load_dataset;

    #[test]
    fn generator_is_deterministic_and_assortative() {
        let cfg = PlantedConfig::default();
        let a = planted_network(&cfg).unwrap();
        let b = planted_network(&cfg).unwrap();
        assert_eq!(a.network, b.network);
        let labels = &a.labels.labels;
        let inside = a
            .network
            .edges()
            .iter()
            .filter(|e| labels[e.src] == labels[e.dst])
            .count();
        assert!(inside as f64 > 0.8 * a.network.edges().len() as f64);
        assert!(a.network.edges().iter().all(|e| e.src != e.dst));
    }

    #[test]
    fn written_dataset_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let planted = planted_network(&PlantedConfig { nodes: 12, ..PlantedConfig::default() }).unwrap();
        let paths = write_dataset(dir.path(), &planted).unwrap();
        let (net, labels) = load_dataset(&paths.graph, &paths.text, Some(&paths.labels), 1).unwrap();
        assert_eq!(net, planted.network);
        assert_eq!(labels.unwrap(), planted.labels);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(planted_network(&PlantedConfig { nodes: 1, ..PlantedConfig::default() }).is_err());
        assert!(planted_network(&PlantedConfig { communities: 0, ..PlantedConfig::default() }).is_err());
    }
}
