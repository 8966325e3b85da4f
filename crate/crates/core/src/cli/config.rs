//! Run configuration: defaults, overlaid by checkpoint settings, a
//! `key = value` config file, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluator::SvmConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub type Layer = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub text: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train: TrainConfig,
    /// Fraction of edges used for training.
    pub ratio: f64,
    pub runs: usize,
    pub threads: usize,
    pub out: PathBuf,
    pub min_count: usize,
    pub label_ratios: Vec<f64>,
    pub svm: SvmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: None,
            text: None,
            labels: None,
            train: TrainConfig::default(),
            ratio: 1.0,
            runs: 10,
            threads: 0,
            out: PathBuf::from("gane-out"),
            min_count: 1,
            label_ratios: vec![0.1, 0.3, 0.5, 0.7],
            svm: SvmConfig::default(),
        }
    }
}

const PATH_KEYS: [&str; 4] = ["graph", "text", "labels", "out"];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every setting as `key = value`, paths included.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut out = vec![
            ("graph".to_string(), path(&self.graph)),
            ("text".to_string(), path(&self.text)),
            ("labels".to_string(), path(&self.labels)),
        ];
        out.extend(self.settings());
        out.push(("out".into(), self.out.display().to_string()));
        out
    }

    /// Settings that affect results; stored in checkpoints.
    pub fn settings(&self) -> Vec<(String, String)> {
        let mut out = self.train.to_pairs();
        out.extend(
            [
                ("ratio", self.ratio.to_string()),
                ("runs", self.runs.to_string()),
                ("threads", self.threads.to_string()),
                ("min_count", self.min_count.to_string()),
                ("label_ratios", join(&self.label_ratios)),
                ("svm_lambda", self.svm.lambda.to_string()),
                ("svm_epochs", self.svm.epochs.to_string()),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v)),
        );
        out
    }

    /// Resolves layers in order, later layers winning.
    pub fn resolve(layers: &[&Layer]) -> Result<Self> {
        let mut map: Layer = RunConfig::default().to_pairs().into_iter().collect();
        for layer in layers {
            for (k, v) in *layer {
                let key = k.replace('-', "_");
                if !map.contains_key(&key) {
                    return Err(Error::InvalidArgument(format!("unknown setting `{k}`")));
                }
                map.insert(key, v.clone());
            }
        }
        Self::from_map(&map)
    }

    fn from_map(map: &Layer) -> Result<Self> {
        fn get<T: FromStr>(map: &Layer, key: &str) -> Result<T> {
            let raw = &map[key];
            raw.parse()
                .map_err(|_| Error::InvalidArgument(format!("invalid value `{raw}` for `{key}`")))
        }
        let path = |key: &str| Some(&map[key]).filter(|s| !s.is_empty()).map(PathBuf::from);
        let model = ModelConfig::from_pairs(map).map_err(|e| match e {
            Error::Checkpoint(m) => Error::InvalidArgument(m),
            other => other,
        })?;
        let label_ratios = map["label_ratios"]
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("invalid label ratio `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = RunConfig {
            graph: path("graph"),
            text: path("text"),
            labels: path("labels"),
            train: TrainConfig {
                model,
                lr: get(map, "lr")?,
                epochs: get(map, "epochs")?,
                batch_size: get(map, "batch")?,
                negatives: get(map, "neg")?,
                seed: get(map, "seed")?,
            },
            ratio: get(map, "ratio")?,
            runs: get(map, "runs")?,
            threads: get(map, "threads")?,
            out: path("out").unwrap_or_else(|| PathBuf::from("gane-out")),
            min_count: get(map, "min_count")?,
            label_ratios,
            svm: SvmConfig {
                lambda: get(map, "svm_lambda")?,
                epochs: get(map, "svm_epochs")?,
                seed: 1,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be >= 1".into()));
        }
        if let Some(r) = self.label_ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::InvalidArgument(format!("label ratio must be in (0, 1), got {r}")));
        }
        Ok(())
    }

    pub fn dataset_paths(&self) -> Result<(&Path, &Path)> {
        match (&self.graph, &self.text) {
            (Some(g), Some(t)) => Ok((g, t)),
            _ => Err(Error::InvalidArgument("--graph and --text are required".into())),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<Layer> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Layer::new();
    for (i, line) in content.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `key = value`"))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

/// Checkpoint metadata minus paths, so a checkpoint can be evaluated
/// against a dataset at a different location.
pub fn checkpoint_layer(meta: &BTreeMap<String, String>, model: &ModelConfig) -> Layer {
    let mut layer: Layer = meta
        .iter()
        .filter(|(k, _)| !PATH_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    layer.extend(model.to_pairs());
    layer
}
