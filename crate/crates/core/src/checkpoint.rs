//! Plain-text checkpoints that round-trip bitwise.
//!
//! ```text
//! gane-checkpoint v1
//! dim = 4
//! ...
//! tensor topology 2 3 2
//! 1.5e-2 -3.1e-2
//! ...
//! ```
//!
//! Header lines are `key = value` up to the first `tensor` line. Values are
//! written in shortest round-trip exponent form, one tensor row per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &str = "gane-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Extra settings (training config, split) echoed beside the model config.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            params,
            meta: BTreeMap::new(),
        }
    }

    pub fn meta_value<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }
}

pub fn to_string(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let model_pairs = ckpt.params.config.to_pairs();
    for (k, v) in &model_pairs {
        writeln!(out, "{k} = {v}").unwrap();
    }
    for (k, v) in &ckpt.meta {
        if !model_pairs.iter().any(|(mk, _)| mk == k) {
            writeln!(out, "{k} = {v}").unwrap();
        }
    }
    let shapes = ckpt.params.tensors.shapes();
    for ((name, data), (_, shape)) in ckpt.params.tensors.named().into_iter().zip(shapes) {
        write!(out, "tensor {name} {}", shape.len()).unwrap();
        for d in &shape {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let row = *shape.last().unwrap_or(&1);
        for chunk in data.chunks(row.max(1)) {
            let line: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn from_str(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("missing `{MAGIC}` header")));
    }
    let mut pairs = BTreeMap::new();
    let mut rest = lines.peekable();
    while let Some(line) = rest.peek() {
        if line.starts_with("tensor ") {
            break;
        }
        let line = rest.next().unwrap();
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad header line `{line}`")))?;
        pairs.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = ModelConfig::from_pairs(&pairs)?;

    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in rest {
        if let Some(head) = line.strip_prefix("tensor ") {
            let mut parts = head.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| Error::Checkpoint("tensor line without a name".into()))?;
            let dims: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| Error::Checkpoint(format!("bad dim `{p}` in `{line}`"))))
                .collect::<Result<_>>()?;
            let (&ndim, dims) = dims
                .split_first()
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` lacks a rank")))?;
            if dims.len() != ndim {
                return Err(Error::Checkpoint(format!("tensor `{name}` rank {ndim} but {} dims", dims.len())));
            }
            tensors.insert(name.to_string(), (dims.to_vec(), Vec::new()));
            current = Some(name.to_string());
            continue;
        }
        let name = current
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("values before the first tensor".into()))?;
        let data = &mut tensors.get_mut(name).expect("inserted").1;
        for tok in line.split_whitespace() {
            data.push(
                tok.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad value `{tok}` in tensor `{name}`")))?,
            );
        }
    }

    let dim0 = |name: &str| -> Result<usize> {
        tensors
            .get(name)
            .and_then(|(d, _)| d.first().copied())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    };
    let mut params = ModelParams::zeros(dim0("topology")?, dim0("word_embeddings")?, &config)?;
    let expected = params.tensors.shapes();
    for ((name, slot), (_, shape)) in params.tensors.named_mut().into_iter().zip(expected) {
        let (dims, data) = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if dims != shape {
            return Err(Error::DimensionMismatch {
                tensor: name.to_string(),
                expected: shape,
                found: dims,
            });
        }
        if data.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has {} values, expected {}",
                data.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(&data);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }

    let model_keys: Vec<String> = config.to_pairs().into_iter().map(|(k, _)| k).collect();
    pairs.retain(|k, _| !model_keys.contains(k));
    Ok(Checkpoint { params, meta: pairs })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, to_string(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}
