//! End-to-end protocols: split, train, score, repeat.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::evaluator::{self, EvalReport, SvmConfig};
use crate::model::{self, Mode, ModelParams};
use crate::mutual_attention::embed_sequence;
use crate::network_data::{split_edges, LabelMap, NodeId, TextualNetwork};
use crate::ot_solver::nonzero_fraction;
use crate::trainer::{self, derive_seed, TrainConfig};

/// Threshold, relative to the matrix maximum, below which an attention
/// entry counts as zero.
pub const SPARSITY_THRESHOLD: f64 = 1e-3;

/// Splits with `seed`, trains on the training edges and returns the test AUC.
pub fn link_prediction_run(network: &TextualNetwork, cfg: &TrainConfig, ratio: f64, seed: u64) -> Result<f64> {
    let split = split_edges(network, ratio, seed)?;
    if split.test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} leaves no test edges"
        )));
    }
    let train_net = network.with_edges(split.train.clone())?;
    let run_cfg = TrainConfig { seed, ..cfg.clone() };
    let out = trainer::train(&train_net, &run_cfg)?;
    evaluator::auc_link_prediction(&out.params, &split.test, network, derive_seed(&[seed, 0xA0C]))
}

/// `runs` independent splits and trainings with seeds `base_seed..`.
pub fn link_prediction_experiment(
    network: &TextualNetwork,
    cfg: &TrainConfig,
    ratio: f64,
    runs: usize,
    base_seed: u64,
) -> Result<EvalReport> {
    let mut report = evaluator::repeated_eval("auc", runs, base_seed, |seed| {
        link_prediction_run(network, cfg, ratio, seed)
    })?;
    report.config = cfg.to_pairs();
    report.config.push(("ratio".into(), ratio.to_string()));
    report.config.push(("runs".into(), runs.to_string()));
    Ok(report)
}

/// Macro-F1 per label ratio on static embeddings of an already trained model.
pub fn classification_reports(
    embeddings: &Array2<f64>,
    labels: &LabelMap,
    label_ratios: &[f64],
    runs: usize,
    base_seed: u64,
    svm: &SvmConfig,
) -> Result<Vec<(f64, EvalReport)>> {
    label_ratios
        .iter()
        .map(|&r| {
            let report = evaluator::repeated_eval("macro_f1", runs, base_seed, |seed| {
                evaluator::classification_macro_f1(embeddings.view(), labels, r, seed, svm)
            })?;
            Ok((r, report))
        })
        .collect()
}

/// Trains AP models with each filter width and reports link-prediction AUC.
pub fn ngram_ablation(
    network: &TextualNetwork,
    cfg: &TrainConfig,
    lengths: &[usize],
    ratio: f64,
    runs: usize,
    base_seed: u64,
) -> Result<Vec<(usize, EvalReport)>> {
    if lengths.is_empty() {
        return Err(Error::InvalidArgument("no n-gram lengths given".into()));
    }
    if let Some(&even) = lengths.iter().find(|&&l| l % 2 == 0) {
        return Err(Error::InvalidArgument(format!(
            "n-gram length {even} is even; centered padding needs odd lengths"
        )));
    }
    lengths
        .iter()
        .map(|&len| {
            let mut run_cfg = cfg.clone();
            run_cfg.model.mode = Mode::Ap;
            run_cfg.model.ngram = len;
            Ok((len, link_prediction_experiment(network, &run_cfg, ratio, runs, base_seed)?))
        })
        .collect()
}

/// Everything needed to inspect the attention between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    pub u: NodeId,
    pub v: NodeId,
    pub tokens_u: Vec<String>,
    pub tokens_v: Vec<String>,
    /// `n_u x n_v` transport plan.
    pub plan: Array2<f64>,
    /// Parsed weights over `v`'s tokens as seen from `u` (AP mode).
    pub parsed: Option<Array1<f64>>,
    /// Row-softmax cosine attention for the same pair.
    pub baseline: Array2<f64>,
}

impl AttentionDump {
    pub fn plan_nonzero_fraction(&self) -> f64 {
        nonzero_fraction(self.plan.view(), SPARSITY_THRESHOLD)
    }

    pub fn baseline_nonzero_fraction(&self) -> f64 {
        nonzero_fraction(self.baseline.view(), SPARSITY_THRESHOLD)
    }

    pub fn to_text(&self, header: &[(String, String)]) -> String {
        let mut out = String::new();
        for (k, val) in header {
            writeln!(out, "# {k} = {val}").unwrap();
        }
        writeln!(out, "u = {}", self.u).unwrap();
        writeln!(out, "v = {}", self.v).unwrap();
        writeln!(out, "tokens_u = {}", self.tokens_u.join(" ")).unwrap();
        writeln!(out, "tokens_v = {}", self.tokens_v.join(" ")).unwrap();
        write_matrix(&mut out, "plan", &self.plan);
        if let Some(w) = &self.parsed {
            writeln!(out, "parsed_weights {}", w.len()).unwrap();
            writeln!(out, "{}", fmt_row(w.iter())).unwrap();
        }
        write_matrix(&mut out, "softmax_baseline", &self.baseline);
        writeln!(out, "plan_nonzero_fraction = {:.6}", self.plan_nonzero_fraction()).unwrap();
        writeln!(out, "softmax_nonzero_fraction = {:.6}", self.baseline_nonzero_fraction()).unwrap();
        out
    }
}

fn fmt_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ")
}

fn write_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols()).unwrap();
    for row in m.rows() {
        writeln!(out, "{}", fmt_row(row.iter())).unwrap();
    }
}

pub fn attention_dump(u: NodeId, v: NodeId, network: &TextualNetwork, params: &ModelParams) -> Result<AttentionDump> {
    let max_len = params.config.max_len;
    let ids_u = network.text(u)?.truncated(max_len).to_vec();
    let ids_v = network.text(v)?.truncated(max_len).to_vec();
    let plan = model::pair_plan(u, v, network, params)?.into_entries();
    let parsed = match params.config.mode {
        Mode::Ap => model::side_forward(u, v, plan.view(), network, params)?
            .parsed_weights()
            .cloned(),
        Mode::Ot => None,
    };
    let word = params.tensors.word.view();
    let baseline = evaluator::cosine_softmax_attention(
        embed_sequence(&ids_u, word)?.view(),
        embed_sequence(&ids_v, word)?.view(),
    );
    let names = |ids: &[u32]| -> Vec<String> {
        ids.iter()
            .map(|&i| network.vocab().token(i).unwrap_or("<unk>").to_string())
            .collect()
    };
    Ok(AttentionDump {
        u,
        v,
        tokens_u: names(&ids_u),
        tokens_v: names(&ids_v),
        plan,
        parsed,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthetic::{planted_network, PlantedConfig};

    fn small_cfg(mode: Mode) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                mode,
                dim: 8,
                word_dim: 8,
                ngram: 3,
                ..ModelConfig::default()
            },
            epochs: 2,
            batch_size: 16,
            lr: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_test_edge_auc_is_a_single_comparison() {
        let planted = planted_network(&PlantedConfig { nodes: 8, out_degree: 2, ..PlantedConfig::default() }).unwrap();
        let net = &planted.network;
        let ratio = (net.edges().len() as f64 - 1.0) / net.edges().len() as f64;
        let auc = link_prediction_run(net, &small_cfg(Mode::Ot), ratio, 3).unwrap();
        assert!([0.0, 0.5, 1.0].contains(&auc), "{auc}");
    }

    #[test]
    fn ablation_validates_lengths() {
        let planted = planted_network(&PlantedConfig { nodes: 8, ..PlantedConfig::default() }).unwrap();
        let cfg = small_cfg(Mode::Ap);
        assert!(ngram_ablation(&planted.network, &cfg, &[], 0.5, 1, 0).is_err());
        assert!(ngram_ablation(&planted.network, &cfg, &[3, 4], 0.5, 1, 0).is_err());
        let rows = ngram_ablation(&planted.network, &cfg, &[3], 0.5, 1, 0).unwrap();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn one_token_texts_give_unit_plan() {
        let texts = vec!["alpha".to_string(), "beta".to_string()];
        let net = TextualNetwork::from_raw(vec![], &texts, 1).unwrap();
        let cfg = small_cfg(Mode::Ap).model;
        let params = ModelParams::init(2, net.vocab().len(), &cfg, 1).unwrap();
        let dump = attention_dump(0, 1, &net, &params).unwrap();
        assert_eq!(dump.plan.dim(), (1, 1));
        assert!((dump.plan[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(dump.to_text(&[]).contains("plan 1 1\n1.000000\n"));
    }

    #[test]
    fn identical_texts_concentrate_on_the_diagonal() {
        let texts = vec!["a b c d e f".to_string(); 2];
        let net = TextualNetwork::from_raw(vec![], &texts, 1).unwrap();
        let params = ModelParams::init(2, net.vocab().len(), &small_cfg(Mode::Ot).model, 4).unwrap();
        let dump = attention_dump(0, 1, &net, &params).unwrap();
        let n = dump.plan.nrows() as isize;
        let diag_mass = |k: isize| -> f64 {
            (0..n)
                .filter(|&i| (0..n).contains(&(i + k)))
                .map(|i| dump.plan[[i as usize, (i + k) as usize]])
                .sum()
        };
        let main = diag_mass(0);
        for k in (1 - n)..n {
            assert!(main >= diag_mass(k), "offset {k}");
        }
        assert!(dump.plan_nonzero_fraction() <= dump.baseline_nonzero_fraction());
    }
}
