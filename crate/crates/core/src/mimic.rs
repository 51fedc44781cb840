//! Embeddings for nodes that have none, synthesized from their neighbors.
//!
//! The naive variant averages the neighbors' vectors. The regression variant
//! learns `F: R^{n·D} → R^D` from nodes that do have an embedding, where the
//! input is the concatenation of `n` neighbor embeddings chosen by a fixed
//! slot policy:
//!
//! * embedded neighbors are ordered by degree (descending), ties by label;
//! * the first `n` fill the slots;
//! * missing slots are padded with the mean of the neighbors that were taken.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::embedding::Embeddings;
use crate::fusion::SegmentFiller;
use crate::graph::Graph;
use crate::nn::{self, Activation, Loss, ModelFormatError, Network, Optimizer};
use crate::seed;

#[derive(Debug, Error)]
pub enum MimicError {
    #[error("node {0:?} is not in the graph")]
    UnknownNode(String),
    #[error("node {0:?} has no neighbor with an embedding")]
    ColdNode(String),
    #[error("no node has both an embedding and an embedded neighbor")]
    EmptyTrainingSet,
    #[error("model expects dimension {model}, embeddings have {embeddings}")]
    Dimension { model: usize, embeddings: usize },
    #[error("invalid mimic configuration: {0}")]
    Config(String),
    #[error("mimic training diverged in epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Format(#[from] ModelFormatError),
}

/// Neighbors of `v` that have an embedding, in slot order.
fn embedded_neighbors<'g>(v: usize, g: &'g Graph, e: &Embeddings) -> Vec<&'g str> {
    let mut nbrs: Vec<usize> = g
        .neighbors(v)
        .expect("id from graph")
        .iter()
        .copied()
        .filter(|&u| e.contains(g.label(u)))
        .collect();
    nbrs.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then_with(|| g.label(a).cmp(g.label(b))));
    nbrs.into_iter().map(|u| g.label(u)).collect()
}

fn node_id(label: &str, g: &Graph) -> Result<usize, MimicError> {
    g.id_of(label).ok_or_else(|| MimicError::UnknownNode(label.to_string()))
}

/// Mean of the embeddings of `label`'s neighbors; neighbors without an
/// embedding are skipped.
pub fn naive_mimic(label: &str, g: &Graph, e: &Embeddings) -> Result<Vec<f32>, MimicError> {
    let v = node_id(label, g)?;
    let mut sum = vec![0.0f64; e.dim()];
    let mut count = 0usize;
    for &u in g.neighbors(v).expect("id from graph") {
        if let Some(vec) = e.get(g.label(u)) {
            sum.iter_mut().zip(vec).for_each(|(s, &x)| *s += f64::from(x));
            count += 1;
        }
    }
    if count == 0 {
        return Err(MimicError::ColdNode(label.to_string()));
    }
    Ok(sum.into_iter().map(|s| (s / count as f64) as f32).collect())
}

/// The `slots × dim` regressor input for `label`.
pub fn mimic_input(
    label: &str,
    g: &Graph,
    e: &Embeddings,
    slots: usize,
) -> Result<Vec<f64>, MimicError> {
    let v = node_id(label, g)?;
    let nbrs = embedded_neighbors(v, g, e);
    if nbrs.is_empty() {
        return Err(MimicError::ColdNode(label.to_string()));
    }
    let taken = &nbrs[..nbrs.len().min(slots)];
    let dim = e.dim();
    let mut input = Vec::with_capacity(slots * dim);
    for u in taken {
        input.extend(e.get(u).expect("filtered").iter().map(|&x| f64::from(x)));
    }
    if taken.len() < slots {
        let mut mean = vec![0.0; dim];
        for chunk in input.chunks(dim) {
            mean.iter_mut().zip(chunk).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= taken.len() as f64);
        for _ in taken.len()..slots {
            input.extend_from_slice(&mean);
        }
    }
    Ok(input)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimicOptimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MimicConfig {
    pub slots: usize,
    /// Hidden layer widths. `None` means one layer of width `2 · dim`; an
    /// empty list gives a linear model.
    pub hidden: Option<Vec<usize>>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub optimizer: MimicOptimizer,
    pub seed: u64,
}

impl Default for MimicConfig {
    fn default() -> Self {
        MimicConfig {
            slots: 10,
            hidden: None,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            validation_fraction: 0.1,
            optimizer: MimicOptimizer::Sgd,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MimicModel {
    pub slots: usize,
    pub dim: usize,
    pub network: Network,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MimicReport {
    pub train_nodes: Vec<String>,
    pub validation_nodes: Vec<String>,
    pub initial_validation_mse: Option<f64>,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
}

impl MimicModel {
    pub fn input_width(&self) -> usize {
        self.slots * self.dim
    }

    pub fn predict_input(&self, input: &[f64]) -> Vec<f32> {
        let x = ArrayView1::from(input).insert_axis(ndarray::Axis(0));
        self.network.forward(x).iter().map(|&v| v as f32).collect()
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let hidden: Vec<String> = self.network.sizes()[1..self.network.layers.len()]
            .iter()
            .map(|h| h.to_string())
            .collect();
        writeln!(
            out,
            "mimic slots={} dim={} hidden={}",
            self.slots,
            self.dim,
            if hidden.is_empty() { "-".to_string() } else { hidden.join(",") }
        )?;
        self.network.write_text(out)
    }

    pub fn read<R: BufRead>(source: R) -> Result<MimicModel, MimicError> {
        let mut lines = source.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(ModelFormatError::from)?
            .unwrap_or_default();
        let bad = || ModelFormatError::Parse(format!("bad mimic header {header:?}"));
        let mut slots = None;
        let mut dim = None;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("mimic") {
            return Err(bad().into());
        }
        for field in fields {
            match field.split_once('=') {
                Some(("slots", v)) => slots = v.parse().ok(),
                Some(("dim", v)) => dim = v.parse().ok(),
                Some(("hidden", _)) => {}
                _ => return Err(bad().into()),
            }
        }
        let (Some(slots), Some(dim)) = (slots, dim) else {
            return Err(bad().into());
        };
        let network = Network::read_text(&mut lines)?;
        if network.input_width() != slots * dim || network.output_width() != dim {
            return Err(ModelFormatError::Parse("network shape does not match header".into()).into());
        }
        Ok(MimicModel { slots, dim, network })
    }
}

fn stack(rows: &[Vec<f64>], width: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("uniform rows")
}

fn mse(model: &MimicModel, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    model.network.loss(x.view(), y.view(), Loss::MeanSquared, 0.0)
}

/// Fits the regressor on every node that has an embedding and at least one
/// embedded neighbor, holding out a seeded random fraction for validation.
pub fn mimic_train(
    g: &Graph,
    e: &Embeddings,
    cfg: &MimicConfig,
) -> Result<(MimicModel, MimicReport), MimicError> {
    if cfg.slots == 0 {
        return Err(MimicError::Config("at least one neighbor slot is required".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(MimicError::Config("validation fraction must be in [0, 1)".into()));
    }
    let dim = e.dim();
    let mut nodes: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for v in 0..g.node_count() {
        let label = g.label(v);
        let Some(target) = e.get(label) else { continue };
        match mimic_input(label, g, e, cfg.slots) {
            Ok(input) => nodes.push((
                label.to_string(),
                input,
                target.iter().map(|&x| f64::from(x)).collect(),
            )),
            Err(MimicError::ColdNode(_)) => continue,
            Err(err) => return Err(err),
        }
    }
    if nodes.is_empty() {
        return Err(MimicError::EmptyTrainingSet);
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "mimic"));
    nodes.shuffle(&mut rng);
    let validation = if nodes.len() >= 2 {
        ((nodes.len() as f64 * cfg.validation_fraction).round() as usize).min(nodes.len() - 1)
    } else {
        0
    };
    let (val_nodes, train_nodes) = nodes.split_at(validation);

    let width = cfg.slots * dim;
    let xs = |set: &[(String, Vec<f64>, Vec<f64>)]| {
        stack(&set.iter().map(|n| n.1.clone()).collect::<Vec<_>>(), width)
    };
    let ys = |set: &[(String, Vec<f64>, Vec<f64>)]| {
        stack(&set.iter().map(|n| n.2.clone()).collect::<Vec<_>>(), dim)
    };
    let (xtr, ytr) = (xs(train_nodes), ys(train_nodes));
    let (xva, yva) = (xs(val_nodes), ys(val_nodes));

    let hidden = cfg.hidden.clone().unwrap_or_else(|| vec![2 * dim]);
    let mut sizes = vec![width];
    sizes.extend(hidden);
    sizes.push(dim);
    let mut model = MimicModel {
        slots: cfg.slots,
        dim,
        network: Network::new(&sizes, Activation::Tanh, &mut rng),
    };
    let initial_validation_mse = (!val_nodes.is_empty()).then(|| mse(&model, &xva, &yva));
    let mut optimizer = match cfg.optimizer {
        MimicOptimizer::Sgd => Optimizer::sgd(cfg.learning_rate),
        MimicOptimizer::Adam => Optimizer::adam(cfg.learning_rate),
    };
    for epoch in 0..cfg.epochs {
        let loss = nn::train_epoch(
            &mut model.network,
            &mut optimizer,
            &xtr,
            &ytr,
            cfg.batch_size,
            Loss::MeanSquared,
            0.0,
            &mut rng,
        );
        if !loss.is_finite() || !model.network.is_finite() {
            return Err(MimicError::Diverged(epoch));
        }
    }
    let report = MimicReport {
        train_nodes: train_nodes.iter().map(|n| n.0.clone()).collect(),
        validation_nodes: val_nodes.iter().map(|n| n.0.clone()).collect(),
        initial_validation_mse,
        train_mse: mse(&model, &xtr, &ytr),
        validation_mse: (!val_nodes.is_empty()).then(|| mse(&model, &xva, &yva)),
    };
    Ok((model, report))
}

/// Regressor output for `label`, built from its embedded neighbors.
pub fn mimic_infer(
    m: &MimicModel,
    label: &str,
    g: &Graph,
    e: &Embeddings,
) -> Result<Vec<f32>, MimicError> {
    if e.dim() != m.dim {
        return Err(MimicError::Dimension {
            model: m.dim,
            embeddings: e.dim(),
        });
    }
    let input = mimic_input(label, g, e, m.slots)?;
    Ok(m.predict_input(&input))
}

/// Fills one fusion source for entities missing from it, using the entity's
/// neighbors in `graph` and their embeddings in `embeddings`.
pub struct MimicFiller<'a> {
    pub source_index: usize,
    pub graph: &'a Graph,
    pub embeddings: &'a Embeddings,
    /// Regression model; `None` selects the neighbor mean.
    pub model: Option<&'a MimicModel>,
}

impl SegmentFiller for MimicFiller<'_> {
    fn fill(&self, source: usize, entity: &str) -> Option<Vec<f32>> {
        if source != self.source_index {
            return None;
        }
        match self.model {
            Some(m) => mimic_infer(m, entity, self.graph, self.embeddings).ok(),
            None => naive_mimic(entity, self.graph, self.embeddings).ok(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_edge_list, GraphKind};
    use ndarray::Array2;

    fn graph(text: &str) -> Graph {
        load_edge_list(text.as_bytes(), GraphKind::Homogeneous).unwrap()
    }

    fn emb(dim: usize, rows: &[(&str, &[f32])]) -> Embeddings {
        let mut e = Embeddings::new(dim);
        for (l, v) in rows {
            e.insert(l, v).unwrap();
        }
        e
    }

    #[test]
    fn naive_mean_cases() {
        let g = graph("v a\nv b\nv c\n");
        let same = emb(2, &[("a", &[0.5, 1.0]), ("b", &[0.5, 1.0]), ("c", &[0.5, 1.0])]);
        assert_eq!(naive_mimic("v", &g, &same).unwrap(), [0.5, 1.0]);

        let opposite = emb(2, &[("a", &[1.5, -2.0]), ("b", &[-1.5, 2.0])]);
        assert_eq!(naive_mimic("v", &g, &opposite).unwrap(), [0.0, 0.0]);

        let three = emb(2, &[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[2.0, 2.0])]);
        assert_eq!(naive_mimic("v", &g, &three).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn cold_and_unknown_nodes() {
        let g = graph("v a\n");
        let e = emb(1, &[("v", &[1.0])]);
        assert!(matches!(naive_mimic("v", &g, &e), Err(MimicError::ColdNode(_))));
        assert!(matches!(naive_mimic("zz", &g, &e), Err(MimicError::UnknownNode(_))));
        assert!(matches!(mimic_input("v", &g, &e, 3), Err(MimicError::ColdNode(_))));
    }

    #[test]
    fn slot_policy_orders_by_degree_then_label_and_pads() {
        // b has degree 3, c and d degree 1 (c < d by label).
        let g = graph("v b\nv d\nv c\nb x\nb y\n");
        let e = emb(1, &[("b", &[1.0]), ("c", &[2.0]), ("d", &[3.0])]);
        assert_eq!(mimic_input("v", &g, &e, 2).unwrap(), [1.0, 2.0]);
        assert_eq!(mimic_input("v", &g, &e, 5).unwrap(), [1.0, 2.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn identity_model_returns_neighbor() {
        let g = graph("v a\n");
        let e = emb(3, &[("a", &[0.25, -1.0, 4.0])]);
        let mut network = Network::new(&[3, 3], Activation::Tanh, &mut seed::rng(1));
        network.layers[0].weights = Array2::eye(3);
        network.layers[0].bias.fill(0.0);
        let model = MimicModel { slots: 1, dim: 3, network };
        assert_eq!(mimic_infer(&model, "v", &g, &e).unwrap(), [0.25, -1.0, 4.0]);
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let g = graph("a b\nb c\nc a\nc d\n");
        let e = emb(2, &[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0]), ("d", &[0.5, 0.5])]);
        let base = MimicConfig { slots: 2, learning_rate: 0.0, epochs: 0, ..MimicConfig::default() };
        let (untrained, _) = mimic_train(&g, &e, &base).unwrap();
        let (trained, _) = mimic_train(&g, &e, &MimicConfig { epochs: 20, ..base }).unwrap();
        assert_eq!(untrained, trained);
    }

    #[test]
    fn empty_training_set() {
        let g = graph("a b\n");
        let e = emb(1, &[("a", &[1.0])]);
        assert!(matches!(
            mimic_train(&g, &e, &MimicConfig::default()),
            Err(MimicError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let g = graph("a b\nb c\nc a\n");
        let e = emb(2, &[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0])]);
        let cfg = MimicConfig { slots: 2, epochs: 3, ..MimicConfig::default() };
        let (model, _) = mimic_train(&g, &e, &cfg).unwrap();
        let mut buf = Vec::new();
        model.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("mimic slots=2 dim=2 hidden=4\n"));
        assert_eq!(MimicModel::read(&buf[..]).unwrap(), model);
        assert!(MimicModel::read("mimic slots=2\n".as_bytes()).is_err());
    }

    #[test]
    fn filler_only_fills_its_source() {
        let g = graph("v a\n");
        let e = emb(1, &[("a", &[2.0])]);
        let filler = MimicFiller { source_index: 1, graph: &g, embeddings: &e, model: None };
        assert_eq!(filler.fill(1, "v"), Some(vec![2.0]));
        assert_eq!(filler.fill(0, "v"), None);
        assert_eq!(filler.fill(1, "a"), None);
    }
}
