//! Downstream binary classifiers and train/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{class_counts, DatasetError, FeatureDataset, Standardizer};
use crate::nn::{self, parse_row, Activation, Loss, ModelFormatError, Network, Optimizer};
use crate::seed;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("class {class} has {count} samples, at least 2 are required to split")]
    ClassTooSmall { class: u8, count: usize },
    #[error("train fraction must be in (0, 1), got {0}")]
    Fraction(f64),
    #[error("invalid classifier configuration: {0}")]
    Config(String),
    #[error("training diverged after {} epochs", trace.len())]
    Diverged { trace: Vec<f64> },
    #[error("feature width mismatch: model expects {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Format(#[from] ModelFormatError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            stratified: true,
            seed: 42,
        }
    }
}

/// Row indices `(train, test)`, both ascending.
///
/// Rows sharing an entity group (see [`FeatureDataset::entity_group`]) land
/// on the same side. When every group is a single row the split is exactly
/// stratified: each class contributes `round(fraction · count)` rows to the
/// training side (at least one row per side). With larger groups, whole
/// groups are assigned greedily toward the same per-class targets.
pub fn stratified_split_indices(
    ds: &FeatureDataset,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), ClassifierError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(ClassifierError::Fraction(spec.train_fraction));
    }
    let counts = ds.class_counts();
    for class in 0..2u8 {
        if counts[class as usize] < 2 {
            return Err(ClassifierError::ClassTooSmall {
                class,
                count: counts[class as usize],
            });
        }
    }
    let mut rng = seed::rng(seed::derive(spec.seed, "split"));
    let target = |n: usize| -> usize {
        ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1)
    };

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for row in 0..ds.rows() {
        groups.entry(ds.entity_group(row)).or_default().push(row);
    }
    let mut train = Vec::new();
    if groups.len() == ds.rows() {
        if spec.stratified {
            for class in 0..2u8 {
                let mut rows: Vec<usize> = (0..ds.rows()).filter(|&r| ds.labels[r] == class).collect();
                rows.shuffle(&mut rng);
                train.extend_from_slice(&rows[..target(rows.len())]);
            }
        } else {
            let mut rows: Vec<usize> = (0..ds.rows()).collect();
            rows.shuffle(&mut rng);
            train.extend_from_slice(&rows[..target(rows.len())]);
        }
    } else {
        let mut group_list: Vec<Vec<usize>> = groups.into_values().collect();
        group_list.shuffle(&mut rng);
        let goals = [target(counts[0]), target(counts[1])];
        let total_goal = target(ds.rows());
        let mut have = [0usize; 2];
        for rows in group_list {
            let add = class_counts(&rows.iter().map(|&r| ds.labels[r]).collect::<Vec<_>>());
            let cost = |h: [usize; 2]| -> i64 {
                if spec.stratified {
                    (h[0] as i64 - goals[0] as i64).abs() + (h[1] as i64 - goals[1] as i64).abs()
                } else {
                    (h[0] as i64 + h[1] as i64 - total_goal as i64).abs()
                }
            };
            let with = [have[0] + add[0], have[1] + add[1]];
            if cost(with) < cost(have) {
                have = with;
                train.extend(rows);
            }
        }
    }
    train.sort_unstable();
    let in_train: HashSet<usize> = train.iter().copied().collect();
    let test = (0..ds.rows()).filter(|r| !in_train.contains(r)).collect();
    Ok((train, test))
}

pub fn stratified_split(
    ds: &FeatureDataset,
    spec: &SplitSpec,
) -> Result<(FeatureDataset, FeatureDataset), ClassifierError> {
    let (train, test) = stratified_split_indices(ds, spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Puts every row whose entity group is in `test_groups` on the test side.
pub fn split_by_groups(
    ds: &FeatureDataset,
    test_groups: &HashSet<String>,
) -> (FeatureDataset, FeatureDataset) {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..ds.rows()).partition(|&r| test_groups.contains(ds.entity_group(r)));
    (ds.subset(&train), ds.subset(&test))
}

/// Class 1 iff `p >= threshold`.
pub fn threshold_apply(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRegConfig {
    /// Inverse L1 strength: the objective is `(1/C)·‖w‖₁ + Σ log-loss`.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            c: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LogisticRegression {
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> f64 {
        nn::sigmoid(self.weights.dot(&x) + self.bias)
    }

    pub fn zero_weights(&self) -> usize {
        self.weights.iter().filter(|&&w| w == 0.0).count()
    }
}

fn log_loss_sum(x: ArrayView2<f64>, y: &Array1<f64>, w: &Array1<f64>, b: f64) -> f64 {
    x.dot(w)
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let z = z + b;
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t * z
        })
        .sum()
}

fn log_loss_grad(x: ArrayView2<f64>, y: &Array1<f64>, w: &Array1<f64>, b: f64) -> (Array1<f64>, f64) {
    let residual: Array1<f64> = x
        .dot(w)
        .iter()
        .zip(y)
        .map(|(&z, &t)| nn::sigmoid(z + b) - t)
        .collect();
    (x.t().dot(&residual), residual.sum())
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Accelerated proximal gradient (FISTA with backtracking and restarts) on
/// `(1/C)·‖w‖₁ + Σ log-loss`. The bias is not penalized.
pub fn logreg_train(train: &FeatureDataset, cfg: &LogRegConfig) -> Result<LogisticRegression, ClassifierError> {
    if !(cfg.c > 0.0) {
        return Err(ClassifierError::Config("C must be positive".into()));
    }
    train.require_both_classes()?;
    let x = train.features.view();
    let y = train.labels_f64();
    let penalty = 1.0 / cfg.c;
    let objective = |w: &Array1<f64>, b: f64| {
        log_loss_sum(x, &y, w, b) + penalty * w.iter().map(|v| v.abs()).sum::<f64>()
    };

    let mut w = Array1::<f64>::zeros(train.cols());
    let mut b = 0.0;
    let (mut yw, mut yb) = (w.clone(), b);
    let mut t = 1.0f64;
    let mut lipschitz = 1.0f64;
    let mut current = objective(&w, b);
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let f_y = log_loss_sum(x, &y, &yw, yb);
        let (gw, gb) = log_loss_grad(x, &y, &yw, yb);
        let (nw, nb) = loop {
            let step = 1.0 / lipschitz;
            let nw: Array1<f64> = yw
                .iter()
                .zip(&gw)
                .map(|(&v, &g)| soft_threshold(v - step * g, step * penalty))
                .collect();
            let nb = yb - step * gb;
            let dw = &nw - &yw;
            let db = nb - yb;
            let bound = f_y + gw.dot(&dw) + gb * db + 0.5 * lipschitz * (dw.dot(&dw) + db * db);
            if log_loss_sum(x, &y, &nw, nb) <= bound + 1e-12 * f_y.abs().max(1.0) {
                break (nw, nb);
            }
            lipschitz *= 2.0;
        };
        let next = objective(&nw, nb);
        let change = (&nw - &w)
            .iter()
            .map(|v| v.abs())
            .fold((nb - b).abs(), f64::max);
        if next > current {
            // Restart momentum from the last iterate.
            t = 1.0;
            yw = w.clone();
            yb = b;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        yw = &nw + &((&nw - &w) * momentum);
        yb = nb + momentum * (nb - b);
        w = nw;
        b = nb;
        t = t_next;
        current = next;
        if change < cfg.tol {
            break;
        }
    }
    Ok(LogisticRegression {
        weights: w,
        bias: b,
        iterations,
    })
}

/// Exact k-nearest-neighbor vote under Euclidean distance. Distance ties
/// are broken by the lower training row index.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnModel {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(train: &FeatureDataset, k: usize) -> Result<KnnModel, ClassifierError> {
        if k == 0 || k % 2 == 0 {
            return Err(ClassifierError::Config(format!("k must be odd and positive, got {k}")));
        }
        if train.rows() == 0 {
            return Err(ClassifierError::Config("empty training set".into()));
        }
        Ok(KnnModel {
            features: train.features.clone(),
            labels: train.labels.clone(),
            k,
        })
    }

    /// Indices of the nearest training rows, closest first. Rows are
    /// scanned in index order and a distance computation is abandoned once
    /// its partial sum exceeds the current k-th best.
    pub fn neighbors(&self, x: ArrayView1<f64>) -> Vec<usize> {
        let k = self.k.min(self.features.nrows());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, row) in self.features.outer_iter().enumerate() {
            let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
            let mut d = 0.0;
            let mut pruned = false;
            for (a, b) in row.iter().zip(x) {
                d += (a - b) * (a - b);
                if d > bound {
                    pruned = true;
                    break;
                }
            }
            if pruned || (best.len() == k && d >= bound) {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    /// Fraction of the k neighbors labeled 1.
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> f64 {
        let nbrs = self.neighbors(x);
        nbrs.iter().filter(|&&i| self.labels[i] == 1).count() as f64 / nbrs.len() as f64
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> u8 {
        u8::from(self.predict_proba(x) > 0.5)
    }
}

pub fn knn_predict(train: &FeatureDataset, x: ArrayView1<f64>, k: usize) -> Result<u8, ClassifierError> {
    Ok(KnnModel::fit(train, k)?.predict(x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Rows per mini-batch, capped at the training set size.
    pub batch_size: usize,
    pub l2: f64,
    /// Stop once the epoch loss has not improved by `tol` for
    /// `n_iter_no_change` consecutive epochs.
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 100,
            learning_rate: 1e-3,
            max_iter: 200,
            batch_size: 200,
            l2: 1e-4,
            tol: 1e-4,
            n_iter_no_change: 10,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub network: Network,
}

impl Mlp {
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> f64 {
        nn::sigmoid(self.network.forward(x.insert_axis(Axis(0)))[[0, 0]])
    }

    pub fn predict_proba_batch(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.network.forward(x).iter().map(|&z| nn::sigmoid(z)).collect()
    }
}

/// One ReLU hidden layer, sigmoid output, cross-entropy loss, Adam. Returns
/// the model and the per-epoch training loss.
pub fn mlp_train(train: &FeatureDataset, cfg: &MlpConfig) -> Result<(Mlp, Vec<f64>), ClassifierError> {
    if cfg.hidden == 0 {
        return Err(ClassifierError::Config("hidden layer must have at least one unit".into()));
    }
    train.require_both_classes()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "mlp"));
    let mut network = Network::new(&[train.cols(), cfg.hidden, 1], Activation::Relu, &mut rng);
    let mut optimizer = Optimizer::adam(cfg.learning_rate);
    let y = train.labels_f64().insert_axis(Axis(1));
    let batch = cfg.batch_size.clamp(1, train.rows());
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.max_iter {
        let loss = nn::train_epoch(
            &mut network,
            &mut optimizer,
            &train.features,
            &y,
            batch,
            Loss::LogisticCrossEntropy,
            cfg.l2,
            &mut rng,
        );
        trace.push(loss);
        if !loss.is_finite() || !network.is_finite() {
            return Err(ClassifierError::Diverged { trace });
        }
        if loss > best - cfg.tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(loss);
        if stale >= cfg.n_iter_no_change {
            break;
        }
    }
    Ok((Mlp { network }, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClassifierConfig {
    LogReg(LogRegConfig),
    Knn { k: usize },
    Mlp(MlpConfig),
}

impl ClassifierConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ClassifierConfig::LogReg(_) => "logreg",
            ClassifierConfig::Knn { .. } => "knn",
            ClassifierConfig::Mlp(_) => "mlp",
        }
    }

    /// Defaults for `kind`: L1 logistic regression with C = 1, 3-NN, or an
    /// MLP with 100 hidden units, learning rate 0.001 and 200 epochs.
    pub fn from_kind(kind: &str, seed: u64) -> Option<ClassifierConfig> {
        match kind {
            "logreg" => Some(ClassifierConfig::LogReg(LogRegConfig::default())),
            "knn" => Some(ClassifierConfig::Knn { k: 3 }),
            "mlp" => Some(ClassifierConfig::Mlp(MlpConfig { seed, ..MlpConfig::default() })),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    LogReg(LogisticRegression),
    Knn(KnnModel),
    Mlp(Mlp),
}

/// A fitted model together with the scaler fit on its training data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub scaler: Standardizer,
    pub params: ModelParams,
    /// Per-epoch loss for the MLP, empty otherwise.
    pub loss_trace: Vec<f64>,
}

/// Standardizes with training statistics and fits the configured model.
pub fn fit_classifier(
    train: &FeatureDataset,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier, ClassifierError> {
    let scaler = Standardizer::fit(train.features.view());
    let mut scaled = train.clone();
    scaled.features = scaler.transform(train.features.view());
    let mut loss_trace = Vec::new();
    let params = match config {
        ClassifierConfig::LogReg(cfg) => ModelParams::LogReg(logreg_train(&scaled, cfg)?),
        ClassifierConfig::Knn { k } => {
            scaled.require_both_classes()?;
            ModelParams::Knn(KnnModel::fit(&scaled, *k)?)
        }
        ClassifierConfig::Mlp(cfg) => {
            let (model, trace) = mlp_train(&scaled, cfg)?;
            loss_trace = trace;
            ModelParams::Mlp(model)
        }
    };
    Ok(TrainedClassifier {
        config: config.clone(),
        scaler,
        params,
        loss_trace,
    })
}

impl TrainedClassifier {
    pub fn width(&self) -> usize {
        self.scaler.mean.len()
    }

    /// Probability of class 1 for every row of `x` (raw, unscaled features).
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, ClassifierError> {
        if x.ncols() != self.width() {
            return Err(ClassifierError::Width {
                expected: self.width(),
                got: x.ncols(),
            });
        }
        let z = self.scaler.transform(x);
        Ok(match &self.params {
            ModelParams::LogReg(m) => z.outer_iter().map(|r| m.predict_proba(r)).collect(),
            ModelParams::Knn(m) => (0..z.nrows())
                .into_par_iter()
                .map(|i| m.predict_proba(z.row(i)))
                .collect(),
            ModelParams::Mlp(m) => m.predict_proba_batch(z.view()),
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        match &self.config {
            ClassifierConfig::LogReg(c) => {
                writeln!(out, "classifier logreg c={} max_iter={} tol={}", c.c, c.max_iter, c.tol)?
            }
            ClassifierConfig::Knn { k } => writeln!(out, "classifier knn k={k}")?,
            ClassifierConfig::Mlp(c) => writeln!(
                out,
                "classifier mlp hidden={} learning_rate={} max_iter={} batch_size={} l2={} tol={} n_iter_no_change={} seed={}",
                c.hidden, c.learning_rate, c.max_iter, c.batch_size, c.l2, c.tol, c.n_iter_no_change, c.seed
            )?,
        }
        writeln!(out, "scaler {}", self.width())?;
        write_values(&mut out, self.scaler.mean.iter())?;
        write_values(&mut out, self.scaler.scale.iter())?;
        match &self.params {
            ModelParams::LogReg(m) => {
                write_values(&mut out, m.weights.iter())?;
                writeln!(out, "{}", m.bias)?;
            }
            ModelParams::Knn(m) => {
                writeln!(out, "train {}", m.labels.len())?;
                for (row, label) in m.features.outer_iter().zip(&m.labels) {
                    write!(out, "{label} ")?;
                    write_values(&mut out, row.iter())?;
                }
            }
            ModelParams::Mlp(m) => m.network.write_text(&mut out)?,
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<TrainedClassifier, ClassifierError> {
        let bad = |msg: String| ClassifierError::Format(ModelFormatError::Parse(msg));
        let mut lines = source.lines();
        let next = |lines: &mut std::io::Lines<R>| -> Result<String, ClassifierError> {
            lines
                .next()
                .transpose()
                .map_err(ModelFormatError::from)?
                .ok_or_else(|| bad("unexpected end of model file".into()))
        };
        let header = next(&mut lines)?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("classifier") {
            return Err(bad(format!("bad model header {header:?}")));
        }
        let kind = fields.next().unwrap_or_default().to_string();
        let params: BTreeMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        let get = |key: &str| -> Result<f64, ClassifierError> {
            params
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(format!("missing or bad hyperparameter {key}")))
        };
        let config = match kind.as_str() {
            "logreg" => ClassifierConfig::LogReg(LogRegConfig {
                c: get("c")?,
                max_iter: get("max_iter")? as usize,
                tol: get("tol")?,
            }),
            "knn" => ClassifierConfig::Knn { k: get("k")? as usize },
            "mlp" => ClassifierConfig::Mlp(MlpConfig {
                hidden: get("hidden")? as usize,
                learning_rate: get("learning_rate")?,
                max_iter: get("max_iter")? as usize,
                batch_size: get("batch_size")? as usize,
                l2: get("l2")?,
                tol: get("tol")?,
                n_iter_no_change: get("n_iter_no_change")? as usize,
                seed: params
                    .get("seed")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("missing seed".into()))?,
            }),
            other => return Err(bad(format!("unknown classifier kind {other:?}"))),
        };
        let scaler_line = next(&mut lines)?;
        let width: usize = scaler_line
            .strip_prefix("scaler ")
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| bad(format!("bad scaler line {scaler_line:?}")))?;
        let scaler = Standardizer {
            mean: parse_row(&next(&mut lines)?, width)?.into(),
            scale: parse_row(&next(&mut lines)?, width)?.into(),
        };
        let params = match &config {
            ClassifierConfig::LogReg(_) => {
                let weights = parse_row(&next(&mut lines)?, width)?.into();
                let bias = parse_row(&next(&mut lines)?, 1)?[0];
                ModelParams::LogReg(LogisticRegression { weights, bias, iterations: 0 })
            }
            ClassifierConfig::Knn { k } => {
                let count_line = next(&mut lines)?;
                let n: usize = count_line
                    .strip_prefix("train ")
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| bad(format!("bad knn header {count_line:?}")))?;
                let mut values = Vec::with_capacity(n * width);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let row = parse_row(&next(&mut lines)?, width + 1)?;
                    labels.push(row[0] as u8);
                    values.extend_from_slice(&row[1..]);
                }
                ModelParams::Knn(KnnModel {
                    features: Array2::from_shape_vec((n, width), values).expect("sized"),
                    labels,
                    k: *k,
                })
            }
            ClassifierConfig::Mlp(_) => {
                let mut rest = lines.by_ref();
                ModelParams::Mlp(Mlp { network: Network::read_text(&mut rest)? })
            }
        };
        Ok(TrainedClassifier {
            config,
            scaler,
            params,
            loss_trace: Vec::new(),
        })
    }
}

fn write_values<'a, W: Write>(out: &mut W, values: impl Iterator<Item = &'a f64>) -> std::io::Result<()> {
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.write_all(b" ")?;
        }
        write!(out, "{v}")?;
    }
    out.write_all(b"\n")
}
