//! Concatenation of per-graph embeddings into entity feature vectors, and
//! recursive feature elimination driven by a linear SVM.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use crate::dataset::{FeatureDataset, Standardizer};
use crate::dataset::{class_counts, fold_split, stratified_folds, DatasetError};
use crate::embedding::Embeddings;
use crate::seed;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("entity {0:?} has no embedding in any source and no fill is available")]
    Unresolvable(String),
    #[error("fill for source {source_index} returned {got} values, expected {expected}")]
    FillDimension {
        source_index: usize,
        got: usize,
        expected: usize,
    },
    #[error("feature selection needs at least one column")]
    NoColumns,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Supplies a segment for an entity missing from one source.
pub trait SegmentFiller {
    fn fill(&self, source: usize, entity: &str) -> Option<Vec<f32>>;
}

#[derive(Clone, Copy)]
pub enum MissingPolicy<'a> {
    ZeroFill,
    Fill(&'a dyn SegmentFiller),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedVector {
    pub entity: String,
    pub values: Vec<f32>,
    /// One flag per source: whether the segment is a learned embedding.
    pub presence: Vec<bool>,
}

/// Concatenates the entity's embeddings from `sources` in order.
pub fn fuse(
    entity: &str,
    sources: &[&Embeddings],
    policy: MissingPolicy<'_>,
) -> Result<FusedVector, FusionError> {
    let width: usize = sources.iter().map(|s| s.dim()).sum();
    let mut values = Vec::with_capacity(width);
    let mut presence = Vec::with_capacity(sources.len());
    let mut resolved = false;
    for (i, source) in sources.iter().enumerate() {
        match source.get(entity) {
            Some(v) => {
                values.extend_from_slice(v);
                presence.push(true);
                resolved = true;
            }
            None => {
                let filled = match policy {
                    MissingPolicy::ZeroFill => None,
                    MissingPolicy::Fill(filler) => filler.fill(i, entity),
                };
                match filled {
                    Some(v) if v.len() != source.dim() => {
                        return Err(FusionError::FillDimension {
                            source_index: i,
                            got: v.len(),
                            expected: source.dim(),
                        })
                    }
                    Some(v) => {
                        values.extend_from_slice(&v);
                        resolved = true;
                    }
                    None => values.extend(std::iter::repeat_n(0.0, source.dim())),
                }
                presence.push(false);
            }
        }
    }
    if !resolved {
        return Err(FusionError::Unresolvable(entity.to_string()));
    }
    Ok(FusedVector {
        entity: entity.to_string(),
        values,
        presence,
    })
}

/// Features of a `(left, right)` entity pair: the left entity's fused vector
/// followed by the right one's. The pair's entity id is `left|right`.
pub fn fuse_pair(
    left: &str,
    right: &str,
    left_sources: &[&Embeddings],
    right_sources: &[&Embeddings],
    left_policy: MissingPolicy<'_>,
    right_policy: MissingPolicy<'_>,
) -> Result<FusedVector, FusionError> {
    let a = fuse(left, left_sources, left_policy)?;
    let b = fuse(right, right_sources, right_policy)?;
    let mut values = a.values;
    values.extend_from_slice(&b.values);
    let mut presence = a.presence;
    presence.extend_from_slice(&b.presence);
    Ok(FusedVector {
        entity: format!("{left}|{right}"),
        values,
        presence,
    })
}

/// Stacks fused vectors into a dataset. `origins` names each source segment
/// with its width, in order.
pub fn assemble_dataset(
    rows: &[(FusedVector, u8)],
    origins: &[(&str, usize)],
) -> Result<FeatureDataset, FusionError> {
    let width: usize = origins.iter().map(|(_, w)| w).sum();
    let mut features = Array2::zeros((rows.len(), width));
    for (mut dst, (v, _)) in features.outer_iter_mut().zip(rows) {
        if v.values.len() != width {
            return Err(FusionError::FillDimension {
                source_index: 0,
                got: v.values.len(),
                expected: width,
            });
        }
        dst.iter_mut().zip(&v.values).for_each(|(d, &s)| *d = f64::from(s));
    }
    let feature_origin = origins
        .iter()
        .flat_map(|(name, w)| (0..*w).map(move |i| format!("{name}:{i}")))
        .collect();
    Ok(FeatureDataset::new(
        features,
        rows.iter().map(|(_, l)| *l).collect(),
        rows.iter().map(|(v, _)| v.entity.clone()).collect(),
        feature_origin,
    )?)
}

/// Linear decision function `w · x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: ArrayView1<f64>) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: ArrayView1<f64>) -> u8 {
        u8::from(self.decision(x) >= 0.0)
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[u8]) -> f64 {
        let hits = x
            .outer_iter()
            .zip(y)
            .filter(|(row, &l)| self.predict(*row) == l)
            .count();
        hits as f64 / y.len().max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    /// L2 regularization strength λ.
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-2,
            epochs: 20,
        }
    }
}

/// Pegasos stochastic subgradient descent on
/// `λ/2 · (‖w‖² + b²) + mean hinge loss`, with labels mapped to ±1.
///
/// The bias is handled as the weight of a constant feature. The returned
/// parameters are the average of the iterates over the second half of
/// training.
pub fn linear_svm_fit_raw(
    x: ArrayView2<f64>,
    y: &[u8],
    cfg: SvmConfig,
    seed: u64,
) -> Result<LinearSvm, DatasetError> {
    let counts = class_counts(y);
    if counts[0] == 0 || counts[1] == 0 {
        return Err(DatasetError::SingleClass { counts });
    }
    let (n, f) = x.dim();
    let mut rng = seed::rng(seed);
    let mut w = vec![0.0; f + 1];
    let mut avg = vec![0.0; f + 1];
    let total = cfg.epochs.max(1) * n;
    let average_from = total / 2;
    let mut averaged = 0usize;
    for t in 1..=total {
        let i = rng.random_range(0..n);
        let row = x.row(i);
        let target = if y[i] == 1 { 1.0 } else { -1.0 };
        let margin = target * (row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[f]);
        let eta = 1.0 / (cfg.lambda * t as f64);
        let shrink = 1.0 - eta * cfg.lambda;
        w.iter_mut().for_each(|v| *v *= shrink);
        if margin < 1.0 {
            for (wj, &xj) in w.iter_mut().zip(row) {
                *wj += eta * target * xj;
            }
            w[f] += eta * target;
        }
        if t > average_from {
            averaged += 1;
            let k = averaged as f64;
            avg.iter_mut().zip(&w).for_each(|(a, &v)| *a += (v - *a) / k);
        }
    }
    let bias = avg[f];
    avg.truncate(f);
    Ok(LinearSvm { weights: avg, bias })
}

pub fn linear_svm_fit(ds: &FeatureDataset, cfg: SvmConfig, seed: u64) -> Result<LinearSvm, DatasetError> {
    linear_svm_fit_raw(ds.features.view(), &ds.labels, cfg, seed)
}

/// Mean stratified k-fold accuracy, standardizing with training-fold
/// statistics only.
pub fn cv_accuracy(
    x: ArrayView2<f64>,
    y: &[u8],
    folds: usize,
    cfg: SvmConfig,
    seed: u64,
) -> Result<f64, DatasetError> {
    let assignment = stratified_folds(y, folds, &mut seed::rng(seed::derive(seed, "folds")))?;
    let scores = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (train, test) = fold_split(&assignment, k);
            let xtr = x.select(Axis(0), &train);
            let ytr: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let scaler = Standardizer::fit(xtr.view());
            let model = linear_svm_fit_raw(
                scaler.transform(xtr.view()).view(),
                &ytr,
                cfg,
                seed::mix(seed, k as u64),
            )?;
            let xte = scaler.transform(x.select(Axis(0), &test).view());
            let yte: Vec<u8> = test.iter().map(|&i| y[i]).collect();
            Ok(model.accuracy(xte.view(), &yte))
        })
        .collect::<Result<Vec<f64>, DatasetError>>()?;
    Ok(scores.iter().sum::<f64>() / folds as f64)
}

/// Default elimination step: 5% of the columns, at least one.
pub fn default_rfe_step(cols: usize) -> usize {
    (cols / 20).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfeReport {
    /// Selected column indices, ascending.
    pub selected: Vec<usize>,
    /// CV accuracy per retained column count, in elimination order.
    pub curve: Vec<(usize, f64)>,
    /// Set when no column carries any variation; all columns are retained.
    pub degenerate: bool,
}

/// Recursive feature elimination: repeatedly score the remaining columns by
/// CV accuracy, fit on all rows, and drop the `step` columns with the
/// smallest |w|. Returns the subset with the best CV accuracy, preferring
/// smaller subsets on ties.
pub fn rfe_select(
    ds: &FeatureDataset,
    step: usize,
    folds: usize,
    cfg: SvmConfig,
    seed: u64,
) -> Result<RfeReport, FusionError> {
    let cols = ds.cols();
    if cols == 0 {
        return Err(FusionError::NoColumns);
    }
    if ds.rows() < folds {
        return Err(DatasetError::TooFewRows {
            rows: ds.rows(),
            folds,
            needed: folds,
        }
        .into());
    }
    ds.require_both_classes()?;
    if cols == 1 {
        let score = cv_accuracy(ds.features.view(), &ds.labels, folds, cfg, seed)?;
        return Ok(RfeReport {
            selected: vec![0],
            curve: vec![(1, score)],
            degenerate: false,
        });
    }
    let full_scaler = Standardizer::fit(ds.features.view());
    if full_scaler.constant_columns(ds.features.view()).len() == cols {
        log::warn!("all {cols} feature columns are constant; feature selection skipped");
        return Ok(RfeReport {
            selected: (0..cols).collect(),
            curve: Vec::new(),
            degenerate: true,
        });
    }
    let standardized = full_scaler.transform(ds.features.view());

    let step = step.max(1);
    let mut remaining: Vec<usize> = (0..cols).collect();
    let mut curve = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for round in 0.. {
        let x = ds.features.select(Axis(1), &remaining);
        let score = cv_accuracy(x.view(), &ds.labels, folds, cfg, seed)?;
        curve.push((remaining.len(), score));
        if best.as_ref().is_none_or(|(s, _)| score >= *s) {
            best = Some((score, remaining.clone()));
        }
        if remaining.len() == 1 {
            break;
        }
        let xs = standardized.select(Axis(1), &remaining);
        let model = linear_svm_fit_raw(xs.view(), &ds.labels, cfg, seed::mix(seed, 1000 + round))?;
        let mut order: Vec<usize> = (0..remaining.len()).collect();
        order.sort_by(|&a, &b| {
            model.weights[a]
                .abs()
                .total_cmp(&model.weights[b].abs())
                .then(remaining[a].cmp(&remaining[b]))
        });
        let drop = step.min(remaining.len() - 1);
        let mut dropped: Vec<usize> = order[..drop].to_vec();
        dropped.sort_unstable();
        for &pos in dropped.iter().rev() {
            remaining.remove(pos);
        }
    }
    let (_, mut selected) = best.expect("at least one round");
    selected.sort_unstable();
    Ok(RfeReport {
        selected,
        curve,
        degenerate: false,
    })
}
