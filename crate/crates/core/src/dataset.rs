//! Labeled feature matrices, standardization and stratified fold assignment.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("feature matrix has {rows} rows but {labels} labels and {ids} entity ids")]
    Shape {
        rows: usize,
        labels: usize,
        ids: usize,
    },
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {label} at row {row} is not binary")]
    Label { row: usize, label: u8 },
    #[error("dataset file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("need at least {needed} rows for {folds} folds, got {rows}")]
    TooFewRows {
        rows: usize,
        folds: usize,
        needed: usize,
    },
    #[error("both classes are required, found counts {counts:?}")]
    SingleClass { counts: [usize; 2] },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-per-entity feature matrix with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub entity_ids: Vec<String>,
    /// Source tag per column.
    pub feature_origin: Vec<String>,
}

impl FeatureDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        entity_ids: Vec<String>,
        feature_origin: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if features.nrows() != labels.len() || features.nrows() != entity_ids.len() {
            return Err(DatasetError::Shape {
                rows: features.nrows(),
                labels: labels.len(),
                ids: entity_ids.len(),
            });
        }
        if let Some(((row, col), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DatasetError::NonFinite { row, col });
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 1) {
            return Err(DatasetError::Label { row, label });
        }
        let feature_origin = if feature_origin.len() == features.ncols() {
            feature_origin
        } else {
            vec!["unknown".to_string(); features.ncols()]
        };
        Ok(FeatureDataset {
            features,
            labels,
            entity_ids,
            feature_origin,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn cols(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        class_counts(&self.labels)
    }

    pub fn require_both_classes(&self) -> Result<(), DatasetError> {
        let counts = self.class_counts();
        if counts[0] == 0 || counts[1] == 0 {
            return Err(DatasetError::SingleClass { counts });
        }
        Ok(())
    }

    pub fn labels_f64(&self) -> Array1<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            entity_ids: rows.iter().map(|&r| self.entity_ids[r].clone()).collect(),
            feature_origin: self.feature_origin.clone(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select(Axis(1), cols),
            labels: self.labels.clone(),
            entity_ids: self.entity_ids.clone(),
            feature_origin: cols.iter().map(|&c| self.feature_origin[c].clone()).collect(),
        }
    }

    /// Grouping key of a row: the part of the entity id before the first `|`.
    /// Pair rows (`user|seller`) are grouped by user.
    pub fn entity_group(&self, row: usize) -> &str {
        let id = &self.entity_ids[row];
        id.split_once('|').map_or(id.as_str(), |(head, _)| head)
    }

    /// Header `N F`, then `entity_id label f1 ... fF` per row.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.rows(), self.cols())?;
        for (i, row) in self.features.outer_iter().enumerate() {
            write!(out, "{} {}", self.entity_ids[i], self.labels[i])?;
            for v in row {
                write!(out, " {v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<FeatureDataset, DatasetError> {
        let err = |line: usize, reason: String| DatasetError::Parse { line, reason };
        let mut lines = source.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| err(1, "missing header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(1, format!("bad header field {t:?}"))))
            .collect::<Result<_, _>>()?;
        let [n, f] = dims[..] else {
            return Err(err(1, "header must be `N F`".into()));
        };
        let mut values = Vec::with_capacity(n * f);
        let mut labels = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let id = fields.next().unwrap_or_default();
            let label: u8 = fields
                .next()
                .and_then(|l| l.parse().ok())
                .ok_or_else(|| err(lineno, "missing or bad label".into()))?;
            let before = values.len();
            for t in fields {
                values.push(t.parse::<f64>().map_err(|_| err(lineno, format!("bad value {t:?}")))?);
            }
            if values.len() - before != f {
                return Err(err(lineno, format!("expected {f} features, got {}", values.len() - before)));
            }
            ids.push(id.to_string());
            labels.push(label);
        }
        if labels.len() != n {
            return Err(err(1, format!("header declares {n} rows, found {}", labels.len())));
        }
        let features = Array2::from_shape_vec((n, f), values).expect("shape checked");
        FeatureDataset::new(features, labels, ids, Vec::new())
    }
}

pub fn class_counts(labels: &[u8]) -> [usize; 2] {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    [labels.len() - ones, ones]
}

/// Per-column affine scaling to zero mean and unit variance. Constant
/// columns map to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Standardizer {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.outer_iter() {
            for ((v, &m), &r) in var.iter_mut().zip(&mean).zip(row) {
                *v += (r - m) * (r - m);
            }
        }
        let scale = var.mapv(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        Standardizer { mean, scale }
    }

    /// Identity transform for `cols` columns.
    pub fn identity(cols: usize) -> Standardizer {
        Standardizer {
            mean: Array1::zeros(cols),
            scale: Array1::ones(cols),
        }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Columns with no spread in the data the scaler was fit on.
    pub fn constant_columns(&self, x: ArrayView2<f64>) -> Vec<usize> {
        (0..x.ncols())
            .filter(|&c| {
                let col = x.column(c);
                col.iter().all(|&v| (v - col[0]).abs() <= 1e-12)
            })
            .collect()
    }
}

/// Assigns every row to one of `folds` folds so each fold holds within one
/// sample of its share of every class.
pub fn stratified_folds<R: Rng + ?Sized>(
    labels: &[u8],
    folds: usize,
    rng: &mut R,
) -> Result<Vec<usize>, DatasetError> {
    if folds == 0 || labels.len() < folds {
        return Err(DatasetError::TooFewRows {
            rows: labels.len(),
            folds,
            needed: folds.max(1),
        });
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

/// Train/test row indices for fold `k`.
pub fn fold_split(assignment: &[usize], k: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != k)
}
