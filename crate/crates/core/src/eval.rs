//! Classification metrics, ROC analysis and learning curves.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::classifiers::{fit_classifier, threshold_apply, ClassifierConfig, ClassifierError};
use crate::dataset::{stratified_folds, FeatureDataset};
use crate::seed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("length mismatch: {truth} labels vs {other} predictions")]
    Length { truth: usize, other: usize },
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("ROC needs both classes in the ground truth")]
    SingleClass,
    #[error("non-finite score at row {0}")]
    NonFinite(usize),
    #[error("infeasible learning curve: {0}")]
    Infeasible(String),
    #[error("predictions file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// No predictions of this class, so precision is reported as 0.
    pub precision_undefined: bool,
    /// No true members of this class, so recall is reported as 0.
    pub recall_undefined: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Rows with `score >= threshold` are called positive. The first point
    /// uses `+inf`.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub classes: [ClassMetrics; 2],
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub auc: Option<f64>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

fn check_lengths(truth: &[u8], other: usize) -> Result<(), EvalError> {
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    if truth.len() != other {
        return Err(EvalError::Length {
            truth: truth.len(),
            other,
        });
    }
    if let Some(&bad) = truth.iter().find(|&&y| y > 1) {
        return Err(EvalError::Label(bad));
    }
    Ok(())
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<Confusion, EvalError> {
    check_lengths(y_true, y_pred.len())?;
    let mut c = Confusion::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (0, 0) => c.tn += 1,
            (0, 1) => c.fp += 1,
            (1, 0) => c.fn_ += 1,
            (1, 1) => c.tp += 1,
            (_, bad) => return Err(EvalError::Label(bad)),
        }
    }
    Ok(c)
}

fn class_metrics(hit: usize, predicted: usize, support: usize) -> ClassMetrics {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(hit, predicted);
    let recall = ratio(hit, support);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support,
        precision_undefined: predicted == 0,
        recall_undefined: support == 0,
    }
}

pub fn report_from_confusion(c: Confusion) -> MetricsReport {
    let classes = [
        class_metrics(c.tn, c.tn + c.fn_, c.tn + c.fp),
        class_metrics(c.tp, c.tp + c.fp, c.tp + c.fn_),
    ];
    let total = c.total() as f64;
    let avg = |weight: &dyn Fn(&ClassMetrics) -> f64| Averages {
        precision: classes.iter().map(|m| weight(m) * m.precision).sum(),
        recall: classes.iter().map(|m| weight(m) * m.recall).sum(),
        f1: classes.iter().map(|m| weight(m) * m.f1).sum(),
    };
    MetricsReport {
        confusion: c,
        classes,
        macro_avg: avg(&|_| 0.5),
        weighted_avg: avg(&|m| m.support as f64 / total),
        accuracy: (c.tn + c.tp) as f64 / total,
        auc: None,
        roc: Vec::new(),
    }
}

pub fn classification_report(y_true: &[u8], y_pred: &[u8]) -> Result<MetricsReport, EvalError> {
    Ok(report_from_confusion(confusion(y_true, y_pred)?))
}

/// ROC curve over the distinct scores (descending) and its trapezoidal area.
/// Tied scores move the curve diagonally in one step, so the area equals the
/// probability that a random positive outscores a random negative, with
/// ties counted one half.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<(f64, Vec<RocPoint>), EvalError> {
    check_lengths(y_true, scores.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(i));
    }
    let positives = y_true.iter().filter(|&&y| y == 1).count();
    let negatives = y_true.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let point = RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold,
        };
        let prev = roc.last().expect("non-empty");
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        roc.push(point);
    }
    Ok((auc, roc))
}

/// Thresholded report plus ROC/AUC for probability scores.
pub fn evaluate_scores(y_true: &[u8], scores: &[f64], threshold: f64) -> Result<MetricsReport, EvalError> {
    let predicted: Vec<u8> = scores.iter().map(|&s| threshold_apply(s, threshold)).collect();
    let mut report = classification_report(y_true, &predicted)?;
    let (auc, roc) = roc_auc(y_true, scores)?;
    report.auc = Some(auc);
    report.roc = roc;
    Ok(report)
}

impl MetricsReport {
    /// One metric per line as `name=value`.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let c = &self.confusion;
        writeln!(out, "tn={}\nfp={}\nfn={}\ntp={}", c.tn, c.fp, c.fn_, c.tp)?;
        for (class, m) in self.classes.iter().enumerate() {
            writeln!(out, "class{class}.precision={}", m.precision)?;
            writeln!(out, "class{class}.recall={}", m.recall)?;
            writeln!(out, "class{class}.f1={}", m.f1)?;
            writeln!(out, "class{class}.support={}", m.support)?;
            writeln!(out, "class{class}.precision_undefined={}", m.precision_undefined)?;
            writeln!(out, "class{class}.recall_undefined={}", m.recall_undefined)?;
        }
        for (name, a) in [("macro_avg", &self.macro_avg), ("weighted_avg", &self.weighted_avg)] {
            writeln!(out, "{name}.precision={}", a.precision)?;
            writeln!(out, "{name}.recall={}", a.recall)?;
            writeln!(out, "{name}.f1={}", a.f1)?;
        }
        writeln!(out, "accuracy={}", self.accuracy)?;
        if let Some(auc) = self.auc {
            writeln!(out, "auc={auc}")?;
        }
        Ok(())
    }

    /// Single-line JSON summary.
    pub fn summary_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn write_roc_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr,threshold")?;
        for p in &self.roc {
            writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
        }
        Ok(())
    }

    /// Human-readable table in integer percent.
    pub fn render_table(&self) -> String {
        let pct = |v: f64| format!("{:.0}", v * 100.0);
        let mut s = format!("{:<14}{:>10}{:>8}{:>10}{:>9}\n", "", "precision", "recall", "f1-score", "support");
        for (class, m) in self.classes.iter().enumerate() {
            let flag = if m.precision_undefined { "*" } else { "" };
            s += &format!(
                "{:<14}{:>10}{:>8}{:>10}{:>9}\n",
                class,
                format!("{}{flag}", pct(m.precision)),
                pct(m.recall),
                pct(m.f1),
                m.support
            );
        }
        let total = self.confusion.total();
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            s += &format!(
                "{:<14}{:>10}{:>8}{:>10}{:>9}\n",
                name,
                pct(a.precision),
                pct(a.recall),
                pct(a.f1),
                total
            );
        }
        s += &format!("accuracy {}%\n", pct(self.accuracy));
        if let Some(auc) = self.auc {
            s += &format!("auc {}%\n", pct(auc));
        }
        if self.classes.iter().any(|m| m.precision_undefined) {
            s += "* no predictions for this class, precision reported as 0\n";
        }
        s
    }
}

/// Writes `entity_id true_label score` lines.
pub fn write_predictions<W: Write>(mut out: W, ids: &[String], truth: &[u8], scores: &[f64]) -> std::io::Result<()> {
    for ((id, y), s) in ids.iter().zip(truth).zip(scores) {
        writeln!(out, "{id} {y} {s}")?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<(Vec<String>, Vec<u8>, Vec<f64>), EvalError> {
    let (mut ids, mut truth, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| EvalError::Parse {
            line: i + 1,
            msg: format!("{msg}, expected `entity_id true_label score`: {line:?}"),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, y, s] = fields[..] else {
            return Err(bad("wrong field count"));
        };
        let y: u8 = y.parse().ok().filter(|&y| y <= 1).ok_or_else(|| bad("bad label"))?;
        let s: f64 = s.parse().ok().filter(|s: &f64| s.is_finite()).ok_or_else(|| bad("bad score"))?;
        ids.push(id.to_string());
        truth.push(y);
        scores.push(s);
    }
    Ok((ids, truth, scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub train_rows: usize,
    pub train_mean: f64,
    pub train_sd: f64,
    pub cv_mean: f64,
    pub cv_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn accuracy_of(cfg: &ClassifierConfig, train: &FeatureDataset, test: &FeatureDataset) -> Result<(f64, f64), EvalError> {
    let model = fit_classifier(train, cfg)?;
    let acc = |ds: &FeatureDataset| -> Result<f64, EvalError> {
        let p = model.predict_proba(ds.features.view())?;
        let hits = p.iter().zip(&ds.labels).filter(|(&p, &y)| threshold_apply(p, 0.5) == y).count();
        Ok(hits as f64 / ds.rows() as f64)
    };
    Ok((acc(train)?, acc(test)?))
}

/// For each fraction and each of `folds` stratified folds, trains on a
/// stratified subsample (that fraction of the remaining folds) and scores
/// accuracy on the subsample and on the held-out fold.
pub fn learning_curve(
    cfg: &ClassifierConfig,
    ds: &FeatureDataset,
    fractions: &[f64],
    folds: usize,
    seed_value: u64,
) -> Result<Vec<CurvePoint>, EvalError> {
    if folds < 2 {
        return Err(EvalError::Infeasible(format!("need at least 2 folds, got {folds}")));
    }
    let counts = ds.class_counts();
    let min_class = counts[0].min(counts[1]);
    if min_class < folds {
        return Err(EvalError::Infeasible(format!(
            "smallest class has {min_class} rows, fewer than {folds} folds"
        )));
    }
    for &f in fractions {
        let smallest = (f * (min_class - min_class.div_ceil(folds)) as f64).floor();
        if !(f > 0.0 && f <= 1.0) || smallest < 1.0 {
            return Err(EvalError::Infeasible(format!(
                "fraction {f} leaves a class without training rows"
            )));
        }
    }
    let mut rng = seed::rng(seed::derive(seed_value, "learning-curve"));
    let assignment = stratified_folds(&ds.labels, folds, &mut rng).map_err(ClassifierError::from)?;
    let mut points = Vec::with_capacity(fractions.len());
    for (fi, &fraction) in fractions.iter().enumerate() {
        let results: Vec<(usize, f64, f64)> = (0..folds)
            .into_par_iter()
            .map(|fold| {
                let mut rng = seed::rng(seed::mix(seed_value, (fi * folds + fold) as u64));
                let test: Vec<usize> = (0..ds.rows()).filter(|&r| assignment[r] == fold).collect();
                let mut train = Vec::new();
                for class in 0..2u8 {
                    let mut rows: Vec<usize> = (0..ds.rows())
                        .filter(|&r| assignment[r] != fold && ds.labels[r] == class)
                        .collect();
                    rows.shuffle(&mut rng);
                    let keep = ((fraction * rows.len() as f64).round() as usize).clamp(1, rows.len());
                    train.extend_from_slice(&rows[..keep]);
                }
                train.sort_unstable();
                let (tr, cv) = accuracy_of(cfg, &ds.subset(&train), &ds.subset(&test))?;
                Ok((train.len(), tr, cv))
            })
            .collect::<Result<_, EvalError>>()?;
        let train_scores: Vec<f64> = results.iter().map(|r| r.1).collect();
        let cv_scores: Vec<f64> = results.iter().map(|r| r.2).collect();
        let (train_mean, train_sd) = mean_sd(&train_scores);
        let (cv_mean, cv_sd) = mean_sd(&cv_scores);
        points.push(CurvePoint {
            fraction,
            train_rows: results.iter().map(|r| r.0).sum::<usize>() / folds,
            train_mean,
            train_sd,
            cv_mean,
            cv_sd,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 1, 0, 1];
        let r = classification_report(&y, &y).unwrap();
        for m in &r.classes {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.weighted_avg.f1, 1.0);
    }

    #[test]
    fn direct_formula_case() {
        // tp=3, fp=1, fn=1, tn=2
        let truth = [1, 1, 1, 1, 0, 0, 0];
        let pred = [1, 1, 1, 0, 1, 0, 0];
        let r = classification_report(&truth, &pred).unwrap();
        assert_eq!(r.confusion, Confusion { tn: 2, fp: 1, fn_: 1, tp: 3 });
        assert_eq!(r.classes[1].precision, 0.75);
        assert_eq!(r.classes[1].recall, 0.75);
        assert_eq!(r.classes[1].f1, 0.75);
    }

    #[test]
    fn undefined_precision_is_flagged() {
        let r = classification_report(&[0, 1, 0], &[0, 0, 0]).unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert!(r.classes[1].precision_undefined);
        assert!(!r.classes[0].precision_undefined);
        assert!(r.render_table().contains('*'));
    }

    #[test]
    fn report_errors() {
        assert!(matches!(classification_report(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(classification_report(&[0], &[0, 1]), Err(EvalError::Length { .. })));
        assert!(matches!(classification_report(&[2], &[0]), Err(EvalError::Label(2))));
    }

    #[test]
    fn auc_degenerate_cases() {
        let y = [0, 1, 0, 1, 1];
        let s: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        assert_eq!(roc_auc(&y, &s).unwrap().0, 1.0);
        let (auc, roc) = roc_auc(&y, &[0.3; 5]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(roc.len(), 2);
        assert!(matches!(roc_auc(&[1, 1], &[0.1, 0.2]), Err(EvalError::SingleClass)));
    }

    #[test]
    fn roc_ends_at_corners() {
        let (_, roc) = roc_auc(&[0, 1, 0, 1], &[0.1, 0.4, 0.35, 0.8]).unwrap();
        assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        let last = roc.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(roc_auc(&[0, 1, 0, 1], &[0.1, 0.3, 0.35, 0.8]).unwrap().0, 0.75);
    }

    #[test]
    fn serializations() {
        let r = evaluate_scores(&[0, 1, 1, 0], &[0.2, 0.9, 0.6, 0.7], 0.5).unwrap();
        let mut text = Vec::new();
        r.write_text(&mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.lines().all(|l| l.contains('=')));
        assert!(text.contains("auc=0.75"));
        let json = r.summary_json();
        assert!(!json.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["confusion"]["fn"], 0);
        let mut csv = Vec::new();
        r.write_roc_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    #[test]
    fn predictions_round_trip() {
        let ids = vec!["a".to_string(), "b|c".to_string()];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &ids, &[1, 0], &[0.25, 1e-3]).unwrap();
        let (i, y, s) = read_predictions(&buf[..]).unwrap();
        assert_eq!((i, y, s), (ids, vec![1, 0], vec![0.25, 1e-3]));
        assert!(read_predictions("x 3 0.5\n".as_bytes()).is_err());
    }
}
