//! Resolved pipeline settings: defaults, then a `key=value` file, then
//! command-line overrides.

use std::fs;
use std::io::Write;
use std::path::Path;

use mgembed::classifiers::{ClassifierConfig, LogRegConfig, MlpConfig};
use mgembed::mimic::{MimicConfig, MimicOptimizer};
use mgembed::seed;
use mgembed::skipgram::TrainConfig;
use mgembed::synth::SynthConfig;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MimicMode {
    Naive,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeMode {
    /// Each positive `(user, seller)` gets a negative `(other user, seller)`.
    Matched,
    /// Uniform draws from the graph complement.
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workers: usize,
    pub synth: SynthConfig,
    pub chunk_size: usize,
    pub permutations: usize,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub negatives: usize,
    pub holdout_fraction: f64,
    pub mimic: MimicMode,
    pub mimic_slots: usize,
    pub mimic_hidden: Option<Vec<usize>>,
    pub mimic_learning_rate: f64,
    pub mimic_epochs: usize,
    pub mimic_batch: usize,
    pub mimic_optimizer: MimicOptimizer,
    pub pair_negatives: NegativeMode,
    pub train_fraction: f64,
    /// Classifier kind; the task picks one when unset.
    pub classifier: Option<String>,
    pub logreg_c: f64,
    pub logreg_max_iter: usize,
    pub knn_k: usize,
    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,
    pub mlp_batch: usize,
    pub mlp_l2: f64,
    pub threshold: f64,
    pub sweep: Vec<f64>,
    pub curve_fractions: Vec<f64>,
    pub curve_folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            workers: 1,
            synth: SynthConfig::default(),
            chunk_size: 5,
            permutations: 5,
            dim: 16,
            epochs: 5,
            learning_rate: 0.025,
            negatives: 5,
            holdout_fraction: 0.2,
            mimic: MimicMode::Naive,
            mimic_slots: 10,
            mimic_hidden: None,
            mimic_learning_rate: 1e-3,
            mimic_epochs: 200,
            mimic_batch: 32,
            mimic_optimizer: MimicOptimizer::Sgd,
            pair_negatives: NegativeMode::Matched,
            train_fraction: 0.8,
            classifier: None,
            logreg_c: 1.0,
            logreg_max_iter: 1000,
            knn_k: 3,
            mlp_hidden: 100,
            mlp_epochs: 200,
            mlp_learning_rate: 1e-3,
            mlp_batch: 200,
            mlp_l2: 1e-4,
            threshold: 0.5,
            sweep: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            curve_fractions: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            curve_folds: 5,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value {value:?} for setting {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.synth.seed = self.seed;
            }
            "workers" => self.workers = parse(key, value)?,
            "chunk_size" => self.chunk_size = parse(key, value)?,
            "permutations" => self.permutations = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, value)?,
            "mimic" => {
                self.mimic = match value.trim() {
                    "naive" => MimicMode::Naive,
                    "regression" => MimicMode::Regression,
                    other => return Err(CliError::Usage(format!("mimic must be naive or regression, got {other:?}"))),
                }
            }
            "mimic_slots" => self.mimic_slots = parse(key, value)?,
            "mimic_hidden" => {
                self.mimic_hidden = match value.trim() {
                    "default" => None,
                    v => Some(parse_list(key, v)?),
                }
            }
            "mimic_learning_rate" => self.mimic_learning_rate = parse(key, value)?,
            "mimic_epochs" => self.mimic_epochs = parse(key, value)?,
            "mimic_batch" => self.mimic_batch = parse(key, value)?,
            "mimic_optimizer" => {
                self.mimic_optimizer = match value.trim() {
                    "sgd" => MimicOptimizer::Sgd,
                    "adam" => MimicOptimizer::Adam,
                    other => return Err(CliError::Usage(format!("mimic_optimizer must be sgd or adam, got {other:?}"))),
                }
            }
            "pair_negatives" => {
                self.pair_negatives = match value.trim() {
                    "matched" => NegativeMode::Matched,
                    "uniform" => NegativeMode::Uniform,
                    other => return Err(CliError::Usage(format!("pair_negatives must be matched or uniform, got {other:?}"))),
                }
            }
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "classifier" => {
                let kind = value.trim();
                if ClassifierConfig::from_kind(kind, 0).is_none() {
                    return Err(CliError::Usage(format!("unknown classifier {kind:?}")));
                }
                self.classifier = Some(kind.to_string());
            }
            "logreg_c" => self.logreg_c = parse(key, value)?,
            "logreg_max_iter" => self.logreg_max_iter = parse(key, value)?,
            "knn_k" => self.knn_k = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "mlp_epochs" => self.mlp_epochs = parse(key, value)?,
            "mlp_learning_rate" => self.mlp_learning_rate = parse(key, value)?,
            "mlp_batch" => self.mlp_batch = parse(key, value)?,
            "mlp_l2" => self.mlp_l2 = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "sweep" => self.sweep = parse_list(key, value)?,
            "curve_fractions" => self.curve_fractions = parse_list(key, value)?,
            "curve_folds" => self.curve_folds = parse(key, value)?,
            _ => self
                .synth
                .set(key, value.trim())
                .map_err(|e| CliError::Usage(e.to_string()))?,
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    /// Reads a flat config file: `key=value` lines, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply(line)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "seed={}", self.seed)?;
        writeln!(out, "workers={}", self.workers)?;
        let mut synth = Vec::new();
        self.synth.write_manifest(&mut synth)?;
        for line in String::from_utf8_lossy(&synth).lines() {
            if !line.starts_with("seed=") {
                writeln!(out, "{line}")?;
            }
        }
        writeln!(out, "chunk_size={}", self.chunk_size)?;
        writeln!(out, "permutations={}", self.permutations)?;
        writeln!(out, "dim={}", self.dim)?;
        writeln!(out, "epochs={}", self.epochs)?;
        writeln!(out, "learning_rate={}", self.learning_rate)?;
        writeln!(out, "negatives={}", self.negatives)?;
        writeln!(out, "holdout_fraction={}", self.holdout_fraction)?;
        let mode = match self.mimic {
            MimicMode::Naive => "naive",
            MimicMode::Regression => "regression",
        };
        writeln!(out, "mimic={mode}")?;
        writeln!(out, "mimic_slots={}", self.mimic_slots)?;
        match &self.mimic_hidden {
            Some(h) => writeln!(out, "mimic_hidden={}", join(h))?,
            None => writeln!(out, "mimic_hidden=default")?,
        }
        writeln!(out, "mimic_learning_rate={}", self.mimic_learning_rate)?;
        writeln!(out, "mimic_epochs={}", self.mimic_epochs)?;
        writeln!(out, "mimic_batch={}", self.mimic_batch)?;
        let opt = match self.mimic_optimizer {
            MimicOptimizer::Sgd => "sgd",
            MimicOptimizer::Adam => "adam",
        };
        writeln!(out, "mimic_optimizer={opt}")?;
        let neg = match self.pair_negatives {
            NegativeMode::Matched => "matched",
            NegativeMode::Uniform => "uniform",
        };
        writeln!(out, "pair_negatives={neg}")?;
        writeln!(out, "train_fraction={}", self.train_fraction)?;
        if let Some(kind) = &self.classifier {
            writeln!(out, "classifier={kind}")?;
        }
        writeln!(out, "logreg_c={}", self.logreg_c)?;
        writeln!(out, "logreg_max_iter={}", self.logreg_max_iter)?;
        writeln!(out, "knn_k={}", self.knn_k)?;
        writeln!(out, "mlp_hidden={}", self.mlp_hidden)?;
        writeln!(out, "mlp_epochs={}", self.mlp_epochs)?;
        writeln!(out, "mlp_learning_rate={}", self.mlp_learning_rate)?;
        writeln!(out, "mlp_batch={}", self.mlp_batch)?;
        writeln!(out, "mlp_l2={}", self.mlp_l2)?;
        writeln!(out, "threshold={}", self.threshold)?;
        writeln!(out, "sweep={}", join(&self.sweep))?;
        writeln!(out, "curve_fractions={}", join(&self.curve_fractions))?;
        writeln!(out, "curve_folds={}", self.curve_folds)
    }

    /// Seed of one pipeline stream, derived from the global seed.
    pub fn stage_seed(&self, tag: &str) -> u64 {
        seed::derive(self.seed, tag)
    }

    pub fn train_config(&self, graph_name: &str) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            negatives: self.negatives,
            noise_exponent: 0.75,
            seed: self.stage_seed(&format!("embed:{graph_name}")),
            workers: self.workers,
        }
    }

    pub fn mimic_config(&self) -> MimicConfig {
        MimicConfig {
            slots: self.mimic_slots,
            hidden: self.mimic_hidden.clone(),
            learning_rate: self.mimic_learning_rate,
            epochs: self.mimic_epochs,
            batch_size: self.mimic_batch,
            validation_fraction: 0.1,
            optimizer: self.mimic_optimizer,
            seed: self.stage_seed("mimic"),
        }
    }

    pub fn classifier_config(&self, kind: &str) -> Result<ClassifierConfig, CliError> {
        Ok(match kind {
            "logreg" => ClassifierConfig::LogReg(LogRegConfig {
                c: self.logreg_c,
                max_iter: self.logreg_max_iter,
                ..LogRegConfig::default()
            }),
            "knn" => ClassifierConfig::Knn { k: self.knn_k },
            "mlp" => ClassifierConfig::Mlp(MlpConfig {
                hidden: self.mlp_hidden,
                learning_rate: self.mlp_learning_rate,
                max_iter: self.mlp_epochs,
                batch_size: self.mlp_batch,
                l2: self.mlp_l2,
                seed: self.stage_seed("classifier"),
                ..MlpConfig::default()
            }),
            other => return Err(CliError::Usage(format!("unknown classifier {other:?}"))),
        })
    }
}
