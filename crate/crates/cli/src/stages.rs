//! Pipeline stages. Every stage reads and writes files so each one can be
//! rerun on its own; outputs get a `.meta` sidecar recording the seed.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use mgembed::classifiers::{self, fit_classifier, SplitSpec, TrainedClassifier};
use mgembed::context::generate_groups;
use mgembed::dataset::FeatureDataset;
use mgembed::embedding::Embeddings;
use mgembed::eval::{self, CurvePoint, MetricsReport};
use mgembed::fusion::{assemble_dataset, fuse, fuse_pair, FusedVector, MissingPolicy};
use mgembed::graph::{complement_negative_sample, load_edge_list, Graph, GraphBuilder, GraphKind, Side};
use mgembed::mimic::{self, MimicModel};
use mgembed::seed;
use mgembed::skipgram;
use mgembed::synth::{self, read_labels};

use crate::config::{MimicMode, NegativeMode, PipelineConfig};
use crate::error::CliError;

pub const EDGE_FORMAT: &str = "whitespace-separated edge list, one `a b` pair per line";
pub const EMBEDDING_FORMAT: &str = "embedding file with a `count dim` header and `label v1 .. vD` rows";
pub const DATASET_FORMAT: &str = "dataset file with an `N F` header and `entity_id label f1 .. fF` rows";
pub const LABELS_FORMAT: &str = "labels file with `label 0|1` rows";
pub const NODES_FORMAT: &str = "node list with one label per line";
pub const PREDICTIONS_FORMAT: &str = "predictions file with `entity_id true_label score` rows";
pub const MODEL_FORMAT: &str = "model file written by this tool";

fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

fn open(path: &Path, format: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::file(path, format, e))
}

/// Refuses an input produced under a different seed. Inputs without a
/// sidecar are accepted.
pub fn check_seed(path: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let Ok(text) = fs::read_to_string(meta_path(path)) else {
        return Ok(());
    };
    for line in text.lines() {
        if let Some(seed) = line.strip_prefix("seed=") {
            if seed != cfg.seed.to_string() {
                return Err(CliError::Data(format!(
                    "{} was produced with seed {seed}, this run uses seed {}; rerun the upstream stage or pass --seed {seed}",
                    path.display(),
                    cfg.seed
                )));
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut out = create(path)?;
    f(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_meta(path: &Path, stage: &str, cfg: &PipelineConfig, params: &[(&str, String)]) -> Result<(), CliError> {
    write_file(&meta_path(path), |out| {
        writeln!(out, "stage={stage}")?;
        writeln!(out, "seed={}", cfg.seed)?;
        for (k, v) in params {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    })
}

pub fn read_graph(path: &Path, kind: GraphKind, cfg: &PipelineConfig) -> Result<Graph, CliError> {
    check_seed(path, cfg)?;
    load_edge_list(open(path, EDGE_FORMAT)?, kind).map_err(|e| CliError::file(path, EDGE_FORMAT, e))
}

pub fn read_embeddings(path: &Path, cfg: &PipelineConfig) -> Result<Embeddings, CliError> {
    check_seed(path, cfg)?;
    Embeddings::read(open(path, EMBEDDING_FORMAT)?).map_err(|e| CliError::file(path, EMBEDDING_FORMAT, e))
}

pub fn read_dataset(path: &Path, cfg: &PipelineConfig) -> Result<FeatureDataset, CliError> {
    check_seed(path, cfg)?;
    FeatureDataset::read(open(path, DATASET_FORMAT)?).map_err(|e| CliError::file(path, DATASET_FORMAT, e))
}

pub fn read_nodes(path: &Path, cfg: &PipelineConfig) -> Result<Vec<String>, CliError> {
    check_seed(path, cfg)?;
    let mut nodes = Vec::new();
    for line in open(path, NODES_FORMAT)?.lines() {
        let line = line.map_err(|e| CliError::file(path, NODES_FORMAT, e))?;
        let line = line.trim();
        if !line.is_empty() && !line.starts_with('#') {
            nodes.push(line.to_string());
        }
    }
    Ok(nodes)
}

fn write_graph(path: &Path, g: &Graph) -> Result<(), CliError> {
    write_file(path, |out| g.write_edge_list(out))
}

fn write_embeddings(path: &Path, e: &Embeddings) -> Result<(), CliError> {
    write_file(path, |out| e.write(out))
}

fn write_dataset(path: &Path, ds: &FeatureDataset) -> Result<(), CliError> {
    write_file(path, |out| ds.write(out))
}

pub struct SynthOutputs {
    pub friendship: PathBuf,
    pub purchases: PathBuf,
    pub attributes: PathBuf,
    pub labels: PathBuf,
}

impl SynthOutputs {
    pub fn in_dir(dir: &Path) -> SynthOutputs {
        SynthOutputs {
            friendship: dir.join("friendship.edges"),
            purchases: dir.join("purchases.edges"),
            attributes: dir.join("attributes.edges"),
            labels: dir.join("credit_labels.tsv"),
        }
    }
}

/// Generates the three graphs, credit labels and a manifest in `dir`.
pub fn cmd_synth(cfg: &PipelineConfig, dir: &Path) -> Result<SynthOutputs, CliError> {
    let mut sc = cfg.synth.clone();
    sc.seed = cfg.seed;
    sc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = SynthOutputs::in_dir(dir);
    let friendship = synth::gen_friendship(&sc);
    let purchases = synth::gen_purchases(&sc, &friendship);
    let attributes = synth::gen_seller_attributes(&sc);
    let labels = synth::gen_credit_labels(&sc, &friendship);
    write_graph(&out.friendship, &friendship)?;
    write_graph(&out.purchases, &purchases)?;
    write_graph(&out.attributes, &attributes)?;
    write_file(&out.labels, |w| synth::write_labels(w, &labels))?;
    write_file(&dir.join("synth.manifest"), |w| sc.write_manifest(w))?;
    for path in [&out.friendship, &out.purchases, &out.attributes, &out.labels] {
        write_meta(path, "synth", cfg, &[])?;
    }
    log::info!(
        "synth: {} friendships, {} purchases, {} seller attributes",
        friendship.edge_count(),
        purchases.edge_count(),
        attributes.edge_count()
    );
    Ok(out)
}

/// Removes a seeded fraction of users (left nodes) from a bipartite graph.
/// Writes the remaining edges and the held-out user list.
pub fn cmd_holdout(cfg: &PipelineConfig, graph: &Path, train_out: &Path, nodes_out: &Path) -> Result<Vec<String>, CliError> {
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
        return Err(CliError::Usage(format!(
            "holdout_fraction must be in (0, 1), got {}",
            cfg.holdout_fraction
        )));
    }
    let g = read_graph(graph, GraphKind::Bipartite, cfg)?;
    let mut users: Vec<usize> = (0..g.node_count()).filter(|&v| g.side(v) == Side::Left).collect();
    users.shuffle(&mut seed::rng(cfg.stage_seed("holdout")));
    let count = (cfg.holdout_fraction * users.len() as f64).round() as usize;
    let held: HashSet<usize> = users[..count].iter().copied().collect();
    let mut b = GraphBuilder::new(GraphKind::Bipartite);
    for (u, s) in g.oriented_edges() {
        if !held.contains(&u) {
            b.add_edge(g.label(u), g.label(s)).expect("edge from a valid graph");
        }
    }
    write_graph(train_out, &b.build())?;
    let mut names: Vec<String> = held.iter().map(|&u| g.label(u).to_string()).collect();
    names.sort();
    write_file(nodes_out, |w| names.iter().try_for_each(|n| writeln!(w, "{n}")))?;
    let fraction = [("fraction", cfg.holdout_fraction.to_string())];
    write_meta(train_out, "holdout", cfg, &fraction)?;
    write_meta(nodes_out, "holdout", cfg, &fraction)?;
    Ok(names)
}

/// Context generation plus skip-gram training on one graph.
pub fn cmd_train_embed(
    cfg: &PipelineConfig,
    graph: &Path,
    kind: GraphKind,
    name: &str,
    out: &Path,
) -> Result<Embeddings, CliError> {
    let g = read_graph(graph, kind, cfg)?;
    let tc = cfg.train_config(name);
    let corpus = generate_groups(&g, cfg.chunk_size, cfg.permutations, cfg.stage_seed(&format!("context:{name}")), name)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let set = skipgram::train(&corpus, &tc)?;
    let e = Embeddings::from_trained(&set, &g).map_err(|e| CliError::Data(e.to_string()))?;
    write_embeddings(out, &e)?;
    write_meta(
        out,
        "train-embed",
        cfg,
        &[
            ("graph", name.to_string()),
            ("chunk_size", cfg.chunk_size.to_string()),
            ("permutations", cfg.permutations.to_string()),
            ("dim", cfg.dim.to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("workers", cfg.workers.to_string()),
        ],
    )?;
    log::info!("train-embed {name}: {} nodes, {} groups", e.len(), corpus.len());
    Ok(e)
}

pub fn cmd_mimic_train(
    cfg: &PipelineConfig,
    graph: &Path,
    embeddings: &Path,
    out: &Path,
) -> Result<mimic::MimicReport, CliError> {
    let g = read_graph(graph, GraphKind::Homogeneous, cfg)?;
    let e = read_embeddings(embeddings, cfg)?;
    let (model, report) = mimic::mimic_train(&g, &e, &cfg.mimic_config())?;
    write_file(out, |w| model.write(w))?;
    write_meta(
        out,
        "mimic-train",
        cfg,
        &[
            ("train_nodes", report.train_nodes.len().to_string()),
            ("train_mse", report.train_mse.to_string()),
            ("validation_mse", report.validation_mse.map_or("none".into(), |v| v.to_string())),
        ],
    )?;
    Ok(report)
}

/// Writes `embeddings` extended with a synthesized vector for every listed
/// node that lacks one. Nodes without an embedded neighbor are skipped.
pub fn cmd_mimic_infer(
    cfg: &PipelineConfig,
    graph: &Path,
    embeddings: &Path,
    model: Option<&Path>,
    nodes: &Path,
    out: &Path,
) -> Result<usize, CliError> {
    let g = read_graph(graph, GraphKind::Homogeneous, cfg)?;
    let mut e = read_embeddings(embeddings, cfg)?;
    let model = match model {
        Some(p) => {
            check_seed(p, cfg)?;
            Some(MimicModel::read(open(p, MODEL_FORMAT)?).map_err(|e| CliError::file(p, MODEL_FORMAT, e))?)
        }
        None => None,
    };
    let mut filled = 0;
    let source = e.clone();
    for node in read_nodes(nodes, cfg)? {
        if source.contains(&node) {
            continue;
        }
        let vector = match &model {
            Some(m) => mimic::mimic_infer(m, &node, &g, &source),
            None => mimic::naive_mimic(&node, &g, &source),
        };
        match vector {
            Ok(v) => {
                e.insert(&node, &v).map_err(|err| CliError::Data(err.to_string()))?;
                filled += 1;
            }
            Err(err) => log::warn!("mimic: skipping {node}: {err}"),
        }
    }
    write_embeddings(out, &e)?;
    let mode = if model.is_some() { "regression" } else { "naive" };
    write_meta(out, "mimic-infer", cfg, &[("mode", mode.into()), ("filled", filled.to_string())])?;
    Ok(filled)
}

fn source_name(path: &Path) -> String {
    path.file_stem().map_or("source".into(), |s| s.to_string_lossy().into_owned())
}

fn load_sources(paths: &[PathBuf], cfg: &PipelineConfig) -> Result<Vec<Embeddings>, CliError> {
    paths.iter().map(|p| read_embeddings(p, cfg)).collect()
}

fn origins(paths: &[PathBuf], sources: &[Embeddings], prefix: &str) -> Vec<(String, usize)> {
    paths
        .iter()
        .zip(sources)
        .map(|(p, e)| (format!("{prefix}{}", source_name(p)), e.dim()))
        .collect()
}

/// Link-prediction rows: every edge of the bipartite `pairs` graph labeled
/// 1, and as many non-edges labeled 0. Features are the left node's fused
/// `left` sources followed by the right node's fused `right` sources.
pub fn cmd_fuse_pairs(
    cfg: &PipelineConfig,
    pairs: &Path,
    left: &[PathBuf],
    right: &[PathBuf],
    out: &Path,
) -> Result<FeatureDataset, CliError> {
    let g = read_graph(pairs, GraphKind::Bipartite, cfg)?;
    let left_sources = load_sources(left, cfg)?;
    let right_sources = load_sources(right, cfg)?;
    let lrefs: Vec<&Embeddings> = left_sources.iter().collect();
    let rrefs: Vec<&Embeddings> = right_sources.iter().collect();
    let positives = g.oriented_edges();
    let mut rng = seed::rng(cfg.stage_seed("pair-negatives"));
    let negatives: Vec<(usize, usize)> = match cfg.pair_negatives {
        NegativeMode::Uniform => complement_negative_sample(&g, positives.len(), &mut rng).pairs,
        NegativeMode::Matched => {
            let users: Vec<usize> = (0..g.node_count()).filter(|&v| g.side(v) == Side::Left).collect();
            let mut seen = HashSet::new();
            let mut drawn = vec![0usize; g.node_count()];
            let mut out = Vec::with_capacity(positives.len());
            for &(_, s) in &positives {
                if g.degree(s) + drawn[s] >= users.len() {
                    continue;
                }
                loop {
                    let u = users[rng.random_range(0..users.len())];
                    if !g.has_edge(u, s) && seen.insert((u, s)) {
                        drawn[s] += 1;
                        out.push((u, s));
                        break;
                    }
                }
            }
            out
        }
    };
    let mut rows: Vec<(FusedVector, u8)> = Vec::with_capacity(positives.len() + negatives.len());
    for (pairs, label) in [(&positives, 1u8), (&negatives, 0u8)] {
        for &(u, s) in pairs {
            let v = fuse_pair(
                g.label(u),
                g.label(s),
                &lrefs,
                &rrefs,
                MissingPolicy::ZeroFill,
                MissingPolicy::ZeroFill,
            );
            match v {
                Ok(v) => rows.push((v, label)),
                Err(e) => log::warn!("fuse: dropping {}|{}: {e}", g.label(u), g.label(s)),
            }
        }
    }
    let mut segments = origins(left, &left_sources, "left:");
    segments.extend(origins(right, &right_sources, "right:"));
    finish_fuse(cfg, rows, &segments, out)
}

/// One row per labeled entity, fusing `sources` in order.
pub fn cmd_fuse_entities(
    cfg: &PipelineConfig,
    labels: &Path,
    sources: &[PathBuf],
    out: &Path,
) -> Result<FeatureDataset, CliError> {
    check_seed(labels, cfg)?;
    let labeled = read_labels(open(labels, LABELS_FORMAT)?).map_err(|e| CliError::file(labels, LABELS_FORMAT, e))?;
    let loaded = load_sources(sources, cfg)?;
    let refs: Vec<&Embeddings> = loaded.iter().collect();
    let mut rows = Vec::with_capacity(labeled.len());
    for (entity, y) in labeled {
        match fuse(&entity, &refs, MissingPolicy::ZeroFill) {
            Ok(v) => rows.push((v, y)),
            Err(e) => log::warn!("fuse: dropping {entity}: {e}"),
        }
    }
    finish_fuse(cfg, rows, &origins(sources, &loaded, ""), out)
}

fn finish_fuse(
    cfg: &PipelineConfig,
    rows: Vec<(FusedVector, u8)>,
    segments: &[(String, usize)],
    out: &Path,
) -> Result<FeatureDataset, CliError> {
    let seg_refs: Vec<(&str, usize)> = segments.iter().map(|(n, w)| (n.as_str(), *w)).collect();
    let ds = assemble_dataset(&rows, &seg_refs).map_err(|e| CliError::Data(e.to_string()))?;
    write_dataset(out, &ds)?;
    let layout: Vec<String> = segments.iter().map(|(n, w)| format!("{n}:{w}")).collect();
    write_meta(out, "fuse", cfg, &[("rows", ds.rows().to_string()), ("layout", layout.join(","))])?;
    Ok(ds)
}

/// Stratified split by `train_fraction`, or, with `test_groups`, every row
/// whose entity group is listed goes to the test side.
pub fn cmd_split(
    cfg: &PipelineConfig,
    dataset: &Path,
    test_groups: Option<&Path>,
    train_out: &Path,
    test_out: &Path,
) -> Result<(FeatureDataset, FeatureDataset), CliError> {
    let ds = read_dataset(dataset, cfg)?;
    let (train, test) = match test_groups {
        Some(path) => {
            let groups: HashSet<String> = read_nodes(path, cfg)?.into_iter().collect();
            classifiers::split_by_groups(&ds, &groups)
        }
        None => classifiers::stratified_split(
            &ds,
            &SplitSpec {
                train_fraction: cfg.train_fraction,
                stratified: true,
                seed: cfg.stage_seed("split"),
            },
        )?,
    };
    for (path, part) in [(train_out, &train), (test_out, &test)] {
        write_dataset(path, part)?;
        write_meta(path, "split", cfg, &[("rows", part.rows().to_string())])?;
    }
    Ok((train, test))
}

/// Fits `kind` on the training set and scores the test set.
pub fn cmd_classify(
    cfg: &PipelineConfig,
    kind: &str,
    train: &Path,
    test: &Path,
    model_out: &Path,
    predictions_out: &Path,
) -> Result<TrainedClassifier, CliError> {
    let train_ds = read_dataset(train, cfg)?;
    let test_ds = read_dataset(test, cfg)?;
    let model = fit_classifier(&train_ds, &cfg.classifier_config(kind)?)?;
    let scores = model.predict_proba(test_ds.features.view())?;
    write_file(model_out, |w| model.write(w))?;
    write_file(predictions_out, |w| {
        eval::write_predictions(w, &test_ds.entity_ids, &test_ds.labels, &scores)
    })?;
    let mut params = vec![("classifier", kind.to_string())];
    if !model.loss_trace.is_empty() {
        params.push(("epochs_run", model.loss_trace.len().to_string()));
    }
    write_meta(model_out, "classify", cfg, &params)?;
    write_meta(predictions_out, "classify", cfg, &params)?;
    Ok(model)
}

/// Precision and recall of class 1 at each threshold.
pub fn threshold_sweep(truth: &[u8], scores: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, MetricsReport)>, CliError> {
    thresholds
        .iter()
        .map(|&t| Ok((t, eval::evaluate_scores(truth, scores, t)?)))
        .collect()
}

pub struct EvaluateOutputs {
    pub report: MetricsReport,
    pub sweep: Vec<(f64, MetricsReport)>,
}

/// Writes `report.txt` (`name=value`), `summary.json`, `roc.csv`,
/// `table.txt` and, when thresholds are configured, `sweep.csv` to `dir`.
pub fn cmd_evaluate(cfg: &PipelineConfig, predictions: &Path, dir: &Path) -> Result<EvaluateOutputs, CliError> {
    check_seed(predictions, cfg)?;
    let (_, truth, scores) =
        eval::read_predictions(open(predictions, PREDICTIONS_FORMAT)?).map_err(|e| CliError::file(predictions, PREDICTIONS_FORMAT, e))?;
    let report = eval::evaluate_scores(&truth, &scores, cfg.threshold)?;
    let sweep = threshold_sweep(&truth, &scores, &cfg.sweep)?;
    write_file(&dir.join("report.txt"), |w| {
        writeln!(w, "threshold={}", cfg.threshold)?;
        report.write_text(&mut *w)
    })?;
    write_file(&dir.join("summary.json"), |w| writeln!(w, "{}", report.summary_json()))?;
    write_file(&dir.join("roc.csv"), |w| report.write_roc_csv(w))?;
    write_file(&dir.join("table.txt"), |w| w.write_all(report.render_table().as_bytes()))?;
    if !sweep.is_empty() {
        write_file(&dir.join("sweep.csv"), |w| {
            writeln!(w, "threshold,class1_precision,class1_recall,class1_predicted,weighted_precision")?;
            for (t, r) in &sweep {
                let c = &r.confusion;
                writeln!(
                    w,
                    "{t},{},{},{},{}",
                    r.classes[1].precision,
                    r.classes[1].recall,
                    c.tp + c.fp,
                    r.weighted_avg.precision
                )?;
            }
            Ok(())
        })?;
    }
    Ok(EvaluateOutputs { report, sweep })
}

/// Train and cross-validated accuracy of `kind` on growing fractions of the
/// dataset, written as CSV.
pub fn cmd_learning_curve(cfg: &PipelineConfig, kind: &str, dataset: &Path, out: &Path) -> Result<Vec<CurvePoint>, CliError> {
    let ds = read_dataset(dataset, cfg)?;
    let points = eval::learning_curve(
        &cfg.classifier_config(kind)?,
        &ds,
        &cfg.curve_fractions,
        cfg.curve_folds,
        cfg.stage_seed("learning-curve"),
    )?;
    write_file(out, |w| {
        writeln!(w, "fraction,train_rows,train_mean,train_sd,cv_mean,cv_sd")?;
        for p in &points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.fraction, p.train_rows, p.train_mean, p.train_sd, p.cv_mean, p.cv_sd
            )?;
        }
        Ok(())
    })?;
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Buying,
    Credit,
    CreditFriendsOnly,
}

impl Task {
    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "buying" => Some(Task::Buying),
            "credit" => Some(Task::Credit),
            "credit-friends-only" => Some(Task::CreditFriendsOnly),
            _ => None,
        }
    }

    pub fn default_classifier(self) -> &'static str {
        match self {
            Task::Buying => "mlp",
            Task::Credit | Task::CreditFriendsOnly => "logreg",
        }
    }
}

pub struct E2eOutputs {
    pub evaluation: EvaluateOutputs,
    pub curve: Vec<CurvePoint>,
    pub mimic: Option<mimic::MimicReport>,
}

/// Runs every stage of `task` into `dir` and writes `manifest.txt` with the
/// resolved configuration and derived seeds.
pub fn cmd_e2e(cfg: &PipelineConfig, task: Task, dir: &Path) -> Result<E2eOutputs, CliError> {
    let kind = cfg.classifier.clone().unwrap_or_else(|| task.default_classifier().to_string());
    let data = dir.join("data");
    let emb = dir.join("embeddings");
    let work = dir.join("work");
    let src = cmd_synth(cfg, &data)?;
    let friendship_emb = emb.join("friendship.emb");
    cmd_train_embed(cfg, &src.friendship, GraphKind::Homogeneous, "friendship", &friendship_emb)?;
    let mut mimic_report = None;
    let mut curve = Vec::new();
    let (train, test) = (work.join("train.ds"), work.join("test.ds"));
    match task {
        Task::Buying => {
            let purchases_train = data.join("purchases_train.edges");
            let heldout = data.join("heldout_users.txt");
            cmd_holdout(cfg, &src.purchases, &purchases_train, &heldout)?;
            let txn = emb.join("transactions.emb");
            let attr = emb.join("attributes.emb");
            cmd_train_embed(cfg, &purchases_train, GraphKind::Bipartite, "transactions", &txn)?;
            cmd_train_embed(cfg, &src.attributes, GraphKind::Bipartite, "attributes", &attr)?;
            let model = work.join("mimic.model");
            let model = match cfg.mimic {
                MimicMode::Regression => {
                    mimic_report = Some(cmd_mimic_train(cfg, &src.friendship, &txn, &model)?);
                    Some(model.as_path())
                }
                MimicMode::Naive => None,
            };
            let filled = emb.join("transactions_filled.emb");
            cmd_mimic_infer(cfg, &src.friendship, &txn, model, &heldout, &filled)?;
            let dataset = work.join("dataset.ds");
            cmd_fuse_pairs(cfg, &src.purchases, &[friendship_emb, filled.clone()], &[txn, attr], &dataset)?;
            cmd_split(cfg, &dataset, Some(&heldout), &train, &test)?;
        }
        Task::Credit | Task::CreditFriendsOnly => {
            let mut sources = vec![friendship_emb];
            if task == Task::Credit {
                let txn = emb.join("transactions.emb");
                cmd_train_embed(cfg, &src.purchases, GraphKind::Bipartite, "transactions", &txn)?;
                sources.push(txn);
            }
            let dataset = work.join("dataset.ds");
            cmd_fuse_entities(cfg, &src.labels, &sources, &dataset)?;
            cmd_split(cfg, &dataset, None, &train, &test)?;
            if !cfg.curve_fractions.is_empty() {
                curve = cmd_learning_curve(cfg, &kind, &train, &dir.join("report").join("learning_curve.csv"))?;
            }
        }
    }
    let predictions = work.join("predictions.txt");
    cmd_classify(cfg, &kind, &train, &test, &work.join("classifier.model"), &predictions)?;
    let evaluation = cmd_evaluate(cfg, &predictions, &dir.join("report"))?;
    write_file(&dir.join("manifest.txt"), |w| {
        let task_name = match task {
            Task::Buying => "buying",
            Task::Credit => "credit",
            Task::CreditFriendsOnly => "credit-friends-only",
        };
        writeln!(w, "task={task_name}")?;
        writeln!(w, "classifier={kind}")?;
        cfg.write(&mut *w)?;
        for tag in [
            "embed:friendship",
            "embed:transactions",
            "embed:attributes",
            "context:friendship",
            "context:transactions",
            "context:attributes",
            "holdout",
            "mimic",
            "pair-negatives",
            "split",
            "classifier",
            "learning-curve",
        ] {
            writeln!(w, "derived_seed.{tag}={}", cfg.stage_seed(tag))?;
        }
        Ok(())
    })?;
    Ok(E2eOutputs {
        evaluation,
        curve,
        mimic: mimic_report,
    })
}
