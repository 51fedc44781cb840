//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use mgembed::context::generate_groups;
use mgembed::dataset::FeatureDataset;
use mgembed::embedding::Embeddings;
use mgembed::eval::{classification_report, roc_auc};
use mgembed::fusion::{rfe_select, SvmConfig};
use mgembed::graph::{complement_negative_sample, Graph, GraphBuilder, GraphKind, Side};
use mgembed::mimic::{mimic_infer, mimic_train, naive_mimic, MimicConfig, MimicOptimizer};
use mgembed::nn::{Activation, Loss, Network};
use mgembed::seed;
use mgembed::skipgram::{self, cosine, init_embeddings, pair_gradients, pair_objective, softmax_prob, TrainConfig};
use mgembed::synth::{gen_friendship, SynthConfig};
use mgembed_cli::stages::{cmd_e2e, Task};
use mgembed_cli::PipelineConfig;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn vec_rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nn) == 0.0 {
        0.0
    } else {
        diff / na.max(nn)
    }
}

fn random_graph<R: Rng>(rng: &mut R, nodes: usize, p: f64, bipartite: bool) -> Graph {
    let kind = if bipartite { GraphKind::Bipartite } else { GraphKind::Homogeneous };
    let mut b = GraphBuilder::new(kind);
    let left = if bipartite { nodes / 2 } else { nodes };
    for i in 0..nodes {
        let side = if i < left { Side::Left } else { Side::Right };
        b.add_node(&format!("n{i}"), side);
    }
    for i in 0..nodes {
        for j in i + 1..nodes {
            let admissible = !bipartite || (i < left && j >= left);
            if admissible && rng.random::<f64>() < p {
                b.add_edge(&format!("n{i}"), &format!("n{j}")).unwrap();
            }
        }
    }
    b.build()
}

fn network_fd(net: &Network, x: &Array2<f64>, y: &Array2<f64>, loss: Loss, l2: f64) -> f64 {
    let (_, grads) = net.gradients(x.view(), y.view(), loss, l2);
    let analytic = grads.flatten();
    let h = 1e-6;
    let numeric: Vec<f64> = (0..analytic.len())
        .map(|i| {
            let mut plus = net.clone();
            *plus.parameter_mut(i) += h;
            let mut minus = net.clone();
            *minus.parameter_mut(i) -= h;
            (plus.loss(x.view(), y.view(), loss, l2) - minus.loss(x.view(), y.view(), loss, l2)) / (2.0 * h)
        })
        .collect();
    vec_rel_error(&analytic, &numeric)
}

fn gradient_suites() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let quantum = 2f32.powi(-16);
    let mut worst_sg: f64 = 0.0;
    for _ in 0..25 {
        let vocab = rng.random_range(3..8);
        let dim = rng.random_range(2..6);
        let mut e = init_embeddings(vocab, dim, &mut rng, "fd");
        // Values on a 2^-16 grid in [-1, 1] so ±h perturbations are exact in f32.
        for v in e.input.iter_mut().chain(e.output.iter_mut()) {
            *v = (rng.random_range(-65536..=65536) as f32) * quantum;
        }
        let center = rng.random_range(0..vocab);
        let context = rng.random_range(0..vocab);
        let negatives: Vec<usize> = (0..rng.random_range(1..5)).map(|_| rng.random_range(0..vocab)).collect();
        let grad = pair_gradients(&e, center, context, &negatives);
        let h = 2f32.powi(-12);
        let mut analytic = grad.center.clone();
        let mut numeric = Vec::new();
        for d in 0..dim {
            let i = center * dim + d;
            let mut plus = e.clone();
            plus.input[i] += h;
            let mut minus = e.clone();
            minus.input[i] -= h;
            numeric.push((pair_objective(&plus, center, context, &negatives) - pair_objective(&minus, center, context, &negatives)) / (2.0 * h as f64));
        }
        for (row, g) in &grad.outputs {
            analytic.extend_from_slice(g);
            for d in 0..dim {
                let i = row * dim + d;
                let mut plus = e.clone();
                plus.output[i] += h;
                let mut minus = e.clone();
                minus.output[i] -= h;
                numeric.push((pair_objective(&plus, center, context, &negatives) - pair_objective(&minus, center, context, &negatives)) / (2.0 * h as f64));
            }
        }
        worst_sg = worst_sg.max(vec_rel_error(&analytic, &numeric));
    }

    let mut worst_mimic: f64 = 0.0;
    for _ in 0..25 {
        let slots = rng.random_range(1..4);
        let dim = rng.random_range(2..5);
        let net = Network::new(&[slots * dim, 2 * dim, dim], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((6, slots * dim), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, dim), |_| rng.random_range(-1.0..1.0));
        worst_mimic = worst_mimic.max(network_fd(&net, &x, &y, Loss::MeanSquared, 0.0));
    }

    let mut worst_mlp: f64 = 0.0;
    for _ in 0..25 {
        let inputs = rng.random_range(2..6);
        let net = Network::new(&[inputs, rng.random_range(2..8), 1], Activation::Relu, &mut rng);
        let x = Array2::from_shape_fn((8, inputs), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((8, 1), |_| f64::from(rng.random_bool(0.5)));
        worst_mlp = worst_mlp.max(network_fd(&net, &x, &y, Loss::LogisticCrossEntropy, 1e-4));
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    check(
        worst_sg <= 1e-5 && worst_mimic <= 1e-5 && worst_mlp <= 1e-4 && fast,
        format!("worst relative error skip-gram {worst_sg:.2e}, mimic {worst_mimic:.2e}, mlp {worst_mlp:.2e} over 25 instances each; {time}"),
    )
}

fn softmax_normalization() -> Outcome {
    let mut rng = seed::rng(202);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let vocab = rng.random_range(2..=100);
        let dim = rng.random_range(1..16);
        let mut e = init_embeddings(vocab, dim, &mut rng, "softmax");
        for v in e.input.iter_mut().chain(e.output.iter_mut()) {
            *v = rng.random_range(-3.0..3.0);
        }
        for _ in 0..5 {
            let center = rng.random_range(0..vocab);
            let total: f64 = (0..vocab).map(|j| softmax_prob(&e, center, j)).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    check(worst <= 1e-9, format!("max |sum - 1| = {worst:.2e} over 150 centers, |V| <= 100"))
}

fn corpus_combinatorics() -> Outcome {
    let mut rng = seed::rng(303);
    let mut failures = 0;
    for trial in 0..50 {
        let nodes = rng.random_range(2..=200);
        let p = rng.random_range(0.01..0.3);
        let g = random_graph(&mut rng, nodes, p, trial % 3 == 0);
        let k = rng.random_range(1..8);
        let n = rng.random_range(1..6);
        let corpus = generate_groups(&g, k, n, trial as u64, "combinatorics").unwrap();
        let expected: usize = (0..g.node_count()).map(|v| n * g.degree(v).div_ceil(k)).sum();
        let mut counts = vec![HashMap::<usize, usize>::new(); g.node_count()];
        for group in &corpus.groups {
            for &m in &group.members {
                *counts[group.root].entry(m).or_default() += 1;
            }
        }
        let multiplicity_ok = (0..g.node_count()).all(|v| {
            let nbrs = g.neighbors(v).unwrap();
            counts[v].len() == nbrs.len() && nbrs.iter().all(|u| counts[v].get(u) == Some(&n))
        });
        if corpus.groups.len() != expected || !multiplicity_ok {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} of 50 random graphs violate group count or neighbor multiplicity"))
}

fn complement_oracle() -> Outcome {
    let mut rng = seed::rng(404);
    let mut small_mismatch = 0;
    for trial in 0..40 {
        let nodes = rng.random_range(3..=20);
        let p = rng.random_range(0.1..0.7);
        let g = random_graph(&mut rng, nodes, p, trial % 2 == 0);
        let brute: BTreeSet<(usize, usize)> = (0..g.node_count())
            .flat_map(|u| (0..g.node_count()).map(move |v| (u, v)))
            .filter(|&(u, v)| match g.kind() {
                GraphKind::Homogeneous => u < v && !g.has_edge(u, v),
                GraphKind::Bipartite => g.side(u) == Side::Left && g.side(v) == Side::Right && !g.has_edge(u, v),
            })
            .collect();
        let full: BTreeSet<_> = complement_negative_sample(&g, brute.len() + 5, &mut rng).pairs.into_iter().collect();
        let mut union = BTreeSet::new();
        for _ in 0..300 {
            union.extend(complement_negative_sample(&g, brute.len().div_ceil(2), &mut rng).pairs);
        }
        if full != brute || union != brute {
            small_mismatch += 1;
        }
    }
    let mut false_edges = 0;
    let mut drawn = 0;
    for trial in 0..4 {
        let g = random_graph(&mut rng, 300, 0.05, trial % 2 == 1);
        let sample = complement_negative_sample(&g, 10_000, &mut rng);
        drawn += sample.pairs.len();
        false_edges += sample
            .pairs
            .iter()
            .filter(|&&(u, v)| g.has_edge(u, v) || u == v || (g.kind() == GraphKind::Bipartite && g.side(u) == g.side(v)))
            .count();
    }
    check(
        small_mismatch == 0 && false_edges == 0,
        format!("{small_mismatch} of 40 small graphs differ from the brute-force complement; {false_edges} false edges in {drawn} large-graph samples"),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = seed::rng(505);
    let mut report_mismatch = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..60);
        let truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let r = classification_report(&truth, &pred).unwrap();
        let count = |t: u8, p: u8| truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count();
        let (tn, fp, fnn, tp) = (count(0, 0), count(0, 1), count(1, 0), count(1, 1));
        let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let expected = [
            (div(tn, tn + fnn), div(tn, tn + fp)),
            (div(tp, tp + fp), div(tp, tp + fnn)),
        ];
        let ok = (r.confusion.tn, r.confusion.fp, r.confusion.fn_, r.confusion.tp) == (tn, fp, fnn, tp)
            && (0..2).all(|c| {
                let m = &r.classes[c];
                m.precision == expected[c].0 && m.recall == expected[c].1 && m.f1 == f1(expected[c].0, expected[c].1)
            });
        if !ok {
            report_mismatch += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let n = rng.random_range(2..200);
        let mut truth: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        truth[0] = 0;
        truth[1] = 1;
        let levels = if trial % 2 == 0 { 10 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let (auc, _) = roc_auc(&truth, &scores).unwrap();
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if truth[i] == 1 && truth[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        worst = worst.max((auc - wins / pairs).abs());
    }
    check(
        report_mismatch == 0 && worst <= 1e-12,
        format!("{report_mismatch} of 20 reports differ from hand counts; max |AUC - ranking oracle| = {worst:.2e}"),
    )
}

fn clique_separation() -> Outcome {
    let start = Instant::now();
    let mut b = GraphBuilder::new(GraphKind::Homogeneous);
    for offset in [0, 30] {
        for i in 0..30 {
            for j in i + 1..30 {
                b.add_edge(&format!("v{}", offset + i), &format!("v{}", offset + j)).unwrap();
            }
        }
    }
    b.add_edge("v0", "v30").unwrap();
    let g = b.build();
    let mut gaps = Vec::new();
    for s in [1u64, 2, 3] {
        let corpus = generate_groups(&g, 5, 5, s, "cliques").unwrap();
        let cfg = TrainConfig { dim: 8, epochs: 50, seed: s, ..TrainConfig::default() };
        let e = skipgram::train(&corpus, &cfg).unwrap();
        let clique = |v: usize| usize::from(g.label(v)[1..].parse::<usize>().unwrap() >= 30);
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for u in 0..60 {
            for v in u + 1..60 {
                let c = cosine(e.input_row(u), e.input_row(v));
                if clique(u) == clique(v) {
                    intra += c;
                    ni += 1;
                } else {
                    inter += c;
                    nx += 1;
                }
            }
        }
        gaps.push(intra / ni as f64 - inter / nx as f64);
    }
    let (fast, time) = within(Duration::from_secs(30), start);
    let gap_text: Vec<String> = gaps.iter().map(|g| format!("{g:.3}")).collect();
    check(
        gaps.iter().all(|&g| g >= 0.2) && fast,
        format!("intra minus inter cosine per seed [{}]; {time}", gap_text.join(", ")),
    )
}

fn run_task(dir: &Path, task: Task, cfg: &PipelineConfig) -> Result<(mgembed_cli::stages::E2eOutputs, Duration), String> {
    let start = Instant::now();
    let out = cmd_e2e(cfg, task, dir).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

fn buying_task(root: &Path) -> Outcome {
    let mut cfg = PipelineConfig::default();
    let (signal, t1) = run_task(&root.join("buying-0.9"), Task::Buying, &cfg)?;
    cfg.apply("purchase_homophily=0").unwrap();
    let (null, t0) = run_task(&root.join("buying-0"), Task::Buying, &cfg)?;
    let auc1 = signal.evaluation.report.auc.unwrap();
    let auc0 = null.evaluation.report.auc.unwrap();
    let limit = Duration::from_secs(300);
    check(
        auc1 >= 0.75 && (0.45..=0.55).contains(&auc0) && t1 < limit && t0 < limit,
        format!(
            "test AUC {auc1:.3} at homophily 0.9 ({:.0}s), {auc0:.3} at homophily 0 ({:.0}s)",
            t1.as_secs_f64(),
            t0.as_secs_f64()
        ),
    )
}

fn credit_task(root: &Path) -> Outcome {
    let cfg = PipelineConfig::default();
    let (out, t) = run_task(&root.join("credit"), Task::Credit, &cfg)?;
    let report = &out.evaluation.report;
    let positives = report.classes[1].support as f64 / report.confusion.total() as f64;
    let weighted = report.weighted_avg.precision;
    let defined: Vec<(f64, f64)> = out
        .evaluation
        .sweep
        .iter()
        .filter(|(_, r)| !r.classes[1].precision_undefined)
        .map(|(t, r)| (*t, r.classes[1].precision))
        .collect();
    let monotone = defined.len() >= 2 && defined.windows(2).all(|w| w[1].1 >= w[0].1);
    let ceiling = defined.iter().map(|p| p.1).fold(0.0, f64::max);
    let reached = defined.last().is_some_and(|p| p.1 == ceiling);
    let sweep: Vec<String> = defined.iter().map(|(t, p)| format!("{t}:{p:.3}")).collect();
    check(
        weighted >= 0.70 && monotone && reached && t < Duration::from_secs(300),
        format!(
            "test positive share {positives:.3}; weighted precision {weighted:.3}; class-1 precision by threshold [{}]; {:.0}s",
            sweep.join(", "),
            t.as_secs_f64()
        ),
    )
}

fn mimic_superiority() -> Outcome {
    let mut lines = Vec::new();
    let mut wins = 0;
    for s in [1u64, 2, 3] {
        let synth = SynthConfig { seed: s, ..SynthConfig::default() };
        let g = gen_friendship(&synth);
        let corpus = generate_groups(&g, 5, 5, s, "friendship").unwrap();
        let set = skipgram::train(&corpus, &TrainConfig { dim: 16, seed: s, ..TrainConfig::default() }).unwrap();
        let full = Embeddings::from_trained(&set, &g).unwrap();
        let mut labels: Vec<&str> = g.labels().iter().map(String::as_str).collect();
        labels.shuffle(&mut seed::rng(s));
        let held: Vec<&str> = labels[..labels.len() / 10].to_vec();
        let visible = full.without(held.iter().copied());
        // One slot per neighbor of the best-connected node, so no neighbor is dropped.
        let slots = (0..g.node_count()).map(|v| g.degree(v)).max().unwrap();
        let cfg = MimicConfig { slots, optimizer: MimicOptimizer::Adam, seed: s, ..MimicConfig::default() };
        let (model, _) = mimic_train(&g, &visible, &cfg).unwrap();
        let (mut mse_n, mut mse_r, mut cos_n, mut cos_r, mut count) = (0.0, 0.0, 0.0, 0.0, 0);
        for v in &held {
            let (Ok(naive), Ok(reg)) = (naive_mimic(v, &g, &visible), mimic_infer(&model, v, &g, &visible)) else {
                continue;
            };
            let truth = full.get(v).unwrap();
            let mse = |x: &[f32]| x.iter().zip(truth).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>() / truth.len() as f64;
            mse_n += mse(&naive);
            mse_r += mse(&reg);
            cos_n += cosine(&naive, truth);
            cos_r += cosine(&reg, truth);
            count += 1;
        }
        let c = count as f64;
        if mse_r < mse_n && cos_r > cos_n {
            wins += 1;
        }
        lines.push(format!(
            "seed {s} ({slots} slots): mse {:.4} vs {:.4}, cosine {:.3} vs {:.3}",
            mse_r / c,
            mse_n / c,
            cos_r / c,
            cos_n / c
        ));
    }
    check(wins == 3, format!("regression vs naive on held-out nodes, {} (regression first)", lines.join("; ")))
}

fn determinism(root: &Path) -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.workers = 1;
    cfg.seed = 42;
    let (a, b) = (root.join("det-a"), root.join("det-b"));
    run_task(&a, Task::Buying, &cfg)?;
    run_task(&b, Task::Buying, &cfg)?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["embeddings", "work", "report"] {
        for entry in fs::read_dir(a.join(sub)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let other = b.join(sub).join(path.file_name().unwrap());
            compared += 1;
            if fs::read(&path).ok() != fs::read(&other).ok() {
                differing.push(path.display().to_string());
            }
        }
    }
    check(
        differing.is_empty() && compared > 0,
        format!("{compared} artifacts compared (embeddings, datasets, models, reports), {} differ {differing:?}", differing.len()),
    )
}

fn rfe_recovery() -> Outcome {
    let mut successes = 0;
    for rep in 0..20u64 {
        let mut rng = seed::rng(seed::mix(606, rep));
        let n = 200;
        let x = Array2::from_shape_fn((n, 10), |_| rng.random_range(-1.0..1.0));
        let y: Vec<u8> = (0..n).map(|i| u8::from(x[[i, 0]] > 0.0)).collect();
        let ds = FeatureDataset::new(x, y, (0..n).map(|i| format!("r{i}")).collect(), vec![]).unwrap();
        let report = rfe_select(&ds, 1, 5, SvmConfig::default(), rep).unwrap();
        if report.selected.contains(&0) {
            successes += 1;
        }
    }
    check(successes >= 19, format!("informative column kept in {successes}/20 repetitions"))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient checks", Box::new(gradient_suites)),
        ("softmax normalization", Box::new(softmax_normalization)),
        ("corpus combinatorics", Box::new(corpus_combinatorics)),
        ("complement sampling oracle", Box::new(complement_oracle)),
        ("metric oracles", Box::new(metric_oracles)),
        ("clique embedding separation", Box::new(clique_separation)),
        ("buying task end to end", Box::new(|| buying_task(root.path()))),
        ("credit task end to end", Box::new(|| credit_task(root.path()))),
        ("mimic regression beats neighbor mean", Box::new(mimic_superiority)),
        ("pipeline determinism", Box::new(|| determinism(root.path()))),
        ("RFE planted-signal recovery", Box::new(rfe_recovery)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(detail) => println!("acceptance {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
