//! Skip-gram training with negative sampling over a group corpus.
//!
//! Each node owns an input vector (the embedding delivered downstream) and an
//! output vector used only to score predictions. For a `(center, context)`
//! pair with sampled negatives `n_1..n_m` the per-pair objective is
//!
//! ```text
//! log σ(o_context · r_center) + Σ_i log σ(-o_{n_i} · r_center)
//! ```
//!
//! and is maximized by stochastic gradient ascent.

use std::cell::Cell;
use std::sync::atomic::{AtomicU32, Ordering};

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use thiserror::Error;

use crate::context::GroupCorpus;
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite parameters in epoch {epoch} at pair {pair_index}")]
    NonFinite { epoch: usize, pair_index: usize },
    #[error("cannot build a noise table from an empty corpus")]
    EmptyCorpus,
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Input (`r`) and output (`r'`) tables, row-major `vocab_size × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub input: Vec<f32>,
    pub output: Vec<f32>,
    pub dim: usize,
    pub vocab_size: usize,
    pub graph_id: String,
}

impl EmbeddingSet {
    pub fn input_row(&self, v: usize) -> &[f32] {
        &self.input[v * self.dim..(v + 1) * self.dim]
    }

    pub fn output_row(&self, v: usize) -> &[f32] {
        &self.output[v * self.dim..(v + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub negatives: usize,
    pub noise_exponent: f64,
    pub seed: u64,
    /// 1 runs the deterministic sequential trainer. More workers update the
    /// shared tables without locks and are not bit-reproducible.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            epochs: 5,
            learning_rate: 0.025,
            negatives: 5,
            noise_exponent: 0.75,
            seed: 42,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.dim == 0 {
            return Err(TrainError::Config("dimension must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.negatives == 0 {
            return Err(TrainError::Config(
                "at least one negative sample per pair is required".into(),
            ));
        }
        if self.workers == 0 {
            return Err(TrainError::Config("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Input vectors uniform on `[-0.5/dim, 0.5/dim]`, output vectors zero.
pub fn init_embeddings<R: Rng + ?Sized>(
    vocab_size: usize,
    dim: usize,
    rng: &mut R,
    graph_id: &str,
) -> EmbeddingSet {
    let bound = 0.5 / dim as f32;
    let input = (0..vocab_size * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    EmbeddingSet {
        input,
        output: vec![0.0; vocab_size * dim],
        dim,
        vocab_size,
        graph_id: graph_id.to_string(),
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_softmax_row(e: &EmbeddingSet, center: usize) -> Vec<f64> {
    let r = e.input_row(center);
    let scores: Vec<f64> = (0..e.vocab_size).map(|v| dot(e.output_row(v), r)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.into_iter().map(|s| s - log_z).collect()
}

/// Full-softmax probability of `context` given `center`. Costs `O(|V|·D)`.
pub fn softmax_prob(e: &EmbeddingSet, center: usize, context: usize) -> f64 {
    log_softmax_row(e, center)[context].exp()
}

/// Average over groups of the group log-probability, where each group's
/// value is the sum of `log p(j | i)` over ordered pairs of distinct nodes
/// divided by the group size (root included). Uses the exact softmax, so it
/// is only meant for small vocabularies.
pub fn corpus_log_likelihood(e: &EmbeddingSet, corpus: &GroupCorpus) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; e.vocab_size];
    let mut total = 0.0;
    for group in &corpus.groups {
        let mut sum = 0.0;
        for (i, j) in group.prediction_pairs() {
            let row = cache[i].get_or_insert_with(|| log_softmax_row(e, i));
            sum += row[j];
        }
        total += sum / group.size() as f64;
    }
    total / corpus.len() as f64
}

/// Negative-sampling distribution, proportional to context frequency raised
/// to `exponent`. Nodes that never occur as context are never drawn.
#[derive(Clone, Debug)]
pub struct NoiseTable {
    nodes: Vec<usize>,
    alias: WeightedAliasIndex<f64>,
}

impl NoiseTable {
    pub fn from_frequencies(freq: &[u64], exponent: f64) -> Result<Self, TrainError> {
        let (nodes, weights): (Vec<usize>, Vec<f64>) = freq
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0)
            .map(|(v, &f)| (v, (f as f64).powf(exponent)))
            .unzip();
        if nodes.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| TrainError::Config(format!("noise table: {e}")))?;
        Ok(NoiseTable { nodes, alias })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.nodes[self.alias.sample(rng)]
    }
}

pub fn build_noise_table(corpus: &GroupCorpus, exponent: f64) -> Result<NoiseTable, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    NoiseTable::from_frequencies(&corpus.context_frequencies(), exponent)
}

/// Element access shared by the plain and the lock-free parameter tables.
trait Table {
    fn load(&self, i: usize) -> f32;
    fn store(&self, i: usize, v: f32);
}

impl Table for [Cell<f32>] {
    #[inline]
    fn load(&self, i: usize) -> f32 {
        self[i].get()
    }

    #[inline]
    fn store(&self, i: usize, v: f32) {
        self[i].set(v)
    }
}

/// Parameter table shared between training threads. Updates from different
/// threads may overwrite each other; each element stays a valid float.
struct SharedTable(Vec<AtomicU32>);

impl SharedTable {
    fn new(values: &[f32]) -> Self {
        SharedTable(values.iter().map(|v| AtomicU32::new(v.to_bits())).collect())
    }

    fn into_vec(self) -> Vec<f32> {
        self.0
            .into_iter()
            .map(|a| f32::from_bits(a.into_inner()))
            .collect()
    }
}

impl Table for SharedTable {
    #[inline]
    fn load(&self, i: usize) -> f32 {
        f32::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn store(&self, i: usize, v: f32) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

#[derive(Default)]
struct Scratch {
    center: Vec<f64>,
    center_grad: Vec<f64>,
    coefs: Vec<f64>,
    targets: Vec<usize>,
}

/// Gradient of the per-pair objective with respect to every touched row.
/// `targets[0]` is the positive context, the rest are negatives. On return
/// `scratch.center_grad` holds ∂/∂r_center and `scratch.coefs[t]` the scalar
/// such that ∂/∂o_{targets[t]} = coefs[t] · r_center. Returns false when a
/// score is not finite.
fn pair_gradient<T: Table + ?Sized>(
    input: &T,
    output: &T,
    dim: usize,
    center: usize,
    scratch: &mut Scratch,
) -> bool {
    scratch.center.clear();
    scratch
        .center
        .extend((0..dim).map(|d| f64::from(input.load(center * dim + d))));
    scratch.center_grad.clear();
    scratch.center_grad.resize(dim, 0.0);
    scratch.coefs.clear();
    for (t, &target) in scratch.targets.iter().enumerate() {
        let base = target * dim;
        let score: f64 = (0..dim)
            .map(|d| f64::from(output.load(base + d)) * scratch.center[d])
            .sum();
        if !score.is_finite() {
            return false;
        }
        let label = if t == 0 { 1.0 } else { 0.0 };
        let g = label - sigmoid(score);
        for d in 0..dim {
            scratch.center_grad[d] += g * f64::from(output.load(base + d));
        }
        scratch.coefs.push(g);
    }
    true
}

fn apply_gradient<T: Table + ?Sized>(
    input: &T,
    output: &T,
    dim: usize,
    center: usize,
    lr: f64,
    scratch: &Scratch,
) {
    for (&target, &g) in scratch.targets.iter().zip(&scratch.coefs) {
        let base = target * dim;
        for d in 0..dim {
            let i = base + d;
            output.store(i, (f64::from(output.load(i)) + lr * g * scratch.center[d]) as f32);
        }
    }
    for d in 0..dim {
        let i = center * dim + d;
        input.store(i, (f64::from(input.load(i)) + lr * scratch.center_grad[d]) as f32);
    }
}

fn draw_targets<R: Rng + ?Sized>(
    context: usize,
    negatives: usize,
    noise: &NoiseTable,
    rng: &mut R,
    targets: &mut Vec<usize>,
) {
    targets.clear();
    targets.push(context);
    for _ in 0..negatives {
        let neg = noise.sample(rng);
        if neg != context {
            targets.push(neg);
        }
    }
}

/// Per-pair objective for an explicit list of negatives.
pub fn pair_objective(e: &EmbeddingSet, center: usize, context: usize, negatives: &[usize]) -> f64 {
    let r = e.input_row(center);
    log_sigmoid(dot(e.output_row(context), r))
        + negatives
            .iter()
            .map(|&n| log_sigmoid(-dot(e.output_row(n), r)))
            .sum::<f64>()
}

/// Analytic gradient of [`pair_objective`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairGradient {
    pub center: Vec<f64>,
    /// Gradient per output row, summed over repeated targets, sorted by row.
    pub outputs: Vec<(usize, Vec<f64>)>,
}

pub fn pair_gradients(
    e: &EmbeddingSet,
    center: usize,
    context: usize,
    negatives: &[usize],
) -> PairGradient {
    let mut input = e.input.clone();
    let mut output = e.output.clone();
    let input = Cell::from_mut(input.as_mut_slice()).as_slice_of_cells();
    let output = Cell::from_mut(output.as_mut_slice()).as_slice_of_cells();
    let mut scratch = Scratch::default();
    scratch.targets.push(context);
    scratch.targets.extend_from_slice(negatives);
    pair_gradient(input, output, e.dim, center, &mut scratch);

    let mut outputs: Vec<(usize, Vec<f64>)> = Vec::new();
    for (&target, &g) in scratch.targets.iter().zip(&scratch.coefs) {
        let row: Vec<f64> = scratch.center.iter().map(|c| g * c).collect();
        match outputs.iter_mut().find(|(t, _)| *t == target) {
            Some((_, acc)) => acc.iter_mut().zip(row).for_each(|(a, b)| *a += b),
            None => outputs.push((target, row)),
        }
    }
    outputs.sort_by_key(|(t, _)| *t);
    PairGradient {
        center: scratch.center_grad,
        outputs,
    }
}

/// One ascent step on a single pair: draws negatives from `noise` (skipping
/// draws equal to the context) and updates the center input row and every
/// touched output row in place. Returns the negatives used.
pub fn negative_sampling_step<R: Rng + ?Sized>(
    e: &mut EmbeddingSet,
    center: usize,
    context: usize,
    noise: &NoiseTable,
    negatives: usize,
    lr: f32,
    rng: &mut R,
) -> Vec<usize> {
    let mut scratch = Scratch::default();
    draw_targets(context, negatives, noise, rng, &mut scratch.targets);
    let dim = e.dim;
    let input = Cell::from_mut(e.input.as_mut_slice()).as_slice_of_cells();
    let output = Cell::from_mut(e.output.as_mut_slice()).as_slice_of_cells();
    if pair_gradient(input, output, dim, center, &mut scratch) {
        apply_gradient(input, output, dim, center, f64::from(lr), &scratch);
    }
    scratch.targets[1..].to_vec()
}

/// Learning rate after `step` of `total` updates: linear from `initial` to
/// `initial / 100`.
pub fn learning_rate_at(initial: f32, step: usize, total: usize) -> f64 {
    let progress = if total == 0 {
        0.0
    } else {
        step as f64 / total as f64
    };
    f64::from(initial) * (1.0 - 0.99 * progress.min(1.0))
}

/// Epoch-by-epoch trainer.
pub struct Trainer {
    cfg: TrainConfig,
    pairs: Vec<(u32, u32)>,
    noise: NoiseTable,
    embeddings: EmbeddingSet,
    epoch: usize,
}

impl Trainer {
    pub fn new(corpus: &GroupCorpus, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let noise = build_noise_table(corpus, cfg.noise_exponent)?;
        let pairs = corpus.pairs().map(|(a, b)| (a as u32, b as u32)).collect();
        let mut rng = seed::rng(seed::derive(cfg.seed, "init"));
        let embeddings = init_embeddings(corpus.vocab_size, cfg.dim, &mut rng, &corpus.graph_id);
        Ok(Trainer {
            cfg,
            pairs,
            noise,
            embeddings,
            epoch: 0,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn into_embeddings(self) -> EmbeddingSet {
        self.embeddings
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn run_epoch(&mut self) -> Result<(), TrainError> {
        let epoch = self.epoch;
        let epoch_seed = seed::mix(self.cfg.seed, epoch as u64);
        let mut order = self.pairs.clone();
        order.shuffle(&mut seed::rng(seed::derive(epoch_seed, "shuffle")));

        let total = self.cfg.epochs.max(epoch + 1) * self.pairs.len();
        let offset = epoch * self.pairs.len();
        if self.cfg.workers == 1 {
            let mut rng = seed::rng(seed::derive(epoch_seed, "negatives"));
            let dim = self.embeddings.dim;
            let input = Cell::from_mut(self.embeddings.input.as_mut_slice()).as_slice_of_cells();
            let output = Cell::from_mut(self.embeddings.output.as_mut_slice()).as_slice_of_cells();
            run_shard(&self.cfg, &self.noise, input, output, dim, &order, offset, total, &mut rng)
                .map_err(|pair_index| TrainError::NonFinite { epoch, pair_index })?;
        } else {
            let input = SharedTable::new(&self.embeddings.input);
            let output = SharedTable::new(&self.embeddings.output);
            let dim = self.embeddings.dim;
            let shard_len = order.len().div_ceil(self.cfg.workers).max(1);
            let (cfg, noise) = (&self.cfg, &self.noise);
            let failures: Vec<usize> = std::thread::scope(|s| {
                let handles: Vec<_> = order
                    .chunks(shard_len)
                    .enumerate()
                    .map(|(shard, pairs)| {
                        let (input, output) = (&input, &output);
                        s.spawn(move || {
                            let mut rng = seed::rng(seed::mix(epoch_seed, 1 + shard as u64));
                            run_shard(
                                cfg,
                                noise,
                                input,
                                output,
                                dim,
                                pairs,
                                offset + shard * shard_len,
                                total,
                                &mut rng,
                            )
                            .err()
                            .map(|i| i + shard * shard_len)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .filter_map(|h| h.join().expect("training worker panicked"))
                    .collect()
            });
            if let Some(&pair_index) = failures.iter().min() {
                return Err(TrainError::NonFinite { epoch, pair_index });
            }
            self.embeddings.input = input.into_vec();
            self.embeddings.output = output.into_vec();
        }
        if !self.embeddings.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                pair_index: self.pairs.len(),
            });
        }
        self.epoch += 1;
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn run_shard<T: Table + ?Sized, R: Rng>(
    cfg: &TrainConfig,
    noise: &NoiseTable,
    input: &T,
    output: &T,
    dim: usize,
    pairs: &[(u32, u32)],
    step_offset: usize,
    total: usize,
    rng: &mut R,
) -> Result<(), usize> {
    let mut scratch = Scratch::default();
    for (i, &(center, context)) in pairs.iter().enumerate() {
        let lr = learning_rate_at(cfg.learning_rate, step_offset + i, total);
        draw_targets(context as usize, cfg.negatives, noise, rng, &mut scratch.targets);
        if !pair_gradient(input, output, dim, center as usize, &mut scratch) {
            return Err(i);
        }
        apply_gradient(input, output, dim, center as usize, lr, &scratch);
    }
    Ok(())
}

/// Trains for `cfg.epochs` epochs over the corpus' prediction pairs.
pub fn train(corpus: &GroupCorpus, cfg: &TrainConfig) -> Result<EmbeddingSet, TrainError> {
    let mut trainer = Trainer::new(corpus, cfg.clone())?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.into_embeddings())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let ab = dot(a, b);
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        ab / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{generate_groups, Group};
    use crate::graph::{GraphBuilder, GraphKind};
    use approx::assert_abs_diff_eq;

    fn zero_set(vocab: usize, dim: usize) -> EmbeddingSet {
        EmbeddingSet {
            input: vec![0.0; vocab * dim],
            output: vec![0.0; vocab * dim],
            dim,
            vocab_size: vocab,
            graph_id: "t".into(),
        }
    }

    fn corpus_of(groups: Vec<Group>, vocab: usize) -> GroupCorpus {
        GroupCorpus {
            groups,
            chunk_size: 5,
            permutations: 1,
            vocab_size: vocab,
            graph_id: "t".into(),
        }
    }

    #[test]
    fn init_bounds_and_determinism() {
        let e = init_embeddings(1, 4, &mut seed::rng(1), "g");
        assert!(e.input.iter().all(|x| x.abs() <= 0.125));
        assert_eq!(e.output, vec![0.0; 4]);
        let big = init_embeddings(50, 8, &mut seed::rng(2), "g");
        assert!(big.input.iter().all(|x| x.abs() <= 0.5 / 8.0));
        assert_eq!(big, init_embeddings(50, 8, &mut seed::rng(2), "g"));
    }

    #[test]
    fn softmax_examples() {
        let e = zero_set(4, 3);
        for v in 0..4 {
            assert_abs_diff_eq!(softmax_prob(&e, 0, v), 0.25, epsilon = 1e-15);
        }

        // |V| = 2 with equal scores.
        let mut e = zero_set(2, 1);
        e.input = vec![1.0, 0.0];
        e.output = vec![5.0, 5.0];
        assert_abs_diff_eq!(softmax_prob(&e, 0, 1), 0.5, epsilon = 1e-15);

        // Scores (1, 0, 0) for center 0.
        let mut e = zero_set(3, 1);
        e.input = vec![1.0, 0.0, 0.0];
        e.output = vec![1.0, 0.0, 0.0];
        let expected = 1f64.exp() / (1f64.exp() + 2.0);
        assert_abs_diff_eq!(softmax_prob(&e, 0, 0), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.5761168847658291, epsilon = 1e-15);
    }

    #[test]
    fn softmax_survives_large_scores() {
        let mut e = zero_set(2, 1);
        e.input = vec![100.0, 0.0];
        e.output = vec![100.0, 0.0];
        let p = softmax_prob(&e, 0, 0);
        assert!(p.is_finite() && p > 0.999);
    }

    #[test]
    fn likelihood_degenerate_case() {
        let e = zero_set(4, 2);
        let corpus = corpus_of(vec![Group { root: 0, members: vec![1] }], 4);
        assert_abs_diff_eq!(corpus_log_likelihood(&e, &corpus), 0.25f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(0.25f64.ln(), -1.3862943611198906, epsilon = 1e-15);

        let repeated = corpus_of(vec![Group { root: 0, members: vec![1, 2] }; 3], 4);
        let single = corpus_of(vec![Group { root: 0, members: vec![1, 2] }], 4);
        let e = init_embeddings(4, 3, &mut seed::rng(3), "g");
        assert_abs_diff_eq!(
            corpus_log_likelihood(&e, &repeated),
            corpus_log_likelihood(&e, &single),
            epsilon = 1e-12
        );
        assert!(corpus_log_likelihood(&e, &single) <= 0.0);
    }

    #[test]
    fn noise_table_ratio() {
        let table = NoiseTable::from_frequencies(&[8, 1], 1.0).unwrap();
        let mut rng = seed::rng(7);
        let draws = 100_000;
        let zeros = (0..draws).filter(|_| table.sample(&mut rng) == 0).count();
        let ratio = zeros as f64 / (draws - zeros) as f64;
        assert!((ratio / 8.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    fn chi_square_uniform(counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum()
    }

    #[test]
    fn noise_table_uniform_cases() {
        // Critical value of χ² with 4 degrees of freedom at p = 0.01.
        let critical = 13.277;
        for (freq, exponent) in [(vec![3u64; 5], 0.75), (vec![1, 50, 7, 1000, 2], 0.0)] {
            let table = NoiseTable::from_frequencies(&freq, exponent).unwrap();
            let mut rng = seed::rng(11);
            let mut counts = vec![0usize; 5];
            for _ in 0..100_000 {
                counts[table.sample(&mut rng)] += 1;
            }
            assert!(chi_square_uniform(&counts) < critical, "{counts:?}");
        }
    }

    #[test]
    fn noise_table_rejects_empty() {
        assert!(matches!(
            build_noise_table(&corpus_of(vec![], 3), 0.75),
            Err(TrainError::EmptyCorpus)
        ));
        assert!(NoiseTable::from_frequencies(&[0, 0], 0.75).is_err());
    }

    #[test]
    fn positive_step_from_zero_outputs() {
        let mut e = zero_set(3, 2);
        e.input = vec![0.4, -0.2, 0.0, 0.0, 0.0, 0.0];
        let grad = pair_gradients(&e, 0, 1, &[]);
        // σ(0) = 0.5, so ∂/∂o_ctx = 0.5 · r_center and ∂/∂r_center = 0.
        assert_eq!(grad.outputs, vec![(1, vec![0.5 * 0.4f32 as f64, 0.5 * -0.2f32 as f64])]);
        assert_eq!(grad.center, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut e = init_embeddings(5, 4, &mut seed::rng(1), "g");
        e.output.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f32).sin());
        let before = e.clone();
        let noise = NoiseTable::from_frequencies(&[1; 5], 0.75).unwrap();
        negative_sampling_step(&mut e, 0, 1, &noise, 3, 0.0, &mut seed::rng(2));
        assert_eq!(e, before);
    }

    #[test]
    fn step_touches_only_its_rows() {
        let mut e = init_embeddings(6, 3, &mut seed::rng(4), "g");
        e.output.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f32 * 0.7).cos());
        let before = e.clone();
        let noise = NoiseTable::from_frequencies(&[1; 6], 0.75).unwrap();
        let negs = negative_sampling_step(&mut e, 2, 4, &noise, 2, 0.1, &mut seed::rng(9));
        for v in 0..6 {
            if v != 2 {
                assert_eq!(e.input_row(v), before.input_row(v));
            }
            if v != 4 && !negs.contains(&v) {
                assert_eq!(e.output_row(v), before.output_row(v));
            }
        }
        assert_ne!(e.input_row(2), before.input_row(2));
    }

    #[test]
    fn step_applies_the_analytic_gradient() {
        let mut e = init_embeddings(4, 2, &mut seed::rng(8), "g");
        e.output = vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.05, 0.2];
        let before = e.clone();
        let noise = NoiseTable::from_frequencies(&[1; 4], 0.75).unwrap();
        let lr = 0.05f32;
        let negs = negative_sampling_step(&mut e, 1, 2, &noise, 1, lr, &mut seed::rng(3));
        let grad = pair_gradients(&before, 1, 2, &negs);
        for d in 0..2 {
            let expected = before.input_row(1)[d] as f64 + lr as f64 * grad.center[d];
            assert_abs_diff_eq!(e.input_row(1)[d] as f64, expected, epsilon = 1e-6);
        }
        for (row, g) in &grad.outputs {
            for d in 0..2 {
                let expected = before.output_row(*row)[d] as f64 + lr as f64 * g[d];
                assert_abs_diff_eq!(e.output_row(*row)[d] as f64, expected, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = corpus_of(vec![Group { root: 0, members: vec![1] }], 2);
        let cfg = TrainConfig { dim: 4, epochs: 0, ..TrainConfig::default() };
        let e = train(&corpus, &cfg).unwrap();
        let init = init_embeddings(2, 4, &mut seed::rng(seed::derive(cfg.seed, "init")), "t");
        assert_eq!(e, init);
    }

    #[test]
    fn invalid_config_rejected() {
        let corpus = corpus_of(vec![Group { root: 0, members: vec![1] }], 2);
        for cfg in [
            TrainConfig { dim: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { negatives: 0, ..TrainConfig::default() },
            TrainConfig { workers: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&corpus, &cfg), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn nan_detected_with_location() {
        let corpus = corpus_of(vec![Group { root: 0, members: vec![1] }], 2);
        let mut trainer = Trainer::new(&corpus, TrainConfig { dim: 2, ..TrainConfig::default() }).unwrap();
        trainer.embeddings.output[2] = f32::NAN;
        match trainer.run_epoch() {
            Err(TrainError::NonFinite { epoch: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_worker_is_reproducible() {
        let mut b = GraphBuilder::new(GraphKind::Homogeneous);
        for (a, c) in [("a", "b"), ("b", "c"), ("c", "a"), ("c", "d"), ("d", "e")] {
            b.add_edge(a, c).unwrap();
        }
        let g = b.build();
        let corpus = generate_groups(&g, 2, 3, 5, "g").unwrap();
        let cfg = TrainConfig { dim: 8, epochs: 3, ..TrainConfig::default() };
        assert_eq!(train(&corpus, &cfg).unwrap(), train(&corpus, &cfg).unwrap());
    }

    #[test]
    fn learning_rate_schedule() {
        assert_abs_diff_eq!(learning_rate_at(0.025, 0, 100), 0.025, epsilon = 1e-9);
        assert_abs_diff_eq!(learning_rate_at(0.025, 100, 100), 0.00025, epsilon = 1e-9);
        assert!(learning_rate_at(0.025, 30, 100) > learning_rate_at(0.025, 60, 100));
    }
}
