use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mgembed::graph::GraphKind;
use mgembed_cli::stages::{self, Task};
use mgembed_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "mgembed", version, about = "Multi-graph embedding pipeline")]
struct Cli {
    /// Global seed; every stage derives its own streams from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skip-gram worker threads. 1 is fully deterministic.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Flat `key=value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set dim=32`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic graphs and credit labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold out a fraction of users from a bipartite purchase graph.
    Holdout {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        nodes_out: PathBuf,
    },
    /// Learn node embeddings for one graph.
    TrainEmbed {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        bipartite: bool,
        /// Graph name used for seed derivation; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long = "chunk-size")]
        chunk_size: Option<usize>,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embeddings for nodes missing from training.
    #[command(subcommand)]
    Mimic(MimicCommand),
    /// Build a feature dataset from embedding files.
    Fuse(FuseArgs),
    /// Split a dataset into training and test files.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        /// Node list; rows whose entity group is listed become the test set.
        #[arg(long)]
        test_groups: Option<PathBuf>,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Train a classifier and score the test set.
    Classify {
        /// logreg, knn or mlp.
        #[arg(long)]
        model_kind: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        predictions_out: PathBuf,
    },
    /// Metrics, ROC and threshold sweep for a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Training and cross-validation accuracy over training-set fractions.
    LearningCurve {
        #[arg(long)]
        model_kind: String,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a whole task: buying, credit or credit-friends-only.
    E2e {
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MimicCommand {
    /// Fit the neighbor regression on a graph and its embeddings.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add synthesized embeddings for the listed nodes.
    Infer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        /// Regression model; the neighbor mean is used without one.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FuseArgs {
    /// Bipartite graph whose edges become labeled pairs.
    #[arg(long, conflicts_with = "labels")]
    pairs: Option<PathBuf>,
    /// Entity labels file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Embedding files for the entity (or the left side of a pair), in order.
    #[arg(long = "left", required = true)]
    left: Vec<PathBuf>,
    /// Embedding files for the right side of a pair, in order.
    #[arg(long = "right")]
    right: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.load_file(path)?;
    }
    for kv in &cli.overrides {
        cfg.apply(kv)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if cfg.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match cli.command {
        Command::Synth { out } => {
            stages::cmd_synth(&cfg, &out)?;
        }
        Command::Holdout { graph, train_out, nodes_out } => {
            let held = stages::cmd_holdout(&cfg, &graph, &train_out, &nodes_out)?;
            println!("held_out={}", held.len());
        }
        Command::TrainEmbed { graph, bipartite, name, chunk_size, permutations, dim, epochs, out } => {
            cfg.chunk_size = chunk_size.unwrap_or(cfg.chunk_size);
            cfg.permutations = permutations.unwrap_or(cfg.permutations);
            cfg.dim = dim.unwrap_or(cfg.dim);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            let name = name.unwrap_or_else(|| {
                graph.file_stem().map_or("graph".into(), |s| s.to_string_lossy().into_owned())
            });
            let kind = if bipartite { GraphKind::Bipartite } else { GraphKind::Homogeneous };
            let e = stages::cmd_train_embed(&cfg, &graph, kind, &name, &out)?;
            println!("nodes={}", e.len());
        }
        Command::Mimic(MimicCommand::Train { graph, emb, out }) => {
            let r = stages::cmd_mimic_train(&cfg, &graph, &emb, &out)?;
            println!("train_nodes={}", r.train_nodes.len());
            println!("train_mse={}", r.train_mse);
            if let Some(v) = r.validation_mse {
                println!("validation_mse={v}");
            }
        }
        Command::Mimic(MimicCommand::Infer { graph, emb, model, nodes, out }) => {
            let filled = stages::cmd_mimic_infer(&cfg, &graph, &emb, model.as_deref(), &nodes, &out)?;
            println!("filled={filled}");
        }
        Command::Fuse(args) => {
            let ds = match (&args.pairs, &args.labels) {
                (Some(pairs), None) => {
                    if args.right.is_empty() {
                        return Err(CliError::Usage("--pairs needs at least one --right source".into()));
                    }
                    stages::cmd_fuse_pairs(&cfg, pairs, &args.left, &args.right, &args.out)?
                }
                (None, Some(labels)) => {
                    if !args.right.is_empty() {
                        return Err(CliError::Usage("--right only applies with --pairs".into()));
                    }
                    stages::cmd_fuse_entities(&cfg, labels, &args.left, &args.out)?
                }
                _ => return Err(CliError::Usage("pass exactly one of --pairs or --labels".into())),
            };
            println!("rows={}", ds.rows());
            println!("cols={}", ds.cols());
        }
        Command::Split { dataset, test_groups, train_out, test_out } => {
            let (train, test) = stages::cmd_split(&cfg, &dataset, test_groups.as_deref(), &train_out, &test_out)?;
            println!("train_rows={}", train.rows());
            println!("test_rows={}", test.rows());
        }
        Command::Classify { model_kind, train, test, model_out, predictions_out } => {
            stages::cmd_classify(&cfg, &model_kind, &train, &test, &model_out, &predictions_out)?;
        }
        Command::Evaluate { predictions, out } => {
            let e = stages::cmd_evaluate(&cfg, &predictions, &out)?;
            print!("{}", e.report.render_table());
        }
        Command::LearningCurve { model_kind, dataset, out } => {
            for p in stages::cmd_learning_curve(&cfg, &model_kind, &dataset, &out)? {
                println!(
                    "fraction={} train={:.4}±{:.4} cv={:.4}±{:.4}",
                    p.fraction, p.train_mean, p.train_sd, p.cv_mean, p.cv_sd
                );
            }
        }
        Command::E2e { task, out } => {
            let task = Task::parse(&task).ok_or_else(|| {
                CliError::Usage(format!("unknown task {task:?}; use buying, credit or credit-friends-only"))
            })?;
            let result = stages::cmd_e2e(&cfg, task, &out)?;
            print!("{}", result.evaluation.report.render_table());
            println!("{}", result.evaluation.report.summary_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
