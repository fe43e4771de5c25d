//! Batch pipeline driver: dataset generation, vocabulary and index
//! construction, training, encoding, retrieval, evaluation, diagnostics,
//! and parameter sweeps.
//!
//! Every subcommand takes its inputs as explicit paths plus an optional
//! `key=value` config file (`--config`); command-line flags override
//! config values. Environment variables are never consulted. Each
//! subcommand writes a run manifest next to its outputs and exits
//! nonzero with a one-line error on failure.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use densetrans::ann::IvfPqConfig;
use densetrans::encoder::{Connectivity, EncoderConfig};
use densetrans::eval::{MetricKind, MetricSpec};
use densetrans::manifest::KvConfig;
use densetrans::pipeline::{
    stage_ann_build, stage_bm25_index, stage_build_vocab, stage_diagnose, stage_encode,
    stage_eval, stage_gen_synthetic, stage_mine_negatives, stage_search, stage_train,
    sweep_cutoff, sweep_layers, sweep_negpool, SearchBackend, SweepDataPaths, TrainStagePaths,
};
use densetrans::synth::SynthConfig;
use densetrans::trainer::TrainConfig;

#[derive(Parser)]
#[command(name = "densetrans", version, about = "Dense-connected Transformer question retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOut {
    /// Directory for outputs and the run manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the bundled synthetic paraphrase corpus and splits.
    GenSynthetic {
        #[command(flatten)]
        out: CommonOut,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        /// Dimension of the bundled stand-in word vectors.
        #[arg(long, default_value_t = 24)]
        vector_dim: usize,
        /// Norm of each stand-in word vector.
        #[arg(long, default_value_t = 2.0)]
        vector_scale: f64,
    },
    /// Build the vocabulary from a corpus TSV.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Build the BM25 inverted index.
    Bm25Index {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Mine hard-negative candidate pools from BM25 rankings.
    MineNegatives {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = 100)]
        pool_depth: usize,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Train the encoder.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train_pairs: PathBuf,
        #[arg(long)]
        dev_pairs: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Mined pools file; required when pool_depth > 0.
        #[arg(long)]
        pools: Option<PathBuf>,
        /// Pretrained word vectors ("V d" header line, then token + d values).
        #[arg(long)]
        word_vectors: Option<PathBuf>,
        /// key=value config file (training and encoder keys).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Encode a corpus with a trained checkpoint.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Build the IVFPQ index over encoded vectors.
    AnnBuild {
        #[arg(long)]
        encodings: PathBuf,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_partitions: usize,
        #[arg(long, default_value_t = 16)]
        subvectors: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep exact vectors alongside codes (lossless test hook).
        #[arg(long)]
        store_raw: bool,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Rank the corpus for a query file; writes a 6-column run file.
    Search {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Queries TSV (question_id <TAB> text).
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Exact)]
        backend: Backend,
        /// Encoded corpus (exact backend).
        #[arg(long)]
        encodings: Option<PathBuf>,
        /// Encoding id sidecar (exact backend).
        #[arg(long)]
        ids: Option<PathBuf>,
        /// IVFPQ index file (ivfpq backend).
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        nprobe: usize,
        /// Score stored raw vectors instead of codes (lossless test hook).
        #[arg(long)]
        use_raw: bool,
        #[arg(long, default_value = "run")]
        run_name: String,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Score a run file against judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated metric specs, e.g. recall@100,mrr@100,ndcg@10.
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long, default_value = "metrics")]
        prefix: String,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Layer-wise discrimination diagnostic of a trained model.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Parameter sweeps (layer count, negative pool depth, cutoff).
    Sweep {
        #[command(subcommand)]
        variant: SweepCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Exact,
    Ivfpq,
}

#[derive(Args)]
struct SweepData {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    train_pairs: PathBuf,
    #[arg(long)]
    dev_pairs: PathBuf,
    #[arg(long)]
    test_pairs: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Transformer layer count N in {1, 2, 3, 4}.
    Layers(SweepData),
    /// Hard-negative pool depth N in {0, 100, 200, 300, 500, 1000}.
    Negpool(SweepData),
    /// Recall cutoffs k in {10, 20, 50, 100} over an existing run file.
    Cutoff {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
}

const CONFIG_KEYS: &[&str] = &[
    // training
    "peak_lr",
    "batch_size",
    "warmup_fraction",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "temperature",
    "seed",
    "eval_every",
    "pool_depth",
    "negatives_per_example",
    "resample_each_epoch",
    // encoder
    "dim",
    "num_layers",
    "num_heads",
    "d_ff",
    "max_len",
    "dropout_p",
    "connectivity",
];

/// Resolve encoder and training configs from defaults, the config file,
/// then explicit flags (strongest).
fn resolve_configs(
    config_path: Option<&PathBuf>,
    seed_flag: Option<u64>,
) -> Result<(EncoderConfig, TrainConfig)> {
    let kv = match config_path {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::empty(),
    };
    kv.check_known(CONFIG_KEYS)?;

    let mut enc = EncoderConfig::with_defaults(3);
    if let Some(v) = kv.parse("dim")? {
        enc.dim = v;
    }
    if let Some(v) = kv.parse("num_layers")? {
        enc.num_layers = v;
    }
    if let Some(v) = kv.parse("num_heads")? {
        enc.num_heads = v;
    }
    if let Some(v) = kv.parse("d_ff")? {
        enc.d_ff = v;
    } else if kv.get("dim").is_some() {
        enc.d_ff = 4 * enc.dim;
    }
    if let Some(v) = kv.parse("max_len")? {
        enc.max_len = v;
    }
    if let Some(v) = kv.parse("dropout_p")? {
        enc.dropout_p = v;
    }
    if let Some(v) = kv.parse::<Connectivity>("connectivity")? {
        enc.connectivity = v;
    }

    let mut train = TrainConfig::default();
    if let Some(v) = kv.parse("peak_lr")? {
        train.peak_lr = v;
    }
    if let Some(v) = kv.parse("batch_size")? {
        train.batch_size = v;
    }
    if let Some(v) = kv.parse("warmup_fraction")? {
        train.warmup_fraction = v;
    }
    if let Some(v) = kv.parse("beta1")? {
        train.beta1 = v;
    }
    if let Some(v) = kv.parse("beta2")? {
        train.beta2 = v;
    }
    if let Some(v) = kv.parse("eps")? {
        train.eps = v;
    }
    if let Some(v) = kv.parse("epochs")? {
        train.epochs = v;
    }
    if let Some(v) = kv.parse("temperature")? {
        train.temperature = v;
    }
    if let Some(v) = kv.parse("seed")? {
        train.seed = v;
    }
    if let Some(v) = kv.parse("eval_every")? {
        train.eval_every = v;
    }
    if let Some(v) = kv.parse("pool_depth")? {
        train.pool_depth = v;
    }
    if let Some(v) = kv.parse("negatives_per_example")? {
        train.negatives_per_example = v;
    }
    if let Some(v) = kv.parse("resample_each_epoch")? {
        train.resample_each_epoch = v;
    }
    if let Some(seed) = seed_flag {
        train.seed = seed;
    }
    Ok((enc, train))
}

fn parse_metric_specs(raw: &str) -> Result<Vec<MetricSpec>> {
    let mut specs = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        let Some((kind, k)) = part.split_once('@') else {
            bail!("bad metric spec {part:?} (expected e.g. recall@100)");
        };
        let kind = match kind {
            "recall" => MetricKind::Recall,
            "mrr" => MetricKind::Mrr,
            "map" => MetricKind::Map,
            "ndcg" => MetricKind::Ndcg,
            other => bail!("unknown metric {other:?} (recall | mrr | map | ndcg)"),
        };
        let k: usize = k.parse().map_err(|_| anyhow::anyhow!("bad cutoff in {part:?}"))?;
        specs.push(MetricSpec { kind, k });
    }
    Ok(specs)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynthetic { out, seed, vector_dim, vector_scale } => {
            let config = SynthConfig { seed, ..SynthConfig::default() };
            stage_gen_synthetic(&out.out_dir, &config, vector_dim, vector_scale)?;
            println!("synthetic corpus written to {}", out.out_dir.display());
        }
        Command::BuildVocab { corpus, min_freq, out } => {
            let path = stage_build_vocab(&corpus, min_freq, &out.out_dir)?;
            println!("vocab written to {}", path.display());
        }
        Command::Bm25Index { corpus, out } => {
            let path = stage_bm25_index(&corpus, &out.out_dir)?;
            println!("bm25 index written to {}", path.display());
        }
        Command::MineNegatives { corpus, index, pairs, qrels, pool_depth, out } => {
            let path = stage_mine_negatives(&corpus, &index, &pairs, &qrels, pool_depth, &out.out_dir)?;
            println!("pools written to {}", path.display());
        }
        Command::Train {
            corpus,
            vocab,
            train_pairs,
            dev_pairs,
            qrels,
            pools,
            word_vectors,
            config,
            seed,
            out,
        } => {
            let (enc_cfg, train_cfg) = resolve_configs(config.as_ref(), seed)?;
            let paths = TrainStagePaths {
                corpus: &corpus,
                vocab: &vocab,
                train_pairs: &train_pairs,
                dev_pairs: &dev_pairs,
                qrels: &qrels,
                pools: pools.as_deref(),
                word_vectors: word_vectors.as_deref(),
            };
            let artifacts = stage_train(&paths, &enc_cfg, &train_cfg, &out.out_dir)?;
            println!(
                "checkpoint {} (best dev recall@100 {:.4} at step {})",
                artifacts.checkpoint.display(),
                artifacts.outcome.best_dev_recall,
                artifacts.outcome.best_step
            );
        }
        Command::Encode { checkpoint, vocab, corpus, out } => {
            let (enc, ids) = stage_encode(&checkpoint, &vocab, &corpus, &out.out_dir)?;
            println!("encodings {} ids {}", enc.display(), ids.display());
        }
        Command::AnnBuild { encodings, ids, n_partitions, subvectors, seed, store_raw, out } => {
            let config = IvfPqConfig { n_partitions, subvectors, seed, store_raw, ..IvfPqConfig::default() };
            let path = stage_ann_build(&encodings, &ids, &config, &out.out_dir)?;
            println!("ann index written to {}", path.display());
        }
        Command::Search {
            checkpoint,
            vocab,
            queries,
            backend,
            encodings,
            ids,
            index,
            k,
            nprobe,
            use_raw,
            run_name,
            out,
        } => {
            let backend = match backend {
                Backend::Exact => {
                    let (Some(encodings), Some(ids)) = (encodings.as_deref(), ids.as_deref()) else {
                        bail!("--backend exact requires --encodings and --ids");
                    };
                    SearchBackend::Exact { encodings, ids }
                }
                Backend::Ivfpq => {
                    let Some(index) = index.as_deref() else {
                        bail!("--backend ivfpq requires --index");
                    };
                    SearchBackend::IvfPq { index, nprobe, use_raw }
                }
            };
            let path = stage_search(&checkpoint, &vocab, &queries, backend, k, &out.out_dir, &run_name)?;
            println!("run file written to {}", path.display());
        }
        Command::Eval { run, qrels, metrics, prefix, out } => {
            let specs = match metrics.as_deref() {
                Some(raw) => parse_metric_specs(raw)?,
                None => densetrans::eval::default_metric_specs(),
            };
            let report = stage_eval(&run, &qrels, &specs, &out.out_dir, &prefix)?;
            for (spec, mean) in report.specs.iter().zip(&report.means) {
                println!("{spec}\t{mean}");
            }
        }
        Command::Diagnose { checkpoint, vocab, corpus, qrels, seed, out } => {
            let values = stage_diagnose(&checkpoint, &vocab, &corpus, &qrels, seed, &out.out_dir)?;
            for (layer, v) in values.iter().enumerate() {
                println!("layer {layer}\t{v}");
            }
        }
        Command::Sweep { variant } => match variant {
            SweepCommand::Layers(data) => {
                let (enc_cfg, train_cfg) = resolve_configs(data.config.as_ref(), data.seed)?;
                let paths = SweepDataPaths {
                    corpus: &data.corpus,
                    vocab: &data.vocab,
                    train_pairs: &data.train_pairs,
                    dev_pairs: &data.dev_pairs,
                    test_pairs: &data.test_pairs,
                    qrels: &data.qrels,
                };
                let path = sweep_layers(&paths, &enc_cfg, &train_cfg, &data.out.out_dir)?;
                println!("sweep written to {}", path.display());
            }
            SweepCommand::Negpool(data) => {
                let (enc_cfg, train_cfg) = resolve_configs(data.config.as_ref(), data.seed)?;
                let paths = SweepDataPaths {
                    corpus: &data.corpus,
                    vocab: &data.vocab,
                    train_pairs: &data.train_pairs,
                    dev_pairs: &data.dev_pairs,
                    test_pairs: &data.test_pairs,
                    qrels: &data.qrels,
                };
                let path = sweep_negpool(&paths, &enc_cfg, &train_cfg, &data.out.out_dir)?;
                println!("sweep written to {}", path.display());
            }
            SweepCommand::Cutoff { run, qrels, out } => {
                let path = sweep_cutoff(&run, &qrels, &out.out_dir)?;
                println!("sweep written to {}", path.display());
            }
        },
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
