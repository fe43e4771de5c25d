//! Pipeline stages: the file-level operations behind the CLI
//! subcommands, plus in-memory experiment helpers shared with the test
//! suites. Every stage writes a run manifest next to its outputs.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::ann::{effective_partitions, ExactIndex, IvfPqConfig, IvfPqIndex, SearchParams};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{read_two_column_tsv, write_two_column_tsv, Corpus, Pairs};
use crate::encoder::{Encoder, EncoderConfig, WordVectors};
use crate::error::{Error, Result};
use crate::eval::diagnostic::{discrimination_diagnostic, sample_triples};
use crate::eval::runfile::{read_run_file, write_run_file};
use crate::eval::{evaluate, MetricKind, MetricReport, MetricSpec, Qrels, RankedList};
use crate::lexical::{InvertedIndex, Vocab};
use crate::manifest::RunManifest;
use crate::rng::SplitMix64;
use crate::sampling::mine_pools;
use crate::synth::{generate, SynthConfig};
use crate::tensor::serial::{read_tensors_file, write_tensors_file, Record};
use crate::trainer::{train, TrainConfig, TrainInputs, TrainOutcome};

// ---- shared loading helpers ----

fn tokenized(corpus: &Corpus, vocab: &Vocab, max_len: usize) -> Vec<Vec<u32>> {
    (0..corpus.len())
        .map(|i| vocab.encode_text(corpus.text(i as u32), max_len))
        .collect()
}

fn pairs_to_ordinals(pairs: &Pairs, corpus: &Corpus) -> Result<Vec<(u32, u32)>> {
    pairs
        .0
        .iter()
        .map(|(q, p)| Ok((corpus.require_ordinal(q)?, corpus.require_ordinal(p)?)))
        .collect()
}

fn unique_queries(pairs: &[(u32, u32)]) -> Vec<u32> {
    let mut seen = std::collections::HashSet::new();
    pairs.iter().filter(|(q, _)| seen.insert(*q)).map(|(q, _)| *q).collect()
}

// ---- gen-synthetic ----

pub fn stage_gen_synthetic(
    out_dir: &Path,
    config: &SynthConfig,
    vector_dim: usize,
    vector_scale: f64,
) -> Result<()> {
    let data = generate(config);
    data.write_files(out_dir)?;
    let vectors = crate::synth::synthetic_word_vectors(
        &data.distinct_tokens(),
        vector_dim,
        vector_scale,
        config.seed,
    );
    crate::synth::write_word_vectors(&out_dir.join("word_vectors.txt"), &vectors)?;
    let mut m = RunManifest::new("gen-synthetic");
    m.set("seed", config.seed)
        .set("train_fraction", config.train_fraction)
        .set("dev_fraction", config.dev_fraction)
        .set("questions", data.corpus.len())
        .set("vector_dim", vector_dim)
        .set("vector_scale", vector_scale);
    m.write(&out_dir.join("gen-synthetic.manifest.txt"))?;
    Ok(())
}

// ---- build-vocab ----

pub fn stage_build_vocab(corpus_path: &Path, min_freq: u64, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let corpus = Corpus::load(corpus_path)?;
    let docs: Vec<Vec<String>> = (0..corpus.len())
        .map(|i| crate::lexical::tokenize(corpus.text(i as u32)))
        .collect();
    let vocab = Vocab::build(docs.iter().map(|d| d.as_slice()), min_freq)?;
    let out = out_dir.join("vocab.tsv");
    vocab.save(&out)?;
    let mut m = RunManifest::new("build-vocab");
    m.set("min_freq", min_freq).set("vocab_size", vocab.len());
    m.add_input(corpus_path)?;
    m.write(&out_dir.join("build-vocab.manifest.txt"))?;
    Ok(out)
}

// ---- bm25-index ----

pub fn stage_bm25_index(corpus_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let corpus = Corpus::load(corpus_path)?;
    let index = InvertedIndex::build(&corpus);
    let out = out_dir.join("bm25.idx");
    index.save(&out)?;
    let mut m = RunManifest::new("bm25-index");
    m.set("documents", index.num_docs());
    m.add_input(corpus_path)?;
    m.write(&out_dir.join("bm25-index.manifest.txt"))?;
    Ok(out)
}

// ---- mine-negatives ----

pub fn stage_mine_negatives(
    corpus_path: &Path,
    index_path: &Path,
    pairs_path: &Path,
    qrels_path: &Path,
    pool_depth: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let corpus = Corpus::load(corpus_path)?;
    let index = InvertedIndex::load(index_path)?;
    let pairs = Pairs::load(pairs_path)?;
    let qrels = Qrels::load(qrels_path)?;
    let query_ids: Vec<String> = pairs.0.iter().map(|(q, _)| q.clone()).collect();
    let pools = mine_pools(&index, &corpus, &qrels, &query_ids, pool_depth)?;
    // One query_id <TAB> candidate_id row per pool entry, rank order,
    // queries in first-appearance order.
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for qid in &query_ids {
        let ord = corpus.require_ordinal(qid)?;
        if !seen.insert(ord) {
            continue;
        }
        for cand in &pools[&ord] {
            rows.push((qid.clone(), corpus.id(*cand).to_string()));
        }
    }
    let out = out_dir.join("pools.tsv");
    write_two_column_tsv(&out, &rows)?;
    let mut m = RunManifest::new("mine-negatives");
    m.set("pool_depth", pool_depth);
    m.add_input(corpus_path)?;
    m.add_input(index_path)?;
    m.add_input(pairs_path)?;
    m.add_input(qrels_path)?;
    m.write(&out_dir.join("mine-negatives.manifest.txt"))?;
    Ok(out)
}

fn load_pools(path: &Path, corpus: &Corpus) -> Result<HashMap<u32, Vec<u32>>> {
    let mut pools: HashMap<u32, Vec<u32>> = HashMap::new();
    for (q, cand) in read_two_column_tsv(path)? {
        let qo = corpus.require_ordinal(&q)?;
        let co = corpus.require_ordinal(&cand)?;
        pools.entry(qo).or_default().push(co);
    }
    Ok(pools)
}

// ---- train ----

pub struct TrainStagePaths<'a> {
    pub corpus: &'a Path,
    pub vocab: &'a Path,
    pub train_pairs: &'a Path,
    pub dev_pairs: &'a Path,
    pub qrels: &'a Path,
    /// Required when `pool_depth > 0`.
    pub pools: Option<&'a Path>,
    pub word_vectors: Option<&'a Path>,
}

pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub outcome: TrainOutcome,
}

pub fn stage_train(
    paths: &TrainStagePaths<'_>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainArtifacts> {
    std::fs::create_dir_all(out_dir)?;
    let corpus = Corpus::load(paths.corpus)?;
    let vocab = Vocab::load(paths.vocab)?;
    let qrels = Qrels::load(paths.qrels)?;
    let train_pairs = pairs_to_ordinals(&Pairs::load(paths.train_pairs)?, &corpus)?;
    let dev_pairs = pairs_to_ordinals(&Pairs::load(paths.dev_pairs)?, &corpus)?;
    let dev_queries = unique_queries(&dev_pairs);

    let mut config = encoder_config.clone();
    config.vocab_size = vocab.len();

    let pools = match (paths.pools, train_config.pool_depth) {
        (Some(p), _) => load_pools(p, &corpus)?,
        (None, 0) => HashMap::new(),
        (None, d) => {
            return Err(Error::Config(format!(
                "pool_depth {d} requires a mined pools file (run mine-negatives)"
            )))
        }
    };

    let mut init_rng = SplitMix64::derive(train_config.seed, "init");
    let encoder = match paths.word_vectors {
        Some(wv) => {
            let vectors = WordVectors::load(wv)?;
            Encoder::new(
                config.clone(),
                crate::encoder::EncoderParams::init_with_word_vectors(&config, &vocab, &vectors, &mut init_rng)?,
            )?
        }
        None => Encoder::init(config.clone(), &mut init_rng)?,
    };

    let token_ids = tokenized(&corpus, &vocab, config.max_len);
    let inputs = TrainInputs {
        corpus: &corpus,
        token_ids: &token_ids,
        train_pairs: &train_pairs,
        dev_queries: &dev_queries,
        qrels: &qrels,
        pools: &pools,
    };
    let outcome = train(&encoder, train_config, &inputs)?;

    let checkpoint = out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &encoder, &vocab.content_hash())?;

    let log = out_dir.join("train_log.tsv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&log)?);
    writeln!(w, "step\tlr\tloss\tdev_recall@100")?;
    for row in &outcome.log {
        let dev = row.dev_recall.map_or("NA".to_string(), |v| v.to_string());
        writeln!(w, "{}\t{}\t{}\t{}", row.step, row.lr, row.loss, dev)?;
    }
    w.flush()?;

    let mut m = RunManifest::new("train");
    m.set("seed", train_config.seed)
        .set("peak_lr", train_config.peak_lr)
        .set("batch_size", train_config.batch_size)
        .set("warmup_fraction", train_config.warmup_fraction)
        .set("beta1", train_config.beta1)
        .set("beta2", train_config.beta2)
        .set("eps", train_config.eps)
        .set("epochs", train_config.epochs)
        .set("temperature", train_config.temperature)
        .set("eval_every", train_config.eval_every)
        .set("pool_depth", train_config.pool_depth)
        .set("negatives_per_example", train_config.negatives_per_example)
        .set("resample_each_epoch", train_config.resample_each_epoch)
        .set("dim", config.dim)
        .set("num_layers", config.num_layers)
        .set("num_heads", config.num_heads)
        .set("d_ff", config.d_ff)
        .set("max_len", config.max_len)
        .set("dropout_p", config.dropout_p)
        .set("connectivity", config.connectivity)
        .set("vocab_size", config.vocab_size)
        .set("best_step", outcome.best_step)
        .set("best_dev_recall", outcome.best_dev_recall);
    m.add_input(paths.corpus)?;
    m.add_input(paths.vocab)?;
    m.add_input(paths.train_pairs)?;
    m.add_input(paths.dev_pairs)?;
    m.add_input(paths.qrels)?;
    if let Some(p) = paths.pools {
        m.add_input(p)?;
    }
    if let Some(p) = paths.word_vectors {
        m.add_input(p)?;
    }
    m.write(&out_dir.join("train.manifest.txt"))?;
    Ok(TrainArtifacts { checkpoint, log, outcome })
}

// ---- encode ----

/// Encode the corpus into a tensor container plus an id sidecar TSV
/// (`row <TAB> question_id`).
pub fn stage_encode(
    checkpoint_path: &Path,
    vocab_path: &Path,
    corpus_path: &Path,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let (encoder, meta) = load_checkpoint(checkpoint_path)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.content_hash() != meta.vocab_hash {
        return Err(Error::Config(format!(
            "vocab hash mismatch: checkpoint was trained with {}, file {} has {}",
            meta.vocab_hash,
            vocab_path.display(),
            vocab.content_hash()
        )));
    }
    let corpus = Corpus::load(corpus_path)?;
    let token_ids = tokenized(&corpus, &vocab, encoder.config.max_len);
    let dim = encoder.config.encoding_dim();
    let mut flat = Vec::with_capacity(corpus.len() * dim);
    for ids in &token_ids {
        flat.extend(encoder.encode_eval(ids)?);
    }
    let enc_path = out_dir.join("encodings.bin");
    write_tensors_file(
        &enc_path,
        &[Record { name: "encodings", shape: &[corpus.len(), dim], data: &flat }],
    )?;
    let ids_path = out_dir.join("encodings.ids.tsv");
    let rows: Vec<(String, String)> = corpus
        .iter()
        .map(|(ord, id, _)| (ord.to_string(), id.to_string()))
        .collect();
    write_two_column_tsv(&ids_path, &rows)?;
    let mut m = RunManifest::new("encode");
    m.set("questions", corpus.len()).set("encoding_dim", dim);
    m.add_input(checkpoint_path)?;
    m.add_input(vocab_path)?;
    m.add_input(corpus_path)?;
    m.write(&out_dir.join("encode.manifest.txt"))?;
    Ok((enc_path, ids_path))
}

/// Read an encoded corpus back as `(ids, vectors)`.
pub fn load_encodings(encodings_path: &Path, ids_path: &Path) -> Result<(Vec<String>, Vec<Vec<f32>>)> {
    let records = read_tensors_file::<f32>(encodings_path)?;
    let rec = records
        .iter()
        .find(|r| r.name == "encodings")
        .ok_or_else(|| Error::Format {
            path: encodings_path.display().to_string(),
            msg: "no \"encodings\" record".to_string(),
        })?;
    if rec.shape.len() != 2 {
        return Err(Error::Format {
            path: encodings_path.display().to_string(),
            msg: format!("encodings record must be rank 2, got {:?}", rec.shape),
        });
    }
    let (n, dim) = (rec.shape[0], rec.shape[1]);
    let rows = read_two_column_tsv(ids_path)?;
    if rows.len() != n {
        return Err(Error::Format {
            path: ids_path.display().to_string(),
            msg: format!("{} sidecar ids for {} encodings", rows.len(), n),
        });
    }
    let ids: Vec<String> = rows.into_iter().map(|(_, id)| id).collect();
    let vectors: Vec<Vec<f32>> = (0..n).map(|i| rec.data[i * dim..(i + 1) * dim].to_vec()).collect();
    Ok((ids, vectors))
}

// ---- ann-build ----

pub fn stage_ann_build(
    encodings_path: &Path,
    ids_path: &Path,
    config: &IvfPqConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let (ids, vectors) = load_encodings(encodings_path, ids_path)?;
    let mut cfg = config.clone();
    let effective = effective_partitions(cfg.n_partitions, vectors.len());
    if effective != cfg.n_partitions {
        cfg.n_partitions = effective;
    }
    let mut index = IvfPqIndex::train(&vectors, &cfg)?;
    for (id, v) in ids.iter().zip(&vectors) {
        index.add(id, v)?;
    }
    let out = out_dir.join("ann.idx");
    index.save(&out)?;
    let mut m = RunManifest::new("ann-build");
    m.set("requested_partitions", config.n_partitions)
        .set("n_partitions", cfg.n_partitions)
        .set("subvectors", cfg.subvectors)
        .set("seed", cfg.seed)
        .set("store_raw", cfg.store_raw)
        .set("vectors", vectors.len());
    m.add_input(encodings_path)?;
    m.add_input(ids_path)?;
    m.write(&out_dir.join("ann-build.manifest.txt"))?;
    Ok(out)
}

// ---- search ----

pub enum SearchBackend<'a> {
    Exact { encodings: &'a Path, ids: &'a Path },
    IvfPq { index: &'a Path, nprobe: usize, use_raw: bool },
}

impl SearchBackend<'_> {
    fn name(&self) -> &'static str {
        match self {
            SearchBackend::Exact { .. } => "exact",
            SearchBackend::IvfPq { .. } => "ivfpq",
        }
    }
}

/// Encode the query file and rank the corpus. The query's own id is
/// dropped from its ranking before truncation to `k`.
pub fn stage_search(
    checkpoint_path: &Path,
    vocab_path: &Path,
    queries_path: &Path,
    backend: SearchBackend<'_>,
    k: usize,
    out_dir: &Path,
    run_name: &str,
) -> Result<PathBuf> {
    if k == 0 {
        return Err(Error::contract("search k must be >= 1".to_string()));
    }
    std::fs::create_dir_all(out_dir)?;
    let (encoder, meta) = load_checkpoint(checkpoint_path)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.content_hash() != meta.vocab_hash {
        return Err(Error::Config(format!(
            "vocab hash mismatch between checkpoint and {}",
            vocab_path.display()
        )));
    }
    let queries = Corpus::load(queries_path)?;

    enum Loaded {
        Exact(ExactIndex),
        IvfPq(IvfPqIndex, usize, bool),
    }
    let loaded = match &backend {
        SearchBackend::Exact { encodings, ids } => {
            let (ids, vectors) = load_encodings(encodings, ids)?;
            Loaded::Exact(ExactIndex::build(ids, vectors)?)
        }
        SearchBackend::IvfPq { index, nprobe, use_raw } => {
            Loaded::IvfPq(IvfPqIndex::load(index)?, *nprobe, *use_raw)
        }
    };

    let mut lists = Vec::with_capacity(queries.len());
    for (_, qid, text) in queries.iter() {
        let ids = vocab.encode_text(text, encoder.config.max_len);
        let qvec: Vec<f32> = encoder.encode_eval(&ids)?;
        let hits = match &loaded {
            Loaded::Exact(idx) => idx.search(&qvec, k + 1)?,
            Loaded::IvfPq(idx, nprobe, use_raw) => idx.search(
                &qvec,
                &SearchParams { k: k + 1, nprobe: *nprobe, use_raw: *use_raw },
            )?,
        };
        lists.push(RankedList::new(qid, hits)?.without_id_truncated(qid, k));
    }
    let out = out_dir.join(format!("{run_name}.run"));
    write_run_file(&out, &lists, backend.name())?;
    let mut m = RunManifest::new("search");
    m.set("backend", backend.name()).set("k", k).set("queries", queries.len());
    if let SearchBackend::IvfPq { nprobe, use_raw, .. } = &backend {
        m.set("nprobe", *nprobe).set("use_raw", *use_raw);
    }
    m.add_input(checkpoint_path)?;
    m.add_input(vocab_path)?;
    m.add_input(queries_path)?;
    match &backend {
        SearchBackend::Exact { encodings, ids } => {
            m.add_input(encodings)?;
            m.add_input(ids)?;
        }
        SearchBackend::IvfPq { index, .. } => {
            m.add_input(index)?;
        }
    }
    m.write(&out_dir.join(format!("{run_name}.search.manifest.txt")))?;
    Ok(out)
}

// ---- eval ----

pub fn stage_eval(
    run_path: &Path,
    qrels_path: &Path,
    specs: &[MetricSpec],
    out_dir: &Path,
    prefix: &str,
) -> Result<MetricReport> {
    std::fs::create_dir_all(out_dir)?;
    let lists = read_run_file(run_path)?;
    let qrels = Qrels::load(qrels_path)?;
    let report = evaluate(&lists, &qrels, specs)?;
    report.write_per_query_tsv(&out_dir.join(format!("{prefix}.per_query.tsv")))?;
    report.write_summary_tsv(&out_dir.join(format!("{prefix}.summary.tsv")))?;
    let mut m = RunManifest::new("eval");
    let spec_names: Vec<String> = specs.iter().map(|s| s.to_string()).collect();
    m.set("metrics", spec_names.join(","));
    m.add_input(run_path)?;
    m.add_input(qrels_path)?;
    m.write(&out_dir.join(format!("{prefix}.eval.manifest.txt")))?;
    Ok(report)
}

// ---- diagnose ----

pub fn stage_diagnose(
    checkpoint_path: &Path,
    vocab_path: &Path,
    corpus_path: &Path,
    qrels_path: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<f64>> {
    std::fs::create_dir_all(out_dir)?;
    let (encoder, meta) = load_checkpoint(checkpoint_path)?;
    let vocab = Vocab::load(vocab_path)?;
    if vocab.content_hash() != meta.vocab_hash {
        return Err(Error::Config(format!(
            "vocab hash mismatch between checkpoint and {}",
            vocab_path.display()
        )));
    }
    let corpus = Corpus::load(corpus_path)?;
    let qrels = Qrels::load(qrels_path)?;
    let token_ids = tokenized(&corpus, &vocab, encoder.config.max_len);
    let values = diagnostic_values(&encoder, &corpus, &token_ids, &qrels, seed)?;
    let out = out_dir.join("diagnostic.tsv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "layer\tmean_abs_log_cosine_gap")?;
    for (l, v) in values.iter().enumerate() {
        writeln!(w, "{l}\t{v}")?;
    }
    w.flush()?;
    let mut m = RunManifest::new("diagnose");
    m.set("seed", seed).set("layers", values.len());
    m.add_input(checkpoint_path)?;
    m.add_input(vocab_path)?;
    m.add_input(corpus_path)?;
    m.add_input(qrels_path)?;
    m.write(&out_dir.join("diagnose.manifest.txt"))?;
    Ok(values)
}

/// In-memory diagnostic: sample triples from the judgments and measure
/// the per-layer separation, caching layer representations per question.
pub fn diagnostic_values(
    encoder: &Encoder<f32>,
    corpus: &Corpus,
    token_ids: &[Vec<u32>],
    qrels: &Qrels,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = SplitMix64::derive(seed, "diagnostic");
    let triples = sample_triples(qrels, corpus, &mut rng)?;
    let mut cache: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
    let mut reps = |id: &str| -> Result<Vec<Vec<f64>>> {
        if let Some(r) = cache.get(id) {
            return Ok(r.clone());
        }
        let ord = corpus.require_ordinal(id)?;
        let reps32 = encoder.layer_representations(&token_ids[ord as usize])?;
        let reps64: Vec<Vec<f64>> = reps32
            .into_iter()
            .map(|v| v.into_iter().map(|x| x as f64).collect())
            .collect();
        cache.insert(id.to_string(), reps64.clone());
        Ok(reps64)
    };
    discrimination_diagnostic(&mut reps, &triples)
}

// ---- in-memory experiment helpers (shared by sweeps and tests) ----

/// A fully prepared retrieval experiment over the synthetic corpus.
pub struct Experiment {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub token_ids: Vec<Vec<u32>>,
    pub train_pairs: Vec<(u32, u32)>,
    pub dev_queries: Vec<u32>,
    pub test_queries: Vec<u32>,
    pub qrels: Qrels,
    pub index: InvertedIndex,
}

impl Experiment {
    /// Build everything from generated synthetic data. `dev_stride`
    /// keeps every n-th dev query to bound in-training evaluation cost.
    pub fn synthetic(synth: &SynthConfig, max_len: usize, dev_stride: usize) -> Result<Experiment> {
        let data = generate(synth);
        let corpus = Corpus::new(data.corpus.clone())?;
        let docs: Vec<Vec<String>> = (0..corpus.len())
            .map(|i| crate::lexical::tokenize(corpus.text(i as u32)))
            .collect();
        let vocab = Vocab::build(docs.iter().map(|d| d.as_slice()), 1)?;
        let token_ids = tokenized(&corpus, &vocab, max_len);
        let mut qrels = Qrels::new();
        for (q, r) in &data.qrels {
            qrels.add(q, r);
        }
        let to_ord = |pairs: &[(String, String)]| -> Result<Vec<(u32, u32)>> {
            pairs
                .iter()
                .map(|(q, p)| Ok((corpus.require_ordinal(q)?, corpus.require_ordinal(p)?)))
                .collect()
        };
        let train_pairs = to_ord(&data.train_pairs)?;
        let dev_pairs = to_ord(&data.dev_pairs)?;
        let test_pairs = to_ord(&data.test_pairs)?;
        let dev_queries: Vec<u32> = unique_queries(&dev_pairs)
            .into_iter()
            .step_by(dev_stride.max(1))
            .collect();
        let test_queries = unique_queries(&test_pairs);
        let index = InvertedIndex::build(&corpus);
        Ok(Experiment {
            corpus,
            vocab,
            token_ids,
            train_pairs,
            dev_queries,
            test_queries,
            qrels,
            index,
        })
    }

    pub fn mine(&self, pool_depth: usize) -> Result<HashMap<u32, Vec<u32>>> {
        let query_ids: Vec<String> = self
            .train_pairs
            .iter()
            .map(|(q, _)| self.corpus.id(*q).to_string())
            .collect();
        mine_pools(&self.index, &self.corpus, &self.qrels, &query_ids, pool_depth)
    }

    /// Stand-in pretrained word vectors covering the whole vocabulary
    /// (seeded random unit directions at the given scale).
    pub fn synthetic_vectors(&self, dim: usize, scale: f64, seed: u64) -> Result<WordVectors> {
        let words: Vec<String> = (3..self.vocab.len() as u32)
            .filter_map(|id| self.vocab.word(id).map(|w| w.to_string()))
            .collect();
        let pairs = crate::synth::synthetic_word_vectors(&words, dim, scale, seed);
        WordVectors::from_pairs(dim, pairs)
    }

    /// Initialize (seeded) and train one encoder.
    pub fn train_encoder(
        &self,
        encoder_config: &EncoderConfig,
        train_config: &TrainConfig,
        pools: &HashMap<u32, Vec<u32>>,
    ) -> Result<(Encoder<f32>, TrainOutcome)> {
        self.train_encoder_with(encoder_config, train_config, pools, None)
    }

    /// Like [`Experiment::train_encoder`], optionally initializing token
    /// rows from word vectors.
    pub fn train_encoder_with(
        &self,
        encoder_config: &EncoderConfig,
        train_config: &TrainConfig,
        pools: &HashMap<u32, Vec<u32>>,
        vectors: Option<&WordVectors>,
    ) -> Result<(Encoder<f32>, TrainOutcome)> {
        let mut config = encoder_config.clone();
        config.vocab_size = self.vocab.len();
        let mut rng = SplitMix64::derive(train_config.seed, "init");
        let encoder = match vectors {
            Some(v) => Encoder::new(
                config.clone(),
                crate::encoder::EncoderParams::init_with_word_vectors(&config, &self.vocab, v, &mut rng)?,
            )?,
            None => Encoder::init(config, &mut rng)?,
        };
        let inputs = TrainInputs {
            corpus: &self.corpus,
            token_ids: &self.token_ids,
            train_pairs: &self.train_pairs,
            dev_queries: &self.dev_queries,
            qrels: &self.qrels,
            pools,
        };
        let outcome = train(&encoder, train_config, &inputs)?;
        Ok((encoder, outcome))
    }

    /// Mean Recall@k over `queries` under exact search, self-excluded.
    pub fn recall_at_k(&self, encoder: &Encoder<f32>, queries: &[u32], k: usize) -> Result<f64> {
        let corpus_enc: Vec<Vec<f32>> = (0..self.corpus.len())
            .map(|i| encoder.encode_eval(&self.token_ids[i]))
            .collect::<Result<_>>()?;
        let exact = ExactIndex::build(self.corpus.ids().to_vec(), corpus_enc.clone())?;
        let mut total = 0.0;
        for &q in queries {
            let hits = exact.search(&corpus_enc[q as usize], k + 1)?;
            let qid = self.corpus.id(q);
            let ranked = RankedList::new(qid, hits)?.without_id_truncated(qid, k);
            total += crate::eval::recall_at_k(&ranked, &self.qrels, k)?;
        }
        Ok(total / queries.len() as f64)
    }

    pub fn diagnostic(&self, encoder: &Encoder<f32>, seed: u64) -> Result<Vec<f64>> {
        diagnostic_values(encoder, &self.corpus, &self.token_ids, &self.qrels, seed)
    }

    /// Diagnostic over a restricted qrels (e.g. held-out clusters only).
    pub fn diagnostic_over(
        &self,
        encoder: &Encoder<f32>,
        qrels: &Qrels,
        seed: u64,
    ) -> Result<Vec<f64>> {
        diagnostic_values(encoder, &self.corpus, &self.token_ids, qrels, seed)
    }

    /// Judgments restricted to the given query ordinals.
    pub fn qrels_for_queries(&self, queries: &[u32]) -> Qrels {
        let wanted: std::collections::HashSet<&str> =
            queries.iter().map(|q| self.corpus.id(*q)).collect();
        let mut out = Qrels::new();
        for (q, rels) in self.qrels.iter() {
            if wanted.contains(q.as_str()) {
                for r in rels {
                    out.add(q, r);
                }
            }
        }
        out
    }
}

// ---- sweeps ----

pub struct SweepDataPaths<'a> {
    pub corpus: &'a Path,
    pub vocab: &'a Path,
    pub train_pairs: &'a Path,
    pub dev_pairs: &'a Path,
    pub test_pairs: &'a Path,
    pub qrels: &'a Path,
}

struct LoadedSweepData {
    corpus: Corpus,
    vocab: Vocab,
    qrels: Qrels,
    train_pairs: Vec<(u32, u32)>,
    dev_queries: Vec<u32>,
    test_queries: Vec<u32>,
    index: InvertedIndex,
}

fn load_sweep_data(paths: &SweepDataPaths<'_>) -> Result<LoadedSweepData> {
    let corpus = Corpus::load(paths.corpus)?;
    let vocab = Vocab::load(paths.vocab)?;
    let qrels = Qrels::load(paths.qrels)?;
    let train_pairs = pairs_to_ordinals(&Pairs::load(paths.train_pairs)?, &corpus)?;
    let dev_queries = unique_queries(&pairs_to_ordinals(&Pairs::load(paths.dev_pairs)?, &corpus)?);
    let test_queries = unique_queries(&pairs_to_ordinals(&Pairs::load(paths.test_pairs)?, &corpus)?);
    let index = InvertedIndex::build(&corpus);
    Ok(LoadedSweepData { corpus, vocab, qrels, train_pairs, dev_queries, test_queries, index })
}

fn sweep_train_and_eval(
    data: &LoadedSweepData,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    metrics: &[MetricSpec],
) -> Result<Vec<(MetricSpec, f64)>> {
    let mut config = encoder_config.clone();
    config.vocab_size = data.vocab.len();
    let token_ids = tokenized(&data.corpus, &data.vocab, config.max_len);
    let query_ids: Vec<String> = data
        .train_pairs
        .iter()
        .map(|(q, _)| data.corpus.id(*q).to_string())
        .collect();
    let pools = mine_pools(&data.index, &data.corpus, &data.qrels, &query_ids, train_config.pool_depth)?;
    let mut rng = SplitMix64::derive(train_config.seed, "init");
    let encoder = Encoder::init(config.clone(), &mut rng)?;
    let inputs = TrainInputs {
        corpus: &data.corpus,
        token_ids: &token_ids,
        train_pairs: &data.train_pairs,
        dev_queries: &data.dev_queries,
        qrels: &data.qrels,
        pools: &pools,
    };
    train(&encoder, train_config, &inputs)?;

    // Exact search over the corpus for the test queries.
    let corpus_enc: Vec<Vec<f32>> = (0..data.corpus.len())
        .map(|i| encoder.encode_eval(&token_ids[i]))
        .collect::<Result<_>>()?;
    let exact = ExactIndex::build(data.corpus.ids().to_vec(), corpus_enc.clone())?;
    let max_k = metrics.iter().map(|s| s.k).max().unwrap_or(100);
    let mut lists = Vec::new();
    for &q in &data.test_queries {
        let qid = data.corpus.id(q);
        let hits = exact.search(&corpus_enc[q as usize], max_k + 1)?;
        lists.push(RankedList::new(qid, hits)?.without_id_truncated(qid, max_k));
    }
    let report = evaluate(&lists, &data.qrels, metrics)?;
    Ok(metrics.iter().copied().zip(report.means).collect())
}

fn write_sweep_rows(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# setting\tmetric\tvalue")?;
    for (setting, metric, value) in rows {
        writeln!(w, "{setting}\t{metric}\t{value}")?;
    }
    w.flush()?;
    Ok(())
}

/// Layer-count sweep over N in {1, 2, 3, 4}: Recall@100 and MRR@100.
pub fn sweep_layers(
    paths: &SweepDataPaths<'_>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_sweep_data(paths)?;
    let metrics = [
        MetricSpec { kind: MetricKind::Recall, k: 100 },
        MetricSpec { kind: MetricKind::Mrr, k: 100 },
    ];
    let mut rows = Vec::new();
    for n in [1usize, 2, 3, 4] {
        let mut cfg = encoder_config.clone();
        cfg.num_layers = n;
        for (spec, value) in sweep_train_and_eval(&data, &cfg, train_config, &metrics)? {
            rows.push((n.to_string(), spec.to_string(), value));
        }
    }
    let out = out_dir.join("sweep_layers.tsv");
    write_sweep_rows(&out, &rows)?;
    write_sweep_manifest("sweep-layers", paths, out_dir, "sweep_layers")?;
    Ok(out)
}

/// Hard-negative pool-depth sweep over N in {0, 100, 200, 300, 500,
/// 1000}: Recall@100 and MAP@100. N = 0 trains on in-batch negatives
/// only.
pub fn sweep_negpool(
    paths: &SweepDataPaths<'_>,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let data = load_sweep_data(paths)?;
    let metrics = [
        MetricSpec { kind: MetricKind::Recall, k: 100 },
        MetricSpec { kind: MetricKind::Map, k: 100 },
    ];
    let mut rows = Vec::new();
    for n in [0usize, 100, 200, 300, 500, 1000] {
        let mut cfg = train_config.clone();
        cfg.pool_depth = n;
        if n == 0 {
            cfg.negatives_per_example = 0;
        }
        for (spec, value) in sweep_train_and_eval(&data, encoder_config, &cfg, &metrics)? {
            rows.push((n.to_string(), spec.to_string(), value));
        }
    }
    let out = out_dir.join("sweep_negpool.tsv");
    write_sweep_rows(&out, &rows)?;
    write_sweep_manifest("sweep-negpool", paths, out_dir, "sweep_negpool")?;
    Ok(out)
}

/// Cutoff sweep: Recall@k of an existing run file at k in
/// {10, 20, 50, 100}.
pub fn sweep_cutoff(run_path: &Path, qrels_path: &Path, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let lists = read_run_file(run_path)?;
    let qrels = Qrels::load(qrels_path)?;
    let mut rows = Vec::new();
    for k in [10usize, 20, 50, 100] {
        let spec = MetricSpec { kind: MetricKind::Recall, k };
        let report = evaluate(&lists, &qrels, &[spec])?;
        rows.push((k.to_string(), spec.to_string(), report.means[0]));
    }
    let out = out_dir.join("sweep_cutoff.tsv");
    write_sweep_rows(&out, &rows)?;
    let mut m = RunManifest::new("sweep-cutoff");
    m.add_input(run_path)?;
    m.add_input(qrels_path)?;
    m.write(&out_dir.join("sweep_cutoff.manifest.txt"))?;
    Ok(out)
}

fn write_sweep_manifest(
    command: &str,
    paths: &SweepDataPaths<'_>,
    out_dir: &Path,
    prefix: &str,
) -> Result<()> {
    let mut m = RunManifest::new(command);
    m.add_input(paths.corpus)?;
    m.add_input(paths.vocab)?;
    m.add_input(paths.train_pairs)?;
    m.add_input(paths.dev_pairs)?;
    m.add_input(paths.test_pairs)?;
    m.add_input(paths.qrels)?;
    m.write(&out_dir.join(format!("{prefix}.manifest.txt")))?;
    Ok(())
}
