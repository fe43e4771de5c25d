//! Approximate nearest-neighbor search: an inverted-file index with
//! product-quantized residuals (IVFPQ), plus the exact brute-force
//! oracle every recall measurement is scored against.
//!
//! Cosine similarity is served as an inner product: vectors are
//! L2-normalized at add/search time, then zero-padded to the smallest
//! multiple of the subvector count (padding after normalization cannot
//! change any inner product). Scoring is asymmetric: the query stays
//! unquantized and each candidate scores as
//! `dot(q, centroid) + sum_m table[m][code_m]` where
//! `table[m][j] = dot(q_m, codebook[m][j])` - algebraically the
//! per-subspace inner product against `centroid + codebook row` with the
//! partition-constant part hoisted out of the loop.

pub mod kmeans;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::serial::{read_f32, read_str, read_u32, read_u8, write_f32, write_str, write_u32, write_u8};
use kmeans::{kmeans, nearest_centroid};

/// Rows per subspace codebook; one byte per code.
pub const PQ_CODEBOOK_SIZE: usize = 256;

#[derive(Debug, Clone)]
pub struct IvfPqConfig {
    pub n_partitions: usize,
    /// Subvector count M; each vector stores M one-byte codes.
    pub subvectors: usize,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Keep the exact normalized vectors alongside the codes and allow
    /// lossless scoring; the equivalence hook for oracle tests.
    pub store_raw: bool,
    /// Cap on vectors per k-means run; larger training sets are
    /// subsampled (seeded) and the final assignment still covers
    /// everything added.
    pub train_sample_cap: usize,
}

impl Default for IvfPqConfig {
    fn default() -> Self {
        IvfPqConfig {
            n_partitions: 2000,
            subvectors: 16,
            kmeans_iters: 25,
            kmeans_tol: 1e-4,
            seed: 0,
            store_raw: false,
            train_sample_cap: 16384,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub k: usize,
    pub nprobe: usize,
    /// Score against the stored raw vectors instead of the codes; only
    /// valid on an index built with `store_raw`.
    pub use_raw: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { k: 100, nprobe: 10, use_raw: false }
    }
}

/// Shrink a requested partition count that exceeds the corpus size down
/// to `ceil(sqrt(n))` (desk-scale default).
pub fn effective_partitions(requested: usize, n_vectors: usize) -> usize {
    if requested > n_vectors {
        (n_vectors as f64).sqrt().ceil().max(1.0) as usize
    } else {
        requested
    }
}

/// Normalize to unit L2; zero vectors stay zero. The exact and the
/// quantized paths share this so their scores agree bit-for-bit on the
/// lossless hook.
pub fn normalize_f32(v: &[f32]) -> Vec<f32> {
    let norm2: f64 = v.iter().map(|x| (*x as f64) * (*x as f64)).sum();
    if norm2 == 0.0 {
        return v.to_vec();
    }
    let inv = 1.0 / norm2.sqrt();
    v.iter().map(|x| ((*x as f64) * inv) as f32).collect()
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += (*x as f64) * (*y as f64);
    }
    acc
}

struct Entry {
    ordinal: u32,
    codes: Vec<u8>,
}

pub struct IvfPqIndex {
    dim: usize,
    padded_dim: usize,
    m: usize,
    sub_dim: usize,
    /// `n_partitions × padded_dim`.
    coarse: Vec<f32>,
    /// `m × 256 × sub_dim`.
    codebooks: Vec<f32>,
    partitions: Vec<Vec<Entry>>,
    /// Normalized padded vectors, partition-aligned (lossless hook).
    raw: Option<Vec<Vec<Vec<f32>>>>,
    ids: Vec<String>,
    id_lookup: HashMap<String, u32>,
}

impl IvfPqIndex {
    /// Learn coarse centroids and per-subspace residual codebooks from
    /// `vectors`; the returned index holds no entries yet.
    pub fn train(vectors: &[Vec<f32>], config: &IvfPqConfig) -> Result<IvfPqIndex> {
        if vectors.is_empty() {
            return Err(Error::contract("cannot train on zero vectors".to_string()));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::contract("zero-dimensional vectors".to_string()));
        }
        for v in vectors {
            if v.len() != dim {
                return Err(Error::shape(
                    "ivfpq_train",
                    format!("mixed dims {} vs {dim}", v.len()),
                ));
            }
        }
        if vectors.len() < config.n_partitions {
            return Err(Error::contract(format!(
                "{} training vectors cannot fill {} partitions; lower n_partitions (e.g. ceil(sqrt(n)) = {})",
                vectors.len(),
                config.n_partitions,
                effective_partitions(config.n_partitions, vectors.len()),
            )));
        }
        if config.subvectors == 0 {
            return Err(Error::contract("subvectors must be >= 1".to_string()));
        }
        let m = config.subvectors;
        let padded_dim = dim.div_ceil(m) * m;
        let sub_dim = padded_dim / m;

        let mut rng = SplitMix64::derive(config.seed, "ivfpq-train");
        // Normalize + pad the training set (subsampled above the cap).
        let cap = config.train_sample_cap.max(config.n_partitions).max(PQ_CODEBOOK_SIZE);
        let take: Vec<usize> = if vectors.len() > cap {
            rng.sample_indices(vectors.len(), cap)
        } else {
            (0..vectors.len()).collect()
        };
        let mut train_flat = vec![0.0f32; take.len() * padded_dim];
        for (row, &i) in take.iter().enumerate() {
            let n = normalize_f32(&vectors[i]);
            train_flat[row * padded_dim..row * padded_dim + dim].copy_from_slice(&n);
        }

        let coarse_out = kmeans(
            &train_flat,
            padded_dim,
            config.n_partitions,
            config.kmeans_iters,
            config.kmeans_tol,
            &mut rng,
        )?;
        let coarse = coarse_out.centroids;

        // Residuals of the training sample against their centroids.
        let mut residuals = vec![0.0f32; take.len() * padded_dim];
        for row in 0..take.len() {
            let v = &train_flat[row * padded_dim..(row + 1) * padded_dim];
            let c = coarse_out.assignments[row] as usize;
            let cen = &coarse[c * padded_dim..(c + 1) * padded_dim];
            for d in 0..padded_dim {
                residuals[row * padded_dim + d] = v[d] - cen[d];
            }
        }

        // One 256-row codebook per subspace. Small training sets fall
        // back to as many rows as there are vectors, repeated.
        let rows = PQ_CODEBOOK_SIZE.min(take.len());
        let mut codebooks = vec![0.0f32; m * PQ_CODEBOOK_SIZE * sub_dim];
        for s in 0..m {
            let mut sub = vec![0.0f32; take.len() * sub_dim];
            for row in 0..take.len() {
                sub[row * sub_dim..(row + 1) * sub_dim].copy_from_slice(
                    &residuals[row * padded_dim + s * sub_dim..row * padded_dim + (s + 1) * sub_dim],
                );
            }
            let out = kmeans(&sub, sub_dim, rows, config.kmeans_iters, config.kmeans_tol, &mut rng)?;
            for r in 0..PQ_CODEBOOK_SIZE {
                let src = (r % rows) * sub_dim;
                codebooks[(s * PQ_CODEBOOK_SIZE + r) * sub_dim..(s * PQ_CODEBOOK_SIZE + r + 1) * sub_dim]
                    .copy_from_slice(&out.centroids[src..src + sub_dim]);
            }
        }

        Ok(IvfPqIndex {
            dim,
            padded_dim,
            m,
            sub_dim,
            coarse,
            codebooks,
            partitions: (0..config.n_partitions).map(|_| Vec::new()).collect(),
            raw: if config.store_raw {
                Some((0..config.n_partitions).map(|_| Vec::new()).collect())
            } else {
                None
            },
            ids: Vec::new(),
            id_lookup: HashMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn subvectors(&self) -> usize {
        self.m
    }

    /// Codes of one stored entry (test access).
    pub fn codes_of(&self, id: &str) -> Option<&[u8]> {
        let ord = *self.id_lookup.get(id)?;
        for part in &self.partitions {
            for e in part {
                if e.ordinal == ord {
                    return Some(&e.codes);
                }
            }
        }
        None
    }

    fn normalize_pad(&self, vector: &[f32]) -> Result<Vec<f32>> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "ivfpq",
                format!("vector dim {} vs index dim {}", vector.len(), self.dim),
            ));
        }
        let mut out = normalize_f32(vector);
        out.resize(self.padded_dim, 0.0);
        Ok(out)
    }

    /// Encode and store one vector under `id`.
    pub fn add(&mut self, id: &str, vector: &[f32]) -> Result<()> {
        if self.id_lookup.contains_key(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let v = self.normalize_pad(vector)?;
        let part = nearest_centroid(&self.coarse, self.padded_dim, &v) as usize;
        let cen = &self.coarse[part * self.padded_dim..(part + 1) * self.padded_dim];
        let mut codes = Vec::with_capacity(self.m);
        for s in 0..self.m {
            let lo = s * self.sub_dim;
            let residual: Vec<f32> = (0..self.sub_dim).map(|d| v[lo + d] - cen[lo + d]).collect();
            let book = &self.codebooks
                [(s * PQ_CODEBOOK_SIZE) * self.sub_dim..((s + 1) * PQ_CODEBOOK_SIZE) * self.sub_dim];
            codes.push(nearest_centroid(book, self.sub_dim, &residual) as u8);
        }
        debug_assert_eq!(codes.len(), self.m);
        let ordinal = self.ids.len() as u32;
        self.ids.push(id.to_string());
        self.id_lookup.insert(id.to_string(), ordinal);
        self.partitions[part].push(Entry { ordinal, codes });
        if let Some(raw) = &mut self.raw {
            raw[part].push(v);
        }
        Ok(())
    }

    /// Top-k by approximate cosine over the `nprobe` nearest partitions,
    /// ties broken by ascending id. An empty index returns no hits.
    pub fn search(&self, query: &[f32], params: &SearchParams) -> Result<Vec<(String, f64)>> {
        if params.k == 0 {
            return Err(Error::contract("search k must be >= 1".to_string()));
        }
        if params.nprobe == 0 || params.nprobe > self.partitions.len() {
            return Err(Error::contract(format!(
                "nprobe must be in 1..={}, got {}",
                self.partitions.len(),
                params.nprobe
            )));
        }
        if params.use_raw && self.raw.is_none() {
            return Err(Error::contract(
                "use_raw requires an index built with store_raw".to_string(),
            ));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.normalize_pad(query)?;

        // Rank partitions by L2 distance to the (normalized) query: the
        // same metric that assigned the stored vectors.
        let mut parts: Vec<(usize, f64)> = (0..self.partitions.len())
            .map(|p| {
                let cen = &self.coarse[p * self.padded_dim..(p + 1) * self.padded_dim];
                let mut d2 = 0.0f64;
                for (x, y) in q.iter().zip(cen) {
                    let d = (*x - *y) as f64;
                    d2 += d * d;
                }
                (p, d2)
            })
            .collect();
        parts.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        parts.truncate(params.nprobe);

        // Per-subspace lookup tables of query x codebook inner products.
        let mut table = vec![0.0f64; self.m * PQ_CODEBOOK_SIZE];
        if !params.use_raw {
            for s in 0..self.m {
                let qs = &q[s * self.sub_dim..(s + 1) * self.sub_dim];
                for r in 0..PQ_CODEBOOK_SIZE {
                    let row = &self.codebooks
                        [(s * PQ_CODEBOOK_SIZE + r) * self.sub_dim..(s * PQ_CODEBOOK_SIZE + r + 1) * self.sub_dim];
                    table[s * PQ_CODEBOOK_SIZE + r] = dot_f64(qs, row);
                }
            }
        }

        let mut hits: Vec<(u32, f64)> = Vec::new();
        for (p, _) in parts {
            let cen = &self.coarse[p * self.padded_dim..(p + 1) * self.padded_dim];
            let base = dot_f64(&q, cen);
            for (ei, entry) in self.partitions[p].iter().enumerate() {
                let score = if params.use_raw {
                    let raw = &self.raw.as_ref().unwrap()[p][ei];
                    dot_f64(&q, raw)
                } else {
                    let mut s = base;
                    for (sub, &code) in entry.codes.iter().enumerate() {
                        s += table[sub * PQ_CODEBOOK_SIZE + code as usize];
                    }
                    s
                };
                hits.push((entry.ordinal, score));
            }
        }
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.ids[a.0 as usize].cmp(&self.ids[b.0 as usize]))
        });
        hits.truncate(params.k);
        Ok(hits
            .into_iter()
            .map(|(ord, s)| (self.ids[ord as usize].clone(), s))
            .collect())
    }

    // ---- binary file format ----
    //
    // magic b"DTAN", version u8, dim u32, padded u32, m u32,
    // n_partitions u32, has_raw u8, id count u32 + strings,
    // coarse block, codebook block, partitions (count, entries:
    // ordinal u32 + m code bytes [+ padded raw f32s when has_raw]).

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"DTAN")?;
        write_u8(&mut w, 1)?;
        write_u32(&mut w, self.dim as u32)?;
        write_u32(&mut w, self.padded_dim as u32)?;
        write_u32(&mut w, self.m as u32)?;
        write_u32(&mut w, self.partitions.len() as u32)?;
        write_u8(&mut w, u8::from(self.raw.is_some()))?;
        write_u32(&mut w, self.ids.len() as u32)?;
        for id in &self.ids {
            write_str(&mut w, id)?;
        }
        for v in &self.coarse {
            write_f32(&mut w, *v)?;
        }
        for v in &self.codebooks {
            write_f32(&mut w, *v)?;
        }
        for (p, part) in self.partitions.iter().enumerate() {
            write_u32(&mut w, part.len() as u32)?;
            for (ei, entry) in part.iter().enumerate() {
                write_u32(&mut w, entry.ordinal)?;
                w.write_all(&entry.codes)?;
                if let Some(raw) = &self.raw {
                    for v in &raw[p][ei] {
                        write_f32(&mut w, *v)?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<IvfPqIndex> {
        let fname = path.display().to_string();
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::Format {
            path: fname.clone(),
            msg: format!("cannot open: {e}"),
        })?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"DTAN" {
            return Err(Error::Format { path: fname, msg: "bad magic, not an IVFPQ index".to_string() });
        }
        let version = read_u8(&mut r)?;
        if version != 1 {
            return Err(Error::Format { path: fname, msg: format!("unsupported index version {version}") });
        }
        let dim = read_u32(&mut r)? as usize;
        let padded_dim = read_u32(&mut r)? as usize;
        let m = read_u32(&mut r)? as usize;
        let n_partitions = read_u32(&mut r)? as usize;
        let has_raw = read_u8(&mut r)? != 0;
        let id_count = read_u32(&mut r)? as usize;
        let mut ids = Vec::with_capacity(id_count);
        for _ in 0..id_count {
            ids.push(read_str(&mut r)?);
        }
        let mut coarse = vec![0.0f32; n_partitions * padded_dim];
        for v in coarse.iter_mut() {
            *v = read_f32(&mut r)?;
        }
        let mut codebooks = vec![0.0f32; m * PQ_CODEBOOK_SIZE * (padded_dim / m)];
        for v in codebooks.iter_mut() {
            *v = read_f32(&mut r)?;
        }
        let mut partitions = Vec::with_capacity(n_partitions);
        let mut raw = if has_raw { Some(Vec::with_capacity(n_partitions)) } else { None };
        for _ in 0..n_partitions {
            let count = read_u32(&mut r)? as usize;
            let mut part = Vec::with_capacity(count);
            let mut raw_part = Vec::new();
            for _ in 0..count {
                let ordinal = read_u32(&mut r)?;
                let mut codes = vec![0u8; m];
                r.read_exact(&mut codes)?;
                if has_raw {
                    let mut v = vec![0.0f32; padded_dim];
                    for x in v.iter_mut() {
                        *x = read_f32(&mut r)?;
                    }
                    raw_part.push(v);
                }
                part.push(Entry { ordinal, codes });
            }
            partitions.push(part);
            if let Some(rawv) = &mut raw {
                rawv.push(raw_part);
            }
        }
        let id_lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(IvfPqIndex {
            dim,
            padded_dim,
            m,
            sub_dim: padded_dim / m,
            coarse,
            codebooks,
            partitions,
            raw,
            ids,
            id_lookup,
        })
    }
}

/// Exact cosine search: the reference for every recall measurement.
pub struct ExactIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

impl ExactIndex {
    pub fn build(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<ExactIndex> {
        if ids.len() != vectors.len() {
            return Err(Error::contract(format!(
                "{} ids vs {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut normalized = Vec::with_capacity(vectors.len());
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::shape("exact_index", format!("mixed dims {} vs {dim}", v.len())));
            }
            normalized.push(normalize_f32(v));
        }
        Ok(ExactIndex { ids, vectors: normalized, dim })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exact cosine top-k, ties by ascending id. `k` beyond the corpus
    /// returns everything.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::contract("search k must be >= 1".to_string()));
        }
        if query.len() != self.dim && !self.is_empty() {
            return Err(Error::shape(
                "exact_search",
                format!("query dim {} vs index dim {}", query.len(), self.dim),
            ));
        }
        let q = normalize_f32(query);
        let mut hits: Vec<(usize, f64)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (i, dot_f64(&q, v)))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| self.ids[a.0].cmp(&self.ids[b.0])));
        hits.truncate(k);
        Ok(hits.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect())
    }
}

/// One-shot exact cosine top-k over raw vectors.
pub fn brute_force_search(
    ids: &[String],
    vectors: &[Vec<f32>],
    query: &[f32],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    ExactIndex::build(ids.to_vec(), vectors.to_vec())?.search(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f32> = (0..dim).map(|_| rng.next_gaussian() as f32).collect();
                normalize_f32(&v)
            })
            .collect()
    }

    fn small_config(n_partitions: usize, m: usize) -> IvfPqConfig {
        IvfPqConfig { n_partitions, subvectors: m, seed: 5, ..IvfPqConfig::default() }
    }

    #[test]
    fn partition_one_centroid_is_normalized_mean() {
        let vectors: Vec<Vec<f32>> = vec![
            vec![2.0, 0.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0],
        ];
        let idx = IvfPqIndex::train(&vectors, &small_config(1, 2)).unwrap();
        // k-means with k=1 converges to the mean of the normalized set.
        let inv_sqrt2 = (0.5f64).sqrt() as f32;
        let mean = [
            (1.0 + 0.0 + inv_sqrt2) / 3.0,
            (0.0 + 1.0 + inv_sqrt2) / 3.0,
            0.0,
            0.0,
        ];
        for (got, want) in idx.coarse.iter().zip(mean.iter()) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn identical_vectors_give_zero_residual_codebooks() {
        let vectors = vec![vec![0.6f32, 0.8, 0.0, 0.0]; 10];
        let idx = IvfPqIndex::train(&vectors, &small_config(2, 2)).unwrap();
        for s in 0..2 {
            let row0 = &idx.codebooks[(s * PQ_CODEBOOK_SIZE) * idx.sub_dim..(s * PQ_CODEBOOK_SIZE + 1) * idx.sub_dim];
            assert!(row0.iter().all(|v| v.abs() < 1e-7), "subspace {s} row 0 = {row0:?}");
        }
    }

    #[test]
    fn self_retrieval_and_code_length() {
        let vectors = random_unit(60, 8, 1);
        let mut idx = IvfPqIndex::train(&vectors, &small_config(4, 4)).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            idx.add(&format!("v{i:03}"), v).unwrap();
        }
        assert_eq!(idx.codes_of("v007").unwrap().len(), 4);
        let params = SearchParams { k: 5, nprobe: 4, use_raw: false };
        let hits = idx.search(&vectors[7], &params).unwrap();
        assert_eq!(hits[0].0, "v007");
    }

    #[test]
    fn duplicate_id_rejected_and_empty_search() {
        let vectors = random_unit(10, 4, 2);
        let mut idx = IvfPqIndex::train(&vectors, &small_config(2, 2)).unwrap();
        let hits = idx.search(&vectors[0], &SearchParams { k: 3, nprobe: 2, use_raw: false }).unwrap();
        assert!(hits.is_empty());
        idx.add("a", &vectors[0]).unwrap();
        assert!(matches!(idx.add("a", &vectors[1]), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn lossless_hook_matches_exact_search_verbatim() {
        let vectors = random_unit(80, 12, 3);
        let ids: Vec<String> = (0..80).map(|i| format!("v{i:03}")).collect();
        let cfg = IvfPqConfig { store_raw: true, ..small_config(8, 4) };
        let mut idx = IvfPqIndex::train(&vectors, &cfg).unwrap();
        for (id, v) in ids.iter().zip(&vectors) {
            idx.add(id, v).unwrap();
        }
        let exact = ExactIndex::build(ids.clone(), vectors.clone()).unwrap();
        let mut rng = SplitMix64::new(4);
        for _ in 0..10 {
            let q: Vec<f32> = (0..12).map(|_| rng.next_gaussian() as f32).collect();
            let a = idx
                .search(&q, &SearchParams { k: 20, nprobe: 8, use_raw: true })
                .unwrap();
            let b = exact.search(&q, 20).unwrap();
            assert_eq!(a, b, "lossless probe-all search must equal brute force");
        }
    }

    #[test]
    fn brute_force_contracts() {
        let vectors = random_unit(5, 4, 6);
        let ids: Vec<String> = (0..5).map(|i| format!("v{i}")).collect();
        // Query equal to a stored vector ranks first with score 1.
        let hits = brute_force_search(&ids, &vectors, &vectors[3], 3).unwrap();
        assert_eq!(hits[0].0, "v3");
        assert!((hits[0].1 - 1.0).abs() < 1e-6);
        // k beyond the corpus returns the whole corpus.
        assert_eq!(brute_force_search(&ids, &vectors, &vectors[0], 50).unwrap().len(), 5);
        // Positive rescaling cannot change the ranking (scores agree up
        // to f32 normalization rounding).
        let scaled: Vec<f32> = vectors[3].iter().map(|x| 7.5 * x).collect();
        let a = brute_force_search(&ids, &vectors, &scaled, 5).unwrap();
        let b = brute_force_search(&ids, &vectors, &vectors[3], 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-6);
        }
    }

    #[test]
    fn approximate_scores_stay_below_one_plus_eps() {
        let vectors = random_unit(100, 16, 7);
        let mut idx = IvfPqIndex::train(&vectors, &small_config(8, 4)).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            idx.add(&format!("v{i}"), v).unwrap();
        }
        for q in vectors.iter().take(20) {
            let hits = idx.search(q, &SearchParams { k: 10, nprobe: 8, use_raw: false }).unwrap();
            for (_, s) in hits {
                assert!(s <= 1.0 + 1e-4, "approximate cosine {s} above bound");
            }
        }
    }

    #[test]
    fn file_roundtrip_reproduces_search() {
        let vectors = random_unit(50, 8, 8);
        let cfg = IvfPqConfig { store_raw: true, ..small_config(4, 4) };
        let mut idx = IvfPqIndex::train(&vectors, &cfg).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            idx.add(&format!("v{i:02}"), v).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.idx");
        idx.save(&path).unwrap();
        let back = IvfPqIndex::load(&path).unwrap();
        let mut rng = SplitMix64::new(9);
        for _ in 0..5 {
            let q: Vec<f32> = (0..8).map(|_| rng.next_gaussian() as f32).collect();
            for use_raw in [false, true] {
                let params = SearchParams { k: 10, nprobe: 4, use_raw };
                assert_eq!(idx.search(&q, &params).unwrap(), back.search(&q, &params).unwrap());
            }
        }
    }

    #[test]
    fn effective_partitions_shrinks() {
        assert_eq!(effective_partitions(2000, 50000), 2000);
        assert_eq!(effective_partitions(2000, 1000), 32); // ceil(sqrt(1000))
        assert_eq!(effective_partitions(16, 100), 16);
    }

    #[test]
    fn search_results_come_from_probed_partitions() {
        let vectors = random_unit(60, 8, 10);
        let mut idx = IvfPqIndex::train(&vectors, &small_config(6, 4)).unwrap();
        for (i, v) in vectors.iter().enumerate() {
            idx.add(&format!("v{i:02}"), v).unwrap();
        }
        // With nprobe = 1, all hits must share the query's best partition.
        let q = &vectors[0];
        let hits = idx.search(q, &SearchParams { k: 60, nprobe: 1, use_raw: false }).unwrap();
        let qn = idx.normalize_pad(q).unwrap();
        let best = nearest_centroid(&idx.coarse, idx.padded_dim, &qn) as usize;
        let allowed: std::collections::HashSet<&str> = idx.partitions[best]
            .iter()
            .map(|e| idx.ids[e.ordinal as usize].as_str())
            .collect();
        assert!(!hits.is_empty());
        for (id, _) in &hits {
            assert!(allowed.contains(id.as_str()), "{id} not in probed partition");
        }
    }
}
