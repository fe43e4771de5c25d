//! Synthetic paraphrase corpus.
//!
//! Template-generated questions with known paraphrase clusters: a
//! cluster instantiates several surface templates of one question family
//! with one entity tuple, so every member is a paraphrase of the others
//! and clusters from the same family with different entities are close
//! lexical distractors (exactly what BM25 mining surfaces as hard
//! negatives). Splits are by cluster, so dev/test queries are never seen
//! in training.

use std::path::Path;

use crate::error::Result;
use crate::rng::SplitMix64;

const PLACES: &[&str] = &[
    "norway", "kenya", "peru", "chile", "poland", "austria", "cuba", "ghana", "nepal", "laos",
    "fiji", "malta", "qatar", "togo", "benin", "gabon", "haiti", "jordan", "latvia", "monaco",
    "oman", "panama", "rwanda", "samoa", "serbia", "tonga", "uganda", "yemen",
];
const YEARS: &[&str] = &[
    "2012", "2013", "2014", "2015", "2016", "2017", "2018", "2019", "2020", "2021",
];
const TOPICS: &[&str] = &[
    "election", "marathon", "festival", "drought", "census", "budget", "carnival", "blackout",
    "heatwave", "strike",
];
const MONTHS: &[&str] = &[
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];
const SKILLS: &[&str] = &[
    "chess", "spanish", "guitar", "juggling", "calculus", "pottery", "surfing", "typing",
    "origami", "welding", "sketching", "baking", "coding", "skiing",
];
const ITEMS: &[&str] = &[
    "laptop", "bicycle", "camera", "sofa", "drone", "kayak", "piano", "watch", "fridge",
    "scooter", "tent", "kettle",
];
const ANIMALS: &[&str] = &[
    "otters", "falcons", "pandas", "camels", "geckos", "herons", "lemurs", "moths", "orcas",
    "ravens", "sloths", "wombats",
];
const FOODS: &[&str] = &[
    "mangoes", "lentils", "olives", "noodles", "salmon", "ginger", "barley", "cashews", "figs",
    "kale", "tofu", "yams",
];

/// A question family: paraphrase templates over an entity tuple. `{0}`,
/// `{1}`, `{2}` are slot markers.
struct Family {
    templates: &'static [&'static str],
    slots: &'static [&'static [&'static str]],
    /// Clusters drawn from this family.
    clusters: usize,
}

fn families() -> Vec<Family> {
    vec![
        Family {
            templates: &[
                "who will win the {0} {1} of {2}",
                "who is going to win the {2} {1} in {0}",
                "any guesses on who takes the {0} {1} {2}",
                "predictions for the {1} held in {0} during {2}",
                "who wins the {2} {0} {1}",
            ],
            slots: &[PLACES, TOPICS, YEARS],
            clusters: 120,
        },
        Family {
            templates: &[
                "what is the weather like in {0} in {1}",
                "how warm does {0} get during {1}",
                "typical {1} climate in {0}",
                "is {1} a good time to visit {0}",
                "what should i expect from {1} weather in {0}",
            ],
            slots: &[PLACES, MONTHS],
            clusters: 90,
        },
        Family {
            templates: &[
                "how much does a {0} cost in {1}",
                "what is the price of a {0} in {1}",
                "typical {0} prices over in {1}",
                "how expensive is a {0} when bought in {1}",
            ],
            slots: &[ITEMS, PLACES],
            clusters: 70,
        },
        Family {
            templates: &[
                "why do {0} grow so well in {1}",
                "what makes {1} good for growing {0}",
                "how come {0} thrive in {1}",
                "can you farm {0} in {1}",
            ],
            slots: &[FOODS, PLACES],
            clusters: 70,
        },
        Family {
            templates: &[
                "how do i learn {0} quickly",
                "what is the fastest way to learn {0}",
                "best method to pick up {0} fast",
                "how can someone master {0} in weeks",
                "tips for learning {0} rapidly",
            ],
            slots: &[SKILLS],
            clusters: 14,
        },
        Family {
            templates: &[
                "where do {0} live in the wild",
                "what habitat do {0} prefer",
                "which regions are home to wild {0}",
                "natural habitat of {0}",
            ],
            slots: &[ANIMALS],
            clusters: 12,
        },
        Family {
            templates: &[
                "how do you cook {0} at home",
                "easiest way to prepare {0}",
                "what is a simple recipe for {0}",
                "how should beginners cook {0}",
            ],
            slots: &[FOODS],
            clusters: 12,
        },
        Family {
            templates: &[
                "how do i fix a broken {0}",
                "what is the cheapest way to repair a {0}",
                "can a damaged {0} be repaired at home",
                "steps to mend a {0} yourself",
            ],
            slots: &[ITEMS],
            clusters: 12,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 13, train_fraction: 0.6, dev_fraction: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Vec<(String, String)>,
    pub train_pairs: Vec<(String, String)>,
    pub dev_pairs: Vec<(String, String)>,
    pub test_pairs: Vec<(String, String)>,
    pub qrels: Vec<(String, String)>,
}

fn instantiate(template: &str, entities: &[&str]) -> String {
    let mut s = template.to_string();
    for (i, e) in entities.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), e);
    }
    s
}

/// Distinct entity tuples for a family's clusters. Multi-slot families
/// are drawn as sibling groups of three tuples that differ in exactly
/// one slot, so clusters get close lexical distractors (the BM25 pool
/// then ranks near-duplicates at the top). Single-slot families are
/// siblings of each other by construction.
fn sample_tuples<'a>(family: &Family, rng: &mut SplitMix64) -> Vec<Vec<&'a str>>
where
    'static: 'a,
{
    let slots = family.slots;
    let mut seen: std::collections::HashSet<Vec<&str>> = std::collections::HashSet::new();
    let mut out: Vec<Vec<&str>> = Vec::new();
    if slots.len() == 1 {
        let take = family.clusters.min(slots[0].len());
        for i in rng.sample_indices(slots[0].len(), take) {
            out.push(vec![slots[0][i]]);
        }
        return out;
    }
    let mut vary_slot = 0usize;
    let mut guard = 0usize;
    while out.len() < family.clusters && guard < family.clusters * 20 {
        guard += 1;
        let base: Vec<&str> = slots.iter().map(|s| s[rng.below(s.len())]).collect();
        let vary = vary_slot % slots.len();
        vary_slot += 1;
        let alternatives = rng.sample_indices(slots[vary].len(), 3);
        for alt in alternatives {
            if out.len() >= family.clusters {
                break;
            }
            let mut tuple = base.clone();
            tuple[vary] = slots[vary][alt];
            if seen.insert(tuple.clone()) {
                out.push(tuple);
            }
        }
    }
    out
}

/// Generate the corpus, pairs, and judgments. Deterministic in the seed.
pub fn generate(config: &SynthConfig) -> SynthData {
    let mut rng = SplitMix64::derive(config.seed, "synth");
    let mut clusters: Vec<Vec<String>> = Vec::new();

    for family in families() {
        let tuples = sample_tuples(&family, &mut rng);
        for entities in tuples {
            // 4 to 6 paraphrases, capped by the template count.
            let want = 4 + rng.below(3);
            let size = want.min(family.templates.len()).max(2);
            let mut order: Vec<usize> = (0..family.templates.len()).collect();
            rng.shuffle(&mut order);
            let members: Vec<String> = order[..size]
                .iter()
                .map(|&t| instantiate(family.templates[t], &entities))
                .collect();
            clusters.push(members);
        }
    }

    // Split by cluster, then assign ids in a fixed order.
    let mut cluster_order: Vec<usize> = (0..clusters.len()).collect();
    rng.shuffle(&mut cluster_order);
    let n_train = (clusters.len() as f64 * config.train_fraction).round() as usize;
    let n_dev = (clusters.len() as f64 * config.dev_fraction).round() as usize;

    let mut corpus = Vec::new();
    let mut qrels = Vec::new();
    let mut split_pairs: [Vec<(String, String)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut next_id = 0usize;

    for (rank, &ci) in cluster_order.iter().enumerate() {
        let split = if rank < n_train {
            0
        } else if rank < n_train + n_dev {
            1
        } else {
            2
        };
        let members = &clusters[ci];
        let ids: Vec<String> = members
            .iter()
            .map(|text| {
                let id = format!("q{next_id:06}");
                next_id += 1;
                corpus.push((id.clone(), text.clone()));
                id
            })
            .collect();
        for (i, qi) in ids.iter().enumerate() {
            for (j, qj) in ids.iter().enumerate() {
                if i != j {
                    qrels.push((qi.clone(), qj.clone()));
                }
            }
            // One (query, positive) pair per member: the next member
            // round-robin.
            let pos = &ids[(i + 1) % ids.len()];
            split_pairs[split].push((qi.clone(), pos.clone()));
        }
    }

    let [train_pairs, dev_pairs, test_pairs] = split_pairs;
    SynthData { corpus, train_pairs, dev_pairs, test_pairs, qrels }
}

impl SynthData {
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::data::write_two_column_tsv(&dir.join("corpus.tsv"), &self.corpus)?;
        crate::data::write_two_column_tsv(&dir.join("train_pairs.tsv"), &self.train_pairs)?;
        crate::data::write_two_column_tsv(&dir.join("dev_pairs.tsv"), &self.dev_pairs)?;
        crate::data::write_two_column_tsv(&dir.join("test_pairs.tsv"), &self.test_pairs)?;
        crate::data::write_two_column_tsv(&dir.join("qrels.tsv"), &self.qrels)?;
        Ok(())
    }

    /// Every distinct token of the corpus, in first-appearance order.
    pub fn distinct_tokens(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (_, text) in &self.corpus {
            for tok in crate::lexical::tokenize(text) {
                if seen.insert(tok.clone()) {
                    out.push(tok);
                }
            }
        }
        out
    }
}

/// Stand-in for pretrained word vectors: each word gets a seeded random
/// unit direction scaled by `scale`. The spread geometry (distinct words
/// point in near-orthogonal directions, well above the reserved-token
/// embedding scale) is what pretrained vectors contribute to low-layer
/// representations; no semantic similarity is encoded. Each vector
/// depends only on `(seed, word)`.
pub fn synthetic_word_vectors(
    words: &[String],
    dim: usize,
    scale: f64,
    seed: u64,
) -> Vec<(String, Vec<f64>)> {
    words
        .iter()
        .map(|w| {
            let mut rng = SplitMix64::derive(seed, &format!("wordvec:{w}"));
            let raw: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (w.clone(), raw.into_iter().map(|x| x / norm * scale).collect())
        })
        .collect()
}

/// Write vectors in the standard text format (`V d` header, then one
/// `token v1 .. vd` line per word).
pub fn write_word_vectors(path: &Path, vectors: &[(String, Vec<f64>)]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let dim = vectors.first().map_or(0, |(_, v)| v.len());
    writeln!(w, "{} {}", vectors.len(), dim)?;
    for (word, vec) in vectors {
        write!(w, "{word}")?;
        for v in vec {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn size_and_determinism() {
        let a = generate(&SynthConfig::default());
        let b = generate(&SynthConfig::default());
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.train_pairs, b.train_pairs);
        assert!((1500..2600).contains(&a.corpus.len()), "got {}", a.corpus.len());
        let ids: HashSet<&String> = a.corpus.iter().map(|(id, _)| id).collect();
        assert_eq!(ids.len(), a.corpus.len(), "unique ids");
    }

    #[test]
    fn qrels_are_within_clusters_and_symmetric() {
        let data = generate(&SynthConfig::default());
        let rel: HashSet<(String, String)> = data.qrels.iter().cloned().collect();
        for (q, r) in &data.qrels {
            assert_ne!(q, r);
            assert!(rel.contains(&(r.clone(), q.clone())), "symmetry for {q} {r}");
        }
        // Every pair's positive is judged relevant.
        for pairs in [&data.train_pairs, &data.dev_pairs, &data.test_pairs] {
            for (q, p) in pairs.iter() {
                assert!(rel.contains(&(q.clone(), p.clone())));
            }
        }
    }

    #[test]
    fn splits_do_not_share_queries() {
        let data = generate(&SynthConfig::default());
        let train: HashSet<&String> = data.train_pairs.iter().map(|(q, _)| q).collect();
        let dev: HashSet<&String> = data.dev_pairs.iter().map(|(q, _)| q).collect();
        let test: HashSet<&String> = data.test_pairs.iter().map(|(q, _)| q).collect();
        assert!(train.is_disjoint(&dev));
        assert!(train.is_disjoint(&test));
        assert!(dev.is_disjoint(&test));
        assert!(!train.is_empty() && !dev.is_empty() && !test.is_empty());
    }

    #[test]
    fn texts_are_short_and_repeat_across_clusters() {
        let data = generate(&SynthConfig::default());
        let mut by_text: HashMap<&str, usize> = HashMap::new();
        for (_, text) in &data.corpus {
            let words = text.split_whitespace().count();
            assert!((3..=12).contains(&words), "question length {words}: {text}");
            *by_text.entry(text.as_str()).or_insert(0) += 1;
        }
    }
}
