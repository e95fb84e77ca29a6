//! Document embedding and ring retrieval for the scientific-library mode.
//!
//! Documents are embedded with log-tf / idf weights and a seeded random
//! projection, then L2-normalized. A user's seed documents are averaged into a
//! target direction and the corpus is ranked by the same diversity kernel used
//! for music, so neighbours at the optimal distance (often from another
//! discipline) surface before near-duplicates.
//!
//! The projection matrix is a contract, not an implementation detail:
//! a `ChaCha8Rng` seeded with `seed_from_u64(seed)` emits one `next_u64()` per
//! entry, row by row over the vocabulary in lexicographic order and `k`
//! columns per row; an even draw gives `+1/sqrt(k)`, an odd one `-1/sqrt(k)`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Feature, Item, ValidationReport};
use crate::distance::{cosine_distance, CriterionKind, CriterionSpec, DistanceConfig};
use crate::kernel::{KernelError, KernelParams, ScoringMode};

/// Feature key under which document catalogs store their vectors.
pub const EMBEDDING_KEY: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("corpus has no embeddable documents")]
    EmptyCorpus,
    #[error("vocabulary has {vocab} terms, fewer than the {k} requested dimensions")]
    VocabularyTooSmall { vocab: usize, k: usize },
    #[error("projection dimension must be positive")]
    ZeroDimension,
    #[error("vectors have mismatched dimensions ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector `{0}` has zero or non-finite norm")]
    ZeroVector(String),
    #[error("seed vectors average to zero; no target direction")]
    DegenerateTarget,
    #[error("no seed vectors given")]
    NoSeeds,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    /// Used for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discipline_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocVector {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    NoTokens,
    /// Every term also occurs in every other document (idf 0), or the
    /// projection cancelled out.
    ZeroVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub id: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// Keep the full tf-idf space (`k` = vocabulary size).
    Identity,
    Random {
        k: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vectors: Vec<DocVector>,
    pub skipped: Vec<Skipped>,
    /// Sorted vocabulary; row order of the projection matrix.
    pub vocabulary: Vec<String>,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.vector.len())
    }
}

/// Lowercase, split on non-alphanumerics, drop tokens shorter than two chars.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

fn read_lines<R: Read>(mut source: R) -> Result<Vec<(usize, String)>, EmbedError> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| EmbedError::Record {
            line: 0,
            message: e.to_string(),
        })?;
    let mut out = Vec::new();
    for (n, raw) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| EmbedError::Record {
            line: n + 1,
            message: "invalid UTF-8".into(),
        })?;
        if !line.trim().is_empty() {
            out.push((n + 1, line.trim().to_owned()));
        }
    }
    Ok(out)
}

pub fn load_corpus<R: Read>(source: R) -> Result<Vec<Document>, EmbedError> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, text) in read_lines(source)? {
        let doc: Document = serde_json::from_str(&text).map_err(|e| EmbedError::Record {
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(EmbedError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads externally produced vectors, normalizing each to unit length.
pub fn load_vectors<R: Read>(source: R) -> Result<Vec<DocVector>, EmbedError> {
    let mut seen = HashSet::new();
    let mut out: Vec<DocVector> = Vec::new();
    for (line, text) in read_lines(source)? {
        let mut dv: DocVector = serde_json::from_str(&text).map_err(|e| EmbedError::Record {
            line,
            message: e.to_string(),
        })?;
        if let Some(first) = out.first() {
            if first.vector.len() != dv.vector.len() {
                return Err(EmbedError::DimensionMismatch {
                    expected: first.vector.len(),
                    found: dv.vector.len(),
                });
            }
        }
        if !seen.insert(dv.id.clone()) {
            return Err(EmbedError::DuplicateId(dv.id));
        }
        if !normalize(&mut dv.vector) {
            return Err(EmbedError::ZeroVector(dv.id));
        }
        out.push(dv);
    }
    if out.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    Ok(out)
}

pub fn write_vectors<W: Write>(vectors: &[DocVector], mut out: W) -> std::io::Result<()> {
    for v in vectors {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Scales `v` to unit length; returns false if it has no direction.
fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

pub fn build_vectors(corpus: &[Document], k: usize, seed: u64) -> Result<Embedding, EmbedError> {
    build_vectors_with(corpus, Projection::Random { k, seed })
}

pub fn build_vectors_with(
    corpus: &[Document],
    projection: Projection,
) -> Result<Embedding, EmbedError> {
    let mut ids = HashSet::new();
    for doc in corpus {
        if !ids.insert(doc.id.as_str()) {
            return Err(EmbedError::DuplicateId(doc.id.clone()));
        }
    }

    let mut skipped = Vec::new();
    let mut term_counts: Vec<(&Document, BTreeMap<String, u32>)> = Vec::new();
    for doc in corpus {
        let tokens = tokenize(&doc.text);
        if tokens.is_empty() {
            skipped.push(Skipped {
                id: doc.id.clone(),
                reason: SkipReason::NoTokens,
            });
            continue;
        }
        let mut counts = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_insert(0u32) += 1;
        }
        term_counts.push((doc, counts));
    }
    if term_counts.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }

    let vocabulary: Vec<String> = term_counts
        .iter()
        .flat_map(|(_, c)| c.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let term_index: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();

    let k = match projection {
        Projection::Identity => vocabulary.len(),
        Projection::Random { k: 0, .. } => return Err(EmbedError::ZeroDimension),
        Projection::Random { k, .. } => k,
    };
    if vocabulary.len() < k {
        return Err(EmbedError::VocabularyTooSmall {
            vocab: vocabulary.len(),
            k,
        });
    }

    let n_docs = term_counts.len() as f64;
    let mut df = vec![0u32; vocabulary.len()];
    for (_, counts) in &term_counts {
        for t in counts.keys() {
            df[term_index[t.as_str()]] += 1;
        }
    }
    let idf: Vec<f64> = df.iter().map(|&d| (n_docs / d as f64).ln()).collect();

    let matrix = match projection {
        Projection::Identity => None,
        Projection::Random { k, seed } => Some(projection_matrix(vocabulary.len(), k, seed)),
    };

    let mut vectors = Vec::with_capacity(term_counts.len());
    for (doc, counts) in &term_counts {
        let mut v = vec![0.0; k];
        for (term, &count) in counts {
            let t = term_index[term.as_str()];
            let weight = (1.0 + (count as f64).ln()) * idf[t];
            match &matrix {
                None => v[t] = weight,
                Some(m) => {
                    for (vj, rj) in v.iter_mut().zip(&m[t * k..(t + 1) * k]) {
                        *vj += weight * rj;
                    }
                }
            }
        }
        if normalize(&mut v) {
            vectors.push(DocVector {
                id: doc.id.clone(),
                vector: v,
            });
        } else {
            skipped.push(Skipped {
                id: doc.id.clone(),
                reason: SkipReason::ZeroVector,
            });
        }
    }
    if vectors.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    Ok(Embedding {
        vectors,
        skipped,
        vocabulary,
    })
}

/// Row-major `rows x k` matrix of `+-1/sqrt(k)` entries.
fn projection_matrix(rows: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (k as f64).sqrt();
    (0..rows * k)
        .map(|_| {
            if rng.next_u64() & 1 == 0 {
                scale
            } else {
                -scale
            }
        })
        .collect()
}

/// Normalized centroid of the seed vectors.
pub fn seed_target(seeds: &[DocVector]) -> Result<Vec<f64>, EmbedError> {
    let first = seeds.first().ok_or(EmbedError::NoSeeds)?;
    let dim = first.vector.len();
    let mut mean = vec![0.0; dim];
    for s in seeds {
        if s.vector.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: s.vector.len(),
            });
        }
        for (m, x) in mean.iter_mut().zip(&s.vector) {
            *m += x;
        }
    }
    let n = seeds.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 1e-12 {
        return Err(EmbedError::DegenerateTarget);
    }
    mean.iter_mut().for_each(|m| *m /= norm);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RingHit {
    pub id: String,
    pub distance: f64,
    pub score: f64,
}

/// Ranks the corpus around `target`: by score descending, then distance
/// ascending, then id.
pub fn ring_retrieve(
    target: &[f64],
    corpus_vectors: &[DocVector],
    params: &KernelParams,
    k: usize,
    mode: ScoringMode,
    exclude: &BTreeSet<String>,
) -> Result<Vec<RingHit>, EmbedError> {
    if k == 0 {
        return Err(EmbedError::ZeroK);
    }
    let mut hits = Vec::with_capacity(corpus_vectors.len());
    for dv in corpus_vectors {
        if exclude.contains(&dv.id) {
            continue;
        }
        if dv.vector.len() != target.len() {
            return Err(EmbedError::DimensionMismatch {
                expected: target.len(),
                found: dv.vector.len(),
            });
        }
        let distance = cosine_distance(target, &dv.vector);
        let score = mode.score(distance, params.sigma())?;
        hits.push(RingHit {
            id: dv.id.clone(),
            distance,
            score,
        });
    }
    hits.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.distance.total_cmp(&b.distance))
            .then_with(|| a.id.cmp(&b.id))
    });
    hits.truncate(k);
    Ok(hits)
}

/// Wraps document vectors as catalog items compared by cosine distance on
/// [`EMBEDDING_KEY`], so the recommender can serve them. Titles come from the
/// corpus when available.
pub fn document_catalog(
    vectors: &[DocVector],
    corpus: Option<&[Document]>,
) -> Result<Catalog, ValidationReport> {
    let titles: HashMap<&str, &str> = corpus
        .unwrap_or_default()
        .iter()
        .map(|d| (d.id.as_str(), d.title.as_str()))
        .collect();
    let items = vectors
        .iter()
        .map(|v| Item {
            id: v.id.clone(),
            title: titles
                .get(v.id.as_str())
                .copied()
                .unwrap_or(&v.id)
                .to_owned(),
            artist: String::new(),
            genre_id: String::new(),
            features: BTreeMap::from([(
                EMBEDDING_KEY.to_owned(),
                Feature::Vector(v.vector.clone()),
            )]),
            popularity: 0,
        })
        .collect();
    let config = DistanceConfig::single(CriterionSpec::new(
        EMBEDDING_KEY,
        CriterionKind::VectorCosine,
        1.0,
        EMBEDDING_KEY,
    ));
    Catalog::new(items, config, None)
}
