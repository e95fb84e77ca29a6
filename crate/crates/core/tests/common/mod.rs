//! Independent re-implementations used as test oracles, plus fixture helpers.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;

use optidiv_core::catalog::{Catalog, Feature, GenreGraph, Item};
use optidiv_core::distance::{CalibrationMap, CriterionKind, CriterionSpec, DistanceConfig};
use optidiv_core::equity::ExposureLedger;
use optidiv_core::kernel::ScoringMode;
use optidiv_core::recommender::SeedProfile;
use optidiv_core::textemb::Document;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn open_fixture(name: &str) -> std::fs::File {
    std::fs::File::open(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

// ---------------------------------------------------------------- kernel

pub fn oracle_score(d: f64, sigma: f64, mode: ScoringMode) -> f64 {
    match mode {
        ScoringMode::Similar => 1.0 - d,
        ScoringMode::Diverse => {
            let r2 = (d / sigma) * (d / sigma);
            -((1.0 - r2) * (-0.5 * r2).exp()) / (2.0 * (-1.5f64).exp())
        }
    }
}

// ---------------------------------------------------------------- distances

/// Adjacency list keyed by genre name.
pub struct OracleGraph {
    adj: BTreeMap<String, BTreeSet<String>>,
    diameter: usize,
}

impl OracleGraph {
    pub fn new(nodes: &[String], edges: &[(String, String)]) -> Self {
        let mut adj: BTreeMap<String, BTreeSet<String>> =
            nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        for (a, b) in edges {
            adj.entry(a.clone()).or_default().insert(b.clone());
            adj.entry(b.clone()).or_default().insert(a.clone());
        }
        let mut g = Self { adj, diameter: 0 };
        // components, largest first by size then by diameter
        let mut seen = BTreeSet::new();
        let mut best: Option<(usize, usize)> = None;
        let names: Vec<String> = g.adj.keys().cloned().collect();
        for n in &names {
            if seen.contains(n) {
                continue;
            }
            let comp: Vec<String> = g.bfs(n).into_keys().collect();
            let ecc = comp
                .iter()
                .map(|c| g.bfs(c).into_values().max().unwrap())
                .max()
                .unwrap();
            seen.extend(comp.iter().cloned());
            let cand = (comp.len(), ecc);
            if best.map_or(true, |b| cand > b) {
                best = Some(cand);
            }
        }
        g.diameter = best.map_or(0, |b| b.1);
        g
    }

    fn bfs(&self, start: &str) -> HashMap<String, usize> {
        let mut dist = HashMap::from([(start.to_owned(), 0usize)]);
        let mut queue = VecDeque::from([start.to_owned()]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[&cur];
            for next in &self.adj[&cur] {
                if !dist.contains_key(next) {
                    dist.insert(next.clone(), d + 1);
                    queue.push_back(next.clone());
                }
            }
        }
        dist
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn distance(&self, a: &str, b: &str) -> f64 {
        if a == b {
            return 0.0;
        }
        match self.bfs(a).get(b) {
            Some(&h) if self.diameter > 0 => (h as f64 / self.diameter as f64).min(1.0),
            _ => 1.0,
        }
    }
}

fn vector<'a>(item: &'a Item, key: &str) -> &'a [f64] {
    match &item.features[key] {
        Feature::Vector(v) => v,
        Feature::Tags(_) => panic!("expected vector"),
    }
}

pub fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).fold(0.0, |s, v| s + v);
    let na: f64 = a.iter().map(|x| x * x).fold(0.0, |s, v| s + v);
    let nb: f64 = b.iter().map(|x| x * x).fold(0.0, |s, v| s + v);
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    (1.0 - (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)) / 2.0
}

pub fn oracle_criterion(
    a: &Item,
    b: &Item,
    spec: &CriterionSpec,
    graph: Option<&OracleGraph>,
) -> f64 {
    let key = spec.feature_key.as_str();
    match spec.kind {
        CriterionKind::VectorCosine => oracle_cosine(vector(a, key), vector(b, key)),
        CriterionKind::VectorEuclidean => {
            let mut s = 0.0;
            for (x, y) in vector(a, key).iter().zip(vector(b, key)) {
                s += (x - y) * (x - y);
            }
            s.sqrt() / (1.0 + s.sqrt())
        }
        CriterionKind::GraphShortestPath => graph.unwrap().distance(&a.genre_id, &b.genre_id),
        CriterionKind::CategoricalOverlap => {
            let (Feature::Tags(x), Feature::Tags(y)) = (&a.features[key], &b.features[key]) else {
                panic!("expected tags");
            };
            let union: BTreeSet<_> = x.union(y).collect();
            if union.is_empty() {
                0.0
            } else {
                1.0 - x.intersection(y).count() as f64 / union.len() as f64
            }
        }
    }
}

pub fn oracle_calibrate(knots: &[(f64, f64)], raw: f64) -> f64 {
    let x = raw.clamp(0.0, 1.0);
    if x == 0.0 {
        return knots[0].1;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x > x0 && x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    unreachable!("knots cover [0,1]")
}

pub fn oracle_combined(
    a: &Item,
    b: &Item,
    config: &DistanceConfig,
    graph: Option<&OracleGraph>,
) -> f64 {
    let total: f64 = config.criteria.iter().map(|c| c.weight).sum();
    let mut acc = 0.0;
    for c in config.criteria.iter().filter(|c| c.weight != 0.0) {
        acc += c.weight * oracle_criterion(a, b, c, graph);
    }
    let raw = (acc / total).clamp(0.0, 1.0);
    match &config.calibration {
        Some(map) => oracle_calibrate(map.knots(), raw),
        None => raw,
    }
}

// ---------------------------------------------------------------- ranking

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRec {
    pub id: String,
    pub distance: f64,
    pub raw: f64,
    pub adjusted: f64,
    pub bold: bool,
}

/// Scores every candidate and sorts the whole list with the tie-break chain.
#[allow(clippy::too_many_arguments)]
pub fn oracle_rank(
    catalog: &Catalog,
    graph: Option<&OracleGraph>,
    profile: &SeedProfile,
    sigma: f64,
    lambda: f64,
    ledger: &ExposureLedger,
    k: usize,
    mode: ScoringMode,
) -> Vec<OracleRec> {
    let max = ledger.counts().values().copied().max().unwrap_or(0);
    let mut all = Vec::new();
    for item in catalog.items() {
        let d = match profile {
            SeedProfile::Items(seeds) => {
                if seeds.contains(&item.id) {
                    continue;
                }
                let mut sum = 0.0;
                for s in seeds {
                    sum += oracle_combined(item, catalog.get(s).unwrap(), catalog.config(), graph);
                }
                sum / seeds.len() as f64
            }
            SeedProfile::Target { vector: t, exclude } => {
                if exclude.contains(&item.id) {
                    continue;
                }
                let key = &catalog
                    .criteria()
                    .iter()
                    .find(|c| c.kind == CriterionKind::VectorCosine)
                    .unwrap()
                    .feature_key;
                oracle_cosine(t, vector(item, key))
            }
        };
        let raw = oracle_score(d, sigma, mode);
        let count = ledger.count(&item.id).unwrap();
        let u = if max == 0 {
            1.0
        } else {
            1.0 - count as f64 / max as f64
        };
        let adjusted = if raw > 0.0 {
            raw * (1.0 + lambda * u)
        } else {
            raw
        };
        all.push((
            count,
            OracleRec {
                id: item.id.clone(),
                distance: d,
                raw,
                adjusted,
                bold: d >= sigma,
            },
        ));
    }
    all.sort_by(|(ca, a), (cb, b)| {
        b.adjusted
            .partial_cmp(&a.adjusted)
            .unwrap()
            .then(ca.cmp(cb))
            .then(a.distance.partial_cmp(&b.distance).unwrap())
            .then(a.id.cmp(&b.id))
    });
    all.into_iter().take(k).map(|(_, r)| r).collect()
}

// ---------------------------------------------------------------- random catalogs

pub struct RandomCatalog {
    pub catalog: Catalog,
    pub graph: OracleGraph,
}

/// Items with coarse coordinates so that exact distance ties are common.
pub fn random_catalog(rng: &mut ChaCha8Rng, n_items: usize) -> RandomCatalog {
    let n_genres = rng.random_range(1..=8usize);
    let genres: Vec<String> = (0..n_genres).map(|g| format!("g{g}")).collect();
    let mut edges = Vec::new();
    for i in 0..n_genres {
        for j in i + 1..n_genres {
            if rng.random_bool(0.35) {
                edges.push((genres[i].clone(), genres[j].clone()));
            }
        }
    }
    let tags = ["calm", "dark", "bright", "fast", "vocal"];
    let items: Vec<Item> = (0..n_items)
        .map(|i| {
            let emb: Vec<f64> = (0..3)
                .map(|_| rng.random_range(-2..=2) as f64 / 2.0)
                .collect();
            let timbre: Vec<f64> = (0..2)
                .map(|_| rng.random_range(0..=4) as f64 / 4.0)
                .collect();
            let mood: BTreeSet<String> = tags
                .iter()
                .filter(|_| rng.random_bool(0.4))
                .map(|t| t.to_string())
                .collect();
            Item {
                id: format!("it{:03}", rng.random_range(0..1000) * 1000 + i),
                title: format!("Track {i}"),
                artist: format!("Artist {}", i % 7),
                genre_id: genres[rng.random_range(0..n_genres)].clone(),
                features: BTreeMap::from([
                    ("emb".to_string(), Feature::Vector(emb)),
                    ("timbre".to_string(), Feature::Vector(timbre)),
                    ("mood".to_string(), Feature::Tags(mood)),
                ]),
                popularity: rng.random_range(0..10_000),
            }
        })
        .collect();
    let w = |rng: &mut ChaCha8Rng| rng.random_range(0..=3) as f64;
    let mut criteria = vec![
        CriterionSpec::new("emb", CriterionKind::VectorCosine, w(rng) + 1.0, "emb"),
        CriterionSpec::new("timbre", CriterionKind::VectorEuclidean, w(rng), "timbre"),
        CriterionSpec::new("mood", CriterionKind::CategoricalOverlap, w(rng), "mood"),
        CriterionSpec::new(
            "genre",
            CriterionKind::GraphShortestPath,
            w(rng),
            "genre_id",
        ),
    ];
    let n_criteria = rng.random_range(1..=4);
    criteria.truncate(n_criteria);
    let calibration = rng.random_bool(0.5).then(|| {
        let x = rng.random_range(1..=9) as f64 / 10.0;
        let y = rng.random_range(0..=10) as f64 / 10.0;
        CalibrationMap::new(vec![(0.0, 0.0), (x, y), (1.0, 1.0)]).unwrap()
    });
    let config = DistanceConfig {
        criteria,
        calibration,
    };
    let genre_graph = GenreGraph::new(genres.clone(), edges.clone()).unwrap();
    let catalog = Catalog::new(items, config, Some(genre_graph)).unwrap();
    RandomCatalog {
        catalog,
        graph: OracleGraph::new(&genres, &edges),
    }
}

/// A ledger with some random history.
pub fn random_ledger(rng: &mut ChaCha8Rng, catalog: &Catalog) -> ExposureLedger {
    let mut ledger = ExposureLedger::for_catalog(catalog);
    if rng.random_bool(0.7) {
        let mut ids = Vec::new();
        for it in catalog.items() {
            if rng.random_bool(0.3) {
                for _ in 0..rng.random_range(1..=3) {
                    ids.push(it.id.as_str());
                }
            }
        }
        ledger.record_exposure(&ids).unwrap();
    }
    ledger
}

// ---------------------------------------------------------------- text embedding

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() {
            cur.push(ch);
        } else {
            if cur.chars().count() >= 2 {
                out.push(cur.to_lowercase());
            }
            cur.clear();
        }
    }
    out
}

/// tf-idf followed by the seeded sign projection, written from the formulas.
/// `k = None` keeps the full tf-idf space.
pub fn oracle_embed(
    corpus: &[Document],
    k: Option<usize>,
    seed: u64,
) -> BTreeMap<String, Vec<f64>> {
    let docs: Vec<(String, HashMap<String, f64>)> = corpus
        .iter()
        .map(|d| {
            let mut tf: HashMap<String, f64> = HashMap::new();
            for t in oracle_tokens(&d.text) {
                *tf.entry(t).or_default() += 1.0;
            }
            (d.id.clone(), tf)
        })
        .filter(|(_, tf)| !tf.is_empty())
        .collect();
    let n = docs.len() as f64;
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, tf) in &docs {
        for t in tf.keys() {
            *df.entry(t.as_str()).or_default() += 1.0;
        }
    }
    let vocab: Vec<&str> = df.keys().copied().collect();
    let dim = k.unwrap_or(vocab.len());
    let proj: Option<Vec<Vec<f64>>> = k.map(|k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (k as f64).sqrt();
        vocab
            .iter()
            .map(|_| {
                (0..k)
                    .map(|_| if rng.next_u64() % 2 == 0 { s } else { -s })
                    .collect()
            })
            .collect()
    });
    let mut out = BTreeMap::new();
    for (id, tf) in &docs {
        let mut v = vec![0.0; dim];
        for (row, term) in vocab.iter().enumerate() {
            let Some(&c) = tf.get(*term) else { continue };
            let w = (1.0 + c.ln()) * (n / df[term]).ln();
            match &proj {
                None => v[row] += w,
                Some(p) => {
                    for (j, x) in p[row].iter().enumerate() {
                        v[j] += w * x;
                    }
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.insert(id.clone(), v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            for t in i..=j {
                r[idx[t]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn pairwise_distances(vectors: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            out.push(oracle_cosine(vectors[i], vectors[j]));
        }
    }
    out
}
