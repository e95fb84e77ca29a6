//! Multi-criteria distances between catalog items.
//!
//! Every per-criterion distance is normalized into `[0, 1]` before being
//! combined, so the weighted mean (and the optional calibration curve applied
//! on top of it) stays in `[0, 1]` as well.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Feature, GenreGraph, Item};

/// Feature key that resolves to [`Item::genre_id`] instead of the feature map.
pub const GENRE_KEY: &str = "genre_id";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistanceError {
    #[error("item `{item}` has no feature `{key}`")]
    MissingFeature { item: String, key: String },
    #[error("feature `{key}` of item `{item}` is not a {expected}")]
    FeatureKind {
        item: String,
        key: String,
        expected: &'static str,
    },
    #[error("feature `{key}` has dimension {left} on one item and {right} on the other")]
    DimensionMismatch {
        key: String,
        left: usize,
        right: usize,
    },
    #[error("criterion `{0}` needs a genre graph but none is configured")]
    GraphRequired(String),
    #[error("graph criterion `{criterion}` must read `{GENRE_KEY}`, not `{key}`")]
    GraphKey { criterion: String, key: String },
    #[error("unknown genre `{0}`")]
    UnknownGenre(String),
    #[error("criterion `{id}` has invalid weight {weight}")]
    InvalidWeight { id: String, weight: f64 },
    #[error("no criterion has a positive weight")]
    NoPositiveWeight,
    #[error("invalid calibration map: {0}")]
    InvalidCalibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    VectorCosine,
    VectorEuclidean,
    GraphShortestPath,
    CategoricalOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSpec {
    pub id: String,
    pub kind: CriterionKind,
    pub weight: f64,
    pub feature_key: String,
}

impl CriterionSpec {
    pub fn new(
        id: impl Into<String>,
        kind: CriterionKind,
        weight: f64,
        feature_key: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            weight,
            feature_key: feature_key.into(),
        }
    }
}

/// Monotone piecewise-linear map from raw to perceived distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct CalibrationMap {
    knots: Vec<(f64, f64)>,
}

impl CalibrationMap {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self, DistanceError> {
        let bad = |msg: &str| Err(DistanceError::InvalidCalibration(msg.to_owned()));
        if knots.len() < 2 {
            return bad("at least the two endpoints are required");
        }
        if knots
            .iter()
            .any(|(r, p)| !(0.0..=1.0).contains(r) || !(0.0..=1.0).contains(p))
        {
            return bad("knots must lie in [0,1]x[0,1]");
        }
        if knots[0] != (0.0, 0.0) || knots[knots.len() - 1] != (1.0, 1.0) {
            return bad("endpoints (0,0) and (1,1) must be present");
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("raw distances must be strictly increasing");
            }
            if w[1].1 < w[0].1 {
                return bad("perceived distances must be nondecreasing");
            }
        }
        Ok(Self { knots })
    }

    pub fn identity() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Interpolates `raw` (clamped into `[0, 1]`) through the knots.
    pub fn apply(&self, raw: f64) -> f64 {
        let x = raw.clamp(0.0, 1.0);
        // first knot with raw >= x; knots[0].0 == 0 so idx >= 1 unless x == 0
        let idx = self.knots.partition_point(|(r, _)| *r < x);
        if idx == 0 {
            return self.knots[0].1;
        }
        let (x0, y0) = self.knots[idx - 1];
        let (x1, y1) = self.knots[idx];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

impl TryFrom<Vec<(f64, f64)>> for CalibrationMap {
    type Error = DistanceError;

    fn try_from(knots: Vec<(f64, f64)>) -> Result<Self, Self::Error> {
        Self::new(knots)
    }
}

impl From<CalibrationMap> for Vec<(f64, f64)> {
    fn from(map: CalibrationMap) -> Self {
        map.knots
    }
}

/// Criteria plus optional calibration: everything needed to compare two items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub criteria: Vec<CriterionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationMap>,
}

impl DistanceConfig {
    pub fn single(spec: CriterionSpec) -> Self {
        Self {
            criteria: vec![spec],
            calibration: None,
        }
    }

    /// Checks weights and graph-criterion keys. Feature resolution is checked
    /// per item when a catalog is loaded.
    pub fn validate(&self, graph: Option<&GenreGraph>) -> Result<(), DistanceError> {
        for spec in &self.criteria {
            if !spec.weight.is_finite() || spec.weight < 0.0 {
                return Err(DistanceError::InvalidWeight {
                    id: spec.id.clone(),
                    weight: spec.weight,
                });
            }
            if spec.kind == CriterionKind::GraphShortestPath {
                if spec.feature_key != GENRE_KEY {
                    return Err(DistanceError::GraphKey {
                        criterion: spec.id.clone(),
                        key: spec.feature_key.clone(),
                    });
                }
                if graph.is_none() {
                    return Err(DistanceError::GraphRequired(spec.id.clone()));
                }
            }
        }
        if !self.criteria.iter().any(|c| c.weight > 0.0) {
            return Err(DistanceError::NoPositiveWeight);
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

fn vector<'a>(item: &'a Item, key: &str) -> Result<&'a [f64], DistanceError> {
    match item.features.get(key) {
        Some(Feature::Vector(v)) => Ok(v),
        Some(Feature::Tags(_)) => Err(DistanceError::FeatureKind {
            item: item.id.clone(),
            key: key.to_owned(),
            expected: "numeric vector",
        }),
        None => Err(DistanceError::MissingFeature {
            item: item.id.clone(),
            key: key.to_owned(),
        }),
    }
}

fn vector_pair<'a>(
    a: &'a Item,
    b: &'a Item,
    key: &str,
) -> Result<(&'a [f64], &'a [f64]), DistanceError> {
    let (va, vb) = (vector(a, key)?, vector(b, key)?);
    if va.len() != vb.len() {
        return Err(DistanceError::DimensionMismatch {
            key: key.to_owned(),
            left: va.len(),
            right: vb.len(),
        });
    }
    Ok((va, vb))
}

/// `(1 - cos)/2`. A zero vector is treated as orthogonal to everything except
/// another zero vector.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    (1.0 - cos) / 2.0
}

/// `|a - b| / (1 + |a - b|)`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    let norm = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    norm / (1.0 + norm)
}

/// Jaccard distance; two empty sets are identical.
pub fn jaccard_distance<T: Ord>(
    a: &std::collections::BTreeSet<T>,
    b: &std::collections::BTreeSet<T>,
) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    1.0 - inter as f64 / union as f64
}

pub fn genre_graph_distance(g1: &str, g2: &str, graph: &GenreGraph) -> Result<f64, DistanceError> {
    let i = graph
        .index_of(g1)
        .ok_or_else(|| DistanceError::UnknownGenre(g1.to_owned()))?;
    let j = graph
        .index_of(g2)
        .ok_or_else(|| DistanceError::UnknownGenre(g2.to_owned()))?;
    if i == j {
        return Ok(0.0);
    }
    match graph.hops_between(i, j) {
        // a smaller component can be longer than the largest one's diameter
        Some(h) if graph.diameter() > 0 => Ok((h as f64 / graph.diameter() as f64).min(1.0)),
        _ => Ok(1.0),
    }
}

pub fn criterion_distance(
    a: &Item,
    b: &Item,
    spec: &CriterionSpec,
    graph: Option<&GenreGraph>,
) -> Result<f64, DistanceError> {
    let key = spec.feature_key.as_str();
    match spec.kind {
        CriterionKind::VectorCosine => {
            let (va, vb) = vector_pair(a, b, key)?;
            Ok(cosine_distance(va, vb))
        }
        CriterionKind::VectorEuclidean => {
            let (va, vb) = vector_pair(a, b, key)?;
            Ok(euclidean_distance(va, vb))
        }
        CriterionKind::GraphShortestPath => {
            let graph = graph.ok_or_else(|| DistanceError::GraphRequired(spec.id.clone()))?;
            if key != GENRE_KEY {
                return Err(DistanceError::GraphKey {
                    criterion: spec.id.clone(),
                    key: key.to_owned(),
                });
            }
            genre_graph_distance(&a.genre_id, &b.genre_id, graph)
        }
        CriterionKind::CategoricalOverlap => {
            fn tags<'a>(item: &'a Item, key: &str) -> Result<&'a BTreeSet<String>, DistanceError> {
                match item.features.get(key) {
                    Some(Feature::Tags(t)) => Ok(t),
                    Some(Feature::Vector(_)) => Err(DistanceError::FeatureKind {
                        item: item.id.clone(),
                        key: key.to_owned(),
                        expected: "tag set",
                    }),
                    None => Err(DistanceError::MissingFeature {
                        item: item.id.clone(),
                        key: key.to_owned(),
                    }),
                }
            }
            Ok(jaccard_distance(tags(a, key)?, tags(b, key)?))
        }
    }
}

/// Weighted mean of the criterion distances, optionally passed through the
/// calibration curve.
pub fn combined_distance(
    a: &Item,
    b: &Item,
    specs: &[CriterionSpec],
    graph: Option<&GenreGraph>,
    calibration: Option<&CalibrationMap>,
) -> Result<f64, DistanceError> {
    let total_weight: f64 = specs.iter().map(|s| s.weight).sum();
    if total_weight.is_nan() || total_weight <= 0.0 {
        return Err(DistanceError::NoPositiveWeight);
    }
    let mut acc = 0.0;
    for spec in specs {
        if spec.weight == 0.0 {
            continue;
        }
        acc += spec.weight * criterion_distance(a, b, spec, graph)?;
    }
    let raw = (acc / total_weight).clamp(0.0, 1.0);
    Ok(calibration.map_or(raw, |c| c.apply(raw)))
}
