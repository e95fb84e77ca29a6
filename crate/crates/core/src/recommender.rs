//! Scoring pipeline: profile distance, diversity kernel, equity boost and a
//! deterministic top-k.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Feature, Item};
use crate::distance::{cosine_distance, CriterionKind, DistanceError};
use crate::equity::{equity_adjust, EquityError, ExposureLedger};
use crate::kernel::{band_classify, Band, KernelError, KernelParams, ScoringMode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecommendError {
    #[error("seed profile is empty")]
    EmptyProfile,
    #[error("seed item `{0}` is not in the catalog")]
    UnknownSeed(String),
    #[error("item `{0}` is one of the seeds")]
    SeedCandidate(String),
    #[error("catalog has no vector-cosine criterion to embed a target against")]
    NoEmbedding,
    #[error("target has dimension {found}, catalog embeddings have {expected}")]
    TargetDimension { expected: usize, found: usize },
    #[error("target vector has no direction")]
    DegenerateTarget,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Equity(#[from] EquityError),
}

/// What the user told us they like: catalog items, or a direction in an
/// embedding space (document mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedProfile {
    Items(BTreeSet<String>),
    Target {
        vector: Vec<f64>,
        /// Ids never recommended back (the seed documents).
        exclude: BTreeSet<String>,
    },
}

impl SeedProfile {
    pub fn items<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SeedProfile::Items(ids.into_iter().map(Into::into).collect())
    }

    pub fn is_seed(&self, id: &str) -> bool {
        match self {
            SeedProfile::Items(ids) => ids.contains(id),
            SeedProfile::Target { exclude, .. } => exclude.contains(id),
        }
    }

    /// Checks the profile against `catalog`.
    pub fn validate(&self, catalog: &Catalog) -> Result<(), RecommendError> {
        match self {
            SeedProfile::Items(ids) => {
                if ids.is_empty() {
                    return Err(RecommendError::EmptyProfile);
                }
                if let Some(bad) = ids.iter().find(|id| !catalog.contains(id)) {
                    return Err(RecommendError::UnknownSeed(bad.clone()));
                }
                Ok(())
            }
            SeedProfile::Target { vector, .. } => {
                let key = embedding_key(catalog)?;
                let expected = catalog
                    .items()
                    .first()
                    .and_then(|it| match it.features.get(key) {
                        Some(Feature::Vector(v)) => Some(v.len()),
                        _ => None,
                    })
                    .unwrap_or(0);
                if vector.len() != expected {
                    return Err(RecommendError::TargetDimension {
                        expected,
                        found: vector.len(),
                    });
                }
                if !vector.iter().all(|x| x.is_finite()) || vector.iter().all(|x| *x == 0.0) {
                    return Err(RecommendError::DegenerateTarget);
                }
                Ok(())
            }
        }
    }
}

/// Feature key of the first vector-cosine criterion.
pub fn embedding_key(catalog: &Catalog) -> Result<&str, RecommendError> {
    catalog
        .criteria()
        .iter()
        .find(|c| c.kind == CriterionKind::VectorCosine)
        .map(|c| c.feature_key.as_str())
        .ok_or(RecommendError::NoEmbedding)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item_id: String,
    pub distance: f64,
    pub raw_score: f64,
    pub adjusted_score: f64,
    pub band: Band,
    /// Outside the listener's similarity core (`distance >= sigma`).
    pub bold: bool,
    pub rank: usize,
}

/// Mean combined distance to the seed items, or `(1 - cos)/2` to the target.
pub fn profile_distance(
    item: &Item,
    profile: &SeedProfile,
    catalog: &Catalog,
) -> Result<f64, RecommendError> {
    if profile.is_seed(&item.id) {
        return Err(RecommendError::SeedCandidate(item.id.clone()));
    }
    match profile {
        SeedProfile::Items(ids) => {
            if ids.is_empty() {
                return Err(RecommendError::EmptyProfile);
            }
            let mut sum = 0.0;
            for id in ids {
                let seed = catalog
                    .get(id)
                    .ok_or_else(|| RecommendError::UnknownSeed(id.clone()))?;
                sum += catalog.distance(item, seed)?;
            }
            Ok(sum / ids.len() as f64)
        }
        SeedProfile::Target { vector, .. } => {
            let key = embedding_key(catalog)?;
            match item.features.get(key) {
                Some(Feature::Vector(v)) if v.len() == vector.len() => {
                    Ok(cosine_distance(vector, v))
                }
                Some(Feature::Vector(v)) => Err(RecommendError::TargetDimension {
                    expected: v.len(),
                    found: vector.len(),
                }),
                _ => Err(DistanceError::MissingFeature {
                    item: item.id.clone(),
                    key: key.to_owned(),
                }
                .into()),
            }
        }
    }
}

/// Everything that shapes a ranking besides the catalog, profile and ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRequest {
    pub params: KernelParams,
    pub lambda: f64,
    pub k: usize,
    pub mode: ScoringMode,
}

struct Scored<'a> {
    id: &'a str,
    exposure: u64,
    distance: f64,
    raw: f64,
    adjusted: f64,
}

/// adjusted desc, exposure asc, distance asc, id asc
fn ranking_order(a: &Scored<'_>, b: &Scored<'_>) -> Ordering {
    b.adjusted
        .total_cmp(&a.adjusted)
        .then(a.exposure.cmp(&b.exposure))
        .then(a.distance.total_cmp(&b.distance))
        .then_with(|| a.id.cmp(b.id))
}

/// Ranks without touching the ledger.
pub fn rank(
    catalog: &Catalog,
    profile: &SeedProfile,
    request: &RankRequest,
    ledger: &ExposureLedger,
) -> Result<Vec<Recommendation>, RecommendError> {
    if request.k == 0 {
        return Err(RecommendError::ZeroK);
    }
    profile.validate(catalog)?;
    let sigma = request.params.sigma();

    let mut scored = Vec::with_capacity(catalog.len());
    for item in catalog.items() {
        if profile.is_seed(&item.id) {
            continue;
        }
        let distance = profile_distance(item, profile, catalog)?;
        let raw = request.mode.score(distance, sigma)?;
        let u = ledger.underexposure(&item.id)?;
        let adjusted = equity_adjust(raw, u, request.lambda)?;
        scored.push(Scored {
            id: &item.id,
            exposure: ledger.count(&item.id).unwrap_or(0),
            distance,
            raw,
            adjusted,
        });
    }

    let k = request.k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k, ranking_order);
        scored.truncate(k);
    }
    scored.sort_by(ranking_order);

    scored
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Recommendation {
                item_id: s.id.to_owned(),
                distance: s.distance,
                raw_score: s.raw,
                adjusted_score: s.adjusted,
                band: band_classify(s.distance, &request.params)?,
                bold: s.distance >= sigma,
                rank: i + 1,
            })
        })
        .collect()
}

/// Ranks and records one exposure for every returned item.
pub fn recommend(
    catalog: &Catalog,
    profile: &SeedProfile,
    params: KernelParams,
    lambda: f64,
    ledger: &mut ExposureLedger,
    k: usize,
    mode: ScoringMode,
) -> Result<Vec<Recommendation>, RecommendError> {
    let request = RankRequest {
        params,
        lambda,
        k,
        mode,
    };
    let recs = rank(catalog, profile, &request, ledger)?;
    let ids: Vec<&str> = recs.iter().map(|r| r.item_id.as_str()).collect();
    ledger.record_exposure(&ids)?;
    Ok(recs)
}
