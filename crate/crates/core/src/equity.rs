//! Exposure accounting, under-exposure boosting and fairness metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

pub const DEFAULT_LAMBDA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquityError {
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("under-exposure must lie in [0, 1], got {0}")]
    UnderexposureOutOfRange(f64),
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
}

/// How many times each item has been recommended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LedgerRepr", into = "LedgerRepr")]
pub struct ExposureLedger {
    counts: BTreeMap<String, u64>,
    total: u64,
    max_count: u64,
}

#[derive(Serialize, Deserialize)]
struct LedgerRepr {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl TryFrom<LedgerRepr> for ExposureLedger {
    type Error = String;

    fn try_from(repr: LedgerRepr) -> Result<Self, Self::Error> {
        let sum: u64 = repr.counts.values().sum();
        if sum != repr.total {
            return Err(format!(
                "ledger total {} does not match sum of counts {sum}",
                repr.total
            ));
        }
        let max_count = repr.counts.values().copied().max().unwrap_or(0);
        Ok(Self {
            counts: repr.counts,
            total: repr.total,
            max_count,
        })
    }
}

impl From<ExposureLedger> for LedgerRepr {
    fn from(l: ExposureLedger) -> Self {
        Self {
            counts: l.counts,
            total: l.total,
        }
    }
}

impl ExposureLedger {
    /// Zero counts for every id.
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            counts: ids.into_iter().map(|id| (id.into(), 0)).collect(),
            total: 0,
            max_count: 0,
        }
    }

    pub fn for_catalog(catalog: &Catalog) -> Self {
        Self::new(catalog.items().iter().map(|it| it.id.as_str()))
    }

    pub fn count(&self, id: &str) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Increments each listed id once per occurrence. Nothing is recorded if
    /// any id is unknown.
    pub fn record_exposure<S: AsRef<str>>(&mut self, ids: &[S]) -> Result<(), EquityError> {
        if let Some(bad) = ids.iter().find(|id| !self.counts.contains_key(id.as_ref())) {
            return Err(EquityError::UnknownItem(bad.as_ref().to_owned()));
        }
        for id in ids {
            let c = self.counts.get_mut(id.as_ref()).expect("checked above");
            *c += 1;
            self.max_count = self.max_count.max(*c);
        }
        self.total += ids.len() as u64;
        Ok(())
    }

    /// `1 - count/max_count`, or `1` for everyone when nothing was exposed yet.
    pub fn underexposure(&self, id: &str) -> Result<f64, EquityError> {
        let c = self
            .count(id)
            .ok_or_else(|| EquityError::UnknownItem(id.to_owned()))?;
        if self.max_count == 0 {
            return Ok(1.0);
        }
        Ok(1.0 - c as f64 / self.max_count as f64)
    }

    /// Gini coefficient of the counts (zero-count items included).
    pub fn gini(&self) -> f64 {
        gini_of(self.counts.values().copied())
    }

    /// Fraction of ledger items exposed at least once.
    pub fn coverage(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.values().filter(|c| **c > 0).count() as f64 / self.counts.len() as f64
    }
}

/// `G = sum_i (2i - n - 1) c_(i) / (n sum c)` over ascending counts.
pub fn gini_of(counts: impl IntoIterator<Item = u64>) -> f64 {
    let mut sorted: Vec<u64> = counts.into_iter().collect();
    let n = sorted.len();
    let total: u64 = sorted.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    sorted.sort_unstable();
    let n_f = n as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &c)| (2.0 * (i + 1) as f64 - n_f - 1.0) * c as f64)
        .sum();
    weighted / (n_f * total as f64)
}

pub fn gini(ledger: &ExposureLedger) -> f64 {
    ledger.gini()
}

/// Fraction of catalog items with a positive count in `ledger`.
pub fn coverage(ledger: &ExposureLedger, catalog: &Catalog) -> f64 {
    if catalog.is_empty() {
        return 0.0;
    }
    let exposed = catalog
        .items()
        .iter()
        .filter(|it| ledger.count(&it.id).unwrap_or(0) > 0)
        .count();
    exposed as f64 / catalog.len() as f64
}

/// Boosts positive scores by `1 + lambda * u`; nonpositive scores pass through.
pub fn equity_adjust(score: f64, underexposure: f64, lambda: f64) -> Result<f64, EquityError> {
    if !(0.0..=1.0).contains(&underexposure) {
        return Err(EquityError::UnderexposureOutOfRange(underexposure));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(EquityError::InvalidLambda(lambda));
    }
    Ok(if score > 0.0 {
        score * (1.0 + lambda * underexposure)
    } else {
        score
    })
}
