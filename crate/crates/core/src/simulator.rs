//! Synthetic listener population for comparing recommendation policies.
//!
//! Items and user tastes are random unit vectors in a latent space. Every
//! round each user gets a top-k list, accepts an item at distance `d` with
//! probability `exp(-(d - d_u)^2 / (2 tau^2))` around a personal ideal
//! novelty `d_u`, and that verdict feeds the user's sigma adaptation. The
//! shared exposure ledger accumulates over all users and rounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Feature, Item};
use crate::distance::{CriterionKind, CriterionSpec, DistanceConfig};
use crate::equity::{ExposureLedger, DEFAULT_LAMBDA};
use crate::kernel::{KernelParams, ScoringMode, SigmaBounds, DEFAULT_THETA, SQRT_3};
use crate::recommender::{rank, RankRequest, RecommendError, SeedProfile};
use crate::session::{SessionDefaults, SessionError, UserSession, Verdict};

const LATENT_KEY: &str = "latent";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid population: {0}")]
    Config(String),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("synthetic catalog rejected: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Similar,
    Diverse,
    #[serde(rename = "diverse+equity")]
    DiverseEquity,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Similar, Policy::Diverse, Policy::DiverseEquity];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::Similar => "similar",
            Policy::Diverse => "diverse",
            Policy::DiverseEquity => "diverse+equity",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "similar" => Ok(Policy::Similar),
            "diverse" => Ok(Policy::Diverse),
            "diverse+equity" | "diverse-equity" => Ok(Policy::DiverseEquity),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Ideal novelty distances are drawn uniformly from this range.
    pub novelty_range: (f64, f64),
    /// Width of the acceptance curve.
    pub tau: f64,
    pub seed: u64,
    pub k: usize,
    /// Boost strength for the equity policy.
    pub lambda: f64,
    pub sigma: f64,
    pub eta: f64,
    pub theta: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_items: 500,
            latent_dim: 8,
            novelty_range: (0.1, 0.4),
            tau: 0.05,
            seed: 42,
            k: 5,
            lambda: DEFAULT_LAMBDA,
            sigma: crate::kernel::DEFAULT_SIGMA,
            eta: crate::session::DEFAULT_ETA,
            theta: DEFAULT_THETA,
        }
    }
}

impl PopulationSpec {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_owned()));
        if self.n_users == 0 || self.n_items == 0 || self.latent_dim == 0 || self.k == 0 {
            return bad("users, items, latent dimension and k must be positive");
        }
        let (lo, hi) = self.novelty_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("novelty range must satisfy 0 <= lo <= hi <= 1");
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be nonnegative");
        }
        KernelParams::new(self.sigma, self.theta).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Acceptance probability of an item at `distance` for a user whose ideal
/// novelty is `ideal`.
pub fn acceptance_probability(distance: f64, ideal: f64, tau: f64) -> f64 {
    let z = distance - ideal;
    (-(z * z) / (2.0 * tau * tau)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub gini: f64,
    pub coverage: f64,
    pub acceptance_rate: f64,
    /// Mean distance of the items accepted this round; null if none were.
    pub mean_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub policy: Policy,
    pub rounds: Vec<RoundMetrics>,
    /// Fraction of recommendations whose bold label matched the user's own
    /// similarity core (`d >= d_u / sqrt(3)`).
    pub trust: f64,
    /// Acceptance rate over the whole run.
    pub usefulness: f64,
    pub final_sigmas: Vec<f64>,
}

impl MetricsSeries {
    pub fn last(&self) -> &RoundMetrics {
        self.rounds.last().expect("at least one round")
    }

    /// One JSON record per round.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Population {
    catalog: Catalog,
    tastes: Vec<Vec<f64>>,
    ideals: Vec<f64>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
    }
}

fn generate(pop: &PopulationSpec, rng: &mut ChaCha8Rng) -> Result<Population, SimError> {
    let width = (pop.n_items.max(1) - 1).to_string().len();
    let items: Vec<Item> = (0..pop.n_items)
        .map(|i| Item {
            id: format!("item-{i:0width$}"),
            title: format!("Synthetic track {i}"),
            artist: format!("artist-{}", i % 97),
            genre_id: String::new(),
            features: BTreeMap::from([(
                LATENT_KEY.to_string(),
                Feature::Vector(unit_vector(rng, pop.latent_dim)),
            )]),
            popularity: 0,
        })
        .collect();
    let config = DistanceConfig::single(CriterionSpec::new(
        LATENT_KEY,
        CriterionKind::VectorCosine,
        1.0,
        LATENT_KEY,
    ));
    let catalog =
        Catalog::new(items, config, None).map_err(|r| SimError::Catalog(r.to_string()))?;
    let (lo, hi) = pop.novelty_range;
    let mut tastes = Vec::with_capacity(pop.n_users);
    let mut ideals = Vec::with_capacity(pop.n_users);
    for _ in 0..pop.n_users {
        tastes.push(unit_vector(rng, pop.latent_dim));
        ideals.push(lo + (hi - lo) * rng.random::<f64>());
    }
    Ok(Population {
        catalog,
        tastes,
        ideals,
    })
}

pub fn run_simulation(
    pop: &PopulationSpec,
    policy: Policy,
    rounds: usize,
) -> Result<MetricsSeries, SimError> {
    pop.validate()?;
    if rounds == 0 {
        return Err(SimError::Config("rounds must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pop.seed);
    let population = generate(pop, &mut rng)?;
    let catalog = &population.catalog;

    let (mode, lambda) = match policy {
        Policy::Similar => (ScoringMode::Similar, 0.0),
        Policy::Diverse => (ScoringMode::Diverse, 0.0),
        Policy::DiverseEquity => (ScoringMode::Diverse, pop.lambda),
    };
    let defaults = SessionDefaults {
        sigma: pop.sigma,
        eta: pop.eta,
        bounds: SigmaBounds::default(),
    };
    let mut sessions = Vec::with_capacity(pop.n_users);
    for (u, taste) in population.tastes.iter().enumerate() {
        let profile = SeedProfile::Target {
            vector: taste.clone(),
            exclude: BTreeSet::new(),
        };
        let (session, _) = UserSession::new(format!("user-{u}"), profile, &defaults, None, 0)?;
        sessions.push(session);
    }

    let mut ledger = ExposureLedger::for_catalog(catalog);
    let mut series = Vec::with_capacity(rounds);
    let (mut shown_total, mut accepted_total, mut correct_labels) = (0usize, 0usize, 0usize);
    for round in 1..=rounds {
        let (mut shown, mut accepted, mut accepted_distance) = (0usize, 0usize, 0.0);
        let now = round as u64;
        for (u, session) in sessions.iter_mut().enumerate() {
            let request = RankRequest {
                params: KernelParams::new(session.sigma(), pop.theta)
                    .map_err(RecommendError::from)?,
                lambda,
                k: pop.k,
                mode,
            };
            let recs = rank(catalog, &session.profile, &request, &ledger)?;
            let ids: Vec<&str> = recs.iter().map(|r| r.item_id.as_str()).collect();
            ledger.record_exposure(&ids).map_err(RecommendError::from)?;
            session.note_recommendations(&recs, now);

            let ideal = population.ideals[u];
            let own_core = ideal / SQRT_3;
            for rec in &recs {
                shown += 1;
                if rec.bold == (rec.distance >= own_core) {
                    correct_labels += 1;
                }
                let p = acceptance_probability(rec.distance, ideal, pop.tau);
                let verdict = if rng.random::<f64>() < p {
                    accepted += 1;
                    accepted_distance += rec.distance;
                    Verdict::Accept
                } else {
                    Verdict::Reject
                };
                session.apply_feedback(&rec.item_id, verdict, now)?;
            }
        }
        shown_total += shown;
        accepted_total += accepted;
        series.push(RoundMetrics {
            round,
            gini: ledger.gini(),
            coverage: ledger.coverage(),
            acceptance_rate: ratio(accepted, shown),
            mean_distance: (accepted > 0).then(|| accepted_distance / accepted as f64),
        });
    }

    Ok(MetricsSeries {
        policy,
        rounds: series,
        trust: ratio(correct_labels, shown_total),
        usefulness: ratio(accepted_total, shown_total),
        final_sigmas: sessions.iter().map(UserSession::sigma).collect(),
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Final-round metrics per policy under the report column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    /// Catalog coverage.
    #[serde(rename = "Diversity")]
    pub diversity: f64,
    /// Gini coefficient of exposure (lower is fairer).
    #[serde(rename = "Equity")]
    pub equity: f64,
    /// Fraction of correctly labeled bold recommendations.
    #[serde(rename = "Trust")]
    pub trust: f64,
    /// Acceptance rate.
    #[serde(rename = "Usefulness")]
    pub usefulness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyReport {
    pub population: PopulationSpec,
    pub rounds: usize,
    pub policies: BTreeMap<Policy, PolicyScores>,
}

impl PolicyReport {
    pub const COLUMNS: [&'static str; 4] = ["Diversity", "Equity", "Trust", "Usefulness"];

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<16}", "policy");
        for c in Self::COLUMNS {
            out.push_str(&format!("{c:>12}"));
        }
        out.push('\n');
        for (policy, s) in &self.policies {
            out.push_str(&format!(
                "{:<16}{:>12.4}{:>12.4}{:>12.4}{:>12.4}\n",
                policy.as_str(),
                s.diversity,
                s.equity,
                s.trust,
                s.usefulness
            ));
        }
        out
    }
}

/// Runs every policy on the same seed.
pub fn evaluate_policies(pop: &PopulationSpec, rounds: usize) -> Result<PolicyReport, SimError> {
    let mut policies = BTreeMap::new();
    for policy in Policy::ALL {
        let series = run_simulation(pop, policy, rounds)?;
        let last = series.last();
        policies.insert(
            policy,
            PolicyScores {
                diversity: last.coverage,
                equity: last.gini,
                trust: series.trust,
                usefulness: series.usefulness,
            },
        );
    }
    Ok(PolicyReport {
        population: *pop,
        rounds,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PopulationSpec {
        PopulationSpec {
            n_users: 6,
            n_items: 40,
            seed: 3,
            ..PopulationSpec::default()
        }
    }

    #[test]
    fn zero_rounds_rejected() {
        assert!(matches!(
            run_simulation(&small(), Policy::Similar, 0),
            Err(SimError::Config(_))
        ));
        let bad = PopulationSpec {
            n_items: 0,
            ..small()
        };
        assert!(run_simulation(&bad, Policy::Similar, 1).is_err());
    }

    #[test]
    fn acceptance_curve() {
        assert_eq!(acceptance_probability(0.25, 0.25, 0.05), 1.0);
        for d in [0.0, 0.1, 0.3, 0.9] {
            let p = acceptance_probability(d, 0.25, 0.05);
            assert!(p > 0.0 && p <= 1.0);
            assert!(p < 1.0);
        }
        assert!(acceptance_probability(0.3, 0.25, 0.05) > acceptance_probability(0.35, 0.25, 0.05));
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_simulation(&small(), Policy::DiverseEquity, 10).unwrap();
        let b = run_simulation(&small(), Policy::DiverseEquity, 10).unwrap();
        assert_eq!(a, b);
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut fa).unwrap();
        b.write_jsonl(&mut fb).unwrap();
        assert_eq!(fa, fb);
        let c = run_simulation(
            &PopulationSpec { seed: 4, ..small() },
            Policy::DiverseEquity,
            10,
        )
        .unwrap();
        assert_ne!(a.rounds, c.rounds);
    }

    #[test]
    fn zero_lambda_equity_equals_diverse() {
        let pop = PopulationSpec {
            lambda: 0.0,
            ..small()
        };
        let d = run_simulation(&pop, Policy::Diverse, 8).unwrap();
        let e = run_simulation(&pop, Policy::DiverseEquity, 8).unwrap();
        assert_eq!(d.rounds, e.rounds);
        assert_eq!(d.final_sigmas, e.final_sigmas);
    }

    #[test]
    fn exposure_grows_by_k_per_user_per_round() {
        let pop = small();
        let series = run_simulation(&pop, Policy::Similar, 3).unwrap();
        assert_eq!(series.rounds.len(), 3);
        for r in &series.rounds {
            assert!((0.0..=1.0).contains(&r.gini));
            assert!((0.0..=1.0).contains(&r.coverage));
            assert!((0.0..=1.0).contains(&r.acceptance_rate));
        }
    }

    #[test]
    fn single_item_catalog() {
        let pop = PopulationSpec {
            n_items: 1,
            n_users: 3,
            ..small()
        };
        let report = evaluate_policies(&pop, 4).unwrap();
        for scores in report.policies.values() {
            assert_eq!(scores.equity, 0.0);
            assert_eq!(scores.diversity, 1.0);
        }
    }

    #[test]
    fn report_columns() {
        let report = evaluate_policies(&small(), 3).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for scores in json["policies"].as_object().unwrap().values() {
            let keys: BTreeSet<&str> = scores
                .as_object()
                .unwrap()
                .keys()
                .map(String::as_str)
                .collect();
            assert_eq!(keys, BTreeSet::from(PolicyReport::COLUMNS));
        }
        let text = serde_json::to_string(&report).unwrap();
        let (s, d, e) = (
            text.find("\"similar\"").unwrap(),
            text.find("\"diverse\"").unwrap(),
            text.find("\"diverse+equity\"").unwrap(),
        );
        assert!(s < d && d < e);
        let table = report.to_table();
        assert!(table.lines().next().unwrap().contains("Usefulness"));
        assert_eq!(table.lines().count(), 4);
        assert_eq!(report, evaluate_policies(&small(), 3).unwrap());
    }

    #[test]
    fn adaptation_moves_sigma() {
        let series = run_simulation(&small(), Policy::Diverse, 30).unwrap();
        assert!(series.final_sigmas.iter().any(|s| *s != 0.2));
        assert!(series
            .final_sigmas
            .iter()
            .all(|s| SigmaBounds::default().contains(*s)));
    }
}
