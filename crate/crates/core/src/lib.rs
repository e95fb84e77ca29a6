//! Diversity-aware recommendation with a Mexican-hat scoring kernel.
//!
//! Candidates are scored by how far they sit from a listener's profile: items
//! near the profile are penalized, items around `sqrt(3) * sigma` score
//! highest, and remote items fade toward zero. An exposure ledger can boost
//! under-exposed items, and per-session feedback adapts `sigma`.

pub mod catalog;
pub mod distance;
pub mod equity;
pub mod kernel;
pub mod recommender;
pub mod session;
pub mod simulator;
pub mod textemb;

pub use catalog::{
    load_catalog, load_genre_graph, Catalog, Feature, GenreGraph, IssueCode, Item, ValidationReport,
};
pub use distance::{CalibrationMap, CriterionKind, CriterionSpec, DistanceConfig};
pub use equity::{equity_adjust, ExposureLedger};
pub use kernel::{
    band_classify, diversity_score, mexican_hat, Band, KernelParams, ScoringMode, SigmaBounds,
};
pub use recommender::{rank, recommend, RankRequest, Recommendation, SeedProfile};
pub use session::{SessionDefaults, SessionStore, UserSession, Verdict};
pub use simulator::{evaluate_policies, run_simulation, Policy, PopulationSpec};
