//! Subcommands of the `optidiv` binary.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use optidiv_core::catalog::{load_catalog, load_genre_graph, Catalog};
use optidiv_core::distance::DistanceConfig;
use optidiv_core::equity::{ExposureLedger, DEFAULT_LAMBDA};
use optidiv_core::kernel::{KernelParams, ScoringMode, SigmaBounds, DEFAULT_SIGMA, DEFAULT_THETA};
use optidiv_core::recommender::{recommend, SeedProfile};
use optidiv_core::session::{SessionDefaults, SessionStore, DEFAULT_ETA};
use optidiv_core::simulator::{evaluate_policies, run_simulation, Policy, PopulationSpec};
use optidiv_core::textemb::{
    build_vectors, build_vectors_with, document_catalog, load_corpus, load_vectors, seed_target,
    write_vectors, Projection,
};

use crate::service::{self, system_clock, AppState, ExposureOn, ServiceDefaults};

#[derive(Debug, Parser)]
#[command(
    name = "optidiv",
    version,
    about = "Diversity-aware recommendation engine"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a catalog or a document corpus and print the report.
    Ingest(IngestArgs),
    /// Print one ranked recommendation list as JSON.
    Recommend(RecommendArgs),
    /// Build a document vectors file from a corpus.
    Embed(EmbedArgs),
    /// Run the exposure simulator and write per-round metrics.
    Simulate(SimulateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

/// Catalog inputs shared by several subcommands.
#[derive(Debug, Args)]
pub struct CatalogArgs {
    /// Catalog file, one JSON item per line.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Distance configuration (JSON).
    #[arg(long, requires = "catalog")]
    pub config: Option<PathBuf>,
    /// Genre graph, tab-separated edges.
    #[arg(long, requires = "catalog")]
    pub genres: Option<PathBuf>,
    /// Document vectors file; serves documents instead of catalog items.
    #[arg(long, conflicts_with_all = ["catalog", "config", "genres"])]
    pub vectors: Option<PathBuf>,
    /// Corpus supplying document titles in vectors mode.
    #[arg(long, requires = "vectors")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, required_unless_present = "corpus")]
    pub catalog: Option<PathBuf>,
    #[arg(long, requires = "catalog")]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "catalog")]
    pub genres: Option<PathBuf>,
    /// Validate a document corpus instead.
    #[arg(long, conflicts_with = "catalog")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Diverse,
    Similar,
}

impl From<ModeArg> for ScoringMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Diverse => ScoringMode::Diverse,
            ModeArg::Similar => ScoringMode::Similar,
        }
    }
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub inputs: CatalogArgs,
    /// Seed item (or seed document in vectors mode); repeatable.
    #[arg(long = "seed", required = true)]
    pub seeds: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Diverse)]
    pub mode: ModeArg,
    /// Exposure ledger (JSON). Read if present, then updated with this list.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Projected dimension; 0 keeps the full tf-idf space.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Similar,
    Diverse,
    #[value(name = "diverse+equity", alias = "diverse-equity")]
    DiverseEquity,
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    #[arg(long, default_value_t = 200)]
    pub rounds: usize,
    #[arg(long, value_enum, default_value_t = PolicyArg::All)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Metrics file, one JSON record per round.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the policy comparison report (JSON); only with `--policy all`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub inputs: CatalogArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Directory for session files and the exposure ledger.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_max: f64,
    #[arg(long, value_enum, default_value_t = ExposureOn::Recommend)]
    pub exposure_on: ExposureOn,
}

/// A failure that maps to exit code 1. The message carries a bracketed code.
#[derive(Debug)]
pub struct Failure(pub String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn fail(code: &str, message: impl std::fmt::Display) -> Failure {
    Failure(format!("[{code}] {message}"))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| fail("unreadable", format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| fail("unwritable", format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<DistanceConfig, Failure> {
    let path = path.ok_or_else(|| fail("usage", "--config is required with --catalog"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail("unreadable", format!("{}: {e}", path.display())))?;
    DistanceConfig::from_json(&text)
        .map_err(|e| fail("invalid-config", format!("{}: {e}", path.display())))
}

/// Loads the catalog, or the document catalog in vectors mode.
pub fn load_inputs(inputs: &CatalogArgs) -> Result<Catalog, Failure> {
    if let Some(vectors) = &inputs.vectors {
        let vecs = load_vectors(open(vectors)?).map_err(|e| fail("invalid-vectors", e))?;
        let corpus = match &inputs.corpus {
            Some(p) => Some(load_corpus(open(p)?).map_err(|e| fail("invalid-corpus", e))?),
            None => None,
        };
        return document_catalog(&vecs, corpus.as_deref()).map_err(|r| fail("invalid-vectors", r));
    }
    let catalog = inputs
        .catalog
        .as_deref()
        .ok_or_else(|| fail("usage", "give --catalog or --vectors"))?;
    load_catalog_files(catalog, inputs.config.as_deref(), inputs.genres.as_deref())
}

fn load_catalog_files(
    catalog: &Path,
    config: Option<&Path>,
    genres: Option<&Path>,
) -> Result<Catalog, Failure> {
    let config = load_config(config)?;
    let graph = match genres {
        Some(p) => Some(
            load_genre_graph(open(p)?)
                .map_err(|e| fail("invalid-genres", format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    load_catalog(open(catalog)?, config, graph).map_err(|r| fail("invalid-catalog", r))
}

pub fn ingest(args: &IngestArgs) -> Result<(), Failure> {
    if let Some(corpus) = &args.corpus {
        let docs = load_corpus(open(corpus)?).map_err(|e| fail("invalid-corpus", e))?;
        println!("ok: {} documents", docs.len());
        return Ok(());
    }
    let path = args
        .catalog
        .as_deref()
        .expect("clap requires catalog or corpus");
    let catalog = load_catalog_files(path, args.config.as_deref(), args.genres.as_deref())?;
    println!(
        "ok: {} items, {} criteria",
        catalog.len(),
        catalog.criteria().len()
    );
    Ok(())
}

fn profile_for(
    catalog: &Catalog,
    inputs: &CatalogArgs,
    seeds: &[String],
) -> Result<SeedProfile, Failure> {
    if inputs.vectors.is_none() {
        return Ok(SeedProfile::items(seeds.iter().cloned()));
    }
    let key = optidiv_core::textemb::EMBEDDING_KEY;
    let mut docs = Vec::with_capacity(seeds.len());
    for id in seeds {
        let item = catalog
            .get(id)
            .ok_or_else(|| fail("invalid-request", format!("unknown document `{id}`")))?;
        match item.features.get(key) {
            Some(optidiv_core::catalog::Feature::Vector(v)) => {
                docs.push(optidiv_core::textemb::DocVector {
                    id: id.clone(),
                    vector: v.clone(),
                })
            }
            _ => {
                return Err(fail(
                    "invalid-request",
                    format!("document `{id}` has no vector"),
                ))
            }
        }
    }
    let vector = seed_target(&docs).map_err(|e| fail("invalid-request", e))?;
    Ok(SeedProfile::Target {
        vector,
        exclude: seeds.iter().cloned().collect(),
    })
}

pub fn recommend_cmd(args: &RecommendArgs, out: &mut impl Write) -> Result<(), Failure> {
    let catalog = load_inputs(&args.inputs)?;
    let profile = profile_for(&catalog, &args.inputs, &args.seeds)?;
    let params =
        KernelParams::new(args.sigma, args.theta).map_err(|e| fail("invalid-request", e))?;
    let mut ledger = match &args.ledger {
        Some(p) if p.exists() => {
            let ledger: ExposureLedger = serde_json::from_reader(open(p)?)
                .map_err(|e| fail("invalid-ledger", format!("{}: {e}", p.display())))?;
            if !ledger.counts().keys().eq(catalog
                .items()
                .iter()
                .map(|i| &i.id)
                .collect::<std::collections::BTreeSet<_>>())
            {
                return Err(fail(
                    "ledger-mismatch",
                    "ledger items differ from the catalog",
                ));
            }
            ledger
        }
        _ => ExposureLedger::for_catalog(&catalog),
    };
    let recs = recommend(
        &catalog,
        &profile,
        params,
        args.lambda,
        &mut ledger,
        args.k,
        args.mode.into(),
    )
    .map_err(|e| fail("invalid-request", e))?;
    if let Some(p) = &args.ledger {
        let mut w = create(p)?;
        serde_json::to_writer(&mut w, &ledger).map_err(|e| fail("unwritable", e))?;
        w.flush().map_err(|e| fail("unwritable", e))?;
    }
    let body = serde_json::json!({ "recommendations": recs, "sigma": params.sigma() });
    serde_json::to_writer_pretty(&mut *out, &body).map_err(|e| fail("io", e))?;
    writeln!(out).map_err(|e| fail("io", e))
}

pub fn embed(args: &EmbedArgs) -> Result<(), Failure> {
    let corpus = load_corpus(open(&args.corpus)?).map_err(|e| fail("invalid-corpus", e))?;
    let emb = if args.k == 0 {
        build_vectors_with(&corpus, Projection::Identity)
    } else {
        build_vectors(&corpus, args.k, args.seed)
    }
    .map_err(|e| fail("embed-failed", e))?;
    for s in &emb.skipped {
        eprintln!("skipped {}: {:?}", s.id, s.reason);
    }
    let mut w = create(&args.out)?;
    write_vectors(&emb.vectors, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| fail("unwritable", e))?;
    eprintln!(
        "wrote {} vectors of dimension {}",
        emb.vectors.len(),
        emb.dimension()
    );
    Ok(())
}

pub fn simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<(), Failure> {
    let pop = PopulationSpec {
        n_users: args.users,
        n_items: args.items,
        seed: args.seed,
        ..PopulationSpec::default()
    };
    let single = match args.policy {
        PolicyArg::Similar => Some(Policy::Similar),
        PolicyArg::Diverse => Some(Policy::Diverse),
        PolicyArg::DiverseEquity => Some(Policy::DiverseEquity),
        PolicyArg::All => None,
    };
    let mut w = create(&args.out)?;
    if let Some(policy) = single {
        if args.report.is_some() {
            return Err(fail("usage", "--report needs --policy all"));
        }
        let series =
            run_simulation(&pop, policy, args.rounds).map_err(|e| fail("invalid-population", e))?;
        series
            .write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| fail("unwritable", e))?;
        return Ok(());
    }
    for policy in Policy::ALL {
        let series =
            run_simulation(&pop, policy, args.rounds).map_err(|e| fail("invalid-population", e))?;
        for r in &series.rounds {
            let mut record = serde_json::to_value(r).map_err(|e| fail("io", e))?;
            record["policy"] = serde_json::json!(policy);
            serde_json::to_writer(&mut w, &record).map_err(|e| fail("unwritable", e))?;
            w.write_all(b"\n").map_err(|e| fail("unwritable", e))?;
        }
    }
    w.flush().map_err(|e| fail("unwritable", e))?;
    let report = evaluate_policies(&pop, args.rounds).map_err(|e| fail("invalid-population", e))?;
    if let Some(p) = &args.report {
        let mut r = create(p)?;
        serde_json::to_writer_pretty(&mut r, &report).map_err(|e| fail("unwritable", e))?;
        r.write_all(b"\n")
            .and_then(|_| r.flush())
            .map_err(|e| fail("unwritable", e))?;
    }
    write!(out, "{}", report.to_table()).map_err(|e| fail("io", e))
}

pub fn service_defaults(args: &ServeArgs) -> Result<ServiceDefaults, Failure> {
    let bounds =
        SigmaBounds::new(args.sigma_min, args.sigma_max).map_err(|e| fail("invalid-config", e))?;
    let d = ServiceDefaults {
        session: SessionDefaults {
            sigma: args.sigma,
            eta: args.eta,
            bounds,
        },
        lambda: args.lambda,
        theta: args.theta,
        k: args.k,
        exposure_on: args.exposure_on,
    };
    d.validate().map_err(|e| fail("invalid-config", e))?;
    Ok(d)
}

pub fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let defaults = service_defaults(args)?;
    let catalog = load_inputs(&args.inputs)?;
    let store = SessionStore::open(&args.store).map_err(|e| fail("store", e))?;
    let state = AppState::new(catalog, store, defaults, system_clock())
        .map_err(|e| Failure(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail("runtime", e))?;
    runtime.block_on(async move {
        let listener = service::bind(args.listen).await.map_err(Failure)?;
        let addr = listener.local_addr().map_err(|e| fail("bind-failed", e))?;
        println!("listening on {addr}");
        tracing::info!(%addr, items = state.catalog().len(), "service started");
        service::serve(listener, state, shutdown_signal())
            .await
            .map_err(|e| fail("serve", e))?;
        tracing::info!("service stopped");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Runs a parsed command; `Err` means exit code 1.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let stdout = std::io::stdout();
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Recommend(a) => recommend_cmd(&a, &mut stdout.lock()),
        Command::Embed(a) => embed(&a),
        Command::Simulate(a) => simulate(&a, &mut stdout.lock()),
        Command::Serve(a) => serve(&a),
    }
}
