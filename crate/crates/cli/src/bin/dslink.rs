//! Service daemon.
//!
//! `dslink serve --config dslink.toml` runs the master verifier, link
//! resolver and correlation store behind one HTTP listener, refreshing
//! center profiles in the background.
//!
//! `dslink center ...` runs a single data center backed by an inventory
//! file, serving its local verifier, current-link endpoint and profile.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use tracing::{error, info};
use url::Url;

use dslink_cli::config::DaemonConfig;
use dslink_core::center::InventoryFile;
use dslink_core::correlation::CorrelationLog;
use dslink_core::remote::RemoteClient;
use dslink_core::server::{center_router, services_router, RunningServer, Services};
use dslink_core::{CorrelationStore, LinkResolver, LocalCenter, MasterVerifier, Registry, SharedClock, SystemClock, VerifierConfig};

#[derive(Parser)]
#[command(name = "dslink", version, about = "Dataset identifier services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the central verifier, resolver and correlation store.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one data center from an inventory file.
    Center {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        listen: SocketAddr,
        /// Externally visible base URL; defaults to http://<listen>/.
        #[arg(long)]
        base_url: Option<Url>,
        /// Tab-separated inventory (facility, private id, url, created).
        #[arg(long)]
        inventory: PathBuf,
        /// Facility this center holds even without records; repeatable.
        #[arg(long = "facility")]
        facilities: Vec<String>,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let result = match Cli::parse().command {
        Command::Serve { config } => serve(config).await,
        Command::Center {
            id,
            name,
            listen,
            base_url,
            inventory,
            facilities,
        } => center(id, name, listen, base_url, inventory, facilities).await,
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

async fn run_until_signal(server: RunningServer) -> Result<(), String> {
    tokio::select! {
        r = tokio::signal::ctrl_c() => {
            r.map_err(|e| e.to_string())?;
            info!("shutting down");
            Ok(())
        }
        r = server.wait() => r.map_err(|e| e.to_string()),
    }
}

async fn serve(path: PathBuf) -> Result<(), String> {
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let config = DaemonConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let clock: SharedClock = Arc::new(SystemClock);
    let client = RemoteClient::new(config.remote_timeout());

    let registry = Arc::new(Registry::new(config.sources(), config.registry(), clock.clone(), client.clone()));
    let report = registry.refresh().await;
    info!(version = report.version, fetched = report.fetched.len(), failed = report.failures.len(), "initial profile refresh");
    registry.clone().spawn_refresher();

    let verifier = Arc::new(MasterVerifier::new(
        registry.clone(),
        client.clone(),
        VerifierConfig {
            resolver_base_url: config.resolver_base_url.clone(),
            batch_cap: config.batch_cap,
        },
    ));
    let resolver = Arc::new(LinkResolver::new(registry, client, clock.clone(), config.resolver()));
    let correlations = Arc::new(match &config.data_dir {
        Some(dir) => {
            let log = CorrelationLog::open(dir).map_err(|e| e.to_string())?;
            CorrelationStore::open(log, clock).map_err(|e| e.to_string())?
        }
        None => CorrelationStore::in_memory(clock),
    });

    let router = services_router(Services {
        verifier,
        resolver,
        correlations,
    });
    let server = RunningServer::bind(config.listen, router).await.map_err(|e| e.to_string())?;
    info!(addr = %server.addr(), "central services listening");
    run_until_signal(server).await
}

async fn center(
    id: String,
    name: Option<String>,
    listen: SocketAddr,
    base_url: Option<Url>,
    inventory: PathBuf,
    facilities: Vec<String>,
) -> Result<(), String> {
    let base = match base_url {
        Some(u) => u,
        None => Url::parse(&format!("http://{listen}/")).map_err(|e| e.to_string())?,
    };
    let clock: SharedClock = Arc::new(SystemClock);
    let center = LocalCenter::new(&id, name.as_deref().unwrap_or(&id), base, clock)
        .with_store(InventoryFile::new(inventory))
        .map_err(|e| e.to_string())?;
    for f in &facilities {
        center.claim_facility(f).map_err(|e| e.to_string())?;
    }
    if center.facilities().is_empty() {
        return Err("center holds no facilities: give --facility or a non-empty inventory".into());
    }
    info!(center = %id, records = center.record_count(), "inventory loaded");
    let server = RunningServer::bind(listen, center_router(Arc::new(center)))
        .await
        .map_err(|e| e.to_string())?;
    info!(addr = %server.addr(), "center listening");
    run_until_signal(server).await
}
