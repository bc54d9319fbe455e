use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lightfx_service::{router, AppState, ServiceConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Serve light extraction and transfer over HTTP.
#[derive(Debug, Parser)]
#[command(name = "lightfx-serve", version)]
struct Args {
    /// Extraction checkpoint (`decouple/extraction.ckpt` of a run).
    #[arg(long)]
    extraction: Option<PathBuf>,
    /// Transfer bundle directory (`translight/full` of a run).
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Directory of light presets listed by `/lights`.
    #[arg(long, default_value = "presets")]
    presets: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let cfg = ServiceConfig { extraction: args.extraction, bundle: args.bundle, presets: args.presets };
    let state = match AppState::load(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {}: {e}", args.addr);
            return ExitCode::from(4);
        }
    };
    eprintln!("listening on {}", args.addr);
    if let Err(e) = axum::serve(listener, router(state)).await {
        eprintln!("error: {e}");
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
