//! Command-line harness and review service for the `keys` toolkit.
//!
//! The binary is a thin wrapper around [`run`]; everything it prints can
//! also be produced in-process, which is how the tests drive it.

pub mod commands;
pub mod config;
pub mod error;
pub mod review;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use config::{resolve, Command, RunConfig};
use error::{exit, CliError};

/// Runs one batch subcommand and returns its artifact.
pub fn execute(cfg: &RunConfig) -> Result<commands::Output, CliError> {
    match cfg.command.as_str() {
        "cluster" => commands::run_cluster(cfg),
        "optimize" => commands::run_optimize(cfg),
        "explain" => commands::run_explain(cfg),
        "gen" => commands::run_gen(cfg),
        other => Err(CliError::Usage(format!(
            "`{other}` does not produce an artifact"
        ))),
    }
}

/// Loads every `--data` file, keyed by file stem.
pub fn load_catalog(cfg: &RunConfig) -> Result<BTreeMap<String, keys::Dataset>, CliError> {
    if cfg.data.is_empty() {
        return Err(CliError::Usage(
            "serve needs at least one --data file".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for path in &cfg.data {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("bad data path {}", path.display())))?;
        let ds = commands::load(path)?;
        ds.distance().map_err(|source| CliError::Data {
            path: path.display().to_string(),
            source,
        })?;
        if out.insert(id.clone(), ds).is_some() {
            return Err(CliError::Usage(format!("two --data files are named {id}")));
        }
    }
    Ok(out)
}

async fn serve(cfg: RunConfig) -> Result<(), CliError> {
    let addr: SocketAddr = cfg
        .serve
        .parse()
        .map_err(|_| CliError::Usage(format!("--serve wants ADDR:PORT, got {}", cfg.serve)))?;
    let store = review::Store::new(
        load_catalog(&cfg)?,
        Duration::from_secs(cfg.session_timeout),
    )
    .with_search(cfg.top_n, cfg.stop_leaf);
    let app = review::router(Arc::new(store), cfg.ui_dir.clone());
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

fn write(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
            {
                // A closed pipe (`keys ... | head`) is not an error.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(command: Command) -> i32 {
    let result = resolve(command.name(), command.opts()).and_then(|cfg| {
        if let Command::Serve(_) = command {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(cfg))?;
            return Ok(exit::OK);
        }
        let out = execute(&cfg)?;
        write(&cfg, &out.text)?;
        Ok(if out.truncated {
            exit::TRUNCATED
        } else {
            exit::OK
        })
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("keys: {e}");
            e.exit_code()
        }
    }
}
