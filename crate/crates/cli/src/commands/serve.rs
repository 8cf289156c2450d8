use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Args;
use orient_service::{AppState, ServiceConfig};

use crate::error::{CliError, CliResult};

#[derive(Args, Clone, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory that dataset paths in session requests resolve against.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

pub fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    if let Some(root) = &args.data_root {
        if !root.is_dir() {
            return Err(CliError::Validation(format!("{} is not a directory", root.display())));
        }
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .map_err(|e| CliError::Runtime(format!("bind {}: {e}", args.addr)))?;
        let local = listener.local_addr()?;
        println!("listening on http://{local}/v1");
        let state = AppState::new(ServiceConfig::new(args.data_root.clone()));
        orient_service::serve(listener, state).await?;
        Ok(())
    })
}
