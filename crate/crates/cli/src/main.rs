use clap::Parser;
use tracing_subscriber::EnvFilter;
use uxsim_cli::{execute, finish, Cli};

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("UXSIM_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let format = cli.format;
    std::process::exit(finish(format, execute(cli).await));
}
