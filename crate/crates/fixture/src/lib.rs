//! Test fixtures: a marketplace-style shop and an in-process browser that
//! serves the W3C WebDriver protocol. Both bind to an ephemeral loopback
//! port and stop when their handle is dropped.

pub mod catalog;
pub mod dom;
pub mod screenshot;
pub mod script;
pub mod shop;
pub mod webdriver;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tokio::task::JoinHandle;

pub use shop::ShopState;
pub use webdriver::BrowserState;

/// Recipe covering every page of the fixture shop.
pub const SHOP_RECIPE: &str = include_str!("../recipes/fixture_shop.json");

/// Stub script for one persona who searches for a jacket, picks Navy and
/// Medium, and adds it to the cart in five actions.
pub const JACKET_SCRIPT: &str = include_str!("../scripts/jacket_purchase.json");

/// Absolute path of a file shipped with this crate, e.g. `pages/x.html`.
pub fn asset_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(rel)
}

pub fn read_asset(rel: &str) -> String {
    let path = asset_path(rel);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

pub struct Server<S> {
    pub addr: SocketAddr,
    pub state: Arc<S>,
    task: JoinHandle<()>,
}

impl<S> Server<S> {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn abort(&self) {
        self.task.abort();
    }
}

impl<S> Drop for Server<S> {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn serve<S>(state: Arc<S>, app: Router, port: u16) -> std::io::Result<Server<S>> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    let addr = listener.local_addr()?;
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("fixture server on {addr} stopped: {e}");
        }
    });
    Ok(Server { addr, state, task })
}

pub async fn spawn_shop() -> std::io::Result<Server<ShopState>> {
    spawn_shop_on(0).await
}

pub async fn spawn_shop_on(port: u16) -> std::io::Result<Server<ShopState>> {
    let state = Arc::new(ShopState::default());
    serve(state.clone(), shop::router(state), port).await
}

pub async fn spawn_browser() -> std::io::Result<Server<BrowserState>> {
    spawn_browser_on(0).await
}

pub async fn spawn_browser_on(port: u16) -> std::io::Result<Server<BrowserState>> {
    let state = Arc::new(BrowserState::default());
    serve(state.clone(), webdriver::router(state), port).await
}
