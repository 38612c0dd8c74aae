//! Minimal W3C WebDriver client: the handful of commands one browsing
//! session needs, with bounded retries on transport failures.

use std::time::Duration;

use base64::Engine as _;
use reqwest::Method;
use serde_json::{json, Value};

use super::BrowserError;
pub use crate::retry::RetryPolicy;

pub const ELEMENT_KEY: &str = "element-6066-11e4-a52e-4f735466cecf";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementId(pub String);

impl ElementId {
    fn to_json(&self) -> Value {
        json!({ ELEMENT_KEY: self.0 })
    }

    fn from_json(v: &Value) -> Option<Self> {
        v.get(ELEMENT_KEY)
            .and_then(Value::as_str)
            .map(|s| ElementId(s.to_string()))
    }
}

pub struct WebDriverClient {
    http: reqwest::Client,
    base: String,
    session: String,
    retry: RetryPolicy,
}

impl std::fmt::Debug for WebDriverClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebDriverClient")
            .field("base", &self.base)
            .field("session", &self.session)
            .finish()
    }
}

async fn send(
    http: &reqwest::Client,
    retry: &RetryPolicy,
    method: Method,
    url: &str,
    body: Option<&Value>,
    command: &str,
) -> Result<Value, BrowserError> {
    let mut attempt = 0;
    loop {
        let mut req = http.request(method.clone(), url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let outcome = match req.send().await {
            Ok(resp) => {
                let status = resp.status();
                match resp.json::<Value>().await {
                    Ok(v) => Ok((status, v)),
                    Err(e) => Err(e.to_string()),
                }
            }
            Err(e) => Err(e.to_string()),
        };
        match outcome {
            Ok((status, v)) => {
                let value = v.get("value").cloned().unwrap_or(Value::Null);
                if status.is_success() {
                    return Ok(value);
                }
                let field = |k: &str| {
                    value
                        .get(k)
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string()
                };
                return Err(BrowserError::Protocol {
                    command: command.to_string(),
                    status: status.as_u16(),
                    error: field("error"),
                    message: field("message"),
                });
            }
            Err(message) if attempt >= retry.retries => {
                return Err(BrowserError::Transport {
                    attempts: attempt + 1,
                    message,
                });
            }
            Err(message) => {
                tracing::warn!(command, attempt, %message, "webdriver transport failure, retrying");
                tokio::time::sleep(retry.backoff(attempt)).await;
                attempt += 1;
            }
        }
    }
}

impl WebDriverClient {
    /// Opens a new browser session at `endpoint`.
    pub async fn connect(
        endpoint: &str,
        capabilities: &Value,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, BrowserError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BrowserError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let base = endpoint.trim_end_matches('/').to_string();
        let body = json!({ "capabilities": { "alwaysMatch": capabilities } });
        let v = send(&http, &retry, Method::POST, &format!("{base}/session"), Some(&body), "new session").await?;
        let session = v
            .get("sessionId")
            .and_then(Value::as_str)
            .ok_or_else(|| BrowserError::Protocol {
                command: "new session".into(),
                status: 200,
                error: "invalid response".into(),
                message: "no sessionId in response".into(),
            })?
            .to_string();
        Ok(WebDriverClient {
            http,
            base,
            session,
            retry,
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session
    }

    async fn cmd(&self, method: Method, path: &str, body: Option<Value>, command: &str) -> Result<Value, BrowserError> {
        let url = format!("{}/session/{}{}", self.base, self.session, path);
        send(&self.http, &self.retry, method, &url, body.as_ref(), command).await
    }

    pub async fn close(&self) -> Result<(), BrowserError> {
        self.cmd(Method::DELETE, "", None, "delete session").await.map(|_| ())
    }

    pub async fn navigate(&self, url: &str) -> Result<(), BrowserError> {
        self.cmd(Method::POST, "/url", Some(json!({ "url": url })), "navigate").await.map(|_| ())
    }

    pub async fn current_url(&self) -> Result<String, BrowserError> {
        let v = self.cmd(Method::GET, "/url", None, "get url").await?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    pub async fn back(&self) -> Result<(), BrowserError> {
        self.cmd(Method::POST, "/back", Some(json!({})), "back").await.map(|_| ())
    }

    pub async fn source(&self) -> Result<String, BrowserError> {
        let v = self.cmd(Method::GET, "/source", None, "get page source").await?;
        Ok(v.as_str().unwrap_or_default().to_string())
    }

    /// All matches of `css` inside `scope`, or the whole document.
    pub async fn find_all(&self, scope: Option<&ElementId>, css: &str) -> Result<Vec<ElementId>, BrowserError> {
        let path = match scope {
            Some(e) => format!("/element/{}/elements", e.0),
            None => "/elements".to_string(),
        };
        let body = json!({ "using": "css selector", "value": css });
        let v = self.cmd(Method::POST, &path, Some(body), "find elements").await?;
        Ok(v
            .as_array()
            .map(|a| a.iter().filter_map(ElementId::from_json).collect())
            .unwrap_or_default())
    }

    pub async fn click(&self, el: &ElementId) -> Result<(), BrowserError> {
        self.cmd(Method::POST, &format!("/element/{}/click", el.0), Some(json!({})), "element click")
            .await
            .map(|_| ())
    }

    pub async fn clear(&self, el: &ElementId) -> Result<(), BrowserError> {
        self.cmd(Method::POST, &format!("/element/{}/clear", el.0), Some(json!({})), "element clear")
            .await
            .map(|_| ())
    }

    pub async fn send_keys(&self, el: &ElementId, text: &str) -> Result<(), BrowserError> {
        self.cmd(
            Method::POST,
            &format!("/element/{}/value", el.0),
            Some(json!({ "text": text })),
            "element send keys",
        )
        .await
        .map(|_| ())
    }

    pub async fn property(&self, el: &ElementId, name: &str) -> Result<Value, BrowserError> {
        self.cmd(Method::GET, &format!("/element/{}/property/{name}", el.0), None, "get element property")
            .await
    }

    /// Runs `script` with `el` bound to `arguments[0]`.
    pub async fn execute(&self, script: &str, el: &ElementId) -> Result<Value, BrowserError> {
        let body = json!({ "script": script, "args": [el.to_json()] });
        self.cmd(Method::POST, "/execute/sync", Some(body), "execute script").await
    }

    pub async fn screenshot(&self) -> Result<Vec<u8>, BrowserError> {
        let v = self.cmd(Method::GET, "/screenshot", None, "take screenshot").await?;
        base64::engine::general_purpose::STANDARD
            .decode(v.as_str().unwrap_or_default())
            .map_err(|e| BrowserError::Protocol {
                command: "take screenshot".into(),
                status: 200,
                error: "invalid response".into(),
                message: e.to_string(),
            })
    }
}
