use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use super::webdriver::{ElementId, RetryPolicy, WebDriverClient};
use super::{ActionKind, ActionResult, AgentAction, BrowserConfig, BrowserError, Observation};
use crate::recipe::{parse_page, plan_live_queries, ElementLocator, LiveQueryKind, LiveState, ParsedPage, Recipe};

const ENTER: char = '\u{E007}';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NeedsObserve,
    NeedsAction,
    Closed,
}

/// One browser tab bound to a recipe. Actions and observations must
/// alternate: `observe` after `open` and after every `execute`.
#[derive(Debug)]
pub struct BrowserSession {
    client: WebDriverClient,
    recipe: Arc<Recipe>,
    phase: Phase,
    pending_error: Option<String>,
    page: Option<ParsedPage>,
    url: String,
    snapshot: RetryPolicy,
}

fn script_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

impl BrowserSession {
    pub async fn open(config: &BrowserConfig, start_url: &str, recipe: Arc<Recipe>) -> Result<Self, BrowserError> {
        let client = WebDriverClient::connect(
            &config.endpoint,
            &config.capabilities,
            config.retry_policy(),
            Duration::from_secs(config.timeout_secs),
        )
        .await?;
        if let Err(e) = client.navigate(start_url).await {
            let _ = client.close().await;
            return Err(e);
        }
        let url = client.current_url().await?;
        Ok(BrowserSession {
            client,
            recipe,
            phase: Phase::NeedsObserve,
            pending_error: None,
            page: None,
            url,
            snapshot: config.snapshot_policy(),
        })
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    /// The parse behind the most recent observation.
    pub fn last_page(&self) -> Option<&ParsedPage> {
        self.page.as_ref()
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn webdriver_session_id(&self) -> &str {
        self.client.session_id()
    }

    async fn read_source(&self) -> Result<String, BrowserError> {
        let mut attempt = 0;
        loop {
            match self.client.source().await {
                Ok(s) => return Ok(s),
                Err(e) if attempt >= self.snapshot.retries => {
                    return Err(BrowserError::Snapshot {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "page snapshot failed, retrying");
                    tokio::time::sleep(self.snapshot.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }

    async fn live_state(&self, raw: &str) -> Result<LiveState, BrowserError> {
        let queries = plan_live_queries(raw, &self.recipe);
        let mut live = LiveState::default();
        if queries.is_empty() {
            return Ok(live);
        }
        let all = self.client.find_all(None, "*").await?;
        for q in queries {
            let Some(el) = all.get(q.element_index) else {
                continue;
            };
            match q.kind {
                LiveQueryKind::Control => {
                    let value = self.client.property(el, "value").await?;
                    let checked = self.client.property(el, "checked").await?;
                    let entry = live.element_mut(q.element_index);
                    entry.value = value.as_str().map(str::to_string);
                    entry.checked = checked.as_bool();
                }
                LiveQueryKind::Script(src) => {
                    let out = match self.client.execute(&src, el).await {
                        Ok(v) => Ok(script_text(&v)),
                        Err(BrowserError::Protocol { message, .. }) => Err(message),
                        Err(e) => return Err(e),
                    };
                    live.element_mut(q.element_index).scripts.insert(src, out);
                }
            }
        }
        Ok(live)
    }

    pub async fn observe(&mut self) -> Result<Observation, BrowserError> {
        match self.phase {
            Phase::Closed => return Err(BrowserError::Closed),
            Phase::NeedsAction => return Err(BrowserError::OutOfOrder("observe called twice without an action")),
            Phase::NeedsObserve => {}
        }
        let raw = self.read_source().await?;
        let live = self.live_state(&raw).await?;
        let parsed = parse_page(&raw, &self.recipe, &live)?;
        for w in &parsed.warnings {
            tracing::debug!(warning = %w, "recipe warning");
        }
        self.url = self.client.current_url().await?;
        let obs = Observation {
            url: self.url.clone(),
            page: parsed.render(),
            clickables: parsed.registry.clickables.clone(),
            inputs: parsed.registry.inputs.clone(),
            error_message: self.pending_error.take(),
        };
        self.page = Some(parsed);
        self.phase = Phase::NeedsAction;
        Ok(obs)
    }

    async fn resolve(&self, loc: &ElementLocator) -> Result<Option<ElementId>, BrowserError> {
        let mut scope: Option<ElementId> = None;
        for step in &loc.steps {
            let found = self.client.find_all(scope.as_ref(), &step.selector).await?;
            match found.into_iter().nth(step.index) {
                Some(el) => scope = Some(el),
                None => return Ok(None),
            }
        }
        if let Some(cs) = &loc.click_selector {
            return Ok(self.client.find_all(scope.as_ref(), cs).await?.into_iter().next());
        }
        Ok(scope)
    }

    fn check_target(&self, action: &AgentAction) -> Result<ElementLocator, String> {
        let target = action.target.as_deref().unwrap_or_default();
        let page = self.page.as_ref();
        let registered = page.is_some_and(|p| {
            p.registry.clickables.iter().any(|c| c == target) || p.registry.inputs.iter().any(|c| c == target)
        });
        let loc = page.and_then(|p| p.locators.get(target)).filter(|_| registered);
        let Some(loc) = loc else {
            return Err(format!(
                "Element \"{target}\" does not exist on the current page; use a name from the clickables or inputs list."
            ));
        };
        let is_input = page.is_some_and(|p| p.registry.inputs.iter().any(|c| c == target));
        if matches!(action.kind, ActionKind::Type | ActionKind::TypeAndSubmit | ActionKind::Clear)
            && (!is_input || !loc.accepts_text())
        {
            return Err(format!(
                "Element \"{target}\" is not a text input; {} only works on names listed under inputs.",
                action.kind
            ));
        }
        Ok(loc.clone())
    }

    async fn perform(&self, action: &AgentAction, el: &ElementId) -> Result<(), BrowserError> {
        match action.kind {
            ActionKind::Click => self.client.click(el).await,
            ActionKind::Type => {
                self.client.clear(el).await?;
                self.client.send_keys(el, action.text.as_deref().unwrap_or_default()).await
            }
            ActionKind::TypeAndSubmit => {
                self.client.clear(el).await?;
                let mut keys = action.text.clone().unwrap_or_default();
                keys.push(ENTER);
                self.client.send_keys(el, &keys).await
            }
            ActionKind::Clear => self.client.clear(el).await,
            ActionKind::Back | ActionKind::Terminate => Ok(()),
        }
    }

    async fn targeted(&self, action: &AgentAction) -> Result<Result<(), String>, BrowserError> {
        let loc = match self.check_target(action) {
            Ok(l) => l,
            Err(m) => return Ok(Err(m)),
        };
        let target = action.target.as_deref().unwrap_or_default();
        let mut retried = false;
        loop {
            let Some(el) = self.resolve(&loc).await? else {
                return Ok(Err(format!("Element \"{target}\" is no longer present on the page.")));
            };
            match self.perform(action, &el).await {
                Ok(()) => return Ok(Ok(())),
                Err(e) if e.is_stale() && !retried => retried = true,
                Err(BrowserError::Protocol { error, message, .. }) => {
                    return Ok(Err(format!("Could not {} \"{target}\": {error}: {message}", action.kind)))
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs one action. Failures the agent can recover from come back as a
    /// failed [`ActionResult`]; transport loss is an error.
    pub async fn execute(&mut self, action: &AgentAction) -> Result<ActionResult, BrowserError> {
        match self.phase {
            Phase::Closed => return Err(BrowserError::Closed),
            Phase::NeedsObserve => return Err(BrowserError::OutOfOrder("execute called before observe")),
            Phase::NeedsAction => {}
        }
        if action.kind == ActionKind::Terminate {
            self.close().await;
            return Ok(ActionResult::success(self.url.clone()));
        }
        let outcome = match action.validate() {
            Err(m) => Err(m),
            Ok(()) if action.kind == ActionKind::Back => {
                self.client.back().await?;
                Ok(())
            }
            Ok(()) => self.targeted(action).await?,
        };
        self.phase = Phase::NeedsObserve;
        self.url = self.client.current_url().await?;
        Ok(match outcome {
            Ok(()) => ActionResult::success(self.url.clone()),
            Err(m) => {
                self.pending_error = Some(m.clone());
                ActionResult::failure(m, self.url.clone())
            }
        })
    }

    /// Saves the current viewport as `step_{step}.png` in `dir`.
    pub async fn screenshot(&self, dir: &Path, step: usize) -> Result<PathBuf, BrowserError> {
        if self.phase == Phase::Closed {
            return Err(BrowserError::Closed);
        }
        let png = self.client.screenshot().await?;
        tokio::fs::create_dir_all(dir).await?;
        let path = dir.join(format!("step_{step}.png"));
        tokio::fs::write(&path, png).await?;
        Ok(path)
    }

    /// Ends the browser session. Safe to call more than once.
    pub async fn close(&mut self) {
        if self.phase != Phase::Closed {
            if let Err(e) = self.client.close().await {
                tracing::warn!(error = %e, "closing browser session failed");
            }
            self.phase = Phase::Closed;
        }
    }
}
