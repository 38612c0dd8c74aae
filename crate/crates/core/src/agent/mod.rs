//! The two-loop agent.
//!
//! The fast loop runs perceive, plan and act against the browser once per
//! step. Every `slow_loop_every` steps a slow-loop pass (wonder, then
//! reflect) is started; its memories reach the fast loop only through
//! retrieval, so from the next step on.

mod action;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinHandle;

use crate::browser::{ActionKind, AgentAction, BrowserConfig, BrowserError, BrowserSession, Observation};
use crate::llm::{CompletionRequest, Expect, Gateway, LlmError, Message};
use crate::memory::{MemoryKind, MemoryPiece, MemoryStream, NewMemory, Profiles};
use crate::money::Money;
use crate::persona::Persona;
use crate::prompt::{fill, Prompts};
use crate::recipe::{find_named, render_node, Recipe, SimplifiedNode};
use crate::record::{
    action_memory_text, ActionRecord, OutcomeKind, PurchasedItem, SessionOutcome, SessionRecord,
};

pub use action::{parse_action, registry_error};

/// Importance used when a rating reply has no number in it.
const FALLBACK_IMPORTANCE: f64 = 5.0;

fn default_max_steps() -> u32 {
    40
}

fn default_slow_loop_every() -> u32 {
    3
}

fn default_retrieval_k() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// Loop knobs shared by every session of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    #[serde(default = "default_slow_loop_every")]
    pub slow_loop_every: u32,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default)]
    pub profiles: Profiles,
    /// Run slow-loop passes alongside later fast steps. When off, each pass
    /// finishes before the next step starts, which makes memory order
    /// reproducible.
    #[serde(default = "default_true")]
    pub concurrent_slow_loop: bool,
    /// Directory of prompt overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
}

impl Default for AgentSettings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl AgentSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps < 1 {
            return Err("max_steps must be at least 1".into());
        }
        if self.slow_loop_every < 1 {
            return Err("slow_loop_every must be at least 1".into());
        }
        self.profiles.fast.validate().map_err(|e| format!("profiles.fast: {e}"))?;
        self.profiles.slow.validate().map_err(|e| format!("profiles.slow: {e}"))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub persona: Persona,
    pub intent: String,
    pub settings: AgentSettings,
}

impl AgentConfig {
    /// The persona's own intent wins over the run-wide default.
    pub fn new(persona: Persona, default_intent: &str, settings: AgentSettings) -> Self {
        let intent = persona.intent.clone().unwrap_or_else(|| default_intent.to_string());
        AgentConfig {
            persona,
            intent,
            settings,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.intent.trim().is_empty() {
            return Err("intent must not be empty".into());
        }
        self.settings.validate()
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("model call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("browser: {0}")]
    Browser(#[from] BrowserError),
    #[error("unusable action after one repair: {0}")]
    MalformedAction(String),
    #[error("invalid agent config: {0}")]
    Config(String),
}

/// Set from outside to stop sessions at their next step boundary.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Where and what one session runs against.
#[derive(Debug, Clone)]
pub struct SessionTarget {
    pub session_id: String,
    pub url: String,
    pub recipe: Arc<Recipe>,
    pub browser: BrowserConfig,
    /// Screenshots go here.
    pub dir: PathBuf,
}

struct Ctx {
    config: AgentConfig,
    prompts: Prompts,
    system: String,
    gateway: Arc<Gateway>,
    memory: Arc<MemoryStream>,
    warnings: Mutex<Vec<String>>,
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items.join(", ")
}

fn memory_lines(ms: &[MemoryPiece]) -> String {
    if ms.is_empty() {
        return "(nothing yet)".into();
    }
    ms.iter()
        .map(|m| format!("- [{}] {}", m.kind.as_str(), m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn first_integer(s: &str) -> Option<f64> {
    s.split(|c: char| !c.is_ascii_digit())
        .find(|t| !t.is_empty())
        .and_then(|t| t.parse::<f64>().ok())
}

impl Ctx {
    fn warn(&self, msg: String) {
        tracing::warn!("{msg}");
        self.warnings.lock().unwrap().push(msg);
    }

    fn request(&self, purpose: &str, user: String, expect: Expect) -> CompletionRequest {
        let mut req = CompletionRequest::new(purpose, self.system.clone(), user, expect);
        req.temperature = self.gateway.temperature();
        req.max_tokens = self.gateway.max_tokens();
        req
    }

    async fn complete(&self, purpose: &str, user: String, expect: Expect) -> Result<String, LlmError> {
        let reply = self.gateway.complete(self.request(purpose, user, expect)).await?;
        Ok(reply.trim().to_string())
    }

    async fn importance(&self, text: &str) -> Result<f64, LlmError> {
        let user = fill(&self.prompts.importance, &[("memory", text)]);
        let reply = self.complete("importance", user, Expect::IntegerScore).await?;
        Ok(match first_integer(&reply) {
            Some(v) => v.min(10.0),
            None => {
                self.warn(format!("importance reply {reply:?} has no number; using {FALLBACK_IMPORTANCE}"));
                FALLBACK_IMPORTANCE
            }
        })
    }

    /// Rates, embeds and stores one memory.
    async fn remember(&self, kind: MemoryKind, text: &str, step: u32) -> Result<Option<u64>, LlmError> {
        let text = text.trim();
        if text.is_empty() {
            self.warn(format!("empty {} memory dropped", kind.as_str()));
            return Ok(None);
        }
        let importance = self.importance(text).await?;
        let embedding = self.gateway.embed(text).await?;
        let id = self
            .memory
            .append(NewMemory::new(kind, text, step, importance).with_embedding(embedding))
            .expect("text and importance are checked above");
        Ok(Some(id))
    }

    async fn retrieve(&self, fast: bool, step: u32) -> Result<Vec<MemoryPiece>, LlmError> {
        let k = self.config.settings.retrieval_k;
        if k == 0 {
            return Ok(vec![]);
        }
        let q = self.gateway.embed(&self.config.intent).await?;
        let profiles = &self.config.settings.profiles;
        let w = if fast { profiles.fast } else { profiles.slow };
        Ok(self.memory.retrieve(Some(&q), step, &w, k))
    }

    async fn perceive(&self, obs: &Observation, nodes: &[SimplifiedNode], step: u32) -> Result<(), LlmError> {
        for node in nodes {
            let segment = render_node(node);
            let user = fill(&self.prompts.perceive, &[("url", &obs.url), ("segment", segment.trim_end())]);
            let reply = self.complete("perceive", user, Expect::FreeText).await?;
            self.remember(MemoryKind::Observation, &reply, step).await?;
        }
        if let Some(e) = &obs.error_message {
            self.remember(MemoryKind::Observation, &error_memory(e), step).await?;
        }
        Ok(())
    }

    async fn plan(&self, obs: &Observation, step: u32) -> Result<String, LlmError> {
        let memories = self.retrieve(true, step).await?;
        let error = error_block(obs);
        let user = fill(
            &self.prompts.plan,
            &[
                ("persona", &self.config.persona.render()),
                ("intent", &self.config.intent),
                ("url", &obs.url),
                ("page", obs.page.trim_end()),
                ("memories", &memory_lines(&memories)),
                ("error", &error),
            ],
        );
        let plan = self.complete("plan", user, Expect::FreeText).await?;
        self.remember(MemoryKind::Plan, &plan, step).await?;
        Ok(plan)
    }

    async fn act(&self, obs: &Observation, plan: &str) -> Result<AgentAction, AgentError> {
        let error = error_block(obs);
        let user = fill(
            &self.prompts.act,
            &[
                ("persona", &self.config.persona.render()),
                ("intent", &self.config.intent),
                ("url", &obs.url),
                ("page", obs.page.trim_end()),
                ("clickables", &bullet_list(&obs.clickables)),
                ("inputs", &bullet_list(&obs.inputs)),
                ("plan", plan),
                ("error", &error),
            ],
        );
        let mut req = self.request("act", user, Expect::StructuredAction);
        let first = self.gateway.complete(req.clone()).await?;
        let problem = match parse_action(&first) {
            Ok(a) => return Ok(a),
            Err(p) => p,
        };
        tracing::info!(%problem, "action reply unusable, asking once more");
        req.purpose = "act_repair".into();
        req.messages.push(Message::assistant(first));
        req.messages.push(Message::user(fill(&self.prompts.act_repair, &[("problem", &problem)])));
        let second = self.gateway.complete(req).await?;
        parse_action(&second).map_err(AgentError::MalformedAction)
    }

    async fn wonder(&self, step: u32) -> Result<(), LlmError> {
        let memories = self.retrieve(true, step).await?;
        let user = fill(&self.prompts.wonder, &[("memories", &memory_lines(&memories))]);
        let thought = self.complete("wonder", user, Expect::FreeText).await?;
        let thought = thought.split_whitespace().collect::<Vec<_>>().join(" ");
        self.remember(MemoryKind::Wonder, &thought, step).await?;
        Ok(())
    }

    async fn reflect(&self, step: u32) -> Result<(), LlmError> {
        let memories = self.retrieve(false, step).await?;
        if memories.is_empty() {
            return Ok(());
        }
        let user = fill(&self.prompts.reflect, &[("memories", &memory_lines(&memories))]);
        let reply = self.complete("reflect", user, Expect::FreeText).await?;
        for line in reply.lines() {
            let line = line.trim().trim_start_matches(['-', '*', ' ']);
            let line = line.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')').trim();
            if !line.is_empty() {
                self.remember(MemoryKind::Reflection, line, step).await?;
            }
        }
        Ok(())
    }

    async fn slow_loop(self: Arc<Self>, step: u32, concurrent: bool) {
        let (w, r) = if concurrent {
            tokio::join!(self.wonder(step), self.reflect(step))
        } else {
            let w = self.wonder(step).await;
            (w, self.reflect(step).await)
        };
        for (what, res) in [("wonder", w), ("reflect", r)] {
            if let Err(e) = res {
                self.warn(format!("{what} at step {step} failed: {e}"));
            }
        }
    }
}

/// Text of the memory written for a failed action.
pub fn error_memory(message: &str) -> String {
    format!("The last action failed with this error: {message}")
}

fn error_block(obs: &Observation) -> String {
    match &obs.error_message {
        Some(e) => format!("Your last action failed: {e}\n"),
        None => String::new(),
    }
}

/// Items and prices on a recipe-marked confirmation page, if this is one.
pub fn detect_purchase(recipe: &Recipe, nodes: &[SimplifiedNode]) -> Option<(Vec<PurchasedItem>, Vec<String>)> {
    let spec = recipe.purchase.as_ref()?;
    let marker = find_named(nodes, &spec.marker)?;
    let texts = |local: &str| -> Vec<String> {
        marker
            .descendants()
            .into_iter()
            .filter(|n| n.local_name() == Some(local))
            .map(|n| n.text.clone().unwrap_or_default())
            .collect()
    };
    let names = texts(&spec.item_name);
    let prices = texts(&spec.item_price);
    let mut warnings = Vec::new();
    if names.len() != prices.len() {
        warnings.push(format!(
            "confirmation page lists {} item names but {} prices",
            names.len(),
            prices.len()
        ));
    }
    let mut items = Vec::new();
    for (name, price) in names.into_iter().zip(prices) {
        match Money::find_in(&price) {
            Some(p) => items.push(PurchasedItem { name, price: p }),
            None => warnings.push(format!("no amount in confirmation price {price:?}")),
        }
    }
    Some((items, warnings))
}

struct Run<'a> {
    ctx: Arc<Ctx>,
    target: &'a SessionTarget,
    cancel: &'a CancelFlag,
    actions: Vec<ActionRecord>,
    screenshots: Vec<Option<String>>,
    slow: Vec<JoinHandle<()>>,
}

impl Run<'_> {
    async fn drive(&mut self, session: &mut BrowserSession) -> Result<SessionOutcome, AgentError> {
        let ctx = self.ctx.clone();
        let settings = &ctx.config.settings;
        let mut step: u32 = 0;
        // Set when the last planned action was refused before dispatch: the
        // page has not changed, so it is not observed or perceived again.
        let mut carried: Option<Observation> = None;
        loop {
            if self.cancel.is_cancelled() {
                return Ok(SessionOutcome::error("interrupted before the session finished"));
            }
            let fresh = carried.is_none();
            let obs = match carried.take() {
                Some(o) => o,
                None => session.observe().await?,
            };
            let nodes = session.last_page().map(|p| p.nodes.clone()).unwrap_or_default();
            if fresh {
                if let Some(page) = session.last_page() {
                    for w in &page.warnings {
                        ctx.warn(format!("{}: {w}", obs.url));
                    }
                }
                if let Some((items, warnings)) = detect_purchase(session.recipe(), &nodes) {
                    for w in warnings {
                        ctx.warn(w);
                    }
                    return Ok(SessionOutcome::purchased(items));
                }
            }
            if step >= settings.max_steps {
                return Ok(SessionOutcome::other(OutcomeKind::MaxStepsReached, None));
            }
            step += 1;
            if let Some(o) = self.step(session, obs, &nodes, fresh, step, &mut carried).await? {
                return Ok(o);
            }
            if step % settings.slow_loop_every == 0 {
                let pass = ctx.clone().slow_loop(step, settings.concurrent_slow_loop);
                if settings.concurrent_slow_loop {
                    self.slow.push(tokio::spawn(pass));
                } else {
                    pass.await;
                }
            }
        }
    }

    async fn step(
        &mut self,
        session: &mut BrowserSession,
        obs: Observation,
        nodes: &[SimplifiedNode],
        fresh: bool,
        step: u32,
        carried: &mut Option<Observation>,
    ) -> Result<Option<SessionOutcome>, AgentError> {
        let ctx = &self.ctx;
        if fresh {
            ctx.perceive(&obs, nodes, step).await?;
        }
        let plan = ctx.plan(&obs, step).await?;
        let action = ctx.act(&obs, &plan).await?;

        if let Some(msg) = registry_error(&action, &obs) {
            ctx.remember(MemoryKind::Observation, &error_memory(&msg), step).await?;
            *carried = Some(Observation {
                error_message: Some(msg),
                ..obs
            });
            return Ok(None);
        }
        if action.kind == ActionKind::Terminate {
            session.execute(&action).await?;
            let detail = Some(action.description).filter(|d| !d.is_empty());
            return Ok(Some(SessionOutcome::other(OutcomeKind::Terminated, detail)));
        }

        let k = self.actions.len() + 1;
        ctx.remember(MemoryKind::Action, &action_memory_text(k, &action.description), step)
            .await?;
        let result = session.execute(&action).await?;
        let shot = match session.screenshot(&self.target.dir, k).await {
            Ok(path) => Some(path.file_name().unwrap().to_string_lossy().into_owned()),
            Err(e) => {
                ctx.warn(format!("screenshot for action {k} failed: {e}"));
                None
            }
        };
        self.screenshots.push(shot);
        self.actions.push(ActionRecord {
            index: k,
            action,
            result,
        });
        Ok(None)
    }
}

/// Runs one persona to completion and returns its record. Failures inside
/// the session become an `error` outcome; only an invalid config is an
/// `Err`.
pub async fn run_session(
    config: AgentConfig,
    gateway: Arc<Gateway>,
    target: &SessionTarget,
) -> Result<SessionRecord, AgentError> {
    run_session_with_cancel(config, gateway, target, &CancelFlag::default()).await
}

/// [`run_session`] that also stops, with an `error` outcome, once `cancel`
/// is set.
pub async fn run_session_with_cancel(
    config: AgentConfig,
    gateway: Arc<Gateway>,
    target: &SessionTarget,
    cancel: &CancelFlag,
) -> Result<SessionRecord, AgentError> {
    config.validate().map_err(AgentError::Config)?;
    let prompts = match &config.settings.prompts_dir {
        Some(dir) => Prompts::with_overrides(dir)
            .map_err(|e| AgentError::Config(format!("prompts_dir {}: {e}", dir.display())))?,
        None => Prompts::default(),
    };
    let system = fill(
        &prompts.system,
        &[("persona", &config.persona.render()), ("intent", &config.intent)],
    );
    let started = Utc::now();
    let ctx = Arc::new(Ctx {
        config,
        prompts,
        system,
        gateway,
        memory: Arc::new(MemoryStream::new()),
        warnings: Mutex::new(Vec::new()),
    });
    let mut run = Run {
        ctx: ctx.clone(),
        target,
        cancel,
        actions: Vec::new(),
        screenshots: Vec::new(),
        slow: Vec::new(),
    };

    let outcome = match BrowserSession::open(&target.browser, &target.url, target.recipe.clone()).await {
        Err(e) => SessionOutcome::error(format!("could not open the browser session: {e}")),
        Ok(mut session) => {
            let outcome = match run.drive(&mut session).await {
                Ok(o) => o,
                Err(e) => SessionOutcome::error(e.to_string()),
            };
            session.close().await;
            outcome
        }
    };
    for handle in std::mem::take(&mut run.slow) {
        if let Err(e) = handle.await {
            ctx.warn(format!("slow loop task failed: {e}"));
        }
    }
    let mut warnings = ctx.warnings.lock().unwrap().clone();
    warnings.extend(ctx.memory.warnings());
    Ok(SessionRecord {
        session_id: target.session_id.clone(),
        persona: ctx.config.persona.clone(),
        config: ctx.config.clone(),
        target_url: target.url.clone(),
        recipe_id: target.recipe.id.clone(),
        actions: run.actions,
        memories: ctx.memory.export_trace(),
        screenshots: run.screenshots,
        outcome,
        warnings,
        started,
        ended: Utc::now(),
    })
}

/// Persists `record.json` and `memory.jsonl` into `dir`.
pub fn save_session(record: &SessionRecord, dir: &Path) -> Result<(), crate::record::RecordError> {
    let io = |e: std::io::Error| crate::record::RecordError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    record.save(&dir.join("record.json"))?;
    let mut jsonl = String::new();
    for m in &record.memories {
        jsonl.push_str(&serde_json::to_string(m).expect("memory serializes"));
        jsonl.push('\n');
    }
    std::fs::write(dir.join("memory.jsonl"), jsonl).map_err(io)
}
