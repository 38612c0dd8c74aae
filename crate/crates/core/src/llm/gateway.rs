use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::provider::{OpenAiProvider, Provider};
use super::ratelimit::{RateLimiter, SystemClock};
use super::stub::{StubScript, StubState};
use super::transcript::{Recorder, ReplayIndex, TranscriptEntry};
use super::{hash_embed, CompletionRequest, EmbeddingSource, LlmConfig, LlmError};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatewayMode {
    Live,
    Stub,
    Record,
    Replay,
}

/// A prompt as sent, with what came back.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedPrompt {
    pub request: CompletionRequest,
    pub reply: Result<String, LlmError>,
}

struct Shared {
    mode: GatewayMode,
    provider: Option<Arc<dyn Provider>>,
    limiter: Option<RateLimiter>,
    recorder: Option<Recorder>,
    replay: Option<Mutex<ReplayIndex>>,
    script: StubScript,
    retry: RetryPolicy,
    embeddings: EmbeddingSource,
    temperature: f64,
    max_tokens: u32,
    provider_calls: AtomicU64,
}

/// Entry point for every model call. Cheap to [`fork`](Gateway::fork): forks
/// share the provider, limiter and transcript but get their own stub
/// playback position and prompt capture.
pub struct Gateway {
    shared: Arc<Shared>,
    stub: Mutex<StubState>,
    captures: Mutex<Vec<CapturedPrompt>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("mode", &self.shared.mode).finish()
    }
}

fn embed_digest(text: &str) -> String {
    hex::encode(Sha256::digest(format!("embed\n{text}").as_bytes()))
}

fn retryable(e: &LlmError) -> bool {
    match e {
        LlmError::Transport { .. } => true,
        LlmError::Provider { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Gateway {
    fn build(
        mode: GatewayMode,
        provider: Option<Arc<dyn Provider>>,
        config: &LlmConfig,
        recorder: Option<Recorder>,
        replay: Option<ReplayIndex>,
        script: StubScript,
    ) -> Self {
        let limiter = match (mode, config.requests_per_second) {
            (GatewayMode::Live | GatewayMode::Record, Some(rps)) if rps > 0.0 => {
                Some(RateLimiter::new(rps, 1.0, Arc::new(SystemClock::default())))
            }
            _ => None,
        };
        let stub = Mutex::new(StubState::new(&script));
        let shared = Shared {
            mode,
            provider,
            limiter,
            recorder,
            replay: replay.map(Mutex::new),
            script,
            retry: RetryPolicy {
                retries: config.retries,
                initial_backoff: Duration::from_millis(config.backoff_ms),
            },
            embeddings: config.embeddings,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            provider_calls: AtomicU64::new(0),
        };
        Gateway {
            shared: Arc::new(shared),
            stub,
            captures: Mutex::new(Vec::new()),
        }
    }

    /// Answers from a script; never touches the network.
    pub fn stub(script: StubScript) -> Self {
        Self::stub_with_config(script, &LlmConfig::default())
    }

    pub fn stub_with_config(script: StubScript, config: &LlmConfig) -> Self {
        Self::build(GatewayMode::Stub, None, config, None, None, script)
    }

    pub fn live(provider: Arc<dyn Provider>, config: &LlmConfig) -> Self {
        Self::build(GatewayMode::Live, Some(provider), config, None, None, StubScript::default())
    }

    /// Live calls, each one appended to the transcript at `path`.
    pub fn record(provider: Arc<dyn Provider>, config: &LlmConfig, path: &Path) -> Result<Self, LlmError> {
        let recorder = Recorder::create(path)?;
        Ok(Self::build(
            GatewayMode::Record,
            Some(provider),
            config,
            Some(recorder),
            None,
            StubScript::default(),
        ))
    }

    /// Answers only from the transcript at `path`.
    pub fn replay(config: &LlmConfig, path: &Path) -> Result<Self, LlmError> {
        let index = ReplayIndex::load(path)?;
        Ok(Self::build(GatewayMode::Replay, None, config, None, Some(index), StubScript::default()))
    }

    /// Live provider from configuration.
    pub fn openai(config: &LlmConfig) -> Result<Self, LlmError> {
        Ok(Self::live(Arc::new(OpenAiProvider::from_config(config)?), config))
    }

    /// A gateway for one session: shared transport, fresh stub playback
    /// (using the persona's section of the script when there is one) and
    /// an empty prompt capture.
    pub fn fork(&self, persona: Option<&str>) -> Gateway {
        Gateway {
            shared: self.shared.clone(),
            stub: Mutex::new(StubState::new(&self.shared.script.for_persona(persona))),
            captures: Mutex::new(Vec::new()),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.shared.mode
    }

    pub fn temperature(&self) -> f64 {
        self.shared.temperature
    }

    pub fn max_tokens(&self) -> u32 {
        self.shared.max_tokens
    }

    /// Provider round trips made through this gateway and its forks.
    pub fn provider_calls(&self) -> u64 {
        self.shared.provider_calls.load(Ordering::SeqCst)
    }

    /// Prompts sent through this gateway (not its forks), oldest first.
    pub fn captures(&self) -> Vec<CapturedPrompt> {
        self.captures.lock().unwrap().clone()
    }

    /// Captured prompts for one purpose.
    pub fn captures_for(&self, purpose: &str) -> Vec<CapturedPrompt> {
        self.captures()
            .into_iter()
            .filter(|c| c.request.purpose == purpose)
            .collect()
    }

    fn provider(&self) -> Result<&Arc<dyn Provider>, LlmError> {
        self.shared
            .provider
            .as_ref()
            .ok_or_else(|| LlmError::Config("no provider configured".into()))
    }

    async fn with_retries<T, F, Fut>(&self, mut call: F) -> Result<T, LlmError>
    where
        F: FnMut() -> Fut,
        Fut: std::future::Future<Output = Result<T, LlmError>>,
    {
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.shared.limiter {
                l.acquire().await;
            }
            self.shared.provider_calls.fetch_add(1, Ordering::SeqCst);
            match call().await {
                Ok(v) => return Ok(v),
                Err(e) if retryable(&e) && attempt < self.shared.retry.retries => {
                    tracing::warn!(attempt, error = %e, "provider call failed, retrying");
                    tokio::time::sleep(self.shared.retry.backoff(attempt)).await;
                    attempt += 1;
                }
                Err(LlmError::Transport { message, .. }) => {
                    return Err(LlmError::Transport {
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    async fn dispatch(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        match self.shared.mode {
            GatewayMode::Stub => self.stub.lock().unwrap().reply(req),
            GatewayMode::Replay => {
                let digest = req.digest();
                let entry = self.shared.replay.as_ref().and_then(|r| r.lock().unwrap().next(&digest));
                match entry {
                    Some(TranscriptEntry::Complete { reply, .. }) => Ok(reply),
                    _ => Err(LlmError::ReplayMiss {
                        digest,
                        purpose: req.purpose.clone(),
                    }),
                }
            }
            GatewayMode::Live | GatewayMode::Record => {
                let provider = self.provider()?.clone();
                let reply = self.with_retries(|| provider.complete(req)).await?;
                if let Some(rec) = &self.shared.recorder {
                    rec.write(&TranscriptEntry::Complete {
                        digest: req.digest(),
                        purpose: req.purpose.clone(),
                        reply: reply.clone(),
                    })?;
                }
                Ok(reply)
            }
        }
    }

    pub async fn complete(&self, req: CompletionRequest) -> Result<String, LlmError> {
        req.validate()?;
        let reply = self.dispatch(&req).await;
        self.captures.lock().unwrap().push(CapturedPrompt {
            request: req,
            reply: reply.clone(),
        });
        reply
    }

    pub async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        if self.shared.embeddings == EmbeddingSource::Hash || self.shared.mode == GatewayMode::Stub {
            return Ok(hash_embed(text));
        }
        let digest = embed_digest(text);
        if self.shared.mode == GatewayMode::Replay {
            let entry = self.shared.replay.as_ref().and_then(|r| r.lock().unwrap().next(&digest));
            return match entry {
                Some(TranscriptEntry::Embed { embedding, .. }) => Ok(embedding),
                _ => Err(LlmError::ReplayMiss {
                    digest,
                    purpose: "embed".into(),
                }),
            };
        }
        let provider = self.provider()?.clone();
        let v = self.with_retries(|| provider.embed(text)).await?;
        if let Some(rec) = &self.shared.recorder {
            rec.write(&TranscriptEntry::Embed {
                digest,
                embedding: v.clone(),
            })?;
        }
        Ok(v)
    }
}
