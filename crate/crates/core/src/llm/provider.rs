//! Chat-completion providers.

use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{CompletionRequest, LlmConfig, LlmError, Role};

/// One attempt at a provider call. Retries and rate limiting live in the
/// gateway.
#[async_trait]
pub trait Provider: Send + Sync {
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
    async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError>;
}

/// Any endpoint speaking the OpenAI chat-completions and embeddings API.
pub struct OpenAiProvider {
    http: reqwest::Client,
    endpoint: String,
    model: String,
    embedding_model: Option<String>,
    api_key: Option<String>,
}

impl OpenAiProvider {
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        let model = config
            .model
            .clone()
            .ok_or_else(|| LlmError::Config("llm.model is required for live calls".into()))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(OpenAiProvider {
            http,
            endpoint: config.endpoint.trim_end_matches('/').to_string(),
            model,
            embedding_model: config.embedding_model.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value, LlmError> {
        let mut req = self.http.post(format!("{}{path}", self.endpoint)).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| LlmError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| LlmError::Transport {
            attempts: 1,
            message: e.to_string(),
        })?;
        if !status.is_success() {
            return Err(LlmError::Provider {
                status: status.as_u16(),
                message: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Provider {
            status: status.as_u16(),
            message: format!("unparseable response: {e}"),
        })
    }
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

#[async_trait]
impl Provider for OpenAiProvider {
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let mut messages = vec![json!({ "role": "system", "content": req.system })];
        messages.extend(
            req.messages
                .iter()
                .map(|m| json!({ "role": role_name(m.role), "content": m.content })),
        );
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let v = self.post("/chat/completions", body).await?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::Provider {
                status: 200,
                message: "response has no choices[0].message.content".into(),
            })
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        let model = self
            .embedding_model
            .as_deref()
            .ok_or_else(|| LlmError::Config("llm.embedding_model is required for provider embeddings".into()))?;
        let v = self.post("/embeddings", json!({ "model": model, "input": text })).await?;
        v.pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).map(|x| x as f32).collect())
            .ok_or_else(|| LlmError::Provider {
                status: 200,
                message: "response has no data[0].embedding".into(),
            })
    }
}
