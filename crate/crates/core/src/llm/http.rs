use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmBackendConfig, LlmError, RequestTag};

/// Environment variable holding the bearer token for chat-completion servers.
pub const API_KEY_ENV: &str = "CONVOFORGE_LLM_API_KEY";

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Chat-completions client: one user message carrying the prompt, the reply
/// is the first choice's message content.
#[derive(Debug, Clone)]
pub struct HttpLlm {
    config: LlmBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlm {
    pub fn new(config: LlmBackendConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(
        config: LlmBackendConfig,
        api_key: Option<String>,
    ) -> Result<Self, LlmError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    pub fn url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, prompt: &str, _tag: &RequestTag) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
        };
        let mut request = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Backend { status, body: text });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| LlmError::Backend {
            status,
            body: format!("unreadable completion ({e}): {text}"),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Backend {
                status,
                body: format!("completion has no message content: {text}"),
            })
    }
}
