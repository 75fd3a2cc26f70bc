//! HTTP clients for out-of-process backends.
//!
//! Scoring servers accept `POST {mode, context, target, model}` and answer
//! `{"token_logprobs": [...]}` with natural-log probabilities of the target
//! tokens only. Prompted backends speak the common chat-completions shape.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::json;
use url::Url;

/// Default template for prompted probability elicitation.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "You are an AI model trained to compute conditional probabilities. Given the {context}, what is the probability that the following {target sentence} will occur next? Respond with ONLY a number from 0.0 to 1.0 and nothing else.";

#[derive(Debug, Clone, PartialEq)]
pub enum RemoteError {
    /// Network failure or non-200 status.
    Transport { retries: u32, message: String },
    /// The server answered but the payload breaks the protocol.
    Protocol { message: String, raw: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemoteMode {
    Causal,
    Masked,
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    mode: RemoteMode,
    context: &'a str,
    target: &'a str,
    model: &'a str,
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    token_logprobs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HttpPost {
    client: Client,
    endpoint: Url,
    max_retries: u32,
    bearer: Option<String>,
}

impl HttpPost {
    fn new(endpoint: Url, timeout: Duration, max_retries: u32, bearer: Option<String>) -> Result<Self, String> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            endpoint,
            max_retries,
            bearer,
        })
    }

    /// POST with retries on connection failures and 5xx answers.
    /// Returns the response body of a 200 reply.
    fn post(&self, body: &serde_json::Value) -> Result<String, RemoteError> {
        let mut attempt = 0;
        loop {
            let mut request = self.client.post(self.endpoint.clone()).json(body);
            if let Some(token) = &self.bearer {
                request = request.bearer_auth(token);
            }
            let retryable = match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| RemoteError::Transport {
                        retries: attempt,
                        message: e.to_string(),
                    })?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    let message = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
                    if !status.is_server_error() {
                        return Err(RemoteError::Transport {
                            retries: attempt,
                            message,
                        });
                    }
                    message
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.max_retries {
                return Err(RemoteError::Transport {
                    retries: attempt,
                    message: retryable,
                });
            }
            attempt += 1;
            tracing::warn!(endpoint = %self.endpoint, attempt, "retrying after: {retryable}");
            thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
        }
    }
}

/// Client for the minimal remote scoring protocol.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    http: HttpPost,
    model: String,
}

impl RemoteScorer {
    pub fn new(endpoint: Url, model: impl Into<String>, timeout: Duration, max_retries: u32) -> Result<Self, String> {
        Ok(Self {
            http: HttpPost::new(endpoint, timeout, max_retries, None)?,
            model: model.into(),
        })
    }

    pub fn token_logprobs(&self, mode: RemoteMode, context: &str, target: &str) -> Result<Vec<f64>, RemoteError> {
        let request = ScoreRequest {
            mode,
            context,
            target,
            model: &self.model,
        };
        let body = serde_json::to_value(&request).expect("request serializes");
        let raw = self.http.post(&body)?;
        let parsed: ScoreResponse = serde_json::from_str(&raw).map_err(|e| RemoteError::Protocol {
            message: format!("bad scoring response: {e}"),
            raw: raw.clone(),
        })?;
        if parsed.token_logprobs.is_empty() {
            return Err(RemoteError::Protocol {
                message: "token_logprobs is empty".into(),
                raw,
            });
        }
        Ok(parsed.token_logprobs)
    }
}

/// Chat-style client that asks a model to state P(target | context) directly.
#[derive(Debug, Clone)]
pub struct PromptedClient {
    http: HttpPost,
    model: String,
    template: String,
}

impl PromptedClient {
    pub fn new(
        endpoint: Url,
        model: impl Into<String>,
        template: Option<String>,
        api_key: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Result<Self, String> {
        Ok(Self {
            http: HttpPost::new(endpoint, timeout, max_retries, api_key)?,
            model: model.into(),
            template: template.unwrap_or_else(|| DEFAULT_PROMPT_TEMPLATE.to_string()),
        })
    }

    pub fn render(&self, context: &str, target: &str) -> String {
        render_prompt(&self.template, context, target)
    }

    /// Send the prompt and parse the reply as a probability in [0, 1].
    pub fn elicit(&self, context: &str, target: &str) -> Result<f64, RemoteError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": self.render(context, target)}],
        });
        let raw = self.http.post(&body)?;
        let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| RemoteError::Protocol {
            message: format!("bad chat response: {e}"),
            raw: raw.clone(),
        })?;
        let reply = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| RemoteError::Protocol {
                message: "missing choices[0].message.content".into(),
                raw: raw.clone(),
            })?;
        parse_probability_reply(reply).map_err(|message| RemoteError::Protocol {
            message,
            raw: reply.to_string(),
        })
    }
}

pub fn render_prompt(template: &str, context: &str, target: &str) -> String {
    template
        .replace("{context}", context)
        .replace("{target sentence}", target)
        .replace("{target}", target)
}

/// Strict reply grammar: optional surrounding whitespace around a single
/// plain decimal (`0`, `0.73`, `.5`, `1.0`). The value must lie in [0, 1].
pub fn parse_probability_reply(reply: &str) -> Result<f64, String> {
    let s = reply.trim();
    let digits = s.chars().filter(char::is_ascii_digit).count();
    let dots = s.chars().filter(|&c| c == '.').count();
    let well_formed = digits > 0 && dots <= 1 && s.chars().all(|c| c.is_ascii_digit() || c == '.');
    if !well_formed {
        return Err(format!("reply is not a single decimal number: {reply:?}"));
    }
    let p: f64 = s
        .parse()
        .map_err(|_| format!("reply is not a single decimal number: {reply:?}"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    Ok(p)
}
