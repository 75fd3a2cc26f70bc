//! Conditional log-probability of a target sentence given a story context.
//!
//! Only target tokens are scored; context tokens are conditioned on. All
//! values are natural-log. Causal backends use the chain rule, masked
//! backends use pseudo-log-likelihood (mask one target position at a time,
//! everything else visible), prompted backends ask the model for a number.

mod reference;
mod remote;
mod tokenize;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use reference::{ReferenceKind, ReferenceModel, ReferenceSpec, BOS, EOS};
pub use remote::{
    parse_probability_reply, render_prompt, PromptedClient, RemoteError, RemoteMode, RemoteScorer,
    DEFAULT_PROMPT_TEMPLATE,
};
pub use tokenize::reference_tokenize;

use crate::stimuli::StimulusItem;
use crate::Condition;

/// Backend kind, also recorded as the scoring mode of every score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BackendKind {
    Causal,
    Masked,
    Prompted,
    Reference,
}

pub type ScoreMode = BackendKind;

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Causal => "CAUSAL",
            BackendKind::Masked => "MASKED",
            BackendKind::Prompted => "PROMPTED",
            BackendKind::Reference => "REFERENCE",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CAUSAL" => Ok(BackendKind::Causal),
            "MASKED" => Ok(BackendKind::Masked),
            "PROMPTED" => Ok(BackendKind::Prompted),
            "REFERENCE" => Ok(BackendKind::Reference),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    60
}

/// Declarative description of one scoring backend, as written in the run config.
///
/// A backend is remote iff `endpoint` is set. `PROMPTED` backends must be
/// remote; `REFERENCE` backends must not be. Local `CAUSAL` / `MASKED`
/// backends are driven by a reference table given in `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub kind: BackendKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub max_context_tokens: usize,
    /// Model family used to group backends in the HS analysis. Defaults to `model_name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// The adapter must not be called concurrently.
    #[serde(default)]
    pub serial: bool,
}

impl BackendDescriptor {
    pub fn new(backend_id: impl Into<String>, kind: BackendKind, model_name: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind,
            model_name: model_name.into(),
            endpoint: None,
            max_context_tokens: 4096,
            family: None,
            reference: None,
            prompt_template: None,
            api_key_env: None,
            epsilon: default_epsilon(),
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            serial: false,
        }
    }

    pub fn is_remote(&self) -> bool {
        self.endpoint.is_some()
    }

    pub fn family(&self) -> &str {
        self.family.as_deref().unwrap_or(&self.model_name)
    }

    fn config_error(&self, message: impl Into<String>) -> ScoreError {
        ScoreError::Config {
            backend_id: self.backend_id.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.backend_id.trim().is_empty() {
            return Err(self.config_error("backend_id must be non-empty"));
        }
        if self.max_context_tokens == 0 {
            return Err(self.config_error("max_context_tokens must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(self.config_error(format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        match (self.kind, &self.endpoint) {
            (BackendKind::Prompted, None) => Err(self.config_error("PROMPTED backends require an endpoint")),
            (BackendKind::Reference, Some(_)) => Err(self.config_error("REFERENCE backends are in-process; remove endpoint")),
            (_, Some(url)) => Url::parse(url)
                .map(|_| ())
                .map_err(|e| self.config_error(format!("bad endpoint '{url}': {e}"))),
            (_, None) if self.reference.is_none() => Err(self.config_error(
                "local backends need a reference table (set `reference`) or an endpoint",
            )),
            _ => Ok(()),
        }
    }
}

/// Failure of a single model lookup, before backend attribution.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("zero probability for token '{token}' (history '{history}')")]
    ZeroProbability { token: String, history: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("backend {backend_id}: configuration error: {message}")]
    Config { backend_id: String, message: String },
    #[error("backend {backend_id}: {kind} backend cannot serve {requested} scoring")]
    WrongKind {
        backend_id: String,
        kind: BackendKind,
        requested: &'static str,
    },
    #[error("backend {backend_id}: empty target")]
    EmptyTarget { backend_id: String },
    #[error("backend {backend_id}: context window overflow: {needed} tokens exceed limit {limit}")]
    ContextOverflow {
        backend_id: String,
        needed: usize,
        limit: usize,
    },
    #[error("backend {backend_id}: {source}")]
    Model {
        backend_id: String,
        #[source]
        source: ModelError,
    },
    #[error("backend {backend_id}: invalid log-probability {value} at target token {index}")]
    InvalidLogprob {
        backend_id: String,
        index: usize,
        value: f64,
    },
    #[error("backend {backend_id}: transport error after {retries} retries: {message}")]
    Transport {
        backend_id: String,
        retries: u32,
        message: String,
    },
    #[error("backend {backend_id}: protocol error: {message} (raw reply: {raw:?})")]
    Protocol {
        backend_id: String,
        message: String,
        raw: String,
    },
}

impl ScoreError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ScoreError::Transport { .. })
    }

    fn from_remote(backend_id: &str, err: RemoteError) -> Self {
        match err {
            RemoteError::Transport { retries, message } => ScoreError::Transport {
                backend_id: backend_id.to_string(),
                retries,
                message,
            },
            RemoteError::Protocol { message, raw } => ScoreError::Protocol {
                backend_id: backend_id.to_string(),
                message,
                raw,
            },
        }
    }
}

/// Left-to-right language model.
pub trait CausalModel: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    /// Natural-log probability of `token` immediately following `history`.
    fn next_token_logprob(&self, history: &[String], token: &str) -> Result<f64, ModelError>;
}

/// Cloze-style model that predicts one masked position.
pub trait MaskedModel: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn mask_token(&self) -> Option<&str>;

    /// Natural-log probability that the masked slot at `position` of
    /// `masked` holds `expected`. Exactly one position is masked.
    fn masked_token_logprob(&self, masked: &[String], position: usize, expected: &str) -> Result<f64, ModelError>;
}

enum Engine {
    Local(ReferenceModel),
    Remote(RemoteScorer),
    Prompted(PromptedClient),
}

/// A backend built from its descriptor and ready to score.
pub struct Backend {
    descriptor: BackendDescriptor,
    engine: Engine,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backend").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

impl Backend {
    /// Build a backend. Relative `reference` paths resolve against `base_dir`.
    pub fn from_descriptor(descriptor: BackendDescriptor, base_dir: &Path) -> Result<Self, ScoreError> {
        descriptor.validate()?;
        let timeout = Duration::from_secs(descriptor.timeout_secs);
        let engine = match (&descriptor.endpoint, descriptor.kind) {
            (Some(url), BackendKind::Prompted) => {
                let api_key = match &descriptor.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        descriptor.config_error(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                let endpoint = Url::parse(url).map_err(|e| descriptor.config_error(e.to_string()))?;
                Engine::Prompted(
                    PromptedClient::new(
                        endpoint,
                        descriptor.model_name.clone(),
                        descriptor.prompt_template.clone(),
                        api_key,
                        timeout,
                        descriptor.max_retries,
                    )
                    .map_err(|e| descriptor.config_error(e))?,
                )
            }
            (Some(url), _) => {
                let endpoint = Url::parse(url).map_err(|e| descriptor.config_error(e.to_string()))?;
                Engine::Remote(
                    RemoteScorer::new(endpoint, descriptor.model_name.clone(), timeout, descriptor.max_retries)
                        .map_err(|e| descriptor.config_error(e))?,
                )
            }
            (None, _) => {
                let rel = descriptor.reference.as_ref().expect("validated");
                let path = if rel.is_absolute() { rel.clone() } else { base_dir.join(rel) };
                let model = ReferenceModel::load(&path).map_err(|e| descriptor.config_error(e.to_string()))?;
                return Self::with_reference(descriptor, model);
            }
        };
        Ok(Self { descriptor, engine })
    }

    /// Wrap an in-memory reference model. The descriptor must not name an endpoint.
    pub fn with_reference(descriptor: BackendDescriptor, model: ReferenceModel) -> Result<Self, ScoreError> {
        if descriptor.endpoint.is_some() || descriptor.kind == BackendKind::Prompted {
            return Err(descriptor.config_error("in-process reference models cannot be remote or prompted"));
        }
        if descriptor.max_context_tokens == 0 {
            return Err(descriptor.config_error("max_context_tokens must be positive"));
        }
        let compatible = match descriptor.kind {
            BackendKind::Causal => model.kind() != ReferenceKind::MaskedTable,
            BackendKind::Masked => model.kind() == ReferenceKind::MaskedTable,
            _ => true,
        };
        if !compatible {
            return Err(descriptor.config_error(format!(
                "{} backend cannot use a {:?} reference table",
                descriptor.kind,
                model.kind()
            )));
        }
        Ok(Self {
            descriptor,
            engine: Engine::Local(model),
        })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn id(&self) -> &str {
        &self.descriptor.backend_id
    }

    /// The scoring route `score_item` dispatches to.
    pub fn route(&self) -> BackendKind {
        match (&self.engine, self.descriptor.kind) {
            (Engine::Local(m), BackendKind::Reference) if m.kind() == ReferenceKind::MaskedTable => BackendKind::Masked,
            (Engine::Local(_), BackendKind::Reference) => BackendKind::Causal,
            (_, kind) => kind,
        }
    }

    fn wrong_kind(&self, requested: &'static str) -> ScoreError {
        ScoreError::WrongKind {
            backend_id: self.id().to_string(),
            kind: self.descriptor.kind,
            requested,
        }
    }

    fn model_error(&self, source: ModelError) -> ScoreError {
        ScoreError::Model {
            backend_id: self.id().to_string(),
            source,
        }
    }
}

/// Log-probability of a target given a context, before item attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScore {
    /// Per-target-token natural-log probabilities, in target order.
    pub token_logprobs: Vec<f64>,
    pub logprob_total: f64,
    pub token_count: usize,
    pub mode: ScoreMode,
}

impl TargetScore {
    fn from_logprobs(backend_id: &str, token_logprobs: Vec<f64>, mode: ScoreMode) -> Result<Self, ScoreError> {
        if token_logprobs.is_empty() {
            return Err(ScoreError::EmptyTarget {
                backend_id: backend_id.to_string(),
            });
        }
        for (index, &value) in token_logprobs.iter().enumerate() {
            // -inf is probability zero, which is a backend fault.
            if !value.is_finite() || value > 0.0 {
                return Err(ScoreError::InvalidLogprob {
                    backend_id: backend_id.to_string(),
                    index,
                    value,
                });
            }
        }
        let logprob_total = token_logprobs.iter().sum();
        Ok(Self {
            token_count: token_logprobs.len(),
            logprob_total,
            token_logprobs,
            mode,
        })
    }
}

/// One (backend, item, condition) scoring outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalScore {
    pub item_id: String,
    pub backend_id: String,
    pub condition: Condition,
    /// Natural log; for PROMPTED the log of the clamped elicited probability.
    pub logprob_total: f64,
    /// Target tokens only; 1 by convention for PROMPTED.
    pub token_count: usize,
    pub mode: ScoreMode,
}

fn tokenize_checked(
    backend: &Backend,
    tokenize: impl Fn(&str) -> Vec<String>,
    context: &str,
    target: &str,
) -> Result<(Vec<String>, usize), ScoreError> {
    let mut tokens = tokenize(context);
    let context_len = tokens.len();
    let target_tokens = tokenize(target);
    if target_tokens.is_empty() {
        return Err(ScoreError::EmptyTarget {
            backend_id: backend.id().to_string(),
        });
    }
    tokens.extend(target_tokens);
    let limit = backend.descriptor.max_context_tokens;
    if tokens.len() > limit {
        return Err(ScoreError::ContextOverflow {
            backend_id: backend.id().to_string(),
            needed: tokens.len(),
            limit,
        });
    }
    Ok((tokens, context_len))
}

/// Chain-rule score: sum over target tokens of log P(t_i | context, t_<i).
pub fn score_causal(context: &str, target: &str, backend: &Backend) -> Result<TargetScore, ScoreError> {
    if !matches!(backend.descriptor.kind, BackendKind::Causal | BackendKind::Reference) {
        return Err(backend.wrong_kind("causal"));
    }
    let mode = backend.descriptor.kind;
    match &backend.engine {
        Engine::Remote(client) => {
            let lps = client
                .token_logprobs(RemoteMode::Causal, context, target)
                .map_err(|e| ScoreError::from_remote(backend.id(), e))?;
            TargetScore::from_logprobs(backend.id(), lps, mode)
        }
        Engine::Local(model) => {
            if model.kind() == ReferenceKind::MaskedTable {
                return Err(backend.wrong_kind("causal"));
            }
            let (tokens, context_len) =
                tokenize_checked(backend, |t| CausalModel::tokenize(model, t), context, target)?;
            let lps = (context_len..tokens.len())
                .map(|i| model.next_token_logprob(&tokens[..i], &tokens[i]))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| backend.model_error(e))?;
            TargetScore::from_logprobs(backend.id(), lps, mode)
        }
        Engine::Prompted(_) => Err(backend.wrong_kind("causal")),
    }
}

/// Pseudo-log-likelihood: mask each target position in turn, context and the
/// rest of the target visible, and sum the log-probabilities of the originals.
pub fn score_masked(context: &str, target: &str, backend: &Backend) -> Result<TargetScore, ScoreError> {
    if !matches!(backend.descriptor.kind, BackendKind::Masked | BackendKind::Reference) {
        return Err(backend.wrong_kind("masked"));
    }
    let mode = backend.descriptor.kind;
    match &backend.engine {
        Engine::Remote(client) => {
            let lps = client
                .token_logprobs(RemoteMode::Masked, context, target)
                .map_err(|e| ScoreError::from_remote(backend.id(), e))?;
            TargetScore::from_logprobs(backend.id(), lps, mode)
        }
        Engine::Local(model) => {
            let mask = MaskedModel::mask_token(model)
                .ok_or_else(|| backend.descriptor.config_error("backend has no mask token"))?
                .to_string();
            let (tokens, context_len) =
                tokenize_checked(backend, |t| MaskedModel::tokenize(model, t), context, target)?;
            let mut masked = tokens.clone();
            let mut lps = Vec::with_capacity(tokens.len() - context_len);
            for pos in context_len..tokens.len() {
                masked[pos] = mask.clone();
                let lp = model.masked_token_logprob(&masked, pos, &tokens[pos]);
                masked[pos] = tokens[pos].clone();
                lps.push(lp.map_err(|e| backend.model_error(e))?);
            }
            TargetScore::from_logprobs(backend.id(), lps, mode)
        }
        Engine::Prompted(_) => Err(backend.wrong_kind("masked")),
    }
}

/// Ask the model for P(target | context) directly. The probability is clamped
/// to `[epsilon, 1]` before taking the log; `token_count` is 1.
pub fn score_prompted(context: &str, target: &str, backend: &Backend) -> Result<TargetScore, ScoreError> {
    let Engine::Prompted(client) = &backend.engine else {
        return Err(backend.wrong_kind("prompted"));
    };
    let p = client
        .elicit(context, target)
        .map_err(|e| ScoreError::from_remote(backend.id(), e))?;
    let clamped = p.clamp(backend.descriptor.epsilon, 1.0);
    Ok(TargetScore {
        token_logprobs: vec![clamped.ln()],
        logprob_total: clamped.ln(),
        token_count: 1,
        mode: BackendKind::Prompted,
    })
}

/// Score one item's target under both contexts. Returns `(SS, IS)`; if
/// either condition fails, the whole item fails.
pub fn score_item(item: &StimulusItem, backend: &Backend) -> Result<(ConditionalScore, ConditionalScore), ScoreError> {
    let score = |condition: Condition| -> Result<ConditionalScore, ScoreError> {
        let context = item.context(condition);
        let s = match backend.route() {
            BackendKind::Masked => score_masked(context, &item.target, backend)?,
            BackendKind::Prompted => score_prompted(context, &item.target, backend)?,
            _ => score_causal(context, &item.target, backend)?,
        };
        Ok(ConditionalScore {
            item_id: item.id.clone(),
            backend_id: backend.id().to_string(),
            condition,
            logprob_total: s.logprob_total,
            token_count: s.token_count,
            mode: s.mode,
        })
    };
    let ss = score(Condition::SS)?;
    let is = score(Condition::IS)?;
    Ok((ss, is))
}
