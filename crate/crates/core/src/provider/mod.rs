//! LLM backend abstraction with content-addressed record/replay.
//!
//! Every call is keyed by a SHA-256 digest over the rendered prompt, the
//! payload, the attachment digests, the generation settings and a call index.
//! In `record` mode live replies are persisted as `transcripts/{key}.json`;
//! `replay` serves them back without touching the transport.

mod cost;
mod store;
pub mod transport;

use std::str::FromStr;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cost::{accumulate_cost, CostReport};
pub use store::ReplayStore;
pub use transport::{HttpTransport, ProviderReply, Transport, TransportError};

use crate::prompt::{PromptBundle, Stage};

pub const MODE_VAR: &str = "WORKBENCH_MODE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasoningEffort {
    Low,
    Medium,
    High,
}

impl ReasoningEffort {
    pub fn label(self) -> &'static str {
        match self {
            ReasoningEffort::Low => "low",
            ReasoningEffort::Medium => "medium",
            ReasoningEffort::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    /// USD per million input tokens.
    pub input_per_1m: Decimal,
    /// USD per million output tokens (reasoning tokens are billed as output).
    pub output_per_1m: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model_id: String,
    pub reasoning_effort: ReasoningEffort,
    pub temperature: f64,
    pub price_table: PriceTable,
}

impl Default for ProviderConfig {
    /// The model and generation settings of the original runs. Prices are the
    /// batch tier (USD 0.625 / 5.00 per million tokens).
    fn default() -> Self {
        ProviderConfig {
            model_id: "gpt-5-2025-08-07".into(),
            reasoning_effort: ReasoningEffort::High,
            temperature: 1.0,
            price_table: PriceTable {
                input_per_1m: Decimal::new(625, 3),
                output_per_1m: Decimal::new(500, 2),
            },
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ProviderError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.price_table.input_per_1m.is_sign_negative()
            || self.price_table.output_per_1m.is_sign_negative()
        {
            return Err(ProviderError::InvalidConfig("prices must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Record,
    Replay,
}

impl ProviderMode {
    pub fn label(self) -> &'static str {
        match self {
            ProviderMode::Live => "live",
            ProviderMode::Record => "record",
            ProviderMode::Replay => "replay",
        }
    }

    /// `WORKBENCH_MODE` wins over `fallback` when set.
    pub fn from_env_or(fallback: ProviderMode) -> Result<ProviderMode, ProviderError> {
        match std::env::var(MODE_VAR) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(fallback),
        }
    }
}

impl FromStr for ProviderMode {
    type Err = ProviderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "live" => Ok(ProviderMode::Live),
            "record" => Ok(ProviderMode::Record),
            "replay" => Ok(ProviderMode::Replay),
            other => Err(ProviderError::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub reasoning_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachmentDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestSummary {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
    pub attachment_digests: Vec<AttachmentDigest>,
    pub call_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub key: String,
    pub request_summary: RequestSummary,
    pub response_text: String,
    pub usage: Usage,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo: Option<serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider call failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: TransportError },
    #[error("no stored transcript for key {0}")]
    ReplayMiss(String),
    #[error("live mode needs a credential in WORKBENCH_API_KEY")]
    AuthMissing,
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
    #[error("replay store: {0}")]
    Store(#[from] std::io::Error),
    #[error("corrupt transcript {path}: {message}")]
    CorruptTranscript { path: String, message: String },
}

/// Packs a plan position and an attempt number into one call index.
pub fn call_index(ordinal: u32, attempt: u32) -> u64 {
    (u64::from(ordinal) << 32) | u64::from(attempt)
}

fn feed(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

pub fn transcript_key(bundle: &PromptBundle, config: &ProviderConfig, call_index: u64) -> String {
    let mut h = Sha256::new();
    feed(&mut h, b"workbench-transcript-v1");
    feed(&mut h, format!("{:?}", bundle.stage).as_bytes());
    feed(&mut h, bundle.system_text.as_bytes());
    feed(&mut h, bundle.input_payload.as_bytes());
    h.update((bundle.attachments.len() as u64).to_le_bytes());
    for doc in &bundle.attachments {
        feed(&mut h, doc.name.as_bytes());
        feed(&mut h, doc.media_kind.mime().as_bytes());
        feed(&mut h, doc.digest().as_bytes());
    }
    feed(&mut h, config.model_id.as_bytes());
    feed(&mut h, config.reasoning_effort.label().as_bytes());
    h.update(config.temperature.to_bits().to_le_bytes());
    h.update(call_index.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(2),
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Shared entry point for all model calls.
pub struct Gateway {
    config: ProviderConfig,
    mode: ProviderMode,
    store: Option<ReplayStore>,
    transport: Option<Arc<dyn Transport>>,
    retry: RetryPolicy,
    parallelism: usize,
    live_slots: Semaphore,
    clock: fn() -> DateTime<Utc>,
}

impl Gateway {
    pub const DEFAULT_PARALLELISM: usize = 4;

    pub fn new(config: ProviderConfig, mode: ProviderMode) -> Self {
        Gateway {
            config,
            mode,
            store: None,
            transport: None,
            retry: RetryPolicy::default(),
            parallelism: Self::DEFAULT_PARALLELISM,
            live_slots: Semaphore::new(Self::DEFAULT_PARALLELISM),
            clock: Utc::now,
        }
    }

    pub fn with_store(mut self, store: ReplayStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = Some(transport);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self.live_slots = Semaphore::new(self.parallelism);
        self
    }

    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn mode(&self) -> ProviderMode {
        self.mode
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn store(&self) -> Option<&ReplayStore> {
        self.store.as_ref()
    }

    pub fn key(&self, bundle: &PromptBundle, call_index: u64) -> String {
        transcript_key(bundle, &self.config, call_index)
    }

    pub fn complete(&self, bundle: &PromptBundle, call_index: u64) -> Result<Transcript, ProviderError> {
        let key = self.key(bundle, call_index);
        match self.mode {
            ProviderMode::Replay => {
                let store = self.store.as_ref().ok_or_else(|| ProviderError::ReplayMiss(key.clone()))?;
                store.get(&key)?.ok_or(ProviderError::ReplayMiss(key))
            }
            ProviderMode::Live => self.call_live(bundle, call_index, key),
            ProviderMode::Record => {
                let store = self.store.as_ref().ok_or_else(|| {
                    ProviderError::InvalidConfig("record mode needs a replay store".into())
                })?;
                let transcript = self.call_live(bundle, call_index, key)?;
                store.put(&transcript)?;
                Ok(transcript)
            }
        }
    }

    fn call_live(&self, bundle: &PromptBundle, call_index: u64, key: String) -> Result<Transcript, ProviderError> {
        self.config.validate()?;
        let transport = self.transport.as_ref().ok_or(ProviderError::AuthMissing)?;
        if !transport.has_credential() {
            return Err(ProviderError::AuthMissing);
        }
        let _slot = self.live_slots.acquire();
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 0;
        let reply = loop {
            attempt += 1;
            match transport.send(bundle, &self.config, call_index) {
                Ok(reply) => break reply,
                Err(err) if err.is_retryable() && attempt < self.retry.attempts => {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(last) => return Err(ProviderError::Transport { attempts: attempt, last }),
            }
        };
        let mut usage = reply.usage;
        usage.reasoning_tokens = usage.reasoning_tokens.min(usage.output_tokens);
        Ok(Transcript {
            key,
            request_summary: RequestSummary {
                stage: bundle.stage,
                setting: bundle.setting.map(|s| s.label()),
                attachment_digests: bundle
                    .attachments
                    .iter()
                    .map(|d| AttachmentDigest {
                        name: d.name.clone(),
                        sha256: d.digest(),
                    })
                    .collect(),
                call_index,
            },
            response_text: reply.text,
            usage,
            created_at: (self.clock)(),
            echo: reply.echo,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BasePrompt, Nudge, PromptSetting};
    use crate::prompt::{Document, MediaKind};
    use std::sync::atomic::{AtomicUsize, Ordering};

    pub(crate) struct CountingTransport {
        pub calls: AtomicUsize,
        pub fail_first: usize,
        pub status: u16,
    }

    impl CountingTransport {
        pub fn ok() -> Self {
            CountingTransport { calls: AtomicUsize::new(0), fail_first: 0, status: 503 }
        }
    }

    impl Transport for CountingTransport {
        fn send(&self, bundle: &PromptBundle, _: &ProviderConfig, call_index: u64) -> Result<ProviderReply, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(TransportError::Http { status: self.status, body: "nope".into() });
            }
            Ok(ProviderReply {
                text: format!("reply {call_index} to {}", bundle.input_payload.len()),
                usage: Usage { input_tokens: 100, output_tokens: 10, reasoning_tokens: 8 },
                echo: None,
            })
        }
    }

    fn bundle() -> PromptBundle {
        crate::prompt::build_stage_two_prompt(
            PromptSetting::new(BasePrompt::FourStep, Nudge::Toward),
            &crate::prompt::tests::seed(),
            &["Chubin-Moitra-1975", "Price-1970", "Gilbert-Woolgar-1974"]
                .map(|n| Document::new(n, n.as_bytes().to_vec(), MediaKind::PlainText)),
        )
        .unwrap()
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { attempts: 3, initial_backoff: Duration::ZERO }
    }

    #[test]
    fn key_is_deterministic_and_index_sensitive() {
        let c = ProviderConfig::default();
        let b = bundle();
        assert_eq!(transcript_key(&b, &c, 0), transcript_key(&b, &c, 0));
        assert_ne!(transcript_key(&b, &c, 0), transcript_key(&b, &c, 1));
        let mut c2 = c.clone();
        c2.temperature = 0.0;
        assert_ne!(transcript_key(&b, &c, 0), transcript_key(&b, &c2, 0));
        let mut c3 = c.clone();
        c3.reasoning_effort = ReasoningEffort::Low;
        assert_ne!(transcript_key(&b, &c, 0), transcript_key(&b, &c3, 0));
        let mut b2 = b.clone();
        b2.attachments[1].bytes.push(b' ');
        assert_ne!(transcript_key(&b, &c, 0), transcript_key(&b2, &c, 0));
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let transport = Arc::new(CountingTransport::ok());
        let rec = Gateway::new(ProviderConfig::default(), ProviderMode::Record)
            .with_store(ReplayStore::open(dir.path()).unwrap())
            .with_transport(transport.clone());
        let t = rec.complete(&bundle(), 3).unwrap();
        assert!(dir.path().join(format!("{}.json", t.key)).exists());

        let replay_transport = Arc::new(CountingTransport::ok());
        let rep = Gateway::new(ProviderConfig::default(), ProviderMode::Replay)
            .with_store(ReplayStore::open(dir.path()).unwrap())
            .with_transport(replay_transport.clone());
        for _ in 0..10 {
            let r = rep.complete(&bundle(), 3).unwrap();
            assert_eq!(r.response_text, t.response_text);
            assert_eq!(r, t);
        }
        assert_eq!(replay_transport.calls.load(Ordering::SeqCst), 0);

        let mut mutated = bundle();
        mutated.system_text = mutated.system_text.replacen(
            " A nod to a critical source may mute that critique, acknowledging it only to push it aside.",
            "",
            1,
        );
        assert_ne!(mutated.system_text, bundle().system_text);
        assert!(matches!(rep.complete(&mutated, 3), Err(ProviderError::ReplayMiss(_))));
    }

    #[test]
    fn live_without_credential() {
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live)
            .with_transport(Arc::new(HttpTransport::new("http://127.0.0.1:9", None)));
        assert!(matches!(g.complete(&bundle(), 0), Err(ProviderError::AuthMissing)));
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live);
        assert!(matches!(g.complete(&bundle(), 0), Err(ProviderError::AuthMissing)));
    }

    #[test]
    fn transport_errors_are_retried_then_surfaced() {
        let t = Arc::new(CountingTransport { calls: AtomicUsize::new(0), fail_first: 2, status: 503 });
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live)
            .with_transport(t.clone())
            .with_retry(fast());
        assert!(g.complete(&bundle(), 0).is_ok());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);

        let t = Arc::new(CountingTransport { calls: AtomicUsize::new(0), fail_first: 10, status: 500 });
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live)
            .with_transport(t.clone())
            .with_retry(fast());
        match g.complete(&bundle(), 0) {
            Err(ProviderError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("{other:?}"),
        }

        // client errors are not retried
        let t = Arc::new(CountingTransport { calls: AtomicUsize::new(0), fail_first: 10, status: 400 });
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live)
            .with_transport(t.clone())
            .with_retry(fast());
        assert!(g.complete(&bundle(), 0).is_err());
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::default();
        c.validate().unwrap();
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        let mut c = ProviderConfig::default();
        c.price_table.input_per_1m = Decimal::new(-1, 0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn modes_parse() {
        assert_eq!("replay".parse::<ProviderMode>().unwrap(), ProviderMode::Replay);
        assert!("offline".parse::<ProviderMode>().is_err());
        assert_eq!(call_index(7, 1), (7u64 << 32) | 1);
    }
}
