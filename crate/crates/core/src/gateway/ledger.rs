//! Token accounting and dollar-cost computation.
//!
//! Tokens are tracked in four lanes: text-in, text-out, vision-in,
//! vision-out. Which lane a call lands in is decided by the backend's
//! modality, so a vision model's prompt text counts as vision input. Cost is
//! linear: Σ over backends of input/1e6·price_in + output/1e6·price_out,
//! with input = in_t + in_v and output = out_t + out_v.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::backend::BackendDescriptor;

/// Token counts for one call or one accumulated bucket.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    #[serde(default)]
    pub in_t: u64,
    #[serde(default)]
    pub out_t: u64,
    #[serde(default)]
    pub in_v: u64,
    #[serde(default)]
    pub out_v: u64,
}

impl TokenUsage {
    pub fn text(in_t: u64, out_t: u64) -> Self {
        TokenUsage { in_t, out_t, in_v: 0, out_v: 0 }
    }

    pub fn vision(in_v: u64, out_v: u64) -> Self {
        TokenUsage { in_t: 0, out_t: 0, in_v, out_v }
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.in_t = self.in_t.saturating_add(other.in_t);
        self.out_t = self.out_t.saturating_add(other.out_t);
        self.in_v = self.in_v.saturating_add(other.in_v);
        self.out_v = self.out_v.saturating_add(other.out_v);
    }

    /// Total input tokens (text + vision).
    pub fn input(&self) -> u64 {
        self.in_t.saturating_add(self.in_v)
    }

    /// Total output tokens (text + vision).
    pub fn output(&self) -> u64 {
        self.out_t.saturating_add(self.out_v)
    }

    pub fn total(&self) -> u64 {
        self.input().saturating_add(self.output())
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0
    }
}

/// Serializable ledger state: per-backend and per-role accumulated usage.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub per_backend: BTreeMap<String, TokenUsage>,
    pub per_role: BTreeMap<String, TokenUsage>,
    /// Dollar cost at snapshot time, when descriptors were available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_usd: Option<f64>,
}

impl LedgerSnapshot {
    /// Sum of every backend bucket.
    pub fn grand_total(&self) -> TokenUsage {
        let mut total = TokenUsage::default();
        for usage in self.per_backend.values() {
            total.add(*usage);
        }
        total
    }
}

/// Thread-safe accumulator. Each `record` is atomic: both maps update under
/// one lock, so concurrent panel refinements can never tear a ledger entry.
#[derive(Debug, Default)]
pub struct TokenLedger {
    inner: Mutex<LedgerSnapshot>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seed the ledger from a previous run's snapshot (resume path).
    pub fn from_snapshot(snapshot: LedgerSnapshot) -> Self {
        TokenLedger { inner: Mutex::new(LedgerSnapshot { cost_usd: None, ..snapshot }) }
    }

    pub fn record(&self, backend_id: &str, role_tag: &str, usage: TokenUsage) {
        let mut inner = self.inner.lock().expect("ledger poisoned");
        inner.per_backend.entry(backend_id.to_string()).or_default().add(usage);
        inner.per_role.entry(role_tag.to_string()).or_default().add(usage);
    }

    pub fn per_backend(&self) -> BTreeMap<String, TokenUsage> {
        self.inner.lock().expect("ledger poisoned").per_backend.clone()
    }

    pub fn per_role(&self) -> BTreeMap<String, TokenUsage> {
        self.inner.lock().expect("ledger poisoned").per_role.clone()
    }

    pub fn grand_total(&self) -> TokenUsage {
        let inner = self.inner.lock().expect("ledger poisoned");
        let mut total = TokenUsage::default();
        for usage in inner.per_backend.values() {
            total.add(*usage);
        }
        total
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().expect("ledger poisoned").clone()
    }

    /// Snapshot with the cost filled in from the given descriptors.
    pub fn snapshot_with_cost(&self, backends: &[BackendDescriptor]) -> Result<LedgerSnapshot> {
        let mut snap = self.snapshot();
        snap.cost_usd = Some(compute_cost(&snap.per_backend, backends)?);
        Ok(snap)
    }
}

/// Dollar cost of the accumulated usage, priced per million tokens.
///
/// Every backend id present in the ledger must have a descriptor; prices for
/// idle backends are irrelevant.
pub fn compute_cost(
    per_backend: &BTreeMap<String, TokenUsage>,
    backends: &[BackendDescriptor],
) -> Result<f64> {
    let mut cost = 0.0;
    for (id, usage) in per_backend {
        let desc = backends
            .iter()
            .find(|b| &b.id == id)
            .ok_or_else(|| Error::Config(format!("ledger references unknown backend '{id}'")))?;
        cost += usage.input() as f64 / 1e6 * desc.price_in;
        cost += usage.output() as f64 / 1e6 * desc.price_out;
    }
    Ok(cost)
}
