//! Message schema, wire codec, and the provider/requester session machines.
//!
//! Sessions are plain values. Each transition consumes one event and yields
//! [`Command`]s for the runtime to execute; a failed transition leaves the
//! session untouched.

mod exchange;
mod message;
mod provider;
mod requester;

use thiserror::Error;

use crate::ledger::{EntryKind, Ledger, MintRequest, PendingAgreement};
use crate::payments::{SplitPlan, UPFRONT_PURPOSE};
use crate::terms::{LicenseTerms, TermValue};

pub use exchange::{atomic_exchange, ExchangeWorld};
pub use message::{decode_message, decode_prefix, encode_message, validate_body, Action, ProtocolMessage};
pub use provider::{provider_transition, ProviderContext, ProviderDecision, ProviderEvent, ProviderSession, ProviderState};
pub use requester::{
    requester_transition, RequesterContext, RequesterEvent, RequesterSession, RequesterState,
};

pub const NO_TOKEN: &str = "No valid license token received.";
pub const NO_PAYMENT: &str = "Payment not confirmed by requester.";
pub const NO_TERMS: &str = "No terms received from provider.";
pub const NO_PAYMENT_REQUEST: &str = "Payment request not received.";
pub const NO_DELIVERY: &str = "Licensed IP not delivered.";
pub const NON_IP_REPLY: &str = "Content not considered IP; no license required.";
pub const NON_IP_LOG: &str = "Non-IP content sent without contract.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("exchange aborted: {0}")]
    AbortedExchange(String),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
}

fn violation(why: impl Into<String>) -> ProtocolError {
    ProtocolError::ProtocolViolation(why.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub negotiation_timeout_ticks: u64,
    pub settlement_timeout_ticks: u64,
    pub ack_required: bool,
    pub onchain_drafts: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            negotiation_timeout_ticks: 10,
            settlement_timeout_ticks: 30,
            ack_required: false,
            onchain_drafts: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.negotiation_timeout_ticks == 0 || self.settlement_timeout_ticks == 0 {
            return Err(ProtocolError::InvalidConfig("timeouts must be positive".into()));
        }
        Ok(())
    }
}

/// Details persisted by both parties when a licensed session completes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionRecord {
    pub requester_id: String,
    pub provider_id: String,
    pub content_id: String,
    pub terms_hash: String,
    pub license_id: String,
    pub acknowledged: bool,
}

impl TransactionRecord {
    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("acknowledged", TermValue::Bool(self.acknowledged)),
            ("content_id", self.content_id.as_str().into()),
            ("license_id", self.license_id.as_str().into()),
            ("provider_id", self.provider_id.as_str().into()),
            ("requester_id", self.requester_id.as_str().into()),
            ("terms_hash", self.terms_hash.as_str().into()),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Send(ProtocolMessage),
    /// Fires `TimerExpired(generation)` after `ticks`; older generations are stale.
    StartTimer { generation: u64, ticks: u64 },
    MintDraft { round: u32, terms: LicenseTerms },
    /// Commit the token and schedule `delivery` as one step.
    Exchange { agreement: PendingAgreement, delivery: ProtocolMessage },
    Settle { plan: SplitPlan },
    Mint(MintRequest),
    Log(String),
    RecordTransaction(TransactionRecord),
}

/// Ledger queries a provider needs while awaiting payment and token.
pub trait TokenVerifier {
    fn verify_pending(&self, agreement: &PendingAgreement, terms: &LicenseTerms) -> bool;
    /// Upfront-fee payments the payer has made within the session.
    fn upfront_paid(&self, session_id: &str, payer: &str) -> u128;
}

impl TokenVerifier for Ledger {
    fn verify_pending(&self, agreement: &PendingAgreement, terms: &LicenseTerms) -> bool {
        Ledger::verify_pending(self, agreement, terms)
    }

    fn upfront_paid(&self, session_id: &str, payer: &str) -> u128 {
        self.history(session_id)
            .into_iter()
            .filter(|e| e.kind == EntryKind::Payment)
            .filter(|e| e.payload.get_str("from") == Some(payer))
            .filter(|e| e.payload.get_str("purpose") == Some(UPFRONT_PURPOSE))
            .filter_map(|e| e.payload.get("amount").and_then(TermValue::as_u64))
            .map(u128::from)
            .sum()
    }
}

/// Sequencing and addressing for one side of a session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub session_id: String,
    pub local: String,
    pub remote: String,
    next_seq: u64,
    last_remote_seq: Option<u64>,
}

impl Channel {
    pub fn new(session_id: &str, local: &str, remote: &str) -> Self {
        Channel {
            session_id: session_id.to_owned(),
            local: local.to_owned(),
            remote: remote.to_owned(),
            next_seq: 0,
            last_remote_seq: None,
        }
    }

    fn outbound(&mut self, action: Action, body: TermValue) -> ProtocolMessage {
        let seq = self.next_seq;
        self.next_seq += 1;
        ProtocolMessage::new(&self.session_id, seq, &self.local, &self.remote, action, body)
    }

    fn send(&mut self, action: Action, body: TermValue) -> Command {
        Command::Send(self.outbound(action, body))
    }

    fn accept(&mut self, message: &ProtocolMessage) -> Result<(), ProtocolError> {
        if message.session_id != self.session_id || message.sender != self.remote || message.recipient != self.local {
            return Err(violation(format!("message not addressed to session {}", self.session_id)));
        }
        if self.last_remote_seq.is_some_and(|last| message.seq <= last) {
            return Err(violation(format!("replayed seq {}", message.seq)));
        }
        message.validate()?;
        self.last_remote_seq = Some(message.seq);
        Ok(())
    }
}

fn reject_body(reason: &str) -> TermValue {
    TermValue::from_pairs([("reason", TermValue::from(reason))])
}

/// Generation counter for session timers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Timer {
    generation: u64,
}

impl Timer {
    fn start(&mut self, ticks: u64) -> Command {
        self.generation += 1;
        Command::StartTimer { generation: self.generation, ticks }
    }

    fn cancel(&mut self) {
        self.generation += 1;
    }

    fn is_live(&self, generation: u64) -> bool {
        generation == self.generation
    }
}

#[cfg(test)]
mod tests;
