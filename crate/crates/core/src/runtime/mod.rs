//! Agents: an IP catalog, memory, and the glue that turns incoming requests
//! into protocol sessions.
//!
//! An [`Agent`] never touches the ledger or wallets directly. It consumes
//! [`Input`]s and returns [`Output`]s; the world executing them feeds results
//! back as further inputs.

mod catalog;
mod memory;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use catalog::{
    default_significant_tags, formulate_license_terms, is_ip_significant, IPCatalogItem, TermGenerator,
    DEFAULT_SIGNIFICANT_TAGS,
};
pub use memory::{Memory, MemoryRecord};

use crate::ledger::{Ledger, LedgerError, PendingAgreement};
use crate::negotiation::{NegotiationPolicy, RiskTier, Role, TierName};
use crate::payments::{
    aggregate_obligations, compute_split, ObligationEvent, PaymentError, RoyaltyObligation, SplitPlan,
};
use crate::protocol::{
    Action, Command, ProtocolError, ProtocolMessage, ProviderContext, ProviderDecision, ProviderEvent, ProviderSession, ProviderState,
    RequesterContext, RequesterEvent, RequesterSession, SessionConfig,
};
use crate::terms::LicenseTerms;
use crate::trust::{
    check_compatibility, reputation_gate, Compatibility, CompatibilityRules, JurisdictionProfile, ReputationBook,
    ScoreWeights, TrustError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("unknown content {0:?}")]
    UnknownContent(String),
    #[error("duplicate catalog id {0:?}")]
    DuplicateContent(String),
    #[error("invalid terms for {content_id:?}: {reason}")]
    InvalidTerms { content_id: String, reason: String },
    #[error("compliance gate failed: {0}")]
    ComplianceFailed(String),
    #[error("no held license for component {0:?}")]
    MissingUpstream(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already exists")]
    DuplicateSession(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Trust(#[from] TrustError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Payment(#[from] PaymentError),
}

impl RuntimeError {
    /// Tag sent to the requester when a request is refused.
    pub fn reason_tag(&self) -> String {
        match self {
            RuntimeError::UnknownContent(_) => "unknown_content".into(),
            RuntimeError::ComplianceFailed(reason) => reason.clone(),
            RuntimeError::MissingUpstream(_) => "missing_upstream_license".into(),
            RuntimeError::InvalidTerms { .. } => "invalid_terms".into(),
            RuntimeError::Payment(_) => "split_unavailable".into(),
            _ => "internal_error".into(),
        }
    }
}

/// What a requester does with content once it arrives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upgrade {
    FineTune,
    SpawnChild,
}

impl Upgrade {
    pub fn as_str(self) -> &'static str {
        match self {
            Upgrade::FineTune => "fine_tune",
            Upgrade::SpawnChild => "spawn_child",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        [Upgrade::FineTune, Upgrade::SpawnChild].into_iter().find(|u| u.as_str() == tag)
    }

    fn log_line(self, content_id: &str) -> String {
        match self {
            Upgrade::FineTune => format!("fine_tuned_on:{content_id}"),
            Upgrade::SpawnChild => format!("child_created:{content_id}"),
        }
    }
}

/// Buffer offer-carrying requests for a window, then serve only the best one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Courtship {
    pub window_ticks: u64,
    /// Micro-credits one full unit of royalty is worth when ranking offers.
    pub royalty_weight: u64,
}

/// Upfront fee plus weighted royalty, in micro-credits.
pub fn offer_utility(offer: &LicenseTerms, royalty_weight: u64) -> i128 {
    i128::from(offer.upfront_fee)
        + i128::from(offer.royalty_rate.units()) * i128::from(royalty_weight) / 10_000
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub agent_id: String,
    pub jurisdiction: JurisdictionProfile,
    /// Bounds applied to offers received as requester.
    pub policy: NegotiationPolicy,
    /// Bounds applied to counters received as provider.
    pub provider_policy: NegotiationPolicy,
    pub risk_tier: RiskTier,
    pub ip_catalog: Vec<IPCatalogItem>,
    pub initial_balance: u64,
    pub ack_required: bool,
    pub significant_tags: BTreeSet<String>,
    pub generator: TermGenerator,
    pub compatibility: CompatibilityRules,
    pub courtship: Option<Courtship>,
    pub session: SessionConfig,
}

impl AgentConfig {
    pub fn new(agent_id: &str, jurisdiction: JurisdictionProfile) -> Self {
        AgentConfig {
            agent_id: agent_id.to_owned(),
            jurisdiction,
            policy: NegotiationPolicy::open(Role::Requester),
            provider_policy: NegotiationPolicy::open(Role::Provider),
            risk_tier: RiskTier::preset(TierName::Conservative),
            ip_catalog: Vec::new(),
            initial_balance: 0,
            ack_required: false,
            significant_tags: default_significant_tags(),
            generator: TermGenerator::default(),
            compatibility: CompatibilityRules::new(),
            courtship: None,
            session: SessionConfig::default(),
        }
    }

    pub fn with_item(mut self, item: IPCatalogItem) -> Self {
        self.ip_catalog.push(item);
        self
    }

    pub fn with_balance(mut self, balance: u64) -> Self {
        self.initial_balance = balance;
        self
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        self.session.validate()?;
        let mut seen = BTreeSet::new();
        for item in &self.ip_catalog {
            if !seen.insert(item.content_id.as_str()) {
                return Err(RuntimeError::DuplicateContent(item.content_id.clone()));
            }
            if item.license_template.is_some() {
                formulate_license_terms(&self.generator, item, &self.jurisdiction.code)?;
            }
        }
        Ok(())
    }

    pub fn item(&self, content_id: &str) -> Option<&IPCatalogItem> {
        self.ip_catalog.iter().find(|i| i.content_id == content_id)
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig { ack_required: self.ack_required, ..self.session }
    }
}

/// Read-only world state an agent consults while handling an input.
pub struct Env<'a> {
    pub tick: u64,
    pub ledger: &'a Ledger,
    pub reputation: &'a ReputationBook,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    /// Opens a requester session.
    Request {
        session_id: String,
        provider: String,
        content_id: String,
        offer: Option<LicenseTerms>,
        upgrade: Option<Upgrade>,
    },
    Message(ProtocolMessage),
    Timer { session_id: String, generation: u64 },
    CourtshipClosed,
    Settled { session_id: String, result: Result<(), String> },
    Minted { session_id: String, result: Result<PendingAgreement, String> },
    ExchangeAborted { session_id: String, reason: String },
    Proceed { session_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Session { session_id: String, command: Command },
    /// Deliver [`Input::CourtshipClosed`] after this many ticks.
    WakeAfter(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Provider,
    Requester,
}

#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    memory: Memory,
    providing: BTreeMap<String, ProviderSession>,
    requesting: BTreeMap<String, RequesterSession>,
    upgrades: BTreeMap<String, Upgrade>,
    suitors: Vec<String>,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self, RuntimeError> {
        config.validate()?;
        Ok(Agent {
            config,
            memory: Memory::new(),
            providing: BTreeMap::new(),
            requesting: BTreeMap::new(),
            upgrades: BTreeMap::new(),
            suitors: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.config.agent_id
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    /// Appends a free-form memory log line.
    pub fn log(&mut self, text: impl Into<String>, tick: u64) {
        self.memory.log(text, tick);
    }

    pub fn provider_session(&self, session_id: &str) -> Option<&ProviderSession> {
        self.providing.get(session_id)
    }

    pub fn requester_session(&self, session_id: &str) -> Option<&RequesterSession> {
        self.requesting.get(session_id)
    }

    pub fn provider_sessions(&self) -> impl Iterator<Item = &ProviderSession> {
        self.providing.values()
    }

    pub fn requester_sessions(&self) -> impl Iterator<Item = &RequesterSession> {
        self.requesting.values()
    }

    pub fn side(&self, session_id: &str) -> Option<Side> {
        if self.providing.contains_key(session_id) {
            Some(Side::Provider)
        } else if self.requesting.contains_key(session_id) {
            Some(Side::Requester)
        } else {
            None
        }
    }

    /// State name of either side of a session.
    pub fn session_state(&self, session_id: &str) -> Option<String> {
        match self.side(session_id)? {
            Side::Provider => Some(self.providing[session_id].state.to_string()),
            Side::Requester => Some(self.requesting[session_id].state.to_string()),
        }
    }

    pub fn is_transient(&self, session_id: &str) -> bool {
        match self.side(session_id) {
            Some(Side::Provider) => self.providing[session_id].is_transient(),
            Some(Side::Requester) => self.requesting[session_id].is_transient(),
            None => false,
        }
    }

    pub fn is_ip_significant(&self, content_id: &str) -> Result<bool, RuntimeError> {
        let item = self.config.item(content_id).ok_or_else(|| RuntimeError::UnknownContent(content_id.into()))?;
        Ok(is_ip_significant(item, &self.config.significant_tags))
    }

    /// Revenue split for selling output derived from licensed `content_id`.
    pub fn downstream_sale_plan(
        &self,
        ledger: &Ledger,
        content_id: &str,
        amount: u64,
    ) -> Result<(SplitPlan, String), RuntimeError> {
        let license = self.live_license(ledger, content_id)?;
        let lineage = ledger.lineage_tokens(&license)?;
        let obligations = aggregate_obligations(&lineage, ObligationEvent::DownstreamSale)?;
        Ok((compute_split(amount, self.id(), &obligations)?, license))
    }

    fn live_license(&self, ledger: &Ledger, content_id: &str) -> Result<String, RuntimeError> {
        self.memory
            .held_license(self.id(), content_id)
            .map(|t| t.license_id.clone())
            .filter(|id| ledger.token(id).is_some() && !ledger.is_revoked(id))
            .ok_or_else(|| RuntimeError::MissingUpstream(content_id.to_owned()))
    }

    /// Handles one input. Protocol violations are logged to memory and the
    /// input is dropped; the session is left as it was.
    pub fn handle(&mut self, env: &Env<'_>, input: Input) -> Result<Vec<Output>, RuntimeError> {
        let mut out = Vec::new();
        match input {
            Input::Request { session_id, provider, content_id, offer, upgrade } => {
                if self.side(&session_id).is_some() {
                    return Err(RuntimeError::DuplicateSession(session_id));
                }
                let mut s =
                    RequesterSession::new(&session_id, self.id(), &provider, &content_id, self.config.session_config());
                s.request_extras.push(("jurisdiction".into(), self.config.jurisdiction.to_value()));
                if let Some(offer) = offer {
                    s.request_extras.push(("offer".into(), offer.to_value()));
                }
                self.requesting.insert(session_id.clone(), s);
                if let Some(u) = upgrade {
                    self.upgrades.insert(session_id.clone(), u);
                }
                self.requester_event(env, &session_id, RequesterEvent::Start, &mut out);
            }
            Input::Message(m) => {
                let session_id = m.session_id.clone();
                match self.side(&session_id) {
                    Some(Side::Provider) => self.provider_event(env, &session_id, ProviderEvent::Message(m), &mut out),
                    Some(Side::Requester) => {
                        self.requester_event(env, &session_id, RequesterEvent::Message(m), &mut out)
                    }
                    None if m.action == Action::RequestInfo => {
                        self.handle_incoming_request(env, m, &mut out)
                    }
                    None => self.memory.log(format!("Dropped message for unknown session {session_id}"), env.tick),
                }
            }
            Input::Timer { session_id, generation } => match self.side(&session_id) {
                Some(Side::Provider) if self.providing[&session_id].timer_is_live(generation) => {
                    self.provider_event(env, &session_id, ProviderEvent::TimerExpired(generation), &mut out)
                }
                Some(Side::Requester) if self.requesting[&session_id].timer_is_live(generation) => {
                    self.requester_event(env, &session_id, RequesterEvent::TimerExpired(generation), &mut out)
                }
                Some(_) => {}
                None => return Err(RuntimeError::UnknownSession(session_id)),
            },
            Input::CourtshipClosed => self.close_courtship(env, &mut out),
            Input::Settled { session_id, result } => {
                self.expect_side(&session_id, Side::Requester)?;
                self.requester_event(env, &session_id, RequesterEvent::Settled(result), &mut out);
            }
            Input::Minted { session_id, result } => {
                self.expect_side(&session_id, Side::Requester)?;
                self.requester_event(env, &session_id, RequesterEvent::Minted(result), &mut out);
            }
            Input::ExchangeAborted { session_id, reason } => {
                self.expect_side(&session_id, Side::Provider)?;
                self.provider_event(env, &session_id, ProviderEvent::ExchangeAborted(reason), &mut out);
            }
            Input::Proceed { session_id } => match self.side(&session_id) {
                Some(Side::Provider) => self.provider_event(env, &session_id, ProviderEvent::Proceed, &mut out),
                Some(Side::Requester) => self.requester_event(env, &session_id, RequesterEvent::Proceed, &mut out),
                None => return Err(RuntimeError::UnknownSession(session_id)),
            },
        }
        Ok(out)
    }

    fn expect_side(&self, session_id: &str, side: Side) -> Result<(), RuntimeError> {
        if self.side(session_id) == Some(side) {
            Ok(())
        } else {
            Err(RuntimeError::UnknownSession(session_id.to_owned()))
        }
    }

    /// Opens a provider session and either decides now or, during a
    /// courtship, buffers the request until the window closes.
    fn handle_incoming_request(&mut self, env: &Env<'_>, m: ProtocolMessage, out: &mut Vec<Output>) {
        let session_id = m.session_id.clone();
        let session = ProviderSession::new(&session_id, self.id(), &m.sender, self.config.session_config());
        self.providing.insert(session_id.clone(), session);
        let has_offer = m.body.get("offer").is_some();
        self.provider_event(env, &session_id, ProviderEvent::Message(m), out);
        if self.providing[&session_id].state != ProviderState::Evaluating {
            return;
        }
        match self.config.courtship {
            Some(c) if has_offer => {
                if self.suitors.is_empty() {
                    out.push(Output::WakeAfter(c.window_ticks));
                }
                self.suitors.push(session_id);
            }
            _ => {
                let decision = self.decide(env, &session_id);
                self.provider_event(env, &session_id, ProviderEvent::Decision(decision), out);
            }
        }
    }

    fn decide(&self, env: &Env<'_>, session_id: &str) -> ProviderDecision {
        match self.evaluate_request(env, &self.providing[session_id]) {
            Ok(d) => d,
            Err(e) => ProviderDecision::Refuse { reason: e.reason_tag() },
        }
    }

    /// Compliance gate, significance check, then terms formulation.
    fn evaluate_request(&self, env: &Env<'_>, session: &ProviderSession) -> Result<ProviderDecision, RuntimeError> {
        let body = session.request_body.as_ref().expect("evaluating sessions keep the request");
        let content_id = session.content_id.as_deref().unwrap_or_default();
        let item = self.config.item(content_id).ok_or_else(|| RuntimeError::UnknownContent(content_id.into()))?;
        let terms = formulate_license_terms(&self.config.generator, item, &self.config.jurisdiction.code)?;
        let requester = body
            .get("jurisdiction")
            .and_then(JurisdictionProfile::from_value)
            .ok_or_else(|| RuntimeError::ComplianceFailed("missing_jurisdiction".into()))?;
        let own = &self.config.jurisdiction;
        let rules = &self.config.compatibility;
        if let Compatibility::Fail(reason) = check_compatibility(rules, &requester, own, &item.tags, &terms)? {
            return Err(RuntimeError::ComplianceFailed(reason));
        }
        let score = env.reputation.score(session.requester_id(), &ScoreWeights::default());
        if let Compatibility::Fail(reason) = reputation_gate(rules, &requester, own, score) {
            return Err(RuntimeError::ComplianceFailed(reason));
        }
        if !is_ip_significant(item, &self.config.significant_tags) {
            return Ok(ProviderDecision::NonIp { content_hex: item.payload_hex() });
        }
        let (obligations, upstream_license_id) = self.upstream_obligations(env.ledger, item)?;
        Ok(ProviderDecision::Propose { terms, obligations, upstream_license_id })
    }

    /// Sublicensing royalties owed up the lineage of every component.
    fn upstream_obligations(
        &self,
        ledger: &Ledger,
        item: &IPCatalogItem,
    ) -> Result<(Vec<RoyaltyObligation>, Option<String>), RuntimeError> {
        let mut obligations = Vec::new();
        let mut upstream = None;
        for component in &item.components {
            let license = self.live_license(ledger, component)?;
            let lineage = ledger.lineage_tokens(&license)?;
            obligations.extend(aggregate_obligations(&lineage, ObligationEvent::Sublicense)?);
            upstream.get_or_insert(license);
        }
        Ok((obligations, upstream))
    }

    /// Serves the best buffered offer and refuses the rest.
    fn close_courtship(&mut self, env: &Env<'_>, out: &mut Vec<Output>) {
        let weight = self.config.courtship.map_or(0, |c| c.royalty_weight);
        let suitors = std::mem::take(&mut self.suitors);
        let offer_of = |agent: &Agent, sid: &str| {
            agent.providing[sid]
                .request_body
                .as_ref()
                .and_then(|b| b.get("offer"))
                .and_then(|v| LicenseTerms::from_value(v).ok())
        };
        let winner = suitors
            .iter()
            .filter(|sid| self.providing[*sid].state == ProviderState::Evaluating)
            .filter_map(|sid| offer_of(self, sid).map(|o| (sid.clone(), offer_utility(&o, weight))))
            .max_by(|(a, ua), (b, ub)| {
                ua.cmp(ub).then_with(|| {
                    let (ra, rb) = (self.providing[a].requester_id(), self.providing[b].requester_id());
                    rb.cmp(ra).then_with(|| b.cmp(a))
                })
            })
            .map(|(sid, _)| sid);
        if let Some(w) = &winner {
            self.memory.log(format!("Courtship winner: {}", self.providing[w].requester_id()), env.tick);
        }
        for sid in suitors {
            if self.providing[&sid].state != ProviderState::Evaluating {
                continue;
            }
            let decision = if Some(&sid) == winner.as_ref() {
                match self.decide(env, &sid) {
                    ProviderDecision::Propose { mut terms, obligations, upstream_license_id } => {
                        if let Some(offer) = offer_of(self, &sid) {
                            terms.upfront_fee = terms.upfront_fee.max(offer.upfront_fee);
                            terms.royalty_rate = terms.royalty_rate.max(offer.royalty_rate);
                        }
                        ProviderDecision::Propose { terms, obligations, upstream_license_id }
                    }
                    other => other,
                }
            } else {
                ProviderDecision::Refuse { reason: "not_selected".into() }
            };
            self.provider_event(env, &sid, ProviderEvent::Decision(decision), out);
        }
    }

    fn provider_event(&mut self, env: &Env<'_>, session_id: &str, event: ProviderEvent, out: &mut Vec<Output>) {
        let session = self.providing.get_mut(session_id).expect("caller checked the session");
        let content_hex = session
            .content_id
            .as_deref()
            .and_then(|c| self.config.item(c))
            .map(IPCatalogItem::payload_hex)
            .unwrap_or_default();
        let ctx = ProviderContext { policy: &self.config.provider_policy, verifier: env.ledger, content_hex: &content_hex };
        match session.handle(&ctx, event) {
            Ok(commands) => self.absorb(env, session_id, commands, out),
            Err(e) => self.memory.log(format!("Protocol violation in {session_id}: {e}"), env.tick),
        }
    }

    fn requester_event(&mut self, env: &Env<'_>, session_id: &str, event: RequesterEvent, out: &mut Vec<Output>) {
        let session = self.requesting.get_mut(session_id).expect("caller checked the session");
        let ctx = RequesterContext { policy: &self.config.policy, tier: &self.config.risk_tier };
        match session.handle(&ctx, event) {
            Ok(commands) => self.absorb(env, session_id, commands, out),
            Err(e) => self.memory.log(format!("Protocol violation in {session_id}: {e}"), env.tick),
        }
    }

    /// Records memory-affecting commands and forwards everything.
    fn absorb(&mut self, env: &Env<'_>, session_id: &str, commands: Vec<Command>, out: &mut Vec<Output>) {
        for command in commands {
            match &command {
                Command::Log(text) => self.memory.log(text.clone(), env.tick),
                Command::RecordTransaction(record) => {
                    self.memory.record_transaction(record.clone(), env.tick);
                    let delivered = self.requesting.get(session_id).is_some_and(|s| s.delivered_content.is_some());
                    if let (true, Some(u)) = (delivered, self.upgrades.get(session_id)) {
                        self.memory.log(u.log_line(&record.content_id), env.tick);
                    }
                }
                _ => {}
            }
            out.push(Output::Session { session_id: session_id.to_owned(), command });
        }
    }
}
