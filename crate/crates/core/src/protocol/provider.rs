use std::fmt;

use crate::ledger::PendingAgreement;
use crate::negotiation::{revise_terms, NegotiationPolicy};
use crate::payments::{compute_split, RoyaltyObligation, SplitPlan};
use crate::terms::{terms_hash, LicenseTerms, TermValue, TermsDelta};

use super::{
    reject_body, violation, Action, Channel, Command, ProtocolError, ProtocolMessage, SessionConfig, Timer,
    TokenVerifier, TransactionRecord, NON_IP_LOG, NON_IP_REPLY, NO_PAYMENT, NO_TOKEN,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProviderState {
    Idle,
    Evaluating,
    TermsProposed,
    Negotiating,
    AwaitingPayment,
    AwaitingToken,
    Delivering,
    AwaitingAck,
    Completed,
    Rejected,
    Failed(String),
}

impl ProviderState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, ProviderState::Completed | ProviderState::Rejected | ProviderState::Failed(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProviderState::Idle => "idle",
            ProviderState::Evaluating => "evaluating",
            ProviderState::TermsProposed => "terms_proposed",
            ProviderState::Negotiating => "negotiating",
            ProviderState::AwaitingPayment => "awaiting_payment",
            ProviderState::AwaitingToken => "awaiting_token",
            ProviderState::Delivering => "delivering",
            ProviderState::AwaitingAck => "awaiting_ack",
            ProviderState::Completed => "completed",
            ProviderState::Rejected => "rejected",
            ProviderState::Failed(_) => "failed",
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            ProviderState::Failed(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for ProviderState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderState::Failed(r) => write!(f, "failed({r})"),
            s => f.write_str(s.name()),
        }
    }
}

/// Outcome of the runtime's compliance, significance, and formulation checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderDecision {
    Propose {
        terms: LicenseTerms,
        /// Shares of the upfront fee routed to upstream licensors.
        obligations: Vec<RoyaltyObligation>,
        upstream_license_id: Option<String>,
    },
    NonIp { content_hex: String },
    Refuse { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderEvent {
    Message(ProtocolMessage),
    TimerExpired(u64),
    Decision(ProviderDecision),
    /// Leaves a transient state.
    Proceed,
    ExchangeAborted(String),
}

pub struct ProviderContext<'a> {
    pub policy: &'a NegotiationPolicy,
    pub verifier: &'a dyn TokenVerifier,
    /// Hex payload delivered on success.
    pub content_hex: &'a str,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProviderSession {
    pub channel: Channel,
    pub state: ProviderState,
    pub config: SessionConfig,
    pub content_id: Option<String>,
    pub request_body: Option<TermValue>,
    pub original_terms: Option<LicenseTerms>,
    /// Current proposal, then the agreed terms.
    pub terms: Option<LicenseTerms>,
    /// Set when the requester went silent and the original terms were kept.
    pub unconfirmed: bool,
    pub proposals: u32,
    pub counters: u32,
    pub obligations: Vec<RoyaltyObligation>,
    pub plan: Option<SplitPlan>,
    pub upstream_license_id: Option<String>,
    pub license_id: Option<String>,
    pub deliveries: u32,
    pub acknowledged: bool,
    /// The requester announced it will acknowledge delivery.
    pub peer_ack_required: bool,
    timer: Timer,
}

impl ProviderSession {
    pub fn new(session_id: &str, provider_id: &str, requester_id: &str, config: SessionConfig) -> Self {
        ProviderSession {
            channel: Channel::new(session_id, provider_id, requester_id),
            state: ProviderState::Idle,
            config,
            content_id: None,
            request_body: None,
            original_terms: None,
            terms: None,
            unconfirmed: false,
            proposals: 0,
            counters: 0,
            obligations: Vec::new(),
            plan: None,
            upstream_license_id: None,
            license_id: None,
            deliveries: 0,
            acknowledged: false,
            peer_ack_required: false,
            timer: Timer::default(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.channel.session_id
    }

    pub fn requester_id(&self) -> &str {
        &self.channel.remote
    }

    pub fn is_transient(&self) -> bool {
        self.state == ProviderState::Delivering
    }

    pub fn timer_is_live(&self, generation: u64) -> bool {
        !self.state.is_terminal() && self.timer.is_live(generation)
    }

    /// Applies one event; on error the session is unchanged.
    pub fn handle(&mut self, ctx: &ProviderContext<'_>, event: ProviderEvent) -> Result<Vec<Command>, ProtocolError> {
        let (next, commands) = provider_transition(self, ctx, event)?;
        *self = next;
        Ok(commands)
    }

    fn enter(&mut self, state: ProviderState) {
        if state.is_terminal() {
            self.timer.cancel();
        }
        self.state = state;
    }

    fn current_terms(&self) -> Result<&LicenseTerms, ProtocolError> {
        self.terms.as_ref().ok_or_else(|| violation("no terms on the table"))
    }

    fn record(&self) -> Result<TransactionRecord, ProtocolError> {
        let terms = self.current_terms()?;
        Ok(TransactionRecord {
            requester_id: self.channel.remote.clone(),
            provider_id: self.channel.local.clone(),
            content_id: self.content_id.clone().unwrap_or_default(),
            terms_hash: terms_hash(terms).map_err(|e| violation(e.to_string()))?,
            license_id: self.license_id.clone().unwrap_or_default(),
            acknowledged: self.acknowledged,
        })
    }

    fn propose(&mut self, action: Action, out: &mut Vec<Command>) -> Result<(), ProtocolError> {
        let terms = self.current_terms()?.clone();
        self.proposals += 1;
        if self.config.onchain_drafts {
            out.push(Command::MintDraft { round: self.proposals, terms: terms.clone() });
        }
        let mut body = TermValue::from_pairs([("round", TermValue::from(self.proposals)), ("terms", terms.to_value())]);
        if action == Action::ProposeTerms {
            let map = body.as_map_mut().expect("map");
            map.insert("ack_required".into(), TermValue::Bool(self.config.ack_required));
            if let Some(up) = &self.upstream_license_id {
                map.insert("upstream_license_id".into(), up.as_str().into());
            }
        }
        out.push(self.channel.send(action, body));
        out.push(self.timer.start(self.config.negotiation_timeout_ticks));
        Ok(())
    }

    /// Moves to payment or token collection for the terms on the table.
    fn finalize(&mut self, out: &mut Vec<Command>) -> Result<(), ProtocolError> {
        let fee = self.current_terms()?.upfront_fee;
        if fee > 0 {
            let plan = match compute_split(fee, &self.channel.local, &self.obligations) {
                Ok(plan) => plan,
                Err(e) => {
                    out.push(self.channel.send(Action::Reject, reject_body("split_unavailable")));
                    out.push(Command::Log(format!("Cannot split fee: {e}")));
                    self.enter(ProviderState::Failed(format!("Cannot split fee: {e}")));
                    return Ok(());
                }
            };
            let body = TermValue::from_pairs([("amount", TermValue::from(fee)), ("split", plan.to_value())]);
            out.push(self.channel.send(Action::PaymentRequired, body));
            self.plan = Some(plan);
            self.enter(ProviderState::AwaitingPayment);
        } else {
            self.enter(ProviderState::AwaitingToken);
        }
        out.push(self.timer.start(self.config.settlement_timeout_ticks));
        Ok(())
    }

    fn refuse(&mut self, reason: &str, out: &mut Vec<Command>) {
        out.push(self.channel.send(Action::Reject, reject_body(reason)));
        self.enter(ProviderState::Rejected);
    }

    /// Token checks beyond the ledger's own verification.
    fn token_matches(&self, ctx: &ProviderContext<'_>, agreement: &PendingAgreement) -> bool {
        let Some(terms) = &self.terms else {
            return false;
        };
        let meta = &agreement.metadata;
        agreement.session_id.as_deref() == Some(self.session_id())
            && meta.holder_id == self.channel.remote
            && meta.issuer_id == self.channel.local
            && meta.previous_license_id == self.upstream_license_id
            && terms_hash(terms).ok().as_deref() == Some(agreement.terms_hash.as_str())
            && ctx.verifier.verify_pending(agreement, terms)
    }
}

pub fn provider_transition(
    session: &ProviderSession,
    ctx: &ProviderContext<'_>,
    event: ProviderEvent,
) -> Result<(ProviderSession, Vec<Command>), ProtocolError> {
    let mut s = session.clone();
    let mut out = Vec::new();
    if s.state.is_terminal() {
        return Err(violation(format!("session {} is {}", s.session_id(), s.state)));
    }
    match event {
        ProviderEvent::Message(m) => {
            s.channel.accept(&m)?;
            match (&s.state, m.action) {
                (_, Action::Reject) => s.enter(ProviderState::Rejected),
                (ProviderState::Idle, Action::RequestInfo) => {
                    s.content_id = m.body_str("content_id").map(str::to_owned);
                    s.request_body = Some(m.body.clone());
                    s.enter(ProviderState::Evaluating);
                }
                (ProviderState::TermsProposed | ProviderState::Negotiating, Action::CounterTerms) => {
                    if s.counters >= ctx.policy.max_rounds {
                        s.refuse("max_rounds_exceeded", &mut out);
                    } else {
                        let own = s.current_terms()?.clone();
                        let revised = m
                            .body
                            .get("suggestions")
                            .and_then(TermsDelta::from_value)
                            .ok_or_else(|| "malformed suggestions".to_owned())
                            .and_then(|d| revise_terms(ctx.policy, &own, &d).map_err(|e| e.to_string()));
                        match revised {
                            Ok(terms) => {
                                s.counters += 1;
                                s.terms = Some(terms);
                                s.enter(ProviderState::Negotiating);
                                s.propose(Action::FinalTerms, &mut out)?;
                            }
                            Err(why) => {
                                out.push(Command::Log(format!("Counter rejected: {why}")));
                                s.refuse("invalid_counter", &mut out);
                            }
                        }
                    }
                }
                (ProviderState::TermsProposed | ProviderState::Negotiating, Action::AcceptTerms) => {
                    let expected = terms_hash(s.current_terms()?).map_err(|e| violation(e.to_string()))?;
                    if m.body_str("terms_hash") == Some(expected.as_str()) {
                        s.peer_ack_required = m.body.get("ack_required").and_then(TermValue::as_bool).unwrap_or(false);
                        s.finalize(&mut out)?;
                    } else {
                        s.refuse("terms_hash_mismatch", &mut out);
                    }
                }
                (ProviderState::AwaitingPayment, Action::PaymentConfirmed) => {
                    let fee = s.current_terms()?.upfront_fee;
                    let paid = ctx.verifier.upfront_paid(s.session_id(), s.requester_id());
                    if paid < u128::from(fee) {
                        return Err(violation(format!("confirmation without payment: {paid} of {fee} on ledger")));
                    }
                    s.enter(ProviderState::AwaitingToken);
                    out.push(s.timer.start(s.config.settlement_timeout_ticks));
                }
                (ProviderState::AwaitingToken, Action::LicenseToken) => {
                    let agreement = m.body.get("token").and_then(PendingAgreement::from_payload);
                    match agreement {
                        Some(agreement) if s.deliveries == 0 && s.token_matches(ctx, &agreement) => {
                            let license_id = agreement.license_id().to_owned();
                            let body = TermValue::from_pairs([
                                ("content", TermValue::from(ctx.content_hex)),
                                ("license_id", license_id.as_str().into()),
                            ]);
                            let delivery = s.channel.outbound(Action::DeliverIp, body);
                            out.push(Command::Exchange { agreement, delivery });
                            out.push(Command::Log(format!("License token accepted: {license_id}")));
                            s.license_id = Some(license_id);
                            s.deliveries += 1;
                            s.timer.cancel();
                            s.enter(ProviderState::Delivering);
                        }
                        _ => {
                            out.push(s.channel.send(Action::Reject, reject_body("invalid_license_token")));
                            out.push(Command::Log(NO_TOKEN.to_owned()));
                            s.enter(ProviderState::Failed(NO_TOKEN.to_owned()));
                        }
                    }
                }
                (ProviderState::AwaitingAck, Action::AcknowledgeReceipt) => {
                    if m.body_str("license_id") != s.license_id.as_deref() {
                        return Err(violation("acknowledgement for another license"));
                    }
                    s.acknowledged = true;
                    out.push(Command::RecordTransaction(s.record()?));
                    s.enter(ProviderState::Completed);
                }
                (state, action) => return Err(violation(format!("{action} not allowed in {state}"))),
            }
        }
        ProviderEvent::TimerExpired(generation) => {
            if !s.timer.is_live(generation) {
                return Ok((s, out));
            }
            match s.state {
                ProviderState::TermsProposed | ProviderState::Negotiating => {
                    s.terms = s.original_terms.clone();
                    s.unconfirmed = true;
                    out.push(Command::Log("No response from requester; original terms stand unconfirmed.".into()));
                    s.finalize(&mut out)?;
                }
                ProviderState::AwaitingPayment => {
                    out.push(Command::Log(NO_PAYMENT.to_owned()));
                    s.enter(ProviderState::Failed(NO_PAYMENT.to_owned()));
                }
                ProviderState::AwaitingToken => {
                    out.push(Command::Log(NO_TOKEN.to_owned()));
                    s.enter(ProviderState::Failed(NO_TOKEN.to_owned()));
                }
                ProviderState::AwaitingAck => {
                    out.push(Command::RecordTransaction(s.record()?));
                    s.enter(ProviderState::Completed);
                }
                _ => {}
            }
        }
        ProviderEvent::Decision(decision) => {
            if s.state != ProviderState::Evaluating {
                return Err(violation(format!("decision not expected in {}", s.state)));
            }
            match decision {
                ProviderDecision::Propose { terms, obligations, upstream_license_id } => {
                    terms_hash(&terms).map_err(|e| violation(e.to_string()))?;
                    s.original_terms = Some(terms.clone());
                    s.terms = Some(terms);
                    s.obligations = obligations;
                    s.upstream_license_id = upstream_license_id;
                    s.enter(ProviderState::TermsProposed);
                    s.propose(Action::ProposeTerms, &mut out)?;
                }
                ProviderDecision::NonIp { content_hex } => {
                    let body = TermValue::from_pairs([
                        ("content", TermValue::from(content_hex)),
                        ("message", NON_IP_REPLY.into()),
                    ]);
                    out.push(s.channel.send(Action::NonIpNotice, body));
                    out.push(Command::Log(NON_IP_LOG.to_owned()));
                    s.enter(ProviderState::Completed);
                }
                ProviderDecision::Refuse { reason } => {
                    out.push(Command::Log(format!("Request refused: {reason}")));
                    s.refuse(&reason, &mut out);
                }
            }
        }
        ProviderEvent::Proceed => {
            if s.state != ProviderState::Delivering {
                return Err(violation(format!("nothing to proceed from in {}", s.state)));
            }
            if s.config.ack_required || s.peer_ack_required {
                s.enter(ProviderState::AwaitingAck);
                out.push(s.timer.start(s.config.negotiation_timeout_ticks));
            } else {
                out.push(Command::RecordTransaction(s.record()?));
                s.enter(ProviderState::Completed);
            }
        }
        ProviderEvent::ExchangeAborted(why) => {
            if s.state != ProviderState::Delivering {
                return Err(violation(format!("no exchange in flight in {}", s.state)));
            }
            out.push(Command::Log(format!("Exchange aborted: {why}")));
            s.license_id = None;
            s.deliveries -= 1;
            s.enter(ProviderState::Failed(NO_TOKEN.to_owned()));
        }
    }
    Ok((s, out))
}
