use std::fmt;

use crate::ledger::{MintRequest, PendingAgreement};
use crate::negotiation::{arbiter_decide, evaluate_offer, ArbiterDecision, Evaluation, NegotiationPolicy, RiskTier};
use crate::payments::SplitPlan;
use crate::terms::{apply_delta, terms_hash, LicenseTerms, TermValue};

use super::{
    reject_body, violation, Action, Channel, Command, ProtocolError, ProtocolMessage, SessionConfig, Timer,
    TransactionRecord, NO_DELIVERY, NO_PAYMENT_REQUEST, NO_TERMS,
};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RequesterState {
    Requesting,
    AwaitingTerms,
    EvaluatingTerms,
    Countering,
    Paying,
    Minting,
    AwaitingDelivery,
    Acknowledging,
    Completed,
    Rejected,
    Failed(String),
}

impl RequesterState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, RequesterState::Completed | RequesterState::Rejected | RequesterState::Failed(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            RequesterState::Requesting => "requesting",
            RequesterState::AwaitingTerms => "awaiting_terms",
            RequesterState::EvaluatingTerms => "evaluating_terms",
            RequesterState::Countering => "countering",
            RequesterState::Paying => "paying",
            RequesterState::Minting => "minting",
            RequesterState::AwaitingDelivery => "awaiting_delivery",
            RequesterState::Acknowledging => "acknowledging",
            RequesterState::Completed => "completed",
            RequesterState::Rejected => "rejected",
            RequesterState::Failed(_) => "failed",
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            RequesterState::Failed(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for RequesterState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequesterState::Failed(r) => write!(f, "failed({r})"),
            s => f.write_str(s.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequesterEvent {
    Start,
    Message(ProtocolMessage),
    TimerExpired(u64),
    Settled(Result<(), String>),
    Minted(Result<PendingAgreement, String>),
    /// Leaves a transient state.
    Proceed,
}

pub struct RequesterContext<'a> {
    pub policy: &'a NegotiationPolicy,
    pub tier: &'a RiskTier,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequesterSession {
    pub channel: Channel,
    pub state: RequesterState,
    pub config: SessionConfig,
    pub content_id: String,
    /// Extra request_info fields, e.g. an offer.
    pub request_extras: Vec<(String, TermValue)>,
    pub proposed: Option<LicenseTerms>,
    pub agreed: Option<LicenseTerms>,
    pub peer_ack_required: bool,
    pub upstream_license_id: Option<String>,
    pub counters: u32,
    pub proposals_seen: u32,
    pub plan: Option<SplitPlan>,
    pub settling: bool,
    pub license_id: Option<String>,
    pub delivered_content: Option<String>,
    pub received_non_ip: bool,
    pub acknowledged: bool,
    timer: Timer,
}

impl RequesterSession {
    pub fn new(session_id: &str, requester_id: &str, provider_id: &str, content_id: &str, config: SessionConfig) -> Self {
        RequesterSession {
            channel: Channel::new(session_id, requester_id, provider_id),
            state: RequesterState::Requesting,
            config,
            content_id: content_id.to_owned(),
            request_extras: Vec::new(),
            proposed: None,
            agreed: None,
            peer_ack_required: false,
            upstream_license_id: None,
            counters: 0,
            proposals_seen: 0,
            plan: None,
            settling: false,
            license_id: None,
            delivered_content: None,
            received_non_ip: false,
            acknowledged: false,
            timer: Timer::default(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.channel.session_id
    }

    pub fn provider_id(&self) -> &str {
        &self.channel.remote
    }

    pub fn is_transient(&self) -> bool {
        matches!(self.state, RequesterState::EvaluatingTerms | RequesterState::Acknowledging)
    }

    pub fn timer_is_live(&self, generation: u64) -> bool {
        !self.state.is_terminal() && self.timer.is_live(generation)
    }

    pub fn handle(&mut self, ctx: &RequesterContext<'_>, event: RequesterEvent) -> Result<Vec<Command>, ProtocolError> {
        let (next, commands) = requester_transition(self, ctx, event)?;
        *self = next;
        Ok(commands)
    }

    fn enter(&mut self, state: RequesterState) {
        if state.is_terminal() {
            self.timer.cancel();
        }
        self.state = state;
    }

    fn fail(&mut self, reason: &str, out: &mut Vec<Command>) {
        out.push(Command::Log(reason.to_owned()));
        self.enter(RequesterState::Failed(reason.to_owned()));
    }

    fn refuse(&mut self, reason: &str, out: &mut Vec<Command>) {
        out.push(self.channel.send(Action::Reject, reject_body(reason)));
        self.enter(RequesterState::Rejected);
    }

    fn accept(&mut self, terms: LicenseTerms, out: &mut Vec<Command>) -> Result<(), ProtocolError> {
        let hash = terms_hash(&terms).map_err(|e| violation(e.to_string()))?;
        let mut body = vec![("terms_hash", TermValue::from(hash))];
        if self.config.ack_required {
            body.push(("ack_required", TermValue::Bool(true)));
        }
        let body = TermValue::from_pairs(body);
        out.push(self.channel.send(Action::AcceptTerms, body));
        let fee = terms.upfront_fee;
        self.agreed = Some(terms);
        if fee > 0 {
            self.enter(RequesterState::Paying);
            out.push(self.timer.start(self.config.settlement_timeout_ticks));
        } else {
            self.begin_mint(out);
        }
        Ok(())
    }

    fn begin_mint(&mut self, out: &mut Vec<Command>) {
        self.timer.cancel();
        let terms = self.agreed.clone().expect("agreed before minting");
        let request = MintRequest::new(&self.channel.local, &self.channel.remote, terms)
            .with_session(&self.channel.session_id)
            .with_previous(self.upstream_license_id.clone());
        out.push(Command::Mint(request));
        self.enter(RequesterState::Minting);
    }

    fn evaluate(&mut self, ctx: &RequesterContext<'_>, out: &mut Vec<Command>) -> Result<(), ProtocolError> {
        let proposed = self.proposed.clone().ok_or_else(|| violation("no proposal to evaluate"))?;
        match evaluate_offer(ctx.policy, &proposed) {
            Evaluation::Accept => self.accept(proposed, out)?,
            Evaluation::Reject => self.refuse("terms_unacceptable", out),
            Evaluation::Counter(delta) => {
                let counter = apply_delta(&proposed, &delta).map_err(|e| violation(e.to_string()))?;
                if arbiter_decide(ctx.tier, &proposed, &counter) == ArbiterDecision::AutoAccept {
                    out.push(Command::Log(format!("Auto-settled within {} tier.", ctx.tier.name.as_str())));
                    self.accept(proposed, out)?;
                } else if self.counters >= ctx.policy.max_rounds {
                    self.refuse("max_rounds_exceeded", out);
                } else {
                    self.counters += 1;
                    out.push(self.channel.send(
                        Action::CounterTerms,
                        TermValue::from_pairs([("suggestions", delta.to_value())]),
                    ));
                    self.enter(RequesterState::Countering);
                    out.push(self.timer.start(self.config.negotiation_timeout_ticks));
                }
            }
        }
        Ok(())
    }

    fn record(&self) -> Result<TransactionRecord, ProtocolError> {
        let terms = self.agreed.as_ref().ok_or_else(|| violation("no agreed terms"))?;
        Ok(TransactionRecord {
            requester_id: self.channel.local.clone(),
            provider_id: self.channel.remote.clone(),
            content_id: self.content_id.clone(),
            terms_hash: terms_hash(terms).map_err(|e| violation(e.to_string()))?,
            license_id: self.license_id.clone().unwrap_or_default(),
            acknowledged: self.acknowledged,
        })
    }
}

fn body_terms(m: &ProtocolMessage) -> Result<LicenseTerms, ProtocolError> {
    let value = m.body.get("terms").ok_or_else(|| violation("missing terms"))?;
    LicenseTerms::from_value(value).map_err(|v| violation(format!("invalid terms: {v:?}")))
}

pub fn requester_transition(
    session: &RequesterSession,
    ctx: &RequesterContext<'_>,
    event: RequesterEvent,
) -> Result<(RequesterSession, Vec<Command>), ProtocolError> {
    let mut s = session.clone();
    let mut out = Vec::new();
    if s.state.is_terminal() {
        return Err(violation(format!("session {} is {}", s.session_id(), s.state)));
    }
    match event {
        RequesterEvent::Start => {
            if s.state != RequesterState::Requesting {
                return Err(violation("session already started"));
            }
            let mut body = TermValue::from_pairs([("content_id", TermValue::from(s.content_id.as_str()))]);
            for (k, v) in &s.request_extras {
                body.as_map_mut().expect("map").insert(k.clone(), v.clone());
            }
            out.push(s.channel.send(Action::RequestInfo, body));
            s.enter(RequesterState::AwaitingTerms);
            out.push(s.timer.start(s.config.negotiation_timeout_ticks));
        }
        RequesterEvent::Message(m) => {
            s.channel.accept(&m)?;
            match (&s.state, m.action) {
                (_, Action::Reject) => {
                    out.push(Command::Log(format!(
                        "Provider rejected: {}",
                        m.body_str("reason").unwrap_or("unspecified")
                    )));
                    s.enter(RequesterState::Rejected);
                }
                (RequesterState::AwaitingTerms, Action::NonIpNotice) => {
                    s.received_non_ip = true;
                    s.delivered_content = m.body_str("content").map(str::to_owned);
                    s.enter(RequesterState::Completed);
                }
                (RequesterState::AwaitingTerms, Action::ProposeTerms)
                | (RequesterState::Countering, Action::FinalTerms) => {
                    let terms = body_terms(&m)?;
                    if m.action == Action::ProposeTerms {
                        s.peer_ack_required = m.body.get("ack_required").and_then(TermValue::as_bool).unwrap_or(false);
                        s.upstream_license_id = m.body_str("upstream_license_id").map(str::to_owned);
                    }
                    s.proposals_seen += 1;
                    s.proposed = Some(terms);
                    s.timer.cancel();
                    s.enter(RequesterState::EvaluatingTerms);
                }
                (RequesterState::Paying, Action::PaymentRequired) if !s.settling => {
                    let fee = s.agreed.as_ref().map_or(0, |t| t.upfront_fee);
                    let amount = m.body.get("amount").and_then(TermValue::as_u64);
                    let plan = match m.body.get("split") {
                        Some(split) => SplitPlan::from_value(split),
                        None => Some(SplitPlan::single(s.provider_id(), fee)),
                    };
                    match plan {
                        Some(plan) if amount == Some(fee) && plan.price == fee => {
                            s.settling = true;
                            s.timer.cancel();
                            s.plan = Some(plan.clone());
                            out.push(Command::Settle { plan });
                        }
                        _ => s.refuse("payment_request_mismatch", &mut out),
                    }
                }
                (RequesterState::AwaitingDelivery, Action::DeliverIp) => {
                    if m.body_str("license_id") != s.license_id.as_deref() {
                        return Err(violation("delivery for another license"));
                    }
                    s.delivered_content = m.body_str("content").map(str::to_owned);
                    s.timer.cancel();
                    s.enter(RequesterState::Acknowledging);
                }
                (state, action) => return Err(violation(format!("{action} not allowed in {state}"))),
            }
        }
        RequesterEvent::TimerExpired(generation) => {
            if !s.timer.is_live(generation) {
                return Ok((s, out));
            }
            match s.state {
                RequesterState::AwaitingTerms | RequesterState::Countering => s.fail(NO_TERMS, &mut out),
                RequesterState::Paying if !s.settling => s.fail(NO_PAYMENT_REQUEST, &mut out),
                RequesterState::AwaitingDelivery => s.fail(NO_DELIVERY, &mut out),
                _ => {}
            }
        }
        RequesterEvent::Settled(result) => {
            if !(s.state == RequesterState::Paying && s.settling) {
                return Err(violation(format!("settlement result unexpected in {}", s.state)));
            }
            match result {
                Ok(()) => {
                    let fee = s.agreed.as_ref().map_or(0, |t| t.upfront_fee);
                    out.push(s.channel.send(
                        Action::PaymentConfirmed,
                        TermValue::from_pairs([("amount", TermValue::from(fee))]),
                    ));
                    s.begin_mint(&mut out);
                }
                Err(why) => {
                    out.push(s.channel.send(Action::Reject, reject_body("payment_failed")));
                    s.fail(&format!("Payment failed: {why}"), &mut out);
                }
            }
        }
        RequesterEvent::Minted(result) => {
            if s.state != RequesterState::Minting {
                return Err(violation(format!("mint result unexpected in {}", s.state)));
            }
            match result {
                Ok(agreement) => {
                    s.license_id = Some(agreement.license_id().to_owned());
                    out.push(s.channel.send(
                        Action::LicenseToken,
                        TermValue::from_pairs([("token", agreement.payload())]),
                    ));
                    s.enter(RequesterState::AwaitingDelivery);
                    out.push(s.timer.start(s.config.settlement_timeout_ticks));
                }
                Err(why) => {
                    out.push(s.channel.send(Action::Reject, reject_body("mint_failed")));
                    s.fail(&format!("Minting failed: {why}"), &mut out);
                }
            }
        }
        RequesterEvent::Proceed => match s.state {
            RequesterState::EvaluatingTerms => s.evaluate(ctx, &mut out)?,
            RequesterState::Acknowledging => {
                if s.config.ack_required || s.peer_ack_required {
                    let license_id = s.license_id.clone().unwrap_or_default();
                    out.push(s.channel.send(
                        Action::AcknowledgeReceipt,
                        TermValue::from_pairs([("license_id", TermValue::from(license_id))]),
                    ));
                    s.acknowledged = true;
                }
                out.push(Command::RecordTransaction(s.record()?));
                s.enter(RequesterState::Completed);
            }
            _ => return Err(violation(format!("nothing to proceed from in {}", s.state))),
        },
    }
    Ok((s, out))
}
