//! Shared drivers and oracles for the integration tests.

#![allow(dead_code)]

pub mod gen;

use std::collections::{BTreeSet, HashMap};

use atcpip_core::ledger::{AgreementToken, EntryKind, Ledger, LedgerError, MintRequest, PendingAgreement};
use atcpip_core::negotiation::{NegotiationPolicy, RiskTier, Role, TierName};
use atcpip_core::payments::{PaymentMemo, Wallets, UPFRONT_PURPOSE};
use atcpip_core::protocol::{
    atomic_exchange, Action, Command, ExchangeWorld, ProtocolMessage, ProviderContext, ProviderDecision,
    ProviderEvent, ProviderSession, ProviderState, RequesterContext, RequesterEvent, RequesterSession, SessionConfig,
};
use atcpip_core::terms::{sha256_hex, Decimal, LicenseTerms, TermValue};

pub const SESSION: &str = "s1";

pub fn terms(fee: u64, royalty: i64) -> LicenseTerms {
    let mut t = LicenseTerms::new("dataset", "US");
    t.upfront_fee = fee;
    t.royalty_rate = Decimal::from_units(royalty);
    t
}

/// One provider/requester session pair over a real ledger, with the wire
/// held as an unordered bag so a scheduler can pick any in-flight message.
#[derive(Clone)]
pub struct Pair {
    pub ledger: Ledger,
    pub wallets: Wallets,
    pub provider: ProviderSession,
    pub requester: RequesterSession,
    pub offer: LicenseTerms,
    pub wire: Vec<ProtocolMessage>,
    pub timers_p: Vec<u64>,
    pub timers_r: Vec<u64>,
    /// Messages put on the wire, in order.
    pub sent: usize,
    pub deliveries: usize,
    pub violations: Vec<String>,
}

impl ExchangeWorld for Pair {
    fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    fn commit_token(&mut self, agreement: PendingAgreement) -> Result<AgreementToken, LedgerError> {
        self.ledger.commit_agreement(agreement)
    }

    fn schedule_delivery(&mut self, delivery: ProtocolMessage) {
        self.deliveries += 1;
        if self.deliveries > 1 {
            self.violations.push("second deliver_ip in one session".into());
        }
        let agreed = self.provider.terms.clone();
        let verified = match (self.ledger.token_for_session(SESSION), agreed) {
            (Some(token), Some(terms)) => {
                self.ledger.verify_token(&token, &terms) && delivery.body_str("license_id") == Some(token.license_id())
            }
            _ => false,
        };
        if !verified {
            self.violations.push("deliver_ip without a verified token".into());
        }
        self.put(delivery);
    }
}

fn provider_policy() -> NegotiationPolicy {
    NegotiationPolicy::open(Role::Provider)
}

fn requester_policy() -> NegotiationPolicy {
    NegotiationPolicy::open(Role::Requester)
}

impl Pair {
    pub fn new(config: SessionConfig, offer: LicenseTerms) -> Self {
        let mut ledger = Ledger::new();
        ledger.register_agent("A", b"a").unwrap();
        ledger.register_agent("B", b"b").unwrap();
        let mut wallets = Wallets::new();
        wallets.open("A", 1_000);
        wallets.open("B", 0);
        Pair {
            ledger,
            wallets,
            provider: ProviderSession::new(SESSION, "B", "A", config),
            requester: RequesterSession::new(SESSION, "A", "B", "dataset", config),
            offer,
            wire: Vec::new(),
            timers_p: Vec::new(),
            timers_r: Vec::new(),
            sent: 0,
            deliveries: 0,
            violations: Vec::new(),
        }
    }

    fn put(&mut self, m: ProtocolMessage) {
        self.sent += 1;
        self.wire.push(m);
    }

    fn send(&mut self, m: ProtocolMessage) {
        if m.action == Action::DeliverIp {
            self.violations.push("deliver_ip sent outside the atomic exchange".into());
        }
        self.put(m);
    }

    /// Feeds one provider event; protocol violations drop the event.
    pub fn provider_event(&mut self, event: ProviderEvent) {
        let policy = provider_policy();
        let mut pending = vec![event];
        while let Some(event) = pending.pop() {
            let ctx = ProviderContext { policy: &policy, verifier: &self.ledger, content_hex: "c0ffee" };
            let Ok(commands) = self.provider.handle(&ctx, event) else {
                continue;
            };
            for c in commands {
                match c {
                    Command::Send(m) => self.send(m),
                    Command::StartTimer { generation, .. } => self.timers_p.push(generation),
                    Command::MintDraft { round, terms } => {
                        self.ledger.mint_draft(SESSION, round, "B", &terms).unwrap();
                    }
                    Command::Exchange { agreement, delivery } => {
                        let terms = self.provider.terms.clone().expect("exchange after terms");
                        if let Err(e) = atomic_exchange(self, agreement, &terms, delivery) {
                            pending.push(ProviderEvent::ExchangeAborted(e.to_string()));
                        }
                    }
                    _ => {}
                }
            }
            if pending.is_empty() {
                if self.provider.state == ProviderState::Evaluating {
                    pending.push(ProviderEvent::Decision(ProviderDecision::Propose {
                        terms: self.offer.clone(),
                        obligations: vec![],
                        upstream_license_id: None,
                    }));
                } else if self.provider.is_transient() {
                    pending.push(ProviderEvent::Proceed);
                }
            }
        }
    }

    pub fn requester_event(&mut self, event: RequesterEvent) {
        let policy = requester_policy();
        let tier = RiskTier::preset(TierName::Conservative);
        let mut pending = vec![event];
        while let Some(event) = pending.pop() {
            let ctx = RequesterContext { policy: &policy, tier: &tier };
            let Ok(commands) = self.requester.handle(&ctx, event) else {
                continue;
            };
            for c in commands {
                match c {
                    Command::Send(m) => self.send(m),
                    Command::StartTimer { generation, .. } => self.timers_r.push(generation),
                    Command::Settle { plan } => {
                        let memo = PaymentMemo::new(UPFRONT_PURPOSE).session(SESSION);
                        let r = self.wallets.settle(&mut self.ledger, &plan, "A", &memo);
                        pending.push(RequesterEvent::Settled(r.map(|_| ()).map_err(|e| e.to_string())));
                    }
                    Command::Mint(request) => {
                        let r = self.ledger.prepare_agreement(&request);
                        pending.push(RequesterEvent::Minted(r.map_err(|e| e.to_string())));
                    }
                    _ => {}
                }
            }
            if self.requester.is_transient() && pending.is_empty() {
                pending.push(RequesterEvent::Proceed);
            }
        }
    }

    pub fn deliver(&mut self, m: ProtocolMessage) {
        if m.recipient == "B" {
            self.provider_event(ProviderEvent::Message(m));
        } else {
            self.requester_event(RequesterEvent::Message(m));
        }
    }

    /// A license_token the provider must refuse: a bad signature, or a
    /// properly signed token over terms other than the agreed ones.
    pub fn forged_token(&self, variant: usize) -> ProtocolMessage {
        let mut wrong = self.offer.clone();
        if variant == 1 {
            wrong.royalty_rate = Decimal::from_units(9_000);
        }
        let mut agreement =
            self.ledger.prepare_agreement(&MintRequest::new("A", "B", wrong).with_session(SESSION)).unwrap();
        if variant == 0 {
            agreement.requester_signature = "00".repeat(32);
            agreement.metadata.signature = agreement.requester_signature.clone();
        }
        let body = TermValue::from_pairs([("token", agreement.payload())]);
        ProtocolMessage::new(SESSION, 1_000 + variant as u64, "A", "B", Action::LicenseToken, body)
    }

    /// Post-trace invariants beyond those checked at delivery time.
    pub fn final_violations(&self) -> Vec<String> {
        let mut out = self.violations.clone();
        if self.requester.delivered_content.is_some() && self.deliveries == 0 {
            out.push("requester holds content that was never delivered".into());
        }
        let height = |kind| self.ledger.entries().iter().find(|e| e.kind == kind).map(|e| e.height);
        if self.offer.upfront_fee > 0 {
            if let Some(token) = height(EntryKind::AgreementToken) {
                if height(EntryKind::Payment).is_none_or(|p| p > token) {
                    out.push("agreement token minted before payment".into());
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Deliver(usize),
    Drop(usize),
    ProviderTimer(usize),
    RequesterTimer(usize),
    Forge(usize),
}

#[derive(Debug, Default)]
pub struct Exploration {
    /// Complete schedules, counted over the memoized state graph.
    pub traces: u128,
    pub states: usize,
    pub max_messages: usize,
    pub violations: Vec<String>,
    /// Distinct (provider, requester) final states.
    pub outcomes: BTreeSet<(String, String)>,
}

/// Depth-first enumeration of every schedule of deliveries (in any order),
/// drops, timer firings, and up to `forgeries` injected bad tokens. States
/// reached along different paths are explored once.
pub fn explore(config: SessionConfig, offer: LicenseTerms, forgeries: usize) -> Exploration {
    let mut root = Pair::new(config, offer);
    root.requester_event(RequesterEvent::Start);
    let mut out = Exploration::default();
    let mut seen = HashMap::new();
    out.traces = walk(root, forgeries, 0, &mut seen, &mut out);
    out.states = seen.len();
    out
}

fn fingerprint(pair: &Pair, forged: usize) -> String {
    let mut wire: Vec<_> = pair.wire.iter().map(|m| format!("{m:?}")).collect();
    wire.sort();
    let mut tp = pair.timers_p.clone();
    let mut tr = pair.timers_r.clone();
    tp.sort();
    tr.sort();
    let state = format!(
        "{:?}|{:?}|{:?}|{wire:?}|{tp:?}|{tr:?}|{}|{}|{}|{forged}",
        pair.provider, pair.requester, pair.ledger.entries(), pair.sent, pair.deliveries, pair.violations.len()
    );
    sha256_hex(state.as_bytes())
}

fn walk(pair: Pair, forgeries: usize, forged: usize, seen: &mut HashMap<String, u128>, out: &mut Exploration) -> u128 {
    let key = fingerprint(&pair, forged);
    if let Some(&n) = seen.get(&key) {
        return n;
    }
    let mut steps = Vec::new();
    for i in 0..pair.wire.len() {
        steps.push(Step::Deliver(i));
        steps.push(Step::Drop(i));
    }
    steps.extend((0..pair.timers_p.len()).map(Step::ProviderTimer));
    steps.extend((0..pair.timers_r.len()).map(Step::RequesterTimer));
    if forged < forgeries && !pair.provider.state.is_terminal() {
        steps.extend((0..2).map(Step::Forge));
    }
    if steps.is_empty() {
        out.max_messages = out.max_messages.max(pair.sent);
        out.outcomes.insert((pair.provider.state.to_string(), pair.requester.state.to_string()));
        for v in pair.final_violations() {
            if !out.violations.contains(&v) {
                out.violations.push(v);
            }
        }
        seen.insert(key, 1);
        return 1;
    }
    let mut total = 0;
    for step in steps {
        let mut next = pair.clone();
        let mut forged = forged;
        match step {
            Step::Deliver(i) => {
                let m = next.wire.remove(i);
                next.deliver(m);
            }
            Step::Drop(i) => {
                next.wire.remove(i);
            }
            Step::ProviderTimer(i) => {
                let g = next.timers_p.remove(i);
                next.provider_event(ProviderEvent::TimerExpired(g));
            }
            Step::RequesterTimer(i) => {
                let g = next.timers_r.remove(i);
                next.requester_event(RequesterEvent::TimerExpired(g));
            }
            Step::Forge(variant) => {
                forged += 1;
                let m = next.forged_token(variant);
                next.deliver(m);
            }
        }
        total += walk(next, forgeries, forged, seen, out);
    }
    seen.insert(key, total);
    total
}
