use std::collections::VecDeque;

use super::*;
use crate::ledger::{AgreementToken, EntryKind, Ledger, LedgerError};
use crate::negotiation::{Bound, NegotiationPolicy, RiskTier, Role, TierName};
use crate::payments::{PaymentMemo, Wallets};
use crate::terms::{Decimal, LicenseTerms};

struct Pair {
    ledger: Ledger,
    wallets: Wallets,
    provider: ProviderSession,
    requester: RequesterSession,
    provider_policy: NegotiationPolicy,
    requester_policy: NegotiationPolicy,
    tier: RiskTier,
    wire: VecDeque<ProtocolMessage>,
    timers_p: Vec<u64>,
    timers_r: Vec<u64>,
    deliveries: usize,
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
        self.wire.push_back(delivery);
    }
}

fn terms(fee: u64, royalty: i64) -> LicenseTerms {
    let mut t = LicenseTerms::new("dataset", "US");
    t.upfront_fee = fee;
    t.royalty_rate = Decimal::from_units(royalty);
    t
}

impl Pair {
    fn new(config: SessionConfig) -> Self {
        let mut ledger = Ledger::new();
        ledger.register_agent("A", b"a").unwrap();
        ledger.register_agent("B", b"b").unwrap();
        let mut wallets = Wallets::new();
        wallets.open("A", 1_000);
        wallets.open("B", 0);
        Pair {
            ledger,
            wallets,
            provider: ProviderSession::new("s1", "B", "A", config),
            requester: RequesterSession::new("s1", "A", "B", "c1", config),
            provider_policy: NegotiationPolicy::open(Role::Provider),
            requester_policy: NegotiationPolicy::open(Role::Requester),
            tier: RiskTier::preset(TierName::Conservative),
            wire: VecDeque::new(),
            timers_p: Vec::new(),
            timers_r: Vec::new(),
            deliveries: 0,
        }
    }

    fn run_provider(&mut self, event: ProviderEvent) -> Result<(), ProtocolError> {
        let mut pending = vec![event];
        while let Some(event) = pending.pop() {
            let ctx = ProviderContext { policy: &self.provider_policy, verifier: &self.ledger, content_hex: "c0ffee" };
            let commands = self.provider.handle(&ctx, event)?;
            for c in commands {
                match c {
                    Command::Send(m) => self.wire.push_back(m),
                    Command::StartTimer { generation, .. } => self.timers_p.push(generation),
                    Command::MintDraft { round, terms } => {
                        self.ledger.mint_draft("s1", round, "B", &terms).unwrap();
                    }
                    Command::Exchange { agreement, delivery } => {
                        let terms = self.provider.terms.clone().unwrap();
                        if let Err(e) = atomic_exchange(self, agreement, &terms, delivery) {
                            pending.push(ProviderEvent::ExchangeAborted(e.to_string()));
                        }
                    }
                    _ => {}
                }
            }
            if self.provider.is_transient() && pending.is_empty() {
                pending.push(ProviderEvent::Proceed);
            }
        }
        Ok(())
    }

    fn run_requester(&mut self, event: RequesterEvent) -> Result<(), ProtocolError> {
        let mut pending = vec![event];
        while let Some(event) = pending.pop() {
            let ctx = RequesterContext { policy: &self.requester_policy, tier: &self.tier };
            let commands = self.requester.handle(&ctx, event)?;
            for c in commands {
                match c {
                    Command::Send(m) => self.wire.push_back(m),
                    Command::StartTimer { generation, .. } => self.timers_r.push(generation),
                    Command::Settle { plan } => {
                        let memo = PaymentMemo::new(crate::payments::UPFRONT_PURPOSE).session("s1");
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
        Ok(())
    }

    fn start(&mut self, offer: LicenseTerms) {
        self.run_requester(RequesterEvent::Start).unwrap();
        let req = self.wire.pop_front().unwrap();
        self.run_provider(ProviderEvent::Message(req)).unwrap();
        self.run_provider(ProviderEvent::Decision(ProviderDecision::Propose {
            terms: offer,
            obligations: vec![],
            upstream_license_id: None,
        }))
        .unwrap();
    }

    /// Delivers queued messages until quiet, applying `drop` to each.
    fn pump(&mut self, mut drop: impl FnMut(&ProtocolMessage) -> bool) {
        while let Some(m) = self.wire.pop_front() {
            if drop(&m) {
                continue;
            }
            let result = if m.recipient == "B" {
                self.run_provider(ProviderEvent::Message(m))
            } else {
                self.run_requester(RequesterEvent::Message(m))
            };
            result.unwrap();
        }
    }
}

#[test]
fn happy_path_with_fee() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(100, 500));
    pair.pump(|_| false);
    assert_eq!(pair.provider.state, ProviderState::Completed);
    assert_eq!(pair.requester.state, RequesterState::Completed);
    assert_eq!(pair.wallets.balance("B"), Some(100));
    let payment = pair.ledger.entries().iter().find(|e| e.kind == EntryKind::Payment).unwrap().height;
    let token = pair.ledger.entries().iter().find(|e| e.kind == EntryKind::AgreementToken).unwrap().height;
    assert!(payment < token);
    let held = pair.ledger.token_for_session("s1").unwrap();
    assert!(pair.ledger.verify_token(&held, &terms(100, 500)));
    assert_eq!(pair.deliveries, 1);
    assert_eq!(pair.requester.delivered_content.as_deref(), Some("c0ffee"));
}

#[test]
fn ack_round_trip() {
    let config = SessionConfig { ack_required: true, ..SessionConfig::default() };
    let mut pair = Pair::new(config);
    pair.start(terms(0, 500));
    pair.pump(|_| false);
    assert_eq!(pair.provider.state, ProviderState::Completed);
    assert!(pair.provider.acknowledged);
    assert!(pair.requester.acknowledged);
}

#[test]
fn out_of_order_event_is_a_violation() {
    let mut pair = Pair::new(SessionConfig::default());
    let accept = ProtocolMessage::new(
        "s1",
        0,
        "A",
        "B",
        Action::AcceptTerms,
        TermValue::from_pairs([("terms_hash", TermValue::from("00"))]),
    );
    let before = pair.provider.clone();
    assert!(matches!(pair.run_provider(ProviderEvent::Message(accept)), Err(ProtocolError::ProtocolViolation(_))));
    assert_eq!(pair.provider, before);
}

#[test]
fn token_timeout_fails_with_exact_reason() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(0, 500));
    pair.pump(|m| m.action == Action::LicenseToken);
    assert_eq!(pair.provider.state, ProviderState::AwaitingToken);
    let gen = *pair.timers_p.last().unwrap();
    pair.run_provider(ProviderEvent::TimerExpired(gen)).unwrap();
    assert_eq!(pair.provider.state, ProviderState::Failed(NO_TOKEN.into()));
    assert!(pair.ledger.entries().iter().all(|e| e.kind != EntryKind::AgreementToken));
}

#[test]
fn payment_timeout_fails_with_exact_reason() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(100, 500));
    pair.pump(|m| m.action == Action::PaymentRequired);
    assert_eq!(pair.provider.state, ProviderState::AwaitingPayment);
    let gen = *pair.timers_p.last().unwrap();
    pair.run_provider(ProviderEvent::TimerExpired(gen)).unwrap();
    assert_eq!(pair.provider.state, ProviderState::Failed(NO_PAYMENT.into()));
    let gen = *pair.timers_r.last().unwrap();
    pair.run_requester(RequesterEvent::TimerExpired(gen)).unwrap();
    assert_eq!(pair.requester.state, RequesterState::Failed(NO_PAYMENT_REQUEST.into()));
}

#[test]
fn stale_timers_are_ignored() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(0, 500));
    let first = pair.timers_p[0];
    pair.pump(|m| m.action == Action::LicenseToken);
    pair.run_provider(ProviderEvent::TimerExpired(first)).unwrap();
    assert_eq!(pair.provider.state, ProviderState::AwaitingToken);
}

#[test]
fn terminal_states_refuse_everything() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(0, 500));
    pair.pump(|_| false);
    assert!(pair.provider.state.is_terminal());
    assert!(pair.run_provider(ProviderEvent::Proceed).is_err());
    assert!(pair.run_provider(ProviderEvent::TimerExpired(0)).is_err());
    assert!(pair.run_requester(RequesterEvent::Proceed).is_err());
}

#[test]
fn replayed_seq_is_rejected() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.run_requester(RequesterEvent::Start).unwrap();
    let req = pair.wire.pop_front().unwrap();
    pair.run_provider(ProviderEvent::Message(req.clone())).unwrap();
    pair.run_provider(ProviderEvent::Decision(ProviderDecision::Propose {
        terms: terms(0, 500),
        obligations: vec![],
        upstream_license_id: None,
    }))
    .unwrap();
    let mut replay = req;
    replay.action = Action::Reject;
    replay.body = TermValue::from_pairs([("reason", TermValue::from("x"))]);
    assert!(matches!(pair.run_provider(ProviderEvent::Message(replay)), Err(ProtocolError::ProtocolViolation(_))));
    assert_eq!(pair.provider.state, ProviderState::TermsProposed);
}

#[test]
fn counter_then_final_terms_converge() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.requester_policy = pair
        .requester_policy
        .clone()
        .with_bound("royalty_rate", Bound::decimal_max(Decimal::from_units(500)));
    pair.provider_policy = pair
        .provider_policy
        .clone()
        .with_bound("royalty_rate", Bound::Decimal { min: Decimal::from_units(400), max: Decimal::ONE });
    pair.start(terms(0, 800));
    pair.pump(|_| false);
    assert_eq!(pair.requester.state, RequesterState::Completed);
    assert_eq!(pair.requester.agreed.as_ref().unwrap().royalty_rate, Decimal::from_units(500));
    assert_eq!(pair.ledger.history("s1").iter().filter(|e| e.kind == EntryKind::DraftToken).count(), 2);
}

#[test]
fn requester_rejects_after_max_rounds() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.requester_policy = pair
        .requester_policy
        .clone()
        .with_bound("royalty_rate", Bound::decimal_max(Decimal::from_units(100)))
        .with_max_rounds(1);
    pair.provider_policy = pair
        .provider_policy
        .clone()
        .with_bound("royalty_rate", Bound::Decimal { min: Decimal::from_units(400), max: Decimal::ONE })
        .with_step(Decimal::ZERO);
    pair.start(terms(0, 800));
    pair.pump(|_| false);
    assert_eq!(pair.requester.state, RequesterState::Rejected);
    assert_eq!(pair.provider.state, ProviderState::Rejected);
}

#[test]
fn negotiation_timeout_keeps_original_terms_unconfirmed() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(0, 500));
    pair.wire.clear();
    let gen = *pair.timers_p.last().unwrap();
    pair.run_provider(ProviderEvent::TimerExpired(gen)).unwrap();
    assert!(pair.provider.unconfirmed);
    assert_eq!(pair.provider.state, ProviderState::AwaitingToken);
}

#[test]
fn forged_token_fails_provider() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.start(terms(0, 500));
    pair.pump(|m| m.action == Action::LicenseToken);
    let mut forged = pair.ledger.prepare_agreement(&MintRequest::new("A", "B", terms(0, 500)).with_session("s1")).unwrap();
    forged.requester_signature = "00".repeat(32);
    forged.metadata.signature = forged.requester_signature.clone();
    let msg = ProtocolMessage::new(
        "s1",
        99,
        "A",
        "B",
        Action::LicenseToken,
        TermValue::from_pairs([("token", forged.payload())]),
    );
    pair.run_provider(ProviderEvent::Message(msg)).unwrap();
    assert_eq!(pair.provider.state, ProviderState::Failed(NO_TOKEN.into()));
    assert_eq!(pair.deliveries, 0);
}

#[test]
fn non_ip_branch() {
    let mut pair = Pair::new(SessionConfig::default());
    pair.run_requester(RequesterEvent::Start).unwrap();
    let req = pair.wire.pop_front().unwrap();
    pair.run_provider(ProviderEvent::Message(req)).unwrap();
    pair.run_provider(ProviderEvent::Decision(ProviderDecision::NonIp { content_hex: "00".into() })).unwrap();
    let notice = pair.wire.front().unwrap().clone();
    assert_eq!(notice.body_str("message"), Some(NON_IP_REPLY));
    pair.pump(|_| false);
    assert_eq!(pair.provider.state, ProviderState::Completed);
    assert!(pair.requester.received_non_ip);
}

#[test]
fn config_requires_positive_timeouts() {
    assert!(SessionConfig::default().validate().is_ok());
    let bad = SessionConfig { settlement_timeout_ticks: 0, ..SessionConfig::default() };
    assert!(bad.validate().is_err());
}
