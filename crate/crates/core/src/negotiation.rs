//! Policy-driven offer evaluation, counter generation, and concession.

use std::collections::{BTreeMap, BTreeSet};

use crate::ledger::{Ledger, LedgerError};
use crate::terms::{
    apply_delta, diff, terms_hash, Decimal, Edit, EditOp, LicenseTerms, TermValue, TermsDelta, TermsError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Provider,
    Requester,
}

/// Acceptable region for one top-level term. Intervals are closed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Bound {
    Decimal { min: Decimal, max: Decimal },
    Integer { min: i64, max: i64 },
    OneOf(BTreeSet<String>),
}

impl Bound {
    pub fn decimal_max(max: Decimal) -> Self {
        Bound::Decimal { min: Decimal::ZERO, max }
    }

    pub fn one_of<I: IntoIterator<Item = S>, S: Into<String>>(values: I) -> Self {
        Bound::OneOf(values.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, value: &TermValue) -> bool {
        match (self, value) {
            (Bound::Decimal { min, max }, TermValue::Decimal(d)) => min <= d && d <= max,
            (Bound::Integer { min, max }, TermValue::Integer(i)) => min <= i && i <= max,
            (Bound::OneOf(allowed), TermValue::Text(s)) => allowed.contains(s),
            _ => false,
        }
    }

    /// Nearest admissible value; for sets, the first allowed value.
    pub fn nearest(&self, value: &TermValue) -> Option<TermValue> {
        if self.contains(value) {
            return Some(value.clone());
        }
        match (self, value) {
            (Bound::Decimal { min, max }, TermValue::Decimal(d)) => Some(TermValue::Decimal(*d.clamp(min, max))),
            (Bound::Integer { min, max }, TermValue::Integer(i)) => Some(TermValue::Integer(*i.clamp(min, max))),
            (Bound::OneOf(allowed), _) => allowed.iter().next().map(|s| TermValue::from(s.as_str())),
            _ => None,
        }
    }

    /// Moves `own` toward `target` by `step` of the gap, then clamps.
    fn concede(&self, own: &TermValue, target: &TermValue, step: Decimal) -> TermValue {
        let moved = match (own, target) {
            (TermValue::Decimal(o), TermValue::Decimal(t)) => {
                TermValue::Decimal(Decimal::from_units(toward(o.units(), t.units(), step) as i64))
            }
            (TermValue::Integer(o), TermValue::Integer(t)) => TermValue::Integer(toward(*o, *t, step) as i64),
            (_, t) if self.contains(t) => t.clone(),
            _ => own.clone(),
        };
        self.nearest(&moved).unwrap_or_else(|| own.clone())
    }
}

fn toward(own: i64, target: i64, step: Decimal) -> i128 {
    let gap = i128::from(target) - i128::from(own);
    i128::from(own) + gap * i128::from(step.units()) / i128::from(Decimal::SCALE)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegotiationPolicy {
    pub role: Role,
    pub bounds: BTreeMap<String, Bound>,
    pub non_negotiable: BTreeSet<String>,
    pub max_rounds: u32,
    pub concession_step: Decimal,
}

impl NegotiationPolicy {
    pub const DEFAULT_MAX_ROUNDS: u32 = 4;

    /// No bounds: accepts anything.
    pub fn open(role: Role) -> Self {
        NegotiationPolicy {
            role,
            bounds: BTreeMap::new(),
            non_negotiable: BTreeSet::new(),
            max_rounds: Self::DEFAULT_MAX_ROUNDS,
            concession_step: Decimal::from_units(5_000),
        }
    }

    pub fn with_bound(mut self, path: &str, bound: Bound) -> Self {
        self.bounds.insert(path.to_owned(), bound);
        self
    }

    pub fn with_non_negotiable(mut self, path: &str) -> Self {
        self.non_negotiable.insert(path.to_owned());
        self
    }

    pub fn with_max_rounds(mut self, rounds: u32) -> Self {
        self.max_rounds = rounds;
        self
    }

    pub fn with_step(mut self, step: Decimal) -> Self {
        self.concession_step = step;
        self
    }

    pub fn admits(&self, terms: &LicenseTerms) -> bool {
        self.bounds.iter().all(|(path, bound)| clause(terms, path).is_some_and(|v| bound.contains(&v)))
    }
}

fn clause(terms: &LicenseTerms, field: &str) -> Option<TermValue> {
    terms.clause(&[field.to_owned()])
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Evaluation {
    Accept,
    Counter(TermsDelta),
    Reject,
}

pub fn evaluate_offer(policy: &NegotiationPolicy, terms: &LicenseTerms) -> Evaluation {
    let mut edits = Vec::new();
    for (path, bound) in &policy.bounds {
        let Some(value) = clause(terms, path) else {
            continue;
        };
        if bound.contains(&value) {
            continue;
        }
        if policy.non_negotiable.contains(path) {
            return Evaluation::Reject;
        }
        match bound.nearest(&value) {
            Some(v) => edits.push(Edit::set(&[path], v)),
            None => return Evaluation::Reject,
        }
    }
    if edits.is_empty() {
        Evaluation::Accept
    } else {
        Evaluation::Counter(TermsDelta::new(edits))
    }
}

/// Folds a counter-proposal into `own` under the policy.
pub fn revise_terms(
    policy: &NegotiationPolicy,
    own: &LicenseTerms,
    counter: &TermsDelta,
) -> Result<LicenseTerms, TermsError> {
    // Surfaces unknown paths and schema errors in the counter itself.
    apply_delta(own, counter)?;

    let mut edits = Vec::new();
    for edit in &counter.edits {
        let field = &edit.path[0];
        if policy.non_negotiable.contains(field) {
            continue;
        }
        match (&edit.op, policy.bounds.get(field), edit.path.len()) {
            (EditOp::Set(target), Some(bound), 1) => {
                let current = clause(own, field).expect("field checked by apply_delta");
                let revised = if bound.contains(target) {
                    target.clone()
                } else {
                    bound.concede(&current, target, policy.concession_step)
                };
                edits.push(Edit { path: edit.path.clone(), op: EditOp::Set(revised) });
            }
            _ => edits.push(edit.clone()),
        }
    }
    let revised = apply_delta(own, &TermsDelta::new(edits))?;
    Ok(clamp_to_bounds(policy, &revised))
}

/// Pulls every bounded numeric term into range.
pub fn clamp_to_bounds(policy: &NegotiationPolicy, terms: &LicenseTerms) -> LicenseTerms {
    let mut out = terms.clone();
    for (path, bound) in &policy.bounds {
        if policy.non_negotiable.contains(path) || matches!(bound, Bound::OneOf(_)) {
            continue;
        }
        if let Some(v) = clause(&out, path).and_then(|v| bound.nearest(&v)) {
            if let Ok(t) = apply_delta(&out, &TermsDelta::new(vec![Edit::set(&[path], v)])) {
                out = t;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u32,
    pub proposer: Role,
    pub terms: LicenseTerms,
    pub terms_hash: String,
    /// Change from the previous round's terms; empty for round 1.
    pub delta: TermsDelta,
    pub draft_height: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    AgreedTerms { terms: LicenseTerms, rounds: Vec<RoundRecord> },
    /// `default_terms` are the original proposal; they are never binding on
    /// their own, hence `unconfirmed`.
    NoAgreement { default_terms: LicenseTerms, unconfirmed: bool, rejected: bool, rounds: Vec<RoundRecord> },
}

impl Outcome {
    pub fn rounds(&self) -> &[RoundRecord] {
        match self {
            Outcome::AgreedTerms { rounds, .. } | Outcome::NoAgreement { rounds, .. } => rounds,
        }
    }

    pub fn is_agreed(&self) -> bool {
        matches!(self, Outcome::AgreedTerms { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NegotiationConfig {
    pub onchain_drafts: bool,
}

impl Default for NegotiationConfig {
    fn default() -> Self {
        NegotiationConfig { onchain_drafts: true }
    }
}

/// Alternating provider proposals and requester evaluations. The requester
/// may counter at most `min(max_rounds)` times.
pub fn run_negotiation(
    provider: &NegotiationPolicy,
    requester: &NegotiationPolicy,
    initial: &LicenseTerms,
) -> Result<Outcome, TermsError> {
    let max_counters = provider.max_rounds.min(requester.max_rounds);
    let mut rounds = Vec::new();
    let mut proposal = initial.clone();
    let mut previous: Option<LicenseTerms> = None;
    let mut counters = 0;
    loop {
        rounds.push(RoundRecord {
            round: rounds.len() as u32 + 1,
            proposer: Role::Provider,
            terms_hash: terms_hash(&proposal)?,
            delta: previous.as_ref().map(|p| diff(p, &proposal)).unwrap_or_default(),
            terms: proposal.clone(),
            draft_height: None,
        });
        let no_agreement = |rejected, rounds| Outcome::NoAgreement {
            default_terms: initial.clone(),
            unconfirmed: true,
            rejected,
            rounds,
        };
        match evaluate_offer(requester, &proposal) {
            Evaluation::Accept => return Ok(Outcome::AgreedTerms { terms: proposal, rounds }),
            Evaluation::Reject => return Ok(no_agreement(true, rounds)),
            Evaluation::Counter(_) if counters >= max_counters => return Ok(no_agreement(false, rounds)),
            Evaluation::Counter(delta) => {
                counters += 1;
                let revised = revise_terms(provider, &proposal, &delta)?;
                previous = Some(std::mem::replace(&mut proposal, revised));
            }
        }
    }
}

/// As [`run_negotiation`], minting one draft per proposal when enabled.
pub fn run_negotiation_recorded(
    ledger: &mut Ledger,
    session_id: &str,
    provider_id: &str,
    provider: &NegotiationPolicy,
    requester: &NegotiationPolicy,
    initial: &LicenseTerms,
    config: NegotiationConfig,
) -> Result<Outcome, LedgerError> {
    let mut outcome = run_negotiation(provider, requester, initial)?;
    if config.onchain_drafts {
        let base = ledger.last_draft_round(session_id);
        let rounds = match &mut outcome {
            Outcome::AgreedTerms { rounds, .. } | Outcome::NoAgreement { rounds, .. } => rounds,
        };
        for record in rounds.iter_mut() {
            let draft = ledger.mint_draft(session_id, base + record.round, provider_id, &record.terms)?;
            record.draft_height = Some(draft.height);
        }
    }
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TierName {
    Conservative,
    Standard,
    Permissive,
}

impl TierName {
    pub fn as_str(self) -> &'static str {
        match self {
            TierName::Conservative => "conservative",
            TierName::Standard => "standard",
            TierName::Permissive => "permissive",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        [TierName::Conservative, TierName::Standard, TierName::Permissive]
            .into_iter()
            .find(|t| t.as_str() == tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RiskTier {
    pub name: TierName,
    pub max_price_delta_fraction: Decimal,
    /// Also applied to rev_share.
    pub max_royalty_delta: Decimal,
    pub auto_settle_keys: BTreeSet<String>,
}

impl RiskTier {
    pub fn preset(name: TierName) -> Self {
        let keys: &[&str] = match name {
            TierName::Conservative => &[],
            TierName::Standard => &["rev_share", "royalty_rate", "upfront_fee"],
            TierName::Permissive => &["duration", "rev_share", "royalty_rate", "transferability", "upfront_fee"],
        };
        let (price, royalty) = match name {
            TierName::Conservative => (0, 0),
            TierName::Standard => (500, 100),
            TierName::Permissive => (2_000, 500),
        };
        RiskTier {
            name,
            max_price_delta_fraction: Decimal::from_units(price),
            max_royalty_delta: Decimal::from_units(royalty),
            auto_settle_keys: keys.iter().map(|k| (*k).to_owned()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArbiterDecision {
    AutoAccept,
    Escalate,
}

pub fn arbiter_decide(tier: &RiskTier, proposed: &LicenseTerms, counter: &LicenseTerms) -> ArbiterDecision {
    let delta = diff(proposed, counter);
    let differing: BTreeSet<&str> = delta.edits.iter().map(|e| e.path[0].as_str()).collect();
    let within = |field: &str| -> bool {
        if !tier.auto_settle_keys.contains(field) {
            return false;
        }
        match field {
            "royalty_rate" | "rev_share" => {
                let (a, b) = if field == "royalty_rate" {
                    (proposed.royalty_rate, counter.royalty_rate)
                } else {
                    (proposed.rev_share, counter.rev_share)
                };
                i128::from((a.units() - b.units()).abs()) <= i128::from(tier.max_royalty_delta.units())
            }
            "upfront_fee" => {
                let delta = u128::from(proposed.upfront_fee.abs_diff(counter.upfront_fee));
                let base = u128::from(proposed.upfront_fee.max(1));
                delta * Decimal::SCALE as u128 <= tier.max_price_delta_fraction.units().max(0) as u128 * base
            }
            _ => true,
        }
    };
    if differing.iter().all(|f| within(f)) {
        ArbiterDecision::AutoAccept
    } else {
        ArbiterDecision::Escalate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(units: i64) -> Decimal {
        Decimal::from_units(units)
    }

    fn offer(royalty: i64) -> LicenseTerms {
        let mut t = LicenseTerms::new("x", "US");
        t.royalty_rate = d(royalty);
        t
    }

    fn requester_cap(cap: i64) -> NegotiationPolicy {
        NegotiationPolicy::open(Role::Requester).with_bound("royalty_rate", Bound::decimal_max(d(cap)))
    }

    fn provider_min(min: i64) -> NegotiationPolicy {
        NegotiationPolicy::open(Role::Provider)
            .with_bound("royalty_rate", Bound::Decimal { min: d(min), max: Decimal::ONE })
    }

    #[test]
    fn evaluate_boundaries() {
        assert_eq!(evaluate_offer(&requester_cap(500), &offer(500)), Evaluation::Accept);
        assert_eq!(
            evaluate_offer(&requester_cap(500), &offer(800)),
            Evaluation::Counter(TermsDelta::new(vec![Edit::set(&["royalty_rate"], d(500))]))
        );
        let strict = NegotiationPolicy::open(Role::Requester)
            .with_bound("transferability", Bound::one_of(["transferable"]))
            .with_non_negotiable("transferability");
        assert_eq!(evaluate_offer(&strict, &offer(0)), Evaluation::Reject);
    }

    #[test]
    fn revise_accepts_in_bounds_and_clamps() {
        let counter = |v| TermsDelta::new(vec![Edit::set(&["royalty_rate"], d(v))]);
        let p = provider_min(400);
        assert_eq!(revise_terms(&p, &offer(800), &counter(500)).unwrap().royalty_rate, d(500));
        let p = provider_min(400).with_step(Decimal::ONE);
        assert_eq!(revise_terms(&p, &offer(800), &counter(200)).unwrap().royalty_rate, d(400));
        let p = provider_min(400).with_step(d(5_000));
        assert_eq!(revise_terms(&p, &offer(800), &counter(200)).unwrap().royalty_rate, d(500));
    }

    #[test]
    fn revise_keeps_non_negotiable() {
        let p = provider_min(400).with_non_negotiable("royalty_rate");
        let counter = TermsDelta::new(vec![
            Edit::set(&["royalty_rate"], d(500)),
            Edit::set(&["upfront_fee"], TermValue::Integer(7)),
        ]);
        let revised = revise_terms(&p, &offer(800), &counter).unwrap();
        assert_eq!(revised.royalty_rate, d(800));
        assert_eq!(revised.upfront_fee, 7);
        let bad = TermsDelta::new(vec![Edit::set(&["nope"], d(1))]);
        assert!(matches!(revise_terms(&p, &offer(800), &bad), Err(TermsError::UnknownPath(_))));
    }

    #[test]
    fn negotiation_examples() {
        let open = NegotiationPolicy::open(Role::Requester);
        let outcome = run_negotiation(&provider_min(0), &open, &offer(800)).unwrap();
        assert!(matches!(&outcome, Outcome::AgreedTerms { terms, .. } if *terms == offer(800)));
        assert_eq!(outcome.rounds().len(), 1);

        let outcome = run_negotiation(&provider_min(400), &requester_cap(500), &offer(800)).unwrap();
        match &outcome {
            Outcome::AgreedTerms { terms, rounds } => {
                assert_eq!(terms.royalty_rate, d(500));
                assert!(rounds.len() <= 2);
                assert_eq!(rounds[1].delta, TermsDelta::new(vec![Edit::set(&["royalty_rate"], d(500))]));
            }
            other => panic!("{other:?}"),
        }

        let outcome = run_negotiation(&provider_min(400), &requester_cap(500).with_max_rounds(0), &offer(800)).unwrap();
        assert_eq!(
            outcome,
            Outcome::NoAgreement {
                default_terms: offer(800),
                unconfirmed: true,
                rejected: false,
                rounds: outcome.rounds().to_vec()
            }
        );
        assert_eq!(outcome.rounds().len(), 1);
    }

    #[test]
    fn recorded_negotiation_mints_one_draft_per_proposal() {
        let mut ledger = Ledger::new();
        ledger.register_agent("P", b"p").unwrap();
        let outcome = run_negotiation_recorded(
            &mut ledger,
            "S",
            "P",
            &provider_min(400),
            &requester_cap(500),
            &offer(800),
            NegotiationConfig::default(),
        )
        .unwrap();
        let drafts = ledger.history("S");
        assert_eq!(drafts.len(), outcome.rounds().len());
        for (r, e) in outcome.rounds().iter().zip(drafts) {
            assert_eq!(Some(e.height), r.draft_height);
            assert_eq!(e.payload.get_str("terms_hash"), Some(r.terms_hash.as_str()));
        }
    }

    #[test]
    fn arbiter_thresholds() {
        let standard = RiskTier::preset(TierName::Standard);
        assert_eq!(arbiter_decide(&standard, &offer(500), &offer(500)), ArbiterDecision::AutoAccept);
        assert_eq!(arbiter_decide(&standard, &offer(800), &offer(500)), ArbiterDecision::Escalate);
        let mut a = offer(0);
        a.upfront_fee = 100;
        let mut b = a.clone();
        b.upfront_fee = 102;
        assert_eq!(arbiter_decide(&standard, &a, &b), ArbiterDecision::AutoAccept);
        assert_eq!(arbiter_decide(&RiskTier::preset(TierName::Conservative), &a, &b), ArbiterDecision::Escalate);
        b.name = "other".into();
        assert_eq!(arbiter_decide(&standard, &a, &b), ArbiterDecision::Escalate);
    }

    #[test]
    fn tiers_nest() {
        let tiers: Vec<_> = [TierName::Conservative, TierName::Standard, TierName::Permissive]
            .into_iter()
            .map(RiskTier::preset)
            .collect();
        for w in tiers.windows(2) {
            assert!(w[0].max_price_delta_fraction <= w[1].max_price_delta_fraction);
            assert!(w[0].max_royalty_delta <= w[1].max_royalty_delta);
            assert!(w[0].auto_settle_keys.is_subset(&w[1].auto_settle_keys));
        }
    }
}
