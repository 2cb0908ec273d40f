//! Jurisdiction compatibility gate and reputation bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ledger::{EntryKind, Ledger, LedgerEntry, LedgerError};
use crate::terms::{CodeRegistry, Decimal, LicenseTerms, TermValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrustError {
    #[error("unknown jurisdiction {0:?}")]
    UnknownJurisdiction(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JurisdictionProfile {
    pub code: String,
    pub legal_system: String,
    pub privacy_regimes: BTreeSet<String>,
    /// Codes this jurisdiction accepts personal data transfers to.
    pub adequacy: BTreeSet<String>,
}

impl JurisdictionProfile {
    pub fn new(code: &str, legal_system: &str) -> Self {
        JurisdictionProfile {
            code: code.to_owned(),
            legal_system: legal_system.to_owned(),
            privacy_regimes: BTreeSet::new(),
            adequacy: BTreeSet::new(),
        }
    }

    pub fn with_regime(mut self, regime: &str) -> Self {
        self.privacy_regimes.insert(regime.to_owned());
        self
    }

    pub fn with_adequate(mut self, code: &str) -> Self {
        self.adequacy.insert(code.to_owned());
        self
    }

    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("adequacy", TermValue::text_list(&self.adequacy)),
            ("code", self.code.as_str().into()),
            ("legal_system", self.legal_system.as_str().into()),
            ("privacy_regimes", TermValue::text_list(&self.privacy_regimes)),
        ])
    }

    /// `code` and `legal_system` are required; the sets default to empty.
    pub fn from_value(value: &TermValue) -> Option<Self> {
        let set = |key: &str| -> Option<BTreeSet<String>> {
            match value.get(key) {
                None => Some(BTreeSet::new()),
                Some(v) => v.as_list()?.iter().map(|t| t.as_str().map(str::to_owned)).collect(),
            }
        };
        Some(JurisdictionProfile {
            code: value.get_str("code")?.to_owned(),
            legal_system: value.get_str("legal_system")?.to_owned(),
            privacy_regimes: set("privacy_regimes")?,
            adequacy: set("adequacy")?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompatibilityRules {
    blocked_pairs: BTreeSet<(String, String)>,
    pub personal_data_rule: bool,
    /// Minimum requester score for deals across legal systems; off when `None`.
    pub min_cross_system_score: Option<Decimal>,
}

impl CompatibilityRules {
    pub fn new() -> Self {
        CompatibilityRules { personal_data_rule: true, ..Default::default() }
    }

    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b { (a.to_owned(), b.to_owned()) } else { (b.to_owned(), a.to_owned()) }
    }

    pub fn block(mut self, a: &str, b: &str) -> Self {
        self.blocked_pairs.insert(Self::key(a, b));
        self
    }

    pub fn is_blocked(&self, a: &str, b: &str) -> bool {
        self.blocked_pairs.contains(&Self::key(a, b))
    }

    pub fn blocked_pairs(&self) -> impl Iterator<Item = &(String, String)> {
        self.blocked_pairs.iter()
    }
}

pub const PERSONAL_DATA: &str = "personal_data";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Compatibility {
    Allow,
    Fail(String),
}

impl Compatibility {
    pub fn is_allowed(&self) -> bool {
        matches!(self, Compatibility::Allow)
    }
}

pub fn check_compatibility(
    rules: &CompatibilityRules,
    requester: &JurisdictionProfile,
    provider: &JurisdictionProfile,
    flags: &BTreeSet<String>,
    terms: &LicenseTerms,
) -> Result<Compatibility, TrustError> {
    let registry = CodeRegistry::iso();
    for profile in [requester, provider] {
        if !registry.contains(&profile.code) {
            return Err(TrustError::UnknownJurisdiction(profile.code.clone()));
        }
    }
    if rules.is_blocked(&requester.legal_system, &provider.legal_system) {
        return Ok(Compatibility::Fail("incompatible_legal_frameworks".into()));
    }
    if rules.personal_data_rule && flags.contains(PERSONAL_DATA) {
        let adequate = requester.code == provider.code || provider.adequacy.contains(&requester.code);
        let regimes_met = terms.compliance_requirements.is_subset(&requester.privacy_regimes);
        if !adequate && !regimes_met {
            return Ok(Compatibility::Fail("privacy_violation".into()));
        }
    }
    Ok(Compatibility::Allow)
}

/// Optional score threshold for requesters outside the provider's legal system.
pub fn reputation_gate(
    rules: &CompatibilityRules,
    requester: &JurisdictionProfile,
    provider: &JurisdictionProfile,
    requester_score: Decimal,
) -> Compatibility {
    match rules.min_cross_system_score {
        Some(min) if requester.legal_system != provider.legal_system && requester_score < min => {
            Compatibility::Fail("insufficient_reputation".into())
        }
        _ => Compatibility::Allow,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReputationEvent {
    DealCompleted,
    DisputeWon,
    DisputeLost,
    ComplianceViolation,
}

impl ReputationEvent {
    pub const ALL: [ReputationEvent; 4] = [
        ReputationEvent::DealCompleted,
        ReputationEvent::DisputeWon,
        ReputationEvent::DisputeLost,
        ReputationEvent::ComplianceViolation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReputationEvent::DealCompleted => "deal_completed",
            ReputationEvent::DisputeWon => "dispute_won",
            ReputationEvent::DisputeLost => "dispute_lost",
            ReputationEvent::ComplianceViolation => "compliance_violation",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == tag)
    }
}

impl fmt::Display for ReputationEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReputationRecord {
    pub agent_id: String,
    pub successful_deals: u64,
    pub disputes_won: u64,
    pub disputes_lost: u64,
    pub compliance_violations: u64,
}

impl ReputationRecord {
    pub fn new(agent_id: &str) -> Self {
        ReputationRecord { agent_id: agent_id.to_owned(), ..Default::default() }
    }

    pub fn apply(&mut self, event: ReputationEvent) {
        let counter = match event {
            ReputationEvent::DealCompleted => &mut self.successful_deals,
            ReputationEvent::DisputeWon => &mut self.disputes_won,
            ReputationEvent::DisputeLost => &mut self.disputes_lost,
            ReputationEvent::ComplianceViolation => &mut self.compliance_violations,
        };
        *counter = counter.saturating_add(1);
    }

    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("agent_id", TermValue::from(self.agent_id.as_str())),
            ("compliance_violations", self.compliance_violations.into()),
            ("disputes_lost", self.disputes_lost.into()),
            ("disputes_won", self.disputes_won.into()),
            ("successful_deals", self.successful_deals.into()),
        ])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreWeights {
    pub successful: Decimal,
    pub lost: Decimal,
    pub compliance: Decimal,
    pub won: Decimal,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            successful: Decimal::ONE,
            lost: Decimal::from_units(20_000),
            compliance: Decimal::from_units(15_000),
            won: Decimal::from_units(5_000),
        }
    }
}

/// `max(0, w_s·deals + w_w·won − w_l·lost − w_c·violations)`.
pub fn score(record: &ReputationRecord, weights: &ScoreWeights) -> Decimal {
    let term = |w: Decimal, n: u64| i128::from(w.units()) * i128::from(n);
    let total = term(weights.successful, record.successful_deals) + term(weights.won, record.disputes_won)
        - term(weights.lost, record.disputes_lost)
        - term(weights.compliance, record.compliance_violations);
    Decimal::from_units(total.clamp(0, i128::from(i64::MAX)) as i64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReputationBook {
    records: BTreeMap<String, ReputationRecord>,
}

impl ReputationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, agent_id: &str) -> ReputationRecord {
        self.records.get(agent_id).cloned().unwrap_or_else(|| ReputationRecord::new(agent_id))
    }

    pub fn records(&self) -> impl Iterator<Item = &ReputationRecord> {
        self.records.values()
    }

    pub fn score(&self, agent_id: &str, weights: &ScoreWeights) -> Decimal {
        score(&self.record(agent_id), weights)
    }

    /// Increments the counter and appends a reputation_event entry.
    pub fn record_outcome(
        &mut self,
        ledger: &mut Ledger,
        agent_id: &str,
        event: ReputationEvent,
        context: Option<(&str, &str)>,
    ) -> Result<ReputationRecord, TrustError> {
        let mut payload = TermValue::from_pairs([
            ("agent_id", TermValue::from(agent_id)),
            ("event", event.as_str().into()),
        ]);
        if let Some((key, value)) = context {
            payload.as_map_mut().expect("map").insert(key.to_owned(), value.into());
        }
        ledger.append(EntryKind::ReputationEvent, payload)?;
        let record = self.records.entry(agent_id.to_owned()).or_insert_with(|| ReputationRecord::new(agent_id));
        record.apply(event);
        Ok(record.clone())
    }

    /// Rebuilds every record from reputation_event entries.
    pub fn replay(entries: &[LedgerEntry]) -> ReputationBook {
        let mut book = ReputationBook::new();
        for entry in entries.iter().filter(|e| e.kind == EntryKind::ReputationEvent) {
            let (Some(agent), Some(event)) =
                (entry.payload.get_str("agent_id"), entry.payload.get_str("event").and_then(ReputationEvent::parse))
            else {
                continue;
            };
            book.records.entry(agent.to_owned()).or_insert_with(|| ReputationRecord::new(agent)).apply(event);
        }
        book
    }
}
