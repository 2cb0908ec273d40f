//! Dispute filing, evidence assembly from the ledger trail, and rule-based arbitration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ledger::{AgreementToken, EntryKind, Ledger, LedgerEntry, LedgerError};
use crate::payments::UPFRONT_PURPOSE;
use crate::terms::{sha256_hex_parts, to_canonical_bytes, LicenseTerms, TermValue};
use crate::trust::{ReputationBook, ReputationEvent, TrustError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DisputeError {
    #[error("unknown license {0:?}")]
    UnknownLicense(String),
    #[error("claimant and respondent must be the two distinct parties of the license")]
    InvalidParties,
    #[error("unknown dispute {0:?}")]
    UnknownDispute(String),
    #[error("ledger fails chain verification")]
    TamperedLedger,
    #[error("malformed dispute record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Trust(#[from] TrustError),
}

macro_rules! code_enum {
    ($name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $tag),+ }
            }

            pub fn parse(tag: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.as_str() == tag)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

code_enum!(ClaimKind {
    TermsMisrepresentation => "terms_misrepresentation",
    UsageViolation => "usage_violation",
    PaymentDefault => "payment_default",
});

code_enum!(Rationale {
    HashMismatchRespondent => "hash_mismatch_respondent",
    HashMatchRespondent => "hash_match_respondent",
    ClauseAbsentFromRecord => "clause_absent_from_record",
    PaymentsSatisfied => "payments_satisfied",
    PaymentsDeficient => "payments_deficient",
    UsageWithinRestrictions => "usage_within_restrictions",
    UsageOutsideRestrictions => "usage_outside_restrictions",
});

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisputeClaim {
    pub claimant: String,
    pub respondent: String,
    pub token_license_id: String,
    pub claim_kind: ClaimKind,
    /// Hash of the terms the respondent claims to have agreed to.
    pub asserted_terms_hash: Option<String>,
    /// Clause the claimant says was agreed: (path, value).
    pub asserted_clause: Option<(Vec<String>, TermValue)>,
    /// Tags of the usage event a usage_violation claim cites.
    pub usage_tags: BTreeSet<String>,
}

impl DisputeClaim {
    pub fn new(claimant: &str, respondent: &str, license_id: &str, kind: ClaimKind) -> Self {
        DisputeClaim {
            claimant: claimant.to_owned(),
            respondent: respondent.to_owned(),
            token_license_id: license_id.to_owned(),
            claim_kind: kind,
            asserted_terms_hash: None,
            asserted_clause: None,
            usage_tags: BTreeSet::new(),
        }
    }

    pub fn to_value(&self) -> TermValue {
        let mut m = BTreeMap::new();
        m.insert("claim_kind".to_owned(), self.claim_kind.as_str().into());
        m.insert("claimant".to_owned(), self.claimant.as_str().into());
        m.insert("respondent".to_owned(), self.respondent.as_str().into());
        m.insert("token_license_id".to_owned(), self.token_license_id.as_str().into());
        if let Some(h) = &self.asserted_terms_hash {
            m.insert("asserted_terms_hash".to_owned(), h.as_str().into());
        }
        if let Some((path, value)) = &self.asserted_clause {
            m.insert(
                "asserted_clause".to_owned(),
                TermValue::from_pairs([("path", TermValue::text_list(path)), ("value", value.clone())]),
            );
        }
        if !self.usage_tags.is_empty() {
            m.insert("usage_tags".to_owned(), TermValue::text_list(&self.usage_tags));
        }
        TermValue::Map(m)
    }

    pub fn from_value(value: &TermValue) -> Option<Self> {
        let clause = match value.get("asserted_clause") {
            Some(c) => {
                let path = c.get("path")?.as_list()?.iter().map(|p| p.as_str().map(str::to_owned)).collect::<Option<_>>()?;
                Some((path, c.get("value")?.clone()))
            }
            None => None,
        };
        let usage_tags = match value.get("usage_tags") {
            Some(t) => t.as_list()?.iter().map(|p| p.as_str().map(str::to_owned)).collect::<Option<_>>()?,
            None => BTreeSet::new(),
        };
        Some(DisputeClaim {
            claimant: value.get_str("claimant")?.to_owned(),
            respondent: value.get_str("respondent")?.to_owned(),
            token_license_id: value.get_str("token_license_id")?.to_owned(),
            claim_kind: ClaimKind::parse(value.get_str("claim_kind")?)?,
            asserted_terms_hash: value.get_str("asserted_terms_hash").map(str::to_owned),
            asserted_clause: clause,
            usage_tags,
        })
    }
}

/// Appends a dispute entry and returns its 16-hex id.
pub fn file_dispute(ledger: &mut Ledger, claim: &DisputeClaim) -> Result<String, DisputeError> {
    let token = ledger
        .token(&claim.token_license_id)
        .ok_or_else(|| DisputeError::UnknownLicense(claim.token_license_id.clone()))?;
    let parties = [token.metadata.issuer_id.as_str(), token.metadata.holder_id.as_str()];
    if claim.claimant == claim.respondent
        || !parties.contains(&claim.claimant.as_str())
        || !parties.contains(&claim.respondent.as_str())
    {
        return Err(DisputeError::InvalidParties);
    }
    let mut payload = claim.to_value();
    let height = ledger.next_height().to_string();
    let dispute_id = sha256_hex_parts(&[&to_canonical_bytes(&payload), height.as_bytes()])[..16].to_owned();
    let map = payload.as_map_mut().expect("claim encodes as a map");
    map.insert("dispute_id".to_owned(), dispute_id.as_str().into());
    if let Some(session) = &token.session_id {
        map.insert("session_id".to_owned(), session.as_str().into());
    }
    ledger.append(EntryKind::Dispute, payload)?;
    Ok(dispute_id)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvidenceBundle {
    pub dispute: LedgerEntry,
    pub final_token: LedgerEntry,
    pub drafts: Vec<LedgerEntry>,
    pub payments: Vec<LedgerEntry>,
}

impl EvidenceBundle {
    pub fn claim(&self) -> Option<DisputeClaim> {
        DisputeClaim::from_value(&self.dispute.payload)
    }

    pub fn final_terms(&self) -> Option<LicenseTerms> {
        LicenseTerms::from_value(self.final_token.payload.get("terms")?).ok()
    }

    pub fn draft_terms(&self) -> Vec<LicenseTerms> {
        self.drafts
            .iter()
            .filter_map(|d| LicenseTerms::from_value(d.payload.get("terms")?).ok())
            .collect()
    }

    pub fn to_value(&self) -> TermValue {
        let list = |entries: &[LedgerEntry]| TermValue::List(entries.iter().map(LedgerEntry::to_value).collect());
        TermValue::from_pairs([
            ("dispute", self.dispute.to_value()),
            ("drafts", list(&self.drafts)),
            ("final_token", self.final_token.to_value()),
            ("payments", list(&self.payments)),
        ])
    }

    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        to_canonical_bytes(&self.to_value())
    }
}

pub fn find_dispute<'l>(ledger: &'l Ledger, dispute_id: &str) -> Option<&'l LedgerEntry> {
    ledger
        .entries()
        .iter()
        .find(|e| e.kind == EntryKind::Dispute && e.payload.get_str("dispute_id") == Some(dispute_id))
}

/// Gathers the final token, the session's drafts, and its payments, verbatim.
pub fn collect_evidence(ledger: &Ledger, dispute_id: &str) -> Result<EvidenceBundle, DisputeError> {
    if !ledger.verify_chain() {
        return Err(DisputeError::TamperedLedger);
    }
    let dispute = find_dispute(ledger, dispute_id).ok_or_else(|| DisputeError::UnknownDispute(dispute_id.to_owned()))?;
    let license_id = dispute
        .payload
        .get_str("token_license_id")
        .ok_or_else(|| DisputeError::Malformed("missing token_license_id".into()))?;
    let token = ledger.token(license_id).ok_or_else(|| DisputeError::UnknownLicense(license_id.to_owned()))?;
    let final_token = ledger.entry(token.height).expect("token height resolves").clone();
    let (drafts, payments) = match &token.session_id {
        Some(session) => {
            let history = ledger.history(session);
            let pick = |kind| history.iter().filter(|e| e.kind == kind).map(|e| (*e).clone()).collect::<Vec<_>>();
            (pick(EntryKind::DraftToken), pick(EntryKind::Payment))
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(EvidenceBundle { dispute: dispute.clone(), final_token, drafts, payments })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub dispute_id: String,
    pub winner: String,
    pub loser: String,
    pub rationale: Rationale,
}

impl Verdict {
    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("dispute_id", TermValue::from(self.dispute_id.as_str())),
            ("loser", self.loser.as_str().into()),
            ("rationale", self.rationale.as_str().into()),
            ("winner", self.winner.as_str().into()),
        ])
    }
}

/// Restriction tag → usage tags it forbids. `no_<x>` forbids `x`.
pub fn restriction_conflicts(restriction: &str, usage: &str) -> bool {
    match restriction {
        "read_only" => matches!(usage, "modify" | "write" | "fine_tune" | "derivative"),
        r => r.strip_prefix("no_").is_some_and(|x| x == usage),
    }
}

/// Does any draft or the final terms carry `value` at `path`?
fn clause_on_record(evidence: &EvidenceBundle, path: &[String], value: &TermValue) -> bool {
    evidence
        .final_terms()
        .into_iter()
        .chain(evidence.draft_terms())
        .any(|t| t.clause(path).as_ref() == Some(value))
}

pub fn arbitrate(claim: &DisputeClaim, evidence: &EvidenceBundle) -> Verdict {
    let final_hash = evidence.final_token.payload.get_str("terms_hash").unwrap_or_default();
    let (claimant_wins, rationale) = match claim.claim_kind {
        ClaimKind::TermsMisrepresentation => match (&claim.asserted_clause, &claim.asserted_terms_hash) {
            (Some((path, value)), _) if !clause_on_record(evidence, path, value) => {
                (false, Rationale::ClauseAbsentFromRecord)
            }
            (_, Some(asserted)) if asserted != final_hash => (true, Rationale::HashMismatchRespondent),
            _ => (false, Rationale::HashMatchRespondent),
        },
        ClaimKind::PaymentDefault => {
            let terms = evidence.final_terms();
            let owed = terms.as_ref().map_or(0, |t| t.upfront_fee);
            let payer = evidence
                .final_token
                .payload
                .get("metadata")
                .and_then(|m| m.get_str("holder_id"))
                .unwrap_or_default();
            let paid: u128 = evidence
                .payments
                .iter()
                .filter(|p| p.payload.get_str("from") == Some(payer))
                .filter(|p| p.payload.get_str("purpose") == Some(UPFRONT_PURPOSE))
                .filter_map(|p| p.payload.get("amount").and_then(TermValue::as_u64))
                .map(u128::from)
                .sum();
            if paid < u128::from(owed) {
                (true, Rationale::PaymentsDeficient)
            } else {
                (false, Rationale::PaymentsSatisfied)
            }
        }
        ClaimKind::UsageViolation => {
            let restrictions = evidence.final_terms().map(|t| t.ip_restrictions).unwrap_or_default();
            let conflict = restrictions
                .iter()
                .any(|r| claim.usage_tags.iter().any(|u| restriction_conflicts(r, u)));
            if conflict {
                (true, Rationale::UsageOutsideRestrictions)
            } else {
                (false, Rationale::UsageWithinRestrictions)
            }
        }
    };
    let (winner, loser) = if claimant_wins {
        (&claim.claimant, &claim.respondent)
    } else {
        (&claim.respondent, &claim.claimant)
    };
    Verdict {
        dispute_id: evidence.dispute.payload.get_str("dispute_id").unwrap_or_default().to_owned(),
        winner: winner.clone(),
        loser: loser.clone(),
        rationale,
    }
}

pub fn record_verdict(ledger: &mut Ledger, verdict: &Verdict) -> Result<u64, DisputeError> {
    let mut payload = verdict.to_value();
    if let Some(session) = find_dispute(ledger, &verdict.dispute_id).and_then(|e| e.session_id()) {
        let session = session.to_owned();
        payload.as_map_mut().expect("map").insert("session_id".to_owned(), session.into());
    }
    Ok(ledger.append(EntryKind::Verdict, payload)?.height)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VerdictEffect {
    Reputation { agent_id: String, event: ReputationEvent },
    Revoked { license_id: String },
}

pub const REVOKE_ON_DISPUTE_LOSS: &str = "dispute_loss";

/// Reputation updates for both parties and, when the holder lost under a
/// `dispute_loss` revocation condition, revocation of the token.
pub fn apply_verdict(
    ledger: &mut Ledger,
    book: &mut ReputationBook,
    verdict: &Verdict,
    token: &AgreementToken,
) -> Result<Vec<VerdictEffect>, DisputeError> {
    let context = Some(("dispute_id", verdict.dispute_id.as_str()));
    let mut effects = Vec::new();
    for (agent, event) in
        [(&verdict.winner, ReputationEvent::DisputeWon), (&verdict.loser, ReputationEvent::DisputeLost)]
    {
        book.record_outcome(ledger, agent, event, context)?;
        effects.push(VerdictEffect::Reputation { agent_id: agent.clone(), event });
    }
    if verdict.loser == token.metadata.holder_id
        && token.terms.revocation_conditions.contains(REVOKE_ON_DISPUTE_LOSS)
        && !ledger.is_revoked(token.license_id())
    {
        let details = TermValue::from_pairs([
            ("dispute_id", TermValue::from(verdict.dispute_id.as_str())),
            ("reason", REVOKE_ON_DISPUTE_LOSS.into()),
        ]);
        ledger.revoke(token.license_id(), details)?;
        effects.push(VerdictEffect::Revoked { license_id: token.license_id().to_owned() });
    }
    Ok(effects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::MintRequest;
    use crate::payments::{compute_split, PaymentMemo, RoyaltyObligation, Wallets};
    use crate::terms::{terms_hash, Decimal};
    use crate::trust::ScoreWeights;

    struct Fixture {
        ledger: Ledger,
        token: AgreementToken,
    }

    fn terms(royalty: i64) -> LicenseTerms {
        let mut t = LicenseTerms::new("data", "US");
        t.royalty_rate = Decimal::from_units(royalty);
        t.ip_restrictions.insert("read_only".into());
        t.upfront_fee = 100;
        t
    }

    fn fixture(drafts: &[i64], final_royalty: i64, revoke_on_loss: bool) -> Fixture {
        let mut ledger = Ledger::new();
        ledger.register_agent("A", b"a").unwrap();
        ledger.register_agent("B", b"b").unwrap();
        for (i, r) in drafts.iter().enumerate() {
            ledger.mint_draft("S", i as u32 + 1, "B", &terms(*r)).unwrap();
        }
        let mut t = terms(final_royalty);
        if revoke_on_loss {
            t.revocation_conditions.insert(REVOKE_ON_DISPUTE_LOSS.into());
        }
        let token = ledger.mint_agreement(&MintRequest::new("A", "B", t).with_session("S")).unwrap();
        Fixture { ledger, token }
    }

    #[test]
    fn filing_validates_parties_and_license() {
        let mut f = fixture(&[], 500, false);
        let claim = DisputeClaim::new("B", "A", f.token.license_id(), ClaimKind::PaymentDefault);
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        assert_eq!(id.len(), 16);
        assert!(f.ledger.history("S").iter().any(|e| e.kind == EntryKind::Dispute));

        let third = DisputeClaim::new("C", "A", f.token.license_id(), ClaimKind::PaymentDefault);
        assert_eq!(file_dispute(&mut f.ledger, &third), Err(DisputeError::InvalidParties));
        let unknown = DisputeClaim::new("B", "A", "nope", ClaimKind::PaymentDefault);
        assert_eq!(file_dispute(&mut f.ledger, &unknown), Err(DisputeError::UnknownLicense("nope".into())));
    }

    #[test]
    fn evidence_is_verbatim_and_ordered() {
        let mut f = fixture(&[800, 600, 500], 500, false);
        let mut w = Wallets::new();
        w.open("A", 1000);
        w.open("B", 0);
        w.transfer(&mut f.ledger, "A", "B", 100, &PaymentMemo::new(UPFRONT_PURPOSE).session("S")).unwrap();
        let claim = DisputeClaim::new("B", "A", f.token.license_id(), ClaimKind::PaymentDefault);
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let bundle = collect_evidence(&f.ledger, &id).unwrap();
        assert_eq!(bundle.drafts.len() + 1 + bundle.payments.len(), 5);
        for e in bundle.drafts.iter().chain(&bundle.payments).chain([&bundle.final_token]) {
            assert_eq!(f.ledger.entry(e.height), Some(e));
        }
        assert!(bundle.drafts.windows(2).all(|w| w[0].height < w[1].height));
        assert_eq!(collect_evidence(&f.ledger, "ffff"), Err(DisputeError::UnknownDispute("ffff".into())));

        let mut entries = f.ledger.entries().to_vec();
        entries[2].payload.as_map_mut().unwrap().insert("round".into(), TermValue::Integer(9));
        let tampered = Ledger::from_entries(entries);
        assert_eq!(collect_evidence(&tampered, &id), Err(DisputeError::TamperedLedger));
    }

    #[test]
    fn misrepresentation_rules() {
        let mut f = fixture(&[800, 500], 500, false);
        let mut claim = DisputeClaim::new("B", "A", f.token.license_id(), ClaimKind::TermsMisrepresentation);
        claim.asserted_terms_hash = Some(terms_hash(&terms(200)).unwrap());
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let v = arbitrate(&claim, &collect_evidence(&f.ledger, &id).unwrap());
        assert_eq!((v.winner.as_str(), v.rationale), ("B", Rationale::HashMismatchRespondent));

        let mut claim = DisputeClaim::new("B", "A", f.token.license_id(), ClaimKind::TermsMisrepresentation);
        claim.asserted_clause = Some((vec!["royalty_rate".into()], Decimal::from_units(1200).into()));
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let v = arbitrate(&claim, &collect_evidence(&f.ledger, &id).unwrap());
        assert_eq!((v.winner.as_str(), v.rationale), ("A", Rationale::ClauseAbsentFromRecord));

        claim.asserted_clause = Some((vec!["royalty_rate".into()], Decimal::from_units(800).into()));
        claim.asserted_terms_hash = Some(f.token.terms_hash.clone());
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let bundle = collect_evidence(&f.ledger, &id).unwrap();
        assert_eq!(arbitrate(&claim, &bundle).rationale, Rationale::HashMatchRespondent);
        assert_eq!(arbitrate(&claim, &bundle), arbitrate(&claim, &bundle));
    }

    #[test]
    fn payment_default_against_split() {
        let mut f = fixture(&[], 500, false);
        let mut w = Wallets::new();
        for (a, b) in [("A", 1000), ("B", 0), ("G", 0)] {
            w.open(a, b);
        }
        let plan = compute_split(100, "B", &[RoyaltyObligation::new("G", Decimal::from_units(1500))]).unwrap();
        w.settle(&mut f.ledger, &plan, "A", &PaymentMemo::new(UPFRONT_PURPOSE).session("S")).unwrap();
        let claim = DisputeClaim::new("B", "A", f.token.license_id(), ClaimKind::PaymentDefault);
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let v = arbitrate(&claim, &collect_evidence(&f.ledger, &id).unwrap());
        assert_eq!((v.winner.as_str(), v.rationale), ("A", Rationale::PaymentsSatisfied));

        let mut g = fixture(&[], 500, false);
        let claim = claim_for(&g, ClaimKind::PaymentDefault);
        let id = file_dispute(&mut g.ledger, &claim).unwrap();
        let bundle = collect_evidence(&g.ledger, &id).unwrap();
        assert!(bundle.payments.is_empty());
        assert_eq!(arbitrate(&claim, &bundle).rationale, Rationale::PaymentsDeficient);
    }

    fn claim_for(f: &Fixture, kind: ClaimKind) -> DisputeClaim {
        DisputeClaim::new("B", "A", f.token.license_id(), kind)
    }

    #[test]
    fn usage_rules() {
        let mut f = fixture(&[], 500, false);
        let mut claim = claim_for(&f, ClaimKind::UsageViolation);
        claim.usage_tags.insert("modify".into());
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let bundle = collect_evidence(&f.ledger, &id).unwrap();
        assert_eq!(arbitrate(&claim, &bundle).rationale, Rationale::UsageOutsideRestrictions);
        claim.usage_tags = ["read".to_owned()].into();
        assert_eq!(arbitrate(&claim, &bundle).rationale, Rationale::UsageWithinRestrictions);
        assert!(restriction_conflicts("no_resale", "resale"));
        assert!(!restriction_conflicts("no_resale", "read"));
    }

    #[test]
    fn verdict_effects() {
        let mut f = fixture(&[], 500, true);
        let mut book = ReputationBook::new();
        let mut claim = claim_for(&f, ClaimKind::UsageViolation);
        claim.usage_tags.insert("modify".into());
        let id = file_dispute(&mut f.ledger, &claim).unwrap();
        let v = arbitrate(&claim, &collect_evidence(&f.ledger, &id).unwrap());
        let before = book.score("B", &ScoreWeights::default());
        record_verdict(&mut f.ledger, &v).unwrap();
        let effects = apply_verdict(&mut f.ledger, &mut book, &v, &f.token).unwrap();
        assert!(effects.contains(&VerdictEffect::Revoked { license_id: f.token.license_id().into() }));
        assert!(!f.ledger.verify_token(&f.token, &f.token.terms));
        assert!(book.score("B", &ScoreWeights::default()) > before);

        let mut g = fixture(&[], 500, false);
        let claim = claim_for(&g, ClaimKind::PaymentDefault);
        let id = file_dispute(&mut g.ledger, &claim).unwrap();
        let mut v = arbitrate(&claim, &collect_evidence(&g.ledger, &id).unwrap());
        std::mem::swap(&mut v.winner, &mut v.loser);
        let effects = apply_verdict(&mut g.ledger, &mut book, &v, &g.token).unwrap();
        assert_eq!(effects.len(), 2);
        assert!(g.ledger.verify_token(&g.token, &g.token.terms));
    }
}
