//! Simulated append-only ledger.
//!
//! Each entry commits to its predecessor: `entry_hash = SHA-256(prev ∥ payload_hash)`
//! with 64 zeros standing in for the predecessor of entry 0. Every payload is a
//! map carrying its own `kind`, so the entry kind is covered by the chain too.

mod keys;
mod token;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::terms::{
    self, expiry_passed, sha256_hex_parts, terms_hash, to_canonical_bytes, value_hash,
    LicenseMetadata, LicenseTerms, TermValue, TermsError, Violation,
};

pub use keys::KeyRegistry;
pub use token::{AgreementToken, DraftToken, MintRequest, PendingAgreement};

/// Predecessor hash of entry 0.
pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryKind {
    AgreementToken,
    DraftToken,
    Payment,
    Dispute,
    Verdict,
    ReputationEvent,
    Revocation,
}

impl EntryKind {
    pub const ALL: [EntryKind; 7] = [
        EntryKind::AgreementToken,
        EntryKind::DraftToken,
        EntryKind::Payment,
        EntryKind::Dispute,
        EntryKind::Verdict,
        EntryKind::ReputationEvent,
        EntryKind::Revocation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::AgreementToken => "agreement_token",
            EntryKind::DraftToken => "draft_token",
            EntryKind::Payment => "payment",
            EntryKind::Dispute => "dispute",
            EntryKind::Verdict => "verdict",
            EntryKind::ReputationEvent => "reputation_event",
            EntryKind::Revocation => "revocation",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == tag)
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub height: u64,
    pub kind: EntryKind,
    pub payload: TermValue,
    pub payload_hash: String,
    pub entry_hash: String,
}

impl LedgerEntry {
    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("entry_hash", TermValue::from(self.entry_hash.clone())),
            ("height", self.height.into()),
            ("kind", self.kind.as_str().into()),
            ("payload", self.payload.clone()),
            ("payload_hash", self.payload_hash.clone().into()),
        ])
    }

    pub fn from_value(value: &TermValue) -> Option<Self> {
        if value.as_map()?.len() != 5 {
            return None;
        }
        let payload = value.get("payload")?.clone();
        payload.as_map()?;
        Some(LedgerEntry {
            height: value.get("height")?.as_u64()?,
            kind: EntryKind::parse(value.get_str("kind")?)?,
            payload,
            payload_hash: value.get_str("payload_hash")?.to_owned(),
            entry_hash: value.get_str("entry_hash")?.to_owned(),
        })
    }

    pub fn session_id(&self) -> Option<&str> {
        self.payload.get_str("session_id")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("agent {0:?} is already registered")]
    DuplicateAgent(String),
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("invalid terms: {0:?}")]
    InvalidTerms(Vec<Violation>),
    #[error("terms expired on {0}")]
    ExpiredTerms(String),
    #[error("session {session:?}: expected draft round {expected}, got {got}")]
    NonMonotonicRound { session: String, expected: u32, got: u32 },
    #[error("unknown license {0:?}")]
    UnknownLicense(String),
    #[error("license {0:?} is already minted")]
    DuplicateLicense(String),
    #[error("lineage of {0:?} contains a cycle")]
    CyclicLineage(String),
    #[error("malformed date {0:?}")]
    MalformedDate(String),
    #[error("entries of kind {0} are appended through their dedicated operation")]
    ReservedKind(EntryKind),
    #[error("payload must be a map")]
    PayloadNotMap,
    #[error("ledger export parse error: {0}")]
    Parse(String),
}

impl From<TermsError> for LedgerError {
    fn from(err: TermsError) -> Self {
        match err {
            TermsError::InvalidTerms(v) | TermsError::InvalidResult(v) => LedgerError::InvalidTerms(v),
            TermsError::MalformedDate(d) => LedgerError::MalformedDate(d),
            other => LedgerError::InvalidTerms(vec![Violation::new("", other.to_string())]),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Ledger {
    entries: Vec<LedgerEntry>,
    keys: KeyRegistry,
    current_date: Option<String>,
    licenses: BTreeMap<String, u64>,
    draft_rounds: BTreeMap<String, u32>,
    revoked: BTreeSet<String>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn entry(&self, height: u64) -> Option<&LedgerEntry> {
        usize::try_from(height).ok().and_then(|h| self.entries.get(h))
    }

    pub fn next_height(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn keys(&self) -> &KeyRegistry {
        &self.keys
    }

    pub fn current_date(&self) -> Option<&str> {
        self.current_date.as_deref()
    }

    /// Sets the date used for expiry checks at mint time.
    pub fn set_current_date(&mut self, date: Option<&str>) -> Result<(), LedgerError> {
        if let Some(d) = date {
            if !terms::is_iso_date(d) {
                return Err(LedgerError::MalformedDate(d.to_owned()));
            }
        }
        self.current_date = date.map(str::to_owned);
        Ok(())
    }

    fn push(&mut self, kind: EntryKind, mut payload: TermValue) -> Result<&LedgerEntry, LedgerError> {
        let map = payload.as_map_mut().ok_or(LedgerError::PayloadNotMap)?;
        map.insert("kind".to_owned(), kind.as_str().into());
        let payload_hash = value_hash(&payload);
        let prev = self.entries.last().map_or(GENESIS_HASH, |e| e.entry_hash.as_str());
        let entry_hash = sha256_hex_parts(&[prev.as_bytes(), payload_hash.as_bytes()]);
        let height = self.next_height();
        self.entries.push(LedgerEntry { height, kind, payload, payload_hash, entry_hash });
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Appends a payment, dispute, verdict, or reputation record.
    pub fn append(&mut self, kind: EntryKind, payload: TermValue) -> Result<&LedgerEntry, LedgerError> {
        match kind {
            EntryKind::AgreementToken | EntryKind::DraftToken | EntryKind::Revocation => {
                Err(LedgerError::ReservedKind(kind))
            }
            _ => self.push(kind, payload),
        }
    }

    pub fn register_agent(&mut self, agent_id: &str, secret_key: &[u8]) -> Result<(), LedgerError> {
        let height = self.next_height();
        self.keys.register(agent_id, secret_key, height)?;
        self.push(
            EntryKind::ReputationEvent,
            TermValue::from_pairs([
                ("agent_id", TermValue::from(agent_id)),
                ("event", "registered".into()),
            ]),
        )?;
        Ok(())
    }

    pub fn sign(&self, agent_id: &str, payload: &[u8]) -> Result<String, LedgerError> {
        self.keys.sign(agent_id, payload)
    }

    fn signing_bytes(metadata: &LicenseMetadata, terms_hash: &str) -> Vec<u8> {
        let mut bytes = to_canonical_bytes(&metadata.unsigned_value());
        bytes.extend_from_slice(terms_hash.as_bytes());
        bytes
    }

    /// Builds and signs an agreement (as the requester) without appending it.
    pub fn prepare_agreement(&self, request: &MintRequest) -> Result<PendingAgreement, LedgerError> {
        for agent in [&request.requester_id, &request.issuer_id] {
            if !self.keys.contains(agent) {
                return Err(LedgerError::UnknownAgent(agent.clone()));
            }
        }
        let hash = terms_hash(&request.terms)?;
        if let Some(today) = &self.current_date {
            for expiry in [&request.terms.duration, &request.expiry_date] {
                if expiry_passed(expiry, today)? {
                    return Err(LedgerError::ExpiredTerms(expiry.to_string()));
                }
            }
        }
        let version = match &request.previous_license_id {
            Some(prev) => {
                let previous = self.token(prev).ok_or_else(|| LedgerError::UnknownLicense(prev.clone()))?;
                previous.metadata.version + 1
            }
            None => 1,
        };
        let mut metadata = LicenseMetadata {
            license_id: String::new(),
            issuer_id: request.issuer_id.clone(),
            holder_id: request.requester_id.clone(),
            issue_date: self.next_height(),
            expiry_date: request.expiry_date.clone(),
            version,
            link_to_terms: hash.clone(),
            previous_license_id: request.previous_license_id.clone(),
            signature: String::new(),
        };
        metadata.license_id = metadata.derive_license_id();
        let signature = self.sign(&request.requester_id, &Self::signing_bytes(&metadata, &hash))?;
        metadata.signature = signature.clone();
        Ok(PendingAgreement {
            metadata,
            terms: request.terms.clone(),
            terms_hash: hash,
            requester_signature: signature,
            session_id: request.session_id.clone(),
        })
    }

    /// Signature, hashes, id derivation, and lineage of an agreement, whether
    /// or not it has been appended.
    fn agreement_is_sound(&self, agreement: &PendingAgreement, terms: &LicenseTerms) -> bool {
        let meta = &agreement.metadata;
        let Ok(expected_hash) = terms_hash(terms) else {
            return false;
        };
        if agreement.terms_hash != expected_hash
            || meta.link_to_terms != expected_hash
            || terms_hash(&agreement.terms).ok().as_deref() != Some(expected_hash.as_str())
            || meta.license_id != meta.derive_license_id()
            || meta.signature != agreement.requester_signature
            || meta.version == 0
        {
            return false;
        }
        if let Some(prev) = &meta.previous_license_id {
            match self.token(prev) {
                Some(previous) if meta.version > previous.metadata.version => {}
                _ => return false,
            }
        }
        let message = Self::signing_bytes(meta, &agreement.terms_hash);
        self.keys
            .verify(&meta.holder_id, &message, &agreement.requester_signature)
            .unwrap_or(false)
    }

    /// Verification of a not-yet-appended agreement, as performed before an
    /// atomic commit.
    pub fn verify_pending(&self, agreement: &PendingAgreement, terms: &LicenseTerms) -> bool {
        !self.licenses.contains_key(agreement.license_id())
            && self.agreement_is_sound(agreement, terms)
    }

    pub fn commit_agreement(&mut self, agreement: PendingAgreement) -> Result<AgreementToken, LedgerError> {
        let license_id = agreement.license_id().to_owned();
        if self.licenses.contains_key(&license_id) {
            return Err(LedgerError::DuplicateLicense(license_id));
        }
        if let Some(prev) = &agreement.metadata.previous_license_id {
            if !self.licenses.contains_key(prev) {
                return Err(LedgerError::UnknownLicense(prev.clone()));
            }
        }
        let height = self.push(EntryKind::AgreementToken, agreement.payload())?.height;
        self.licenses.insert(license_id, height);
        Ok(agreement.at_height(height))
    }

    pub fn mint_agreement(&mut self, request: &MintRequest) -> Result<AgreementToken, LedgerError> {
        let pending = self.prepare_agreement(request)?;
        self.commit_agreement(pending)
    }

    pub fn last_draft_round(&self, session_id: &str) -> u32 {
        self.draft_rounds.get(session_id).copied().unwrap_or(0)
    }

    pub fn mint_draft(
        &mut self,
        session_id: &str,
        round: u32,
        proposer_id: &str,
        terms: &LicenseTerms,
    ) -> Result<DraftToken, LedgerError> {
        if !self.keys.contains(proposer_id) {
            return Err(LedgerError::UnknownAgent(proposer_id.to_owned()));
        }
        let expected = self.last_draft_round(session_id) + 1;
        if round != expected {
            return Err(LedgerError::NonMonotonicRound {
                session: session_id.to_owned(),
                expected,
                got: round,
            });
        }
        let hash = terms_hash(terms)?;
        let payload = DraftToken::payload(session_id, round, proposer_id, terms, &hash);
        let height = self.push(EntryKind::DraftToken, payload)?.height;
        self.draft_rounds.insert(session_id.to_owned(), round);
        Ok(DraftToken {
            session_id: session_id.to_owned(),
            round,
            proposer_id: proposer_id.to_owned(),
            terms: terms.clone(),
            terms_hash: hash,
            height,
        })
    }

    /// True iff the token is on the ledger at its height unchanged, matches
    /// `terms`, carries a valid holder signature, and has not been revoked.
    pub fn verify_token(&self, token: &AgreementToken, terms: &LicenseTerms) -> bool {
        let Some(entry) = self.entry(token.height) else {
            return false;
        };
        entry.kind == EntryKind::AgreementToken
            && entry.payload_hash == value_hash(&token.payload())
            && self.licenses.get(token.license_id()) == Some(&token.height)
            && !self.revoked.contains(token.license_id())
            && self.agreement_is_sound(&token.as_pending(), terms)
    }

    pub fn token(&self, license_id: &str) -> Option<AgreementToken> {
        let height = *self.licenses.get(license_id)?;
        let entry = self.entry(height)?;
        PendingAgreement::from_payload(&entry.payload).map(|p| p.at_height(height))
    }

    pub fn token_for_session(&self, session_id: &str) -> Option<AgreementToken> {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::AgreementToken && e.session_id() == Some(session_id))
            .find_map(|e| PendingAgreement::from_payload(&e.payload).map(|p| p.at_height(e.height)))
    }

    pub fn is_revoked(&self, license_id: &str) -> bool {
        self.revoked.contains(license_id)
    }

    /// Appends a revocation record; the token stops verifying.
    pub fn revoke(&mut self, license_id: &str, details: TermValue) -> Result<&LedgerEntry, LedgerError> {
        if !self.licenses.contains_key(license_id) {
            return Err(LedgerError::UnknownLicense(license_id.to_owned()));
        }
        let mut payload = details;
        payload
            .as_map_mut()
            .ok_or(LedgerError::PayloadNotMap)?
            .insert("license_id".to_owned(), license_id.into());
        self.revoked.insert(license_id.to_owned());
        self.push(EntryKind::Revocation, payload)
    }

    /// Entries whose payload names `session_id`, in height order.
    pub fn history(&self, session_id: &str) -> Vec<&LedgerEntry> {
        self.entries.iter().filter(|e| e.session_id() == Some(session_id)).collect()
    }

    /// Root-first lineage via `previous_license_id`, ending at `license_id`.
    pub fn chain_of_ownership(&self, license_id: &str) -> Result<Vec<String>, LedgerError> {
        let mut lineage = vec![license_id.to_owned()];
        let mut seen = BTreeSet::from([license_id.to_owned()]);
        let mut current = self
            .token(license_id)
            .ok_or_else(|| LedgerError::UnknownLicense(license_id.to_owned()))?;
        while let Some(prev) = current.metadata.previous_license_id.clone() {
            if !seen.insert(prev.clone()) {
                return Err(LedgerError::CyclicLineage(license_id.to_owned()));
            }
            current = self.token(&prev).ok_or_else(|| LedgerError::UnknownLicense(prev.clone()))?;
            lineage.push(prev);
        }
        lineage.reverse();
        Ok(lineage)
    }

    pub fn lineage_tokens(&self, license_id: &str) -> Result<Vec<AgreementToken>, LedgerError> {
        self.chain_of_ownership(license_id)?
            .iter()
            .map(|id| self.token(id).ok_or_else(|| LedgerError::UnknownLicense(id.clone())))
            .collect()
    }

    /// Recomputes every hash link.
    pub fn verify_chain(&self) -> bool {
        verify_entries(&self.entries)
    }

    pub fn export_value(&self) -> TermValue {
        TermValue::List(self.entries.iter().map(LedgerEntry::to_value).collect())
    }

    /// Canonical JSON list of entries.
    pub fn export(&self) -> Vec<u8> {
        to_canonical_bytes(&self.export_value())
    }

    /// Loads exported entries without verifying them. Keys are not part of an
    /// export, so loaded ledgers cannot verify signatures.
    pub fn from_export(bytes: &[u8]) -> Result<Ledger, LedgerError> {
        let entries = parse_export(bytes)?;
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: Vec<LedgerEntry>) -> Ledger {
        let mut ledger = Ledger { entries, ..Ledger::default() };
        for entry in &ledger.entries {
            match entry.kind {
                EntryKind::AgreementToken => {
                    if let Some(id) = entry.payload.get("metadata").and_then(|m| m.get_str("license_id")) {
                        ledger.licenses.insert(id.to_owned(), entry.height);
                    }
                }
                EntryKind::DraftToken => {
                    if let (Some(s), Some(r)) =
                        (entry.session_id(), entry.payload.get("round").and_then(TermValue::as_i64))
                    {
                        ledger.draft_rounds.insert(s.to_owned(), u32::try_from(r).unwrap_or(0));
                    }
                }
                EntryKind::Revocation => {
                    if let Some(id) = entry.payload.get_str("license_id") {
                        ledger.revoked.insert(id.to_owned());
                    }
                }
                _ => {}
            }
        }
        ledger
    }
}

pub fn parse_export(bytes: &[u8]) -> Result<Vec<LedgerEntry>, LedgerError> {
    let value = terms::parse(bytes).map_err(|e| LedgerError::Parse(e.to_string()))?;
    let list = value.as_list().ok_or_else(|| LedgerError::Parse("expected a list of entries".into()))?;
    list.iter()
        .enumerate()
        .map(|(i, v)| LedgerEntry::from_value(v).ok_or_else(|| LedgerError::Parse(format!("entry {i} is malformed"))))
        .collect()
}

/// Checks dense heights, payload hashes, kinds, and hash links.
pub fn verify_entries(entries: &[LedgerEntry]) -> bool {
    let mut prev = GENESIS_HASH.to_owned();
    for (i, entry) in entries.iter().enumerate() {
        if entry.height != i as u64
            || entry.payload.get_str("kind") != Some(entry.kind.as_str())
            || entry.payload_hash != value_hash(&entry.payload)
        {
            return false;
        }
        let expected = sha256_hex_parts(&[prev.as_bytes(), entry.payload_hash.as_bytes()]);
        if entry.entry_hash != expected {
            return false;
        }
        prev = expected;
    }
    true
}

/// Re-validates an exported ledger bit-exactly: the bytes must be the
/// canonical encoding of an intact chain.
pub fn verify_export(bytes: &[u8]) -> Result<bool, LedgerError> {
    let entries = parse_export(bytes)?;
    let canonical = to_canonical_bytes(&TermValue::List(entries.iter().map(LedgerEntry::to_value).collect()));
    Ok(canonical == bytes && verify_entries(&entries))
}
