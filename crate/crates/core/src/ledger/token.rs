use std::collections::BTreeMap;

use crate::terms::{Expiry, LicenseMetadata, LicenseTerms, TermValue};

/// Everything needed to mint an agreement token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MintRequest {
    /// Holder; signs the token.
    pub requester_id: String,
    pub issuer_id: String,
    pub terms: LicenseTerms,
    pub expiry_date: Expiry,
    pub previous_license_id: Option<String>,
    pub session_id: Option<String>,
}

impl MintRequest {
    pub fn new(requester_id: &str, issuer_id: &str, terms: LicenseTerms) -> Self {
        MintRequest {
            requester_id: requester_id.to_owned(),
            issuer_id: issuer_id.to_owned(),
            expiry_date: terms.duration.clone(),
            terms,
            previous_license_id: None,
            session_id: None,
        }
    }

    pub fn with_session(mut self, session_id: &str) -> Self {
        self.session_id = Some(session_id.to_owned());
        self
    }

    pub fn with_previous(mut self, license_id: Option<String>) -> Self {
        self.previous_license_id = license_id;
        self
    }
}

/// A signed agreement that has not been appended yet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingAgreement {
    pub metadata: LicenseMetadata,
    pub terms: LicenseTerms,
    pub terms_hash: String,
    pub requester_signature: String,
    pub session_id: Option<String>,
}

impl PendingAgreement {
    pub fn license_id(&self) -> &str {
        &self.metadata.license_id
    }

    /// The ledger payload this agreement is recorded under.
    pub fn payload(&self) -> TermValue {
        let mut m = BTreeMap::new();
        m.insert("kind".to_owned(), TermValue::from("agreement_token"));
        m.insert("metadata".to_owned(), self.metadata.to_value());
        m.insert("requester_signature".to_owned(), self.requester_signature.clone().into());
        if let Some(session) = &self.session_id {
            m.insert("session_id".to_owned(), session.clone().into());
        }
        m.insert("terms".to_owned(), self.terms.to_value());
        m.insert("terms_hash".to_owned(), self.terms_hash.clone().into());
        TermValue::Map(m)
    }

    pub fn from_payload(payload: &TermValue) -> Option<Self> {
        if payload.get_str("kind") != Some("agreement_token") {
            return None;
        }
        Some(PendingAgreement {
            metadata: LicenseMetadata::from_value(payload.get("metadata")?)?,
            terms: LicenseTerms::from_value(payload.get("terms")?).ok()?,
            terms_hash: payload.get_str("terms_hash")?.to_owned(),
            requester_signature: payload.get_str("requester_signature")?.to_owned(),
            session_id: payload.get_str("session_id").map(str::to_owned),
        })
    }

    pub fn at_height(self, height: u64) -> AgreementToken {
        AgreementToken {
            metadata: self.metadata,
            terms: self.terms,
            terms_hash: self.terms_hash,
            requester_signature: self.requester_signature,
            session_id: self.session_id,
            height,
        }
    }
}

/// A minted, binding license.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgreementToken {
    pub metadata: LicenseMetadata,
    pub terms: LicenseTerms,
    pub terms_hash: String,
    pub requester_signature: String,
    pub session_id: Option<String>,
    pub height: u64,
}

impl AgreementToken {
    pub fn license_id(&self) -> &str {
        &self.metadata.license_id
    }

    pub fn as_pending(&self) -> PendingAgreement {
        PendingAgreement {
            metadata: self.metadata.clone(),
            terms: self.terms.clone(),
            terms_hash: self.terms_hash.clone(),
            requester_signature: self.requester_signature.clone(),
            session_id: self.session_id.clone(),
        }
    }

    pub fn payload(&self) -> TermValue {
        self.as_pending().payload()
    }
}

/// Non-binding snapshot of one negotiation round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DraftToken {
    pub session_id: String,
    pub round: u32,
    pub proposer_id: String,
    pub terms: LicenseTerms,
    pub terms_hash: String,
    pub height: u64,
}

impl DraftToken {
    pub(crate) fn payload(
        session_id: &str,
        round: u32,
        proposer_id: &str,
        terms: &LicenseTerms,
        terms_hash: &str,
    ) -> TermValue {
        TermValue::from_pairs([
            ("kind", TermValue::from("draft_token")),
            ("proposer_id", proposer_id.into()),
            ("round", round.into()),
            ("session_id", session_id.into()),
            ("terms", terms.to_value()),
            ("terms_hash", terms_hash.into()),
        ])
    }

    pub fn from_payload(payload: &TermValue, height: u64) -> Option<Self> {
        if payload.get_str("kind") != Some("draft_token") {
            return None;
        }
        Some(DraftToken {
            session_id: payload.get_str("session_id")?.to_owned(),
            round: u32::try_from(payload.get("round")?.as_i64()?).ok()?,
            proposer_id: payload.get_str("proposer_id")?.to_owned(),
            terms: LicenseTerms::from_value(payload.get("terms")?).ok()?,
            terms_hash: payload.get_str("terms_hash")?.to_owned(),
            height,
        })
    }
}
