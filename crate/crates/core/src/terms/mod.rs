//! Programmable license terms: schema, validation, canonical encoding,
//! hashing, and structural edits.

mod canonical;
mod delta;
mod iso3166;
mod metadata;
mod schema;
mod value;

use thiserror::Error;

pub use canonical::{
    parse, parse_canonical, sha256_hex, sha256_hex_parts, to_canonical_bytes, to_canonical_string,
    value_hash, CanonicalError,
};
pub use delta::{apply_delta, diff, Edit, EditOp, TermsDelta};
pub use iso3166::ALPHA2_CODES;
pub use metadata::{is_expired, LicenseMetadata};
pub(crate) use metadata::expiry_passed;
pub use schema::{
    field_kind, is_iso_date, validate, validate_with, CodeRegistry, DisputeResolution, Expiry,
    FieldKind, LicenseTerms, ScopeTag, Transferability, ValidationReport, Violation, FIELDS,
};
pub use value::{Decimal, DecimalParseError, TermValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermsError {
    #[error("invalid terms: {}", join(.0))]
    InvalidTerms(Vec<Violation>),
    #[error("unknown term path {0:?}")]
    UnknownPath(String),
    #[error("edit produced invalid terms: {}", join(.0))]
    InvalidResult(Vec<Violation>),
    #[error("malformed date {0:?}")]
    MalformedDate(String),
    #[error(transparent)]
    Encoding(#[from] CanonicalError),
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Canonical bytes of any value with a term encoding.
pub trait Canonical {
    fn canonical_value(&self) -> TermValue;

    fn canonicalize(&self) -> Vec<u8> {
        to_canonical_bytes(&self.canonical_value())
    }
}

impl Canonical for TermValue {
    fn canonical_value(&self) -> TermValue {
        self.clone()
    }
}

impl Canonical for LicenseTerms {
    fn canonical_value(&self) -> TermValue {
        self.to_value()
    }
}

impl Canonical for LicenseMetadata {
    fn canonical_value(&self) -> TermValue {
        self.to_value()
    }
}

/// SHA-256 (64 lowercase hex chars) of the canonical terms. Invalid terms are refused.
pub fn terms_hash(terms: &LicenseTerms) -> Result<String, TermsError> {
    let report = validate(terms);
    if !report.is_valid() {
        return Err(TermsError::InvalidTerms(report.violations));
    }
    Ok(sha256_hex(&terms.canonical_bytes()))
}
