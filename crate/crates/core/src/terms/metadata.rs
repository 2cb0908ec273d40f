use std::collections::BTreeMap;

use super::canonical::{sha256_hex_parts, to_canonical_bytes};
use super::schema::{is_iso_date, Expiry};
use super::value::TermValue;
use super::TermsError;

/// Identifying record of a minted license.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LicenseMetadata {
    pub license_id: String,
    pub issuer_id: String,
    pub holder_id: String,
    /// Ledger height observed when the license was signed.
    pub issue_date: u64,
    pub expiry_date: Expiry,
    pub version: u32,
    /// Hash of the canonical terms.
    pub link_to_terms: String,
    pub previous_license_id: Option<String>,
    pub signature: String,
}

impl LicenseMetadata {
    pub fn to_value(&self) -> TermValue {
        let mut m = self.id_preimage_map();
        m.insert("license_id".into(), self.license_id.clone().into());
        m.insert("signature".into(), self.signature.clone().into());
        TermValue::Map(m)
    }

    /// Metadata without the signature; this is what the holder signs.
    pub fn unsigned_value(&self) -> TermValue {
        let mut m = self.id_preimage_map();
        m.insert("license_id".into(), self.license_id.clone().into());
        TermValue::Map(m)
    }

    fn id_preimage_map(&self) -> BTreeMap<String, TermValue> {
        let mut m = BTreeMap::new();
        m.insert("expiry_date".into(), self.expiry_date.as_str().into());
        m.insert("holder_id".into(), self.holder_id.clone().into());
        m.insert("issue_date".into(), self.issue_date.into());
        m.insert("issuer_id".into(), self.issuer_id.clone().into());
        m.insert("link_to_terms".into(), self.link_to_terms.clone().into());
        if let Some(prev) = &self.previous_license_id {
            m.insert("previous_license_id".into(), prev.clone().into());
        }
        m.insert("version".into(), self.version.into());
        m
    }

    /// First 32 hex chars of SHA-256(canonical(metadata minus id and signature) ∥ link_to_terms).
    pub fn derive_license_id(&self) -> String {
        let preimage = to_canonical_bytes(&TermValue::Map(self.id_preimage_map()));
        let digest = sha256_hex_parts(&[&preimage, self.link_to_terms.as_bytes()]);
        digest[..32].to_owned()
    }

    pub fn from_value(value: &TermValue) -> Option<Self> {
        let map = value.as_map()?;
        let allowed = [
            "expiry_date",
            "holder_id",
            "issue_date",
            "issuer_id",
            "license_id",
            "link_to_terms",
            "previous_license_id",
            "signature",
            "version",
        ];
        if map.keys().any(|k| !allowed.contains(&k.as_str())) {
            return None;
        }
        let text = |k: &str| value.get_str(k).map(str::to_owned);
        Some(LicenseMetadata {
            license_id: text("license_id")?,
            issuer_id: text("issuer_id")?,
            holder_id: text("holder_id")?,
            issue_date: value.get("issue_date")?.as_u64()?,
            expiry_date: Expiry::parse(value.get_str("expiry_date")?),
            version: u32::try_from(value.get("version")?.as_i64()?).ok()?,
            link_to_terms: text("link_to_terms")?,
            previous_license_id: match value.get("previous_license_id") {
                Some(v) => Some(v.as_str()?.to_owned()),
                None => None,
            },
            signature: text("signature")?,
        })
    }
}

/// True iff the expiry is a date strictly before `now_date`. A license is
/// valid through its expiry date.
pub fn is_expired(metadata: &LicenseMetadata, now_date: &str) -> Result<bool, TermsError> {
    expiry_passed(&metadata.expiry_date, now_date)
}

pub(crate) fn expiry_passed(expiry: &Expiry, now_date: &str) -> Result<bool, TermsError> {
    if !is_iso_date(now_date) {
        return Err(TermsError::MalformedDate(now_date.to_owned()));
    }
    match expiry {
        Expiry::Perpetual => Ok(false),
        Expiry::Until(date) if is_iso_date(date) => Ok(date.as_str() < now_date),
        Expiry::Until(date) => Err(TermsError::MalformedDate(date.clone())),
    }
}
