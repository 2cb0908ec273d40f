//! The license term schema, its field table, and validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::canonical;
use super::iso3166::ALPHA2_CODES;
use super::value::{Decimal, TermValue};
use super::TermsError;

/// Expiry of a license: a calendar date (valid through that day) or never.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expiry {
    Perpetual,
    Until(String),
}

impl Expiry {
    pub const PERPETUAL: &'static str = "perpetual";

    pub fn parse(text: &str) -> Self {
        if text == Self::PERPETUAL {
            Expiry::Perpetual
        } else {
            Expiry::Until(text.to_owned())
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Expiry::Perpetual => Self::PERPETUAL,
            Expiry::Until(date) => date,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        match self {
            Expiry::Perpetual => true,
            Expiry::Until(date) => is_iso_date(date),
        }
    }
}

impl fmt::Display for Expiry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `YYYY-MM-DD` naming a real calendar day.
pub fn is_iso_date(text: &str) -> bool {
    text.len() == 10 && chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d").is_ok()
}

macro_rules! tag_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const TAGS: &'static [&'static str] = &[$($tag),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $tag),+ }
            }

            pub fn parse(tag: &str) -> Option<Self> {
                match tag { $($tag => Some($name::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

tag_enum!(ScopeTag {
    Personal => "personal",
    Commercial => "commercial",
    Sublicensable => "sublicensable",
});

tag_enum!(Transferability {
    NonTransferable => "non_transferable",
    Transferable => "transferable",
    TransferableWithApproval => "transferable_with_approval",
});

tag_enum!(DisputeResolution {
    OnchainArbitration => "onchain_arbitration",
    OffchainArbitration => "offchain_arbitration",
    Court => "court",
});

/// Value shape of one schema field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Text,
    Decimal,
    Integer,
    Bool,
    /// Text restricted to the listed tags.
    Enum(&'static [&'static str]),
    /// Sorted set of text tags, optionally restricted.
    TagSet(Option<&'static [&'static str]>),
}

/// Every field of [`LicenseTerms`], in key order.
pub const FIELDS: &[(&str, FieldKind)] = &[
    ("chain_of_ownership", FieldKind::Bool),
    ("compliance_requirements", FieldKind::TagSet(None)),
    ("description", FieldKind::Text),
    ("dispute_resolution", FieldKind::Enum(DisputeResolution::TAGS)),
    ("duration", FieldKind::Text),
    ("governing_law", FieldKind::Text),
    ("ip_restrictions", FieldKind::TagSet(None)),
    ("jurisdiction", FieldKind::Text),
    ("name", FieldKind::Text),
    ("offchain_enforcement", FieldKind::Bool),
    ("onchain_enforcement", FieldKind::Bool),
    ("rev_share", FieldKind::Decimal),
    ("revocation_conditions", FieldKind::TagSet(None)),
    ("royalty_rate", FieldKind::Decimal),
    ("scope", FieldKind::TagSet(Some(ScopeTag::TAGS))),
    ("transferability", FieldKind::Enum(Transferability::TAGS)),
    ("upfront_fee", FieldKind::Integer),
];

pub fn field_kind(name: &str) -> Option<FieldKind> {
    FIELDS
        .binary_search_by(|(field, _)| (*field).cmp(name))
        .ok()
        .map(|i| FIELDS[i].1)
}

/// One broken constraint, located by field path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Violation { path: path.into(), reason: reason.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Jurisdiction codes accepted by validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeRegistry {
    codes: BTreeSet<String>,
}

impl CodeRegistry {
    /// The ISO 3166-1 alpha-2 registry.
    pub fn iso() -> Self {
        CodeRegistry { codes: ALPHA2_CODES.iter().map(|c| (*c).to_owned()).collect() }
    }

    pub fn from_codes<S: Into<String>, I: IntoIterator<Item = S>>(codes: I) -> Self {
        CodeRegistry { codes: codes.into_iter().map(Into::into).collect() }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }
}

impl Default for CodeRegistry {
    fn default() -> Self {
        Self::iso()
    }
}

/// Programmable license terms governing one exchange.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LicenseTerms {
    pub name: String,
    pub description: String,
    pub scope: BTreeSet<ScopeTag>,
    pub duration: Expiry,
    /// ISO 3166-1 alpha-2.
    pub jurisdiction: String,
    pub governing_law: String,
    /// Share of downstream sub-licensing revenue owed to the issuer.
    pub royalty_rate: Decimal,
    pub transferability: Transferability,
    pub revocation_conditions: BTreeSet<String>,
    pub dispute_resolution: DisputeResolution,
    pub onchain_enforcement: bool,
    pub offchain_enforcement: bool,
    pub compliance_requirements: BTreeSet<String>,
    pub ip_restrictions: BTreeSet<String>,
    /// Lineage tracking enabled.
    pub chain_of_ownership: bool,
    /// Share of downstream sale revenue of derivative output owed to the issuer.
    pub rev_share: Decimal,
    /// Micro-credits due before minting.
    pub upfront_fee: u64,
}

impl LicenseTerms {
    /// Neutral terms: perpetual, personal scope, no fees, no restrictions.
    pub fn new(name: impl Into<String>, jurisdiction: impl Into<String>) -> Self {
        let jurisdiction = jurisdiction.into();
        LicenseTerms {
            name: name.into(),
            description: String::new(),
            scope: BTreeSet::from([ScopeTag::Personal]),
            duration: Expiry::Perpetual,
            governing_law: format!("{jurisdiction} law"),
            jurisdiction,
            royalty_rate: Decimal::ZERO,
            transferability: Transferability::NonTransferable,
            revocation_conditions: BTreeSet::new(),
            dispute_resolution: DisputeResolution::OnchainArbitration,
            onchain_enforcement: true,
            offchain_enforcement: false,
            compliance_requirements: BTreeSet::new(),
            ip_restrictions: BTreeSet::new(),
            chain_of_ownership: true,
            rev_share: Decimal::ZERO,
            upfront_fee: 0,
        }
    }

    pub fn to_value(&self) -> TermValue {
        let mut m = BTreeMap::new();
        m.insert("chain_of_ownership".into(), self.chain_of_ownership.into());
        m.insert(
            "compliance_requirements".into(),
            TermValue::text_list(&self.compliance_requirements),
        );
        m.insert("description".into(), self.description.clone().into());
        m.insert("dispute_resolution".into(), self.dispute_resolution.as_str().into());
        m.insert("duration".into(), self.duration.as_str().into());
        m.insert("governing_law".into(), self.governing_law.clone().into());
        m.insert("ip_restrictions".into(), TermValue::text_list(&self.ip_restrictions));
        m.insert("jurisdiction".into(), self.jurisdiction.clone().into());
        m.insert("name".into(), self.name.clone().into());
        m.insert("offchain_enforcement".into(), self.offchain_enforcement.into());
        m.insert("onchain_enforcement".into(), self.onchain_enforcement.into());
        m.insert("rev_share".into(), self.rev_share.into());
        m.insert(
            "revocation_conditions".into(),
            TermValue::text_list(&self.revocation_conditions),
        );
        m.insert("royalty_rate".into(), self.royalty_rate.into());
        m.insert("scope".into(), TermValue::text_list(self.scope.iter().map(|s| s.as_str())));
        m.insert("transferability".into(), self.transferability.as_str().into());
        m.insert("upfront_fee".into(), self.upfront_fee.into());
        TermValue::Map(m)
    }

    /// Decodes a terms map. Shape errors (missing, unknown, or mistyped keys)
    /// are returned as violations; range constraints are left to [`validate`].
    pub fn from_value(value: &TermValue) -> Result<Self, Vec<Violation>> {
        let Some(map) = value.as_map() else {
            return Err(vec![Violation::new("", "terms must be a map")]);
        };
        let mut violations = Vec::new();
        for key in map.keys() {
            if field_kind(key).is_none() {
                violations.push(Violation::new(key.clone(), "unknown term key"));
            }
        }
        let mut reader = FieldReader { map, violations: &mut violations };
        let name = reader.text("name");
        let description = reader.text("description");
        let scope = reader.tag_set("scope").and_then(|tags| {
            let mut out = BTreeSet::new();
            for tag in tags {
                match ScopeTag::parse(&tag) {
                    Some(t) => {
                        out.insert(t);
                    }
                    None => {
                        reader
                            .violations
                            .push(Violation::new("scope", format!("unknown scope tag {tag:?}")));
                        return None;
                    }
                }
            }
            Some(out)
        });
        let duration = reader.text("duration").map(|d| Expiry::parse(&d));
        let jurisdiction = reader.text("jurisdiction");
        let governing_law = reader.text("governing_law");
        let royalty_rate = reader.decimal("royalty_rate");
        let transferability = reader.enumerated("transferability", Transferability::parse);
        let revocation_conditions = reader.tag_set("revocation_conditions");
        let dispute_resolution = reader.enumerated("dispute_resolution", DisputeResolution::parse);
        let onchain_enforcement = reader.boolean("onchain_enforcement");
        let offchain_enforcement = reader.boolean("offchain_enforcement");
        let compliance_requirements = reader.tag_set("compliance_requirements");
        let ip_restrictions = reader.tag_set("ip_restrictions");
        let chain_of_ownership = reader.boolean("chain_of_ownership");
        let rev_share = reader.decimal("rev_share");
        let upfront_fee = reader.integer("upfront_fee").and_then(|fee| {
            u64::try_from(fee).ok().or_else(|| {
                reader.violations.push(Violation::new("upfront_fee", "must be non-negative"));
                None
            })
        });

        match (
            name,
            description,
            scope,
            duration,
            jurisdiction,
            governing_law,
            royalty_rate,
            transferability,
            revocation_conditions,
            dispute_resolution,
            onchain_enforcement,
            offchain_enforcement,
            compliance_requirements,
            ip_restrictions,
            chain_of_ownership,
            rev_share,
            upfront_fee,
        ) {
            (
                Some(name),
                Some(description),
                Some(scope),
                Some(duration),
                Some(jurisdiction),
                Some(governing_law),
                Some(royalty_rate),
                Some(transferability),
                Some(revocation_conditions),
                Some(dispute_resolution),
                Some(onchain_enforcement),
                Some(offchain_enforcement),
                Some(compliance_requirements),
                Some(ip_restrictions),
                Some(chain_of_ownership),
                Some(rev_share),
                Some(upfront_fee),
            ) if violations.is_empty() => Ok(LicenseTerms {
                name,
                description,
                scope,
                duration,
                jurisdiction,
                governing_law,
                royalty_rate,
                transferability,
                revocation_conditions,
                dispute_resolution,
                onchain_enforcement,
                offchain_enforcement,
                compliance_requirements,
                ip_restrictions,
                chain_of_ownership,
                rev_share,
                upfront_fee,
            }),
            _ => Err(violations),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes(&self.to_value())
    }

    /// Loads a terms document (JSON, whitespace tolerated) and validates it.
    pub fn from_json(bytes: &[u8]) -> Result<Self, TermsError> {
        let value = canonical::parse(bytes)?;
        let terms = LicenseTerms::from_value(&value).map_err(TermsError::InvalidTerms)?;
        let report = validate(&terms);
        if !report.is_valid() {
            return Err(TermsError::InvalidTerms(report.violations));
        }
        Ok(terms)
    }

    /// Value at a clause path: `[field]` gives the field value, `[set_field, tag]`
    /// gives `true`/`false` for membership.
    pub fn clause(&self, path: &[String]) -> Option<TermValue> {
        let value = self.to_value();
        let field = path.first()?;
        let kind = field_kind(field)?;
        let current = value.get(field)?.clone();
        match (path.len(), kind) {
            (1, _) => Some(current),
            (2, FieldKind::TagSet(_)) => {
                let tag = &path[1];
                let present = current
                    .as_list()
                    .is_some_and(|items| items.iter().any(|t| t.as_str() == Some(tag)));
                Some(TermValue::Bool(present))
            }
            _ => None,
        }
    }
}

struct FieldReader<'a> {
    map: &'a BTreeMap<String, TermValue>,
    violations: &'a mut Vec<Violation>,
}

impl FieldReader<'_> {
    fn fetch(&mut self, key: &str) -> Option<&TermValue> {
        let found = self.map.get(key);
        if found.is_none() {
            self.violations.push(Violation::new(key, "missing required field"));
        }
        found
    }

    fn typed<T>(&mut self, key: &str, expected: &str, f: impl Fn(&TermValue) -> Option<T>) -> Option<T> {
        let value = self.fetch(key)?;
        let out = f(value);
        if out.is_none() {
            let got = value.kind_name();
            self.violations.push(Violation::new(key, format!("expected {expected}, got {got}")));
        }
        out
    }

    fn text(&mut self, key: &str) -> Option<String> {
        self.typed(key, "text", |v| v.as_str().map(str::to_owned))
    }

    fn decimal(&mut self, key: &str) -> Option<Decimal> {
        self.typed(key, "decimal", TermValue::as_decimal)
    }

    fn integer(&mut self, key: &str) -> Option<i64> {
        self.typed(key, "integer", TermValue::as_i64)
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        self.typed(key, "boolean", TermValue::as_bool)
    }

    fn enumerated<T>(&mut self, key: &str, parse: fn(&str) -> Option<T>) -> Option<T> {
        let tag = self.text(key)?;
        let out = parse(&tag);
        if out.is_none() {
            self.violations.push(Violation::new(key, format!("unknown value {tag:?}")));
        }
        out
    }

    fn tag_set(&mut self, key: &str) -> Option<BTreeSet<String>> {
        let items = self.typed(key, "list of text", |v| {
            v.as_list()?
                .iter()
                .map(|t| t.as_str().map(str::to_owned))
                .collect::<Option<Vec<_>>>()
        })?;
        let set: BTreeSet<String> = items.iter().cloned().collect();
        if set.len() != items.len() {
            self.violations.push(Violation::new(key, "duplicate tag"));
            return None;
        }
        Some(set)
    }
}

/// Validates against the ISO jurisdiction registry.
pub fn validate(terms: &LicenseTerms) -> ValidationReport {
    validate_with(terms, &CodeRegistry::iso())
}

pub fn validate_with(terms: &LicenseTerms, registry: &CodeRegistry) -> ValidationReport {
    let mut violations = Vec::new();
    let range = "out of range [0,1]";
    if !terms.royalty_rate.is_fraction() {
        violations.push(Violation::new("royalty_rate", range));
    }
    if !terms.rev_share.is_fraction() {
        violations.push(Violation::new("rev_share", range));
    }
    if terms.royalty_rate.is_fraction()
        && terms.rev_share.is_fraction()
        && terms.royalty_rate.units() + terms.rev_share.units() > Decimal::SCALE
    {
        violations.push(Violation::new("royalty_rate", "royalty_rate + rev_share > 1"));
    }
    if !terms.duration.is_well_formed() {
        violations.push(Violation::new(
            "duration",
            "must be \"perpetual\" or an ISO-8601 date (YYYY-MM-DD)",
        ));
    }
    if !registry.contains(&terms.jurisdiction) {
        violations.push(Violation::new("jurisdiction", "unrecognized jurisdiction code"));
    }
    if i64::try_from(terms.upfront_fee).is_err() {
        violations.push(Violation::new("upfront_fee", "exceeds the representable range"));
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn commercial() -> LicenseTerms {
        let mut t = LicenseTerms::new("Climate dataset license", "US");
        t.scope = BTreeSet::from([ScopeTag::Commercial]);
        t.royalty_rate = Decimal::from_units(500);
        t.duration = Expiry::Until("2025-01-01".into());
        t.ip_restrictions = BTreeSet::from(["read_only".to_owned()]);
        t.revocation_conditions = BTreeSet::from(["dispute_loss".to_owned()]);
        t.upfront_fee = 10_000_000;
        t
    }

    #[test]
    fn fields_table_is_sorted_and_matches_value_keys() {
        assert!(FIELDS.windows(2).all(|w| w[0].0 < w[1].0));
        let keys: Vec<_> = commercial().to_value().as_map().unwrap().keys().cloned().collect();
        let names: Vec<_> = FIELDS.iter().map(|(n, _)| (*n).to_owned()).collect();
        assert_eq!(keys, names);
    }

    #[test]
    fn well_formed_terms_validate() {
        assert!(validate(&commercial()).is_valid());
    }

    #[test]
    fn royalty_out_of_range() {
        let mut t = commercial();
        t.royalty_rate = Decimal::from_units(15_000);
        let report = validate(&t);
        assert_eq!(report.violations, vec![Violation::new("royalty_rate", "out of range [0,1]")]);
    }

    #[test]
    fn royalty_plus_rev_share_over_one() {
        let mut t = commercial();
        t.royalty_rate = Decimal::from_units(6_000);
        t.rev_share = Decimal::from_units(6_000);
        let report = validate(&t);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].reason, "royalty_rate + rev_share > 1");
    }

    #[test]
    fn bad_duration_and_jurisdiction() {
        let mut t = commercial();
        t.duration = Expiry::Until("2025-02-30".into());
        t.jurisdiction = "XX".into();
        let paths: Vec<_> = validate(&t).violations.into_iter().map(|v| v.path).collect();
        assert_eq!(paths, vec!["duration", "jurisdiction"]);
    }

    #[test]
    fn value_round_trip() {
        let t = commercial();
        assert_eq!(LicenseTerms::from_value(&t.to_value()).unwrap(), t);
    }

    #[test]
    fn from_value_rejects_unknown_and_missing_keys() {
        let mut v = commercial().to_value();
        let map = v.as_map_mut().unwrap();
        map.remove("name");
        map.insert("usage_rights".into(), "read-only".into());
        let errs = LicenseTerms::from_value(&v).unwrap_err();
        assert!(errs.contains(&Violation::new("usage_rights", "unknown term key")));
        assert!(errs.contains(&Violation::new("name", "missing required field")));
    }

    #[test]
    fn from_value_rejects_bad_scope_and_negative_fee() {
        let mut v = commercial().to_value();
        let map = v.as_map_mut().unwrap();
        map.insert("scope".into(), TermValue::text_list(["galactic"]));
        map.insert("upfront_fee".into(), TermValue::Integer(-1));
        let errs = LicenseTerms::from_value(&v).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn clause_lookup() {
        let t = commercial();
        let path = |p: &[&str]| p.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>();
        assert_eq!(
            t.clause(&path(&["royalty_rate"])),
            Some(TermValue::Decimal(Decimal::from_units(500)))
        );
        assert_eq!(t.clause(&path(&["ip_restrictions", "read_only"])), Some(TermValue::Bool(true)));
        assert_eq!(t.clause(&path(&["ip_restrictions", "no_resale"])), Some(TermValue::Bool(false)));
        assert_eq!(t.clause(&path(&["royalty_rate", "x"])), None);
        assert_eq!(t.clause(&path(&["nope"])), None);
    }

    #[test]
    fn iso_dates() {
        assert!(is_iso_date("2025-01-01"));
        assert!(is_iso_date("2024-02-29"));
        assert!(!is_iso_date("2023-02-29"));
        assert!(!is_iso_date("2025-1-01"));
        assert!(!is_iso_date("perpetual"));
    }
}
