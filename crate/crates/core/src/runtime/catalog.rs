use std::collections::{BTreeMap, BTreeSet};

use crate::terms::{apply_delta, validate, Decimal, Edit, Expiry, LicenseTerms, TermValue, TermsDelta, TermsError, Transferability};

use super::RuntimeError;

/// Tags that make an unflagged catalog item licensable IP.
pub const DEFAULT_SIGNIFICANT_TAGS: [&str; 4] = ["algorithm", "dataset", "personality", "style_guide"];

pub fn default_significant_tags() -> BTreeSet<String> {
    DEFAULT_SIGNIFICANT_TAGS.iter().map(|t| (*t).to_owned()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IPCatalogItem {
    pub content_id: String,
    pub payload: Vec<u8>,
    /// Explicit significance; `None` defers to the tag rule.
    pub ip_significant: Option<bool>,
    pub tags: BTreeSet<String>,
    pub license_template: Option<LicenseTerms>,
    /// Content ids licensed from others that this item is built on.
    pub components: Vec<String>,
}

impl IPCatalogItem {
    pub fn new(content_id: &str, payload: impl Into<Vec<u8>>) -> Self {
        IPCatalogItem {
            content_id: content_id.to_owned(),
            payload: payload.into(),
            ip_significant: None,
            tags: BTreeSet::new(),
            license_template: None,
            components: Vec::new(),
        }
    }

    pub fn with_tag(mut self, tag: &str) -> Self {
        self.tags.insert(tag.to_owned());
        self
    }

    pub fn with_template(mut self, terms: LicenseTerms) -> Self {
        self.license_template = Some(terms);
        self
    }

    pub fn flagged(mut self, significant: bool) -> Self {
        self.ip_significant = Some(significant);
        self
    }

    pub fn with_component(mut self, content_id: &str) -> Self {
        self.components.push(content_id.to_owned());
        self
    }

    pub fn payload_hex(&self) -> String {
        hex::encode(&self.payload)
    }
}

pub fn is_ip_significant(item: &IPCatalogItem, significant_tags: &BTreeSet<String>) -> bool {
    item.ip_significant.unwrap_or_else(|| !item.tags.is_disjoint(significant_tags))
}

/// Default terms for catalog items without a template, with per-tag overrides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TermGenerator {
    pub royalty_rate: Decimal,
    pub ip_restrictions: BTreeSet<String>,
    pub transferability: Transferability,
    pub duration: Expiry,
    /// Applied in tag order when the item carries the tag.
    pub tag_rules: BTreeMap<String, TermsDelta>,
}

impl Default for TermGenerator {
    fn default() -> Self {
        let style_guide = TermsDelta::new(vec![
            Edit::set(&["upfront_fee"], 0u64),
            Edit::set(&["rev_share"], Decimal::from_units(1_000)),
            Edit::set(&["ip_restrictions"], TermValue::text_list(["no_redistribution"])),
        ]);
        TermGenerator {
            royalty_rate: Decimal::from_units(500),
            ip_restrictions: BTreeSet::from(["read_only".to_owned()]),
            transferability: Transferability::NonTransferable,
            duration: Expiry::Until("2025-01-01".into()),
            tag_rules: BTreeMap::from([("style_guide".to_owned(), style_guide)]),
        }
    }
}

impl TermGenerator {
    pub fn generate(
        &self,
        content_id: &str,
        jurisdiction: &str,
        tags: &BTreeSet<String>,
    ) -> Result<LicenseTerms, TermsError> {
        let mut terms = LicenseTerms::new(content_id, jurisdiction);
        terms.royalty_rate = self.royalty_rate;
        terms.ip_restrictions = self.ip_restrictions.clone();
        terms.transferability = self.transferability;
        terms.duration = self.duration.clone();
        for (tag, delta) in &self.tag_rules {
            if tags.contains(tag) {
                terms = apply_delta(&terms, delta)?;
            }
        }
        Ok(terms)
    }
}

/// The item's template when present, otherwise generated terms.
pub fn formulate_license_terms(
    generator: &TermGenerator,
    item: &IPCatalogItem,
    jurisdiction: &str,
) -> Result<LicenseTerms, RuntimeError> {
    let terms = match &item.license_template {
        Some(t) => t.clone(),
        None => generator
            .generate(&item.content_id, jurisdiction, &item.tags)
            .map_err(|e| RuntimeError::InvalidTerms { content_id: item.content_id.clone(), reason: e.to_string() })?,
    };
    let report = validate(&terms);
    if !report.is_valid() {
        let reason = report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(RuntimeError::InvalidTerms { content_id: item.content_id.clone(), reason });
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significance_rules() {
        let tags = default_significant_tags();
        assert!(is_ip_significant(&IPCatalogItem::new("x", "").flagged(true), &tags));
        assert!(is_ip_significant(&IPCatalogItem::new("x", "").with_tag("dataset"), &tags));
        assert!(!is_ip_significant(&IPCatalogItem::new("x", ""), &tags));
        assert!(!is_ip_significant(&IPCatalogItem::new("x", "").with_tag("dataset").flagged(false), &tags));
    }

    #[test]
    fn generated_defaults() {
        let item = IPCatalogItem::new("notes", "n").with_tag("algorithm");
        let terms = formulate_license_terms(&TermGenerator::default(), &item, "US").unwrap();
        assert_eq!(terms.royalty_rate, Decimal::parse("0.0500").unwrap());
        assert_eq!(terms.duration.as_str(), "2025-01-01");
        assert_eq!(terms.transferability, Transferability::NonTransferable);
        assert!(terms.ip_restrictions.contains("read_only"));
    }

    #[test]
    fn style_guide_is_free_with_rev_share() {
        let item = IPCatalogItem::new("guide", "g").with_tag("style_guide");
        let terms = formulate_license_terms(&TermGenerator::default(), &item, "GB").unwrap();
        assert_eq!(terms.upfront_fee, 0);
        assert!(terms.rev_share > Decimal::ZERO);
    }

    #[test]
    fn template_is_used_verbatim() {
        let mut template = LicenseTerms::new("temps", "US");
        template.upfront_fee = 10_000_000;
        let item = IPCatalogItem::new("temps", "t").with_template(template.clone());
        assert_eq!(formulate_license_terms(&TermGenerator::default(), &item, "US").unwrap(), template);
    }
}
