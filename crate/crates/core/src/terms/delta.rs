//! Structural edits over license terms.
//!
//! A path is `[field]` for whole-field edits, or `[set_field, tag]` to add
//! (`set` with `true`) or remove a single tag of a tag-set field. The schema
//! is closed: any other path is rejected.

use std::collections::BTreeMap;

use super::schema::{field_kind, validate, FieldKind, LicenseTerms, Violation, FIELDS};
use super::value::TermValue;
use super::TermsError;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EditOp {
    Set(TermValue),
    Remove,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edit {
    pub path: Vec<String>,
    pub op: EditOp,
}

impl Edit {
    pub fn set(path: &[&str], value: impl Into<TermValue>) -> Self {
        Edit { path: path.iter().map(|s| (*s).to_owned()).collect(), op: EditOp::Set(value.into()) }
    }

    pub fn remove(path: &[&str]) -> Self {
        Edit { path: path.iter().map(|s| (*s).to_owned()).collect(), op: EditOp::Remove }
    }

    fn path_string(&self) -> String {
        self.path.join(".")
    }
}

/// Ordered list of edits.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TermsDelta {
    pub edits: Vec<Edit>,
}

impl TermsDelta {
    pub fn new(edits: Vec<Edit>) -> Self {
        TermsDelta { edits }
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    /// Wire form: a list of `{"op","path","value"?}` maps.
    pub fn to_value(&self) -> TermValue {
        TermValue::List(
            self.edits
                .iter()
                .map(|edit| {
                    let mut m = BTreeMap::new();
                    m.insert("path".to_owned(), TermValue::text_list(&edit.path));
                    match &edit.op {
                        EditOp::Set(v) => {
                            m.insert("op".to_owned(), "set".into());
                            m.insert("value".to_owned(), v.clone());
                        }
                        EditOp::Remove => {
                            m.insert("op".to_owned(), "remove".into());
                        }
                    }
                    TermValue::Map(m)
                })
                .collect(),
        )
    }

    pub fn from_value(value: &TermValue) -> Option<Self> {
        let mut edits = Vec::new();
        for item in value.as_list()? {
            let path = item
                .get("path")?
                .as_list()?
                .iter()
                .map(|p| p.as_str().map(str::to_owned))
                .collect::<Option<Vec<_>>>()?;
            let op = match item.get_str("op")? {
                "set" => EditOp::Set(item.get("value")?.clone()),
                "remove" if item.get("value").is_none() => EditOp::Remove,
                _ => return None,
            };
            if item.as_map()?.len() != if matches!(op, EditOp::Set(_)) { 3 } else { 2 } {
                return None;
            }
            edits.push(Edit { path, op });
        }
        Some(TermsDelta { edits })
    }
}

/// Edits turning `a` into `b`: one `set` per differing scalar field, and per-tag
/// `remove`/`set` edits for tag-set fields. `diff(a, a)` is empty.
pub fn diff(a: &LicenseTerms, b: &LicenseTerms) -> TermsDelta {
    let va = a.to_value();
    let vb = b.to_value();
    let mut edits = Vec::new();
    for (field, kind) in FIELDS {
        let (Some(left), Some(right)) = (va.get(field), vb.get(field)) else {
            continue;
        };
        if left == right {
            continue;
        }
        match kind {
            FieldKind::TagSet(_) => {
                let tags = |v: &TermValue| -> Vec<String> {
                    v.as_list()
                        .unwrap_or_default()
                        .iter()
                        .filter_map(|t| t.as_str().map(str::to_owned))
                        .collect()
                };
                let (old, new) = (tags(left), tags(right));
                for tag in old.iter().filter(|t| !new.contains(t)) {
                    edits.push(Edit::remove(&[field, tag]));
                }
                for tag in new.iter().filter(|t| !old.contains(t)) {
                    edits.push(Edit::set(&[field, tag], true));
                }
            }
            _ => edits.push(Edit::set(&[field], right.clone())),
        }
    }
    TermsDelta { edits }
}

/// Applies edits in order and re-validates. Every edit either applies or
/// raises; nothing is skipped.
pub fn apply_delta(terms: &LicenseTerms, delta: &TermsDelta) -> Result<LicenseTerms, TermsError> {
    let mut value = terms.to_value();
    let map = value.as_map_mut().expect("terms encode as a map");
    for edit in &delta.edits {
        let unknown = || TermsError::UnknownPath(edit.path_string());
        let field = edit.path.first().ok_or_else(unknown)?;
        let kind = field_kind(field).ok_or_else(unknown)?;
        match (edit.path.len(), kind, &edit.op) {
            (1, _, EditOp::Set(v)) => {
                map.insert(field.clone(), v.clone());
            }
            (1, FieldKind::TagSet(_), EditOp::Remove) => {
                map.insert(field.clone(), TermValue::List(Vec::new()));
            }
            (1, _, EditOp::Remove) => {
                return Err(TermsError::InvalidResult(vec![Violation::new(
                    field.clone(),
                    "required field cannot be removed",
                )]));
            }
            (2, FieldKind::TagSet(_), op) => {
                let tag = &edit.path[1];
                let list = match map.get_mut(field) {
                    Some(TermValue::List(list)) => list,
                    _ => unreachable!("tag-set fields encode as lists"),
                };
                let position = list.iter().position(|t| t.as_str() == Some(tag));
                match (op, position) {
                    (EditOp::Set(TermValue::Bool(true)), None) => {
                        list.push(TermValue::Text(tag.clone()));
                        list.sort_by(|a, b| a.as_str().cmp(&b.as_str()));
                    }
                    (EditOp::Set(TermValue::Bool(true)), Some(_)) => {}
                    (EditOp::Remove, Some(i)) => {
                        list.remove(i);
                    }
                    (EditOp::Remove, None) => {
                        return Err(TermsError::InvalidResult(vec![Violation::new(
                            edit.path_string(),
                            "tag not present",
                        )]));
                    }
                    (EditOp::Set(_), _) => {
                        return Err(TermsError::InvalidResult(vec![Violation::new(
                            edit.path_string(),
                            "tag edits take the value true",
                        )]));
                    }
                }
            }
            _ => return Err(unknown()),
        }
    }
    let updated = LicenseTerms::from_value(&value).map_err(TermsError::InvalidResult)?;
    let report = validate(&updated);
    if !report.is_valid() {
        return Err(TermsError::InvalidResult(report.violations));
    }
    Ok(updated)
}
