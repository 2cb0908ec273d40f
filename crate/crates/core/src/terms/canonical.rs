//! Canonical JSON: sorted keys, no insignificant whitespace, UTF-8, decimals
//! with four fractional digits. This is the byte form that gets hashed, signed,
//! framed on the wire, and written to disk.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::value::{Decimal, TermValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalError {
    #[error("json syntax error: {0}")]
    Syntax(String),
    #[error("null is not a term value")]
    Null,
    #[error("unsupported number literal {0:?}")]
    Number(String),
    #[error("input is not in canonical form")]
    NonCanonical,
}

/// Canonical bytes of a value.
pub fn to_canonical_bytes(value: &TermValue) -> Vec<u8> {
    let mut out = Vec::with_capacity(128);
    write_value(&mut out, value);
    out
}

/// Canonical JSON of a value as a `String`.
pub fn to_canonical_string(value: &TermValue) -> String {
    // write_value only emits valid UTF-8.
    String::from_utf8(to_canonical_bytes(value)).expect("canonical output is UTF-8")
}

fn write_value(out: &mut Vec<u8>, value: &TermValue) {
    match value {
        TermValue::Text(s) => write_string(out, s),
        TermValue::Integer(i) => out.extend_from_slice(i.to_string().as_bytes()),
        TermValue::Decimal(d) => out.extend_from_slice(d.to_string().as_bytes()),
        TermValue::Bool(true) => out.extend_from_slice(b"true"),
        TermValue::Bool(false) => out.extend_from_slice(b"false"),
        TermValue::List(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(out, item);
            }
            out.push(b']');
        }
        TermValue::Map(map) => {
            out.push(b'{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(out, key);
                out.push(b':');
                write_value(out, item);
            }
            out.push(b'}');
        }
    }
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

/// Parses JSON into a term value. Whitespace is tolerated; numbers with a
/// fractional part become decimals (at most four digits), others integers.
pub fn parse(bytes: &[u8]) -> Result<TermValue, CanonicalError> {
    let json: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::Syntax(e.to_string()))?;
    from_json(json)
}

/// Parses and additionally requires the input to be byte-identical to its
/// canonical re-encoding (rejects whitespace, unsorted or duplicate keys,
/// short decimals).
pub fn parse_canonical(bytes: &[u8]) -> Result<TermValue, CanonicalError> {
    let value = parse(bytes)?;
    if to_canonical_bytes(&value) != bytes {
        return Err(CanonicalError::NonCanonical);
    }
    Ok(value)
}

fn from_json(json: serde_json::Value) -> Result<TermValue, CanonicalError> {
    use serde_json::Value;
    Ok(match json {
        Value::Null => return Err(CanonicalError::Null),
        Value::Bool(b) => TermValue::Bool(b),
        Value::String(s) => TermValue::Text(s),
        Value::Number(n) => {
            let literal = n.to_string();
            if literal.contains(['e', 'E']) {
                return Err(CanonicalError::Number(literal));
            }
            if literal.contains('.') {
                TermValue::Decimal(
                    Decimal::parse(&literal).map_err(|_| CanonicalError::Number(literal))?,
                )
            } else {
                TermValue::Integer(literal.parse().map_err(|_| CanonicalError::Number(literal))?)
            }
        }
        Value::Array(items) => {
            TermValue::List(items.into_iter().map(from_json).collect::<Result<_, _>>()?)
        }
        Value::Object(map) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                out.insert(k, from_json(v)?);
            }
            TermValue::Map(out)
        }
    })
}

/// Lowercase hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Lowercase hex SHA-256 over the concatenation of `parts`.
pub fn sha256_hex_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// SHA-256 of a value's canonical bytes.
pub fn value_hash(value: &TermValue) -> String {
    sha256_hex(&to_canonical_bytes(value))
}
