//! Tree values carried by terms, ledger payloads, and protocol bodies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Fixed-point decimal with exactly four fractional digits.
///
/// Stored as an integer count of ten-thousandths, so `0.0500` is `Decimal(500)`.
/// Nothing in this crate ever hashes a float.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Decimal(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal literal {0:?}")]
pub struct DecimalParseError(pub String);

impl Decimal {
    /// Ten-thousandths per unit.
    pub const SCALE: i64 = 10_000;
    pub const ZERO: Decimal = Decimal(0);
    pub const ONE: Decimal = Decimal(Self::SCALE);

    /// Builds a decimal from ten-thousandths (`from_units(500)` is `0.0500`).
    pub const fn from_units(units: i64) -> Self {
        Decimal(units)
    }

    pub const fn units(self) -> i64 {
        self.0
    }

    pub fn from_int(value: i64) -> Option<Self> {
        value.checked_mul(Self::SCALE).map(Decimal)
    }

    pub fn checked_add(self, other: Decimal) -> Option<Decimal> {
        self.0.checked_add(other.0).map(Decimal)
    }

    pub fn checked_sub(self, other: Decimal) -> Option<Decimal> {
        self.0.checked_sub(other.0).map(Decimal)
    }

    pub fn abs(self) -> Decimal {
        Decimal(self.0.abs())
    }

    pub fn is_fraction(self) -> bool {
        (0..=Self::SCALE).contains(&self.0)
    }

    /// Parses a literal with up to four fractional digits. Exponents are rejected.
    pub fn parse(text: &str) -> Result<Self, DecimalParseError> {
        let err = || DecimalParseError(text.to_owned());
        let (negative, body) = match text.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, text),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty()
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
            || frac_part.len() > 4
            || (body.contains('.') && frac_part.is_empty())
        {
            return Err(err());
        }
        let int: i64 = int_part.parse().map_err(|_| err())?;
        let mut frac: i64 = 0;
        for (i, digit) in frac_part.bytes().enumerate() {
            frac += i64::from(digit - b'0') * 10_i64.pow(3 - i as u32);
        }
        let magnitude = int
            .checked_mul(Self::SCALE)
            .and_then(|v| v.checked_add(frac))
            .ok_or_else(err)?;
        Ok(Decimal(if negative { -magnitude } else { magnitude }))
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let magnitude = self.0.unsigned_abs();
        let scale = Self::SCALE as u64;
        write!(f, "{sign}{}.{:04}", magnitude / scale, magnitude % scale)
    }
}

impl FromStr for Decimal {
    type Err = DecimalParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decimal::parse(s)
    }
}

/// A terms tree: text, integer, decimal, boolean, list, or string-keyed map.
///
/// Maps are `BTreeMap`s, so keys are unique and iterate in UTF-8 byte order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TermValue {
    Text(String),
    Integer(i64),
    Decimal(Decimal),
    Bool(bool),
    List(Vec<TermValue>),
    Map(BTreeMap<String, TermValue>),
}

impl TermValue {
    pub fn empty_map() -> Self {
        TermValue::Map(BTreeMap::new())
    }

    /// Builds a map from key/value pairs. Later duplicates overwrite earlier ones.
    pub fn from_pairs<K, I>(pairs: I) -> Self
    where
        K: Into<String>,
        I: IntoIterator<Item = (K, TermValue)>,
    {
        TermValue::Map(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn text_list<S: AsRef<str>, I: IntoIterator<Item = S>>(items: I) -> Self {
        TermValue::List(
            items
                .into_iter()
                .map(|s| TermValue::Text(s.as_ref().to_owned()))
                .collect(),
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TermValue::Text(_) => "text",
            TermValue::Integer(_) => "integer",
            TermValue::Decimal(_) => "decimal",
            TermValue::Bool(_) => "boolean",
            TermValue::List(_) => "list",
            TermValue::Map(_) => "map",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            TermValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            TermValue::Integer(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        self.as_i64().and_then(|i| u64::try_from(i).ok())
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            TermValue::Decimal(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            TermValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[TermValue]> {
        match self {
            TermValue::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, TermValue>> {
        match self {
            TermValue::Map(map) => Some(map),
            _ => None,
        }
    }

    pub fn as_map_mut(&mut self) -> Option<&mut BTreeMap<String, TermValue>> {
        match self {
            TermValue::Map(map) => Some(map),
            _ => None,
        }
    }

    /// Map lookup; `None` for non-maps and missing keys.
    pub fn get(&self, key: &str) -> Option<&TermValue> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.get(key).and_then(TermValue::as_str)
    }
}

impl From<&str> for TermValue {
    fn from(value: &str) -> Self {
        TermValue::Text(value.to_owned())
    }
}

impl From<String> for TermValue {
    fn from(value: String) -> Self {
        TermValue::Text(value)
    }
}

impl From<i64> for TermValue {
    fn from(value: i64) -> Self {
        TermValue::Integer(value)
    }
}

impl From<u64> for TermValue {
    /// Saturates at `i64::MAX`; every quantity in this crate fits well below it.
    fn from(value: u64) -> Self {
        TermValue::Integer(i64::try_from(value).unwrap_or(i64::MAX))
    }
}

impl From<u32> for TermValue {
    fn from(value: u32) -> Self {
        TermValue::Integer(i64::from(value))
    }
}

impl From<bool> for TermValue {
    fn from(value: bool) -> Self {
        TermValue::Bool(value)
    }
}

impl From<Decimal> for TermValue {
    fn from(value: Decimal) -> Self {
        TermValue::Decimal(value)
    }
}

impl From<BTreeMap<String, TermValue>> for TermValue {
    fn from(value: BTreeMap<String, TermValue>) -> Self {
        TermValue::Map(value)
    }
}

impl From<Vec<TermValue>> for TermValue {
    fn from(value: Vec<TermValue>) -> Self {
        TermValue::List(value)
    }
}
