use std::collections::BTreeMap;
use std::fmt;

use crate::terms::{parse_canonical, to_canonical_bytes, TermValue};

use super::ProtocolError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    RequestInfo,
    NonIpNotice,
    ProposeTerms,
    CounterTerms,
    FinalTerms,
    AcceptTerms,
    PaymentRequired,
    PaymentConfirmed,
    LicenseToken,
    DeliverIp,
    AcknowledgeReceipt,
    Reject,
}

impl Action {
    pub const ALL: [Action; 12] = [
        Action::RequestInfo,
        Action::NonIpNotice,
        Action::ProposeTerms,
        Action::CounterTerms,
        Action::FinalTerms,
        Action::AcceptTerms,
        Action::PaymentRequired,
        Action::PaymentConfirmed,
        Action::LicenseToken,
        Action::DeliverIp,
        Action::AcknowledgeReceipt,
        Action::Reject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::RequestInfo => "request_info",
            Action::NonIpNotice => "non_ip_notice",
            Action::ProposeTerms => "propose_terms",
            Action::CounterTerms => "counter_terms",
            Action::FinalTerms => "final_terms",
            Action::AcceptTerms => "accept_terms",
            Action::PaymentRequired => "payment_required",
            Action::PaymentConfirmed => "payment_confirmed",
            Action::LicenseToken => "license_token",
            Action::DeliverIp => "deliver_ip",
            Action::AcknowledgeReceipt => "acknowledge_receipt",
            Action::Reject => "reject",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == tag)
    }

    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            Action::RequestInfo => &["content_id"],
            Action::NonIpNotice => &["content", "message"],
            Action::ProposeTerms | Action::FinalTerms => &["terms"],
            Action::CounterTerms => &["suggestions"],
            Action::AcceptTerms => &["terms_hash"],
            Action::PaymentRequired | Action::PaymentConfirmed => &["amount"],
            Action::LicenseToken => &["token"],
            Action::DeliverIp => &["content", "license_id"],
            Action::AcknowledgeReceipt => &["license_id"],
            Action::Reject => &["reason"],
        }
    }

    pub fn optional_keys(self) -> &'static [&'static str] {
        match self {
            Action::RequestInfo => &["jurisdiction", "offer"],
            Action::ProposeTerms => &["ack_required", "round", "upstream_license_id"],
            Action::AcceptTerms => &["ack_required"],
            Action::FinalTerms => &["round"],
            Action::PaymentRequired => &["split"],
            _ => &[],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub session_id: String,
    pub seq: u64,
    pub sender: String,
    pub recipient: String,
    pub action: Action,
    pub body: TermValue,
}

impl ProtocolMessage {
    pub fn new(session_id: &str, seq: u64, sender: &str, recipient: &str, action: Action, body: TermValue) -> Self {
        ProtocolMessage {
            session_id: session_id.to_owned(),
            seq,
            sender: sender.to_owned(),
            recipient: recipient.to_owned(),
            action,
            body,
        }
    }

    /// Checks the body against the action's key table.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if i64::try_from(self.seq).is_err() {
            return Err(ProtocolError::MalformedFrame(format!("seq {} exceeds the wire range", self.seq)));
        }
        validate_body(self.action, &self.body)
    }

    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("action", TermValue::from(self.action.as_str())),
            ("body", self.body.clone()),
            ("recipient", self.recipient.as_str().into()),
            ("sender", self.sender.as_str().into()),
            ("seq", self.seq.into()),
            ("session_id", self.session_id.as_str().into()),
        ])
    }

    pub fn from_value(value: &TermValue) -> Result<Self, ProtocolError> {
        let malformed = |why: &str| ProtocolError::MalformedFrame(why.to_owned());
        let map = value.as_map().ok_or_else(|| malformed("message is not a map"))?;
        if map.len() != 6 {
            return Err(malformed("unexpected message keys"));
        }
        let text = |k: &str| value.get_str(k).map(str::to_owned).ok_or_else(|| malformed(&format!("missing {k}")));
        let tag = text("action")?;
        let action = Action::parse(&tag).ok_or_else(|| malformed(&format!("unknown action {tag:?}")))?;
        let message = ProtocolMessage {
            session_id: text("session_id")?,
            seq: value.get("seq").and_then(TermValue::as_u64).ok_or_else(|| malformed("bad seq"))?,
            sender: text("sender")?,
            recipient: text("recipient")?,
            action,
            body: value.get("body").cloned().ok_or_else(|| malformed("missing body"))?,
        };
        message.validate()?;
        Ok(message)
    }

    pub fn body_str(&self, key: &str) -> Option<&str> {
        self.body.get_str(key)
    }
}

pub fn validate_body(action: Action, body: &TermValue) -> Result<(), ProtocolError> {
    let map: &BTreeMap<String, TermValue> = body
        .as_map()
        .ok_or_else(|| ProtocolError::MalformedFrame(format!("{action} body is not a map")))?;
    for key in action.required_keys() {
        if !map.contains_key(*key) {
            return Err(ProtocolError::MalformedFrame(format!("{action} body lacks {key:?}")));
        }
    }
    let known = |k: &str| action.required_keys().contains(&k) || action.optional_keys().contains(&k);
    if let Some(extra) = map.keys().find(|k| !known(k)) {
        return Err(ProtocolError::MalformedFrame(format!("{action} body has unexpected key {extra:?}")));
    }
    Ok(())
}

/// 4-byte big-endian length prefix followed by the canonical JSON message.
pub fn encode_message(message: &ProtocolMessage) -> Result<Vec<u8>, ProtocolError> {
    message.validate()?;
    let body = to_canonical_bytes(&message.to_value());
    let len = u32::try_from(body.len()).map_err(|_| ProtocolError::MalformedFrame("message too large".into()))?;
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

pub fn decode_message(frame: &[u8]) -> Result<ProtocolMessage, ProtocolError> {
    let (message, rest) = decode_prefix(frame)?;
    if !rest.is_empty() {
        return Err(ProtocolError::MalformedFrame(format!("{} trailing bytes", rest.len())));
    }
    Ok(message)
}

/// Decodes one frame from the front of `bytes`, returning the remainder.
pub fn decode_prefix(bytes: &[u8]) -> Result<(ProtocolMessage, &[u8]), ProtocolError> {
    let header: [u8; 4] = bytes
        .get(..4)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| ProtocolError::MalformedFrame("truncated length prefix".into()))?;
    let len = u32::from_be_bytes(header) as usize;
    let body = bytes.get(4..4 + len).ok_or_else(|| {
        ProtocolError::MalformedFrame(format!("declared length {len}, {} bytes present", bytes.len() - 4))
    })?;
    let value = parse_canonical(body).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    Ok((ProtocolMessage::from_value(&value)?, &bytes[4 + len..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ProtocolMessage {
        ProtocolMessage::new(
            "s1",
            3,
            "A",
            "B",
            Action::AcceptTerms,
            TermValue::from_pairs([("terms_hash", TermValue::from("ab".repeat(32)))]),
        )
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let frame = encode_message(&m).unwrap();
        assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, frame.len() - 4);
        assert_eq!(decode_message(&frame).unwrap(), m);
    }

    #[test]
    fn truncated_frame() {
        let mut frame = 10u32.to_be_bytes().to_vec();
        frame.extend_from_slice(b"{\"a\":1");
        assert!(matches!(decode_message(&frame), Err(ProtocolError::MalformedFrame(_))));
        assert!(matches!(decode_message(&[0, 0]), Err(ProtocolError::MalformedFrame(_))));
    }

    #[test]
    fn schema_violations() {
        let mut m = sample();
        m.action = Action::ProposeTerms;
        assert!(matches!(encode_message(&m), Err(ProtocolError::MalformedFrame(_))));

        let good = encode_message(&sample()).unwrap();
        let text = String::from_utf8(good[4..].to_vec()).unwrap().replace("accept_terms", "accept_tremz");
        let mut frame = (text.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(text.as_bytes());
        assert!(matches!(decode_message(&frame), Err(ProtocolError::MalformedFrame(_))));

        let spaced = String::from_utf8(good[4..].to_vec()).unwrap().replacen(":", ": ", 1);
        let mut frame = (spaced.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(spaced.as_bytes());
        assert!(matches!(decode_message(&frame), Err(ProtocolError::MalformedFrame(_))));
    }

    #[test]
    fn trailing_bytes_rejected_but_streams_split() {
        let mut two = encode_message(&sample()).unwrap();
        two.extend(encode_message(&sample()).unwrap());
        assert!(decode_message(&two).is_err());
        let (first, rest) = decode_prefix(&two).unwrap();
        assert_eq!(first, sample());
        assert_eq!(decode_message(rest).unwrap(), sample());
    }

    #[test]
    fn every_action_has_a_tag() {
        for a in Action::ALL {
            assert_eq!(Action::parse(a.as_str()), Some(a));
        }
    }
}
