use crate::ledger::{AgreementToken, Ledger, LedgerError, PendingAgreement};
use crate::terms::LicenseTerms;

use super::{Action, ProtocolError, ProtocolMessage};

/// The two halves of a token-for-IP swap.
pub trait ExchangeWorld {
    fn ledger(&self) -> &Ledger;
    fn commit_token(&mut self, agreement: PendingAgreement) -> Result<AgreementToken, LedgerError>;
    /// Must enqueue `delivery` at the current tick.
    fn schedule_delivery(&mut self, delivery: ProtocolMessage);
}

/// Verifies, appends the token, and schedules delivery without yielding to
/// any other event. On failure neither half happens.
pub fn atomic_exchange<W: ExchangeWorld>(
    world: &mut W,
    agreement: PendingAgreement,
    terms: &LicenseTerms,
    delivery: ProtocolMessage,
) -> Result<AgreementToken, ProtocolError> {
    if delivery.action != Action::DeliverIp || delivery.body_str("license_id") != Some(agreement.license_id()) {
        return Err(ProtocolError::AbortedExchange("delivery does not reference the token".into()));
    }
    if !world.ledger().verify_pending(&agreement, terms) {
        return Err(ProtocolError::AbortedExchange("token failed verification".into()));
    }
    let token = world
        .commit_token(agreement)
        .map_err(|e| ProtocolError::AbortedExchange(e.to_string()))?;
    world.schedule_delivery(delivery);
    Ok(token)
}
