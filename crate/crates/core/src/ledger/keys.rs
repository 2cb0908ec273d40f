use std::collections::BTreeMap;

use crate::terms::sha256_hex_parts;

use super::LedgerError;

#[derive(Clone, Debug, PartialEq, Eq)]
struct KeyRecord {
    secret: Vec<u8>,
    registered_at: u64,
}

/// Simulated signing keys. A signature is `SHA-256(secret ∥ payload)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    records: BTreeMap<String, KeyRecord>,
}

impl KeyRegistry {
    pub fn register(&mut self, agent_id: &str, secret: &[u8], height: u64) -> Result<(), LedgerError> {
        if self.records.contains_key(agent_id) {
            return Err(LedgerError::DuplicateAgent(agent_id.to_owned()));
        }
        self.records
            .insert(agent_id.to_owned(), KeyRecord { secret: secret.to_vec(), registered_at: height });
        Ok(())
    }

    pub fn contains(&self, agent_id: &str) -> bool {
        self.records.contains_key(agent_id)
    }

    pub fn registered_at(&self, agent_id: &str) -> Option<u64> {
        self.records.get(agent_id).map(|r| r.registered_at)
    }

    pub fn sign(&self, agent_id: &str, payload: &[u8]) -> Result<String, LedgerError> {
        let record = self
            .records
            .get(agent_id)
            .ok_or_else(|| LedgerError::UnknownAgent(agent_id.to_owned()))?;
        Ok(sha256_hex_parts(&[&record.secret, payload]))
    }

    pub fn verify(&self, agent_id: &str, payload: &[u8], signature: &str) -> Result<bool, LedgerError> {
        Ok(self.sign(agent_id, payload)? == signature)
    }
}
