use crate::protocol::TransactionRecord;
use crate::terms::TermValue;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MemoryRecord {
    Transaction { record: TransactionRecord, tick: u64 },
    Log { text: String, tick: u64 },
}

impl MemoryRecord {
    pub fn tick(&self) -> u64 {
        match self {
            MemoryRecord::Transaction { tick, .. } | MemoryRecord::Log { tick, .. } => *tick,
        }
    }

    pub fn to_value(&self) -> TermValue {
        match self {
            MemoryRecord::Transaction { record, tick } => {
                let mut v = record.to_value();
                let m = v.as_map_mut().expect("map");
                m.insert("kind".into(), "transaction".into());
                m.insert("tick".into(), (*tick).into());
                v
            }
            MemoryRecord::Log { text, tick } => TermValue::from_pairs([
                ("kind", TermValue::from("log")),
                ("text", text.as_str().into()),
                ("tick", (*tick).into()),
            ]),
        }
    }
}

/// Append-only record of an agent's completed deals and notable events.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Memory {
    records: Vec<MemoryRecord>,
}

impl Memory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn log(&mut self, text: impl Into<String>, tick: u64) {
        self.records.push(MemoryRecord::Log { text: text.into(), tick });
    }

    pub fn record_transaction(&mut self, record: TransactionRecord, tick: u64) {
        self.records.push(MemoryRecord::Transaction { record, tick });
    }

    pub fn transactions(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.records.iter().filter_map(|r| match r {
            MemoryRecord::Transaction { record, .. } => Some(record),
            MemoryRecord::Log { .. } => None,
        })
    }

    pub fn logs(&self) -> impl Iterator<Item = &str> {
        self.records.iter().filter_map(|r| match r {
            MemoryRecord::Log { text, .. } => Some(text.as_str()),
            MemoryRecord::Transaction { .. } => None,
        })
    }

    /// Most recent license `holder` obtained for `content_id`.
    pub fn held_license(&self, holder: &str, content_id: &str) -> Option<&TransactionRecord> {
        self.transactions()
            .filter(|t| t.requester_id == holder && t.content_id == content_id && !t.license_id.is_empty())
            .last()
    }
}
