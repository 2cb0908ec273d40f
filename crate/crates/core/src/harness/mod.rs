//! Deterministic simulation: a seeded discrete-event network, scenario
//! files, and byte-reproducible transcripts.

mod net;
mod scenario;
mod world;

use thiserror::Error;

pub use net::{Event, Latency, NetParams, SendOutcome, SimNet};
pub use scenario::{
    builtin, load_scenario, parse_scenario, terms_overlay, Expectation, Scenario, ScriptEvent, Scripted,
    BUILTIN_SCENARIOS, DEFAULT_MAX_TICKS,
};
pub use world::{LineKind, Transcript, TranscriptLine, UsageRecord, World};

use crate::ledger::{verify_export, LedgerError};
use crate::runtime::RuntimeError;
use crate::terms::parse;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unresolved reference {0:?}")]
    UnresolvedReference(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<(Transcript, World), HarnessError> {
    let mut world = World::new(scenario)?;
    world.run_to_end();
    Ok((world.transcript.clone(), world))
}

/// Re-runs `scenario` and compares against a recorded transcript byte for byte.
pub fn replay(transcript: &[u8], scenario: &Scenario) -> Result<bool, HarnessError> {
    let (fresh, _) = run(scenario)?;
    Ok(fresh.to_jsonl() == transcript)
}

pub fn replay_files(transcript_path: &str, scenario_path: &str) -> Result<bool, HarnessError> {
    let scenario = load_scenario(scenario_path)?;
    let recorded = std::fs::read(transcript_path).map_err(|e| HarnessError::Io(format!("{transcript_path}: {e}")))?;
    replay(&recorded, &scenario)
}

/// Recomputes the hash chain of an exported ledger file.
pub fn verify_ledger(export_path: &str) -> Result<bool, HarnessError> {
    let bytes = std::fs::read(export_path).map_err(|e| HarnessError::Io(format!("{export_path}: {e}")))?;
    verify_ledger_bytes(&bytes)
}

/// `ParseError` unless the bytes are a JSON list; entries that do not decode
/// count as tampering.
pub fn verify_ledger_bytes(bytes: &[u8]) -> Result<bool, HarnessError> {
    let value = parse(bytes).map_err(|e| HarnessError::Parse(e.to_string()))?;
    if value.as_list().is_none() {
        return Err(HarnessError::Parse("ledger export must be a list of entries".into()));
    }
    match verify_export(bytes) {
        Ok(ok) => Ok(ok),
        Err(LedgerError::Parse(_)) => Ok(false),
        Err(other) => Err(HarnessError::Ledger(other)),
    }
}
