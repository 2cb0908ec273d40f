//! Agent-to-agent IP licensing: license terms, a hash-chained ledger,
//! payments and royalty splits, the negotiation protocol, trust checks,
//! dispute arbitration, and a deterministic multi-agent simulator.

#![allow(clippy::large_enum_variant)]

pub mod terms;
pub mod ledger;
pub mod payments;
pub mod negotiation;
pub mod trust;
pub mod disputes;
pub mod protocol;
pub mod runtime;
pub mod harness;
