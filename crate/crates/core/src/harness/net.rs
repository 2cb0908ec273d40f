use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{Action, ProtocolMessage};
use crate::terms::Decimal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Latency {
    Fixed(u64),
    /// Inclusive range, drawn per message.
    Uniform { min: u64, max: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetParams {
    pub latency: Latency,
    /// Per-action loss probability in `[0, 1]`.
    pub drop: BTreeMap<Action, Decimal>,
}

impl Default for NetParams {
    fn default() -> Self {
        NetParams { latency: Latency::Fixed(1), drop: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Deliver(ProtocolMessage),
    Timer { agent: String, session_id: String, generation: u64 },
    Wake { agent: String },
    Script(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Dropped,
    Scheduled(u64),
}

/// Discrete-event queue ordered by (tick, insertion order), with seeded
/// latency and loss.
#[derive(Clone, Debug)]
pub struct SimNet {
    tick: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    rng: ChaCha8Rng,
    params: NetParams,
}

impl SimNet {
    pub fn new(params: NetParams, seed: u64) -> Self {
        SimNet { tick: 0, seq: 0, queue: BTreeMap::new(), rng: ChaCha8Rng::seed_from_u64(seed), params }
    }

    pub fn now(&self) -> u64 {
        self.tick
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Schedules at an absolute tick; past ticks clamp to now.
    pub fn schedule(&mut self, at: u64, event: Event) {
        let at = at.max(self.tick);
        self.queue.insert((at, self.seq), event);
        self.seq += 1;
    }

    pub fn schedule_in(&mut self, ticks: u64, event: Event) {
        self.schedule(self.tick.saturating_add(ticks), event);
    }

    /// Applies loss, then latency.
    pub fn send(&mut self, message: ProtocolMessage) -> SendOutcome {
        let p = self.params.drop.get(&message.action).copied().unwrap_or(Decimal::ZERO);
        let dropped = if p >= Decimal::ONE {
            true
        } else if p > Decimal::ZERO {
            self.rng.gen_range(0..Decimal::SCALE) < p.units()
        } else {
            false
        };
        if dropped {
            return SendOutcome::Dropped;
        }
        let delay = match self.params.latency {
            Latency::Fixed(n) => n,
            Latency::Uniform { min, max } => self.rng.gen_range(min..=max),
        };
        let at = self.tick.saturating_add(delay);
        self.schedule(at, Event::Deliver(message));
        SendOutcome::Scheduled(at)
    }

    /// Next event, advancing the clock to its tick.
    pub fn pop(&mut self) -> Option<(u64, Event)> {
        let (&(tick, seq), _) = self.queue.iter().next()?;
        let event = self.queue.remove(&(tick, seq)).expect("key just observed");
        self.tick = tick;
        Some((tick, event))
    }

    pub fn peek_tick(&self) -> Option<u64> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    /// Events in processing order, for inspection.
    pub fn snapshot(&self) -> VecDeque<(u64, Event)> {
        self.queue.iter().map(|((t, _), e)| (*t, e.clone())).collect()
    }
}
