use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::disputes::{apply_verdict, arbitrate, collect_evidence, file_dispute, record_verdict, DisputeClaim, Verdict};
use crate::ledger::{AgreementToken, EntryKind, Ledger, LedgerError, PendingAgreement};
use crate::payments::{PaymentMemo, Wallets, REV_SHARE_PURPOSE, UPFRONT_PURPOSE};
use crate::protocol::{atomic_exchange, Command, ExchangeWorld, ProtocolMessage};
use crate::runtime::{Agent, Env, Input, Output, Side};
use crate::terms::{sha256_hex, to_canonical_bytes, TermValue};
use crate::trust::{ReputationBook, ReputationEvent};

use super::net::{Event, SendOutcome, SimNet};
use super::scenario::{Expectation, Scenario, ScriptEvent};
use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LineKind {
    Msg,
    Ledger,
    Balance,
    State,
    Memory,
}

impl LineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LineKind::Msg => "msg",
            LineKind::Ledger => "ledger",
            LineKind::Balance => "balance",
            LineKind::State => "state",
            LineKind::Memory => "memory",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptLine {
    pub tick: u64,
    pub kind: LineKind,
    pub data: TermValue,
}

impl TranscriptLine {
    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            ("data", self.data.clone()),
            ("kind", self.kind.as_str().into()),
            ("tick", self.tick.into()),
        ])
    }
}

/// Ordered log of one run; one canonical-JSON object per line.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub lines: Vec<TranscriptLine>,
}

impl Transcript {
    fn push(&mut self, tick: u64, kind: LineKind, data: TermValue) {
        self.lines.push(TranscriptLine { tick, kind, data });
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for line in &self.lines {
            out.extend(to_canonical_bytes(&line.to_value()));
            out.push(b'\n');
        }
        out
    }

    pub fn sha256(&self) -> String {
        sha256_hex(&self.to_jsonl())
    }

    pub fn of_kind(&self, kind: LineKind) -> impl Iterator<Item = &TranscriptLine> {
        self.lines.iter().filter(move |l| l.kind == kind)
    }
}

/// A usage event declared by the script, citable in disputes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UsageRecord {
    pub tick: u64,
    pub agent: String,
    pub content_id: String,
    pub tags: BTreeSet<String>,
}

/// Simulation state: network, ledger, wallets, reputation, and agents.
pub struct World {
    pub net: SimNet,
    pub ledger: Ledger,
    pub wallets: Wallets,
    pub reputation: ReputationBook,
    pub agents: BTreeMap<String, Agent>,
    pub usage: Vec<UsageRecord>,
    pub verdicts: Vec<Verdict>,
    pub transcript: Transcript,
    scenario: Scenario,
    initial_balances: BTreeMap<String, u64>,
    seen_ledger: usize,
    seen_balances: BTreeMap<String, u64>,
    seen_states: BTreeMap<(String, String), String>,
    seen_memory: BTreeMap<String, usize>,
    halted: bool,
}

/// Ledger and outbound queue handed to [`atomic_exchange`].
struct Swap<'w> {
    ledger: &'w mut Ledger,
    deliveries: Vec<ProtocolMessage>,
}

impl ExchangeWorld for Swap<'_> {
    fn ledger(&self) -> &Ledger {
        self.ledger
    }

    fn commit_token(&mut self, agreement: PendingAgreement) -> Result<AgreementToken, LedgerError> {
        self.ledger.commit_agreement(agreement)
    }

    fn schedule_delivery(&mut self, delivery: ProtocolMessage) {
        self.deliveries.push(delivery);
    }
}

fn session_of(input: &Input) -> Option<&str> {
    match input {
        Input::Request { session_id, .. }
        | Input::Timer { session_id, .. }
        | Input::Settled { session_id, .. }
        | Input::Minted { session_id, .. }
        | Input::ExchangeAborted { session_id, .. }
        | Input::Proceed { session_id } => Some(session_id),
        Input::Message(m) => Some(&m.session_id),
        Input::CourtshipClosed => None,
    }
}

fn secret_for(agent_id: &str) -> Vec<u8> {
    format!("sim-secret:{agent_id}").into_bytes()
}

impl World {
    pub fn new(scenario: &Scenario) -> Result<World, HarnessError> {
        let mut world = World {
            net: SimNet::new(scenario.net.clone(), scenario.seed),
            ledger: Ledger::new(),
            wallets: Wallets::new(),
            reputation: ReputationBook::new(),
            agents: BTreeMap::new(),
            usage: Vec::new(),
            verdicts: Vec::new(),
            transcript: Transcript::default(),
            scenario: scenario.clone(),
            initial_balances: BTreeMap::new(),
            seen_ledger: 0,
            seen_balances: BTreeMap::new(),
            seen_states: BTreeMap::new(),
            seen_memory: BTreeMap::new(),
            halted: false,
        };
        world.ledger.set_current_date(scenario.date_at(0))?;
        for config in &scenario.agents {
            world.ledger.register_agent(&config.agent_id, &secret_for(&config.agent_id))?;
            world.wallets.open(&config.agent_id, config.initial_balance);
            world.initial_balances.insert(config.agent_id.clone(), config.initial_balance);
            world.agents.insert(config.agent_id.clone(), Agent::new(config.clone())?);
        }
        for (i, step) in scenario.script.iter().enumerate() {
            world.net.schedule(step.tick, Event::Script(i));
        }
        let header = TermValue::from_pairs([
            ("scenario", TermValue::from(scenario.name.as_str())),
            ("seed", scenario.seed.into()),
            ("world", "start".into()),
        ]);
        world.transcript.push(0, LineKind::State, header);
        world.sync(0);
        Ok(world)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn agent(&self, agent_id: &str) -> Option<&Agent> {
        self.agents.get(agent_id)
    }

    pub fn initial_balance(&self, agent_id: &str) -> u64 {
        self.initial_balances.get(agent_id).copied().unwrap_or(0)
    }

    pub fn balance_delta(&self, agent_id: &str) -> i128 {
        i128::from(self.wallets.balance(agent_id).unwrap_or(0)) - i128::from(self.initial_balance(agent_id))
    }

    pub fn initial_supply(&self) -> u128 {
        self.initial_balances.values().map(|b| u128::from(*b)).sum()
    }

    /// True when the run stopped at `max_ticks` with events still queued.
    pub fn halted(&self) -> bool {
        self.halted
    }

    pub fn agreement_tokens(&self) -> Vec<&crate::ledger::LedgerEntry> {
        self.ledger.entries().iter().filter(|e| e.kind == EntryKind::AgreementToken).collect()
    }

    /// Processes events until the queue drains or `max_ticks` passes.
    pub fn run_to_end(&mut self) {
        while let Some(tick) = self.net.peek_tick() {
            if tick > self.scenario.max_ticks {
                self.halted = true;
                break;
            }
            self.step();
        }
        let tick = self.net.now();
        let footer = TermValue::from_pairs([
            ("halted", TermValue::Bool(self.halted)),
            ("pending_events", (self.net.pending() as u64).into()),
            ("world", "end".into()),
        ]);
        self.transcript.push(tick, LineKind::State, footer);
    }

    /// Processes one event.
    pub fn step(&mut self) -> bool {
        let Some((tick, event)) = self.net.pop() else {
            return false;
        };
        if let Err(e) = self.ledger.set_current_date(self.scenario.date_at(tick)) {
            self.note(tick, "date", &e.to_string());
        }
        match event {
            Event::Deliver(m) => {
                self.transcript.push(tick, LineKind::Msg, msg_line("deliver", &m, None));
                let to = m.recipient.clone();
                if self.agents.contains_key(&to) {
                    self.dispatch(&to, Input::Message(m));
                }
            }
            Event::Timer { agent, session_id, generation } => {
                self.dispatch(&agent, Input::Timer { session_id, generation });
            }
            Event::Wake { agent } => self.dispatch(&agent, Input::CourtshipClosed),
            Event::Script(i) => self.script(i),
        }
        self.sync(tick);
        true
    }

    fn note(&mut self, tick: u64, what: &str, error: &str) {
        let data = TermValue::from_pairs([("error", TermValue::from(error)), ("during", what.into())]);
        self.transcript.push(tick, LineKind::State, data);
    }

    /// Runs an input and everything it triggers within the same tick.
    fn dispatch(&mut self, agent_id: &str, input: Input) {
        let tick = self.net.now();
        let mut queue = VecDeque::from([input]);
        let mut touched = BTreeSet::new();
        loop {
            while let Some(input) = queue.pop_front() {
                if let Some(sid) = session_of(&input) {
                    touched.insert(sid.to_owned());
                }
                let outputs = {
                    let env = Env { tick, ledger: &self.ledger, reputation: &self.reputation };
                    let agent = self.agents.get_mut(agent_id).expect("dispatch targets known agents");
                    agent.handle(&env, input)
                };
                match outputs {
                    Ok(outputs) => {
                        for o in outputs {
                            self.execute(agent_id, o, &mut queue, &mut touched);
                        }
                    }
                    Err(e) => self.note(tick, "dispatch", &e.to_string()),
                }
            }
            let agent = &self.agents[agent_id];
            for sid in touched.iter().filter(|s| agent.is_transient(s)) {
                queue.push_back(Input::Proceed { session_id: sid.clone() });
            }
            if queue.is_empty() {
                break;
            }
        }
    }

    fn send(&mut self, m: ProtocolMessage) {
        let tick = self.net.now();
        let line = match self.net.send(m.clone()) {
            SendOutcome::Dropped => msg_line("drop", &m, None),
            SendOutcome::Scheduled(at) => msg_line("send", &m, Some(at)),
        };
        self.transcript.push(tick, LineKind::Msg, line);
    }

    fn execute(&mut self, agent_id: &str, output: Output, queue: &mut VecDeque<Input>, touched: &mut BTreeSet<String>) {
        let tick = self.net.now();
        let (session_id, command) = match output {
            Output::WakeAfter(ticks) => {
                self.net.schedule_in(ticks, Event::Wake { agent: agent_id.to_owned() });
                return;
            }
            Output::Session { session_id, command } => (session_id, command),
        };
        touched.insert(session_id.clone());
        match command {
            Command::Send(m) => self.send(m),
            Command::StartTimer { generation, ticks } => {
                let event = Event::Timer { agent: agent_id.to_owned(), session_id, generation };
                self.net.schedule_in(ticks, event);
            }
            Command::MintDraft { round, terms } => {
                if let Err(e) = self.ledger.mint_draft(&session_id, round, agent_id, &terms) {
                    self.note(tick, "mint_draft", &e.to_string());
                }
            }
            Command::Exchange { agreement, delivery } => {
                let terms = self.agents[agent_id].provider_session(&session_id).and_then(|s| s.terms.clone());
                let result = match terms {
                    Some(terms) => {
                        let mut swap = Swap { ledger: &mut self.ledger, deliveries: Vec::new() };
                        atomic_exchange(&mut swap, agreement, &terms, delivery).map(|_| swap.deliveries)
                    }
                    None => Err(crate::protocol::ProtocolError::AbortedExchange("no agreed terms".into())),
                };
                match result {
                    Ok(deliveries) => deliveries.into_iter().for_each(|d| self.send(d)),
                    Err(e) => queue.push_back(Input::ExchangeAborted { session_id, reason: e.to_string() }),
                }
            }
            Command::Settle { plan } => {
                let memo = PaymentMemo::new(UPFRONT_PURPOSE).session(&session_id);
                let result = self.wallets.settle(&mut self.ledger, &plan, agent_id, &memo);
                queue.push_back(Input::Settled { session_id, result: result.map(|_| ()).map_err(|e| e.to_string()) });
            }
            Command::Mint(request) => {
                let result = self.ledger.prepare_agreement(&request).map_err(|e| e.to_string());
                queue.push_back(Input::Minted { session_id, result });
            }
            Command::RecordTransaction(record) => {
                if self.agents[agent_id].side(&session_id) == Some(Side::Provider) {
                    for agent in [&record.provider_id, &record.requester_id] {
                        let context = Some(("session_id", session_id.as_str()));
                        if let Err(e) =
                            self.reputation.record_outcome(&mut self.ledger, agent, ReputationEvent::DealCompleted, context)
                        {
                            self.note(tick, "reputation", &e.to_string());
                        }
                    }
                }
            }
            Command::Log(_) => {}
        }
    }

    fn script(&mut self, index: usize) {
        let tick = self.net.now();
        let event = self.scenario.script[index].event.clone();
        match event {
            ScriptEvent::Request { session_id, requester, provider, content_id, offer, upgrade } => {
                self.dispatch(&requester, Input::Request { session_id, provider, content_id, offer, upgrade });
            }
            ScriptEvent::DownstreamSale { seller, buyer, content_id, amount } => {
                let plan = self.agents[&seller].downstream_sale_plan(&self.ledger, &content_id, amount);
                let result = plan.map_err(|e| e.to_string()).and_then(|(plan, license_id)| {
                    let memo = PaymentMemo { license_id: Some(license_id), ..PaymentMemo::new(REV_SHARE_PURPOSE) };
                    self.wallets.settle(&mut self.ledger, &plan, &buyer, &memo).map_err(|e| e.to_string())
                });
                match result {
                    Ok(_) => self.agent_log(&seller, format!("downstream_sale:{content_id}:{amount}")),
                    Err(e) => self.note(tick, "downstream_sale", &e),
                }
            }
            ScriptEvent::Usage { agent, content_id, tags } => {
                let joined = tags.iter().cloned().collect::<Vec<_>>().join(",");
                self.agent_log(&agent, format!("usage:{content_id}:{joined}"));
                self.usage.push(UsageRecord { tick, agent, content_id, tags });
            }
            ScriptEvent::Dispute { claimant, respondent, content_id, claim_kind, asserted_terms_hash, asserted_clause } => {
                let result = self.dispute(&claimant, &respondent, &content_id, claim_kind, asserted_terms_hash, asserted_clause);
                match result {
                    Ok(verdict) => {
                        let line = format!("verdict:{}:{}", verdict.dispute_id, verdict.winner);
                        self.agent_log(&claimant, line.clone());
                        self.agent_log(&respondent, line);
                        self.verdicts.push(verdict);
                    }
                    Err(e) => self.note(tick, "dispute", &e),
                }
            }
        }
    }

    fn agent_log(&mut self, agent_id: &str, text: String) {
        let tick = self.net.now();
        if let Some(a) = self.agents.get_mut(agent_id) {
            a.log(text, tick);
        }
    }

    /// The license between the two parties for `content_id`, held by either.
    fn license_between(&self, a: &str, b: &str, content_id: &str) -> Option<AgreementToken> {
        [(a, b), (b, a)].into_iter().find_map(|(holder, issuer)| {
            let record = self.agents.get(holder)?.memory().held_license(holder, content_id)?;
            (record.provider_id == issuer).then(|| self.ledger.token(&record.license_id)).flatten()
        })
    }

    fn dispute(
        &mut self,
        claimant: &str,
        respondent: &str,
        content_id: &str,
        kind: crate::disputes::ClaimKind,
        asserted_terms_hash: Option<String>,
        asserted_clause: Option<(Vec<String>, TermValue)>,
    ) -> Result<Verdict, String> {
        let token = self
            .license_between(claimant, respondent, content_id)
            .ok_or_else(|| format!("no license between {claimant} and {respondent} for {content_id}"))?;
        let holder = token.metadata.holder_id.clone();
        let mut claim = DisputeClaim::new(claimant, respondent, token.license_id(), kind);
        claim.asserted_terms_hash = asserted_terms_hash;
        claim.asserted_clause = asserted_clause;
        claim.usage_tags = self
            .usage
            .iter()
            .filter(|u| u.agent == holder && u.content_id == content_id)
            .flat_map(|u| u.tags.iter().cloned())
            .collect();
        let id = file_dispute(&mut self.ledger, &claim).map_err(|e| e.to_string())?;
        let evidence = collect_evidence(&self.ledger, &id).map_err(|e| e.to_string())?;
        let verdict = arbitrate(&claim, &evidence);
        record_verdict(&mut self.ledger, &verdict).map_err(|e| e.to_string())?;
        apply_verdict(&mut self.ledger, &mut self.reputation, &verdict, &token).map_err(|e| e.to_string())?;
        Ok(verdict)
    }

    /// Emits ledger, balance, state, and memory lines for whatever changed.
    fn sync(&mut self, tick: u64) {
        for entry in &self.ledger.entries()[self.seen_ledger..] {
            self.transcript.push(tick, LineKind::Ledger, entry.to_value());
        }
        self.seen_ledger = self.ledger.len();
        for (agent, balance) in self.wallets.balances() {
            if self.seen_balances.get(agent) != Some(balance) {
                let data = TermValue::from_pairs([("agent", TermValue::from(agent.as_str())), ("balance", (*balance).into())]);
                self.transcript.push(tick, LineKind::Balance, data);
                self.seen_balances.insert(agent.clone(), *balance);
            }
        }
        for (agent_id, agent) in &self.agents {
            let sessions = agent
                .provider_sessions()
                .map(|s| (s.session_id().to_owned(), "provider", s.state.to_string()))
                .chain(agent.requester_sessions().map(|s| (s.session_id().to_owned(), "requester", s.state.to_string())));
            for (sid, role, state) in sessions {
                let key = (agent_id.clone(), sid.clone());
                if self.seen_states.get(&key) != Some(&state) {
                    let data = TermValue::from_pairs([
                        ("agent", TermValue::from(agent_id.as_str())),
                        ("role", role.into()),
                        ("session_id", sid.as_str().into()),
                        ("state", state.as_str().into()),
                    ]);
                    self.transcript.push(tick, LineKind::State, data);
                    self.seen_states.insert(key, state);
                }
            }
            let seen = self.seen_memory.entry(agent_id.clone()).or_insert(0);
            for record in &agent.memory().records()[*seen..] {
                let data = TermValue::from_pairs([("agent", TermValue::from(agent_id.as_str())), ("record", record.to_value())]);
                self.transcript.push(tick, LineKind::Memory, data);
            }
            *seen = agent.memory().len();
        }
    }

    /// Evaluates the scenario's expectations against the final state.
    pub fn check_expectations(&self) -> Vec<(String, bool)> {
        self.scenario
            .expectations
            .iter()
            .map(|e| match e {
                Expectation::BalanceDelta { agent, delta } => {
                    (format!("balance delta {agent} = {delta}"), self.balance_delta(agent) == *delta)
                }
                Expectation::SessionState { agent, session_id, state } => (
                    format!("{agent} {session_id} is {state}"),
                    self.agents.get(agent).and_then(|a| a.session_state(session_id)).as_deref() == Some(state),
                ),
                Expectation::TokenVerified { session_id } => {
                    (format!("token for {session_id} verifies"), self.session_token_verifies(session_id))
                }
                Expectation::MemoryLog { agent, text } => (
                    format!("{agent} logged {text:?}"),
                    self.agents.get(agent).is_some_and(|a| a.memory().logs().any(|l| l == text)),
                ),
                Expectation::AgreementTokens { count } => {
                    (format!("{count} agreement tokens"), self.agreement_tokens().len() == *count)
                }
                Expectation::Verdict { winner, rationale } => (
                    match rationale {
                        Some(r) => format!("verdict for {winner} ({r})"),
                        None => format!("verdict for {winner}"),
                    },
                    self.verdicts.iter().any(|v| {
                        &v.winner == winner && rationale.as_deref().is_none_or(|r| r == v.rationale.as_str())
                    }),
                ),
                Expectation::Revoked { session_id } => (
                    format!("license of {session_id} revoked"),
                    self.ledger.token_for_session(session_id).is_some_and(|t| self.ledger.is_revoked(t.license_id())),
                ),
            })
            .collect()
    }

    /// The session's token verifies against the terms the requester agreed to.
    pub fn session_token_verifies(&self, session_id: &str) -> bool {
        let Some(token) = self.ledger.token_for_session(session_id) else {
            return false;
        };
        let agreed = self
            .agents
            .get(&token.metadata.holder_id)
            .and_then(|a| a.requester_session(session_id))
            .and_then(|s| s.agreed.clone());
        agreed.is_some_and(|terms| self.ledger.verify_token(&token, &terms))
    }
}

fn msg_line(event: &str, m: &ProtocolMessage, at: Option<u64>) -> TermValue {
    let mut data = TermValue::from_pairs([("event", TermValue::from(event)), ("message", m.to_value())]);
    if let Some(at) = at {
        data.as_map_mut().expect("map").insert("deliver_at".into(), at.into());
    }
    data
}
