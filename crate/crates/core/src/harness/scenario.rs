use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::disputes::ClaimKind;
use crate::negotiation::{Bound, NegotiationPolicy, RiskTier, Role, TierName};
use crate::protocol::{Action, SessionConfig};
use crate::runtime::{AgentConfig, Courtship, IPCatalogItem, TermGenerator, Upgrade};
use crate::terms::{field_kind, is_iso_date, parse, Decimal, FieldKind, LicenseTerms, TermValue, TermsDelta};
use crate::trust::{CompatibilityRules, JurisdictionProfile};

use super::net::{Latency, NetParams};
use super::HarnessError;

pub const DEFAULT_MAX_TICKS: u64 = 10_000;

/// Built-in scenarios, by name.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("uc1_dataset", include_str!("../../scenarios/uc1_dataset.json")),
    ("uc2_social_game", include_str!("../../scenarios/uc2_social_game.json")),
    ("uc3_style_transfer", include_str!("../../scenarios/uc3_style_transfer.json")),
    ("uc4_multihop", include_str!("../../scenarios/uc4_multihop.json")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScriptEvent {
    Request {
        session_id: String,
        requester: String,
        provider: String,
        content_id: String,
        offer: Option<LicenseTerms>,
        upgrade: Option<Upgrade>,
    },
    DownstreamSale { seller: String, buyer: String, content_id: String, amount: u64 },
    Usage { agent: String, content_id: String, tags: BTreeSet<String> },
    Dispute {
        claimant: String,
        respondent: String,
        content_id: String,
        claim_kind: ClaimKind,
        asserted_terms_hash: Option<String>,
        asserted_clause: Option<(Vec<String>, TermValue)>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scripted {
    pub tick: u64,
    pub event: ScriptEvent,
}

/// Post-run assertions a scenario may carry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expectation {
    BalanceDelta { agent: String, delta: i128 },
    SessionState { agent: String, session_id: String, state: String },
    /// The requester of `session_id` holds a token that verifies.
    TokenVerified { session_id: String },
    MemoryLog { agent: String, text: String },
    AgreementTokens { count: usize },
    /// Some recorded verdict names `winner`, with `rationale` when given.
    Verdict { winner: String, rationale: Option<String> },
    /// The license minted in `session_id` has been revoked.
    Revoked { session_id: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub max_ticks: u64,
    pub net: NetParams,
    /// Ledger date from each listed tick onward.
    pub dates: BTreeMap<u64, String>,
    pub agents: Vec<AgentConfig>,
    pub script: Vec<Scripted>,
    pub expectations: Vec<Expectation>,
}

impl Scenario {
    pub fn agent(&self, agent_id: &str) -> Option<&AgentConfig> {
        self.agents.iter().find(|a| a.agent_id == agent_id)
    }

    pub fn date_at(&self, tick: u64) -> Option<&str> {
        self.dates.range(..=tick).next_back().map(|(_, d)| d.as_str())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Reads a scenario from a file path, or a built-in by name when the path does not exist.
pub fn load_scenario(path: &str) -> Result<Scenario, HarnessError> {
    if !Path::new(path).exists() {
        if let Some(text) = builtin(path) {
            return parse_scenario(text.as_bytes());
        }
    }
    let bytes = std::fs::read(path).map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
    parse_scenario(&bytes)
}

pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, HarnessError> {
    let root = parse(bytes).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let scenario = Scenario {
        name: text(&root, "name")?.to_owned(),
        seed: opt_u64(&root, "seed")?.unwrap_or(0),
        max_ticks: opt_u64(&root, "max_ticks")?.unwrap_or(DEFAULT_MAX_TICKS),
        net: root.get("network").map(net_params).transpose()?.unwrap_or_default(),
        dates: dates(&root)?,
        agents: agents(&root)?,
        script: list(&root, "script")?.iter().map(scripted).collect::<Result<_, _>>()?,
        expectations: match root.get("expect") {
            None => Vec::new(),
            Some(_) => list(&root, "expect")?.iter().map(expectation).collect::<Result<_, _>>()?,
        },
    };
    resolve(&scenario)?;
    Ok(scenario)
}

fn perr(msg: impl Into<String>) -> HarnessError {
    HarnessError::Parse(msg.into())
}

fn get<'v>(v: &'v TermValue, key: &str) -> Result<&'v TermValue, HarnessError> {
    v.get(key).ok_or_else(|| perr(format!("missing key {key:?}")))
}

fn text<'v>(v: &'v TermValue, key: &str) -> Result<&'v str, HarnessError> {
    get(v, key)?.as_str().ok_or_else(|| perr(format!("{key:?} must be text")))
}

fn opt_text<'v>(v: &'v TermValue, key: &str) -> Result<Option<&'v str>, HarnessError> {
    v.get(key).map(|x| x.as_str().ok_or_else(|| perr(format!("{key:?} must be text")))).transpose()
}

fn opt_u64(v: &TermValue, key: &str) -> Result<Option<u64>, HarnessError> {
    v.get(key).map(|x| x.as_u64().ok_or_else(|| perr(format!("{key:?} must be a non-negative integer")))).transpose()
}

fn opt_bool(v: &TermValue, key: &str) -> Result<Option<bool>, HarnessError> {
    v.get(key).map(|x| x.as_bool().ok_or_else(|| perr(format!("{key:?} must be a boolean")))).transpose()
}

fn list<'v>(v: &'v TermValue, key: &str) -> Result<&'v [TermValue], HarnessError> {
    get(v, key)?.as_list().ok_or_else(|| perr(format!("{key:?} must be a list")))
}

fn tags(v: &TermValue, key: &str) -> Result<BTreeSet<String>, HarnessError> {
    match v.get(key) {
        None => Ok(BTreeSet::new()),
        Some(x) => x
            .as_list()
            .and_then(|items| items.iter().map(|t| t.as_str().map(str::to_owned)).collect())
            .ok_or_else(|| perr(format!("{key:?} must be a list of text"))),
    }
}

/// Integers are accepted where decimals are expected.
fn decimal(v: &TermValue, what: &str) -> Result<Decimal, HarnessError> {
    match v {
        TermValue::Decimal(d) => Ok(*d),
        TermValue::Integer(i) => Decimal::from_int(*i).ok_or_else(|| perr(format!("{what} out of range"))),
        TermValue::Text(s) => Decimal::parse(s).map_err(|_| perr(format!("{what} is not a decimal"))),
        _ => Err(perr(format!("{what} must be a decimal"))),
    }
}

fn net_params(v: &TermValue) -> Result<NetParams, HarnessError> {
    let latency = match v.get("latency") {
        None => Latency::Fixed(1),
        Some(l) => match (opt_u64(l, "fixed")?, l.get("uniform")) {
            (Some(n), None) => Latency::Fixed(n),
            (None, Some(u)) => {
                let (min, max) = (opt_u64(u, "min")?.unwrap_or(0), opt_u64(u, "max")?.unwrap_or(0));
                if min > max {
                    return Err(perr("uniform latency needs min <= max"));
                }
                Latency::Uniform { min, max }
            }
            _ => return Err(perr("latency must be {\"fixed\": n} or {\"uniform\": {...}}")),
        },
    };
    let mut drop = BTreeMap::new();
    if let Some(d) = v.get("drop") {
        let map = d.as_map().ok_or_else(|| perr("drop must be a map"))?;
        for (tag, p) in map {
            let action = Action::parse(tag).ok_or_else(|| perr(format!("unknown action {tag:?}")))?;
            let p = decimal(p, "drop probability")?;
            if !p.is_fraction() {
                return Err(perr(format!("drop probability for {tag} outside [0, 1]")));
            }
            drop.insert(action, p);
        }
    }
    Ok(NetParams { latency, drop })
}

fn dates(root: &TermValue) -> Result<BTreeMap<u64, String>, HarnessError> {
    let mut out = BTreeMap::new();
    let Some(d) = root.get("dates") else {
        return Ok(out);
    };
    for (tick, date) in d.as_map().ok_or_else(|| perr("dates must be a map"))? {
        let tick: u64 = tick.parse().map_err(|_| perr(format!("date key {tick:?} is not a tick")))?;
        let date = date.as_str().filter(|d| is_iso_date(d)).ok_or_else(|| perr(format!("bad date at tick {tick}")))?;
        out.insert(tick, date.to_owned());
    }
    Ok(out)
}

fn session_config(root: &TermValue) -> Result<SessionConfig, HarnessError> {
    let mut config = SessionConfig::default();
    if let Some(s) = root.get("session") {
        if let Some(n) = opt_u64(s, "negotiation_timeout_ticks")? {
            config.negotiation_timeout_ticks = n;
        }
        if let Some(n) = opt_u64(s, "settlement_timeout_ticks")? {
            config.settlement_timeout_ticks = n;
        }
        if let Some(b) = opt_bool(s, "onchain_drafts")? {
            config.onchain_drafts = b;
        }
    }
    config.validate().map_err(|e| perr(e.to_string()))?;
    Ok(config)
}

fn compatibility(root: &TermValue) -> Result<CompatibilityRules, HarnessError> {
    let mut rules = CompatibilityRules::new();
    let Some(c) = root.get("compatibility") else {
        return Ok(rules);
    };
    if let Some(pairs) = c.get("blocked") {
        for pair in pairs.as_list().ok_or_else(|| perr("blocked must be a list"))? {
            match pair.as_list() {
                Some([a, b]) => {
                    let (a, b) = a.as_str().zip(b.as_str()).ok_or_else(|| perr("blocked pairs hold text"))?;
                    rules = rules.block(a, b);
                }
                _ => return Err(perr("blocked entries are pairs")),
            }
        }
    }
    if let Some(b) = opt_bool(c, "personal_data_rule")? {
        rules.personal_data_rule = b;
    }
    rules.min_cross_system_score = c.get("min_cross_system_score").map(|v| decimal(v, "score")).transpose()?;
    Ok(rules)
}

/// Terms given as a partial map over neutral defaults.
pub fn terms_overlay(v: &TermValue, content_id: &str, jurisdiction: &str) -> Result<LicenseTerms, HarnessError> {
    let overlay = v.as_map().ok_or_else(|| perr("terms must be a map"))?;
    let mut base = LicenseTerms::new(content_id, jurisdiction).to_value();
    let map = base.as_map_mut().expect("map");
    for (k, value) in overlay {
        let value = match (field_kind(k), value) {
            (Some(FieldKind::Decimal), TermValue::Integer(_)) => TermValue::Decimal(decimal(value, k)?),
            _ => value.clone(),
        };
        map.insert(k.clone(), value);
    }
    LicenseTerms::from_value(&base).map_err(|violations| {
        perr(format!(
            "terms for {content_id}: {}",
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
        ))
    })
}

fn policy(v: Option<&TermValue>, role: Role) -> Result<NegotiationPolicy, HarnessError> {
    let mut policy = NegotiationPolicy::open(role);
    let Some(v) = v else {
        return Ok(policy);
    };
    if let Some(bounds) = v.get("bounds") {
        for (path, b) in bounds.as_map().ok_or_else(|| perr("bounds must be a map"))? {
            let kind = field_kind(path).ok_or_else(|| perr(format!("unknown bound field {path:?}")))?;
            let bound = if let Some(values) = b.get("one_of") {
                let values = values
                    .as_list()
                    .and_then(|l| l.iter().map(|t| t.as_str().map(str::to_owned)).collect::<Option<BTreeSet<_>>>())
                    .ok_or_else(|| perr("one_of must list text"))?;
                Bound::OneOf(values)
            } else if kind == FieldKind::Integer {
                let min = opt_u64(b, "min")?.unwrap_or(0) as i64;
                let max = opt_u64(b, "max")?.map_or(i64::MAX, |m| m as i64);
                Bound::Integer { min, max }
            } else if kind == FieldKind::Decimal {
                let min = b.get("min").map(|m| decimal(m, "min")).transpose()?.unwrap_or(Decimal::ZERO);
                let max = b.get("max").map(|m| decimal(m, "max")).transpose()?.unwrap_or(Decimal::ONE);
                Bound::Decimal { min, max }
            } else {
                return Err(perr(format!("field {path:?} takes a one_of bound")));
            };
            policy = policy.with_bound(path, bound);
        }
    }
    for field in tags(v, "non_negotiable")? {
        policy = policy.with_non_negotiable(&field);
    }
    if let Some(n) = opt_u64(v, "max_rounds")? {
        policy = policy.with_max_rounds(u32::try_from(n).map_err(|_| perr("max_rounds too large"))?);
    }
    if let Some(step) = v.get("concession_step") {
        policy = policy.with_step(decimal(step, "concession_step")?);
    }
    Ok(policy)
}

fn catalog_item(v: &TermValue, jurisdiction: &str) -> Result<IPCatalogItem, HarnessError> {
    let content_id = text(v, "content_id")?;
    let payload = match (opt_text(v, "payload")?, opt_text(v, "payload_hex")?) {
        (Some(p), None) => p.as_bytes().to_vec(),
        (None, Some(h)) => hex::decode(h).map_err(|_| perr(format!("payload_hex of {content_id} is not hex")))?,
        (None, None) => Vec::new(),
        (Some(_), Some(_)) => return Err(perr("give payload or payload_hex, not both")),
    };
    let mut item = IPCatalogItem::new(content_id, payload);
    item.ip_significant = opt_bool(v, "ip_significant")?;
    item.tags = tags(v, "tags")?;
    item.license_template = v.get("template").map(|t| terms_overlay(t, content_id, jurisdiction)).transpose()?;
    item.components = tags(v, "components")?.into_iter().collect();
    Ok(item)
}

fn agents(root: &TermValue) -> Result<Vec<AgentConfig>, HarnessError> {
    let session = session_config(root)?;
    let rules = compatibility(root)?;
    let items = list(root, "agents")?;
    if items.len() < 2 {
        return Err(perr("a scenario needs at least 2 agents"));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for a in items {
        let id = text(a, "id")?;
        if !seen.insert(id.to_owned()) {
            return Err(perr(format!("duplicate agent id {id:?}")));
        }
        let jurisdiction = match a.get("jurisdiction") {
            None => JurisdictionProfile::new("US", "common_law"),
            Some(j) => JurisdictionProfile::from_value(j).ok_or_else(|| perr(format!("bad jurisdiction for {id}")))?,
        };
        let mut config = AgentConfig::new(id, jurisdiction);
        config.initial_balance = opt_u64(a, "balance")?.unwrap_or(0);
        config.ack_required = opt_bool(a, "ack_required")?.unwrap_or(false);
        config.policy = policy(a.get("policy"), Role::Requester)?;
        config.provider_policy = policy(a.get("provider_policy"), Role::Provider)?;
        if let Some(tier) = opt_text(a, "risk_tier")? {
            let name = TierName::parse(tier).ok_or_else(|| perr(format!("unknown risk tier {tier:?}")))?;
            config.risk_tier = RiskTier::preset(name);
        }
        if a.get("significant_tags").is_some() {
            config.significant_tags = tags(a, "significant_tags")?;
        }
        if let Some(g) = a.get("generator") {
            config.generator = generator(g)?;
        }
        if let Some(c) = a.get("courtship") {
            config.courtship = Some(Courtship {
                window_ticks: opt_u64(c, "window_ticks")?.unwrap_or(1),
                royalty_weight: opt_u64(c, "royalty_weight")?.unwrap_or(0),
            });
        }
        config.compatibility = rules.clone();
        config.session = session;
        if let Some(catalog) = a.get("catalog") {
            for item in catalog.as_list().ok_or_else(|| perr("catalog must be a list"))? {
                config.ip_catalog.push(catalog_item(item, &config.jurisdiction.code)?);
            }
        }
        config.validate().map_err(|e| perr(format!("agent {id}: {e}")))?;
        out.push(config);
    }
    Ok(out)
}

fn generator(v: &TermValue) -> Result<TermGenerator, HarnessError> {
    let mut g = TermGenerator::default();
    if let Some(r) = v.get("royalty_rate") {
        g.royalty_rate = decimal(r, "royalty_rate")?;
    }
    if let Some(rules) = v.get("tag_rules") {
        for (tag, delta) in rules.as_map().ok_or_else(|| perr("tag_rules must be a map"))? {
            let delta = TermsDelta::from_value(delta).ok_or_else(|| perr(format!("bad delta for tag {tag:?}")))?;
            g.tag_rules.insert(tag.clone(), delta);
        }
    }
    Ok(g)
}

fn scripted(v: &TermValue) -> Result<Scripted, HarnessError> {
    let tick = opt_u64(v, "tick")?.unwrap_or(0);
    let kind = text(v, "type")?;
    let event = match kind {
        "request" => {
            let requester = text(v, "requester")?.to_owned();
            let provider = text(v, "provider")?.to_owned();
            let content_id = text(v, "content_id")?.to_owned();
            let session_id = opt_text(v, "session_id")?
                .map(str::to_owned)
                .unwrap_or_else(|| format!("{requester}-{provider}-{content_id}"));
            let offer = v.get("offer").map(|o| terms_overlay(o, &content_id, "US")).transpose()?;
            let upgrade = opt_text(v, "upgrade")?
                .map(|u| Upgrade::parse(u).ok_or_else(|| perr(format!("unknown upgrade {u:?}"))))
                .transpose()?;
            ScriptEvent::Request { session_id, requester, provider, content_id, offer, upgrade }
        }
        "downstream_sale" => ScriptEvent::DownstreamSale {
            seller: text(v, "seller")?.to_owned(),
            buyer: text(v, "buyer")?.to_owned(),
            content_id: text(v, "content_id")?.to_owned(),
            amount: opt_u64(v, "amount")?.ok_or_else(|| perr("downstream_sale needs an amount"))?,
        },
        "usage" => ScriptEvent::Usage {
            agent: text(v, "agent")?.to_owned(),
            content_id: text(v, "content_id")?.to_owned(),
            tags: tags(v, "tags")?,
        },
        "dispute" => {
            let kind = text(v, "claim_kind")?;
            let asserted_clause = match v.get("asserted_clause") {
                None => None,
                Some(c) => Some((
                    list(c, "path")?.iter().map(|p| p.as_str().map(str::to_owned)).collect::<Option<Vec<_>>>()
                        .ok_or_else(|| perr("clause path holds text"))?,
                    get(c, "value")?.clone(),
                )),
            };
            ScriptEvent::Dispute {
                claimant: text(v, "claimant")?.to_owned(),
                respondent: text(v, "respondent")?.to_owned(),
                content_id: text(v, "content_id")?.to_owned(),
                claim_kind: ClaimKind::parse(kind).ok_or_else(|| perr(format!("unknown claim kind {kind:?}")))?,
                asserted_terms_hash: opt_text(v, "asserted_terms_hash")?.map(str::to_owned),
                asserted_clause,
            }
        }
        other => return Err(perr(format!("unknown script event {other:?}"))),
    };
    Ok(Scripted { tick, event })
}

fn expectation(v: &TermValue) -> Result<Expectation, HarnessError> {
    let kind = text(v, "type")?;
    Ok(match kind {
        "balance_delta" => Expectation::BalanceDelta {
            agent: text(v, "agent")?.to_owned(),
            delta: get(v, "delta")?.as_i64().ok_or_else(|| perr("delta must be an integer"))?.into(),
        },
        "session_state" => Expectation::SessionState {
            agent: text(v, "agent")?.to_owned(),
            session_id: text(v, "session_id")?.to_owned(),
            state: text(v, "state")?.to_owned(),
        },
        "token_verified" => Expectation::TokenVerified { session_id: text(v, "session_id")?.to_owned() },
        "memory_log" => Expectation::MemoryLog { agent: text(v, "agent")?.to_owned(), text: text(v, "text")?.to_owned() },
        "agreement_tokens" => Expectation::AgreementTokens {
            count: opt_u64(v, "count")?.ok_or_else(|| perr("agreement_tokens needs a count"))? as usize,
        },
        "verdict" => Expectation::Verdict {
            winner: text(v, "winner")?.to_owned(),
            rationale: opt_text(v, "rationale")?.map(str::to_owned),
        },
        "revoked" => Expectation::Revoked { session_id: text(v, "session_id")?.to_owned() },
        other => return Err(perr(format!("unknown expectation {other:?}"))),
    })
}

/// Every agent and content id named by the script or expectations exists.
fn resolve(s: &Scenario) -> Result<(), HarnessError> {
    let agent = |id: &str| s.agent(id).map(|_| ()).ok_or_else(|| HarnessError::UnresolvedReference(id.to_owned()));
    let content = |owner: &str, id: &str| {
        agent(owner)?;
        s.agent(owner)
            .and_then(|a| a.item(id))
            .map(|_| ())
            .ok_or_else(|| HarnessError::UnresolvedReference(id.to_owned()))
    };
    for a in &s.agents {
        for item in &a.ip_catalog {
            for component in &item.components {
                if !s.agents.iter().any(|o| o.item(component).is_some()) {
                    return Err(HarnessError::UnresolvedReference(component.clone()));
                }
            }
        }
    }
    let mut sessions = BTreeSet::new();
    for step in &s.script {
        match &step.event {
            ScriptEvent::Request { session_id, requester, provider, content_id, .. } => {
                agent(requester)?;
                content(provider, content_id)?;
                if !sessions.insert(session_id.as_str()) {
                    return Err(perr(format!("duplicate session id {session_id:?}")));
                }
                if requester == provider {
                    return Err(perr(format!("{requester} cannot license from itself")));
                }
            }
            ScriptEvent::DownstreamSale { seller, buyer, .. } => {
                agent(seller)?;
                agent(buyer)?;
            }
            ScriptEvent::Usage { agent: a, .. } => agent(a)?,
            ScriptEvent::Dispute { claimant, respondent, .. } => {
                agent(claimant)?;
                agent(respondent)?;
            }
        }
    }
    for e in &s.expectations {
        match e {
            Expectation::BalanceDelta { agent: a, .. }
            | Expectation::SessionState { agent: a, .. }
            | Expectation::MemoryLog { agent: a, .. }
            | Expectation::Verdict { winner: a, .. } => agent(a)?,
            Expectation::TokenVerified { session_id } | Expectation::Revoked { session_id } if !sessions.contains(session_id.as_str()) => {
                return Err(HarnessError::UnresolvedReference(session_id.clone()));
            }
            _ => {}
        }
    }
    Ok(())
}
