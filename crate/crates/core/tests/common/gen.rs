//! Seeded generators and independent oracles.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use atcpip_core::disputes::{file_dispute, ClaimKind, DisputeClaim};
use atcpip_core::ledger::{EntryKind, Ledger, MintRequest};
use atcpip_core::negotiation::{Bound, NegotiationPolicy, Role};
use atcpip_core::payments::{PaymentMemo, RoyaltyObligation, Wallets};
use atcpip_core::terms::{
    parse, terms_hash, to_canonical_bytes, value_hash, Decimal, DisputeResolution, Expiry, LicenseTerms, ScopeTag, TermValue, Transferability, FIELDS,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const JURISDICTIONS: [&str; 6] = ["US", "GB", "DE", "FR", "JP", "BR"];
const RESTRICTIONS: [&str; 4] = ["read_only", "no_resale", "no_redistribution", "no_fine_tune"];
const REVOCATION: [&str; 2] = ["dispute_loss", "non_payment"];
const COMPLIANCE: [&str; 3] = ["gdpr", "ccpa", "hipaa"];

fn subset(rng: &mut impl Rng, pool: &[&str]) -> BTreeSet<String> {
    pool.iter().filter(|_| rng.gen_bool(0.5)).map(|s| (*s).to_owned()).collect()
}

fn word(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(1..12);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn date(rng: &mut impl Rng) -> String {
    format!("{}-{:02}-{:02}", rng.gen_range(2024..2031), rng.gen_range(1..=12), rng.gen_range(1..=28))
}

/// Valid terms with every field drawn independently.
pub fn random_terms(rng: &mut impl Rng) -> LicenseTerms {
    let mut t = LicenseTerms::new(word(rng), *JURISDICTIONS.choose(rng).unwrap());
    t.description = if rng.gen_bool(0.3) { String::new() } else { format!("{} {}", word(rng), word(rng)) };
    t.scope = [ScopeTag::Personal, ScopeTag::Commercial, ScopeTag::Sublicensable]
        .into_iter()
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    t.duration = if rng.gen_bool(0.2) { Expiry::Perpetual } else { Expiry::Until(date(rng)) };
    t.governing_law = format!("{} law", JURISDICTIONS.choose(rng).unwrap());
    t.royalty_rate = Decimal::from_units(rng.gen_range(0..=3_000));
    t.transferability = *[
        Transferability::NonTransferable,
        Transferability::Transferable,
        Transferability::TransferableWithApproval,
    ]
    .choose(rng)
    .unwrap();
    t.revocation_conditions = subset(rng, &REVOCATION);
    t.dispute_resolution = *[
        DisputeResolution::OnchainArbitration,
        DisputeResolution::OffchainArbitration,
        DisputeResolution::Court,
    ]
    .choose(rng)
    .unwrap();
    t.onchain_enforcement = rng.gen_bool(0.5);
    t.offchain_enforcement = rng.gen_bool(0.5);
    t.compliance_requirements = subset(rng, &COMPLIANCE);
    t.ip_restrictions = subset(rng, &RESTRICTIONS);
    t.chain_of_ownership = rng.gen_bool(0.5);
    t.rev_share = Decimal::from_units(rng.gen_range(0..=3_000));
    t.upfront_fee = rng.gen_range(0..=1_000_000_000);
    t
}

fn toggle(set: &mut BTreeSet<String>, pool: &[&str], rng: &mut impl Rng) {
    let tag = (*pool.choose(rng).unwrap()).to_owned();
    if !set.remove(&tag) {
        set.insert(tag);
    }
}

/// Copy of `t` differing in exactly one field, chosen uniformly from the
/// schema, and still valid.
pub fn mutate_one_field(t: &LicenseTerms, rng: &mut impl Rng) -> (String, LicenseTerms) {
    let field = FIELDS.choose(rng).unwrap().0;
    let mut m = t.clone();
    match field {
        "chain_of_ownership" => m.chain_of_ownership = !m.chain_of_ownership,
        "compliance_requirements" => toggle(&mut m.compliance_requirements, &COMPLIANCE, rng),
        "description" => m.description.push('x'),
        "dispute_resolution" => {
            m.dispute_resolution = match m.dispute_resolution {
                DisputeResolution::OnchainArbitration => DisputeResolution::Court,
                _ => DisputeResolution::OnchainArbitration,
            }
        }
        "duration" => {
            m.duration = match &m.duration {
                Expiry::Perpetual => Expiry::Until(date(rng)),
                Expiry::Until(_) => Expiry::Perpetual,
            }
        }
        "governing_law" => m.governing_law.push('!'),
        "ip_restrictions" => toggle(&mut m.ip_restrictions, &RESTRICTIONS, rng),
        "jurisdiction" => m.jurisdiction = if m.jurisdiction == "US" { "CA".into() } else { "US".into() },
        "name" => m.name.push('2'),
        "offchain_enforcement" => m.offchain_enforcement = !m.offchain_enforcement,
        "onchain_enforcement" => m.onchain_enforcement = !m.onchain_enforcement,
        "rev_share" => m.rev_share = bump(m.rev_share, rng),
        "revocation_conditions" => toggle(&mut m.revocation_conditions, &REVOCATION, rng),
        "royalty_rate" => m.royalty_rate = bump(m.royalty_rate, rng),
        "scope" => {
            let tag = *[ScopeTag::Personal, ScopeTag::Commercial, ScopeTag::Sublicensable].choose(rng).unwrap();
            if !m.scope.remove(&tag) {
                m.scope.insert(tag);
            }
        }
        "transferability" => {
            m.transferability = match m.transferability {
                Transferability::NonTransferable => Transferability::Transferable,
                _ => Transferability::NonTransferable,
            }
        }
        "upfront_fee" => m.upfront_fee ^= 1 << rng.gen_range(0..30),
        other => unreachable!("schema field {other} has no mutation"),
    }
    (field.to_owned(), m)
}

/// A different rate within [0, 0.3], so royalty + rev_share stays ≤ 1.
fn bump(d: Decimal, rng: &mut impl Rng) -> Decimal {
    let delta = rng.gen_range(1..=3_000);
    Decimal::from_units((d.units() + delta) % 3_001)
}

/// Obligations with Σshares ≤ 1.
pub fn random_obligations(rng: &mut impl Rng) -> Vec<RoyaltyObligation> {
    let n = rng.gen_range(0..6);
    let mut left = Decimal::SCALE;
    (0..n)
        .map(|i| {
            let share = rng.gen_range(0..=left);
            left -= share;
            RoyaltyObligation::new(&format!("up{i}"), Decimal::from_units(share))
        })
        .collect()
}

/// Prices skewed toward the edges where rounding matters.
pub fn random_price(rng: &mut impl Rng) -> u64 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..100),
        1 => rng.gen_range(0..10_000_000_000),
        2 => u64::MAX - rng.gen_range(0..1_000),
        _ => rng.gen(),
    }
}

/// Provider and requester policies whose bounds overlap on upfront_fee and
/// royalty_rate, plus an opening proposal inside the provider's bounds.
pub fn overlapping_policies(rng: &mut impl Rng) -> (NegotiationPolicy, NegotiationPolicy, LicenseTerms) {
    fn pair(rng: &mut impl Rng, hi: i64) -> ((i64, i64), (i64, i64)) {
        let mut cuts: Vec<i64> = (0..4).map(|_| rng.gen_range(0..=hi)).collect();
        cuts.sort();
        // The overlap is always [a, b]: staggered either way, or nested.
        let (lo, a, b, top) = (cuts[0], cuts[1], cuts[2], cuts[3]);
        match rng.gen_range(0..4) {
            0 => ((a, top), (lo, b)),
            1 => ((lo, b), (a, top)),
            2 => ((lo, top), (a, b)),
            _ => ((a, b), (lo, top)),
        }
    }
    let (pf, rf) = pair(rng, 200_000_000);
    let (pr, rr) = pair(rng, 5_000);
    let ps = Decimal::from_units(rng.gen_range(1..=Decimal::SCALE));
    let rs = Decimal::from_units(rng.gen_range(1..=Decimal::SCALE));
    let (pm, rm) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
    let provider = NegotiationPolicy::open(Role::Provider)
        .with_bound("upfront_fee", Bound::Integer { min: pf.0, max: pf.1 })
        .with_bound("royalty_rate", Bound::Decimal { min: Decimal::from_units(pr.0), max: Decimal::from_units(pr.1) })
        .with_max_rounds(pm)
        .with_step(ps);
    let requester = NegotiationPolicy::open(Role::Requester)
        .with_bound("upfront_fee", Bound::Integer { min: rf.0, max: rf.1 })
        .with_bound("royalty_rate", Bound::Decimal { min: Decimal::from_units(rr.0), max: Decimal::from_units(rr.1) })
        .with_max_rounds(rm)
        .with_step(rs);
    let mut initial = random_terms(rng);
    initial.rev_share = Decimal::ZERO;
    initial.upfront_fee = rng.gen_range(pf.0..=pf.1) as u64;
    initial.royalty_rate = Decimal::from_units(rng.gen_range(pr.0..=pr.1));
    (provider, requester, initial)
}

pub fn within(bound: &Bound, value: i64) -> bool {
    match bound {
        Bound::Integer { min, max } => *min <= value && value <= *max,
        Bound::Decimal { min, max } => min.units() <= value && value <= max.units(),
        Bound::OneOf(_) => false,
    }
}

/// A session with 1-4 drafts, an agreement token, and a filed
/// terms_misrepresentation claim with randomized assertions.
pub struct History {
    pub ledger: Ledger,
    pub claim: DisputeClaim,
    pub dispute_id: String,
}

pub fn random_history(rng: &mut impl Rng) -> History {
    let mut ledger = Ledger::new();
    ledger.register_agent("A", b"a").unwrap();
    ledger.register_agent("B", b"b").unwrap();
    let mut records = vec![random_terms(rng)];
    for _ in 1..rng.gen_range(1..=4) {
        let last = records.last().unwrap();
        records.push(mutate_one_field(last, rng).1);
    }
    for (i, t) in records.iter().enumerate() {
        ledger.mint_draft("s", i as u32 + 1, "B", t).unwrap();
    }
    let mut final_terms = records.last().unwrap().clone();
    if rng.gen_bool(0.3) {
        final_terms = mutate_one_field(&final_terms, rng).1;
    }
    final_terms.duration = Expiry::Perpetual;
    let token = ledger.mint_agreement(&MintRequest::new("A", "B", final_terms.clone()).with_session("s")).unwrap();

    let (claimant, respondent) = if rng.gen_bool(0.5) { ("A", "B") } else { ("B", "A") };
    let mut claim = DisputeClaim::new(claimant, respondent, token.license_id(), ClaimKind::TermsMisrepresentation);
    let mut everything = records.clone();
    everything.push(final_terms.clone());
    claim.asserted_clause = match rng.gen_range(0..3) {
        0 => None,
        _ => {
            let field = FIELDS.choose(rng).unwrap().0;
            let source = if rng.gen_bool(0.6) { everything.choose(rng).unwrap().clone() } else { random_terms(rng) };
            let value = source.to_value().get(field).cloned().unwrap();
            let path = match value.as_list() {
                Some(tags) if !tags.is_empty() && rng.gen_bool(0.5) => {
                    let tag = tags.choose(rng).unwrap().as_str().unwrap().to_owned();
                    (vec![field.to_owned(), tag], TermValue::Bool(rng.gen_bool(0.8)))
                }
                _ => (vec![field.to_owned()], value),
            };
            Some(path)
        }
    };
    claim.asserted_terms_hash = match rng.gen_range(0..4) {
        0 => None,
        1 => Some(terms_hash(&final_terms).unwrap()),
        2 => Some(terms_hash(everything.choose(rng).unwrap()).unwrap()),
        _ => Some("ab".repeat(32)),
    };
    let dispute_id = file_dispute(&mut ledger, &claim).unwrap();
    History { ledger, claim, dispute_id }
}

/// Brute force over every draft and agreement payload of the session, read
/// straight from the raw ledger entries.
pub fn misrepresentation_oracle(ledger: &Ledger, claim: &DisputeClaim) -> String {
    let session = ledger.token(&claim.token_license_id).unwrap().session_id.unwrap();
    let mut on_record = Vec::new();
    let mut final_hash = None;
    for e in ledger.entries() {
        if e.payload.get_str("session_id") != Some(session.as_str()) {
            continue;
        }
        let (EntryKind::DraftToken | EntryKind::AgreementToken) = e.kind else {
            continue;
        };
        let terms = LicenseTerms::from_value(e.payload.get("terms").unwrap()).unwrap();
        if e.kind == EntryKind::AgreementToken {
            final_hash = Some(terms_hash(&terms).unwrap());
        }
        on_record.push(terms.to_value());
    }
    let matches = |value: &TermValue, path: &[String], expected: &TermValue| {
        let field = value.get(&path[0]);
        match path.len() {
            1 => field == Some(expected),
            _ => {
                let present = field
                    .and_then(TermValue::as_list)
                    .is_some_and(|l| l.contains(&TermValue::from(path[1].as_str())));
                expected == &TermValue::Bool(present)
            }
        }
    };
    if let Some((path, value)) = &claim.asserted_clause {
        if !on_record.iter().any(|r| matches(r, path, value)) {
            return claim.respondent.clone();
        }
    }
    match &claim.asserted_terms_hash {
        Some(h) if Some(h) != final_hash.as_ref() => claim.claimant.clone(),
        _ => claim.respondent.clone(),
    }
}

/// A ledger with drafts, agreements, and payments in random order.
pub fn busy_ledger(r: &mut impl Rng) -> Ledger {
    let mut ledger = Ledger::new();
    ledger.register_agent("A", b"a").unwrap();
    ledger.register_agent("B", b"b").unwrap();
    let mut wallets = Wallets::new();
    wallets.open("A", u64::MAX / 2);
    wallets.open("B", 0);
    for i in 0..r.gen_range(1..8) {
        let session = format!("s{i}");
        let mut t = random_terms(r);
        t.duration = Expiry::Perpetual;
        if r.gen_bool(0.5) {
            ledger.mint_draft(&session, 1, "B", &t).unwrap();
        }
        if r.gen_bool(0.5) {
            let memo = PaymentMemo::new("upfront_fee").session(&session);
            wallets.transfer(&mut ledger, "A", "B", t.upfront_fee, &memo).unwrap();
        }
        ledger.mint_agreement(&MintRequest::new("A", "B", t).with_session(&session)).unwrap();
    }
    ledger
}

/// One modification to one exported entry, re-encoded canonically.
pub fn tamper(bytes: &[u8], r: &mut impl Rng) -> Vec<u8> {
    let mut list = match parse(bytes).unwrap() {
        TermValue::List(l) => l,
        _ => unreachable!(),
    };
    let i = r.gen_range(0..list.len());
    let entry = list[i].as_map_mut().unwrap();
    let flip_hex = |s: &str, r: &mut dyn rand::RngCore| {
        let mut chars: Vec<char> = s.chars().collect();
        let k = r.gen_range(0..chars.len());
        chars[k] = if chars[k] == '0' { '1' } else { '0' };
        chars.into_iter().collect::<String>()
    };
    match r.gen_range(0..6) {
        0 => {
            let h = entry["entry_hash"].as_str().unwrap().to_owned();
            entry.insert("entry_hash".into(), flip_hex(&h, r).into());
        }
        1 => {
            let h = entry["payload_hash"].as_str().unwrap().to_owned();
            entry.insert("payload_hash".into(), flip_hex(&h, r).into());
        }
        2 => {
            let h = entry["height"].as_u64().unwrap();
            entry.insert("height".into(), (h + r.gen_range(1..5)).into());
        }
        3 => {
            let payload = entry.get_mut("payload").unwrap().as_map_mut().unwrap();
            payload.insert("injected".into(), TermValue::Integer(r.gen()));
        }
        4 => {
            let payload = entry.get_mut("payload").unwrap().as_map_mut().unwrap();
            let keys: Vec<String> = payload.keys().cloned().collect();
            let key = keys.choose(r).unwrap().clone();
            let replacement = match &payload[&key] {
                TermValue::Text(s) => TermValue::Text(format!("{s}~")),
                TermValue::Integer(n) => TermValue::Integer(n.wrapping_add(1)),
                TermValue::Bool(b) => TermValue::Bool(!b),
                _ => TermValue::Text("replaced".into()),
            };
            payload.insert(key, replacement);
        }
        _ => {
            // Rewrite the payload and its hash consistently; the link must still break.
            let payload = entry.get_mut("payload").unwrap();
            payload.as_map_mut().unwrap().insert("injected".into(), TermValue::Bool(true));
            let hash = value_hash(payload);
            entry.insert("payload_hash".into(), hash.into());
        }
    }
    to_canonical_bytes(&TermValue::List(list))
}
