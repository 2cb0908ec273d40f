//! Simulated wallets, transfers, and royalty split computation.
//!
//! Amounts are integer micro-credits (1 credit = 1_000_000).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ledger::{AgreementToken, EntryKind, Ledger, LedgerEntry, LedgerError};
use crate::terms::{Decimal, TermValue};

pub const MICRO_PER_CREDIT: u64 = 1_000_000;

/// Purpose tag of the payments that settle a license's upfront fee.
pub const UPFRONT_PURPOSE: &str = "upfront_fee";
/// Purpose tag of rev-share payouts on downstream sales.
pub const REV_SHARE_PURPOSE: &str = "rev_share";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PaymentError {
    #[error("{account} holds {balance}, needs {needed}")]
    InsufficientFunds { account: String, balance: u64, needed: u64 },
    #[error("unknown account {0:?}")]
    UnknownAccount(String),
    #[error("obligation shares sum to {0}, above 1")]
    OverSubscribed(Decimal),
    #[error("share {0} outside [0,1]")]
    InvalidShare(Decimal),
    #[error("account {0:?} would overflow")]
    Overflow(String),
    #[error("settlement aborted at line {0}")]
    Aborted(usize),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoyaltyObligation {
    pub beneficiary: String,
    pub share: Decimal,
    pub source_license_id: Option<String>,
}

impl RoyaltyObligation {
    pub fn new(beneficiary: &str, share: Decimal) -> Self {
        RoyaltyObligation { beneficiary: beneficiary.to_owned(), share, source_license_id: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub price: u64,
    /// Provider first, then beneficiaries in obligation order.
    pub lines: Vec<(String, u64)>,
    pub residual_recipient: String,
}

impl SplitPlan {
    pub fn single(provider: &str, price: u64) -> Self {
        SplitPlan { price, lines: vec![(provider.to_owned(), price)], residual_recipient: provider.to_owned() }
    }

    pub fn amount_for(&self, agent_id: &str) -> u64 {
        self.lines.iter().filter(|(a, _)| a == agent_id).map(|(_, n)| n).sum()
    }

    pub fn to_value(&self) -> TermValue {
        TermValue::from_pairs([
            (
                "lines",
                TermValue::List(
                    self.lines
                        .iter()
                        .map(|(a, n)| {
                            TermValue::from_pairs([("agent_id", TermValue::from(a.as_str())), ("amount", (*n).into())])
                        })
                        .collect(),
                ),
            ),
            ("price", self.price.into()),
            ("residual_recipient", self.residual_recipient.as_str().into()),
        ])
    }

    pub fn from_value(value: &TermValue) -> Option<Self> {
        let lines = value
            .get("lines")?
            .as_list()?
            .iter()
            .map(|l| Some((l.get_str("agent_id")?.to_owned(), l.get("amount")?.as_u64()?)))
            .collect::<Option<Vec<_>>>()?;
        let plan = SplitPlan {
            price: value.get("price")?.as_u64()?,
            lines,
            residual_recipient: value.get_str("residual_recipient")?.to_owned(),
        };
        let total: u128 = plan.lines.iter().map(|(_, n)| u128::from(*n)).sum();
        (total == u128::from(plan.price)).then_some(plan)
    }
}

/// Floor share per beneficiary; the provider keeps the remainder.
pub fn compute_split(
    price: u64,
    provider: &str,
    obligations: &[RoyaltyObligation],
) -> Result<SplitPlan, PaymentError> {
    let mut total_share = 0i64;
    for o in obligations {
        if !o.share.is_fraction() {
            return Err(PaymentError::InvalidShare(o.share));
        }
        total_share += o.share.units();
    }
    if total_share > Decimal::SCALE {
        return Err(PaymentError::OverSubscribed(Decimal::from_units(total_share)));
    }
    let mut lines = Vec::with_capacity(obligations.len() + 1);
    let mut distributed = 0u64;
    for o in obligations {
        let amount = u128::from(price) * o.share.units() as u128 / Decimal::SCALE as u128;
        // total_share ≤ 1 keeps every amount and their sum within price
        let amount = amount as u64;
        distributed += amount;
        lines.push((o.beneficiary.clone(), amount));
    }
    lines.insert(0, (provider.to_owned(), price - distributed));
    Ok(SplitPlan { price, lines, residual_recipient: provider.to_owned() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObligationEvent {
    Sublicense,
    DownstreamSale,
}

/// Royalty (sublicense) or rev-share (downstream sale) owed to each ancestor's issuer.
pub fn aggregate_obligations(
    lineage: &[AgreementToken],
    event: ObligationEvent,
) -> Result<Vec<RoyaltyObligation>, PaymentError> {
    let obligations: Vec<_> = lineage
        .iter()
        .filter_map(|token| {
            let share = match event {
                ObligationEvent::Sublicense => token.terms.royalty_rate,
                ObligationEvent::DownstreamSale => token.terms.rev_share,
            };
            (share > Decimal::ZERO).then(|| RoyaltyObligation {
                beneficiary: token.metadata.issuer_id.clone(),
                share,
                source_license_id: Some(token.license_id().to_owned()),
            })
        })
        .collect();
    let total: i64 = obligations.iter().map(|o| o.share.units()).sum();
    if total > Decimal::SCALE {
        return Err(PaymentError::OverSubscribed(Decimal::from_units(total)));
    }
    Ok(obligations)
}

/// Context recorded alongside each payment entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PaymentMemo {
    pub purpose: String,
    pub session_id: Option<String>,
    pub license_id: Option<String>,
}

impl PaymentMemo {
    pub fn new(purpose: &str) -> Self {
        PaymentMemo { purpose: purpose.to_owned(), ..Default::default() }
    }

    pub fn session(mut self, session_id: &str) -> Self {
        self.session_id = Some(session_id.to_owned());
        self
    }

    fn payload(&self, from: &str, to: &str, amount: u64) -> TermValue {
        let mut m = BTreeMap::new();
        m.insert("amount".to_owned(), amount.into());
        m.insert("from".to_owned(), from.into());
        m.insert("to".to_owned(), to.into());
        m.insert("purpose".to_owned(), self.purpose.as_str().into());
        if let Some(s) = &self.session_id {
            m.insert("session_id".to_owned(), s.as_str().into());
        }
        if let Some(l) = &self.license_id {
            m.insert("license_id".to_owned(), l.as_str().into());
        }
        TermValue::Map(m)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Wallets {
    balances: BTreeMap<String, u64>,
}

impl Wallets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, agent_id: &str, balance: u64) {
        self.balances.insert(agent_id.to_owned(), balance);
    }

    pub fn balance(&self, agent_id: &str) -> Option<u64> {
        self.balances.get(agent_id).copied()
    }

    pub fn balances(&self) -> &BTreeMap<String, u64> {
        &self.balances
    }

    pub fn total_supply(&self) -> u128 {
        self.balances.values().map(|b| u128::from(*b)).sum()
    }

    fn apply(&mut self, from: &str, to: &str, amount: u64) -> Result<(), PaymentError> {
        let balance = self.balance(from).ok_or_else(|| PaymentError::UnknownAccount(from.to_owned()))?;
        let to_balance = self.balance(to).ok_or_else(|| PaymentError::UnknownAccount(to.to_owned()))?;
        if balance < amount {
            return Err(PaymentError::InsufficientFunds { account: from.to_owned(), balance, needed: amount });
        }
        if from != to {
            to_balance.checked_add(amount).ok_or_else(|| PaymentError::Overflow(to.to_owned()))?;
            self.balances.insert(from.to_owned(), balance - amount);
            *self.balances.get_mut(to).expect("checked") += amount;
        }
        Ok(())
    }

    /// Moves `amount` and appends a payment entry. Zero amounts are recorded too.
    pub fn transfer<'l>(
        &mut self,
        ledger: &'l mut Ledger,
        from: &str,
        to: &str,
        amount: u64,
        memo: &PaymentMemo,
    ) -> Result<&'l LedgerEntry, PaymentError> {
        let mut staged = self.clone();
        staged.apply(from, to, amount)?;
        let entry = ledger.append(EntryKind::Payment, memo.payload(from, to, amount))?;
        *self = staged;
        Ok(entry)
    }

    /// One transfer per plan line from `payer`, all or none.
    pub fn settle(
        &mut self,
        ledger: &mut Ledger,
        plan: &SplitPlan,
        payer: &str,
        memo: &PaymentMemo,
    ) -> Result<Vec<LedgerEntry>, PaymentError> {
        self.settle_with(ledger, plan, payer, memo, |_| Ok(()))
    }

    fn settle_with(
        &mut self,
        ledger: &mut Ledger,
        plan: &SplitPlan,
        payer: &str,
        memo: &PaymentMemo,
        mut before_line: impl FnMut(usize) -> Result<(), PaymentError>,
    ) -> Result<Vec<LedgerEntry>, PaymentError> {
        let balance = self.balance(payer).ok_or_else(|| PaymentError::UnknownAccount(payer.to_owned()))?;
        if balance < plan.price {
            return Err(PaymentError::InsufficientFunds { account: payer.to_owned(), balance, needed: plan.price });
        }
        let mut staged = self.clone();
        let mut staged_ledger = ledger.clone();
        let mut entries = Vec::with_capacity(plan.lines.len());
        for (i, (to, amount)) in plan.lines.iter().enumerate() {
            before_line(i)?;
            staged.apply(payer, to, *amount)?;
            entries.push(staged_ledger.append(EntryKind::Payment, memo.payload(payer, to, *amount))?.clone());
        }
        *self = staged;
        *ledger = staged_ledger;
        Ok(entries)
    }
}
