//! Accounts, staking positions and the stake-to-power mapping.
//!
//! Every mutating operation validates first and mutates second, so a
//! rejected operation never leaves a partially applied change behind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::params::ProtocolParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub u32);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AccountId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(AccountId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Observer,
    User,
    Validator,
}

impl Role {
    pub fn opposite(self) -> Option<Role> {
        match self {
            Role::User => Some(Role::Validator),
            Role::Validator => Some(Role::User),
            Role::Observer => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Observer => "Observer",
            Role::User => "User",
            Role::Validator => "Validator",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Observer" => Ok(Role::Observer),
            "User" => Ok(Role::User),
            "Validator" => Ok(Role::Validator),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StakeKind {
    Transaction,
    Validation,
}

/// Validating power for a given effective stake: zero below `L`, one on
/// `[L, U)`, and whole multiples of `U` from there on.
pub fn validating_power(effective_stake: u64, params: &ProtocolParams) -> u64 {
    if effective_stake < params.lower_l {
        0
    } else if effective_stake < params.upper_u {
        1
    } else {
        params.upper_u * (effective_stake / params.upper_u)
    }
}

pub fn role_for_stake(effective_stake: u64, params: &ProtocolParams) -> Role {
    if effective_stake < params.lower_l {
        Role::Observer
    } else if effective_stake < params.upper_u {
        Role::User
    } else {
        Role::Validator
    }
}

/// Tokens leaving validation stake, withdrawable from `unlock_day` on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitLock {
    pub amount: u64,
    pub unlock_day: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    pub id: AccountId,
    pub tokens_held: u64,
    pub txn_staked: u64,
    pub validation_staked: u64,
    pub delegations_out: BTreeMap<AccountId, u64>,
    pub delegation_lock_until: BTreeMap<AccountId, u64>,
    pub stake_renewal_day: Option<u64>,
    pub exits: Vec<ExitLock>,
}

impl Account {
    fn new(id: AccountId, tokens_held: u64) -> Self {
        Account {
            id,
            tokens_held,
            txn_staked: 0,
            validation_staked: 0,
            delegations_out: BTreeMap::new(),
            delegation_lock_until: BTreeMap::new(),
            stake_renewal_day: None,
            exits: Vec::new(),
        }
    }

    pub fn delegated_out(&self) -> u64 {
        self.delegations_out.values().sum()
    }

    pub fn exiting(&self) -> u64 {
        self.exits.iter().map(|e| e.amount).sum()
    }

    /// Tokens tied up in staking, delegation or pending exits.
    pub fn committed(&self) -> u64 {
        self.txn_staked + self.validation_staked + self.delegated_out() + self.exiting()
    }

    pub fn free(&self) -> u64 {
        self.tokens_held - self.committed()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("account {0} already exists")]
    DuplicateAccount(AccountId),
    #[error("account {account}: requested {requested} but only {available} uncommitted")]
    InsufficientBalance { account: AccountId, requested: u64, available: u64 },
    #[error("amount {amount} below minimum {minimum}")]
    BelowMinimum { amount: u64, minimum: u64 },
    #[error("delegation to {target} would reach {would_be}, cap is {cap}")]
    DelegationCapExceeded { target: AccountId, cap: u64, would_be: u64 },
    #[error("lock period of {0} days is shorter than 1 day")]
    LockTooShort(u64),
    #[error("position locked until day {until_day} (today is {day})")]
    StillLocked { until_day: u64, day: u64 },
    #[error("no delegation of that size from {from} to {to}")]
    NoSuchDelegation { from: AccountId, to: AccountId },
    #[error("account {0} cannot delegate to itself")]
    SelfDelegation(AccountId),
    #[error("account {0} is not flagged for burning")]
    NotFlagged(AccountId),
}

/// One line of the ledger snapshot export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotRow {
    pub account: AccountId,
    pub tokens_held: u64,
    pub txn_staked: u64,
    pub validation_staked: u64,
    pub delegated_in: u64,
    pub role: Role,
    pub power: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ledger {
    params: ProtocolParams,
    accounts: BTreeMap<AccountId, Account>,
    delegated_in: BTreeMap<AccountId, u64>,
    current_day: u64,
    flagged: BTreeSet<AccountId>,
    burned: BTreeMap<AccountId, u64>,
}

impl Ledger {
    pub fn new(params: ProtocolParams) -> Self {
        Ledger {
            params,
            accounts: BTreeMap::new(),
            delegated_in: BTreeMap::new(),
            current_day: 0,
            flagged: BTreeSet::new(),
            burned: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn current_day(&self) -> u64 {
        self.current_day
    }

    /// Days only move forward.
    pub fn advance_to_day(&mut self, day: u64) {
        self.current_day = self.current_day.max(day);
    }

    pub fn open_account(&mut self, id: AccountId, tokens_held: u64) -> Result<(), LedgerError> {
        if self.accounts.contains_key(&id) {
            return Err(LedgerError::DuplicateAccount(id));
        }
        self.accounts.insert(id, Account::new(id, tokens_held));
        Ok(())
    }

    pub fn credit_tokens(&mut self, id: AccountId, tokens: u64) -> Result<(), LedgerError> {
        self.account_mut(id)?.tokens_held += tokens;
        Ok(())
    }

    pub fn account(&self, id: AccountId) -> Result<&Account, LedgerError> {
        self.accounts.get(&id).ok_or(LedgerError::UnknownAccount(id))
    }

    fn account_mut(&mut self, id: AccountId) -> Result<&mut Account, LedgerError> {
        self.accounts.get_mut(&id).ok_or(LedgerError::UnknownAccount(id))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn contains(&self, id: AccountId) -> bool {
        self.accounts.contains_key(&id)
    }

    pub fn delegated_in(&self, id: AccountId) -> u64 {
        self.delegated_in.get(&id).copied().unwrap_or(0)
    }

    /// Delegators of `id` with their delegated amounts, in id order.
    pub fn delegators_of(&self, id: AccountId) -> Vec<(AccountId, u64)> {
        self.accounts
            .values()
            .filter_map(|a| a.delegations_out.get(&id).map(|amt| (a.id, *amt)))
            .collect()
    }

    fn lapsed_validation(&self, account: &Account) -> u64 {
        match account.stake_renewal_day {
            Some(day) if self.current_day > day => account.validation_staked,
            _ => 0,
        }
    }

    /// Stake basis for roles and power: holdings plus delegated-in tokens,
    /// minus tokens delegated away, tokens exiting, and lapsed validation stake.
    pub fn effective_stake(&self, id: AccountId) -> Result<u64, LedgerError> {
        let a = self.account(id)?;
        let own = a
            .tokens_held
            .saturating_sub(a.delegated_out())
            .saturating_sub(a.exiting())
            .saturating_sub(self.lapsed_validation(a));
        Ok(own + self.delegated_in(id))
    }

    pub fn role(&self, id: AccountId) -> Result<Role, LedgerError> {
        Ok(role_for_stake(self.effective_stake(id)?, &self.params))
    }

    pub fn power(&self, id: AccountId) -> Result<u64, LedgerError> {
        Ok(validating_power(self.effective_stake(id)?, &self.params))
    }

    pub fn total_validating_power(&self) -> u64 {
        self.accounts.keys().map(|id| self.power(*id).unwrap_or(0)).sum()
    }

    pub fn stake_tokens(&mut self, id: AccountId, kind: StakeKind, amount: u64) -> Result<(), LedgerError> {
        let minimum = self.params.epsilon;
        if amount < minimum {
            return Err(LedgerError::BelowMinimum { amount, minimum });
        }
        let renewal = self.current_day + self.params.lambda_days;
        let a = self.account_mut(id)?;
        if amount > a.free() {
            return Err(LedgerError::InsufficientBalance { account: id, requested: amount, available: a.free() });
        }
        match kind {
            StakeKind::Transaction => a.txn_staked += amount,
            StakeKind::Validation => {
                a.validation_staked += amount;
                a.stake_renewal_day = Some(renewal);
            }
        }
        Ok(())
    }

    pub fn unstake_transaction(&mut self, id: AccountId, amount: u64) -> Result<(), LedgerError> {
        let a = self.account_mut(id)?;
        if amount > a.txn_staked {
            return Err(LedgerError::InsufficientBalance { account: id, requested: amount, available: a.txn_staked });
        }
        let left = a.txn_staked - amount;
        check_min(left, self.params.epsilon)?;
        self.account_mut(id)?.txn_staked = left;
        Ok(())
    }

    pub fn renew_validation_stake(&mut self, id: AccountId) -> Result<(), LedgerError> {
        let renewal = self.current_day + self.params.lambda_days;
        let a = self.account_mut(id)?;
        if a.validation_staked > 0 {
            a.stake_renewal_day = Some(renewal);
        }
        Ok(())
    }

    /// Moves validation stake into an exit lock of `exit_lock_days`.
    pub fn exit_validation(&mut self, id: AccountId, amount: u64) -> Result<(), LedgerError> {
        let minimum = self.params.epsilon;
        if amount < minimum {
            return Err(LedgerError::BelowMinimum { amount, minimum });
        }
        let unlock_day = self.current_day + self.params.exit_lock_days;
        let a = self.account(id)?;
        if amount > a.validation_staked {
            return Err(LedgerError::InsufficientBalance {
                account: id,
                requested: amount,
                available: a.validation_staked,
            });
        }
        check_min(a.validation_staked - amount, minimum)?;
        let a = self.account_mut(id)?;
        a.validation_staked -= amount;
        a.exits.push(ExitLock { amount, unlock_day });
        Ok(())
    }

    /// Removes unlocked exited tokens from the account's holdings.
    pub fn withdraw(&mut self, id: AccountId, amount: u64) -> Result<(), LedgerError> {
        let day = self.current_day;
        let a = self.account(id)?;
        let unlocked: u64 = a.exits.iter().filter(|e| e.unlock_day <= day).map(|e| e.amount).sum();
        if amount > unlocked {
            let until_day = a.exits.iter().map(|e| e.unlock_day).filter(|d| *d > day).min();
            return Err(match until_day {
                Some(until_day) => LedgerError::StillLocked { until_day, day },
                None => LedgerError::InsufficientBalance { account: id, requested: amount, available: unlocked },
            });
        }
        let cap = self.params.delegation_cap_multiplier * (a.tokens_held - amount);
        let incoming = self.delegated_in(id);
        if incoming > cap {
            return Err(LedgerError::DelegationCapExceeded { target: id, cap, would_be: incoming });
        }
        let a = self.account_mut(id)?;
        let mut remaining = amount;
        for exit in a.exits.iter_mut().filter(|e| e.unlock_day <= day) {
            let take = exit.amount.min(remaining);
            exit.amount -= take;
            remaining -= take;
        }
        a.exits.retain(|e| e.amount > 0);
        a.tokens_held -= amount;
        Ok(())
    }

    pub fn delegate(&mut self, from: AccountId, to: AccountId, amount: u64, lock_days: u64) -> Result<(), LedgerError> {
        let minimum = self.params.epsilon.max(1);
        if amount < minimum {
            return Err(LedgerError::BelowMinimum { amount, minimum });
        }
        if lock_days < 1 {
            return Err(LedgerError::LockTooShort(lock_days));
        }
        if from == to {
            return Err(LedgerError::SelfDelegation(from));
        }
        let target = self.account(to)?;
        let cap = self.params.delegation_cap_multiplier * target.tokens_held;
        let would_be = self.delegated_in(to) + amount;
        if would_be > cap {
            return Err(LedgerError::DelegationCapExceeded { target: to, cap, would_be });
        }
        let delegator = self.account(from)?;
        if amount > delegator.free() {
            return Err(LedgerError::InsufficientBalance {
                account: from,
                requested: amount,
                available: delegator.free(),
            });
        }
        let until = self.current_day + lock_days;
        let a = self.account_mut(from)?;
        *a.delegations_out.entry(to).or_insert(0) += amount;
        let lock = a.delegation_lock_until.entry(to).or_insert(until);
        *lock = (*lock).max(until);
        *self.delegated_in.entry(to).or_insert(0) += amount;
        Ok(())
    }

    /// Reduces a delegation. Withdrawal is allowed on the expiry day itself.
    pub fn undelegate(&mut self, from: AccountId, to: AccountId, amount: u64, current_day: u64) -> Result<(), LedgerError> {
        let minimum = self.params.epsilon.max(1);
        if amount < minimum {
            return Err(LedgerError::BelowMinimum { amount, minimum });
        }
        let a = self.account(from)?;
        let held = a.delegations_out.get(&to).copied().unwrap_or(0);
        if held == 0 || amount > held {
            return Err(LedgerError::NoSuchDelegation { from, to });
        }
        let until_day = a.delegation_lock_until.get(&to).copied().unwrap_or(0);
        if current_day < until_day {
            return Err(LedgerError::StillLocked { until_day, day: current_day });
        }
        let left = held - amount;
        check_min(left, minimum)?;
        let a = self.account_mut(from)?;
        if left == 0 {
            a.delegations_out.remove(&to);
            a.delegation_lock_until.remove(&to);
        } else {
            a.delegations_out.insert(to, left);
        }
        let incoming = self.delegated_in.get_mut(&to).expect("delegated_in tracks every delegation");
        *incoming -= amount;
        if *incoming == 0 {
            self.delegated_in.remove(&to);
        }
        Ok(())
    }

    pub fn flag(&mut self, id: AccountId) -> Result<(), LedgerError> {
        self.account(id)?;
        self.flagged.insert(id);
        Ok(())
    }

    pub fn is_flagged(&self, id: AccountId) -> bool {
        self.flagged.contains(&id)
    }

    pub fn flagged(&self) -> impl Iterator<Item = AccountId> + '_ {
        self.flagged.iter().copied()
    }

    pub fn burned(&self, id: AccountId) -> u64 {
        self.burned.get(&id).copied().unwrap_or(0)
    }

    /// Zeroes the validation stake of a flagged account and destroys those
    /// tokens. Delegations into the account are released back to their owners.
    pub fn burn_validation_stake(&mut self, id: AccountId) -> Result<u64, LedgerError> {
        if !self.is_flagged(id) {
            self.account(id)?;
            return Err(LedgerError::NotFlagged(id));
        }
        let a = self.account_mut(id)?;
        let amount = a.validation_staked;
        a.validation_staked = 0;
        a.stake_renewal_day = None;
        a.tokens_held -= amount;
        *self.burned.entry(id).or_insert(0) += amount;
        for delegator in self.accounts.values_mut() {
            delegator.delegations_out.remove(&id);
            delegator.delegation_lock_until.remove(&id);
        }
        self.delegated_in.remove(&id);
        Ok(amount)
    }

    pub fn snapshot(&self) -> Vec<SnapshotRow> {
        self.accounts
            .values()
            .map(|a| {
                let stake = self.effective_stake(a.id).unwrap_or(0);
                SnapshotRow {
                    account: a.id,
                    tokens_held: a.tokens_held,
                    txn_staked: a.txn_staked,
                    validation_staked: a.validation_staked,
                    delegated_in: self.delegated_in(a.id),
                    role: role_for_stake(stake, &self.params),
                    power: validating_power(stake, &self.params),
                }
            })
            .collect()
    }

    /// Hex SHA-256 over the snapshot export.
    pub fn digest(&self) -> String {
        let text = crate::export::write_ledger_snapshot(&self.snapshot());
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn check_min(left: u64, minimum: u64) -> Result<(), LedgerError> {
    if left != 0 && left < minimum {
        return Err(LedgerError::BelowMinimum { amount: left, minimum });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> Ledger {
        Ledger::new(ProtocolParams::default())
    }

    fn id(n: u32) -> AccountId {
        AccountId(n)
    }

    #[test]
    fn effective_stake_examples() {
        let mut l = ledger();
        l.open_account(id(1), 500).unwrap();
        l.open_account(id(2), 0).unwrap();
        l.open_account(id(3), 800).unwrap();
        l.open_account(id(4), 300).unwrap();
        l.delegate(id(4), id(3), 300, 1).unwrap();
        assert_eq!(l.effective_stake(id(1)).unwrap(), 500);
        assert_eq!(l.effective_stake(id(2)).unwrap(), 0);
        assert_eq!(l.effective_stake(id(3)).unwrap(), 1100);
        // recount over the delegation maps
        let recount: u64 = l.accounts().filter_map(|a| a.delegations_out.get(&id(3))).sum();
        assert_eq!(l.effective_stake(id(3)).unwrap(), 800 + recount);
        assert_eq!(l.effective_stake(id(4)).unwrap(), 0);
        assert_eq!(l.effective_stake(id(9)), Err(LedgerError::UnknownAccount(id(9))));
    }

    #[test]
    fn power_piecewise() {
        let p = ProtocolParams::default();
        assert_eq!(validating_power(0, &p), 0);
        assert_eq!(validating_power(999, &p), 1);
        assert_eq!(validating_power(2500, &p), 2000);
        for stake in 0..=5000u64 {
            let oracle = if stake == 0 {
                0
            } else if stake < 1000 {
                1
            } else {
                stake - stake % 1000
            };
            assert_eq!(validating_power(stake, &p), oracle, "stake {stake}");
        }
    }

    #[test]
    fn total_power_fig4_population() {
        let mut l = ledger();
        assert_eq!(l.total_validating_power(), 0);
        for (i, s) in [1u64, 1, 1, 1000, 2000].iter().enumerate() {
            l.open_account(id(i as u32), *s).unwrap();
        }
        assert_eq!(l.total_validating_power(), 3003);
    }

    #[test]
    fn stake_examples() {
        let mut l = ledger();
        l.open_account(id(1), 1000).unwrap();
        l.stake_tokens(id(1), StakeKind::Validation, 1000).unwrap();
        assert_eq!(l.account(id(1)).unwrap().validation_staked, 1000);
        assert_eq!(l.role(id(1)).unwrap(), Role::Validator);

        l.open_account(id(2), 100).unwrap();
        assert!(matches!(
            l.stake_tokens(id(2), StakeKind::Validation, 101),
            Err(LedgerError::InsufficientBalance { .. })
        ));

        l.open_account(id(3), 50).unwrap();
        l.stake_tokens(id(3), StakeKind::Transaction, 20).unwrap();
        let before = l.clone();
        assert!(l.stake_tokens(id(3), StakeKind::Validation, 31).is_err());
        assert_eq!(l, before);
        assert!(matches!(
            l.stake_tokens(id(3), StakeKind::Validation, 0),
            Err(LedgerError::BelowMinimum { .. })
        ));
    }

    #[test]
    fn delegation_cap_boundary() {
        let mut l = ledger();
        l.open_account(id(1), 1000).unwrap();
        l.open_account(id(2), 20_000).unwrap();
        l.delegate(id(2), id(1), 15_000, 1).unwrap();
        assert_eq!(l.delegated_in(id(1)), 15_000);
        let before = l.clone();
        assert!(matches!(l.delegate(id(2), id(1), 1, 1), Err(LedgerError::DelegationCapExceeded { .. })));
        assert_eq!(l, before);
        assert!(matches!(l.delegate(id(2), id(1), 0, 1), Err(LedgerError::BelowMinimum { .. })));
        assert_eq!(l.delegate(id(2), id(1), 1, 0), Err(LedgerError::LockTooShort(0)));
        assert_eq!(l.delegate(id(1), id(1), 1, 1), Err(LedgerError::SelfDelegation(id(1))));
    }

    #[test]
    fn undelegate_honours_inclusive_lock() {
        let mut l = ledger();
        l.open_account(id(1), 1000).unwrap();
        l.open_account(id(2), 500).unwrap();
        l.delegate(id(2), id(1), 200, 5).unwrap();
        assert_eq!(
            l.undelegate(id(2), id(1), 200, 4),
            Err(LedgerError::StillLocked { until_day: 5, day: 4 })
        );
        assert_eq!(l.undelegate(id(2), id(1), 300, 5), Err(LedgerError::NoSuchDelegation { from: id(2), to: id(1) }));
        l.undelegate(id(2), id(1), 200, 5).unwrap();
        assert_eq!(l.delegated_in(id(1)), 0);
        assert!(l.account(id(2)).unwrap().delegations_out.is_empty());
    }

    #[test]
    fn exit_lock_blocks_early_withdrawal() {
        let mut l = ledger();
        l.open_account(id(1), 3000).unwrap();
        l.stake_tokens(id(1), StakeKind::Validation, 3000).unwrap();
        l.exit_validation(id(1), 1000).unwrap();
        assert_eq!(l.power(id(1)).unwrap(), 2000);
        l.advance_to_day(89);
        assert_eq!(l.withdraw(id(1), 1000), Err(LedgerError::StillLocked { until_day: 90, day: 89 }));
        l.advance_to_day(90);
        l.withdraw(id(1), 1000).unwrap();
        assert_eq!(l.account(id(1)).unwrap().tokens_held, 2000);
    }

    #[test]
    fn lapsed_validation_stake_loses_power() {
        let mut l = ledger();
        l.open_account(id(1), 1500).unwrap();
        l.stake_tokens(id(1), StakeKind::Validation, 1000).unwrap();
        l.advance_to_day(90);
        assert_eq!(l.power(id(1)).unwrap(), 1000);
        l.advance_to_day(91);
        assert_eq!(l.effective_stake(id(1)).unwrap(), 500);
        l.renew_validation_stake(id(1)).unwrap();
        assert_eq!(l.power(id(1)).unwrap(), 1000);
    }

    #[test]
    fn burn_requires_flag_and_releases_delegations() {
        let mut l = ledger();
        l.open_account(id(1), 5000).unwrap();
        l.open_account(id(2), 1000).unwrap();
        l.stake_tokens(id(1), StakeKind::Validation, 5000).unwrap();
        l.delegate(id(2), id(1), 1000, 1).unwrap();
        assert_eq!(l.burn_validation_stake(id(1)), Err(LedgerError::NotFlagged(id(1))));
        l.flag(id(1)).unwrap();
        assert_eq!(l.burn_validation_stake(id(1)).unwrap(), 5000);
        assert_eq!(l.account(id(1)).unwrap().tokens_held, 0);
        assert_eq!(l.delegated_in(id(1)), 0);
        assert_eq!(l.account(id(2)).unwrap().free(), 1000);
        assert_eq!(l.burned(id(1)), 5000);
    }
}
