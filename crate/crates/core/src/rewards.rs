//! Saga points, block rewards, fee routing, delegator shares and burns.
//!
//! All money is [`Amount`] (hundredths of a token). Every split floors, and
//! whatever the floors leave behind is credited to the SPV so a statement
//! always balances to the cent.

use std::collections::{BTreeMap, HashSet};

use crate::ledger::{AccountId, Ledger, LedgerError};
use crate::money::Amount;
use crate::params::{BurnRewardMode, FeeMode, ProtocolParams};
use crate::xdag::{BlockId, EventBlock};

/// Per-node Saga points `α_i` with at-most-once award flags.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SagaLedger {
    points: BTreeMap<AccountId, u64>,
    awarded: HashSet<BlockId>,
}

impl SagaLedger {
    /// Awards one point to the creator of every not-yet-awarded block that
    /// has an Atropos among its other-parents. Returns the points handed out.
    pub fn award_saga_points<'a>(
        &mut self,
        atroposes: &HashSet<BlockId>,
        blocks: impl IntoIterator<Item = &'a EventBlock>,
    ) -> u64 {
        let mut n = 0;
        for b in blocks {
            if self.awarded.contains(&b.id) || !b.other_parents.iter().any(|p| atroposes.contains(p)) {
                continue;
            }
            self.awarded.insert(b.id);
            *self.points.entry(b.creator).or_insert(0) += 1;
            n += 1;
        }
        n
    }

    pub fn credit_points(&mut self, account: AccountId, points: u64) {
        *self.points.entry(account).or_insert(0) += points;
    }

    pub fn points(&self, account: AccountId) -> u64 {
        self.points.get(&account).copied().unwrap_or(0)
    }

    pub fn is_awarded(&self, id: &BlockId) -> bool {
        self.awarded.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AccountId, u64)> + '_ {
        self.points.iter().map(|(a, p)| (*a, *p))
    }

    pub fn total(&self) -> u64 {
        self.points.values().sum()
    }
}

/// `R_b(d)`: an equal share of the block-reward budget on each day of the
/// reward window, zero afterwards.
pub fn daily_block_reward(day: u64, params: &ProtocolParams) -> Amount {
    if day >= params.reward_days {
        return Amount::ZERO;
    }
    Amount::from_tokens(params.total_block_rewards).mul_div_floor(1, params.reward_days)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccountCredit {
    pub validation_reward: Amount,
    pub fees: Amount,
    pub delegation_share: Amount,
    pub commission: Amount,
    /// Destroyed stake for a burnt account, proceeds for its reporter.
    pub burn: Amount,
}

impl AccountCredit {
    /// Everything paid out of the pool or the fees.
    pub fn paid(&self) -> Amount {
        self.validation_reward + self.fees + self.delegation_share + self.commission
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BurnRecord {
    pub account: AccountId,
    pub stake: Amount,
    pub destroyed: Amount,
    pub reporter: Option<AccountId>,
    pub reporter_credit: Amount,
    pub reporter_points: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RewardStatement {
    pub day: u64,
    pub pool: Amount,
    pub fees_collected: Amount,
    pub credits: BTreeMap<AccountId, AccountCredit>,
    pub spv_credit: Amount,
    /// Pool left undistributed, carried into the next statement.
    pub remainder: Amount,
    pub burns: Vec<BurnRecord>,
}

impl RewardStatement {
    pub fn new(day: u64, pool: Amount) -> Self {
        RewardStatement { day, pool, ..Default::default() }
    }

    pub fn credit_mut(&mut self, account: AccountId) -> &mut AccountCredit {
        self.credits.entry(account).or_default()
    }

    pub fn total_paid(&self) -> Amount {
        self.credits.values().map(AccountCredit::paid).sum()
    }

    /// Credits + SPV + remainder equal pool + fees, and every burn's split
    /// adds back up to the stake it destroyed.
    pub fn conserves(&self) -> bool {
        let flows = self.total_paid() + self.spv_credit + self.remainder == self.pool + self.fees_collected;
        let burns = self.burns.iter().all(|b| b.destroyed + b.reporter_credit == b.stake);
        flows && burns
    }

    fn add_split(&mut self, split: &DelegatorSplit, column: fn(&mut AccountCredit) -> &mut Amount) {
        *column(self.credit_mut(split.validator)) += split.validator_keeps;
        self.credit_mut(split.validator).commission += split.commission;
        for (d, share) in &split.delegators {
            self.credit_mut(*d).delegation_share += *share;
        }
        self.spv_credit += split.spv_remainder;
    }

    pub fn record_burn(&mut self, burn: BurnRecord) {
        self.credit_mut(burn.account).burn += burn.destroyed;
        if let Some(r) = burn.reporter {
            if !burn.reporter_credit.is_zero() {
                self.credit_mut(r).burn += burn.reporter_credit;
            }
        }
        self.burns.push(burn);
    }
}

/// How a gross credit to one validator is shared with its delegators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelegatorSplit {
    pub validator: AccountId,
    /// Own portion, excluding the commission.
    pub validator_keeps: Amount,
    pub commission: Amount,
    pub delegators: Vec<(AccountId, Amount)>,
    pub spv_remainder: Amount,
}

impl DelegatorSplit {
    pub fn total(&self) -> Amount {
        self.validator_keeps
            + self.commission
            + self.delegators.iter().map(|(_, a)| *a).sum::<Amount>()
            + self.spv_remainder
    }
}

/// With `D` delegated in and `S` = the validator's tokens held, the
/// delegator-attributable part is `gross·D/(D+S)`. The validator takes `μ`
/// of that as commission and keeps the rest of the gross; delegators share
/// what is left pro rata.
pub fn split_with_delegators(
    gross: Amount,
    validator: AccountId,
    ledger: &Ledger,
    params: &ProtocolParams,
) -> DelegatorSplit {
    let delegators = ledger.delegators_of(validator);
    let d: u64 = delegators.iter().map(|(_, a)| a).sum();
    let s = ledger.account(validator).map(|a| a.tokens_held).unwrap_or(0);
    if d == 0 {
        return DelegatorSplit {
            validator,
            validator_keeps: gross,
            commission: Amount::ZERO,
            delegators: Vec::new(),
            spv_remainder: Amount::ZERO,
        };
    }
    let attributable = gross.mul_div_floor(d, d + s);
    let commission = params.mu_validator_commission.of(attributable);
    let net = attributable - commission;
    let shares: Vec<(AccountId, Amount)> =
        delegators.iter().map(|(acc, amt)| (*acc, net.mul_div_floor(*amt, d))).collect();
    let handed: Amount = shares.iter().map(|(_, a)| *a).sum();
    DelegatorSplit {
        validator,
        validator_keeps: gross - attributable,
        commission,
        delegators: shares,
        spv_remainder: net - handed,
    }
}

/// Shares `stmt.pool` in proportion to `α_i·w_i` over accounts with
/// validating power. An all-zero weighting leaves the pool as remainder.
pub fn distribute_validation_rewards(
    stmt: &mut RewardStatement,
    saga: &SagaLedger,
    ledger: &Ledger,
    params: &ProtocolParams,
) {
    let weights: Vec<(AccountId, u64)> = ledger
        .accounts()
        .filter(|a| !ledger.is_flagged(a.id))
        .map(|a| (a.id, saga.points(a.id) * ledger.power(a.id).unwrap_or(0)))
        .filter(|(_, w)| *w > 0)
        .collect();
    let total: u64 = weights.iter().map(|(_, w)| w).sum();
    if total == 0 {
        stmt.remainder += stmt.pool;
        return;
    }
    let mut handed = Amount::ZERO;
    for (acc, w) in weights {
        let gross = stmt.pool.mul_div_floor(w, total);
        handed += gross;
        let split = split_with_delegators(gross, acc, ledger, params);
        stmt.add_split(&split, |c| &mut c.validation_reward);
    }
    stmt.spv_credit += stmt.pool - handed;
}

/// Pays each block's fees: `φ` to the SPV, the rest to the creator side
/// (the creator, or every validating account equally under
/// [`FeeMode::EqualSplit`]), then through the delegator split.
pub fn route_transaction_fees<'a>(
    stmt: &mut RewardStatement,
    blocks: impl IntoIterator<Item = &'a EventBlock>,
    ledger: &Ledger,
    params: &ProtocolParams,
) {
    let validating: Vec<AccountId> =
        ledger.accounts().map(|a| a.id).filter(|a| ledger.power(*a).unwrap_or(0) > 0).collect();
    for b in blocks {
        let fee = Amount::from_tokens(b.fee_total());
        if fee.is_zero() {
            continue;
        }
        stmt.fees_collected += fee;
        let creator_side = params.phi_spv_commission.complement().of(fee);
        stmt.spv_credit += fee - creator_side;
        let targets = match params.fee_mode {
            FeeMode::Creator if ledger.contains(b.creator) => vec![b.creator],
            FeeMode::Creator => Vec::new(),
            FeeMode::EqualSplit => validating.clone(),
        };
        if targets.is_empty() {
            stmt.spv_credit += creator_side;
            continue;
        }
        let each = creator_side.mul_div_floor(1, targets.len() as u64);
        stmt.spv_credit += creator_side - Amount(each.0 * targets.len() as u64);
        for t in targets {
            let split = split_with_delegators(each, t, ledger, params);
            stmt.add_split(&split, |c| &mut c.fees);
        }
    }
}

/// Burns a flagged account's validation stake. A reporter is paid the
/// configured fraction of the burn, or Saga points in
/// [`BurnRewardMode::SagaPoints`].
pub fn burn_deposit(
    ledger: &mut Ledger,
    saga: &mut SagaLedger,
    account: AccountId,
    reporter: Option<AccountId>,
    params: &ProtocolParams,
) -> Result<BurnRecord, LedgerError> {
    let stake = Amount::from_tokens(ledger.burn_validation_stake(account)?);
    let (reporter_credit, reporter_points) = match (reporter, params.burn_reward_mode) {
        (None, _) => (Amount::ZERO, 0),
        (Some(_), BurnRewardMode::Deposit) => (params.reporter_fraction.of(stake), 0),
        (Some(r), BurnRewardMode::SagaPoints) => {
            saga.credit_points(r, params.points_per_finding);
            (Amount::ZERO, params.points_per_finding)
        }
    };
    Ok(BurnRecord { account, stake, destroyed: stake - reporter_credit, reporter, reporter_credit, reporter_points })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ledger::{Role, StakeKind};

    fn a(i: u32) -> AccountId {
        AccountId(i)
    }

    fn block(creator: u32, seq: u64, others: Vec<BlockId>, fee: u64) -> EventBlock {
        let txns = if fee > 0 { vec![crate::xdag::Transaction { payload: vec![seq as u8], fee }] } else { vec![] };
        EventBlock::assemble(a(creator), Role::Validator, seq, None, others, txns, seq)
    }

    fn validator_ledger(stakes: &[(u32, u64)]) -> Ledger {
        let mut l = Ledger::new(ProtocolParams::default());
        for (id, s) in stakes {
            l.open_account(a(*id), *s).unwrap();
            l.stake_tokens(a(*id), StakeKind::Validation, *s).unwrap();
        }
        l
    }

    #[test]
    fn daily_reward_window() {
        let p = ProtocolParams::default();
        assert_eq!(daily_block_reward(0, &p).to_string(), "682425.46");
        assert_eq!(daily_block_reward(1459, &p).to_string(), "682425.46");
        assert_eq!(daily_block_reward(1460, &p), Amount::ZERO);
        // Z / 1460 in exact rational arithmetic, floored to cents
        assert_eq!(daily_block_reward(0, &p).cents(), 996_341_176u128.checked_mul(100).unwrap() as u64 / 1460);
    }

    #[test]
    fn saga_award_rules() {
        let mut saga = SagaLedger::default();
        let x = block(9, 0, vec![], 0);
        let y = block(8, 0, vec![], 0);
        let children: Vec<EventBlock> = (0..3).map(|c| block(c, 1, vec![x.id], 0)).collect();
        assert_eq!(saga.award_saga_points(&HashSet::new(), &children), 0);
        let atro: HashSet<BlockId> = [x.id, y.id].into();
        assert_eq!(saga.award_saga_points(&atro, &children), 3);
        assert_eq!((saga.points(a(0)), saga.points(a(1)), saga.points(a(2))), (1, 1, 1));
        let both = block(5, 1, vec![x.id, y.id], 0);
        assert_eq!(saga.award_saga_points(&atro, [&both, &both]), 1);
        assert_eq!(saga.award_saga_points(&atro, &children), 0);
        assert_eq!(saga.total(), 4);
    }

    #[test]
    fn validation_reward_shares() {
        let p = ProtocolParams::default();
        let l = validator_ledger(&[(1, 1000)]);
        let mut saga = SagaLedger::default();
        saga.credit_points(a(1), 1);
        let mut st = RewardStatement::new(0, Amount::from_tokens(500));
        distribute_validation_rewards(&mut st, &saga, &l, &p);
        assert_eq!(st.credits[&a(1)].validation_reward, Amount::from_tokens(500));
        assert!(st.conserves());

        let l = validator_ledger(&[(1, 1000), (2, 2000)]);
        let mut saga = SagaLedger::default();
        saga.credit_points(a(1), 2);
        saga.credit_points(a(2), 1);
        let mut st = RewardStatement::new(0, Amount::from_tokens(100));
        distribute_validation_rewards(&mut st, &saga, &l, &p);
        assert_eq!(st.credits[&a(1)].validation_reward, Amount::from_tokens(50));
        assert_eq!(st.credits[&a(2)].validation_reward, Amount::from_tokens(50));

        let mut st = RewardStatement::new(0, Amount::from_tokens(100));
        distribute_validation_rewards(&mut st, &SagaLedger::default(), &l, &p);
        assert!(st.credits.is_empty());
        assert_eq!(st.remainder, Amount::from_tokens(100));
        assert!(st.conserves());
    }

    #[test]
    fn fee_routing() {
        let p = ProtocolParams::default();
        let l = validator_ledger(&[(1, 1000), (2, 1000)]);
        let mut st = RewardStatement::new(0, Amount::ZERO);
        route_transaction_fees(&mut st, [&block(1, 1, vec![], 100), &block(1, 2, vec![], 0)], &l, &p);
        assert_eq!(st.spv_credit, Amount::from_tokens(30));
        assert_eq!(st.credits[&a(1)].fees, Amount::from_tokens(70));
        assert!(st.conserves());

        let mut st = RewardStatement::new(0, Amount::ZERO);
        route_transaction_fees(&mut st, [&block(1, 1, vec![], 1)], &l, &p);
        assert_eq!(st.spv_credit.to_string(), "0.30");
        assert_eq!(st.credits[&a(1)].fees.to_string(), "0.70");

        let p = ProtocolParams { fee_mode: FeeMode::EqualSplit, ..ProtocolParams::default() };
        let mut st = RewardStatement::new(0, Amount::ZERO);
        route_transaction_fees(&mut st, [&block(1, 1, vec![], 1)], &l, &p);
        assert_eq!(st.credits[&a(1)].fees, st.credits[&a(2)].fees);
        assert_eq!(st.credits[&a(1)].fees.to_string(), "0.35");
        assert!(st.conserves());
    }

    #[test]
    fn delegator_split_examples() {
        let p = ProtocolParams::default();
        let mut l = validator_ledger(&[(1, 1000)]);
        let s = split_with_delegators(Amount::from_tokens(100), a(1), &l, &p);
        assert_eq!(s.validator_keeps, Amount::from_tokens(100));
        l.open_account(a(2), 1000).unwrap();
        l.delegate(a(2), a(1), 1000, 30).unwrap();
        let s = split_with_delegators(Amount::from_tokens(100), a(1), &l, &p);
        assert_eq!(s.delegators, vec![(a(2), "42.50".parse().unwrap())]);
        assert_eq!((s.validator_keeps + s.commission).to_string(), "57.50");

        let mut l = validator_ledger(&[(1, 1000)]);
        l.open_account(a(2), 600).unwrap();
        l.open_account(a(3), 400).unwrap();
        l.delegate(a(2), a(1), 600, 30).unwrap();
        l.delegate(a(3), a(1), 400, 30).unwrap();
        let s = split_with_delegators(Amount::from_tokens(100), a(1), &l, &p);
        let (d2, d3) = (s.delegators[0].1, s.delegators[1].1);
        assert_eq!(d2.cents() * 2, d3.cents() * 3);
        assert_eq!(s.total(), Amount::from_tokens(100));
    }

    #[test]
    fn burn_examples() {
        let p = ProtocolParams::default();
        let mut l = validator_ledger(&[(1, 5000)]);
        l.open_account(a(7), 0).unwrap();
        let mut saga = SagaLedger::default();
        assert_eq!(burn_deposit(&mut l, &mut saga, a(1), Some(a(7)), &p), Err(LedgerError::NotFlagged(a(1))));
        l.flag(a(1)).unwrap();
        let r = burn_deposit(&mut l, &mut saga, a(1), Some(a(7)), &p).unwrap();
        assert_eq!((r.destroyed, r.reporter_credit), (Amount::from_tokens(4500), Amount::from_tokens(500)));
        assert_eq!(l.account(a(1)).unwrap().validation_staked, 0);
        let mut st = RewardStatement::new(0, Amount::ZERO);
        st.record_burn(r);
        assert!(st.conserves());
        assert_eq!(st.credits[&a(7)].burn, Amount::from_tokens(500));

        let mut l = validator_ledger(&[]);
        l.open_account(a(3), 10).unwrap();
        l.flag(a(3)).unwrap();
        assert_eq!(burn_deposit(&mut l, &mut saga, a(3), None, &p).unwrap().stake, Amount::ZERO);

        let p = ProtocolParams { burn_reward_mode: BurnRewardMode::SagaPoints, ..ProtocolParams::default() };
        let mut l = validator_ledger(&[(1, 5000)]);
        l.flag(a(1)).unwrap();
        let r = burn_deposit(&mut l, &mut saga, a(1), Some(a(7)), &p).unwrap();
        assert_eq!((r.destroyed, r.reporter_points), (Amount::from_tokens(5000), 1));
        assert_eq!(saga.points(a(7)), 1);
    }

    proptest! {
        #[test]
        fn statements_conserve(
            stakes in proptest::collection::vec((1u64..5000, 0u64..20), 1..8),
            delegated in proptest::collection::vec(0u64..3000, 0..4),
            pool in 0u64..100_000_000,
            fees in proptest::collection::vec(0u64..1000, 0..10),
        ) {
            let p = ProtocolParams::default();
            let mut l = Ledger::new(p.clone());
            let mut saga = SagaLedger::default();
            for (i, (s, pts)) in stakes.iter().enumerate() {
                l.open_account(a(i as u32), *s).unwrap();
                l.stake_tokens(a(i as u32), StakeKind::Validation, *s).unwrap();
                saga.credit_points(a(i as u32), *pts);
            }
            for (j, d) in delegated.iter().enumerate() {
                let from = a(100 + j as u32);
                l.open_account(from, *d + 1).unwrap();
                let _ = l.delegate(from, a(0), *d, 30);
            }
            let blocks: Vec<EventBlock> =
                fees.iter().enumerate().map(|(i, f)| block((i % stakes.len()) as u32, i as u64, vec![], *f)).collect();
            let mut st = RewardStatement::new(3, Amount(pool));
            distribute_validation_rewards(&mut st, &saga, &l, &p);
            route_transaction_fees(&mut st, &blocks, &l, &p);
            prop_assert!(st.conserves());

            // argmax of α·w gets the largest validation credit
            let best = stakes.iter().enumerate()
                .map(|(i, (_, pts))| (pts * l.power(a(i as u32)).unwrap(), i)).max().unwrap();
            if best.0 > 0 && delegated.iter().all(|d| *d == 0) {
                let top = st.credits.values().map(|c| c.validation_reward).max().unwrap();
                prop_assert_eq!(st.credits[&a(best.1 as u32)].validation_reward, top);
            }
        }
    }
}
