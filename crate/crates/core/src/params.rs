use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Fraction;

/// How the creator-side share of transaction fees is paid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeeMode {
    /// Fees go to the creator of the block that carried them.
    #[default]
    Creator,
    /// Fees are pooled and split equally across all validating nodes.
    EqualSplit,
}

/// What an observer receives for reporting a burnable fork.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BurnRewardMode {
    /// A fraction of the burnt deposit.
    #[default]
    Deposit,
    /// Saga points instead of tokens.
    SagaPoints,
}

/// Network-wide protocol constants.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Validator threshold `U`.
    pub upper_u: u64,
    /// User threshold `L`.
    pub lower_l: u64,
    /// References per event block, self-parent included.
    pub k: usize,
    /// Minimum non-zero staking position.
    pub epsilon: u64,
    pub lambda_days: u64,
    pub checkpoint_frame_interval: u64,
    pub exit_lock_days: u64,
    pub total_supply: u64,
    pub total_block_rewards: u64,
    pub reward_days: u64,
    pub phi_spv_commission: Fraction,
    pub mu_validator_commission: Fraction,
    pub delegation_cap_multiplier: u64,
    /// Share of a burnt deposit paid to the first reporter.
    pub reporter_fraction: Fraction,
    pub burn_reward_mode: BurnRewardMode,
    /// Saga points credited per non-burnable audit finding.
    pub points_per_finding: u64,
    pub fee_mode: FeeMode,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            upper_u: 1000,
            lower_l: 1,
            k: 2,
            epsilon: 1,
            lambda_days: 90,
            checkpoint_frame_interval: 100,
            exit_lock_days: 90,
            total_supply: 3_175_000_000,
            total_block_rewards: 996_341_176,
            reward_days: 1460,
            phi_spv_commission: Fraction::from_bps(3000).unwrap(),
            mu_validator_commission: Fraction::from_bps(1500).unwrap(),
            delegation_cap_multiplier: 15,
            reporter_fraction: Fraction::from_bps(1000).unwrap(),
            burn_reward_mode: BurnRewardMode::Deposit,
            points_per_finding: 1,
            fee_mode: FeeMode::Creator,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("thresholds must satisfy 0 < L <= U (got L={lower}, U={upper})")]
    Thresholds { lower: u64, upper: u64 },
    #[error("k must be at least 2 (got {0})")]
    RefCount(usize),
    #[error("`{0}` must be positive")]
    NonPositive(&'static str),
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.lower_l == 0 || self.lower_l > self.upper_u {
            return Err(ParamsError::Thresholds { lower: self.lower_l, upper: self.upper_u });
        }
        if self.k < 2 {
            return Err(ParamsError::RefCount(self.k));
        }
        let counts = [
            ("epsilon", self.epsilon),
            ("lambda_days", self.lambda_days),
            ("checkpoint_frame_interval", self.checkpoint_frame_interval),
            ("exit_lock_days", self.exit_lock_days),
            ("total_supply", self.total_supply),
            ("reward_days", self.reward_days),
            ("delegation_cap_multiplier", self.delegation_cap_multiplier),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ParamsError::NonPositive(name));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = ProtocolParams::default();
        p.validate().unwrap();
        assert_eq!(p.phi_spv_commission.bps(), 3000);
        assert_eq!(p.mu_validator_commission.bps(), 1500);
    }

    #[test]
    fn rejects_bad_thresholds() {
        let p = ProtocolParams { lower_l: 0, ..Default::default() };
        assert!(matches!(p.validate(), Err(ParamsError::Thresholds { .. })));
        let p = ProtocolParams { lower_l: 1001, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ProtocolParams { k: 1, ..Default::default() };
        assert_eq!(p.validate(), Err(ParamsError::RefCount(1)));
    }
}
