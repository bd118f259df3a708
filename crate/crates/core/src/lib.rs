//! Deterministic simulation of a stake-weighted, cross-typed DAG consensus
//! protocol: validating power from stake, the x-DAG of event blocks, frame
//! and root election, fame voting and final ordering, stake-aware gossip
//! with fault injection, the staking and reward model, and zero-stake
//! observers that re-verify exported runs.

pub mod consensus;
pub mod export;
pub mod gossip;
pub mod ledger;
pub mod money;
pub mod observer;
pub mod params;
pub mod rewards;
pub mod scenario;
pub mod sim;
pub mod xdag;

pub use ledger::{validating_power, AccountId, Ledger, LedgerError, Role, StakeKind};
pub use money::{Amount, Fraction};
pub use consensus::{ConsensusState, FinalEntry, StakeMutation, WeightSchedule};
pub use params::ProtocolParams;
pub use rewards::{RewardStatement, SagaLedger};
pub use xdag::{BlockId, EventBlock, InsertOutcome, Transaction, XDag, XDagError};
