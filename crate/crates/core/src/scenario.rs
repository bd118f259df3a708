//! Scenario files: TOML with a fixed key set.
//!
//! ```toml
//! nodes = ["0:1", "1:1", "2:1", "3:1000", "4:2000"]
//! faults = ["4:equivocate:0.05"]
//! k = 2
//! seed = 42
//! max_ticks = 2000
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::StakeMutation;
use crate::gossip::{Fault, SelectionMode};
use crate::ledger::{AccountId, Ledger, Role, StakeKind};
use crate::params::{FeeMode, ProtocolParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn d_k() -> usize {
    2
}
fn d_u() -> u64 {
    1000
}
fn d_l() -> u64 {
    1
}
fn d_ticks() -> u64 {
    2000
}
fn d_lat_min() -> u64 {
    1
}
fn d_lat_max() -> u64 {
    4
}
fn d_interval() -> u64 {
    100
}
fn d_prob() -> f64 {
    0.5
}
fn d_tpd() -> u64 {
    100
}
fn d_txns() -> usize {
    2
}
fn d_fee() -> u64 {
    5
}
fn d_sample() -> u64 {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// `"id:stake"` per consensus participant.
    pub nodes: Vec<String>,
    /// `"id:silent:tick"`, `"id:equivocate:rate"` or `"id:spam:txns"`.
    #[serde(default)]
    pub faults: Vec<String>,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(rename = "U", default = "d_u")]
    pub upper_u: u64,
    #[serde(rename = "L", default = "d_l")]
    pub lower_l: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_ticks")]
    pub max_ticks: u64,
    #[serde(default = "d_lat_min")]
    pub latency_min: u64,
    #[serde(default = "d_lat_max")]
    pub latency_max: u64,
    #[serde(default = "d_interval")]
    pub checkpoint_interval: u64,
    /// Chance that a node uses its creation slot in a tick.
    #[serde(default = "d_prob")]
    pub create_prob: f64,
    #[serde(default = "d_tpd")]
    pub ticks_per_day: u64,
    #[serde(default)]
    pub selection_mode: SelectionMode,
    #[serde(default)]
    pub fee_mode: FeeMode,
    /// Extra non-participant accounts, `"id:tokens"`.
    #[serde(default)]
    pub accounts: Vec<String>,
    /// `"from:to:amount:lock_days"`, applied on day 0.
    #[serde(default)]
    pub delegations: Vec<String>,
    /// `"frame:deposit:account:amount"` or `"frame:exit:account:amount"`,
    /// applied at the checkpoint of that frame.
    #[serde(default)]
    pub stake_changes: Vec<String>,
    /// Zero-stake observer ids.
    #[serde(default)]
    pub observers: Vec<u32>,
    #[serde(default = "d_txns")]
    pub max_txns_per_block: usize,
    #[serde(default = "d_fee")]
    pub max_fee: u64,
    /// Ticks between prefix checks.
    #[serde(default = "d_sample")]
    pub sample_every: u64,
}

fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Splits `key=value`; the value is read as a TOML literal, falling back
/// to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| invalid(format!("override `{s}` is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(invalid(format!("override `{s}` has an empty key")));
    }
    Ok((k.to_string(), parse_toml_value(v.trim())))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn params(&self) -> ProtocolParams {
        ProtocolParams {
            k: self.k,
            upper_u: self.upper_u,
            lower_l: self.lower_l,
            checkpoint_frame_interval: self.checkpoint_interval,
            fee_mode: self.fee_mode,
            ..ProtocolParams::default()
        }
    }

    /// Parses and validates every field.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        let params = self.params();
        params.validate().map_err(|e| invalid(e.to_string()))?;

        let nodes: Vec<(AccountId, u64)> =
            self.nodes.iter().map(|n| pair(n, "node")).collect::<Result<_, _>>()?;
        if nodes.is_empty() {
            return Err(invalid("no nodes"));
        }
        let mut ids = BTreeSet::new();
        for (id, _) in &nodes {
            if !ids.insert(*id) {
                return Err(invalid(format!("duplicate node {id}")));
            }
        }
        if self.k - 1 > nodes.len() - 1 {
            return Err(invalid(format!("k={} needs at least {} nodes, have {}", self.k, self.k, nodes.len())));
        }
        if self.latency_min < 1 || self.latency_max < self.latency_min {
            return Err(invalid("latency bounds need 1 <= latency_min <= latency_max"));
        }
        if !(self.create_prob > 0.0 && self.create_prob <= 1.0) {
            return Err(invalid("create_prob must be in (0, 1]"));
        }
        if self.ticks_per_day == 0 || self.sample_every == 0 || self.max_ticks == 0 {
            return Err(invalid("ticks_per_day, sample_every and max_ticks must be positive"));
        }

        let mut faults = BTreeMap::new();
        for f in &self.faults {
            let (id, fault) = parse_fault(f)?;
            if !ids.contains(&id) {
                return Err(invalid(format!("fault for unknown node {id}")));
            }
            if faults.insert(id, fault).is_some() {
                return Err(invalid(format!("node {id} has two faults")));
            }
        }

        let accounts: Vec<(AccountId, u64)> =
            self.accounts.iter().map(|a| pair(a, "account")).collect::<Result<_, _>>()?;
        let observers: Vec<AccountId> = self.observers.iter().map(|o| AccountId(*o)).collect();
        let mut all = ids.clone();
        for a in accounts.iter().map(|(a, _)| *a).chain(observers.iter().copied()) {
            if !all.insert(a) {
                return Err(invalid(format!("account {a} defined twice")));
            }
        }

        let mut delegations = Vec::new();
        for d in &self.delegations {
            let v = numbers(d, 4, "delegation")?;
            delegations.push((AccountId(v[0] as u32), AccountId(v[1] as u32), v[2], v[3]));
        }

        let mut stake_changes: BTreeMap<u64, Vec<StakeMutation>> = BTreeMap::new();
        for s in &self.stake_changes {
            let parts: Vec<&str> = s.split(':').collect();
            let [frame, kind, account, amount] = parts[..] else {
                return Err(invalid(format!("stake change `{s}` is not frame:kind:account:amount")));
            };
            let frame: u64 = num(frame, s)?;
            let account = AccountId(num(account, s)? as u32);
            let amount = num(amount, s)?;
            if frame == 0 || frame % self.checkpoint_interval != 0 {
                return Err(invalid(format!("stake change `{s}` is not at a checkpoint frame")));
            }
            if !all.contains(&account) {
                return Err(invalid(format!("stake change for unknown account {account}")));
            }
            let m = match kind {
                "deposit" => StakeMutation::Deposit { account, amount },
                "exit" => StakeMutation::Exit { account, amount },
                _ => return Err(invalid(format!("stake change kind `{kind}` is not deposit or exit"))),
            };
            stake_changes.entry(frame).or_default().push(m);
        }

        let scenario = Scenario {
            config: self.clone(),
            params,
            nodes,
            faults,
            accounts,
            delegations,
            stake_changes,
            observers,
        };
        let ledger = scenario.try_initial_ledger()?;
        let mut roles = BTreeSet::new();
        for (id, _) in &scenario.nodes {
            let stake = ledger.effective_stake(*id).unwrap_or(0);
            if stake < self.lower_l {
                return Err(invalid(format!("node {id} has stake {stake} below L={}", self.lower_l)));
            }
            roles.insert(ledger.role(*id).unwrap_or(Role::Observer));
        }
        if !roles.contains(&Role::User) || !roles.contains(&Role::Validator) {
            return Err(invalid("population needs at least one User and one Validator"));
        }
        Ok(scenario)
    }
}

fn num(s: &str, ctx: &str) -> Result<u64, ConfigError> {
    s.trim().parse().map_err(|_| invalid(format!("`{s}` in `{ctx}` is not a non-negative integer")))
}

fn numbers(s: &str, n: usize, what: &str) -> Result<Vec<u64>, ConfigError> {
    let v: Vec<u64> = s.split(':').map(|p| num(p, s)).collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(invalid(format!("{what} `{s}` needs {n} colon-separated fields")));
    }
    Ok(v)
}

fn pair(s: &str, what: &str) -> Result<(AccountId, u64), ConfigError> {
    let v = numbers(s, 2, what)?;
    let id = u32::try_from(v[0]).map_err(|_| invalid(format!("{what} id `{}` too large", v[0])))?;
    Ok((AccountId(id), v[1]))
}

pub fn parse_fault(s: &str) -> Result<(AccountId, Fault), ConfigError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [id, kind, param] = parts[..] else {
        return Err(invalid(format!("fault `{s}` is not id:behavior:param")));
    };
    let id = AccountId(num(id, s)? as u32);
    let fault = match kind {
        "honest" => Fault::Honest,
        "silent" | "silent_after" => Fault::SilentAfter(num(param, s)?),
        "equivocate" => {
            let rate: f64 = param.parse().map_err(|_| invalid(format!("bad rate in `{s}`")))?;
            if !(0.0..=1.0).contains(&rate) {
                return Err(invalid(format!("rate in `{s}` outside [0, 1]")));
            }
            Fault::Equivocate(rate)
        }
        "spam" => Fault::Spam(num(param, s)? as usize),
        _ => return Err(invalid(format!("unknown behavior `{kind}`"))),
    };
    Ok((id, fault))
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub params: ProtocolParams,
    pub nodes: Vec<(AccountId, u64)>,
    pub faults: BTreeMap<AccountId, Fault>,
    pub accounts: Vec<(AccountId, u64)>,
    pub delegations: Vec<(AccountId, AccountId, u64, u64)>,
    pub stake_changes: BTreeMap<u64, Vec<StakeMutation>>,
    pub observers: Vec<AccountId>,
}

impl Scenario {
    pub fn participants(&self) -> Vec<AccountId> {
        let mut p: Vec<AccountId> = self.nodes.iter().map(|(id, _)| *id).collect();
        p.sort();
        p
    }

    pub fn fault_of(&self, id: AccountId) -> Fault {
        self.faults.get(&id).copied().unwrap_or(Fault::Honest)
    }

    fn try_initial_ledger(&self) -> Result<Ledger, ConfigError> {
        let mut ledger = Ledger::new(self.params.clone());
        for (id, tokens) in self.nodes.iter().chain(&self.accounts) {
            ledger.open_account(*id, *tokens).map_err(|e| invalid(e.to_string()))?;
        }
        for (id, tokens) in &self.nodes {
            if *tokens >= self.params.epsilon {
                ledger.stake_tokens(*id, StakeKind::Validation, *tokens).map_err(|e| invalid(e.to_string()))?;
            }
        }
        for o in &self.observers {
            ledger.open_account(*o, 0).map_err(|e| invalid(e.to_string()))?;
        }
        for (from, to, amount, lock) in &self.delegations {
            ledger
                .delegate(*from, *to, *amount, *lock)
                .map_err(|e| invalid(format!("delegation {from}->{to}: {e}")))?;
        }
        Ok(ledger)
    }

    /// Day-0 ledger: node tokens staked for validation, extra accounts,
    /// observers with nothing, and the configured delegations.
    pub fn initial_ledger(&self) -> Ledger {
        self.try_initial_ledger().expect("validated at resolve")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG4: &str = r#"
nodes = ["0:1", "1:1", "2:1", "3:1000", "4:2000"]
seed = 42
"#;

    fn resolve(text: &str, sets: &[&str]) -> Result<Scenario, ConfigError> {
        let o: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
        ScenarioConfig::from_toml(text, &o)?.resolve()
    }

    #[test]
    fn defaults_and_overrides() {
        let s = resolve(FIG4, &[]).unwrap();
        assert_eq!(s.config.k, 2);
        assert_eq!(s.params.checkpoint_frame_interval, 100);
        assert_eq!(s.participants().len(), 5);
        let s = resolve(FIG4, &["max_ticks=10", "selection_mode=inverse", "faults=[\"4:silent:5\"]"]).unwrap();
        assert_eq!(s.config.max_ticks, 10);
        assert_eq!(s.config.selection_mode, SelectionMode::Inverse);
        assert_eq!(s.fault_of(AccountId(4)), Fault::SilentAfter(5));
        assert_eq!(s.fault_of(AccountId(0)), Fault::Honest);
    }

    #[test]
    fn invalid_configs() {
        assert!(resolve(FIG4, &["bogus=1"]).is_err());
        assert!(resolve(FIG4, &["k=1"]).is_err());
        assert!(resolve(FIG4, &["k=6"]).is_err());
        assert!(resolve(FIG4, &["latency_min=0"]).is_err());
        assert!(resolve(FIG4, &["max_ticks=\"many\""]).is_err());
        assert!(resolve("nodes = [\"0:1000\"]\n", &[]).is_err());
        assert!(resolve("nodes = [\"0:1\", \"1:1\"]\n", &[]).is_err());
        assert!(resolve("nodes = [\"0:0\", \"1:1000\", \"2:1\"]\n", &[]).is_err());
        assert!(resolve(FIG4, &["faults=[\"9:silent:3\"]"]).is_err());
        assert!(resolve(FIG4, &["stake_changes=[\"50:deposit:0:1000\"]"]).is_err());
    }

    #[test]
    fn ledger_setup() {
        let s = resolve(
            FIG4,
            &["accounts=[\"10:600\"]", "delegations=[\"10:3:600:30\"]", "observers=[20]", "stake_changes=[\"100:deposit:0:1000\"]"],
        )
        .unwrap();
        let l = s.initial_ledger();
        assert_eq!(l.effective_stake(AccountId(3)).unwrap(), 1600);
        assert_eq!(l.role(AccountId(20)).unwrap(), Role::Observer);
        assert_eq!(s.stake_changes[&100], vec![StakeMutation::Deposit { account: AccountId(0), amount: 1000 }]);
    }

    #[test]
    fn override_values_fall_back_to_strings() {
        assert_eq!(parse_override("k=3").unwrap().1, toml::Value::Integer(3));
        assert_eq!(parse_override("fee_mode=equal_split").unwrap().1, toml::Value::String("equal_split".into()));
        assert!(parse_override("novalue").is_err());
    }
}
