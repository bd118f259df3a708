//! Python bindings: ledger, consensus engine, whole-run simulation and the
//! observer audit.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stair_core::export::RunExport;
use stair_core::observer::post_validate;
use stair_core::rewards::daily_block_reward as core_daily_block_reward;
use stair_core::scenario::{parse_override, ScenarioConfig};
use stair_core::sim::{run_scenario, RunOutcome};
use stair_core::{AccountId, BlockId, ConsensusState, ProtocolParams, StakeKind, Transaction};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn block_id(s: &str) -> PyResult<BlockId> {
    s.parse().map_err(err)
}

/// Consensus weight for `stake` under the thresholds `upper` (U) and `lower` (L).
#[pyfunction]
#[pyo3(signature = (stake, upper = 1000, lower = 1))]
fn validating_power(stake: u64, upper: u64, lower: u64) -> u64 {
    let params = ProtocolParams { upper_u: upper, lower_l: lower, ..ProtocolParams::default() };
    stair_core::validating_power(stake, &params)
}

/// Block reward of `day` in hundredths of a token.
#[pyfunction]
fn daily_block_reward_cents(day: u64) -> u64 {
    core_daily_block_reward(day, &ProtocolParams::default()).cents()
}

#[pyclass(name = "Ledger", unsendable)]
struct PyLedger(stair_core::Ledger);

#[pymethods]
impl PyLedger {
    #[new]
    fn new() -> Self {
        PyLedger(stair_core::Ledger::new(ProtocolParams::default()))
    }

    fn open_account(&mut self, id: u32, tokens: u64) -> PyResult<()> {
        self.0.open_account(AccountId(id), tokens).map_err(err)
    }

    /// `kind` is `"validation"` or `"transaction"`.
    fn stake(&mut self, id: u32, kind: &str, amount: u64) -> PyResult<()> {
        let kind = match kind {
            "validation" => StakeKind::Validation,
            "transaction" => StakeKind::Transaction,
            other => return Err(err(format!("unknown stake kind {other}"))),
        };
        self.0.stake_tokens(AccountId(id), kind, amount).map_err(err)
    }

    fn delegate(&mut self, from: u32, to: u32, amount: u64, lock_days: u64) -> PyResult<()> {
        self.0.delegate(AccountId(from), AccountId(to), amount, lock_days).map_err(err)
    }

    fn undelegate(&mut self, from: u32, to: u32, amount: u64) -> PyResult<()> {
        let day = self.0.current_day();
        self.0.undelegate(AccountId(from), AccountId(to), amount, day).map_err(err)
    }

    fn effective_stake(&self, id: u32) -> PyResult<u64> {
        self.0.effective_stake(AccountId(id)).map_err(err)
    }

    fn power(&self, id: u32) -> PyResult<u64> {
        self.0.power(AccountId(id)).map_err(err)
    }

    fn role(&self, id: u32) -> PyResult<String> {
        self.0.role(AccountId(id)).map(|r| r.to_string()).map_err(err)
    }

    fn advance_to_day(&mut self, day: u64) {
        self.0.advance_to_day(day)
    }

    fn digest(&self) -> String {
        self.0.digest()
    }
}

/// One node's consensus engine over participants `0..len(stakes)`.
#[pyclass(name = "Consensus", unsendable)]
struct PyConsensus(ConsensusState);

#[pymethods]
impl PyConsensus {
    #[new]
    #[pyo3(signature = (stakes, node = 0))]
    fn new(stakes: Vec<u64>, node: u32) -> PyResult<Self> {
        let params = ProtocolParams::default();
        let mut ledger = stair_core::Ledger::new(params.clone());
        let ids: Vec<AccountId> = (0..stakes.len() as u32).map(AccountId).collect();
        for (id, s) in ids.iter().zip(&stakes) {
            ledger.open_account(*id, *s).map_err(err)?;
        }
        Ok(PyConsensus(ConsensusState::new(AccountId(node), params, &ids, ledger, BTreeMap::new())))
    }

    /// Creates and inserts a block by `creator` on its top and `others`;
    /// returns the new block id.
    #[pyo3(signature = (creator, others, fees = Vec::new()))]
    fn add(&mut self, creator: u32, others: Vec<String>, fees: Vec<u64>) -> PyResult<String> {
        let creator = AccountId(creator);
        let others = others.iter().map(|o| block_id(o)).collect::<PyResult<Vec<_>>>()?;
        let top = self.0.dag().top(creator).map(|b| b.id);
        let role = self.0.role_for_parent(creator, top.as_ref());
        let txns = fees.into_iter().map(|fee| Transaction { payload: fee.to_be_bytes().to_vec(), fee }).collect();
        let block = self.0.dag().create_event(creator, role, &others, txns).map_err(err)?;
        let id = block.id;
        self.0.insert(Arc::new(block)).map_err(err)?;
        Ok(id.to_string())
    }

    fn frame_of(&self, id: &str) -> PyResult<Option<u64>> {
        Ok(self.0.frame_of(&block_id(id)?))
    }

    fn is_root(&self, id: &str) -> PyResult<bool> {
        Ok(self.0.is_root(&block_id(id)?))
    }

    fn score_of(&self, id: &str) -> PyResult<Option<u64>> {
        Ok(self.0.score_of(&block_id(id)?))
    }

    fn frames_decided(&self) -> u64 {
        self.0.frames_decided()
    }

    /// `(position, block, atropos, frame, lamport)` per finalized block.
    fn finalized(&self) -> Vec<(u64, String, String, u64, u64)> {
        self.0
            .finalized()
            .iter()
            .map(|e| (e.position, e.block.to_string(), e.atropos.to_string(), e.frame, e.lamport))
            .collect()
    }
}

#[pyclass(name = "RunResult", unsendable)]
struct PyRunResult(RunOutcome);

#[pymethods]
impl PyRunResult {
    #[getter]
    fn ok(&self) -> bool {
        self.0.report.ok()
    }

    #[getter]
    fn violations(&self) -> Vec<String> {
        self.0.report.violations.clone()
    }

    #[getter]
    fn finalized(&self) -> usize {
        self.0.report.finalized
    }

    fn report(&self) -> String {
        self.0.report.to_kv()
    }

    fn log(&self, node: u32) -> PyResult<Vec<String>> {
        let log = self.0.export.logs.get(&AccountId(node)).ok_or_else(|| err(format!("no node {node}")))?;
        Ok(log.iter().map(|e| e.block.to_string()).collect())
    }

    /// Observer audit of this run: `(clean, text)`.
    fn audit(&self) -> (bool, String) {
        let r = post_validate(&self.0.export);
        (r.is_clean(), r.to_text())
    }

    fn write_dir(&self, path: PathBuf) -> PyResult<()> {
        self.0.export.write_dir(&path).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Runs a scenario given as TOML text with `key=value` overrides.
#[pyfunction]
#[pyo3(signature = (config, overrides = Vec::new()))]
fn run(config: &str, overrides: Vec<String>) -> PyResult<PyRunResult> {
    let sets = overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let scenario = ScenarioConfig::from_toml(config, &sets).and_then(|c| c.resolve()).map_err(err)?;
    Ok(PyRunResult(run_scenario(&scenario)))
}

/// Audits an exported run directory: `(clean, text)`.
#[pyfunction]
fn audit_dir(path: PathBuf) -> PyResult<(bool, String)> {
    let export = RunExport::read_dir(&path).map_err(err)?;
    let r = post_validate(&export);
    Ok((r.is_clean(), r.to_text()))
}

#[pymodule]
fn stair(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validating_power, m)?)?;
    m.add_function(wrap_pyfunction!(daily_block_reward_cents, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(audit_dir, m)?)?;
    m.add_class::<PyLedger>()?;
    m.add_class::<PyConsensus>()?;
    m.add_class::<PyRunResult>()?;
    Ok(())
}
