//! Tab-separated export files. Every file starts with a `#` header line;
//! `-` marks an absent field.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::consensus::{FinalEntry, WeightSchedule};
use crate::ledger::{AccountId, Role, SnapshotRow};
use crate::money::Amount;
use crate::params::ProtocolParams;
use crate::rewards::{AccountCredit, RewardStatement};
use crate::xdag::{payload_digest, BlockId, EventBlock};

pub const DAG_FILE: &str = "dag.tsv";
pub const ROOTS_FILE: &str = "roots.tsv";
pub const WEIGHTS_FILE: &str = "weights.tsv";
pub const REWARDS_FILE: &str = "rewards.tsv";
pub const LEDGER_FILE: &str = "ledger.tsv";
pub const PARAMS_FILE: &str = "params.toml";
pub const REPORT_FILE: &str = "report.txt";
pub const FINALITY_DIR: &str = "finality";

const DAG_HEADER: &str = "#id\tcreator\tseq\tself_parent\tother_parents\tlamport_ts\tfee_total\trole\tpayload";
const FINALITY_HEADER: &str = "#position\tblock_id\tatropos_id\tframe\tlamport_ts";
const ROOTS_HEADER: &str = "#frame\troot_id\tcreator\tweight\tscore";
const WEIGHTS_HEADER: &str = "#from_frame\taccount\tpower";
const REWARDS_HEADER: &str = "#day\taccount\tvalidation_reward\tfees\tdelegation_share\tcommission\tburn";
const LEDGER_HEADER: &str = "#account\ttokens_held\ttxn_staked\tvalidation_staked\tdelegated_in\trole\tpower";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExportError {
    #[error("{file}: {msg}")]
    Io { file: String, msg: String },
    #[error("{file}:{line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
}

fn malformed(file: &str, line: usize, msg: impl Into<String>) -> ExportError {
    ExportError::Malformed { file: file.to_string(), line, msg: msg.into() }
}

/// One `dag.tsv` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DagRow {
    pub id: BlockId,
    pub creator: AccountId,
    pub seq: u64,
    pub self_parent: Option<BlockId>,
    pub other_parents: Vec<BlockId>,
    pub lamport_ts: u64,
    pub fee_total: u64,
    pub role: Role,
    pub payload: [u8; 32],
}

impl DagRow {
    pub fn from_block(b: &EventBlock) -> Self {
        DagRow {
            id: b.id,
            creator: b.creator,
            seq: b.seq,
            self_parent: b.self_parent,
            other_parents: b.other_parents.clone(),
            lamport_ts: b.lamport_ts,
            fee_total: b.fee_total(),
            role: b.creator_role,
            payload: payload_digest(&b.transactions),
        }
    }

    pub fn parents(&self) -> impl Iterator<Item = &BlockId> {
        self.self_parent.iter().chain(self.other_parents.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootRow {
    pub frame: u64,
    pub id: BlockId,
    pub creator: AccountId,
    pub weight: u64,
    pub score: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightRow {
    pub from_frame: u64,
    pub account: AccountId,
    pub power: u64,
}

pub fn weight_rows(schedule: &WeightSchedule) -> Vec<WeightRow> {
    schedule
        .epochs()
        .iter()
        .flat_map(|e| {
            e.powers.iter().map(|(a, p)| WeightRow { from_frame: e.first_frame, account: *a, power: *p })
        })
        .collect()
}

/// Per-frame totals and powers grouped back into epochs.
pub fn epochs_from_rows(rows: &[WeightRow]) -> BTreeMap<u64, BTreeMap<AccountId, u64>> {
    let mut out: BTreeMap<u64, BTreeMap<AccountId, u64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.from_frame).or_default().insert(r.account, r.power);
    }
    out
}

pub fn write_ledger_snapshot(rows: &[SnapshotRow]) -> String {
    let mut out = format!("{LEDGER_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.account, r.tokens_held, r.txn_staked, r.validation_staked, r.delegated_in, r.role, r.power
        )
        .unwrap();
    }
    out
}

fn opt_id(id: &Option<BlockId>) -> String {
    id.map_or_else(|| "-".to_string(), |i| i.to_string())
}

pub fn write_dag(rows: &[DagRow]) -> String {
    let mut out = format!("{DAG_HEADER}\n");
    for r in rows {
        let others = if r.other_parents.is_empty() {
            "-".to_string()
        } else {
            r.other_parents.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
        };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.creator,
            r.seq,
            opt_id(&r.self_parent),
            others,
            r.lamport_ts,
            r.fee_total,
            r.role,
            hex::encode(r.payload)
        )
        .unwrap();
    }
    out
}

pub fn write_finality(log: &[FinalEntry]) -> String {
    let mut out = format!("{FINALITY_HEADER}\n");
    for e in log {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.position, e.block, e.atropos, e.frame, e.lamport).unwrap();
    }
    out
}

pub fn write_roots(rows: &[RootRow]) -> String {
    let mut out = format!("{ROOTS_HEADER}\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.frame, r.id, r.creator, r.weight, r.score).unwrap();
    }
    out
}

pub fn write_weights(rows: &[WeightRow]) -> String {
    let mut out = format!("{WEIGHTS_HEADER}\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}", r.from_frame, r.account, r.power).unwrap();
    }
    out
}

/// Each statement is a `#statement` line (day, pool, fees, remainder),
/// one line per credited account and one `SPV` line.
pub fn write_rewards(statements: &[RewardStatement]) -> String {
    let mut out = format!("{REWARDS_HEADER}\n");
    for s in statements {
        writeln!(out, "#statement\t{}\t{}\t{}\t{}", s.day, s.pool, s.fees_collected, s.remainder).unwrap();
        for (a, c) in &s.credits {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.day, a, c.validation_reward, c.fees, c.delegation_share, c.commission, c.burn
            )
            .unwrap();
        }
        writeln!(out, "{}\tSPV\t0.00\t{}\t0.00\t0.00\t0.00", s.day, s.spv_credit).unwrap();
    }
    out
}

/// Data lines with their 1-based line numbers, after checking the header.
fn data_lines<'a>(file: &str, text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, ExportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(malformed(file, 1, format!("expected header `{header}`"))),
    }
    let width = header.split('\t').count();
    let mut out = Vec::new();
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        let cols: Vec<&str> = l.split('\t').collect();
        if cols.len() != width && !l.starts_with('#') {
            return Err(malformed(file, i + 1, format!("expected {width} columns, found {}", cols.len())));
        }
        out.push((i + 1, cols));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(file: &str, line: usize, name: &str, s: &str) -> Result<T, ExportError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| malformed(file, line, format!("bad {name} `{s}`: {e}")))
}

fn parse_opt_id(file: &str, line: usize, s: &str) -> Result<Option<BlockId>, ExportError> {
    if s == "-" {
        Ok(None)
    } else {
        field(file, line, "block id", s).map(Some)
    }
}

pub fn parse_dag(text: &str) -> Result<Vec<DagRow>, ExportError> {
    let f = DAG_FILE;
    data_lines(f, text, DAG_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            let other_parents = if c[4] == "-" {
                Vec::new()
            } else {
                c[4].split(',').map(|p| field(f, n, "block id", p)).collect::<Result<_, _>>()?
            };
            let payload: [u8; 32] = hex::decode(c[8])
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| malformed(f, n, "bad payload digest"))?;
            Ok(DagRow {
                id: field(f, n, "block id", c[0])?,
                creator: field(f, n, "creator", c[1])?,
                seq: field(f, n, "seq", c[2])?,
                self_parent: parse_opt_id(f, n, c[3])?,
                other_parents,
                lamport_ts: field(f, n, "lamport", c[5])?,
                fee_total: field(f, n, "fee", c[6])?,
                role: field(f, n, "role", c[7])?,
                payload,
            })
        })
        .collect()
}

pub fn parse_finality(file: &str, text: &str) -> Result<Vec<FinalEntry>, ExportError> {
    data_lines(file, text, FINALITY_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            Ok(FinalEntry {
                position: field(file, n, "position", c[0])?,
                block: field(file, n, "block id", c[1])?,
                atropos: field(file, n, "atropos id", c[2])?,
                frame: field(file, n, "frame", c[3])?,
                lamport: field(file, n, "lamport", c[4])?,
            })
        })
        .collect()
}

pub fn parse_roots(text: &str) -> Result<Vec<RootRow>, ExportError> {
    let f = ROOTS_FILE;
    data_lines(f, text, ROOTS_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            Ok(RootRow {
                frame: field(f, n, "frame", c[0])?,
                id: field(f, n, "root id", c[1])?,
                creator: field(f, n, "creator", c[2])?,
                weight: field(f, n, "weight", c[3])?,
                score: field(f, n, "score", c[4])?,
            })
        })
        .collect()
}

pub fn parse_weights(text: &str) -> Result<Vec<WeightRow>, ExportError> {
    let f = WEIGHTS_FILE;
    data_lines(f, text, WEIGHTS_HEADER)?
        .into_iter()
        .map(|(n, c)| {
            Ok(WeightRow {
                from_frame: field(f, n, "frame", c[0])?,
                account: field(f, n, "account", c[1])?,
                power: field(f, n, "power", c[2])?,
            })
        })
        .collect()
}

/// Statements as written by [`write_rewards`]. Burn records are not part
/// of the export, so parsed statements carry credits and totals only.
pub fn parse_rewards(text: &str) -> Result<Vec<RewardStatement>, ExportError> {
    let f = REWARDS_FILE;
    let mut out: Vec<RewardStatement> = Vec::new();
    for (n, c) in data_lines(f, text, REWARDS_HEADER)? {
        if c[0] == "#statement" {
            if c.len() != 5 {
                return Err(malformed(f, n, "statement line needs 5 columns"));
            }
            let mut s = RewardStatement::new(field(f, n, "day", c[1])?, field(f, n, "pool", c[2])?);
            s.fees_collected = field(f, n, "fees", c[3])?;
            s.remainder = field(f, n, "remainder", c[4])?;
            out.push(s);
            continue;
        }
        if c[0].starts_with('#') {
            return Err(malformed(f, n, "unexpected comment line"));
        }
        let s = out.last_mut().ok_or_else(|| malformed(f, n, "credit line before any statement"))?;
        let day: u64 = field(f, n, "day", c[0])?;
        if day != s.day {
            return Err(malformed(f, n, format!("day {day} inside statement for day {}", s.day)));
        }
        let amounts: Vec<Amount> = c[2..].iter().map(|v| field(f, n, "amount", v)).collect::<Result<_, _>>()?;
        if c[1] == "SPV" {
            s.spv_credit += amounts[1];
            continue;
        }
        let account: AccountId = field(f, n, "account", c[1])?;
        let credit = s.credit_mut(account);
        *credit = AccountCredit {
            validation_reward: credit.validation_reward + amounts[0],
            fees: credit.fees + amounts[1],
            delegation_share: credit.delegation_share + amounts[2],
            commission: credit.commission + amounts[3],
            burn: credit.burn + amounts[4],
        };
    }
    Ok(out)
}

/// Everything a run directory holds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunExport {
    pub params: ProtocolParams,
    pub dag: Vec<DagRow>,
    pub roots: Vec<RootRow>,
    pub weights: Vec<WeightRow>,
    pub rewards: Vec<RewardStatement>,
    pub logs: BTreeMap<AccountId, Vec<FinalEntry>>,
    pub ledger: String,
    pub report: String,
}

fn write_file(path: PathBuf, text: &str) -> Result<(), ExportError> {
    fs::write(&path, text).map_err(|e| ExportError::Io { file: path.display().to_string(), msg: e.to_string() })
}

fn read_file(path: PathBuf) -> Result<String, ExportError> {
    fs::read_to_string(&path).map_err(|e| ExportError::Io { file: path.display().to_string(), msg: e.to_string() })
}

pub fn finality_file_name(node: AccountId) -> String {
    format!("node-{node}.tsv")
}

impl RunExport {
    pub fn write_dir(&self, dir: &Path) -> Result<(), ExportError> {
        let io = |e: std::io::Error| ExportError::Io { file: dir.display().to_string(), msg: e.to_string() };
        fs::create_dir_all(dir.join(FINALITY_DIR)).map_err(io)?;
        let params = toml::to_string(&self.params).map_err(|e| ExportError::Io {
            file: PARAMS_FILE.to_string(),
            msg: e.to_string(),
        })?;
        write_file(dir.join(PARAMS_FILE), &params)?;
        write_file(dir.join(DAG_FILE), &write_dag(&self.dag))?;
        write_file(dir.join(ROOTS_FILE), &write_roots(&self.roots))?;
        write_file(dir.join(WEIGHTS_FILE), &write_weights(&self.weights))?;
        write_file(dir.join(REWARDS_FILE), &write_rewards(&self.rewards))?;
        write_file(dir.join(LEDGER_FILE), &self.ledger)?;
        write_file(dir.join(REPORT_FILE), &self.report)?;
        for (node, log) in &self.logs {
            write_file(dir.join(FINALITY_DIR).join(finality_file_name(*node)), &write_finality(log))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<RunExport, ExportError> {
        let params_text = read_file(dir.join(PARAMS_FILE))?;
        let params: ProtocolParams =
            toml::from_str(&params_text).map_err(|e| malformed(PARAMS_FILE, 1, e.to_string()))?;
        let mut logs = BTreeMap::new();
        let fdir = dir.join(FINALITY_DIR);
        let entries = fs::read_dir(&fdir)
            .map_err(|e| ExportError::Io { file: fdir.display().to_string(), msg: e.to_string() })?;
        let mut names: Vec<String> =
            entries.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
        names.sort();
        for name in names {
            let Some(id) = name.strip_prefix("node-").and_then(|s| s.strip_suffix(".tsv")) else { continue };
            let node: AccountId = field(&name, 0, "node id", id)?;
            let text = read_file(fdir.join(&name))?;
            logs.insert(node, parse_finality(&name, &text)?);
        }
        if logs.is_empty() {
            return Err(ExportError::Io { file: fdir.display().to_string(), msg: "no finality logs".into() });
        }
        Ok(RunExport {
            params,
            dag: parse_dag(&read_file(dir.join(DAG_FILE))?)?,
            roots: parse_roots(&read_file(dir.join(ROOTS_FILE))?)?,
            weights: parse_weights(&read_file(dir.join(WEIGHTS_FILE))?)?,
            rewards: parse_rewards(&read_file(dir.join(REWARDS_FILE))?)?,
            logs,
            ledger: read_file(dir.join(LEDGER_FILE)).unwrap_or_default(),
            report: read_file(dir.join(REPORT_FILE)).unwrap_or_default(),
        })
    }
}
