//! Zero-stake post-validation of run exports.
//!
//! The audit re-derives frames, roots, fame and the final order from
//! `dag.tsv` alone, with explicit ancestor bitsets, and diffs the result
//! against what the nodes exported.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write;

use rand::seq::{IndexedMutRandom, IndexedRandom};
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consensus::{FinalEntry, COIN_AFTER_FRAMES};
use crate::export::{epochs_from_rows, DagRow, RootRow, RunExport};
use crate::ledger::{AccountId, Ledger, LedgerError, Role};
use crate::params::{BurnRewardMode, ProtocolParams};
use crate::rewards::{burn_deposit, BurnRecord, RewardStatement, SagaLedger};
use crate::xdag::{compute_block_id, BlockId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FindingKind {
    InvalidBlock,
    ForkPair,
    ThresholdViolation,
    OrderDivergence,
    ScoreMismatch,
    ConservationBreak,
}

impl FindingKind {
    pub const ALL: [FindingKind; 6] = [
        FindingKind::InvalidBlock,
        FindingKind::ForkPair,
        FindingKind::ThresholdViolation,
        FindingKind::OrderDivergence,
        FindingKind::ScoreMismatch,
        FindingKind::ConservationBreak,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::InvalidBlock => "InvalidBlock",
            FindingKind::ForkPair => "ForkPair",
            FindingKind::ThresholdViolation => "ThresholdViolation",
            FindingKind::OrderDivergence => "OrderDivergence",
            FindingKind::ScoreMismatch => "ScoreMismatch",
            FindingKind::ConservationBreak => "ConservationBreak",
        }
    }
}

impl std::fmt::Display for FindingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub subjects: Vec<String>,
    pub evidence: String,
}

impl Finding {
    fn new(kind: FindingKind, subjects: Vec<String>, evidence: impl Into<String>) -> Self {
        Finding { kind, subjects, evidence: evidence.into() }
    }

    pub fn evidence_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.kind.as_str());
        for s in &self.subjects {
            h.update([0]);
            h.update(s);
        }
        h.update([1]);
        h.update(&self.evidence);
        h.finalize().into()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub findings: Vec<Finding>,
    pub blocks_scanned: usize,
    pub derived_final: usize,
    pub reporter: Option<AccountId>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    /// `key=value` header lines, then one tab-separated line per finding.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "verdict={}", if self.is_clean() { "clean" } else { "violations" }).unwrap();
        writeln!(out, "blocks_scanned={}", self.blocks_scanned).unwrap();
        writeln!(out, "derived_final={}", self.derived_final).unwrap();
        if let Some(r) = self.reporter {
            writeln!(out, "reporter={r}").unwrap();
        }
        writeln!(out, "findings={}", self.findings.len()).unwrap();
        for f in &self.findings {
            writeln!(out, "finding\t{}\t{}\t{}", f.kind, f.subjects.join(","), f.evidence).unwrap();
        }
        out
    }
}

struct Bits(Vec<u64>);

impl Bits {
    fn new(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn or(&mut self, other: &Bits) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Weights from `weights.tsv`, by epoch start frame.
struct Weights {
    epochs: BTreeMap<u64, BTreeMap<AccountId, u64>>,
}

impl Weights {
    fn epoch(&self, frame: u64) -> Option<&BTreeMap<AccountId, u64>> {
        self.epochs.range(..=frame).next_back().map(|(_, e)| e)
    }
    fn power(&self, frame: u64, who: AccountId) -> u64 {
        self.epoch(frame).and_then(|e| e.get(&who)).copied().unwrap_or(0)
    }
    fn total(&self, frame: u64) -> u64 {
        self.epoch(frame).map(|e| e.values().sum()).unwrap_or(0)
    }
    fn knows(&self, who: AccountId) -> bool {
        self.epochs.values().any(|e| e.contains_key(&who))
    }
}

fn role_from_power(power: u64, params: &ProtocolParams) -> Role {
    match power {
        0 => Role::Observer,
        p if p < params.upper_u => Role::User,
        _ => Role::Validator,
    }
}

fn supermajority(part: u64, total: u64) -> bool {
    3 * part as u128 > 2 * total as u128
}

/// Everything re-derived from the DAG export.
pub struct Derivation {
    pub frames: HashMap<BlockId, u64>,
    /// Root id → (frame, weight, election score).
    pub roots: HashMap<BlockId, (u64, u64, u64)>,
    pub famous: HashMap<BlockId, bool>,
    pub order: Vec<FinalEntry>,
}

struct Deriver<'a> {
    rows: Vec<&'a DagRow>,
    idx: HashMap<BlockId, usize>,
    anc: Vec<Bits>,
    forks: Vec<(AccountId, Vec<usize>)>,
    weights: Weights,
    frame: Vec<u64>,
    root_frames: Vec<Vec<usize>>,
    root_info: HashMap<usize, (u64, u64, u64, Vec<usize>)>,
    memo: HashMap<(usize, usize), (bool, Option<bool>)>,
}

impl<'a> Deriver<'a> {
    fn new(dag: &'a [DagRow], weights: Weights) -> Self {
        let mut rows: Vec<&DagRow> = dag.iter().collect();
        rows.sort_by_key(|r| (r.lamport_ts, r.id));
        let idx: HashMap<BlockId, usize> = rows.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let n = rows.len();
        let mut anc: Vec<Bits> = Vec::with_capacity(n);
        for (i, r) in rows.iter().enumerate() {
            let mut b = Bits::new(n);
            b.set(i);
            for p in r.parents() {
                b.or(&anc[idx[p]]);
            }
            anc.push(b);
        }
        let mut groups: BTreeMap<(AccountId, u64), Vec<usize>> = BTreeMap::new();
        for (i, r) in rows.iter().enumerate() {
            groups.entry((r.creator, r.seq)).or_default().push(i);
        }
        let forks = groups.into_iter().filter(|(_, v)| v.len() > 1).map(|((c, _), v)| (c, v)).collect();
        Deriver {
            rows,
            idx,
            anc,
            forks,
            weights,
            frame: Vec::new(),
            root_frames: Vec::new(),
            root_info: HashMap::new(),
            memo: HashMap::new(),
        }
    }

    fn sees_fork(&self, v: usize, creator: AccountId) -> bool {
        self.forks
            .iter()
            .any(|(c, members)| *c == creator && members.iter().filter(|m| self.anc[v].get(**m)).count() > 1)
    }

    fn reach_score(&self, v: usize, frame: u64) -> (u64, Vec<usize>) {
        let mut score = 0;
        let mut reached = Vec::new();
        for r in self.root_frames.get(frame as usize).into_iter().flatten() {
            if self.anc[v].get(*r) && !self.sees_fork(v, self.rows[*r].creator) {
                score += self.root_info[r].1;
                reached.push(*r);
            }
        }
        (score, reached)
    }

    fn add_root(&mut self, v: usize, frame: u64, weight: u64, score: u64, prev: Vec<usize>) {
        if self.root_frames.len() <= frame as usize {
            self.root_frames.resize(frame as usize + 1, Vec::new());
        }
        self.root_frames[frame as usize].push(v);
        self.root_info.insert(v, (frame, weight, score, prev));
    }

    fn assign_frames(&mut self) {
        for v in 0..self.rows.len() {
            let r = self.rows[v];
            let Some(sp) = r.self_parent else {
                self.frame.push(0);
                let w = self.weights.power(0, r.creator);
                self.add_root(v, 0, w, w, Vec::new());
                continue;
            };
            let f = r.parents().map(|p| self.frame[self.idx[p]]).max().unwrap();
            let sf = self.frame[self.idx[&sp]];
            let (score, reached) = self.reach_score(v, f);
            if supermajority(score, self.weights.total(f)) {
                self.frame.push(f + 1);
                let w = self.weights.power(f + 1, r.creator);
                self.add_root(v, f + 1, w, score, reached);
                continue;
            }
            self.frame.push(f);
            if sf < f {
                let (entry, reached) = self.reach_score(v, f - 1);
                if supermajority(entry, self.weights.total(f - 1)) {
                    let w = self.weights.power(f, r.creator);
                    self.add_root(v, f, w, entry, reached);
                }
            }
        }
    }

    fn vote(&mut self, y: usize, x: usize) -> bool {
        let (fy, fx) = (self.root_info[&y].0, self.root_info[&x].0);
        if fy == fx + 1 {
            return self.root_info[&y].3.contains(&x);
        }
        self.tally(y, x).0
    }

    fn tally(&mut self, y: usize, x: usize) -> (bool, Option<bool>) {
        if let Some(v) = self.memo.get(&(y, x)) {
            return *v;
        }
        let (fy, fx) = (self.root_info[&y].0, self.root_info[&x].0);
        let total = self.weights.total(fy - 1);
        let (mut yes, mut no) = (0, 0);
        for u in self.root_info[&y].3.clone() {
            let w = self.root_info[&u].1;
            if self.vote(u, x) {
                yes += w;
            } else {
                no += w;
            }
        }
        let d = fy - fx;
        let result = if d > 2 && (d - 2) % COIN_AFTER_FRAMES == 0 {
            let v = if supermajority(yes, total) {
                true
            } else if supermajority(no, total) {
                false
            } else {
                self.rows[y].id.0[31] & 1 == 1
            };
            (v, None)
        } else if supermajority(yes, total) {
            (true, Some(true))
        } else if supermajority(no, total) {
            (false, Some(false))
        } else {
            (yes >= no, None)
        };
        self.memo.insert((y, x), result);
        result
    }

    fn decide(&mut self, x: usize) -> Option<bool> {
        let fx = self.root_info[&x].0 as usize;
        for g in fx + 2..self.root_frames.len() {
            let mut voters = self.root_frames[g].clone();
            voters.sort_by_key(|v| (self.rows[*v].lamport_ts, self.rows[*v].id));
            for y in voters {
                if let (_, Some(d)) = self.tally(y, x) {
                    return Some(d);
                }
            }
        }
        None
    }

    fn run(mut self) -> Derivation {
        self.assign_frames();
        let mut famous: HashMap<usize, bool> = HashMap::new();
        let all_roots: Vec<usize> = self.root_frames.iter().flatten().copied().collect();
        for x in all_roots {
            if let Some(d) = self.decide(x) {
                famous.insert(x, d);
            }
        }

        let n = self.rows.len();
        let mut is_final = vec![false; n];
        let mut order = Vec::new();
        let top = self.root_frames.len() as u64;
        let mut frame = 0u64;
        'frames: while frame + 2 < top {
            let mut atro = Vec::new();
            for r in &self.root_frames[frame as usize] {
                match famous.get(r) {
                    Some(true) => atro.push(*r),
                    Some(false) => {}
                    None => {
                        // never famous once a frame+2 root does not reach it
                        let late = self.root_frames[frame as usize + 2].iter().any(|z| !self.anc[*z].get(*r));
                        if !late {
                            break 'frames;
                        }
                    }
                }
            }
            atro.sort_by_key(|a| (self.rows[*a].lamport_ts, self.rows[*a].id));
            let mut batch = Vec::new();
            for a in &atro {
                for (b, fin) in is_final.iter_mut().enumerate() {
                    if !*fin && self.anc[*a].get(b) {
                        *fin = true;
                        batch.push((self.rows[b].lamport_ts, self.rows[b].id, b, *a));
                    }
                }
            }
            batch.sort();
            for (lamport, id, b, a) in batch {
                order.push(FinalEntry {
                    position: order.len() as u64,
                    block: id,
                    atropos: self.rows[a].id,
                    frame: self.frame[b],
                    lamport,
                });
            }
            frame += 1;
        }

        Derivation {
            frames: (0..n).map(|i| (self.rows[i].id, self.frame[i])).collect(),
            roots: self.root_info.iter().map(|(i, (f, w, s, _))| (self.rows[*i].id, (*f, *w, *s))).collect(),
            famous: famous.iter().map(|(i, d)| (self.rows[*i].id, *d)).collect(),
            order,
        }
    }
}

/// Brute-force ancestry over an exported DAG, usable as a test oracle for
/// the engine's reachability and score paths.
pub struct Reachability<'a>(Deriver<'a>);

impl<'a> Reachability<'a> {
    pub fn new(dag: &'a [DagRow]) -> Self {
        Reachability(Deriver::new(dag, Weights { epochs: BTreeMap::new() }))
    }

    pub fn reaches(&self, from: &BlockId, to: &BlockId) -> bool {
        match (self.0.idx.get(from), self.0.idx.get(to)) {
            (Some(f), Some(t)) => self.0.anc[*f].get(*t),
            _ => false,
        }
    }

    /// Weight of `roots` reachable from `block`, skipping creators forked
    /// inside its ancestry.
    pub fn score(&self, block: &BlockId, roots: &[(BlockId, u64)]) -> u64 {
        let Some(v) = self.0.idx.get(block) else { return 0 };
        roots
            .iter()
            .filter_map(|(r, w)| {
                let ri = *self.0.idx.get(r)?;
                (self.0.anc[*v].get(ri) && !self.0.sees_fork(*v, self.0.rows[ri].creator)).then_some(*w)
            })
            .sum()
    }
}

/// Structural rule check of every row; returns InvalidBlock findings.
fn check_structure(rows: &[DagRow], weights: &Weights, params: &ProtocolParams) -> Vec<Finding> {
    let mut out = Vec::new();
    let by_id: HashMap<BlockId, &DagRow> = rows.iter().map(|r| (r.id, r)).collect();
    let mut seen = HashSet::new();
    let bad = |r: &DagRow, why: String| Finding::new(FindingKind::InvalidBlock, vec![r.id.to_string()], why);
    for r in rows {
        if !seen.insert(r.id) {
            out.push(bad(r, "duplicate block id".into()));
            continue;
        }
        let id = compute_block_id(r.creator, r.self_parent.as_ref(), &r.other_parents, &r.payload, r.lamport_ts, r.seq);
        if id != r.id {
            out.push(bad(r, "id does not hash the block contents".into()));
        }
        if !weights.knows(r.creator) {
            out.push(bad(r, format!("creator {} is not a participant", r.creator)));
            continue;
        }
        if r.role == Role::Observer {
            out.push(bad(r, "creator stamped as Observer".into()));
        }
        let Some(sp) = r.self_parent else {
            if !r.other_parents.is_empty() || r.seq != 0 || r.lamport_ts != 0 {
                out.push(bad(r, "leaf with parents, seq or lamport".into()));
            }
            continue;
        };
        let mut parents = Vec::new();
        let mut missing = false;
        for p in r.parents() {
            match by_id.get(p) {
                Some(pr) => parents.push(*pr),
                None => missing = true,
            }
        }
        if missing {
            out.push(bad(r, "unknown parent".into()));
            continue;
        }
        let spr = by_id[&sp];
        if spr.creator != r.creator {
            out.push(bad(r, "self-parent by another creator".into()));
        }
        if r.seq != spr.seq + 1 {
            out.push(bad(r, format!("seq {} after self-parent seq {}", r.seq, spr.seq)));
        }
        if r.other_parents.len() != params.k - 1 {
            out.push(bad(r, format!("{} other-parents, expected {}", r.other_parents.len(), params.k - 1)));
        }
        let others: Vec<&DagRow> = r.other_parents.iter().map(|p| by_id[p]).collect();
        let creators: BTreeSet<AccountId> = others.iter().map(|o| o.creator).collect();
        if creators.len() != others.len() || creators.contains(&r.creator) {
            out.push(bad(r, "other-parents repeat a creator".into()));
        }
        if !others.iter().any(|o| Some(o.role) == r.role.opposite()) {
            out.push(bad(r, "no opposite-type other-parent".into()));
        }
        let expect = parents.iter().map(|p| p.lamport_ts).max().unwrap() + 1;
        if r.lamport_ts != expect {
            out.push(bad(r, format!("lamport {} expected {expect}", r.lamport_ts)));
        }
    }
    out
}

fn fork_findings(rows: &[DagRow]) -> Vec<Finding> {
    let mut groups: BTreeMap<(AccountId, u64), BTreeSet<BlockId>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.creator, r.seq)).or_default().insert(r.id);
    }
    groups
        .into_iter()
        .filter(|(_, ids)| ids.len() > 1)
        .map(|((c, seq), ids)| {
            let mut subjects = vec![c.to_string()];
            subjects.extend(ids.iter().map(|i| i.to_string()));
            Finding::new(FindingKind::ForkPair, subjects, format!("{} blocks by {c} at seq {seq}", ids.len()))
        })
        .collect()
}

fn compare_logs(d: &Derivation, logs: &BTreeMap<AccountId, Vec<FinalEntry>>, out: &mut Vec<Finding>) {
    for (node, log) in logs {
        for (p, e) in log.iter().enumerate() {
            let Some(want) = d.order.get(p) else {
                out.push(Finding::new(
                    FindingKind::OrderDivergence,
                    vec![node.to_string(), p.to_string()],
                    format!("log has {} entries, derivation only {}", log.len(), d.order.len()),
                ));
                break;
            };
            if e.position != p as u64 || e.block != want.block || e.atropos != want.atropos || e.lamport != want.lamport {
                out.push(Finding::new(
                    FindingKind::OrderDivergence,
                    vec![node.to_string(), p.to_string()],
                    format!("position {p}: logged {} expected {}", e.block, want.block),
                ));
                break;
            }
        }
        for (p, e) in log.iter().enumerate().take(d.order.len()) {
            if d.order[p].block == e.block && e.frame != d.frames[&e.block] {
                out.push(Finding::new(
                    FindingKind::ThresholdViolation,
                    vec![node.to_string(), e.block.to_string()],
                    format!("logged frame {} but the block is in frame {}", e.frame, d.frames[&e.block]),
                ));
            }
        }
    }
}

fn compare_roots(d: &Derivation, rows: &[RootRow], out: &mut Vec<Finding>) {
    let mut listed = HashSet::new();
    for r in rows {
        listed.insert(r.id);
        match d.roots.get(&r.id) {
            None => out.push(Finding::new(
                FindingKind::ThresholdViolation,
                vec![r.id.to_string()],
                format!("listed as a frame-{} root but fails the threshold", r.frame),
            )),
            Some((f, _, _)) if *f != r.frame => out.push(Finding::new(
                FindingKind::ThresholdViolation,
                vec![r.id.to_string()],
                format!("listed in frame {} but is a root of frame {f}", r.frame),
            )),
            Some((_, w, s)) if (*w, *s) != (r.weight, r.score) => out.push(Finding::new(
                FindingKind::ScoreMismatch,
                vec![r.id.to_string()],
                format!("weight/score {}/{} expected {w}/{s}", r.weight, r.score),
            )),
            _ => {}
        }
    }
    let mut missing: Vec<(&BlockId, &(u64, u64, u64))> = d.roots.iter().filter(|(id, _)| !listed.contains(id)).collect();
    missing.sort();
    for (id, (f, _, _)) in missing {
        out.push(Finding::new(
            FindingKind::ThresholdViolation,
            vec![id.to_string()],
            format!("root of frame {f} missing from the roots export"),
        ));
    }
}

fn check_rewards(statements: &[RewardStatement], out: &mut Vec<Finding>) {
    for (i, s) in statements.iter().enumerate() {
        let lhs = s.total_paid() + s.spv_credit + s.remainder;
        let rhs = s.pool + s.fees_collected;
        if lhs != rhs {
            out.push(Finding::new(
                FindingKind::ConservationBreak,
                vec![i.to_string(), s.day.to_string()],
                format!("credits+spv+remainder {lhs} != pool+fees {rhs}"),
            ));
        }
    }
}

/// Independent re-verification of a run export. `None` derivation means
/// structural findings made re-derivation meaningless.
pub fn post_validate_with(export: &RunExport) -> (AuditReport, Option<Derivation>) {
    let weights = Weights { epochs: epochs_from_rows(&export.weights) };
    let mut findings = check_structure(&export.dag, &weights, &export.params);
    findings.extend(fork_findings(&export.dag));
    let mut derivation = None;
    if !findings.iter().any(|f| f.kind == FindingKind::InvalidBlock) {
        let d = Deriver::new(&export.dag, weights).run();
        // stamped role must match the creator's role at the self-parent's frame
        let w2 = Weights { epochs: epochs_from_rows(&export.weights) };
        for r in &export.dag {
            let f = r.self_parent.map_or(0, |p| d.frames[&p]);
            let want = role_from_power(w2.power(f, r.creator), &export.params);
            if want != r.role {
                findings.push(Finding::new(
                    FindingKind::InvalidBlock,
                    vec![r.id.to_string()],
                    format!("stamped {} but creator is {want} at frame {f}", r.role),
                ));
            }
        }
        compare_logs(&d, &export.logs, &mut findings);
        compare_roots(&d, &export.roots, &mut findings);
        derivation = Some(d);
    }
    check_rewards(&export.rewards, &mut findings);
    let report = AuditReport {
        findings,
        blocks_scanned: export.dag.len(),
        derived_final: derivation.as_ref().map_or(0, |d| d.order.len()),
        reporter: None,
    };
    (report, derivation)
}

pub fn post_validate(export: &RunExport) -> AuditReport {
    post_validate_with(export).0
}

/// Points a finality log implies: one per logged block whose other-parents
/// include an Atropos of the log.
pub fn recount_saga(dag: &[DagRow], log: &[FinalEntry]) -> BTreeMap<AccountId, u64> {
    let rows: HashMap<BlockId, &DagRow> = dag.iter().map(|r| (r.id, r)).collect();
    let atroposes: HashSet<BlockId> = log.iter().map(|e| e.atropos).collect();
    let mut out = BTreeMap::new();
    for e in log {
        let Some(r) = rows.get(&e.block) else { continue };
        if r.other_parents.iter().any(|p| atroposes.contains(p)) {
            *out.entry(r.creator).or_insert(0) += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObserverState {
    pub id: AccountId,
    pub saga_points: u64,
}

impl ObserverState {
    pub fn new(id: AccountId) -> Self {
        ObserverState { id, saga_points: 0 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ObserverError {
    #[error("every finding in the report was already filed")]
    DuplicateReport,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

/// Evidence hashes already filed, first reporter wins.
#[derive(Clone, Debug, Default)]
pub struct ReportRegistry {
    seen: HashSet<[u8; 32]>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportOutcome {
    pub burns: Vec<BurnRecord>,
    pub points: u64,
    pub accepted: usize,
}

/// Files `report` for `observer`: fork findings flag and burn the forker
/// with this reporter, every other new finding earns Saga points.
pub fn report_and_reward(
    registry: &mut ReportRegistry,
    observer: &mut ObserverState,
    report: &AuditReport,
    ledger: &mut Ledger,
    stmt: &mut RewardStatement,
    params: &ProtocolParams,
) -> Result<ReportOutcome, ObserverError> {
    let fresh: Vec<&Finding> = report.findings.iter().filter(|f| !registry.seen.contains(&f.evidence_hash())).collect();
    if fresh.is_empty() {
        return Err(ObserverError::DuplicateReport);
    }
    let mut out = ReportOutcome::default();
    for f in fresh {
        registry.seen.insert(f.evidence_hash());
        out.accepted += 1;
        let forker = (f.kind == FindingKind::ForkPair)
            .then(|| f.subjects.first().and_then(|s| s.parse::<AccountId>().ok()))
            .flatten()
            .filter(|a| ledger.contains(*a) && ledger.burned(*a) == 0);
        match forker {
            Some(account) => {
                if !ledger.is_flagged(account) {
                    ledger.flag(account)?;
                }
                let mut points = SagaLedger::default();
                let burn = burn_deposit(ledger, &mut points, account, Some(observer.id), params)?;
                if params.burn_reward_mode == BurnRewardMode::SagaPoints {
                    observer.saga_points += burn.reporter_points;
                    out.points += burn.reporter_points;
                }
                stmt.record_burn(burn.clone());
                out.burns.push(burn);
            }
            None => {
                observer.saga_points += params.points_per_finding;
                out.points += params.points_per_finding;
            }
        }
    }
    Ok(out)
}

/// Stakes `stake` tokens into the observer's account; its Saga points
/// move into `saga` unchanged.
pub fn upgrade_observer(
    observer: &ObserverState,
    stake: u64,
    ledger: &mut Ledger,
    saga: &mut SagaLedger,
) -> Result<Role, ObserverError> {
    let min = ledger.params().lower_l;
    if stake < min {
        return Err(LedgerError::BelowMinimum { amount: stake, minimum: min }.into());
    }
    if ledger.contains(observer.id) {
        ledger.credit_tokens(observer.id, stake)?;
    } else {
        ledger.open_account(observer.id, stake)?;
    }
    saga.credit_points(observer.id, observer.saga_points);
    Ok(ledger.role(observer.id)?)
}

/// Single-fault corruptions of a clean export, one generator per finding
/// class.
pub mod mutate {
    use super::*;

    fn rename(export: &mut RunExport, old: BlockId, new: BlockId) {
        for r in &mut export.dag {
            if r.id == old {
                r.id = new;
            }
            for p in r.self_parent.iter_mut().chain(r.other_parents.iter_mut()) {
                if *p == old {
                    *p = new;
                }
            }
        }
        for log in export.logs.values_mut() {
            for e in log.iter_mut() {
                if e.block == old {
                    e.block = new;
                }
                if e.atropos == old {
                    e.atropos = new;
                }
            }
        }
        for r in &mut export.roots {
            if r.id == old {
                r.id = new;
            }
        }
    }

    fn rehash(r: &DagRow) -> BlockId {
        compute_block_id(r.creator, r.self_parent.as_ref(), &r.other_parents, &r.payload, r.lamport_ts, r.seq)
    }

    /// Breaks one structural rule of one block, re-hashing it so the only
    /// defect is the rule itself (or, in one variant, the hash).
    pub fn invalid_block<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        let candidates: Vec<usize> = (0..e.dag.len()).filter(|i| e.dag[*i].self_parent.is_some()).collect();
        let i = *candidates.choose(rng)?;
        let old = e.dag[i].id;
        let variant = rng.random_range(0..6);
        {
            let r = &mut e.dag[i];
            match variant {
                0 => r.lamport_ts += rng.random_range(1..5),
                1 => r.role = r.role.opposite().unwrap_or(Role::User),
                2 => r.seq += 1,
                3 => r.other_parents.clear(),
                4 => r.self_parent = None,
                _ => {
                    r.id.0[rng.random_range(0..32)] ^= 1 << rng.random_range(0..8);
                    return Some(e);
                }
            }
        }
        let new = rehash(&e.dag[i]);
        rename(&mut e, old, new);
        Some(e)
    }

    /// Injects a second, structurally valid block at an existing
    /// (creator, seq).
    pub fn fork_pair<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        let mut twin = e.dag.choose(rng)?.clone();
        rng.fill(&mut twin.payload[..]);
        twin.id = rehash(&twin);
        e.dag.push(twin);
        Some(e)
    }

    pub fn threshold<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        match rng.random_range(0..3) {
            0 => {
                let nodes: Vec<AccountId> = e.logs.iter().filter(|(_, l)| !l.is_empty()).map(|(n, _)| *n).collect();
                let node = *nodes.choose(rng)?;
                let log = e.logs.get_mut(&node).unwrap();
                let p = rng.random_range(0..log.len());
                let f = &mut log[p].frame;
                *f = if *f > 0 && rng.random_bool(0.5) { *f - 1 } else { *f + 1 };
            }
            1 => {
                let i = rng.random_range(0..e.roots.len());
                e.roots[i].frame += 1;
            }
            _ => {
                let roots: HashSet<BlockId> = e.roots.iter().map(|r| r.id).collect();
                let plain: Vec<&DagRow> = e.dag.iter().filter(|r| !roots.contains(&r.id)).collect();
                let r = plain.choose(rng)?;
                let frame = e.roots.iter().map(|r| r.frame).max().unwrap_or(0);
                e.roots.push(RootRow { frame: rng.random_range(0..=frame), id: r.id, creator: r.creator, weight: 1, score: 1 });
            }
        }
        Some(e)
    }

    pub fn order<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        let nodes: Vec<AccountId> = e.logs.iter().filter(|(_, l)| l.len() > 1).map(|(n, _)| *n).collect();
        let node = *nodes.choose(rng)?;
        let log = e.logs.get_mut(&node).unwrap();
        let p = rng.random_range(0..log.len() - 1);
        match rng.random_range(0..3) {
            0 => {
                let (a, b) = (log[p].clone(), log[p + 1].clone());
                log[p] = FinalEntry { position: a.position, ..b };
                log[p + 1] = FinalEntry { position: a.position + 1, ..a };
            }
            1 => {
                let atro: BTreeSet<BlockId> = log.iter().map(|x| x.atropos).collect();
                let others: Vec<BlockId> = atro.into_iter().filter(|a| *a != log[p].atropos).collect();
                match others.choose(rng) {
                    Some(a) => log[p].atropos = *a,
                    None => log[p].lamport += 1,
                }
            }
            _ => log[p].lamport += rng.random_range(1..4),
        }
        Some(e)
    }

    pub fn score<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        if e.roots.is_empty() {
            return None;
        }
        let i = rng.random_range(0..e.roots.len());
        let delta = rng.random_range(1..1000);
        if rng.random_bool(0.5) {
            e.roots[i].score += delta;
        } else {
            e.roots[i].weight += delta;
        }
        Some(e)
    }

    pub fn conservation<R: Rng>(export: &RunExport, rng: &mut R) -> Option<RunExport> {
        let mut e = export.clone();
        let s = e.rewards.choose_mut(rng)?;
        let delta = crate::money::Amount(rng.random_range(1..100_000));
        match rng.random_range(0..4) {
            0 if !s.credits.is_empty() => {
                let keys: Vec<AccountId> = s.credits.keys().copied().collect();
                let c = s.credit_mut(*keys.choose(rng).unwrap());
                match rng.random_range(0..4) {
                    0 => c.validation_reward += delta,
                    1 => c.fees += delta,
                    2 => c.delegation_share += delta,
                    _ => c.commission += delta,
                }
            }
            1 => s.pool += delta,
            2 => s.remainder += delta,
            _ => s.spv_credit += delta,
        }
        Some(e)
    }

    pub fn apply<R: Rng>(kind: FindingKind, export: &RunExport, rng: &mut R) -> Option<RunExport> {
        match kind {
            FindingKind::InvalidBlock => invalid_block(export, rng),
            FindingKind::ForkPair => fork_pair(export, rng),
            FindingKind::ThresholdViolation => threshold(export, rng),
            FindingKind::OrderDivergence => order(export, rng),
            FindingKind::ScoreMismatch => score(export, rng),
            FindingKind::ConservationBreak => conservation(export, rng),
        }
    }
}
