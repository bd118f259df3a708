//! Whole-run driver: gossip until `max_ticks`, quiesce, check the safety
//! invariants, settle rewards from the reference node and export.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write;

use sha2::{Digest, Sha256};

use crate::consensus::{exceeds_two_thirds, FinalEntry};
use crate::export::{weight_rows, write_finality, write_ledger_snapshot, DagRow, RootRow, RunExport};
use crate::gossip::{Fault, SimNetwork, SimNode};
use crate::ledger::{AccountId, Ledger, Role};
use crate::money::Amount;
use crate::observer::{post_validate, report_and_reward, ObserverError, ObserverState, ReportRegistry};
use crate::rewards::{
    burn_deposit, daily_block_reward, distribute_validation_rewards, route_transaction_fees, RewardStatement,
    SagaLedger,
};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSummary {
    pub id: AccountId,
    pub fault: Fault,
    pub role: Role,
    pub blocks_created: u64,
    pub dag_blocks: usize,
    pub finalized: usize,
    pub frames_decided: u64,
    pub max_frame: u64,
    pub forks_seen: u64,
    pub rejected: u64,
    pub log_digest: String,
}

/// Nearest-rank percentiles of finality lag in ticks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LagStats {
    pub count: usize,
    pub p50: u64,
    pub p90: u64,
    pub p99: u64,
    pub max: u64,
}

impl LagStats {
    pub fn from_samples(mut v: Vec<u64>) -> Self {
        if v.is_empty() {
            return LagStats::default();
        }
        v.sort_unstable();
        let rank = |p: usize| v[(p * v.len()).div_ceil(100).max(1) - 1];
        LagStats { count: v.len(), p50: rank(50), p90: rank(90), p99: rank(99), max: *v.last().unwrap() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub ticks: u64,
    pub blocks_created: u64,
    pub messages: BTreeMap<String, u64>,
    pub delivered: u64,
    pub dropped: u64,
    pub blocks_sent: u64,
    pub reference: AccountId,
    pub finalized: usize,
    pub frames_decided: u64,
    pub lag: LagStats,
    pub checkpoints: Vec<u64>,
    pub total_power: u64,
    pub byzantine_power: u64,
    pub byzantine_threshold: u64,
    pub forkers: Vec<AccountId>,
    pub burns: Vec<(AccountId, Amount)>,
    pub statements: usize,
    pub total_paid: Amount,
    pub spv_credit: Amount,
    pub observer_points: BTreeMap<AccountId, u64>,
    pub audit_findings: usize,
    pub violations: Vec<String>,
    pub nodes: Vec<NodeSummary>,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Deterministic `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(o, "{k}={v}").unwrap();
        kv("ok", &self.ok());
        kv("seed", &self.seed);
        kv("ticks", &self.ticks);
        kv("blocks_created", &self.blocks_created);
        for (kind, n) in &self.messages {
            kv(&format!("messages.{kind}"), n);
        }
        kv("messages.delivered", &self.delivered);
        kv("messages.dropped", &self.dropped);
        kv("blocks_sent", &self.blocks_sent);
        kv("reference_node", &self.reference);
        kv("finalized", &self.finalized);
        kv("frames_decided", &self.frames_decided);
        kv("lag.count", &self.lag.count);
        kv("lag.p50", &self.lag.p50);
        kv("lag.p90", &self.lag.p90);
        kv("lag.p99", &self.lag.p99);
        kv("lag.max", &self.lag.max);
        kv("checkpoints", &join(&self.checkpoints));
        kv("power.total", &self.total_power);
        kv("power.byzantine", &self.byzantine_power);
        kv("power.byzantine_max", &self.byzantine_threshold);
        kv("forkers", &join(&self.forkers));
        kv("burns", &join(&self.burns.iter().map(|(a, x)| format!("{a}:{x}")).collect::<Vec<_>>()));
        kv("rewards.statements", &self.statements);
        kv("rewards.paid", &self.total_paid);
        kv("rewards.spv", &self.spv_credit);
        for (o, p) in &self.observer_points {
            kv(&format!("observer.{o}.points"), p);
        }
        kv("audit.findings", &self.audit_findings);
        for n in &self.nodes {
            let p = format!("node.{}", n.id);
            kv(&format!("{p}.fault"), &n.fault);
            kv(&format!("{p}.role"), &n.role);
            kv(&format!("{p}.created"), &n.blocks_created);
            kv(&format!("{p}.dag_blocks"), &n.dag_blocks);
            kv(&format!("{p}.finalized"), &n.finalized);
            kv(&format!("{p}.frames_decided"), &n.frames_decided);
            kv(&format!("{p}.max_frame"), &n.max_frame);
            kv(&format!("{p}.forks_seen"), &n.forks_seen);
            kv(&format!("{p}.rejected"), &n.rejected);
            kv(&format!("{p}.log_digest"), &n.log_digest);
        }
        kv("violations", &self.violations.len());
        for (i, v) in self.violations.iter().enumerate() {
            kv(&format!("violation.{i}"), v);
        }
        o
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        writeln!(o, "run {} after {} ticks (seed {})", if self.ok() { "OK" } else { "FAILED" }, self.ticks, self.seed)
            .unwrap();
        writeln!(
            o,
            "blocks created {} / finalized {} on node {} / frames decided {}",
            self.blocks_created, self.finalized, self.reference, self.frames_decided
        )
        .unwrap();
        writeln!(
            o,
            "finality lag p50 {} p90 {} p99 {} max {} ticks",
            self.lag.p50, self.lag.p90, self.lag.p99, self.lag.max
        )
        .unwrap();
        writeln!(
            o,
            "messages sent {} delivered {} dropped {}",
            self.messages.values().sum::<u64>(),
            self.delivered,
            self.dropped
        )
        .unwrap();
        writeln!(o, "checkpoints at frames [{}]", join(&self.checkpoints)).unwrap();
        writeln!(o, "rewards paid {} to accounts, {} to the SPV", self.total_paid, self.spv_credit).unwrap();
        writeln!(o, "{:>6} {:>14} {:>9} {:>8} {:>9} {:>6} {:>6}", "node", "fault", "role", "created", "finalized", "frames", "forks")
            .unwrap();
        for n in &self.nodes {
            writeln!(
                o,
                "{:>6} {:>14} {:>9} {:>8} {:>9} {:>6} {:>6}",
                n.id.to_string(),
                n.fault.to_string(),
                n.role.to_string(),
                n.blocks_created,
                n.finalized,
                n.frames_decided,
                n.forks_seen
            )
            .unwrap();
        }
        for v in &self.violations {
            writeln!(o, "VIOLATION {v}").unwrap();
        }
        o
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn log_digest(log: &[FinalEntry]) -> String {
    hex::encode(Sha256::digest(write_finality(log)))
}

/// Incremental prefix-consistency check over honest finality logs.
#[derive(Default)]
struct PrefixMonitor {
    canonical: Vec<FinalEntry>,
    checked: BTreeMap<AccountId, usize>,
    diverged: BTreeSet<AccountId>,
    violations: Vec<String>,
}

impl PrefixMonitor {
    fn check(&mut self, nodes: &[SimNode], tick: u64) {
        for n in nodes.iter().filter(|n| n.fault.is_honest()) {
            if self.diverged.contains(&n.id) {
                continue;
            }
            let log = n.cs.finalized();
            let from = self.checked.get(&n.id).copied().unwrap_or(0);
            for (p, e) in log.iter().enumerate().skip(from) {
                if p < self.canonical.len() {
                    if self.canonical[p] != *e {
                        self.violations.push(format!(
                            "prefix: node {} diverges at position {p} at tick {tick}",
                            n.id
                        ));
                        self.diverged.insert(n.id);
                        break;
                    }
                } else {
                    self.canonical.push(e.clone());
                }
            }
            self.checked.insert(n.id, log.len());
        }
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub export: RunExport,
    pub network: SimNetwork,
    pub statements: Vec<RewardStatement>,
    pub observers: Vec<ObserverState>,
}

fn reference_index(net: &SimNetwork) -> usize {
    (0..net.nodes.len())
        .filter(|i| net.nodes[*i].fault.is_honest())
        .min_by_key(|i| net.nodes[*i].id)
        .unwrap_or_else(|| (0..net.nodes.len()).min_by_key(|i| net.nodes[*i].id).unwrap())
}

fn safety_checks(net: &SimNetwork, violations: &mut Vec<String>) {
    let honest: Vec<&SimNode> = net.nodes.iter().filter(|n| n.fault.is_honest()).collect();
    if let Some(first) = honest.first() {
        for n in &honest[1..] {
            if n.cs.finalized() != first.cs.finalized() {
                violations.push(format!(
                    "agreement: honest nodes {} and {} finalized different logs ({} vs {} entries)",
                    first.id,
                    n.id,
                    first.cs.finalized().len(),
                    n.cs.finalized().len()
                ));
            }
        }
    }
    for n in &honest {
        let cs = &n.cs;
        let sched = cs.schedule();
        for r in cs.root_records() {
            if r.frame > 0 && !exceeds_two_thirds(r.score, sched.total(r.frame - 1)) {
                violations.push(format!(
                    "threshold: node {} root {} of frame {} has score {} of {}",
                    n.id,
                    r.id,
                    r.frame,
                    r.score,
                    sched.total(r.frame - 1)
                ));
            }
        }
        for b in cs.dag().blocks() {
            if cs.is_root(&b.id) {
                continue;
            }
            let (Some(f), Some(s)) = (cs.frame_of(&b.id), cs.score_of(&b.id)) else { continue };
            if exceeds_two_thirds(s, sched.total(f)) {
                violations.push(format!("threshold: node {} block {} has score {s} but is not a root", n.id, b.id));
            }
        }
        let interval = cs.ledger().params().checkpoint_frame_interval;
        let want: Vec<u64> = (1..).map(|i| i * interval).take_while(|f| *f < cs.frames_decided()).collect();
        let got: Vec<u64> = cs.checkpoints().iter().map(|c| c.frame).collect();
        if got != want {
            violations.push(format!("checkpoint: node {} checkpointed [{}], expected [{}]", n.id, join(&got), join(&want)));
        }
    }
}

struct Settlement {
    ledger: Ledger,
    statements: Vec<RewardStatement>,
    next_day: u64,
    rollover: Amount,
    pos: usize,
    atroposes: HashSet<crate::xdag::BlockId>,
}

impl Settlement {
    fn statement(&mut self, node: &SimNode, upto: usize, day: u64) -> RewardStatement {
        let params = self.ledger.params().clone();
        let mut pool = self.rollover;
        for d in self.next_day..=day {
            pool += daily_block_reward(d, &params);
        }
        self.next_day = self.next_day.max(day + 1);
        for p in node.cs.dag().creators() {
            let _ = self.ledger.renew_validation_stake(*p);
        }
        let mut stmt = RewardStatement::new(day, pool);
        let mut saga = SagaLedger::default();
        let dag = node.cs.dag();
        let log = node.cs.finalized();
        let window: Vec<_> = log[self.pos..upto].iter().filter_map(|e| dag.get(&e.block).cloned()).collect();
        for (e, b) in log[self.pos..upto].iter().zip(&window) {
            self.atroposes.insert(e.atropos);
            saga.award_saga_points(&self.atroposes, [b.as_ref()]);
        }
        distribute_validation_rewards(&mut stmt, &saga, &self.ledger, &params);
        route_transaction_fees(&mut stmt, window.iter().map(|b| b.as_ref()), &self.ledger, &params);
        self.rollover = stmt.remainder;
        self.pos = upto;
        stmt
    }
}

fn build_export(scenario: &Scenario, net: &SimNetwork, reference: usize, report: String) -> RunExport {
    let cs = &net.nodes[reference].cs;
    let mut blocks: Vec<_> = cs.dag().blocks().collect();
    blocks.sort_by_key(|b| (b.lamport_ts, b.id));
    let mut roots: Vec<RootRow> = cs
        .root_records()
        .into_iter()
        .map(|r| RootRow { frame: r.frame, id: r.id, creator: r.creator, weight: r.weight, score: r.score })
        .collect();
    roots.sort_by_key(|r| (r.frame, r.id));
    RunExport {
        params: scenario.params.clone(),
        dag: blocks.iter().map(|b| DagRow::from_block(b)).collect(),
        roots,
        weights: weight_rows(cs.schedule()),
        rewards: Vec::new(),
        logs: net.nodes.iter().map(|n| (n.id, n.cs.finalized().to_vec())).collect(),
        ledger: String::new(),
        report,
    }
}

pub fn run_scenario(scenario: &Scenario) -> RunOutcome {
    let cfg = &scenario.config;
    let mut net = SimNetwork::new(scenario);
    let mut violations = Vec::new();

    let ledger0 = scenario.initial_ledger();
    let total_power: u64 = scenario.participants().iter().map(|p| ledger0.power(*p).unwrap_or(0)).sum();
    let byzantine_power: u64 = scenario
        .participants()
        .iter()
        .filter(|p| !scenario.fault_of(**p).is_honest())
        .map(|p| ledger0.power(*p).unwrap_or(0))
        .sum();
    let byzantine_threshold = total_power.saturating_sub(1) / 3;
    if byzantine_power > byzantine_threshold {
        violations.push(format!(
            "byzantine power {byzantine_power} exceeds floor((W-1)/3) = {byzantine_threshold}: agreement not guaranteed"
        ));
    }

    let mut monitor = PrefixMonitor::default();
    for t in 0..cfg.max_ticks {
        net.step_tick(true);
        if (t + 1) % cfg.sample_every == 0 {
            monitor.check(&net.nodes, net.clock);
        }
    }
    net.quiesce();
    monitor.check(&net.nodes, net.clock);
    violations.extend(monitor.violations);
    safety_checks(&net, &mut violations);

    let ri = reference_index(&net);
    let reference = &net.nodes[ri];
    let params = scenario.params.clone();

    let mut set = Settlement {
        ledger: ledger0.clone(),
        statements: Vec::new(),
        next_day: 0,
        rollover: Amount::ZERO,
        pos: 0,
        atroposes: HashSet::new(),
    };
    for cp in reference.cs.checkpoints() {
        set.ledger.advance_to_day(cp.day);
        for m in &cp.applied {
            let _ = m.apply(&mut set.ledger);
        }
        for a in &cp.flagged {
            let _ = set.ledger.flag(*a);
        }
        let stmt = set.statement(reference, cp.finalized_blocks as usize, cp.day);
        set.statements.push(stmt);
    }
    let end_day = (net.clock / cfg.ticks_per_day).max(set.next_day.saturating_sub(1));
    set.ledger.advance_to_day(end_day);
    let mut last = set.statement(reference, reference.cs.finalized().len(), end_day);

    // observers audit the run before the settlement statement is final
    let mut observers: Vec<ObserverState> = scenario.observers.iter().map(|o| ObserverState::new(*o)).collect();
    observers.sort_by_key(|o| o.id);
    let mut audit = build_export(scenario, &net, ri, String::new());
    audit.rewards = set.statements.clone();
    let findings = if observers.is_empty() { None } else { Some(post_validate(&audit)) };
    let mut registry = ReportRegistry::default();
    if let Some(report) = &findings {
        for o in &mut observers {
            match report_and_reward(&mut registry, o, report, &mut set.ledger, &mut last, &params) {
                Ok(_) | Err(ObserverError::DuplicateReport) => {}
                Err(e) => violations.push(format!("observer {}: {e}", o.id)),
            }
        }
    }
    let mut to_burn: BTreeSet<AccountId> = set.ledger.flagged().collect();
    to_burn.extend(reference.cs.detect_double_vote().iter().map(|d| d.creator));
    let burnt: BTreeSet<AccountId> = last.burns.iter().map(|b| b.account).collect();
    for a in to_burn.difference(&burnt) {
        let _ = set.ledger.flag(*a);
        if let Ok(b) = burn_deposit(&mut set.ledger, &mut SagaLedger::default(), *a, None, &params) {
            last.record_burn(b);
        }
    }
    set.statements.push(last);
    let statements = set.statements;

    let lag = LagStats::from_samples(
        reference
            .cs
            .finalized()
            .iter()
            .zip(&reference.final_ticks)
            .map(|(e, t)| t.saturating_sub(net.created_at.get(&e.block).copied().unwrap_or(0)))
            .collect(),
    );

    let nodes: Vec<NodeSummary> = net
        .nodes
        .iter()
        .map(|n| NodeSummary {
            id: n.id,
            fault: n.fault,
            role: ledger0.role(n.id).unwrap_or(Role::Observer),
            blocks_created: n.blocks_created,
            dag_blocks: n.cs.dag().len(),
            finalized: n.cs.finalized().len(),
            frames_decided: n.cs.frames_decided(),
            max_frame: n.cs.max_frame().unwrap_or(0),
            forks_seen: n.forks_seen,
            rejected: n.rejected,
            log_digest: log_digest(n.cs.finalized()),
        })
        .collect();

    let report = RunReport {
        seed: cfg.seed,
        ticks: net.clock,
        blocks_created: net.nodes.iter().map(|n| n.blocks_created).sum(),
        messages: net.stats.sent.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        delivered: net.stats.delivered,
        dropped: net.stats.dropped,
        blocks_sent: net.stats.blocks_sent,
        reference: reference.id,
        finalized: reference.cs.finalized().len(),
        frames_decided: reference.cs.frames_decided(),
        lag,
        checkpoints: reference.cs.checkpoints().iter().map(|c| c.frame).collect(),
        total_power,
        byzantine_power,
        byzantine_threshold,
        forkers: reference.cs.dag().cheaters().keys().copied().collect(),
        burns: statements.iter().flat_map(|s| s.burns.iter().map(|b| (b.account, b.stake))).collect(),
        statements: statements.len(),
        total_paid: statements.iter().map(|s| s.total_paid()).sum(),
        spv_credit: statements.iter().map(|s| s.spv_credit).sum(),
        observer_points: observers.iter().map(|o| (o.id, o.saga_points)).collect(),
        audit_findings: findings.as_ref().map_or(0, |f| f.findings.len()),
        violations,
        nodes,
    };

    let mut export = build_export(scenario, &net, ri, report.to_kv());
    export.rewards = statements.clone();
    export.ledger = write_ledger_snapshot(&set.ledger.snapshot());
    RunOutcome { report, export, network: net, statements, observers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn run(text: &str) -> RunOutcome {
        run_scenario(&ScenarioConfig::from_toml(text, &[]).unwrap().resolve().unwrap())
    }

    const FIG4: &str = "nodes = [\"0:1\", \"1:1\", \"2:1\", \"3:1000\", \"4:2000\"]\nmax_ticks = 300\n";

    #[test]
    fn nearest_rank_percentiles() {
        let s = LagStats::from_samples((1..=10).rev().collect());
        assert_eq!((s.count, s.p50, s.p90, s.p99, s.max), (10, 5, 9, 10, 10));
        let s = LagStats::from_samples(vec![7]);
        assert_eq!((s.p50, s.p99), (7, 7));
        assert_eq!(LagStats::from_samples(vec![]), LagStats::default());
    }

    #[test]
    fn same_seed_same_report() {
        let a = run(FIG4).report.to_kv();
        assert_eq!(a, run(FIG4).report.to_kv());
        assert!(a.starts_with("ok=true\n"));
        assert!(a.lines().all(|l| l.contains('=')));
        assert_ne!(a, run(&format!("{FIG4}seed = 1\n")).report.to_kv());
    }

    #[test]
    fn byzantine_power_over_threshold_is_reported() {
        let out = run(&format!("{FIG4}faults = [\"4:equivocate:0.3\"]\n"));
        assert_eq!(out.report.total_power, 3003);
        assert_eq!(out.report.byzantine_threshold, 1000);
        assert!(out.report.violations[0].starts_with("byzantine power 2000 exceeds"));
        assert!(!out.report.ok());
    }

    #[test]
    fn forker_is_burnt_and_statements_conserve() {
        let text = "nodes = [\"0:1\", \"1:1\", \"2:1000\", \"3:1000\", \"4:1000\", \"5:1000\"]\n\
                    faults = [\"5:equivocate:0.3\"]\nobservers = [9]\nmax_ticks = 300\n";
        let out = run(text);
        assert!(out.report.ok(), "{}", out.report.to_text());
        assert_eq!(out.report.forkers, vec![AccountId(5)]);
        let last = out.statements.last().unwrap();
        let burn = last.burns.iter().find(|b| b.account == AccountId(5)).unwrap();
        assert_eq!(burn.stake, Amount::from_tokens(1000));
        assert_eq!(burn.reporter, Some(AccountId(9)));
        assert_eq!(burn.reporter_credit, Amount::from_tokens(100));
        assert!(out.statements.iter().all(|s| s.conserves()));
        assert_eq!(out.observers[0].id, AccountId(9));
    }
}
