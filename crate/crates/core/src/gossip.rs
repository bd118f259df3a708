//! Simulated gossip: virtual ticks, seeded latencies and a message queue.
//!
//! Each tick first delivers every message due, then gives every node one
//! chance to create a block. A creating node picks its other-parents with
//! the stake-aware k-peer rule, asks those peers to sync, builds on their
//! tops it already knows and broadcasts the new block to everyone.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{ConsensusState, WeightSchedule};
use crate::ledger::{AccountId, Role};
use crate::scenario::Scenario;
use crate::xdag::{BlockId, EventBlock, Transaction, XDag};

/// How the first, opposite-type peer is weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Probability proportional to stake.
    #[default]
    Proportional,
    /// Probability proportional to 1 / stake.
    Inverse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    Honest,
    /// Crashes after the given tick: no sends, no receives.
    SilentAfter(u64),
    /// With this probability per creation, signs two blocks at the same seq
    /// and sends them to disjoint halves of the network.
    Equivocate(f64),
    /// Creates every tick with this many zero-fee transactions.
    Spam(usize),
}

impl Fault {
    pub fn is_honest(self) -> bool {
        self == Fault::Honest
    }

    pub fn live_at(self, tick: u64) -> bool {
        !matches!(self, Fault::SilentAfter(t) if tick > t)
    }
}

impl std::fmt::Display for Fault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fault::Honest => write!(f, "honest"),
            Fault::SilentAfter(t) => write!(f, "silent:{t}"),
            Fault::Equivocate(r) => write!(f, "equivocate:{r}"),
            Fault::Spam(n) => write!(f, "spam:{n}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GossipError {
    #[error("no opposite-type peer with a known block")]
    NoOppositeTypePeer,
    #[error("fewer than k-1 eligible peers")]
    NotEnoughPeers,
}

/// A candidate other-parent creator as the selecting node sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeerInfo {
    pub id: AccountId,
    pub role: Role,
    pub stake: u64,
}

fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return Some(i);
        }
        r -= w;
    }
    weights.iter().rposition(|w| *w > 0.0)
}

/// One opposite-type peer weighted by stake (or inverse stake), then k−2
/// further distinct peers of any type weighted by stake.
pub fn k_peer_selection<R: Rng>(
    me: AccountId,
    my_role: Role,
    peers: &[PeerInfo],
    k: usize,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<Vec<AccountId>, GossipError> {
    let want = my_role.opposite().ok_or(GossipError::NoOppositeTypePeer)?;
    let opposite: Vec<&PeerInfo> = peers.iter().filter(|p| p.id != me && p.role == want && p.stake > 0).collect();
    let weights: Vec<f64> = opposite
        .iter()
        .map(|p| match mode {
            SelectionMode::Proportional => p.stake as f64,
            SelectionMode::Inverse => 1.0 / p.stake as f64,
        })
        .collect();
    let first = pick_weighted(&weights, rng).ok_or(GossipError::NoOppositeTypePeer)?;
    let mut chosen = vec![opposite[first].id];
    let mut rest: Vec<&PeerInfo> =
        peers.iter().filter(|p| p.id != me && p.id != chosen[0] && p.stake > 0).collect();
    while chosen.len() < k - 1 {
        let w: Vec<f64> = rest.iter().map(|p| p.stake as f64).collect();
        let i = pick_weighted(&w, rng).ok_or(GossipError::NotEnoughPeers)?;
        chosen.push(rest.swap_remove(i).id);
    }
    Ok(chosen)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    SyncRequest { known_heights: BTreeMap<AccountId, u64>, wanted: Vec<BlockId> },
    SyncResponse { blocks: Vec<Arc<EventBlock>> },
    Broadcast { blocks: Vec<Arc<EventBlock>> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncMessage {
    pub from: AccountId,
    pub to: AccountId,
    pub payload: Payload,
}

impl SyncMessage {
    pub fn kind(&self) -> &'static str {
        match self.payload {
            Payload::SyncRequest { .. } => "sync_request",
            Payload::SyncResponse { .. } => "sync_response",
            Payload::Broadcast { .. } => "broadcast",
        }
    }
}

/// What a responder sends back: every block above the requester's heights
/// plus the ancestry of explicitly wanted blocks the requester may lack
/// (same-seq fork branches hide behind the heights), parents first.
pub fn sync_blocks(dag: &XDag, heights: &BTreeMap<AccountId, u64>, wanted: &[BlockId]) -> Vec<Arc<EventBlock>> {
    let mut out = dag.blocks_above(heights);
    if !wanted.is_empty() {
        let mut have: HashSet<BlockId> = out.iter().map(|b| b.id).collect();
        let mut stack: Vec<BlockId> = wanted.iter().copied().filter(|w| dag.contains(w)).collect();
        while let Some(id) = stack.pop() {
            if have.contains(&id) {
                continue;
            }
            let b = dag.get(&id).unwrap();
            let requested = wanted.contains(&id);
            let maybe_missing =
                heights.get(&b.creator).is_none_or(|h| b.seq > *h) || dag.is_cheater(b.creator);
            if !(requested || maybe_missing) {
                continue;
            }
            have.insert(id);
            out.push(b.clone());
            stack.extend(b.parents().copied());
        }
        out.sort_by_key(|b| (b.lamport_ts, b.id));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub sent: BTreeMap<&'static str, u64>,
    pub delivered: u64,
    pub dropped: u64,
    pub blocks_sent: u64,
}

impl NetStats {
    pub fn total_sent(&self) -> u64 {
        self.sent.values().sum()
    }
}

/// One simulated participant.
#[derive(Clone, Debug)]
pub struct SimNode {
    pub id: AccountId,
    pub fault: Fault,
    pub cs: ConsensusState,
    buffered: HashMap<BlockId, Arc<EventBlock>>,
    waiting_on: HashMap<BlockId, Vec<BlockId>>,
    wanted: BTreeSet<BlockId>,
    /// Tick at which each finality-log position was reached.
    pub final_ticks: Vec<u64>,
    pub blocks_created: u64,
    pub forks_seen: u64,
    pub rejected: u64,
    pub skipped_creations: u64,
}

impl SimNode {
    pub fn new(id: AccountId, fault: Fault, cs: ConsensusState) -> Self {
        SimNode {
            id,
            fault,
            cs,
            buffered: HashMap::new(),
            waiting_on: HashMap::new(),
            wanted: BTreeSet::new(),
            final_ticks: Vec::new(),
            blocks_created: 0,
            forks_seen: 0,
            rejected: 0,
            skipped_creations: 0,
        }
    }

    pub fn buffered_len(&self) -> usize {
        self.buffered.len()
    }

    pub fn wanted(&self) -> Vec<BlockId> {
        self.wanted.iter().copied().collect()
    }

    fn knows(&self, id: &BlockId) -> bool {
        self.cs.dag().contains(id) || self.buffered.contains_key(id)
    }

    /// Inserts a block, or buffers it until its parents arrive. Returns the
    /// number of blocks that entered the DAG.
    pub fn receive(&mut self, block: Arc<EventBlock>, tick: u64) -> usize {
        if self.knows(&block.id) {
            return 0;
        }
        let missing: Vec<BlockId> = block.parents().filter(|p| !self.cs.dag().contains(p)).copied().collect();
        self.wanted.remove(&block.id);
        if !missing.is_empty() {
            for m in &missing {
                self.waiting_on.entry(*m).or_default().push(block.id);
                if !self.buffered.contains_key(m) {
                    self.wanted.insert(*m);
                }
            }
            self.buffered.insert(block.id, block);
            return 0;
        }
        let mut inserted = 0;
        let mut ready = vec![block];
        while let Some(b) = ready.pop() {
            let id = b.id;
            if !self.insert_now(b, tick) {
                continue;
            }
            inserted += 1;
            for child in self.waiting_on.remove(&id).unwrap_or_default() {
                let Some(c) = self.buffered.get(&child) else { continue };
                if c.parents().all(|p| self.cs.dag().contains(p)) {
                    ready.push(self.buffered.remove(&child).unwrap());
                }
            }
        }
        inserted
    }

    fn insert_now(&mut self, block: Arc<EventBlock>, tick: u64) -> bool {
        match self.cs.insert(block) {
            Ok(s) if s.duplicate => false,
            Ok(s) => {
                if s.fork.is_some() {
                    self.forks_seen += 1;
                }
                self.final_ticks.extend(std::iter::repeat_n(tick, s.newly_final));
                true
            }
            Err(_) => {
                self.rejected += 1;
                false
            }
        }
    }

    /// Role, stake-weighted peer view of the current local DAG.
    pub fn peer_view(&self) -> Vec<PeerInfo> {
        let ledger = self.cs.ledger();
        self.cs
            .dag()
            .creators()
            .iter()
            .filter(|c| **c != self.id)
            .filter_map(|c| {
                let top = self.cs.dag().top(*c)?;
                Some(PeerInfo { id: *c, role: top.creator_role, stake: ledger.effective_stake(*c).unwrap_or(0) })
            })
            .collect()
    }
}

/// Tunables copied from the scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSettings {
    pub k: usize,
    pub latency_min: u64,
    pub latency_max: u64,
    pub create_prob: f64,
    pub selection_mode: SelectionMode,
    pub max_txns_per_block: usize,
    pub max_fee: u64,
    pub ticks_per_day: u64,
}

/// Rounds of all-pairs anti-entropy attempted after the drain.
const MAX_SYNC_ROUNDS: usize = 16;

pub struct SimNetwork {
    pub nodes: Vec<SimNode>,
    index: HashMap<AccountId, usize>,
    rng: ChaCha8Rng,
    pub clock: u64,
    queue: BTreeMap<(u64, u64), SyncMessage>,
    next_seq: u64,
    settings: NetSettings,
    pub stats: NetStats,
    /// Creation tick of every block made in the run.
    pub created_at: HashMap<BlockId, u64>,
}

impl SimNetwork {
    pub fn new(scenario: &Scenario) -> Self {
        let cfg = &scenario.config;
        let participants = scenario.participants();
        let ledger = scenario.initial_ledger();
        let schedule = Arc::new(WeightSchedule::build(&ledger, &participants, &scenario.stake_changes));
        let nodes: Vec<SimNode> = participants
            .iter()
            .map(|id| {
                let cs = ConsensusState::with_schedule(
                    *id,
                    scenario.params.clone(),
                    &participants,
                    ledger.clone(),
                    scenario.stake_changes.clone(),
                    schedule.clone(),
                );
                SimNode::new(*id, scenario.fault_of(*id), cs)
            })
            .collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        SimNetwork {
            nodes,
            index,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clock: 0,
            queue: BTreeMap::new(),
            next_seq: 0,
            settings: NetSettings {
                k: cfg.k,
                latency_min: cfg.latency_min,
                latency_max: cfg.latency_max,
                create_prob: cfg.create_prob,
                selection_mode: cfg.selection_mode,
                max_txns_per_block: cfg.max_txns_per_block,
                max_fee: cfg.max_fee,
                ticks_per_day: cfg.ticks_per_day,
            },
            stats: NetStats::default(),
            created_at: HashMap::new(),
        }
    }

    pub fn node(&self, id: AccountId) -> Option<&SimNode> {
        self.index.get(&id).map(|i| &self.nodes[*i])
    }

    pub fn pending_messages(&self) -> usize {
        self.queue.len()
    }

    pub fn send(&mut self, from: AccountId, to: AccountId, payload: Payload) {
        let delay = self.rng.random_range(self.settings.latency_min..=self.settings.latency_max);
        let msg = SyncMessage { from, to, payload };
        *self.stats.sent.entry(msg.kind()).or_insert(0) += 1;
        if let Payload::SyncResponse { blocks } | Payload::Broadcast { blocks } = &msg.payload {
            self.stats.blocks_sent += blocks.len() as u64;
        }
        self.queue.insert((self.clock + delay, self.next_seq), msg);
        self.next_seq += 1;
    }

    fn deliver_due(&mut self) -> usize {
        let mut inserted = 0;
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.clock {
                break;
            }
            let msg = entry.remove();
            inserted += self.node_tick_respond(msg);
        }
        inserted
    }

    /// Handles one delivered message; returns blocks inserted.
    pub fn node_tick_respond(&mut self, msg: SyncMessage) -> usize {
        let i = self.index[&msg.to];
        if !self.nodes[i].fault.live_at(self.clock) {
            self.stats.dropped += 1;
            return 0;
        }
        self.stats.delivered += 1;
        match msg.payload {
            Payload::SyncRequest { known_heights, wanted } => {
                let blocks = sync_blocks(self.nodes[i].cs.dag(), &known_heights, &wanted);
                if !blocks.is_empty() {
                    self.send(msg.to, msg.from, Payload::SyncResponse { blocks });
                }
                0
            }
            Payload::SyncResponse { blocks } | Payload::Broadcast { blocks } => {
                let tick = self.clock;
                let node = &mut self.nodes[i];
                blocks.into_iter().map(|b| node.receive(b, tick)).sum()
            }
        }
    }

    fn sync_request(&self, i: usize) -> Payload {
        let n = &self.nodes[i];
        Payload::SyncRequest { known_heights: n.cs.dag().known_heights(), wanted: n.wanted() }
    }

    fn random_txns(&mut self, creator: AccountId, seq: u64, fault: Fault) -> Vec<Transaction> {
        let (count, spam) = match fault {
            Fault::Spam(n) => (n, true),
            _ => (self.rng.random_range(0..=self.settings.max_txns_per_block), false),
        };
        (0..count)
            .map(|t| Transaction {
                payload: format!("{creator}:{seq}:{t}").into_bytes(),
                fee: if spam || self.settings.max_fee == 0 { 0 } else { self.rng.random_range(1..=self.settings.max_fee) },
            })
            .collect()
    }

    /// One creation opportunity for node `i`. Returns the new block ids.
    pub fn node_tick_create(&mut self, i: usize) -> Vec<BlockId> {
        let (id, fault) = (self.nodes[i].id, self.nodes[i].fault);
        if !fault.live_at(self.clock) {
            return Vec::new();
        }
        let p = if matches!(fault, Fault::Spam(_)) { 1.0 } else { self.settings.create_prob };
        if !self.rng.random_bool(p) {
            return Vec::new();
        }
        let cs = &self.nodes[i].cs;
        let top = cs.dag().top(id).map(|t| t.id);
        let role = cs.role_for_parent(id, top.as_ref());
        if role == Role::Observer {
            return Vec::new();
        }
        let seq = cs.dag().top(id).map_or(0, |t| t.seq + 1);
        let others: Vec<BlockId> = if top.is_none() {
            Vec::new()
        } else {
            let view = self.nodes[i].peer_view();
            let picked =
                match k_peer_selection(id, role, &view, self.settings.k, self.settings.selection_mode, &mut self.rng) {
                    Ok(p) => p,
                    Err(_) => {
                        self.nodes[i].skipped_creations += 1;
                        return Vec::new();
                    }
                };
            for peer in &picked {
                let req = self.sync_request(i);
                self.send(id, *peer, req);
            }
            picked.iter().map(|p| self.nodes[i].cs.dag().top(*p).unwrap().id).collect()
        };
        let txns = self.random_txns(id, seq, fault);
        let block = match self.nodes[i].cs.dag().create_event(id, role, &others, txns) {
            Ok(b) => Arc::new(b),
            Err(_) => {
                self.nodes[i].skipped_creations += 1;
                return Vec::new();
            }
        };
        let twin = match fault {
            Fault::Equivocate(rate) if top.is_some() && self.rng.random_bool(rate) => {
                let mut txns = block.transactions.clone();
                txns.push(Transaction { payload: format!("{id}:{seq}:twin").into_bytes(), fee: 0 });
                Some(Arc::new(EventBlock::assemble(
                    id,
                    role,
                    seq,
                    block.self_parent,
                    block.other_parents.clone(),
                    txns,
                    block.lamport_ts,
                )))
            }
            _ => None,
        };

        let tick = self.clock;
        let mut made = vec![block.id];
        self.created_at.insert(block.id, tick);
        self.nodes[i].blocks_created += 1;
        self.nodes[i].receive(block.clone(), tick);
        let mut peers: Vec<AccountId> = self.nodes.iter().map(|n| n.id).filter(|p| *p != id).collect();
        match twin {
            None => {
                for p in peers {
                    self.send(id, p, Payload::Broadcast { blocks: vec![block.clone()] });
                }
            }
            Some(twin) => {
                made.push(twin.id);
                self.created_at.insert(twin.id, tick);
                self.nodes[i].blocks_created += 1;
                self.nodes[i].receive(twin.clone(), tick);
                peers.shuffle(&mut self.rng);
                let half = peers.len() / 2;
                for (n, p) in peers.into_iter().enumerate() {
                    let b = if n < half { block.clone() } else { twin.clone() };
                    self.send(id, p, Payload::Broadcast { blocks: vec![b] });
                }
            }
        }
        made
    }

    /// Delivers due messages, then (when `create`) offers every node a
    /// creation slot, then advances the clock.
    pub fn step_tick(&mut self, create: bool) -> usize {
        let day = self.clock / self.settings.ticks_per_day;
        for n in &mut self.nodes {
            n.cs.set_day(day);
        }
        let mut inserted = self.deliver_due();
        if create {
            for i in 0..self.nodes.len() {
                inserted += self.node_tick_create(i).len();
            }
        }
        self.clock += 1;
        inserted
    }

    /// Runs ticks without creation until no message is in flight.
    pub fn drain(&mut self) -> usize {
        let mut inserted = 0;
        while !self.queue.is_empty() {
            inserted += self.step_tick(false);
        }
        inserted
    }

    /// Stops creation, drains the queue, then repeats all-pairs sync rounds
    /// among live nodes until a round inserts nothing.
    pub fn quiesce(&mut self) -> usize {
        let mut rounds = 0;
        self.drain();
        for _ in 0..MAX_SYNC_ROUNDS {
            rounds += 1;
            let live: Vec<usize> =
                (0..self.nodes.len()).filter(|i| self.nodes[*i].fault.live_at(self.clock)).collect();
            for &a in &live {
                for &b in &live {
                    if a != b {
                        let req = self.sync_request(a);
                        self.send(self.nodes[a].id, self.nodes[b].id, req);
                    }
                }
            }
            if self.drain() == 0 {
                break;
            }
        }
        rounds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn peers(stakes: &[(u32, Role, u64)]) -> Vec<PeerInfo> {
        stakes.iter().map(|(i, r, s)| PeerInfo { id: AccountId(*i), role: *r, stake: *s }).collect()
    }

    #[test]
    fn selection_is_stake_proportional() {
        let view = peers(&[(1, Role::Validator, 1000), (2, Role::Validator, 2000), (3, Role::User, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut hits = 0;
        for _ in 0..n {
            let p = k_peer_selection(AccountId(0), Role::User, &view, 2, SelectionMode::Proportional, &mut rng).unwrap();
            assert_eq!(p.len(), 1);
            hits += (p[0] == AccountId(2)) as u32;
        }
        let f = hits as f64 / n as f64;
        assert!((f - 2.0 / 3.0).abs() < 0.02, "{f}");

        let mut hits = 0;
        for _ in 0..n {
            let p = k_peer_selection(AccountId(0), Role::User, &view, 2, SelectionMode::Inverse, &mut rng).unwrap();
            hits += (p[0] == AccountId(2)) as u32;
        }
        let f = hits as f64 / n as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.02, "{f}");
    }

    #[test]
    fn selection_errors_and_k3() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let only_validators = peers(&[(1, Role::Validator, 1000)]);
        assert_eq!(
            k_peer_selection(AccountId(0), Role::Validator, &only_validators, 2, SelectionMode::Proportional, &mut rng),
            Err(GossipError::NoOppositeTypePeer)
        );
        let view = peers(&[(1, Role::Validator, 1000), (2, Role::Validator, 2000), (3, Role::User, 1)]);
        for _ in 0..200 {
            let p = k_peer_selection(AccountId(3), Role::User, &view, 3, SelectionMode::Proportional, &mut rng).unwrap();
            assert_eq!(p.len(), 2);
            assert_ne!(p[0], p[1]);
            assert!(!p.contains(&AccountId(3)));
        }
        assert_eq!(
            k_peer_selection(AccountId(3), Role::User, &view, 4, SelectionMode::Proportional, &mut rng),
            Err(GossipError::NotEnoughPeers)
        );
    }

    fn small_net(extra: &[&str]) -> SimNetwork {
        let text = "nodes = [\"0:1\", \"1:1\", \"2:1\", \"3:1000\", \"4:2000\"]\nseed = 7\n";
        let o: Vec<_> = extra.iter().map(|s| crate::scenario::parse_override(s).unwrap()).collect();
        SimNetwork::new(&ScenarioConfig::from_toml(text, &o).unwrap().resolve().unwrap())
    }

    #[test]
    fn sync_returns_exactly_the_missing_blocks() {
        let mut net = small_net(&[]);
        for _ in 0..40 {
            net.step_tick(true);
        }
        net.quiesce();
        let src = net.nodes[3].cs.dag();
        assert!(sync_blocks(src, &src.known_heights(), &[]).is_empty());
        let mut heights = src.known_heights();
        let c = AccountId(4);
        let h = heights[&c];
        heights.insert(c, h - 3);
        let got = sync_blocks(src, &heights, &[]);
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|b| b.creator == c && b.seq > h - 3));
        assert!(got.windows(2).all(|w| w[0].lamport_ts < w[1].lamport_ts));
    }

    #[test]
    fn child_before_parent_is_buffered() {
        let mut net = small_net(&[]);
        for _ in 0..30 {
            net.step_tick(true);
        }
        net.quiesce();
        let src = net.nodes[0].cs.dag().clone();
        let order: Vec<Arc<EventBlock>> = src.blocks_above(&BTreeMap::new());
        let mut fresh = small_net(&[]);
        let node = &mut fresh.nodes[1];
        let (last, rest) = order.split_last().unwrap();
        assert_eq!(node.receive(last.clone(), 0), 0);
        assert!(node.buffered_len() == 1);
        let mut total = 0;
        for b in rest.iter().rev() {
            total += node.receive(b.clone(), 0);
        }
        assert_eq!(total, order.len());
        assert_eq!(node.buffered_len(), 0);
        assert_eq!(node.cs.dag().len(), src.len());
    }

    #[test]
    fn silent_node_stops_and_equivocator_forks() {
        let mut net = small_net(&["faults=[\"1:silent:10\", \"4:equivocate:0.5\"]"]);
        for _ in 0..60 {
            net.step_tick(true);
        }
        net.quiesce();
        let silent = &net.nodes[1];
        assert!(silent.cs.dag().blocks().filter(|b| b.creator == AccountId(1)).all(|b| net.created_at[&b.id] <= 10));
        let honest = &net.nodes[0];
        assert!(honest.cs.dag().is_cheater(AccountId(4)));
        assert!(honest.forks_seen > 0);
        // after quiescence every live honest node holds the same DAG
        assert_eq!(net.nodes[0].cs.dag().len(), net.nodes[2].cs.dag().len());
        assert_eq!(net.nodes[0].cs.finalized(), net.nodes[3].cs.finalized());
    }

    #[test]
    fn honest_block_creation_is_cross_typed() {
        let mut net = small_net(&[]);
        for _ in 0..100 {
            net.step_tick(true);
        }
        let dag = net.nodes[0].cs.dag();
        for b in dag.blocks().filter(|b| !b.is_leaf()) {
            assert_eq!(b.other_parents.len(), 1);
            let o = dag.get(&b.other_parents[0]).unwrap();
            assert_eq!(Some(o.creator_role), b.creator_role.opposite());
        }
    }
}
