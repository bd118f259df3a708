//! Per-node finality pipeline.
//!
//! Every inserted block is assigned a frame. A block whose parents top out
//! at frame `f` becomes a root of `f + 1` when the frame-`f` roots it can
//! reach carry strictly more than two thirds of that frame's total weight.
//! A block that enters frame `f` only through an other-parent (its
//! self-parent sits in an earlier frame) is a root of `f` when it passes the
//! same test against the frame `f - 1` roots.
//! Roots of `f + 1` vote on each frame-`f` root (yes iff they reach it);
//! roots of `f + 2` and later tally the votes they can reach and decide
//! once one side holds a supermajority. Famous roots become Atroposes and
//! finalize their not-yet-final ancestry, one frame at a time.
//!
//! Root counting skips creators whose fork is visible inside the counting
//! block's own ancestry. Because that test only depends on the block's past,
//! frames, votes and the final order are pure functions of DAG content.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::ledger::{AccountId, Ledger, LedgerError, Role, StakeKind};
use crate::params::ProtocolParams;
use crate::rewards::SagaLedger;
use crate::xdag::{BlockId, EventBlock, InsertOutcome, XDag, XDagError};

/// Frames without a decision before the fame coin is consulted.
pub const COIN_AFTER_FRAMES: u64 = 8;

/// A stake change queued for a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StakeMutation {
    /// New tokens credited and staked for validation.
    Deposit { account: AccountId, amount: u64 },
    /// Validation stake moved into the exit lock.
    Exit { account: AccountId, amount: u64 },
}

impl StakeMutation {
    pub fn account(&self) -> AccountId {
        match self {
            StakeMutation::Deposit { account, .. } | StakeMutation::Exit { account, .. } => *account,
        }
    }

    pub fn apply(&self, ledger: &mut Ledger) -> Result<(), LedgerError> {
        match *self {
            StakeMutation::Deposit { account, amount } => {
                let mut trial = ledger.clone();
                trial.credit_tokens(account, amount)?;
                trial.stake_tokens(account, StakeKind::Validation, amount)?;
                *ledger = trial;
                Ok(())
            }
            StakeMutation::Exit { account, amount } => ledger.exit_validation(account, amount),
        }
    }
}

/// Consensus weights in force from `first_frame` on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Epoch {
    pub first_frame: u64,
    pub powers: BTreeMap<AccountId, u64>,
    pub roles: BTreeMap<AccountId, Role>,
    pub total: u64,
}

impl Epoch {
    fn from_ledger(first_frame: u64, ledger: &Ledger, participants: &[AccountId]) -> Self {
        let mut powers = BTreeMap::new();
        let mut roles = BTreeMap::new();
        for p in participants {
            powers.insert(*p, ledger.power(*p).unwrap_or(0));
            roles.insert(*p, ledger.role(*p).unwrap_or(Role::Observer));
        }
        let total = powers.values().sum();
        Epoch { first_frame, powers, roles, total }
    }
}

/// Piecewise-constant weight table: stake changes only take effect in the
/// frames after the checkpoint they were queued for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightSchedule {
    epochs: Vec<Epoch>,
}

impl WeightSchedule {
    pub fn build(
        ledger: &Ledger,
        participants: &[AccountId],
        queued: &BTreeMap<u64, Vec<StakeMutation>>,
    ) -> Self {
        let mut ledger = ledger.clone();
        let mut epochs = vec![Epoch::from_ledger(0, &ledger, participants)];
        for (frame, mutations) in queued {
            for m in mutations {
                // rejected mutations are skipped the same way at the checkpoint
                let _ = m.apply(&mut ledger);
            }
            epochs.push(Epoch::from_ledger(frame + 1, &ledger, participants));
        }
        WeightSchedule { epochs }
    }

    pub fn from_epochs(mut epochs: Vec<Epoch>) -> Self {
        epochs.sort_by_key(|e| e.first_frame);
        assert!(epochs.first().is_some_and(|e| e.first_frame == 0), "schedule must start at frame 0");
        WeightSchedule { epochs }
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn epoch_at(&self, frame: u64) -> &Epoch {
        let i = self.epochs.partition_point(|e| e.first_frame <= frame);
        &self.epochs[i - 1]
    }

    pub fn power(&self, frame: u64, creator: AccountId) -> u64 {
        self.epoch_at(frame).powers.get(&creator).copied().unwrap_or(0)
    }

    pub fn role(&self, frame: u64, creator: AccountId) -> Role {
        self.epoch_at(frame).roles.get(&creator).copied().unwrap_or(Role::Observer)
    }

    pub fn total(&self, frame: u64) -> u64 {
        self.epoch_at(frame).total
    }
}

/// True when `score` is strictly more than two thirds of `total`.
pub fn exceeds_two_thirds(score: u64, total: u64) -> bool {
    3 * score as u128 > 2 * total as u128
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fame {
    Undecided,
    Famous,
    NotFamous,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootRecord {
    pub id: BlockId,
    pub creator: AccountId,
    pub frame: u64,
    pub weight: u64,
    /// Weight of previous-frame roots reached when the root was elected
    /// (a leaf's own weight).
    pub score: u64,
    pub fame: Fame,
}

/// One line of a node's finality log.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FinalEntry {
    pub position: u64,
    pub block: BlockId,
    pub atropos: BlockId,
    pub frame: u64,
    pub lamport: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub frame: u64,
    /// Node-local simulated day at which the checkpoint fired.
    pub day: u64,
    pub finalized_blocks: u64,
    pub ledger_digest: String,
    pub applied: Vec<StakeMutation>,
    pub rejected: Vec<(StakeMutation, LedgerError)>,
    pub flagged: Vec<AccountId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DoubleVote {
    pub creator: AccountId,
    pub first: BlockId,
    pub second: BlockId,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error(transparent)]
    Dag(#[from] XDagError),
    #[error("block {id} stamps role {stamped} but its creator is {expected} at frame {frame}")]
    RoleMismatch { id: BlockId, stamped: Role, expected: Role, frame: u64 },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("{0} is not a famous root")]
    NotFamous(BlockId),
    #[error("frames before {0} are not all decided")]
    EarlierFramesUndecided(u64),
}

/// What one insertion changed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InsertSummary {
    pub duplicate: bool,
    pub fork: Option<(AccountId, BlockId, BlockId)>,
    pub newly_final: usize,
    pub checkpoints: Vec<u64>,
}

#[derive(Clone, Copy, Debug)]
struct VoteRecord {
    vote: bool,
    decision: Option<bool>,
}

#[derive(Clone, Debug)]
struct RootState {
    frame: u64,
    weight: u64,
    score: u64,
    prev: Vec<u32>,
    fame: Fame,
}

#[derive(Clone, Debug)]
pub struct ConsensusState {
    node: AccountId,
    params: ProtocolParams,
    dag: XDag,
    schedule: Arc<WeightSchedule>,
    ledger: Ledger,
    queued: BTreeMap<u64, Vec<StakeMutation>>,
    frames: Vec<u64>,
    scores: Vec<u64>,
    roots: Vec<Vec<u32>>,
    root_state: HashMap<u32, RootState>,
    votes: HashMap<(u32, u32), VoteRecord>,
    undecided: Vec<u32>,
    next_frame: u64,
    finalized: Vec<FinalEntry>,
    is_final: Vec<bool>,
    atroposes: HashSet<BlockId>,
    final_by_seq: HashMap<(AccountId, u64), BlockId>,
    double_votes: BTreeMap<AccountId, DoubleVote>,
    checkpoints: Vec<Checkpoint>,
    saga: SagaLedger,
    current_day: u64,
}

impl ConsensusState {
    pub fn new(
        node: AccountId,
        params: ProtocolParams,
        participants: &[AccountId],
        ledger: Ledger,
        queued: BTreeMap<u64, Vec<StakeMutation>>,
    ) -> Self {
        let schedule = Arc::new(WeightSchedule::build(&ledger, participants, &queued));
        Self::with_schedule(node, params, participants, ledger, queued, schedule)
    }

    /// Shares a precomputed schedule, which must match `ledger` and `queued`.
    pub fn with_schedule(
        node: AccountId,
        params: ProtocolParams,
        participants: &[AccountId],
        ledger: Ledger,
        queued: BTreeMap<u64, Vec<StakeMutation>>,
        schedule: Arc<WeightSchedule>,
    ) -> Self {
        ConsensusState {
            node,
            dag: XDag::new(params.k, participants),
            params,
            schedule,
            ledger,
            queued,
            frames: Vec::new(),
            scores: Vec::new(),
            roots: Vec::new(),
            root_state: HashMap::new(),
            votes: HashMap::new(),
            undecided: Vec::new(),
            next_frame: 0,
            finalized: Vec::new(),
            is_final: Vec::new(),
            atroposes: HashSet::new(),
            final_by_seq: HashMap::new(),
            double_votes: BTreeMap::new(),
            checkpoints: Vec::new(),
            saga: SagaLedger::default(),
            current_day: 0,
        }
    }

    pub fn node(&self) -> AccountId {
        self.node
    }

    pub fn dag(&self) -> &XDag {
        &self.dag
    }

    pub fn schedule(&self) -> &WeightSchedule {
        &self.schedule
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn saga(&self) -> &SagaLedger {
        &self.saga
    }

    pub fn finalized(&self) -> &[FinalEntry] {
        &self.finalized
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn atroposes(&self) -> &HashSet<BlockId> {
        &self.atroposes
    }

    /// Frames whose fame is settled and whose Atroposes are applied.
    pub fn frames_decided(&self) -> u64 {
        self.next_frame
    }

    pub fn set_day(&mut self, day: u64) {
        self.current_day = self.current_day.max(day);
    }

    pub fn frame_of(&self, id: &BlockId) -> Option<u64> {
        self.dag.index_of(id).map(|i| self.frames[i])
    }

    /// Weight of max-parent-frame roots the block reaches: the test for
    /// advancing to the next frame (a leaf's own weight).
    pub fn score_of(&self, id: &BlockId) -> Option<u64> {
        self.dag.index_of(id).map(|i| self.scores[i])
    }

    pub fn is_root(&self, id: &BlockId) -> bool {
        self.dag.index_of(id).is_some_and(|i| self.root_state.contains_key(&(i as u32)))
    }

    pub fn is_final(&self, id: &BlockId) -> bool {
        self.dag.index_of(id).is_some_and(|i| self.is_final[i])
    }

    pub fn max_frame(&self) -> Option<u64> {
        self.roots.len().checked_sub(1).map(|f| f as u64)
    }

    pub fn root_record(&self, id: &BlockId) -> Option<RootRecord> {
        let i = self.dag.index_of(id)? as u32;
        self.root_state.get(&i).map(|r| self.record(i, r))
    }

    fn record(&self, idx: u32, r: &RootState) -> RootRecord {
        let b = self.dag.block_at(idx as usize);
        RootRecord { id: b.id, creator: b.creator, frame: r.frame, weight: r.weight, score: r.score, fame: r.fame }
    }

    /// Every root, by frame then creation order.
    pub fn root_records(&self) -> Vec<RootRecord> {
        self.roots
            .iter()
            .flatten()
            .map(|i| self.record(*i, &self.root_state[i]))
            .collect()
    }

    /// Frame the node's next own block builds on.
    pub fn current_frame(&self) -> u64 {
        self.dag.top(self.node).and_then(|t| self.frame_of(&t.id)).unwrap_or(0)
    }

    /// Role stamped on blocks built on `self_parent` (frame 0 for leaves).
    pub fn role_for_parent(&self, creator: AccountId, self_parent: Option<&BlockId>) -> Role {
        let frame = self_parent.and_then(|p| self.frame_of(p)).unwrap_or(0);
        self.schedule.role(frame, creator)
    }

    pub fn insert(&mut self, block: Arc<EventBlock>) -> Result<InsertSummary, ConsensusError> {
        if self.dag.contains(&block.id) {
            return Ok(InsertSummary { duplicate: true, ..Default::default() });
        }
        if block.parents().all(|p| self.dag.contains(p)) {
            let frame = block.self_parent.and_then(|p| self.frame_of(&p)).unwrap_or(0);
            let expected = self.schedule.role(frame, block.creator);
            if expected != block.creator_role {
                return Err(ConsensusError::RoleMismatch {
                    id: block.id,
                    stamped: block.creator_role,
                    expected,
                    frame,
                });
            }
        }
        let outcome = self.dag.insert_shared(block)?;
        let mut summary = InsertSummary::default();
        if let InsertOutcome::ForkDetected { creator, existing, new } = outcome {
            summary.fork = Some((creator, existing, new));
        }
        let idx = self.dag.len() - 1;
        self.is_final.push(false);
        self.assign_frame(idx);
        let before = self.finalized.len();
        let checkpoints_before = self.checkpoints.len();
        self.try_finalize();
        summary.newly_final = self.finalized.len() - before;
        summary.checkpoints = self.checkpoints[checkpoints_before..].iter().map(|c| c.frame).collect();
        Ok(summary)
    }

    fn assign_frame(&mut self, idx: usize) {
        let block = self.dag.block_at(idx).clone();
        let (frame, root) = if block.is_leaf() {
            let w = self.schedule.power(0, block.creator);
            self.scores.push(w);
            (0, Some((w, w, Vec::new())))
        } else {
            let f = self.dag.parents_at(idx).iter().map(|p| self.frames[*p as usize]).max().unwrap();
            let (score, reached) = self.reached_roots(idx, f);
            self.scores.push(score);
            let self_frame = self.frames[self.dag.parents_at(idx)[0] as usize];
            if exceeds_two_thirds(score, self.schedule.total(f)) {
                let w = self.schedule.power(f + 1, block.creator);
                (f + 1, Some((w, score, reached)))
            } else if self_frame < f {
                // entered frame f through an other-parent
                let (entry, reached) = self.reached_roots(idx, f - 1);
                if exceeds_two_thirds(entry, self.schedule.total(f - 1)) {
                    (f, Some((self.schedule.power(f, block.creator), entry, reached)))
                } else {
                    (f, None)
                }
            } else {
                (f, None)
            }
        };
        self.frames.push(frame);
        let Some((weight, score, prev)) = root else { return };

        let idx = idx as u32;
        self.dag.register_root(frame, block.id, weight);
        if self.roots.len() <= frame as usize {
            self.roots.resize(frame as usize + 1, Vec::new());
        }
        self.roots[frame as usize].push(idx);
        self.root_state.insert(idx, RootState { frame, weight, score, prev, fame: Fame::Undecided });

        // the new root as decider for older candidates
        let pending: Vec<u32> = self.undecided.clone();
        for x in pending {
            if self.root_state[&x].frame + 2 <= frame {
                self.try_decide(idx, x);
            }
        }
        // existing later roots as deciders for the new candidate
        self.undecided.push(idx);
        for g in frame + 2..self.roots.len() as u64 {
            for z in self.roots[g as usize].clone() {
                if self.try_decide(z, idx) {
                    break;
                }
            }
            if self.root_state[&idx].fame != Fame::Undecided {
                break;
            }
        }
        self.undecided.retain(|x| self.root_state[x].fame == Fame::Undecided);
    }

    /// Frame-`frame` roots reachable from `idx` whose creator has no fork
    /// in `idx`'s ancestry, with their total weight.
    fn reached_roots(&self, idx: usize, frame: u64) -> (u64, Vec<u32>) {
        let mut reached = Vec::new();
        let mut score = 0;
        for r in self.roots.get(frame as usize).into_iter().flatten() {
            let rb = self.dag.block_at(*r as usize);
            if !self.dag.sees_fork_at(idx, rb.creator) && self.dag.reaches_at(idx, *r as usize) {
                reached.push(*r);
                score += self.root_state[r].weight;
            }
        }
        (score, reached)
    }

    fn try_decide(&mut self, decider: u32, candidate: u32) -> bool {
        if self.root_state[&candidate].fame != Fame::Undecided {
            return true;
        }
        match self.tally(decider, candidate).decision {
            Some(famous) => {
                let fame = if famous { Fame::Famous } else { Fame::NotFamous };
                self.root_state.get_mut(&candidate).unwrap().fame = fame;
                true
            }
            None => false,
        }
    }

    fn vote(&mut self, voter: u32, candidate: u32) -> bool {
        let vf = self.root_state[&voter].frame;
        let cf = self.root_state[&candidate].frame;
        if vf == cf + 1 {
            self.root_state[&voter].prev.contains(&candidate)
        } else {
            self.tally(voter, candidate).vote
        }
    }

    fn tally(&mut self, voter: u32, candidate: u32) -> VoteRecord {
        if let Some(v) = self.votes.get(&(voter, candidate)) {
            return *v;
        }
        let g = self.root_state[&voter].frame;
        let f = self.root_state[&candidate].frame;
        debug_assert!(g >= f + 2);
        let total = self.schedule.total(g - 1);
        let (mut yes, mut no) = (0u64, 0u64);
        for u in self.root_state[&voter].prev.clone() {
            let w = self.root_state[&u].weight;
            if self.vote(u, candidate) {
                yes += w;
            } else {
                no += w;
            }
        }
        let (super_yes, super_no) = (exceeds_two_thirds(yes, total), exceeds_two_thirds(no, total));
        let distance = g - f;
        let coin_frame = distance > 2 && (distance - 2) % COIN_AFTER_FRAMES == 0;
        let record = if coin_frame {
            let vote = if super_yes {
                true
            } else if super_no {
                false
            } else {
                self.dag.block_at(voter as usize).id.coin_bit()
            };
            VoteRecord { vote, decision: None }
        } else if super_yes {
            VoteRecord { vote: true, decision: Some(true) }
        } else if super_no {
            VoteRecord { vote: false, decision: Some(false) }
        } else {
            VoteRecord { vote: yes >= no, decision: None }
        };
        self.votes.insert((voter, candidate), record);
        record
    }

    /// A frame can be closed once some root two frames above exists (a root
    /// unseen by then can no longer become famous) and all its known roots
    /// are decided.
    fn frame_closable(&self, frame: u64) -> bool {
        (self.roots.len() as u64) > frame + 2
            && self.roots[frame as usize].iter().all(|r| self.root_state[r].fame != Fame::Undecided)
    }

    fn try_finalize(&mut self) {
        while self.frame_closable(self.next_frame) {
            self.finalize_frame(self.next_frame);
        }
    }

    /// Finalizes the frame of a famous root. Already-final frames yield no
    /// new entries.
    pub fn finalize_atropos(&mut self, root: &BlockId) -> Result<Vec<FinalEntry>, ConsensusError> {
        let idx = self.dag.index_of(root).ok_or(ConsensusError::UnknownBlock(*root))? as u32;
        let state = self.root_state.get(&idx).ok_or(ConsensusError::NotFamous(*root))?;
        if state.fame != Fame::Famous {
            return Err(ConsensusError::NotFamous(*root));
        }
        let frame = state.frame;
        if frame < self.next_frame {
            return Ok(Vec::new());
        }
        if frame > self.next_frame || !self.frame_closable(frame) {
            return Err(ConsensusError::EarlierFramesUndecided(frame));
        }
        let before = self.finalized.len();
        self.finalize_frame(frame);
        Ok(self.finalized[before..].to_vec())
    }

    fn finalize_frame(&mut self, frame: u64) {
        let mut atroposes: Vec<u32> = self.roots[frame as usize]
            .iter()
            .copied()
            .filter(|r| self.root_state[r].fame == Fame::Famous)
            .collect();
        atroposes.sort_by_key(|r| {
            let b = self.dag.block_at(*r as usize);
            (b.lamport_ts, b.id)
        });

        let mut batch: Vec<(u64, BlockId, u32, u32)> = Vec::new();
        for a in &atroposes {
            let mut stack = vec![*a];
            while let Some(i) = stack.pop() {
                if self.is_final[i as usize] {
                    continue;
                }
                self.is_final[i as usize] = true;
                let b = self.dag.block_at(i as usize);
                batch.push((b.lamport_ts, b.id, i, *a));
                stack.extend(self.dag.parents_at(i as usize).iter().filter(|p| !self.is_final[**p as usize]));
            }
        }
        batch.sort();

        for a in &atroposes {
            self.atroposes.insert(self.dag.block_at(*a as usize).id);
        }
        let mut newly: Vec<Arc<EventBlock>> = Vec::with_capacity(batch.len());
        for (lamport, id, i, a) in batch {
            let b = self.dag.block_at(i as usize).clone();
            self.finalized.push(FinalEntry {
                position: self.finalized.len() as u64,
                block: id,
                atropos: self.dag.block_at(a as usize).id,
                frame: self.frames[i as usize],
                lamport,
            });
            match self.final_by_seq.entry((b.creator, b.seq)) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    self.double_votes.entry(b.creator).or_insert(DoubleVote {
                        creator: b.creator,
                        first: *e.get(),
                        second: id,
                    });
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(id);
                }
            }
            newly.push(b);
        }
        self.saga.award_saga_points(&self.atroposes, newly.iter().map(|b| b.as_ref()));

        self.next_frame = frame + 1;
        self.votes.retain(|(_, c), _| self.root_state[c].frame > frame);
        self.checkpoint_if_due(frame);
    }

    /// Fires the checkpoint for `frame` when it is a positive multiple of
    /// the checkpoint interval.
    fn checkpoint_if_due(&mut self, frame: u64) -> Option<&Checkpoint> {
        let interval = self.params.checkpoint_frame_interval;
        if frame == 0 || frame % interval != 0 {
            return None;
        }
        self.ledger.advance_to_day(self.current_day);
        let mut applied = Vec::new();
        let mut rejected = Vec::new();
        for m in self.queued.remove(&frame).unwrap_or_default() {
            match m.apply(&mut self.ledger) {
                Ok(()) => applied.push(m),
                Err(e) => rejected.push((m, e)),
            }
        }
        let mut flagged = Vec::new();
        for dv in self.detect_double_vote() {
            if !self.ledger.is_flagged(dv.creator) && self.ledger.flag(dv.creator).is_ok() {
                flagged.push(dv.creator);
            }
        }
        self.checkpoints.push(Checkpoint {
            frame,
            day: self.current_day,
            finalized_blocks: self.finalized.len() as u64,
            ledger_digest: self.ledger.digest(),
            applied,
            rejected,
            flagged,
        });
        self.checkpoints.last()
    }

    /// Creators with two finalized blocks at the same seq, first pair each.
    pub fn detect_double_vote(&self) -> Vec<DoubleVote> {
        self.double_votes.values().cloned().collect()
    }
}
