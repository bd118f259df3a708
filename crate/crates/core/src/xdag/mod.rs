//! Per-node x-DAG store.
//!
//! Blocks are kept in insertion order with dense indices. For each block the
//! store keeps a highest-before vector: per creator, the highest block of
//! that creator in the block's ancestry, or a fork marker when the ancestry
//! holds two blocks of that creator that are not on one self-chain. Root
//! reachability is answered from that vector plus a skip-pointer walk along
//! self-chains, so no per-query graph traversal is needed unless the target's
//! creator is forked within the queried ancestry.

mod block;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use block::{compute_block_id, payload_digest, BlockId, EventBlock, Transaction};

use crate::ledger::{AccountId, Role};

const NONE: u32 = u32::MAX;
const FORK: u32 = u32::MAX - 1;

/// Why a block failed the structural rules.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    UnknownCreator(AccountId),
    IdMismatch,
    ObserverCreator,
    LeafWithParents,
    LeafSeq(u64),
    LeafLamport(u64),
    SelfParentCreator,
    SelfParentSeq { expected: u64, got: u64 },
    ParentCount { expected: usize, got: usize },
    Lamport { expected: u64, got: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownCreator(c) => write!(f, "creator {c} is not a network participant"),
            Violation::IdMismatch => write!(f, "id does not match block contents"),
            Violation::ObserverCreator => write!(f, "observers cannot create blocks"),
            Violation::LeafWithParents => write!(f, "leaf block carries other-parents"),
            Violation::LeafSeq(s) => write!(f, "leaf block has seq {s}"),
            Violation::LeafLamport(t) => write!(f, "leaf block has lamport {t}"),
            Violation::SelfParentCreator => write!(f, "self-parent has a different creator"),
            Violation::SelfParentSeq { expected, got } => write!(f, "seq {got}, expected {expected}"),
            Violation::ParentCount { expected, got } => write!(f, "{got} other-parents, expected {expected}"),
            Violation::Lamport { expected, got } => write!(f, "lamport {got}, expected {expected}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XDagError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("unknown parent {0}")]
    UnknownParent(BlockId),
    #[error("frame {0} has no registered roots")]
    UnknownFrame(u64),
    #[error("{} parent(s) not yet present", .0.len())]
    MissingParents(Vec<BlockId>),
    #[error("invalid structure: {0}")]
    InvalidStructure(Violation),
    #[error("no other-parent from the opposite participant type")]
    CrossTypeViolation,
    #[error("other-parents repeat a creator or include the block's own creator")]
    DuplicateCreator,
}

/// Result of a successful insertion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Identical block was already stored.
    AlreadyPresent,
    /// Stored, but another block by the same creator has the same seq.
    /// Both are retained and the creator is recorded as a cheater.
    ForkDetected { creator: AccountId, existing: BlockId, new: BlockId },
}

#[derive(Clone, Debug)]
pub struct XDag {
    k: usize,
    creators: Vec<AccountId>,
    slot_of: HashMap<AccountId, usize>,
    blocks: Vec<Arc<EventBlock>>,
    index: HashMap<BlockId, u32>,
    parents: Vec<Box<[u32]>>,
    slot: Vec<u32>,
    self_parent: Vec<u32>,
    jump: Vec<u32>,
    highest_before: Vec<Box<[u32]>>,
    tops: Vec<u32>,
    by_seq: HashMap<(u32, u64), Vec<u32>>,
    forked: Vec<bool>,
    cheaters: BTreeMap<AccountId, (BlockId, BlockId)>,
    root_index: BTreeMap<u64, Vec<(BlockId, u64)>>,
}

impl XDag {
    /// An empty DAG over a fixed participant set.
    pub fn new(k: usize, creators: &[AccountId]) -> Self {
        let mut sorted = creators.to_vec();
        sorted.sort();
        sorted.dedup();
        let slot_of = sorted.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let n = sorted.len();
        XDag {
            k,
            creators: sorted,
            slot_of,
            blocks: Vec::new(),
            index: HashMap::new(),
            parents: Vec::new(),
            slot: Vec::new(),
            self_parent: Vec::new(),
            jump: Vec::new(),
            highest_before: Vec::new(),
            tops: vec![NONE; n],
            by_seq: HashMap::new(),
            forked: vec![false; n],
            cheaters: BTreeMap::new(),
            root_index: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn creators(&self) -> &[AccountId] {
        &self.creators
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &BlockId) -> Option<&Arc<EventBlock>> {
        self.index.get(id).map(|i| &self.blocks[*i as usize])
    }

    pub fn index_of(&self, id: &BlockId) -> Option<usize> {
        self.index.get(id).map(|i| *i as usize)
    }

    pub fn block_at(&self, idx: usize) -> &Arc<EventBlock> {
        &self.blocks[idx]
    }

    /// Parent indices, self-parent first.
    pub fn parents_at(&self, idx: usize) -> &[u32] {
        &self.parents[idx]
    }

    /// Blocks in insertion order.
    pub fn blocks(&self) -> impl Iterator<Item = &Arc<EventBlock>> {
        self.blocks.iter()
    }

    pub fn top(&self, creator: AccountId) -> Option<&Arc<EventBlock>> {
        let slot = *self.slot_of.get(&creator)?;
        match self.tops[slot] {
            NONE => None,
            i => Some(&self.blocks[i as usize]),
        }
    }

    /// Highest known seq for every creator that has a block here.
    pub fn known_heights(&self) -> BTreeMap<AccountId, u64> {
        self.creators
            .iter()
            .zip(&self.tops)
            .filter(|(_, t)| **t != NONE)
            .map(|(c, t)| (*c, self.blocks[*t as usize].seq))
            .collect()
    }

    /// Fork pairs seen so far, one per cheating creator.
    pub fn cheaters(&self) -> &BTreeMap<AccountId, (BlockId, BlockId)> {
        &self.cheaters
    }

    pub fn is_cheater(&self, creator: AccountId) -> bool {
        self.cheaters.contains_key(&creator)
    }

    /// All stored blocks with the given creator and seq.
    pub fn blocks_at_seq(&self, creator: AccountId, seq: u64) -> Vec<BlockId> {
        let Some(slot) = self.slot_of.get(&creator) else { return Vec::new() };
        self.by_seq
            .get(&(*slot as u32, seq))
            .map(|v| v.iter().map(|i| self.blocks[*i as usize].id).collect())
            .unwrap_or_default()
    }

    /// Builds the node's next block on top of its current top block.
    ///
    /// Without an own top block this produces the seq-0 leaf, which must not
    /// reference any other block.
    pub fn create_event(
        &self,
        creator: AccountId,
        role: Role,
        other_parents: &[BlockId],
        transactions: Vec<Transaction>,
    ) -> Result<EventBlock, XDagError> {
        if !self.slot_of.contains_key(&creator) {
            return Err(XDagError::InvalidStructure(Violation::UnknownCreator(creator)));
        }
        if role == Role::Observer {
            return Err(XDagError::InvalidStructure(Violation::ObserverCreator));
        }
        let Some(top) = self.top(creator) else {
            if !other_parents.is_empty() {
                return Err(XDagError::InvalidStructure(Violation::LeafWithParents));
            }
            return Ok(EventBlock::assemble(creator, role, 0, None, vec![], transactions, 0));
        };
        if other_parents.len() != self.k - 1 {
            return Err(XDagError::InvalidStructure(Violation::ParentCount {
                expected: self.k - 1,
                got: other_parents.len(),
            }));
        }
        let mut parents = Vec::with_capacity(other_parents.len());
        for id in other_parents {
            parents.push(self.get(id).ok_or(XDagError::UnknownParent(*id))?.as_ref());
        }
        check_other_parents(creator, role, &parents)?;
        let lamport = 1 + parents.iter().map(|p| p.lamport_ts).chain([top.lamport_ts]).max().unwrap();
        Ok(EventBlock::assemble(
            creator,
            role,
            top.seq + 1,
            Some(top.id),
            other_parents.to_vec(),
            transactions,
            lamport,
        ))
    }

    /// Checks every structural rule except parent presence. Parents must
    /// already be stored.
    fn check_structure(&self, block: &EventBlock) -> Result<(), XDagError> {
        let inv = |v| Err(XDagError::InvalidStructure(v));
        if !self.slot_of.contains_key(&block.creator) {
            return inv(Violation::UnknownCreator(block.creator));
        }
        if block.creator_role == Role::Observer {
            return inv(Violation::ObserverCreator);
        }
        if !block.id_matches_contents() {
            return inv(Violation::IdMismatch);
        }
        let Some(sp_id) = block.self_parent else {
            if !block.other_parents.is_empty() {
                return inv(Violation::LeafWithParents);
            }
            if block.seq != 0 {
                return inv(Violation::LeafSeq(block.seq));
            }
            if block.lamport_ts != 0 {
                return inv(Violation::LeafLamport(block.lamport_ts));
            }
            return Ok(());
        };
        let sp = self.get(&sp_id).expect("parents checked present");
        if sp.creator != block.creator {
            return inv(Violation::SelfParentCreator);
        }
        if block.seq != sp.seq + 1 {
            return inv(Violation::SelfParentSeq { expected: sp.seq + 1, got: block.seq });
        }
        if block.other_parents.len() != self.k - 1 {
            return inv(Violation::ParentCount { expected: self.k - 1, got: block.other_parents.len() });
        }
        let others: Vec<&EventBlock> = block
            .other_parents
            .iter()
            .map(|id| self.get(id).expect("parents checked present").as_ref())
            .collect();
        check_other_parents(block.creator, block.creator_role, &others)?;
        let expected = 1 + others.iter().map(|p| p.lamport_ts).chain([sp.lamport_ts]).max().unwrap();
        if block.lamport_ts != expected {
            return inv(Violation::Lamport { expected, got: block.lamport_ts });
        }
        Ok(())
    }

    pub fn insert_block(&mut self, block: EventBlock) -> Result<InsertOutcome, XDagError> {
        self.insert_shared(Arc::new(block))
    }

    /// Inserts a block shared with other replicas.
    pub fn insert_shared(&mut self, block: Arc<EventBlock>) -> Result<InsertOutcome, XDagError> {
        if self.index.contains_key(&block.id) {
            return Ok(InsertOutcome::AlreadyPresent);
        }
        let mut missing: Vec<BlockId> = block.parents().filter(|p| !self.contains(p)).copied().collect();
        if !missing.is_empty() {
            missing.dedup();
            return Err(XDagError::MissingParents(missing));
        }
        self.check_structure(&block)?;

        let idx = self.blocks.len() as u32;
        let slot = self.slot_of[&block.creator];
        let parents: Box<[u32]> = block.parents().map(|p| self.index[p]).collect();
        let sp = block.self_parent.map(|p| self.index[&p]).unwrap_or(NONE);

        let key = (slot as u32, block.seq);
        let mut outcome = InsertOutcome::Inserted;
        if let Some(existing) = self.by_seq.get(&key).and_then(|v| v.first()) {
            let existing = self.blocks[*existing as usize].id;
            self.forked[slot] = true;
            self.cheaters.entry(block.creator).or_insert((existing, block.id));
            outcome = InsertOutcome::ForkDetected { creator: block.creator, existing, new: block.id };
        }

        let jump = if sp == NONE {
            idx
        } else {
            let j = self.jump[sp as usize];
            let jj = self.jump[j as usize];
            let (dp, dj, djj) = (self.seq_at(sp), self.seq_at(j), self.seq_at(jj));
            if dp - dj == dj - djj {
                jj
            } else {
                sp
            }
        };

        // push first so the chain walk below can see the new block
        self.blocks.push(block.clone());
        self.index.insert(block.id, idx);
        self.slot.push(slot as u32);
        self.self_parent.push(sp);
        self.jump.push(jump);
        self.parents.push(parents.clone());

        let n = self.creators.len();
        let mut hb = vec![NONE; n];
        hb[slot] = idx;
        for p in parents.iter() {
            let phb = self.highest_before[*p as usize].clone();
            for s in 0..n {
                hb[s] = self.merge(s, hb[s], phb[s]);
            }
        }
        self.highest_before.push(hb.into_boxed_slice());
        self.by_seq.entry(key).or_default().push(idx);

        let top = self.tops[slot];
        if top == NONE || block.seq > self.seq_at(top) {
            self.tops[slot] = idx;
        }
        Ok(outcome)
    }

    fn seq_at(&self, idx: u32) -> u64 {
        self.blocks[idx as usize].seq
    }

    fn merge(&self, slot: usize, a: u32, b: u32) -> u32 {
        if a == b || b == NONE {
            return a;
        }
        if a == NONE {
            return b;
        }
        if a == FORK || b == FORK {
            return FORK;
        }
        let (sa, sb) = (self.seq_at(a), self.seq_at(b));
        if sa == sb {
            return FORK;
        }
        let (hi, lo) = if sa > sb { (a, b) } else { (b, a) };
        if !self.forked[slot] || self.self_ancestor_at(hi, self.seq_at(lo)) == lo {
            hi
        } else {
            FORK
        }
    }

    /// The block at `seq` on `idx`'s self-chain.
    fn self_ancestor_at(&self, mut idx: u32, seq: u64) -> u32 {
        while self.seq_at(idx) > seq {
            let j = self.jump[idx as usize];
            idx = if self.seq_at(j) < seq { self.self_parent[idx as usize] } else { j };
        }
        idx
    }

    /// True when the ancestry of `idx` holds a fork by `creator`.
    pub fn sees_fork_at(&self, idx: usize, creator: AccountId) -> bool {
        self.slot_of.get(&creator).is_some_and(|s| self.highest_before[idx][*s] == FORK)
    }

    /// Ancestry test by index; a block reaches itself.
    pub fn reaches_at(&self, from: usize, target: usize) -> bool {
        if from == target {
            return true;
        }
        let slot = self.slot[target] as usize;
        let tseq = self.seq_at(target as u32);
        match self.highest_before[from][slot] {
            NONE => false,
            FORK => self.reaches_by_search(from, target),
            b => {
                self.seq_at(b) >= tseq
                    && (!self.forked[slot] || self.self_ancestor_at(b, tseq) == target as u32)
            }
        }
    }

    fn reaches_by_search(&self, from: usize, target: usize) -> bool {
        let tl = self.blocks[target].lamport_ts;
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([from as u32]);
        while let Some(i) = queue.pop_front() {
            if i as usize == target {
                return true;
            }
            for p in self.parents[i as usize].iter() {
                if self.blocks[*p as usize].lamport_ts >= tl && seen.insert(*p) {
                    queue.push_back(*p);
                }
            }
        }
        false
    }

    pub fn reaches(&self, from: &BlockId, target: &BlockId) -> Result<bool, XDagError> {
        let f = self.index_of(from).ok_or(XDagError::UnknownBlock(*from))?;
        let t = self.index_of(target).ok_or(XDagError::UnknownBlock(*target))?;
        Ok(self.reaches_at(f, t))
    }

    pub fn register_root(&mut self, frame: u64, id: BlockId, weight: u64) {
        let roots = self.root_index.entry(frame).or_default();
        if !roots.iter().any(|(r, _)| *r == id) {
            roots.push((id, weight));
        }
    }

    pub fn roots_of(&self, frame: u64) -> Option<&[(BlockId, u64)]> {
        self.root_index.get(&frame).map(|v| v.as_slice())
    }

    /// Frame-`frame` roots reachable from `block`. Roots whose creator is
    /// forked within the block's ancestry are left out.
    pub fn reachable_roots(&self, block: &BlockId, frame: u64) -> Result<Vec<BlockId>, XDagError> {
        let from = self.index_of(block).ok_or(XDagError::UnknownBlock(*block))?;
        let roots = self.root_index.get(&frame).ok_or(XDagError::UnknownFrame(frame))?;
        Ok(roots
            .iter()
            .filter(|(r, _)| {
                let t = self.index[r] as usize;
                !self.sees_fork_at(from, self.blocks[t].creator) && self.reaches_at(from, t)
            })
            .map(|(r, _)| *r)
            .collect())
    }

    /// Sum of root weights over [`XDag::reachable_roots`].
    pub fn validation_score(&self, block: &BlockId, frame: u64) -> Result<u64, XDagError> {
        let reached = self.reachable_roots(block, frame)?;
        let roots = &self.root_index[&frame];
        Ok(reached
            .iter()
            .map(|r| roots.iter().find(|(id, _)| id == r).map(|(_, w)| *w).unwrap_or(0))
            .sum())
    }

    /// Deterministic total order embedding the DAG order: by lamport
    /// timestamp, ties broken by id.
    pub fn topological_order(&self, ids: &[BlockId]) -> Result<Vec<BlockId>, XDagError> {
        let mut keyed = Vec::with_capacity(ids.len());
        for id in ids {
            let b = self.get(id).ok_or(XDagError::UnknownBlock(*id))?;
            keyed.push((b.lamport_ts, *id));
        }
        keyed.sort();
        keyed.dedup();
        Ok(keyed.into_iter().map(|(_, id)| id).collect())
    }

    /// Every stored block with a seq above the given per-creator heights,
    /// parents before children.
    pub fn blocks_above(&self, heights: &BTreeMap<AccountId, u64>) -> Vec<Arc<EventBlock>> {
        let mut out: Vec<&Arc<EventBlock>> = Vec::new();
        for (slot, c) in self.creators.iter().enumerate() {
            let top = match self.tops[slot] {
                NONE => continue,
                t => self.seq_at(t),
            };
            let from = heights.get(c).map_or(0, |h| h + 1);
            for seq in from..=top {
                if let Some(v) = self.by_seq.get(&(slot as u32, seq)) {
                    out.extend(v.iter().map(|i| &self.blocks[*i as usize]));
                }
            }
        }
        out.sort_by_key(|b| (b.lamport_ts, b.id));
        out.into_iter().cloned().collect()
    }

    /// Indices of all ancestors of `idx`, itself included.
    pub fn ancestry(&self, idx: usize) -> Vec<usize> {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![idx];
        seen[idx] = true;
        let mut out = Vec::new();
        while let Some(i) = stack.pop() {
            out.push(i);
            for p in self.parents[i].iter() {
                if !std::mem::replace(&mut seen[*p as usize], true) {
                    stack.push(*p as usize);
                }
            }
        }
        out
    }
}

fn check_other_parents(creator: AccountId, role: Role, others: &[&EventBlock]) -> Result<(), XDagError> {
    let mut seen = HashSet::new();
    for p in others {
        if p.creator == creator || !seen.insert(p.creator) {
            return Err(XDagError::DuplicateCreator);
        }
    }
    let wanted = role.opposite().ok_or(XDagError::InvalidStructure(Violation::ObserverCreator))?;
    if !others.iter().any(|p| p.creator_role == wanted) {
        return Err(XDagError::CrossTypeViolation);
    }
    Ok(())
}

#[cfg(test)]
mod tests;
