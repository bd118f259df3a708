use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ledger::{AccountId, Role};

/// Content hash of an event block.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub [u8; 32]);

impl BlockId {
    /// Low bit of the hash, used as the deterministic fame coin.
    pub fn coin_bit(&self) -> bool {
        self.0[31] & 1 == 1
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlockId({})", self.short())
    }
}

impl FromStr for BlockId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("bad block id `{s}`: {e}"))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| format!("block id `{s}` is not 32 bytes"))?;
        Ok(BlockId(arr))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub payload: Vec<u8>,
    /// Fee in whole tokens.
    pub fee: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventBlock {
    pub id: BlockId,
    pub creator: AccountId,
    pub seq: u64,
    pub self_parent: Option<BlockId>,
    pub other_parents: Vec<BlockId>,
    pub transactions: Vec<Transaction>,
    pub lamport_ts: u64,
    pub creator_role: Role,
}

pub fn payload_digest(txns: &[Transaction]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((txns.len() as u64).to_be_bytes());
    for t in txns {
        h.update((t.payload.len() as u64).to_be_bytes());
        h.update(&t.payload);
        h.update(t.fee.to_be_bytes());
    }
    h.finalize().into()
}

/// Hash over the canonical serialization
/// `(creator, self_parent, other_parents, payload_digest, lamport_ts, seq)`.
pub fn compute_block_id(
    creator: AccountId,
    self_parent: Option<&BlockId>,
    other_parents: &[BlockId],
    payload: &[u8; 32],
    lamport_ts: u64,
    seq: u64,
) -> BlockId {
    let mut h = Sha256::new();
    h.update(creator.0.to_be_bytes());
    match self_parent {
        Some(p) => {
            h.update([1u8]);
            h.update(p.0);
        }
        None => h.update([0u8]),
    }
    h.update((other_parents.len() as u32).to_be_bytes());
    for p in other_parents {
        h.update(p.0);
    }
    h.update(payload);
    h.update(lamport_ts.to_be_bytes());
    h.update(seq.to_be_bytes());
    BlockId(h.finalize().into())
}

impl EventBlock {
    /// Builds a block and fills in its id. No structural checks.
    pub fn assemble(
        creator: AccountId,
        creator_role: Role,
        seq: u64,
        self_parent: Option<BlockId>,
        other_parents: Vec<BlockId>,
        transactions: Vec<Transaction>,
        lamport_ts: u64,
    ) -> EventBlock {
        let id = compute_block_id(
            creator,
            self_parent.as_ref(),
            &other_parents,
            &payload_digest(&transactions),
            lamport_ts,
            seq,
        );
        EventBlock { id, creator, seq, self_parent, other_parents, transactions, lamport_ts, creator_role }
    }

    pub fn is_leaf(&self) -> bool {
        self.self_parent.is_none()
    }

    pub fn parents(&self) -> impl Iterator<Item = &BlockId> {
        self.self_parent.iter().chain(self.other_parents.iter())
    }

    pub fn fee_total(&self) -> u64 {
        self.transactions.iter().map(|t| t.fee).sum()
    }

    pub fn id_matches_contents(&self) -> bool {
        self.id
            == compute_block_id(
                self.creator,
                self.self_parent.as_ref(),
                &self.other_parents,
                &payload_digest(&self.transactions),
                self.lamport_ts,
                self.seq,
            )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_is_content_addressed() {
        let a = EventBlock::assemble(AccountId(1), Role::User, 0, None, vec![], vec![], 0);
        let b = EventBlock::assemble(AccountId(1), Role::User, 0, None, vec![], vec![], 0);
        assert_eq!(a.id, b.id);
        let c = EventBlock::assemble(
            AccountId(1),
            Role::User,
            0,
            None,
            vec![],
            vec![Transaction { payload: b"x".to_vec(), fee: 1 }],
            0,
        );
        assert_ne!(a.id, c.id);
        assert!(c.id_matches_contents());
        let parsed: BlockId = a.id.to_string().parse().unwrap();
        assert_eq!(parsed, a.id);
    }
}
