use std::collections::HashSet;

use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn ids(n: &[u32]) -> Vec<AccountId> {
    n.iter().map(|i| AccountId(*i)).collect()
}

fn role(c: u32) -> Role {
    if c >= 3 {
        Role::Validator
    } else {
        Role::User
    }
}

/// Five-node population: creators 0..3 are Users, 3 and 4 Validators.
fn fig4_dag() -> XDag {
    XDag::new(2, &ids(&[0, 1, 2, 3, 4]))
}

fn leaf(dag: &mut XDag, c: u32) -> BlockId {
    let b = dag.create_event(AccountId(c), role(c), &[], vec![]).unwrap();
    let id = b.id;
    dag.insert_block(b).unwrap();
    id
}

fn step(dag: &mut XDag, c: u32, others: &[BlockId]) -> BlockId {
    let b = dag.create_event(AccountId(c), role(c), others, vec![]).unwrap();
    let id = b.id;
    dag.insert_block(b).unwrap();
    id
}

fn brute_ancestors(dag: &XDag, id: &BlockId) -> HashSet<BlockId> {
    let mut seen = HashSet::new();
    let mut stack = vec![*id];
    while let Some(b) = stack.pop() {
        if seen.insert(b) {
            stack.extend(dag.get(&b).unwrap().parents().copied());
        }
    }
    seen
}

#[test]
fn user_block_with_validator_parent_is_valid() {
    let mut dag = fig4_dag();
    let _u = leaf(&mut dag, 0);
    let v = leaf(&mut dag, 3);
    let b = dag.create_event(AccountId(0), Role::User, &[v], vec![]).unwrap();
    assert_eq!(b.seq, 1);
    assert_eq!(b.lamport_ts, 1);
    assert_eq!(b.other_parents, vec![v]);
    assert_eq!(dag.insert_block(b).unwrap(), InsertOutcome::Inserted);
}

#[test]
fn validator_referencing_validator_is_rejected() {
    let mut dag = fig4_dag();
    leaf(&mut dag, 3);
    let v4 = leaf(&mut dag, 4);
    assert_eq!(
        dag.create_event(AccountId(3), Role::Validator, &[v4], vec![]),
        Err(XDagError::CrossTypeViolation)
    );
}

#[test]
fn leaf_block_has_no_parents() {
    let dag = fig4_dag();
    let b = dag.create_event(AccountId(2), Role::User, &[], vec![]).unwrap();
    assert!(b.is_leaf());
    assert_eq!((b.seq, b.lamport_ts), (0, 0));
}

#[test]
fn create_event_error_paths() {
    let mut dag = XDag::new(3, &ids(&[0, 1, 2, 3, 4]));
    let u0 = leaf(&mut dag, 0);
    let u1 = leaf(&mut dag, 1);
    let v3 = leaf(&mut dag, 3);
    let bogus = BlockId([7; 32]);
    assert_eq!(dag.create_event(AccountId(0), Role::User, &[v3, bogus], vec![]), Err(XDagError::UnknownParent(bogus)));
    assert_eq!(dag.create_event(AccountId(0), Role::User, &[v3, u0], vec![]), Err(XDagError::DuplicateCreator));
    assert_eq!(dag.create_event(AccountId(0), Role::User, &[v3, v3], vec![]), Err(XDagError::DuplicateCreator));
    assert!(matches!(
        dag.create_event(AccountId(0), Role::User, &[v3], vec![]),
        Err(XDagError::InvalidStructure(Violation::ParentCount { expected: 2, got: 1 }))
    ));
    assert!(dag.create_event(AccountId(0), Role::User, &[v3, u1], vec![]).is_ok());
}

#[test]
fn insert_requires_parents_and_is_idempotent() {
    let mut a = fig4_dag();
    let mut b = fig4_dag();
    let u = leaf(&mut a, 0);
    let v = leaf(&mut a, 3);
    let child = a.create_event(AccountId(0), Role::User, &[v], vec![]).unwrap();
    a.insert_block(child.clone()).unwrap();

    b.insert_shared(a.get(&u).unwrap().clone()).unwrap();
    assert_eq!(b.insert_block(child.clone()), Err(XDagError::MissingParents(vec![v])));
    b.insert_shared(a.get(&v).unwrap().clone()).unwrap();
    assert_eq!(b.insert_block(child.clone()), Ok(InsertOutcome::Inserted));
    assert_eq!(b.insert_block(child), Ok(InsertOutcome::AlreadyPresent));
    assert_eq!(b.len(), 3);
}

#[test]
fn insert_rejects_tampered_blocks() {
    let mut dag = fig4_dag();
    leaf(&mut dag, 0);
    let v = leaf(&mut dag, 3);
    let mut b = dag.create_event(AccountId(0), Role::User, &[v], vec![]).unwrap();
    b.lamport_ts = 5;
    assert_eq!(dag.insert_block(b), Err(XDagError::InvalidStructure(Violation::IdMismatch)));
    let forged = EventBlock::assemble(AccountId(0), Role::User, 1, None, vec![], vec![], 0);
    assert_eq!(dag.insert_block(forged), Err(XDagError::InvalidStructure(Violation::LeafSeq(1))));
}

#[test]
fn same_seq_blocks_are_both_kept_and_flagged() {
    let mut dag = fig4_dag();
    leaf(&mut dag, 0);
    leaf(&mut dag, 1);
    let v = leaf(&mut dag, 3);
    let a = dag
        .create_event(AccountId(3), Role::Validator, &[dag.top(AccountId(0)).unwrap().id], vec![])
        .unwrap();
    let b = dag
        .create_event(AccountId(3), Role::Validator, &[dag.top(AccountId(1)).unwrap().id], vec![])
        .unwrap();
    assert_eq!(a.seq, b.seq);
    let (a_id, b_id) = (a.id, b.id);
    assert_eq!(dag.insert_block(a).unwrap(), InsertOutcome::Inserted);
    assert_eq!(
        dag.insert_block(b).unwrap(),
        InsertOutcome::ForkDetected { creator: AccountId(3), existing: a_id, new: b_id }
    );
    assert!(dag.contains(&a_id) && dag.contains(&b_id));
    assert!(dag.is_cheater(AccountId(3)));
    assert_eq!(dag.blocks_at_seq(AccountId(3), 1).len(), 2);
    assert_eq!(dag.top(AccountId(3)).unwrap().id, a_id);

    // a user block seeing both branches sees the fork
    let u = step(&mut dag, 0, &[a_id]);
    let w = step(&mut dag, 1, &[b_id]);
    let both = step(&mut dag, 0, &[b_id]);
    let ui = dag.index_of(&u).unwrap();
    let wi = dag.index_of(&w).unwrap();
    let bi = dag.index_of(&both).unwrap();
    assert!(!dag.sees_fork_at(ui, AccountId(3)));
    assert!(!dag.sees_fork_at(wi, AccountId(3)));
    assert!(dag.sees_fork_at(bi, AccountId(3)));
    assert!(dag.reaches(&both, &a_id).unwrap());
    assert!(dag.reaches(&both, &v).unwrap());
    assert!(!dag.reaches(&w, &a_id).unwrap());
}

#[test]
fn reachable_roots_and_scores() {
    let mut dag = fig4_dag();
    let l: Vec<BlockId> = (0..5).map(|c| leaf(&mut dag, c)).collect();
    for c in 0..5u32 {
        let w = if c == 3 { 1000 } else if c == 4 { 2000 } else { 1 };
        dag.register_root(0, l[c as usize], w);
    }
    // a leaf root reaches itself
    assert_eq!(dag.reachable_roots(&l[4], 0).unwrap(), vec![l[4]]);
    assert_eq!(dag.validation_score(&l[4], 0).unwrap(), 2000);

    let a = step(&mut dag, 0, &[l[3]]); // reaches 0 and 3
    let mut got = dag.reachable_roots(&a, 0).unwrap();
    got.sort();
    let mut want = vec![l[0], l[3]];
    want.sort();
    assert_eq!(got, want);
    assert_eq!(dag.validation_score(&a, 0).unwrap(), 1001);

    let b = step(&mut dag, 3, &[a]); // reaches 0, 3
    let c = step(&mut dag, 1, &[b]); // reaches 0, 1, 3
    assert_eq!(dag.validation_score(&c, 0).unwrap(), 1002);

    dag.register_root(1, c, 1);
    assert!(dag.reachable_roots(&a, 1).unwrap().is_empty());
    assert_eq!(dag.validation_score(&a, 1).unwrap(), 0);
    assert_eq!(dag.reachable_roots(&a, 7), Err(XDagError::UnknownFrame(7)));
    assert_eq!(dag.reachable_roots(&BlockId([0; 32]), 0), Err(XDagError::UnknownBlock(BlockId([0; 32]))));
}

/// Random gossip between the five fig4 creators, sometimes with an
/// equivocating validator. Returns the finished DAG.
fn random_dag(seed: u64, blocks: usize, equivocate: bool) -> XDag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dag = fig4_dag();
    for c in 0..5 {
        leaf(&mut dag, c);
    }
    let all: Vec<u32> = (0..5).collect();
    while dag.len() < blocks {
        let c = *all.choose(&mut rng).unwrap();
        let peers: Vec<u32> = all.iter().copied().filter(|p| role(*p) != role(c)).collect();
        let p = *peers.choose(&mut rng).unwrap();
        // pick any known block of p, not only its top, to vary shapes
        let candidates: Vec<BlockId> =
            dag.blocks().filter(|b| b.creator == AccountId(p)).map(|b| b.id).collect();
        let other = *candidates.choose(&mut rng).unwrap();
        let txn = vec![Transaction { payload: rng.random::<u64>().to_le_bytes().to_vec(), fee: 0 }];
        let b = dag.create_event(AccountId(c), role(c), &[other], txn).unwrap();
        dag.insert_block(b).unwrap();
        if equivocate && c == 4 && rng.random_bool(0.2) && dag.len() < blocks {
            let txn = vec![Transaction { payload: b"fork".to_vec(), fee: rng.random_range(0..5) }];
            // a sibling of the block just made
            let top = dag.top(AccountId(4)).unwrap().clone();
            let sp = dag.get(&top.self_parent.unwrap()).unwrap().clone();
            let fork = EventBlock::assemble(
                AccountId(4),
                Role::Validator,
                top.seq,
                Some(sp.id),
                vec![other],
                txn,
                1 + sp.lamport_ts.max(dag.get(&other).unwrap().lamport_ts),
            );
            dag.insert_block(fork).unwrap();
        }
    }
    dag
}

#[test]
fn reachability_matches_brute_force() {
    for seed in 0..20 {
        let dag = random_dag(seed, 120, seed % 2 == 1);
        let all: Vec<BlockId> = dag.blocks().map(|b| b.id).collect();
        for from in &all {
            let anc = brute_ancestors(&dag, from);
            for to in &all {
                assert_eq!(dag.reaches(from, to).unwrap(), anc.contains(to), "seed {seed}");
            }
        }
    }
}

#[test]
fn acyclic_and_cross_typed() {
    for seed in 0..5 {
        let dag = random_dag(100 + seed, 500, true);
        for b in dag.blocks() {
            for p in b.parents() {
                let anc = brute_ancestors(&dag, p);
                assert!(!anc.contains(&b.id), "cycle through {:?}", b.id);
            }
            if !b.is_leaf() {
                let opposite = b.creator_role.opposite().unwrap();
                assert!(b.other_parents.iter().any(|p| dag.get(p).unwrap().creator_role == opposite));
            }
        }
    }
}

#[test]
fn topological_order_respects_edges_and_is_arrival_independent() {
    let dag = random_dag(7, 150, true);
    let ids: Vec<BlockId> = dag.blocks().map(|b| b.id).collect();
    let order = dag.topological_order(&ids).unwrap();
    let pos: HashMap<BlockId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    for b in dag.blocks() {
        for p in b.parents() {
            assert!(pos[p] < pos[&b.id]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let blocks: Vec<EventBlock> = dag.blocks().map(|b| (**b).clone()).collect();
    for _ in 0..100 {
        let mut shuffled = blocks.clone();
        shuffled.shuffle(&mut rng);
        let mut replica = fig4_dag();
        let mut pending = shuffled;
        while !pending.is_empty() {
            pending.retain(|b| matches!(replica.insert_block(b.clone()), Err(XDagError::MissingParents(_))));
        }
        assert_eq!(replica.topological_order(&ids).unwrap(), order);
        for b in dag.blocks().step_by(17) {
            for t in dag.blocks().step_by(13) {
                assert_eq!(replica.reaches(&b.id, &t.id).unwrap(), dag.reaches(&b.id, &t.id).unwrap());
            }
        }
    }
    assert!(dag.topological_order(&[]).unwrap().is_empty());
}

#[test]
fn blocks_above_heights() {
    let dag = random_dag(3, 40, false);
    let full = dag.known_heights();
    assert!(dag.blocks_above(&full).is_empty());
    let mut heights = full.clone();
    let c = AccountId(0);
    heights.insert(c, full[&c].saturating_sub(3));
    let missing = dag.blocks_above(&heights);
    assert_eq!(missing.len() as u64, full[&c] - heights[&c]);
    assert!(missing.iter().all(|b| b.creator == c));
    assert!(missing.windows(2).all(|w| w[0].seq < w[1].seq));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn score_is_monotone_along_edges(seed in 0u64..10_000) {
        let mut dag = random_dag(seed, 80, seed % 3 == 0);
        let leaves: Vec<BlockId> = dag.blocks().filter(|b| b.is_leaf()).map(|b| b.id).collect();
        for (i, l) in leaves.iter().enumerate() {
            dag.register_root(0, *l, [1, 1, 1, 1000, 2000][i]);
        }
        for b in dag.blocks() {
            let s = dag.validation_score(&b.id, 0).unwrap();
            prop_assert!(s <= 3003);
            for p in b.parents() {
                let child_sees_fork = dag.creators().iter().any(|c| {
                    dag.sees_fork_at(dag.index_of(&b.id).unwrap(), *c)
                        && !dag.sees_fork_at(dag.index_of(p).unwrap(), *c)
                });
                if !child_sees_fork {
                    prop_assert!(s >= dag.validation_score(p, 0).unwrap());
                }
            }
        }
    }
}
