//! The block tree, longest-chain fork choice and reorganization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::types::{Block, Digest, Transaction};

/// All blocks a peer knows about, including transient branches. Every
/// non-genesis block's parent is present and heights are consistent, so the
/// structure is a tree rooted at the genesis block.
#[derive(Clone, Debug)]
pub struct BlockTree {
    blocks: BTreeMap<Digest, Block>,
    children: BTreeMap<Digest, Vec<Digest>>,
    genesis: Digest,
    /// Insertion order, used as the first-received tie-break in fork choice.
    arrival: BTreeMap<Digest, u64>,
    next_arrival: u64,
}

/// The chain selected by fork choice: the path from genesis to the best leaf.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalView {
    pub head: Digest,
    pub height: u64,
    /// Block digests from genesis (index 0) to `head`.
    pub chain: Vec<Digest>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("parent {0} not present in tree")]
    MissingParent(Digest),
    #[error("block {0} already present")]
    Duplicate(Digest),
    #[error("block height {got} does not extend parent height {parent}")]
    BadHeight { got: u64, parent: u64 },
}

impl BlockTree {
    pub fn new(genesis: Block) -> Self {
        assert_eq!(genesis.height, 0, "genesis must have height 0");
        assert_eq!(genesis.parent, Digest::ZERO);
        let hash = genesis.hash;
        let mut blocks = BTreeMap::new();
        blocks.insert(hash, genesis);
        let mut arrival = BTreeMap::new();
        arrival.insert(hash, 0);
        BlockTree {
            blocks,
            children: BTreeMap::new(),
            genesis: hash,
            arrival,
            next_arrival: 1,
        }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn get(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn arrival_order(&self, hash: &Digest) -> Option<u64> {
        self.arrival.get(hash).copied()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    /// Inserts a structurally valid block. Transaction-level validation is
    /// the caller's job (see [`crate::chain::ledger::validate_block`]).
    pub fn insert(&mut self, block: Block) -> Result<(), TreeError> {
        if self.blocks.contains_key(&block.hash) {
            return Err(TreeError::Duplicate(block.hash));
        }
        let parent = self
            .blocks
            .get(&block.parent)
            .ok_or(TreeError::MissingParent(block.parent))?;
        if block.height != parent.height + 1 {
            return Err(TreeError::BadHeight {
                got: block.height,
                parent: parent.height,
            });
        }
        let hash = block.hash;
        self.children.entry(block.parent).or_default().push(hash);
        self.arrival.insert(hash, self.next_arrival);
        self.next_arrival += 1;
        self.blocks.insert(hash, block);
        Ok(())
    }

    /// The path of digests from genesis to `tip` (inclusive).
    pub fn chain_to(&self, tip: &Digest) -> Vec<Digest> {
        let mut chain = Vec::new();
        let mut cur = *tip;
        loop {
            let block = self.blocks.get(&cur).expect("tip must be in tree");
            chain.push(cur);
            if block.height == 0 {
                break;
            }
            cur = block.parent;
        }
        chain.reverse();
        chain
    }

    /// The winning leaf under longest-chain fork choice: maximum height,
    /// ties broken in favour of the first-received leaf. Deterministic
    /// function of the tree and its arrival order.
    pub fn fork_choice_head(&self) -> (Digest, u64) {
        let mut best: Option<(&Block, u64)> = None;
        for block in self.blocks.values() {
            if self.children.get(&block.hash).is_some_and(|c| !c.is_empty()) {
                continue; // not a leaf
            }
            let arrival = self.arrival[&block.hash];
            let better = match best {
                None => true,
                Some((b, a)) => {
                    block.height > b.height || (block.height == b.height && arrival < a)
                }
            };
            if better {
                best = Some((block, arrival));
            }
        }
        let (head, _) = best.expect("tree is never empty");
        (head.hash, head.height)
    }

    /// Longest-chain fork choice with the full genesis-to-head path.
    pub fn fork_choice(&self) -> CanonicalView {
        let (head, height) = self.fork_choice_head();
        CanonicalView {
            head,
            height,
            chain: self.chain_to(&head),
        }
    }

    /// Checks structural well-formedness: parents present, heights
    /// consistent, arrival order total. Used by the test-mode invariant
    /// sweep after every event.
    pub fn check_well_formed(&self) -> Result<(), String> {
        for block in self.blocks.values() {
            if block.hash == self.genesis {
                if block.height != 0 {
                    return Err("genesis height must be 0".into());
                }
                continue;
            }
            let parent = self
                .blocks
                .get(&block.parent)
                .ok_or_else(|| format!("missing parent of {}", block.hash))?;
            if block.height != parent.height + 1 {
                return Err(format!("height mismatch at {}", block.hash));
            }
            if !self.arrival.contains_key(&block.hash) {
                return Err(format!("missing arrival order for {}", block.hash));
            }
        }
        // Walking parent links from every block must reach genesis; heights
        // strictly decrease along the walk, so cycles are impossible given
        // the height check above.
        Ok(())
    }
}

/// What a head switch changed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorgOutcome {
    /// Deepest block shared by the old and new chains.
    pub ancestor: Digest,
    pub ancestor_height: u64,
    /// Old-branch blocks after the ancestor, in chain order.
    pub dropped_blocks: Vec<Digest>,
    /// Transactions from the dropped blocks that the new branch does not
    /// contain; these go back to the pool.
    pub returned_txs: Vec<Transaction>,
}

/// Computes the fallout of switching from `old` to `new`: the deepest common
/// ancestor, the dropped old-branch blocks and the transactions those blocks
/// contained that the new chain does not.
pub fn reorganize(tree: &BlockTree, old: &CanonicalView, new: &CanonicalView) -> ReorgOutcome {
    assert_eq!(old.chain[0], new.chain[0], "views must share the genesis");
    let mut common = 0;
    while common + 1 < old.chain.len()
        && common + 1 < new.chain.len()
        && old.chain[common + 1] == new.chain[common + 1]
    {
        common += 1;
    }
    let ancestor = old.chain[common];
    let dropped_blocks: Vec<Digest> = old.chain[common + 1..].to_vec();

    let mut in_new = std::collections::BTreeSet::new();
    for hash in &new.chain {
        for tx in &tree.get(hash).expect("new chain block in tree").txs {
            in_new.insert(tx.id.clone());
        }
    }
    let mut returned_txs = Vec::new();
    for hash in &dropped_blocks {
        for tx in &tree.get(hash).expect("dropped block in tree").txs {
            if !in_new.contains(&tx.id) {
                returned_txs.push(tx.clone());
            }
        }
    }
    ReorgOutcome {
        ancestor,
        ancestor_height: tree.get(&ancestor).unwrap().height,
        dropped_blocks,
        returned_txs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::types::{genesis_block, Address, NodeId, Transaction, TxId, TxKind};
    use crate::time::SimTime;

    fn transfer(id: &str, sender: &str, to: &str, amount: u64, seq: u64) -> Transaction {
        Transaction {
            id: TxId::from(id),
            sender: Address::from(sender),
            kind: TxKind::Transfer {
                to: Address::from(to),
                amount,
            },
            client_seq: seq,
            issue_time: SimTime::ZERO,
        }
    }

    fn child(parent: &Block, miner: &str, txs: Vec<Transaction>, nonce: u64) -> Block {
        Block {
            height: parent.height + 1,
            parent: parent.hash,
            hash: Digest::ZERO,
            miner: NodeId::from(miner),
            txs,
            difficulty: parent.difficulty,
            mined_at: SimTime::from_micros(parent.mined_at.as_micros() + 1_000_000),
            nonce,
        }
        .seal()
    }

    /// Builds a tree with a main branch of `long` blocks and a fork of
    /// `short` blocks off the genesis. Returns (tree, long tip, short tip).
    fn forked_tree(long: usize, short: usize) -> (BlockTree, Digest, Digest) {
        let genesis = genesis_block(0x400);
        let mut tree = BlockTree::new(genesis.clone());
        let mut tip = genesis.clone();
        for i in 0..long {
            let b = child(&tip, "m1", vec![], i as u64);
            tree.insert(b.clone()).unwrap();
            tip = b;
        }
        let long_tip = tip.hash;
        let mut tip = genesis;
        for i in 0..short {
            let b = child(&tip, "m2", vec![], 1_000 + i as u64);
            tree.insert(b.clone()).unwrap();
            tip = b;
        }
        (tree, long_tip, tip.hash)
    }

    #[test]
    fn longer_branch_wins() {
        // A 45-block branch beats a 14-block branch regardless of arrival.
        let (tree, long_tip, _) = forked_tree(45, 14);
        let view = tree.fork_choice();
        assert_eq!(view.head, long_tip);
        assert_eq!(view.height, 45);
        assert_eq!(view.chain.len(), 46);
    }

    #[test]
    fn single_chain_selects_its_tip() {
        let (tree, tip, _) = forked_tree(5, 0);
        assert_eq!(tree.fork_choice().head, tip);
    }

    #[test]
    fn equal_height_tie_goes_to_first_received() {
        let (tree, first_tip, second_tip) = forked_tree(3, 3);
        let view = tree.fork_choice();
        assert_eq!(view.head, first_tip);
        assert_ne!(view.head, second_tip);
        assert!(tree.arrival_order(&first_tip).unwrap() < tree.arrival_order(&second_tip).unwrap());
    }

    #[test]
    fn insert_rejects_orphans_duplicates_and_bad_heights() {
        let genesis = genesis_block(0x400);
        let mut tree = BlockTree::new(genesis.clone());
        let b1 = child(&genesis, "m1", vec![], 1);
        tree.insert(b1.clone()).unwrap();
        assert_eq!(tree.insert(b1.clone()), Err(TreeError::Duplicate(b1.hash)));

        let orphan = Block {
            parent: Digest([9u8; 32]),
            ..child(&genesis, "m1", vec![], 2)
        }
        .seal();
        assert!(matches!(
            tree.insert(orphan),
            Err(TreeError::MissingParent(_))
        ));

        let skewed = Block {
            height: 5,
            ..child(&b1, "m1", vec![], 3)
        }
        .seal();
        assert_eq!(
            tree.insert(skewed),
            Err(TreeError::BadHeight { got: 5, parent: 1 })
        );
    }

    #[test]
    fn reorg_drops_old_branch_and_returns_missing_txs() {
        // Old branch carries t1; the new longer branch does not. After the
        // switch t1 must come back to the pool.
        let genesis = genesis_block(0x400);
        let mut tree = BlockTree::new(genesis.clone());
        let shared = child(&genesis, "p1", vec![], 1);
        tree.insert(shared.clone()).unwrap();

        let t1 = transfer("t1", "alice", "bob", 100, 1);
        let mut old_tip = shared.clone();
        for i in 0..3 {
            let txs = if i == 0 { vec![t1.clone()] } else { vec![] };
            let b = child(&old_tip, "p1", txs, 10 + i);
            tree.insert(b.clone()).unwrap();
            old_tip = b;
        }
        let old = tree.fork_choice();

        let t2 = transfer("t2", "bob", "carole", 100, 1);
        let mut new_tip = shared;
        for i in 0..5 {
            let txs = if i == 3 { vec![t2.clone()] } else { vec![] };
            let b = child(&new_tip, "p3", txs, 20 + i);
            tree.insert(b.clone()).unwrap();
            new_tip = b;
        }
        let new = tree.fork_choice();
        assert_eq!(new.head, new_tip.hash);

        let outcome = reorganize(&tree, &old, &new);
        assert_eq!(outcome.ancestor_height, 1);
        assert_eq!(outcome.dropped_blocks.len(), 3);
        assert_eq!(outcome.returned_txs, vec![t1]);
    }

    #[test]
    fn reorg_to_same_view_is_empty() {
        let (tree, _, _) = forked_tree(4, 2);
        let view = tree.fork_choice();
        let outcome = reorganize(&tree, &view, &view);
        assert!(outcome.dropped_blocks.is_empty());
        assert!(outcome.returned_txs.is_empty());
        assert_eq!(outcome.ancestor, view.head);
    }

    #[test]
    fn reorg_keeps_txs_present_in_new_branch() {
        // A tx in a dropped block that the new branch re-includes is not
        // returned to the pool.
        let genesis = genesis_block(0x400);
        let mut tree = BlockTree::new(genesis.clone());
        let t1 = transfer("t1", "alice", "bob", 100, 1);

        let old_b = child(&genesis, "p1", vec![t1.clone()], 1);
        tree.insert(old_b.clone()).unwrap();
        let old = tree.fork_choice();

        let new_b1 = child(&genesis, "p3", vec![], 2);
        let new_b2 = child(&new_b1, "p3", vec![t1.clone()], 3);
        tree.insert(new_b1).unwrap();
        tree.insert(new_b2).unwrap();
        let new = tree.fork_choice();

        let outcome = reorganize(&tree, &old, &new);
        assert_eq!(outcome.dropped_blocks, vec![old_b.hash]);
        assert!(outcome.returned_txs.is_empty());
    }
}
