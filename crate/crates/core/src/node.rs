//! Peer behavior: the transaction pool, stochastic mining weighted by hash
//! power, gossip and chain sync, the per-node k-block commit observer, and
//! adversarial withholding.
//!
//! Nodes never share state. Each one owns a full copy of the tree, ledger
//! and pool, reflecting only what it has mined or been told; commits are
//! local knowledge derived from that view.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::chain::ledger::{validate_block_at, ChainParams, LedgerState, TxOutcome};
use crate::chain::tree::{reorganize, BlockTree, CanonicalView};
use crate::chain::types::{Block, Digest, NodeId, Transaction, TxId};
use crate::chain::{apply_chain, state_at};
use crate::log::{LogEvent, RunLog};
use crate::net::{exp_sample, EventKey, EventPayload, Message, MessageKind, Network, SimRng};
use crate::time::SimTime;

/// Expected mining seconds per unit difficulty at unit hash power,
/// calibrated so a network of total hash power 1.0 at difficulty 0x400
/// produces one block every 13.5 simulated seconds (the Ethereum-like rate).
pub const MINING_SECS_PER_DIFFICULTY: f64 = 13.5 / 1024.0;

/// Mean solo mining time: proportional to difficulty, inversely proportional
/// to hash power.
pub fn mining_mean_secs(difficulty: u64, hash_power: f64) -> f64 {
    MINING_SECS_PER_DIFFICULTY * difficulty as f64 / hash_power
}

/// One exponentially distributed mining duration. Memoryless, so restarting
/// the draw on a head change introduces no bias.
pub fn sample_mining_time(rng: &mut SimRng, difficulty: u64, hash_power: f64) -> SimTime {
    exp_sample(rng, mining_mean_secs(difficulty, hash_power))
}

/// Static per-node configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    /// Relative mining rate. Positive exactly when `is_miner`.
    pub hash_power: f64,
    pub is_miner: bool,
    /// Whether the miner starts mining at t=0 (scenarios often stagger).
    pub mining_at_start: bool,
    /// While set, blocks are mined privately on the node's own branch and
    /// announced as one segment when the branch reaches this height.
    pub withhold_until_height: Option<u64>,
    /// Transactions this node refuses to include when mining.
    pub censor: BTreeSet<TxId>,
    /// Confirmation depth: a block at height i > 0 is decided once the head
    /// reaches i + k.
    pub k: u64,
}

/// A node-local observation that a transaction's block is decided.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub tx_id: TxId,
    pub block_hash: Digest,
    pub block_height: u64,
    pub observed_at: SimTime,
    pub observer: NodeId,
}

/// Pending transactions, keyed by id. Anything in the node's canonical
/// chain is kept out.
#[derive(Clone, Debug, Default)]
pub struct TxPool {
    pending: BTreeMap<TxId, Transaction>,
}

impl TxPool {
    pub fn insert(&mut self, tx: Transaction) -> bool {
        if self.pending.contains_key(&tx.id) {
            return false;
        }
        self.pending.insert(tx.id.clone(), tx);
        true
    }

    pub fn remove(&mut self, id: &TxId) -> Option<Transaction> {
        self.pending.remove(id)
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.pending.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.pending.values()
    }

    /// Pending transactions in (sender, client_seq) order, the order miners
    /// try them in.
    pub fn in_mining_order(&self) -> Vec<Transaction> {
        let mut txs: Vec<Transaction> = self.pending.values().cloned().collect();
        txs.sort_by(|a, b| {
            (&a.sender, a.client_seq, &a.id).cmp(&(&b.sender, b.client_seq, &b.id))
        });
        txs
    }
}

/// An outstanding mining draw. At most one per node; resampled whenever the
/// parent it extends stops being the node's mining tip.
#[derive(Clone, Debug)]
pub struct MiningProcess {
    pub parent: Digest,
    pub completion: SimTime,
    queue_key: EventKey,
}

/// One simulated peer.
#[derive(Clone, Debug)]
pub struct Node {
    pub cfg: NodeConfig,
    pub tree: BlockTree,
    pub head: CanonicalView,
    /// Incrementally maintained state of the canonical chain. Always equal
    /// to a from-genesis replay; tests verify that after every reorg.
    pub ledger: LedgerState,
    /// Transactions in the canonical chain: id → (block, height).
    canonical_txs: BTreeMap<TxId, (Digest, u64)>,
    pub pool: TxPool,
    /// Commit observations still standing on the current branch.
    pub committed: BTreeMap<TxId, CommitRecord>,
    pub mining_enabled: bool,
    withhold: Option<u64>,
    /// Tip and state of the privately mined branch while withholding.
    private_tip: Digest,
    private_ledger: Option<LedgerState>,
    /// Height up to which the current branch's decided region has already
    /// been scanned for commits.
    decided_cursor: u64,
    mining: Option<MiningProcess>,
    /// Segment tips with an ancestor request in flight.
    requested: BTreeSet<Digest>,
    peers: Vec<NodeId>,
    rng: SimRng,
}

impl Node {
    pub fn new(
        cfg: NodeConfig,
        genesis: Block,
        params: &ChainParams,
        mut peers: Vec<NodeId>,
        rng: SimRng,
    ) -> Self {
        assert_eq!(
            cfg.hash_power > 0.0,
            cfg.is_miner,
            "hash_power must be positive exactly for miners ({})",
            cfg.id
        );
        peers.sort();
        peers.retain(|p| *p != cfg.id);
        let tree = BlockTree::new(genesis);
        let head = tree.fork_choice();
        let ledger = LedgerState::genesis(params);
        let withhold = cfg.withhold_until_height;
        let private_tip = head.head;
        let private_ledger = withhold.map(|_| ledger.clone());
        let mining_enabled = cfg.is_miner && cfg.mining_at_start;
        Node {
            cfg,
            tree,
            head,
            ledger,
            canonical_txs: BTreeMap::new(),
            pool: TxPool::default(),
            committed: BTreeMap::new(),
            mining_enabled,
            withhold,
            private_tip,
            private_ledger,
            decided_cursor: 0,
            mining: None,
            requested: BTreeSet::new(),
            peers,
            rng,
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.cfg.id
    }

    pub fn withholding(&self) -> bool {
        self.withhold.is_some()
    }

    pub fn private_height(&self) -> u64 {
        self.tree.get(&self.private_tip).map_or(0, |b| b.height)
    }

    pub fn mining_process(&self) -> Option<&MiningProcess> {
        self.mining.as_ref()
    }

    /// Where the next block goes: the private branch while withholding, the
    /// canonical head otherwise.
    pub fn mining_parent(&self) -> Digest {
        if self.withholding() {
            self.private_tip
        } else {
            self.head.head
        }
    }

    /// Is `tx` known to this node, either pending or already on its chain?
    pub fn knows_tx(&self, id: &TxId) -> bool {
        self.pool.contains(id) || self.canonical_txs.contains_key(id)
    }

    pub fn canonical_tx_height(&self, id: &TxId) -> Option<u64> {
        self.canonical_txs.get(id).map(|(_, h)| *h)
    }

    /// Off-chain payment query against this node's current view.
    pub fn check_payment(
        &self,
        contract: &crate::contracts::ContractId,
        amount: u64,
    ) -> Option<bool> {
        self.ledger
            .contracts
            .get(contract)
            .map(|c| c.check_payment(amount))
    }

    /// Submits a locally issued transaction: into the pool and out to peers.
    pub fn submit_tx(&mut self, tx: Transaction, net: &mut Network) {
        if !self.knows_tx(&tx.id) {
            self.pool.insert(tx.clone());
        }
        for peer in self.peers.clone() {
            net.send(&self.cfg.id, &peer, MessageKind::NewTx(tx.clone()));
        }
    }

    pub fn set_mining(&mut self, enabled: bool, net: &mut Network, log: &mut RunLog) {
        if self.mining_enabled == enabled {
            return;
        }
        assert!(
            !enabled || self.cfg.is_miner,
            "cannot start mining on non-miner {}",
            self.cfg.id
        );
        self.mining_enabled = enabled;
        let time = net.queue.now();
        log.push(if enabled {
            LogEvent::MiningStarted {
                node: self.cfg.id.clone(),
                time,
            }
        } else {
            LogEvent::MiningStopped {
                node: self.cfg.id.clone(),
                time,
            }
        });
        if !enabled {
            if let Some(proc) = self.mining.take() {
                net.queue.cancel(&proc.queue_key);
            }
        }
        self.ensure_mining(net);
    }

    pub fn set_withhold(
        &mut self,
        until_height: Option<u64>,
        net: &mut Network,
        log: &mut RunLog,
    ) {
        self.withhold = until_height;
        log.push(LogEvent::WithholdSet {
            node: self.cfg.id.clone(),
            until_height,
            time: net.queue.now(),
        });
        if until_height.is_some() {
            // The private branch forks off whatever the node holds best now.
            self.private_tip = self.head.head;
            self.private_ledger = Some(self.ledger.clone());
            self.maybe_release(net, log);
        } else {
            self.private_ledger = None;
        }
        self.ensure_mining(net);
    }

    /// Schedules a fresh mining draw when the current one is missing or
    /// extends a stale parent. The single place mining gets (re)started.
    pub fn ensure_mining(&mut self, net: &mut Network) {
        if !self.mining_enabled || !self.cfg.is_miner {
            return;
        }
        let parent = self.mining_parent();
        if let Some(proc) = &self.mining {
            if proc.parent == parent {
                return;
            }
            net.queue.cancel(&self.mining.take().unwrap().queue_key);
        }
        let duration = sample_mining_time(
            &mut self.rng,
            // All blocks in a run share the scenario difficulty.
            self.tree.get(&parent).unwrap().difficulty,
            self.cfg.hash_power,
        );
        let completion = net.queue.now() + duration;
        let queue_key = net.queue.schedule(
            completion,
            EventPayload::MineComplete {
                node: self.cfg.id.clone(),
                parent,
            },
        );
        self.mining = Some(MiningProcess {
            parent,
            completion,
            queue_key,
        });
    }

    /// Handles a fired mining completion: assemble a block from the pool
    /// (greedy, per-sender sequence order, invalid ones skipped), append it
    /// locally, then announce or withhold. Returns the mined block.
    pub fn on_mine_complete(
        &mut self,
        parent: Digest,
        net: &mut Network,
        log: &mut RunLog,
        params: &ChainParams,
    ) -> Option<Block> {
        let Some(proc) = self.mining.take() else {
            return None; // cancelled in the meantime
        };
        debug_assert_eq!(proc.parent, parent, "completion for a stale parent");
        let now = net.queue.now();
        let parent_block = self.tree.get(&parent).expect("mining parent in tree").clone();

        let mut scratch = if self.withholding() {
            self.private_ledger.clone().expect("withholding state")
        } else {
            self.ledger.clone()
        };
        if params.block_reward > 0 {
            *scratch
                .balances
                .entry(crate::chain::types::Address(self.cfg.id.0.clone()))
                .or_insert(0) += params.block_reward;
        }
        let mut included = Vec::new();
        for tx in self.pool.in_mining_order() {
            if self.cfg.censor.contains(&tx.id) {
                continue;
            }
            match scratch.apply_tx(&tx) {
                TxOutcome::Invalid(reason) => {
                    log.push(LogEvent::TxSkipped {
                        node: self.cfg.id.clone(),
                        tx: tx.id.clone(),
                        reason: format!("{reason:?}"),
                        time: now,
                    });
                }
                _ => included.push(tx),
            }
        }

        let block = Block {
            height: parent_block.height + 1,
            parent,
            hash: Digest::ZERO,
            miner: self.cfg.id.clone(),
            txs: included,
            difficulty: params.difficulty,
            mined_at: now,
            nonce: self.rng.random(),
        }
        .seal();

        log.push(LogEvent::BlockMined {
            node: self.cfg.id.clone(),
            hash: block.hash,
            height: block.height,
            txs: block.tx_ids(),
            withheld: self.withholding(),
            time: now,
        });
        self.tree.insert(block.clone()).expect("own block extends known parent");
        log.push(LogEvent::BlockAccepted {
            node: self.cfg.id.clone(),
            hash: block.hash,
            height: block.height,
            time: now,
        });
        if self.withholding() {
            self.private_tip = block.hash;
            self.private_ledger = Some(scratch);
        }
        self.update_head(Some((block.hash, block.height)), net, log, params);
        if self.withholding() {
            self.maybe_release(net, log);
        }
        self.ensure_mining(net);
        Some(block)
    }

    /// Handles a delivered message.
    pub fn on_receive(
        &mut self,
        msg: Message,
        net: &mut Network,
        log: &mut RunLog,
        params: &ChainParams,
    ) {
        match msg.kind {
            MessageKind::NewTx(tx) => {
                if !self.knows_tx(&tx.id) {
                    self.pool.insert(tx);
                }
            }
            MessageKind::AncestorRequest { tip } => {
                // Reply with the whole chain up to the requested tip, or our
                // canonical chain if we no longer hold that tip.
                let chain = if self.tree.contains(&tip) {
                    self.tree.chain_to(&tip)
                } else {
                    self.head.chain.clone()
                };
                let blocks: Vec<Block> = chain[1..]
                    .iter()
                    .map(|h| self.tree.get(h).unwrap().clone())
                    .collect();
                if !blocks.is_empty() {
                    net.send(&self.cfg.id, &msg.from, MessageKind::NewChainSegment(blocks));
                }
            }
            MessageKind::NewChainSegment(blocks) => {
                self.process_segment(&msg.from, blocks, net, log, params);
            }
        }
        self.ensure_mining(net);
    }

    fn process_segment(
        &mut self,
        from: &NodeId,
        blocks: Vec<Block>,
        net: &mut Network,
        log: &mut RunLog,
        params: &ChainParams,
    ) {
        // Skip blocks we already hold.
        let first_new = blocks.iter().position(|b| !self.tree.contains(&b.hash));
        let Some(start) = first_new else {
            return; // already-known tip: no-op
        };
        let now = net.queue.now();
        let anchor = blocks[start].parent;
        if !self.tree.contains(&anchor) {
            // Unknown ancestry: one modeled round-trip fetches the missing
            // prefix from the sender; this segment is superseded by the reply.
            let tip = blocks.last().unwrap().hash;
            if self.requested.insert(tip) {
                net.send(&self.cfg.id, from, MessageKind::AncestorRequest { tip });
            }
            return;
        }

        // Rolling validation from the anchor: each accepted block's state
        // feeds the next, so a whole segment costs one replay.
        let mut parent = self.tree.get(&anchor).unwrap().clone();
        let mut state = self.state_at_cached(&anchor, params);
        let mut tallest: Option<(Digest, u64)> = None;
        for block in &blocks[start..] {
            if block.parent != parent.hash {
                log.push(LogEvent::BlockRejected {
                    node: self.cfg.id.clone(),
                    hash: block.hash,
                    reason: "segment not parent-linked".into(),
                    time: now,
                });
                break;
            }
            match validate_block_at(block, &parent, state, params) {
                Ok(next_state) => {
                    self.tree.insert(block.clone()).expect("validated block inserts");
                    self.requested.remove(&block.hash);
                    log.push(LogEvent::BlockAccepted {
                        node: self.cfg.id.clone(),
                        hash: block.hash,
                        height: block.height,
                        time: now,
                    });
                    if tallest.is_none_or(|(_, h)| block.height > h) {
                        tallest = Some((block.hash, block.height));
                    }
                    state = next_state;
                    parent = block.clone();
                }
                Err(reason) => {
                    // Invalid blocks are discarded silently (trace only);
                    // descendants cannot validate either.
                    log.push(LogEvent::BlockRejected {
                        node: self.cfg.id.clone(),
                        hash: block.hash,
                        reason: format!("{reason:?}"),
                        time: now,
                    });
                    break;
                }
            }
        }
        self.update_head(tallest, net, log, params);
    }

    /// State at an arbitrary tree block, reusing the maintained heads where
    /// possible.
    fn state_at_cached(&self, at: &Digest, params: &ChainParams) -> LedgerState {
        if *at == self.head.head {
            return self.ledger.clone();
        }
        if let Some(private) = &self.private_ledger {
            if *at == self.private_tip {
                return private.clone();
            }
        }
        state_at(&self.tree, at, params)
    }

    /// Applies a head-switch candidate (the tallest freshly inserted block)
    /// and, when the head moves, performs the reorganization bookkeeping:
    /// ledger, pool, commit observations and gossip.
    ///
    /// Longest-chain with first-received tie-break means the incumbent head
    /// only ever loses to a strictly taller leaf, and any such leaf is
    /// among the just-inserted blocks; the full fork-choice recomputation
    /// stays available as the oracle this incremental path is tested
    /// against.
    fn update_head(
        &mut self,
        candidate: Option<(Digest, u64)>,
        net: &mut Network,
        log: &mut RunLog,
        params: &ChainParams,
    ) {
        let Some((cand, cand_height)) = candidate else {
            return;
        };
        if cand_height <= self.head.height {
            return;
        }
        let now = net.queue.now();

        // Walk the candidate's ancestry down to the incumbent's height; if
        // it lands on the incumbent the switch is a pure extension.
        let mut suffix = Vec::with_capacity((cand_height - self.head.height) as usize);
        let mut cur = cand;
        for _ in 0..(cand_height - self.head.height) {
            suffix.push(cur);
            cur = self.tree.get(&cur).unwrap().parent;
        }
        suffix.reverse();

        if cur == self.head.head {
            self.head.chain.extend(suffix.iter().copied());
            self.head.head = cand;
            self.head.height = cand_height;
            for hash in &suffix {
                let block = self.tree.get(hash).unwrap().clone();
                self.ledger
                    .apply_block(&block, params.block_reward)
                    .expect("canonical blocks validated on insert");
                for tx in &block.txs {
                    self.canonical_txs.insert(tx.id.clone(), (*hash, block.height));
                    self.pool.remove(&tx.id);
                }
            }
        } else {
            let new = CanonicalView {
                head: cand,
                height: cand_height,
                chain: self.tree.chain_to(&cand),
            };
            let old = std::mem::replace(&mut self.head, new);
            let outcome = reorganize(&self.tree, &old, &self.head);

            let blocks: Vec<&Block> =
                self.head.chain.iter().map(|h| self.tree.get(h).unwrap()).collect();
            self.ledger = apply_chain(blocks, params)
                .expect("canonical chain replays cleanly")
                .state;

            // Canonical tx index and pool: dropped transactions return to
            // the pool unless the new branch re-included them.
            let mut dropped_heights = Vec::new();
            for hash in &outcome.dropped_blocks {
                let block = self.tree.get(hash).unwrap();
                dropped_heights.push(block.height);
                for tx in &block.txs {
                    self.canonical_txs.remove(&tx.id);
                }
            }
            let ancestor_height = outcome.ancestor_height;
            for hash in &self.head.chain[ancestor_height as usize + 1..] {
                let block = self.tree.get(hash).unwrap();
                for tx in &block.txs {
                    self.canonical_txs.insert(tx.id.clone(), (*hash, block.height));
                    self.pool.remove(&tx.id);
                }
            }
            for tx in &outcome.returned_txs {
                if !self.canonical_txs.contains_key(&tx.id) {
                    self.pool.insert(tx.clone());
                }
            }

            log.push(LogEvent::Reorg {
                node: self.cfg.id.clone(),
                ancestor_height,
                dropped: outcome.dropped_blocks.clone(),
                dropped_heights,
                returned_txs: outcome.returned_txs.iter().map(|t| t.id.clone()).collect(),
                new_head: self.head.head,
                new_height: self.head.height,
                time: now,
            });
            // Blocks above the ancestor changed: rescan their commits.
            self.decided_cursor = self.decided_cursor.min(ancestor_height);
        }

        self.observe_commits(now, log);

        // Gossip: pass the new tip along, unless we are hiding our chain.
        if !self.withholding() {
            let tip = self.tree.get(&self.head.head).unwrap().clone();
            if tip.height > 0 {
                self.broadcast_segment(vec![tip], net, log);
            }
        }
        self.ensure_mining(net);
    }

    /// Emits commit records for newly decided transactions and uncommit
    /// events for observations the current branch no longer supports.
    fn observe_commits(&mut self, now: SimTime, log: &mut RunLog) {
        // Height i > 0 is decided once head ≥ i + k; the genesis block is
        // decided from the start.
        let decided_height = self.head.height.saturating_sub(self.cfg.k);

        let stale: Vec<TxId> = self
            .committed
            .iter()
            .filter(|(tx_id, rec)| {
                self.canonical_txs.get(*tx_id) != Some(&(rec.block_hash, rec.block_height))
                    || rec.block_height > decided_height
            })
            .map(|(tx_id, _)| tx_id.clone())
            .collect();
        for tx_id in stale {
            let rec = self.committed.remove(&tx_id).unwrap();
            log.push(LogEvent::Uncommit {
                tx: tx_id,
                node: self.cfg.id.clone(),
                committed_at: rec.observed_at,
                committed_height: rec.block_height,
                time: now,
            });
        }

        // Only heights not yet scanned on this branch; the cursor rewinds to
        // the common ancestor on a reorganization.
        let from = self.decided_cursor + 1;
        for hash in &self.head.chain[from as usize..=decided_height as usize] {
            let block = self.tree.get(hash).unwrap();
            for tx in &block.txs {
                if !self.committed.contains_key(&tx.id) {
                    let rec = CommitRecord {
                        tx_id: tx.id.clone(),
                        block_hash: *hash,
                        block_height: block.height,
                        observed_at: now,
                        observer: self.cfg.id.clone(),
                    };
                    self.committed.insert(tx.id.clone(), rec.clone());
                    log.push(LogEvent::Commit(rec));
                }
            }
        }
        self.decided_cursor = self.decided_cursor.max(decided_height);
    }

    /// Announces the private branch once it reaches the withhold target.
    fn maybe_release(&mut self, net: &mut Network, log: &mut RunLog) {
        let Some(target) = self.withhold else {
            return;
        };
        let height = self.private_height();
        if height < target {
            return;
        }
        self.withhold = None;
        self.private_ledger = None;
        log.push(LogEvent::WithholdReleased {
            node: self.cfg.id.clone(),
            height,
            time: net.queue.now(),
        });
        let chain = self.tree.chain_to(&self.private_tip);
        let blocks: Vec<Block> = chain[1..]
            .iter()
            .map(|h| self.tree.get(h).unwrap().clone())
            .collect();
        self.broadcast_segment(blocks, net, log);
    }

    fn broadcast_segment(&mut self, blocks: Vec<Block>, net: &mut Network, log: &mut RunLog) {
        if blocks.is_empty() {
            return;
        }
        let now = net.queue.now();
        for block in &blocks {
            log.push(LogEvent::BlockAnnounced {
                node: self.cfg.id.clone(),
                hash: block.hash,
                time: now,
            });
        }
        for peer in self.peers.clone() {
            net.send(
                &self.cfg.id,
                &peer,
                MessageKind::NewChainSegment(blocks.clone()),
            );
        }
    }

    /// Test-mode structural checks run after every event.
    pub fn check_invariants(&self, params: &ChainParams) -> Result<(), String> {
        self.tree.check_well_formed()?;
        let recomputed = self.tree.fork_choice();
        if recomputed != self.head {
            return Err(format!("{}: cached head diverged from fork choice", self.cfg.id));
        }
        let blocks: Vec<&Block> =
            self.head.chain.iter().map(|h| self.tree.get(h).unwrap()).collect();
        let replay = apply_chain(blocks, params).map_err(|e| e.to_string())?;
        if replay.state != self.ledger {
            return Err(format!(
                "{}: incremental ledger diverged from genesis replay",
                self.cfg.id
            ));
        }
        let genesis_total: u64 = params.genesis_alloc.values().sum();
        let expected = genesis_total + params.block_reward * self.head.height;
        if self.ledger.total_balance() != expected {
            return Err(format!(
                "{}: conservation violated: {} != {}",
                self.cfg.id,
                self.ledger.total_balance(),
                expected
            ));
        }
        for (tx_id, _) in &self.canonical_txs {
            if self.pool.contains(tx_id) {
                return Err(format!("{}: pool overlaps canonical chain ({tx_id})", self.cfg.id));
            }
        }
        for (tx_id, rec) in &self.committed {
            if self.head.height < rec.block_height + self.cfg.k {
                return Err(format!(
                    "{}: commit record for {tx_id} violates depth precondition",
                    self.cfg.id
                ));
            }
        }
        if let Some(proc) = &self.mining {
            if proc.parent != self.mining_parent() {
                return Err(format!("{}: mining draw extends a stale parent", self.cfg.id));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::types::{genesis_block, Address, TxKind};
    use rand::SeedableRng;

    fn params() -> ChainParams {
        ChainParams {
            genesis_alloc: [(Address::from("alice"), 1000), (Address::from("bob"), 1000)]
                .into_iter()
                .collect(),
            genesis_contracts: vec![],
            block_reward: 0,
            difficulty: 0x400,
        }
    }

    fn miner(id: &str, power: f64) -> NodeConfig {
        NodeConfig {
            id: NodeId::from(id),
            hash_power: power,
            is_miner: power > 0.0,
            mining_at_start: power > 0.0,
            withhold_until_height: None,
            censor: BTreeSet::new(),
            k: 11,
        }
    }

    fn make_node(cfg: NodeConfig, params: &ChainParams, peers: &[&str]) -> Node {
        Node::new(
            cfg,
            genesis_block(params.difficulty),
            params,
            peers.iter().map(|p| NodeId::from(*p)).collect(),
            SimRng::seed_from_u64(1),
        )
    }

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

    /// Pops events until this node's mining completion fires, dropping
    /// deliveries addressed to peers that exist only as names.
    fn mine_one(node: &mut Node, net: &mut Network, log: &mut RunLog, p: &ChainParams) -> Block {
        node.ensure_mining(net);
        loop {
            let ev = net.queue.pop().expect("queue ran dry before a completion");
            if let EventPayload::MineComplete { parent, node: who } = ev.payload {
                assert_eq!(who, *node.id(), "single-miner helper");
                return node.on_mine_complete(parent, net, log, p).unwrap();
            }
        }
    }

    #[test]
    fn doubling_difficulty_doubles_the_mean() {
        // Monte Carlo against the analytic mean = c·d/h, within ±5%.
        let mut rng = SimRng::seed_from_u64(3);
        let draws = 10_000;
        let mean_at = |rng: &mut SimRng, d: u64| -> f64 {
            (0..draws)
                .map(|_| sample_mining_time(rng, d, 1.0).as_secs_f64())
                .sum::<f64>()
                / draws as f64
        };
        let m1 = mean_at(&mut rng, 0x400);
        let m2 = mean_at(&mut rng, 0x800);
        assert!((m1 - 13.5).abs() / 13.5 < 0.05, "base mean {m1}");
        assert!((m2 / m1 - 2.0).abs() < 0.1, "ratio {}", m2 / m1);
        assert_eq!(mining_mean_secs(0x400, 1.0), 13.5);
    }

    #[test]
    fn non_miners_never_schedule_completions() {
        let p = params();
        let mut node = make_node(miner("p2", 0.0), &p, &["p1"]);
        let mut net = Network::full_mesh(&[NodeId::from("p1"), NodeId::from("p2")], SimTime::ZERO);
        node.ensure_mining(&mut net);
        assert!(net.queue.is_empty());
        assert!(node.mining_process().is_none());
    }

    #[test]
    fn mined_block_carries_the_pool_tx_and_empties_are_fine() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p2")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();
        let mut node = make_node(miner("p1", 1.0), &p, &["p2"]);

        node.pool.insert(transfer("t1", "alice", "bob", 100, 1));
        let b1 = mine_one(&mut node, &mut net, &mut log, &p);
        assert_eq!(b1.tx_ids(), vec![TxId::from("t1")]);
        assert!(node.pool.is_empty(), "mined txs leave the pool");

        let b2 = mine_one(&mut node, &mut net, &mut log, &p);
        assert!(b2.txs.is_empty(), "empty pool still mines empty blocks");
        assert_eq!(node.head.height, 2);
    }

    #[test]
    fn invalid_pool_tx_is_skipped_and_logged() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p2")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();
        let mut node = make_node(miner("p1", 1.0), &p, &["p2"]);

        node.pool.insert(transfer("t1", "alice", "bob", 5000, 1));
        let b1 = mine_one(&mut node, &mut net, &mut log, &p);
        assert!(b1.txs.is_empty());
        assert!(node.pool.contains(&TxId::from("t1")), "skipped txs stay pooled");
        assert!(log
            .events
            .iter()
            .any(|e| matches!(e, LogEvent::TxSkipped { tx, .. } if *tx == TxId::from("t1"))));
    }

    #[test]
    fn at_most_one_outstanding_completion_per_node() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p2")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();
        let mut node = make_node(miner("p1", 1.0), &p, &["p2"]);
        node.ensure_mining(&mut net);
        let first = node.mining_process().unwrap().queue_key;
        node.ensure_mining(&mut net);
        assert_eq!(node.mining_process().unwrap().queue_key, first, "same parent: no resample");
        assert_eq!(net.queue.len(), 1);

        // A head change restarts the draw onto the new parent. The foreign
        // block is mined in its own network so p1's queue stays intact.
        let mut net2 = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut other = make_node(miner("p2", 24.0), &p, &["p1"]);
        let b = mine_one(&mut other, &mut net2, &mut log, &p);
        node.on_receive(
            Message {
                from: NodeId::from("p2"),
                kind: MessageKind::NewChainSegment(vec![b.clone()]),
            },
            &mut net,
            &mut log,
            &p,
        );
        let proc = node.mining_process().unwrap();
        assert_eq!(proc.parent, b.hash, "draw follows the new head");
    }

    #[test]
    fn receiving_a_longer_segment_adopts_and_returns_txs() {
        // A 45-block foreign chain beats a 14-block local chain; the local
        // tx missing from the new branch returns to the pool.
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p3")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();

        let mut p1 = make_node(miner("p1", 1.0), &p, &["p3"]);
        p1.pool.insert(transfer("t1", "alice", "bob", 100, 1));
        let first = mine_one(&mut p1, &mut net, &mut log, &p);
        assert_eq!(first.tx_ids(), vec![TxId::from("t1")]);
        for _ in 0..13 {
            mine_one(&mut p1, &mut net, &mut log, &p);
        }
        assert_eq!(p1.head.height, 14);

        let mut net2 = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut p3 = make_node(miner("p3", 24.0), &p, &["p1"]);
        for _ in 0..45 {
            mine_one(&mut p3, &mut net2, &mut log, &p);
        }
        let segment: Vec<Block> = p3.head.chain[1..]
            .iter()
            .map(|h| p3.tree.get(h).unwrap().clone())
            .collect();

        p1.on_receive(
            Message {
                from: NodeId::from("p3"),
                kind: MessageKind::NewChainSegment(segment),
            },
            &mut net,
            &mut log,
            &p,
        );
        assert_eq!(p1.head.height, 45);
        assert_eq!(p1.head.head, p3.head.head);
        assert!(p1.pool.contains(&TxId::from("t1")), "t1 back in the pool");
        p1.check_invariants(&p).unwrap();
    }

    #[test]
    fn shorter_foreign_chain_is_ignored() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p3")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();

        let mut p1 = make_node(miner("p1", 1.0), &p, &["p3"]);
        for _ in 0..5 {
            mine_one(&mut p1, &mut net, &mut log, &p);
        }
        let head_before = p1.head.clone();

        let mut net2 = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut p3 = make_node(miner("p3", 24.0), &p, &["p1"]);
        for _ in 0..3 {
            mine_one(&mut p3, &mut net2, &mut log, &p);
        }
        let segment: Vec<Block> = p3.head.chain[1..]
            .iter()
            .map(|h| p3.tree.get(h).unwrap().clone())
            .collect();
        p1.on_receive(
            Message {
                from: NodeId::from("p3"),
                kind: MessageKind::NewChainSegment(segment),
            },
            &mut net,
            &mut log,
            &p,
        );
        assert_eq!(p1.head, head_before, "local longest chain wins");
    }

    #[test]
    fn unknown_ancestry_triggers_one_request_round_trip() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p3")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();

        let mut net2 = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut p3 = make_node(miner("p3", 24.0), &p, &["p1"]);
        for _ in 0..4 {
            mine_one(&mut p3, &mut net2, &mut log, &p);
        }
        let tip = p3.tree.get(&p3.head.head).unwrap().clone();

        // p2-style receiver: no mining, so the queue carries only messages.
        let mut p1 = make_node(miner("p1", 0.0), &p, &["p3"]);
        p1.on_receive(
            Message {
                from: NodeId::from("p3"),
                kind: MessageKind::NewChainSegment(vec![tip.clone()]),
            },
            &mut net,
            &mut log,
            &p,
        );
        assert_eq!(p1.head.height, 0, "tip alone cannot be adopted");

        // The request goes to p3, which answers with the full chain.
        let ev = net.queue.pop().unwrap();
        let EventPayload::Deliver { to, msg } = ev.payload else {
            panic!("expected delivery");
        };
        assert_eq!(to, NodeId::from("p3"));
        assert!(matches!(msg.kind, MessageKind::AncestorRequest { tip: t } if t == tip.hash));
        p3.on_receive(
            Message {
                from: NodeId::from("p1"),
                kind: MessageKind::AncestorRequest { tip: tip.hash },
            },
            &mut net,
            &mut log,
            &p,
        );
        let ev = net.queue.pop().unwrap();
        let EventPayload::Deliver { to, msg } = ev.payload else {
            panic!("expected delivery");
        };
        assert_eq!(to, NodeId::from("p1"));
        p1.on_receive(msg, &mut net, &mut log, &p);
        assert_eq!(p1.head.height, 4, "full segment adopted after the round trip");
    }

    #[test]
    fn commit_observation_at_depth_k() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p2")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();
        let mut node = make_node(miner("p1", 1.0), &p, &["p2"]);
        node.pool.insert(transfer("t1", "alice", "bob", 100, 1));

        // t1 lands in block 1; with k=11 it is decided once head reaches 12.
        for expected_height in 1..=11u64 {
            mine_one(&mut node, &mut net, &mut log, &p);
            assert_eq!(node.head.height, expected_height);
            assert!(node.committed.is_empty(), "undecided at height {expected_height}");
        }
        mine_one(&mut node, &mut net, &mut log, &p);
        let rec = node.committed.get(&TxId::from("t1")).expect("committed at head 12");
        assert_eq!(rec.block_height, 1);
        assert_eq!(rec.observer, NodeId::from("p1"));
        assert!(node.head.height >= rec.block_height + node.cfg.k);
    }

    #[test]
    fn genesis_is_decided_at_depth_zero() {
        let p = params();
        let node = make_node(miner("p1", 1.0), &p, &["p2"]);
        // Nothing mined yet: head height 0, and the decided region is
        // exactly the genesis block.
        assert_eq!(node.head.height.saturating_sub(node.cfg.k), 0);
        node.check_invariants(&p).unwrap();
    }

    #[test]
    fn withholding_keeps_blocks_private_until_target_height() {
        let p = params();
        let ids = [NodeId::from("p1"), NodeId::from("p3")];
        let mut net = Network::full_mesh(&ids, SimTime::from_secs_f64(0.05));
        let mut log = RunLog::new();
        let mut cfg = miner("p3", 24.0);
        cfg.withhold_until_height = Some(4);
        let mut node = make_node(cfg, &p, &["p1"]);

        for height in 1..=3u64 {
            mine_one(&mut node, &mut net, &mut log, &p);
            assert_eq!(node.private_height(), height);
            assert!(node.withholding());
            let announced = log
                .events
                .iter()
                .filter(|e| matches!(e, LogEvent::BlockAnnounced { .. }))
                .count();
            assert_eq!(announced, 0, "no announcements while private");
        }
        mine_one(&mut node, &mut net, &mut log, &p);
        assert!(!node.withholding(), "target height releases the branch");
        // The release pushed one segment delivery to the peer.
        let blocks = loop {
            let ev = net.queue.pop().expect("announcement must be queued");
            if let EventPayload::Deliver { msg, .. } = ev.payload {
                let MessageKind::NewChainSegment(blocks) = msg.kind else {
                    panic!("expected segment");
                };
                break blocks;
            }
        };
        assert_eq!(blocks.len(), 4, "full private segment announced");
        let announced = log
            .events
            .iter()
            .filter(|e| matches!(e, LogEvent::BlockAnnounced { .. }))
            .count();
        assert_eq!(announced, 4, "no block announced before the release");
    }
}
