//! Ledger state and deterministic replay.
//!
//! A chain's state is a pure function of its blocks: replaying the same
//! chain from the same genesis allocation always yields the same
//! `LedgerState`. Contract state lives inside the ledger, so a
//! reorganization automatically re-evaluates every contract call on the new
//! branch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::tree::BlockTree;
use crate::chain::types::{Address, Block, Coins, Digest, Transaction, TxId, TxKind};
use crate::contracts::{CallOutcome, ContractConfig, ContractState, ThrowReason};

/// Account balances, contract states and the per-sender sequence numbers a
/// chain has consumed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerState {
    pub balances: BTreeMap<Address, Coins>,
    pub contracts: BTreeMap<crate::contracts::ContractId, ContractState>,
    /// Sequence numbers already applied per sender. A chain never applies
    /// the same (sender, seq) twice; gaps are allowed so that a transaction
    /// orphaned by a reorg can fail on funds rather than on ordering.
    used_seqs: BTreeMap<Address, BTreeSet<u64>>,
}

/// Why a transaction cannot be included in a block at all. Miners skip such
/// transactions at assembly time and validators reject blocks carrying them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    /// Sender balance (or a multisig input) is short.
    InsufficientFunds,
    ZeroAmount,
    /// The (sender, seq) pair was already applied on this chain.
    SequenceReused,
    UnknownContract,
    ContractAlreadyExists,
    /// Fewer than two distinct valid signers on a joint payment.
    MissingSignatures,
}

/// Result of applying one transaction.
///
/// `Executed`, `GuardSkipped` and `Thrown` transactions are includable in a
/// block (the latter two leave state unchanged apart from consuming the
/// sequence number); `Invalid` transactions are not includable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxOutcome {
    Executed,
    GuardSkipped,
    Thrown(ThrowReason),
    Invalid(InvalidReason),
}

impl TxOutcome {
    pub fn includable(&self) -> bool {
        !matches!(self, TxOutcome::Invalid(_))
    }
}

/// One transaction's outcome during a chain replay.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxExecution {
    pub block: Digest,
    pub height: u64,
    pub tx_id: TxId,
    pub sender: Address,
    pub outcome: TxOutcome,
}

/// A full replay of a chain: the resulting state plus per-transaction
/// outcomes in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainReplay {
    pub state: LedgerState,
    pub executions: Vec<TxExecution>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("chain does not start at a genesis block")]
    NotGenesisRooted,
    #[error("block {hash} does not extend its predecessor")]
    BrokenLink { hash: Digest },
    #[error("block {hash} contains invalid transaction {tx}: {reason:?}")]
    InvalidTx {
        hash: Digest,
        tx: TxId,
        reason: InvalidReason,
    },
}

/// Why a received block is rejected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Parent digest not in the tree; the receiver should fetch ancestors.
    UnknownParent,
    BadHeight,
    /// Stored hash does not recompute from the header fields.
    BadHash,
    InvalidTx { tx: TxId, reason: InvalidReason },
}

/// Static chain parameters shared by every node in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub genesis_alloc: BTreeMap<Address, Coins>,
    pub genesis_contracts: Vec<ContractConfig>,
    /// Coins credited to the miner of each non-genesis block. Defaults to 0
    /// so that the total supply is conserved exactly.
    pub block_reward: Coins,
    pub difficulty: u64,
}

impl LedgerState {
    /// State at the genesis block.
    pub fn genesis(params: &ChainParams) -> Self {
        let mut contracts = BTreeMap::new();
        for config in &params.genesis_contracts {
            contracts.insert(config.id.clone(), ContractState::new(config));
        }
        LedgerState {
            balances: params.genesis_alloc.clone(),
            contracts,
            used_seqs: BTreeMap::new(),
        }
    }

    pub fn balance(&self, addr: &Address) -> Coins {
        self.balances.get(addr).copied().unwrap_or(0)
    }

    pub fn total_balance(&self) -> Coins {
        self.balances.values().sum()
    }

    fn seq_used(&self, sender: &Address, seq: u64) -> bool {
        self.used_seqs
            .get(sender)
            .is_some_and(|set| set.contains(&seq))
    }

    fn consume_seq(&mut self, sender: &Address, seq: u64) {
        self.used_seqs.entry(sender.clone()).or_default().insert(seq);
    }

    /// Applies one transaction. Invalid transactions leave the state
    /// untouched; included-but-failed ones only consume the sequence number.
    pub fn apply_tx(&mut self, tx: &Transaction) -> TxOutcome {
        if self.seq_used(&tx.sender, tx.client_seq) {
            return TxOutcome::Invalid(InvalidReason::SequenceReused);
        }
        let outcome = match &tx.kind {
            TxKind::Transfer { to, amount } => {
                if *amount == 0 {
                    return TxOutcome::Invalid(InvalidReason::ZeroAmount);
                }
                if self.balance(&tx.sender) < *amount {
                    return TxOutcome::Invalid(InvalidReason::InsufficientFunds);
                }
                *self.balances.entry(tx.sender.clone()).or_insert(0) -= amount;
                *self.balances.entry(to.clone()).or_insert(0) += amount;
                TxOutcome::Executed
            }
            TxKind::ContractCall { contract, call } => {
                let Some(state) = self.contracts.get_mut(contract) else {
                    return TxOutcome::Invalid(InvalidReason::UnknownContract);
                };
                match state.execute(&tx.sender, call) {
                    CallOutcome::Executed => TxOutcome::Executed,
                    CallOutcome::GuardSkipped => TxOutcome::GuardSkipped,
                    CallOutcome::Thrown(reason) => TxOutcome::Thrown(reason),
                }
            }
            TxKind::Deploy(config) => {
                if self.contracts.contains_key(&config.id) {
                    return TxOutcome::Invalid(InvalidReason::ContractAlreadyExists);
                }
                self.contracts
                    .insert(config.id.clone(), ContractState::new(config));
                TxOutcome::Executed
            }
            TxKind::MultisigJoint {
                inputs,
                recipient,
                arbitrator,
                signatures,
            } => {
                // Valid signers are the input owners plus the arbitrator;
                // at least two distinct ones must have signed.
                let mut allowed: BTreeSet<&Address> =
                    inputs.iter().map(|(owner, _)| owner).collect();
                allowed.insert(arbitrator);
                let signers: BTreeSet<&Address> = signatures
                    .iter()
                    .filter(|s| allowed.contains(s))
                    .collect();
                if signers.len() < 2 {
                    return TxOutcome::Invalid(InvalidReason::MissingSignatures);
                }
                // All debits are checked before any write so the joint
                // payment applies atomically or not at all.
                let mut debits: BTreeMap<&Address, Coins> = BTreeMap::new();
                for (owner, amount) in inputs {
                    if *amount == 0 {
                        return TxOutcome::Invalid(InvalidReason::ZeroAmount);
                    }
                    *debits.entry(owner).or_insert(0) += amount;
                }
                for (owner, total) in &debits {
                    if self.balance(owner) < *total {
                        return TxOutcome::Invalid(InvalidReason::InsufficientFunds);
                    }
                }
                let total: Coins = inputs.iter().map(|(_, a)| a).sum();
                for (owner, debit) in debits {
                    *self.balances.get_mut(owner).unwrap() -= debit;
                }
                *self.balances.entry(recipient.clone()).or_insert(0) += total;
                TxOutcome::Executed
            }
        };
        self.consume_seq(&tx.sender, tx.client_seq);
        outcome
    }

    /// Applies a block's reward and transactions. Fails if the block carries
    /// a transaction that is invalid at this state, which on a validated
    /// chain is a programming error.
    pub fn apply_block(
        &mut self,
        block: &Block,
        block_reward: Coins,
    ) -> Result<Vec<TxExecution>, ChainError> {
        if block.height > 0 && block_reward > 0 {
            *self.balances.entry(block.miner_address()).or_insert(0) += block_reward;
        }
        let mut executions = Vec::with_capacity(block.txs.len());
        for tx in &block.txs {
            let outcome = self.apply_tx(tx);
            if let TxOutcome::Invalid(reason) = &outcome {
                return Err(ChainError::InvalidTx {
                    hash: block.hash,
                    tx: tx.id.clone(),
                    reason: reason.clone(),
                });
            }
            executions.push(TxExecution {
                block: block.hash,
                height: block.height,
                tx_id: tx.id.clone(),
                sender: tx.sender.clone(),
                outcome,
            });
        }
        Ok(executions)
    }
}

impl Block {
    /// Mining rewards are credited to an account named after the miner.
    pub fn miner_address(&self) -> Address {
        Address(self.miner.0.clone())
    }
}

/// Replays a genesis-rooted chain from scratch. This is the reference
/// semantics: the incrementally maintained per-node ledger must always equal
/// this replay, and tests check exactly that after every reorganization.
pub fn apply_chain<'a, I>(blocks: I, params: &ChainParams) -> Result<ChainReplay, ChainError>
where
    I: IntoIterator<Item = &'a Block>,
{
    let mut iter = blocks.into_iter();
    let Some(genesis) = iter.next() else {
        return Err(ChainError::NotGenesisRooted);
    };
    if genesis.height != 0 || genesis.parent != Digest::ZERO {
        return Err(ChainError::NotGenesisRooted);
    }
    let mut state = LedgerState::genesis(params);
    let mut executions = Vec::new();
    let mut prev = genesis;
    for block in iter {
        if block.parent != prev.hash || block.height != prev.height + 1 {
            return Err(ChainError::BrokenLink { hash: block.hash });
        }
        executions.extend(state.apply_block(block, params.block_reward)?);
        prev = block;
    }
    Ok(ChainReplay { state, executions })
}

/// Replays the tree path from genesis to `tip`.
pub fn state_at(tree: &BlockTree, tip: &Digest, params: &ChainParams) -> LedgerState {
    let chain = tree.chain_to(tip);
    let blocks: Vec<&Block> = chain.iter().map(|h| tree.get(h).unwrap()).collect();
    apply_chain(blocks, params)
        .expect("tree paths are validated on insert")
        .state
}

/// Full validation of a received block against a tree: the parent must be
/// known, the height must extend it, the stored hash must recompute, and
/// every transaction must be includable when applied in order at the
/// parent's state.
pub fn validate_block(
    block: &Block,
    tree: &BlockTree,
    params: &ChainParams,
) -> Result<(), RejectReason> {
    let Some(parent) = tree.get(&block.parent) else {
        return Err(RejectReason::UnknownParent);
    };
    let state = state_at(tree, &block.parent, params);
    validate_block_at(block, parent, state, params).map(|_| ())
}

/// Validation core with the parent state precomputed; segment processing
/// uses this with a rolling state to avoid quadratic replays.
pub fn validate_block_at(
    block: &Block,
    parent: &Block,
    parent_state: LedgerState,
    params: &ChainParams,
) -> Result<LedgerState, RejectReason> {
    if block.height != parent.height + 1 {
        return Err(RejectReason::BadHeight);
    }
    if block.compute_hash() != block.hash {
        return Err(RejectReason::BadHash);
    }
    let mut state = parent_state;
    match state.apply_block(block, params.block_reward) {
        Ok(_) => Ok(state),
        Err(ChainError::InvalidTx { tx, reason, .. }) => {
            Err(RejectReason::InvalidTx { tx, reason })
        }
        Err(_) => unreachable!("apply_block only fails on invalid transactions"),
    }
}
