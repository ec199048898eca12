//! Blocks, transactions, the block tree, ledger state and reorganization.

pub mod digest;
pub mod ledger;
pub mod tree;
pub mod types;

pub use ledger::{
    apply_chain, state_at, validate_block, validate_block_at, ChainError, ChainParams,
    ChainReplay, InvalidReason, LedgerState, RejectReason, TxExecution, TxOutcome,
};
pub use tree::{reorganize, BlockTree, CanonicalView, ReorgOutcome, TreeError};
pub use types::{genesis_block, Address, Block, Coins, Digest, NodeId, Transaction, TxId, TxKind};
