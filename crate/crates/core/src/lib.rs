//! Deterministic discrete-event simulation of a small private
//! proof-of-work chain, built to reproduce and detect commit anomalies:
//! committed transactions reordered or dropped by a fork reorganization,
//! double spends, and the contract patterns that do or do not survive them.

pub mod chain;
pub mod contracts;
pub mod log;
pub mod metrics;
pub mod net;
pub mod node;
pub mod report;
pub mod scenario;
pub mod time;

pub use chain::{Address, Block, Coins, Digest, NodeId, Transaction, TxId, TxKind};
pub use time::SimTime;
