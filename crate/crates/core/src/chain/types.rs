//! Core domain types: identifiers, transactions and blocks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contracts::{ContractCall, ContractConfig, ContractId};
use crate::time::SimTime;

/// Coin amounts. Balances are unsigned, so negative balances are
/// unrepresentable by construction.
pub type Coins = u64;

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", self.0)
            }
        }
    };
}

string_id!(
    /// An account address. Unique within a simulation; the genesis
    /// allocation assigns each address its starting balance.
    Address
);

string_id!(
    /// Unique transaction identifier.
    TxId
);

string_id!(
    /// Peer identifier.
    NodeId
);

/// What a transaction does when applied to the ledger.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxKind {
    /// Plain value transfer from the sender to `to`.
    Transfer { to: Address, amount: Coins },
    /// Invocation of a deployed contract function.
    ContractCall {
        contract: ContractId,
        call: ContractCall,
    },
    /// Deploys a new contract with the given initial state.
    Deploy(ContractConfig),
    /// Atomic joint payment: several inputs owned by different addresses are
    /// debited together and the recipient is credited once. Requires at
    /// least two distinct signatures from the input owners or the arbitrator.
    MultisigJoint {
        inputs: Vec<(Address, Coins)>,
        recipient: Address,
        arbitrator: Address,
        signatures: Vec<Address>,
    },
}

/// A transaction issued by a client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub sender: Address,
    pub kind: TxKind,
    /// Per-sender sequence number, strictly increasing at issue time. A
    /// chain never applies the same (sender, seq) twice.
    pub client_seq: u64,
    pub issue_time: SimTime,
}

/// A 256-bit block digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    /// The all-zeros digest used as the genesis parent.
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(Digest(arr))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Abbreviate in debug output; full digest via Display.
        write!(f, "{}…", &self.to_hex()[..12])
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// A block in the chain. `hash` commits to the header fields (including the
/// ordered transaction ids) via the canonical serialization in
/// [`crate::chain::digest`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent: Digest,
    pub hash: Digest,
    pub miner: NodeId,
    pub txs: Vec<Transaction>,
    pub difficulty: u64,
    pub mined_at: SimTime,
    pub nonce: u64,
}

impl Block {
    pub fn tx_ids(&self) -> Vec<TxId> {
        self.txs.iter().map(|t| t.id.clone()).collect()
    }

    /// Recomputes the header digest from the block's fields.
    pub fn compute_hash(&self) -> Digest {
        crate::chain::digest::block_header_digest(
            self.height,
            &self.parent,
            &self.miner,
            &self.tx_ids(),
            self.difficulty,
            self.mined_at,
            self.nonce,
        )
    }

    /// Fills in `hash` from the other fields.
    pub fn seal(mut self) -> Block {
        self.hash = self.compute_hash();
        self
    }
}

/// The deterministic genesis block for a given difficulty setting.
pub fn genesis_block(difficulty: u64) -> Block {
    Block {
        height: 0,
        parent: Digest::ZERO,
        hash: Digest::ZERO,
        miner: NodeId::from("genesis"),
        txs: Vec::new(),
        difficulty,
        mined_at: SimTime::ZERO,
        nonce: 0,
    }
    .seal()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_hex_round_trip() {
        let mut bytes = [0u8; 32];
        bytes[0] = 0xab;
        bytes[31] = 0x01;
        let d = Digest(bytes);
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest::from_hex("abcd").is_err());
    }

    #[test]
    fn genesis_has_fixed_shape() {
        let g = genesis_block(0x400);
        assert_eq!(g.height, 0);
        assert_eq!(g.parent, Digest::ZERO);
        assert!(g.txs.is_empty());
        assert_eq!(g.hash, g.compute_hash());
    }
}
