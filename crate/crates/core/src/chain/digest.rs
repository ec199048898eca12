//! Canonical header serialization and hashing.
//!
//! The byte layout below is frozen; regression tests pin a published genesis
//! digest against it. See `docs/hashing.md` for the field-by-field format.
//!
//! Layout (all integers little-endian u64, all variable-length fields
//! length-prefixed with a u64):
//!
//! ```text
//! tag        "reorgsim/header/v1" (length-prefixed)
//! height     u64
//! parent     32 raw bytes
//! miner      length-prefixed UTF-8
//! tx_ids     u64 count, then each id length-prefixed UTF-8
//! difficulty u64
//! mined_at   u64 microseconds
//! nonce      u64
//! ```

use sha2::{Digest as _, Sha256};

use crate::chain::types::{Digest, NodeId, TxId};
use crate::time::SimTime;

const HEADER_TAG: &[u8] = b"reorgsim/header/v1";

/// Incremental canonical byte encoder.
#[derive(Default)]
pub struct CanonicalWriter {
    buf: Vec<u8>,
}

impl CanonicalWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.put_u64(bytes.len() as u64);
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_bytes(s.as_bytes());
    }

    pub fn put_digest(&mut self, d: &Digest) {
        self.buf.extend_from_slice(&d.0);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Canonical bytes of a block header.
pub fn block_header_bytes(
    height: u64,
    parent: &Digest,
    miner: &NodeId,
    tx_ids: &[TxId],
    difficulty: u64,
    mined_at: SimTime,
    nonce: u64,
) -> Vec<u8> {
    let mut w = CanonicalWriter::new();
    w.put_str(std::str::from_utf8(HEADER_TAG).unwrap());
    w.put_u64(height);
    w.put_digest(parent);
    w.put_str(miner.as_str());
    w.put_u64(tx_ids.len() as u64);
    for id in tx_ids {
        w.put_str(id.as_str());
    }
    w.put_u64(difficulty);
    w.put_u64(mined_at.as_micros());
    w.put_u64(nonce);
    w.finish()
}

/// SHA-256 over the canonical header bytes. Identical fields produce an
/// identical digest on every platform and run.
pub fn block_header_digest(
    height: u64,
    parent: &Digest,
    miner: &NodeId,
    tx_ids: &[TxId],
    difficulty: u64,
    mined_at: SimTime,
    nonce: u64,
) -> Digest {
    let bytes = block_header_bytes(height, parent, miner, tx_ids, difficulty, mined_at, nonce);
    let out = Sha256::digest(&bytes);
    Digest(out.into())
}
