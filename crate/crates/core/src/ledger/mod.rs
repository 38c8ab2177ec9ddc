//! Deterministic single-sequencer ledger simulation.
//!
//! The ledger hosts currency balances, ERC-721 style NFT collections and
//! per-creator rights contracts. Every mutation goes through [`LedgerState::apply_tx`],
//! which validates a transaction completely before touching state, so a
//! rejected transaction leaves everything but the log untouched.

mod content;
mod ora;
mod persist;
mod state;

use thiserror::Error;
use uuid::Uuid;

pub use content::{ContentHost, ContentResolver};
pub use ora::{mint_ora_asset, verify_ora_triangle, OraCheck, OraError, OraMint, OraMintRequest};
pub use persist::{load_ledger, replay, save_ledger};
pub use state::{
    scale_royalty, ChainRef, Contract, LedgerState, NftContract, NftToken, PayoutRecord, Receipt, RightKind,
    RightsContract, RightsToken, Tx, TxOp, TxRecord, TxStatus,
};

use crate::address::Address;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TxError {
    #[error("bad nonce for {sender}: expected {expected}, got {got}")]
    BadNonce { sender: Address, expected: u64, got: u64 },
    #[error("insufficient funds: balance {balance}, needed {needed}")]
    InsufficientFunds { balance: u64, needed: u64 },
    #[error("insufficient escrow: held {held}, needed {needed}")]
    InsufficientEscrow { held: u64, needed: u64 },
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("unknown token {0}")]
    UnknownToken(u64),
    #[error("unknown right {0}")]
    UnknownRight(u64),
    #[error("no contract at {0}")]
    UnknownContract(Address),
    #[error("contract at {0} has the wrong kind for this operation")]
    WrongContractKind(Address),
    #[error("token {nft_id} already bound to manifest {guid}")]
    AlreadyBound { nft_id: u64, guid: Uuid },
    #[error("apportionment weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("arithmetic overflow")]
    Overflow,
}

#[derive(Debug, Error)]
pub enum LedgerIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("ledger json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported ledger format {0:?}")]
    UnsupportedFormat(String),
    #[error("tx log replay diverged at record {seq}: {reason}")]
    ReplayDiverged { seq: u64, reason: String },
}
