//! Provenance, ownership and attribution of creative assets used to train generative models.

pub mod address;
pub mod digest;
pub mod ledger;
pub mod manifest;

pub use address::{Address, WalletAddress};
pub use digest::Digest256;
pub mod apportion;
pub mod demo;
pub mod fingerprint;
pub mod index;
pub mod nn;
pub mod synth;
pub mod verifier;
