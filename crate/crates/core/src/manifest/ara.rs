//! Asset reference URIs bridging a manifest to a ledger token:
//! `c2pa-nft://<namespace>:<chain>:<contract>/<nftId>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ManifestError;
use crate::address::Address;

pub const ARA_SCHEME: &str = "c2pa-nft://";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AraUri {
    /// Ledger family, e.g. `eip155`. Lowercase alphanumerics and `-`, 3 to 8 chars.
    pub namespace: String,
    /// Chain reference within the namespace, 1 to 32 chars of `[-_a-zA-Z0-9]`.
    pub chain_id: String,
    pub contract: Address,
    pub nft_id: u64,
}

impl AraUri {
    pub fn new(namespace: &str, chain_id: &str, contract: Address, nft_id: u64) -> Result<Self, ManifestError> {
        validate_namespace(namespace)?;
        validate_chain_id(chain_id)?;
        Ok(AraUri {
            namespace: namespace.to_string(),
            chain_id: chain_id.to_string(),
            contract,
            nft_id,
        })
    }
}

fn malformed(reason: impl Into<String>) -> ManifestError {
    ManifestError::MalformedUri(reason.into())
}

fn validate_namespace(ns: &str) -> Result<(), ManifestError> {
    let ok = (3..=8).contains(&ns.len())
        && ns
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(malformed(format!("invalid namespace {ns:?}")))
    }
}

fn validate_chain_id(chain: &str) -> Result<(), ManifestError> {
    let ok = (1..=32).contains(&chain.len())
        && chain
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(malformed(format!("invalid chain id {chain:?}")))
    }
}

fn parse_nft_id(text: &str) -> Result<u64, ManifestError> {
    let parsed = match text.strip_prefix("0x") {
        Some(hex) if !hex.is_empty() && hex.bytes().all(|b| b.is_ascii_hexdigit()) => u64::from_str_radix(hex, 16).ok(),
        Some(_) => None,
        None if !text.is_empty() && text.bytes().all(|b| b.is_ascii_digit()) => text.parse().ok(),
        None => None,
    };
    parsed.ok_or_else(|| malformed(format!("invalid nft id {text:?}")))
}

pub fn parse_ara_uri(text: &str) -> Result<AraUri, ManifestError> {
    let rest = text
        .strip_prefix(ARA_SCHEME)
        .ok_or_else(|| malformed("missing c2pa-nft:// scheme"))?;
    let (location, nft) = rest
        .split_once('/')
        .ok_or_else(|| malformed("missing /<nftId> segment"))?;
    let mut parts = location.split(':');
    let (Some(ns), Some(chain), Some(contract), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(malformed("expected <namespace>:<chain>:<contract>"));
    };
    validate_namespace(ns)?;
    validate_chain_id(chain)?;
    let contract: Address = contract
        .parse()
        .map_err(|e| malformed(format!("contract address: {e}")))?;
    let nft_id = parse_nft_id(nft)?;
    Ok(AraUri {
        namespace: ns.to_string(),
        chain_id: chain.to_string(),
        contract,
        nft_id,
    })
}

/// Canonical form: minimal lowercase hex for both contract and token id.
pub fn format_ara_uri(uri: &AraUri) -> String {
    format!(
        "{ARA_SCHEME}{}:{}:{}/{:#x}",
        uri.namespace,
        uri.chain_id,
        uri.contract.to_minimal_hex(),
        uri.nft_id
    )
}

impl fmt::Display for AraUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_ara_uri(self))
    }
}

impl FromStr for AraUri {
    type Err = ManifestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_ara_uri(s)
    }
}

impl Serialize for AraUri {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AraUri {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
