use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};

use super::ManifestError;
use crate::address::Address;

/// An ed25519 signing identity configured from a 32-byte seed.
#[derive(Clone)]
pub struct CreatorKey {
    inner: SigningKey,
}

impl CreatorKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        CreatorKey {
            inner: SigningKey::from_bytes(&seed),
        }
    }

    /// Parses the 64-character hex seed format used in config files.
    pub fn from_seed_hex(text: &str) -> Result<Self, ManifestError> {
        let mut seed = [0u8; 32];
        hex::decode_to_slice(text.trim(), &mut seed)
            .map_err(|e| ManifestError::SigningFailure(format!("bad key seed: {e}")))?;
        Ok(Self::from_seed(seed))
    }

    /// Derives a key from an arbitrary label. Used for fixtures and demos.
    pub fn from_label(label: &str) -> Self {
        Self::from_seed(Sha256::digest(label.as_bytes()).into())
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(self.inner.to_bytes())
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.inner.verifying_key().to_bytes()
    }

    pub fn wallet(&self) -> Address {
        Address::from_public_key(&self.public_key())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.inner.sign(message).to_bytes()
    }
}

impl std::fmt::Debug for CreatorKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CreatorKey(wallet={})", self.wallet())
    }
}

pub(crate) fn verify_signature(
    public_key: &[u8; 32],
    message: &[u8],
    signature: &[u8; 64],
) -> Result<(), SignatureProblem> {
    let key = VerifyingKey::from_bytes(public_key).map_err(|_| SignatureProblem::MalformedKey)?;
    let sig = ed25519_dalek::Signature::from_bytes(signature);
    key.verify(message, &sig).map_err(|_| SignatureProblem::Invalid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SignatureProblem {
    MalformedKey,
    Invalid,
}
