//! Signed provenance manifests, their on-disk store, and provenance-graph traversal.
//!
//! A manifest records who made an asset, a digest of its bytes, signed
//! assertions about it, and links to the manifests of its ingredients. The
//! links form a graph rooted at a generated asset that fans out through the
//! generating model to its training images.

mod ara;
mod keys;
mod provenance;
mod store;
mod types;

use rand::Rng;
use thiserror::Error;
use uuid::Uuid;

pub use ara::{format_ara_uri, parse_ara_uri, AraUri, ARA_SCHEME};
pub use keys::CreatorKey;
pub use provenance::{extract_wallet_route, traverse_provenance, Contributor, ProvenanceGraph, ProvenanceNode};
pub use store::{read_sidecar, sidecar_path, write_sidecar, ManifestStore};
pub use types::{
    Assertion, AssertionKind, CreatorInfo, FieldValue, IngredientRef, IngredientRole, Manifest, MANIFEST_FORMAT,
    MINT_ORIGIN_LABEL,
};

use crate::digest::Digest256;
use keys::{verify_signature, SignatureProblem};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("ingredient {0} does not resolve in the manifest store")]
    DanglingIngredient(Uuid),
    #[error("signing failed: {0}")]
    SigningFailure(String),
    #[error("manifest {0} already exists in the store")]
    DuplicateGuid(Uuid),
    #[error("manifest {0} not found")]
    UnknownManifest(Uuid),
    #[error("provenance cycle detected: {0:?}")]
    CycleDetected(Vec<Uuid>),
    #[error("malformed ARA URI: {0}")]
    MalformedUri(String),
    #[error("invalid assertion: {0}")]
    InvalidAssertion(String),
    #[error("manifest declares no payment route")]
    NoPaymentRoute,
    #[error("could not resolve asset reference: {0}")]
    AraResolutionFailure(String),
    #[error("unsupported manifest format {0:?}")]
    UnsupportedFormat(String),
    #[error("manifest bytes are not in canonical form")]
    NonCanonical,
    #[error("manifest json: {0}")]
    Json(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerificationFailure {
    BadSignature,
    MalformedSignerKey,
    ContentHashMismatch,
    DanglingIngredient(Uuid),
    InvalidAssertion(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationResult {
    pub valid: bool,
    pub failures: Vec<VerificationFailure>,
}

impl VerificationResult {
    fn from_failures(failures: Vec<VerificationFailure>) -> Self {
        VerificationResult {
            valid: failures.is_empty(),
            failures,
        }
    }
}

/// Builds and signs a manifest for `asset`. Every ingredient must already be in `store`.
pub fn build_manifest(
    asset: &[u8],
    creator: &CreatorInfo,
    assertions: Vec<Assertion>,
    ingredients: Vec<IngredientRef>,
    key: &CreatorKey,
    store: &ManifestStore,
    rng: &mut impl Rng,
) -> Result<Manifest, ManifestError> {
    if let Some(missing) = ingredients.iter().find(|i| !store.contains(&i.manifest_guid)) {
        return Err(ManifestError::DanglingIngredient(missing.manifest_guid));
    }
    for assertion in &assertions {
        assertion.validate()?;
    }
    let guid = uuid::Builder::from_random_bytes(rng.random()).into_uuid();
    let mut manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        guid,
        creator_name: creator.name.clone(),
        creator_wallet: creator.wallet,
        assertions,
        ingredients,
        content_hash: Digest256::of(asset),
        signer_key: key.public_key(),
        signature: [0u8; 64],
    };
    sign_manifest(&mut manifest, key);
    Ok(manifest)
}

/// Replaces the signature using `key`. The embedded signer key is left untouched.
pub fn sign_manifest(manifest: &mut Manifest, key: &CreatorKey) {
    manifest.signature = key.sign(&manifest.signing_bytes());
}

/// Checks the signature, assertions and ingredient resolution.
pub fn verify_manifest(manifest: &Manifest, store: &ManifestStore) -> VerificationResult {
    VerificationResult::from_failures(collect_failures(manifest, store))
}

/// As [`verify_manifest`], additionally checking the content digest against the asset bytes.
pub fn verify_manifest_with_asset(manifest: &Manifest, store: &ManifestStore, asset: &[u8]) -> VerificationResult {
    let mut failures = collect_failures(manifest, store);
    if Digest256::of(asset) != manifest.content_hash {
        failures.push(VerificationFailure::ContentHashMismatch);
    }
    VerificationResult::from_failures(failures)
}

fn collect_failures(manifest: &Manifest, store: &ManifestStore) -> Vec<VerificationFailure> {
    let mut failures = Vec::new();
    match verify_signature(&manifest.signer_key, &manifest.signing_bytes(), &manifest.signature) {
        Ok(()) => {}
        Err(SignatureProblem::MalformedKey) => failures.push(VerificationFailure::MalformedSignerKey),
        Err(SignatureProblem::Invalid) => failures.push(VerificationFailure::BadSignature),
    }
    for assertion in &manifest.assertions {
        if let Err(e) = assertion.validate() {
            failures.push(VerificationFailure::InvalidAssertion(e.to_string()));
        }
    }
    for ingredient in &manifest.ingredients {
        if !store.contains(&ingredient.manifest_guid) {
            failures.push(VerificationFailure::DanglingIngredient(ingredient.manifest_guid));
        }
    }
    failures
}
