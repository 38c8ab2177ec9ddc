//! Minting flow and checks binding an asset's NFT, rights contract and manifest together.

use rand::Rng;
use thiserror::Error;
use uuid::Uuid;

use super::{ContentHost, ContentResolver, LedgerState, Receipt, TxError, TxOp};
use crate::address::Address;
use crate::digest::Digest256;
use crate::manifest::{
    build_manifest, verify_manifest, AraUri, Assertion, CreatorInfo, CreatorKey, IngredientRef, Manifest,
    ManifestError, ManifestStore,
};

#[derive(Debug, Error)]
pub enum OraError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("ledger rejected step {step}: {source}")]
    Tx { step: &'static str, source: TxError },
    #[error("{0}")]
    Precondition(String),
}

pub struct OraMintRequest<'a> {
    pub asset: &'a [u8],
    pub creator: CreatorInfo,
    /// Signs the manifest.
    pub key: &'a CreatorKey,
    /// Wallet sending the mint transactions. Must control `rights_contract`.
    pub minter: Address,
    /// Minter recorded in the manifest; defaults to `minter`.
    pub declared_minter: Option<Address>,
    pub nft_contract: Address,
    pub rights_contract: Address,
    pub uri: String,
    pub assertions: Vec<Assertion>,
    pub ingredients: Vec<IngredientRef>,
}

#[derive(Debug, Clone)]
pub struct OraMint {
    pub manifest: Manifest,
    pub nft_id: u64,
    pub ara: AraUri,
}

/// Outcome of checking one asset's ownership, rights and attribution bindings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OraCheck {
    pub ownership_ok: bool,
    pub rights_ok: bool,
    pub attribution_ok: bool,
    pub copy_mint_detected: bool,
    pub problems: Vec<String>,
}

/// Registers an asset: manifest with asset reference and mint origin, NFT mint,
/// transfer to the rights contract, and manifest binding. All or nothing.
pub fn mint_ora_asset(
    req: OraMintRequest<'_>,
    ledger: &mut LedgerState,
    store: &mut ManifestStore,
    host: &mut ContentHost,
    rng: &mut impl Rng,
) -> Result<OraMint, OraError> {
    let rights = ledger
        .rights_contract(&req.rights_contract)
        .ok_or_else(|| OraError::Precondition(format!("no rights contract at {}", req.rights_contract)))?;
    if rights.creator != req.minter {
        return Err(OraError::Precondition(format!(
            "{} does not control rights contract {}",
            req.minter, req.rights_contract
        )));
    }
    if rights.nft_contract != req.nft_contract {
        return Err(OraError::Precondition(format!(
            "rights contract {} serves collection {}, not {}",
            req.rights_contract, rights.nft_contract, req.nft_contract
        )));
    }
    let predicted = ledger
        .nft_contract(&req.nft_contract)
        .ok_or_else(|| OraError::Precondition(format!("no NFT contract at {}", req.nft_contract)))?
        .next_id;
    let ara = AraUri::new(
        &ledger.chain.namespace,
        &ledger.chain.chain_id,
        req.nft_contract,
        predicted,
    )?;

    let mut assertions = req.assertions;
    assertions.push(Assertion::asset_reference(&ara));
    assertions.push(Assertion::mint_origin(req.declared_minter.unwrap_or(req.minter)));
    let manifest = build_manifest(
        req.asset,
        &req.creator,
        assertions,
        req.ingredients,
        req.key,
        store,
        rng,
    )?;
    let guid = manifest.guid;
    store.insert(manifest.clone())?;

    let snapshot = ledger.clone();
    let result = run_ledger_steps(
        ledger,
        req.minter,
        req.nft_contract,
        req.rights_contract,
        &req.uri,
        predicted,
        guid,
    );
    match result {
        Ok(()) => {
            host.publish(&req.uri, req.asset.to_vec());
            Ok(OraMint {
                manifest,
                nft_id: predicted,
                ara,
            })
        }
        Err(e) => {
            *ledger = snapshot;
            store.remove(&guid);
            Err(e)
        }
    }
}

fn run_ledger_steps(
    ledger: &mut LedgerState,
    minter: Address,
    nft_contract: Address,
    rights: Address,
    uri: &str,
    predicted: u64,
    guid: Uuid,
) -> Result<(), OraError> {
    let step = |step: &'static str| move |source| OraError::Tx { step, source };
    let receipt = ledger
        .submit(
            minter,
            TxOp::MintNft {
                contract: nft_contract,
                uri: uri.to_string(),
            },
        )
        .map_err(step("mint"))?;
    if receipt != (Receipt::Minted { nft_id: predicted }) {
        return Err(OraError::Precondition(format!(
            "minted {receipt:?}, expected token {predicted}"
        )));
    }
    ledger
        .submit(
            minter,
            TxOp::TransferNft {
                contract: nft_contract,
                to: rights,
                nft_id: predicted,
            },
        )
        .map_err(step("transfer to rights contract"))?;
    ledger
        .submit(
            minter,
            TxOp::BindManifest {
                rights,
                nft_id: predicted,
                manifest_guid: guid,
            },
        )
        .map_err(step("bind manifest"))?;
    Ok(())
}

/// Checks the three bindings for the asset described by `manifest`.
///
/// Attribution requires a valid signature, a declared minter equal to both the
/// NFT's recorded minter and the signing wallet, and content at the token URI
/// matching the manifest's digest.
pub fn verify_ora_triangle(
    manifest: &Manifest,
    ledger: &LedgerState,
    store: &ManifestStore,
    content: &dyn ContentResolver,
) -> Result<OraCheck, ManifestError> {
    let ara = manifest
        .ara()
        .ok_or_else(|| ManifestError::AraResolutionFailure("manifest has no asset reference".into()))?
        .map_err(|e| ManifestError::AraResolutionFailure(e.to_string()))?;
    if ara.namespace != ledger.chain.namespace || ara.chain_id != ledger.chain.chain_id {
        return Err(ManifestError::AraResolutionFailure(format!(
            "{ara} is not on chain {}",
            ledger.chain
        )));
    }
    let owner = ledger
        .owner_of(&ara.contract, ara.nft_id)
        .map_err(|e| ManifestError::AraResolutionFailure(format!("{ara}: {e}")))?;
    let mut problems = Vec::new();
    let mut attribution = Vec::new();

    let rights = ledger
        .rights_contract(&owner)
        .filter(|r| r.nft_contract == ara.contract);
    let ownership_ok = rights.is_some();
    if !ownership_ok {
        problems.push(format!(
            "token {} is owned by {owner}, not a rights contract for its collection",
            ara.nft_id
        ));
    }
    let rights_ok = rights.is_some_and(|r| r.manifest_guids.get(&ara.nft_id) == Some(&manifest.guid));
    if ownership_ok && !rights_ok {
        problems.push(format!(
            "rights contract {owner} does not bind token {} to {}",
            ara.nft_id, manifest.guid
        ));
    }

    let verification = verify_manifest(manifest, store);
    if !verification.valid {
        attribution.push(format!("manifest does not verify: {:?}", verification.failures));
    }
    let minted_by = ledger.minted_by(&ara.contract, ara.nft_id).ok();
    let signer = manifest.signer_wallet();
    match manifest.declared_minter() {
        None => attribution.push("manifest declares no minting wallet".into()),
        Some(declared) => {
            if Some(declared) != minted_by {
                attribution.push(format!("declared minter {declared} did not mint token {}", ara.nft_id));
            }
            if declared != signer {
                attribution.push(format!("declared minter {declared} is not the signing wallet {signer}"));
            }
        }
    }
    if let Some(wallet) = manifest.creator_wallet {
        if wallet != signer {
            attribution.push(format!("creator wallet {wallet} is not the signing wallet {signer}"));
        }
    }
    let uri_ok = ledger
        .token_uri(&ara.contract, ara.nft_id)
        .ok()
        .and_then(|uri| content.fetch(uri))
        .is_some_and(|bytes| Digest256::of(bytes) == manifest.content_hash);
    if !uri_ok {
        attribution.push("content at the token URI does not match the manifest digest".into());
    }
    let attribution_ok = attribution.is_empty();
    problems.extend(attribution);
    Ok(OraCheck {
        ownership_ok,
        rights_ok,
        attribution_ok,
        copy_mint_detected: !attribution_ok && ownership_ok && rights_ok,
        problems,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::TxOp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct World {
        ledger: LedgerState,
        store: ManifestStore,
        host: ContentHost,
        rng: ChaCha8Rng,
        nft: Address,
    }

    fn world() -> World {
        let mut ledger = LedgerState::default();
        let operator = Address::from_low_u64(0xabc);
        let nft = match ledger.submit(operator, TxOp::DeployNft { name: "art".into() }).unwrap() {
            Receipt::Deployed { address } => address,
            other => panic!("{other:?}"),
        };
        World {
            ledger,
            store: ManifestStore::new(),
            host: ContentHost::new(),
            rng: ChaCha8Rng::seed_from_u64(11),
            nft,
        }
    }

    fn rights_for(w: &mut World, creator: Address) -> Address {
        match w
            .ledger
            .submit(creator, TxOp::DeployRights { nft_contract: w.nft })
            .unwrap()
        {
            Receipt::Deployed { address } => address,
            other => panic!("{other:?}"),
        }
    }

    fn request<'a>(w: &World, key: &'a CreatorKey, rights: Address, asset: &'a [u8], uri: &str) -> OraMintRequest<'a> {
        OraMintRequest {
            asset,
            creator: CreatorInfo::new("Ada", Some(key.wallet())),
            key,
            minter: key.wallet(),
            declared_minter: None,
            nft_contract: w.nft,
            rights_contract: rights,
            uri: uri.to_string(),
            assertions: vec![],
            ingredients: vec![],
        }
    }

    #[test]
    fn honest_mint_binds_all_three() {
        let mut w = world();
        let key = CreatorKey::from_label("ada");
        let rights = rights_for(&mut w, key.wallet());
        let req = request(&w, &key, rights, b"pixels", "ipfs://a");
        let minted = mint_ora_asset(req, &mut w.ledger, &mut w.store, &mut w.host, &mut w.rng).unwrap();
        assert_eq!(w.ledger.owner_of(&w.nft, minted.nft_id).unwrap(), rights);
        let rc = w.ledger.rights_contract(&rights).unwrap();
        assert_eq!(rc.manifest_guids[&minted.nft_id], minted.manifest.guid);
        assert!(rc.owned_nft_ids.contains(&minted.nft_id));
        assert_eq!(minted.manifest.ara().unwrap().unwrap(), minted.ara);
        let check = verify_ora_triangle(&minted.manifest, &w.ledger, &w.store, &w.host).unwrap();
        assert!(
            check.ownership_ok && check.rights_ok && check.attribution_ok,
            "{:?}",
            check.problems
        );
        assert!(!check.copy_mint_detected);
        w.ledger
            .submit(
                key.wallet(),
                TxOp::IssueRight {
                    rights,
                    holder: Address::from_low_u64(5),
                    kind: crate::ledger::RightKind::TrainModel,
                    nft_id: minted.nft_id,
                    base_royalty: 1000,
                },
            )
            .unwrap();
    }

    #[test]
    fn declared_minter_mismatch_is_copy_mint() {
        let mut w = world();
        let victim = CreatorKey::from_label("victim");
        let attacker = CreatorKey::from_label("attacker");
        let rights = rights_for(&mut w, attacker.wallet());
        let mut req = request(&w, &attacker, rights, b"stolen", "ipfs://s");
        req.declared_minter = Some(victim.wallet());
        let minted = mint_ora_asset(req, &mut w.ledger, &mut w.store, &mut w.host, &mut w.rng).unwrap();
        let check = verify_ora_triangle(&minted.manifest, &w.ledger, &w.store, &w.host).unwrap();
        assert!(check.ownership_ok && check.rights_ok);
        assert!(!check.attribution_ok);
        assert!(check.copy_mint_detected);
    }

    #[test]
    fn swapped_uri_content_fails_attribution() {
        let mut w = world();
        let key = CreatorKey::from_label("ada");
        let rights = rights_for(&mut w, key.wallet());
        let req = request(&w, &key, rights, b"original", "ipfs://o");
        let minted = mint_ora_asset(req, &mut w.ledger, &mut w.store, &mut w.host, &mut w.rng).unwrap();
        w.host.publish("ipfs://o", b"replacement".to_vec());
        let check = verify_ora_triangle(&minted.manifest, &w.ledger, &w.store, &w.host).unwrap();
        assert!(!check.attribution_ok);
        assert!(check.copy_mint_detected);
    }

    #[test]
    fn failed_flow_changes_nothing() {
        let mut w = world();
        let key = CreatorKey::from_label("ada");
        let rights = rights_for(&mut w, key.wallet());
        let other_nft = match w
            .ledger
            .submit(key.wallet(), TxOp::DeployNft { name: "other".into() })
            .unwrap()
        {
            Receipt::Deployed { address } => address,
            other => panic!("{other:?}"),
        };
        let digest = w.ledger.state_digest();
        let log_len = w.ledger.log.len();
        let mut req = request(&w, &key, rights, b"x", "ipfs://x");
        req.nft_contract = other_nft;
        assert!(mint_ora_asset(req, &mut w.ledger, &mut w.store, &mut w.host, &mut w.rng).is_err());
        // A caller who does not control the rights contract.
        let intruder = CreatorKey::from_label("intruder");
        let req = request(&w, &intruder, rights, b"x", "ipfs://x");
        assert!(mint_ora_asset(req, &mut w.ledger, &mut w.store, &mut w.host, &mut w.rng).is_err());
        assert_eq!(w.ledger.state_digest(), digest);
        assert_eq!(w.ledger.log.len(), log_len);
        assert!(w.store.is_empty());
        assert!(w.host.fetch("ipfs://x").is_none());
    }

    #[test]
    fn missing_asset_reference_is_resolution_failure() {
        let w = world();
        let key = CreatorKey::from_label("ada");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = build_manifest(
            b"a",
            &CreatorInfo::new("Ada", None),
            vec![],
            vec![],
            &key,
            &w.store,
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            verify_ora_triangle(&m, &w.ledger, &w.store, &w.host),
            Err(ManifestError::AraResolutionFailure(_))
        ));
    }
}
