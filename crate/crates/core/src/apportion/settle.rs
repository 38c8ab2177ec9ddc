use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;
use uuid::Uuid;

use super::CreditReport;
use crate::address::Address;
use crate::ledger::{LedgerState, PayoutRecord, Receipt, TxError, TxOp};
use crate::manifest::{extract_wallet_route, ManifestStore};

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "error", rename_all = "camelCase")]
pub enum SettleError {
    #[error("no payment route for {image_id}: {reason}")]
    NoPaymentRoute { image_id: String, reason: String },
    #[error("insufficient escrow for {image_id}: held {held}, needed {needed}")]
    InsufficientEscrow { image_id: String, held: u64, needed: u64 },
    #[error("ledger rejected payout for {image_id}: {reason}")]
    Rejected { image_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SettleFailure {
    pub image_id: String,
    pub weight: f64,
    pub error: SettleError,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Settlement {
    pub payouts: BTreeMap<String, PayoutRecord>,
    pub failures: Vec<SettleFailure>,
}

impl Settlement {
    pub fn total_paid(&self) -> u64 {
        self.payouts.values().map(|p| p.amount).sum()
    }
}

/// Pays every image in `report.royalty_weights` by exercising the payer's
/// right on that image's NFT with the image's royalty weight.
///
/// `manifests` maps image ids to their manifest GUIDs in `store`. The right is
/// found on the rights contract owning the NFT named by the manifest's asset
/// reference: the lowest-numbered right held by `payer` for that token and
/// manifest. Each image settles in one transaction, so a failure leaves the
/// others untouched.
pub fn settle_royalties(
    report: &CreditReport,
    manifests: &BTreeMap<String, Uuid>,
    store: &ManifestStore,
    ledger: &mut LedgerState,
    payer: Address,
) -> Settlement {
    let mut out = Settlement::default();
    for (image_id, &weight) in &report.royalty_weights {
        match settle_one(image_id, weight, manifests, store, ledger, payer) {
            Ok(record) => {
                out.payouts.insert(image_id.clone(), record);
            }
            Err(error) => out.failures.push(SettleFailure {
                image_id: image_id.clone(),
                weight,
                error,
            }),
        }
    }
    out
}

fn settle_one(
    image_id: &str,
    weight: f64,
    manifests: &BTreeMap<String, Uuid>,
    store: &ManifestStore,
    ledger: &mut LedgerState,
    payer: Address,
) -> Result<PayoutRecord, SettleError> {
    let no_route = |reason: String| SettleError::NoPaymentRoute {
        image_id: image_id.to_string(),
        reason,
    };
    let guid = manifests
        .get(image_id)
        .ok_or_else(|| no_route("no manifest registered".into()))?;
    let manifest = store
        .get(guid)
        .ok_or_else(|| no_route(format!("manifest {guid} not in store")))?;
    let route = extract_wallet_route(manifest, ledger).map_err(|e| no_route(e.to_string()))?;
    let ara = match manifest.ara() {
        Some(Ok(ara)) => ara,
        _ => return Err(no_route("manifest has no ORA binding".into())),
    };
    let rights_addr = ledger
        .owner_of(&ara.contract, ara.nft_id)
        .map_err(|e| no_route(e.to_string()))?;
    let rights = ledger
        .rights_contract(&rights_addr)
        .ok_or_else(|| no_route(format!("{ara} is not held by a rights contract")))?;
    if rights.creator != route {
        return Err(no_route(format!(
            "wallet route {route} differs from rights creator {}",
            rights.creator
        )));
    }
    let right_id = rights
        .rights
        .iter()
        .find(|(_, t)| t.holder == payer && t.nft_id == ara.nft_id && t.bound_manifest == *guid)
        .map(|(id, _)| *id)
        .ok_or_else(|| no_route(format!("{payer} holds no right on {ara}")))?;

    let op = TxOp::ExerciseRight {
        rights: rights_addr,
        right_id,
        weight,
    };
    match ledger.submit(payer, op) {
        Ok(Receipt::Paid(record)) => Ok(record),
        Ok(other) => Err(SettleError::Rejected {
            image_id: image_id.to_string(),
            reason: format!("unexpected receipt {other:?}"),
        }),
        Err(TxError::InsufficientEscrow { held, needed }) => Err(SettleError::InsufficientEscrow {
            image_id: image_id.to_string(),
            held,
            needed,
        }),
        Err(e) => Err(SettleError::Rejected {
            image_id: image_id.to_string(),
            reason: e.to_string(),
        }),
    }
}
