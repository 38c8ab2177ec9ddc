use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::TxError;
use crate::address::Address;
use crate::digest::Digest256;

pub const LEDGER_FORMAT: &str = "provenant.ledger/1";

/// CAIP-2 style chain identifier, e.g. `eip155:31337`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainRef {
    pub namespace: String,
    pub chain_id: String,
}

impl ChainRef {
    pub fn new(namespace: &str, chain_id: &str) -> Self {
        ChainRef {
            namespace: namespace.to_string(),
            chain_id: chain_id.to_string(),
        }
    }
}

impl Default for ChainRef {
    fn default() -> Self {
        ChainRef::new("eip155", "31337")
    }
}

impl fmt::Display for ChainRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.chain_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NftToken {
    pub owner: Address,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NftContract {
    pub deployer: Address,
    pub name: String,
    pub next_id: u64,
    pub tokens: BTreeMap<u64, NftToken>,
    pub minted_by: BTreeMap<u64, Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RightKind {
    TrainModel,
    GenerateImage,
    Resell,
    Custom(String),
}

impl fmt::Display for RightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RightKind::TrainModel => f.write_str("train-model"),
            RightKind::GenerateImage => f.write_str("generate-image"),
            RightKind::Resell => f.write_str("resell"),
            RightKind::Custom(label) => write!(f, "custom:{label}"),
        }
    }
}

impl FromStr for RightKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train-model" => Ok(RightKind::TrainModel),
            "generate-image" => Ok(RightKind::GenerateImage),
            "resell" => Ok(RightKind::Resell),
            other => match other.strip_prefix("custom:") {
                Some(label) if !label.is_empty() => Ok(RightKind::Custom(label.to_string())),
                _ => Err(format!("unknown right kind {s:?}")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RightsToken {
    pub holder: Address,
    pub kind: RightKind,
    pub base_royalty: u64,
    pub nft_id: u64,
    pub bound_manifest: Uuid,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RightsContract {
    pub creator: Address,
    /// The NFT collection whose tokens this contract may hold.
    pub nft_contract: Address,
    pub owned_nft_ids: BTreeSet<u64>,
    pub manifest_guids: BTreeMap<u64, Uuid>,
    pub next_right_id: u64,
    pub rights: BTreeMap<u64, RightsToken>,
    pub escrow: BTreeMap<Address, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
// Externally tagged: internal tags buffer the content and lose integer map keys.
#[serde(rename_all = "snake_case")]
pub enum Contract {
    Nft(NftContract),
    Rights(RightsContract),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TxOp {
    /// Creates currency out of thin air; the only op exempt from conservation.
    Faucet {
        to: Address,
        amount: u64,
    },
    Transfer {
        to: Address,
        amount: u64,
    },
    DeployNft {
        name: String,
    },
    DeployRights {
        nft_contract: Address,
    },
    MintNft {
        contract: Address,
        uri: String,
    },
    TransferNft {
        contract: Address,
        to: Address,
        nft_id: u64,
    },
    BindManifest {
        rights: Address,
        nft_id: u64,
        manifest_guid: Uuid,
    },
    IssueRight {
        rights: Address,
        holder: Address,
        kind: RightKind,
        nft_id: u64,
        base_royalty: u64,
    },
    TransferRight {
        rights: Address,
        to: Address,
        right_id: u64,
    },
    DepositEscrow {
        rights: Address,
        amount: u64,
    },
    WithdrawEscrow {
        rights: Address,
        amount: u64,
    },
    ExerciseRight {
        rights: Address,
        right_id: u64,
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tx {
    pub from: Address,
    pub nonce: u64,
    #[serde(flatten)]
    pub op: TxOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PayoutRecord {
    pub rights: Address,
    pub right_id: u64,
    pub holder: Address,
    pub creator: Address,
    pub nft_id: u64,
    pub manifest_guid: Uuid,
    pub base_royalty: u64,
    pub weight: f64,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "receipt", rename_all = "snake_case")]
pub enum Receipt {
    Funded,
    Transferred,
    Deployed { address: Address },
    Minted { nft_id: u64 },
    NftTransferred,
    ManifestBound,
    RightIssued { right_id: u64 },
    RightTransferred,
    Deposited,
    Withdrawn,
    Paid(PayoutRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TxStatus {
    Applied { receipt: Receipt },
    Rejected { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub seq: u64,
    pub tx: Tx,
    #[serde(flatten)]
    pub status: TxStatus,
}

/// Scales `base` by `weight` in [0, 1], rounding half to even.
///
/// The product is computed exactly from the binary expansion of `weight`, so
/// the result does not depend on floating-point rounding of the multiplication.
pub fn scale_royalty(base: u64, weight: f64) -> Result<u64, TxError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(TxError::InvalidWeight(weight));
    }
    if weight == 0.0 || base == 0 {
        return Ok(0);
    }
    if weight == 1.0 {
        return Ok(base);
    }
    let bits = weight.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    // weight < 1 with a 53-bit mantissa, so exp <= -1.
    let shift = (-exp) as u32;
    let product = base as u128 * mantissa as u128;
    if shift >= 127 {
        // product < 2^117, so the scaled value is far below one half.
        return Ok(0);
    }
    let quotient = product >> shift;
    let remainder = product & ((1u128 << shift) - 1);
    let half = 1u128 << (shift - 1);
    let rounded = if remainder > half || (remainder == half && quotient & 1 == 1) {
        quotient + 1
    } else {
        quotient
    };
    u64::try_from(rounded).map_err(|_| TxError::Overflow)
}

/// Complete ledger state. The transaction log is kept alongside but persisted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerState {
    pub format: String,
    pub chain: ChainRef,
    pub balances: BTreeMap<Address, u64>,
    pub nonces: BTreeMap<Address, u64>,
    pub contracts: BTreeMap<Address, Contract>,
    #[serde(skip)]
    pub log: Vec<TxRecord>,
}

impl Default for LedgerState {
    fn default() -> Self {
        LedgerState::genesis(ChainRef::default())
    }
}

impl LedgerState {
    pub fn genesis(chain: ChainRef) -> Self {
        LedgerState {
            format: LEDGER_FORMAT.to_string(),
            chain,
            balances: BTreeMap::new(),
            nonces: BTreeMap::new(),
            contracts: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn balance(&self, who: &Address) -> u64 {
        self.balances.get(who).copied().unwrap_or(0)
    }

    pub fn next_nonce(&self, who: &Address) -> u64 {
        self.nonces.get(who).copied().unwrap_or(0)
    }

    pub fn nft_contract(&self, at: &Address) -> Option<&NftContract> {
        match self.contracts.get(at) {
            Some(Contract::Nft(c)) => Some(c),
            _ => None,
        }
    }

    pub fn rights_contract(&self, at: &Address) -> Option<&RightsContract> {
        match self.contracts.get(at) {
            Some(Contract::Rights(c)) => Some(c),
            _ => None,
        }
    }

    pub fn owner_of(&self, contract: &Address, nft_id: u64) -> Result<Address, TxError> {
        let c = self.nft_ref(contract)?;
        c.tokens
            .get(&nft_id)
            .map(|t| t.owner)
            .ok_or(TxError::UnknownToken(nft_id))
    }

    pub fn token_uri(&self, contract: &Address, nft_id: u64) -> Result<&str, TxError> {
        let c = self.nft_ref(contract)?;
        c.tokens
            .get(&nft_id)
            .map(|t| t.uri.as_str())
            .ok_or(TxError::UnknownToken(nft_id))
    }

    pub fn minted_by(&self, contract: &Address, nft_id: u64) -> Result<Address, TxError> {
        let c = self.nft_ref(contract)?;
        c.minted_by.get(&nft_id).copied().ok_or(TxError::UnknownToken(nft_id))
    }

    pub fn escrow(&self, rights: &Address, payer: &Address) -> u64 {
        self.rights_contract(rights)
            .and_then(|r| r.escrow.get(payer).copied())
            .unwrap_or(0)
    }

    /// Sum of all balances and all escrow holdings.
    pub fn total_currency(&self) -> u128 {
        let balances: u128 = self.balances.values().map(|&v| v as u128).sum();
        let escrows: u128 = self
            .contracts
            .values()
            .filter_map(|c| match c {
                Contract::Rights(r) => Some(r.escrow.values().map(|&v| v as u128).sum::<u128>()),
                Contract::Nft(_) => None,
            })
            .sum();
        balances + escrows
    }

    /// Digest of the state proper (everything except the log).
    pub fn state_digest(&self) -> Digest256 {
        Digest256::of(&serde_json::to_vec(self).expect("ledger state serializes"))
    }

    pub fn log_digest(&self) -> Digest256 {
        Digest256::of(&serde_json::to_vec(&self.log).expect("tx log serializes"))
    }

    /// Builds a transaction with the sender's next nonce and applies it.
    pub fn submit(&mut self, from: Address, op: TxOp) -> Result<Receipt, TxError> {
        let nonce = self.next_nonce(&from);
        self.apply_tx(Tx { from, nonce, op })
    }

    /// Applies one transaction exactly once. Rejected transactions change
    /// nothing except being appended to the log.
    pub fn apply_tx(&mut self, tx: Tx) -> Result<Receipt, TxError> {
        let expected = self.next_nonce(&tx.from);
        let result = if self.contracts.contains_key(&tx.from) {
            Err(TxError::Unauthorized(format!(
                "contract {} cannot originate transactions",
                tx.from
            )))
        } else if tx.nonce != expected {
            Err(TxError::BadNonce {
                sender: tx.from,
                expected,
                got: tx.nonce,
            })
        } else {
            self.execute(&tx)
        };
        if result.is_ok() {
            self.nonces.insert(tx.from, expected + 1);
        }
        let status = match &result {
            Ok(receipt) => TxStatus::Applied {
                receipt: receipt.clone(),
            },
            Err(e) => TxStatus::Rejected { error: e.to_string() },
        };
        let seq = self.log.len() as u64;
        self.log.push(TxRecord { seq, tx, status });
        result
    }

    fn nft_ref(&self, at: &Address) -> Result<&NftContract, TxError> {
        match self.contracts.get(at) {
            Some(Contract::Nft(c)) => Ok(c),
            Some(_) => Err(TxError::WrongContractKind(*at)),
            None => Err(TxError::UnknownContract(*at)),
        }
    }

    fn rights_ref(&self, at: &Address) -> Result<&RightsContract, TxError> {
        match self.contracts.get(at) {
            Some(Contract::Rights(c)) => Ok(c),
            Some(_) => Err(TxError::WrongContractKind(*at)),
            None => Err(TxError::UnknownContract(*at)),
        }
    }

    fn nft_mut(&mut self, at: &Address) -> &mut NftContract {
        match self.contracts.get_mut(at) {
            Some(Contract::Nft(c)) => c,
            _ => unreachable!("validated before mutation"),
        }
    }

    fn rights_mut(&mut self, at: &Address) -> &mut RightsContract {
        match self.contracts.get_mut(at) {
            Some(Contract::Rights(c)) => c,
            _ => unreachable!("validated before mutation"),
        }
    }

    fn debit_check(&self, who: &Address, amount: u64) -> Result<(), TxError> {
        let balance = self.balance(who);
        if balance < amount {
            return Err(TxError::InsufficientFunds {
                balance,
                needed: amount,
            });
        }
        Ok(())
    }

    fn credit_check(&self, who: &Address, amount: u64) -> Result<(), TxError> {
        self.balance(who)
            .checked_add(amount)
            .map(|_| ())
            .ok_or(TxError::Overflow)
    }

    fn move_funds(&mut self, from: &Address, to: &Address, amount: u64) {
        *self.balances.entry(*from).or_insert(0) -= amount;
        *self.balances.entry(*to).or_insert(0) += amount;
    }

    fn execute(&mut self, tx: &Tx) -> Result<Receipt, TxError> {
        let from = tx.from;
        match &tx.op {
            TxOp::Faucet { to, amount } => {
                self.credit_check(to, *amount)?;
                *self.balances.entry(*to).or_insert(0) += amount;
                Ok(Receipt::Funded)
            }
            TxOp::Transfer { to, amount } => {
                self.debit_check(&from, *amount)?;
                if from != *to {
                    self.credit_check(to, *amount)?;
                    self.move_funds(&from, to, *amount);
                }
                Ok(Receipt::Transferred)
            }
            TxOp::DeployNft { name } => {
                let address = self.fresh_contract_address(&from, tx.nonce)?;
                self.contracts.insert(
                    address,
                    Contract::Nft(NftContract {
                        deployer: from,
                        name: name.clone(),
                        ..Default::default()
                    }),
                );
                Ok(Receipt::Deployed { address })
            }
            TxOp::DeployRights { nft_contract } => {
                self.nft_ref(nft_contract)?;
                let address = self.fresh_contract_address(&from, tx.nonce)?;
                self.contracts.insert(
                    address,
                    Contract::Rights(RightsContract {
                        creator: from,
                        nft_contract: *nft_contract,
                        ..Default::default()
                    }),
                );
                Ok(Receipt::Deployed { address })
            }
            TxOp::MintNft { contract, uri } => {
                self.nft_ref(contract)?;
                let c = self.nft_mut(contract);
                let nft_id = c.next_id;
                c.next_id += 1;
                c.tokens.insert(
                    nft_id,
                    NftToken {
                        owner: from,
                        uri: uri.clone(),
                    },
                );
                c.minted_by.insert(nft_id, from);
                Ok(Receipt::Minted { nft_id })
            }
            TxOp::TransferNft { contract, to, nft_id } => {
                let owner = self.owner_of(contract, *nft_id)?;
                if owner != from {
                    return Err(TxError::Unauthorized(format!("{from} does not own token {nft_id}")));
                }
                self.nft_mut(contract).tokens.get_mut(nft_id).expect("checked").owner = *to;
                // Rights contracts track the tokens of their own collection that they hold.
                if let Some(Contract::Rights(r)) = self.contracts.get_mut(&from) {
                    if r.nft_contract == *contract {
                        r.owned_nft_ids.remove(nft_id);
                    }
                }
                if let Some(Contract::Rights(r)) = self.contracts.get_mut(to) {
                    if r.nft_contract == *contract {
                        r.owned_nft_ids.insert(*nft_id);
                    }
                }
                Ok(Receipt::NftTransferred)
            }
            TxOp::BindManifest {
                rights,
                nft_id,
                manifest_guid,
            } => {
                let r = self.rights_ref(rights)?;
                if r.creator != from {
                    return Err(TxError::Unauthorized(format!(
                        "{from} does not control rights contract {rights}"
                    )));
                }
                if let Some(existing) = r.manifest_guids.get(nft_id) {
                    return Err(TxError::AlreadyBound {
                        nft_id: *nft_id,
                        guid: *existing,
                    });
                }
                let owner = self.owner_of(&r.nft_contract, *nft_id)?;
                if owner != *rights {
                    return Err(TxError::Unauthorized(format!("token {nft_id} is not held by {rights}")));
                }
                self.rights_mut(rights).manifest_guids.insert(*nft_id, *manifest_guid);
                Ok(Receipt::ManifestBound)
            }
            TxOp::IssueRight {
                rights,
                holder,
                kind,
                nft_id,
                base_royalty,
            } => {
                let r = self.rights_ref(rights)?;
                if r.creator != from {
                    return Err(TxError::Unauthorized(format!(
                        "{from} does not control rights contract {rights}"
                    )));
                }
                let bound_manifest = *r.manifest_guids.get(nft_id).ok_or(TxError::UnknownToken(*nft_id))?;
                let r = self.rights_mut(rights);
                let right_id = r.next_right_id;
                r.next_right_id += 1;
                r.rights.insert(
                    right_id,
                    RightsToken {
                        holder: *holder,
                        kind: kind.clone(),
                        base_royalty: *base_royalty,
                        nft_id: *nft_id,
                        bound_manifest,
                    },
                );
                Ok(Receipt::RightIssued { right_id })
            }
            TxOp::TransferRight { rights, to, right_id } => {
                let r = self.rights_ref(rights)?;
                let token = r.rights.get(right_id).ok_or(TxError::UnknownRight(*right_id))?;
                if token.holder != from {
                    return Err(TxError::Unauthorized(format!("{from} does not hold right {right_id}")));
                }
                self.rights_mut(rights)
                    .rights
                    .get_mut(right_id)
                    .expect("checked")
                    .holder = *to;
                Ok(Receipt::RightTransferred)
            }
            TxOp::DepositEscrow { rights, amount } => {
                let r = self.rights_ref(rights)?;
                let held = r.escrow.get(&from).copied().unwrap_or(0);
                held.checked_add(*amount).ok_or(TxError::Overflow)?;
                self.debit_check(&from, *amount)?;
                *self.balances.entry(from).or_insert(0) -= amount;
                *self.rights_mut(rights).escrow.entry(from).or_insert(0) += amount;
                Ok(Receipt::Deposited)
            }
            TxOp::WithdrawEscrow { rights, amount } => {
                let r = self.rights_ref(rights)?;
                let held = r.escrow.get(&from).copied().unwrap_or(0);
                if held < *amount {
                    return Err(TxError::InsufficientEscrow { held, needed: *amount });
                }
                self.credit_check(&from, *amount)?;
                if *amount > 0 {
                    *self
                        .rights_mut(rights)
                        .escrow
                        .get_mut(&from)
                        .expect("held >= amount > 0") -= amount;
                    *self.balances.entry(from).or_insert(0) += amount;
                }
                Ok(Receipt::Withdrawn)
            }
            TxOp::ExerciseRight {
                rights,
                right_id,
                weight,
            } => {
                let r = self.rights_ref(rights)?;
                let token = r.rights.get(right_id).ok_or(TxError::UnknownRight(*right_id))?;
                if token.holder != from {
                    return Err(TxError::Unauthorized(format!("{from} does not hold right {right_id}")));
                }
                let amount = scale_royalty(token.base_royalty, *weight)?;
                let held = r.escrow.get(&from).copied().unwrap_or(0);
                if held < amount {
                    return Err(TxError::InsufficientEscrow { held, needed: amount });
                }
                let creator = r.creator;
                self.credit_check(&creator, amount)?;
                let record = PayoutRecord {
                    rights: *rights,
                    right_id: *right_id,
                    holder: from,
                    creator,
                    nft_id: token.nft_id,
                    manifest_guid: token.bound_manifest,
                    base_royalty: token.base_royalty,
                    weight: *weight,
                    amount,
                };
                if amount > 0 {
                    *self
                        .rights_mut(rights)
                        .escrow
                        .get_mut(&from)
                        .expect("held >= amount > 0") -= amount;
                    *self.balances.entry(creator).or_insert(0) += amount;
                }
                Ok(Receipt::Paid(record))
            }
        }
    }

    fn fresh_contract_address(&self, deployer: &Address, nonce: u64) -> Result<Address, TxError> {
        let address = Address::for_contract(deployer, nonce);
        if self.contracts.contains_key(&address) || self.balances.contains_key(&address) {
            return Err(TxError::Unauthorized(format!("address {address} already in use")));
        }
        Ok(address)
    }
}
