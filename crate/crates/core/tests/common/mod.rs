//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use provenant::fingerprint::{EmbeddingRecord, FeatureMap, PatchKey};
use provenant::ledger::{mint_ora_asset, ContentHost, LedgerState, OraMintRequest, Receipt, RightKind, TxOp, TxStatus};
use provenant::manifest::{CreatorInfo, CreatorKey, Manifest, ManifestStore};
use provenant::Address;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use uuid::Uuid;

// ---- vectors ----

pub fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn gaussian(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn key(i: usize) -> PatchKey {
    PatchKey::new(&format!("img-{:05}", i / 21), (i % 21) as u8)
}

/// Unit vectors scattered around `clusters` random centres, like patch
/// fingerprints of related images.
pub fn clustered(n: usize, dim: usize, clusters: usize, spread: f32, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f32>> = (0..clusters).map(|_| unit(gaussian(dim, &mut rng))).collect();
    (0..n)
        .map(|i| {
            let c = &centres[rng.random_range(0..clusters)];
            let noise = unit(gaussian(dim, &mut rng));
            let v = c.iter().zip(&noise).map(|(a, b)| a + spread * b).collect();
            EmbeddingRecord {
                key: key(i),
                vector: unit(v),
            }
        })
        .collect()
}

pub fn uniform(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| EmbeddingRecord {
            key: key(i),
            vector: unit(gaussian(dim, &mut rng)),
        })
        .collect()
}

/// Noisy copies of random records.
pub fn queries(records: &[EmbeddingRecord], count: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = &records[rng.random_range(0..records.len())].vector;
            let noise = unit(gaussian(base.len(), &mut rng));
            unit(base.iter().zip(&noise).map(|(a, b)| a + 0.3 * b).collect())
        })
        .collect()
}

/// Top-k record indices by f64 cosine, ties by key. Written independently of the index crate.
pub fn oracle_top_k(records: &[EmbeddingRecord], q: &[f32], k: usize) -> Vec<usize> {
    let qn = q.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let dot: f64 = r.vector.iter().zip(q).map(|(a, b)| *a as f64 * *b as f64).sum();
            let rn = r.vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            (dot / (rn * qn), i)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| records[a.1].key.cmp(&records[b.1].key))
    });
    scored.into_iter().take(k).map(|(_, i)| i).collect()
}

// ---- loss oracle ----

fn cos64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Contrastive loss evaluated literally: for each anchor `i`,
/// `-ln(e_ii / (e_ii + sum_{j != i} exp(cos(phi_i, phi_j) / tau)))` with
/// `e_ii = exp(cos(phi_i, phi_hat_i) / tau)`.
pub fn oracle_contrastive(phi: &[f64], phi_hat: &[f64], dim: usize, tau: f64) -> f64 {
    let n = phi.len() / dim;
    let row = |m: &[f64], i: usize| m[i * dim..(i + 1) * dim].to_vec();
    let mut total = 0.0;
    for i in 0..n {
        let pos = (cos64(&row(phi, i), &row(phi_hat, i)) / tau).exp();
        let neg: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| (cos64(&row(phi, i), &row(phi, j)) / tau).exp())
            .sum();
        total += -(pos / (pos + neg)).ln();
    }
    total
}

// ---- pooling oracle ----

/// Window pyramid for an `n x n` map: scale `s = 1..=5` uses an `s x s` grid of
/// squares of side `ceil(2n / (s + 1))`, spread evenly from corner to corner.
/// Returned as `(x, y, side)`.
pub fn oracle_windows(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for s in 1..=5usize {
        let side = ((2 * n) as f64 / (s + 1) as f64).ceil() as usize;
        let side = side.min(n);
        for i in 0..s {
            for j in 0..s {
                let place = |k: usize| {
                    if s == 1 {
                        0
                    } else {
                        ((k * (n - side)) as f64 / (s - 1) as f64).round() as usize
                    }
                };
                out.push((place(j), place(i), side));
            }
        }
    }
    out
}

/// Naive reduce-then-GeM-then-normalize. `weights` is `out x in`, `bias` has `out` entries.
pub fn oracle_pool(map: &FeatureMap, weights: &[f64], bias: &[f64], p: f64, clamp: f64) -> Vec<Vec<f64>> {
    let out_depth = bias.len();
    let mut rows = Vec::new();
    for (wx, wy, side) in oracle_windows(map.height) {
        let mut row = vec![0.0; out_depth];
        for (c, r) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for y in wy..wy + side {
                for x in wx..wx + side {
                    let mut v = bias[c];
                    for d in 0..map.depth {
                        v += weights[c * map.depth + d] * map.data[(y * map.width + x) * map.depth + d] as f64;
                    }
                    acc += v.max(clamp).powf(p);
                }
            }
            *r = (acc / (side * side) as f64).powf(1.0 / p);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        rows.push(row.into_iter().map(|v| v / norm).collect());
    }
    rows
}

/// `C[i][j] = <a_i, b_j>`.
pub fn oracle_correlate(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|ra| b.iter().map(|rb| ra.iter().zip(rb).map(|(x, y)| x * y).sum()).collect())
        .collect()
}

pub fn random_map(side: usize, depth: usize, rng: &mut impl Rng) -> FeatureMap {
    FeatureMap {
        height: side,
        width: side,
        depth,
        data: (0..side * side * depth)
            .map(|_| rng.random_range(-0.5f32..1.5))
            .collect(),
    }
}

// ---- ledger fuzzing ----

fn deployed(r: Receipt) -> Address {
    match r {
        Receipt::Deployed { address } => address,
        other => panic!("expected deployment, got {other:?}"),
    }
}

/// Applies `count` random, frequently invalid transactions from `actors` (and
/// occasionally from contracts). After every one, total currency must equal the
/// initial total plus applied faucet amounts. Returns the number applied.
pub fn fuzz_ledger(ledger: &mut LedgerState, actors: &[Address], count: usize, rng: &mut impl Rng) -> usize {
    let mut expected = ledger.total_currency();
    let mut applied = 0;
    for step in 0..count {
        let contracts: Vec<Address> = ledger.contracts.keys().copied().collect();
        let nfts: Vec<Address> = contracts
            .iter()
            .copied()
            .filter(|c| ledger.nft_contract(c).is_some())
            .collect();
        let rights: Vec<Address> = contracts
            .iter()
            .copied()
            .filter(|c| ledger.rights_contract(c).is_some())
            .collect();
        let pick = |v: &[Address], rng: &mut dyn rand::RngCore| -> Address {
            if v.is_empty() || rng.random_bool(0.05) {
                Address::from_low_u64(rng.random_range(1000..1010))
            } else {
                v[rng.random_range(0..v.len())]
            }
        };
        let from = if rng.random_bool(0.02) && !contracts.is_empty() {
            contracts[rng.random_range(0..contracts.len())]
        } else {
            actors[rng.random_range(0..actors.len())]
        };
        let who = actors[rng.random_range(0..actors.len())];
        let amount = if rng.random_bool(0.05) {
            u64::MAX - rng.random_range(0..10)
        } else {
            rng.random_range(0..5000)
        };
        let nft_id = rng.random_range(0..120);
        let right_id = rng.random_range(0..40);
        let op = match rng.random_range(0..13) {
            0 => TxOp::Faucet {
                to: who,
                amount: rng.random_range(0..10_000),
            },
            1 | 2 => TxOp::Transfer { to: who, amount },
            3 => TxOp::DeployNft {
                name: format!("c{step}"),
            },
            4 => TxOp::DeployRights {
                nft_contract: pick(&nfts, rng),
            },
            5 => TxOp::MintNft {
                contract: pick(&nfts, rng),
                uri: format!("mem://{step}"),
            },
            6 => TxOp::TransferNft {
                contract: pick(&nfts, rng),
                to: if rng.random_bool(0.5) { pick(&rights, rng) } else { who },
                nft_id,
            },
            7 => TxOp::BindManifest {
                rights: pick(&rights, rng),
                nft_id,
                manifest_guid: Uuid::from_u128(rng.random()),
            },
            8 => TxOp::IssueRight {
                rights: pick(&rights, rng),
                holder: who,
                kind: RightKind::GenerateImage,
                nft_id,
                base_royalty: rng.random_range(0..3000),
            },
            9 => TxOp::TransferRight {
                rights: pick(&rights, rng),
                to: who,
                right_id,
            },
            10 => TxOp::DepositEscrow {
                rights: pick(&rights, rng),
                amount,
            },
            11 => TxOp::WithdrawEscrow {
                rights: pick(&rights, rng),
                amount,
            },
            _ => TxOp::ExerciseRight {
                rights: pick(&rights, rng),
                right_id,
                weight: rng.random_range(-0.2..1.2),
            },
        };
        let faucet = match &op {
            TxOp::Faucet { amount, .. } => *amount as u128,
            _ => 0,
        };
        if ledger.submit(from, op).is_ok() {
            applied += 1;
            expected += faucet;
        }
        assert_eq!(ledger.total_currency(), expected, "conservation broken at step {step}");
        assert!(matches!(
            ledger.log.last().map(|r| &r.status),
            Some(TxStatus::Applied { .. } | TxStatus::Rejected { .. })
        ));
    }
    applied
}

// ---- ORA fixture ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetKind {
    Honest,
    /// Attacker mints while the manifest names the victim as minter.
    CopyMintDeclared,
    /// Attacker signs a manifest crediting the victim's wallet.
    CopyMintCreatorWallet,
    /// Content behind the token URI replaced after minting.
    UriSubstitution,
}

pub struct OraWorld {
    pub ledger: LedgerState,
    pub store: ManifestStore,
    pub host: ContentHost,
    pub assets: Vec<(AssetKind, Manifest)>,
    pub actors: Vec<Address>,
}

/// `count` ORA mints over ten creators: every tenth asset is a copy-mint of one
/// kind or the other, every tenth a URI substitution, the rest honest.
pub fn ora_world(count: usize, seed: u64) -> OraWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = LedgerState::default();
    let mut store = ManifestStore::new();
    let mut host = ContentHost::new();
    let operator = Address::from_low_u64(0x0a);
    let nft = deployed(ledger.submit(operator, TxOp::DeployNft { name: "ora".into() }).unwrap());
    let creators: Vec<CreatorKey> = (0..10)
        .map(|i| CreatorKey::from_label(&format!("creator-{i}")))
        .collect();
    let attacker = CreatorKey::from_label("attacker");
    let mut rights = Vec::new();
    for k in creators.iter().chain([&attacker]) {
        rights.push(deployed(
            ledger
                .submit(k.wallet(), TxOp::DeployRights { nft_contract: nft })
                .unwrap(),
        ));
    }
    let attacker_rights = *rights.last().unwrap();
    let mut assets = Vec::new();
    for i in 0..count {
        let kind = match i % 10 {
            3 => AssetKind::CopyMintDeclared,
            6 => AssetKind::CopyMintCreatorWallet,
            8 => AssetKind::UriSubstitution,
            _ => AssetKind::Honest,
        };
        let victim = &creators[i % creators.len()];
        let bytes: Vec<u8> = (0..64).map(|_| rng.random()).collect();
        let uri = format!("ipfs://asset-{i}");
        let (key, contract, creator, declared) = match kind {
            AssetKind::Honest | AssetKind::UriSubstitution => (
                victim,
                rights[i % creators.len()],
                CreatorInfo::new(&format!("creator-{}", i % 10), Some(victim.wallet())),
                None,
            ),
            AssetKind::CopyMintDeclared => (
                &attacker,
                attacker_rights,
                CreatorInfo::new("attacker", Some(attacker.wallet())),
                Some(victim.wallet()),
            ),
            AssetKind::CopyMintCreatorWallet => (
                &attacker,
                attacker_rights,
                CreatorInfo::new(&format!("creator-{}", i % 10), Some(victim.wallet())),
                None,
            ),
        };
        let req = OraMintRequest {
            asset: &bytes,
            creator,
            key,
            minter: key.wallet(),
            declared_minter: declared,
            nft_contract: nft,
            rights_contract: contract,
            uri: uri.clone(),
            assertions: vec![],
            ingredients: vec![],
        };
        let minted = mint_ora_asset(req, &mut ledger, &mut store, &mut host, &mut rng).expect("fixture mint");
        if kind == AssetKind::UriSubstitution {
            let other: Vec<u8> = (0..64).map(|_| rng.random()).collect();
            host.publish(&uri, other);
        }
        assets.push((kind, minted.manifest));
    }
    let mut actors: Vec<Address> = creators.iter().map(|k| k.wallet()).collect();
    actors.push(attacker.wallet());
    actors.extend((1..=5).map(Address::from_low_u64));
    for a in actors.clone() {
        ledger.submit(a, TxOp::Faucet { to: a, amount: 100_000 }).unwrap();
    }
    OraWorld {
        ledger,
        store,
        host,
        assets,
        actors,
    }
}
