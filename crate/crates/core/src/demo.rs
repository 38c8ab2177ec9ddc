//! End-to-end run on a toy corpus: ORA-mint every training image, train the
//! models, compose generated assets, trace their provenance, attribute them and
//! settle royalties.

use std::collections::BTreeMap;
use std::io::Cursor;

use image::ImageFormat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::address::Address;
use crate::apportion::{
    attribute_image, settle_royalties, source_recall, ApportionError, AttributionConfig, CorpusPatches, CreditReport,
    Settlement,
};
use crate::fingerprint::{
    embed_corpus, to_bytes, train_encoder, AugmentConfig, ConvEncoder, CorpusImage, EncoderConfig, EncoderTrainConfig,
    FingerprintError,
};
use crate::index::{build_index, IndexError, IndexParams};
use crate::ledger::{
    mint_ora_asset, scale_royalty, ContentHost, LedgerState, OraError, OraMintRequest, Receipt, RightKind, TxError,
    TxOp,
};
use crate::manifest::{
    build_manifest, extract_wallet_route, traverse_provenance, Assertion, AssertionKind, CreatorInfo, CreatorKey,
    IngredientRef, IngredientRole, Manifest, ManifestError, ManifestStore,
};
use crate::synth::{compose_query, generate_corpus, ComposeConfig, CompositeTruth};
use crate::verifier::{train_verifier, VerifierConfig, VerifierError, VerifierModel, VerifierTrainConfig};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Ora(#[from] OraError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Apportion(#[from] ApportionError),
    #[error("ledger step {step} failed: {source}")]
    Tx { step: String, source: TxError },
    #[error("demo config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct DemoConfig {
    pub corpus_size: usize,
    pub image_size: u32,
    pub corpus_seed: u64,
    /// Training images are dealt round-robin to this many creators.
    pub creators: usize,
    pub queries: usize,
    pub base_royalty: u64,
    pub compose: ComposeConfig,
    pub encoder: EncoderTrainConfig,
    pub verifier: VerifierTrainConfig,
    pub index: IndexParams,
    pub attribution: AttributionConfig,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            corpus_size: 500,
            image_size: 128,
            corpus_seed: 7,
            creators: 50,
            queries: 10,
            base_royalty: 1000,
            compose: ComposeConfig {
                augment: Some(AugmentConfig::mild()),
                ..ComposeConfig::default()
            },
            encoder: EncoderTrainConfig {
                epochs: 20,
                seed: 1,
                ..EncoderTrainConfig::default()
            },
            verifier: VerifierTrainConfig {
                seed: 2,
                ..VerifierTrainConfig::default()
            },
            index: IndexParams {
                nlist: 64,
                m: 16,
                nprobe: 8,
                seed: 3,
                ..IndexParams::default()
            },
            attribution: AttributionConfig::default(),
            seed: 11,
        }
    }
}

pub fn png_bytes(img: &image::Rgb32FImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    to_bytes(img)
        .write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn creator_name(index: usize) -> String {
    format!("creator-{index:03}")
}

/// Ledger, manifests and rights for an ORA-minted training corpus.
#[derive(Debug, Clone)]
pub struct OraCorpus {
    pub ledger: LedgerState,
    pub store: ManifestStore,
    pub host: ContentHost,
    pub nft_contract: Address,
    /// Image id to training-image manifest.
    pub manifests: BTreeMap<String, Uuid>,
    /// Image id to the creator's name.
    pub creators: BTreeMap<String, String>,
    /// Creator name to rights contract.
    pub rights: BTreeMap<String, Address>,
    pub payer: Address,
}

impl OraCorpus {
    /// Mints every image for its creator, then has each creator issue `payer`
    /// a train-model right with `base_royalty` per image. `escrow_per_image`
    /// is deposited by the payer for every image into its rights contract.
    pub fn mint(
        corpus: &[CorpusImage],
        creators: usize,
        base_royalty: u64,
        escrow_per_image: u64,
        rng: &mut impl Rng,
    ) -> Result<Self, DemoError> {
        if creators == 0 {
            return Err(DemoError::Config("at least one creator is required".into()));
        }
        let tx = |step: &str| {
            let step = step.to_string();
            move |source| DemoError::Tx { step, source }
        };
        let mut ledger = LedgerState::default();
        let mut store = ManifestStore::new();
        let mut host = ContentHost::new();
        let payer = CreatorKey::from_label("model-operator").wallet();
        let operator = CreatorKey::from_label("collection-operator").wallet();
        let nft_contract = match ledger
            .submit(
                operator,
                TxOp::DeployNft {
                    name: "training-corpus".into(),
                },
            )
            .map_err(tx("deploy collection"))?
        {
            Receipt::Deployed { address } => address,
            other => return Err(DemoError::Config(format!("unexpected receipt {other:?}"))),
        };

        let mut rights = BTreeMap::new();
        for c in 0..creators.min(corpus.len()) {
            let name = creator_name(c);
            let wallet = CreatorKey::from_label(&name).wallet();
            match ledger
                .submit(wallet, TxOp::DeployRights { nft_contract })
                .map_err(tx("deploy rights"))?
            {
                Receipt::Deployed { address } => rights.insert(name, address),
                other => return Err(DemoError::Config(format!("unexpected receipt {other:?}"))),
            };
        }
        let total = escrow_per_image as u128 * corpus.len() as u128;
        let funding = u64::try_from(total).map_err(|_| DemoError::Config("escrow total overflows".into()))?;
        ledger
            .submit(
                payer,
                TxOp::Faucet {
                    to: payer,
                    amount: funding,
                },
            )
            .map_err(tx("fund payer"))?;

        let mut manifests = BTreeMap::new();
        let mut owners = BTreeMap::new();
        for (i, img) in corpus.iter().enumerate() {
            let name = creator_name(i % creators);
            let key = CreatorKey::from_label(&name);
            let contract = rights[&name];
            let asset = png_bytes(&img.image);
            let req = OraMintRequest {
                asset: &asset,
                creator: CreatorInfo::new(&name, Some(key.wallet())),
                key: &key,
                minter: key.wallet(),
                declared_minter: None,
                nft_contract,
                rights_contract: contract,
                uri: format!("corpus://{}", img.id),
                assertions: vec![Assertion::new(AssertionKind::Custom)
                    .with("label", "corpus.image-id")
                    .with("imageId", img.id.as_str())],
                ingredients: vec![],
            };
            let minted = mint_ora_asset(req, &mut ledger, &mut store, &mut host, rng)?;
            ledger
                .submit(
                    key.wallet(),
                    TxOp::IssueRight {
                        rights: contract,
                        holder: payer,
                        kind: RightKind::TrainModel,
                        nft_id: minted.nft_id,
                        base_royalty,
                    },
                )
                .map_err(tx("issue right"))?;
            if escrow_per_image > 0 {
                ledger
                    .submit(
                        payer,
                        TxOp::DepositEscrow {
                            rights: contract,
                            amount: escrow_per_image,
                        },
                    )
                    .map_err(tx("deposit escrow"))?;
            }
            manifests.insert(img.id.clone(), minted.manifest.guid);
            owners.insert(img.id.clone(), name);
        }
        Ok(OraCorpus {
            ledger,
            store,
            host,
            nft_contract,
            manifests,
            creators: owners,
            rights,
            payer,
        })
    }

    /// Escrow the payer holds across all rights contracts.
    pub fn payer_escrow(&self) -> u64 {
        self.rights.values().map(|r| self.ledger.escrow(r, &self.payer)).sum()
    }

    /// Manifest for a trained model listing every training image as an ingredient.
    pub fn register_model(
        &mut self,
        model_bytes: &[u8],
        tool: &str,
        rng: &mut impl Rng,
    ) -> Result<Manifest, DemoError> {
        let key = CreatorKey::from_label("model-trainer");
        let ingredients = self
            .manifests
            .values()
            .map(|g| IngredientRef::new(*g, IngredientRole::TrainingImage))
            .collect();
        let assertions = vec![Assertion::new(AssertionKind::Custom)
            .with("label", "model.tool")
            .with("tool", tool)];
        let m = build_manifest(
            model_bytes,
            &CreatorInfo::new("model-trainer", Some(key.wallet())),
            assertions,
            ingredients,
            &key,
            &self.store,
            rng,
        )?;
        self.store.insert(m.clone())?;
        Ok(m)
    }

    /// Manifest for a generated asset whose sole ingredient is the model.
    pub fn register_generated(&mut self, asset: &[u8], model: Uuid, rng: &mut impl Rng) -> Result<Manifest, DemoError> {
        let key = CreatorKey::from_label("model-operator");
        let m = build_manifest(
            asset,
            &CreatorInfo::new("model-operator", Some(key.wallet())),
            vec![Assertion::generated_by(model, "composite-generator")],
            vec![IngredientRef::new(model, IngredientRole::GenModel)],
            &key,
            &self.store,
            rng,
        )?;
        self.store.insert(m.clone())?;
        Ok(m)
    }
}

/// One training-image contributor recovered from a generated asset's manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecoveredContributor {
    pub manifest: Uuid,
    pub creator_name: String,
    pub wallet_route: Option<Address>,
}

/// Walks `root`'s provenance and resolves a name and payment route for every
/// training image reached.
pub fn recover_contributors(
    root: &Manifest,
    store: &ManifestStore,
    ledger: &LedgerState,
) -> Result<Vec<RecoveredContributor>, ManifestError> {
    let graph = traverse_provenance(root, store)?;
    Ok(graph
        .contributors(store)
        .into_iter()
        .map(|c| RecoveredContributor {
            manifest: c.manifest,
            creator_name: c.creator_name,
            wallet_route: store
                .get(&c.manifest)
                .and_then(|m| extract_wallet_route(m, ledger).ok()),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProvenanceSummary {
    pub training_manifests: usize,
    pub contributors_recovered: usize,
    pub routes_resolved: usize,
    /// Every recovered name and route equals the one the corpus was minted with.
    pub all_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DemoQuery {
    pub truth: CompositeTruth,
    pub asset_manifest: Uuid,
    pub provenance: ProvenanceSummary,
    pub report: CreditReport,
    pub settlement: Settlement,
    /// `round(baseRoyalty * weight)` per reported image.
    pub expected_payouts: BTreeMap<String, u64>,
    pub escrow_decrease: u64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
}

impl DemoQuery {
    pub fn payouts_exact(&self) -> bool {
        self.settlement.failures.is_empty()
            && self.settlement.payouts.len() == self.expected_payouts.len()
            && self
                .settlement
                .payouts
                .iter()
                .all(|(id, p)| self.expected_payouts.get(id) == Some(&p.amount))
            && self.escrow_decrease == self.settlement.total_paid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DemoSummary {
    pub corpus_size: usize,
    pub queries: usize,
    pub model_manifest: Uuid,
    pub mean_recall_at_1: f64,
    pub mean_recall_at_5: f64,
    pub total_paid: u64,
    pub escrow_decrease: u64,
    pub provenance_complete: bool,
    pub payouts_exact: bool,
    /// Total currency before settling equals total currency after.
    pub conservation_ok: bool,
    /// Each creator's balance grew by exactly the payouts routed to them.
    pub creator_balances_ok: bool,
    pub state_digest: String,
}

pub struct DemoOutcome {
    pub world: OraCorpus,
    pub model_manifest: Manifest,
    pub queries: Vec<DemoQuery>,
    pub summary: DemoSummary,
}

/// Trains the encoder, then the verifier on its frozen feature maps.
pub fn demo_models(corpus: &[CorpusImage], cfg: &DemoConfig) -> Result<(ConvEncoder, VerifierModel), DemoError> {
    let (encoder, _) = train_encoder(corpus, EncoderConfig::default(), &cfg.encoder)?;
    let (verifier, _) = train_verifier(corpus, &encoder, VerifierConfig::default(), &cfg.verifier)?;
    Ok((encoder, verifier))
}

pub fn demo_corpus(cfg: &DemoConfig) -> Vec<CorpusImage> {
    generate_corpus(cfg.corpus_size, cfg.image_size, cfg.corpus_seed)
}

/// Runs the whole pipeline over `corpus` with the given models.
pub fn run_demo(
    corpus: &[CorpusImage],
    encoder: &ConvEncoder,
    verifier: &VerifierModel,
    cfg: &DemoConfig,
) -> Result<DemoOutcome, DemoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Each query can pay an image at most its full base royalty.
    let escrow = cfg
        .base_royalty
        .checked_mul(cfg.queries.max(1) as u64)
        .ok_or_else(|| DemoError::Config("escrow overflows".into()))?;
    let mut world = OraCorpus::mint(corpus, cfg.creators, cfg.base_royalty, escrow, &mut rng)?;

    let mut model_bytes = encoder.digest().as_bytes().to_vec();
    model_bytes.extend_from_slice(verifier.digest().as_bytes());
    let model_manifest = world.register_model(&model_bytes, "toy-encoder+verifier", &mut rng)?;

    let records = embed_corpus(encoder, corpus, encoder.config.input_size)?;
    let index = build_index(&records, &cfg.index)?;
    let source = CorpusPatches::new(corpus);

    let expected_creators: BTreeMap<Uuid, (String, Address)> = world
        .manifests
        .iter()
        .map(|(id, g)| {
            let name = world.creators[id].clone();
            let wallet = CreatorKey::from_label(&name).wallet();
            (*g, (name, wallet))
        })
        .collect();

    let money_before = world.ledger.total_currency();
    let balances_before: BTreeMap<String, u64> = world
        .rights
        .keys()
        .map(|n| (n.clone(), world.ledger.balance(&CreatorKey::from_label(n).wallet())))
        .collect();
    let mut paid_to: BTreeMap<Address, u64> = BTreeMap::new();

    let mut queries = Vec::with_capacity(cfg.queries);
    for q in 0..cfg.queries {
        let query_id = format!("gen-{q:03}");
        let composite = compose_query(corpus, &query_id, &cfg.compose, &mut rng);
        let asset = world.register_generated(&png_bytes(&composite.image), model_manifest.guid, &mut rng)?;

        let recovered = recover_contributors(&asset, &world.store, &world.ledger)?;
        let all_match = recovered.len() == expected_creators.len()
            && recovered.iter().all(|c| {
                expected_creators
                    .get(&c.manifest)
                    .is_some_and(|(name, wallet)| *name == c.creator_name && c.wallet_route == Some(*wallet))
            });
        let provenance = ProvenanceSummary {
            training_manifests: expected_creators.len(),
            contributors_recovered: recovered.len(),
            routes_resolved: recovered.iter().filter(|c| c.wallet_route.is_some()).count(),
            all_match,
        };

        let report = attribute_image(
            &query_id,
            &composite.image,
            &index,
            encoder,
            verifier,
            &source,
            &cfg.attribution,
        )?;
        let expected_payouts = report
            .royalty_weights
            .iter()
            .map(|(id, w)| {
                let amount = scale_royalty(cfg.base_royalty, *w).map_err(|source| DemoError::Tx {
                    step: "scale royalty".into(),
                    source,
                })?;
                Ok((id.clone(), amount))
            })
            .collect::<Result<BTreeMap<_, _>, DemoError>>()?;
        let escrow_before = world.payer_escrow();
        let settlement = settle_royalties(&report, &world.manifests, &world.store, &mut world.ledger, world.payer);
        let escrow_decrease = escrow_before - world.payer_escrow();
        for p in settlement.payouts.values() {
            *paid_to.entry(p.creator).or_insert(0) += p.amount;
        }
        let ranking = report.ranking();
        queries.push(DemoQuery {
            recall_at_1: source_recall(&ranking, &composite.truth.sources, 1),
            recall_at_5: source_recall(&ranking, &composite.truth.sources, 5),
            truth: composite.truth,
            asset_manifest: asset.guid,
            provenance,
            report,
            settlement,
            expected_payouts,
            escrow_decrease,
        });
    }

    let creator_balances_ok = balances_before.iter().all(|(name, before)| {
        let wallet = CreatorKey::from_label(name).wallet();
        world.ledger.balance(&wallet) == before + paid_to.get(&wallet).copied().unwrap_or(0)
    });
    let n = queries.len().max(1) as f64;
    let summary = DemoSummary {
        corpus_size: corpus.len(),
        queries: queries.len(),
        model_manifest: model_manifest.guid,
        mean_recall_at_1: queries.iter().map(|q| q.recall_at_1).sum::<f64>() / n,
        mean_recall_at_5: queries.iter().map(|q| q.recall_at_5).sum::<f64>() / n,
        total_paid: queries.iter().map(|q| q.settlement.total_paid()).sum(),
        escrow_decrease: queries.iter().map(|q| q.escrow_decrease).sum(),
        provenance_complete: queries.iter().all(|q| q.provenance.all_match),
        payouts_exact: queries.iter().all(DemoQuery::payouts_exact),
        conservation_ok: world.ledger.total_currency() == money_before,
        creator_balances_ok,
        state_digest: world.ledger.state_digest().to_string(),
    };
    Ok(DemoOutcome {
        world,
        model_manifest,
        queries,
        summary,
    })
}
