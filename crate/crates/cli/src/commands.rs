use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use provenant::apportion::{attribute_image, settle_royalties, CorpusPatches, CreditReport};
use provenant::demo::{creator_name, demo_corpus, demo_models, recover_contributors, run_demo};
use provenant::fingerprint::{embed_corpus, load_image, save_encoder, save_image, train_encoder};
use provenant::index::{build_index, save_index, IndexParams};
use provenant::ledger::{
    mint_ora_asset, verify_ora_triangle, ContentHost, LedgerState, OraMintRequest, Receipt, RightKind, TxOp,
};
use provenant::manifest::{
    build_manifest, read_sidecar, traverse_provenance, verify_manifest_with_asset, write_sidecar, Assertion,
    AssertionKind, CreatorInfo, IngredientRef, IngredientRole, Manifest, ManifestStore,
};
use provenant::synth::{compose_query, generate_corpus};
use provenant::verifier::{save_verifier, train_verifier};
use provenant::{Address, Digest256};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use uuid::Uuid;

use crate::error::{CliError, Context};
use crate::workspace::{corpus_uri, load_dir, write_atomic, write_json, Catalog, CatalogEntry, Workspace};

fn image_id_assertion(id: &str) -> Assertion {
    Assertion::new(AssertionKind::Custom)
        .with("label", "corpus.image-id")
        .with("imageId", id)
}

/// Random stream for one item, so adding items later never replays earlier GUIDs.
fn item_rng(ws: &Workspace, purpose: &str, item: &str) -> ChaCha8Rng {
    let d = Digest256::of(format!("{purpose}/{item}").as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(ws.cfg.seed);
    rng.set_stream(u64::from_le_bytes(d.as_bytes()[..8].try_into().expect("8 bytes")));
    rng
}

fn insert_once(store: &mut ManifestStore, m: &Manifest) -> Result<(), CliError> {
    match store.get(&m.guid) {
        Some(existing) if existing == m => Ok(()),
        Some(_) => Err(CliError::Module {
            module: "manifest",
            context: "storing manifest".into(),
            message: format!("GUID {} already holds a different manifest", m.guid),
        }),
        None => store
            .insert(m.clone())
            .ctx("manifest", || format!("storing manifest {}", m.guid)),
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .ctx("io", || format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(str::to_ascii_lowercase)
                    .as_deref(),
                Some("png" | "jpg" | "jpeg")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

fn deployed(r: Receipt) -> Result<Address, CliError> {
    match r {
        Receipt::Deployed { address } => Ok(address),
        other => Err(CliError::Module {
            module: "ledger",
            context: "deploying contract".into(),
            message: format!("unexpected receipt {other:?}"),
        }),
    }
}

pub fn init(path: &Path, force: bool) -> Result<Value, CliError> {
    if path.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    write_atomic(path, crate::config::Config::default().to_toml().as_bytes())?;
    Ok(json!({ "config": path }))
}

pub fn ingest(ws: &Workspace, generate: Option<usize>, creator: Option<&str>) -> Result<Value, CliError> {
    let dir = &ws.cfg.paths.corpus_dir;
    fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
    let mut generated = 0;
    if let Some(n) = generate {
        for img in generate_corpus(n, ws.cfg.corpus.image_size, ws.cfg.corpus.seed) {
            let path = dir.join(format!("{}.png", img.id));
            if !path.exists() {
                save_image(&path, &img.image).ctx("fingerprint", || format!("writing {}", path.display()))?;
                generated += 1;
            }
        }
    }
    let mut catalog = ws.catalog()?;
    let mut store = ws.store()?;
    let (mut added, mut skipped) = (0, 0);
    let mut seen = BTreeMap::new();
    for path in image_files(dir)? {
        let id = stem(&path);
        let file = path
            .file_name()
            .and_then(|f| f.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(other) = seen.insert(id.clone(), file.clone()) {
            return Err(CliError::Usage(format!("{other} and {file} share the image id {id:?}")));
        }
        if catalog.images.contains_key(&id) {
            skipped += 1;
            continue;
        }
        let name = match creator {
            Some(c) => c.to_string(),
            None => creator_name(catalog.images.len() % ws.cfg.corpus.creators),
        };
        let key = ws.key(&name)?;
        let bytes = fs::read(&path).ctx("io", || format!("reading {}", path.display()))?;
        let m = build_manifest(
            &bytes,
            &CreatorInfo::new(&name, Some(key.wallet())),
            vec![image_id_assertion(&id)],
            vec![],
            &key,
            &store,
            &mut item_rng(ws, "ingest", &id),
        )
        .ctx("manifest", || format!("building manifest for {id}"))?;
        insert_once(&mut store, &m)?;
        catalog.images.insert(
            id,
            CatalogEntry {
                file,
                creator: name,
                manifest: m.guid,
                ora_manifest: None,
                nft_id: None,
            },
        );
        added += 1;
    }
    ws.save_catalog(&catalog)?;
    Ok(json!({ "generated": generated, "ingested": added, "skipped": skipped, "catalogSize": catalog.images.len() }))
}

pub fn train_encoder_cmd(ws: &Workspace, epochs: Option<usize>) -> Result<Value, CliError> {
    let corpus = ws.corpus()?;
    let mut cfg = ws.cfg.encoder.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let (encoder, report) =
        train_encoder(&corpus, ws.cfg.encoder_model.clone(), &cfg).ctx("fingerprint", || "training encoder".into())?;
    let path = &ws.cfg.paths.encoder_file;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
    }
    save_encoder(path, &encoder).ctx("fingerprint", || format!("saving {}", path.display()))?;
    Ok(json!({
        "encoder": path,
        "digest": encoder.digest().to_hex(),
        "steps": report.step_losses.len(),
        "finalLoss": report.step_losses.last(),
        "validation": report.validation,
    }))
}

pub fn train_verifier_cmd(ws: &Workspace, epochs: Option<usize>) -> Result<Value, CliError> {
    let corpus = ws.corpus()?;
    let encoder = ws.encoder()?;
    let mut cfg = ws.cfg.verifier.clone();
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    let (model, report) = train_verifier(&corpus, &encoder, ws.cfg.verifier_model.clone(), &cfg)
        .ctx("verifier", || "training verifier".into())?;
    let path = &ws.cfg.paths.verifier_file;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
    }
    save_verifier(path, &model).ctx("verifier", || format!("saving {}", path.display()))?;
    let v = &report.validation;
    Ok(json!({
        "verifier": path,
        "digest": model.digest().to_hex(),
        "steps": report.step_losses.len(),
        "verifierAuc": v.verifier_auc,
        "fingerprintAuc": v.fingerprint_auc,
        "positiveMedian": v.positive_median,
        "negativeMedian": v.negative_median,
    }))
}

pub fn build_index_cmd(ws: &Workspace, params: IndexParams) -> Result<Value, CliError> {
    let corpus = ws.corpus()?;
    let encoder = ws.encoder()?;
    let records = embed_corpus(&encoder, &corpus, encoder.config.input_size)
        .ctx("fingerprint", || "embedding corpus patches".into())?;
    let index =
        build_index(&records, &params).ctx("index", || format!("building index over {} patches", records.len()))?;
    let path = &ws.cfg.paths.index_file;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
    }
    save_index(&index, path, &ws.cfg.paths.vectors_file()).ctx("index", || format!("saving {}", path.display()))?;
    Ok(json!({
        "index": path,
        "digest": index.digest().to_hex(),
        "records": index.len(),
        "images": corpus.len(),
        "nlist": index.nlist(),
    }))
}

pub struct AttributeArgs<'a> {
    pub query: &'a Path,
    pub report: Option<&'a Path>,
    pub database: Option<&'a Path>,
}

pub fn attribute(ws: &Workspace, args: AttributeArgs<'_>) -> Result<Value, CliError> {
    let query = load_image(args.query).ctx("fingerprint", || format!("loading query {}", args.query.display()))?;
    let encoder = ws.encoder()?;
    let verifier = ws.verifier()?;
    let (index, db) = match args.database {
        // A handful of concept images: one inverted list, scanned fully.
        Some(dir) => {
            let db = load_dir(dir)?;
            let records = embed_corpus(&encoder, &db, encoder.config.input_size)
                .ctx("fingerprint", || "embedding database".into())?;
            let params = IndexParams {
                nlist: 1,
                nprobe: 1,
                ..ws.cfg.index
            };
            (
                build_index(&records, &params).ctx("index", || "indexing database".into())?,
                db,
            )
        }
        None => (ws.index()?, ws.corpus()?),
    };
    let source = CorpusPatches::new(&db);
    let id = stem(args.query);
    let report = attribute_image(&id, &query, &index, &encoder, &verifier, &source, &ws.cfg.attribution)
        .ctx("apportion", || format!("attributing {}", args.query.display()))?;
    let ranking: Vec<String> = report.ranking().into_iter().take(report.top_m).collect();
    match args.report {
        Some(path) => {
            write_atomic(path, format!("{}\n", report.to_json()).as_bytes())?;
            Ok(json!({ "report": path, "ranking": ranking, "royaltyWeights": report.royalty_weights }))
        }
        None => {
            let mut v = serde_json::to_value(&report).expect("report serializes");
            v["ranking"] = json!(ranking);
            Ok(v)
        }
    }
}

fn collection(ws: &Workspace, catalog: &mut Catalog, ledger: &mut LedgerState) -> Result<Address, CliError> {
    if let Some(c) = catalog.collection {
        return Ok(c);
    }
    let operator = ws.key(&ws.cfg.ledger.operator)?.wallet();
    let r = ledger
        .submit(
            operator,
            TxOp::DeployNft {
                name: ws.cfg.ledger.collection.clone(),
            },
        )
        .ctx("ledger", || "deploying collection".into())?;
    let address = deployed(r)?;
    catalog.collection = Some(address);
    Ok(address)
}

fn rights_of(
    ws: &Workspace,
    catalog: &mut Catalog,
    ledger: &mut LedgerState,
    creator: &str,
    nft: Address,
) -> Result<Address, CliError> {
    if let Some(r) = catalog.rights.get(creator) {
        return Ok(*r);
    }
    let wallet = ws.key(creator)?.wallet();
    let r = ledger
        .submit(wallet, TxOp::DeployRights { nft_contract: nft })
        .ctx("ledger", || format!("deploying rights contract for {creator}"))?;
    let address = deployed(r)?;
    catalog.rights.insert(creator.to_string(), address);
    Ok(address)
}

/// Runs `f` against the loaded catalog, store and ledger, saving the catalog
/// and ledger afterwards even if `f` fails part way.
fn with_ledger<T>(
    ws: &Workspace,
    f: impl FnOnce(&mut Catalog, &mut ManifestStore, &mut LedgerState) -> Result<T, CliError>,
) -> Result<T, CliError> {
    let mut catalog = ws.catalog()?;
    let mut store = ws.store()?;
    let mut ledger = ws.ledger()?;
    let out = f(&mut catalog, &mut store, &mut ledger);
    ws.save_ledger(&ledger)?;
    ws.save_catalog(&catalog)?;
    out
}

pub fn mint_ora(ws: &Workspace, images: &[String]) -> Result<Value, CliError> {
    with_ledger(ws, |catalog, store, ledger| {
        let ids: Vec<String> = if images.is_empty() {
            catalog.images.keys().cloned().collect()
        } else {
            for id in images {
                catalog.entry(id)?;
            }
            images.to_vec()
        };
        let nft = collection(ws, catalog, ledger)?;
        let mut host = ContentHost::new();
        let (mut minted, mut skipped) = (0, 0);
        for id in ids {
            let entry = catalog.entry(&id)?.clone();
            if entry.ora_manifest.is_some() {
                skipped += 1;
                continue;
            }
            let rights = rights_of(ws, catalog, ledger, &entry.creator, nft)?;
            let key = ws.key(&entry.creator)?;
            let path = ws.cfg.paths.corpus_dir.join(&entry.file);
            let bytes = fs::read(&path).ctx("io", || format!("reading {}", path.display()))?;
            let req = OraMintRequest {
                asset: &bytes,
                creator: CreatorInfo::new(&entry.creator, Some(key.wallet())),
                key: &key,
                minter: key.wallet(),
                declared_minter: None,
                nft_contract: nft,
                rights_contract: rights,
                uri: corpus_uri(&id),
                assertions: vec![image_id_assertion(&id)],
                ingredients: vec![],
            };
            let out = mint_ora_asset(req, ledger, store, &mut host, &mut item_rng(ws, "mint", &id))
                .ctx("ledger", || format!("minting {id}"))?;
            let e = catalog.images.get_mut(&id).expect("checked above");
            e.ora_manifest = Some(out.manifest.guid);
            e.nft_id = Some(out.nft_id);
            minted += 1;
        }
        Ok(json!({
            "minted": minted,
            "skipped": skipped,
            "collection": nft,
            "rightsContracts": catalog.rights.len(),
        }))
    })
}

pub struct IssueArgs<'a> {
    pub images: Vec<String>,
    pub holder: Option<&'a str>,
    pub kind: RightKind,
    pub base_royalty: Option<u64>,
}

pub fn issue_right(ws: &Workspace, args: IssueArgs<'_>) -> Result<Value, CliError> {
    let holder = ws.address(args.holder.unwrap_or(&ws.cfg.ledger.payer))?;
    let base_royalty = args.base_royalty.unwrap_or(ws.cfg.ledger.base_royalty);
    with_ledger(ws, |catalog, _, ledger| {
        let ids = if args.images.is_empty() {
            catalog.ora_manifests().into_keys().collect()
        } else {
            args.images.clone()
        };
        let mut issued = Vec::new();
        for id in ids {
            let entry = catalog.entry(&id)?;
            let nft_id = entry
                .nft_id
                .ok_or_else(|| CliError::Usage(format!("image {id} has not been minted; run mint-ora first")))?;
            let rights = catalog.rights[&entry.creator];
            let creator = ws.key(&entry.creator)?.wallet();
            let op = TxOp::IssueRight {
                rights,
                holder,
                kind: args.kind.clone(),
                nft_id,
                base_royalty,
            };
            match ledger
                .submit(creator, op)
                .ctx("ledger", || format!("issuing right on {id}"))?
            {
                Receipt::RightIssued { right_id } => {
                    issued.push(json!({ "image": id, "rights": rights, "rightId": right_id }))
                }
                other => {
                    return Err(CliError::Module {
                        module: "ledger",
                        context: format!("issuing right on {id}"),
                        message: format!("unexpected receipt {other:?}"),
                    })
                }
            }
        }
        Ok(json!({
            "holder": holder,
            "kind": args.kind.to_string(),
            "baseRoyalty": base_royalty,
            "issued": issued,
        }))
    })
}

pub enum DepositTarget {
    Image(String),
    Creator(String),
    All,
}

pub fn deposit(ws: &Workspace, target: DepositTarget, amount: u64, faucet: bool) -> Result<Value, CliError> {
    let payer = ws.address(&ws.cfg.ledger.payer)?;
    with_ledger(ws, |catalog, _, ledger| {
        let creators: Vec<String> = match &target {
            DepositTarget::Image(id) => vec![catalog.entry(id)?.creator.clone()],
            DepositTarget::Creator(c) => vec![c.clone()],
            DepositTarget::All => catalog.rights.keys().cloned().collect(),
        };
        let mut contracts = Vec::new();
        for c in &creators {
            let r = catalog
                .rights
                .get(c)
                .ok_or_else(|| CliError::Usage(format!("creator {c:?} has no rights contract; run mint-ora first")))?;
            contracts.push((c.clone(), *r));
        }
        if faucet {
            let total = amount
                .checked_mul(contracts.len() as u64)
                .ok_or_else(|| CliError::Usage("deposit total overflows".into()))?;
            ledger
                .submit(
                    payer,
                    TxOp::Faucet {
                        to: payer,
                        amount: total,
                    },
                )
                .ctx("ledger", || "funding payer".into())?;
        }
        let mut escrow = BTreeMap::new();
        for (c, rights) in contracts {
            ledger
                .submit(payer, TxOp::DepositEscrow { rights, amount })
                .ctx("ledger", || format!("depositing into {c}'s rights contract"))?;
            escrow.insert(c, ledger.escrow(&rights, &payer));
        }
        Ok(json!({ "payer": payer, "payerBalance": ledger.balance(&payer), "escrow": escrow }))
    })
}

pub fn settle(ws: &Workspace, report: &Path, out: Option<&Path>) -> Result<Value, CliError> {
    let text = fs::read_to_string(report).ctx("io", || format!("reading {}", report.display()))?;
    let report = CreditReport::from_json(&text).ctx("apportion", || format!("parsing {}", report.display()))?;
    let payer = ws.address(&ws.cfg.ledger.payer)?;
    let settlement = with_ledger(ws, |catalog, store, ledger| {
        Ok(settle_royalties(
            &report,
            &catalog.ora_manifests(),
            store,
            ledger,
            payer,
        ))
    })?;
    if let Some(path) = out {
        write_json(path, &settlement)?;
    }
    let mut v = serde_json::to_value(&settlement).expect("settlement serializes");
    v["totalPaid"] = json!(settlement.total_paid());
    Ok(v)
}

pub fn verify_provenance(ws: &Workspace, asset: &Path) -> Result<Value, CliError> {
    let bytes = fs::read(asset).ctx("io", || format!("reading {}", asset.display()))?;
    let manifest = read_sidecar(asset).ctx("manifest", || {
        format!("reading manifest sidecar of {}", asset.display())
    })?;
    let store = ws.store()?;
    let ledger = ws.ledger()?;
    let catalog = ws.catalog()?;
    let check = verify_manifest_with_asset(&manifest, &store, &bytes);
    let graph = traverse_provenance(&manifest, &store).ctx("manifest", || "traversing provenance".into())?;
    let contributors =
        recover_contributors(&manifest, &store, &ledger).ctx("manifest", || "recovering contributors".into())?;
    let files = ws.corpus_files(&catalog)?;

    let describe = |guid: &Uuid| {
        store
            .get(guid)
            .map(|m| json!({ "creatorName": m.creator_name, "creatorWallet": m.creator_wallet }))
    };
    let models: Vec<Value> = graph
        .with_role(IngredientRole::GenModel)
        .map(|n| json!({ "manifest": n.guid, "creator": describe(&n.guid) }))
        .collect();
    let mut training = Vec::new();
    for c in &contributors {
        let m = store.get(&c.manifest).expect("contributors come from the store");
        let ora = match m.ara() {
            Some(Ok(ara)) => {
                let v = verify_ora_triangle(m, &ledger, &store, &files).ctx("ledger", || format!("checking {ara}"))?;
                json!({
                    "ara": ara,
                    "verified": v.ownership_ok && v.rights_ok && v.attribution_ok && !v.copy_mint_detected,
                    "problems": v.problems,
                })
            }
            _ => Value::Null,
        };
        training.push(json!({
            "manifest": c.manifest,
            "creatorName": c.creator_name,
            "creatorWallet": m.creator_wallet,
            "walletRoute": c.wallet_route,
            "ora": ora,
        }));
    }
    let nodes: Vec<Value> = graph
        .nodes
        .iter()
        .map(|n| json!({ "manifest": n.guid, "depth": n.depth, "role": n.role, "parent": n.parent }))
        .collect();
    let out = json!({
        "asset": asset,
        "manifest": manifest.guid,
        "creatorName": manifest.creator_name,
        "valid": check.valid,
        "failures": check.failures.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>(),
        "models": models,
        "trainingImages": training,
        "routesResolved": contributors.iter().filter(|c| c.wallet_route.is_some()).count(),
        "graph": { "nodes": nodes, "edges": graph.edges.len() },
    });
    if !check.valid {
        return Err(CliError::Check {
            message: format!("manifest {} does not verify against {}", manifest.guid, asset.display()),
            detail: out,
        });
    }
    Ok(out)
}

/// Model manifest for the current encoder, verifier and training manifests, registered once.
fn model_manifest(ws: &Workspace, catalog: &mut Catalog, store: &mut ManifestStore) -> Result<Option<Uuid>, CliError> {
    let p = &ws.cfg.paths;
    if !p.encoder_file.exists() || !p.verifier_file.exists() || catalog.images.is_empty() {
        return Ok(None);
    }
    let (encoder, verifier) = (ws.encoder()?, ws.verifier()?);
    let training: Vec<Uuid> = catalog.images.values().map(CatalogEntry::current_manifest).collect();
    let mut identity = format!("{}:{}", encoder.digest(), verifier.digest());
    for g in &training {
        identity.push(':');
        identity.push_str(&g.to_string());
    }
    let key = Digest256::of(identity.as_bytes()).to_hex();
    if let Some(g) = catalog.models.get(&key) {
        return Ok(Some(*g));
    }
    let trainer = ws.key(&ws.cfg.ledger.trainer)?;
    let mut model_bytes = encoder.digest().as_bytes().to_vec();
    model_bytes.extend_from_slice(verifier.digest().as_bytes());
    let m = build_manifest(
        &model_bytes,
        &CreatorInfo::new(&ws.cfg.ledger.trainer, Some(trainer.wallet())),
        vec![Assertion::new(AssertionKind::Custom)
            .with("label", "model.tool")
            .with("tool", "toy-encoder+verifier")],
        training
            .iter()
            .map(|g| IngredientRef::new(*g, IngredientRole::TrainingImage))
            .collect(),
        &trainer,
        store,
        &mut item_rng(ws, "model", &key),
    )
    .ctx("manifest", || "registering model manifest".into())?;
    insert_once(store, &m)?;
    catalog.models.insert(key, m.guid);
    Ok(Some(m.guid))
}

pub fn compose_queries(ws: &Workspace, count: usize, out: &Path, unaugmented: bool) -> Result<Value, CliError> {
    let corpus = ws.corpus()?;
    let mut cfg = ws.cfg.compose;
    if unaugmented {
        cfg.augment = None;
    }
    if corpus.len() < cfg.min_sources {
        return Err(CliError::Usage(format!(
            "corpus has {} images but queries need at least {}",
            corpus.len(),
            cfg.min_sources
        )));
    }
    fs::create_dir_all(out).ctx("io", || format!("creating {}", out.display()))?;
    let mut catalog = ws.catalog()?;
    let mut store = ws.store()?;
    let model = model_manifest(ws, &mut catalog, &mut store)?;
    ws.save_catalog(&catalog)?;
    let operator = ws.key(&ws.cfg.ledger.payer)?;

    let mut rng = ws.rng(3);
    let mut written = Vec::with_capacity(count);
    for q in 0..count {
        let id = format!("gen-{q:03}");
        let composite = compose_query(&corpus, &id, &cfg, &mut rng);
        let path = out.join(format!("{id}.png"));
        save_image(&path, &composite.image).ctx("fingerprint", || format!("writing {}", path.display()))?;
        write_json(&out.join(format!("{id}.truth.json")), &composite.truth)?;
        let manifest = match model {
            Some(model) => {
                let bytes = fs::read(&path).ctx("io", || format!("reading {}", path.display()))?;
                let m = build_manifest(
                    &bytes,
                    &CreatorInfo::new(&ws.cfg.ledger.payer, Some(operator.wallet())),
                    vec![Assertion::generated_by(model, "composite-generator")],
                    vec![IngredientRef::new(model, IngredientRole::GenModel)],
                    &operator,
                    &store,
                    &mut item_rng(ws, "generated", &Digest256::of(&bytes).to_hex()),
                )
                .ctx("manifest", || format!("registering {id}"))?;
                insert_once(&mut store, &m)?;
                write_sidecar(&path, &m).ctx("manifest", || format!("writing sidecar for {}", path.display()))?;
                Some(m.guid)
            }
            None => None,
        };
        written.push(json!({
            "id": id,
            "image": path,
            "sources": composite.truth.sources,
            "manifest": manifest,
        }));
    }
    Ok(json!({ "model": model, "queries": written }))
}

pub fn demo(ws: &Workspace, out: &Path, queries: Option<usize>, reuse_models: bool) -> Result<Value, CliError> {
    let mut cfg = ws.cfg.demo.clone();
    if let Some(q) = queries {
        cfg.queries = q;
    }
    let corpus = demo_corpus(&cfg);
    let p = &ws.cfg.paths;
    let (encoder, verifier) = if reuse_models && p.encoder_file.exists() && p.verifier_file.exists() {
        (ws.encoder()?, ws.verifier()?)
    } else {
        demo_models(&corpus, &cfg).ctx("demo", || "training models".into())?
    };
    let outcome = run_demo(&corpus, &encoder, &verifier, &cfg).ctx("demo", || "running pipeline".into())?;

    fs::create_dir_all(out).ctx("io", || format!("creating {}", out.display()))?;
    let (state, log) = (out.join("ledger.json"), out.join("ledger.jsonl"));
    for f in [&state, &log] {
        if f.exists() {
            fs::remove_file(f).ctx("io", || format!("replacing {}", f.display()))?;
        }
    }
    provenant::ledger::save_ledger(&outcome.world.ledger, &state, &log)
        .ctx("ledger", || format!("saving {}", state.display()))?;
    write_json(&out.join("queries.json"), &outcome.queries)?;
    write_json(&out.join("summary.json"), &outcome.summary)?;

    let s = &outcome.summary;
    let mut v = serde_json::to_value(s).expect("summary serializes");
    v["outDir"] = json!(out);
    if !(s.conservation_ok && s.payouts_exact && s.provenance_complete && s.creator_balances_ok) {
        return Err(CliError::Check {
            message: "demo checks failed".into(),
            detail: v,
        });
    }
    Ok(v)
}
