use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use provenant::fingerprint::{load_corpus, load_encoder, ConvEncoder, CorpusImage};
use provenant::index::{load_index, IvfPqIndex};
use provenant::ledger::{load_ledger, save_ledger, ContentResolver, LedgerState};
use provenant::manifest::{CreatorKey, ManifestStore};
use provenant::verifier::{load_verifier, VerifierModel};
use provenant::Address;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::config::Config;
use crate::error::{CliError, Context};

pub const CATALOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CatalogEntry {
    /// File name inside the corpus directory.
    pub file: String,
    pub creator: String,
    /// Manifest written at ingest.
    pub manifest: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ora_manifest: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nft_id: Option<u64>,
}

impl CatalogEntry {
    /// The manifest that should represent this image downstream.
    pub fn current_manifest(&self) -> Uuid {
        self.ora_manifest.unwrap_or(self.manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Catalog {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<Address>,
    /// Creator name to rights contract.
    #[serde(default)]
    pub rights: BTreeMap<String, Address>,
    #[serde(default)]
    pub images: BTreeMap<String, CatalogEntry>,
    /// Model digest to model manifest.
    #[serde(default)]
    pub models: BTreeMap<String, Uuid>,
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog {
            version: CATALOG_VERSION,
            collection: None,
            rights: BTreeMap::new(),
            images: BTreeMap::new(),
            models: BTreeMap::new(),
        }
    }
}

impl Catalog {
    /// Image id to ORA manifest, for images that have been minted.
    pub fn ora_manifests(&self) -> BTreeMap<String, Uuid> {
        self.images
            .iter()
            .filter_map(|(id, e)| e.ora_manifest.map(|g| (id.clone(), g)))
            .collect()
    }

    pub fn entry(&self, image_id: &str) -> Result<&CatalogEntry, CliError> {
        self.images
            .get(image_id)
            .ok_or_else(|| CliError::Usage(format!("image {image_id:?} is not in the catalog; run ingest first")))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).ctx("io", || format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).ctx("io", || format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub struct Workspace {
    pub cfg: Config,
}

impl Workspace {
    pub fn new(cfg: Config) -> Self {
        Workspace { cfg }
    }

    /// Independent random stream for one purpose, derived from the workspace seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn key(&self, label: &str) -> Result<CreatorKey, CliError> {
        match self.cfg.keys.get(label) {
            Some(hex) => CreatorKey::from_seed_hex(hex).map_err(|e| CliError::Config(format!("keys.{label}: {e}"))),
            None => Ok(CreatorKey::from_label(label)),
        }
    }

    /// `0x…` addresses are taken literally; anything else is an account label.
    pub fn address(&self, who: &str) -> Result<Address, CliError> {
        if who.starts_with("0x") {
            who.parse()
                .map_err(|e| CliError::Usage(format!("address {who:?}: {e}")))
        } else {
            Ok(self.key(who)?.wallet())
        }
    }

    pub fn catalog(&self) -> Result<Catalog, CliError> {
        let path = &self.cfg.paths.catalog_file;
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Catalog::default()),
            Err(e) => return Err(e).ctx("io", || format!("reading {}", path.display())),
        };
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(&text).ctx("catalog", || format!("parsing {}", path.display()))?;
        if probe.version != CATALOG_VERSION {
            return Err(CliError::Module {
                module: "catalog",
                context: format!("reading {}", path.display()),
                message: format!("unsupported catalog version {}", probe.version),
            });
        }
        serde_json::from_str(&text).ctx("catalog", || format!("parsing {}", path.display()))
    }

    pub fn save_catalog(&self, catalog: &Catalog) -> Result<(), CliError> {
        write_json(&self.cfg.paths.catalog_file, catalog)
    }

    pub fn store(&self) -> Result<ManifestStore, CliError> {
        let dir = &self.cfg.paths.store_dir;
        ManifestStore::open(dir).ctx("manifest", || format!("opening store {}", dir.display()))
    }

    pub fn ledger(&self) -> Result<LedgerState, CliError> {
        let (state, log) = (&self.cfg.paths.ledger_file, self.cfg.paths.ledger_log());
        if !state.exists() {
            return Ok(LedgerState::default());
        }
        load_ledger(state, &log).ctx("ledger", || format!("loading {}", state.display()))
    }

    pub fn save_ledger(&self, ledger: &LedgerState) -> Result<(), CliError> {
        let state = &self.cfg.paths.ledger_file;
        if let Some(dir) = state.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).ctx("io", || format!("creating {}", dir.display()))?;
        }
        save_ledger(ledger, state, &self.cfg.paths.ledger_log()).ctx("ledger", || format!("saving {}", state.display()))
    }

    pub fn corpus(&self) -> Result<Vec<CorpusImage>, CliError> {
        load_dir(&self.cfg.paths.corpus_dir)
    }

    pub fn encoder(&self) -> Result<ConvEncoder, CliError> {
        let p = &self.cfg.paths.encoder_file;
        load_encoder(p).ctx("fingerprint", || {
            format!("loading encoder {}; run train-encoder first", p.display())
        })
    }

    pub fn verifier(&self) -> Result<VerifierModel, CliError> {
        let p = &self.cfg.paths.verifier_file;
        load_verifier(p).ctx("verifier", || {
            format!("loading verifier {}; run train-verifier first", p.display())
        })
    }

    pub fn index(&self) -> Result<IvfPqIndex, CliError> {
        let p = &self.cfg.paths.index_file;
        load_index(p, &self.cfg.paths.vectors_file()).ctx("index", || {
            format!("loading index {}; run build-index first", p.display())
        })
    }

    pub fn corpus_files(&self, catalog: &Catalog) -> Result<CorpusFiles, CliError> {
        let mut objects = BTreeMap::new();
        for (id, e) in &catalog.images {
            let path = self.cfg.paths.corpus_dir.join(&e.file);
            let bytes = fs::read(&path).ctx("io", || format!("reading {}", path.display()))?;
            objects.insert(corpus_uri(id), bytes);
        }
        Ok(CorpusFiles { objects })
    }
}

pub fn load_dir(dir: &Path) -> Result<Vec<CorpusImage>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "image directory {} does not exist",
            dir.display()
        )));
    }
    let corpus = load_corpus(dir).ctx("fingerprint", || format!("loading images from {}", dir.display()))?;
    if corpus.is_empty() {
        return Err(CliError::Usage(format!("no PNG or JPEG images in {}", dir.display())));
    }
    Ok(corpus)
}

pub fn corpus_uri(image_id: &str) -> String {
    format!("corpus://{image_id}")
}

/// Serves `corpus://<id>` from the files currently on disk.
pub struct CorpusFiles {
    objects: BTreeMap<String, Vec<u8>>,
}

impl ContentResolver for CorpusFiles {
    fn fetch(&self, uri: &str) -> Option<&[u8]> {
        self.objects.get(uri).map(Vec::as_slice)
    }
}
