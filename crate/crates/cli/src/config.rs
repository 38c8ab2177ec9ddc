use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use provenant::apportion::AttributionConfig;
use provenant::demo::DemoConfig;
use provenant::fingerprint::{EncoderConfig, EncoderTrainConfig};
use provenant::index::IndexParams;
use provenant::synth::ComposeConfig;
use provenant::verifier::{VerifierConfig, VerifierTrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Artifact locations. Relative paths in a config file are taken relative to
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_dir: PathBuf,
    pub store_dir: PathBuf,
    pub index_file: PathBuf,
    pub encoder_file: PathBuf,
    pub verifier_file: PathBuf,
    /// Snapshot; the transaction log sits next to it with a `.jsonl` extension.
    pub ledger_file: PathBuf,
    /// Image ids, creators, manifests and ledger addresses known to the workspace.
    pub catalog_file: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus_dir: "corpus".into(),
            store_dir: "store".into(),
            index_file: "index.ivfpq".into(),
            encoder_file: "encoder.bin".into(),
            verifier_file: "verifier.bin".into(),
            ledger_file: "ledger.json".into(),
            catalog_file: "catalog.json".into(),
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.corpus_dir,
            &mut self.store_dir,
            &mut self.index_file,
            &mut self.encoder_file,
            &mut self.verifier_file,
            &mut self.ledger_file,
            &mut self.catalog_file,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn vectors_file(&self) -> PathBuf {
        self.index_file.with_extension("vectors")
    }

    pub fn ledger_log(&self) -> PathBuf {
        self.ledger_file.with_extension("jsonl")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Side of generated toy images.
    pub image_size: u32,
    /// Seed for generated toy images.
    pub seed: u64,
    /// Ingested images are dealt round-robin to this many creators.
    pub creators: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = DemoConfig::default();
        CorpusSection {
            image_size: d.image_size,
            seed: d.corpus_seed,
            creators: d.creators,
        }
    }
}

/// Account labels. Keys derive from the label unless `[keys]` gives a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerSection {
    pub collection: String,
    pub operator: String,
    pub payer: String,
    pub trainer: String,
    pub base_royalty: u64,
}

impl Default for LedgerSection {
    fn default() -> Self {
        LedgerSection {
            collection: "training-corpus".into(),
            operator: "collection-operator".into(),
            payer: "model-operator".into(),
            trainer: "model-trainer".into(),
            base_royalty: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Seed for manifest GUIDs, query composition and other workspace randomness.
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub encoder_model: EncoderConfig,
    pub encoder: EncoderTrainConfig,
    pub verifier_model: VerifierConfig,
    pub verifier: VerifierTrainConfig,
    pub index: IndexParams,
    pub attribution: AttributionConfig,
    pub compose: ComposeConfig,
    pub ledger: LedgerSection,
    /// Label to 32-byte ed25519 seed, hex.
    pub keys: BTreeMap<String, String>,
    pub demo: DemoConfig,
}

impl Default for Config {
    fn default() -> Self {
        let demo = DemoConfig::default();
        Config {
            seed: demo.seed,
            paths: Paths::default(),
            corpus: CorpusSection::default(),
            encoder_model: EncoderConfig::default(),
            encoder: demo.encoder.clone(),
            verifier_model: VerifierConfig::default(),
            verifier: demo.verifier.clone(),
            index: demo.index,
            attribution: demo.attribution,
            compose: demo.compose,
            ledger: LedgerSection::default(),
            keys: BTreeMap::new(),
            demo,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Reads `path`, or returns defaults when `path` is the implicit default and absent.
    /// Paths come back absolute against the file's directory.
    pub fn load(path: &Path, explicit: bool) -> Result<Self, CliError> {
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut cfg = match fs::read_to_string(path) {
            Ok(text) => Self::from_toml(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !explicit => Config::default(),
            Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
        };
        cfg.paths.rebase(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.attribution
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.corpus.creators == 0 {
            return Err(CliError::Config("corpus.creators must be positive".into()));
        }
        if self.encoder.temperature.is_nan() || self.encoder.temperature <= 0.0 {
            return Err(CliError::Config("encoder.temperature must be positive".into()));
        }
        Ok(())
    }
}
