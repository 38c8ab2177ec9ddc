use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use uuid::Uuid;

use super::{Manifest, ManifestError};

/// Manifests keyed by GUID, optionally mirrored to `<dir>/<guid>.json`.
///
/// Reads take `&self`; writers must be serialized by the caller.
#[derive(Debug, Default, Clone)]
pub struct ManifestStore {
    manifests: BTreeMap<Uuid, Manifest>,
    dir: Option<PathBuf>,
}

impl ManifestStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory-backed store and loads every manifest in it.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut manifests = BTreeMap::new();
        let mut entries: Vec<_> = fs::read_dir(&dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let m = Manifest::from_canonical_bytes(&fs::read(&path)?)?;
            manifests.insert(m.guid, m);
        }
        Ok(ManifestStore {
            manifests,
            dir: Some(dir),
        })
    }

    pub fn insert(&mut self, manifest: Manifest) -> Result<(), ManifestError> {
        if self.manifests.contains_key(&manifest.guid) {
            return Err(ManifestError::DuplicateGuid(manifest.guid));
        }
        if let Some(dir) = &self.dir {
            fs::write(dir.join(format!("{}.json", manifest.guid)), manifest.canonical_bytes())?;
        }
        self.manifests.insert(manifest.guid, manifest);
        Ok(())
    }

    pub fn remove(&mut self, guid: &Uuid) -> Option<Manifest> {
        let removed = self.manifests.remove(guid);
        if removed.is_some() {
            if let Some(dir) = &self.dir {
                let _ = fs::remove_file(dir.join(format!("{guid}.json")));
            }
        }
        removed
    }

    pub fn get(&self, guid: &Uuid) -> Option<&Manifest> {
        self.manifests.get(guid)
    }

    pub fn contains(&self, guid: &Uuid) -> bool {
        self.manifests.contains_key(guid)
    }

    pub fn len(&self) -> usize {
        self.manifests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifests.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Manifest> {
        self.manifests.values()
    }
}

/// Path of the sidecar manifest stored next to an asset.
pub fn sidecar_path(asset: &Path) -> PathBuf {
    let mut name = asset.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_sidecar(asset: &Path, manifest: &Manifest) -> Result<PathBuf, ManifestError> {
    let path = sidecar_path(asset);
    fs::write(&path, manifest.canonical_bytes())?;
    Ok(path)
}

pub fn read_sidecar(asset: &Path) -> Result<Manifest, ManifestError> {
    Manifest::from_canonical_bytes(&fs::read(sidecar_path(asset))?)
}
