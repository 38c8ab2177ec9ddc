use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::ara::{parse_ara_uri, AraUri, ARA_SCHEME};
use super::ManifestError;
use crate::address::Address;
use crate::digest::Digest256;

/// Format tag written into every manifest; readers refuse anything else.
pub const MANIFEST_FORMAT: &str = "provenant.manifest/1";

/// Label of the custom assertion recording the wallet an asset will be minted from.
pub const MINT_ORIGIN_LABEL: &str = "dlt.mint-origin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionKind {
    CreatorInfo,
    AssetReference,
    TrainingData,
    GeneratedBy,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Integer(i64),
    Real(f64),
    Text(String),
}

impl FieldValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            FieldValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue::Text(s.to_string())
    }
}

impl From<String> for FieldValue {
    fn from(s: String) -> Self {
        FieldValue::Text(s)
    }
}

impl From<i64> for FieldValue {
    fn from(v: i64) -> Self {
        FieldValue::Integer(v)
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Real(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub kind: AssertionKind,
    pub payload: BTreeMap<String, FieldValue>,
}

impl Assertion {
    pub fn new(kind: AssertionKind) -> Self {
        Assertion {
            kind,
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<FieldValue>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }

    pub fn asset_reference(uri: &AraUri) -> Self {
        Assertion::new(AssertionKind::AssetReference).with("uri", uri.to_string())
    }

    pub fn mint_origin(wallet: Address) -> Self {
        Assertion::new(AssertionKind::Custom)
            .with("label", MINT_ORIGIN_LABEL)
            .with("address", wallet.to_string())
    }

    pub fn generated_by(model: Uuid, tool: &str) -> Self {
        Assertion::new(AssertionKind::GeneratedBy)
            .with("model", model.to_string())
            .with("tool", tool)
    }

    /// Post-hoc attribution of a generated asset to one training manifest.
    pub fn training_data(manifest: Uuid, credit: f64) -> Self {
        Assertion::new(AssertionKind::TrainingData)
            .with("manifest", manifest.to_string())
            .with("credit", credit)
    }

    /// ARA URIs found among this assertion's text fields.
    pub fn ara_uris(&self) -> Vec<Result<AraUri, ManifestError>> {
        self.payload
            .values()
            .filter_map(FieldValue::as_text)
            .filter(|t| t.starts_with(ARA_SCHEME))
            .map(parse_ara_uri)
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<(), ManifestError> {
        if self
            .payload
            .values()
            .any(|v| matches!(v, FieldValue::Real(r) if !r.is_finite()))
        {
            return Err(ManifestError::InvalidAssertion("non-finite number in payload".into()));
        }
        if self.kind == AssertionKind::AssetReference {
            let uris = self.ara_uris();
            if uris.len() != 1 {
                return Err(ManifestError::InvalidAssertion(format!(
                    "asset reference must hold exactly one ARA URI, found {}",
                    uris.len()
                )));
            }
            uris.into_iter().next().unwrap()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngredientRole {
    TrainingImage,
    GenModel,
    Archive,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct IngredientRef {
    pub manifest_guid: Uuid,
    pub role: IngredientRole,
}

impl IngredientRef {
    pub fn new(manifest_guid: Uuid, role: IngredientRole) -> Self {
        IngredientRef { manifest_guid, role }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreatorInfo {
    pub name: String,
    pub wallet: Option<Address>,
}

impl CreatorInfo {
    pub fn new(name: &str, wallet: Option<Address>) -> Self {
        CreatorInfo {
            name: name.to_string(),
            wallet,
        }
    }
}

/// A signed provenance record for one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub guid: Uuid,
    pub creator_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator_wallet: Option<Address>,
    pub assertions: Vec<Assertion>,
    pub ingredients: Vec<IngredientRef>,
    pub content_hash: Digest256,
    #[serde(with = "hex_array")]
    pub signer_key: [u8; 32],
    #[serde(with = "hex_array")]
    pub signature: [u8; 64],
}

impl Manifest {
    /// Canonical JSON: sorted keys, no whitespace, lowercase hex.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("manifest fields are always serializable");
        serde_json::to_vec(&value).expect("json value serializes")
    }

    /// The bytes covered by the signature: canonical form with a zeroed signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.signature = [0u8; 64];
        unsigned.canonical_bytes()
    }

    /// Parses canonical bytes, rejecting any input that does not re-serialize identically.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, ManifestError> {
        let m: Manifest = serde_json::from_slice(bytes).map_err(|e| ManifestError::Json(e.to_string()))?;
        if m.format != MANIFEST_FORMAT {
            return Err(ManifestError::UnsupportedFormat(m.format));
        }
        if m.canonical_bytes() != bytes {
            return Err(ManifestError::NonCanonical);
        }
        Ok(m)
    }

    /// The manifest's asset reference, if it declares one.
    pub fn ara(&self) -> Option<Result<AraUri, ManifestError>> {
        self.assertions
            .iter()
            .find(|a| a.kind == AssertionKind::AssetReference)
            .map(|a| {
                a.ara_uris()
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| Err(ManifestError::MalformedUri("asset reference without URI".into())))
            })
    }

    /// Wallet the asset was declared to be minted from.
    pub fn declared_minter(&self) -> Option<Address> {
        self.assertions
            .iter()
            .filter(|a| a.kind == AssertionKind::Custom)
            .filter(|a| a.payload.get("label").and_then(FieldValue::as_text) == Some(MINT_ORIGIN_LABEL))
            .find_map(|a| a.payload.get("address").and_then(FieldValue::as_text)?.parse().ok())
    }

    pub fn signer_wallet(&self) -> Address {
        Address::from_public_key(&self.signer_key)
    }
}

mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; N];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}
