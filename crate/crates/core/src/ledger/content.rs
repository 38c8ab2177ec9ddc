use std::collections::BTreeMap;

/// Off-ledger storage that token URIs point at. Nothing guarantees that the
/// bytes behind a URI stay the same.
pub trait ContentResolver {
    fn fetch(&self, uri: &str) -> Option<&[u8]>;
}

#[derive(Debug, Default, Clone)]
pub struct ContentHost {
    objects: BTreeMap<String, Vec<u8>>,
}

impl ContentHost {
    pub fn new() -> Self {
        Self::default()
    }

    /// Publishes (or silently replaces) the bytes served at `uri`.
    pub fn publish(&mut self, uri: &str, bytes: Vec<u8>) {
        self.objects.insert(uri.to_string(), bytes);
    }
}

impl ContentResolver for ContentHost {
    fn fetch(&self, uri: &str) -> Option<&[u8]> {
        self.objects.get(uri).map(Vec::as_slice)
    }
}
