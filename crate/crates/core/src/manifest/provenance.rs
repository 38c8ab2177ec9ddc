use std::collections::{BTreeMap, HashMap, VecDeque};

use uuid::Uuid;

use super::{AraUri, IngredientRole, Manifest, ManifestError, ManifestStore};
use crate::address::Address;
use crate::ledger::LedgerState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceNode {
    pub guid: Uuid,
    pub depth: usize,
    /// Role under which the node was first reached; `None` for the root.
    pub role: Option<IngredientRole>,
    pub parent: Option<Uuid>,
}

/// Transitive closure of a manifest's ingredients, in breadth-first order with
/// siblings visited by ascending GUID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceGraph {
    pub root: Uuid,
    pub nodes: Vec<ProvenanceNode>,
    pub edges: Vec<(Uuid, Uuid, IngredientRole)>,
}

/// Name and payment details of one training-image creator found in a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contributor {
    pub manifest: Uuid,
    pub creator_name: String,
    pub creator_wallet: Option<Address>,
    pub ara: Option<AraUri>,
}

impl ProvenanceGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, guid: &Uuid) -> bool {
        self.nodes.iter().any(|n| n.guid == *guid)
    }

    pub fn with_role(&self, role: IngredientRole) -> impl Iterator<Item = &ProvenanceNode> {
        self.nodes.iter().filter(move |n| n.role == Some(role))
    }

    pub fn contributors(&self, store: &ManifestStore) -> Vec<Contributor> {
        self.with_role(IngredientRole::TrainingImage)
            .filter_map(|n| store.get(&n.guid))
            .map(|m| Contributor {
                manifest: m.guid,
                creator_name: m.creator_name.clone(),
                creator_wallet: m.creator_wallet,
                ara: m.ara().and_then(Result::ok),
            })
            .collect()
    }
}

fn sorted_children(m: &Manifest) -> Vec<(Uuid, IngredientRole)> {
    let mut children: Vec<_> = m.ingredients.iter().map(|i| (i.manifest_guid, i.role)).collect();
    children.sort();
    children.dedup_by_key(|c| c.0);
    children
}

fn lookup<'a>(store: &'a ManifestStore, guid: &Uuid) -> Result<&'a Manifest, ManifestError> {
    store.get(guid).ok_or(ManifestError::DanglingIngredient(*guid))
}

/// Rejects cycles reachable from `root` with the offending path.
fn check_acyclic(root: &Manifest, store: &ManifestStore) -> Result<(), ManifestError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut marks: HashMap<Uuid, Mark> = HashMap::new();
    // Stack of (node, its sorted children, next child index).
    type Frame = (Uuid, Vec<(Uuid, IngredientRole)>, usize);
    let mut stack: Vec<Frame> = vec![(root.guid, sorted_children(root), 0)];
    marks.insert(root.guid, Mark::Open);
    while let Some((_, children, next)) = stack.last_mut() {
        if *next == children.len() {
            let (guid, _, _) = stack.pop().unwrap();
            marks.insert(guid, Mark::Done);
            continue;
        }
        let child = children[*next].0;
        *next += 1;
        match marks.get(&child) {
            Some(Mark::Done) => {}
            Some(Mark::Open) => {
                let start = stack.iter().position(|(g, _, _)| *g == child).unwrap_or(0);
                let mut path: Vec<Uuid> = stack[start..].iter().map(|(g, _, _)| *g).collect();
                path.push(child);
                return Err(ManifestError::CycleDetected(path));
            }
            None => {
                let m = lookup(store, &child)?;
                marks.insert(child, Mark::Open);
                stack.push((child, sorted_children(m), 0));
            }
        }
    }
    Ok(())
}

pub fn traverse_provenance(root: &Manifest, store: &ManifestStore) -> Result<ProvenanceGraph, ManifestError> {
    check_acyclic(root, store)?;
    let mut seen: BTreeMap<Uuid, ()> = BTreeMap::new();
    let mut nodes = vec![ProvenanceNode {
        guid: root.guid,
        depth: 0,
        role: None,
        parent: None,
    }];
    let mut edges = Vec::new();
    seen.insert(root.guid, ());
    let mut queue = VecDeque::from([(root.guid, 0usize)]);
    while let Some((guid, depth)) = queue.pop_front() {
        let m = if guid == root.guid { root } else { lookup(store, &guid)? };
        for (child, role) in sorted_children(m) {
            edges.push((guid, child, role));
            if seen.insert(child, ()).is_none() {
                nodes.push(ProvenanceNode {
                    guid: child,
                    depth: depth + 1,
                    role: Some(role),
                    parent: Some(guid),
                });
                queue.push_back((child, depth + 1));
            }
        }
    }
    Ok(ProvenanceGraph {
        root: root.guid,
        nodes,
        edges,
    })
}

/// Resolves the wallet that should receive payments for the asset described by `m`.
///
/// An asset reference takes precedence: the referenced token's owner must be a
/// rights contract, whose creator wallet is returned. Otherwise the statically
/// declared creator wallet is used.
pub fn extract_wallet_route(m: &Manifest, ledger: &LedgerState) -> Result<Address, ManifestError> {
    match m.ara() {
        Some(ara) => {
            let ara = ara.map_err(|e| ManifestError::AraResolutionFailure(e.to_string()))?;
            resolve_ara(&ara, ledger)
        }
        None => m.creator_wallet.ok_or(ManifestError::NoPaymentRoute),
    }
}

fn resolve_ara(ara: &AraUri, ledger: &LedgerState) -> Result<Address, ManifestError> {
    let fail = |msg: String| ManifestError::AraResolutionFailure(msg);
    if ara.namespace != ledger.chain.namespace || ara.chain_id != ledger.chain.chain_id {
        return Err(fail(format!("{ara} is not on chain {}", ledger.chain)));
    }
    let owner = ledger
        .owner_of(&ara.contract, ara.nft_id)
        .map_err(|e| fail(format!("{ara}: {e}")))?;
    let rights = ledger
        .rights_contract(&owner)
        .ok_or_else(|| fail(format!("owner {owner} of {ara} is not a rights contract")))?;
    Ok(rights.creator)
}
