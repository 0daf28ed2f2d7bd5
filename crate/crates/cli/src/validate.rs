//! `validate`: read a bundle and every tensor it references.

use std::collections::BTreeMap;
use std::path::Path;

use ctxgeom::store::read_bundle;
use serde::Serialize;

use crate::analyze::check_tensors;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleSummary {
    pub model_id: String,
    pub n_sequences: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_tracked: usize,
    pub embedding_stored: bool,
    pub conditions: BTreeMap<String, usize>,
}

pub fn run(dir: &Path) -> Result<BundleSummary> {
    let bundle = read_bundle(dir)?;
    check_tensors(&bundle)?;
    let m = &bundle.manifest;
    let mut conditions = BTreeMap::new();
    for s in &m.sequences {
        *conditions.entry(s.condition.to_string()).or_default() += 1;
    }
    Ok(BundleSummary {
        model_id: m.model_id.clone(),
        n_sequences: m.sequences.len(),
        n_layers: m.n_layers_stored,
        hidden_dim: m.hidden_dim,
        n_tracked: m.tracked_token_ids.len(),
        embedding_stored: m.embedding_stored,
        conditions,
    })
}
