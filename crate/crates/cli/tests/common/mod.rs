//! Stand-in for the extraction harness: one token per word, seeded activations.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ctxgeom::gridworld::GridTruth;
use ctxgeom::store::{BundleManifest, LabeledSpan, SequenceRecord, SequenceTensors};
use ctxgeom_cli::generate::PromptSuite;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Word spans and their char offsets for a space-joined text.
fn word_offsets(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for w in text.split(' ') {
        let n = w.chars().count();
        out.push((pos, pos + n));
        pos += n + 1;
    }
    out
}

pub fn fake_extract(suites: &[PromptSuite], n_layers: usize, dim: usize, seed: u64) -> (BundleManifest, Vec<SequenceTensors>) {
    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    for item in suites.iter().flat_map(|s| &s.items) {
        for w in item.text.split(' ') {
            let next = 1000 + vocab.len() as u32;
            vocab.entry(w.to_string()).or_insert(next);
        }
    }
    let mut manifest = BundleManifest::new("fake-extractor", n_layers, dim);
    manifest.tokenizer_id = "whitespace".into();
    manifest.seed = seed;
    manifest.tracked_token_ids = vocab.values().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for item in suites.iter().flat_map(|s| &s.items) {
        let words: Vec<&str> = item.text.split(' ').collect();
        let offsets = word_offsets(&item.text);
        let spans = item
            .spans
            .iter()
            .filter_map(|s| {
                let toks: Vec<usize> = (0..offsets.len()).filter(|&i| offsets[i].0 >= s.start && offsets[i].1 <= s.end).collect();
                Some(LabeledSpan::new(*toks.first()?, toks.last()? + 1, s.label))
            })
            .collect();
        let mut truth = item.truth.clone();
        if let Ok(mut g) = serde_json::from_value::<GridTruth>(truth.clone()) {
            g.node_token_ids = Some(g.node_words.iter().map(|ws| ws.iter().filter_map(|w| vocab.get(w).copied()).collect()).collect());
            truth = serde_json::to_value(g).unwrap();
        }
        manifest.sequences.push(SequenceRecord {
            id: item.id.clone(),
            token_ids: words.iter().map(|w| vocab[*w]).collect(),
            condition: item.condition,
            spans,
            truth,
        });
        let n = words.len();
        let acts = Array3::from_shape_fn((n_layers, n, dim), |_| rng.random_range(-1.0f32..1.0));
        let logits = Array2::from_shape_fn((n, vocab.len()), |_| rng.random_range(-1.0f32..1.0));
        tensors.push(SequenceTensors::new(acts).with_logits(logits));
    }
    (manifest, tensors)
}
