//! Synthetic bundle with planted geometry and logits, for end-to-end checks.
//!
//! Every sequence is a walk on a 6×6 grid with token id `100 + node`. The
//! analysis window is the 2 prefix tokens plus the 5 test tokens at the end.
//! Inside it every layer holds the same planar zigzag with constant turn
//! angle, except the planted layer:
//!
//! * `long` sequences: the planted layer is collinear, so its straightening is
//!   the full baseline angle `long_angle(i)`.
//! * `short` sequences: the planted layer is a zigzag with angle
//!   `long_angle(i) - short_delta(i)`, so its straightening is `short_delta(i)`.
//!
//! Tracked logits put `+1` on the neighbors of the current node and `0`
//! elsewhere.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use ctxgeom::gridworld::{generate_walk, GridTaskKind, GridTaskSpec, GridTruth, WordList, PREFIX_TOKENS, TEST_WALK_LEN};
use ctxgeom::seed::derive_seed;
use ctxgeom::store::{write_bundle, BundleManifest, Condition, LabeledSpan, SequenceRecord, SequenceTensors, SpanLabel};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::Result;

pub const TOKEN_OFFSET: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_condition: usize,
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub n_tokens: usize,
    pub planted_layer: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_per_condition: 20, n_layers: 26, hidden_dim: 16, n_tokens: 16, planted_layer: 20, seed: 0 }
    }
}

/// Baseline turn angle of sequence `i` out of `n`.
pub fn long_angle(i: usize, n: usize) -> f64 {
    let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    FRAC_PI_2 + 0.2 * (frac - 0.5)
}

/// Planted-layer straightening of short sequence `i` out of `n`.
pub fn short_delta(i: usize, n: usize) -> f64 {
    let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    0.05 + 0.02 * frac
}

/// Straightening at the planted layer for sequence `i` of `condition`.
pub fn planted_straightening(condition: Condition, i: usize, n: usize) -> f64 {
    match condition {
        Condition::Long => long_angle(i, n),
        _ => short_delta(i, n),
    }
}

pub fn sequence_id(condition: Condition, i: usize) -> String {
    format!("synth-{condition}-{i:04}")
}

/// Planar path with alternating step directions `0` and `angle`, step `k` of length `1 + k/8`.
fn zigzag(angle: f64, n: usize) -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0]];
    for k in 0..n - 1 {
        let len = 1.0 + k as f64 / 8.0;
        let phi = if k % 2 == 0 { 0.0 } else { angle };
        let [x, y] = pts[k];
        pts.push([x + len * phi.cos(), y + len * phi.sin()]);
    }
    pts
}

fn line(n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|k| [(k * (k + 1) / 2) as f64, 0.0]).collect()
}

pub fn build(cfg: &SynthConfig) -> (BundleManifest, Vec<SequenceTensors>) {
    let window = PREFIX_TOKENS + TEST_WALK_LEN;
    assert!(cfg.n_tokens >= window && cfg.hidden_dim >= 3 && cfg.planted_layer < cfg.n_layers);
    let spec = GridTaskSpec::new(6, 6, &WordList::default_grid(), derive_seed(cfg.seed, "synth-spec", 0))
        .expect("bundled word list fits a 6x6 grid");
    let node_tokens: Vec<Vec<u32>> = (0..36).map(|n| vec![TOKEN_OFFSET + n as u32]).collect();
    let mut manifest = BundleManifest::new("synthetic-planted", cfg.n_layers, cfg.hidden_dim);
    manifest.tokenizer_id = "synthetic".into();
    manifest.seed = cfg.seed;
    manifest.tracked_token_ids = node_tokens.iter().flatten().copied().collect();
    let mut tensors = Vec::new();

    for condition in [Condition::Short, Condition::Long] {
        for i in 0..cfg.n_per_condition {
            let walk = generate_walk(&spec.lattice, cfg.n_tokens, derive_seed(cfg.seed, condition.as_str(), i as u64));
            let test_start = cfg.n_tokens - TEST_WALK_LEN;
            let w0 = test_start - PREFIX_TOKENS;
            let truth = GridTruth {
                task: GridTaskKind::Grid,
                width: 6,
                height: 6,
                node_words: spec.node_words.iter().map(|w| vec![w.clone()]).collect(),
                node_token_ids: Some(node_tokens.clone()),
                test_nodes: walk[test_start..].to_vec(),
                context_length: 1024,
                excluded: Vec::new(),
            };
            manifest.sequences.push(SequenceRecord {
                id: sequence_id(condition, i),
                token_ids: walk.iter().map(|&n| TOKEN_OFFSET + n as u32).collect(),
                condition,
                spans: vec![
                    LabeledSpan::new(w0, test_start, SpanLabel::Prefix),
                    LabeledSpan::new(test_start, cfg.n_tokens, SpanLabel::TestWindow),
                ],
                truth: serde_json::to_value(truth).expect("serializable"),
            });

            let theta = long_angle(i, cfg.n_per_condition);
            let base = zigzag(theta, window);
            let planted = match condition {
                Condition::Long => line(window),
                _ => zigzag(theta - short_delta(i, cfg.n_per_condition), window),
            };
            let mut acts = Array3::<f32>::zeros((cfg.n_layers, cfg.n_tokens, cfg.hidden_dim));
            for layer in 0..cfg.n_layers {
                let offset_dim = 2 + layer % (cfg.hidden_dim - 2);
                for t in 0..cfg.n_tokens {
                    // Outside the window: a deterministic filler that never enters the analysis.
                    let (x, y) = if t < w0 {
                        let node = walk[t];
                        ((node % 6) as f64, (node / 6) as f64)
                    } else {
                        let p = if layer == cfg.planted_layer { planted[t - w0] } else { base[t - w0] };
                        (p[0], p[1])
                    };
                    acts[[layer, t, 0]] = x as f32;
                    acts[[layer, t, 1]] = y as f32;
                    acts[[layer, t, offset_dim]] = layer as f32;
                }
            }
            let lattice = &spec.lattice;
            let logits = Array2::from_shape_fn((cfg.n_tokens, 36), |(t, j)| {
                if lattice.is_edge(walk[t], j) {
                    1.0
                } else {
                    0.0
                }
            });
            tensors.push(SequenceTensors::new(acts).with_logits(logits));
        }
    }
    (manifest, tensors)
}

pub fn write(dir: &Path, cfg: &SynthConfig) -> Result<BundleManifest> {
    let (manifest, tensors) = build(cfg);
    write_bundle(dir, &manifest, &tensors)?;
    Ok(manifest)
}
