use std::collections::{HashMap, HashSet};
use std::time::Instant;

use ctxgeom::gridworld::{
    audit_grid_instance, audit_latent_instance, generate_walk, make_instance, make_latent_instance, render_prompt,
    GridTaskSpec, LatentGridTaskSpec, WalkInstance, WordList, DEFAULT_EXCLUDED_PAIRS,
};
use ctxgeom::seed::derive_seed;
use ctxgeom::store::{Condition, SpanLabel};
use proptest::prelude::*;

const N_INSTANCES: usize = 200;
const CONTEXT: usize = 1024;

/// Every start index where `gram` occurs, by exhaustive comparison.
fn scan(words: &[String], gram: &[String]) -> Vec<usize> {
    let mut hits = Vec::new();
    for i in 0..=words.len() - gram.len() {
        if (0..gram.len()).all(|k| words[i + k] == gram[k]) {
            hits.push(i);
        }
    }
    hits
}

fn check_novelty(inst: &WalkInstance) {
    let t = inst.test_span.start;
    let test = &inst.words[t..t + 5];
    let mut copies = vec![t];
    if let Some(r) = inst.repeat_span {
        assert_eq!(&inst.words[r.start..r.end], test);
        copies.push(r.start);
    }
    copies.sort_unstable();
    assert_eq!(scan(&inst.words, test), copies, "5-gram");
    assert_eq!(scan(&inst.words, &test[..4]), copies, "leading 4-gram");
    let shifted: Vec<usize> = copies.iter().map(|c| c + 1).collect();
    assert_eq!(scan(&inst.words, &test[1..]), shifted, "trailing 4-gram");
}

fn check_position(inst: &WalkInstance) {
    let s = inst.test_span.start;
    match inst.condition {
        Condition::Short => assert!(s >= 5 && s + 5 <= 64, "short test at {s}"),
        Condition::Long | Condition::ZeroShot => assert!(s >= CONTEXT - 64 && s + 5 <= CONTEXT, "late test at {s}"),
        Condition::LongRepeat => {
            assert!(s >= CONTEXT - 64);
            let r = inst.repeat_span.unwrap();
            assert!(r.start >= 5 && r.end <= 64);
        }
        other => panic!("unexpected condition {other}"),
    }
}

fn check_walk(lattice_edge: impl Fn(usize, usize) -> bool, inst: &WalkInstance) {
    assert_eq!(inst.words.len(), CONTEXT);
    assert!(inst.nodes.windows(2).all(|p| lattice_edge(p[0], p[1])));
}

#[test]
fn grid_conditions_pass_exhaustive_audit() {
    let started = Instant::now();
    let spec = GridTaskSpec::new(6, 6, &WordList::default_grid(), 1).unwrap();
    for condition in [Condition::Short, Condition::Long, Condition::LongRepeat] {
        let mut seen = HashSet::new();
        for i in 0..N_INSTANCES {
            let inst = make_instance(&spec, condition, CONTEXT, derive_seed(1, condition.as_str(), i as u64)).unwrap();
            assert!(audit_grid_instance(&spec, &inst).is_empty());
            check_walk(|a, b| spec.lattice.is_edge(a, b), &inst);
            check_novelty(&inst);
            check_position(&inst);
            seen.insert(inst.words.clone());
        }
        assert_eq!(seen.len(), N_INSTANCES, "instances are unique");
    }
    assert!(started.elapsed().as_secs() < 60);
}

#[test]
fn latent_conditions_pass_exhaustive_audit() {
    let spec = LatentGridTaskSpec::new(4, 4, &WordList::default_latent(), DEFAULT_EXCLUDED_PAIRS, 2).unwrap();
    let excluded: HashSet<(String, String)> = spec.excluded.iter().map(|p| (p.from.clone(), p.to.clone())).collect();
    for condition in [Condition::Short, Condition::Long, Condition::ZeroShot] {
        for i in 0..N_INSTANCES {
            let inst =
                make_latent_instance(&spec, condition, CONTEXT, derive_seed(2, condition.as_str(), i as u64)).unwrap();
            assert!(audit_latent_instance(&spec, &inst).is_empty());
            check_walk(|a, b| spec.lattice.is_edge(a, b), &inst);
            check_novelty(&inst);
            check_position(&inst);
            if condition == Condition::ZeroShot {
                let t = inst.test_span;
                let mut inside = 0;
                for k in 0..CONTEXT - 1 {
                    let pair = (inst.words[k].clone(), inst.words[k + 1].clone());
                    if excluded.contains(&pair) {
                        assert!(k >= t.start && k + 1 < t.end, "withheld pair at {k}");
                        inside += 1;
                    }
                }
                assert!(inside >= 1);
            }
        }
    }
}

#[test]
fn latent_emissions_are_uniform() {
    let spec = LatentGridTaskSpec::new(4, 4, &WordList::default_latent(), 0, 3).unwrap();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut visits = vec![0usize; 16];
    for i in 0..20 {
        let inst = make_latent_instance(&spec, Condition::Long, CONTEXT, i).unwrap();
        for (&node, word) in inst.nodes.iter().zip(&inst.words) {
            visits[node] += 1;
            let w = spec.children[node].iter().find(|c| *c == word).unwrap();
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut chi2 = 0.0;
    for (node, children) in spec.children.iter().enumerate() {
        let expected = visits[node] as f64 / 4.0;
        for c in children {
            let observed = *counts.get(c.as_str()).unwrap_or(&0) as f64;
            assert!((observed / visits[node] as f64 - 0.25).abs() < 0.03, "{c}: {observed}/{}", visits[node]);
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    // 48 degrees of freedom; the 0.999 quantile is about 84.
    assert!(chi2 < 84.0, "chi2 = {chi2}");
}

#[test]
fn plain_walk_steps_are_uniform_over_neighbors() {
    let spec = GridTaskSpec::new(6, 6, &WordList::default_grid(), 0).unwrap();
    let walk = generate_walk(&spec.lattice, 200_000, 8);
    let interior = 14;
    let mut next: HashMap<usize, usize> = HashMap::new();
    for p in walk.windows(2).filter(|p| p[0] == interior) {
        *next.entry(p[1]).or_default() += 1;
    }
    let total: usize = next.values().sum();
    assert_eq!(next.len(), 4);
    for &c in next.values() {
        assert!((c as f64 / total as f64 - 0.25).abs() < 0.03);
    }
}

#[test]
fn rendered_spans_follow_the_instance() {
    let spec = GridTaskSpec::new(6, 6, &WordList::default_grid(), 5).unwrap();
    let inst = make_instance(&spec, Condition::Long, 512, 6).unwrap();
    let p = render_prompt(&inst).unwrap();
    assert_eq!(p.text.split(' ').count(), 512);
    let test = p.word_spans.iter().find(|s| s.label == SpanLabel::TestWindow).unwrap();
    let prefix = p.word_spans.iter().find(|s| s.label == SpanLabel::Prefix).unwrap();
    assert_eq!((test.start, test.end), (inst.test_span.start, inst.test_span.end));
    assert_eq!((prefix.start, prefix.end), (test.start - 2, test.start));
    let cs = p.char_spans.iter().find(|c| c.label == SpanLabel::TestWindow).unwrap();
    let chars: String = p.text.chars().skip(cs.start).take(cs.end - cs.start).collect();
    assert_eq!(chars, inst.test_words().join(" "));
}

#[test]
fn specs_serialize_stably() {
    let spec = LatentGridTaskSpec::new(4, 4, &WordList::default_latent(), 8, 9).unwrap();
    let json = serde_json::to_string_pretty(&spec).unwrap();
    let back: LatentGridTaskSpec = serde_json::from_str(&json).unwrap();
    assert_eq!(back, spec);
    assert_eq!(serde_json::to_string_pretty(&back).unwrap(), json);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn any_seed_and_length_yields_a_clean_instance(seed in any::<u64>(), len in 80usize..600) {
        let spec = GridTaskSpec::new(6, 6, &WordList::default_grid(), 4).unwrap();
        for condition in [Condition::Short, Condition::Long, Condition::LongRepeat] {
            let inst = make_instance(&spec, condition, len, seed).unwrap();
            prop_assert!(audit_grid_instance(&spec, &inst).is_empty());
        }
    }
}
