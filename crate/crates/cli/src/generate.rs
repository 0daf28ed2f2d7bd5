//! `generate`: task suites as JSON documents ready for the extraction harness.

use std::path::{Path, PathBuf};

use ctxgeom::fewshot::{
    build_fewshot_suite, build_riddle_suite, load_riddle_pool, load_task_pool, parse_text_prompts, shuffle_words,
    AnswerTruth, PhaseSpan, PromptTemplate,
};
use ctxgeom::gridworld::{
    make_instance, make_latent_instance, render_prompt, GridTaskSpec, GridTruth, LatentGridTaskSpec, WalkInstance,
    WordList,
};
use ctxgeom::seed::derive_seed;
use ctxgeom::store::{Condition, SpanLabel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{to_json, write_file, PipelineError, Result};

pub const SUITE_FORMAT_VERSION: u32 = 1;

/// Character span in a suite item; `shot` is set for few-shot phases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSpan {
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteItem {
    pub id: String,
    pub condition: Condition,
    pub text: String,
    pub spans: Vec<ItemSpan>,
    pub truth: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSuite {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    /// Task spec or template the items were rendered from.
    pub source: serde_json::Value,
    pub items: Vec<SuiteItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteIndexEntry {
    pub name: String,
    pub file: String,
    pub items: usize,
}

fn grid_item(id: String, inst: &WalkInstance, truth: GridTruth) -> Result<SuiteItem> {
    let prompt = render_prompt(inst)?;
    Ok(SuiteItem {
        id,
        condition: inst.condition,
        text: prompt.text,
        spans: prompt
            .char_spans
            .iter()
            .map(|s| ItemSpan { start: s.start, end: s.end, label: s.label, shot: None })
            .collect(),
        truth: serde_json::to_value(truth).expect("serializable"),
        seed: inst.seed,
    })
}

fn phase_item_spans(spans: &[PhaseSpan]) -> Vec<ItemSpan> {
    spans.iter().map(|s| ItemSpan { start: s.start, end: s.end, label: s.label, shot: Some(s.shot) }).collect()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds every configured suite. Relative paths in the config resolve against `base`.
pub fn build_suites(cfg: &RunConfig, base: &Path) -> Result<Vec<PromptSuite>> {
    let root = cfg.seed;
    let mut suites = Vec::new();

    if let Some(g) = &cfg.generate.grid {
        let words = match &g.words {
            Some(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                WordList::parse(&text)?
            }
            None => WordList::default_grid(),
        };
        let spec = GridTaskSpec::new(g.width, g.height, &words, derive_seed(root, "grid-spec", 0))?;
        let mut items = Vec::new();
        for &len in &g.context_lengths {
            for &cond in &g.conditions {
                let stream = format!("grid/{cond}/{len}");
                let batch: Result<Vec<SuiteItem>> = (0..g.instances_per_condition)
                    .into_par_iter()
                    .map(|i| {
                        let inst = make_instance(&spec, cond, len, derive_seed(root, &stream, i as u64))?;
                        grid_item(format!("grid-{cond}-L{len}-{i:04}"), &inst, GridTruth::for_grid(&spec, &inst))
                    })
                    .collect();
                items.extend(batch?);
            }
        }
        suites.push(PromptSuite {
            format_version: SUITE_FORMAT_VERSION,
            name: "grid".into(),
            seed: root,
            source: serde_json::to_value(&spec).expect("serializable"),
            items,
        });
    }

    if let Some(g) = &cfg.generate.latent {
        let cats = match &g.categories {
            Some(p) => {
                let path = resolve(base, p);
                let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                WordList::parse(&text)?
            }
            None => WordList::default_latent(),
        };
        let spec = LatentGridTaskSpec::new(g.width, g.height, &cats, g.excluded_pairs, derive_seed(root, "latent-spec", 0))?;
        let mut items = Vec::new();
        for &len in &g.context_lengths {
            for &cond in &g.conditions {
                let stream = format!("latent/{cond}/{len}");
                let batch: Result<Vec<SuiteItem>> = (0..g.instances_per_condition)
                    .into_par_iter()
                    .map(|i| {
                        let inst = make_latent_instance(&spec, cond, len, derive_seed(root, &stream, i as u64))?;
                        grid_item(format!("latent-{cond}-L{len}-{i:04}"), &inst, GridTruth::for_latent(&spec, &inst))
                    })
                    .collect();
                items.extend(batch?);
            }
        }
        suites.push(PromptSuite {
            format_version: SUITE_FORMAT_VERSION,
            name: "latent".into(),
            seed: root,
            source: serde_json::to_value(&spec).expect("serializable"),
            items,
        });
    }

    let mut text_suites = Vec::new();
    if let Some(f) = &cfg.generate.fewshot {
        for pool in &f.pools {
            let task = load_task_pool(&resolve(base, pool))?;
            let mut items = Vec::new();
            for &k in &f.shots {
                for p in build_fewshot_suite(&task, f.n_prompts, k, root)? {
                    let truth = AnswerTruth { task: task.name.clone(), k_shots: k, expected: p.expected.clone(), generated: None };
                    items.push(SuiteItem {
                        id: p.id,
                        condition: Condition::ShotK,
                        text: p.text,
                        spans: phase_item_spans(&p.spans),
                        truth: serde_json::to_value(truth).expect("serializable"),
                        seed: p.seed,
                    });
                }
            }
            text_suites.push(PromptSuite {
                format_version: SUITE_FORMAT_VERSION,
                name: task.name.clone(),
                seed: root,
                source: serde_json::to_value(&task.template).expect("serializable"),
                items,
            });
        }
    }

    if let Some(r) = &cfg.generate.riddles {
        let pool = load_riddle_pool(&resolve(base, &r.pool))?;
        let mut items = Vec::new();
        for &k in &r.shots {
            for p in build_riddle_suite(&pool, k, root)? {
                let truth = AnswerTruth { task: "riddle".into(), k_shots: k, expected: p.expected.clone(), generated: None };
                items.push(SuiteItem {
                    id: p.id,
                    condition: Condition::ShotK,
                    text: p.text,
                    spans: phase_item_spans(&p.spans),
                    truth: serde_json::to_value(truth).expect("serializable"),
                    seed: p.seed,
                });
            }
        }
        text_suites.push(PromptSuite {
            format_version: SUITE_FORMAT_VERSION,
            name: "riddle".into(),
            seed: root,
            source: serde_json::to_value(PromptTemplate::default()).expect("serializable"),
            items,
        });
    }

    if let Some(t) = &cfg.generate.text {
        let path = resolve(base, &t.path);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let items = parse_text_prompts("natural", &text)
            .into_iter()
            .enumerate()
            .map(|(i, p)| SuiteItem {
                id: p.id,
                condition: Condition::Natural,
                text: p.text,
                spans: Vec::new(),
                truth: serde_json::json!({ "task": "natural" }),
                seed: derive_seed(root, "natural", i as u64),
            })
            .collect();
        text_suites.push(PromptSuite {
            format_version: SUITE_FORMAT_VERSION,
            name: "natural".into(),
            seed: root,
            source: serde_json::Value::Null,
            items,
        });
    }

    if cfg.generate.shuffle_control {
        let controls: Vec<PromptSuite> = text_suites.iter().map(|s| shuffled_control(s, root)).collect();
        text_suites.extend(controls);
    }
    suites.extend(text_suites);
    Ok(suites)
}

/// Word-shuffled copy of a suite; spans are dropped since phases no longer exist.
pub fn shuffled_control(suite: &PromptSuite, root: u64) -> PromptSuite {
    let stream = format!("shuffle/{}", suite.name);
    PromptSuite {
        format_version: SUITE_FORMAT_VERSION,
        name: format!("{}-shuffled", suite.name),
        seed: root,
        source: serde_json::json!({ "shuffled_from": suite.name }),
        items: suite
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let seed = derive_seed(root, &stream, i as u64);
                SuiteItem {
                    id: format!("{}-shuffled", item.id),
                    condition: Condition::RandomControl,
                    text: shuffle_words(&item.text, seed),
                    spans: Vec::new(),
                    truth: serde_json::json!({ "task": suite.name, "source": item.id }),
                    seed,
                }
            })
            .collect(),
    }
}

/// Writes `suites/<name>.json` plus `suites/index.json` under `out`.
pub fn write_suites(out: &Path, suites: &[PromptSuite]) -> Result<Vec<SuiteIndexEntry>> {
    let mut index = Vec::new();
    for s in suites {
        let file = format!("suites/{}.json", s.name);
        write_file(&out.join(&file), to_json(s))?;
        index.push(SuiteIndexEntry { name: s.name.clone(), file, items: s.items.len() });
    }
    write_file(&out.join("suites/index.json"), to_json(&index))?;
    Ok(index)
}

pub fn run(cfg: &RunConfig, base: &Path, out: &Path) -> Result<Vec<SuiteIndexEntry>> {
    let suites = build_suites(cfg, base)?;
    let index = write_suites(out, &suites)?;
    write_file(&out.join("config.toml"), cfg.to_toml())?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GridConfig, LatentConfig};

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.generate.grid = Some(GridConfig { instances_per_condition: 3, context_lengths: vec![64, 128], ..Default::default() });
        cfg.generate.latent = Some(LatentConfig { instances_per_condition: 2, context_lengths: vec![256], ..Default::default() });
        cfg
    }

    #[test]
    fn suite_sizes_follow_config() {
        let suites = build_suites(&small(), Path::new(".")).unwrap();
        assert_eq!(suites.len(), 2);
        assert_eq!(suites[0].items.len(), 3 * 2 * 3);
        assert_eq!(suites[1].items.len(), 2 * 3);
        let item = &suites[0].items[0];
        assert!(item.spans.iter().any(|s| s.label == SpanLabel::TestWindow));
    }

    #[test]
    fn shuffled_control_keeps_words() {
        let suites = build_suites(&small(), Path::new(".")).unwrap();
        let c = shuffled_control(&suites[0], 1);
        let mut a: Vec<&str> = suites[0].items[0].text.split(' ').collect();
        let mut b: Vec<&str> = c.items[0].text.split(' ').collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(c.items[0].condition, Condition::RandomControl);
    }

    #[test]
    fn infeasible_lengths_map_to_exit_three() {
        let mut cfg = small();
        cfg.generate.grid.as_mut().unwrap().context_lengths = vec![8];
        let err = build_suites(&cfg, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
