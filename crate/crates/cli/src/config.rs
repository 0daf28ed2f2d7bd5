//! Versioned run configuration, read from TOML.

use std::path::{Path, PathBuf};

use ctxgeom::store::Condition;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub generate: GenerateConfig,
    pub analyze: AnalyzeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { version: CONFIG_VERSION, seed: 0, generate: GenerateConfig::default(), analyze: AnalyzeConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub grid: Option<GridConfig>,
    pub latent: Option<LatentConfig>,
    pub fewshot: Option<FewShotConfig>,
    pub riddles: Option<RiddleConfig>,
    pub text: Option<TextConfig>,
    /// Adds a word-shuffled copy of every text suite.
    pub shuffle_control: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            grid: Some(GridConfig::default()),
            latent: Some(LatentConfig::default()),
            fewshot: None,
            riddles: None,
            text: None,
            shuffle_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub instances_per_condition: usize,
    pub context_lengths: Vec<usize>,
    pub conditions: Vec<Condition>,
    /// Word list path; the bundled list when absent.
    pub words: Option<PathBuf>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            instances_per_condition: 200,
            context_lengths: default_lengths(),
            conditions: vec![Condition::Short, Condition::Long, Condition::LongRepeat],
            words: None,
        }
    }
}

fn default_lengths() -> Vec<usize> {
    vec![64, 128, 256, 512, 1024]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentConfig {
    pub width: usize,
    pub height: usize,
    pub instances_per_condition: usize,
    pub context_lengths: Vec<usize>,
    pub conditions: Vec<Condition>,
    pub excluded_pairs: usize,
    pub categories: Option<PathBuf>,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            instances_per_condition: 200,
            context_lengths: vec![1024],
            conditions: vec![Condition::Short, Condition::Long, Condition::ZeroShot],
            excluded_pairs: ctxgeom::gridworld::DEFAULT_EXCLUDED_PAIRS,
            categories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewShotConfig {
    /// Pool files, one task per file, named after the task.
    pub pools: Vec<PathBuf>,
    pub n_prompts: usize,
    pub shots: Vec<usize>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { pools: Vec::new(), n_prompts: 100, shots: (0..=8).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiddleConfig {
    pub pool: PathBuf,
    pub shots: Vec<usize>,
}

impl Default for RiddleConfig {
    fn default() -> Self {
        Self { pool: PathBuf::from("riddles.jsonl"), shots: vec![0, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    /// One passage per line.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// Inclusive layer band for aggregation.
    pub band: [usize; 2],
    pub baseline_layer: usize,
    /// Layer of the PCA node maps; skipped when absent.
    pub node_map_layer: Option<usize>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self { band: [15, 25], baseline_layer: 0, node_map_layer: None }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(PipelineError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        if cfg.analyze.band[0] > cfg.analyze.band[1] {
            return Err(PipelineError::Config(format!("empty band {:?}", cfg.analyze.band)));
        }
        let mut lengths = Vec::new();
        if let Some(g) = &cfg.generate.grid {
            lengths.push(&g.context_lengths);
        }
        if let Some(g) = &cfg.generate.latent {
            lengths.push(&g.context_lengths);
        }
        if lengths.iter().any(|l| l.windows(2).any(|w| w[0] >= w[1])) {
            return Err(PipelineError::Config("context lengths must be strictly ascending".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.analyze.band, [15, 25]);
        assert_eq!(cfg.generate.grid.unwrap().context_lengths, vec![64, 128, 256, 512, 1024]);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("version = 1\nseed = 9\n[analyze]\nband = [2, 4]\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.analyze.band, [2, 4]);
        assert_eq!(cfg.analyze.baseline_layer, 0);
    }

    #[test]
    fn rejects_bad_versions_and_keys() {
        assert!(RunConfig::from_toml("version = 2").is_err());
        assert!(RunConfig::from_toml("version = 1\ncolour = 1").is_err());
        assert!(RunConfig::from_toml("version = 1\n[analyze]\nband = [5, 4]").is_err());
        assert!(RunConfig::from_toml("version = 1\n[generate.grid]\ncontext_lengths = [128, 64]").is_err());
    }
}
