//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxgeom::store::Condition;
use log::info;

use crate::config::{FewShotConfig, GridConfig, LatentConfig, RiddleConfig};
use crate::report::Format;
use crate::synth::SynthConfig;
use crate::{PipelineError, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ctxgeom", version, about = "Trajectory geometry of in-context learning")]
pub struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Versioned TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write task suites for the extraction harness.
    Generate(GenerateArgs),
    /// Check a trajectory bundle and every tensor file it references.
    Validate { bundle: PathBuf },
    /// Geometry, behavior and statistics for a bundle.
    Analyze(AnalyzeArgs),
    /// Render tables or plots from an analysis directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
    },
    /// Write a synthetic bundle with planted geometry.
    Synth {
        #[arg(long, default_value_t = 20)]
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteKind {
    All,
    Grid,
    Latent,
    Fewshot,
    Riddle,
    Text,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum, default_value = "all")]
    pub kind: SuiteKind,
    /// Restrict grid conditions (repeatable).
    #[arg(long, value_parser = parse_condition)]
    pub condition: Vec<Condition>,
    /// Instances per condition, or prompts per task for few-shot suites.
    #[arg(long)]
    pub n: Option<usize>,
    /// Context lengths (repeatable).
    #[arg(long)]
    pub length: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub bundle: PathBuf,
    /// Inclusive layer band, overriding the config.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    pub band: Option<Vec<usize>>,
    #[arg(long)]
    pub node_map_layer: Option<usize>,
}

fn parse_condition(s: &str) -> std::result::Result<Condition, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok((cfg, base))
}

fn apply_generate_args(cfg: &mut RunConfig, a: &GenerateArgs) -> Result<()> {
    let g = &mut cfg.generate;
    match a.kind {
        SuiteKind::All => {}
        SuiteKind::Grid => {
            let grid = g.grid.take().unwrap_or_default();
            *g = crate::config::GenerateConfig { grid: Some(grid), latent: None, fewshot: None, riddles: None, text: None, ..g.clone() };
        }
        SuiteKind::Latent => {
            let latent = g.latent.take().unwrap_or_default();
            *g = crate::config::GenerateConfig { grid: None, latent: Some(latent), fewshot: None, riddles: None, text: None, ..g.clone() };
        }
        SuiteKind::Fewshot => {
            let f = g.fewshot.take().filter(|f| !f.pools.is_empty()).ok_or_else(|| {
                PipelineError::Usage("few-shot generation needs [generate.fewshot] pools in the config".into())
            })?;
            *g = crate::config::GenerateConfig { grid: None, latent: None, fewshot: Some(f), riddles: None, text: None, ..g.clone() };
        }
        SuiteKind::Riddle => {
            let r: RiddleConfig = g
                .riddles
                .take()
                .ok_or_else(|| PipelineError::Usage("riddle generation needs [generate.riddles] in the config".into()))?;
            *g = crate::config::GenerateConfig { grid: None, latent: None, fewshot: None, riddles: Some(r), text: None, ..g.clone() };
        }
        SuiteKind::Text => {
            let t = g.text.take().ok_or_else(|| PipelineError::Usage("text generation needs [generate.text] in the config".into()))?;
            *g = crate::config::GenerateConfig { grid: None, latent: None, fewshot: None, riddles: None, text: Some(t), ..g.clone() };
        }
    }
    let grids: [Option<&mut GridConfig>; 1] = [g.grid.as_mut()];
    for grid in grids.into_iter().flatten() {
        if let Some(n) = a.n {
            grid.instances_per_condition = n;
        }
        if !a.condition.is_empty() {
            grid.conditions = a.condition.clone();
        }
        if !a.length.is_empty() {
            grid.context_lengths = a.length.clone();
        }
    }
    if let Some(latent) = g.latent.as_mut() {
        let l: &mut LatentConfig = latent;
        if let Some(n) = a.n {
            l.instances_per_condition = n;
        }
        if !a.condition.is_empty() {
            l.conditions = a.condition.clone();
        }
        if !a.length.is_empty() {
            l.context_lengths = a.length.clone();
        }
    }
    if let (Some(f), Some(n)) = (g.fewshot.as_mut(), a.n) {
        let f: &mut FewShotConfig = f;
        f.n_prompts = n;
    }
    let mut lengths = a.length.clone();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths != a.length {
        return Err(PipelineError::Usage("--length values must be strictly ascending".into()));
    }
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let (mut cfg, base) = load_config(&cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Generate(a) => {
            apply_generate_args(&mut cfg, a)?;
            let index = crate::generate::run(&cfg, &base, &out)?;
            for e in index {
                println!("{}\t{} items\t{}", e.name, e.items, out.join(e.file).display());
            }
        }
        Command::Validate { bundle } => {
            let s = crate::validate::run(bundle)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("serializable"));
        }
        Command::Analyze(a) => {
            if let Some(b) = &a.band {
                cfg.analyze.band = [b[0], b[1]];
            }
            if a.node_map_layer.is_some() {
                cfg.analyze.node_map_layer = a.node_map_layer;
            }
            let r = crate::analyze::run(&a.bundle, &cfg, &out)?;
            info!("run {}: {} windows, {} exclusions", r.index.run_id, r.geometry.windows.len(), r.exclusions.exclusions.len());
            println!("{}", r.index.run_id);
        }
        Command::Report { dir, format } => {
            let target = cli.out.clone().unwrap_or_else(|| dir.join("report"));
            for f in crate::report::run(dir, *format, &target)? {
                println!("{}", target.join(f).display());
            }
        }
        Command::Synth { n } => {
            let sc = SynthConfig { n_per_condition: *n, seed: cfg.seed, ..Default::default() };
            let m = crate::synth::write(&out, &sc)?;
            println!("{} sequences in {}", m.sequences.len(), out.display());
        }
    }
    Ok(())
}
