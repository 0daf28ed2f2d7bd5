//! `analyze`: geometry, behavior and statistics over a trajectory bundle.
//!
//! Writes four JSON documents keyed by a shared run id:
//! `geometry.json`, `behavior.json`, `stats.json` and `exclusions.json`, plus
//! `nodemap.json` when a node-map layer is configured and `analysis.json`
//! listing what was produced.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ctxgeom::behavior::{grid_truth, neighbor_eval, test_steps};
use ctxgeom::fewshot::AnswerTruth;
use ctxgeom::geometry::{node_map_over, CurvatureProfile, Measure, NodeAssignment};
use ctxgeom::gridworld::{GridTaskKind, GridTruth};
use ctxgeom::stats::{anova_oneway, pearson_r, sample_variance, ttest_ind};
use ctxgeom::store::{read_bundle, Condition, SequenceRecord, SpanLabel, TrajectoryBundle, MANIFEST_FILE};
use ctxgeom::{NodeMap, StatResult};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AnalyzeConfig;
use crate::{digest, to_json, write_file, PipelineError, Result, RunConfig};

pub const GEOMETRY_FILE: &str = "geometry.json";
pub const BEHAVIOR_FILE: &str = "behavior.json";
pub const STATS_FILE: &str = "stats.json";
pub const EXCLUSIONS_FILE: &str = "exclusions.json";
pub const NODEMAP_FILE: &str = "nodemap.json";
pub const ANALYSIS_FILE: &str = "analysis.json";

/// Grid test windows: prefix plus test walk.
pub const WINDOW_TEST: &str = "test";
/// Whole sequence.
pub const WINDOW_FULL: &str = "full";

/// Grouping key shared by window rows and their summaries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub task: String,
    pub condition: Condition,
    pub window: String,
    pub context_length: Option<usize>,
    pub k_shots: Option<usize>,
    /// Shot index of a phase window; equals `k_shots` on the test item.
    pub shot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowProfile {
    pub sequence_id: String,
    pub group: GroupKey,
    pub start: usize,
    pub end: usize,
    pub profile: CurvatureProfile<f64>,
    /// Band mean per measure.
    pub band: BTreeMap<Measure, f64>,
}

impl WindowProfile {
    pub fn band_value(&self, m: Measure) -> f64 {
        self.band[&m]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub group: GroupKey,
    pub measure: Measure,
    pub n: usize,
    /// Mean over windows, per layer.
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub group: GroupKey,
    pub measure: Measure,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single window.
    pub sd: Option<f64>,
}

/// Mean band straightening and logit difference per context length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextTrend {
    pub task: String,
    pub condition: Condition,
    pub context_length: usize,
    pub n: usize,
    pub straightening: f64,
    pub n_behavior: usize,
    pub logit_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySection {
    pub run_id: String,
    pub band: [usize; 2],
    pub baseline_layer: usize,
    pub n_layers: usize,
    pub windows: Vec<WindowProfile>,
    pub layer_curves: Vec<LayerCurve>,
    pub band_summary: Vec<BandSummary>,
    pub context_trend: Vec<ContextTrend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceBehavior {
    pub sequence_id: String,
    pub task: String,
    pub condition: Condition,
    pub context_length: usize,
    pub n_steps: usize,
    pub success_rate: f64,
    pub mean_neighbor: f64,
    pub mean_non_neighbor: f64,
    pub logit_difference: f64,
    /// Band straightening of the test window, when computed.
    pub straightening: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub sequence_id: String,
    pub condition: Condition,
    pub position: usize,
    pub node: usize,
    pub neighbor_mean: f64,
    pub non_neighbor_mean: f64,
    pub difference: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task: String,
    pub k_shots: usize,
    pub n: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skip {
    pub sequence_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSection {
    pub run_id: String,
    pub sequences: Vec<SequenceBehavior>,
    pub steps: Vec<StepRow>,
    pub accuracy: Vec<AccuracyRow>,
    /// Grid sequences without a behavioral score.
    pub skipped: Vec<Skip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub name: String,
    /// Input columns, one per group or series.
    pub inputs: Vec<String>,
    pub result: Option<StatResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSection {
    pub run_id: String,
    pub results: Vec<StatRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub sequence_id: String,
    pub window: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSection {
    pub run_id: String,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNodeMap {
    pub task: String,
    pub map: Option<NodeMap>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMapSection {
    pub run_id: String,
    pub layer: usize,
    pub maps: Vec<TaskNodeMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisIndex {
    pub run_id: String,
    pub model_id: String,
    pub n_sequences: usize,
    pub n_layers: usize,
    pub band: [usize; 2],
    pub baseline_layer: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub index: AnalysisIndex,
    pub geometry: GeometrySection,
    pub behavior: BehaviorSection,
    pub stats: StatsSection,
    pub exclusions: ExclusionSection,
    pub nodemap: Option<NodeMapSection>,
}

/// What a sequence's ground truth says about it.
enum Truth {
    Grid(GridTruth),
    Answer(AnswerTruth),
    Text(String),
}

fn classify(seq: &SequenceRecord) -> Truth {
    if let Some(t) = grid_truth(seq) {
        return Truth::Grid(t);
    }
    if let Ok(t) = serde_json::from_value::<AnswerTruth>(seq.truth.clone()) {
        return Truth::Answer(t);
    }
    let task = seq.truth.get("task").and_then(|t| t.as_str()).unwrap_or("text");
    Truth::Text(task.to_string())
}

fn grid_task_name(t: &GridTruth) -> &'static str {
    match t.task {
        GridTaskKind::Grid => "grid",
        GridTaskKind::Latent => "latent",
    }
}

struct WindowSpec {
    group: GroupKey,
    start: usize,
    end: usize,
}

fn window_specs(seq: &SequenceRecord, truth: &Truth) -> std::result::Result<Vec<WindowSpec>, String> {
    let key = |task: &str, window: &str| GroupKey {
        task: task.to_string(),
        condition: seq.condition,
        window: window.to_string(),
        context_length: None,
        k_shots: None,
        shot: None,
    };
    match truth {
        Truth::Grid(t) => {
            let test = seq.spans_labeled(SpanLabel::TestWindow).next().ok_or("no test-window span")?;
            let start = seq
                .spans_labeled(SpanLabel::Prefix)
                .find(|p| p.end == test.start)
                .map_or(test.start, |p| p.start);
            let mut group = key(grid_task_name(t), WINDOW_TEST);
            group.context_length = Some(t.context_length);
            Ok(vec![WindowSpec { group, start, end: test.end }])
        }
        Truth::Answer(a) => {
            let mut full = key(&a.task, WINDOW_FULL);
            full.k_shots = Some(a.k_shots);
            let mut out = vec![WindowSpec { group: full, start: 0, end: seq.n_tokens() }];
            let bounds: Vec<_> = seq.spans_labeled(SpanLabel::ShotBoundary).collect();
            for span in &seq.spans {
                if !matches!(span.label, SpanLabel::Question | SpanLabel::Transition | SpanLabel::Answer | SpanLabel::Choice) {
                    continue;
                }
                let shot = bounds.iter().filter(|b| b.end <= span.start).count();
                let mut group = key(&a.task, span.label.as_str());
                group.k_shots = Some(a.k_shots);
                group.shot = Some(shot);
                out.push(WindowSpec { group, start: span.start, end: span.end });
            }
            Ok(out)
        }
        Truth::Text(task) => Ok(vec![WindowSpec { group: key(task, WINDOW_FULL), start: 0, end: seq.n_tokens() }]),
    }
}

struct SequenceOutcome {
    windows: Vec<WindowProfile>,
    exclusions: Vec<Exclusion>,
    behavior: Option<(SequenceBehavior, Vec<StepRow>)>,
    skip: Option<Skip>,
    answer: Option<(String, usize, bool)>,
}

fn band_means(p: &CurvatureProfile<f64>, band: [usize; 2]) -> BTreeMap<Measure, f64> {
    Measure::ALL
        .into_iter()
        .map(|m| (m, ctxgeom::numeric::mean(&p.series(m)[band[0]..=band[1]])))
        .collect()
}

fn analyze_sequence(bundle: &TrajectoryBundle, seq: &SequenceRecord, cfg: &AnalyzeConfig) -> SequenceOutcome {
    let truth = classify(seq);
    let mut out = SequenceOutcome { windows: Vec::new(), exclusions: Vec::new(), behavior: None, skip: None, answer: None };
    match window_specs(seq, &truth) {
        Err(reason) => out.exclusions.push(Exclusion { sequence_id: seq.id.clone(), window: "*".into(), reason }),
        Ok(specs) => {
            for w in specs {
                let result = bundle
                    .slice_window(&seq.id, w.start..w.end)
                    .map_err(|e| e.to_string())
                    .and_then(|slab| CurvatureProfile::<f64>::from_window(slab.view(), cfg.baseline_layer).map_err(|e| e.to_string()));
                match result {
                    Ok(profile) => out.windows.push(WindowProfile {
                        sequence_id: seq.id.clone(),
                        band: band_means(&profile, cfg.band),
                        group: w.group,
                        start: w.start,
                        end: w.end,
                        profile,
                    }),
                    Err(reason) => out.exclusions.push(Exclusion {
                        sequence_id: seq.id.clone(),
                        window: describe(&w.group),
                        reason: format!("tokens [{}, {}): {reason}", w.start, w.end),
                    }),
                }
            }
        }
    }
    match &truth {
        Truth::Grid(t) => match grid_behavior(bundle, seq, t) {
            Ok((mut b, steps)) => {
                b.straightening = out.windows.first().map(|w| w.band_value(Measure::Straightening));
                out.behavior = Some((b, steps));
            }
            Err(reason) => out.skip = Some(Skip { sequence_id: seq.id.clone(), reason }),
        },
        Truth::Answer(a) => {
            if let Some(g) = &a.generated {
                out.answer = Some((a.task.clone(), a.k_shots, ctxgeom::behavior::exact_match(g, &a.expected)));
            }
        }
        Truth::Text(_) => {}
    }
    out
}

fn describe(g: &GroupKey) -> String {
    match g.shot {
        Some(s) => format!("{}@{s}", g.window),
        None => g.window.clone(),
    }
}

fn grid_behavior(
    bundle: &TrajectoryBundle,
    seq: &SequenceRecord,
    truth: &GridTruth,
) -> std::result::Result<(SequenceBehavior, Vec<StepRow>), String> {
    if bundle.manifest.tracked_token_ids.is_empty() {
        return Err("bundle tracks no tokens".into());
    }
    let node_tokens = truth.node_token_ids.as_ref().ok_or("truth has no node token ids")?;
    let lattice = truth.lattice().map_err(|e| e.to_string())?;
    let steps = test_steps(seq, truth).map_err(|e| e.to_string())?;
    let logits = bundle.load_logits(&seq.id).map_err(|e| e.to_string())?.ok_or("no logits stored")?;
    let eval = neighbor_eval::<f64>(logits.view(), &bundle.manifest.tracked_token_ids, &lattice, node_tokens, &steps)
        .map_err(|e| e.to_string())?;
    let rows = eval
        .steps
        .iter()
        .map(|s| StepRow {
            sequence_id: seq.id.clone(),
            condition: seq.condition,
            position: s.position,
            node: s.node,
            neighbor_mean: s.neighbor_mean,
            non_neighbor_mean: s.non_neighbor_mean,
            difference: s.difference(),
            success: s.success,
        })
        .collect();
    let b = SequenceBehavior {
        sequence_id: seq.id.clone(),
        task: grid_task_name(truth).into(),
        condition: seq.condition,
        context_length: truth.context_length,
        n_steps: eval.steps.len(),
        success_rate: eval.success_rate(),
        mean_neighbor: eval.mean_neighbor(),
        mean_non_neighbor: eval.mean_non_neighbor(),
        logit_difference: eval.logit_difference,
        straightening: None,
    };
    Ok((b, rows))
}

fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let mean = ctxgeom::numeric::mean(xs);
    let sd = (xs.len() > 1).then(|| sample_variance(xs).sqrt());
    (mean, sd)
}

fn summarize(windows: &[WindowProfile], n_layers: usize) -> (Vec<LayerCurve>, Vec<BandSummary>) {
    let mut groups: BTreeMap<&GroupKey, Vec<&WindowProfile>> = BTreeMap::new();
    for w in windows {
        groups.entry(&w.group).or_default().push(w);
    }
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for (key, ws) in groups {
        for m in Measure::ALL {
            let mean = (0..n_layers)
                .map(|l| ctxgeom::numeric::mean(&ws.iter().map(|w| w.profile.series(m)[l]).collect::<Vec<_>>()))
                .collect();
            curves.push(LayerCurve { group: key.clone(), measure: m, n: ws.len(), mean });
            let (mean, sd) = mean_sd(&ws.iter().map(|w| w.band_value(m)).collect::<Vec<_>>());
            summary.push(BandSummary { group: key.clone(), measure: m, n: ws.len(), mean, sd });
        }
    }
    (curves, summary)
}

fn context_trend(windows: &[WindowProfile], behavior: &[SequenceBehavior]) -> Vec<ContextTrend> {
    let mut geo: BTreeMap<(String, Condition, usize), Vec<f64>> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.group.window == WINDOW_TEST) {
        if let Some(len) = w.group.context_length {
            geo.entry((w.group.task.clone(), w.group.condition, len))
                .or_default()
                .push(w.band_value(Measure::Straightening));
        }
    }
    let mut beh: BTreeMap<(String, Condition, usize), Vec<f64>> = BTreeMap::new();
    for b in behavior {
        beh.entry((b.task.clone(), b.condition, b.context_length)).or_default().push(b.logit_difference);
    }
    geo.into_iter()
        .map(|((task, condition, context_length), s)| {
            let diffs = beh.get(&(task.clone(), condition, context_length));
            ContextTrend {
                n: s.len(),
                straightening: ctxgeom::numeric::mean(&s),
                n_behavior: diffs.map_or(0, Vec::len),
                logit_difference: diffs.map(|d| ctxgeom::numeric::mean(d)),
                task,
                condition,
                context_length,
            }
        })
        .collect()
}

fn row(name: String, inputs: Vec<String>, r: ctxgeom::stats::Result<StatResult>) -> StatRow {
    match r {
        Ok(result) => StatRow { name, inputs, result: Some(result), error: None },
        Err(e) => StatRow { name, inputs, result: None, error: Some(e.to_string()) },
    }
}

/// Per-sequence band straightening of windows matching `pred`, averaged when a sequence has several.
fn per_sequence(windows: &[WindowProfile], pred: impl Fn(&GroupKey) -> bool) -> Vec<f64> {
    let mut by_seq: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for w in windows.iter().filter(|w| pred(&w.group)) {
        by_seq.entry(&w.sequence_id).or_default().push(w.band_value(Measure::Straightening));
    }
    by_seq.values().map(|v| ctxgeom::numeric::mean(v)).collect()
}

const CONTRASTS: [(Condition, Condition); 3] = [
    (Condition::Short, Condition::Long),
    (Condition::Long, Condition::LongRepeat),
    (Condition::Short, Condition::ZeroShot),
];

fn stats_battery(geo: &GeometrySection, behavior: &BehaviorSection) -> Vec<StatRow> {
    let windows = &geo.windows;
    let mut rows = Vec::new();
    let col = |task: &str, extra: &str| format!("band_straightening[task={task}{extra}]");

    // Grid condition contrasts per context length.
    let mut grid_keys: BTreeMap<(String, usize), Vec<Condition>> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.group.window == WINDOW_TEST) {
        let e = grid_keys.entry((w.group.task.clone(), w.group.context_length.unwrap_or(0))).or_default();
        if !e.contains(&w.group.condition) {
            e.push(w.group.condition);
        }
    }
    for ((task, len), conds) in &grid_keys {
        for (a, b) in CONTRASTS {
            if !(conds.contains(&a) && conds.contains(&b)) {
                continue;
            }
            let pick = |c: Condition| {
                per_sequence(windows, |g| {
                    g.window == WINDOW_TEST && &g.task == task && g.context_length == Some(*len) && g.condition == c
                })
            };
            rows.push(row(
                format!("{task}/L{len}/{a}-vs-{b}"),
                vec![col(task, &format!(",L={len},condition={a}")), col(task, &format!(",L={len},condition={b}"))],
                ttest_ind(&pick(a), &pick(b)),
            ));
        }
    }

    // Text tasks against their shuffled controls.
    let mut text: BTreeMap<String, Vec<Condition>> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.group.window == WINDOW_FULL) {
        let task = w.group.task.trim_end_matches("-shuffled").to_string();
        let e = text.entry(task).or_default();
        if !e.contains(&w.group.condition) {
            e.push(w.group.condition);
        }
    }
    for (task, conds) in &text {
        if !conds.contains(&Condition::RandomControl) {
            continue;
        }
        for &c in conds.iter().filter(|&&c| c != Condition::RandomControl) {
            let pick = |c: Condition| {
                per_sequence(windows, |g| {
                    g.window == WINDOW_FULL && g.task.trim_end_matches("-shuffled") == task && g.condition == c
                })
            };
            rows.push(row(
                format!("{task}/{c}-vs-random-control"),
                vec![col(task, &format!(",window=full,condition={c}")), col(task, ",window=full,condition=random-control")],
                ttest_ind(&pick(c), &pick(Condition::RandomControl)),
            ));
        }
    }

    // Shot-count effects on each phase of the test item.
    let mut phases: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for w in windows.iter().filter(|w| w.group.k_shots.is_some() && w.group.shot == w.group.k_shots) {
        let e = phases.entry((w.group.task.clone(), w.group.window.clone())).or_default();
        let k = w.group.k_shots.unwrap();
        if !e.contains(&k) {
            e.push(k);
        }
    }
    for ((task, phase), ks) in &mut phases {
        ks.sort_unstable();
        let groups: Vec<Vec<f64>> = ks
            .iter()
            .map(|&k| {
                per_sequence(windows, |g| {
                    &g.task == task && &g.window == phase && g.k_shots == Some(k) && g.shot == Some(k)
                })
            })
            .collect();
        let inputs: Vec<String> = ks.iter().map(|k| col(task, &format!(",phase={phase},k={k},test-item"))).collect();
        if ks.len() >= 2 {
            rows.push(row(format!("{task}/{phase}/shot-count-anova"), inputs.clone(), anova_oneway(&groups)));
        }
        if ks.len() == 2 {
            rows.push(row(
                format!("{task}/{phase}/k{}-vs-k{}", ks[0], ks[1]),
                inputs,
                ttest_ind(&groups[0], &groups[1]),
            ));
        }
    }

    // Behavior: neighbor versus non-neighbor logits, and the link to straightening.
    let mut beh: BTreeMap<(String, Condition, usize), Vec<&SequenceBehavior>> = BTreeMap::new();
    for b in &behavior.sequences {
        beh.entry((b.task.clone(), b.condition, b.context_length)).or_default().push(b);
    }
    for ((task, cond, len), bs) in &beh {
        let n: Vec<f64> = bs.iter().map(|b| b.mean_neighbor).collect();
        let nn: Vec<f64> = bs.iter().map(|b| b.mean_non_neighbor).collect();
        let tag = format!("task={task},L={len},condition={cond}");
        rows.push(row(
            format!("{task}/L{len}/{cond}/neighbor-vs-non-neighbor"),
            vec![format!("mean_neighbor_logit[{tag}]"), format!("mean_non_neighbor_logit[{tag}]")],
            ttest_ind(&n, &nn),
        ));
    }
    let tasks: BTreeSet<&str> = behavior.sequences.iter().map(|b| b.task.as_str()).collect();
    for task in tasks {
        let pairs: Vec<&SequenceBehavior> =
            behavior.sequences.iter().filter(|b| b.task == task && b.straightening.is_some()).collect();
        let s: Vec<f64> = pairs.iter().map(|b| b.straightening.unwrap()).collect();
        let d: Vec<f64> = pairs.iter().map(|b| b.logit_difference).collect();
        let nb: Vec<f64> = pairs.iter().map(|b| b.mean_neighbor).collect();
        rows.push(row(
            format!("{task}/straightening-vs-logit-difference"),
            vec![col(task, ",per-sequence"), format!("logit_difference[task={task},per-sequence]")],
            pearson_r(&s, &d),
        ));
        rows.push(row(
            format!("{task}/straightening-vs-neighbor-logit"),
            vec![col(task, ",per-sequence"), format!("mean_neighbor_logit[task={task},per-sequence]")],
            pearson_r(&s, &nb),
        ));
    }
    let mut sweeps: BTreeMap<(&str, Condition), Vec<&ContextTrend>> = BTreeMap::new();
    for t in geo.context_trend.iter().filter(|t| t.logit_difference.is_some()) {
        sweeps.entry((&t.task, t.condition)).or_default().push(t);
    }
    for ((task, cond), ts) in sweeps {
        if ts.len() < 3 {
            continue;
        }
        let s: Vec<f64> = ts.iter().map(|t| t.straightening).collect();
        let d: Vec<f64> = ts.iter().map(|t| t.logit_difference.unwrap()).collect();
        rows.push(row(
            format!("{task}/{cond}/context-sweep/straightening-vs-logit-difference"),
            vec![
                format!("mean_band_straightening[task={task},condition={cond},per-length]"),
                format!("mean_logit_difference[task={task},condition={cond},per-length]"),
            ],
            pearson_r(&s, &d),
        ));
    }
    rows
}

fn accuracy_rows(answers: &[(String, usize, bool)]) -> Vec<AccuracyRow> {
    let mut by: BTreeMap<(&str, usize), (usize, usize)> = BTreeMap::new();
    for (task, k, ok) in answers {
        let e = by.entry((task, *k)).or_default();
        e.0 += 1;
        e.1 += *ok as usize;
    }
    by.into_iter()
        .map(|((task, k_shots), (n, n_correct))| AccuracyRow {
            task: task.to_string(),
            k_shots,
            n,
            n_correct,
            accuracy: n_correct as f64 / n as f64,
        })
        .collect()
}

fn node_maps(bundle: &TrajectoryBundle, seqs: &[&SequenceRecord], layer: usize) -> Vec<TaskNodeMap> {
    let mut by_task: BTreeMap<&str, (Vec<Vec<u32>>, Vec<&SequenceRecord>)> = BTreeMap::new();
    for seq in seqs {
        let Some(t) = grid_truth(seq) else { continue };
        let task = grid_task_name(&t);
        let Some(tokens) = t.node_token_ids else { continue };
        by_task.entry(task).or_insert_with(|| (tokens, Vec::new())).1.push(seq);
    }
    by_task
        .into_iter()
        .map(|(task, (tokens, members))| {
            let assignment = NodeAssignment::from_node_tokens(&tokens);
            match node_map_over::<f64>(bundle, members.iter().copied(), layer, &assignment) {
                Ok(map) => TaskNodeMap { task: task.into(), map: Some(map), error: None },
                Err(e) => TaskNodeMap { task: task.into(), map: None, error: Some(e.to_string()) },
            }
        })
        .collect()
}

/// Loads every tensor once; any failure is a validation error.
pub fn check_tensors(bundle: &TrajectoryBundle) -> Result<()> {
    bundle
        .sequences()
        .par_iter()
        .try_for_each(|s| bundle.load(&s.id).map(|_| ()))
        .map_err(PipelineError::from)
}

pub fn run_id(bundle: &TrajectoryBundle, cfg: &RunConfig) -> Result<String> {
    let path = bundle.root().join(MANIFEST_FILE);
    let manifest = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    let config = toml::to_string(&cfg.analyze).expect("config serializes");
    Ok(digest(&[&manifest, config.as_bytes()]))
}

/// Runs the full analysis in memory.
pub fn analyze(bundle: &TrajectoryBundle, cfg: &RunConfig) -> Result<AnalysisReport> {
    let a = &cfg.analyze;
    let n_layers = bundle.n_layers();
    if a.band[0] > a.band[1] || a.band[1] >= n_layers {
        return Err(PipelineError::Config(format!("band {:?} outside the {n_layers} stored layers", a.band)));
    }
    if a.baseline_layer >= n_layers {
        return Err(PipelineError::Config(format!("baseline layer {} outside {n_layers} layers", a.baseline_layer)));
    }
    if let Some(l) = a.node_map_layer.filter(|&l| l >= n_layers) {
        return Err(PipelineError::Config(format!("node-map layer {l} outside {n_layers} layers")));
    }
    check_tensors(bundle)?;
    let run_id = run_id(bundle, cfg)?;

    let mut seqs: Vec<&SequenceRecord> = bundle.sequences().iter().collect();
    seqs.sort_by(|x, y| x.id.cmp(&y.id));
    let outcomes: Vec<SequenceOutcome> = seqs.par_iter().map(|s| analyze_sequence(bundle, s, a)).collect();

    let mut windows = Vec::new();
    let mut exclusions = Vec::new();
    let mut sequences = Vec::new();
    let mut steps = Vec::new();
    let mut skipped = Vec::new();
    let mut answers = Vec::new();
    for o in outcomes {
        windows.extend(o.windows);
        exclusions.extend(o.exclusions);
        if let Some((b, s)) = o.behavior {
            sequences.push(b);
            steps.extend(s);
        }
        skipped.extend(o.skip);
        answers.extend(o.answer);
    }
    if !skipped.is_empty() {
        warn!("behavioral evaluation skipped for {} grid sequence(s), first: {}: {}", skipped.len(), skipped[0].sequence_id, skipped[0].reason);
    }
    if !exclusions.is_empty() {
        warn!("{} window(s) excluded from geometry", exclusions.len());
    }

    let (layer_curves, band_summary) = summarize(&windows, n_layers);
    let context_trend = context_trend(&windows, &sequences);
    let geometry = GeometrySection {
        run_id: run_id.clone(),
        band: a.band,
        baseline_layer: a.baseline_layer,
        n_layers,
        windows,
        layer_curves,
        band_summary,
        context_trend,
    };
    let behavior = BehaviorSection { run_id: run_id.clone(), sequences, steps, accuracy: accuracy_rows(&answers), skipped };
    let stats = StatsSection { run_id: run_id.clone(), results: stats_battery(&geometry, &behavior) };
    let nodemap = a
        .node_map_layer
        .map(|layer| NodeMapSection { run_id: run_id.clone(), layer, maps: node_maps(bundle, &seqs, layer) });

    let mut files = vec![GEOMETRY_FILE, BEHAVIOR_FILE, STATS_FILE, EXCLUSIONS_FILE];
    if nodemap.is_some() {
        files.push(NODEMAP_FILE);
    }
    Ok(AnalysisReport {
        index: AnalysisIndex {
            run_id: run_id.clone(),
            model_id: bundle.manifest.model_id.clone(),
            n_sequences: bundle.n_sequences(),
            n_layers,
            band: a.band,
            baseline_layer: a.baseline_layer,
            files: files.into_iter().map(String::from).collect(),
        },
        geometry,
        behavior,
        stats,
        exclusions: ExclusionSection { run_id, exclusions },
        nodemap,
    })
}

pub fn write_report(out: &Path, r: &AnalysisReport) -> Result<()> {
    write_file(&out.join(GEOMETRY_FILE), to_json(&r.geometry))?;
    write_file(&out.join(BEHAVIOR_FILE), to_json(&r.behavior))?;
    write_file(&out.join(STATS_FILE), to_json(&r.stats))?;
    write_file(&out.join(EXCLUSIONS_FILE), to_json(&r.exclusions))?;
    if let Some(n) = &r.nodemap {
        write_file(&out.join(NODEMAP_FILE), to_json(n))?;
    }
    write_file(&out.join(ANALYSIS_FILE), to_json(&r.index))
}

/// Reads the files written by [`write_report`].
pub fn read_report(dir: &Path) -> Result<AnalysisReport> {
    fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
    }
    let index: AnalysisIndex = load(&dir.join(ANALYSIS_FILE))?;
    let nodemap = if index.files.iter().any(|f| f == NODEMAP_FILE) { Some(load(&dir.join(NODEMAP_FILE))?) } else { None };
    Ok(AnalysisReport {
        geometry: load(&dir.join(GEOMETRY_FILE))?,
        behavior: load(&dir.join(BEHAVIOR_FILE))?,
        stats: load(&dir.join(STATS_FILE))?,
        exclusions: load(&dir.join(EXCLUSIONS_FILE))?,
        nodemap,
        index,
    })
}

pub fn run(bundle_dir: &Path, cfg: &RunConfig, out: &Path) -> Result<AnalysisReport> {
    let bundle = read_bundle(bundle_dir)?;
    let report = analyze(&bundle, cfg)?;
    write_report(out, &report)?;
    Ok(report)
}
