//! `report`: tables and plots from the files written by `analyze`.

use std::path::Path;

use ctxgeom::geometry::Measure;
use serde_json::{json, Value};

use crate::analyze::{read_report, AnalysisReport, GroupKey};
use crate::svg::{line_plot, scatter_plot, Series};
use crate::{write_file, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// One output table; the first column is always `run_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(name: &'static str, columns: &[&'static str]) -> Self {
        let mut cols = vec!["run_id"];
        cols.extend_from_slice(columns);
        Self { name, columns: cols, rows: Vec::new() }
    }

    fn push(&mut self, run_id: &str, mut cells: Vec<Value>) {
        cells.insert(0, json!(run_id));
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(cell)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(self.columns.iter().map(|c| c.to_string()).zip(r.iter().cloned()).collect()))
            .collect();
        json!({ "table": self.name, "columns": self.columns, "rows": rows })
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

const GROUP_COLUMNS: [&str; 6] = ["task", "condition", "window", "context_length", "k_shots", "shot"];

fn group_cells(g: &GroupKey) -> Vec<Value> {
    vec![json!(g.task), json!(g.condition), json!(g.window), json!(g.context_length), json!(g.k_shots), json!(g.shot)]
}

fn cols(prefix: &[&'static str], rest: &[&'static str]) -> Vec<&'static str> {
    prefix.iter().chain(rest).copied().collect()
}

const MEASURE_COLUMNS: [&str; 6] = [
    "curvature",
    "straightening",
    "menger_curvature",
    "menger_straightening",
    "effective_dimensionality",
    "elongation",
];

/// Every table, in a fixed order.
pub fn tables(r: &AnalysisReport) -> Vec<Table> {
    let id = r.index.run_id.as_str();
    let g = &r.geometry;

    let mut layers = Table::new("geometry_layers", &cols(&["sequence_id"], &cols(&GROUP_COLUMNS, &cols(&["layer"], &MEASURE_COLUMNS))));
    let mut band = Table::new(
        "geometry_band",
        &cols(&["sequence_id"], &cols(&GROUP_COLUMNS, &cols(&["start", "end", "band_lo", "band_hi"], &MEASURE_COLUMNS))),
    );
    for w in &g.windows {
        for l in 0..w.profile.n_layers() {
            let mut c = vec![json!(w.sequence_id)];
            c.extend(group_cells(&w.group));
            c.push(json!(l));
            c.extend(Measure::ALL.iter().map(|&m| json!(w.profile.series(m)[l])));
            layers.push(id, c);
        }
        let mut c = vec![json!(w.sequence_id)];
        c.extend(group_cells(&w.group));
        c.extend([json!(w.start), json!(w.end), json!(g.band[0]), json!(g.band[1])]);
        c.extend(Measure::ALL.iter().map(|&m| json!(w.band_value(m))));
        band.push(id, c);
    }

    let mut curves = Table::new("layer_curves", &cols(&GROUP_COLUMNS, &["measure", "layer", "n", "mean"]));
    for lc in &g.layer_curves {
        for (l, v) in lc.mean.iter().enumerate() {
            let mut c = group_cells(&lc.group);
            c.extend([json!(lc.measure.as_str()), json!(l), json!(lc.n), json!(v)]);
            curves.push(id, c);
        }
    }

    let mut summary = Table::new("band_summary", &cols(&GROUP_COLUMNS, &["measure", "band_lo", "band_hi", "n", "mean", "sd"]));
    for s in &g.band_summary {
        let mut c = group_cells(&s.group);
        c.extend([json!(s.measure.as_str()), json!(g.band[0]), json!(g.band[1]), json!(s.n), json!(s.mean), json!(s.sd)]);
        summary.push(id, c);
    }

    let mut trend = Table::new(
        "context_trend",
        &["task", "condition", "context_length", "n", "straightening", "n_behavior", "logit_difference"],
    );
    for t in &g.context_trend {
        trend.push(
            id,
            vec![
                json!(t.task),
                json!(t.condition),
                json!(t.context_length),
                json!(t.n),
                json!(t.straightening),
                json!(t.n_behavior),
                json!(t.logit_difference),
            ],
        );
    }

    let b = &r.behavior;
    let mut steps = Table::new(
        "logit_scatter",
        &["sequence_id", "condition", "position", "node", "neighbor_mean", "non_neighbor_mean", "difference", "success"],
    );
    for s in &b.steps {
        steps.push(
            id,
            vec![
                json!(s.sequence_id),
                json!(s.condition),
                json!(s.position),
                json!(s.node),
                json!(s.neighbor_mean),
                json!(s.non_neighbor_mean),
                json!(s.difference),
                json!(s.success),
            ],
        );
    }
    let mut seqs = Table::new(
        "behavior_sequences",
        &[
            "sequence_id",
            "task",
            "condition",
            "context_length",
            "n_steps",
            "success_rate",
            "mean_neighbor",
            "mean_non_neighbor",
            "logit_difference",
            "straightening",
        ],
    );
    for s in &b.sequences {
        seqs.push(
            id,
            vec![
                json!(s.sequence_id),
                json!(s.task),
                json!(s.condition),
                json!(s.context_length),
                json!(s.n_steps),
                json!(s.success_rate),
                json!(s.mean_neighbor),
                json!(s.mean_non_neighbor),
                json!(s.logit_difference),
                json!(s.straightening),
            ],
        );
    }
    let mut acc = Table::new("accuracy", &["task", "k_shots", "n", "n_correct", "accuracy"]);
    for a in &b.accuracy {
        acc.push(id, vec![json!(a.task), json!(a.k_shots), json!(a.n), json!(a.n_correct), json!(a.accuracy)]);
    }
    let mut skipped = Table::new("behavior_skipped", &["sequence_id", "reason"]);
    for s in &b.skipped {
        skipped.push(id, vec![json!(s.sequence_id), json!(s.reason)]);
    }

    let mut stats = Table::new(
        "stats",
        &["name", "test", "inputs", "sample_sizes", "statistic", "df", "df2", "p_value", "effect_size", "error"],
    );
    for s in &r.stats.results {
        let inputs = json!(s.inputs.join(";"));
        match &s.result {
            Some(x) => {
                let sizes: Vec<String> = x.sample_sizes.iter().map(usize::to_string).collect();
                stats.push(
                    id,
                    vec![
                        json!(s.name),
                        json!(x.test.as_str()),
                        inputs,
                        json!(sizes.join(";")),
                        json!(x.statistic),
                        json!(x.df),
                        json!(x.df2),
                        json!(x.p_value),
                        json!(x.effect_size),
                        Value::Null,
                    ],
                )
            }
            None => {
                let mut c = vec![json!(s.name), Value::Null, inputs];
                c.extend(std::iter::repeat_n(Value::Null, 6));
                c.push(json!(s.error));
                stats.push(id, c);
            }
        }
    }

    let mut excl = Table::new("exclusions", &["sequence_id", "window", "reason"]);
    for e in &r.exclusions.exclusions {
        excl.push(id, vec![json!(e.sequence_id), json!(e.window), json!(e.reason)]);
    }

    let mut nodes = Table::new(
        "node_map",
        &["task", "layer", "node", "occurrences", "pc1", "pc2", "explained_pc1", "explained_pc2", "missing"],
    );
    if let Some(n) = &r.nodemap {
        for m in &n.maps {
            let Some(map) = &m.map else { continue };
            for e in &map.nodes {
                nodes.push(
                    id,
                    vec![
                        json!(m.task),
                        json!(map.layer),
                        json!(e.node),
                        json!(e.occurrences),
                        json!(e.coords[0]),
                        json!(e.coords[1]),
                        json!(map.explained_variance[0]),
                        json!(map.explained_variance[1]),
                        json!(false),
                    ],
                );
            }
            for &node in &map.missing {
                nodes.push(
                    id,
                    vec![json!(m.task), json!(map.layer), json!(node), json!(0), Value::Null, Value::Null, Value::Null, Value::Null, json!(true)],
                );
            }
        }
    }

    vec![layers, band, curves, summary, trend, steps, seqs, acc, skipped, stats, excl, nodes]
}

fn group_label(g: &GroupKey) -> String {
    let mut s = format!("{} {}", g.task, g.condition);
    if let Some(l) = g.context_length {
        s += &format!(" L{l}");
    }
    if let Some(k) = g.k_shots {
        s += &format!(" k{k}");
    }
    if g.window != crate::analyze::WINDOW_TEST {
        s += &format!(" {}", g.window);
    }
    if let Some(shot) = g.shot {
        s += &format!("@{shot}");
    }
    s
}

/// One SVG per figure kind.
pub fn plots(r: &AnalysisReport) -> Vec<(&'static str, String)> {
    let g = &r.geometry;
    let curves: Vec<Series> = g
        .layer_curves
        .iter()
        .filter(|c| c.measure == Measure::Straightening && c.group.shot.is_none())
        .map(|c| Series {
            label: format!("{} (n={})", group_label(&c.group), c.n),
            points: c.mean.iter().enumerate().map(|(l, &v)| (l as f64, v)).collect(),
        })
        .collect();
    let layer_plot = line_plot("Straightening per layer", "layer", "straightening (rad)", &curves);

    let mut by_cond: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for s in &r.behavior.steps {
        by_cond.entry(s.condition.to_string()).or_default().push((s.non_neighbor_mean, s.neighbor_mean));
    }
    let scatter: Vec<Series> = by_cond.into_iter().map(|(label, points)| Series { label, points }).collect();
    let logit_plot = scatter_plot("Neighbor vs non-neighbor logits", "non-neighbor mean logit", "neighbor mean logit", &scatter, &[]);

    let mut trends: std::collections::BTreeMap<String, Vec<(f64, f64)>> = Default::default();
    for t in &g.context_trend {
        trends.entry(format!("{} {}", t.task, t.condition)).or_default().push((t.context_length as f64, t.straightening));
    }
    let trend_series: Vec<Series> = trends.into_iter().map(|(label, points)| Series { label, points }).collect();
    let trend_plot = line_plot("Band straightening vs context length", "context length (tokens)", "straightening (rad)", &trend_series);

    let mut node_series = Vec::new();
    let mut node_labels = Vec::new();
    if let Some(n) = &r.nodemap {
        for m in &n.maps {
            if let Some(map) = &m.map {
                node_series.push(Series {
                    label: format!("{} layer {}", m.task, map.layer),
                    points: map.nodes.iter().map(|e| (e.coords[0], e.coords[1])).collect(),
                });
                node_labels.push(map.nodes.iter().map(|e| e.node.to_string()).collect());
            }
        }
    }
    let node_plot = scatter_plot("Node means on the top two principal components", "PC1", "PC2", &node_series, &node_labels);

    vec![
        ("layer_curves.svg", layer_plot),
        ("logit_scatter.svg", logit_plot),
        ("context_trend.svg", trend_plot),
        ("node_map.svg", node_plot),
    ]
}

/// Writes every table or plot of `report` under `out`; returns the file names.
pub fn render(report: &AnalysisReport, format: Format, out: &Path) -> Result<Vec<String>> {
    let mut written = Vec::new();
    match format {
        Format::Csv => {
            for t in tables(report) {
                let name = format!("{}.csv", t.name);
                write_file(&out.join(&name), t.to_csv())?;
                written.push(name);
            }
        }
        Format::Json => {
            for t in tables(report) {
                let name = format!("{}.json", t.name);
                write_file(&out.join(&name), crate::to_json(&t.to_json()))?;
                written.push(name);
            }
        }
        Format::Svg => {
            for (name, svg) in plots(report) {
                write_file(&out.join(name), svg)?;
                written.push(name.to_string());
            }
        }
    }
    Ok(written)
}

pub fn run(analysis_dir: &Path, format: Format, out: &Path) -> Result<Vec<String>> {
    render(&read_report(analysis_dir)?, format, out)
}
