//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::SQRT_2;
use std::path::Path;
use std::time::{Duration, Instant};

use ctxgeom::behavior::neighbor_eval;
use ctxgeom::geometry::{
    effective_dimensionality, elongation, menger_curvatures, menger_sequence_curvature, sequence_curvature,
    straightening, Measure, TrajectoryView,
};
use ctxgeom::gridworld::{
    build_lattice, make_instance, make_latent_instance, GridTaskSpec, LatentGridTaskSpec, WalkInstance, WordList,
    DEFAULT_EXCLUDED_PAIRS,
};
use ctxgeom::seed::derive_seed;
use ctxgeom::stats::{anova_oneway, pearson_r, ttest_ind, ttest_ind_with, TTestKind};
use ctxgeom::store::{write_bundle, Condition};
use ctxgeom_cli::analyze;
use ctxgeom_cli::config::{GridConfig, LatentConfig};
use ctxgeom_cli::report::{self, Format};
use ctxgeom_cli::synth::{self, SynthConfig};
use ctxgeom_cli::{generate, RunConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

fn turn_angle(p: &Array2<f64>) -> f64 {
    let d = p.ncols();
    let a: Vec<f64> = (0..d).map(|j| p[[1, j]] - p[[0, j]]).collect();
    let b: Vec<f64> = (0..d).map(|j| p[[2, j]] - p[[1, j]]).collect();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut diff, mut sum) = (0.0, 0.0);
    for j in 0..d {
        diff += (a[j] / na - b[j] / nb).powi(2);
        sum += (a[j] / na + b[j] / nb).powi(2);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

fn geometry_closed_form() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut worst = 0.0f64;
    let mut n = 0;
    for d in [2usize, 3, 64, 4096] {
        for _ in 0..2500 {
            let p = gaussian(&mut rng, 3, d);
            let expected = 2.0 * (turn_angle(&p) / 2.0).sin();
            let got = menger_curvatures(&TrajectoryView::new(p)).map_err(|e| e.to_string())?[0];
            worst = worst.max((got - expected).abs());
            n += 1;
        }
    }
    ensure!(worst < 1e-9, "max deviation {worst:e}");
    let k = |p: Array2<f64>| menger_curvatures(&TrajectoryView::new(p)).unwrap()[0];
    let collinear = k(array![[0.0, 0.0], [1.0, 2.0], [3.0, 6.0]]);
    let right = k(array![[0.0, 0.0], [3.0, 0.0], [3.0, 1.0]]);
    let reversal = k(array![[0.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 1.0, 0.0]]);
    ensure!(collinear.abs() < 1e-9, "collinear {collinear}");
    ensure!((right - SQRT_2).abs() < 1e-9, "right angle {right}");
    ensure!((reversal - 2.0).abs() < 1e-9, "reversal {reversal}");
    let t = started.elapsed();
    ensure!(t < Duration::from_secs(10), "took {t:?}");
    Ok(format!("{n} triplets, max |Δ| = {worst:.1e}, {:.2}s", t.as_secs_f64()))
}

fn rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal)).qr().q()
}

fn moved(p: &Array2<f64>, q: &DMatrix<f64>, shift: &[f64], scale: f64) -> Array2<f64> {
    let (n, d) = p.dim();
    Array2::from_shape_fn((n, d), |(i, j)| scale * (0..d).map(|k| q[(j, k)] * p[[i, k]]).sum::<f64>() + shift[j])
}

/// The four measures on layer 1, plus both straightenings against layer 0.
fn measures(layers: &[Array2<f64>]) -> Vec<f64> {
    let views: Vec<TrajectoryView<f64>> = layers.iter().map(|p| TrajectoryView::new(p.clone())).collect();
    let c: Vec<f64> = views.iter().map(|v| sequence_curvature(v).unwrap()).collect();
    let k: Vec<f64> = views.iter().map(|v| menger_sequence_curvature(v).unwrap()).collect();
    vec![
        c[1],
        k[1],
        effective_dimensionality(layers[1].view()).unwrap(),
        elongation(layers[1].view()).unwrap(),
        straightening(c[0], c[1]),
        straightening(k[0], k[1]),
    ]
}

fn isometry_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x150);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = 12;
        let layers = [gaussian(&mut rng, 7, d), gaussian(&mut rng, 7, d)];
        let base = measures(&layers);
        let q = rotation(&mut rng, d);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
        let scale = rng.random_range(0.2..5.0);
        for s in [1.0, scale] {
            let m = measures(&[moved(&layers[0], &q, &shift, s), moved(&layers[1], &q, &shift, s)]);
            for (a, b) in base.iter().zip(&m) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    ensure!(worst < 1e-9, "max deviation {worst:e}");
    Ok(format!("100 trajectories, max |Δ| = {worst:.1e}"))
}

fn dense_pr(p: &Array2<f64>) -> f64 {
    let (n, d) = p.dim();
    let m = DMatrix::from_fn(n, d, |i, j| p[[i, j]]);
    let mean = m.row_mean();
    let c = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let eig = SymmetricEigen::new(c.transpose() * &c).eigenvalues;
    let s: f64 = eig.iter().map(|l| l.max(0.0)).sum();
    s * s / eig.iter().map(|l| l.max(0.0).powi(2)).sum::<f64>()
}

fn participation_ratio_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7064);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = gaussian(&mut rng, 7, 64);
        worst = worst.max((effective_dimensionality(p.view()).unwrap() - dense_pr(&p)).abs());
    }
    ensure!(worst < 1e-9, "max deviation {worst:e}");
    let cross = array![[2.0, 0.0], [-2.0, 0.0], [0.0, 2.0], [0.0, -2.0]];
    let cross_pr = effective_dimensionality(cross.view()).unwrap();
    ensure!(cross_pr == 2.0, "cross gives {cross_pr}");
    let line = Array2::from_shape_fn((8, 5), |(i, j)| (i as f64 - 2.5) * (1.0 + j as f64));
    let line_pr = effective_dimensionality(line.view()).unwrap();
    ensure!(line_pr == 1.0, "collinear gives {line_pr}");
    Ok(format!("100 matrices 7x64, max |Δ| = {worst:.1e}; cross = 2, collinear = 1"))
}

fn occurrences(words: &[String], gram: &[String]) -> Vec<usize> {
    (0..=words.len() - gram.len()).filter(|&i| words[i..i + gram.len()] == *gram).collect()
}

fn audit(inst: &WalkInstance, len: usize) -> Result<(), String> {
    let t = inst.test_span.start;
    let test = &inst.words[t..t + 5];
    let mut allowed = vec![t];
    if let Some(r) = inst.repeat_span {
        ensure!(inst.words[r.start..r.end] == *test, "repeat differs from test walk");
        allowed.push(r.start);
    }
    allowed.sort_unstable();
    ensure!(occurrences(&inst.words, test) == allowed, "5-gram novelty");
    ensure!(occurrences(&inst.words, &test[..4]) == allowed, "leading 4-gram novelty");
    let shifted: Vec<usize> = allowed.iter().map(|a| a + 1).collect();
    ensure!(occurrences(&inst.words, &test[1..]) == shifted, "trailing 4-gram novelty");
    match inst.condition {
        Condition::Short => ensure!(t >= 5 && t + 5 <= 64, "short placement at {t}"),
        Condition::Long | Condition::ZeroShot => ensure!(t >= len - 64 && t + 5 <= len, "late placement at {t}"),
        Condition::LongRepeat => {
            let r = inst.repeat_span.ok_or("missing repeat")?;
            ensure!(t >= len - 64 && r.start >= 5 && r.end <= 64, "repeat placement");
        }
        c => return Err(format!("unexpected condition {c}")),
    }
    Ok(())
}

fn generator_audit() -> Outcome {
    let started = Instant::now();
    let len = 1024;
    let grid = GridTaskSpec::new(6, 6, &WordList::default_grid(), 11).unwrap();
    let latent = LatentGridTaskSpec::new(4, 4, &WordList::default_latent(), DEFAULT_EXCLUDED_PAIRS, 12).unwrap();
    let excluded: HashSet<(&str, &str)> = latent.excluded.iter().map(|p| (p.from.as_str(), p.to.as_str())).collect();
    let mut checked = 0;
    for cond in [Condition::Short, Condition::Long, Condition::LongRepeat] {
        let mut unique = HashSet::new();
        for i in 0..200 {
            let inst = make_instance(&grid, cond, len, derive_seed(11, cond.as_str(), i)).map_err(|e| e.to_string())?;
            audit(&inst, len).map_err(|e| format!("grid {cond} #{i}: {e}"))?;
            unique.insert(inst.words);
            checked += 1;
        }
        ensure!(unique.len() == 200, "grid {cond}: duplicate instances");
    }
    for cond in [Condition::Short, Condition::Long, Condition::ZeroShot] {
        for i in 0..200 {
            let inst =
                make_latent_instance(&latent, cond, len, derive_seed(12, cond.as_str(), i)).map_err(|e| e.to_string())?;
            audit(&inst, len).map_err(|e| format!("latent {cond} #{i}: {e}"))?;
            if cond == Condition::ZeroShot {
                let t = inst.test_span;
                let mut inside = 0;
                for k in 0..len - 1 {
                    if excluded.contains(&(inst.words[k].as_str(), inst.words[k + 1].as_str())) {
                        ensure!(k >= t.start && k + 1 < t.end, "zero-shot #{i}: withheld pair in context at {k}");
                        inside += 1;
                    }
                }
                ensure!(inside > 0, "zero-shot #{i} never uses a withheld pair");
            }
            checked += 1;
        }
    }
    let t = started.elapsed();
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    Ok(format!("{checked} instances, 0 violations, {:.2}s", t.as_secs_f64()))
}

fn planted_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n = 20;
    synth::write(&dir.path().join("bundle"), &SynthConfig { n_per_condition: n, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let r = analyze::run(&dir.path().join("bundle"), &cfg, &dir.path().join("analysis")).map_err(|e| e.to_string())?;
    ensure!(r.exclusions.exclusions.is_empty(), "unexpected exclusions");
    let band_width = (cfg.analyze.band[1] - cfg.analyze.band[0] + 1) as f64;
    let mut worst = 0.0f64;
    for w in &r.geometry.windows {
        let i: usize = w.sequence_id.rsplit('-').next().unwrap().parse().unwrap();
        let planted = synth::planted_straightening(w.group.condition, i, n);
        worst = worst.max((w.band_value(Measure::Straightening) - planted / band_width).abs());
    }
    ensure!(r.geometry.windows.len() == 2 * n, "{} windows", r.geometry.windows.len());
    ensure!(worst < 1e-6, "band straightening off by {worst:e}");
    let peak = &r.geometry.layer_curves.iter().find(|c| c.measure == Measure::Straightening).unwrap().mean;
    let argmax = (0..peak.len()).max_by(|&a, &b| peak[a].total_cmp(&peak[b])).unwrap();
    ensure!(argmax == 20, "straightening peaks at layer {argmax}");
    let row = r.stats.results.iter().find(|s| s.name.ends_with("short-vs-long")).ok_or("no short-vs-long row")?;
    let res = row.result.as_ref().ok_or_else(|| format!("t-test failed: {:?}", row.error))?;
    ensure!(res.p_value < 1e-6, "p = {}", res.p_value);
    Ok(format!("max |Δ| = {worst:.1e}, t = {:.2}, p = {:.1e}", res.statistic, res.p_value))
}

fn behavioral_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE4);
    let w = 6;
    let lattice = build_lattice(w, w).unwrap();
    let node_tokens: Vec<Vec<u32>> = (0..w * w).map(|n| vec![500 + 3 * n as u32]).collect();
    let mut tracked: Vec<u32> = node_tokens.iter().flatten().copied().rev().collect();
    tracked.push(9);
    let logits = Array2::from_shape_fn((1000, tracked.len()), |_| rng.random_range(-5.0f32..5.0));
    let steps: Vec<(usize, usize)> = (0..1000).map(|p| (p, rng.random_range(0..w * w))).collect();
    let e = neighbor_eval::<f64>(logits.view(), &tracked, &lattice, &node_tokens, &steps).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (s, &(pos, node)) in e.steps.iter().zip(&steps) {
        let (r, c) = ((node / w) as i64, (node % w) as i64);
        let (mut nb, mut other) = (Vec::new(), Vec::new());
        for m in 0..w * w {
            let dist = (m as i64 / w as i64 - r).abs() + (m as i64 % w as i64 - c).abs();
            let col = tracked.iter().position(|&t| t == 500 + 3 * m as u32).unwrap();
            let v = logits[[pos, col]] as f64;
            if dist == 1 {
                nb.push(v);
            } else if dist > 1 {
                other.push(v);
            }
        }
        let nbm = nb.iter().sum::<f64>() / nb.len() as f64;
        let om = other.iter().sum::<f64>() / other.len() as f64;
        worst = worst.max((s.neighbor_mean - nbm).abs()).max((s.non_neighbor_mean - om).abs());
        ensure!(s.success == (nbm > om), "success flag at step {pos}");
    }
    ensure!(worst < 1e-12, "max deviation {worst:e}");

    let mut planted = Array2::<f32>::zeros((1000, tracked.len()));
    for &(pos, node) in &steps {
        for &nb in lattice.neighbors(node) {
            let col = tracked.iter().position(|&t| t == node_tokens[nb][0]).unwrap();
            planted[[pos, col]] = 1.0;
        }
    }
    let p = neighbor_eval::<f64>(planted.view(), &tracked, &lattice, &node_tokens, &steps).map_err(|e| e.to_string())?;
    ensure!(p.success_rate() == 1.0, "planted success {}", p.success_rate());
    ensure!(p.steps.iter().all(|s| s.difference() == 1.0) && p.logit_difference == 1.0, "planted difference");
    Ok(format!("1000 steps, max |Δ| = {worst:.1e}; planted: success 100%, difference 1"))
}

fn statistics_oracle() -> Outcome {
    let close = |x: f64, y: f64, tol: f64| (x - y).abs() <= tol;
    let a = [2.1, 3.4, 1.9, 2.8, 3.3];
    let b = [3.9, 4.4, 3.1, 4.0, 3.6, 5.2, 4.1];
    let w = ttest_ind(&a, &b).unwrap();
    ensure!(close(w.statistic, -3.417_918_187_276_712_768, 1e-10), "welch t {}", w.statistic);
    ensure!(close(w.p_value, 0.008_267_502_931_401_663_061_8, 1e-10), "welch p {}", w.p_value);
    let s = ttest_ind_with(&a, &b, TTestKind::Student).unwrap();
    ensure!(close(s.statistic, -3.442_876_997_163_904_704_8, 1e-10), "student t {}", s.statistic);
    ensure!(close(s.p_value, 0.006_300_950_156_785_045_077_9, 1e-10), "student p {}", s.p_value);
    let groups: [&[f64]; 3] = [&[2.1, 3.4, 1.9, 2.8], &[3.9, 4.4, 3.1, 4.0, 3.6], &[1.2, 2.0, 1.7]];
    let f = anova_oneway(&groups).unwrap();
    ensure!(close(f.statistic, 15.656_133_250_311_334_106, 1e-10), "F {}", f.statistic);
    ensure!(close(f.p_value, 0.001_173_880_311_177_502_872, 1e-10), "F p {}", f.p_value);
    let x = [1.3, 2.7, 3.1, 4.8, 5.0, 6.2, 7.9];
    let y = [2.0, 2.9, 3.5, 4.1, 6.0, 5.8, 8.4];
    let r = pearson_r(&x, &y).unwrap();
    ensure!(close(r.statistic, 0.963_392_967_503_419_808_94, 1e-10), "r {}", r.statistic);
    ensure!(close(r.p_value, 0.000_482_830_410_958_422_003_81, 1e-10), "r p {}", r.p_value);
    let same = ttest_ind(&a, &a).unwrap();
    ensure!(same.statistic == 0.0 && same.p_value == 1.0, "identical samples t={} p={}", same.statistic, same.p_value);
    let e1 = [1.0, 2.0, 3.0, 4.0];
    let e2 = [2.5, 3.5, 4.5, 5.5];
    let t = ttest_ind_with(&e1, &e2, TTestKind::Student).unwrap();
    let f2 = anova_oneway(&[&e1[..], &e2[..]]).unwrap();
    ensure!(close(f2.statistic, t.statistic * t.statistic, 1e-9), "F = {} vs t² = {}", f2.statistic, t.statistic.powi(2));
    ensure!(close(f2.p_value, t.p_value, 1e-10), "F and t p-values differ");
    Ok("Welch, Student, ANOVA, Pearson fixtures; t = 0 / p = 1; F = t²".into())
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn pipeline_once(root: &Path) -> Result<(), String> {
    let mut cfg = RunConfig { seed: 2024, ..Default::default() };
    cfg.generate.grid = Some(GridConfig { instances_per_condition: 4, context_lengths: vec![64, 128], ..Default::default() });
    cfg.generate.latent = Some(LatentConfig { instances_per_condition: 3, context_lengths: vec![256], ..Default::default() });
    cfg.analyze.band = [2, 5];
    cfg.analyze.node_map_layer = Some(3);
    let e = |e: ctxgeom_cli::PipelineError| e.to_string();
    generate::run(&cfg, Path::new("."), &root.join("gen")).map_err(e)?;
    let suites: Vec<generate::PromptSuite> = ["grid", "latent"]
        .iter()
        .map(|n| serde_json::from_slice(&std::fs::read(root.join(format!("gen/suites/{n}.json"))).unwrap()).unwrap())
        .collect();
    let (manifest, tensors) = common::fake_extract(&suites, 8, 12, 5);
    write_bundle(&root.join("bundle"), &manifest, &tensors).map_err(|e| e.to_string())?;
    analyze::run(&root.join("bundle"), &cfg, &root.join("analysis")).map_err(e)?;
    for f in [Format::Csv, Format::Json, Format::Svg] {
        report::run(&root.join("analysis"), f, &root.join("report")).map_err(e)?;
    }
    Ok(())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    pipeline_once(a.path())?;
    pipeline_once(b.path())?;
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    ensure!(ta.keys().eq(tb.keys()), "different file sets");
    for (name, bytes) in &ta {
        ensure!(&tb[name] == bytes, "{name} differs between runs");
    }
    let tables = ta.keys().filter(|k| k.ends_with(".csv") || k.ends_with(".json")).count();
    ensure!(ta.contains_key("report/stats.csv") && ta.contains_key("analysis/geometry.json"), "missing outputs");
    Ok(format!("{} files ({tables} CSV/JSON) byte-identical across two runs", ta.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometry closed form", geometry_closed_form),
        ("isometry and scale invariance", isometry_invariance),
        ("participation-ratio oracle", participation_ratio_oracle),
        ("generator constraint audit", generator_audit),
        ("planted end-to-end", planted_end_to_end),
        ("behavioral oracle", behavioral_oracle),
        ("statistics oracle", statistics_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
