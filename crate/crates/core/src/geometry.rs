//! Trajectory geometry: curvature, straightening, Menger curvature,
//! participation-ratio dimensionality, elongation and PCA node maps.
//!
//! A trajectory is the ordered list of per-token activation vectors at one
//! layer. Transitions are the differences between consecutive points.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Range, RangeInclusive};

use ndarray::{s, Array1, Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{self, center_rows, gram, norm, scatter, symmetric_eigen};
use crate::scalar::Scalar;
use crate::store::{SequenceRecord, SpanLabel, StoreError, TrajectoryBundle};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("zero-length transition between tokens {index} and {}", index + 1)]
    ZeroTransition { index: usize },
    #[error("points have zero total variance")]
    ZeroVariance,
    #[error("layer band [{lo}, {hi}] is empty or outside the {n_layers} stored layers")]
    InvalidBand { lo: usize, hi: usize, n_layers: usize },
    #[error("layer {layer} not stored (bundle has {n_layers})")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("node map needs at least two observed nodes, found {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Points of one trajectory and their transitions.
#[derive(Debug, Clone)]
pub struct TrajectoryView<T> {
    points: Array2<T>,
    transitions: Array2<T>,
}

impl<T: Scalar> TrajectoryView<T> {
    /// `points` is `n x d`, one row per token.
    pub fn new(points: Array2<T>) -> Self {
        let n = points.nrows();
        let transitions = if n < 2 {
            Array2::zeros((0, points.ncols()))
        } else {
            &points.slice(s![1.., ..]) - &points.slice(s![..n - 1, ..])
        };
        Self { points, transitions }
    }

    pub fn from_f32(points: ArrayView2<'_, f32>) -> Self {
        Self::new(points.mapv(T::from_f32_lossy))
    }

    pub fn points(&self) -> ArrayView2<'_, T> {
        self.points.view()
    }

    pub fn transitions(&self) -> ArrayView2<'_, T> {
        self.transitions.view()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn checked_norms(&self) -> Result<Vec<T>> {
        if self.len() < 3 {
            return Err(GeometryError::TooFewPoints { needed: 3, found: self.len() });
        }
        self.transitions
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(index, v)| {
                let n = norm(v);
                if n > T::zero() {
                    Ok(n)
                } else {
                    Err(GeometryError::ZeroTransition { index })
                }
            })
            .collect()
    }
}

/// Angle in radians between each pair of consecutive transitions (`n - 2` values).
///
/// Evaluated as `2 atan2(|u - w|, |u + w|)` on the unit transitions, which is
/// `arccos(u . w)` without its loss of precision near 0 and pi.
pub fn local_curvatures<T: Scalar>(view: &TrajectoryView<T>) -> Result<Vec<T>> {
    let units = unit_transitions(view)?;
    Ok(units
        .windows(2)
        .map(|pair| {
            let diff = &pair[0] - &pair[1];
            let chord = &pair[0] + &pair[1];
            T::c(2.0) * norm(diff.view()).atan2(norm(chord.view()))
        })
        .collect())
}

fn unit_transitions<T: Scalar>(view: &TrajectoryView<T>) -> Result<Vec<Array1<T>>> {
    let norms = view.checked_norms()?;
    Ok(view
        .transitions()
        .axis_iter(Axis(0))
        .zip(&norms)
        .map(|(row, &n)| row.mapv(|x| x / n))
        .collect())
}

/// Mean local curvature over the trajectory.
pub fn sequence_curvature<T: Scalar>(view: &TrajectoryView<T>) -> Result<T> {
    Ok(numeric::mean(&local_curvatures(view)?))
}

/// Curvature decrease relative to the baseline layer; positive means straighter.
pub fn straightening<T: Scalar>(baseline: T, layer: T) -> T {
    baseline - layer
}

/// Triangle through three consecutive points of the unit-step path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MengerTriangle<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub semi_perimeter: T,
    pub area: T,
}

impl<T: Scalar> MengerTriangle<T> {
    pub fn from_sides(a: T, b: T, c: T) -> Self {
        let semi_perimeter = (a + b + c) / T::c(2.0);
        Self { a, b, c, semi_perimeter, area: heron_area(a, b, c) }
    }

    /// Reciprocal circumradius `4K / (abc)`.
    ///
    /// Collinear triplets with distinct points give exactly zero. A triplet
    /// whose endpoints coincide (full reversal on the unit-step path) gives the
    /// limit `2 / a` of the isosceles triangle as its base shrinks to zero.
    pub fn curvature(&self) -> T {
        if self.area == T::zero() {
            let shortest = self.a.min(self.b).min(self.c);
            let longest = self.a.max(self.b).max(self.c);
            if shortest == T::zero() && longest > T::zero() {
                return T::c(2.0) / longest;
            }
            return T::zero();
        }
        T::c(4.0) * self.area / (self.a * self.b * self.c)
    }
}

/// Heron's formula in the cancellation-free ordering `a >= b >= c`.
pub fn heron_area<T: Scalar>(a: T, b: T, c: T) -> T {
    let mut sides = [a, b, c];
    sides.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    let [a, b, c] = sides;
    let prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    if prod <= T::zero() {
        T::zero()
    } else {
        prod.sqrt() / T::c(4.0)
    }
}

/// Menger curvature of each consecutive triplet on the unit-step path.
///
/// The path starts at the origin and advances by each normalized transition,
/// so the two short sides of every triangle have unit length.
pub fn menger_curvatures<T: Scalar>(view: &TrajectoryView<T>) -> Result<Vec<T>> {
    let units = unit_transitions(view)?;
    Ok(units
        .windows(2)
        .map(|pair| {
            let a = norm(pair[0].view());
            let b = norm(pair[1].view());
            let chord = &pair[0] + &pair[1];
            let c = norm(chord.view());
            MengerTriangle::from_sides(a, b, c).curvature()
        })
        .collect())
}

pub fn menger_sequence_curvature<T: Scalar>(view: &TrajectoryView<T>) -> Result<T> {
    Ok(numeric::mean(&menger_curvatures(view)?))
}

/// How to obtain the covariance spectrum of an `n x d` point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumRoute {
    /// Gram matrix when `n < d`, covariance matrix otherwise.
    Auto,
    /// `n x n` Gram matrix of the centered rows.
    Gram,
    /// `d x d` covariance matrix.
    Covariance,
}

/// Covariance eigenvalues, descending. Values at or below the rounding floor
/// `size * eps * λ₁` are reported as exactly zero.
pub fn covariance_spectrum<T: Scalar>(points: ArrayView2<'_, T>, route: SpectrumRoute) -> Result<Vec<T>> {
    let (n, d) = points.dim();
    if n < 2 {
        return Err(GeometryError::TooFewPoints { needed: 2, found: n });
    }
    let centered = center_rows(points);
    let scale = points.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let total = numeric::sum(centered.iter().map(|&x| x * x));
    let tol = T::c(16.0) * T::epsilon() * scale;
    if scale == T::zero() || total <= tol * tol * T::from_usize_lossy(n * d) {
        return Err(GeometryError::ZeroVariance);
    }
    let use_gram = match route {
        SpectrumRoute::Auto => n < d,
        SpectrumRoute::Gram => true,
        SpectrumRoute::Covariance => false,
    };
    let m = if use_gram { gram(centered.view()) } else { scatter(centered.view()) };
    let denom = T::from_usize_lossy(n - 1);
    let values = symmetric_eigen(m.view()).values;
    let floor = T::from_usize_lossy(m.nrows()) * T::epsilon() * values[0].abs();
    Ok(values
        .into_iter()
        .map(|l| if l <= floor { T::zero() } else { l / denom })
        .collect())
}

/// `(Σλ)² / Σλ²`.
pub fn participation_ratio<T: Scalar>(spectrum: &[T]) -> T {
    let s = numeric::sum(spectrum.iter().copied());
    let s2 = numeric::sum(spectrum.iter().map(|&l| l * l));
    s * s / s2
}

pub fn effective_dimensionality<T: Scalar>(points: ArrayView2<'_, T>) -> Result<T> {
    effective_dimensionality_via(points, SpectrumRoute::Auto)
}

pub fn effective_dimensionality_via<T: Scalar>(points: ArrayView2<'_, T>, route: SpectrumRoute) -> Result<T> {
    Ok(participation_ratio(&covariance_spectrum(points, route)?))
}

/// `1 - λ₂/λ₁` from the two leading covariance eigenvalues.
pub fn elongation<T: Scalar>(points: ArrayView2<'_, T>) -> Result<T> {
    let n = points.nrows();
    if n < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, found: n });
    }
    let spectrum = covariance_spectrum(points, SpectrumRoute::Auto)?;
    Ok(elongation_from_spectrum(&spectrum))
}

pub fn elongation_from_spectrum<T: Scalar>(spectrum: &[T]) -> T {
    let l1 = spectrum[0];
    let l2 = spectrum.get(1).copied().unwrap_or(T::zero());
    T::one() - l2 / l1
}

/// Which per-layer series of a [`CurvatureProfile`] to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Curvature,
    Straightening,
    MengerCurvature,
    MengerStraightening,
    EffectiveDimensionality,
    Elongation,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::Curvature,
        Measure::Straightening,
        Measure::MengerCurvature,
        Measure::MengerStraightening,
        Measure::EffectiveDimensionality,
        Measure::Elongation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Curvature => "curvature",
            Measure::Straightening => "straightening",
            Measure::MengerCurvature => "menger_curvature",
            Measure::MengerStraightening => "menger_straightening",
            Measure::EffectiveDimensionality => "effective_dimensionality",
            Measure::Elongation => "elongation",
        }
    }
}

/// All per-layer measures for one trajectory window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile<T> {
    pub baseline_layer: usize,
    /// Mean local curvature per layer, radians.
    pub curvature: Vec<T>,
    pub straightening: Vec<T>,
    /// Mean Menger curvature per layer, in `[0, 2]`.
    pub menger_curvature: Vec<T>,
    pub menger_straightening: Vec<T>,
    pub effective_dimensionality: Vec<T>,
    pub elongation: Vec<T>,
}

impl<T: Scalar> CurvatureProfile<T> {
    pub fn n_layers(&self) -> usize {
        self.curvature.len()
    }

    pub fn series(&self, measure: Measure) -> &[T] {
        match measure {
            Measure::Curvature => &self.curvature,
            Measure::Straightening => &self.straightening,
            Measure::MengerCurvature => &self.menger_curvature,
            Measure::MengerStraightening => &self.menger_straightening,
            Measure::EffectiveDimensionality => &self.effective_dimensionality,
            Measure::Elongation => &self.elongation,
        }
    }

    /// Computes every measure at every layer of a `(layers, tokens, dim)` window.
    pub fn from_window(window: ArrayView3<'_, f32>, baseline_layer: usize) -> Result<Self> {
        let n_layers = window.shape()[0];
        if baseline_layer >= n_layers {
            return Err(GeometryError::LayerOutOfRange { layer: baseline_layer, n_layers });
        }
        let n_tokens = window.shape()[1];
        if n_tokens < 3 {
            return Err(GeometryError::TooFewPoints { needed: 3, found: n_tokens });
        }
        let mut curvature = Vec::with_capacity(n_layers);
        let mut menger_curvature = Vec::with_capacity(n_layers);
        let mut effective_dimensionality = Vec::with_capacity(n_layers);
        let mut elongation = Vec::with_capacity(n_layers);
        for layer in window.axis_iter(Axis(0)) {
            let view = TrajectoryView::<T>::from_f32(layer);
            curvature.push(sequence_curvature(&view)?);
            menger_curvature.push(menger_sequence_curvature(&view)?);
            let spectrum = covariance_spectrum(view.points(), SpectrumRoute::Auto)?;
            effective_dimensionality.push(participation_ratio(&spectrum));
            elongation.push(elongation_from_spectrum(&spectrum));
        }
        let c0 = curvature[baseline_layer];
        let k0 = menger_curvature[baseline_layer];
        Ok(Self {
            baseline_layer,
            straightening: curvature.iter().map(|&c| straightening(c0, c)).collect(),
            menger_straightening: menger_curvature.iter().map(|&k| straightening(k0, k)).collect(),
            curvature,
            menger_curvature,
            effective_dimensionality,
            elongation,
        })
    }
}

/// Profile of tokens `window` of sequence `id`, referenced to layer 0.
pub fn layer_profile<T: Scalar>(bundle: &TrajectoryBundle, id: &str, window: Range<usize>) -> Result<CurvatureProfile<T>> {
    if window.len() < 3 {
        return Err(GeometryError::TooFewPoints { needed: 3, found: window.len() });
    }
    let slab = bundle.slice_window(id, window)?;
    CurvatureProfile::from_window(slab.view(), 0)
}

/// Mean of `measure` over layers `band` (inclusive), one value per profile.
pub fn band_aggregate<T: Scalar>(
    profiles: &[CurvatureProfile<T>],
    band: RangeInclusive<usize>,
    measure: Measure,
) -> Result<Vec<T>> {
    let (lo, hi) = (*band.start(), *band.end());
    profiles
        .iter()
        .map(|p| {
            let n_layers = p.n_layers();
            if lo > hi || hi >= n_layers {
                return Err(GeometryError::InvalidBand { lo, hi, n_layers });
            }
            Ok(numeric::mean(&p.series(measure)[lo..=hi]))
        })
        .collect()
}

/// Token id to grid node lookup used to pool test-window activations.
#[derive(Debug, Clone, Default)]
pub struct NodeAssignment {
    pub n_nodes: usize,
    node_of_token: HashMap<u32, usize>,
}

impl NodeAssignment {
    /// `tokens[node]` lists every token emitted by that node.
    pub fn from_node_tokens(tokens: &[Vec<u32>]) -> Self {
        let node_of_token = tokens
            .iter()
            .enumerate()
            .flat_map(|(node, ids)| ids.iter().map(move |&t| (t, node)))
            .collect();
        Self { n_nodes: tokens.len(), node_of_token }
    }

    pub fn node(&self, token: u32) -> Option<usize> {
        self.node_of_token.get(&token).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMapEntry<T> {
    pub node: usize,
    pub occurrences: usize,
    pub mean: Vec<T>,
    /// Coordinates on the first two principal components of the node means.
    pub coords: [T; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMap<T> {
    pub layer: usize,
    pub nodes: Vec<NodeMapEntry<T>>,
    /// Nodes with no test-window occurrence; not imputed.
    pub missing: Vec<usize>,
    /// Variance fractions of components 1 and 2.
    pub explained_variance: [T; 2],
}

/// PCA map of per-node mean activations over all test-window tokens at `layer`.
pub fn node_map<T: Scalar>(bundle: &TrajectoryBundle, layer: usize, assignment: &NodeAssignment) -> Result<NodeMap<T>> {
    node_map_over(bundle, bundle.sequences(), layer, assignment)
}

/// [`node_map`] restricted to `sequences`.
pub fn node_map_over<'a, T: Scalar>(
    bundle: &TrajectoryBundle,
    sequences: impl IntoIterator<Item = &'a SequenceRecord>,
    layer: usize,
    assignment: &NodeAssignment,
) -> Result<NodeMap<T>> {
    let n_layers = bundle.n_layers();
    if layer >= n_layers {
        return Err(GeometryError::LayerOutOfRange { layer, n_layers });
    }
    let dim = bundle.hidden_dim();
    let mut sums: BTreeMap<usize, (usize, Vec<numeric::CompensatedSum<T>>)> = BTreeMap::new();
    for seq in sequences {
        for span in seq.spans_labeled(SpanLabel::TestWindow) {
            let slab = bundle.slice_window(&seq.id, span.range())?;
            let rows = slab.index_axis(Axis(0), layer);
            for (offset, row) in rows.axis_iter(Axis(0)).enumerate() {
                let Some(node) = assignment.node(seq.token_ids[span.start + offset]) else {
                    continue;
                };
                let entry = sums
                    .entry(node)
                    .or_insert_with(|| (0, vec![numeric::CompensatedSum::new(); dim]));
                entry.0 += 1;
                for (acc, &x) in entry.1.iter_mut().zip(row.iter()) {
                    acc.add(T::from_f32_lossy(x));
                }
            }
        }
    }
    node_map_from_means(
        layer,
        assignment.n_nodes,
        sums.into_iter()
            .map(|(node, (count, acc))| {
                let c = T::from_usize_lossy(count);
                (node, count, acc.iter().map(|a| a.value() / c).collect())
            })
            .collect(),
    )
}

/// Projects precomputed node means `(node, occurrences, mean)` onto their top two PCs.
pub fn node_map_from_means<T: Scalar>(layer: usize, n_nodes: usize, means: Vec<(usize, usize, Vec<T>)>) -> Result<NodeMap<T>> {
    if means.len() < 2 {
        return Err(GeometryError::TooFewNodes(means.len()));
    }
    let dim = means[0].2.len();
    let mut matrix = Array2::zeros((means.len(), dim));
    for (i, (_, _, m)) in means.iter().enumerate() {
        matrix.row_mut(i).assign(&Array1::from(m.clone()));
    }
    let centered = center_rows(matrix.view());
    let scale = matrix.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let total = numeric::sum(centered.iter().map(|&x| x * x));
    let tol = T::c(16.0) * T::epsilon() * scale;
    if scale == T::zero() || total <= tol * tol * T::from_usize_lossy(centered.len()) {
        return Err(GeometryError::ZeroVariance);
    }
    let eig = symmetric_eigen(gram(centered.view()).view());
    let values: Vec<T> = eig.values.iter().map(|&v| v.max(T::zero())).collect();
    let total_var = numeric::sum(values.iter().copied());
    let mut components = [Array1::zeros(means.len()), Array1::zeros(means.len())];
    for (k, comp) in components.iter_mut().enumerate() {
        let mut u = eig.vectors.column(k).to_owned();
        // Sign convention: the largest-magnitude loading is positive.
        let pivot = u.iter().fold(T::zero(), |best, &x| if x.abs() > best.abs() { x } else { best });
        if pivot < T::zero() {
            u.mapv_inplace(|x| -x);
        }
        *comp = u * values[k].sqrt();
    }
    let present: Vec<usize> = means.iter().map(|(n, _, _)| *n).collect();
    Ok(NodeMap {
        layer,
        nodes: means
            .into_iter()
            .enumerate()
            .map(|(i, (node, occurrences, mean))| NodeMapEntry {
                node,
                occurrences,
                mean,
                coords: [components[0][i], components[1][i]],
            })
            .collect(),
        missing: (0..n_nodes).filter(|n| !present.contains(n)).collect(),
        explained_variance: [values[0] / total_var, values[1] / total_var],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    fn view(points: Array2<f64>) -> TrajectoryView<f64> {
        TrajectoryView::new(points)
    }

    #[test]
    fn collinear_has_zero_curvature() {
        let v = view(array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(local_curvatures(&v).unwrap(), vec![0.0]);
        assert_eq!(menger_sequence_curvature(&v).unwrap(), 0.0);
    }

    #[test]
    fn right_angle_zigzag() {
        let v = view(array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0]]);
        let c = local_curvatures(&v).unwrap();
        assert!((c[0] - FRAC_PI_2).abs() < 1e-15 && (c[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((sequence_curvature(&v).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!((menger_sequence_curvature(&v).unwrap() - SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn straight_line_of_ten_points() {
        let pts = Array2::from_shape_fn((10, 3), |(i, j)| (i * (j + 1)) as f64);
        assert_eq!(sequence_curvature(&view(pts)).unwrap(), 0.0);
    }

    #[test]
    fn reversal_is_two() {
        let v = view(array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]);
        assert!((local_curvatures(&v).unwrap()[0] - PI).abs() < 1e-15);
        assert!((menger_sequence_curvature(&v).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn heron_degenerate_limits() {
        let t = MengerTriangle::from_sides(1.0_f64, 1.0, 2.0);
        assert_eq!(t.area, 0.0);
        assert_eq!(t.curvature(), 0.0);
        assert_eq!(t.semi_perimeter, 2.0);
        let t = MengerTriangle::from_sides(1.0_f64, 1.0, 0.0);
        assert_eq!(t.curvature(), 2.0);
        let t = MengerTriangle::from_sides(1.0_f64, 1.0, 1e-12);
        assert!((t.curvature() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_transition_names_token() {
        let v = view(array![[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert!(matches!(local_curvatures(&v), Err(GeometryError::ZeroTransition { index: 1 })));
        assert!(matches!(menger_curvatures(&v), Err(GeometryError::ZeroTransition { index: 1 })));
    }

    #[test]
    fn too_few_points() {
        let v = view(array![[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(local_curvatures(&v), Err(GeometryError::TooFewPoints { .. })));
    }

    #[test]
    fn arccos_clamping() {
        let a = array![1.0_f64, 1e-8];
        let b = array![1.0_f64, 1e-8 * (1.0 + 1e-15)];
        let pts = ndarray::stack(Axis(0), &[array![0.0, 0.0].view(), a.view(), (&a + &b).view()]).unwrap();
        let c = local_curvatures(&view(pts)).unwrap();
        assert!(c[0].is_finite() && c[0] >= 0.0);
    }

    #[test]
    fn straightening_arithmetic() {
        assert_eq!(straightening(FRAC_PI_2, PI / 4.0), PI / 4.0);
        assert_eq!(straightening(1.3_f64, 1.3), 0.0);
    }

    #[test]
    fn participation_ratio_fixtures() {
        let cross = array![[1.0_f64, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        assert!((effective_dimensionality(cross.view()).unwrap() - 2.0).abs() < 1e-12);
        assert!(elongation(cross.view()).unwrap().abs() < 1e-12);
        let line = Array2::from_shape_fn((10, 5), |(i, j)| i as f64 * (j as f64 - 2.0) + 1.0);
        assert!((effective_dimensionality(line.view()).unwrap() - 1.0).abs() < 1e-12);
        assert!((elongation(line.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_have_no_variance() {
        let same = Array2::from_elem((5, 3), 0.1_f64);
        assert!(matches!(effective_dimensionality(same.view()), Err(GeometryError::ZeroVariance)));
        assert!(matches!(elongation(same.view()), Err(GeometryError::ZeroVariance)));
    }

    #[test]
    fn band_aggregate_cases() {
        let p = CurvatureProfile::<f64> {
            baseline_layer: 0,
            curvature: (0..46).map(|l| l as f64).collect(),
            straightening: (0..46).map(|l| -(l as f64)).collect(),
            menger_curvature: vec![0.5; 46],
            menger_straightening: vec![0.0; 46],
            effective_dimensionality: vec![2.0; 46],
            elongation: vec![0.3; 46],
        };
        let mid = band_aggregate(std::slice::from_ref(&p), 15..=25, Measure::Curvature).unwrap();
        assert_eq!(mid, vec![20.0]);
        assert_eq!(band_aggregate(std::slice::from_ref(&p), 7..=7, Measure::Curvature).unwrap(), vec![7.0]);
        assert_eq!(band_aggregate(std::slice::from_ref(&p), 0..=45, Measure::Elongation).unwrap(), vec![0.3]);
        assert!(band_aggregate(std::slice::from_ref(&p), 30..=46, Measure::Curvature).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = band_aggregate(std::slice::from_ref(&p), 5..=4, Measure::Curvature);
        assert!(matches!(empty, Err(GeometryError::InvalidBand { .. })));
    }

    #[test]
    fn profile_from_planted_window() {
        // layer 0: right-angle zigzag; layer 2: collinear.
        let mut w = ndarray::Array3::<f32>::zeros((3, 4, 2));
        let zig = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0]];
        for t in 0..4 {
            for d in 0..2 {
                w[[0, t, d]] = zig[t][d];
                w[[1, t, d]] = zig[t][d];
                w[[2, t, d]] = if d == 0 { t as f32 } else { 0.0 };
            }
        }
        // collinear layer has zero variance along the second axis; give it a tilt.
        for t in 0..4 {
            w[[2, t, 1]] = 2.0 * t as f32;
        }
        let p = CurvatureProfile::<f64>::from_window(w.view(), 0).unwrap();
        assert_eq!(p.straightening[0], 0.0);
        assert!((p.straightening[2] - FRAC_PI_2).abs() < 1e-12);
        assert!((p.menger_straightening[2] - SQRT_2).abs() < 1e-12);
        assert!((p.elongation[2] - 1.0).abs() < 1e-12);
        assert!(CurvatureProfile::<f64>::from_window(w.slice(s![.., ..2, ..]), 0).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let v = TrajectoryView::<f32>::new(array![[0.0_f32, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert!((sequence_curvature(&v).unwrap() - std::f32::consts::FRAC_PI_2).abs() < 1e-6);
    }
}
