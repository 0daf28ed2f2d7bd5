use std::f64::consts::{FRAC_PI_2, SQRT_2};

use ctxgeom::geometry::{
    covariance_spectrum, effective_dimensionality, effective_dimensionality_via, elongation, local_curvatures,
    menger_curvatures, menger_sequence_curvature, sequence_curvature, MengerTriangle, SpectrumRoute, TrajectoryView,
};
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// `2 sin(θ/2)` with θ from the half-angle chord formula, computed without Heron.
fn closed_form_menger(p: &Array2<f64>) -> f64 {
    let u = unit(&(&p.row(1) - &p.row(0)).to_vec());
    let w = unit(&(&p.row(2) - &p.row(1)).to_vec());
    let diff: f64 = u.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let sum: f64 = u.iter().zip(&w).map(|(a, b)| (a + b) * (a + b)).sum::<f64>().sqrt();
    let theta = 2.0 * diff.atan2(sum);
    2.0 * (theta / 2.0).sin()
}

#[test]
fn menger_matches_closed_form_on_random_triplets() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut checked = 0;
    for &d in &[2usize, 3, 64, 4096] {
        for _ in 0..2500 {
            let p = gaussian(&mut rng, 3, d);
            let got = menger_curvatures(&TrajectoryView::new(p.clone())).unwrap()[0];
            assert!((got - closed_form_menger(&p)).abs() < 1e-9, "dim {d}");
            checked += 1;
        }
    }
    assert!(checked >= 10_000);
}

#[test]
fn high_dimensional_gaussian_turn_angles_concentrate_at_two_thirds_pi() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0.0;
    for _ in 0..1000 {
        let p = gaussian(&mut rng, 3, 4096);
        total += local_curvatures(&TrajectoryView::new(p)).unwrap()[0];
    }
    // Consecutive transitions share a point, so cos θ = -1/2 in expectation.
    let expected = (-0.5_f64).acos();
    assert!((total / 1000.0 - expected).abs() < 0.01, "{}", total / 1000.0);
}

#[test]
fn menger_fixed_shapes() {
    let collinear = TrajectoryView::new(array![[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]);
    assert_eq!(menger_curvatures(&collinear).unwrap(), vec![0.0]);
    let right = TrajectoryView::new(array![[0.0_f64, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 5.0, 0.0]]);
    assert!((menger_curvatures(&right).unwrap()[0] - SQRT_2).abs() < 1e-9);
    let reversal = TrajectoryView::new(array![[0.0_f64, 0.0], [1.0, 0.0], [0.5, 0.0]]);
    assert!((menger_curvatures(&reversal).unwrap()[0] - 2.0).abs() < 1e-9);
    assert_eq!(MengerTriangle::<f64>::from_sides(1.0, 1.0, 2.0).curvature(), 0.0);
}

/// Direct re-implementation from the definitions on a seeded 7 x 16 window.
#[test]
fn curvature_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(716);
    let p = gaussian(&mut rng, 7, 16);
    let mut angles = Vec::new();
    let mut menger = Vec::new();
    for k in 0..5 {
        let a: Vec<f64> = (0..16).map(|j| p[[k + 1, j]] - p[[k, j]]).collect();
        let b: Vec<f64> = (0..16).map(|j| p[[k + 2, j]] - p[[k + 1, j]]).collect();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let theta = (dot / (na * nb)).acos();
        angles.push(theta);
        // Circumradius of the unit-step triangle with sides 1, 1, c.
        let c = (2.0 + 2.0 * theta.cos()).sqrt();
        let s = (2.0 + c) / 2.0;
        let area = (s * (s - 1.0) * (s - 1.0) * (s - c)).sqrt();
        menger.push(4.0 * area / c);
    }
    let view = TrajectoryView::new(p);
    for (x, y) in local_curvatures(&view).unwrap().iter().zip(&angles) {
        assert!((x - y).abs() < 1e-9);
    }
    for (x, y) in menger_curvatures(&view).unwrap().iter().zip(&menger) {
        assert!((x - y).abs() < 1e-9);
    }
    let mean = angles.iter().sum::<f64>() / 5.0;
    assert!((sequence_curvature(&view).unwrap() - mean).abs() < 1e-12);
}

fn dense_participation_ratio(p: &Array2<f64>) -> f64 {
    let (n, d) = p.dim();
    let m = DMatrix::from_fn(n, d, |i, j| p[[i, j]]);
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let s: f64 = eig.iter().map(|l| l.max(0.0)).sum();
    let s2: f64 = eig.iter().map(|l| l.max(0.0).powi(2)).sum();
    s * s / s2
}

#[test]
fn participation_ratio_matches_dense_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(764);
    for _ in 0..100 {
        let p = gaussian(&mut rng, 7, 64);
        let oracle = dense_participation_ratio(&p);
        assert!((effective_dimensionality(p.view()).unwrap() - oracle).abs() < 1e-9);
        let cov = effective_dimensionality_via(p.view(), SpectrumRoute::Covariance).unwrap();
        assert!((cov - oracle).abs() < 1e-9);
    }
}

#[test]
fn participation_ratio_fixtures_are_exact() {
    let cross = array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]];
    assert_eq!(effective_dimensionality(cross.view()).unwrap(), 2.0);
    let line = Array2::from_shape_fn((9, 6), |(i, j)| (i as f64) * (j as f64 + 0.5) - 3.0);
    assert_eq!(effective_dimensionality(line.view()).unwrap(), 1.0);
    assert_eq!(elongation(line.view()).unwrap(), 1.0);
    let spectrum = covariance_spectrum(line.view(), SpectrumRoute::Auto).unwrap();
    assert!(spectrum[1..].iter().all(|&l| l == 0.0));
}

fn random_rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    g.qr().q()
}

fn transform(p: &Array2<f64>, q: &DMatrix<f64>, shift: &[f64], scale: f64) -> Array2<f64> {
    let (n, d) = p.dim();
    Array2::from_shape_fn((n, d), |(i, j)| {
        scale * (0..d).map(|k| q[(j, k)] * p[[i, k]]).sum::<f64>() + shift[j]
    })
}

struct Measures {
    curvature: f64,
    menger: f64,
    ed: f64,
    elongation: f64,
}

fn measures(p: &Array2<f64>) -> Measures {
    let view = TrajectoryView::new(p.clone());
    Measures {
        curvature: sequence_curvature(&view).unwrap(),
        menger: menger_sequence_curvature(&view).unwrap(),
        ed: effective_dimensionality(p.view()).unwrap(),
        elongation: elongation(p.view()).unwrap(),
    }
}

#[test]
fn measures_are_invariant_under_isometry_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let d = 16;
        let p = gaussian(&mut rng, 7, d);
        let q = random_rotation(&mut rng, d);
        let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-50.0..50.0)).collect();
        let scale = rng.random_range(0.1..10.0);
        let base = measures(&p);
        for moved in [transform(&p, &q, &shift, 1.0), transform(&p, &q, &shift, scale)] {
            let m = measures(&moved);
            assert!((m.curvature - base.curvature).abs() < 1e-9);
            assert!((m.menger - base.menger).abs() < 1e-9);
            assert!((m.ed - base.ed).abs() < 1e-9);
            assert!((m.elongation - base.elongation).abs() < 1e-9);
        }
    }
}

#[test]
fn zigzag_and_line_reference_values() {
    let zig = TrajectoryView::new(array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0], [2.0, 2.0]]);
    assert_eq!(sequence_curvature(&zig).unwrap(), FRAC_PI_2);
    let line = TrajectoryView::new(Array2::from_shape_fn((6, 4), |(i, j)| (i * (j + 1)) as f64));
    assert_eq!(sequence_curvature(&line).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn curvature_stays_in_range(data in proptest::collection::vec(-1e3f64..1e3, 5 * 3)) {
        let p = Array2::from_shape_vec((5, 3), data).unwrap();
        if let Ok(cs) = local_curvatures(&TrajectoryView::new(p.clone())) {
            prop_assert!(cs.iter().all(|&c| (0.0..=std::f64::consts::PI).contains(&c)));
            let ms = menger_curvatures(&TrajectoryView::new(p)).unwrap();
            for (c, m) in cs.iter().zip(&ms) {
                prop_assert!((m - 2.0 * (c / 2.0).sin()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn participation_ratio_is_bounded(data in proptest::collection::vec(-10f64..10.0, 6 * 4)) {
        let p = Array2::from_shape_vec((6, 4), data).unwrap();
        if let Ok(ed) = effective_dimensionality(p.view()) {
            prop_assert!(ed >= 1.0 - 1e-12 && ed <= 4.0 + 1e-12);
        }
    }
}
