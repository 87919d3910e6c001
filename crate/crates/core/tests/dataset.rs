use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use proptest::prelude::*;
use psm::dataset::*;
use psm::signal::ImuSample;

fn recording(id: &str, points: &[(f64, f64, f64)]) -> Recording {
    Recording {
        id: id.into(),
        samples: points
            .iter()
            .enumerate()
            .map(|(k, &(x, y, w))| ImuSample {
                t: k as f64 * 0.01,
                theta_m: Vector3::new(x, y, 0.0),
                theta_dot_m: Vector3::new(w, 0.0, 0.0),
                accel: Vector3::new(0.0, 0.0, 9.8),
            })
            .collect(),
    }
}

fn raw() -> BuildOptions {
    BuildOptions { smooth: false }
}

#[test]
fn gravity_angle_matches_arccos_on_grid() {
    for i in 0..100 {
        for j in 0..100 {
            let x = -1.2 + 2.4 * (i as f64 + 0.5) / 100.0;
            let y = -1.2 + 2.4 * (j as f64 + 0.5) / 100.0;
            let expect = (x.cos() * y.cos()).acos();
            assert!((gravity_angle(x, y, 0.2) - expect).abs() < 1e-6, "({x}, {y})");
        }
    }
    assert_eq!(gravity_angle(0.0, 0.0, 0.2), 0.0);
}

#[test]
fn gravity_angle_continuous_across_branch() {
    // h = l_b exactly where cos(x) cos(y) = 0; cross it along 100 paths.
    let d = 1e-9;
    for k in 0..100 {
        let y = -1.4 + 2.8 * k as f64 / 99.0;
        let below = gravity_angle(FRAC_PI_2 - d, y, 0.2);
        let above = gravity_angle(FRAC_PI_2 + d, y, 0.2);
        assert!((below - above).abs() < 1e-6, "y = {y}: {below} vs {above}");
    }
}

proptest! {
    #[test]
    fn gravity_angle_nondecreasing_along_rays(dir in 0.0..(2.0 * PI), steps in 2usize..60) {
        let (s, c) = dir.sin_cos();
        let mut last = gravity_angle(0.0, 0.0, 0.2);
        for k in 1..=steps {
            let r = 1.5 * k as f64 / steps as f64;
            let g = gravity_angle(r * c, r * s, 0.2);
            prop_assert!(g >= last - 1e-12, "r = {r}: {g} < {last}");
            last = g;
        }
    }

    #[test]
    fn value_of_bin_of_moves_at_most_half_cell(theta in -1.0..FRAC_PI_2, omega in 0.0..2.5f64) {
        let spec = GridSpec::default();
        let (cell, clamped) = bin_of(theta, omega, &spec);
        let (t, w) = value_of(cell.n, cell.m, &spec).unwrap();
        if !clamped {
            let cell_theta = spec.theta_span() / spec.n_theta as f64;
            let cell_omega = spec.omega_max / spec.m_omega as f64;
            prop_assert!((t - theta).abs() <= cell_theta / 2.0 + 1e-12);
            prop_assert!((w - omega).abs() <= cell_omega / 2.0 + 1e-12);
        }
    }

    #[test]
    fn build_is_permutation_invariant(
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -2.0..2.0f64), 1..200),
        split in 0usize..200,
        shuffle_seed in any::<u64>(),
    ) {
        let spec = GridSpec::default();
        let split = split.min(pts.len());
        let a = recording("a", &pts[..split]);
        let b = recording("b", &pts[split..]);
        let one = build_dataset(&[a.clone(), b.clone()], &spec, 0.2, raw()).unwrap();
        let two = build_dataset(&[b, a], &spec, 0.2, raw()).unwrap();
        prop_assert_eq!(&one.p, &two.p);
        prop_assert_eq!(&one.counts, &two.counts);

        // Sample order within a recording only changes timestamps.
        let mut shuffled = pts.clone();
        let mut s = shuffle_seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let three = build_dataset(&[recording("c", &shuffled)], &spec, 0.2, raw()).unwrap();
        let four = build_dataset(&[recording("c", &pts)], &spec, 0.2, raw()).unwrap();
        prop_assert_eq!(three.counts, four.counts);
    }

    #[test]
    fn unsmoothed_zero_exactly_where_unvisited(
        pts in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -3.0..3.0f64), 1..100),
    ) {
        let ds = build_dataset(&[recording("r", &pts)], &GridSpec::default(), 0.2, raw()).unwrap();
        ds.validate().unwrap();
        let mut max = 0.0f64;
        for (prow, crow) in ds.p.iter().zip(&ds.counts) {
            for (&p, &c) in prow.iter().zip(crow) {
                prop_assert_eq!(p == 0.0, c == 0);
                prop_assert!((0.0..=P_MAX).contains(&p));
                max = max.max(p);
            }
        }
        prop_assert_eq!(max, P_MAX);
    }
}

#[test]
fn bin_value_identity_exhaustive() {
    let spec = GridSpec::default();
    for n in 0..spec.n_theta {
        for m in 0..spec.m_omega {
            let (t, w) = value_of(n, m, &spec).unwrap();
            assert_eq!(bin_of(t, w, &spec), (Cell { n, m }, false));
        }
    }
    assert!(value_of(spec.n_theta, 0, &spec).is_err());
}

#[test]
fn json_round_trip_is_lossless() {
    let pts: Vec<_> = (0..300)
        .map(|k| {
            let s = k as f64 * 0.01;
            (0.5 * s.sin(), 0.3 * (2.0 * s).cos(), 0.8 * s.cos())
        })
        .collect();
    let ds = build_dataset(&[recording("r", &pts)], &GridSpec::default(), 0.2, BuildOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.json");
    std::fs::write(&path, ds.to_json().unwrap()).unwrap();
    let back = SafetyDataset::load(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.to_json().unwrap(), ds.to_json().unwrap());
}

#[test]
fn empty_and_bad_inputs() {
    let spec = GridSpec::default();
    assert_eq!(build_dataset(&[], &spec, 0.2, raw()).unwrap_err().kind(), "EmptyRecordings");
    let bad = GridSpec { n_theta: 1, ..spec };
    assert!(build_dataset(&[recording("r", &[(0.0, 0.0, 0.0)])], &bad, 0.2, raw()).is_err());
}
