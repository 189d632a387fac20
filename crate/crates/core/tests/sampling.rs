use lambda_bbc::problem::{Bounds, SamplePoint};
use lambda_bbc::sampling::{
    sample_in_region, scale_to_bounds, sobol_points, unscale_from_bounds, HalfSpace,
    RegionConstraint, Side, SobolSequence, SOBOL_MAX_DIM,
};
use proptest::prelude::*;

// Rows of scipy.stats.qmc.Sobol(21, scramble=False), which uses the same
// direction numbers and Gray-code ordering.
const REFERENCE: &[(u64, [f64; 21])] = &[
    (0, [0.0; 21]),
    (1, [0.5; 21]),
    (
        2,
        [
            0.75, 0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.75, 0.75, 0.75, 0.75, 0.25, 0.25,
            0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.25,
        ],
    ),
    (
        3,
        [
            0.25, 0.75, 0.75, 0.75, 0.25, 0.25, 0.75, 0.25, 0.25, 0.25, 0.25, 0.25, 0.75, 0.75,
            0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.75,
        ],
    ),
    (
        5,
        [
            0.875, 0.875, 0.125, 0.375, 0.875, 0.625, 0.875, 0.375, 0.375, 0.125, 0.375, 0.875,
            0.875, 0.125, 0.875, 0.375, 0.875, 0.375, 0.375, 0.625, 0.625,
        ],
    ),
    (
        7,
        [
            0.125, 0.625, 0.375, 0.125, 0.125, 0.375, 0.625, 0.625, 0.625, 0.875, 0.625, 0.125,
            0.625, 0.375, 0.125, 0.125, 0.125, 0.125, 0.625, 0.875, 0.875,
        ],
    ),
    (
        100,
        [
            0.4140625, 0.2578125, 0.7734375, 0.7265625, 0.8828125, 0.7421875, 0.0234375, 0.4765625,
            0.6328125, 0.6953125, 0.4609375, 0.6796875, 0.4765625, 0.8515625, 0.3203125, 0.4921875,
            0.6796875, 0.7421875, 0.8359375, 0.3359375, 0.7578125,
        ],
    ),
    (
        1000,
        [
            0.2197265625,
            0.0966796875,
            0.5185546875,
            0.6767578125,
            0.2802734375,
            0.9072265625,
            0.0458984375,
            0.8994140625,
            0.5009765625,
            0.0693359375,
            0.0849609375,
            0.2548828125,
            0.1611328125,
            0.3837890625,
            0.1435546875,
            0.3701171875,
            0.7197265625,
            0.3447265625,
            0.9912109375,
            0.7255859375,
            0.5224609375,
        ],
    ),
    (
        1025,
        [
            0.50146484375,
            0.87646484375,
            0.94775390625,
            0.98681640625,
            0.05712890625,
            0.34423828125,
            0.74169921875,
            0.08740234375,
            0.19677734375,
            0.17138671875,
            0.32177734375,
            0.42138671875,
            0.20654296875,
            0.83837890625,
            0.63232421875,
            0.35693359375,
            0.35498046875,
            0.69775390625,
            0.03857421875,
            0.84619140625,
            0.02490234375,
        ],
    ),
];

#[test]
fn matches_reference_table() {
    assert_eq!(SOBOL_MAX_DIM, 21);
    let all = sobol_points(21, 1026, 0).unwrap();
    for (i, row) in REFERENCE {
        assert_eq!(all[*i as usize].coords(), row, "row {i}");
        let skipped = sobol_points(21, 1, *i).unwrap();
        assert_eq!(skipped[0].coords(), row, "row {i} via skip");
    }
}

#[test]
fn van_der_corput_prefix() {
    let xs: Vec<f64> = sobol_points(1, 8, 0)
        .unwrap()
        .iter()
        .map(|p| p.0[0])
        .collect();
    assert_eq!(xs, vec![0.0, 0.5, 0.75, 0.25, 0.375, 0.875, 0.625, 0.125]);
    let skip1: Vec<f64> = sobol_points(1, 4, 1)
        .unwrap()
        .iter()
        .map(|p| p.0[0])
        .collect();
    assert_eq!(skip1, vec![0.5, 0.75, 0.25, 0.375]);
    assert!(sobol_points(4, 0, 0).unwrap().is_empty());
}

#[test]
fn unsupported_dimension() {
    assert!(sobol_points(SOBOL_MAX_DIM + 1, 1, 0).is_err());
    assert!(sobol_points(0, 1, 0).is_err());
    assert!(SobolSequence::new(SOBOL_MAX_DIM).is_ok());
}

/// Largest deviation from `2^(m-k)` over all dyadic intervals of every axis.
fn dyadic_imbalance(points: &[SamplePoint], m: u32) -> usize {
    let dim = points[0].dim();
    let mut worst = 0;
    for axis in 0..dim {
        for k in 0..=m {
            let cells = 1usize << k;
            let mut counts = vec![0usize; cells];
            for p in points {
                counts[(p.0[axis] * cells as f64) as usize] += 1;
            }
            let want = 1usize << (m - k);
            worst = counts
                .iter()
                .map(|&c| c.abs_diff(want))
                .max()
                .unwrap()
                .max(worst);
        }
    }
    worst
}

#[test]
fn dyadic_stratification() {
    for dim in 1..=SOBOL_MAX_DIM {
        let pts = sobol_points(dim, 64, 0).unwrap();
        assert_eq!(dyadic_imbalance(&pts, 6), 0, "dim {dim}");
    }
    assert_eq!(dyadic_imbalance(&sobol_points(2, 256, 0).unwrap(), 8), 0);
}

#[test]
fn points_stay_in_unit_cube() {
    for p in sobol_points(7, 5000, 3).unwrap() {
        assert!(p.0.iter().all(|&u| (0.0..1.0).contains(&u)));
    }
}

#[test]
fn scaling_examples() {
    let b = Bounds::cube(2, -10.0, 10.0).unwrap();
    let out = scale_to_bounds(
        &[SamplePoint(vec![0.0, 0.0]), SamplePoint(vec![0.5, 0.5])],
        &b,
    )
    .unwrap();
    assert_eq!(out[0].0, vec![-10.0, -10.0]);
    assert_eq!(out[1].0, vec![0.0, 0.0]);
    assert!(scale_to_bounds(&[SamplePoint(vec![0.5])], &b).is_err());
}

fn half(normal: Vec<f64>, offset: f64, side: Side) -> HalfSpace {
    HalfSpace {
        normal,
        offset,
        side,
    }
}

#[test]
fn half_plane_acceptance_rate() {
    let b = Bounds::cube(2, -1.0, 1.0).unwrap();
    let region = RegionConstraint::new(vec![half(vec![1.0, 0.0], 0.0, Side::Good)]);
    let pts = sample_in_region(&region, &b, 10_000, 10_000, 42);
    assert!(pts.iter().all(|p| p.0[0] >= 0.0 && b.contains(&p.0)));
    let rate = pts.len() as f64 / 10_000.0;
    assert!((rate - 0.5).abs() <= 0.1, "rate {rate}");
}

#[test]
fn empty_constraint_is_uniform_fill() {
    let b = Bounds::new(vec![0.0, 5.0], vec![1.0, 6.0]).unwrap();
    let pts = sample_in_region(&RegionConstraint::default(), &b, 50, 50, 1);
    assert_eq!(pts.len(), 50);
    assert!(pts.iter().all(|p| b.contains(&p.0)));
}

#[test]
fn contradictory_constraints_yield_nothing() {
    let b = Bounds::cube(2, -1.0, 1.0).unwrap();
    let region = RegionConstraint::new(vec![
        half(vec![1.0, 0.0], -0.5, Side::Good),
        half(vec![1.0, 0.0], -0.5, Side::Bad),
    ]);
    assert!(sample_in_region(&region, &b, 5, 500, 3).is_empty());
}

#[test]
fn seeded_streams_repeat() {
    let b = Bounds::cube(3, 0.0, 2.0).unwrap();
    let region = RegionConstraint::new(vec![half(vec![1.0, 1.0, -1.0], 0.2, Side::Bad)]);
    let a = sample_in_region(&region, &b, 20, 2000, 9);
    assert_eq!(a, sample_in_region(&region, &b, 20, 2000, 9));
    assert_ne!(a, sample_in_region(&region, &b, 20, 2000, 10));
}

#[test]
fn bounding_box_contains_region() {
    let b = Bounds::cube(2, -10.0, 10.0).unwrap();
    let region = RegionConstraint::new(vec![
        half(vec![1.0, 0.0], -5.0, Side::Good),
        half(vec![1.0, 1.0], -12.0, Side::Good),
    ]);
    let bb = region.bounding_box(&b).unwrap();
    assert!(bb.lower()[0] >= 5.0 - 1e-6 && bb.lower()[1] >= 2.0 - 1e-6);
    for p in sample_in_region(&region, &b, 200, 100_000, 4) {
        assert!(bb.contains(&p.0));
    }
    let empty = RegionConstraint::new(vec![half(vec![1.0, 0.0], -20.0, Side::Good)]);
    assert!(empty.bounding_box(&b).is_none());
}

proptest! {
    #[test]
    fn scale_round_trip(
        lo in prop::collection::vec(-1e3f64..1e3, 1..6),
        widths in prop::collection::vec(1e-3f64..1e3, 6),
        us in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let d = lo.len();
        let hi: Vec<f64> = lo.iter().zip(&widths).map(|(l, w)| l + w).collect();
        let b = Bounds::new(lo.clone(), hi).unwrap();
        let p = SamplePoint(us[..d].to_vec());
        let back = unscale_from_bounds(&scale_to_bounds(std::slice::from_ref(&p), &b).unwrap(), &b).unwrap();
        for (a, c) in back[0].0.iter().zip(&p.0) {
            prop_assert!((a - c).abs() <= 1e-12, "{} vs {}", a, c);
        }
    }

    #[test]
    fn region_samples_satisfy_constraints(
        normals in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..4),
        offsets in prop::collection::vec(-0.5f64..0.5, 4),
        sides in prop::collection::vec(any::<bool>(), 4),
        seed in any::<u64>(),
    ) {
        let b = Bounds::cube(2, -1.0, 1.0).unwrap();
        let hs = normals
            .iter()
            .enumerate()
            .map(|(i, n)| half(n.clone(), offsets[i], if sides[i] { Side::Good } else { Side::Bad }))
            .collect();
        let region = RegionConstraint::new(hs);
        for p in sample_in_region(&region, &b, 10, 1000, seed) {
            prop_assert!(region.contains(&p.0) && b.contains(&p.0));
        }
    }
}
