//! Property tests for the algebraic invariants the metrics and the
//! screening pipeline promise.

use ndarray::{Array2, Array3};
use proptest::prelude::*;

use mimo_core::bootstrap::{
    bootstrap_percentile, empirical_percentile, BootstrapConfig, Statistic,
};
use mimo_core::metrics::{dice, extract_surface, hausdorff, MetricTable, OrganMask};
use mimo_core::mimo::{mimo_score, BoundMethod, CiPercentiles};
use mimo_core::synth::generate_planted_table;

fn mask_strategy() -> impl Strategy<Value = OrganMask> {
    ((1usize..=8, 1usize..=8, 1usize..=8))
        .prop_flat_map(|(d, h, w)| {
            (
                proptest::collection::vec(any::<bool>(), d * h * w),
                Just((d, h, w)),
            )
        })
        .prop_map(|(bits, (d, h, w))| OrganMask {
            data: Array3::from_shape_vec((d, h, w), bits).unwrap(),
            spacing: [1.0, 0.75, 1.5],
        })
}

fn mask_pair() -> impl Strategy<Value = (OrganMask, OrganMask)> {
    ((1usize..=8, 1usize..=8, 1usize..=8)).prop_flat_map(|(d, h, w)| {
        let bits = proptest::collection::vec(any::<bool>(), d * h * w);
        (bits.clone(), bits, Just((d, h, w))).prop_map(|(a, b, (d, h, w))| {
            let make = |v: Vec<bool>| OrganMask {
                data: Array3::from_shape_vec((d, h, w), v).unwrap(),
                spacing: [1.0, 0.75, 1.5],
            };
            (make(a), make(b))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_bounded_and_reflexive((a, b) in mask_pair()) {
        let ab = dice(&a, &b).unwrap();
        let ba = dice(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hausdorff_is_symmetric_and_zero_on_self((a, b) in mask_pair()) {
        let sa = extract_surface(&a);
        let sb = extract_surface(&b);
        let ab = hausdorff(&sa, &sb);
        let ba = hausdorff(&sb, &sa);
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(hausdorff(&sa, &sa), 0.0);
    }

    #[test]
    fn surface_points_lie_inside_foreground(mask in mask_strategy()) {
        let surface = extract_surface(&mask);
        let foreground = mask.data.iter().filter(|&&v| v).count();
        prop_assert!(surface.points.len() <= foreground);
        prop_assert_eq!(surface.points.is_empty(), foreground == 0);
    }

    #[test]
    fn bootstrap_percentile_stays_in_range_and_decreases(
        values in proptest::collection::vec(0.0f64..100.0, 2..40),
        seed in any::<u64>(),
    ) {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut last = f64::INFINITY;
        for p in [5.0, 25.0, 50.0, 75.0, 95.0] {
            let config = BootstrapConfig {
                b: 100,
                statistic: Statistic::Mean,
                seed,
                percentile: p,
            };
            let r = bootstrap_percentile(&values, &config).unwrap();
            prop_assert!(r >= lo && r <= hi, "{r} outside [{lo}, {hi}]");
            // Descending sort: deeper percentiles read smaller estimates.
            prop_assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn empirical_percentile_decreases_and_hits_extremes(
        values in proptest::collection::vec(-50.0f64..50.0, 1..30),
    ) {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut last = f64::INFINITY;
        for p in 1..=99 {
            let r = empirical_percentile(&values, p as f64);
            prop_assert!(r <= last);
            last = r;
        }
        prop_assert_eq!(empirical_percentile(&values, 1.0).to_bits(), hi.to_bits());
        prop_assert_eq!(empirical_percentile(&values, 99.9).to_bits(), lo.to_bits());
    }

    #[test]
    fn planted_score_is_quantized_and_bounded(
        counts in proptest::collection::vec(0usize..=5, 1..6),
        seed in any::<u64>(),
    ) {
        let n = 5;
        let m = counts.len();
        let (table, thresholds) = generate_planted_table(n, &counts).unwrap();
        let config = BootstrapConfig {
            b: 200,
            statistic: Statistic::Mean,
            seed,
            percentile: 50.0,
        };
        let report = mimo_score(
            &table,
            &thresholds,
            CiPercentiles::default(),
            &config,
            BoundMethod::Bootstrap,
        )
        .unwrap();
        prop_assert!((0.0..=1.0).contains(&report.score));
        // The score is always a multiple of 1/(n*m).
        let cells = (n * m) as f64;
        let scaled = report.score * cells;
        prop_assert!((scaled - scaled.round()).abs() < 1e-12);
        prop_assert_eq!(report.qualified_count, counts.iter().sum::<usize>());
    }

    #[test]
    fn scoring_ignores_row_storage_order(perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (table, thresholds) = generate_planted_table(6, &[4, 2, 6, 0]).unwrap();
        let mut rows: Vec<usize> = (0..table.n()).collect();
        let mut rng = rand::rngs::SmallRng::seed_from_u64(perm_seed);
        rows.shuffle(&mut rng);
        let shuffled = MetricTable {
            sample_ids: rows.iter().map(|&i| table.sample_ids[i].clone()).collect(),
            organs: table.organs.clone(),
            dice: Array2::from_shape_fn((table.n(), table.m()), |(i, j)| table.dice[[rows[i], j]]),
            hd: Array2::from_shape_fn((table.n(), table.m()), |(i, j)| table.hd[[rows[i], j]]),
            conf: Array2::from_shape_fn((table.n(), table.m()), |(i, j)| table.conf[[rows[i], j]]),
        };
        let config = BootstrapConfig {
            b: 200,
            statistic: Statistic::Mean,
            seed: 7,
            percentile: 50.0,
        };
        let a = mimo_score(&table, &thresholds, CiPercentiles::default(), &config, BoundMethod::Bootstrap).unwrap();
        let b = mimo_score(&shuffled, &thresholds, CiPercentiles::default(), &config, BoundMethod::Bootstrap).unwrap();
        prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
        prop_assert_eq!(a.qualified_count, b.qualified_count);
        for (x, y) in a.per_organ.iter().zip(b.per_organ.iter()) {
            prop_assert_eq!(&x.sorted_order, &y.sorted_order);
        }
    }
}
