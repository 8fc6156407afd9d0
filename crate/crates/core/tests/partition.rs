use aflora::data::{generate, partition, Dataset, PartitionMode, PartitionedDataset, SyntheticTask};
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn blobs(classes: usize, per_class: usize, seed: u64) -> Dataset {
    generate(&SyntheticTask::gaussian_blobs(4, classes, per_class, 3.0, 1.0, seed)).unwrap()
}

/// Pearson homogeneity statistic of two label histograms and its degrees of freedom.
fn homogeneity(a: &[usize], b: &[usize]) -> (f64, usize) {
    let (na, nb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (obs, rowtot) in [(x as f64, na), (y as f64, nb)] {
            let expected = rowtot * col / (na + nb);
            stat += (obs - expected).powi(2) / expected;
        }
    }
    (stat, cells.saturating_sub(1))
}

/// Combined p-value over all clients for "same label distribution per shard".
fn shards_p_value(x: &PartitionedDataset, y: &PartitionedDataset) -> f64 {
    let c = x.num_classes;
    let (mut stat, mut df) = (0.0, 0);
    for (a, b) in x.shards.iter().zip(&y.shards) {
        let (s, d) = homogeneity(&a.label_histogram(c), &b.label_histogram(c));
        stat += s;
        df += d;
    }
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

#[test]
fn fully_mixed_noniid_is_indistinguishable_from_iid() {
    let mut rejected = 0;
    for seed in 0..50u64 {
        let data = blobs(5, 240, seed);
        let iid = partition(&data, 4, PartitionMode::Iid, seed).unwrap();
        let mixed = partition(&data, 4, PartitionMode::Noniid { epsilon: 1.0 }, seed + 1000).unwrap();
        if shards_p_value(&iid, &mixed) <= 0.01 {
            rejected += 1;
        }
    }
    assert!(rejected <= 2, "{rejected} of 50 seeds rejected at the 1% level");
}

#[test]
fn fully_skewed_noniid_is_detected() {
    for seed in 0..10u64 {
        let data = blobs(5, 240, seed);
        let iid = partition(&data, 4, PartitionMode::Iid, seed).unwrap();
        let skewed = partition(&data, 4, PartitionMode::Noniid { epsilon: 0.0 }, seed).unwrap();
        assert!(shards_p_value(&iid, &skewed) < 1e-6);
    }
}

#[test]
fn dominant_share_tracks_epsilon() {
    // Four classes, four clients: client k owns class k.
    let data = blobs(4, 1140, 9);
    let mut last = 1.0;
    for eps in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let p = partition(&data, 4, PartitionMode::Noniid { epsilon: eps }, 9).unwrap();
        let share: f64 =
            p.shards.iter().enumerate().map(|(k, s)| s.label_histogram(4)[k] as f64 / s.len() as f64).sum::<f64>()
                / 4.0;
        let expected = (1.0 - eps) + eps / 4.0;
        assert!((share - expected).abs() < 0.05, "eps {eps}: share {share}");
        assert!(share <= last + 1e-12);
        last = share;
    }
}

#[test]
fn more_classes_than_clients_spreads_ownership() {
    let data = blobs(8, 100, 2);
    let p = partition(&data, 4, PartitionMode::Noniid { epsilon: 0.0 }, 2).unwrap();
    for (k, shard) in p.shards.iter().enumerate() {
        let hist = shard.label_histogram(8);
        let support: Vec<usize> = (0..8).filter(|&c| hist[c] > 0).collect();
        assert_eq!(support, vec![k, k + 4]);
    }
}

fn mode_strategy() -> impl Strategy<Value = PartitionMode> {
    prop_oneof![
        Just(PartitionMode::Iid),
        (0.0f64..=1.0).prop_map(|epsilon| PartitionMode::Noniid { epsilon }),
        Just(PartitionMode::LabelSkewTwo),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_are_disjoint_and_complete(
        seed in any::<u64>(),
        classes in 2usize..7,
        k in 1usize..6,
        mode in mode_strategy(),
    ) {
        let data = blobs(classes, 40, seed);
        let p = partition(&data, k, mode, seed).unwrap();
        prop_assert!(p.is_disjoint());
        prop_assert_eq!(p.total_len(), data.len());
        prop_assert_eq!(p.shards.len(), k);
        let again = partition(&data, k, mode, seed).unwrap();
        for (a, b) in p.shards.iter().zip(&again.shards) {
            prop_assert_eq!(&a.ids, &b.ids);
        }
    }

    #[test]
    fn label_skew_supports_have_two_labels(seed in any::<u64>(), classes in 2usize..9, k in 1usize..6) {
        let data = blobs(classes, 30, seed);
        let p = partition(&data, k, PartitionMode::LabelSkewTwo, seed).unwrap();
        for (i, shard) in p.shards.iter().enumerate() {
            let hist = shard.label_histogram(classes);
            let support: Vec<usize> = (0..classes).filter(|&c| hist[c] > 0).collect();
            let mut expected = vec![(2 * i) % classes, (2 * i + 1) % classes];
            expected.sort_unstable();
            prop_assert_eq!(support, expected);
        }
    }
}
