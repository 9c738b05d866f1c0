use std::io::Write;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usts::dataset::{self, cache, synth, NodeSeries, Segment};
use usts::DataConfig;

#[test]
fn synthetic_tsv_round_trip() {
    let spec = synth::SynthSpec {
        len: 200,
        ..Default::default()
    };
    let truth = synth::generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.tsv");
    let mut f = std::fs::File::create(&path).unwrap();
    synth::write_tsv(&mut f, &truth, 0.02, 5).unwrap();
    f.flush().unwrap();

    let cfg = DataConfig {
        grid_width: synth::grid_width(spec.nodes),
        clusters: spec.nodes,
        step_ms: spec.step_ms,
        channel_cols: vec![3],
        channel_names: vec!["sms_in".into()],
        ..Default::default()
    };
    let p = dataset::prepare(&[path.as_path()], &cfg).unwrap();
    let s = &p.series;
    assert_eq!((s.len, s.nodes, s.channels), (200, 8, 1));
    assert!(p.degenerate.is_empty());
    // Each recovered node is one synthetic node, in the same order.
    for n in 0..8 {
        for sq in synth::node_squares(n, 8) {
            assert_eq!(p.clustering.node_of(sq), Some(n));
        }
    }
    let raw = dataset::denormalize(&s.values, &s.medians);
    let mut filled = 0;
    for ((&r, &t), &interp) in raw.iter().zip(&truth.values).zip(&s.interp) {
        if interp {
            filled += 1;
        } else {
            assert!((r - t).abs() < 1e-9 * t.max(1.0));
        }
    }
    assert!(filled > 0);
}

#[test]
fn cache_is_byte_stable() {
    let s = synth::generate(&synth::SynthSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    cache::save(&a, &s).unwrap();
    let back = cache::load(&a).unwrap();
    cache::save(&b, &back).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(cache::load(&dir.path().join("missing.bin")).unwrap_err().code(), "E_IO");
}

fn binomial_band(n: usize, lo: f64, hi: f64) -> (f64, f64) {
    let sd = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    (lo - 3.0 * sd(lo), hi + 3.0 * sd(hi))
}

#[test]
fn mask_rate_over_a_million_elements() {
    for trial in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let (m, p) = dataset::gen_mask::<f32>(&[1, 1000, 1000, 1], 0.70, 0.80, None, &mut rng).unwrap();
        let rate = m.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((0.69..=0.81).contains(&rate), "trial {trial}: rate {rate}");
        assert!((0.70..0.80).contains(&p[0]));
    }
}

proptest! {
    // A 3σ band fails about 0.3% of the time by chance, so the case
    // stream is pinned.
    #![proptest_config(ProptestConfig {
        cases: 48,
        rng_seed: proptest::test_runner::RngSeed::Fixed(7),
        ..ProptestConfig::default()
    })]

    #[test]
    fn mask_rate_within_three_sigma(seed in any::<u64>(), lo in 0.0f64..1.0, width in 0.0f64..0.3, l in 4usize..40) {
        let hi = (lo + width).min(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [3, l, 5, 2];
        let (m, rates) = dataset::gen_mask::<f64>(&shape, lo, hi, None, &mut rng).unwrap();
        let per = l * 10;
        let (a, b) = binomial_band(per, lo, hi);
        for (sample, &rate) in m.data().chunks(per).zip(&rates) {
            let r = sample.iter().filter(|&&v| v == 0.0).count() as f64 / per as f64;
            prop_assert!(rate >= lo && rate <= hi);
            prop_assert!(r >= a && r <= b, "rate {} outside [{}, {}]", r, a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_ordered_and_disjoint(len in 3usize..5000, train in 0.1f64..0.9, val_frac in 0.0f64..1.0) {
        let val = (1.0 - train) * val_frac;
        let b = dataset::split_bounds(len, train, val).unwrap();
        prop_assert_eq!(b.train.start, 0);
        prop_assert_eq!(b.train.end, b.val.start);
        prop_assert_eq!(b.val.end, b.test.start);
        prop_assert_eq!(b.test.end, len);
        if !b.val.is_empty() && !b.test.is_empty() {
            prop_assert!(b.train.end - 1 < b.val.start && b.val.start < b.test.start);
        }
    }

    #[test]
    fn windows_stay_inside_segment(start in 0usize..50, extra in 0usize..60, hist in 1usize..20, horizon in 1usize..10, stride in 1usize..7) {
        let range = start..start + hist + horizon + extra;
        let w = dataset::windows(range.clone(), Segment::Train, hist, horizon, stride).unwrap();
        prop_assert_eq!(w.len(), extra / stride + 1);
        for s in w {
            prop_assert!(s >= range.start && s + hist + horizon <= range.end);
        }
    }

    #[test]
    fn clustering_is_reproducible(seed in any::<u64>(), cells in prop::collection::btree_set(1u64..400, 6..40), k in 1usize..6) {
        let squares: Vec<u64> = cells.into_iter().collect();
        let a = dataset::cluster_nodes(&squares, k, 20, 1, 100, seed).unwrap();
        let b = dataset::cluster_nodes(&squares, k, 20, 1, 100, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let mut used = a.labels.clone();
        used.sort_unstable();
        used.dedup();
        prop_assert!(used.iter().all(|&l| l < k));
    }

    #[test]
    fn normalization_round_trips(vals in prop::collection::vec(0.0f64..1e4, 12)) {
        let mut s = NodeSeries::from_values(6, 2, 1, vals.clone(), 0, 1).unwrap();
        dataset::median_normalize(&mut s, 0..4).unwrap();
        prop_assert!(s.medians.iter().all(|&m| m > 0.0));
        for (a, b) in dataset::denormalize(&s.values, &s.medians).iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-6 * b.max(1.0));
        }
    }
}
