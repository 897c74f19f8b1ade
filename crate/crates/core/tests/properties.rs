use proptest::prelude::*;
use safesite::eval::{accumulate, mean_iou, pixel_accuracy, rates, ConfusionCounts};
use safesite::format::GridFile;
use safesite::maps::{Label, SafetyMap};
use safesite::segmenter::{mean_of_samples, MeanSoftmaxMap};
use safesite::site::{distance_transform, propose_site, safe_mask, Mask};
use safesite::uncertainty::{apply_threshold, binary_entropy, predictive_entropy, UncertaintyMap, UncertaintyThreshold};
use safesite::Dem;
use std::f64::consts::LN_2;

fn label_strategy() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Safe), Just(Label::Unsafe), Just(Label::Invalid)]
}

fn safety_map(max: usize) -> impl Strategy<Value = SafetyMap> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(label_strategy(), w * h).prop_map(move |l| SafetyMap::new(w, h, l).unwrap())
    })
}

fn map_pair(side: usize) -> impl Strategy<Value = (SafetyMap, SafetyMap)> {
    let maps = || prop::collection::vec(label_strategy(), side * side);
    (maps(), maps()).prop_map(move |(a, b)| {
        (SafetyMap::new(side, side, a).unwrap(), SafetyMap::new(side, side, b).unwrap())
    })
}

/// Nearest non-candidate by exhaustive search; the ring just outside the
/// grid counts as non-candidate.
fn brute_force_squared(mask: &Mask) -> Vec<f64> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut obstacles = Vec::new();
    for r in -1..=h {
        for c in -1..=w {
            let outside = r < 0 || c < 0 || r >= h || c >= w;
            if outside || !mask.cells[(r * w + c) as usize] {
                obstacles.push((r, c));
            }
        }
    }
    let mut out = vec![0.0; (w * h) as usize];
    for r in 0..h {
        for c in 0..w {
            if mask.cells[(r * w + c) as usize] {
                let best = obstacles
                    .iter()
                    .map(|&(orow, ocol)| (orow - r).pow(2) + (ocol - c).pow(2))
                    .min()
                    .unwrap();
                out[(r * w + c) as usize] = best as f64;
            }
        }
    }
    out
}

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max, 0.0..1.0f64).prop_flat_map(|(w, h, density)| {
        prop::collection::vec(prop::bool::weighted(density.clamp(0.01, 0.99)), w * h)
            .prop_map(move |cells| Mask::new(w, h, cells).unwrap())
    })
}

proptest! {
    #[test]
    fn entropy_lies_in_bounds(p in 0.0..=1.0f64) {
        let h = binary_entropy(p, 1.0 - p);
        prop_assert!((0.0..=LN_2).contains(&h));
        prop_assert!((h - binary_entropy(1.0 - p, p)).abs() < 1e-15);
    }

    #[test]
    fn invalid_set_is_monotone_in_threshold(
        entropy in prop::collection::vec(0.0..=LN_2, 36),
        labels in prop::collection::vec(label_strategy(), 36),
        t1 in 0.0..=LN_2,
        t2 in 0.0..=LN_2,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let pred = SafetyMap::new(6, 6, labels).unwrap();
        let unc = UncertaintyMap::new(6, 6, entropy).unwrap();
        let strict = apply_threshold(&pred, &unc, &UncertaintyThreshold::new(lo, "p").unwrap()).unwrap();
        let loose = apply_threshold(&pred, &unc, &UncertaintyThreshold::new(hi, "p").unwrap()).unwrap();
        for i in 0..36 {
            if loose.labels[i] == Label::Invalid {
                prop_assert_eq!(strict.labels[i], Label::Invalid);
            }
            if pred.labels[i] == Label::Invalid {
                prop_assert_eq!(strict.labels[i], Label::Invalid);
            }
        }
    }

    #[test]
    fn mc_mean_stays_within_sample_range(
        samples in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 6), 1..10)
    ) {
        let maps: Vec<_> = samples
            .iter()
            .map(|p| MeanSoftmaxMap::from_p_safe(3, 2, p.clone()).unwrap())
            .collect();
        let mean = mean_of_samples(&maps).unwrap();
        for i in 0..6 {
            let lo = samples.iter().map(|s| s[i]).fold(f64::INFINITY, f64::min);
            let hi = samples.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean.p_safe[i] >= lo && mean.p_safe[i] <= hi);
            prop_assert!((mean.p_safe[i] + mean.p_unsafe[i] - 1.0).abs() <= 1e-6);
            let exact = samples.iter().map(|s| s[i]).sum::<f64>() / samples.len() as f64;
            prop_assert!((mean.p_safe[i] - exact).abs() < 1e-12);
        }
        let unc = predictive_entropy(&mean);
        prop_assert!(unc.entropy.iter().all(|h| (0.0..=LN_2).contains(h)));
    }

    #[test]
    fn distance_transform_matches_brute_force(mask in mask_strategy(32)) {
        prop_assert_eq!(distance_transform(&mask).squared, brute_force_squared(&mask));
    }

    #[test]
    fn selected_site_is_safe_with_maximal_clearance(map in safety_map(16)) {
        let d = distance_transform(&safe_mask(&map));
        match propose_site(&map) {
            None => prop_assert_eq!(map.count(Label::Safe), 0),
            Some(site) => {
                prop_assert_eq!(map.get(site.row, site.col), Label::Safe);
                let best = d.distances().into_iter().fold(0.0, f64::max);
                prop_assert_eq!(site.clearance_px, best);
            }
        }
    }

    #[test]
    fn adding_an_obstacle_never_increases_clearance(map in safety_map(16), pick in any::<prop::sample::Index>()) {
        let before = propose_site(&map).map_or(0.0, |s| s.clearance_px);
        let mut worse = map.clone();
        let i = pick.index(worse.labels.len());
        worse.labels[i] = Label::Unsafe;
        let after = propose_site(&worse).map_or(0.0, |s| s.clearance_px);
        prop_assert!(after <= before);
    }

    #[test]
    fn rates_are_complementary((pred, truth) in map_pair(16)) {
        let c = accumulate(&pred, &truth, ConfusionCounts::default()).unwrap();
        prop_assert_eq!(
            c.true_positive + c.false_positive + c.true_negative + c.false_negative,
            c.evaluated_pixels
        );
        prop_assert!(c.evaluated_pixels <= c.total_pixels);
        let r = rates(&c);
        if let (Some(tpr), Some(fnr)) = (r.tpr, r.fnr) {
            prop_assert!((tpr + fnr - 1.0).abs() < 1e-12);
        }
        if let (Some(tnr), Some(fpr)) = (r.tnr, r.fpr) {
            prop_assert!((tnr + fpr - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_pixels_are_excluded_symmetrically((pred, truth) in map_pair(8), pick in any::<prop::sample::Index>()) {
        let i = pick.index(pred.labels.len());
        let mut p1 = pred.clone();
        p1.labels[i] = Label::Invalid;
        let mut t2 = truth.clone();
        t2.labels[i] = Label::Invalid;
        let a = accumulate(&p1, &truth, ConfusionCounts::default()).unwrap();
        let b = accumulate(&pred, &t2, ConfusionCounts::default()).unwrap();
        prop_assert_eq!(
            (a.true_positive, a.false_positive, a.true_negative, a.false_negative),
            (b.true_positive, b.false_positive, b.true_negative, b.false_negative)
        );
    }

    #[test]
    fn accumulation_merges_exactly(maps in prop::collection::vec(map_pair(6), 1..6)) {
        let sequential = maps
            .iter()
            .try_fold(ConfusionCounts::default(), |acc, (p, t)| accumulate(p, t, acc))
            .unwrap();
        let merged = maps
            .iter()
            .map(|(p, t)| accumulate(p, t, ConfusionCounts::default()).unwrap())
            .fold(ConfusionCounts::default(), ConfusionCounts::merge);
        prop_assert_eq!(sequential, merged);
    }

    #[test]
    fn dem_files_round_trip(w in 1usize..20, h in 1usize..20, pitch in 0.1..5.0f64, seed in any::<u64>()) {
        let dem = Dem::from_fn(w, h, pitch, |x, y| (x * 1.7 + y * 0.3 + seed as f64 * 1e-9).sin() * 100.0).unwrap();
        let back = GridFile::decode(&GridFile::from_dem(&dem).encode()).unwrap().into_dem().unwrap();
        prop_assert_eq!(back, dem);
    }

    #[test]
    fn safety_files_round_trip(map in safety_map(12)) {
        let back = GridFile::decode(&GridFile::from_safety_map(&map, 1.0).encode()).unwrap().into_safety_map().unwrap();
        prop_assert_eq!(back, map);
    }
}

/// Set-based oracles for the metrics: every number is recomputed from the
/// pixel sets directly, as exact rationals over integer counts.
#[test]
fn metrics_match_set_oracles_on_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let labels = [Label::Safe, Label::Unsafe, Label::Invalid];
    for _ in 0..100 {
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
            let l = (0..256).map(|_| labels[rng.gen_range(0..3)]).collect();
            SafetyMap::new(16, 16, l).unwrap()
        };
        let (pred, truth) = (gen(&mut rng), gen(&mut rng));
        let c = accumulate(&pred, &truth, ConfusionCounts::default()).unwrap();

        let valid: Vec<usize> = (0..256)
            .filter(|&i| pred.labels[i] != Label::Invalid && truth.labels[i] != Label::Invalid)
            .collect();
        let set = |m: &SafetyMap, l: Label| -> std::collections::BTreeSet<usize> {
            valid.iter().copied().filter(|&i| m.labels[i] == l).collect()
        };
        let matches = valid.iter().filter(|&&i| pred.labels[i] == truth.labels[i]).count();
        assert_eq!(pixel_accuracy(&c), Some(matches as f64 / valid.len() as f64));

        let mut ious = Vec::new();
        for l in [Label::Safe, Label::Unsafe] {
            let (a, b) = (set(&pred, l), set(&truth, l));
            let union = a.union(&b).count();
            if union > 0 {
                ious.push(a.intersection(&b).count() as f64 / union as f64);
            }
        }
        let expected = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!((mean_iou(&c).unwrap() - expected).abs() < 1e-15);

        let tp = set(&pred, Label::Safe).intersection(&set(&truth, Label::Safe)).count();
        let fn_ = set(&pred, Label::Unsafe).intersection(&set(&truth, Label::Safe)).count();
        let fp = set(&pred, Label::Safe).intersection(&set(&truth, Label::Unsafe)).count();
        let tn = set(&pred, Label::Unsafe).intersection(&set(&truth, Label::Unsafe)).count();
        let r = rates(&c);
        assert_eq!(r.tpr, Some(tp as f64 / (tp + fn_) as f64));
        assert_eq!(r.fnr, Some(fn_ as f64 / (tp + fn_) as f64));
        assert_eq!(r.fpr, Some(fp as f64 / (fp + tn) as f64));
        assert_eq!(r.tnr, Some(tn as f64 / (fp + tn) as f64));
    }
}
