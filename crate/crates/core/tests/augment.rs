use amr_core::augment::{
    augment_batch, build_pool_from, continuous_ss, discrete_ss, noise_add, AugmentConfig, Strategy as Method,
};
use amr_core::preprocess::ApMatrix;
use amr_core::rng;
use proptest::prelude::*;

fn bits(m: &ApMatrix) -> Vec<[u32; 2]> {
    (0..m.len()).map(|i| m.row(i).map(f32::to_bits)).collect()
}

/// Target and donor of equal length and label, donor SNR at most the
/// target's, plus a substitution length and an RNG seed.
fn case() -> impl Strategy<Value = (ApMatrix, ApMatrix, usize, u64)> {
    (1usize..=64).prop_flat_map(|n| {
        let row = (0.0f32..=1.0, -1.0f32..=1.0);
        (
            prop::collection::vec(row.clone(), n),
            prop::collection::vec(row, n),
            0..=n,
            0usize..6,
            -20i32..=18,
            0i32..=10,
            any::<u64>(),
        )
            .prop_map(|(a, b, l, label, snr, gap, seed)| {
                let flat = |v: Vec<(f32, f32)>| v.into_iter().flat_map(|(x, y)| [x, y]).collect();
                let x = ApMatrix { data: flat(a), label, snr_db: snr as f64, frame_id: 1 };
                let d = ApMatrix { data: flat(b), label, snr_db: (snr - gap) as f64, frame_id: 2 };
                (x, d, l, seed)
            })
    })
}

fn changed_rows(x: &ApMatrix, out: &ApMatrix) -> Vec<usize> {
    let (a, b) = (bits(x), bits(out));
    (0..a.len()).filter(|&i| a[i] != b[i]).collect()
}

/// Is `needle` a subsequence of `hay`?
fn is_subsequence(needle: &[[u32; 2]], hay: &[[u32; 2]]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn discrete_ss_changes_at_most_l_rows_in_donor_order((x, d, l, seed) in case()) {
        let out = discrete_ss(&x, &d, l, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!(out.label, x.label);
        prop_assert_eq!(out.snr_db, x.snr_db);
        prop_assert!(out.in_range());
        let changed = changed_rows(&x, &out);
        prop_assert!(changed.len() <= l);
        let out_rows = bits(&out);
        let picked: Vec<[u32; 2]> = changed.iter().map(|&i| out_rows[i]).collect();
        prop_assert!(is_subsequence(&picked, &bits(&d)), "substituted rows keep donor order");
        if l == 0 {
            prop_assert_eq!(bits(&out), bits(&x));
        }
        if l == x.len() {
            let mut got = bits(&out);
            let mut want = bits(&d);
            prop_assert_eq!(&got, &want, "sorted pairing copies the donor in order");
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn continuous_ss_replaces_one_window((x, d, l, seed) in case()) {
        let out = continuous_ss(&x, &d, l, &mut rng::stream(seed)).unwrap();
        prop_assert_eq!(out.label, x.label);
        prop_assert!(out.in_range());
        let changed = changed_rows(&x, &out);
        if let (Some(&first), Some(&last)) = (changed.first(), changed.last()) {
            prop_assert!(last - first < l, "changes span {}..={} with l = {}", first, last, l);
        }
        let (o, dr, n) = (bits(&out), bits(&d), x.len());
        let found = (0..=n - l).any(|i| {
            (0..=n - l).any(|j| o[i..i + l] == dr[j..j + l])
                && (0..n).filter(|&k| k < i || k >= i + l).all(|k| o[k] == bits(&x)[k])
        });
        prop_assert!(found, "output is x with one donor window pasted in");
        if l == n {
            prop_assert_eq!(o, dr);
        }
        if l == 0 {
            prop_assert!(changed.is_empty());
        }
    }

    #[test]
    fn donors_above_the_target_snr_are_rejected((x, d, l, seed) in case()) {
        let mut louder = d.clone();
        louder.snr_db = x.snr_db + 1.0;
        prop_assert!(discrete_ss(&x, &louder, l, &mut rng::stream(seed)).is_err());
        prop_assert!(continuous_ss(&x, &louder, l, &mut rng::stream(seed)).is_err());
        let mut other = d.clone();
        other.label += 1;
        prop_assert!(discrete_ss(&x, &other, l, &mut rng::stream(seed)).is_err());
        prop_assert!(continuous_ss(&x, &other, l, &mut rng::stream(seed)).is_err());
        prop_assert!(discrete_ss(&x, &d, x.len() + 1, &mut rng::stream(seed)).is_err());
    }

    #[test]
    fn batch_augmentation_keeps_labels_and_uses_quieter_donors(seed in any::<u64>(), ratio in 0.01f64..=1.0) {
        let frames: Vec<ApMatrix> = (0..48)
            .map(|i| {
                let n = 16;
                let data = (0..2 * n).map(|k| ((i * 31 + k * 7) % 97) as f32 / 97.0).collect();
                ApMatrix { data, label: i % 3, snr_db: [-10.0, 0.0, 10.0, 18.0][i / 12], frame_id: i as u64 }
            })
            .collect();
        let pool = build_pool_from(&frames, 2, 7).unwrap();
        for (_, donor) in pool.all() {
            prop_assert!(frames.iter().any(|f| f == donor));
        }
        for strategy in [Method::DiscreteSs, Method::ContinuousSs] {
            let cfg = AugmentConfig { strategy, ratio, pool_per_class: 2, ..Default::default() };
            let a = augment_batch(&frames, Some(&pool), &cfg, seed).unwrap();
            let b = augment_batch(&frames, Some(&pool), &cfg, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for (x, y) in frames.iter().zip(&a) {
                prop_assert_eq!(x.label, y.label);
                prop_assert_eq!(x.snr_db, y.snr_db);
                // every changed row must come from a donor no louder than the target
                let changed = changed_rows(x, y);
                let rows = bits(y);
                for &i in &changed {
                    let ok = pool
                        .all()
                        .any(|(&(label, snr), m)| label == x.label && snr as f64 <= x.snr_db && bits(m).contains(&rows[i]));
                    prop_assert!(ok);
                }
            }
        }
    }
}

#[test]
fn noise_matches_its_standard_deviation() {
    let x = ApMatrix { data: vec![0.5; 1_000_000], label: 0, snr_db: 0.0, frame_id: 0 };
    let out = noise_add(&x, 1.0, &mut rng::stream(11)).unwrap();
    let diffs: Vec<f64> = out.data.iter().zip(&x.data).map(|(a, b)| (*a as f64) - (*b as f64)).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!((std - 1.0).abs() < 0.01, "std {std}");
    assert_eq!(out.label, x.label);
    assert_eq!(noise_add(&x, 0.0, &mut rng::stream(11)).unwrap(), x);
}

#[test]
fn substitution_lengths_follow_the_ratio() {
    let cfg = |ratio| AugmentConfig { ratio, ..Default::default() };
    assert_eq!(AugmentConfig::default().ratio, 1.0 / 16.0);
    assert_eq!(AugmentConfig::default().sigma, 1e-4);
    assert_eq!(cfg(1.0 / 16.0).substitution_len(128), 8);
    assert_eq!(cfg(1.0 / 8.0).substitution_len(128), 16);
    assert_eq!(cfg(1.0 / 64.0).substitution_len(1024), 16);
    assert_eq!(cfg(1.0).substitution_len(128), 128);
}

#[test]
fn quiet_targets_without_donors_error() {
    let mk = |label, snr: f64, id| ApMatrix { data: vec![0.25; 8], label, snr_db: snr, frame_id: id };
    let pool = build_pool_from(&[mk(0, 10.0, 1)], 1, 0).unwrap();
    let cfg = AugmentConfig { strategy: Method::DiscreteSs, ratio: 0.5, pool_per_class: 1, ..Default::default() };
    let err = augment_batch(&[mk(0, 0.0, 2)], Some(&pool), &cfg, 0).unwrap_err();
    assert!(err.to_string().contains("no donor"), "{err}");
    assert!(augment_batch(&[mk(0, 0.0, 2)], None, &cfg, 0).is_err());
}
