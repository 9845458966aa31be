use patsel_core::bundle::{read_bundle_stream, validate_record, write_bundle, ImageRecord};
use patsel_core::extraction::{
    attention_filter, compute_patterns, read_patterns, spectral_cluster, write_patterns, SemanticPatternSet,
    SimilarityMatrix,
};
use proptest::prelude::*;

fn softmax(logits: &[f64]) -> Vec<f32> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| (x / s) as f32).collect()
}

fn record_strategy() -> impl Strategy<Value = ImageRecord> {
    (1u16..5, 1u16..5, 1u16..6, "[a-z0-9_./-]{0,12}").prop_flat_map(|(h, w, d, id)| {
        let hw = h as usize * w as usize;
        let d_us = d as usize;
        (
            Just((h, w, d, id)),
            prop::collection::vec(-5.0f32..5.0, d_us),
            prop::collection::vec(-4.0f64..4.0, hw),
            prop::collection::vec(-4.0f64..4.0, hw * hw),
            prop::collection::vec(-3.0f32..3.0, hw * d_us),
        )
            .prop_map(move |((h, w, d, id), cls, ca, pa, feats)| ImageRecord {
                image_id: id,
                grid_h: h,
                grid_w: w,
                feat_dim: d,
                cls_feature: cls,
                cls_attention: softmax(&ca),
                patch_attention: pa.chunks(hw).flat_map(softmax).collect(),
                patch_features: feats,
            })
    })
}

fn unique_ids(mut records: Vec<ImageRecord>) -> Vec<ImageRecord> {
    for (i, r) in records.iter_mut().enumerate() {
        r.image_id = format!("{i}:{}", r.image_id);
    }
    records
}

fn symmetric_matrix(max_t: usize) -> impl Strategy<Value = SimilarityMatrix> {
    (1..=max_t).prop_flat_map(|t| {
        prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..1.0], t * t).prop_map(move |raw| {
            let mut data = vec![0.0; t * t];
            for i in 0..t {
                for j in 0..t {
                    data[i * t + j] = 0.5 * (raw[i * t + j] + raw[j * t + i]);
                }
            }
            SimilarityMatrix { t, data }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_round_trip_is_exact(records in prop::collection::vec(record_strategy(), 0..5)) {
        let records = unique_ids(records);
        for r in &records {
            prop_assert!(validate_record(r, 1e-4).is_valid());
        }
        let bytes = write_bundle(&records, Vec::new()).unwrap();
        let back: Vec<ImageRecord> = read_bundle_stream(&bytes[..])
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(&back, &records);
        prop_assert_eq!(write_bundle(&back, Vec::new()).unwrap(), bytes);
    }

    #[test]
    fn patterns_round_trip_is_exact(
        sets in prop::collection::vec(
            (1usize..4, 1usize..6, "[a-z]{1,6}").prop_flat_map(|(k, d, id)| (
                Just((k, d, id)),
                prop::collection::vec(-2.0f32..2.0, k * d),
                prop::collection::vec(1u32..50, k),
            )),
            0..6,
        )
    ) {
        let sets: Vec<SemanticPatternSet> = sets
            .into_iter()
            .map(|((_, d, id), patterns, member_counts)| SemanticPatternSet { image_id: id, dim: d, patterns, member_counts })
            .collect();
        let bytes = write_patterns(&sets, Vec::new()).unwrap();
        let back = read_patterns(&bytes[..]).unwrap();
        prop_assert_eq!(&back, &sets);
        prop_assert_eq!(write_patterns(&back, Vec::new()).unwrap(), bytes);
    }

    #[test]
    fn spectral_labels_are_a_compact_first_appearance_partition(
        sim in symmetric_matrix(24),
        k in 1usize..7,
        seed in any::<u64>(),
    ) {
        let a = spectral_cluster(&sim, k, 1e-8, seed).unwrap();
        prop_assert_eq!(a.labels.len(), sim.t);
        prop_assert_eq!(a.k_used, k.min(sim.t));
        let mut next = 0;
        for &l in &a.labels {
            prop_assert!(l <= next, "label {} before {}", l, next);
            if l == next {
                next += 1;
            }
        }
        prop_assert_eq!(next, a.k_used, "every cluster is non-empty");
        prop_assert_eq!(spectral_cluster(&sim, k, 1e-8, seed).unwrap(), a);
    }

    #[test]
    fn pattern_means_conserve_the_feature_mean(
        rows in (1usize..30, 1usize..8).prop_flat_map(|(t, d)| prop::collection::vec(prop::collection::vec(-3.0f32..3.0, d), t)),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let t = rows.len();
        let sim = SimilarityMatrix { t, data: vec![1.0; t * t] };
        let assignment = spectral_cluster(&sim, k, 1e-8, seed).unwrap();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let set = compute_patterns("x", &refs, &assignment).unwrap();
        prop_assert_eq!(set.member_counts.iter().sum::<u32>() as usize, t);
        let d = set.dim;
        for j in 0..d {
            let want: f64 = rows.iter().map(|r| r[j] as f64).sum::<f64>() / t as f64;
            let got: f64 = set.iter().zip(&set.member_counts).map(|(p, &c)| p[j] as f64 * c as f64).sum::<f64>() / t as f64;
            prop_assert!((got - want).abs() <= 1e-6, "{} vs {}", got, want);
        }
    }

    #[test]
    fn attention_filter_keeps_the_largest_admissible_prefix(
        logits in prop::collection::vec(-6.0f64..6.0, 1..60),
        tau in 0.01f64..0.99,
    ) {
        let ca = softmax(&logits);
        let kept = attention_filter(&ca, tau);
        prop_assert!(!kept.is_empty());
        let mass: f64 = kept.indices().iter().map(|&r| ca[r] as f64).sum();
        prop_assert!(kept.len() == 1 || mass <= tau);
        let rest_max = (0..ca.len())
            .filter(|r| !kept.indices().contains(r))
            .map(|r| ca[r] as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        let kept_min = kept.indices().iter().map(|&r| ca[r] as f64).fold(f64::INFINITY, f64::min);
        prop_assert!(rest_max <= kept_min);
        if kept.len() < ca.len() {
            prop_assert!(mass + rest_max > tau);
        }
    }
}
