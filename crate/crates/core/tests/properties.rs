//! Property tests for retrieval, recall and the pseudo-label quota.

use std::collections::BTreeSet;

use proptest::prelude::*;

use adi::eval::{recall_at_n, topk_retrieve, CorpusEmbeddings};
use adi::training::pool_quota;
use adi::Tensor;

fn corpus(scores: &[i8]) -> CorpusEmbeddings {
    // One-dimensional items so a unit user scores each item by its value;
    // small integers force plenty of ties.
    let rows: Vec<Vec<f64>> = scores.iter().map(|&s| vec![f64::from(s)]).collect();
    CorpusEmbeddings {
        domain: 0,
        items: (0..scores.len() as u32).collect(),
        matrix: Tensor::from_rows(&rows).unwrap(),
    }
}

proptest! {
    #[test]
    fn top_k_is_the_prefix_of_a_full_sort(
        scores in prop::collection::vec(-4i8..4, 1..40),
        k in 1usize..50,
        excluded in prop::collection::btree_set(0u32..40, 0..10),
    ) {
        let got = topk_retrieve(&[1.0], &corpus(&scores), k, &excluded).unwrap();
        let mut all: Vec<(i8, u32)> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i as u32))
            .filter(|(_, i)| !excluded.contains(i))
            .collect();
        all.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<u32> = all.iter().take(k).map(|x| x.1).collect();
        prop_assert_eq!(&got.items, &want);
        prop_assert_eq!(got.truncated, all.len() < k);
    }

    #[test]
    fn recall_is_a_fraction_of_the_relevant_set(
        retrieved in prop::collection::vec(0u32..30, 0..30),
        relevant in prop::collection::btree_set(0u32..30, 1..10),
        n in 1usize..40,
    ) {
        let mut seen = BTreeSet::new();
        let distinct: Vec<u32> = retrieved.into_iter().filter(|v| seen.insert(*v)).collect();
        let r = recall_at_n(&distinct, &relevant, n).unwrap();
        let hits = distinct.iter().take(n).filter(|v| relevant.contains(v)).count();
        prop_assert_eq!(r, hits as f64 / relevant.len() as f64);
        prop_assert!((0.0..=1.0).contains(&r));
    }

    #[test]
    fn quota_is_the_exact_ceiling_for_whole_percentages(percent in 0usize..=100, count in 0usize..5000) {
        let fraction = percent as f64 / 100.0;
        prop_assert_eq!(pool_quota(fraction, count), (percent * count).div_ceil(100));
    }
}
