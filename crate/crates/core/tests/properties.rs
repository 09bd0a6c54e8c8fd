use std::sync::Arc;

use proptest::prelude::*;
use tpot_core::catalog::{score_sheet, Catalog, Level, ResponseSheet};
use tpot_core::embedding::{
    cosine_similarity, CachedBackend, DeterministicBackend, EmbeddingBackend, EmbeddingCache,
    EmbeddingVector,
};
use tpot_core::experiment::{aggregate_predictions, make_folds, FoldStrategy};
use tpot_core::models::{huber_grad, huber_loss, ordinal_output};
use tpot_core::textprep::split_sentences;
use tpot_core::tpot::{relevance, TargetEmbedding};

fn non_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn vector(dim: usize) -> impl Strategy<Value = EmbeddingVector> {
    prop::collection::vec(-5.0f64..5.0, dim).prop_map(|v| EmbeddingVector::new(v).unwrap())
}

proptest! {
    #[test]
    fn splitter_covers_text(words in prop::collection::vec(
        prop_oneof![
            "[a-zA-Z]{1,8}",
            Just("Dr.".to_string()),
            Just("<PERSON>".to_string()),
            Just("end.".to_string()),
            Just("why?!".to_string()),
            Just("\n\n".to_string()),
            Just("\"done.\"".to_string()),
        ],
        0..40,
    )) {
        let text = words.join(" ");
        let parts = split_sentences(&text);
        prop_assert!(parts.iter().all(|s| !s.is_empty() && s.trim() == s));
        prop_assert_eq!(non_ws(&parts.concat()), non_ws(&text));
        prop_assert!(parts.iter().all(|s| !s.contains("<PERS ") && s.matches('<').count() == s.matches('>').count()));
    }

    #[test]
    fn scores_stay_on_scale(responses in prop::collection::vec(1i32..=5, 60)) {
        let c = Catalog::bundled();
        let sheet = score_sheet(&ResponseSheet::new("a", responses).unwrap(), &c).unwrap();
        for v in sheet.item_scores.iter().chain(&sheet.facet_scores).chain(&sheet.trait_scores) {
            prop_assert!((1.0..=5.0).contains(v));
        }
    }

    #[test]
    fn aggregation_matches_scoring(responses in prop::collection::vec(1i32..=5, 60)) {
        let c = Catalog::bundled();
        let sheet = score_sheet(&ResponseSheet::new("a", responses).unwrap(), &c).unwrap();
        let items: Vec<Option<f64>> = sheet.item_scores.iter().copied().map(Some).collect();
        let agg = aggregate_predictions(Level::Item, &items, &c).unwrap();
        prop_assert_eq!(agg.facet_scores.unwrap(), sheet.facet_scores);
        prop_assert_eq!(agg.trait_scores, sheet.trait_scores);
    }

    #[test]
    fn cosine_is_bounded_and_symmetric(a in vector(6), b in vector(6)) {
        if let (Ok(ab), Ok(ba)) = (cosine_similarity(&a, &b), cosine_similarity(&b, &a)) {
            prop_assert!((-1.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
        }
    }

    #[test]
    fn relevance_in_unit_interval(s in vector(5), f in prop::collection::vec(vector(5), 1..4), r in prop::collection::vec(vector(5), 1..4)) {
        let n = f.len().min(r.len());
        let t = TargetEmbedding::new("t", f[..n].to_vec(), r[..n].to_vec()).unwrap();
        let a = relevance(&s, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn huber_is_nonnegative_and_symmetric(p in -10.0f64..10.0, y in -10.0f64..10.0, d in 0.1f64..3.0) {
        let l = huber_loss(p, y, d);
        prop_assert!(l >= 0.0);
        prop_assert!((l - huber_loss(y, p, d)).abs() < 1e-12);
        prop_assert!(huber_grad(p, y, d).abs() <= d);
    }

    #[test]
    fn ordinal_prediction_is_a_class(mu in -2.0f64..8.0, s in 0.01f64..5.0) {
        let o = ordinal_output(mu, s);
        prop_assert!((1..=5).contains(&o.prediction));
        prop_assert!(o.interval.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn folds_partition_authors(n in 10usize..200, folds in 1usize..12, seed in any::<u64>(), rotate in any::<bool>()) {
        prop_assume!(folds <= n);
        let strategy = if rotate { FoldStrategy::Rotate } else { FoldStrategy::Resample };
        for p in make_folds(n, folds, seed, strategy).unwrap() {
            let mut all: Vec<usize> = p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(p.test.len(), (0.2 * n as f64).round() as usize);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cache_round_trip_is_bit_exact(texts in prop::collection::vec("[a-z ]{0,30}", 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let first = {
            let b = CachedBackend::new(DeterministicBackend::new(3, 16), Arc::new(EmbeddingCache::open(&path).unwrap()));
            b.embed_raw(&texts).unwrap()
        };
        let inner = Arc::new(DeterministicBackend::new(3, 16));
        let b = CachedBackend::new(inner.clone(), Arc::new(EmbeddingCache::open(&path).unwrap()));
        let second = b.embed_raw(&texts).unwrap();
        prop_assert_eq!(inner.call_count(), 0);
        let bits = |v: &Vec<Vec<f32>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&first), bits(&second));
    }
}
