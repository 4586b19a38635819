use std::collections::HashSet;

use proptest::prelude::*;
use triplet_tagger::corpus::repair_bio;
use triplet_tagger::metrics::{
    exact_match_rate, extract_spans, span_prf, tags_from_spans, token_accuracy, EntitySpan, MetricsReport,
};

const TYPES: [&str; 3] = ["ITEM", "BRAND", "ATTR"];

fn bio_sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0usize..3, 0usize..3), 1..=12).prop_map(|raw| {
        let mut tags: Vec<String> = raw
            .into_iter()
            .map(|(kind, ty)| match kind {
                0 => "O".to_string(),
                1 => format!("B-{}", TYPES[ty]),
                _ => format!("I-{}", TYPES[ty]),
            })
            .collect();
        repair_bio(&mut tags).unwrap();
        tags
    })
}

/// Every (start, end, type) that forms a maximal `B (I)*` run, found by
/// checking all candidate ranges.
fn oracle_spans(tags: &[String]) -> HashSet<(usize, usize, String)> {
    let mut out = HashSet::new();
    for start in 0..tags.len() {
        for end in start + 1..=tags.len() {
            for ty in TYPES {
                let b = format!("B-{ty}");
                let i = format!("I-{ty}");
                let ok = tags[start] == b
                    && tags[start + 1..end].iter().all(|t| *t == i)
                    && (end == tags.len() || tags[end] != i);
                if ok {
                    out.insert((start, end, ty.to_string()));
                }
            }
        }
    }
    out
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    prop::collection::vec((bio_sentence(), bio_sentence()), 1..6).prop_map(|pairs| pairs.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn span_prf_matches_the_brute_force_oracle((gold, pred) in corpus()) {
        let (mut n_gold, mut n_pred, mut n_hit) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(&pred) {
            let (gs, ps) = (oracle_spans(g), oracle_spans(p));
            n_gold += gs.len();
            n_pred += ps.len();
            n_hit += gs.intersection(&ps).count();
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let gold_spans: Vec<Vec<EntitySpan>> = gold.iter().map(|g| extract_spans(g).unwrap()).collect();
        let pred_spans: Vec<Vec<EntitySpan>> = pred.iter().map(|p| extract_spans(p).unwrap()).collect();
        let (p, r) = span_prf(&gold_spans, &pred_spans).unwrap();
        prop_assert_eq!(p, ratio(n_hit, n_pred));
        prop_assert_eq!(r, ratio(n_hit, n_gold));
    }

    #[test]
    fn spans_and_tags_round_trip(tags in bio_sentence()) {
        let spans = extract_spans(&tags).unwrap();
        prop_assert_eq!(extract_spans(&tags_from_spans(&spans, tags.len())).unwrap(), spans.clone());
        prop_assert_eq!(tags_from_spans(&spans, tags.len()), tags);
    }

    #[test]
    fn metrics_are_bounded_and_consistent((gold, pred) in corpus()) {
        let pred: Vec<Vec<String>> = gold
            .iter()
            .zip(pred)
            .map(|(g, mut p)| { p.resize(g.len(), "O".into()); repair_bio(&mut p).unwrap(); p })
            .collect();
        let r = MetricsReport::compute("x", &gold, &pred).unwrap();
        for v in [r.precision, r.recall, r.exact_match, r.token_accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for (g, p) in gold.iter().zip(&pred) {
            if g == p {
                prop_assert_eq!(token_accuracy(std::slice::from_ref(g), std::slice::from_ref(p)).unwrap(), 1.0);
            }
        }
        prop_assert!(exact_match_rate(&gold, &pred).unwrap() <= 1.0);
        if r.counts.n_pred_spans > 0 {
            prop_assert_eq!(r.precision, r.counts.n_correct_spans as f64 / r.counts.n_pred_spans as f64);
        }
    }
}
