use proptest::prelude::*;

use stilts_core::datakit::{corrupt, downsample, Example, Label};
use stilts_core::metrics::{
    accuracy, glue_aggregate, matthews, pearson, spearman, AvgExConvention, ScoreRow,
};
use stilts_core::rng::seeded;

fn labels(n: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (
        prop::collection::vec(0usize..2, n),
        prop::collection::vec(0usize..2, n),
    )
}

fn non_constant(v: &[f64]) -> bool {
    v.iter().any(|x| *x != v[0])
}

proptest! {
    #[test]
    fn matthews_is_bounded_and_symmetric((p, g) in (2usize..60).prop_flat_map(labels)) {
        let m = matthews(&p, &g).unwrap();
        prop_assert!((-100.0 - 1e-9..=100.0 + 1e-9).contains(&m));
        prop_assert!((m - matthews(&g, &p).unwrap()).abs() < 1e-9);
        let flipped: Vec<usize> = p.iter().map(|x| 1 - x).collect();
        prop_assert!((m + matthews(&flipped, &g).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn accuracy_of_self_is_perfect(g in prop::collection::vec(0usize..4, 1..50)) {
        prop_assert_eq!(accuracy(&g, &g).unwrap(), 100.0);
    }

    #[test]
    fn spearman_ignores_monotone_maps(x in prop::collection::vec(-50i32..50, 3..40), y in prop::collection::vec(-50i32..50, 3..40)) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
        prop_assume!(non_constant(&x) && non_constant(&y));
        let warped: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
        let a = spearman(&x, &y).unwrap();
        prop_assert!((a - spearman(&warped, &y).unwrap()).abs() < 1e-9);
        prop_assert!((pearson(&x, &y).unwrap() - pearson(&y, &x).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn aggregate_ignores_row_order(scores in prop::collection::vec(0.0f64..100.0, 2..8)) {
        let roster: Vec<String> = (0..scores.len()).map(|i| format!("t{i}")).collect();
        let fwd = roster.iter().zip(&scores).fold(ScoreRow::new("r"), |r, (t, s)| r.with(t, &[*s]));
        let rev = roster.iter().zip(&scores).rev().fold(ScoreRow::new("r"), |r, (t, s)| r.with(t, &[*s]));
        let a = glue_aggregate(&fwd, &roster, &[], AvgExConvention::PairAveraged).unwrap();
        let b = glue_aggregate(&rev, &roster, &[], AvgExConvention::PairAveraged).unwrap();
        prop_assert!((a.avg - b.avg).abs() < 1e-9);
        prop_assert!((a.avg - a.avg_ex).abs() < 1e-9);
    }

    #[test]
    fn corruption_permutes_tokens(len in 8usize..20, seed in any::<u64>()) {
        let tokens: Vec<String> = (0..len).map(|i| format!("w{}", i % 6)).collect();
        let fake = corrupt(&tokens, &mut seeded(seed)).unwrap();
        let mut a = tokens.clone();
        let mut b = fake.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_ne!(fake, tokens);
    }

    #[test]
    fn downsample_is_a_subset_independent_of_order(n in 1usize..80, cap in 1usize..100, seed in any::<u64>()) {
        let split: Vec<Example> = (0..n)
            .map(|i| Example { guid: format!("g{i:03}"), text_a: vec![format!("w{i}")], text_b: None, label: Label::Class(i % 2) })
            .collect();
        let mut reversed = split.clone();
        reversed.reverse();
        let a = downsample(&split, cap, seed).unwrap();
        prop_assert_eq!(a.len(), cap.min(n));
        prop_assert_eq!(&a, &downsample(&reversed, cap, seed).unwrap());
        let mut guids: Vec<&str> = a.iter().map(|e| e.guid.as_str()).collect();
        guids.sort();
        guids.dedup();
        prop_assert_eq!(guids.len(), a.len());
    }
}
