use super::task::Example;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Draws `min(cap, len)` examples uniformly without replacement, in shuffled order.
///
/// Examples are ordered by guid before sampling, so the result depends only
/// on the set of examples and the seed, not on the order they arrive in.
pub fn downsample(split: &[Example], cap: usize, seed: u64) -> Result<Vec<Example>> {
    if cap == 0 {
        return Err(Error::Config("downsample cap must be positive".into()));
    }
    let mut sorted: Vec<&Example> = split.iter().collect();
    sorted.sort_by(|a, b| a.guid.cmp(&b.guid));
    let take = cap.min(sorted.len());
    let mut rng = seeded(seed);
    Ok(rand::seq::index::sample(&mut rng, sorted.len(), take)
        .into_iter()
        .map(|i| sorted[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::Label;
    use std::collections::HashSet;

    fn split(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                guid: format!("g{i:06}"),
                text_a: vec![format!("w{i}")],
                text_b: None,
                label: Label::Class(i % 2),
            })
            .collect()
    }

    fn guids(xs: &[Example]) -> Vec<String> {
        let mut g: Vec<String> = xs.iter().map(|e| e.guid.clone()).collect();
        g.sort();
        g
    }

    #[test]
    fn cap_above_size_keeps_everything() {
        let s = split(30);
        let d = downsample(&s, 100, 4).unwrap();
        assert_eq!(guids(&d), guids(&s));
    }

    #[test]
    fn cap_gives_unique_examples() {
        let s = split(67_000);
        let d = downsample(&s, 1000, 1).unwrap();
        let unique: HashSet<_> = d.iter().map(|e| &e.guid).collect();
        assert_eq!(d.len(), 1000);
        assert_eq!(unique.len(), 1000);
    }

    #[test]
    fn seeds_give_different_subsets() {
        let s = split(5000);
        let a = guids(&downsample(&s, 200, 1).unwrap());
        let b = guids(&downsample(&s, 200, 2).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn idempotent_and_order_independent() {
        let s = split(500);
        let mut reversed = s.clone();
        reversed.reverse();
        let a = downsample(&s, 50, 11).unwrap();
        assert_eq!(a, downsample(&s, 50, 11).unwrap());
        assert_eq!(a, downsample(&reversed, 50, 11).unwrap());
    }

    #[test]
    fn zero_cap_rejected() {
        assert!(downsample(&split(3), 0, 0).is_err());
    }
}
