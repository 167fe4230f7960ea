use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draws a task index with probability proportional to its training-set size.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionalSampler {
    cumulative: Vec<f64>,
}

impl ProportionalSampler {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "proportional sampling needs non-empty tasks, got sizes {sizes:?}"
            )));
        }
        let total: usize = sizes.iter().sum();
        let mut acc = 0usize;
        let cumulative = sizes
            .iter()
            .map(|&s| {
                acc += s;
                acc as f64 / total as f64
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.gen();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn share(sizes: &[usize], seed: u64) -> f64 {
        let s = ProportionalSampler::new(sizes).unwrap();
        let mut rng = seeded(seed);
        (0..10_000).filter(|_| s.draw(&mut rng) == 0).count() as f64 / 10_000.0
    }

    #[test]
    fn three_to_one_sizes() {
        assert!((share(&[300, 100], 1) - 0.75).abs() <= 0.02);
    }

    #[test]
    fn equal_sizes() {
        assert!((share(&[250, 250], 2) - 0.5).abs() <= 0.02);
    }

    #[test]
    fn empty_task_rejected() {
        assert!(ProportionalSampler::new(&[3, 0]).is_err());
        assert_eq!(
            ProportionalSampler::new(&[1, 3]).unwrap().probabilities(),
            vec![0.25, 0.75]
        );
    }
}
