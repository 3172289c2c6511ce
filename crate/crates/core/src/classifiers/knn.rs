//! k-nearest-neighbour vote fractions under Euclidean distance.

use crate::data::{Dataset, FeatureMatrix};

#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    features: FeatureMatrix,
    labels: Vec<u8>,
}

impl KnnModel {
    pub fn fit(train: &Dataset, k: usize) -> Self {
        Self {
            k,
            features: train.features.clone(),
            labels: train.labels.clone(),
        }
    }

    /// Neighbours beyond the training size are dropped, so the vote is over
    /// `min(k, n)` points. Equal distances go to the lower training index.
    pub fn prob_one(&self, x: &[f64]) -> f64 {
        let n = self.labels.len();
        let k = self.k.min(n);
        let mut dist: Vec<(f64, usize)> = self
            .features
            .rows()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, by_distance);
        }
        let votes = dist[..k].iter().filter(|(_, i)| self.labels[*i] == 1).count();
        votes as f64 / k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_fraction_of_five_neighbours() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        // nearest five to 0.0 are indices 0..5; three of them are class 1
        let labels = vec![1, 0, 1, 0, 1, 0, 0, 0, 0];
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap();
        let m = KnnModel::fit(&ds, 5);
        assert_eq!(m.prob_one(&[0.0]), 0.6);
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let rows = vec![vec![1.0], vec![-1.0], vec![1.0]];
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), vec![1, 0, 0]).unwrap();
        assert_eq!(KnnModel::fit(&ds, 1).prob_one(&[0.0]), 1.0);
    }

    #[test]
    fn probabilities_lie_on_the_vote_grid() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 * 0.1]).collect();
        let labels = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
        let ds = Dataset::new(FeatureMatrix::from_rows(&rows).unwrap(), labels).unwrap();
        let m = KnnModel::fit(&ds, 7);
        for q in 0..30 {
            let p = m.prob_one(&[(q as f64).cos(), q as f64 * 0.13]);
            let scaled = p * 7.0;
            assert!((scaled - scaled.round()).abs() < 1e-12);
        }
    }
}
