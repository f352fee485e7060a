use ndarray::{Array2, ArrayView1};

use super::ModelError;

/// Stored fingerprints and their normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl KnnIndex {
    pub fn new(features: Array2<f64>, targets: Array2<f64>) -> Result<Self, ModelError> {
        if features.dim().0 == 0 {
            return Err(ModelError::EmptyTrainingSet);
        }
        if features.dim().0 != targets.dim().0 {
            return Err(ModelError::ShapeMismatch("feature and target rows differ".into()));
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn predict(&self, query: ArrayView1<'_, f64>, k: usize) -> Result<Vec<f64>, ModelError> {
        knn_predict(self, query, k)
    }
}

/// Inverse-distance-weighted mean of the `k` nearest targets (Euclidean).
/// A stored fingerprint at distance zero returns its target directly; ties
/// in distance are broken by storage order.
pub fn knn_predict(index: &KnnIndex, query: ArrayView1<'_, f64>, k: usize) -> Result<Vec<f64>, ModelError> {
    let n = index.len();
    if n == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if k == 0 || k > n {
        return Err(ModelError::KTooLarge { k, n });
    }
    if query.len() != index.features.dim().1 {
        return Err(ModelError::ShapeMismatch(format!(
            "query has {} features, index has {}",
            query.len(),
            index.features.dim().1
        )));
    }
    let mut dist: Vec<(f64, usize)> = index
        .features
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let d2: f64 = row.iter().zip(query.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2.sqrt(), i)
        })
        .collect();
    let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        dist.select_nth_unstable_by(k - 1, by_dist);
        dist.truncate(k);
    }
    dist.sort_by(by_dist);
    if dist[0].0 == 0.0 {
        return Ok(index.targets.row(dist[0].1).to_vec());
    }
    let dims = index.targets.dim().1;
    let mut acc = vec![0.0; dims];
    let mut wsum = 0.0;
    for &(d, i) in &dist {
        let w = 1.0 / d;
        wsum += w;
        for (a, t) in acc.iter_mut().zip(index.targets.row(i)) {
            *a += w * t;
        }
    }
    Ok(acc.into_iter().map(|a| a / wsum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn self_query_returns_target() {
        let idx = KnnIndex::new(
            arr2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]]),
            arr2(&[[0.1, 0.2], [0.5, 0.5], [0.9, 0.7]]),
        )
        .unwrap();
        for i in 0..3 {
            let got = knn_predict(&idx, idx.features.row(i), 1).unwrap();
            assert_eq!(got, idx.targets.row(i).to_vec());
            let got = knn_predict(&idx, idx.features.row(i), 3).unwrap();
            assert_eq!(got, idx.targets.row(i).to_vec());
        }
    }

    #[test]
    fn equidistant_neighbors_average() {
        let idx = KnnIndex::new(arr2(&[[-1.0], [1.0]]), arr2(&[[0.0, 0.0], [1.0, 1.0]])).unwrap();
        assert_eq!(knn_predict(&idx, arr1(&[0.0]).view(), 2).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn k_larger_than_n() {
        let idx = KnnIndex::new(arr2(&[[0.0]]), arr2(&[[0.0, 0.0]])).unwrap();
        assert!(matches!(
            knn_predict(&idx, arr1(&[1.0]).view(), 2),
            Err(ModelError::KTooLarge { k: 2, n: 1 })
        ));
        assert!(matches!(
            KnnIndex::new(Array2::zeros((0, 1)), Array2::zeros((0, 2))),
            Err(ModelError::EmptyTrainingSet)
        ));
    }
}
