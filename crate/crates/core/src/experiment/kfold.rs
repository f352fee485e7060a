use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn folds_from_parts(parts: Vec<Vec<usize>>) -> Vec<Fold> {
    (0..parts.len())
        .map(|i| {
            let mut train: Vec<usize> = parts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            train.sort_unstable();
            let mut test = parts[i].clone();
            test.sort_unstable();
            Fold { train, test }
        })
        .collect()
}

/// Shuffled k-fold partition of `0..n`. The first `n % k` folds hold one
/// extra sample.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, ExperimentError> {
    if k < 2 || n < k {
        return Err(ExperimentError::DatasetTooSmall { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        parts.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds_from_parts(parts))
}

/// Leakage-aware variant: whole groups (e.g. recording sessions) are
/// assigned to folds, largest first, each to the currently smallest fold.
pub fn kfold_split_grouped(groups: &[String], k: usize, seed: u64) -> Result<Vec<Fold>, ExperimentError> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g.as_str()).or_default().push(i);
    }
    if k < 2 || by_group.len() < k {
        return Err(ExperimentError::DatasetTooSmall { n: by_group.len(), k });
    }
    let mut members: Vec<Vec<usize>> = by_group.into_values().collect();
    members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    members.sort_by_key(|m| std::cmp::Reverse(m.len()));
    let mut parts = vec![Vec::new(); k];
    for m in members {
        let target = (0..k).min_by_key(|&i| (parts[i].len(), i)).expect("k >= 2");
        parts[target].extend(m);
    }
    Ok(folds_from_parts(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let f = kfold_split(100, 10, 1).unwrap();
        assert!(f.iter().all(|f| f.test.len() == 10 && f.train.len() == 90));
        let f = kfold_split(101, 10, 1).unwrap();
        let mut sizes: Vec<usize> = f.iter().map(|f| f.test.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [vec![10; 9], vec![11]].concat());
    }

    #[test]
    fn seeded() {
        assert_eq!(kfold_split(57, 5, 3).unwrap(), kfold_split(57, 5, 3).unwrap());
        assert_ne!(kfold_split(57, 5, 3).unwrap(), kfold_split(57, 5, 4).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            kfold_split(3, 10, 0),
            Err(ExperimentError::DatasetTooSmall { n: 3, k: 10 })
        ));
        assert!(kfold_split(10, 1, 0).is_err());
    }

    #[test]
    fn grouped_keeps_groups_together() {
        let groups: Vec<String> = (0..30).map(|i| format!("s{}", i % 6)).collect();
        let folds = kfold_split_grouped(&groups, 3, 2).unwrap();
        for f in &folds {
            for &i in &f.test {
                assert!(f.train.iter().all(|&j| groups[j] != groups[i]));
            }
        }
        let total: usize = folds.iter().map(|f| f.test.len()).sum();
        assert_eq!(total, 30);
    }
}
