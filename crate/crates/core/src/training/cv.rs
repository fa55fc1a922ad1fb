use crate::error::{Error, Result};
use crate::SeededRng;

/// One `(train, test)` split; both index lists are sorted.
pub type Split = (Vec<usize>, Vec<usize>);

/// Stratified k-fold: each class is shuffled and dealt round-robin over the
/// folds, continuing the deal across classes so fold sizes differ by ≤ 1.
pub fn stratified_kfold(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<Split>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = SeededRng::new(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < folds {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        for i in members {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            (train, test)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_by_ten_gives_one_each() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let splits = stratified_kfold(&labels, 10, 3).unwrap();
        for (train, test) in &splits {
            assert_eq!(test.len(), 2);
            assert_eq!(test.iter().map(|&i| labels[i]).sum::<usize>(), 1);
            assert_eq!(train.len(), 18);
        }
    }

    #[test]
    fn too_small_class_is_a_config_error() {
        let labels = [0, 0, 0, 1, 1];
        let err = stratified_kfold(&labels, 3, 0).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Config);
    }

    proptest! {
        #[test]
        fn partition_and_stratification(n0 in 10usize..40, n1 in 10usize..40, folds in 2usize..10, seed in 0u64..1000) {
            let labels: Vec<usize> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
            let splits = stratified_kfold(&labels, folds, seed).unwrap();
            prop_assert_eq!(splits.len(), folds);
            let mut seen = vec![0; labels.len()];
            for (train, test) in &splits {
                prop_assert_eq!(train.len() + test.len(), labels.len());
                for &i in test {
                    seen[i] += 1;
                    prop_assert!(!train.contains(&i));
                }
                let pos = test.iter().filter(|&&i| labels[i] == 1).count() as f64;
                let expect = test.len() as f64 * n1 as f64 / labels.len() as f64;
                prop_assert!((pos - expect).abs() <= 1.0 + 1e-9);
                let c1 = n1 as f64 / folds as f64;
                prop_assert!((pos - c1).abs() < 1.0 + 1e-9);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
