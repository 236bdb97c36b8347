use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Indices into the subject list for one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Label-stratified, subject-level folds.
///
/// Each class is shuffled with `rng` and dealt round-robin over the folds;
/// the second class starts where the first left off so fold sizes differ by
/// at most one. Index lists are sorted.
pub fn kfold_split(labels: &[usize], folds: usize, rng: &mut RngStream) -> Result<Vec<Fold>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if labels.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{} subjects cannot fill {folds} folds",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut test_sets = vec![Vec::new(); folds];
    let mut offset = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut members);
        for (j, &subject) in members.iter().enumerate() {
            test_sets[(offset + j) % folds].push(subject);
        }
        offset = (offset + members.len()) % folds;
    }
    Ok(test_sets
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..labels.len())
                .filter(|i| test.binary_search(i).is_err())
                .collect();
            Fold { train, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_subjects_five_folds() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let folds = kfold_split(&labels, 5, &mut RngStream::new(1, 0)).unwrap();
        let mut seen = [0; 10];
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.train.len(), 8);
            for &t in &f.test {
                seen[t] += 1;
                assert!(!f.train.contains(&t));
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn too_few_subjects() {
        assert!(kfold_split(&[0, 1, 0], 5, &mut RngStream::new(1, 0)).is_err());
    }
}
