//! Confusion matrices, accuracy and per-epoch training reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchicalModel;

/// Counts of (true class, predicted class) pairs; rows are true classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn size(&self) -> usize {
        self.class_names.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.size();
        if truth >= c || predicted >= c {
            return Err(Error::validation(format!(
                "pair ({truth}, {predicted}) out of range for {c} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names != self.class_names {
            return Err(Error::validation("confusion matrices have different classes"));
        }
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Label histogram.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Prediction histogram.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.size())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// CSV with a header row of predicted class names and one row per true
    /// class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            write!(out, ",{name}").unwrap();
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion matrix over classes named `0..c`.
pub fn confusion(preds: &[usize], labels: &[usize], c: usize) -> Result<ConfusionMatrix> {
    confusion_named(preds, labels, (0..c).map(|i| i.to_string()).collect())
}

pub fn confusion_named(
    preds: &[usize],
    labels: &[usize],
    class_names: Vec<String>,
) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(class_names);
    for (&p, &t) in preds.iter().zip(labels) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// `trace / total`; for two classes this is `(TP + TN) / (TP + FP + FN + TN)`.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("accuracy of an empty confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: String,
    /// `None` when the evaluated set holds no member of the group.
    pub accuracy: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalAccuracy {
    pub overall: f64,
    pub stage1: f64,
    pub stage2: Vec<GroupAccuracy>,
    pub confusion: ConfusionMatrix,
    pub stage1_confusion: ConfusionMatrix,
}

/// End-to-end accuracy against base labels, stage-1 accuracy against merged
/// labels, and each stage-2 model's accuracy on its group's true members.
pub fn hierarchical_accuracy(
    model: &HierarchicalModel,
    ds: &LabeledDataset,
) -> Result<HierarchicalAccuracy> {
    if ds.is_empty() {
        return Err(Error::validation("hierarchical accuracy of an empty dataset"));
    }
    let spec = model.spec();
    let routed = model.infer_dataset(ds)?;
    let preds: Vec<usize> = routed.iter().map(|r| r.class).collect();
    let overall_cm = confusion_named(&preds, ds.labels(), spec.base_classes().to_vec())?;

    let stage1_truth = spec.relabel_indices(ds.labels())?;
    let stage1_preds: Vec<usize> = routed.iter().map(|r| r.stage1).collect();
    let stage1_confusion =
        confusion_named(&stage1_preds, &stage1_truth, spec.stage1_classes().to_vec())?;

    let mut stage2 = Vec::new();
    for group in spec.merges() {
        let members = spec.filter_group(ds, &group.name)?;
        let accuracy = if members.is_empty() {
            None
        } else {
            let net = model.stage2(&group.name).expect("every group has a model");
            let preds = crate::train::predict_dataset(net, &members)?;
            let cm = confusion(&preds, members.labels(), group.members.len())?;
            Some(accuracy(&cm)?)
        };
        stage2.push(GroupAccuracy {
            group: group.name.clone(),
            accuracy,
            samples: members.len(),
        });
    }
    Ok(HierarchicalAccuracy {
        overall: accuracy(&overall_cm)?,
        stage1: accuracy(&stage1_confusion)?,
        stage2,
        confusion: overall_cm,
        stage1_confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub optimizer: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.last().and_then(|r| r.test_accuracy)
    }

    /// One row per epoch, values to four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_accuracy,test_accuracy\n");
        for r in &self.epochs {
            let test = r.test_accuracy.map(|v| format!("{v:.4}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:.4},{:.4},{}",
                r.epoch, r.train_loss, r.train_accuracy, test
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.trace(), 3);
        assert_eq!(cm.total(), 3);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn rows_are_truth_columns_are_predictions() {
        let cm = confusion(&[1, 1], &[0, 1], 2).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.get(0, 0), 0);
    }

    #[test]
    fn binary_accuracy_matches_tp_tn_formula() {
        // class 1 positive: TP 40, TN 55, FP 3, FN 2
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (t, p, n) in [(1, 1, 40), (0, 0, 55), (0, 1, 3), (1, 0, 2)] {
            preds.extend(std::iter::repeat_n(p, n));
            labels.extend(std::iter::repeat_n(t, n));
        }
        let cm = confusion(&preds, &labels, 2).unwrap();
        assert!((accuracy(&cm).unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn uniform_random_predictions_score_one_fifth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
        let preds: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..5)).collect();
        let acc = accuracy(&confusion(&preds, &labels, 5).unwrap()).unwrap();
        assert!((acc - 0.2).abs() < 0.02, "{acc}");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(accuracy(&ConfusionMatrix::new(vec!["a".into()])).is_err());
    }

    #[test]
    fn csv_layout() {
        let cm = confusion_named(&[1, 0, 1], &[1, 0, 0], vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(cm.to_csv(), "true\\predicted,A,B\nA,1,1\nB,0,1\n");
    }

    #[test]
    fn report_csv_uses_four_decimals() {
        let report = TrainReport {
            optimizer: "sgd".into(),
            seed: 1,
            epochs: vec![
                EpochRecord {
                    epoch: 1,
                    train_loss: 1.234567,
                    train_accuracy: 0.5,
                    test_accuracy: Some(2.0 / 3.0),
                },
                EpochRecord {
                    epoch: 2,
                    train_loss: 0.1,
                    train_accuracy: 0.75,
                    test_accuracy: None,
                },
            ],
            wall_clock_seconds: 0.0,
        };
        assert_eq!(
            report.to_csv(),
            "epoch,train_loss,train_accuracy,test_accuracy\n1,1.2346,0.5000,0.6667\n2,0.1000,0.7500,\n"
        );
        assert_eq!(report.final_test_accuracy(), None);
    }

    proptest! {
        #[test]
        fn marginals_and_permutation_invariance(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200),
            seed in any::<u64>(),
        ) {
            let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let cm = confusion(&preds, &labels, 4).unwrap();
            prop_assert_eq!(cm.total(), pairs.len() as u64);
            let mut hist = vec![0u64; 4];
            labels.iter().for_each(|&l| hist[l] += 1);
            prop_assert_eq!(cm.row_sums(), hist);
            let mut hist = vec![0u64; 4];
            preds.iter().for_each(|&p| hist[p] += 1);
            prop_assert_eq!(cm.col_sums(), hist);

            let mut idx: Vec<usize> = (0..pairs.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
            let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(&confusion(&p2, &l2, 4).unwrap(), &cm);

            let acc = accuracy(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            prop_assert_eq!(acc == 1.0, preds == labels);
        }

        #[test]
        fn sharded_accumulation_sums(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 2..100),
            cut in 0usize..100,
        ) {
            let cut = cut.min(pairs.len());
            let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let whole = confusion(&preds, &labels, 3).unwrap();
            let mut a = confusion(&preds[..cut], &labels[..cut], 3).unwrap();
            a.merge(&confusion(&preds[cut..], &labels[cut..], 3).unwrap()).unwrap();
            prop_assert_eq!(a, whole);
        }
    }
}
