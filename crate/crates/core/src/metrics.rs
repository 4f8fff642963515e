//! Confusion matrices and per-class / macro classification scores.
//!
//! Multi-class accuracy is top-1 (trace / total). Precision, recall, F1 and
//! FPR are computed one-vs-rest per class and macro-averaged over the classes
//! that occur in the ground truth. Any 0/0 ratio is reported as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::JointLabelSpace;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    /// Row-major: `counts[truth * classes + predicted]`.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.classes.max(1))
            .map(<[u64]>::to_vec)
            .collect()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::InvalidArgument(format!(
                "ordinal pair ({t}, {p}) out of range for {classes} classes"
            )));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// One-vs-rest outcome counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn binary_counts(cm: &ConfusionMatrix) -> Vec<BinaryCounts> {
    let total = cm.total();
    (0..cm.classes)
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_ = cm.row_sum(c) - tp;
            let fp = cm.col_sum(c) - tp;
            BinaryCounts {
                tp,
                fp,
                fn_,
                tn: total - tp - fp - fn_,
            }
        })
        .collect()
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// Binary (TP+TN)/total accuracy of this class.
    pub accuracy: f64,
    pub support: u64,
}

impl ClassScores {
    pub fn from_counts(c: &BinaryCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            fpr: ratio(c.fp, c.fp + c.tn),
            accuracy: ratio(c.tp + c.tn, c.total()),
            support: c.tp + c.fn_,
        }
    }
}

/// Scores for one prediction target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    /// Top-1 accuracy.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    pub micro_f1: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_class: Vec<ClassScores>,
}

pub fn scores(cm: &ConfusionMatrix) -> TargetScores {
    let counts = binary_counts(cm);
    let per_class: Vec<ClassScores> = counts.iter().map(ClassScores::from_counts).collect();
    let present: Vec<&ClassScores> = per_class.iter().filter(|s| s.support > 0).collect();
    let macro_of = |f: fn(&ClassScores) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|s| f(s)).sum::<f64>() / present.len() as f64
        }
    };
    let (tp, fp, fn_) = counts
        .iter()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    let mp = ratio(tp, tp + fp);
    let mr = ratio(tp, tp + fn_);
    TargetScores {
        accuracy: ratio(cm.trace(), cm.total()),
        precision: macro_of(|s| s.precision),
        recall: macro_of(|s| s.recall),
        f1: macro_of(|s| s.f1),
        fpr: macro_of(|s| s.fpr),
        micro_f1: if mp + mr == 0.0 {
            0.0
        } else {
            2.0 * mp * mr / (mp + mr)
        },
        per_class,
    }
}

/// Plant, disease and joint ("both") scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Averaging used for precision / recall / F1 / FPR.
    pub averaging: String,
    pub samples: usize,
    pub plant: TargetScores,
    pub disease: TargetScores,
    pub both: TargetScores,
}

impl MetricsReport {
    pub fn without_per_class(mut self) -> Self {
        for t in [&mut self.plant, &mut self.disease, &mut self.both] {
            t.per_class.clear();
        }
        self
    }
}

/// Evaluate aligned (plant, disease) truths and predictions.
///
/// The joint target uses the observed pairs of `space` plus one extra
/// "unknown" class for predicted pairs that were never observed.
pub fn joint_eval(
    truth: &[(usize, usize)],
    predicted: &[(usize, usize)],
    space: &JointLabelSpace,
) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let unknown = space.len();
    let mut tj = Vec::with_capacity(truth.len());
    let mut pj = Vec::with_capacity(truth.len());
    for (&(tp, td), &(pp, pd)) in truth.iter().zip(predicted) {
        let t = space.join(tp, td)?.ok_or_else(|| {
            Error::Label(format!(
                "ground-truth pair ({tp}, {td}) is not in the joint space"
            ))
        })?;
        tj.push(t);
        pj.push(space.join(pp, pd)?.unwrap_or(unknown));
    }
    let plant_t: Vec<usize> = truth.iter().map(|t| t.0).collect();
    let plant_p: Vec<usize> = predicted.iter().map(|t| t.0).collect();
    let dis_t: Vec<usize> = truth.iter().map(|t| t.1).collect();
    let dis_p: Vec<usize> = predicted.iter().map(|t| t.1).collect();
    Ok(MetricsReport {
        averaging: "macro".into(),
        samples: truth.len(),
        plant: scores(&confusion(&plant_t, &plant_p, space.plant().len())?),
        disease: scores(&confusion(&dis_t, &dis_p, space.disease().len())?),
        both: scores(&confusion(&tj, &pj, unknown + 1)?),
    })
}

/// Macro-F1 over a single target.
pub fn macro_f1(truth: &[usize], predicted: &[usize], classes: usize) -> Result<f64> {
    Ok(scores(&confusion(truth, predicted, classes)?).f1)
}
