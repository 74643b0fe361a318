//! Success-detection evaluation: F1 at a fixed score threshold over
//! in-distribution and OOD splits, rollout success tables, and a small
//! nearest-centroid success detector for synthetic drawer scenes.

pub mod toy;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("method `{method}` has no {split} predictions")]
    MissingSplit { method: String, split: Split },
    #[error("method `{method}` has more than one {split} set")]
    DuplicateSplit { method: String, split: Split },
    #[error("training data needs both classes, found only {0}")]
    SingleClass(Label),
    #[error("training data is empty")]
    NoTrainingData,
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Success,
    Failure,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Success => "success",
            Label::Failure => "failure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    InDistribution,
    Ood,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::InDistribution => "in_distribution",
            Split::Ood => "ood",
        })
    }
}

/// One row of a prediction file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub split: Split,
    pub items: Vec<Scored>,
}

impl PredictionSet {
    pub fn new(split: Split, items: Vec<Scored>) -> Result<Self, EvalError> {
        if let Some(bad) = items.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
            return Err(EvalError::ScoreOutOfRange(bad.score));
        }
        Ok(Self { split, items })
    }

    /// Items whose confusion counts at threshold 0.5 are exactly `c`.
    pub fn from_confusion(split: Split, c: Confusion) -> Self {
        let mut items = Vec::new();
        let mut push = |n: u64, score: f64, label: Label| {
            items.extend((0..n).map(|_| Scored { score, label }));
        };
        push(c.tp, 0.9, Label::Success);
        push(c.fp, 0.9, Label::Failure);
        push(c.fn_, 0.1, Label::Success);
        push(c.tn, 0.1, Label::Failure);
        Self { split, items }
    }

    /// Group prediction-file rows by split, keeping file order within a split.
    pub fn group(rows: &[Prediction]) -> Result<Vec<PredictionSet>, EvalError> {
        let mut by_split: BTreeMap<Split, Vec<Scored>> = BTreeMap::new();
        for r in rows {
            by_split.entry(r.split).or_default().push(Scored {
                score: r.score,
                label: r.label,
            });
        }
        by_split.into_iter().map(|(split, items)| PredictionSet::new(split, items)).collect()
    }
}

pub fn load_predictions(path: &std::path::Path) -> Result<Vec<Prediction>, EvalError> {
    Ok(crate::store::read_json(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

impl F1Score {
    /// Precision or recall with no denominator count as 0, and F1 is 0 when
    /// both are 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            confusion: c,
        }
    }
}

pub fn confusion(set: &PredictionSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for s in &set.items {
        match (s.score >= threshold, s.label) {
            (true, Label::Success) => c.tp += 1,
            (true, Label::Failure) => c.fp += 1,
            (false, Label::Success) => c.fn_ += 1,
            (false, Label::Failure) => c.tn += 1,
        }
    }
    c
}

/// Scores at or above `threshold` are predicted successes.
pub fn f1(set: &PredictionSet, threshold: f64) -> F1Score {
    F1Score::from_confusion(confusion(set, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodPredictions {
    pub method: String,
    pub sets: Vec<PredictionSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub in_distribution: F1Score,
    pub ood: F1Score,
    /// F1 of the pooled confusion counts.
    pub overall: F1Score,
    /// Unweighted mean of the two split F1 values, for comparison.
    pub overall_mean_of_splits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub methods: Vec<MethodReport>,
}

pub fn evaluate_splits(methods: &[MethodPredictions], threshold: f64) -> Result<EvalReport, EvalError> {
    let mut reports = Vec::with_capacity(methods.len());
    for m in methods {
        let find = |split: Split| -> Result<&PredictionSet, EvalError> {
            let mut it = m.sets.iter().filter(|s| s.split == split);
            let first = it.next().ok_or_else(|| EvalError::MissingSplit {
                method: m.method.clone(),
                split,
            })?;
            if it.next().is_some() {
                return Err(EvalError::DuplicateSplit {
                    method: m.method.clone(),
                    split,
                });
            }
            Ok(first)
        };
        let id = f1(find(Split::InDistribution)?, threshold);
        let ood = f1(find(Split::Ood)?, threshold);
        reports.push(MethodReport {
            method: m.method.clone(),
            in_distribution: id,
            ood,
            overall: F1Score::from_confusion(id.confusion + ood.confusion),
            overall_mean_of_splits: (id.f1 + ood.f1) / 2.0,
        });
    }
    Ok(EvalReport {
        threshold,
        methods: reports,
    })
}

impl EvalReport {
    /// Text table: rows Overall / In-Distribution set / OOD set, one column
    /// per method, two decimals.
    pub fn render_table(&self) -> String {
        let row_labels = ["Overall", "In-Distribution set", "OOD set"];
        let first_w = row_labels.iter().map(|s| s.len()).max().unwrap_or(0);
        let col_w: Vec<usize> = self.methods.iter().map(|m| m.method.len().max(4)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:first_w$}", "");
        for (m, w) in self.methods.iter().zip(&col_w) {
            let _ = write!(out, " | {:>w$}", m.method);
        }
        out.push('\n');
        for (i, label) in row_labels.iter().enumerate() {
            let _ = write!(out, "{label:first_w$}");
            for (m, w) in self.methods.iter().zip(&col_w) {
                let v = match i {
                    0 => m.overall.f1,
                    1 => m.in_distribution.f1,
                    _ => m.ood.f1,
                };
                let _ = write!(out, " | {:>w$}", format!("{v:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub name: String,
    pub tasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub task: String,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRate {
    pub task: String,
    pub episodes: usize,
    pub successes: usize,
    /// `None` when the task has no rollouts.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRate {
    pub family: String,
    pub tasks: Vec<TaskRate>,
    /// Unweighted mean over tasks that have a rate.
    pub rate: Option<f64>,
}

/// Per-task success fractions and family means. Rollouts for tasks outside
/// every family are ignored.
pub fn success_rate_table(families: &[TaskFamily], rollouts: &[Rollout]) -> Vec<FamilyRate> {
    families
        .iter()
        .map(|fam| {
            let tasks: Vec<TaskRate> = fam
                .tasks
                .iter()
                .map(|task| {
                    let runs: Vec<bool> = rollouts.iter().filter(|r| &r.task == task).map(|r| r.success).collect();
                    let successes = runs.iter().filter(|&&s| s).count();
                    TaskRate {
                        task: task.clone(),
                        episodes: runs.len(),
                        successes,
                        rate: (!runs.is_empty()).then(|| successes as f64 / runs.len() as f64),
                    }
                })
                .collect();
            let present: Vec<f64> = tasks.iter().filter_map(|t| t.rate).collect();
            let rate = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            FamilyRate {
                family: fam.name.clone(),
                tasks,
                rate,
            }
        })
        .collect()
}
