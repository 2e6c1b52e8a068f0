//! Repeated stratified k-fold cross validation with training-fold
//! undersampling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::io::write_lines;
use crate::error::{Error, Result};
use crate::eval::logreg::{LogRegConfig, LogisticRegression};
use crate::eval::metrics::{auc, f1_macro};
use crate::eval::tasks::{Task, TaskDataset};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Auc,
    F1Macro,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::F1Macro => "f1_macro",
        }
    }

    /// AUC for the binary tasks, macro F1 for the four-class ones.
    pub fn for_task(task: Task) -> Self {
        if task.classes() == 2 {
            Metric::Auc
        } else {
            Metric::F1Macro
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auc" => Ok(Metric::Auc),
            "f1_macro" | "f1" | "f1-macro" => Ok(Metric::F1Macro),
            other => Err(Error::Unknown {
                what: "metric",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub repetitions: usize,
    pub undersample: bool,
    pub seed: u64,
    pub logreg: LogRegConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            repetitions: 30,
            undersample: true,
            seed: 0,
            logreg: LogRegConfig::default(),
        }
    }
}

/// Class counts seen by one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldDiagnostic {
    pub repetition: usize,
    pub fold: usize,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub task: Task,
    pub metric: Metric,
    pub folds: usize,
    pub repetitions: usize,
    pub undersample: bool,
    pub class_counts: Vec<usize>,
    /// Repetition-major.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub diagnostics: Vec<FoldDiagnostic>,
}

impl CvReport {
    /// Protocol breaches: unbalanced training folds (when undersampling) or
    /// test folds whose class counts differ from the stratified share of
    /// the full dataset.
    pub fn protocol_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for d in &self.diagnostics {
            let at = format!("repetition {} fold {}", d.repetition, d.fold);
            if self.undersample && d.train_counts.iter().any(|&c| c != d.train_counts[0]) {
                out.push(format!("{at}: training classes {:?} not balanced", d.train_counts));
            }
            for (c, (&t, &n)) in d.test_counts.iter().zip(&self.class_counts).enumerate() {
                let lo = n / self.folds;
                let hi = n.div_ceil(self.folds);
                if t < lo || t > hi {
                    out.push(format!("{at}: class {c} has {t} test rows, expected {lo}..={hi} of {n}"));
                }
            }
        }
        for r in 0..self.repetitions {
            let mut sum = vec![0; self.class_counts.len()];
            for d in self.diagnostics.iter().filter(|d| d.repetition == r) {
                for (s, t) in sum.iter_mut().zip(&d.test_counts) {
                    *s += t;
                }
            }
            if sum != self.class_counts {
                out.push(format!("repetition {r}: test folds cover {sum:?}, dataset has {:?}", self.class_counts));
            }
        }
        out
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-repetition seed derived from the base seed.
pub fn repetition_seed(seed: u64, repetition: usize) -> u64 {
    seed ^ (repetition as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Fold of every row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], k: usize, folds: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut fold = vec![0; labels.len()];
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % folds;
        }
    }
    fold
}

fn counts(labels: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for l in labels {
        c[l] += 1;
    }
    c
}

struct RepetitionResult {
    values: Vec<f64>,
    diagnostics: Vec<FoldDiagnostic>,
}

fn run_repetition(ds: &TaskDataset, cfg: &CvConfig, metric: Metric, rep: usize) -> Result<RepetitionResult> {
    let k = ds.classes();
    let labels = ds.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(repetition_seed(cfg.seed, rep));
    let fold_of = stratified_folds(&labels, k, cfg.folds, &mut rng);
    let mut values = Vec::with_capacity(cfg.folds);
    let mut diagnostics = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        let mut train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
        if cfg.undersample {
            let by_class: Vec<Vec<usize>> = (0..k)
                .map(|c| train.iter().copied().filter(|&i| labels[i] == c).collect())
                .collect();
            let minority = by_class.iter().map(Vec::len).min().unwrap_or(0);
            train = Vec::with_capacity(minority * k);
            for mut rows in by_class {
                rows.shuffle(&mut rng);
                rows.truncate(minority);
                train.extend(rows);
            }
            train.sort_unstable();
        }
        let xs: Vec<Vec<f64>> = train.iter().map(|&i| ds.rows[i].features.clone()).collect();
        let ys: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let model = LogisticRegression::fit(&xs, &ys, k, &cfg.logreg)?;
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let v = match metric {
            Metric::Auc => {
                let scores: Vec<f64> = test.iter().map(|&i| model.predict_proba(&ds.rows[i].features)[1]).collect();
                auc(&scores, &truth)?
            }
            Metric::F1Macro => {
                let pred: Vec<usize> = test.iter().map(|&i| model.predict(&ds.rows[i].features)).collect();
                f1_macro(&pred, &truth, k)?
            }
        };
        values.push(v);
        diagnostics.push(FoldDiagnostic {
            repetition: rep,
            fold: f,
            train_counts: counts(ys.into_iter(), k),
            test_counts: counts(truth.into_iter(), k),
        });
    }
    Ok(RepetitionResult { values, diagnostics })
}

/// Repetitions run through `exec`; results are assembled by repetition
/// index, so the report does not depend on scheduling.
pub fn cross_validate(ds: &TaskDataset, cfg: &CvConfig, metric: Metric, exec: &Exec) -> Result<CvReport> {
    if cfg.folds < 2 || cfg.repetitions == 0 {
        return Err(Error::Invalid(format!(
            "need at least 2 folds and 1 repetition, got {} and {}",
            cfg.folds, cfg.repetitions
        )));
    }
    if metric == Metric::Auc && ds.classes() != 2 {
        return Err(Error::Invalid(format!("AUC is defined for binary tasks, not {}", ds.task)));
    }
    let class_counts = ds.class_counts();
    if let Some((c, n)) = class_counts.iter().enumerate().find(|(_, n)| **n < cfg.folds) {
        return Err(Error::Infeasible(format!(
            "{}: class {c} has {n} rows, fewer than {} folds",
            ds.task, cfg.folds
        )));
    }
    let reps = exec.map_range(cfg.repetitions, |r| run_repetition(ds, cfg, metric, r));
    let mut values = Vec::new();
    let mut diagnostics = Vec::new();
    for r in reps {
        let r = r?;
        values.extend(r.values);
        diagnostics.extend(r.diagnostics);
    }
    let (mean, std) = mean_std(&values);
    Ok(CvReport {
        task: ds.task,
        metric,
        folds: cfg.folds,
        repetitions: cfg.repetitions,
        undersample: cfg.undersample,
        class_counts,
        values,
        mean,
        std,
        diagnostics,
    })
}

pub const CV_HEADER: &str = "task,metric,mean,std,repetitions,folds";

pub fn write_cv_reports(path: impl AsRef<Path>, reports: &[CvReport]) -> Result<()> {
    let lines = std::iter::once(CV_HEADER.to_string()).chain(reports.iter().map(|r| {
        format!("{},{},{},{},{},{}", r.task, r.metric, r.mean, r.std, r.repetitions, r.folds)
    }));
    write_lines(path.as_ref(), lines)
}
