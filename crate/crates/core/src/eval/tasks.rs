//! Downstream task datasets built from outcome labels and embedding
//! snapshots.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SECONDS_PER_DAY;
use crate::error::{Error, Result};
use crate::eval::outcomes::{OutcomeTable, PatientOutcome};
use crate::eval::trajectory::Trajectory;

/// Minimum time from admission before a MICU transfer counts.
pub const MICU_MIN_DAYS: f64 = 3.0;
/// Positive MICU rows look this far ahead of the transfer.
pub const MICU_LEAD_DAYS: f64 = 1.0;
/// Positive CDI rows are taken this long before the report.
pub const CDI_LEAD_DAYS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Micu,
    Cdi,
    Mortality,
    Severity,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Micu, Task::Cdi, Task::Mortality, Task::Severity];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Micu => "micu",
            Task::Cdi => "cdi",
            Task::Mortality => "mortality",
            Task::Severity => "severity",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Task::Micu | Task::Cdi => 2,
            Task::Mortality | Task::Severity => 4,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Task::ALL.into_iter().find(|k| k.as_str() == t).ok_or(Error::Unknown {
            what: "task",
            name: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub patient: usize,
    pub time: f64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: Task,
    pub rows: Vec<TaskRow>,
}

impl TaskDataset {
    pub fn classes(&self) -> usize {
        self.task.classes()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes()];
        for r in &self.rows {
            c[r.label] += 1;
        }
        c
    }

    /// Same rows with labels permuted; the null control for recovery checks.
    pub fn shuffled_labels(&self, seed: u64) -> TaskDataset {
        use rand::seq::SliceRandom;
        let mut labels = self.labels();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let rows = self
            .rows
            .iter()
            .zip(labels)
            .map(|(r, label)| TaskRow { label, ..r.clone() })
            .collect();
        TaskDataset { task: self.task, rows }
    }
}

/// End of a uniformly drawn whole day of the stay (capped at discharge).
fn sample_in_stay(o: &PatientOutcome, rng: &mut ChaCha8Rng) -> f64 {
    let days = ((o.discharge - o.admission) / SECONDS_PER_DAY).ceil().max(1.0) as u64;
    let d = rng.random_range(0..days);
    (o.admission + (d + 1) as f64 * SECONDS_PER_DAY).min(o.discharge)
}

fn row(traj: &Trajectory, patient: usize, time: f64, label: usize) -> Result<TaskRow> {
    Ok(TaskRow {
        patient,
        time,
        features: traj.snapshot_embedding(patient, time)?,
        label,
    })
}

fn no_positives(task: Task) -> Error {
    Error::Infeasible(format!("task {task} has no positive instances"))
}

/// Positives: the latest transfer, when at least three days after
/// admission, snapshot one day earlier. Patients whose only transfers are
/// too early are left out. Negatives: one random in-stay day.
pub fn build_micu_dataset(outcomes: &OutcomeTable, traj: &Trajectory, seed: u64) -> Result<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (p, o) in outcomes.iter() {
        match o.micu_transfers.last() {
            Some(&t) if t - o.admission >= MICU_MIN_DAYS * SECONDS_PER_DAY => {
                rows.push(row(traj, p, t - MICU_LEAD_DAYS * SECONDS_PER_DAY, 1)?);
            }
            Some(_) => log::debug!("p{p}: MICU transfer within {MICU_MIN_DAYS} days of admission, excluded"),
            None => {
                let t = sample_in_stay(o, &mut rng);
                rows.push(row(traj, p, t, 0)?);
            }
        }
    }
    if !rows.iter().any(|r| r.label == 1) {
        return Err(no_positives(Task::Micu));
    }
    Ok(TaskDataset { task: Task::Micu, rows })
}

/// Positives three days before the report; reports earlier than that after
/// admission are skipped with a warning. Negatives: one random in-stay day.
pub fn build_cdi_dataset(outcomes: &OutcomeTable, traj: &Trajectory, seed: u64) -> Result<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (p, o) in outcomes.iter() {
        match o.cdi_report {
            Some(t) => {
                let snap = t - CDI_LEAD_DAYS * SECONDS_PER_DAY;
                if snap < o.admission {
                    log::warn!("p{p}: CDI report less than {CDI_LEAD_DAYS} days after admission, skipped");
                    continue;
                }
                rows.push(row(traj, p, snap, 1)?);
            }
            None => {
                let t = sample_in_stay(o, &mut rng);
                rows.push(row(traj, p, t, 0)?);
            }
        }
    }
    if !rows.iter().any(|r| r.label == 1) {
        return Err(no_positives(Task::Cdi));
    }
    Ok(TaskDataset { task: Task::Cdi, rows })
}

/// One row per labeled patient at discharge.
pub fn build_outcome_dataset(task: Task, outcomes: &OutcomeTable, traj: &Trajectory) -> Result<TaskDataset> {
    let mut rows = Vec::new();
    for (p, o) in outcomes.iter() {
        let label = match task {
            Task::Mortality => o.mortality,
            Task::Severity => o.severity,
            _ => return Err(Error::Invalid(format!("{task} is not a discharge outcome task"))),
        };
        if let Some(c) = label {
            rows.push(row(traj, p, o.discharge, c.index())?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Infeasible(format!("no patient has a {task} label")));
    }
    Ok(TaskDataset { task, rows })
}

pub fn build_task_dataset(task: Task, outcomes: &OutcomeTable, traj: &Trajectory, seed: u64) -> Result<TaskDataset> {
    match task {
        Task::Micu => build_micu_dataset(outcomes, traj, seed),
        Task::Cdi => build_cdi_dataset(outcomes, traj, seed),
        Task::Mortality | Task::Severity => build_outcome_dataset(task, outcomes, traj),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityKind, Populations};
    use crate::dynamics::DeltaScale;
    use crate::eval::outcomes::OutcomeClass;
    use std::collections::BTreeMap;

    const DAY: f64 = SECONDS_PER_DAY;

    fn traj(n: usize) -> Trajectory {
        let pop = Populations {
            patients: n,
            doctors: 1,
            medications: 1,
            rooms: 1,
        };
        let mut t = Trajectory::new(1, &pop, DeltaScale(DAY), vec![0.0]).unwrap();
        for p in 0..n {
            for day in 0..12 {
                t.push(EntityKind::Patient, p, day as f64 * DAY, vec![day as f64]).unwrap();
            }
        }
        t
    }

    fn table(rows: Vec<(usize, PatientOutcome)>) -> OutcomeTable {
        OutcomeTable::new(rows.into_iter().collect::<BTreeMap<_, _>>()).unwrap()
    }

    #[test]
    fn micu_rules() {
        let mut early = PatientOutcome::stay(0.0, 10.0 * DAY);
        early.micu_transfers = vec![2.0 * DAY];
        let mut twice = PatientOutcome::stay(0.0, 10.0 * DAY);
        twice.micu_transfers = vec![4.0 * DAY, 6.0 * DAY];
        let none = PatientOutcome::stay(0.0, 10.0 * DAY);
        let t = table(vec![(0, early), (1, twice), (2, none)]);
        let ds = build_micu_dataset(&t, &traj(3), 5).unwrap();
        assert_eq!(ds.rows.len(), 2);
        let pos = &ds.rows[0];
        assert_eq!((pos.patient, pos.time, pos.label), (1, 5.0 * DAY, 1));
        assert_eq!(pos.features, vec![5.0]);
        let neg = &ds.rows[1];
        assert_eq!((neg.patient, neg.label), (2, 0));
        assert!(neg.time > 0.0 && neg.time <= 10.0 * DAY);
        let again = build_micu_dataset(&t, &traj(3), 5).unwrap();
        assert_eq!(again, ds);
    }

    #[test]
    fn micu_without_positives_fails() {
        let t = table(vec![(0, PatientOutcome::stay(0.0, DAY))]);
        assert!(matches!(build_micu_dataset(&t, &traj(1), 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn cdi_rules() {
        let mut a = PatientOutcome::stay(0.0, 11.0 * DAY);
        a.cdi_report = Some(10.0 * DAY);
        let mut early = PatientOutcome::stay(0.0, 11.0 * DAY);
        early.cdi_report = Some(2.0 * DAY);
        let t = table(vec![(0, a), (1, early), (2, PatientOutcome::stay(DAY, 3.0 * DAY))]);
        let ds = build_cdi_dataset(&t, &traj(3), 1).unwrap();
        assert_eq!(ds.rows.len(), 2);
        assert_eq!((ds.rows[0].time, ds.rows[0].label), (7.0 * DAY, 1));
        let neg = &ds.rows[1];
        assert!(neg.time >= DAY && neg.time <= 3.0 * DAY);
        let t = table(vec![(0, PatientOutcome::stay(0.0, DAY))]);
        assert!(build_cdi_dataset(&t, &traj(1), 1).is_err());
    }

    #[test]
    fn outcome_rows_at_discharge() {
        let rows = (0..5)
            .map(|p| {
                let mut o = PatientOutcome::stay(0.0, (p + 1) as f64 * DAY);
                o.mortality = OutcomeClass::from_index(p);
                (p, o)
            })
            .collect();
        let t = table(rows);
        let tr = traj(5);
        let ds = build_outcome_dataset(Task::Mortality, &t, &tr).unwrap();
        assert_eq!(ds.labels(), vec![0, 1, 2, 3]);
        for r in &ds.rows {
            assert_eq!(r.features, tr.snapshot_embedding(r.patient, r.time).unwrap());
            assert_eq!(r.time, (r.patient + 1) as f64 * DAY);
        }
        assert!(build_outcome_dataset(Task::Severity, &t, &tr).is_err());
    }

    #[test]
    fn task_names() {
        assert_eq!("CDI".parse::<Task>().unwrap(), Task::Cdi);
        assert!("sepsis".parse::<Task>().is_err());
    }
}
