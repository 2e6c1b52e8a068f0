//! Downstream evaluation: task datasets from embedding snapshots, logistic
//! regression under repeated stratified cross validation, AUC / macro F1,
//! and group dispersion.

pub mod cv;
pub mod logreg;
pub mod metrics;
pub mod outcomes;
pub mod tasks;
pub mod trajectory;

pub use cv::{cross_validate, write_cv_reports, CvConfig, CvReport, FoldDiagnostic, Metric};
pub use logreg::{LogRegConfig, LogisticRegression};
pub use metrics::{auc, dispersion, f1_macro};
pub use outcomes::{load_outcomes, write_outcomes, OutcomeClass, OutcomeTable, PatientOutcome};
pub use tasks::{
    build_cdi_dataset, build_micu_dataset, build_outcome_dataset, build_task_dataset, Task, TaskDataset, TaskRow,
};
pub use trajectory::Trajectory;

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::io::{write_lines, Rows};
use crate::data::{EntityId, EntityKind};
use crate::error::{Error, Result};

/// Named, disjoint, non-empty groups of one entity kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub kind: EntityKind,
    pub groups: Vec<(String, Vec<usize>)>,
}

impl Grouping {
    pub fn new(kind: EntityKind, groups: Vec<(String, Vec<usize>)>, population: usize) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Invalid("grouping has no groups".into()));
        }
        let mut seen = BTreeMap::new();
        for (name, members) in &groups {
            if members.is_empty() {
                return Err(Error::Invalid(format!("group {name:?} is empty")));
            }
            for &m in members {
                if m >= population {
                    return Err(Error::Unknown {
                        what: "entity",
                        name: EntityId::new(kind, m).to_string(),
                    });
                }
                if let Some(other) = seen.insert(m, name) {
                    return Err(Error::Invalid(format!(
                        "{} is in both {other:?} and {name:?}",
                        EntityId::new(kind, m)
                    )));
                }
            }
        }
        Ok(Grouping { kind, groups })
    }

    /// One group per label, in label order.
    pub fn from_labels(kind: EntityKind, labels: &BTreeMap<usize, String>, population: usize) -> Result<Self> {
        let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels {
            by.entry(l.as_str()).or_default().push(*i);
        }
        let groups = by.into_iter().map(|(l, m)| (l.to_string(), m)).collect();
        Grouping::new(kind, groups, population)
    }

    /// CSV `entity_id,group` with compact ids of one kind.
    pub fn load(path: impl AsRef<Path>, population_of: impl Fn(EntityKind) -> usize) -> Result<Self> {
        let path = path.as_ref();
        let mut rows = Rows::open(path, true)?;
        rows.expect_header_prefix(&["entity_id", "group"])?;
        let mut kind = None;
        let mut labels = BTreeMap::new();
        rows.for_each(|line, rec| {
            let perr = |m: String| Error::parse(path, line, m);
            if rec.len() != 2 {
                return Err(perr(format!("expected 2 columns, found {}", rec.len())));
            }
            let id = EntityId::parse_compact(&rec[0]).ok_or_else(|| perr(format!("bad entity id {:?}", &rec[0])))?;
            match kind {
                None => kind = Some(id.kind),
                Some(k) if k != id.kind => return Err(perr(format!("mixed entity kinds ({k} and {})", id.kind))),
                _ => {}
            }
            if labels.insert(id.index, rec[1].to_string()).is_some() {
                return Err(perr(format!("{id} listed twice")));
            }
            Ok(())
        })?;
        let kind = kind.ok_or_else(|| Error::Invalid(format!("{}: grouping is empty", path.display())))?;
        Grouping::from_labels(kind, &labels, population_of(kind))
    }
}

pub const DISPERSION_HEADER: &str = "group_i,group_j,dispersion";

pub fn write_dispersion(path: impl AsRef<Path>, names: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    let lines = std::iter::once(DISPERSION_HEADER.to_string()).chain(names.iter().enumerate().flat_map(
        |(i, a)| {
            names
                .iter()
                .enumerate()
                .map(move |(j, b)| format!("{a},{b},{}", matrix[i][j]))
        },
    ));
    write_lines(path.as_ref(), lines)
}
