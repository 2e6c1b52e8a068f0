//! Referential integrity checks across a dataset.

use std::collections::BTreeSet;
use std::fmt;

use super::{EntityId, InteractionLog, PatientFeatures, Populations, StaticGraph};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Event `event` references an entity outside its population.
    UnknownEntity { event: usize, entity: EntityId },
    /// A patient that appears in the log has no feature row.
    MissingFeatures { patient: usize },
    /// A graph has more nodes than its population.
    GraphOutOfRange {
        graph: super::EntityKind,
        nodes: usize,
        population: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownEntity { event, entity } => {
                write!(f, "event {event} references unregistered {} {entity}", entity.kind)
            }
            Violation::MissingFeatures { patient } => {
                write!(f, "patient p{patient} appears in the log but has no features")
            }
            Violation::GraphOutOfRange {
                graph,
                nodes,
                population,
            } => write!(
                f,
                "{graph} graph has {nodes} nodes but only {population} {graph}s are registered"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "dataset is consistent");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Never fails; an empty report means the dataset is consistent.
pub fn validate_dataset(
    populations: &Populations,
    log: &InteractionLog,
    features: &PatientFeatures,
    graphs: &[&StaticGraph],
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut missing = BTreeSet::new();
    for (i, ev) in log.events().iter().enumerate() {
        for id in [ev.patient_id(), ev.counterpart_id()] {
            if !populations.contains(id) {
                violations.push(Violation::UnknownEntity { event: i, entity: id });
            }
        }
        if !features.contains(ev.patient) {
            missing.insert(ev.patient);
        }
    }
    violations.extend(
        missing
            .into_iter()
            .map(|patient| Violation::MissingFeatures { patient }),
    );
    for g in graphs {
        let population = populations.count(g.kind());
        if g.n() > population {
            violations.push(Violation::GraphOutOfRange {
                graph: g.kind(),
                nodes: g.n(),
                population,
            });
        }
    }
    ValidationReport { violations }
}
