//! Domain entities, interaction logs, patient features and static graphs.
//!
//! Everything here is immutable once constructed. Loaders live in [`io`],
//! referential checks in [`validate`].

pub mod io;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use io::{load_dataset, load_interactions, load_patient_features, DatasetFiles};
pub use validate::{validate_dataset, ValidationReport, Violation};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Patient,
    Doctor,
    Medication,
    Room,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Patient,
        EntityKind::Doctor,
        EntityKind::Medication,
        EntityKind::Room,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Patient => "patient",
            EntityKind::Doctor => "doctor",
            EntityKind::Medication => "medication",
            EntityKind::Room => "room",
        }
    }

    /// Prefix used by compact external ids such as `p12` or `m3`.
    pub fn id_prefix(self) -> char {
        match self {
            EntityKind::Patient => 'p',
            EntityKind::Doctor => 'd',
            EntityKind::Medication => 'm',
            EntityKind::Room => 'r',
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "patient" | "p" => Ok(EntityKind::Patient),
            "doctor" | "d" => Ok(EntityKind::Doctor),
            "medication" | "m" => Ok(EntityKind::Medication),
            "room" | "r" => Ok(EntityKind::Room),
            other => Err(Error::Unknown {
                what: "entity kind",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: usize,
}

impl EntityId {
    pub fn new(kind: EntityKind, index: usize) -> Self {
        EntityId { kind, index }
    }

    /// Parses the compact `<prefix><index>` form, e.g. `d17`.
    pub fn parse_compact(s: &str) -> Option<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let prefix = chars.next()?;
        let kind = EntityKind::ALL
            .into_iter()
            .find(|k| k.id_prefix() == prefix.to_ascii_lowercase())?;
        let index = chars.as_str().parse().ok()?;
        Some(EntityId { kind, index })
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.id_prefix(), self.index)
    }
}

/// The three interaction types; each pairs a patient with one other kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InteractionKind {
    Physician,
    Medication,
    Transfer,
}

impl InteractionKind {
    pub const ALL: [InteractionKind; 3] = [
        InteractionKind::Physician,
        InteractionKind::Medication,
        InteractionKind::Transfer,
    ];

    pub fn counterpart(self) -> EntityKind {
        match self {
            InteractionKind::Physician => EntityKind::Doctor,
            InteractionKind::Medication => EntityKind::Medication,
            InteractionKind::Transfer => EntityKind::Room,
        }
    }

    pub fn for_counterpart(kind: EntityKind) -> Option<Self> {
        match kind {
            EntityKind::Doctor => Some(InteractionKind::Physician),
            EntityKind::Medication => Some(InteractionKind::Medication),
            EntityKind::Room => Some(InteractionKind::Transfer),
            EntityKind::Patient => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            InteractionKind::Physician => "PHYS",
            InteractionKind::Medication => "MED",
            InteractionKind::Transfer => "TRANSFER",
        }
    }

    pub fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for InteractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PHYS" => Ok(InteractionKind::Physician),
            "MED" => Ok(InteractionKind::Medication),
            "TRANSFER" => Ok(InteractionKind::Transfer),
            other => Err(Error::Unknown {
                what: "interaction kind",
                name: other.to_string(),
            }),
        }
    }
}

/// One timestamped patient/entity event. The counterpart's kind is implied
/// by `kind`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub patient: usize,
    pub counterpart: usize,
    pub kind: InteractionKind,
    pub timestamp: f64,
}

impl Interaction {
    pub fn new(kind: InteractionKind, patient: usize, counterpart: usize, timestamp: f64) -> Self {
        Interaction {
            patient,
            counterpart,
            kind,
            timestamp,
        }
    }

    pub fn patient_id(&self) -> EntityId {
        EntityId::new(EntityKind::Patient, self.patient)
    }

    pub fn counterpart_id(&self) -> EntityId {
        EntityId::new(self.kind.counterpart(), self.counterpart)
    }
}

/// Time-sorted interaction stream. Equal timestamps keep input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionLog {
    events: Vec<Interaction>,
    horizon: f64,
}

impl InteractionLog {
    /// Stable-sorts `events` by timestamp. `horizon` defaults to the last
    /// timestamp when `None`.
    pub fn new(mut events: Vec<Interaction>, horizon: Option<f64>) -> Result<Self> {
        for (i, ev) in events.iter().enumerate() {
            if !ev.timestamp.is_finite() || ev.timestamp < 0.0 {
                return Err(Error::Invalid(format!(
                    "event {i} has invalid timestamp {}",
                    ev.timestamp
                )));
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let last = events.last().map_or(0.0, |e| e.timestamp);
        let horizon = horizon.unwrap_or(last);
        if horizon < last {
            return Err(Error::Invalid(format!(
                "horizon {horizon} precedes last event at {last}"
            )));
        }
        Ok(InteractionLog { events, horizon })
    }

    pub fn events(&self) -> &[Interaction] {
        &self.events
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for ev in &self.events {
            c[ev.kind.slot()] += 1;
        }
        c
    }

    /// Events of one kind, order preserved.
    pub fn filter_kind(&self, kind: InteractionKind) -> InteractionLog {
        InteractionLog {
            events: self.events.iter().copied().filter(|e| e.kind == kind).collect(),
            horizon: self.horizon,
        }
    }
}

/// Population sizes per entity kind. Indices are dense and 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Populations {
    pub patients: usize,
    pub doctors: usize,
    pub medications: usize,
    pub rooms: usize,
}

impl Populations {
    pub fn count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Patient => self.patients,
            EntityKind::Doctor => self.doctors,
            EntityKind::Medication => self.medications,
            EntityKind::Room => self.rooms,
        }
    }

    pub fn contains(&self, id: EntityId) -> bool {
        id.index < self.count(id.kind)
    }
}

/// Relates external identifiers to dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityMap {
    by_external: HashMap<(EntityKind, String), usize>,
    rows: Vec<(EntityKind, String, usize)>,
}

impl EntityMap {
    pub fn new(rows: Vec<(EntityKind, String, usize)>) -> Result<Self> {
        let mut by_external = HashMap::new();
        let mut seen = BTreeSet::new();
        for (kind, ext, idx) in &rows {
            if by_external.insert((*kind, ext.clone()), *idx).is_some() {
                return Err(Error::Invalid(format!("duplicate external id {kind}/{ext}")));
            }
            if !seen.insert((*kind, *idx)) {
                return Err(Error::Invalid(format!("duplicate index {kind}/{idx}")));
            }
        }
        Ok(EntityMap { by_external, rows })
    }

    /// Compact-id map `p0..pN` etc. for the given populations.
    pub fn compact(pop: &Populations) -> Self {
        let mut rows = Vec::new();
        for kind in EntityKind::ALL {
            for i in 0..pop.count(kind) {
                rows.push((kind, EntityId::new(kind, i).to_string(), i));
            }
        }
        EntityMap::new(rows).expect("compact ids are unique")
    }

    pub fn rows(&self) -> &[(EntityKind, String, usize)] {
        &self.rows
    }

    pub fn lookup(&self, kind: EntityKind, external: &str) -> Option<usize> {
        self.by_external.get(&(kind, external.to_string())).copied()
    }

    /// Population of each kind = number of mapped entities.
    pub fn populations(&self) -> Populations {
        let mut counts = [0usize; 4];
        for (kind, _, _) in &self.rows {
            counts[kind.slot()] += 1;
        }
        Populations {
            patients: counts[0],
            doctors: counts[1],
            medications: counts[2],
            rooms: counts[3],
        }
    }
}

/// Resolves an external id of an expected kind to a dense index.
pub trait EntityResolver {
    fn resolve(&self, kind: EntityKind, external: &str) -> Result<usize>;
}

/// Accepts compact ids such as `p3`, checking the prefix matches the kind.
pub struct CompactIds;

impl EntityResolver for CompactIds {
    fn resolve(&self, kind: EntityKind, external: &str) -> Result<usize> {
        match EntityId::parse_compact(external) {
            Some(id) if id.kind == kind => Ok(id.index),
            Some(id) => Err(Error::Invalid(format!(
                "id {external} is a {}, expected a {kind}",
                id.kind
            ))),
            None => Err(Error::Unknown {
                what: "entity id",
                name: external.to_string(),
            }),
        }
    }
}

impl EntityResolver for EntityMap {
    fn resolve(&self, kind: EntityKind, external: &str) -> Result<usize> {
        self.lookup(kind, external.trim()).ok_or_else(|| Error::Unknown {
            what: "entity id",
            name: format!("{kind}/{external}"),
        })
    }
}

/// Static and time-varying patient attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatientFeatures {
    static_dim: usize,
    dynamic_dim: usize,
    static_rows: BTreeMap<usize, Vec<f64>>,
    dynamic: BTreeMap<usize, Vec<(f64, Vec<f64>)>>,
}

impl PatientFeatures {
    /// Dynamic series are sorted by timestamp (stable).
    pub fn new(
        static_dim: usize,
        dynamic_dim: usize,
        static_rows: BTreeMap<usize, Vec<f64>>,
        mut dynamic: BTreeMap<usize, Vec<(f64, Vec<f64>)>>,
    ) -> Result<Self> {
        for (p, row) in &static_rows {
            if row.len() != static_dim {
                return Err(Error::Shape(format!(
                    "static features of p{p} have {} columns, expected {static_dim}",
                    row.len()
                )));
            }
        }
        for (p, series) in dynamic.iter_mut() {
            if !static_rows.contains_key(p) {
                return Err(Error::Invalid(format!(
                    "patient p{p} has dynamic features but no static row"
                )));
            }
            if let Some((_, v)) = series.iter().find(|(_, v)| v.len() != dynamic_dim) {
                return Err(Error::Shape(format!(
                    "dynamic features of p{p} have {} columns, expected {dynamic_dim}",
                    v.len()
                )));
            }
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        Ok(PatientFeatures {
            static_dim,
            dynamic_dim,
            static_rows,
            dynamic,
        })
    }

    pub fn static_dim(&self) -> usize {
        self.static_dim
    }

    pub fn dynamic_dim(&self) -> usize {
        self.dynamic_dim
    }

    pub fn contains(&self, patient: usize) -> bool {
        self.static_rows.contains_key(&patient)
    }

    pub fn patients(&self) -> impl Iterator<Item = usize> + '_ {
        self.static_rows.keys().copied()
    }

    pub fn static_features(&self, patient: usize) -> Result<&[f64]> {
        self.static_rows
            .get(&patient)
            .map(Vec::as_slice)
            .ok_or_else(|| unknown_patient(patient))
    }

    pub fn dynamic_series(&self, patient: usize) -> &[(f64, Vec<f64>)] {
        self.dynamic.get(&patient).map_or(&[], Vec::as_slice)
    }

    /// Latest dynamic observation at or before `t`; zeros before the first.
    pub fn dynamic_feature_at(&self, patient: usize, t: f64) -> Result<Vec<f64>> {
        Ok(self
            .dynamic_observation_at(patient, t)?
            .map_or_else(|| vec![0.0; self.dynamic_dim], |(_, v)| v.to_vec()))
    }

    /// The observation used by [`Self::dynamic_feature_at`], if any.
    pub fn dynamic_observation_at(&self, patient: usize, t: f64) -> Result<Option<(f64, &[f64])>> {
        if !self.contains(patient) {
            return Err(unknown_patient(patient));
        }
        let series = self.dynamic_series(patient);
        let n = series.partition_point(|(ts, _)| *ts <= t);
        Ok(n.checked_sub(1).map(|i| (series[i].0, series[i].1.as_slice())))
    }
}

fn unknown_patient(p: usize) -> Error {
    Error::Unknown {
        what: "patient",
        name: format!("p{p}"),
    }
}

/// Same-kind similarity graph: undirected, positive weights, no self loops,
/// at most one edge per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGraph {
    kind: EntityKind,
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl StaticGraph {
    pub fn new(kind: EntityKind, n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if kind == EntityKind::Patient {
            return Err(Error::Invalid("patients have no static graph".into()));
        }
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for (u, v, w) in edges {
            if u == v {
                return Err(Error::Invalid(format!("{kind} graph has a self loop at {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::Invalid(format!(
                    "{kind} graph edge ({u},{v}) outside 0..{n}"
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Invalid(format!(
                    "{kind} graph edge ({u},{v}) has non-positive weight {w}"
                )));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(Error::Invalid(format!(
                    "{kind} graph has duplicate edge ({},{})",
                    key.0, key.1
                )));
            }
            norm.push((key.0, key.1, w));
        }
        Ok(StaticGraph {
            kind,
            n,
            edges: norm,
        })
    }

    pub fn edgeless(kind: EntityKind, n: usize) -> Result<Self> {
        StaticGraph::new(kind, n, Vec::new())
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Medication hierarchy. Leaves are medications; inner nodes are sub-types.
#[derive(Debug, Clone, PartialEq)]
pub struct MedicationTree {
    parent: BTreeMap<String, String>,
    root: String,
    leaves: Vec<(String, usize)>,
}

impl MedicationTree {
    /// `pairs` are `(child, parent)`; `leaves` map tree node names to
    /// medication indices. Requires a single root and no cycles.
    pub fn new(pairs: Vec<(String, String)>, leaves: Vec<(String, usize)>) -> Result<Self> {
        let mut parent = BTreeMap::new();
        for (child, par) in pairs {
            if child == par {
                return Err(Error::Invalid(format!("tree node {child} is its own parent")));
            }
            if let Some(prev) = parent.insert(child.clone(), par.clone()) {
                if prev != par {
                    return Err(Error::Invalid(format!("tree node {child} has two parents")));
                }
            }
        }
        let nodes: BTreeSet<&String> = parent.keys().chain(parent.values()).collect();
        let roots: Vec<&String> = nodes
            .iter()
            .copied()
            .filter(|n| !parent.contains_key(*n))
            .collect();
        let root = match roots.as_slice() {
            [r] => (*r).clone(),
            [] if parent.is_empty() && leaves.len() == 1 => leaves[0].0.clone(),
            [] => return Err(Error::Invalid("medication tree has no root (cycle)".into())),
            many => {
                return Err(Error::Invalid(format!(
                    "medication tree has {} roots",
                    many.len()
                )))
            }
        };
        // every walk to the root must terminate
        for start in parent.keys() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent.get(cur) {
                cur = p;
                steps += 1;
                if steps > parent.len() {
                    return Err(Error::Invalid(format!("cycle through {start}")));
                }
            }
        }
        let children: BTreeSet<&String> = parent.values().collect();
        let mut seen_idx = BTreeSet::new();
        for (name, idx) in &leaves {
            if children.contains(name) {
                return Err(Error::Invalid(format!(
                    "medication {name} is not a leaf of the tree"
                )));
            }
            if !seen_idx.insert(*idx) {
                return Err(Error::Invalid(format!("medication index {idx} listed twice")));
            }
        }
        Ok(MedicationTree {
            parent,
            root,
            leaves,
        })
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn parent_of(&self, node: &str) -> Option<&str> {
        self.parent.get(node).map(String::as_str)
    }

    pub fn leaves(&self) -> &[(String, usize)] {
        &self.leaves
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.parent.iter().map(|(c, p)| (c.as_str(), p.as_str()))
    }
}

/// A loaded dataset: populations, log, features and the raw static
/// structure (room graph, doctor specialties, medication hierarchy).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub populations: Populations,
    pub entity_map: EntityMap,
    pub log: InteractionLog,
    pub features: PatientFeatures,
    pub room_graph: StaticGraph,
    pub doctor_specialties: BTreeMap<usize, String>,
    pub medication_tree: MedicationTree,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> PatientFeatures {
        let mut st = BTreeMap::new();
        st.insert(0, vec![1.0]);
        let mut dy = BTreeMap::new();
        dy.insert(0, vec![(4.0, vec![0.9]), (1.0, vec![0.5])]);
        PatientFeatures::new(1, 1, st, dy).unwrap()
    }

    #[test]
    fn dynamic_lookup_forward_fills() {
        let f = series();
        assert_eq!(f.dynamic_feature_at(0, 4.0).unwrap(), vec![0.9]);
        assert_eq!(f.dynamic_feature_at(0, 2.5).unwrap(), vec![0.5]);
        assert_eq!(f.dynamic_feature_at(0, 0.5).unwrap(), vec![0.0]);
        assert!(f.dynamic_feature_at(3, 1.0).is_err());
    }

    #[test]
    fn log_sorts_stably() {
        let p = InteractionKind::Physician;
        let log = InteractionLog::new(
            vec![
                Interaction::new(p, 0, 0, 5.0),
                Interaction::new(p, 1, 1, 5.0),
                Interaction::new(InteractionKind::Medication, 0, 0, 1.0),
            ],
            None,
        )
        .unwrap();
        let order: Vec<_> = log.events().iter().map(|e| (e.patient, e.kind)).collect();
        assert_eq!(
            order,
            vec![(0, InteractionKind::Medication), (0, p), (1, p)]
        );
        assert_eq!(log.counts(), [2, 1, 0]);
        assert_eq!(log.horizon(), 5.0);
    }

    #[test]
    fn negative_timestamp_rejected() {
        let ev = Interaction::new(InteractionKind::Transfer, 0, 0, -1.0);
        assert!(InteractionLog::new(vec![ev], None).is_err());
    }

    #[test]
    fn graph_invariants_enforced() {
        let k = EntityKind::Room;
        assert!(StaticGraph::new(k, 2, vec![(0, 0, 1.0)]).is_err());
        assert!(StaticGraph::new(k, 2, vec![(0, 2, 1.0)]).is_err());
        assert!(StaticGraph::new(k, 2, vec![(0, 1, 0.0)]).is_err());
        assert!(StaticGraph::new(k, 2, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        let g = StaticGraph::new(k, 3, vec![(1, 0, 1.0)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1, 1.0)]);
        assert!(!g.is_connected());
    }

    #[test]
    fn compact_ids_round_trip() {
        let id = EntityId::new(EntityKind::Medication, 42);
        assert_eq!(EntityId::parse_compact(&id.to_string()), Some(id));
        assert!(CompactIds.resolve(EntityKind::Doctor, "m3").is_err());
        assert_eq!(CompactIds.resolve(EntityKind::Doctor, "d3").unwrap(), 3);
    }

    #[test]
    fn tree_rejects_two_roots_and_cycles() {
        let s = |a: &str, b: &str| (a.to_string(), b.to_string());
        assert!(MedicationTree::new(vec![s("m0", "a"), s("m1", "b")], vec![]).is_err());
        assert!(MedicationTree::new(vec![s("a", "b"), s("b", "a")], vec![]).is_err());
        let t = MedicationTree::new(vec![s("m0", "root"), s("m1", "root")], vec![
            ("m0".into(), 0),
            ("m1".into(), 1),
        ])
        .unwrap();
        assert_eq!(t.root(), "root");
        assert!(MedicationTree::new(vec![s("m0", "root")], vec![("root".into(), 0)]).is_err());
    }
}
