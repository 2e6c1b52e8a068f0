//! Static embeddings and same-kind similarity structure.
//!
//! One-hot tables back the plain model; Bourgain coordinates over the
//! shortest-path metric of a static graph back the graph-aware variant.
//! Laplacians of the same graphs drive the domain loss.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{join_floats, write_lines};
use crate::data::{Dataset, EntityKind, MedicationTree, StaticGraph};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Which static embedding the counterpart kinds use. Patients are always
/// one-hot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StaticMode {
    #[default]
    OneHot,
    Bourgain,
}

impl StaticMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StaticMode::OneHot => "onehot",
            StaticMode::Bourgain => "bourgain",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            StaticMode::OneHot => 0,
            StaticMode::Bourgain => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(StaticMode::OneHot),
            1 => Some(StaticMode::Bourgain),
            _ => None,
        }
    }
}

impl fmt::Display for StaticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StaticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "onehot" | "one-hot" => Ok(StaticMode::OneHot),
            "bourgain" => Ok(StaticMode::Bourgain),
            other => Err(Error::Unknown {
                what: "static mode",
                name: other.to_string(),
            }),
        }
    }
}

/// Row `i` is the static embedding of entity `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEmbeddingTable {
    kind: EntityKind,
    dim: usize,
    rows: Vec<f64>,
}

impl StaticEmbeddingTable {
    pub fn new(kind: EntityKind, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                rows.len()
            )));
        }
        Ok(StaticEmbeddingTable { kind, dim, rows })
    }

    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// CSV `kind,index,c1,...,cdim`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut header = vec!["kind".to_string(), "index".to_string()];
        header.extend((1..=self.dim).map(|i| format!("c{i}")));
        let lines = std::iter::once(header.join(","))
            .chain((0..self.len()).map(|i| format!("{},{i},{}", self.kind, join_floats(self.row(i)))));
        write_lines(path.as_ref(), lines)
    }
}

pub fn onehot_table(kind: EntityKind, n: usize) -> Result<StaticEmbeddingTable> {
    if n == 0 {
        return Err(Error::Invalid(format!("one-hot table for an empty {kind} population")));
    }
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        rows[i * n + i] = 1.0;
    }
    StaticEmbeddingTable::new(kind, n, rows)
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties broken by node
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize, sentinel: f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    for d in &mut dist {
        if d.is_infinite() {
            *d = sentinel;
        }
    }
    dist
}

/// Distance assigned to unreachable pairs: `2 * total_weight + 1`.
pub fn unreachable_sentinel(g: &StaticGraph) -> f64 {
    2.0 * g.total_weight() + 1.0
}

/// All-pairs weighted shortest paths, one Dijkstra per source.
pub fn shortest_path_matrix(g: &StaticGraph, exec: &Exec) -> Vec<Vec<f64>> {
    let adj = g.adjacency();
    let sentinel = unreachable_sentinel(g);
    exec.map_range(g.n(), |s| dijkstra(&adj, s, sentinel))
}

/// `ceil(log2 n)`, at least 1.
pub fn default_bourgain_copies(n: usize) -> usize {
    let mut c = 0;
    while (1usize << c) < n {
        c += 1;
    }
    c.max(1)
}

fn bourgain_scales(n: usize) -> usize {
    // floor(log2 n), at least 1
    (usize::BITS - 1 - n.max(1).leading_zeros()).max(1) as usize
}

const BOURGAIN_MAX_RETRIES: usize = 32;

/// Bourgain coordinates: for scale `j` and copy `i`, a random set keeps each
/// node with probability `2^-j`; the coordinate is the distance to the set.
/// Coordinates are laid out scale-major, `(j - 1) * copies + i`.
pub fn bourgain_table(
    g: &StaticGraph,
    copies: usize,
    seed: u64,
    exec: &Exec,
) -> Result<StaticEmbeddingTable> {
    let n = g.n();
    if n == 0 {
        return Err(Error::Invalid(format!("Bourgain table for an empty {} graph", g.kind())));
    }
    if copies == 0 {
        return Err(Error::Invalid("Bourgain copies must be positive".into()));
    }
    let scales = bourgain_scales(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(scales * copies);
    for j in 1..=scales {
        let p = 0.5f64.powi(j as i32);
        for _ in 0..copies {
            let mut set = Vec::new();
            for _ in 0..BOURGAIN_MAX_RETRIES {
                set = (0..n).filter(|_| rng.random::<f64>() < p).collect();
                if !set.is_empty() {
                    break;
                }
            }
            if set.is_empty() {
                set.push(rng.random_range(0..n));
            }
            sets.push(set);
        }
    }
    let dist = shortest_path_matrix(g, exec);
    let dim = sets.len();
    let rows: Vec<Vec<f64>> = exec.map_range(n, |v| {
        sets.iter()
            .map(|set| set.iter().map(|&s| dist[v][s]).fold(f64::INFINITY, f64::min))
            .collect()
    });
    StaticEmbeddingTable::new(g.kind(), dim, rows.concat())
}

/// Same-specialty cliques with unit weights; `unknown` doctors stay isolated.
pub fn doctor_graph_from_specialties(
    specialty: &BTreeMap<usize, String>,
    n: usize,
) -> Result<StaticGraph> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for d in 0..n {
        let label = specialty
            .get(&d)
            .ok_or_else(|| Error::Invalid(format!("doctor d{d} has no specialty label")))?;
        if !label.eq_ignore_ascii_case("unknown") {
            groups.entry(label.as_str()).or_default().push(d);
        }
    }
    let mut edges = Vec::new();
    for members in groups.values() {
        for (a, &u) in members.iter().enumerate() {
            for &v in &members[a + 1..] {
                edges.push((u, v, 1.0));
            }
        }
    }
    StaticGraph::new(EntityKind::Doctor, n, edges)
}

/// Unit-weight edges between medications that share a parent.
pub fn medication_graph_from_tree(tree: &MedicationTree) -> Result<StaticGraph> {
    let n = tree.leaves().len();
    let mut by_parent: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (name, idx) in tree.leaves() {
        if *idx >= n {
            return Err(Error::Invalid(format!(
                "medication index {idx} not dense over {n} leaves"
            )));
        }
        match tree.parent_of(name) {
            Some(p) => by_parent.entry(p).or_default().push(*idx),
            None if name == tree.root() => {}
            None => {
                return Err(Error::Invalid(format!("medication leaf {name} has no parent")));
            }
        }
    }
    let mut edges = Vec::new();
    for members in by_parent.values_mut() {
        members.sort_unstable();
        for (a, &u) in members.iter().enumerate() {
            for &v in &members[a + 1..] {
                edges.push((u, v, 1.0));
            }
        }
    }
    StaticGraph::new(EntityKind::Medication, n, edges)
}

/// `L = D - A`. Stored dense; each row's neighbours are kept as well so
/// that products skip the (mostly zero) off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    kind: EntityKind,
    n: usize,
    matrix: Vec<f64>,
    /// `(j, w_ij)` for `j != i`.
    neighbours: Vec<Vec<(usize, f64)>>,
}

impl Laplacian {
    pub fn kind(&self) -> EntityKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Row `i` of `L E` for row-major `E` with `d` columns, summed as
    /// `w_ij (e_i - e_j)` so that constant rows give exactly zero.
    pub fn apply_row(&self, e: &[f64], d: usize, i: usize) -> Vec<f64> {
        let ei = &e[i * d..(i + 1) * d];
        let mut out = vec![0.0; d];
        for &(j, w) in &self.neighbours[i] {
            for ((o, a), b) in out.iter_mut().zip(ei).zip(&e[j * d..(j + 1) * d]) {
                *o += w * (a - b);
            }
        }
        out
    }

    fn check(&self, e: &[f64], d: usize) -> Result<()> {
        if d == 0 || e.len() != self.n * d {
            return Err(Error::Shape(format!(
                "{} embedding values for a {}-node {} Laplacian with dim {d}",
                e.len(),
                self.n,
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn laplacian(g: &StaticGraph) -> Laplacian {
    let n = g.n();
    let mut matrix = vec![0.0; n * n];
    for &(u, v, w) in g.edges() {
        matrix[u * n + v] -= w;
        matrix[v * n + u] -= w;
        matrix[u * n + u] += w;
        matrix[v * n + v] += w;
    }
    let neighbours = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let x = matrix[i * n + j];
                    (j != i && x != 0.0).then_some((j, -x))
                })
                .collect()
        })
        .collect();
    Laplacian {
        kind: g.kind(),
        n,
        matrix,
        neighbours,
    }
}

/// `trace(Eᵀ L E)` for row-major `E` (`n` rows of width `d`).
pub fn laplacian_quadratic(l: &Laplacian, e: &[f64], d: usize) -> Result<f64> {
    l.check(e, d)?;
    let mut total = 0.0;
    for i in 0..l.n {
        let row = l.apply_row(e, d, i);
        total += crate::linalg::dot(&e[i * d..(i + 1) * d], &row);
    }
    // rounding can leave a tiny negative value
    Ok(total.max(0.0))
}

/// The three same-kind similarity graphs.
#[derive(Debug, Clone)]
pub struct DomainGraphs {
    pub doctor: StaticGraph,
    pub medication: StaticGraph,
    pub room: StaticGraph,
}

impl DomainGraphs {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let medication = medication_graph_from_tree(&ds.medication_tree)?;
        if medication.n() != ds.populations.medications {
            return Err(Error::Invalid(format!(
                "medication tree has {} leaves but {} medications are registered",
                medication.n(),
                ds.populations.medications
            )));
        }
        let room = if ds.room_graph.n() < ds.populations.rooms {
            // pad isolated rooms so every room has a node
            StaticGraph::new(EntityKind::Room, ds.populations.rooms, ds.room_graph.edges().to_vec())?
        } else {
            ds.room_graph.clone()
        };
        Ok(DomainGraphs {
            doctor: doctor_graph_from_specialties(&ds.doctor_specialties, ds.populations.doctors)?,
            medication,
            room,
        })
    }

    pub fn get(&self, kind: EntityKind) -> Option<&StaticGraph> {
        match kind {
            EntityKind::Doctor => Some(&self.doctor),
            EntityKind::Medication => Some(&self.medication),
            EntityKind::Room => Some(&self.room),
            EntityKind::Patient => None,
        }
    }

    pub fn laplacians(&self) -> Laplacians {
        Laplacians {
            doctor: laplacian(&self.doctor),
            medication: laplacian(&self.medication),
            room: laplacian(&self.room),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Laplacians {
    pub doctor: Laplacian,
    pub medication: Laplacian,
    pub room: Laplacian,
}

impl Laplacians {
    pub fn get(&self, kind: EntityKind) -> Option<&Laplacian> {
        match kind {
            EntityKind::Doctor => Some(&self.doctor),
            EntityKind::Medication => Some(&self.medication),
            EntityKind::Room => Some(&self.room),
            EntityKind::Patient => None,
        }
    }
}

/// Static embeddings for the three counterpart kinds.
#[derive(Debug, Clone)]
pub struct StaticTables {
    pub mode: StaticMode,
    pub doctor: StaticEmbeddingTable,
    pub medication: StaticEmbeddingTable,
    pub room: StaticEmbeddingTable,
}

/// How to build the static tables; `copies = None` uses `ceil(log2 n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticSpec {
    pub mode: StaticMode,
    pub copies: Option<usize>,
    pub seed: u64,
}

impl StaticTables {
    pub fn build(graphs: &DomainGraphs, spec: StaticSpec, exec: &Exec) -> Result<Self> {
        let make = |g: &StaticGraph| match spec.mode {
            StaticMode::OneHot => onehot_table(g.kind(), g.n()),
            StaticMode::Bourgain => {
                let copies = spec.copies.unwrap_or_else(|| default_bourgain_copies(g.n()));
                // distinct stream per kind
                bourgain_table(g, copies, spec.seed ^ ((g.kind().slot() as u64) << 32), exec)
            }
        };
        Ok(StaticTables {
            mode: spec.mode,
            doctor: make(&graphs.doctor)?,
            medication: make(&graphs.medication)?,
            room: make(&graphs.room)?,
        })
    }

    pub fn get(&self, kind: EntityKind) -> Option<&StaticEmbeddingTable> {
        match kind {
            EntityKind::Doctor => Some(&self.doctor),
            EntityKind::Medication => Some(&self.medication),
            EntityKind::Room => Some(&self.room),
            EntityKind::Patient => None,
        }
    }
}
