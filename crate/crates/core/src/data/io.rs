//! CSV formats for interaction logs, features, graphs and entity maps.
//!
//! All readers report the 1-based line of the offending row. Writers emit
//! floats with Rust's shortest round-trip formatting, so a load/write/load
//! cycle is the identity.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{
    CompactIds, Dataset, EntityKind, EntityMap, EntityResolver, Interaction,
    InteractionKind, InteractionLog, MedicationTree, PatientFeatures, StaticGraph,
};
use crate::error::{Error, Result};

pub const INTERACTIONS_HEADER: &str = "patient_id,entity_id,kind,timestamp";

/// Standard file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub interactions: PathBuf,
    pub patients_static: PathBuf,
    pub patients_dynamic: PathBuf,
    pub room_graph: PathBuf,
    pub doctor_specialties: PathBuf,
    pub medication_tree: PathBuf,
    pub medication_leaves: PathBuf,
    pub entity_map: PathBuf,
    pub outcomes: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        DatasetFiles {
            interactions: d.join("interactions.csv"),
            patients_static: d.join("patients_static.csv"),
            patients_dynamic: d.join("patients_dynamic.csv"),
            room_graph: d.join("room_graph.csv"),
            doctor_specialties: d.join("doctor_specialties.csv"),
            medication_tree: d.join("medication_tree.csv"),
            medication_leaves: d.join("medication_leaves.csv"),
            entity_map: d.join("entity_map.csv"),
            outcomes: d.join("outcomes.csv"),
        }
    }
}

pub(crate) struct Rows {
    path: PathBuf,
    reader: csv::Reader<File>,
    pub header: Vec<String>,
}

impl Rows {
    pub(crate) fn open(path: &Path, has_header: bool) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(has_header)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = if has_header {
            reader
                .headers()
                .map_err(|e| Error::Csv {
                    path: path.into(),
                    source: e,
                })?
                .iter()
                .map(str::to_string)
                .collect()
        } else {
            Vec::new()
        };
        Ok(Rows {
            path: path.into(),
            reader,
            header,
        })
    }

    pub(crate) fn expect_header_prefix(&self, prefix: &[&str]) -> Result<()> {
        let ok = self.header.len() >= prefix.len()
            && prefix.iter().zip(&self.header).all(|(a, b)| a == b);
        if ok {
            Ok(())
        } else {
            Err(Error::parse(
                &self.path,
                1,
                format!("header {:?} does not start with {:?}", self.header, prefix),
            ))
        }
    }

    /// Visits each record with its line number.
    pub(crate) fn for_each(
        &mut self,
        mut f: impl FnMut(u64, &csv::StringRecord) -> Result<()>,
    ) -> Result<()> {
        let mut rec = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut rec) {
                Ok(true) => {
                    let line = rec.position().map_or(0, |p| p.line());
                    if rec.len() == 1 && rec[0].is_empty() {
                        continue;
                    }
                    f(line, &rec)?;
                }
                Ok(false) => return Ok(()),
                Err(e) => {
                    return Err(Error::Csv {
                        path: self.path.clone(),
                        source: e,
                    })
                }
            }
        }
    }
}

pub(crate) fn parse_f64(path: &Path, line: u64, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::parse(path, line, format!("cannot parse {what} {field:?}")))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Loads `interactions.csv` using compact ids (`p0`, `d3`, ...).
pub fn load_interactions(path: impl AsRef<Path>) -> Result<InteractionLog> {
    load_interactions_with(path, &CompactIds)
}

pub fn load_interactions_with(
    path: impl AsRef<Path>,
    ids: &dyn EntityResolver,
) -> Result<InteractionLog> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, true)?;
    rows.expect_header_prefix(&["patient_id", "entity_id", "kind", "timestamp"])?;
    let mut events = Vec::new();
    rows.for_each(|line, rec| {
        if rec.len() != 4 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 4 columns, found {}", rec.len()),
            ));
        }
        let kind: InteractionKind = rec[2]
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let patient = ids
            .resolve(EntityKind::Patient, &rec[0])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        let counterpart = ids
            .resolve(kind.counterpart(), &rec[1])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        let ts = parse_f64(path, line, &rec[3], "timestamp")?;
        if ts < 0.0 {
            return Err(Error::parse(path, line, format!("negative timestamp {ts}")));
        }
        events.push(Interaction::new(kind, patient, counterpart, ts));
        Ok(())
    })?;
    let log = InteractionLog::new(events, None)?;
    let [ph, md, tr] = log.counts();
    log::info!(
        "{}: {} interactions ({ph} physician, {md} medication, {tr} transfer)",
        path.display(),
        log.len()
    );
    Ok(log)
}

pub fn write_interactions(path: impl AsRef<Path>, log: &InteractionLog) -> Result<()> {
    let lines = std::iter::once(INTERACTIONS_HEADER.to_string()).chain(log.events().iter().map(
        |e| {
            format!(
                "{},{},{},{}",
                e.patient_id(),
                e.counterpart_id(),
                e.kind.code(),
                e.timestamp
            )
        },
    ));
    write_lines(path.as_ref(), lines)
}

pub fn load_patient_features(
    static_path: impl AsRef<Path>,
    dynamic_path: impl AsRef<Path>,
) -> Result<PatientFeatures> {
    load_patient_features_with(static_path, dynamic_path, &CompactIds)
}

pub fn load_patient_features_with(
    static_path: impl AsRef<Path>,
    dynamic_path: impl AsRef<Path>,
    ids: &dyn EntityResolver,
) -> Result<PatientFeatures> {
    let sp = static_path.as_ref();
    let mut rows = Rows::open(sp, true)?;
    rows.expect_header_prefix(&["patient_id"])?;
    let static_dim = rows.header.len() - 1;
    let mut static_rows = BTreeMap::new();
    rows.for_each(|line, rec| {
        if rec.len() != static_dim + 1 {
            return Err(Error::parse(
                sp,
                line,
                format!("expected {} columns, found {}", static_dim + 1, rec.len()),
            ));
        }
        let p = ids
            .resolve(EntityKind::Patient, &rec[0])
            .map_err(|e| Error::parse(sp, line, e.to_string()))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(sp, line, f, "feature"))
            .collect::<Result<Vec<_>>>()?;
        if static_rows.insert(p, vals).is_some() {
            return Err(Error::parse(sp, line, format!("duplicate row for p{p}")));
        }
        Ok(())
    })?;

    let dp = dynamic_path.as_ref();
    let mut rows = Rows::open(dp, true)?;
    rows.expect_header_prefix(&["patient_id", "timestamp"])?;
    let dynamic_dim = rows.header.len() - 2;
    let mut dynamic: BTreeMap<usize, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    rows.for_each(|line, rec| {
        if rec.len() != dynamic_dim + 2 {
            return Err(Error::parse(
                dp,
                line,
                format!("expected {} columns, found {}", dynamic_dim + 2, rec.len()),
            ));
        }
        let p = ids
            .resolve(EntityKind::Patient, &rec[0])
            .map_err(|e| Error::parse(dp, line, e.to_string()))?;
        if !static_rows.contains_key(&p) {
            return Err(Error::parse(
                dp,
                line,
                format!("patient {} has dynamic rows but no static row", &rec[0]),
            ));
        }
        let ts = parse_f64(dp, line, &rec[1], "timestamp")?;
        let vals = rec
            .iter()
            .skip(2)
            .map(|f| parse_f64(dp, line, f, "feature"))
            .collect::<Result<Vec<_>>>()?;
        dynamic.entry(p).or_default().push((ts, vals));
        Ok(())
    })?;
    PatientFeatures::new(static_dim, dynamic_dim, static_rows, dynamic)
}

pub fn write_patient_features(
    static_path: impl AsRef<Path>,
    dynamic_path: impl AsRef<Path>,
    f: &PatientFeatures,
) -> Result<()> {
    let mut header = vec!["patient_id".to_string()];
    header.extend((1..=f.static_dim()).map(|i| format!("f{i}")));
    let lines = std::iter::once(header.join(",")).chain(f.patients().map(|p| {
        let row = f.static_features(p).expect("listed patient");
        if row.is_empty() {
            format!("p{p}")
        } else {
            format!("p{p},{}", join_floats(row))
        }
    }));
    write_lines(static_path.as_ref(), lines)?;

    let mut header = vec!["patient_id".to_string(), "timestamp".to_string()];
    header.extend((1..=f.dynamic_dim()).map(|i| format!("g{i}")));
    let mut lines = vec![header.join(",")];
    for p in f.patients() {
        for (t, v) in f.dynamic_series(p) {
            if v.is_empty() {
                lines.push(format!("p{p},{t}"));
            } else {
                lines.push(format!("p{p},{t},{}", join_floats(v)));
            }
        }
    }
    write_lines(dynamic_path.as_ref(), lines)
}

/// Edge list with a first line `kind,n` followed by `u,v,weight` rows.
pub fn load_graph(path: impl AsRef<Path>) -> Result<StaticGraph> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, false)?;
    let mut head: Option<(EntityKind, usize)> = None;
    let mut edges = Vec::new();
    rows.for_each(|line, rec| {
        match head {
            None => {
                if rec.len() != 2 {
                    return Err(Error::parse(path, line, "expected header line `kind,n`"));
                }
                let kind: EntityKind = rec[0]
                    .parse()
                    .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
                let n = rec[1]
                    .parse()
                    .map_err(|_| Error::parse(path, line, format!("bad node count {:?}", &rec[1])))?;
                head = Some((kind, n));
            }
            Some(_) => {
                if rec.len() != 3 {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("expected 3 columns, found {}", rec.len()),
                    ));
                }
                let idx = |f: &str| {
                    f.parse::<usize>()
                        .map_err(|_| Error::parse(path, line, format!("bad node index {f:?}")))
                };
                edges.push((idx(&rec[0])?, idx(&rec[1])?, parse_f64(path, line, &rec[2], "weight")?));
            }
        }
        Ok(())
    })?;
    let (kind, n) = head.ok_or_else(|| Error::parse(path, 1, "missing `kind,n` header"))?;
    StaticGraph::new(kind, n, edges).map_err(|e| Error::parse(path, 1, e.to_string()))
}

pub fn write_graph(path: impl AsRef<Path>, g: &StaticGraph) -> Result<()> {
    let lines = std::iter::once(format!("{},{}", g.kind(), g.n()))
        .chain(g.edges().iter().map(|(u, v, w)| format!("{u},{v},{w}")));
    write_lines(path.as_ref(), lines)
}

/// `child_id,parent_id` pairs plus a `medication_id` leaf manifest.
pub fn load_medication_tree(
    tree_path: impl AsRef<Path>,
    leaves_path: impl AsRef<Path>,
) -> Result<MedicationTree> {
    let tp = tree_path.as_ref();
    let mut rows = Rows::open(tp, true)?;
    rows.expect_header_prefix(&["child_id", "parent_id"])?;
    let mut pairs = Vec::new();
    rows.for_each(|line, rec| {
        if rec.len() != 2 {
            return Err(Error::parse(tp, line, "expected `child_id,parent_id`"));
        }
        pairs.push((rec[0].to_string(), rec[1].to_string()));
        Ok(())
    })?;
    let lp = leaves_path.as_ref();
    let mut rows = Rows::open(lp, true)?;
    rows.expect_header_prefix(&["medication_id"])?;
    let mut leaves = Vec::new();
    rows.for_each(|line, rec| {
        let idx = CompactIds
            .resolve(EntityKind::Medication, &rec[0])
            .map_err(|e| Error::parse(lp, line, e.to_string()))?;
        leaves.push((rec[0].to_string(), idx));
        Ok(())
    })?;
    MedicationTree::new(pairs, leaves)
}

pub fn write_medication_tree(
    tree_path: impl AsRef<Path>,
    leaves_path: impl AsRef<Path>,
    tree: &MedicationTree,
) -> Result<()> {
    let lines = std::iter::once("child_id,parent_id".to_string())
        .chain(tree.pairs().map(|(c, p)| format!("{c},{p}")));
    write_lines(tree_path.as_ref(), lines)?;
    let lines = std::iter::once("medication_id".to_string())
        .chain(tree.leaves().iter().map(|(name, _)| name.clone()));
    write_lines(leaves_path.as_ref(), lines)
}

pub fn load_specialties(path: impl AsRef<Path>) -> Result<BTreeMap<usize, String>> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, true)?;
    rows.expect_header_prefix(&["doctor_id", "specialty"])?;
    let mut out = BTreeMap::new();
    rows.for_each(|line, rec| {
        if rec.len() != 2 {
            return Err(Error::parse(path, line, "expected `doctor_id,specialty`"));
        }
        let d = CompactIds
            .resolve(EntityKind::Doctor, &rec[0])
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        if out.insert(d, rec[1].to_string()).is_some() {
            return Err(Error::parse(path, line, format!("duplicate doctor d{d}")));
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn write_specialties(path: impl AsRef<Path>, labels: &BTreeMap<usize, String>) -> Result<()> {
    let lines = std::iter::once("doctor_id,specialty".to_string())
        .chain(labels.iter().map(|(d, l)| format!("d{d},{l}")));
    write_lines(path.as_ref(), lines)
}

pub fn load_entity_map(path: impl AsRef<Path>) -> Result<EntityMap> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, true)?;
    rows.expect_header_prefix(&["kind", "external_id", "index"])?;
    let mut out = Vec::new();
    rows.for_each(|line, rec| {
        if rec.len() != 3 {
            return Err(Error::parse(path, line, "expected `kind,external_id,index`"));
        }
        let kind: EntityKind = rec[0]
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let idx = rec[2]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad index {:?}", &rec[2])))?;
        out.push((kind, rec[1].to_string(), idx));
        Ok(())
    })?;
    let map = EntityMap::new(out)?;
    // indices must be dense per kind
    let pop = map.populations();
    for (kind, ext, idx) in map.rows() {
        if *idx >= pop.count(*kind) {
            return Err(Error::Invalid(format!(
                "{}: index {idx} of {kind} {ext} is not dense (population {})",
                path.display(),
                pop.count(*kind)
            )));
        }
    }
    Ok(map)
}

pub fn write_entity_map(path: impl AsRef<Path>, map: &EntityMap) -> Result<()> {
    let lines = std::iter::once("kind,external_id,index".to_string())
        .chain(map.rows().iter().map(|(k, e, i)| format!("{k},{e},{i}")));
    write_lines(path.as_ref(), lines)
}

/// Loads every file of a dataset directory. Ids in the data files are the
/// compact form; the entity map supplies the populations.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let files = DatasetFiles::in_dir(dir);
    let entity_map = load_entity_map(&files.entity_map)?;
    Ok(Dataset {
        populations: entity_map.populations(),
        log: load_interactions(&files.interactions)?,
        features: load_patient_features(&files.patients_static, &files.patients_dynamic)?,
        room_graph: load_graph(&files.room_graph)?,
        doctor_specialties: load_specialties(&files.doctor_specialties)?,
        medication_tree: load_medication_tree(&files.medication_tree, &files.medication_leaves)?,
        entity_map,
    })
}

pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let files = DatasetFiles::in_dir(dir);
    write_entity_map(&files.entity_map, &ds.entity_map)?;
    write_interactions(&files.interactions, &ds.log)?;
    write_patient_features(&files.patients_static, &files.patients_dynamic, &ds.features)?;
    write_graph(&files.room_graph, &ds.room_graph)?;
    write_specialties(&files.doctor_specialties, &ds.doctor_specialties)?;
    write_medication_tree(&files.medication_tree, &files.medication_leaves, &ds.medication_tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn interactions_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "i.csv",
            "patient_id,entity_id,kind,timestamp\np0,d0,PHYS,10.0\np0,m0,MED,5.0\n",
        );
        let log = load_interactions(&p).unwrap();
        assert_eq!(log.events()[0].kind, InteractionKind::Medication);
        assert_eq!(log.events()[1].timestamp, 10.0);

        let p = write(
            dir.path(),
            "j.csv",
            "patient_id,entity_id,kind,timestamp\np0,d0,PHYS,5.0\np1,d1,PHYS,5.0\n",
        );
        let log = load_interactions(&p).unwrap();
        assert_eq!(log.events()[0].patient, 0);
        assert_eq!(log.events()[1].patient, 1);

        let p = write(dir.path(), "e.csv", "patient_id,entity_id,kind,timestamp\n");
        assert!(load_interactions(&p).unwrap().is_empty());
    }

    #[test]
    fn interaction_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("p0,d0,PHYS\n", "expected 4 columns"),
            ("p0,d0,SURGERY,1.0\n", "interaction kind"),
            ("p0,d0,PHYS,-2.0\n", "negative timestamp"),
            ("p0,d0,PHYS,abc\n", "cannot parse"),
            ("p0,m0,PHYS,1.0\n", "expected a doctor"),
        ];
        for (row, needle) in cases {
            let body = format!("patient_id,entity_id,kind,timestamp\np1,d1,PHYS,0.5\n{row}");
            let p = write(dir.path(), "bad.csv", &body);
            let err = load_interactions(&p).unwrap_err().to_string();
            assert!(err.contains(":3:"), "{err}");
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn features_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(
            dir.path(),
            "s.csv",
            "patient_id,f1,f2,f3,f4\np0,1,2,3,4\np1,0,0,0,0\np2,1,1,1,1\n",
        );
        let d = write(
            dir.path(),
            "d.csv",
            "patient_id,timestamp,g1\np0,2,0.2\np0,1,0.1\n",
        );
        let f = load_patient_features(&s, &d).unwrap();
        assert_eq!(f.static_dim(), 4);
        let ts: Vec<f64> = f.dynamic_series(0).iter().map(|x| x.0).collect();
        assert_eq!(ts, vec![1.0, 2.0]);

        let d = write(dir.path(), "d2.csv", "patient_id,timestamp,g1\np5,2,0.2\n");
        let err = load_patient_features(&s, &d).unwrap_err().to_string();
        assert!(err.contains("p5"), "{err}");

        let s2 = write(dir.path(), "s2.csv", "patient_id,f1,f2\np0,1,2\np1,1\n");
        assert!(load_patient_features(&s2, &d).is_err());
    }

    #[test]
    fn graph_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = StaticGraph::new(EntityKind::Room, 3, vec![(0, 1, 1.0), (1, 2, 2.5)]).unwrap();
        let p = dir.path().join("g.csv");
        write_graph(&p, &g).unwrap();
        assert_eq!(load_graph(&p).unwrap(), g);
        let bad = write(dir.path(), "b.csv", "room,2\n0,5,1.0\n");
        assert!(load_graph(&bad).is_err());
    }
}
