//! Per-entity embedding histories and point-in-time snapshots.

use std::path::Path;

use crate::data::io::{join_floats, parse_f64, write_lines, Rows};
use crate::data::{EntityKind, Populations};
use crate::dynamics::{project, snapshot_header, DeltaScale, ParameterSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::training::{forward_batch, Prepared};

/// Every post-interaction embedding, per entity in time order. Patient
/// lookups are projected forward with the trained projection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    d: usize,
    scale: DeltaScale,
    projection: Vec<f64>,
    points: [Vec<Vec<(f64, Vec<f64>)>>; 4],
}

impl Trajectory {
    pub fn new(d: usize, populations: &Populations, scale: DeltaScale, projection: Vec<f64>) -> Result<Self> {
        if projection.len() != d {
            return Err(Error::Shape(format!(
                "projection of length {} for dimension {d}",
                projection.len()
            )));
        }
        Ok(Trajectory {
            d,
            scale,
            projection,
            points: EntityKind::ALL.map(|k| vec![Vec::new(); populations.count(k)]),
        })
    }

    /// Forward pass over the whole log with fixed parameters.
    pub fn replay(prep: &Prepared, params: &ParameterSet, exec: &Exec) -> Result<Self> {
        let mut traj = Trajectory::new(
            prep.dims.d_dyn,
            &prep.dims.populations,
            prep.scale,
            params.projection.clone(),
        )?;
        let env = prep.env(crate::loss::LossWeights::zero(), exec);
        let mut state = prep.zero_state();
        for b in &prep.batches {
            let (records, _) = forward_batch(&env, &mut state, &b.events, params)?;
            for r in records {
                let ev = r.event;
                traj.push(EntityKind::Patient, ev.patient, ev.timestamp, r.new_p)?;
                traj.push(ev.kind.counterpart(), ev.counterpart, ev.timestamp, r.new_c)?;
            }
        }
        Ok(traj)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.points[kind.slot()].len()
    }

    fn series(&self, kind: EntityKind, index: usize) -> Result<&[(f64, Vec<f64>)]> {
        self.points[kind.slot()]
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Unknown {
                what: "entity",
                name: format!("{}{index}", kind.id_prefix()),
            })
    }

    pub fn push(&mut self, kind: EntityKind, index: usize, t: f64, e: Vec<f64>) -> Result<()> {
        if e.len() != self.d {
            return Err(Error::Shape(format!("embedding of length {} for dimension {}", e.len(), self.d)));
        }
        self.series(kind, index)?;
        let s = &mut self.points[kind.slot()][index];
        if s.last().is_some_and(|(last, _)| *last > t) {
            return Err(Error::Invalid(format!(
                "{}{index}: trajectory point at {t} precedes an earlier one",
                kind.id_prefix()
            )));
        }
        s.push((t, e));
        Ok(())
    }

    /// Last stored embedding at or before `t`.
    pub fn stored_at(&self, kind: EntityKind, index: usize, t: f64) -> Result<Option<(f64, &[f64])>> {
        let s = self.series(kind, index)?;
        let n = s.partition_point(|(tt, _)| *tt <= t);
        Ok(n.checked_sub(1).map(|i| (s[i].0, s[i].1.as_slice())))
    }

    /// Embedding as of `t`: zeros before the first interaction; patients are
    /// projected across the gap since their last interaction.
    pub fn embedding_at(&self, kind: EntityKind, index: usize, t: f64) -> Result<Vec<f64>> {
        Ok(match self.stored_at(kind, index, t)? {
            None => vec![0.0; self.d],
            Some((last, e)) if kind == EntityKind::Patient => {
                project(e, self.scale.scale(t - last), &self.projection)
            }
            Some((_, e)) => e.to_vec(),
        })
    }

    pub fn snapshot_embedding(&self, patient: usize, t: f64) -> Result<Vec<f64>> {
        self.embedding_at(EntityKind::Patient, patient, t)
    }

    /// CSV `kind,index,timestamp,c1,...`, one row per stored point.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let lines = std::iter::once(snapshot_header(self.d)).chain(EntityKind::ALL.into_iter().flat_map(
            |kind| {
                self.points[kind.slot()].iter().enumerate().flat_map(move |(i, s)| {
                    s.iter().map(move |(t, e)| format!("{kind},{i},{t},{}", join_floats(e)))
                })
            },
        ));
        write_lines(path.as_ref(), lines)
    }

    /// Reads a file written by [`Trajectory::write_csv`]; projection and
    /// scale come from the trained model.
    pub fn read_csv(
        path: impl AsRef<Path>,
        populations: &Populations,
        scale: DeltaScale,
        projection: Vec<f64>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut rows = Rows::open(path, true)?;
        rows.expect_header_prefix(&["kind", "index", "timestamp"])?;
        let d = rows.header.len().saturating_sub(3);
        let mut traj = Trajectory::new(d, populations, scale, projection)?;
        rows.for_each(|line, rec| {
            let perr = |m: String| Error::parse(path, line, m);
            if rec.len() != d + 3 {
                return Err(perr(format!("expected {} columns, found {}", d + 3, rec.len())));
            }
            let kind: EntityKind = rec[0].parse().map_err(|e: Error| perr(e.to_string()))?;
            let index: usize = rec[1].parse().map_err(|_| perr(format!("bad index {:?}", &rec[1])))?;
            let t = parse_f64(path, line, &rec[2], "timestamp")?;
            let e = (3..d + 3)
                .map(|j| parse_f64(path, line, &rec[j], "embedding value"))
                .collect::<Result<Vec<_>>>()?;
            traj.push(kind, index, t, e).map_err(|e| perr(e.to_string()))
        })?;
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop() -> Populations {
        Populations {
            patients: 2,
            doctors: 1,
            medications: 1,
            rooms: 1,
        }
    }

    #[test]
    fn snapshot_cases() {
        let w = vec![0.5, -0.25];
        let mut tr = Trajectory::new(2, &pop(), DeltaScale(10.0), w.clone()).unwrap();
        tr.push(EntityKind::Patient, 0, 100.0, vec![1.0, 2.0]).unwrap();
        tr.push(EntityKind::Patient, 0, 200.0, vec![3.0, 4.0]).unwrap();
        assert_eq!(tr.snapshot_embedding(0, 50.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(tr.snapshot_embedding(0, 100.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(tr.snapshot_embedding(0, 150.0).unwrap(), project(&[1.0, 2.0], 5.0, &w));
        assert_eq!(tr.snapshot_embedding(0, 200.0).unwrap(), vec![3.0, 4.0]);
        assert!(tr.snapshot_embedding(7, 1.0).is_err());
        assert!(tr.push(EntityKind::Patient, 0, 150.0, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut tr = Trajectory::new(2, &pop(), DeltaScale(1.0), vec![0.0; 2]).unwrap();
        tr.push(EntityKind::Patient, 1, 1.5, vec![0.25, -1.0]).unwrap();
        tr.push(EntityKind::Room, 0, 3.0, vec![0.1, 0.2]).unwrap();
        tr.write_csv(&path).unwrap();
        let back = Trajectory::read_csv(&path, &pop(), DeltaScale(1.0), vec![0.0; 2]).unwrap();
        assert_eq!(back, tr);
    }
}
