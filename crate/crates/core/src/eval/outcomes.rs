//! Per-patient outcome labels.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::io::{parse_f64, write_lines, Rows};
use crate::error::{Error, Result};

pub const OUTCOMES_HEADER: &str = "patient_id,admission,discharge,micu_transfers,cdi_report,mortality,severity";

/// Four ordered outcome categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutcomeClass {
    Minor,
    Moderate,
    Major,
    Extreme,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 4] = [
        OutcomeClass::Minor,
        OutcomeClass::Moderate,
        OutcomeClass::Major,
        OutcomeClass::Extreme,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::Minor => "minor",
            OutcomeClass::Moderate => "moderate",
            OutcomeClass::Major => "major",
            OutcomeClass::Extreme => "extreme",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutcomeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if let Ok(i) = t.parse::<usize>() {
            return Self::from_index(i).ok_or(Error::Unknown {
                what: "outcome class",
                name: s.to_string(),
            });
        }
        Self::ALL.into_iter().find(|c| c.as_str() == t).ok_or(Error::Unknown {
            what: "outcome class",
            name: s.to_string(),
        })
    }
}

/// Outcomes of one stay. Times are seconds on the log clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientOutcome {
    pub admission: f64,
    pub discharge: f64,
    /// Sorted.
    pub micu_transfers: Vec<f64>,
    pub cdi_report: Option<f64>,
    pub mortality: Option<OutcomeClass>,
    pub severity: Option<OutcomeClass>,
}

impl PatientOutcome {
    pub fn stay(admission: f64, discharge: f64) -> Self {
        PatientOutcome {
            admission,
            discharge,
            micu_transfers: Vec::new(),
            cdi_report: None,
            mortality: None,
            severity: None,
        }
    }

    fn check(&self, p: usize) -> Result<()> {
        let bad = |what: &str, t: f64| {
            Error::Invalid(format!(
                "p{p}: {what} {t} outside stay [{}, {}]",
                self.admission, self.discharge
            ))
        };
        if !(self.admission.is_finite() && self.discharge.is_finite() && self.admission >= 0.0) {
            return Err(Error::Invalid(format!("p{p}: non-finite or negative stay bounds")));
        }
        if self.discharge < self.admission {
            return Err(Error::Invalid(format!("p{p}: discharge before admission")));
        }
        let within = |t: f64| t >= self.admission && t <= self.discharge;
        if let Some(&t) = self.micu_transfers.iter().find(|t| !within(**t)) {
            return Err(bad("MICU transfer", t));
        }
        if let Some(t) = self.cdi_report.filter(|t| !within(*t)) {
            return Err(bad("CDI report", t));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutcomeTable {
    rows: BTreeMap<usize, PatientOutcome>,
}

impl OutcomeTable {
    pub fn new(mut rows: BTreeMap<usize, PatientOutcome>) -> Result<Self> {
        for (p, o) in rows.iter_mut() {
            o.micu_transfers.sort_by(f64::total_cmp);
            o.check(*p)?;
        }
        Ok(OutcomeTable { rows })
    }

    pub fn get(&self, patient: usize) -> Option<&PatientOutcome> {
        self.rows.get(&patient)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &PatientOutcome)> {
        self.rows.iter().map(|(p, o)| (*p, o))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn opt_field<T>(s: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        f(s).map(Some)
    }
}

/// Patient ids are compact (`p<index>`). Transfers are `;`-separated.
pub fn load_outcomes(path: impl AsRef<Path>) -> Result<OutcomeTable> {
    let path = path.as_ref();
    let mut rows = Rows::open(path, true)?;
    rows.expect_header_prefix(&["patient_id", "admission", "discharge"])?;
    let mut out = BTreeMap::new();
    rows.for_each(|line, rec| {
        let perr = |m: String| Error::parse(path, line, m);
        if rec.len() != 7 {
            return Err(perr(format!("expected 7 columns, found {}", rec.len())));
        }
        let id = crate::data::EntityId::parse_compact(&rec[0])
            .filter(|id| id.kind == crate::data::EntityKind::Patient)
            .ok_or_else(|| perr(format!("bad patient id {:?}", &rec[0])))?;
        let num = |s: &str, what: &str| parse_f64(path, line, s.trim(), what);
        let mut o = PatientOutcome::stay(num(&rec[1], "admission")?, num(&rec[2], "discharge")?);
        o.micu_transfers = rec[3]
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| num(s, "MICU transfer time"))
            .collect::<Result<_>>()?;
        o.cdi_report = opt_field(&rec[4], |s| num(s, "CDI report time"))?;
        let class = |s: &str| s.parse::<OutcomeClass>().map_err(|e| perr(e.to_string()));
        o.mortality = opt_field(&rec[5], class)?;
        o.severity = opt_field(&rec[6], class)?;
        if out.insert(id.index, o).is_some() {
            return Err(perr(format!("duplicate patient {id}")));
        }
        Ok(())
    })?;
    OutcomeTable::new(out).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_outcomes(path: impl AsRef<Path>, table: &OutcomeTable) -> Result<()> {
    let opt = |c: Option<OutcomeClass>| c.map(|c| c.as_str().to_string()).unwrap_or_default();
    let lines = std::iter::once(OUTCOMES_HEADER.to_string()).chain(table.iter().map(|(p, o)| {
        let transfers: Vec<String> = o.micu_transfers.iter().map(|t| t.to_string()).collect();
        format!(
            "p{p},{},{},{},{},{},{}",
            o.admission,
            o.discharge,
            transfers.join(";"),
            o.cdi_report.map(|t| t.to_string()).unwrap_or_default(),
            opt(o.mortality),
            opt(o.severity)
        )
    }));
    write_lines(path.as_ref(), lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.csv");
        let mut rows = BTreeMap::new();
        let mut a = PatientOutcome::stay(0.0, 100.0);
        a.micu_transfers = vec![50.0, 20.0];
        a.cdi_report = Some(30.5);
        a.mortality = Some(OutcomeClass::Major);
        rows.insert(0, a);
        rows.insert(3, PatientOutcome::stay(10.0, 20.0));
        let t = OutcomeTable::new(rows).unwrap();
        assert_eq!(t.get(0).unwrap().micu_transfers, vec![20.0, 50.0]);
        write_outcomes(&path, &t).unwrap();
        assert_eq!(load_outcomes(&path).unwrap(), t);
    }

    #[test]
    fn events_outside_stay_rejected() {
        let mut rows = BTreeMap::new();
        let mut a = PatientOutcome::stay(10.0, 20.0);
        a.cdi_report = Some(25.0);
        rows.insert(0, a);
        assert!(OutcomeTable::new(rows).is_err());
    }

    #[test]
    fn class_parsing() {
        assert_eq!("Extreme".parse::<OutcomeClass>().unwrap(), OutcomeClass::Extreme);
        assert_eq!("1".parse::<OutcomeClass>().unwrap(), OutcomeClass::Moderate);
        assert!("5".parse::<OutcomeClass>().is_err());
    }
}
