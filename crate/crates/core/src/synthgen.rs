//! Seeded synthetic hospitals with planted cohort structure.
//!
//! Every patient belongs to one cohort. Each cohort prefers a block of
//! doctors, medications and rooms; an interaction's counterpart comes from
//! that block with probability `1 - epsilon` and uniformly otherwise.
//! Outcomes follow cohort membership with probability `label_coupling` and
//! the configured rates and priors otherwise.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{write_dataset, write_lines};
use crate::data::{
    validate_dataset, Dataset, DatasetFiles, EntityId, EntityKind, EntityMap, Interaction, InteractionKind, InteractionLog,
    MedicationTree, PatientFeatures, Populations, StaticGraph, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::eval::outcomes::{write_outcomes, OutcomeClass, OutcomeTable, PatientOutcome};
use crate::eval::tasks::CDI_LEAD_DAYS;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub populations: Populations,
    /// Physician, medication, transfer.
    pub interactions: [usize; 3],
    pub horizon_days: f64,
    pub cohorts: usize,
    /// Preferred block size per cohort (doctor, medication, room);
    /// `None` splits each population evenly.
    pub subset_sizes: [Option<usize>; 3],
    pub epsilon: f64,
    pub micu_rate: f64,
    pub cdi_rate: f64,
    pub mortality_prior: [f64; 4],
    pub severity_prior: [f64; 4],
    pub label_coupling: f64,
    pub static_dim: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["tiny", "desk", "paper_scaled"];

impl SynthConfig {
    fn with_counts(pop: [usize; 4], interactions: [usize; 3]) -> Self {
        SynthConfig {
            populations: Populations {
                patients: pop[0],
                doctors: pop[1],
                medications: pop[2],
                rooms: pop[3],
            },
            interactions,
            horizon_days: 90.0,
            cohorts: 2,
            subset_sizes: [None; 3],
            epsilon: 0.05,
            micu_rate: 0.1,
            cdi_rate: 0.1,
            mortality_prior: [0.25; 4],
            severity_prior: [0.25; 4],
            label_coupling: 0.9,
            static_dim: 4,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "tiny" => Ok(Self::with_counts([20, 6, 8, 6], [60, 200, 40])),
            "desk" => Ok(Self::with_counts([320, 30, 35, 28], [1150, 17500, 840])),
            // hospital counts divided by 20
            "paper_scaled" => Ok(Self::with_counts([325, 29, 34, 28], [1154, 17467, 839])),
            other => Err(Error::Unknown {
                what: "preset",
                name: other.to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.populations;
        if [p.patients, p.doctors, p.medications, p.rooms].contains(&0) {
            return Err(Error::Invalid("every population must be at least 1".into()));
        }
        if self.cohorts < 2 {
            return Err(Error::Invalid(format!("need at least 2 cohorts, got {}", self.cohorts)));
        }
        let rates = [self.epsilon, self.micu_rate, self.cdi_rate, self.label_coupling];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Invalid(format!(
                "epsilon, rates and label_coupling must lie in [0, 1]: {rates:?}"
            )));
        }
        for prior in [&self.mortality_prior, &self.severity_prior] {
            if prior.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || prior.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Invalid(format!("bad class prior {prior:?}")));
            }
        }
        if !(self.horizon_days.is_finite() && self.horizon_days > 0.0) {
            return Err(Error::Invalid("horizon must be positive".into()));
        }
        if self.static_dim == 0 {
            return Err(Error::Invalid("static_dim must be at least 1".into()));
        }
        for (i, kind) in [EntityKind::Doctor, EntityKind::Medication, EntityKind::Room].into_iter().enumerate() {
            let size = self.subset_size(i, kind);
            if size == 0 || size > p.count(kind) {
                return Err(Error::Invalid(format!(
                    "cohort {kind} subset of {size} does not fit a population of {}",
                    p.count(kind)
                )));
            }
        }
        Ok(())
    }

    fn subset_size(&self, slot: usize, kind: EntityKind) -> usize {
        self.subset_sizes[slot].unwrap_or_else(|| (self.populations.count(kind) / self.cohorts).max(1))
    }

    /// Preferred block of cohort `c` for counterpart slot `slot`: contiguous
    /// indices, wrapping around when blocks do not fit side by side.
    pub fn subset(&self, c: usize, slot: usize) -> Vec<usize> {
        let kind = [EntityKind::Doctor, EntityKind::Medication, EntityKind::Room][slot];
        let n = self.populations.count(kind);
        let size = self.subset_size(slot, kind);
        (0..size).map(|i| (c * size + i) % n).collect()
    }
}

impl FromStr for SynthConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthConfig::preset(s)
    }
}

/// A generated dataset with its labels and the planted cohorts.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub dataset: Dataset,
    pub outcomes: OutcomeTable,
    pub cohorts: Vec<usize>,
}

fn room_grid(n: usize) -> Result<StaticGraph> {
    let w = (n as f64).sqrt().ceil().max(1.0) as usize;
    let mut edges = Vec::new();
    for i in 0..n {
        if (i + 1) % w != 0 && i + 1 < n {
            edges.push((i, i + 1, 1.0));
        }
        if i + w < n {
            edges.push((i, i + w, 1.0));
        }
    }
    StaticGraph::new(EntityKind::Room, n, edges)
}

/// root, then categories, subcategories and medication leaves; every inner
/// node has at least one child.
fn medication_tree(n: usize, rng: &mut ChaCha8Rng) -> Result<MedicationTree> {
    let cats = ((n as f64).cbrt().round() as usize).clamp(1, n);
    let subs = ((n as f64).powf(2.0 / 3.0).round() as usize).clamp(cats, n);
    let mut pairs = Vec::new();
    for c in 0..cats {
        pairs.push((format!("cat{c}"), "root".to_string()));
    }
    for s in 0..subs {
        let c = if s < cats { s } else { rng.random_range(0..cats) };
        pairs.push((format!("sub{s}"), format!("cat{c}")));
    }
    let mut leaves = Vec::new();
    for m in 0..n {
        let s = if m < subs { m } else { rng.random_range(0..subs) };
        let name = EntityId::new(EntityKind::Medication, m).to_string();
        pairs.push((name.clone(), format!("sub{s}")));
        leaves.push((name, m));
    }
    MedicationTree::new(pairs, leaves)
}

fn draw_class(prior: &[f64; 4], rng: &mut ChaCha8Rng) -> OutcomeClass {
    let total: f64 = prior.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in prior.iter().enumerate() {
        if u < *p {
            return OutcomeClass::ALL[i];
        }
        u -= p;
    }
    OutcomeClass::Extreme
}

/// Event time within the stay, at least `min_days` after admission when
/// the stay allows it.
fn event_in_stay(o: &PatientOutcome, min_days: f64, rng: &mut ChaCha8Rng) -> f64 {
    let lo = (o.admission + min_days * SECONDS_PER_DAY).min(o.discharge);
    if lo >= o.discharge {
        o.discharge
    } else {
        rng.random_range(lo..=o.discharge).round().clamp(lo, o.discharge)
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop = cfg.populations;
    let horizon = cfg.horizon_days * SECONDS_PER_DAY;

    let cohorts: Vec<usize> = (0..pop.patients).map(|_| rng.random_range(0..cfg.cohorts)).collect();
    let subsets: Vec<[Vec<usize>; 3]> = (0..cfg.cohorts)
        .map(|c| [cfg.subset(c, 0), cfg.subset(c, 1), cfg.subset(c, 2)])
        .collect();

    let mut events = Vec::with_capacity(cfg.interactions.iter().sum());
    for kind in InteractionKind::ALL {
        let n = pop.count(kind.counterpart());
        for _ in 0..cfg.interactions[kind.slot()] {
            let t = rng.random_range(0.0..horizon).floor();
            let p = rng.random_range(0..pop.patients);
            let c = if rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..n)
            } else {
                let s = &subsets[cohorts[p]][kind.slot()];
                s[rng.random_range(0..s.len())]
            };
            events.push(Interaction::new(kind, p, c, t));
        }
    }
    let log = InteractionLog::new(events, Some(horizon))?;

    // stays span each patient's first to last interaction
    let mut span: Vec<Option<(f64, f64)>> = vec![None; pop.patients];
    let mut med_count = vec![0usize; pop.patients];
    let mut dynamic: BTreeMap<usize, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for ev in log.events() {
        let s = span[ev.patient].get_or_insert((ev.timestamp, ev.timestamp));
        s.1 = ev.timestamp;
        if ev.kind == InteractionKind::Medication {
            med_count[ev.patient] += 1;
        }
        let los_days = (ev.timestamp - s.0) / SECONDS_PER_DAY;
        dynamic
            .entry(ev.patient)
            .or_default()
            .push((ev.timestamp, vec![los_days / 30.0, med_count[ev.patient] as f64 / 50.0]));
    }
    let mut statics = BTreeMap::new();
    for p in 0..pop.patients {
        let row: Vec<f64> = (0..cfg.static_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        statics.insert(p, row);
    }
    let features = PatientFeatures::new(cfg.static_dim, 2, statics, dynamic)?;

    let mut rows = BTreeMap::new();
    for p in 0..pop.patients {
        let (admission, discharge) = span[p].unwrap_or_else(|| {
            let a = rng.random_range(0.0..(horizon - SECONDS_PER_DAY).max(1.0)).floor();
            (a, (a + SECONDS_PER_DAY).min(horizon))
        });
        let mut o = PatientOutcome::stay(admission, discharge);
        let c = cohorts[p];
        let coupled = |rng: &mut ChaCha8Rng| rng.random::<f64>() < cfg.label_coupling;
        let micu = if coupled(&mut rng) { c % 2 == 1 } else { rng.random::<f64>() < cfg.micu_rate };
        if micu {
            o.micu_transfers = vec![event_in_stay(&o, 3.0, &mut rng)];
        }
        let cdi = if coupled(&mut rng) { c % 2 == 1 } else { rng.random::<f64>() < cfg.cdi_rate };
        if cdi {
            o.cdi_report = Some(event_in_stay(&o, CDI_LEAD_DAYS, &mut rng));
        }
        o.mortality = Some(if coupled(&mut rng) {
            OutcomeClass::ALL[c % 4]
        } else {
            draw_class(&cfg.mortality_prior, &mut rng)
        });
        o.severity = Some(if coupled(&mut rng) {
            OutcomeClass::ALL[c % 4]
        } else {
            draw_class(&cfg.severity_prior, &mut rng)
        });
        rows.insert(p, o);
    }
    let outcomes = OutcomeTable::new(rows)?;

    let mut specialties = BTreeMap::new();
    for d in 0..pop.doctors {
        let owner = (0..cfg.cohorts).find(|&c| subsets[c][0].contains(&d));
        let label = owner.map_or_else(|| "general".to_string(), |c| format!("specialty{c}"));
        specialties.insert(d, label);
    }

    let dataset = Dataset {
        populations: pop,
        entity_map: EntityMap::compact(&pop),
        log,
        features,
        room_graph: room_grid(pop.rooms)?,
        doctor_specialties: specialties,
        medication_tree: medication_tree(pop.medications, &mut rng)?,
    };
    let graphs = crate::static_embed::DomainGraphs::from_dataset(&dataset)?;
    let report = validate_dataset(
        &pop,
        &dataset.log,
        &dataset.features,
        &[&graphs.doctor, &graphs.medication, &graphs.room],
    );
    if !report.is_empty() {
        return Err(Error::Invalid(format!("generated dataset failed validation: {report}")));
    }
    Ok(SynthBundle {
        dataset,
        outcomes,
        cohorts,
    })
}

pub const COHORTS_FILE: &str = "cohorts.csv";

/// Dataset files, `outcomes.csv`, and `cohorts.csv` (`patient_id,cohort`).
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &SynthBundle) -> Result<()> {
    let dir = dir.as_ref();
    write_dataset(dir, &bundle.dataset)?;
    write_outcomes(DatasetFiles::in_dir(dir).outcomes, &bundle.outcomes)?;
    let lines = std::iter::once("patient_id,cohort".to_string())
        .chain(bundle.cohorts.iter().enumerate().map(|(p, c)| format!("p{p},{c}")));
    write_lines(&dir.join(COHORTS_FILE), lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        let mut c = SynthConfig::with_counts([10, 5, 5, 5], [50, 100, 30]);
        c.seed = 3;
        c
    }

    #[test]
    fn bundle_round_trips_through_files() {
        let b = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &b).unwrap();
        let ds = crate::data::load_dataset(dir.path()).unwrap();
        assert_eq!(ds.log.events(), b.dataset.log.events());
        assert_eq!(ds.populations, b.dataset.populations);
        assert_eq!(ds.doctor_specialties, b.dataset.doctor_specialties);
        assert_eq!(ds.room_graph.edges(), b.dataset.room_graph.edges());
        assert_eq!(ds.medication_tree.leaves(), b.dataset.medication_tree.leaves());
        let outcomes = crate::eval::load_outcomes(DatasetFiles::in_dir(dir.path()).outcomes).unwrap();
        assert_eq!(outcomes, b.outcomes);
    }

    #[test]
    fn counts_by_construction() {
        let b = generate(&small()).unwrap();
        assert_eq!(b.dataset.log.len(), 180);
        assert_eq!(b.dataset.log.counts(), [50, 100, 30]);
    }

    #[test]
    fn presets() {
        assert_eq!(SynthConfig::preset("paper_scaled").unwrap().populations.patients, 325);
        let d = SynthConfig::preset("desk").unwrap();
        assert_eq!(d.interactions, [1150, 17500, 840]);
        assert!(SynthConfig::preset("huge").is_err());
    }

    #[test]
    fn oversized_subset_rejected() {
        let mut c = small();
        c.subset_sizes[1] = Some(6);
        assert!(generate(&c).is_err());
    }

    #[test]
    fn pure_cohorts_are_separated() {
        let mut c = small();
        c.epsilon = 0.0;
        c.label_coupling = 1.0;
        let b = generate(&c).unwrap();
        for ev in b.dataset.log.events() {
            let s = c.subset(b.cohorts[ev.patient], ev.kind.slot());
            assert!(s.contains(&ev.counterpart));
        }
        for (p, o) in b.outcomes.iter() {
            let odd = b.cohorts[p] % 2 == 1;
            assert_eq!(o.cdi_report.is_some(), odd);
            assert_eq!(!o.micu_transfers.is_empty(), odd);
            assert_eq!(o.mortality.unwrap().index(), b.cohorts[p] % 4);
        }
    }
}
