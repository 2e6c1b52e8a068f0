//! Random small configurations for comparing analytic gradients with
//! central finite differences.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityKind, Interaction, InteractionKind, PatientFeatures, Populations, StaticGraph};
use crate::dynamics::{DeltaScale, DimsConfig, EmbeddingState, ParameterSet};
use crate::error::Result;
use crate::exec::Exec;
use crate::loss::LossWeights;
use crate::static_embed::{bourgain_table, laplacian, onehot_table, Laplacians, StaticMode, StaticTables};
use crate::training::grad::{batch_gradients, finite_diff_gradients, to_flat, BatchEnv};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true
/// gradient is (near) zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// A self-contained gradient-check instance.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub dims: DimsConfig,
    pub features: PatientFeatures,
    pub tables: StaticTables,
    pub laplacians: Laplacians,
    pub scale: DeltaScale,
    pub weights: LossWeights,
    pub params: ParameterSet,
    pub state: EmbeddingState,
    pub batch: Vec<Interaction>,
}

impl GradCase {
    pub fn env<'a>(&'a self, exec: &'a Exec) -> BatchEnv<'a> {
        BatchEnv {
            dims: &self.dims,
            tables: &self.tables,
            features: &self.features,
            laplacians: &self.laplacians,
            scale: self.scale,
            weights: self.weights,
            exec,
        }
    }
}

fn random_graph(rng: &mut ChaCha8Rng, kind: EntityKind, n: usize) -> Result<StaticGraph> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.5 {
                edges.push((u, v, rng.random_range(0.5..2.0)));
            }
        }
    }
    StaticGraph::new(kind, n, edges)
}

/// d_dyn in {2, 4, 8}; 3 to 5 events covering all three interaction kinds
/// over distinct entities; every loss weight nonzero.
pub fn random_case(seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = [2, 4, 8][rng.random_range(0..3)];
    let n_events = rng.random_range(3..=5);
    let pop = Populations {
        patients: n_events + rng.random_range(0..3),
        doctors: rng.random_range(2..=5),
        medications: rng.random_range(2..=5),
        rooms: rng.random_range(2..=5),
    };
    let d_pstat = rng.random_range(1..=3);
    let d_pdyn = rng.random_range(1..=2);
    let mut st = BTreeMap::new();
    let mut dy = BTreeMap::new();
    for p in 0..pop.patients {
        st.insert(p, (0..d_pstat).map(|_| rng.random_range(-1.0..1.0)).collect());
        if rng.random::<bool>() {
            dy.insert(p, vec![(0.0, (0..d_pdyn).map(|_| rng.random_range(-1.0..1.0)).collect())]);
        }
    }
    let features = PatientFeatures::new(d_pstat, d_pdyn, st, dy)?;

    let mode = if rng.random::<bool>() { StaticMode::OneHot } else { StaticMode::Bourgain };
    let graphs = [
        random_graph(&mut rng, EntityKind::Doctor, pop.doctors)?,
        random_graph(&mut rng, EntityKind::Medication, pop.medications)?,
        random_graph(&mut rng, EntityKind::Room, pop.rooms)?,
    ];
    let table = |g: &StaticGraph, s: u64| match mode {
        StaticMode::OneHot => onehot_table(g.kind(), g.n()),
        StaticMode::Bourgain => bourgain_table(g, 2, s, &Exec::Sequential),
    };
    let ts = rng.random::<u64>();
    let tables = StaticTables {
        mode,
        doctor: table(&graphs[0], ts)?,
        medication: table(&graphs[1], ts + 1)?,
        room: table(&graphs[2], ts + 2)?,
    };
    let laplacians = Laplacians {
        doctor: laplacian(&graphs[0]),
        medication: laplacian(&graphs[1]),
        room: laplacian(&graphs[2]),
    };
    let dims = DimsConfig::new(d, &features, &tables, pop)?;

    let mut params = ParameterSet::init(&dims, rng.random());
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.3..0.3);
            }
        }
    }
    for x in &mut params.projection {
        *x = rng.random_range(-0.5..0.5);
    }

    let mut state = EmbeddingState::zeros(d, &pop);
    for kind in EntityKind::ALL {
        for i in 0..pop.count(kind) {
            if rng.random::<f64>() < 0.8 {
                let e: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
                state.set(kind, i, &e, rng.random_range(0.0..5.0));
            }
        }
    }

    let mut kinds: Vec<InteractionKind> = InteractionKind::ALL.to_vec();
    while kinds.len() < n_events {
        kinds.push(InteractionKind::ALL[rng.random_range(0..3)]);
    }
    kinds.shuffle(&mut rng);
    let mut patients: Vec<usize> = (0..pop.patients).collect();
    patients.shuffle(&mut rng);
    let mut used: BTreeSet<(EntityKind, usize)> = BTreeSet::new();
    let mut batch = Vec::new();
    for (k, &p) in kinds.iter().zip(&patients) {
        let ck = k.counterpart();
        let free: Vec<usize> = (0..pop.count(ck)).filter(|c| !used.contains(&(ck, *c))).collect();
        let Some(&c) = free.get(rng.random_range(0..free.len().max(1))) else {
            continue;
        };
        used.insert((ck, c));
        batch.push(Interaction::new(*k, p, c, rng.random_range(6.0..10.0)));
    }
    batch.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let weights = LossWeights {
        reconst: rng.random_range(0.5..1.5),
        temp: rng.random_range(0.5..1.5),
        dom: [(); 3].map(|_| rng.random_range(0.05..0.5)),
    };
    Ok(GradCase {
        dims,
        features,
        tables,
        laplacians,
        scale: DeltaScale(rng.random_range(1.0..4.0)),
        weights,
        params,
        state,
        batch,
    })
}

/// Worst entry of one comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradComparison {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

/// `corrupt` perturbs one analytic entry, to prove the check can fail.
pub fn compare(case: &GradCase, h: f64, corrupt: bool, exec: &Exec) -> Result<GradComparison> {
    let env = case.env(exec);
    let mut s = case.state.clone();
    let (analytic, _) = batch_gradients(&env, &mut s, &case.batch, &case.params)?;
    let numeric = finite_diff_gradients(&env, &case.state, &case.batch, &case.params, h)?;
    let mut a = to_flat(&analytic);
    let n = to_flat(&numeric);
    if corrupt {
        let i = a.len() / 2;
        a[i] += 1e-2 * a[i].abs().max(1.0);
    }
    let mut out = GradComparison {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: a.first().copied().unwrap_or(0.0),
        numeric: n.first().copied().unwrap_or(0.0),
        entries: a.len(),
    };
    for (i, (x, y)) in a.iter().zip(&n).enumerate() {
        let r = relative_error(*x, *y);
        if r > out.max_rel_error {
            out = GradComparison {
                max_rel_error: r,
                worst_index: i,
                analytic: *x,
                numeric: *y,
                entries: a.len(),
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub cases: Vec<GradComparison>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// `cases` random configurations seeded from `seed`.
pub fn run(cases: usize, seed: u64, h: f64, tolerance: f64, corrupt: bool, exec: &Exec) -> Result<GradCheckReport> {
    let mut out = Vec::with_capacity(cases);
    for i in 0..cases {
        let case = random_case(seed.wrapping_add(i as u64))?;
        out.push(compare(&case, h, corrupt, exec)?);
    }
    Ok(GradCheckReport { tolerance, cases: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_cases_agree_with_finite_differences() {
        let report = run(20, 7, DEFAULT_STEP, DEFAULT_TOLERANCE, false, &Exec::Sequential).unwrap();
        for c in &report.cases {
            eprintln!("{c:?}");
        }
        assert!(report.passed(), "max relative error {}", report.max_rel_error());
    }

    #[test]
    fn corruption_is_detected() {
        let report = run(2, 7, DEFAULT_STEP, DEFAULT_TOLERANCE, true, &Exec::Sequential).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn cases_cover_every_interaction_kind() {
        for seed in 0..20 {
            let c = random_case(seed).unwrap();
            assert!(c.batch.len() >= 3 && c.batch.len() <= 5);
            for k in InteractionKind::ALL {
                assert!(c.batch.iter().any(|e| e.kind == k), "seed {seed} lacks {k:?}");
            }
            assert!([2, 4, 8].contains(&c.dims.d_dyn));
        }
    }
}
