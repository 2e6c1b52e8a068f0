//! Forward computations: projection, co-evolving update networks,
//! reconstruction decoders and the per-interaction step.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::io::{join_floats, write_lines};
use crate::data::{EntityKind, Interaction, InteractionKind, InteractionLog, PatientFeatures, Populations};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::static_embed::StaticTables;

pub const DEFAULT_DYNAMIC_DIM: usize = 128;

/// Model dimensions. `d_static` is indexed by [`InteractionKind::slot`]
/// (doctor, medication, room).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimsConfig {
    pub d_dyn: usize,
    pub d_pstat: usize,
    pub d_pdyn: usize,
    pub d_static: [usize; 3],
    pub populations: Populations,
}

impl DimsConfig {
    pub fn new(
        d_dyn: usize,
        features: &PatientFeatures,
        tables: &StaticTables,
        populations: Populations,
    ) -> Result<Self> {
        let dims = DimsConfig {
            d_dyn,
            d_pstat: features.static_dim(),
            d_pdyn: features.dynamic_dim(),
            d_static: [tables.doctor.dim(), tables.medication.dim(), tables.room.dim()],
            populations,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.populations;
        let all = [
            self.d_dyn,
            self.d_pstat,
            self.d_pdyn,
            self.d_static[0],
            self.d_static[1],
            self.d_static[2],
            p.patients,
            p.doctors,
            p.medications,
            p.rooms,
        ];
        if all.contains(&0) {
            return Err(Error::Invalid(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `[e_self | e_other | delta | p_stat | p_dyn]`
    pub fn update_input_width(&self) -> usize {
        2 * self.d_dyn + 1 + self.d_pstat + self.d_pdyn
    }

    /// `[e_patient | onehot(patient) | p_stat | e_counterpart | static(counterpart)]`
    pub fn decoder_input_width(&self, kind: InteractionKind) -> usize {
        2 * self.d_dyn + self.populations.patients + self.d_pstat + self.d_static[kind.slot()]
    }

    pub fn decoder_output_width(&self, kind: InteractionKind) -> usize {
        self.d_dyn + self.d_static[kind.slot()]
    }
}

/// One affine + tanh update network.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateNet {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl UpdateNet {
    pub fn zeros(out: usize, input: usize) -> Self {
        UpdateNet {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }

    /// `tanh(W x + B)`
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.w.cols() {
            return Err(Error::Shape(format!(
                "update input has {} entries, network expects {}",
                x.len(),
                self.w.cols()
            )));
        }
        let mut z = self.b.clone();
        self.w.gemv_acc(x, &mut z);
        Ok(z.into_iter().map(f64::tanh).collect())
    }
}

/// Affine reconstruction decoder, no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Decoder {
    pub fn zeros(out: usize, input: usize) -> Self {
        Decoder {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.w.cols() {
            return Err(Error::Shape(format!(
                "decoder input has {} entries, decoder expects {}",
                x.len(),
                self.w.cols()
            )));
        }
        let mut y = self.b.clone();
        self.w.gemv_acc(x, &mut y);
        Ok(y)
    }
}

/// Parameters of one interaction module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleParams {
    pub patient: UpdateNet,
    pub counterpart: UpdateNet,
    pub decoder: Decoder,
}

/// Which part of the model a tensor belongs to; used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Projection,
    PatientNet(InteractionKind),
    CounterpartNet(InteractionKind),
    Decoder(InteractionKind),
}

/// All learnable tensors. Tensor order (used by the optimizer, the
/// checkpoint format and the finite-difference oracle) is: projection;
/// then for physician, medication, transfer: patient W, patient B,
/// counterpart W, counterpart B, decoder W, decoder B.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub projection: Vec<f64>,
    pub modules: [ModuleParams; 3],
}

impl ParameterSet {
    pub fn zeros(dims: &DimsConfig) -> Self {
        let width = dims.update_input_width();
        let module = |kind: InteractionKind| ModuleParams {
            patient: UpdateNet::zeros(dims.d_dyn, width),
            counterpart: UpdateNet::zeros(dims.d_dyn, width),
            decoder: Decoder::zeros(dims.decoder_output_width(kind), dims.decoder_input_width(kind)),
        };
        ParameterSet {
            projection: vec![0.0; dims.d_dyn],
            modules: InteractionKind::ALL.map(module),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero. The projection
    /// vector has fan-in 1 (it multiplies the scalar elapsed time).
    pub fn init(dims: &DimsConfig, seed: u64) -> Self {
        let mut p = ParameterSet::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in m {
                *x = rng.random_range(-bound..=bound);
            }
        };
        fill(&mut p.projection, 1);
        for m in &mut p.modules {
            let fan = m.patient.w.cols();
            fill(m.patient.w.as_mut_slice(), fan);
            let fan = m.counterpart.w.cols();
            fill(m.counterpart.w.as_mut_slice(), fan);
            let fan = m.decoder.w.cols();
            fill(m.decoder.w.as_mut_slice(), fan);
        }
        p
    }

    pub fn module(&self, kind: InteractionKind) -> &ModuleParams {
        &self.modules[kind.slot()]
    }

    pub fn module_mut(&mut self, kind: InteractionKind) -> &mut ModuleParams {
        &mut self.modules[kind.slot()]
    }

    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = vec![(ParamGroup::Projection, &self.projection)];
        for (kind, m) in InteractionKind::ALL.into_iter().zip(&self.modules) {
            out.push((ParamGroup::PatientNet(kind), m.patient.w.as_slice()));
            out.push((ParamGroup::PatientNet(kind), &m.patient.b));
            out.push((ParamGroup::CounterpartNet(kind), m.counterpart.w.as_slice()));
            out.push((ParamGroup::CounterpartNet(kind), &m.counterpart.b));
            out.push((ParamGroup::Decoder(kind), m.decoder.w.as_slice()));
            out.push((ParamGroup::Decoder(kind), &m.decoder.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> =
            vec![(ParamGroup::Projection, &mut self.projection)];
        for (kind, m) in InteractionKind::ALL.into_iter().zip(&mut self.modules) {
            out.push((ParamGroup::PatientNet(kind), m.patient.w.as_mut_slice()));
            out.push((ParamGroup::PatientNet(kind), &mut m.patient.b));
            out.push((ParamGroup::CounterpartNet(kind), m.counterpart.w.as_mut_slice()));
            out.push((ParamGroup::CounterpartNet(kind), &mut m.counterpart.b));
            out.push((ParamGroup::Decoder(kind), m.decoder.w.as_mut_slice()));
            out.push((ParamGroup::Decoder(kind), &mut m.decoder.b));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// `(1 + w * delta) ⊙ e`
pub fn project(e: &[f64], delta_scaled: f64, w: &[f64]) -> Vec<f64> {
    debug_assert_eq!(e.len(), w.len());
    e.iter()
        .zip(w)
        .map(|(ei, wi)| (1.0 + wi * delta_scaled) * ei)
        .collect()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}

pub fn update_input(e_self: &[f64], e_other: &[f64], delta: f64, p_stat: &[f64], p_dyn: &[f64]) -> Vec<f64> {
    concat(&[e_self, e_other, &[delta], p_stat, p_dyn])
}

/// Simultaneous co-evolving update; both outputs read only the
/// pre-interaction embeddings.
#[allow(clippy::too_many_arguments)]
pub fn update_pair(
    e_p: &[f64],
    e_c: &[f64],
    delta_p: f64,
    delta_c: f64,
    p_stat: &[f64],
    p_dyn: &[f64],
    patient_net: &UpdateNet,
    counterpart_net: &UpdateNet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if e_p.len() != e_c.len() {
        return Err(Error::Shape(format!(
            "patient embedding has {} entries, counterpart {}",
            e_p.len(),
            e_c.len()
        )));
    }
    let new_p = patient_net.forward(&update_input(e_p, e_c, delta_p, p_stat, p_dyn))?;
    let new_c = counterpart_net.forward(&update_input(e_c, e_p, delta_c, p_stat, p_dyn))?;
    Ok((new_p, new_c))
}

/// Decoder input with the patient one-hot expanded densely.
pub fn decoder_input(
    e_p_proj: &[f64],
    patient: usize,
    n_patients: usize,
    p_stat: &[f64],
    e_c: &[f64],
    s_c: &[f64],
) -> Vec<f64> {
    let mut onehot = vec![0.0; n_patients];
    onehot[patient] = 1.0;
    concat(&[e_p_proj, &onehot, p_stat, e_c, s_c])
}

/// `W [e_p_proj | s_p | p_stat | e_c | s_c] + B`
pub fn reconstruct(
    e_p_proj: &[f64],
    s_p: &[f64],
    p_stat: &[f64],
    e_c: &[f64],
    s_c: &[f64],
    dec: &Decoder,
) -> Result<Vec<f64>> {
    dec.forward(&concat(&[e_p_proj, s_p, p_stat, e_c, s_c]))
}

/// Elapsed-time normaliser: mean positive gap between consecutive events of
/// the same entity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaScale(pub f64);

impl DeltaScale {
    pub fn from_log(log: &InteractionLog, populations: &Populations) -> Self {
        let mut last: [Vec<Option<f64>>; 4] =
            EntityKind::ALL.map(|k| vec![None; populations.count(k)]);
        let (mut sum, mut count) = (0.0, 0usize);
        for ev in log.events() {
            for id in [ev.patient_id(), ev.counterpart_id()] {
                let Some(slot) = last[id.kind.slot()].get_mut(id.index) else {
                    continue;
                };
                if let Some(prev) = *slot {
                    let gap = ev.timestamp - prev;
                    if gap > 0.0 {
                        sum += gap;
                        count += 1;
                    }
                }
                *slot = Some(ev.timestamp);
            }
        }
        if count == 0 {
            DeltaScale(1.0)
        } else {
            DeltaScale(sum / count as f64)
        }
    }

    pub fn scale(&self, elapsed: f64) -> f64 {
        elapsed / self.0
    }
}

/// Dynamic embedding and last interaction time for every entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    d: usize,
    embeddings: [Vec<f64>; 4],
    last_time: [Vec<Option<f64>>; 4],
}

impl EmbeddingState {
    pub fn zeros(d: usize, pop: &Populations) -> Self {
        EmbeddingState {
            d,
            embeddings: EntityKind::ALL.map(|k| vec![0.0; pop.count(k) * d]),
            last_time: EntityKind::ALL.map(|k| vec![None; pop.count(k)]),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.last_time[kind.slot()].len()
    }

    pub fn embedding(&self, kind: EntityKind, index: usize) -> &[f64] {
        &self.embeddings[kind.slot()][index * self.d..(index + 1) * self.d]
    }

    /// Row-major `n x d` matrix of one kind.
    pub fn matrix(&self, kind: EntityKind) -> &[f64] {
        &self.embeddings[kind.slot()]
    }

    pub fn last_time(&self, kind: EntityKind, index: usize) -> Option<f64> {
        self.last_time[kind.slot()][index]
    }

    pub fn set(&mut self, kind: EntityKind, index: usize, e: &[f64], t: f64) {
        let d = self.d;
        self.embeddings[kind.slot()][index * d..(index + 1) * d].copy_from_slice(e);
        self.last_time[kind.slot()][index] = Some(t);
    }

    pub fn all_finite(&self) -> bool {
        self.embeddings.iter().flatten().all(|x| x.is_finite())
    }

    /// CSV `kind,index,timestamp,c1,...`; the timestamp is the last
    /// interaction time, empty for entities that never interacted.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let lines = std::iter::once(snapshot_header(self.d)).chain(EntityKind::ALL.into_iter().flat_map(
            |kind| {
                (0..self.count(kind)).map(move |i| {
                    let t = self.last_time(kind, i).map(|t| t.to_string()).unwrap_or_default();
                    format!("{kind},{i},{t},{}", join_floats(self.embedding(kind, i)))
                })
            },
        ));
        write_lines(path.as_ref(), lines)
    }
}

pub fn snapshot_header(d: usize) -> String {
    let mut h = vec!["kind".to_string(), "index".to_string(), "timestamp".to_string()];
    h.extend((1..=d).map(|i| format!("c{i}")));
    h.join(",")
}

/// Read-only inputs shared by every forward step.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub dims: &'a DimsConfig,
    pub params: &'a ParameterSet,
    pub tables: &'a StaticTables,
    pub features: &'a PatientFeatures,
    pub scale: DeltaScale,
}

/// Every intermediate of one processed interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub event: Interaction,
    pub delta_p: f64,
    pub delta_c: f64,
    /// Stored patient embedding before projection.
    pub e_p_stored: Vec<f64>,
    /// Patient embedding projected to t⁻.
    pub e_p: Vec<f64>,
    /// Counterpart embedding at t⁻ (stored, not projected).
    pub e_c: Vec<f64>,
    pub patient_input: Vec<f64>,
    pub counterpart_input: Vec<f64>,
    pub decoder_input: Vec<f64>,
    pub new_p: Vec<f64>,
    pub new_c: Vec<f64>,
    pub prediction: Vec<f64>,
    pub target: Vec<f64>,
}

impl<'a> Model<'a> {
    fn check_registered(&self, ev: &Interaction) -> Result<()> {
        let pop = &self.dims.populations;
        for id in [ev.patient_id(), ev.counterpart_id()] {
            if !pop.contains(id) {
                return Err(Error::Invalid(format!("unregistered entity {id}")));
            }
        }
        Ok(())
    }

    fn scaled_delta(&self, state: &EmbeddingState, kind: EntityKind, index: usize, t: f64) -> f64 {
        state
            .last_time(kind, index)
            .map_or(0.0, |last| self.scale.scale(t - last))
    }

    /// Forward pass for `ev` without touching the state.
    pub fn step(&self, state: &EmbeddingState, ev: &Interaction) -> Result<StepRecord> {
        self.check_registered(ev)?;
        let ck = ev.kind.counterpart();
        let t = ev.timestamp;
        let delta_p = self.scaled_delta(state, EntityKind::Patient, ev.patient, t);
        let delta_c = self.scaled_delta(state, ck, ev.counterpart, t);
        let e_p_stored = state.embedding(EntityKind::Patient, ev.patient).to_vec();
        let e_p = project(&e_p_stored, delta_p, &self.params.projection);
        let e_c = state.embedding(ck, ev.counterpart).to_vec();
        let p_stat = self.features.static_features(ev.patient)?;
        let p_dyn = self.features.dynamic_feature_at(ev.patient, t)?;
        let s_c = self
            .tables
            .get(ck)
            .expect("counterpart kinds have tables")
            .row(ev.counterpart);

        let module = self.params.module(ev.kind);
        let patient_input = update_input(&e_p, &e_c, delta_p, p_stat, &p_dyn);
        let counterpart_input = update_input(&e_c, &e_p, delta_c, p_stat, &p_dyn);
        let new_p = module.patient.forward(&patient_input)?;
        let new_c = module.counterpart.forward(&counterpart_input)?;

        let dec_in = decoder_input(
            &e_p,
            ev.patient,
            self.dims.populations.patients,
            p_stat,
            &e_c,
            s_c,
        );
        let prediction = module.decoder.forward(&dec_in)?;
        let target = concat(&[&e_c, s_c]);
        Ok(StepRecord {
            event: *ev,
            delta_p,
            delta_c,
            e_p_stored,
            e_p,
            e_c,
            patient_input,
            counterpart_input,
            decoder_input: dec_in,
            new_p,
            new_c,
            prediction,
            target,
        })
    }

    /// Forward pass plus state update.
    pub fn forward_interaction(&self, state: &mut EmbeddingState, ev: &Interaction) -> Result<StepRecord> {
        let rec = self.step(state, ev)?;
        apply_record(state, &rec);
        Ok(rec)
    }
}

/// Writes both updated embeddings and stamps their last interaction time.
pub fn apply_record(state: &mut EmbeddingState, rec: &StepRecord) {
    let ev = &rec.event;
    state.set(EntityKind::Patient, ev.patient, &rec.new_p, ev.timestamp);
    state.set(ev.kind.counterpart(), ev.counterpart, &rec.new_c, ev.timestamp);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn projection_cases() {
        let e = [1.0, 2.0];
        assert_eq!(project(&e, 0.0, &[0.3, -7.0]), e.to_vec());
        assert_eq!(project(&e, 5.0, &[0.0, 0.0]), e.to_vec());
        let out = project(&e, 0.5, &[0.1, 0.2]);
        assert_abs_diff_eq!(out[0], 1.05, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 2.2, epsilon = 1e-15);
    }

    #[test]
    fn zero_networks_give_zero_updates() {
        let net = UpdateNet::zeros(3, 2 * 3 + 1 + 1 + 1);
        let (a, b) = update_pair(&[0.5; 3], &[-0.2; 3], 1.0, 2.0, &[1.0], &[3.0], &net, &net).unwrap();
        assert_eq!(a, vec![0.0; 3]);
        assert_eq!(b, vec![0.0; 3]);
    }

    #[test]
    fn bias_only_network_reproduces_tanh_inverse() {
        let mut net = UpdateNet::zeros(2, 2 * 2 + 1 + 1 + 1);
        net.b = vec![0.5f64.atanh(); 2];
        let (a, b) = update_pair(&[0.1; 2], &[0.9; 2], 0.0, 0.0, &[0.0], &[0.0], &net, &net).unwrap();
        for x in a.iter().chain(&b) {
            assert_abs_diff_eq!(*x, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn update_rejects_bad_shapes() {
        let net = UpdateNet::zeros(2, 7);
        assert!(update_pair(&[0.0; 2], &[0.0; 3], 0.0, 0.0, &[0.0], &[0.0], &net, &net).is_err());
        assert!(update_pair(&[0.0; 2], &[0.0; 2], 0.0, 0.0, &[0.0, 1.0], &[0.0], &net, &net).is_err());
    }

    #[test]
    fn decoder_bias_and_identity_block() {
        let mut dec = Decoder::zeros(3, 2 + 1 + 1 + 2 + 1);
        dec.b = vec![0.1, 0.2, 0.3];
        let out = reconstruct(&[1.0, 2.0], &[1.0], &[4.0], &[5.0, 6.0], &[1.0], &dec).unwrap();
        assert_eq!(out, vec![0.1, 0.2, 0.3]);

        // select [e_c | s_c]
        let mut dec = Decoder::zeros(3, 7);
        dec.w.set(0, 4, 1.0);
        dec.w.set(1, 5, 1.0);
        dec.w.set(2, 6, 1.0);
        let e_c = [0.25, -0.75];
        let out = reconstruct(&[1.0, 2.0], &[1.0], &[4.0], &e_c, &[1.0], &dec).unwrap();
        assert_eq!(out, vec![0.25, -0.75, 1.0]);
        assert!(reconstruct(&[1.0], &[1.0], &[4.0], &e_c, &[1.0], &dec).is_err());
    }

    #[test]
    fn delta_scale_uses_per_entity_gaps() {
        let k = InteractionKind::Physician;
        let log = InteractionLog::new(
            vec![
                Interaction::new(k, 0, 0, 0.0),
                Interaction::new(k, 0, 1, 4.0),
                Interaction::new(k, 1, 0, 6.0),
            ],
            None,
        )
        .unwrap();
        let pop = Populations {
            patients: 2,
            doctors: 2,
            medications: 1,
            rooms: 1,
        };
        // patient 0: gap 4; doctor 0: gap 6
        assert_eq!(DeltaScale::from_log(&log, &pop).0, 5.0);
        assert_eq!(DeltaScale::from_log(&InteractionLog::default(), &pop).0, 1.0);
    }
}
