//! Batch forward pass, analytic gradients and the finite-difference oracle.
//!
//! Embeddings entering a batch are constants: gradients flow through the
//! projection, the two update networks and the decoder of each event, and
//! through the domain loss evaluated on the state at batch end. Events in a
//! batch touch disjoint entities, so their forward passes are independent;
//! gradient columns are accumulated in event order so the result does not
//! depend on how the work is split across threads.

use crate::data::{Interaction, PatientFeatures};
use crate::dynamics::{apply_record, DeltaScale, DimsConfig, EmbeddingState, Model, ParameterSet, StepRecord};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{axpy, Matrix};
use crate::loss::{total_loss, LossBreakdown, LossWeights};
use crate::static_embed::{Laplacians, StaticTables};

/// Everything a batch needs apart from parameters and state.
#[derive(Debug, Clone, Copy)]
pub struct BatchEnv<'a> {
    pub dims: &'a DimsConfig,
    pub tables: &'a StaticTables,
    pub features: &'a PatientFeatures,
    pub laplacians: &'a Laplacians,
    pub scale: DeltaScale,
    pub weights: LossWeights,
    pub exec: &'a Exec,
}

impl<'a> BatchEnv<'a> {
    pub fn model(&self, params: &'a ParameterSet) -> Model<'a> {
        Model {
            dims: self.dims,
            params,
            tables: self.tables,
            features: self.features,
            scale: self.scale,
        }
    }

    pub fn with_weights(&self, weights: LossWeights) -> Self {
        BatchEnv { weights, ..*self }
    }
}

fn divergence(detail: impl Into<String>) -> Error {
    Error::Divergence {
        epoch: 0,
        batch: 0,
        detail: detail.into(),
    }
}

/// Forward pass over a batch; advances `state` to batch end.
pub fn forward_batch(
    env: &BatchEnv<'_>,
    state: &mut EmbeddingState,
    batch: &[Interaction],
    params: &ParameterSet,
) -> Result<(Vec<StepRecord>, LossBreakdown)> {
    let model = env.model(params);
    let snapshot: &EmbeddingState = state;
    let records = env
        .exec
        .map(batch, |ev| model.step(snapshot, ev))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for rec in &records {
        apply_record(state, rec);
    }
    let loss = total_loss(&records, state, env.laplacians, &env.weights)?;
    if !loss.is_finite() {
        return Err(divergence(format!("non-finite loss {loss:?}")));
    }
    Ok((records, loss))
}

/// Total batch loss from a copy of `state`.
pub fn batch_loss(
    env: &BatchEnv<'_>,
    state: &EmbeddingState,
    batch: &[Interaction],
    params: &ParameterSet,
) -> Result<f64> {
    let mut s = state.clone();
    Ok(forward_batch(env, &mut s, batch, params)?.1.total())
}

struct EventGrad {
    g_pred: Vec<f64>,
    g_zp: Vec<f64>,
    g_zc: Vec<f64>,
    dproj: Vec<f64>,
}

fn event_grad(env: &BatchEnv<'_>, params: &ParameterSet, after: &EmbeddingState, rec: &StepRecord) -> EventGrad {
    let d = env.dims.d_dyn;
    let w = &env.weights;
    let module = params.module(rec.event.kind);

    let g_pred: Vec<f64> = rec
        .prediction
        .iter()
        .zip(&rec.target)
        .map(|(p, t)| 2.0 * w.reconst * (p - t))
        .collect();
    let g_np: Vec<f64> = rec
        .new_p
        .iter()
        .zip(&rec.e_p)
        .map(|(a, b)| 2.0 * w.temp * (a - b))
        .collect();
    let mut g_nc: Vec<f64> = rec
        .new_c
        .iter()
        .zip(&rec.e_c)
        .map(|(a, b)| 2.0 * w.temp * (a - b))
        .collect();
    let ck = rec.event.kind.counterpart();
    let lambda = w.dom_for(ck);
    if lambda != 0.0 {
        let l = env.laplacians.get(ck).expect("domain kinds have Laplacians");
        let row = l.apply_row(after.matrix(ck), d, rec.event.counterpart);
        axpy(2.0 * lambda, &row, &mut g_nc);
    }
    let g_zp: Vec<f64> = g_np.iter().zip(&rec.new_p).map(|(g, y)| g * (1.0 - y * y)).collect();
    let g_zc: Vec<f64> = g_nc.iter().zip(&rec.new_c).map(|(g, y)| g * (1.0 - y * y)).collect();

    // dL/d(projected patient embedding)
    let mut g_ep: Vec<f64> = g_np.iter().map(|g| -g).collect();
    axpy(1.0, &module.decoder.w.gemv_t_range(&g_pred, 0..d), &mut g_ep);
    axpy(1.0, &module.patient.w.gemv_t_range(&g_zp, 0..d), &mut g_ep);
    axpy(1.0, &module.counterpart.w.gemv_t_range(&g_zc, d..2 * d), &mut g_ep);
    let dproj = g_ep
        .iter()
        .zip(&rec.e_p_stored)
        .map(|(g, e)| g * e * rec.delta_p)
        .collect();
    EventGrad {
        g_pred,
        g_zp,
        g_zc,
        dproj,
    }
}

const COLUMN_CHUNK_ELEMS: usize = 8192;

/// `grad += Σ_e g_e x_eᵀ`, columns in parallel, events in order.
fn accumulate_outer(exec: &Exec, grad: &mut Matrix, terms: &[(&[f64], &[f64])]) {
    if terms.is_empty() {
        return;
    }
    let rows = grad.rows();
    let cols_per_chunk = (COLUMN_CHUNK_ELEMS / rows.max(1)).max(1);
    exec.for_each_chunk_mut(grad.as_mut_slice(), rows * cols_per_chunk, |ci, chunk| {
        for (local, col) in chunk.chunks_mut(rows).enumerate() {
            let j = ci * cols_per_chunk + local;
            for (g, x) in terms {
                let xj = x[j];
                if xj != 0.0 {
                    axpy(xj, g, col);
                }
            }
        }
    });
}

fn accumulate_bias(bias: &mut [f64], terms: &[&[f64]]) {
    for g in terms {
        for (b, v) in bias.iter_mut().zip(g.iter()) {
            *b += v;
        }
    }
}

/// Analytic gradient of the batch's total loss. Advances `state` to batch
/// end.
pub fn batch_gradients(
    env: &BatchEnv<'_>,
    state: &mut EmbeddingState,
    batch: &[Interaction],
    params: &ParameterSet,
) -> Result<(ParameterSet, LossBreakdown)> {
    let (records, loss) = forward_batch(env, state, batch, params)?;
    let after: &EmbeddingState = state;
    let eg: Vec<EventGrad> = env.exec.map(&records, |rec| event_grad(env, params, after, rec));

    let mut grads = ParameterSet::zeros(env.dims);
    for g in &eg {
        axpy(1.0, &g.dproj, &mut grads.projection);
    }
    for kind in crate::data::InteractionKind::ALL {
        let idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].event.kind == kind)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let m = grads.module_mut(kind);
        let pt: Vec<(&[f64], &[f64])> = idx
            .iter()
            .map(|&i| (eg[i].g_zp.as_slice(), records[i].patient_input.as_slice()))
            .collect();
        accumulate_outer(env.exec, &mut m.patient.w, &pt);
        let ct: Vec<(&[f64], &[f64])> = idx
            .iter()
            .map(|&i| (eg[i].g_zc.as_slice(), records[i].counterpart_input.as_slice()))
            .collect();
        accumulate_outer(env.exec, &mut m.counterpart.w, &ct);
        let dt: Vec<(&[f64], &[f64])> = idx
            .iter()
            .map(|&i| (eg[i].g_pred.as_slice(), records[i].decoder_input.as_slice()))
            .collect();
        accumulate_outer(env.exec, &mut m.decoder.w, &dt);
        accumulate_bias(&mut m.patient.b, &idx.iter().map(|&i| eg[i].g_zp.as_slice()).collect::<Vec<_>>());
        accumulate_bias(&mut m.counterpart.b, &idx.iter().map(|&i| eg[i].g_zc.as_slice()).collect::<Vec<_>>());
        accumulate_bias(&mut m.decoder.b, &idx.iter().map(|&i| eg[i].g_pred.as_slice()).collect::<Vec<_>>());
    }
    if !grads.all_finite() {
        return Err(divergence("non-finite gradient"));
    }
    Ok((grads, loss))
}

/// Flat view helpers, tensor order as in [`ParameterSet::tensors`].
pub fn to_flat(p: &ParameterSet) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
}

pub fn assign_flat(p: &mut ParameterSet, flat: &[f64]) -> Result<()> {
    if flat.len() != p.len() {
        return Err(Error::Shape(format!(
            "{} values for a parameter set of {}",
            flat.len(),
            p.len()
        )));
    }
    let mut off = 0;
    for (_, t) in p.tensors_mut() {
        t.copy_from_slice(&flat[off..off + t.len()]);
        off += t.len();
    }
    Ok(())
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h`, every probe replaying the
/// whole batch from `state`.
pub fn finite_diff_gradients(
    env: &BatchEnv<'_>,
    state: &EmbeddingState,
    batch: &[Interaction],
    params: &ParameterSet,
    h: f64,
) -> Result<ParameterSet> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let base = to_flat(params);
    // probes run sequentially inside; parallelism is across entries
    let inner = BatchEnv {
        exec: &Exec::Sequential,
        ..*env
    };
    let estimates = env.exec.map_range(base.len(), |k| -> Result<f64> {
        let mut p = params.clone();
        let mut flat = base.clone();
        flat[k] = base[k] + h;
        assign_flat(&mut p, &flat)?;
        let plus = batch_loss(&inner, state, batch, &p)?;
        flat[k] = base[k] - h;
        assign_flat(&mut p, &flat)?;
        let minus = batch_loss(&inner, state, batch, &p)?;
        Ok((plus - minus) / (2.0 * h))
    });
    let flat = estimates.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = ParameterSet::zeros(env.dims);
    assign_flat(&mut out, &flat)?;
    Ok(out)
}

/// Scalar central difference, used to sanity-check the estimator itself.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
