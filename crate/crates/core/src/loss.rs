//! Reconstruction, temporal-consistency and domain (Laplacian) losses.
//!
//! Norms are squared throughout so that every loss is smooth at zero
//! residual.

use std::ops::{Add, AddAssign};

use crate::data::EntityKind;
use crate::dynamics::{EmbeddingState, StepRecord};
use crate::error::{Error, Result};
use crate::linalg::sq_dist;
use crate::static_embed::{laplacian_quadratic, Laplacians};

/// Loss weights. `dom` is indexed doctor, medication, room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reconst: f64,
    pub temp: f64,
    pub dom: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconst: 1.0,
            temp: 1.0,
            dom: [0.1; 3],
        }
    }
}

pub const DOMAIN_KINDS: [EntityKind; 3] = [EntityKind::Doctor, EntityKind::Medication, EntityKind::Room];

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            reconst: 0.0,
            temp: 0.0,
            dom: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.reconst, self.temp, self.dom[0], self.dom[1], self.dom[2]];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn dom_for(&self, kind: EntityKind) -> f64 {
        match kind {
            EntityKind::Doctor => self.dom[0],
            EntityKind::Medication => self.dom[1],
            EntityKind::Room => self.dom[2],
            EntityKind::Patient => 0.0,
        }
    }
}

/// `‖prediction − target‖²`
pub fn reconstruction_loss(rec: &StepRecord) -> Result<f64> {
    if rec.prediction.len() != rec.target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target {}",
            rec.prediction.len(),
            rec.target.len()
        )));
    }
    Ok(sq_dist(&rec.prediction, &rec.target))
}

/// `‖new_p − e_p(t⁻)‖² + ‖new_c − e_c(t⁻)‖²`
pub fn temporal_loss(rec: &StepRecord) -> f64 {
    sq_dist(&rec.new_p, &rec.e_p) + sq_dist(&rec.new_c, &rec.e_c)
}

/// Weighted Laplacian penalty on the current doctor, medication and room
/// embeddings.
pub fn domain_loss(state: &EmbeddingState, laplacians: &Laplacians, weights: &LossWeights) -> Result<f64> {
    let mut total = 0.0;
    for kind in DOMAIN_KINDS {
        let lambda = weights.dom_for(kind);
        if lambda == 0.0 {
            continue;
        }
        let l = laplacians.get(kind).expect("domain kinds have Laplacians");
        total += lambda * laplacian_quadratic(l, state.matrix(kind), state.dim())?;
    }
    Ok(total)
}

/// Weighted loss contributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reconst: f64,
    pub temp: f64,
    pub dom: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.reconst + self.temp + self.dom
    }

    pub fn is_finite(&self) -> bool {
        self.reconst.is_finite() && self.temp.is_finite() && self.dom.is_finite()
    }
}

impl Add for LossBreakdown {
    type Output = LossBreakdown;

    fn add(self, o: LossBreakdown) -> LossBreakdown {
        LossBreakdown {
            reconst: self.reconst + o.reconst,
            temp: self.temp + o.temp,
            dom: self.dom + o.dom,
        }
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: LossBreakdown) {
        *self = *self + o;
    }
}

/// `λ_rec Σ L_rec + λ_temp Σ L_temp + L_dom(state)`, summed in record order.
pub fn total_loss(
    records: &[StepRecord],
    state: &EmbeddingState,
    laplacians: &Laplacians,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut rec_sum = 0.0;
    let mut temp_sum = 0.0;
    for r in records {
        rec_sum += reconstruction_loss(r)?;
        temp_sum += temporal_loss(r);
    }
    Ok(LossBreakdown {
        reconst: weights.reconst * rec_sum,
        temp: weights.temp * temp_sum,
        dom: domain_loss(state, laplacians, weights)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Interaction, InteractionKind, Populations, StaticGraph};
    use crate::static_embed::DomainGraphs;

    fn record(pred: Vec<f64>, target: Vec<f64>, moves: ([f64; 2], [f64; 2])) -> StepRecord {
        StepRecord {
            event: Interaction::new(InteractionKind::Physician, 0, 0, 0.0),
            delta_p: 0.0,
            delta_c: 0.0,
            e_p_stored: vec![0.0; 2],
            e_p: vec![0.0; 2],
            e_c: vec![0.0; 2],
            patient_input: vec![],
            counterpart_input: vec![],
            decoder_input: vec![],
            new_p: moves.0.to_vec(),
            new_c: moves.1.to_vec(),
            prediction: pred,
            target,
        }
    }

    fn pop() -> Populations {
        Populations {
            patients: 1,
            doctors: 3,
            medications: 2,
            rooms: 2,
        }
    }

    fn laps() -> Laplacians {
        DomainGraphs {
            doctor: StaticGraph::new(EntityKind::Doctor, 3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap(),
            medication: StaticGraph::new(EntityKind::Medication, 2, vec![(0, 1, 1.0)]).unwrap(),
            room: StaticGraph::new(EntityKind::Room, 2, vec![(0, 1, 1.0)]).unwrap(),
        }
        .laplacians()
    }

    #[test]
    fn reconstruction_cases() {
        let r = record(vec![1.0, 2.0], vec![1.0, 2.0], ([0.0; 2], [0.0; 2]));
        assert_eq!(reconstruction_loss(&r).unwrap(), 0.0);
        let r = record(vec![3.0, 4.0], vec![0.0, 0.0], ([0.0; 2], [0.0; 2]));
        assert_eq!(reconstruction_loss(&r).unwrap(), 25.0);
        let r = record(vec![3.0], vec![0.0, 0.0], ([0.0; 2], [0.0; 2]));
        assert!(reconstruction_loss(&r).is_err());
    }

    #[test]
    fn temporal_cases() {
        assert_eq!(temporal_loss(&record(vec![], vec![], ([0.0; 2], [0.0; 2]))), 0.0);
        assert_eq!(temporal_loss(&record(vec![], vec![], ([1.0, 0.0], [0.0; 2]))), 1.0);
    }

    #[test]
    fn domain_cases() {
        let mut state = EmbeddingState::zeros(1, &pop());
        let w = LossWeights {
            reconst: 0.0,
            temp: 0.0,
            dom: [1.0, 0.0, 0.0],
        };
        assert_eq!(domain_loss(&state, &laps(), &w).unwrap(), 0.0);
        for (i, v) in [0.0, 1.0, 3.0].into_iter().enumerate() {
            state.set(EntityKind::Doctor, i, &[v], 0.0);
        }
        assert_eq!(domain_loss(&state, &laps(), &w).unwrap(), 5.0);
        assert_eq!(domain_loss(&state, &laps(), &LossWeights::zero()).unwrap(), 0.0);
    }

    #[test]
    fn total_is_weighted_sum() {
        let state = EmbeddingState::zeros(1, &pop());
        let w = LossWeights {
            reconst: 1.0,
            temp: 1.0,
            dom: [0.0; 3],
        };
        assert_eq!(total_loss(&[], &state, &laps(), &w).unwrap().total(), 0.0);
        let r = record(vec![3.0, 4.0], vec![0.0, 0.0], ([1.0, 0.0], [0.0; 2]));
        let b = total_loss(std::slice::from_ref(&r), &state, &laps(), &w).unwrap();
        assert_eq!((b.reconst, b.temp, b.total()), (25.0, 1.0, 26.0));
        let w2 = LossWeights { temp: 2.0, ..w };
        assert_eq!(total_loss(&[r], &state, &laps(), &w2).unwrap().temp, 2.0);
    }
}
