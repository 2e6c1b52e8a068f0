//! Temporal batching: events are grouped so that no entity appears twice in
//! a batch while every entity still sees its events in time order.

use std::collections::HashMap;

use crate::data::{EntityId, Interaction, InteractionLog};

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBatch {
    /// 1-based.
    pub index: usize,
    pub events: Vec<Interaction>,
}

/// Greedy assignment in log order: an event goes to one past the latest
/// batch holding its patient or its counterpart.
pub fn t_batches(log: &InteractionLog) -> Vec<TemporalBatch> {
    let mut last: HashMap<EntityId, usize> = HashMap::new();
    let mut batches: Vec<TemporalBatch> = Vec::new();
    for ev in log.events() {
        let (p, c) = (ev.patient_id(), ev.counterpart_id());
        let b = 1 + last.get(&p).copied().unwrap_or(0).max(last.get(&c).copied().unwrap_or(0));
        if b > batches.len() {
            batches.push(TemporalBatch {
                index: b,
                events: Vec::new(),
            });
        }
        batches[b - 1].events.push(*ev);
        last.insert(p, b);
        last.insert(c, b);
    }
    batches
}
