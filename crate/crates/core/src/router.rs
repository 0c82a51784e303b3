//! Top-1 token routing: per-slot capacity, replica-level load balancing and
//! token-drop accounting.
//!
//! Tokens are fungible counts here; only the class assignment and the
//! resulting per-instance loads matter. Each class's tokens are spread
//! round-robin over its replicas (loads differ by at most one before capping)
//! and every instance keeps at most `slot_capacity` tokens.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ClusterSpec, ExpertPlacement, PopularityVector};

/// Width of the scalar exchanged by the popularity all-reduce, bytes.
const POPULARITY_SCALAR_BYTES: u64 = 8;

/// Outcome of routing one iteration's tokens through a placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingOutcome {
    /// Per-class token counts as assigned by the router (input copy).
    pub assigned: Vec<u64>,
    /// Per-global-slot token counts after replica load balancing and capping.
    pub instance_loads: Vec<u64>,
    /// Per-class dropped token counts.
    pub dropped: Vec<u64>,
    /// Fraction of tokens not dropped, in [0, 1]. Defined as 1 for an empty
    /// batch.
    pub survival_rate: f64,
    /// Metadata bytes moved by the popularity all-reduce (E scalars per rank).
    pub popularity_allreduce_bytes: u64,
}

impl RoutingOutcome {
    pub fn total_assigned(&self) -> u64 {
        self.assigned.iter().sum()
    }

    pub fn total_dropped(&self) -> u64 {
        self.dropped.iter().sum()
    }
}

/// Token capacity of a single expert slot:
/// `max(1, floor(capacity_factor * tokens_per_batch / (s * N)))`.
pub fn slot_capacity(spec: &ClusterSpec) -> u64 {
    let raw = spec.capacity_factor * spec.tokens_per_batch as f64 / spec.total_slots() as f64;
    (raw.floor() as u64).max(1)
}

/// Total token capacity of an expert class: `slot_capacity * r_i`.
pub fn class_capacity(placement: &ExpertPlacement, spec: &ClusterSpec, class_id: usize) -> u64 {
    assert!(
        class_id < placement.expert_classes(),
        "class id {class_id} out of range"
    );
    slot_capacity(spec) * placement.replica_counts()[class_id] as u64
}

/// Routes one iteration's tokens: round-robin load balancing over each
/// class's replicas, then capping at the slot capacity. Excess tokens are
/// dropped.
pub fn route(
    popularity: &PopularityVector,
    placement: &ExpertPlacement,
    spec: &ClusterSpec,
) -> Result<RoutingOutcome> {
    let classes = placement.expert_classes();
    if popularity.counts.len() != classes {
        return Err(Error::ShapeMismatch(format!(
            "popularity has {} classes, placement has {classes}",
            popularity.counts.len()
        )));
    }
    if placement.total_slots() != spec.total_slots() {
        return Err(Error::ShapeMismatch(format!(
            "placement covers {} slots, cluster has {}",
            placement.total_slots(),
            spec.total_slots()
        )));
    }

    let capacity = slot_capacity(spec);
    let mut instance_loads = vec![0u64; placement.total_slots()];
    let mut dropped = vec![0u64; classes];

    for (class, &tokens) in popularity.counts.iter().enumerate() {
        let slots = placement.slots_of_class(class);
        let replicas = slots.len() as u64;
        let base = tokens / replicas;
        let extra = tokens % replicas;
        let mut kept = 0u64;
        for (k, &slot) in slots.iter().enumerate() {
            let load = base + u64::from((k as u64) < extra);
            let capped = load.min(capacity);
            instance_loads[slot] = capped;
            kept += capped;
        }
        dropped[class] = tokens - kept;
        // Balanced assignment makes the per-instance drop sum collapse to the
        // class-level form.
        debug_assert_eq!(
            dropped[class],
            tokens.saturating_sub(replicas * capacity),
            "unbalanced drop accounting for class {class}"
        );
    }

    let total_assigned: u64 = popularity.counts.iter().sum();
    let total_dropped: u64 = dropped.iter().sum();
    let survival_rate = if total_assigned == 0 {
        1.0
    } else {
        1.0 - total_dropped as f64 / total_assigned as f64
    };

    Ok(RoutingOutcome {
        assigned: popularity.counts.clone(),
        instance_loads,
        dropped,
        survival_rate,
        popularity_allreduce_bytes: (spec.nodes * classes) as u64 * POPULARITY_SCALAR_BYTES,
    })
}
