//! Shared domain types: cluster description, expert placement and popularity
//! traces.
//!
//! Conventions used throughout the crate:
//!
//! - One rank per node, `s` expert slots per rank. Multi-GPU nodes are out of
//!   scope; a node's accelerators are treated as a single logical rank.
//! - Global slot indexing is `j = rank * s + local_slot`, so contiguous slot
//!   ranges map to contiguous rank ranges.
//! - Byte quantities are 64-bit integers; time quantities are 64-bit floats in
//!   seconds. Floating point enters only at bandwidth divisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of the training cluster.
///
/// Bandwidths are in bytes/second; `grad_bytes`/`weight_bytes` are per expert
/// instance, `optimizer_bytes` per expert class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Number of nodes `N` (one rank per node).
    pub nodes: usize,
    /// Expert slots `s` per rank.
    pub slots_per_rank: usize,
    /// Number of distinct expert classes `E`.
    pub expert_classes: usize,
    /// Local host<->accelerator interconnect bandwidth, bytes/second.
    pub bw_pci: f64,
    /// Cross-node network bandwidth, bytes/second.
    pub bw_net: f64,
    /// Gradient bytes `G` for one expert instance.
    pub grad_bytes: u64,
    /// Weight bytes `W` for one expert instance.
    pub weight_bytes: u64,
    /// Optimizer-state bytes `O` for one expert class.
    pub optimizer_bytes: u64,
    /// Global token count per iteration.
    pub tokens_per_batch: u64,
    /// Capacity factor, dimensionless. Defaults to 1.0.
    #[serde(default = "default_capacity_factor")]
    pub capacity_factor: f64,
}

fn default_capacity_factor() -> f64 {
    1.0
}

impl ClusterSpec {
    /// Total number of expert slots in the cluster, `s * N`.
    pub fn total_slots(&self) -> usize {
        self.slots_per_rank * self.nodes
    }

    /// Rank hosting global slot `j`.
    pub fn rank_of_slot(&self, slot: usize) -> usize {
        slot / self.slots_per_rank
    }

    /// Reference cluster preset backing `costmodel --preset paper-example`:
    /// 2048 nodes with 2 slots each hosting 64 GPT-3-scale expert classes
    /// (3.375 GB gradients/weights, 27 GB optimizer state per class) over a
    /// 64 GB/s host link and a 400 Gbps (50 GB/s) network.
    pub fn reference_example() -> Self {
        ClusterSpec {
            nodes: 2048,
            slots_per_rank: 2,
            expert_classes: 64,
            bw_pci: 64e9,
            bw_net: 50e9,
            grad_bytes: 3_375_000_000,
            weight_bytes: 3_375_000_000,
            optimizer_bytes: 27_000_000_000,
            tokens_per_batch: 2_097_152,
            capacity_factor: 1.0,
        }
    }
}

/// Validates every [`ClusterSpec`] invariant and returns the spec unchanged.
///
/// Validation is idempotent: validating a validated spec yields an equal
/// value.
pub fn validate_cluster(spec: ClusterSpec) -> Result<ClusterSpec> {
    if spec.nodes < 1 {
        return Err(Error::InvalidSpec("nodes must be >= 1".into()));
    }
    if spec.slots_per_rank < 1 {
        return Err(Error::InvalidSpec("slots_per_rank must be >= 1".into()));
    }
    if spec.expert_classes < 1 {
        return Err(Error::InvalidSpec("expert_classes must be >= 1".into()));
    }
    if spec.expert_classes > spec.total_slots() {
        return Err(Error::InvalidSpec(format!(
            "expert_classes ({}) exceeds total slots s*N ({})",
            spec.expert_classes,
            spec.total_slots()
        )));
    }
    if spec.bw_pci.is_nan() || spec.bw_pci <= 0.0 {
        return Err(Error::InvalidSpec("bw_pci must be > 0".into()));
    }
    if spec.bw_net.is_nan() || spec.bw_net <= 0.0 {
        return Err(Error::InvalidSpec("bw_net must be > 0".into()));
    }
    if spec.grad_bytes == 0 {
        return Err(Error::InvalidSpec("grad_bytes must be > 0".into()));
    }
    if spec.weight_bytes == 0 {
        return Err(Error::InvalidSpec("weight_bytes must be > 0".into()));
    }
    if spec.optimizer_bytes == 0 {
        return Err(Error::InvalidSpec("optimizer_bytes must be > 0".into()));
    }
    if spec.capacity_factor.is_nan() || spec.capacity_factor <= 0.0 {
        return Err(Error::InvalidSpec("capacity_factor must be > 0".into()));
    }
    Ok(spec)
}

/// Assignment of expert classes to the `s * N` global expert slots.
///
/// `replica_counts[i]` is derived as the number of slots hosting class `i`;
/// every accepted placement satisfies `replica_counts[i] >= 1` for all classes
/// and `sum(replica_counts) == slot count`. Construction goes through
/// [`ExpertPlacement::from_slots`] so those invariants always hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpertPlacement {
    slot_assignment: Vec<usize>,
    replica_counts: Vec<usize>,
}

impl ExpertPlacement {
    /// Builds a placement from a slot assignment, deriving replica counts and
    /// checking that every class id is in range and every class is hosted at
    /// least once.
    pub fn from_slots(slot_assignment: Vec<usize>, expert_classes: usize) -> Result<Self> {
        if expert_classes == 0 {
            return Err(Error::InvalidPlacement("no expert classes".into()));
        }
        if slot_assignment.is_empty() {
            return Err(Error::InvalidPlacement("no expert slots".into()));
        }
        let mut replica_counts = vec![0usize; expert_classes];
        for (slot, &class) in slot_assignment.iter().enumerate() {
            if class >= expert_classes {
                return Err(Error::InvalidPlacement(format!(
                    "slot {slot} assigned class {class}, but only {expert_classes} classes exist"
                )));
            }
            replica_counts[class] += 1;
        }
        if let Some(absent) = replica_counts.iter().position(|&r| r == 0) {
            return Err(Error::InvalidPlacement(format!(
                "class {absent} absent from the placement"
            )));
        }
        Ok(ExpertPlacement {
            slot_assignment,
            replica_counts,
        })
    }

    /// Expert class hosted by each global slot.
    pub fn slot_assignment(&self) -> &[usize] {
        &self.slot_assignment
    }

    /// Replica count `r_i` for each expert class.
    pub fn replica_counts(&self) -> &[usize] {
        &self.replica_counts
    }

    /// Number of expert classes.
    pub fn expert_classes(&self) -> usize {
        self.replica_counts.len()
    }

    /// Total number of expert slots.
    pub fn total_slots(&self) -> usize {
        self.slot_assignment.len()
    }

    /// Global slot indices hosting `class`, in ascending order.
    pub fn slots_of_class(&self, class: usize) -> Vec<usize> {
        self.slot_assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(slot, _)| slot)
            .collect()
    }

    /// Distinct ranks hosting `class`, ascending, given `slots_per_rank`.
    pub fn hosting_ranks(&self, class: usize, slots_per_rank: usize) -> Vec<usize> {
        // Slots come back ascending, so ranks are already non-decreasing.
        let mut ranks: Vec<usize> = self
            .slots_of_class(class)
            .iter()
            .map(|&slot| slot / slots_per_rank)
            .collect();
        ranks.dedup();
        ranks
    }

    /// Number of instances of `class` hosted on `rank`.
    pub fn local_replicas(&self, class: usize, rank: usize, slots_per_rank: usize) -> usize {
        let start = rank * slots_per_rank;
        self.slot_assignment[start..start + slots_per_rank]
            .iter()
            .filter(|&&c| c == class)
            .count()
    }
}

/// Builds an [`ExpertPlacement`] against a cluster spec, additionally checking
/// that the assignment covers exactly the cluster's `s * N` slots.
pub fn placement_from_slots(
    slot_assignment: Vec<usize>,
    spec: &ClusterSpec,
) -> Result<ExpertPlacement> {
    if slot_assignment.len() != spec.total_slots() {
        return Err(Error::InvalidPlacement(format!(
            "slot assignment has {} entries, cluster has {} slots",
            slot_assignment.len(),
            spec.total_slots()
        )));
    }
    ExpertPlacement::from_slots(slot_assignment, spec.expert_classes)
}

/// Per-iteration token counts assigned to each expert class by the router.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityVector {
    /// Iteration index, starting at 0.
    pub iteration: usize,
    /// Token count per expert class.
    pub counts: Vec<u64>,
}

impl PopularityVector {
    /// Total tokens assigned this iteration.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// An ordered sequence of per-iteration popularity vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    /// Number of expert classes `E` shared by every row.
    pub expert_classes: usize,
    /// Token budget used at generation time.
    pub tokens_per_batch: u64,
    /// Rows for iterations `0..T`.
    pub rows: Vec<PopularityVector>,
}

impl Trace {
    /// Checks that all rows share length `E`, iteration indices are
    /// consecutive from 0, and no row exceeds the token budget.
    pub fn validate(&self) -> Result<()> {
        for (t, row) in self.rows.iter().enumerate() {
            if row.counts.len() != self.expert_classes {
                return Err(Error::ShapeMismatch(format!(
                    "row {t} has {} counts, trace declares {} expert classes",
                    row.counts.len(),
                    self.expert_classes
                )));
            }
            if row.iteration != t {
                return Err(Error::InvalidInput(format!(
                    "row {t} carries iteration index {}, expected {t}",
                    row.iteration
                )));
            }
            if row.total() > self.tokens_per_batch {
                return Err(Error::InvalidInput(format!(
                    "row {t} assigns {} tokens, budget is {}",
                    row.total(),
                    self.tokens_per_batch
                )));
            }
        }
        Ok(())
    }

    /// Number of iterations in the trace.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// True when the trace holds no iterations.
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ClusterSpec {
        ClusterSpec {
            nodes: 2,
            slots_per_rank: 2,
            expert_classes: 2,
            bw_pci: 64e9,
            bw_net: 50e9,
            grad_bytes: 100,
            weight_bytes: 100,
            optimizer_bytes: 800,
            tokens_per_batch: 1024,
            capacity_factor: 1.0,
        }
    }

    #[test]
    fn validate_accepts_reference_example() {
        let spec = ClusterSpec::reference_example();
        assert_eq!(spec.nodes, 2048);
        assert_eq!(spec.slots_per_rank, 2);
        let validated = validate_cluster(spec.clone()).unwrap();
        assert_eq!(validated, spec);
    }

    #[test]
    fn validate_accepts_minimal_cluster() {
        let spec = ClusterSpec {
            nodes: 1,
            slots_per_rank: 1,
            expert_classes: 1,
            ..small_spec()
        };
        assert!(validate_cluster(spec).is_ok());
    }

    #[test]
    fn validate_rejects_more_classes_than_slots() {
        let spec = ClusterSpec {
            expert_classes: 5,
            ..small_spec()
        };
        let err = validate_cluster(spec).unwrap_err();
        match err {
            Error::InvalidSpec(msg) => assert!(msg.contains("exceeds total slots"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn validate_is_idempotent() {
        let spec = small_spec();
        let once = validate_cluster(spec).unwrap();
        let twice = validate_cluster(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn validate_rejects_nonpositive_quantities() {
        for field in ["bw_pci", "bw_net", "grad", "weight", "opt", "cf"] {
            let mut spec = small_spec();
            match field {
                "bw_pci" => spec.bw_pci = 0.0,
                "bw_net" => spec.bw_net = -1.0,
                "grad" => spec.grad_bytes = 0,
                "weight" => spec.weight_bytes = 0,
                "opt" => spec.optimizer_bytes = 0,
                _ => spec.capacity_factor = 0.0,
            }
            assert!(validate_cluster(spec).is_err(), "{field} accepted");
        }
    }

    #[test]
    fn placement_derives_replica_counts() {
        let spec = small_spec();
        let p = placement_from_slots(vec![0, 0, 1, 1], &spec).unwrap();
        assert_eq!(p.replica_counts(), &[2, 2]);
        let p = placement_from_slots(vec![0, 0, 0, 1], &spec).unwrap();
        assert_eq!(p.replica_counts(), &[3, 1]);
    }

    #[test]
    fn placement_rejects_absent_class() {
        let spec = small_spec();
        let err = placement_from_slots(vec![0, 0, 0, 0], &spec).unwrap_err();
        match err {
            Error::InvalidPlacement(msg) => assert!(msg.contains("class 1 absent"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn placement_rejects_out_of_range_class() {
        let spec = small_spec();
        assert!(placement_from_slots(vec![0, 1, 2, 0], &spec).is_err());
    }

    #[test]
    fn placement_rejects_wrong_length() {
        let spec = small_spec();
        assert!(placement_from_slots(vec![0, 1], &spec).is_err());
    }

    #[test]
    fn hosting_ranks_and_local_replicas() {
        let spec = small_spec();
        let p = placement_from_slots(vec![0, 0, 0, 1], &spec).unwrap();
        assert_eq!(p.hosting_ranks(0, 2), vec![0, 1]);
        assert_eq!(p.hosting_ranks(1, 2), vec![1]);
        assert_eq!(p.local_replicas(0, 0, 2), 2);
        assert_eq!(p.local_replicas(0, 1, 2), 1);
        assert_eq!(p.local_replicas(1, 0, 2), 0);
    }

    #[test]
    fn cluster_spec_json_round_trip_with_default_capacity_factor() {
        let json = r#"{
            "nodes": 4, "slots_per_rank": 2, "expert_classes": 4,
            "bw_pci": 32e9, "bw_net": 12.5e9,
            "grad_bytes": 1000, "weight_bytes": 1000, "optimizer_bytes": 8000,
            "tokens_per_batch": 4096
        }"#;
        let spec: ClusterSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.capacity_factor, 1.0);
        let back: ClusterSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn trace_validation_catches_shape_and_index_errors() {
        let good = Trace {
            expert_classes: 2,
            tokens_per_batch: 10,
            rows: vec![
                PopularityVector { iteration: 0, counts: vec![4, 6] },
                PopularityVector { iteration: 1, counts: vec![10, 0] },
            ],
        };
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.rows[1].counts = vec![1, 2, 3];
        assert!(bad.validate().is_err());

        let mut bad = good.clone();
        bad.rows[1].iteration = 5;
        assert!(bad.validate().is_err());

        let mut bad = good;
        bad.rows[0].counts = vec![11, 0];
        assert!(bad.validate().is_err());
    }
}
