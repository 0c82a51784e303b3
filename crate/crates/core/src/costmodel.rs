//! Closed-form memory, data-volume and communication-time model.
//!
//! Two designs are compared: a static baseline replicating every class
//! `r = s*N/E` times with the optimizer sharded inside each replica set, and
//! the decoupled design that shards every class's optimizer uniformly across
//! all `N` nodes while replicating instances non-uniformly. Both move the
//! same data volume per iteration; the decoupled design pays a small locality
//! penalty captured by `overhead_ratio`.
//!
//! Per-rank phase times are serialized host-link plus network terms with no
//! overlap. The static forms are evaluated with real-valued `r` even when
//! `E` does not divide `s*N`; the algebra never uses integrality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClusterSpec;

/// Where the statically-sharded optimizer lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerVariant {
    /// Optimizer offloaded to host memory; shards cross the host link.
    Offloaded,
    /// Optimizer sharded across accelerator memory; no host-link term.
    HbmOnly,
}

/// Per-rank communication time of the gradient and weight phases, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub t_grad_s: f64,
    pub t_weight_s: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.t_grad_s + self.t_weight_s
    }
}

/// Gradient and weight bytes moved per iteration, cluster-wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DataVolume {
    pub grad_bytes: u64,
    pub weight_bytes: u64,
}

impl DataVolume {
    pub fn combined(&self) -> u64 {
        self.grad_bytes + self.weight_bytes
    }
}

/// What a migrated expert slot carries across the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MigrationPayload {
    Weights,
    Optimizer,
    WeightsAndOptimizer,
}

/// Full cost-model evaluation for one cluster spec and optimizer variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub mem_footprint_bytes: u64,
    pub data_grad_bytes: u64,
    pub data_weight_bytes: u64,
    pub t_grad_static: f64,
    pub t_weight_static: f64,
    pub t_grad_dynamic: f64,
    pub t_weight_dynamic: f64,
    pub overhead_ratio: f64,
    pub variant: OptimizerVariant,
}

/// Total optimizer memory footprint, `E * O`. Identical for both designs.
pub fn mem_footprint(spec: &ClusterSpec) -> u64 {
    spec.expert_classes as u64 * spec.optimizer_bytes
}

/// Cluster-wide data moved per phase: `s*N*G` gradients, `s*N*W` weights.
/// Identical for both designs and independent of the replica distribution.
pub fn data_volume(spec: &ClusterSpec) -> DataVolume {
    let instances = spec.total_slots() as u64;
    DataVolume {
        grad_bytes: instances * spec.grad_bytes,
        weight_bytes: instances * spec.weight_bytes,
    }
}

fn phase_time(spec: &ClusterSpec, bytes: u64, net_share: f64, variant: OptimizerVariant) -> f64 {
    let n = spec.nodes as f64;
    let e = spec.expert_classes as f64;
    let x = bytes as f64;
    let pci = match variant {
        OptimizerVariant::Offloaded => e / n * x / spec.bw_pci,
        OptimizerVariant::HbmOnly => 0.0,
    };
    pci + net_share / n * x / spec.bw_net
}

/// Per-rank phase times of the static baseline for a given optimizer
/// placement variant: `(E/N)(X/BW_pci) + ((sN-E)/N)(X/BW_net)`.
pub fn comm_time_static_variant(spec: &ClusterSpec, variant: OptimizerVariant) -> PhaseTimes {
    let net_share = (spec.total_slots() - spec.expert_classes) as f64;
    PhaseTimes {
        t_grad_s: phase_time(spec, spec.grad_bytes, net_share, variant),
        t_weight_s: phase_time(spec, spec.weight_bytes, net_share, variant),
    }
}

/// Per-rank phase times of the decoupled design for a given variant:
/// `(E/N)(X/BW_pci) + ((sN-s)/N)(X/BW_net)`. Independent of the replica
/// distribution.
pub fn comm_time_dynamic_variant(spec: &ClusterSpec, variant: OptimizerVariant) -> PhaseTimes {
    let net_share = (spec.total_slots() - spec.slots_per_rank) as f64;
    PhaseTimes {
        t_grad_s: phase_time(spec, spec.grad_bytes, net_share, variant),
        t_weight_s: phase_time(spec, spec.weight_bytes, net_share, variant),
    }
}

/// Static-baseline phase times with the optimizer offloaded to host memory.
pub fn comm_time_static(spec: &ClusterSpec) -> PhaseTimes {
    comm_time_static_variant(spec, OptimizerVariant::Offloaded)
}

/// Decoupled-design phase times with the optimizer offloaded to host memory.
pub fn comm_time_dynamic(spec: &ClusterSpec) -> PhaseTimes {
    comm_time_dynamic_variant(spec, OptimizerVariant::Offloaded)
}

/// Relative extra communication cost of the decoupled design over the static
/// baseline:
/// `(E-s) / (sN - E(1 - BW_net/BW_pci))` offloaded,
/// `(E-s) / (sN - E)` when the optimizer stays in accelerator memory.
pub fn overhead_ratio(spec: &ClusterSpec, variant: OptimizerVariant) -> f64 {
    let e = spec.expert_classes as f64;
    let s = spec.slots_per_rank as f64;
    let sn = spec.total_slots() as f64;
    match variant {
        OptimizerVariant::Offloaded => (e - s) / (sn - e * (1.0 - spec.bw_net / spec.bw_pci)),
        OptimizerVariant::HbmOnly => (e - s) / (sn - e),
    }
}

/// Upper bound on per-rank phase times when the cluster is split into `k`
/// groups, each holding the optimizer of `E/k` classes across `N/k` nodes:
/// `(E/N)(X/BW_pci) + k((sN-s)/N)(X/BW_net)`. Reduces to
/// [`comm_time_dynamic`] at `k = 1`.
pub fn k_partition_bound(spec: &ClusterSpec, k: usize) -> Result<PhaseTimes> {
    if k < 1 {
        return Err(Error::InvalidK("k must be >= 1".into()));
    }
    if !spec.nodes.is_multiple_of(k) || !spec.expert_classes.is_multiple_of(k) {
        return Err(Error::InvalidK(format!(
            "k = {k} must divide both nodes ({}) and expert classes ({})",
            spec.nodes, spec.expert_classes
        )));
    }
    let net_share = k as f64 * (spec.total_slots() - spec.slots_per_rank) as f64;
    Ok(PhaseTimes {
        t_grad_s: phase_time(spec, spec.grad_bytes, net_share, OptimizerVariant::Offloaded),
        t_weight_s: phase_time(spec, spec.weight_bytes, net_share, OptimizerVariant::Offloaded),
    })
}

/// Network seconds to relocate `moved` experts carrying the given payload.
pub fn migration_cost(moved: u64, spec: &ClusterSpec, payload: MigrationPayload) -> f64 {
    let per_expert = match payload {
        MigrationPayload::Weights => spec.weight_bytes,
        MigrationPayload::Optimizer => spec.optimizer_bytes,
        MigrationPayload::WeightsAndOptimizer => spec.weight_bytes + spec.optimizer_bytes,
    };
    (moved * per_expert) as f64 / spec.bw_net
}

/// Evaluates the whole model for one spec and variant.
pub fn cost_report(spec: &ClusterSpec, variant: OptimizerVariant) -> CostReport {
    let volume = data_volume(spec);
    let stat = comm_time_static_variant(spec, variant);
    let dynamic = comm_time_dynamic_variant(spec, variant);
    CostReport {
        mem_footprint_bytes: mem_footprint(spec),
        data_grad_bytes: volume.grad_bytes,
        data_weight_bytes: volume.weight_bytes,
        t_grad_static: stat.t_grad_s,
        t_weight_static: stat.t_weight_s,
        t_grad_dynamic: dynamic.t_grad_s,
        t_weight_dynamic: dynamic.t_weight_s,
        overhead_ratio: overhead_ratio(spec, variant),
        variant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn footprint_reference_values() {
        let spec = ClusterSpec::reference_example();
        assert_eq!(mem_footprint(&spec), 1_728_000_000_000);

        let tiny = ClusterSpec {
            expert_classes: 1,
            optimizer_bytes: 1,
            ..spec.clone()
        };
        assert_eq!(mem_footprint(&tiny), 1);

        let doubled = ClusterSpec {
            expert_classes: 128,
            ..spec
        };
        assert_eq!(mem_footprint(&doubled), 2 * 1_728_000_000_000);
    }

    #[test]
    fn data_volume_reference_values() {
        let spec = ClusterSpec::reference_example();
        let v = data_volume(&spec);
        assert_eq!(v.grad_bytes, 13_824_000_000_000);
        assert_eq!(v.weight_bytes, 13_824_000_000_000);
        assert_eq!(v.combined(), 27_648_000_000_000);

        let single = ClusterSpec {
            nodes: 1,
            slots_per_rank: 1,
            expert_classes: 1,
            ..spec
        };
        let v = data_volume(&single);
        assert_eq!(v.grad_bytes, single.grad_bytes);
        assert_eq!(v.weight_bytes, single.weight_bytes);
    }

    #[test]
    fn static_time_reference_value() {
        let spec = ClusterSpec::reference_example();
        let t = comm_time_static(&spec);
        assert!(close(t.total(), 0.26908, 1e-4), "total = {}", t.total());
    }

    #[test]
    fn dynamic_time_reference_value() {
        let spec = ClusterSpec::reference_example();
        let t = comm_time_dynamic(&spec);
        assert!(close(t.total(), 0.27316, 1e-4), "total = {}", t.total());
    }

    #[test]
    fn infinite_pci_matches_hbm_variant() {
        let mut spec = ClusterSpec::reference_example();
        let hbm = comm_time_static_variant(&spec, OptimizerVariant::HbmOnly);
        spec.bw_pci = f64::INFINITY;
        let limit = comm_time_static_variant(&spec, OptimizerVariant::Offloaded);
        assert_eq!(limit.t_grad_s, hbm.t_grad_s);
        assert_eq!(limit.t_weight_s, hbm.t_weight_s);
    }

    #[test]
    fn one_instance_per_class_static_form() {
        // E = s*N: the network share vanishes for the static baseline.
        let spec = ClusterSpec {
            expert_classes: 4096,
            ..ClusterSpec::reference_example()
        };
        let t = comm_time_static(&spec);
        let expected = 4096.0 / 2048.0 * spec.grad_bytes as f64 / spec.bw_pci;
        assert!(rel_close(t.t_grad_s, expected, 1e-12));
    }

    #[test]
    fn dynamic_equals_static_when_every_class_fits_one_rank() {
        let spec = ClusterSpec {
            nodes: 8,
            slots_per_rank: 4,
            expert_classes: 4,
            ..ClusterSpec::reference_example()
        };
        let stat = comm_time_static(&spec);
        let dynamic = comm_time_dynamic(&spec);
        assert_eq!(stat.t_grad_s, dynamic.t_grad_s);
        assert_eq!(stat.t_weight_s, dynamic.t_weight_s);
        assert_eq!(overhead_ratio(&spec, OptimizerVariant::Offloaded), 0.0);
        assert_eq!(overhead_ratio(&spec, OptimizerVariant::HbmOnly), 0.0);
    }

    #[test]
    fn single_node_has_no_network_term() {
        let spec = ClusterSpec {
            nodes: 1,
            slots_per_rank: 4,
            expert_classes: 4,
            ..ClusterSpec::reference_example()
        };
        let t = comm_time_dynamic(&spec);
        let expected = 4.0 * spec.grad_bytes as f64 / spec.bw_pci;
        assert!(rel_close(t.t_grad_s, expected, 1e-12));
    }

    #[test]
    fn overhead_reference_values() {
        let spec = ClusterSpec::reference_example();
        let offloaded = overhead_ratio(&spec, OptimizerVariant::Offloaded);
        let hbm = overhead_ratio(&spec, OptimizerVariant::HbmOnly);
        assert!(rel_close(offloaded, 62.0 / 4082.0, 1e-12));
        assert!(rel_close(hbm, 62.0 / 4032.0, 1e-12));
        // Percentage-point agreement with the quoted figures.
        assert!(close(offloaded * 100.0, 1.519, 0.01));
        assert!(close(hbm * 100.0, 1.538, 0.01));
        assert!(hbm >= offloaded);
    }

    #[test]
    fn dynamic_minus_static_identity() {
        for (nodes, slots, classes) in [(2048, 2, 64), (16, 4, 16), (7, 3, 11)] {
            let spec = ClusterSpec {
                nodes,
                slots_per_rank: slots,
                expert_classes: classes,
                ..ClusterSpec::reference_example()
            };
            let delta = comm_time_dynamic(&spec).t_grad_s - comm_time_static(&spec).t_grad_s;
            let expected = (classes - slots) as f64 * spec.grad_bytes as f64
                / (nodes as f64 * spec.bw_net);
            assert!(
                rel_close(delta, expected, 1e-12),
                "delta {delta} vs {expected}"
            );
        }
    }

    #[test]
    fn k_partition_bound_reference_behaviour() {
        let spec = ClusterSpec::reference_example();
        let dynamic = comm_time_dynamic(&spec);
        let k1 = k_partition_bound(&spec, 1).unwrap();
        assert_eq!(k1.t_grad_s, dynamic.t_grad_s);
        assert_eq!(k1.t_weight_s, dynamic.t_weight_s);

        // The network term doubles between k = 1 and k = 2.
        let k2 = k_partition_bound(&spec, 2).unwrap();
        let pci = 64.0 / 2048.0 * spec.grad_bytes as f64 / spec.bw_pci;
        let net1 = k1.t_grad_s - pci;
        let net2 = k2.t_grad_s - pci;
        assert!(rel_close(net2, 2.0 * net1, 1e-12));

        let mut last = 0.0;
        for k in [1, 2, 4, 8, 16] {
            let bound = k_partition_bound(&spec, k).unwrap().total();
            assert!(bound >= last);
            last = bound;
        }
    }

    #[test]
    fn k_partition_bound_rejects_bad_k() {
        let spec = ClusterSpec::reference_example();
        assert!(matches!(
            k_partition_bound(&spec, 0),
            Err(Error::InvalidK(_))
        ));
        assert!(matches!(
            k_partition_bound(&spec, 3),
            Err(Error::InvalidK(_))
        ));
    }

    #[test]
    fn migration_reference_values() {
        let spec = ClusterSpec::reference_example();
        let w = migration_cost(1, &spec, MigrationPayload::Weights);
        let o = migration_cost(1, &spec, MigrationPayload::Optimizer);
        let both = migration_cost(1, &spec, MigrationPayload::WeightsAndOptimizer);
        assert!(close(w, 0.0675, 1e-6));
        assert!(close(o, 0.54, 1e-6));
        assert!(close(both, 0.6075, 1e-6));
        assert_eq!(migration_cost(0, &spec, MigrationPayload::Weights), 0.0);
    }

    #[test]
    fn report_echoes_variant() {
        let spec = ClusterSpec::reference_example();
        let report = cost_report(&spec, OptimizerVariant::HbmOnly);
        assert_eq!(report.variant, OptimizerVariant::HbmOnly);
        assert_eq!(report.mem_footprint_bytes, 1_728_000_000_000);
        assert!(report.overhead_ratio > 0.0);
    }

    #[test]
    fn report_serializes_to_json() {
        let report = cost_report(&ClusterSpec::reference_example(), OptimizerVariant::Offloaded);
        let json: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
        assert_eq!(json["mem_footprint_bytes"].as_u64(), Some(1_728_000_000_000));
        assert_eq!(json["variant"], "offloaded");
    }
}
