//! Explicit communication plans for one training iteration: gradient
//! all-reduce across expert instances, the consecutive-rank group registry,
//! gradient-shard collection to the per-rank optimizer partitions, and
//! updated-weight scatter materializing the next placement.
//!
//! Byte accounting follows two complementary views that coincide in total:
//!
//! - Per-rank `{pci_bytes, net_bytes}` charge every remote instance's shard
//!   individually (co-located replicas are merged free of charge only on the
//!   rank that owns the destination partition) and one host-link shard per
//!   expert class per rank. Divided by the bandwidths these reproduce the
//!   closed-form per-rank phase times.
//! - Global phase volumes count each logical instance<->partition flow once:
//!   the all-reduce absorbs `(r_i - 1) * G` per class, the gather moves
//!   `E * G`, and the scatter plus free same-rank copies move `s * N * W`.
//!   Both phases total exactly `s*N*G` and `s*N*W` for every placement.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ClusterSpec, ExpertPlacement};

/// Link carrying a transfer: the host<->accelerator interconnect of one rank,
/// or the cross-node network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkClass {
    LocalPci,
    Network,
}

/// One point-to-point transfer of an expert-class shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferTuple {
    pub src_rank: usize,
    pub dst_rank: usize,
    pub expert_class: usize,
    pub bytes: u64,
    pub link: LinkClass,
}

/// Reduction plan for one expert class: intra-rank adds into a representative
/// slot, an inter-rank sum across representatives, normalization by the total
/// instance count, and intra-rank broadcast back.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReducePlan {
    pub expert_class: usize,
    /// Representative global slot per hosting rank, ascending rank order.
    pub representatives: Vec<usize>,
    /// Same-rank adds `(source_slot, representative_slot)`.
    pub intra_reduce: Vec<(usize, usize)>,
    /// Ranks hosting at least one instance, ascending.
    pub inter_group: Vec<usize>,
    /// Normalization divisor: the total instance count `r_i`.
    pub divisor: usize,
    /// Same-rank copies `(representative_slot, destination_slot)`.
    pub intra_broadcast: Vec<(usize, usize)>,
    /// Volume absorbed by same-rank adds: `(r_i - hosting_ranks) * G`.
    pub intra_add_bytes: u64,
    /// Volume exchanged between representatives: `(hosting_ranks - 1) * G`.
    pub inter_exchange_bytes: u64,
}

/// All-reduce plan covering every expert class of a placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllReducePlan {
    pub per_class: Vec<ClassReducePlan>,
    pub total_slots: usize,
}

impl AllReducePlan {
    /// Total bytes absorbed by gradient synchronization, all classes.
    pub fn sync_bytes(&self) -> u64 {
        self.per_class
            .iter()
            .map(|c| c.intra_add_bytes + c.inter_exchange_bytes)
            .sum()
    }
}

/// The set of contiguous rank intervals `[a..b]`, `0 <= a < b < N`, usable as
/// pre-registered collective communication groups. Holds `N*(N-1)/2` entries,
/// materialized lazily.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupRegistry {
    nodes: usize,
}

/// Builds the registry of all contiguous rank intervals for an `N`-rank
/// cluster.
pub fn build_group_registry(nodes: usize) -> GroupRegistry {
    GroupRegistry { nodes }
}

impl GroupRegistry {
    /// Number of registered groups, `N*(N-1)/2`.
    pub fn len(&self) -> u64 {
        let n = self.nodes as u64;
        n * (n - 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether the interval `[first..last]` is registered.
    pub fn contains(&self, first: usize, last: usize) -> bool {
        first < last && last < self.nodes
    }

    /// All intervals, shortest first, each ordered by start rank.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.nodes;
        (2..=n).flat_map(move |len| (0..=(n - len)).map(move |start| (start, start + len - 1)))
    }
}

/// Per-rank byte totals for one communication phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RankBytes {
    pub pci_bytes: u64,
    pub net_bytes: u64,
}

/// Complete communication plan for one iteration: gradient synchronization,
/// gradient-shard gather, and updated-weight scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommPlan {
    pub allreduce: AllReducePlan,
    pub grad_gather: Vec<TransferTuple>,
    pub weight_scatter: Vec<TransferTuple>,
    /// Per-rank gradient-phase totals (cost-model accounting).
    pub grad_rank_bytes: Vec<RankBytes>,
    /// Per-rank weight-phase totals (cost-model accounting).
    pub weight_rank_bytes: Vec<RankBytes>,
    /// Free same-rank copies filling duplicate slots of one class.
    pub weight_intra_copy_bytes: u64,
}

/// Global byte totals aggregated from a [`CommPlan`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanByteTotals {
    pub per_rank_grad: Vec<RankBytes>,
    pub per_rank_weight: Vec<RankBytes>,
    /// End-to-end gradient-phase volume; equals `s*N*G` for every placement.
    pub grad_total_bytes: u64,
    /// End-to-end weight-phase volume; equals `s*N*W` for every placement.
    pub weight_total_bytes: u64,
}

/// Size of partition `index` when `total` bytes are split into `parts`
/// near-equal integer shards that sum exactly to `total`.
fn shard_bytes(total: u64, parts: u64, index: u64) -> u64 {
    total / parts + u64::from(index < total % parts)
}

/// Source rank feeding expert `class`'s gradient shard to `dst_rank`: the
/// destination itself when it hosts the class, otherwise the hosting ranks are
/// cycled round-robin by destination index.
pub fn gradient_source(hosting_ranks: &[usize], dst_rank: usize) -> usize {
    if hosting_ranks.binary_search(&dst_rank).is_ok() {
        dst_rank
    } else {
        hosting_ranks[dst_rank % hosting_ranks.len()]
    }
}

/// Builds the per-class reduction plan: the lowest-indexed local slot on each
/// hosting rank is elected representative, remaining local slots add into it,
/// representatives form the inter-rank group, and the divisor is the class's
/// total instance count.
pub fn plan_allreduce(placement: &ExpertPlacement, spec: &ClusterSpec) -> AllReducePlan {
    let s = spec.slots_per_rank;
    let grad = spec.grad_bytes;
    let mut per_class = Vec::with_capacity(placement.expert_classes());

    for class in 0..placement.expert_classes() {
        let mut by_rank: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for slot in placement.slots_of_class(class) {
            by_rank.entry(slot / s).or_default().push(slot);
        }

        let mut representatives = Vec::with_capacity(by_rank.len());
        let mut intra_reduce = Vec::new();
        let mut intra_broadcast = Vec::new();
        let mut inter_group = Vec::with_capacity(by_rank.len());
        for (rank, slots) in &by_rank {
            let rep = slots[0];
            representatives.push(rep);
            inter_group.push(*rank);
            for &other in &slots[1..] {
                intra_reduce.push((other, rep));
                intra_broadcast.push((rep, other));
            }
        }

        let replicas = placement.replica_counts()[class];
        let hosting = by_rank.len();
        per_class.push(ClassReducePlan {
            expert_class: class,
            representatives,
            intra_reduce,
            inter_group,
            divisor: replicas,
            intra_broadcast,
            intra_add_bytes: (replicas - hosting) as u64 * grad,
            inter_exchange_bytes: (hosting - 1) as u64 * grad,
        });
    }

    AllReducePlan {
        per_class,
        total_slots: placement.total_slots(),
    }
}

/// Runs the reduction plan over concrete per-slot vectors: intra-rank adds,
/// inter-rank sum over representatives, division by the instance count, and
/// broadcast back. Every hosting slot ends with the mean over all `r_i`
/// instance vectors.
pub fn simulate_allreduce(plan: &AllReducePlan, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if values.len() != plan.total_slots {
        return Err(Error::ShapeMismatch(format!(
            "{} value vectors for {} slots",
            values.len(),
            plan.total_slots
        )));
    }
    let mut vals = values.to_vec();

    for class_plan in &plan.per_class {
        let width = vals[class_plan.representatives[0]].len();
        let slots_of_class = class_plan
            .representatives
            .iter()
            .chain(class_plan.intra_reduce.iter().map(|(src, _)| src));
        for &slot in slots_of_class {
            if vals[slot].len() != width {
                return Err(Error::ShapeMismatch(format!(
                    "class {} mixes vector lengths {} and {}",
                    class_plan.expert_class,
                    width,
                    vals[slot].len()
                )));
            }
        }

        for &(src, rep) in &class_plan.intra_reduce {
            let contribution = vals[src].clone();
            for (acc, v) in vals[rep].iter_mut().zip(&contribution) {
                *acc += v;
            }
        }

        let mut sum = vec![0.0; width];
        for &rep in &class_plan.representatives {
            for (acc, v) in sum.iter_mut().zip(&vals[rep]) {
                *acc += v;
            }
        }
        let mean: Vec<f64> = sum
            .iter()
            .map(|v| v / class_plan.divisor as f64)
            .collect();

        for &rep in &class_plan.representatives {
            vals[rep] = mean.clone();
        }
        for &(rep, dst) in &class_plan.intra_broadcast {
            vals[dst] = vals[rep].clone();
        }
    }

    Ok(vals)
}

/// Plans gradient-shard collection: one tuple per (expert class, destination
/// rank), local whenever the destination hosts the class, remote sources
/// cycled round-robin. Shards are near-equal integer splits of `G` summing
/// exactly to `G` per class.
pub fn plan_grad_gather(placement: &ExpertPlacement, spec: &ClusterSpec) -> Vec<TransferTuple> {
    let nodes = spec.nodes;
    let mut tuples = Vec::with_capacity(placement.expert_classes() * nodes);
    for class in 0..placement.expert_classes() {
        let hosts = placement.hosting_ranks(class, spec.slots_per_rank);
        for dst in 0..nodes {
            let src = gradient_source(&hosts, dst);
            tuples.push(TransferTuple {
                src_rank: src,
                dst_rank: dst,
                expert_class: class,
                bytes: shard_bytes(spec.grad_bytes, nodes as u64, dst as u64),
                link: if src == dst {
                    LinkClass::LocalPci
                } else {
                    LinkClass::Network
                },
            });
        }
    }
    tuples
}

/// Plans the updated-weight scatter materializing `next_placement`: each
/// (rank, hosted class) pair receives one shard from every optimizer
/// partition rank; additional same-class slots on that rank are filled by
/// free same-rank copies and appear only in the copy-byte ledger.
pub fn plan_weight_scatter(
    next_placement: &ExpertPlacement,
    spec: &ClusterSpec,
) -> Vec<TransferTuple> {
    let nodes = spec.nodes;
    let s = spec.slots_per_rank;
    let mut tuples = Vec::new();
    for dst in 0..nodes {
        for class in distinct_classes_on_rank(next_placement, dst, s) {
            for src in 0..nodes {
                tuples.push(TransferTuple {
                    src_rank: src,
                    dst_rank: dst,
                    expert_class: class,
                    bytes: shard_bytes(spec.weight_bytes, nodes as u64, src as u64),
                    link: if src == dst {
                        LinkClass::LocalPci
                    } else {
                        LinkClass::Network
                    },
                });
            }
        }
    }
    tuples
}

/// Distinct classes hosted on `rank`, ascending.
fn distinct_classes_on_rank(placement: &ExpertPlacement, rank: usize, s: usize) -> Vec<usize> {
    let mut classes: Vec<usize> = placement.slot_assignment()[rank * s..(rank + 1) * s].to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Per-rank phase totals under the cost-model accounting: one host-link shard
/// per expert class, and one network shard per remote instance of every
/// class.
fn rank_bytes_for_phase(
    placement: &ExpertPlacement,
    spec: &ClusterSpec,
    instance_bytes: u64,
) -> Vec<RankBytes> {
    let nodes = spec.nodes as u64;
    let classes = placement.expert_classes() as u64;
    (0..spec.nodes)
        .map(|rank| {
            let shard = shard_bytes(instance_bytes, nodes, rank as u64);
            let remote_instances: usize = (0..placement.expert_classes())
                .map(|class| {
                    placement.replica_counts()[class]
                        - placement.local_replicas(class, rank, spec.slots_per_rank)
                })
                .sum();
            debug_assert_eq!(
                remote_instances,
                placement.total_slots() - spec.slots_per_rank
            );
            RankBytes {
                pci_bytes: classes * shard,
                net_bytes: remote_instances as u64 * shard,
            }
        })
        .collect()
}

/// Builds the complete communication plan for one iteration against a single
/// placement (gradients collected from it, weights scattered back to it).
pub fn build_comm_plan(placement: &ExpertPlacement, spec: &ClusterSpec) -> Result<CommPlan> {
    if placement.total_slots() != spec.total_slots()
        || placement.expert_classes() != spec.expert_classes
    {
        return Err(Error::ShapeMismatch(format!(
            "placement is {}x{} (slots x classes), cluster is {}x{}",
            placement.total_slots(),
            placement.expert_classes(),
            spec.total_slots(),
            spec.expert_classes
        )));
    }

    let duplicate_slots = (placement.total_slots()
        - (0..spec.nodes)
            .map(|rank| distinct_classes_on_rank(placement, rank, spec.slots_per_rank).len())
            .sum::<usize>()) as u64;

    Ok(CommPlan {
        allreduce: plan_allreduce(placement, spec),
        grad_gather: plan_grad_gather(placement, spec),
        weight_scatter: plan_weight_scatter(placement, spec),
        grad_rank_bytes: rank_bytes_for_phase(placement, spec, spec.grad_bytes),
        weight_rank_bytes: rank_bytes_for_phase(placement, spec, spec.weight_bytes),
        weight_intra_copy_bytes: duplicate_slots * spec.weight_bytes,
    })
}

/// Aggregates a plan into per-rank link totals and the end-to-end phase
/// volumes.
pub fn plan_byte_totals(plan: &CommPlan) -> PlanByteTotals {
    let gather: u64 = plan.grad_gather.iter().map(|t| t.bytes).sum();
    let scatter: u64 = plan.weight_scatter.iter().map(|t| t.bytes).sum();
    PlanByteTotals {
        per_rank_grad: plan.grad_rank_bytes.clone(),
        per_rank_weight: plan.weight_rank_bytes.clone(),
        grad_total_bytes: plan.allreduce.sync_bytes() + gather,
        weight_total_bytes: scatter + plan.weight_intra_copy_bytes,
    }
}
