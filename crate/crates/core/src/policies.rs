//! Replication policies: static uniform, interval rebalancing with optimizer
//! migration, and per-iteration rebalancing with zero migration.
//!
//! All policies start from the uniform placement at iteration 0. The
//! per-iteration policy reschedules from the previous iteration's popularity
//! every step and pays nothing for the resulting churn because the updated
//! weights ride the existing scatter. The interval policy reschedules every
//! `i` iterations and pays, per churned slot, the expert weights plus an
//! equal optimizer shard `O / r_new` over the network.
//!
//! The `inter_rank_only` flag forbids two instances of one class on the same
//! rank: replica counts are capped at `N` (surplus redistributed by the same
//! diff-driven loop) and runs are laid out column-major across ranks so
//! consecutive instances land on distinct ranks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterSpec, ExpertPlacement, PopularityVector};
use crate::scheduler::{self, contiguous_layout, placement_churn};

/// When a policy recomputes the expert placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Uniform replication, never rebalanced.
    Static,
    /// Rebalance every `every` iterations, migrating expert state.
    Interval { every: usize },
    /// Rebalance every iteration from the previous iteration's popularity.
    PerIteration,
}

/// A replication policy plus placement constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Forbid two instances of one class on the same rank.
    #[serde(default)]
    pub inter_rank_only: bool,
}

impl PolicyConfig {
    pub fn static_uniform() -> Self {
        PolicyConfig {
            kind: PolicyKind::Static,
            inter_rank_only: false,
        }
    }

    pub fn interval(every: usize) -> Self {
        PolicyConfig {
            kind: PolicyKind::Interval { every },
            inter_rank_only: false,
        }
    }

    pub fn per_iteration() -> Self {
        PolicyConfig {
            kind: PolicyKind::PerIteration,
            inter_rank_only: false,
        }
    }

    /// Stable label used for report keys and file names.
    pub fn label(&self) -> String {
        let base = match self.kind {
            PolicyKind::Static => "static".to_string(),
            PolicyKind::Interval { every } => format!("interval-{every}"),
            PolicyKind::PerIteration => "per-iteration".to_string(),
        };
        if self.inter_rank_only {
            format!("{base}-inter-rank")
        } else {
            base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PolicyKind::Interval { every } = self.kind {
            if every < 1 {
                return Err(Error::InvalidConfig(
                    "interval policy requires every >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Baseline replica count `r = s*N/E` of the static policy.
pub fn static_replicas(spec: &ClusterSpec) -> f64 {
    spec.total_slots() as f64 / spec.expert_classes as f64
}

/// One policy decision: the placement to run, the churn against the previous
/// placement, and the migration bytes it costs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub placement: ExpertPlacement,
    /// Global slots whose class changed versus the previous placement.
    pub migrated_slots: usize,
    /// Network bytes charged for the migration (interval policy only).
    pub migration_bytes: u64,
    /// Whether the policy recomputed the placement this iteration.
    pub rebalanced: bool,
}

/// Caps each count at `nodes`, redistributing the surplus to the classes with
/// the most negative diff that still have room.
fn cap_counts_at_nodes(counts: &mut [usize], diff: &mut [f64], nodes: usize) -> Result<()> {
    let total: usize = counts.iter().sum();
    if total > counts.len() * nodes {
        return Err(Error::InvalidPlacement(format!(
            "{total} instances cannot be spread over {} classes without \
             co-locating replicas ({nodes} ranks)",
            counts.len()
        )));
    }
    let mut surplus = 0usize;
    for (count, d) in counts.iter_mut().zip(diff.iter_mut()) {
        if *count > nodes {
            let over = *count - nodes;
            surplus += over;
            *d -= over as f64;
            *count = nodes;
        }
    }
    while surplus > 0 {
        let mut best: Option<usize> = None;
        for i in 0..counts.len() {
            if counts[i] < nodes && best.is_none_or(|b| diff[i] < diff[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("surplus fits under the per-class cap");
        counts[i] += 1;
        surplus -= 1;
        diff[i] += 1.0;
    }
    Ok(())
}

/// Lays out contiguous class runs column-major over the rank/slot grid, so a
/// run of length `<= N` touches distinct ranks.
fn column_major_layout(counts: &[usize], spec: &ClusterSpec) -> Vec<usize> {
    let runs = contiguous_layout(counts);
    let mut slots = vec![0usize; spec.total_slots()];
    for (position, &class) in runs.iter().enumerate() {
        let rank = position % spec.nodes;
        let local = position / spec.nodes;
        slots[rank * spec.slots_per_rank + local] = class;
    }
    slots
}

/// Popularity-proportional placement honoring the policy's constraints.
fn scheduled_placement(
    popularity: &[u64],
    cfg: &PolicyConfig,
    spec: &ClusterSpec,
) -> Result<ExpertPlacement> {
    let (mut counts, mut diff) =
        scheduler::counts_and_diff(popularity, spec.nodes, spec.slots_per_rank)?;
    if cfg.inter_rank_only {
        cap_counts_at_nodes(&mut counts, &mut diff, spec.nodes)?;
        ExpertPlacement::from_slots(column_major_layout(&counts, spec), counts.len())
    } else {
        ExpertPlacement::from_slots(contiguous_layout(&counts), counts.len())
    }
}

/// The uniform placement every policy starts from (and the static policy
/// keeps). Uniform popularity fed through the scheduler yields balanced
/// counts; with `inter_rank_only` the counts must divide evenly.
pub fn uniform_placement(spec: &ClusterSpec, cfg: &PolicyConfig) -> Result<ExpertPlacement> {
    if cfg.inter_rank_only
        && matches!(cfg.kind, PolicyKind::Static)
        && !spec.total_slots().is_multiple_of(spec.expert_classes)
    {
        return Err(Error::InvalidConfig(format!(
            "static inter-rank policy needs E ({}) to divide s*N ({})",
            spec.expert_classes,
            spec.total_slots()
        )));
    }
    scheduled_placement(&vec![1; spec.expert_classes], cfg, spec)
}

/// Network bytes paid by an interval rebalance: per churned slot, the expert
/// weights plus an optimizer shard `O / r_new` of the slot's new class.
pub fn interval_migration_bytes(
    prev: &ExpertPlacement,
    next: &ExpertPlacement,
    spec: &ClusterSpec,
) -> u64 {
    prev.slot_assignment()
        .iter()
        .zip(next.slot_assignment())
        .filter(|(a, b)| a != b)
        .map(|(_, &new_class)| {
            let r_new = next.replica_counts()[new_class] as u64;
            spec.weight_bytes + spec.optimizer_bytes / r_new
        })
        .sum()
}

/// Decides iteration `t`'s placement. `prev_popularity` must be present for
/// any iteration where the policy reschedules (`t >= 1` for per-iteration,
/// multiples of the interval otherwise).
pub fn next_placement(
    cfg: &PolicyConfig,
    t: usize,
    prev_popularity: Option<&PopularityVector>,
    prev: &ExpertPlacement,
    spec: &ClusterSpec,
) -> Result<PolicyStep> {
    cfg.validate()?;
    let need_popularity = |t: usize| -> Result<&PopularityVector> {
        prev_popularity.ok_or(Error::MissingPopularity(t))
    };

    let (placement, rebalanced) = match cfg.kind {
        PolicyKind::Static => (uniform_placement(spec, cfg)?, false),
        PolicyKind::PerIteration => {
            if t == 0 {
                (uniform_placement(spec, cfg)?, false)
            } else {
                let pop = need_popularity(t)?;
                (scheduled_placement(&pop.counts, cfg, spec)?, true)
            }
        }
        PolicyKind::Interval { every } => {
            if t > 0 && t.is_multiple_of(every) {
                let pop = need_popularity(t)?;
                (scheduled_placement(&pop.counts, cfg, spec)?, true)
            } else {
                (prev.clone(), false)
            }
        }
    };

    let migrated_slots = placement_churn(prev, &placement)?;
    let migration_bytes = match cfg.kind {
        PolicyKind::Interval { .. } if rebalanced => {
            interval_migration_bytes(prev, &placement, spec)
        }
        _ => 0,
    };

    Ok(PolicyStep {
        placement,
        migrated_slots,
        migration_bytes,
        rebalanced,
    })
}

/// Seconds the migration blocks the iteration. Zero for the static and
/// per-iteration policies; the interval policy pays its migration bytes over
/// the network.
pub fn migration_time(cfg: &PolicyConfig, step: &PolicyStep, spec: &ClusterSpec) -> f64 {
    match cfg.kind {
        PolicyKind::Interval { .. } => step.migration_bytes as f64 / spec.bw_net,
        PolicyKind::Static | PolicyKind::PerIteration => 0.0,
    }
}
