//! Built-in verification suite: golden analytic numbers, oracle fuzzing of
//! the scheduler and communication planner, and policy-level behaviour
//! checks. Backs both the `verify` CLI subcommand and the acceptance test
//! target.
//!
//! Every oracle here is written independently of the implementation path it
//! checks: the scheduler is compared against a line-by-line transcription of
//! the placement listing, the all-reduce against direct arithmetic means, and
//! plan byte totals against brute-force summation over the emitted tuples.
//! All fuzzing uses fixed seeds, so the suite is deterministic.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::commplan::{
    build_comm_plan, build_group_registry, plan_allreduce, plan_byte_totals, plan_grad_gather,
    simulate_allreduce, LinkClass,
};
use crate::costmodel::{
    comm_time_dynamic, comm_time_static, data_volume, k_partition_bound, mem_footprint,
    migration_cost, overhead_ratio, MigrationPayload, OptimizerVariant,
};
use crate::model::{ClusterSpec, ExpertPlacement, PopularityVector};
use crate::policies::PolicyConfig;
use crate::scheduler::{compute_placement, SchedulerInput};
use crate::simulator::{compare, run, SimOptions, SimReport};
use crate::tracegen::{generate, TraceGenConfig, TraceMode};

/// Outcome of one verification check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, body: impl FnOnce() -> std::result::Result<String, String>) -> CheckResult {
    let start = Instant::now();
    let outcome = body();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
            seconds,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
            seconds,
        },
    }
}

fn abs_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ─── Transcription oracle for the placement listing ──────────────────────────

/// Line-by-line transcription of the placement listing, on float arrays with
/// the total recomputed at every loop head. Returns the counts plus the
/// number of correction-loop iterations and actual count mutations.
pub fn placement_listing_oracle(
    popularity: &[u64],
    world_size: usize,
    slots_per_rank: usize,
) -> (Vec<usize>, usize, usize) {
    let e = popularity.len();
    let total_pop: u64 = popularity.iter().sum();
    let pop: Vec<f64> = if total_pop == 0 {
        vec![1.0; e]
    } else {
        popularity.iter().map(|&p| p as f64).collect()
    };
    let sum: f64 = pop.iter().sum();
    let goal: Vec<f64> = pop
        .iter()
        .map(|&p| p / sum * world_size as f64 * slots_per_rank as f64)
        .collect();

    let mut exp_counts: Vec<f64> = goal.iter().map(|&g| g.max(1.0).floor()).collect();
    let mut diff: Vec<f64> = exp_counts.iter().zip(&goal).map(|(&c, &g)| c - g).collect();
    let target = (world_size * slots_per_rank) as f64;

    let mut loop_steps = 0usize;
    let mut mutations = 0usize;
    while exp_counts.iter().sum::<f64>() > target {
        loop_steps += 1;
        let i = crate::scheduler::argmax(&diff);
        if exp_counts[i] > 1.0 {
            exp_counts[i] -= 1.0;
            mutations += 1;
        }
        diff[i] -= 1.0;
    }
    while exp_counts.iter().sum::<f64>() < target {
        loop_steps += 1;
        mutations += 1;
        let i = crate::scheduler::argmin(&diff);
        exp_counts[i] += 1.0;
        diff[i] += 1.0;
    }

    (
        exp_counts.iter().map(|&c| c as usize).collect(),
        loop_steps,
        mutations,
    )
}

// ─── Shared fuzz scaffolding ──────────────────────────────────────────────────

fn random_popularity(rng: &mut ChaCha8Rng, classes: usize) -> Vec<u64> {
    if rng.random::<f64>() < 0.05 {
        return vec![0; classes];
    }
    let magnitude = 10u64.pow(rng.random_range(1..=6));
    (0..classes)
        .map(|_| {
            if rng.random::<f64>() < 0.1 {
                0
            } else {
                rng.random_range(0..=magnitude)
            }
        })
        .collect()
}

fn random_spec(rng: &mut ChaCha8Rng, max_nodes: usize) -> ClusterSpec {
    let nodes = rng.random_range(2..=max_nodes);
    let slots_per_rank = rng.random_range(1..=4);
    let total = nodes * slots_per_rank;
    let expert_classes = rng.random_range(1..=total.min(40));
    ClusterSpec {
        nodes,
        slots_per_rank,
        expert_classes,
        bw_pci: 32e9,
        bw_net: 12.5e9,
        grad_bytes: rng.random_range(1_000_000..=10_000_000_000u64),
        weight_bytes: rng.random_range(1_000_000..=10_000_000_000u64),
        optimizer_bytes: rng.random_range(1_000_000..=10_000_000_000u64),
        tokens_per_batch: 32_768,
        capacity_factor: 1.0,
    }
}

/// Arbitrary valid placement: every class pinned to one random slot, the rest
/// filled uniformly at random.
fn random_placement(rng: &mut ChaCha8Rng, spec: &ClusterSpec) -> ExpertPlacement {
    let total = spec.total_slots();
    let classes = spec.expert_classes;
    let mut slots: Vec<usize> = (0..total).map(|_| rng.random_range(0..classes)).collect();
    let mut positions: Vec<usize> = (0..total).collect();
    for i in 0..total {
        let j = rng.random_range(i..total);
        positions.swap(i, j);
    }
    for (class, &slot) in positions.iter().take(classes).enumerate() {
        slots[slot] = class;
    }
    ExpertPlacement::from_slots(slots, classes).expect("constructed placement is valid")
}

/// Scheduler-produced placement for a random popularity vector.
fn random_scheduler_placement(rng: &mut ChaCha8Rng, spec: &ClusterSpec) -> ExpertPlacement {
    let popularity = PopularityVector {
        iteration: 0,
        counts: random_popularity(rng, spec.expert_classes),
    };
    compute_placement(&SchedulerInput::new(
        &popularity,
        spec.nodes,
        spec.slots_per_rank,
    ))
    .expect("fuzzed scheduler input is valid")
}

// ─── Check 1: golden analytic numbers ─────────────────────────────────────────

/// Golden-number evaluation against an explicit spec, so tests can inject a
/// mutated spec and watch the check fail.
pub fn check_golden_numbers_on(spec: &ClusterSpec) -> CheckResult {
    timed("golden-analytic-numbers", || {
        let mem = mem_footprint(spec);
        if mem != 1_728_000_000_000 {
            return Err(format!("mem_footprint = {mem}, want 1,728 GB exactly"));
        }
        let volume = data_volume(spec);
        if volume.grad_bytes != 13_824_000_000_000
            || volume.weight_bytes != 13_824_000_000_000
            || volume.combined() != 27_648_000_000_000
        {
            return Err(format!(
                "data volume = {} + {} bytes, want 13,824 GB per phase",
                volume.grad_bytes, volume.weight_bytes
            ));
        }
        let stat = comm_time_static(spec).total();
        if !abs_close(stat, 0.26908, 1e-4) {
            return Err(format!("static comm time {stat} != 0.26908 within 1e-4"));
        }
        let dynamic = comm_time_dynamic(spec).total();
        if !abs_close(dynamic, 0.27316, 1e-4) {
            return Err(format!("dynamic comm time {dynamic} != 0.27316 within 1e-4"));
        }
        let off = 100.0 * overhead_ratio(spec, OptimizerVariant::Offloaded);
        if !abs_close(off, 1.519, 0.01) {
            return Err(format!("offloaded overhead {off}% != 1.519% within 0.01pp"));
        }
        let hbm = 100.0 * overhead_ratio(spec, OptimizerVariant::HbmOnly);
        if !abs_close(hbm, 1.538, 0.01) {
            return Err(format!("hbm-only overhead {hbm}% != 1.538% within 0.01pp"));
        }
        let weights = migration_cost(1, spec, MigrationPayload::Weights);
        let optimizer = migration_cost(1, spec, MigrationPayload::Optimizer);
        if !abs_close(weights, 0.0675, 1e-6) || !abs_close(optimizer, 0.54, 1e-6) {
            return Err(format!(
                "migration costs {weights} / {optimizer}, want 0.0675 / 0.54"
            ));
        }
        Ok(format!(
            "mem 1728 GB, volume 27648 GB, T {stat:.5}/{dynamic:.5} s, overhead {off:.3}%/{hbm:.3}%"
        ))
    })
}

pub fn check_golden_numbers() -> CheckResult {
    check_golden_numbers_on(&ClusterSpec::reference_example())
}

// ─── Check 2: scheduler vs transcription oracle ──────────────────────────────

pub fn check_scheduler_oracle() -> CheckResult {
    timed("scheduler-oracle-equivalence", || {
        let mut rng = rng(0x5EED_0002);
        let mut max_loop_steps = 0usize;
        for case in 0..10_000 {
            let classes = rng.random_range(1..=64);
            let total = rng.random_range(classes..=256);
            let divisors: Vec<usize> = [1, 2, 4].into_iter().filter(|s| total % s == 0).collect();
            let slots_per_rank = divisors[rng.random_range(0..divisors.len())];
            let world_size = total / slots_per_rank;
            let popularity = random_popularity(&mut rng, classes);

            let (oracle_counts, loop_steps, mutations) =
                placement_listing_oracle(&popularity, world_size, slots_per_rank);
            max_loop_steps = max_loop_steps.max(loop_steps);

            let vector = PopularityVector {
                iteration: 0,
                counts: popularity.clone(),
            };
            let placement = compute_placement(&SchedulerInput::new(
                &vector,
                world_size,
                slots_per_rank,
            ))
            .map_err(|e| format!("case {case}: scheduler failed: {e}"))?;

            let impl_counts: Vec<usize> = placement.replica_counts().to_vec();
            if impl_counts != oracle_counts {
                return Err(format!(
                    "case {case}: counts {impl_counts:?} != oracle {oracle_counts:?} \
                     (pop {popularity:?}, G {world_size}, S {slots_per_rank})"
                ));
            }
            if impl_counts.iter().sum::<usize>() != total {
                return Err(format!("case {case}: counts do not sum to {total}"));
            }
            if impl_counts.contains(&0) {
                return Err(format!("case {case}: some class got zero replicas"));
            }
            if !placement.slot_assignment().windows(2).all(|w| w[0] <= w[1]) {
                return Err(format!("case {case}: slot assignment not contiguous"));
            }
            if mutations > 2 * total {
                return Err(format!(
                    "case {case}: {mutations} count corrections exceed 2*s*N = {}",
                    2 * total
                ));
            }
            // Termination safety net for the raw loop iterations (the
            // unconditional diff decrement can spin before an eligible class
            // surfaces; the spin is bounded by the class count squared).
            if loop_steps > classes * (classes + 4) + 8 {
                return Err(format!(
                    "case {case}: correction loops ran {loop_steps} iterations"
                ));
            }
        }
        Ok(format!("10000 cases, max correction-loop iterations {max_loop_steps}"))
    })
}

// ─── Check 3: volume invariance ───────────────────────────────────────────────

pub fn check_volume_invariance() -> CheckResult {
    timed("volume-invariance", || {
        let mut rng = rng(0x5EED_0003);
        for spec_case in 0..20 {
            let spec = random_spec(&mut rng, if spec_case < 16 { 12 } else { 32 });
            let expected_grad = spec.total_slots() as u64 * spec.grad_bytes;
            let expected_weight = spec.total_slots() as u64 * spec.weight_bytes;
            for case in 0..1_000 {
                let placement = if case % 2 == 0 {
                    random_placement(&mut rng, &spec)
                } else {
                    random_scheduler_placement(&mut rng, &spec)
                };
                let plan = build_comm_plan(&placement, &spec)
                    .map_err(|e| format!("spec {spec_case} case {case}: {e}"))?;
                // Brute-force summation over the plan's parts.
                let gather: u64 = plan.grad_gather.iter().map(|t| t.bytes).sum();
                let sync: u64 = plan
                    .allreduce
                    .per_class
                    .iter()
                    .map(|c| c.intra_add_bytes + c.inter_exchange_bytes)
                    .sum();
                let scatter: u64 = plan.weight_scatter.iter().map(|t| t.bytes).sum();
                let grad_total = sync + gather;
                let weight_total = scatter + plan.weight_intra_copy_bytes;
                if grad_total != expected_grad {
                    return Err(format!(
                        "spec {spec_case} case {case}: grad bytes {grad_total} != s*N*G {expected_grad}"
                    ));
                }
                if weight_total != expected_weight {
                    return Err(format!(
                        "spec {spec_case} case {case}: weight bytes {weight_total} != s*N*W {expected_weight}"
                    ));
                }
                let totals = plan_byte_totals(&plan);
                if totals.grad_total_bytes != grad_total
                    || totals.weight_total_bytes != weight_total
                {
                    return Err(format!(
                        "spec {spec_case} case {case}: plan_byte_totals disagrees with direct summation"
                    ));
                }
            }
        }
        Ok("20 specs x 1000 placements, volumes exactly s*N*G and s*N*W".into())
    })
}

// ─── Check 4: all-reduce correctness and group registry ──────────────────────

fn scheduler_groups_registered(
    placement: &ExpertPlacement,
    spec: &ClusterSpec,
) -> std::result::Result<(), String> {
    let registry = build_group_registry(spec.nodes);
    for class in 0..spec.expert_classes {
        let group = placement.hosting_ranks(class, spec.slots_per_rank);
        if group.len() >= 2 {
            let first = group[0];
            let last = *group.last().expect("non-empty");
            if last - first + 1 != group.len() {
                return Err(format!("class {class} group {group:?} is not contiguous"));
            }
            if !registry.contains(first, last) {
                return Err(format!("class {class} group {group:?} not registered"));
            }
        }
    }
    Ok(())
}

pub fn check_allreduce_and_registry() -> CheckResult {
    timed("allreduce-and-registry", || {
        let mut structural_rng = rng(0x5EED_0044);
        for nodes in 2..=64usize {
            let registry = build_group_registry(nodes);
            let expected = (nodes * (nodes - 1) / 2) as u64;
            if registry.len() != expected {
                return Err(format!(
                    "registry for N={nodes} holds {} groups, want {expected}",
                    registry.len()
                ));
            }
            // Scheduler placements at this cluster width demand only
            // contiguous, registered groups.
            for _ in 0..5 {
                let slots_per_rank = structural_rng.random_range(1..=4);
                let total = nodes * slots_per_rank;
                let spec = ClusterSpec {
                    nodes,
                    slots_per_rank,
                    expert_classes: structural_rng.random_range(1..=total.min(40)),
                    ..eval_cluster()
                };
                let placement = random_scheduler_placement(&mut structural_rng, &spec);
                scheduler_groups_registered(&placement, &spec)
                    .map_err(|e| format!("N={nodes}: {e}"))?;
            }
        }

        let mut rng = rng(0x5EED_0004);
        for case in 0..1_000 {
            let spec = random_spec(&mut rng, 12);
            let scheduler_made = case % 2 == 1;
            let placement = if scheduler_made {
                random_scheduler_placement(&mut rng, &spec)
            } else {
                random_placement(&mut rng, &spec)
            };
            let plan = plan_allreduce(&placement, &spec);

            let width = rng.random_range(1..=4);
            let values: Vec<Vec<f64>> = (0..spec.total_slots())
                .map(|_| {
                    (0..width)
                        .map(|_| rng.random_range(-4.0..4.0))
                        .collect()
                })
                .collect();
            let result = simulate_allreduce(&plan, &values)
                .map_err(|e| format!("case {case}: {e}"))?;

            // Direct arithmetic-mean oracle per class.
            for class in 0..spec.expert_classes {
                let slots = placement.slots_of_class(class);
                let mut mean = vec![0.0; width];
                for &slot in &slots {
                    for (m, v) in mean.iter_mut().zip(&values[slot]) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= slots.len() as f64;
                }
                for &slot in &slots {
                    for (got, want) in result[slot].iter().zip(&mean) {
                        if !rel_close(*got, *want, 1e-12) {
                            return Err(format!(
                                "case {case}: class {class} slot {slot}: {got} vs mean {want}"
                            ));
                        }
                    }
                }
            }

            if scheduler_made {
                scheduler_groups_registered(&placement, &spec)
                    .map_err(|e| format!("case {case}: {e}"))?;
            }
        }
        Ok("registry sizes for N in 2..=64; 1000 fuzz cases within 1e-12 of the mean oracle".into())
    })
}

// ─── Check 5: gradient-gather properties ──────────────────────────────────────

pub fn check_grad_gather() -> CheckResult {
    timed("grad-gather-properties", || {
        let mut rng = rng(0x5EED_0005);
        for case in 0..500 {
            let spec = random_spec(&mut rng, 24);
            let placement = random_scheduler_placement(&mut rng, &spec);
            let tuples = plan_grad_gather(&placement, &spec);

            let mut per_dst = vec![0usize; spec.nodes];
            for t in &tuples {
                per_dst[t.dst_rank] += 1;
            }
            if per_dst.iter().any(|&c| c != spec.expert_classes) {
                return Err(format!(
                    "case {case}: some rank does not receive exactly E tuples: {per_dst:?}"
                ));
            }

            for class in 0..spec.expert_classes {
                let hosts = placement.hosting_ranks(class, spec.slots_per_rank);
                let mut remote_counts = vec![0usize; hosts.len()];
                for t in tuples.iter().filter(|t| t.expert_class == class) {
                    let hosted = hosts.binary_search(&t.dst_rank).is_ok();
                    if hosted {
                        if t.src_rank != t.dst_rank || t.link != LinkClass::LocalPci {
                            return Err(format!(
                                "case {case}: class {class} dst {} hosts the class but src is {}",
                                t.dst_rank, t.src_rank
                            ));
                        }
                    } else {
                        if t.link != LinkClass::Network {
                            return Err(format!(
                                "case {case}: remote tuple marked {:?}",
                                t.link
                            ));
                        }
                        let idx = hosts.binary_search(&t.src_rank).map_err(|_| {
                            format!(
                                "case {case}: class {class} sourced from non-hosting rank {}",
                                t.src_rank
                            )
                        })?;
                        remote_counts[idx] += 1;
                    }
                }
                let max = remote_counts.iter().max().copied().unwrap_or(0);
                let min = remote_counts.iter().min().copied().unwrap_or(0);
                if max - min > 1 {
                    return Err(format!(
                        "case {case}: class {class} remote sources imbalanced: {remote_counts:?}"
                    ));
                }
            }
        }
        Ok("500 scheduler placements: E tuples per rank, local preference, round-robin balance".into())
    })
}

// ─── Checks 6 and 7: policy behaviour on the shipped traces ───────────────────

/// Evaluation cluster mirroring a 16-rank, 4-slot, 16-class setup at
/// capacity factor 1.0.
pub fn eval_cluster() -> ClusterSpec {
    ClusterSpec {
        nodes: 16,
        slots_per_rank: 4,
        expert_classes: 16,
        bw_pci: 32e9,
        bw_net: 12.5e9,
        grad_bytes: 100_000_000,
        weight_bytes: 100_000_000,
        optimizer_bytes: 800_000_000,
        tokens_per_batch: 32_768,
        capacity_factor: 1.0,
    }
}

/// The three shipped spiky trace configurations used by the policy checks.
pub fn eval_trace_configs() -> [TraceGenConfig; 3] {
    let base = TraceGenConfig {
        experts: 16,
        iterations: 2_000,
        tokens_per_batch: 32_768,
        mode: TraceMode::Spiky,
        volatility: 0.2,
        spike_probability: 0.05,
        seed: 0,
    };
    [
        TraceGenConfig { seed: 101, ..base.clone() },
        TraceGenConfig { seed: 202, ..base.clone() },
        TraceGenConfig { seed: 303, ..base },
    ]
}

fn eval_policies() -> [PolicyConfig; 5] {
    [
        PolicyConfig::per_iteration(),
        PolicyConfig::interval(10),
        PolicyConfig::interval(50),
        PolicyConfig::interval(100),
        PolicyConfig::static_uniform(),
    ]
}

fn drop_pct(report: &SimReport) -> f64 {
    100.0 - report.aggregates.survival_pct
}

pub fn check_drop_ordering() -> CheckResult {
    timed("drop-rate-ordering", || {
        let spec = eval_cluster();
        let mut summary = String::new();
        for (idx, cfg) in eval_trace_configs().iter().enumerate() {
            let trace = generate(cfg).map_err(|e| e.to_string())?;
            let reports = compare(&trace, &spec, &eval_policies(), &SimOptions::default())
                .map_err(|e| e.to_string())?;
            let [per_iter, i10, i50, i100, stat] =
                [&reports[0], &reports[1], &reports[2], &reports[3], &reports[4]]
                    .map(drop_pct);

            let per_iter_beats_i10 = per_iter < i10;
            if !per_iter_beats_i10 {
                return Err(format!(
                    "trace {idx}: per-iteration drops {per_iter:.3}% not below interval(10) {i10:.3}%"
                ));
            }
            if i10 > i50 + 1.0 {
                return Err(format!(
                    "trace {idx}: interval(10) drops {i10:.3}% exceed interval(50) {i50:.3}% + 1pp"
                ));
            }
            if i50 > i100 + 1.0 {
                return Err(format!(
                    "trace {idx}: interval(50) drops {i50:.3}% exceed interval(100) {i100:.3}% + 1pp"
                ));
            }
            let i100_beats_static = i100 < stat;
            if !i100_beats_static {
                return Err(format!(
                    "trace {idx}: interval(100) drops {i100:.3}% not below static {stat:.3}%"
                ));
            }
            if stat - per_iter < 10.0 {
                return Err(format!(
                    "trace {idx}: static-to-per-iteration margin {:.3}pp below 10pp",
                    stat - per_iter
                ));
            }
            summary.push_str(&format!(
                "trace {idx}: {per_iter:.2}% < {i10:.2}% <= {i50:.2}% <= {i100:.2}% < {stat:.2}%; "
            ));
        }
        Ok(summary)
    })
}

pub fn check_latency_model() -> CheckResult {
    timed("latency-spike-behaviour", || {
        let spec = eval_cluster();
        let trace = generate(&eval_trace_configs()[0]).map_err(|e| e.to_string())?;
        let opts = SimOptions::default();

        let per_iter = run(&trace, &spec, &PolicyConfig::per_iteration(), &opts)
            .map_err(|e| e.to_string())?;
        let first = per_iter.records[0].total_s;
        for r in &per_iter.records {
            if r.migration_s != 0.0 {
                return Err(format!("per-iteration migration at t={}", r.iteration));
            }
            if r.total_s != first {
                return Err(format!(
                    "per-iteration latency varies: {} vs {first} at t={}",
                    r.total_s, r.iteration
                ));
            }
        }

        let mut means = Vec::new();
        for every in [10usize, 50, 100] {
            let report = run(&trace, &spec, &PolicyConfig::interval(every), &opts)
                .map_err(|e| e.to_string())?;
            let base = report
                .records
                .iter()
                .find(|r| !r.rebalanced)
                .map(|r| r.total_s)
                .expect("off-schedule iterations exist");
            let mut churned_spikes = 0usize;
            for r in &report.records {
                if r.rebalanced && r.churn > 0 {
                    if r.total_s <= base {
                        return Err(format!(
                            "interval({every}): rebalance at t={} with churn {} not above base",
                            r.iteration, r.churn
                        ));
                    }
                    churned_spikes += 1;
                } else if !r.rebalanced && r.total_s != base {
                    return Err(format!(
                        "interval({every}): off-schedule latency varies at t={}",
                        r.iteration
                    ));
                }
            }
            if churned_spikes == 0 {
                return Err(format!("interval({every}): no rebalance ever churned"));
            }
            means.push(report.aggregates.mean_latency_s);
        }
        if !(means[0] >= means[1] && means[1] >= means[2]) {
            return Err(format!(
                "mean latency not monotone in rebalance frequency: {means:?}"
            ));
        }
        Ok(format!(
            "per-iteration constant at {first:.6}s; interval means {:.6}/{:.6}/{:.6}s",
            means[0], means[1], means[2]
        ))
    })
}

// ─── Check 8: k-partition bound ───────────────────────────────────────────────

pub fn check_k_partition_bound() -> CheckResult {
    timed("k-partition-bound", || {
        let spec = ClusterSpec::reference_example();
        let dynamic = comm_time_dynamic(&spec);
        let k1 = k_partition_bound(&spec, 1).map_err(|e| e.to_string())?;
        if !rel_close(k1.t_grad_s, dynamic.t_grad_s, 1e-12)
            || !rel_close(k1.t_weight_s, dynamic.t_weight_s, 1e-12)
        {
            return Err("k=1 bound does not reduce to the dynamic time".into());
        }
        let mut last = 0.0;
        let mut bounds = Vec::new();
        for k in [1usize, 2, 4, 8] {
            let bound = k_partition_bound(&spec, k).map_err(|e| e.to_string())?.total();
            if bound + 1e-15 < last {
                return Err(format!("bound decreased at k={k}: {bound} < {last}"));
            }
            last = bound;
            bounds.push(format!("k={k}: {bound:.5}s"));
        }
        Ok(bounds.join(", "))
    })
}

/// Runs the whole suite in criterion order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_golden_numbers(),
        check_scheduler_oracle(),
        check_volume_invariance(),
        check_allreduce_and_registry(),
        check_grad_gather(),
        check_drop_ordering(),
        check_latency_model(),
        check_k_partition_bound(),
    ]
}

/// Renders one check as a `PASS`/`FAIL` line.
pub fn format_check(check: &CheckResult) -> String {
    format!(
        "{} {} ({:.2}s): {}",
        if check.passed { "PASS" } else { "FAIL" },
        check.name,
        check.seconds,
        check.detail
    )
}
