//! Expert placement scheduling: replica counts proportional to popularity,
//! laid out contiguously across slots.
//!
//! Replica goals are popularity shares scaled to the slot count; each class is
//! floored to at least one instance and two diff-driven correction loops bring
//! the total back to exactly `G * S`. Ties in the correction loops break
//! toward the lowest class index. A zero popularity vector (empty batch or
//! iteration 0) is treated as uniform popularity.

use crate::error::{Error, Result};
use crate::model::{ExpertPlacement, PopularityVector};

/// Inputs to [`compute_placement`].
#[derive(Debug, Clone)]
pub struct SchedulerInput<'a> {
    /// Per-class token counts observed in the previous iteration.
    pub popularity: &'a PopularityVector,
    /// Number of ranks `G = N`.
    pub world_size: usize,
    /// Expert slots `S = s` per rank.
    pub slots_per_rank: usize,
}

impl<'a> SchedulerInput<'a> {
    pub fn new(popularity: &'a PopularityVector, world_size: usize, slots_per_rank: usize) -> Self {
        SchedulerInput {
            popularity,
            world_size,
            slots_per_rank,
        }
    }
}

/// Index of the first maximum element.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the first minimum element.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Counting core shared with the policies module: returns the corrected
/// replica counts together with the final `count - goal` diffs.
pub(crate) fn counts_and_diff(
    popularity: &[u64],
    world_size: usize,
    slots_per_rank: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let classes = popularity.len();
    let total_slots = world_size * slots_per_rank;
    if classes == 0 {
        return Err(Error::InvalidInput("popularity vector is empty".into()));
    }
    if classes > total_slots {
        return Err(Error::InvalidInput(format!(
            "{classes} expert classes exceed {total_slots} total slots"
        )));
    }

    let total_pop: u64 = popularity.iter().sum();
    let effective: Vec<f64> = if total_pop == 0 {
        vec![1.0; classes]
    } else {
        popularity.iter().map(|&p| p as f64).collect()
    };
    let pop_sum: f64 = effective.iter().sum();

    let goal: Vec<f64> = effective
        .iter()
        .map(|&p| p / pop_sum * world_size as f64 * slots_per_rank as f64)
        .collect();
    let mut counts: Vec<usize> = goal.iter().map(|&g| g.max(1.0).floor() as usize).collect();
    let mut diff: Vec<f64> = counts
        .iter()
        .zip(&goal)
        .map(|(&c, &g)| c as f64 - g)
        .collect();
    let mut sum: usize = counts.iter().sum();

    // Over-allocation: the diff decrement is unconditional; only counts above
    // the one-instance floor shrink. The unconditional decrement is what
    // eventually surfaces a shrinkable class as the argmax.
    while sum > total_slots {
        let i = argmax(&diff);
        if counts[i] > 1 {
            counts[i] -= 1;
            sum -= 1;
        }
        diff[i] -= 1.0;
    }
    while sum < total_slots {
        let i = argmin(&diff);
        counts[i] += 1;
        sum += 1;
        diff[i] += 1.0;
    }

    Ok((counts, diff))
}

/// Replica counts proportional to `popularity`, summing to exactly
/// `world_size * slots_per_rank`, each at least 1.
pub fn replica_counts(
    popularity: &[u64],
    world_size: usize,
    slots_per_rank: usize,
) -> Result<Vec<usize>> {
    counts_and_diff(popularity, world_size, slots_per_rank).map(|(counts, _)| counts)
}

/// Expands replica counts into a contiguous slot assignment: class 0 fills the
/// first `r_0` slots, class 1 the next `r_1`, and so on.
pub fn contiguous_layout(counts: &[usize]) -> Vec<usize> {
    let mut slots = Vec::with_capacity(counts.iter().sum());
    for (class, &count) in counts.iter().enumerate() {
        slots.extend(std::iter::repeat_n(class, count));
    }
    slots
}

/// Computes the next iteration's expert placement from a popularity vector.
///
/// Replicas are sized proportionally to popularity (minimum one instance per
/// class) and assigned contiguously in ascending class order, which packs
/// same-class instances onto the same rank first and keeps every class's
/// hosting ranks a consecutive interval.
pub fn compute_placement(input: &SchedulerInput) -> Result<ExpertPlacement> {
    let counts = replica_counts(
        &input.popularity.counts,
        input.world_size,
        input.slots_per_rank,
    )?;
    ExpertPlacement::from_slots(contiguous_layout(&counts), counts.len())
}

/// Number of global slots whose assigned class differs between two placements.
pub fn placement_churn(prev: &ExpertPlacement, next: &ExpertPlacement) -> Result<usize> {
    if prev.total_slots() != next.total_slots() || prev.expert_classes() != next.expert_classes()
    {
        return Err(Error::ShapeMismatch(format!(
            "placements disagree in shape: {}x{} vs {}x{} (slots x classes)",
            prev.total_slots(),
            prev.expert_classes(),
            next.total_slots(),
            next.expert_classes()
        )));
    }
    Ok(prev
        .slot_assignment()
        .iter()
        .zip(next.slot_assignment())
        .filter(|(a, b)| a != b)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pop(counts: Vec<u64>) -> PopularityVector {
        PopularityVector {
            iteration: 0,
            counts,
        }
    }

    fn place(counts: Vec<u64>, world: usize, slots: usize) -> ExpertPlacement {
        let p = pop(counts);
        compute_placement(&SchedulerInput::new(&p, world, slots)).unwrap()
    }

    #[test]
    fn uniform_popularity_splits_evenly() {
        let placement = place(vec![10, 10, 10, 10], 4, 2);
        assert_eq!(placement.replica_counts(), &[2, 2, 2, 2]);
        assert_eq!(placement.slot_assignment(), &[0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn skewed_popularity_corrects_rounding_upward() {
        // goals [4.8, 1.6, 1.2, 0.4] floor to [4, 1, 1, 1]; the deficit goes
        // to the class with the most negative diff.
        let placement = place(vec![60, 20, 15, 5], 4, 2);
        assert_eq!(placement.replica_counts(), &[5, 1, 1, 1]);
    }

    #[test]
    fn extreme_skew_converges_to_floor() {
        // The min-one floor over-allocates to [1, 1, 1, 3]; the shrink loop
        // walks class 3 back down until the total fits.
        let placement = place(vec![1, 1, 1, 97], 4, 1);
        assert_eq!(placement.replica_counts(), &[1, 1, 1, 1]);
    }

    #[test]
    fn zero_popularity_is_treated_as_uniform() {
        let placement = place(vec![0, 0, 0, 0], 4, 2);
        assert_eq!(placement.replica_counts(), &[2, 2, 2, 2]);
    }

    #[test]
    fn rejects_more_classes_than_slots() {
        let p = pop(vec![1, 2, 3]);
        let err = compute_placement(&SchedulerInput::new(&p, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn churn_counts_changed_slots() {
        let a = ExpertPlacement::from_slots(vec![0, 0, 1, 1], 2).unwrap();
        let b = ExpertPlacement::from_slots(vec![0, 1, 1, 1], 2).unwrap();
        let c = ExpertPlacement::from_slots(vec![1, 1, 0, 0], 2).unwrap();
        assert_eq!(placement_churn(&a, &a).unwrap(), 0);
        assert_eq!(placement_churn(&a, &b).unwrap(), 1);
        assert_eq!(placement_churn(&a, &c).unwrap(), 4);
    }

    #[test]
    fn churn_rejects_shape_mismatch() {
        let a = ExpertPlacement::from_slots(vec![0, 0, 1, 1], 2).unwrap();
        let b = ExpertPlacement::from_slots(vec![0, 1], 2).unwrap();
        assert!(matches!(
            placement_churn(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn output_is_contiguous_and_covers_all_slots(
            counts in proptest::collection::vec(0u64..10_000, 1..32),
            extra in 0usize..64,
        ) {
            let total = counts.len() + extra;
            let p = pop(counts);
            let placement = compute_placement(&SchedulerInput::new(&p, total, 1)).unwrap();
            prop_assert_eq!(placement.total_slots(), total);
            prop_assert!(placement.replica_counts().iter().all(|&r| r >= 1));
            prop_assert_eq!(placement.replica_counts().iter().sum::<usize>(), total);
            // Contiguity: slot assignment is non-decreasing in class id.
            prop_assert!(placement.slot_assignment().windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn scaling_popularity_leaves_placement_unchanged(
            counts in proptest::collection::vec(1u64..1_000, 1..16),
            scale in 1u64..1_000,
            extra in 0usize..32,
        ) {
            let total = counts.len() + extra;
            let scaled: Vec<u64> = counts.iter().map(|&c| c * scale).collect();
            let a = place(counts, total, 1);
            let b = place(scaled, total, 1);
            prop_assert_eq!(a, b);
        }
    }
}
