use super::{AllocationPlan, Candidate};
use crate::loss::ClusterSpec;

/// Work-conserving equal shares.
///
/// Each job gets `⌊C/n⌋` cores and the `C mod n` leftover goes one core each
/// to the lowest job ids. Jobs whose cap is below their share keep only the
/// cap; what they release is re-split among the remaining jobs until no
/// further job hits its cap.
pub fn allocate_fair(jobs: &[Candidate<'_>], spec: &ClusterSpec, epoch_index: u64) -> AllocationPlan {
    let mut plan = AllocationPlan::empty(epoch_index, spec.capacity);
    let mut order: Vec<&Candidate<'_>> = jobs.iter().collect();
    order.sort_by_key(|c| c.id());

    let mut open: Vec<&Candidate<'_>> = order.clone();
    let mut remaining = spec.capacity;
    loop {
        if open.is_empty() {
            break;
        }
        let n = open.len() as u32;
        let (share, extra) = (remaining / n, remaining % n);
        let tentative = |i: usize| share + u32::from((i as u32) < extra);
        let capped: Vec<usize> = (0..open.len())
            .filter(|&i| open[i].cost.max_parallelism <= tentative(i))
            .collect();
        if capped.is_empty() {
            for (i, c) in open.iter().enumerate() {
                plan.assignments.insert(c.id(), tentative(i));
            }
            break;
        }
        for &i in capped.iter().rev() {
            let c = open.remove(i);
            plan.assignments.insert(c.id(), c.cost.max_parallelism);
            remaining -= c.cost.max_parallelism;
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{JobId, JobState};
    use crate::scheduler::CostModel;

    fn run(caps: &[u32], capacity: u32) -> Vec<u32> {
        let jobs: Vec<JobState> = (0..caps.len())
            .map(|i| JobState::new(JobId(i as u64), 0.0))
            .collect();
        let cands: Vec<Candidate<'_>> = jobs
            .iter()
            .zip(caps)
            .map(|(j, &cap)| Candidate {
                job: j,
                model: None,
                cost: CostModel::new(1.0, cap),
                waiting_epochs: 0,
            })
            .collect();
        let plan = allocate_fair(&cands, &ClusterSpec::new(capacity, 2.0).unwrap(), 0);
        plan.assignments.values().copied().collect()
    }

    #[test]
    fn equal_split() {
        assert_eq!(run(&[100; 4], 8), vec![2, 2, 2, 2]);
    }

    #[test]
    fn remainder_goes_to_lowest_ids() {
        assert_eq!(run(&[100; 3], 8), vec![3, 3, 2]);
    }

    #[test]
    fn capped_job_releases_its_excess() {
        assert_eq!(run(&[100, 1, 100], 9), vec![4, 1, 4]);
        assert_eq!(run(&[1, 100, 100], 9), vec![1, 4, 4]);
    }

    #[test]
    fn all_capped_leaves_cores_idle() {
        assert_eq!(run(&[2, 3], 10), vec![2, 3]);
    }

    #[test]
    fn more_jobs_than_cores() {
        assert_eq!(run(&[4; 5], 3), vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn cascading_caps() {
        // 20 / 4 = 5 caps job 0 at 2; 18 / 3 = 6 caps job 1 at 5; 13 / 2 → 7, 6.
        assert_eq!(run(&[2, 5, 100, 100], 20), vec![2, 5, 7, 6]);
    }

    #[test]
    fn empty_input() {
        assert!(run(&[], 4).is_empty());
    }
}
