//! Task scheduling unit policies.

use crate::archmodel::TsuPolicy;

/// Occupancy of one input queue as seen by the TSU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueView {
    pub len: u32,
    pub cap: u32,
    /// The queue has a ready head and its task may run now.
    pub eligible: bool,
}

/// Pick the next input queue to serve. `ids[i]` is the task ID of queue `i`.
/// The cursor persists between calls and points one past the last pick.
pub fn schedule_next(policy: &TsuPolicy, cursor: &mut usize, queues: &[QueueView], ids: &[u16]) -> Option<usize> {
    let n = queues.len();
    if n == 0 {
        return None;
    }
    let round_robin = |cursor: &mut usize| {
        let pick = (0..n).map(|i| (*cursor + i) % n).find(|&q| queues[q].eligible)?;
        *cursor = (pick + 1) % n;
        Some(pick)
    };
    match policy {
        TsuPolicy::RoundRobin => round_robin(cursor),
        TsuPolicy::Priority(order) => {
            let pick = order
                .iter()
                .filter_map(|id| ids.iter().position(|x| x == id))
                .find(|&q| queues[q].eligible)
                .or_else(|| (0..n).find(|&q| queues[q].eligible && !order.contains(&ids[q])))?;
            *cursor = (pick + 1) % n;
            Some(pick)
        }
        TsuPolicy::Occupancy(threshold) => {
            let frac = |q: &QueueView| if q.cap == 0 { 0.0 } else { q.len as f64 / q.cap as f64 };
            let over = (0..n)
                .filter(|&q| queues[q].eligible && frac(&queues[q]) > *threshold)
                .max_by(|&a, &b| frac(&queues[a]).total_cmp(&frac(&queues[b])).then(b.cmp(&a)));
            match over {
                Some(pick) => {
                    *cursor = (pick + 1) % n;
                    Some(pick)
                }
                None => round_robin(cursor),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(len: u32, cap: u32) -> QueueView {
        QueueView { len, cap, eligible: len > 0 }
    }

    #[test]
    fn only_candidate_wins_under_every_policy() {
        let queues = [q(0, 10), q(1, 10)];
        for policy in [TsuPolicy::RoundRobin, TsuPolicy::Priority(vec![1, 2]), TsuPolicy::Occupancy(0.5)] {
            let mut c = 0;
            assert_eq!(schedule_next(&policy, &mut c, &queues, &[1, 2]), Some(1));
        }
    }

    #[test]
    fn priority_order() {
        let ids = [1, 2, 3];
        let queues = [q(5, 10), q(0, 10), q(1, 10)];
        let mut c = 0;
        assert_eq!(schedule_next(&TsuPolicy::Priority(vec![3, 1, 2]), &mut c, &queues, &ids), Some(2));
    }

    #[test]
    fn occupancy_prefers_the_fullest_queue_over_threshold() {
        let ids = [1, 2];
        let queues = [q(8, 10), q(1, 10)];
        let mut c = 1;
        assert_eq!(schedule_next(&TsuPolicy::Occupancy(0.75), &mut c, &queues, &ids), Some(0));
        // Below the threshold the policy is round-robin from the cursor.
        let queues = [q(7, 10), q(1, 10)];
        let mut c = 1;
        assert_eq!(schedule_next(&TsuPolicy::Occupancy(0.75), &mut c, &queues, &ids), Some(1));
    }

    /// Hand trace: cursor 2, queue 1 at 80 %, queue 2 at 10 %, threshold 0.75.
    #[test]
    fn occupancy_hand_trace() {
        let ids = [0, 1, 2];
        let queues = [q(0, 10), q(8, 10), q(1, 10)];
        let mut c = 2;
        assert_eq!(schedule_next(&TsuPolicy::Occupancy(0.75), &mut c, &queues, &ids), Some(1));
        assert_eq!(c, 2);
    }

    #[test]
    fn round_robin_cursor_persists() {
        let queues = [q(3, 10), q(3, 10), q(3, 10)];
        let mut c = 0;
        let picks: Vec<_> = (0..6).map(|_| schedule_next(&TsuPolicy::RoundRobin, &mut c, &queues, &[0, 1, 2]).unwrap()).collect();
        assert_eq!(picks, [0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn idle_when_nothing_eligible() {
        let mut c = 0;
        assert_eq!(schedule_next(&TsuPolicy::RoundRobin, &mut c, &[q(0, 4), q(0, 4)], &[0, 1]), None);
    }
}
