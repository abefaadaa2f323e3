//! Idleness-based termination and epoch barriers.

/// Declares termination once the system has been idle for a full window.
#[derive(Debug, Clone)]
pub struct TerminationDetector {
    window: u64,
    idle_since: Option<u64>,
}

impl TerminationDetector {
    pub fn new(window: u64) -> Self {
        TerminationDetector { window, idle_since: None }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Feed the idle state at `cycle`; returns the termination cycle once the
    /// idle window has elapsed. Any activity restarts the window.
    pub fn observe(&mut self, cycle: u64, idle: bool) -> Option<u64> {
        if !idle {
            self.idle_since = None;
            return None;
        }
        let since = *self.idle_since.get_or_insert(cycle);
        (cycle >= since + self.window).then_some(since + self.window)
    }

    /// Termination cycle if nothing happens after `cycle`.
    pub fn deadline(&self) -> Option<u64> {
        self.idle_since.map(|s| s + self.window)
    }

    pub fn reset(&mut self) {
        self.idle_since = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierScope {
    Local,
    Global,
}

/// Synchronize clocks at an epoch boundary. A global barrier costs one
/// reduction plus one broadcast across the network.
pub fn epoch_barrier(clocks: &mut [u64], scope: BarrierScope, diameter: u64) -> u64 {
    let max = clocks.iter().copied().max().unwrap_or(0);
    let t = match scope {
        BarrierScope::Local => max,
        BarrierScope::Global => max + 2 * diameter,
    };
    clocks.iter_mut().for_each(|c| *c = t);
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_grid_terminates_after_window() {
        let mut d = TerminationDetector::new(12);
        assert_eq!(d.observe(0, true), None);
        assert_eq!(d.observe(11, true), None);
        assert_eq!(d.observe(12, true), Some(12));
    }

    #[test]
    fn activity_blocks_termination() {
        let mut d = TerminationDetector::new(4);
        for c in 0..20 {
            assert_eq!(d.observe(c, false), None);
        }
    }

    /// 2x2 mesh, diameter 2, window 4: idle from 3, a late message at 5, idle
    /// again from 6; the first window is abandoned and the second completes.
    #[test]
    fn late_message_restarts_window() {
        let mut d = TerminationDetector::new(4);
        let trace = [false, false, false, true, true, false, true, true, true, true, true];
        let mut done = None;
        for (c, &idle) in trace.iter().enumerate() {
            if let Some(t) = d.observe(c as u64, idle) {
                done = Some(t);
                break;
            }
        }
        assert_eq!(done, Some(10));
    }

    #[test]
    fn barrier_examples() {
        let mut c = [10, 20, 30];
        assert_eq!(epoch_barrier(&mut c, BarrierScope::Global, 6), 42);
        assert_eq!(c, [42, 42, 42]);
        let mut c = [5, 9];
        assert_eq!(epoch_barrier(&mut c, BarrierScope::Local, 6), 9);
        assert_eq!(c, [9, 9]);
    }
}
