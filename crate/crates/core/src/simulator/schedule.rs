use serde::Serialize;

/// Cycles charged when a PE switches primitive kind.
pub const SWITCH_OVERHEAD: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedTask {
    pub cycles: u64,
    /// Earliest start: operands transferred.
    pub ready: u64,
    /// Previous task of the same accumulate chain.
    pub chain: Option<usize>,
    /// Primitive kind, for switch overhead.
    pub kind: u8,
}

impl SchedTask {
    pub fn independent(cycles: u64) -> Self {
        Self {
            cycles,
            ready: 0,
            chain: None,
            kind: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Slot {
    pub pe: usize,
    pub start: u64,
    pub finish: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Schedule {
    pub slots: Vec<Slot>,
    pub makespan: u64,
    pub pe_busy: Vec<u64>,
}

/// Greedy list scheduling in task order: each task goes to the PE that
/// finishes it earliest (lowest index on ties); chain successors stay on
/// their chain's PE.
pub fn schedule(tasks: &[SchedTask], n_pe: usize) -> Schedule {
    let n_pe = n_pe.max(1);
    let mut free = vec![0u64; n_pe];
    let mut last: Vec<Option<u8>> = vec![None; n_pe];
    let mut pe_busy = vec![0u64; n_pe];
    let mut slots: Vec<Slot> = Vec::with_capacity(tasks.len());
    for t in tasks {
        let finish_on = |pe: usize| {
            let switch = match last[pe] {
                Some(k) if k != t.kind => SWITCH_OVERHEAD,
                _ => 0,
            };
            let start = free[pe].max(t.ready);
            (start, start + switch + t.cycles)
        };
        let pe = match t.chain.and_then(|c| slots.get(c)) {
            Some(prev) => prev.pe,
            None => (0..n_pe).min_by_key(|&p| (finish_on(p).1, p)).expect("at least one PE"),
        };
        let (start, finish) = finish_on(pe);
        free[pe] = finish;
        last[pe] = Some(t.kind);
        pe_busy[pe] += finish - start;
        slots.push(Slot { pe, start, finish });
    }
    Schedule {
        makespan: free.iter().copied().max().unwrap_or(0),
        slots,
        pe_busy,
    }
}

/// Total length of the union of `[start, finish)` intervals.
pub fn busy_union(slots: &[Slot]) -> u64 {
    let mut iv: Vec<(u64, u64)> = slots.iter().filter(|s| s.finish > s.start).map(|s| (s.start, s.finish)).collect();
    iv.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in iv {
        cur = match cur {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn makespan(c: &[u64], n: usize) -> u64 {
        let t: Vec<SchedTask> = c.iter().map(|c| SchedTask::independent(*c)).collect();
        schedule(&t, n).makespan
    }

    #[test]
    fn hand_schedules() {
        assert_eq!(makespan(&[10, 10, 10, 10], 2), 20);
        let t: Vec<SchedTask> = [9, 5, 5].iter().map(|c| SchedTask::independent(*c)).collect();
        let s = schedule(&t, 2);
        let pes: Vec<usize> = s.slots.iter().map(|x| x.pe).collect();
        assert_eq!(pes, vec![0, 1, 1]);
        assert_eq!(s.makespan, 10);
        assert_eq!(makespan(&[3, 4, 5], 1), 12);
        assert_eq!(makespan(&[], 3), 0);
    }

    #[test]
    fn chains_stay_on_one_pe_and_switches_cost_a_cycle() {
        let mut t = vec![SchedTask::independent(10), SchedTask::independent(10)];
        t[1].chain = Some(0);
        let s = schedule(&t, 4);
        assert_eq!((s.slots[1].pe, s.slots[1].start, s.makespan), (0, 10, 20));
        let mut u = vec![SchedTask::independent(5), SchedTask::independent(5)];
        u[1].kind = 1;
        assert_eq!(schedule(&u, 1).makespan, 11);
    }

    #[test]
    fn union_of_intervals() {
        let s = |start, finish| Slot { pe: 0, start, finish };
        assert_eq!(busy_union(&[s(0, 5), s(3, 8), s(10, 12)]), 10);
        assert_eq!(busy_union(&[]), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn greedy_bounds_hold(c in proptest::collection::vec(1u64..200, 0..40), n in 1usize..9) {
            let m = makespan(&c, n);
            let sum: u64 = c.iter().sum();
            let max = c.iter().copied().max().unwrap_or(0);
            prop_assert!(m >= max);
            prop_assert!(m <= sum);
            prop_assert!(m as f64 <= sum as f64 / n as f64 + max as f64);
            prop_assert!(makespan(&c, n + 1) <= m);
        }
    }
}
