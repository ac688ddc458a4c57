use std::cmp::Ordering;

/// Event kinds in the order they are handled at equal times: capacity is
/// freed before anything at the same instant looks at it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    SessionEnd,
    RetryWake,
    Arrival,
    SessionStart,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub request: u64,
}

impl SimEvent {
    fn key(&self) -> (f64, EventKind, u64) {
        (self.time, self.kind, self.request)
    }
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    /// Reversed, so a `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BinaryHeap;

    #[test]
    fn pops_by_time_then_kind_then_id() {
        let mut heap = BinaryHeap::new();
        let ev = |time, kind, request| SimEvent {
            time,
            kind,
            request,
        };
        heap.push(ev(1.0, EventKind::SessionStart, 0));
        heap.push(ev(1.0, EventKind::Arrival, 5));
        heap.push(ev(1.0, EventKind::Arrival, 2));
        heap.push(ev(0.5, EventKind::SessionStart, 9));
        heap.push(ev(1.0, EventKind::SessionEnd, 7));
        heap.push(ev(1.0, EventKind::RetryWake, 1));
        let order: Vec<_> = std::iter::from_fn(|| heap.pop())
            .map(|e| (e.kind, e.request))
            .collect();
        assert_eq!(
            order,
            vec![
                (EventKind::SessionStart, 9),
                (EventKind::SessionEnd, 7),
                (EventKind::RetryWake, 1),
                (EventKind::Arrival, 2),
                (EventKind::Arrival, 5),
                (EventKind::SessionStart, 0),
            ]
        );
    }
}
