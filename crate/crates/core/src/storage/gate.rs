//! Query admission control. A flip closes the gate; queries arriving while
//! it is closed wait, and are let through in (priority, arrival) order once
//! it reopens. Queries already admitted keep running on their snapshots.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

#[derive(Debug, Default)]
struct GateState {
    paused: bool,
    waiting: BinaryHeap<Reverse<(usize, u64)>>,
    next_ticket: u64,
}

#[derive(Debug, Default)]
pub(crate) struct AdmissionGate {
    state: Mutex<GateState>,
    cv: Condvar,
}

impl AdmissionGate {
    /// Waits until admitted, then runs `on_admit` while still holding the
    /// gate so that no pause can begin in between.
    pub(crate) fn admit<T>(&self, priority: usize, on_admit: impl FnOnce() -> T) -> (T, Duration) {
        let started = Instant::now();
        let mut s = self.state.lock();
        if !s.paused && s.waiting.is_empty() {
            return (on_admit(), Duration::ZERO);
        }
        let ticket = Reverse((priority, s.next_ticket));
        s.next_ticket += 1;
        s.waiting.push(ticket);
        loop {
            if !s.paused && s.waiting.peek() == Some(&ticket) {
                s.waiting.pop();
                let out = on_admit();
                self.cv.notify_all();
                return (out, started.elapsed());
            }
            self.cv.wait(&mut s);
        }
    }

    pub(crate) fn pause(&self) {
        self.state.lock().paused = true;
    }

    pub(crate) fn resume(&self) {
        self.state.lock().paused = false;
        self.cv.notify_all();
    }

    pub(crate) fn waiting(&self) -> usize {
        self.state.lock().waiting.len()
    }
}
