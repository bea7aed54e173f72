use std::sync::{Condvar, Mutex};

/// Counting semaphore capping concurrent requests through one backend
/// handle. Records the peak concurrency it has admitted.
#[derive(Debug)]
pub struct InFlightGate {
    max: usize,
    state: Mutex<GateState>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct GateState {
    current: usize,
    peak: usize,
    admitted: u64,
}

impl InFlightGate {
    pub fn new(max: usize) -> Self {
        InFlightGate {
            max: max.max(1),
            state: Mutex::new(GateState::default()),
            cv: Condvar::new(),
        }
    }

    pub fn enter(&self) -> GateGuard<'_> {
        let mut state = self.state.lock().unwrap();
        while state.current >= self.max {
            state = self.cv.wait(state).unwrap();
        }
        state.current += 1;
        state.admitted += 1;
        state.peak = state.peak.max(state.current);
        GateGuard { gate: self }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    /// Highest number of simultaneous holders seen so far.
    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().peak
    }

    pub fn admitted(&self) -> u64 {
        self.state.lock().unwrap().admitted
    }
}

pub struct GateGuard<'a> {
    gate: &'a InFlightGate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut state = self.gate.state.lock().unwrap();
        state.current -= 1;
        self.gate.cv.notify_one();
    }
}
