//! Clocks and inner-iteration calibration.

use std::cell::Cell;
use std::time::{Duration, Instant};

pub trait Clock {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Advances by a fixed step on every read, so every measured interval is
/// exactly `step`.
#[derive(Debug)]
pub struct FakeClock {
    step: Duration,
    t: Cell<Duration>,
}

impl FakeClock {
    pub fn new(step: Duration) -> Self {
        FakeClock {
            step,
            t: Cell::new(Duration::ZERO),
        }
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        let t = self.t.get() + self.step;
        self.t.set(t);
        t
    }
}

/// Smallest nonzero difference between consecutive reads, over a few
/// hundred reads.
pub fn clock_resolution(clock: &dyn Clock) -> Duration {
    let mut best = Duration::MAX;
    let mut prev = clock.now();
    for _ in 0..1000 {
        let t = clock.now();
        if t > prev {
            best = best.min(t - prev);
        }
        prev = t;
    }
    if best == Duration::MAX {
        Duration::from_nanos(1)
    } else {
        best
    }
}

/// Upper bound on the inner-iteration factor.
pub const MAX_INNER: u32 = 1 << 16;

/// Number of back-to-back calls needed for one sample to span `min_sample`,
/// given that a single call took `single`.
pub fn inner_iterations(single: Duration, min_sample: Duration) -> u32 {
    if single >= min_sample {
        return 1;
    }
    if single.is_zero() {
        return MAX_INNER;
    }
    let f = min_sample.as_nanos().div_ceil(single.as_nanos());
    f.min(MAX_INNER as u128) as u32
}
