//! Wall-clock access for timing measurements.

/// Milliseconds since an arbitrary fixed origin.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// A clock that never advances; timings read as zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}
