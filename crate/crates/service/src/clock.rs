//! Wall-clock pacing behind an injectable clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

/// Monotone time since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

/// Tokio's clock: real time normally, virtual time in a paused test runtime.
#[derive(Debug, Clone, Copy)]
pub struct TokioClock {
    origin: tokio::time::Instant,
}

impl TokioClock {
    pub fn new() -> Self {
        Self {
            origin: tokio::time::Instant::now(),
        }
    }
}

impl Default for TokioClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for TokioClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// A clock moved by hand.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

/// Maps wall time to a step target: `factor` sim seconds per wall second
/// since the last anchor.
#[derive(Debug, Clone, Copy)]
pub struct Pacer {
    factor: f64,
    dt: f64,
    anchor: Option<(Duration, u64)>,
}

impl Pacer {
    pub fn new(factor: f64, dt: f64) -> Self {
        Self { factor, dt, anchor: None }
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    /// Starts (or restarts) pacing from `steps` at wall time `now`.
    pub fn resume(&mut self, now: Duration, steps: u64) {
        self.anchor = Some((now, steps));
    }

    pub fn pause(&mut self) {
        self.anchor = None;
    }

    pub fn is_running(&self) -> bool {
        self.anchor.is_some()
    }

    /// Changes the factor without a jump in sim time.
    pub fn set_factor(&mut self, factor: f64, now: Duration, steps: u64) {
        self.factor = factor;
        if self.anchor.is_some() {
            self.anchor = Some((now, steps));
        }
    }

    /// Step count the sim should have reached by `now`.
    pub fn target(&self, now: Duration) -> Option<u64> {
        self.anchor.map(|(wall, steps)| {
            let elapsed = now.saturating_sub(wall).as_secs_f64();
            steps + (self.factor * elapsed / self.dt).floor() as u64
        })
    }

    /// Sim seconds the session is behind its target.
    pub fn lag(&self, now: Duration, steps: u64) -> f64 {
        self.target(now)
            .map(|t| t.saturating_sub(steps) as f64 * self.dt)
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 8000.0;

    #[test]
    fn idle_until_resumed() {
        let p = Pacer::new(1.0, DT);
        assert_eq!(p.target(Duration::from_secs(3)), None);
        assert_eq!(p.lag(Duration::from_secs(3), 0), 0.0);
    }

    #[test]
    fn target_follows_the_clock_from_the_anchor() {
        let clock = ManualClock::default();
        let mut p = Pacer::new(1.0, DT);
        clock.advance(Duration::from_secs(5));
        p.resume(clock.now(), 100);
        clock.advance(Duration::from_millis(250));
        assert_eq!(p.target(clock.now()), Some(2100));
        assert!((p.lag(clock.now(), 1100) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn factor_changes_do_not_jump() {
        let clock = ManualClock::default();
        let mut p = Pacer::new(1.0, DT);
        p.resume(clock.now(), 0);
        clock.advance(Duration::from_secs(1));
        p.set_factor(0.5, clock.now(), 8000);
        assert_eq!(p.target(clock.now()), Some(8000));
        clock.advance(Duration::from_secs(2));
        assert_eq!(p.target(clock.now()), Some(16000));
    }
}
