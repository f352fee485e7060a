use homeloc_core::ingest::Clock;
use tokio::time::Instant;

/// Epoch milliseconds driven by the tokio timer, so paused test time also
/// pauses the service clock.
#[derive(Debug, Clone)]
pub struct TokioClock {
    base_ms: i64,
    origin: Instant,
}

impl TokioClock {
    pub fn starting_at(base_ms: i64) -> Self {
        Self {
            base_ms,
            origin: Instant::now(),
        }
    }
}

impl Clock for TokioClock {
    fn now_ms(&self) -> i64 {
        self.base_ms + self.origin.elapsed().as_millis() as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[tokio::test(start_paused = true)]
    async fn follows_paused_time() {
        let c = TokioClock::starting_at(1_000_000);
        assert_eq!(c.now_ms(), 1_000_000);
        tokio::time::advance(Duration::from_millis(2500)).await;
        assert_eq!(c.now_ms(), 1_002_500);
    }
}
