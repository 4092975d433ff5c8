use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::BackendError;

/// Scripted latency and failures for one mock service.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultScript {
    #[serde(default)]
    pub latency_ms: u64,
    /// The first `fail_first` calls fail.
    #[serde(default)]
    pub fail_first: u64,
    #[serde(default)]
    pub fail_always: bool,
}

#[derive(Debug, Default)]
pub struct FaultInjector {
    pub script: FaultScript,
    calls: AtomicU64,
}

impl FaultInjector {
    pub fn new(script: FaultScript) -> Self {
        Self {
            script,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Sleeps for the scripted latency, then fails if the script says so.
    pub async fn apply(&self) -> Result<(), BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.script.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.script.latency_ms)).await;
        }
        if self.script.fail_always || n < self.script.fail_first {
            return Err(BackendError::Transport(format!("injected failure on call {}", n + 1)));
        }
        Ok(())
    }
}
