//! Load-balancing pool of chat endpoints.
//!
//! Routing picks the healthy endpoint with the fewest in-flight requests
//! (normalized by weight); ties go round-robin over declaration order.
//! Endpoints that fail `failure_threshold` times in a row are marked dead
//! and receive nothing until [`EndpointPool::probe_dead`] revives them.

use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::Serialize;

use super::backend::ChatBackend;
use super::error::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EndpointId(pub usize);

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "endpoint#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Healthy,
    /// Finishes in-flight work, takes no new requests.
    Draining,
    Dead,
}

pub struct Endpoint {
    pub url: String,
    pub weight: u32,
    pub backend: Arc<dyn ChatBackend>,
}

impl Endpoint {
    pub fn new(url: impl Into<String>, weight: u32, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            url: url.into(),
            weight: weight.max(1),
            backend,
        }
    }
}

#[derive(Debug, Clone)]
struct SlotState {
    health: Health,
    in_flight: u64,
    consecutive_failures: u32,
    served: u64,
}

#[derive(Debug)]
struct PoolState {
    slots: Vec<SlotState>,
    cursor: usize,
}

/// Point-in-time view of one endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EndpointStatus {
    pub id: EndpointId,
    pub url: String,
    pub health: Health,
    pub in_flight: u64,
    pub served: u64,
}

pub struct EndpointPool {
    endpoints: Vec<Endpoint>,
    state: Mutex<PoolState>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub failure_threshold: u32,
}

impl fmt::Debug for EndpointPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointPool")
            .field("endpoints", &self.status())
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

pub const DEFAULT_CHAT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_FAILURE_THRESHOLD: u32 = 3;

impl EndpointPool {
    pub fn new(endpoints: Vec<Endpoint>, timeout: Duration, max_retries: u32) -> Result<Self, GatewayError> {
        if endpoints.is_empty() {
            return Err(GatewayError::InvalidRequest("endpoint pool needs at least one endpoint".into()));
        }
        let slots = endpoints
            .iter()
            .map(|_| SlotState {
                health: Health::Healthy,
                in_flight: 0,
                consecutive_failures: 0,
                served: 0,
            })
            .collect();
        Ok(Self {
            endpoints,
            state: Mutex::new(PoolState { slots, cursor: 0 }),
            timeout,
            max_retries,
            failure_threshold: DEFAULT_FAILURE_THRESHOLD,
        })
    }

    pub fn single(backend: Arc<dyn ChatBackend>) -> Self {
        Self::new(vec![Endpoint::new("in-process", 1, backend)], DEFAULT_CHAT_TIMEOUT, 0)
            .expect("one endpoint")
    }

    pub fn with_failure_threshold(mut self, threshold: u32) -> Self {
        self.failure_threshold = threshold.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    fn lock(&self) -> MutexGuard<'_, PoolState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn status(&self) -> Vec<EndpointStatus> {
        let st = self.lock();
        self.endpoints
            .iter()
            .zip(&st.slots)
            .enumerate()
            .map(|(i, (e, s))| EndpointStatus {
                id: EndpointId(i),
                url: e.url.clone(),
                health: s.health,
                in_flight: s.in_flight,
                served: s.served,
            })
            .collect()
    }

    pub fn set_health(&self, id: EndpointId, health: Health) {
        let mut st = self.lock();
        if let Some(s) = st.slots.get_mut(id.0) {
            s.health = health;
            if health == Health::Healthy {
                s.consecutive_failures = 0;
            }
        }
    }

    /// Selects an endpoint without reserving it. Advances the round-robin
    /// cursor, so repeated calls on an idle pool rotate.
    pub fn route_request(&self) -> Result<EndpointId, GatewayError> {
        let mut st = self.lock();
        self.select(&mut st)
    }

    fn select(&self, st: &mut PoolState) -> Result<EndpointId, GatewayError> {
        let n = self.endpoints.len();
        let mut best: Option<usize> = None;
        // visiting in cyclic order from the cursor makes the first minimum
        // found the round-robin winner among ties
        for k in 0..n {
            let i = (st.cursor + k) % n;
            let s = &st.slots[i];
            if s.health != Health::Healthy {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    let lhs = s.in_flight as u128 * self.endpoints[b].weight as u128;
                    let rhs = st.slots[b].in_flight as u128 * self.endpoints[i].weight as u128;
                    if lhs < rhs {
                        best = Some(i);
                    }
                }
            }
        }
        let chosen = best.ok_or(GatewayError::NoHealthyEndpoint)?;
        st.cursor = (chosen + 1) % n;
        Ok(EndpointId(chosen))
    }

    /// Routes and reserves an endpoint; the lease releases its in-flight
    /// slot when dropped.
    pub fn acquire(&self) -> Result<Lease<'_>, GatewayError> {
        let mut st = self.lock();
        let id = self.select(&mut st)?;
        st.slots[id.0].in_flight += 1;
        Ok(Lease {
            pool: self,
            id,
            backend: self.endpoints[id.0].backend.clone(),
        })
    }

    fn release(&self, id: EndpointId) {
        let mut st = self.lock();
        let s = &mut st.slots[id.0];
        debug_assert!(s.in_flight > 0, "in-flight counter underflow");
        s.in_flight = s.in_flight.saturating_sub(1);
    }

    fn record(&self, id: EndpointId, ok: bool) {
        let mut st = self.lock();
        let threshold = self.failure_threshold;
        let s = &mut st.slots[id.0];
        if ok {
            s.consecutive_failures = 0;
            s.served += 1;
        } else {
            s.consecutive_failures += 1;
            if s.consecutive_failures >= threshold && s.health == Health::Healthy {
                tracing::warn!(endpoint = id.0, "marking endpoint dead after {} failures", s.consecutive_failures);
                s.health = Health::Dead;
            }
        }
    }

    /// Probes every dead endpoint and revives those that answer.
    pub async fn probe_dead(&self) -> Vec<EndpointId> {
        let dead: Vec<usize> = {
            let st = self.lock();
            (0..st.slots.len()).filter(|&i| st.slots[i].health == Health::Dead).collect()
        };
        let mut revived = Vec::new();
        for i in dead {
            let probe = tokio::time::timeout(self.timeout, self.endpoints[i].backend.health()).await;
            if matches!(probe, Ok(Ok(()))) {
                self.set_health(EndpointId(i), Health::Healthy);
                revived.push(EndpointId(i));
            }
        }
        revived
    }

    /// Spawns a background task probing dead endpoints every `period`.
    pub fn spawn_health_probe(self: &Arc<Self>, period: Duration) -> tokio::task::JoinHandle<()> {
        let pool = Arc::downgrade(self);
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            loop {
                ticker.tick().await;
                match pool.upgrade() {
                    Some(p) => {
                        p.probe_dead().await;
                    }
                    None => break,
                }
            }
        })
    }
}

/// An in-flight reservation on one endpoint.
pub struct Lease<'a> {
    pool: &'a EndpointPool,
    pub id: EndpointId,
    pub backend: Arc<dyn ChatBackend>,
}

impl Lease<'_> {
    pub fn succeeded(&self) {
        self.pool.record(self.id, true);
    }

    pub fn failed(&self) {
        self.pool.record(self.id, false);
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        self.pool.release(self.id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::backend::{BackendError, ChatReply};
    use crate::gateway::chat::ChatRequest;
    use async_trait::async_trait;

    struct Null;

    #[async_trait]
    impl ChatBackend for Null {
        async fn complete(&self, _: &ChatRequest) -> Result<ChatReply, BackendError> {
            Err(BackendError::Transport("null".into()))
        }
    }

    fn pool(n: usize) -> EndpointPool {
        let eps = (0..n).map(|i| Endpoint::new(format!("ep{i}"), 1, Arc::new(Null))).collect();
        EndpointPool::new(eps, Duration::from_secs(1), 0).unwrap()
    }

    fn set_in_flight(p: &EndpointPool, counts: &[u64]) {
        let mut st = p.lock();
        for (s, c) in st.slots.iter_mut().zip(counts) {
            s.in_flight = *c;
        }
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(EndpointPool::new(vec![], Duration::from_secs(1), 0).is_err());
    }

    #[test]
    fn round_robin_on_idle_pool() {
        let p = pool(3);
        let mut hits = [0; 3];
        for _ in 0..6 {
            let lease = p.acquire().unwrap();
            hits[lease.id.0] += 1;
        }
        assert_eq!(hits, [2, 2, 2]);
    }

    #[test]
    fn least_loaded_wins() {
        let p = pool(3);
        set_in_flight(&p, &[2, 0, 1]);
        assert_eq!(p.route_request().unwrap(), EndpointId(1));
    }

    #[test]
    fn dead_endpoints_skipped() {
        let p = pool(3);
        p.set_health(EndpointId(1), Health::Dead);
        set_in_flight(&p, &[1, 0, 1]);
        for _ in 0..10 {
            assert_ne!(p.route_request().unwrap(), EndpointId(1));
        }
        p.set_health(EndpointId(0), Health::Draining);
        p.set_health(EndpointId(2), Health::Dead);
        assert!(matches!(p.route_request(), Err(GatewayError::NoHealthyEndpoint)));
    }

    #[test]
    fn weights_scale_load() {
        let eps = vec![
            Endpoint::new("a", 1, Arc::new(Null) as Arc<dyn ChatBackend>),
            Endpoint::new("b", 3, Arc::new(Null) as Arc<dyn ChatBackend>),
        ];
        let p = EndpointPool::new(eps, Duration::from_secs(1), 0).unwrap();
        // 1/1 vs 2/3: the heavier endpoint is relatively less loaded
        set_in_flight(&p, &[1, 2]);
        assert_eq!(p.route_request().unwrap(), EndpointId(1));
    }

    #[test]
    fn lease_balances_counters() {
        let p = pool(2);
        {
            let _a = p.acquire().unwrap();
            let _b = p.acquire().unwrap();
            assert!(p.status().iter().all(|s| s.in_flight == 1));
        }
        assert!(p.status().iter().all(|s| s.in_flight == 0));
    }

    #[test]
    fn consecutive_failures_kill_endpoint() {
        let p = pool(1).with_failure_threshold(2);
        p.acquire().unwrap().failed();
        assert_eq!(p.status()[0].health, Health::Healthy);
        p.acquire().unwrap().failed();
        assert_eq!(p.status()[0].health, Health::Dead);
    }

    #[tokio::test]
    async fn probe_revives_dead() {
        let p = pool(2);
        p.set_health(EndpointId(0), Health::Dead);
        assert_eq!(p.probe_dead().await, vec![EndpointId(0)]);
        assert_eq!(p.status()[0].health, Health::Healthy);
    }
}
