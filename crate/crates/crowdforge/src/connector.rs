//! Marketplace abstraction.
//!
//! The service only needs four calls from a marketplace. [`MockConnector`]
//! implements them in memory, deterministically under a seed, and also
//! plays the marketplace side of the ExternalQuestion handshake for
//! simulated workers (accepting HITs and receiving the POST-back).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Exam,
    TaskSet,
}

impl HitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HitKind::Exam => "exam",
            HitKind::TaskSet => "task_set",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRequest {
    pub kind: HitKind,
    pub title: String,
    /// URL the marketplace frames as the ExternalQuestion.
    pub external_url: String,
    pub reward: f64,
    /// Maximum assignments for the HIT.
    pub count: u32,
    /// Repeated calls with the same token return the first call's result.
    pub client_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketStatus {
    Accepted,
    Submitted,
    Approved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketAssignment {
    pub worker_id: String,
    pub assignment_id: String,
    pub status: MarketStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectorError {
    /// Worth retrying with the same client token.
    #[error("transient marketplace failure: {0}")]
    Transient(String),
    #[error("unknown HIT `{0}`")]
    UnknownHit(String),
    #[error("unknown assignment `{0}`")]
    UnknownAssignment(String),
    #[error("marketplace rejected the request: {0}")]
    Rejected(String),
}

pub trait MarketplaceConnector: Send + Sync {
    fn create_hit(&self, req: &HitRequest) -> Result<Vec<String>, ConnectorError>;
    fn list_assignments(&self, hit_id: &str) -> Result<Vec<MarketAssignment>, ConnectorError>;
    fn grant_qualification(&self, worker_id: &str, qualification: &str) -> Result<(), ConnectorError>;
    fn approve(&self, assignment_id: &str) -> Result<(), ConnectorError>;
}

#[derive(Debug, Clone)]
pub struct MockHit {
    pub id: String,
    pub request: HitRequest,
    pub assignments: Vec<MarketAssignment>,
}

#[derive(Debug)]
struct MockInner {
    rng: ChaCha20Rng,
    hits: BTreeMap<String, MockHit>,
    by_token: HashMap<String, Vec<String>>,
    qualifications: BTreeSet<(String, String)>,
    /// POST-back bodies received from workers' browsers.
    postbacks: Vec<BTreeMap<String, String>>,
    fail_next: u32,
    create_calls: u32,
}

/// In-memory marketplace. HIT ids come from a seeded RNG, so two mocks
/// with the same seed and call sequence hand out the same ids.
#[derive(Debug)]
pub struct MockConnector {
    inner: Mutex<MockInner>,
}

impl MockConnector {
    pub fn new(seed: u64) -> Self {
        MockConnector {
            inner: Mutex::new(MockInner {
                rng: ChaCha20Rng::seed_from_u64(seed),
                hits: BTreeMap::new(),
                by_token: HashMap::new(),
                qualifications: BTreeSet::new(),
                postbacks: Vec::new(),
                fail_next: 0,
                create_calls: 0,
            }),
        }
    }

    /// Makes the next `n` create_hit calls fail transiently.
    pub fn fail_next(&self, n: u32) {
        self.inner.lock().fail_next = n;
    }

    /// Number of create_hit calls received, failed ones included.
    pub fn create_calls(&self) -> u32 {
        self.inner.lock().create_calls
    }

    pub fn hits(&self) -> Vec<MockHit> {
        self.inner.lock().hits.values().cloned().collect()
    }

    /// A worker accepts a HIT; returns the marketplace assignment id.
    pub fn accept_hit(&self, hit_id: &str, worker_id: &str) -> Result<String, ConnectorError> {
        let mut inner = self.inner.lock();
        let hit = inner.hits.get_mut(hit_id).ok_or_else(|| ConnectorError::UnknownHit(hit_id.into()))?;
        if let Some(a) = hit.assignments.iter().find(|a| a.worker_id == worker_id) {
            return Ok(a.assignment_id.clone());
        }
        if hit.assignments.len() as u32 >= hit.request.count {
            return Err(ConnectorError::Rejected(format!("HIT {hit_id} has no assignments left")));
        }
        let assignment_id = format!("{hit_id}-A{:04}", hit.assignments.len() + 1);
        hit.assignments.push(MarketAssignment {
            worker_id: worker_id.into(),
            assignment_id: assignment_id.clone(),
            status: MarketStatus::Accepted,
        });
        Ok(assignment_id)
    }

    /// The worker's browser POSTed the external-submit form.
    pub fn record_postback(&self, fields: BTreeMap<String, String>) -> Result<(), ConnectorError> {
        let mut inner = self.inner.lock();
        let id = fields.get("assignmentId").cloned().unwrap_or_default();
        let a = inner
            .hits
            .values_mut()
            .flat_map(|h| h.assignments.iter_mut())
            .find(|a| a.assignment_id == id)
            .ok_or(ConnectorError::UnknownAssignment(id))?;
        a.status = MarketStatus::Submitted;
        inner.postbacks.push(fields);
        Ok(())
    }

    pub fn postbacks(&self) -> Vec<BTreeMap<String, String>> {
        self.inner.lock().postbacks.clone()
    }

    pub fn has_qualification(&self, worker_id: &str, qualification: &str) -> bool {
        self.inner.lock().qualifications.contains(&(worker_id.to_string(), qualification.to_string()))
    }

    pub fn qualified_workers(&self, qualification: &str) -> Vec<String> {
        self.inner.lock().qualifications.iter().filter(|(_, q)| q == qualification).map(|(w, _)| w.clone()).collect()
    }
}

impl MarketplaceConnector for MockConnector {
    fn create_hit(&self, req: &HitRequest) -> Result<Vec<String>, ConnectorError> {
        let mut inner = self.inner.lock();
        inner.create_calls += 1;
        if inner.fail_next > 0 {
            inner.fail_next -= 1;
            return Err(ConnectorError::Transient("simulated outage".into()));
        }
        if let Some(ids) = inner.by_token.get(&req.client_token) {
            return Ok(ids.clone());
        }
        if req.count == 0 {
            return Err(ConnectorError::Rejected("count must be positive".into()));
        }
        let id = format!("HIT{:016X}", inner.rng.random::<u64>());
        inner.hits.insert(id.clone(), MockHit { id: id.clone(), request: req.clone(), assignments: Vec::new() });
        inner.by_token.insert(req.client_token.clone(), vec![id.clone()]);
        Ok(vec![id])
    }

    fn list_assignments(&self, hit_id: &str) -> Result<Vec<MarketAssignment>, ConnectorError> {
        let inner = self.inner.lock();
        inner.hits.get(hit_id).map(|h| h.assignments.clone()).ok_or_else(|| ConnectorError::UnknownHit(hit_id.into()))
    }

    fn grant_qualification(&self, worker_id: &str, qualification: &str) -> Result<(), ConnectorError> {
        self.inner.lock().qualifications.insert((worker_id.into(), qualification.into()));
        Ok(())
    }

    fn approve(&self, assignment_id: &str) -> Result<(), ConnectorError> {
        let mut inner = self.inner.lock();
        let a = inner
            .hits
            .values_mut()
            .flat_map(|h| h.assignments.iter_mut())
            .find(|a| a.assignment_id == assignment_id)
            .ok_or_else(|| ConnectorError::UnknownAssignment(assignment_id.into()))?;
        a.status = MarketStatus::Approved;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(token: &str) -> HitRequest {
        HitRequest {
            kind: HitKind::Exam,
            title: "t".into(),
            external_url: "http://x/w/exam/p".into(),
            reward: 0.5,
            count: 2,
            client_token: token.into(),
        }
    }

    #[test]
    fn deterministic_and_idempotent() {
        let a = MockConnector::new(9);
        let b = MockConnector::new(9);
        let ids = a.create_hit(&req("t1")).unwrap();
        assert_eq!(ids, b.create_hit(&req("t1")).unwrap());
        assert_eq!(a.create_hit(&req("t1")).unwrap(), ids);
        assert_eq!(a.hits().len(), 1);
        assert_ne!(a.create_hit(&req("t2")).unwrap(), ids);
    }

    #[test]
    fn assignment_lifecycle() {
        let m = MockConnector::new(1);
        let hit = m.create_hit(&req("t")).unwrap().remove(0);
        let a1 = m.accept_hit(&hit, "w1").unwrap();
        assert_eq!(m.accept_hit(&hit, "w1").unwrap(), a1);
        m.accept_hit(&hit, "w2").unwrap();
        assert!(m.accept_hit(&hit, "w3").is_err());
        m.record_postback(BTreeMap::from([("assignmentId".to_string(), a1.clone())])).unwrap();
        m.approve(&a1).unwrap();
        let listed = m.list_assignments(&hit).unwrap();
        assert_eq!(listed[0].status, MarketStatus::Approved);
        assert_eq!(listed[1].status, MarketStatus::Accepted);
    }

    #[test]
    fn injected_failures() {
        let m = MockConnector::new(1);
        m.fail_next(2);
        assert!(matches!(m.create_hit(&req("t")), Err(ConnectorError::Transient(_))));
        assert!(matches!(m.create_hit(&req("t")), Err(ConnectorError::Transient(_))));
        assert!(m.create_hit(&req("t")).is_ok());
        assert_eq!(m.create_calls(), 3);
    }
}
