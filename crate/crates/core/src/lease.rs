//! Assignment leasing for one launched task set.
//!
//! A task accepts new leases while its active leases plus submissions are
//! below the redundancy, so a task never collects more than `redundancy`
//! submissions. Workers receive the lowest-index eligible task and never a
//! task they held before, even if that lease expired.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::constraint::{validate_submission_with, Registry, Violation};
use crate::condition::settle;
use crate::response::ResponseState;
use crate::spec::TaskSetSpec;

pub const DEFAULT_LEASE_MS: u64 = 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentState {
    Leased,
    Submitted,
    Expired,
}

/// Marketplace handles for an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExternalIds {
    pub hit_id: String,
    pub assignment_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: String,
    pub task_index: usize,
    pub task_id: String,
    pub worker: String,
    pub state: AssignmentState,
    /// Unix milliseconds.
    pub leased_at: u64,
    pub deadline: u64,
    pub submitted_at: Option<u64>,
    /// Settled response, present once submitted.
    pub response: Option<ResponseState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalIds>,
}

impl Assignment {
    pub fn is_active(&self) -> bool {
        self.state == AssignmentState::Leased
    }

    /// Seconds between lease and submission.
    pub fn duration_secs(&self) -> Option<f64> {
        self.submitted_at.map(|s| s.saturating_sub(self.leased_at) as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown assignment `{0}`")]
    UnknownAssignment(String),
    #[error("assignment is leased to another worker")]
    NotLeasedToWorker,
    #[error("lease expired")]
    LeaseExpired,
    #[error("assignment already submitted")]
    AlreadySubmitted,
    #[error("response violates {} constraint(s)", .0.len())]
    Violations(Vec<Violation>),
}

impl SubmitError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownAssignment(_) => "unknown-assignment",
            Self::NotLeasedToWorker => "not-leased-to-worker",
            Self::LeaseExpired => "lease-expired",
            Self::AlreadySubmitted => "already-submitted",
            Self::Violations(_) => "constraint-violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentBook {
    pub task_ids: Vec<String>,
    pub redundancy: u32,
    pub lease_ms: u64,
    pub assignments: Vec<Assignment>,
}

impl AssignmentBook {
    pub fn new(spec: &TaskSetSpec, lease_ms: u64) -> Self {
        AssignmentBook {
            task_ids: spec.tasks.iter().map(|t| t.task_id.clone()).collect(),
            redundancy: spec.redundancy,
            lease_ms,
            assignments: Vec::new(),
        }
    }

    /// Marks leases past their deadline as expired; returns their ids.
    pub fn expire(&mut self, now: u64) -> Vec<String> {
        let mut out = Vec::new();
        for a in &mut self.assignments {
            if a.is_active() && now >= a.deadline {
                a.state = AssignmentState::Expired;
                out.push(a.id.clone());
            }
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.id == id)
    }

    pub fn submitted_count(&self, task_index: usize) -> u32 {
        self.count(task_index, AssignmentState::Submitted)
    }

    pub fn active_count(&self, task_index: usize) -> u32 {
        self.count(task_index, AssignmentState::Leased)
    }

    fn count(&self, task_index: usize, state: AssignmentState) -> u32 {
        self.assignments.iter().filter(|a| a.task_index == task_index && a.state == state).count() as u32
    }

    pub fn is_complete(&self, task_index: usize) -> bool {
        self.submitted_count(task_index) >= self.redundancy
    }

    /// Submitted assignments in (task index, submit time) order.
    pub fn submitted(&self) -> impl Iterator<Item = &Assignment> {
        let mut v: Vec<&Assignment> =
            self.assignments.iter().filter(|a| a.state == AssignmentState::Submitted).collect();
        v.sort_by_key(|a| (a.task_index, a.submitted_at, a.id.clone()));
        v.into_iter()
    }

    /// Returns the worker's active lease, or leases the next eligible task.
    /// `None` means nothing is left for this worker.
    pub fn next_assignment(&mut self, worker: &str, now: u64) -> Option<&Assignment> {
        self.expire(now);
        if let Some(i) = self.assignments.iter().position(|a| a.worker == worker && a.is_active()) {
            return Some(&self.assignments[i]);
        }
        let task_index = (0..self.task_ids.len()).find(|&t| {
            let taken = self.active_count(t) + self.submitted_count(t);
            taken < self.redundancy && !self.assignments.iter().any(|a| a.task_index == t && a.worker == worker)
        })?;
        let id = format!("a{}", self.assignments.len() + 1);
        self.assignments.push(Assignment {
            id,
            task_index,
            task_id: self.task_ids[task_index].clone(),
            worker: worker.into(),
            state: AssignmentState::Leased,
            leased_at: now,
            deadline: now.saturating_add(self.lease_ms),
            submitted_at: None,
            response: None,
            external: None,
        });
        self.assignments.last()
    }

    pub fn set_external(&mut self, id: &str, external: ExternalIds) -> bool {
        match self.assignments.iter_mut().find(|a| a.id == id) {
            Some(a) => {
                a.external = Some(external);
                true
            }
            None => false,
        }
    }

    /// Validates and records a submission. Nothing changes on error.
    pub fn submit(
        &mut self,
        spec: &TaskSetSpec,
        registry: &Registry,
        id: &str,
        worker: &str,
        state: &ResponseState,
        now: u64,
    ) -> Result<&Assignment, SubmitError> {
        let i = self
            .assignments
            .iter()
            .position(|a| a.id == id)
            .ok_or_else(|| SubmitError::UnknownAssignment(id.into()))?;
        let a = &self.assignments[i];
        if a.worker != worker {
            return Err(SubmitError::NotLeasedToWorker);
        }
        match a.state {
            AssignmentState::Submitted => return Err(SubmitError::AlreadySubmitted),
            AssignmentState::Expired => return Err(SubmitError::LeaseExpired),
            AssignmentState::Leased if now >= a.deadline => {
                self.assignments[i].state = AssignmentState::Expired;
                return Err(SubmitError::LeaseExpired);
            }
            AssignmentState::Leased => {}
        }
        let task = &spec.tasks[a.task_index];
        validate_submission_with(task, &spec.shared, state, registry).map_err(SubmitError::Violations)?;
        let (settled, _) = settle(task, state);
        let a = &mut self.assignments[i];
        a.state = AssignmentState::Submitted;
        a.submitted_at = Some(now);
        a.response = Some(settled);
        Ok(a)
    }
}
