//! Pass/fail reports produced by the condition checkers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClauseStatus {
    Pass,
    Fail,
    /// Known, quantified departure of a shipped family from the stated
    /// condition; not a validation error.
    Deviates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub name: String,
    pub status: ClauseStatus,
    /// Measured constant or extremal value backing the verdict.
    pub measured: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub clauses: Vec<Clause>,
}

impl ConditionReport {
    pub fn new(condition: impl Into<String>) -> Self {
        ConditionReport {
            condition: condition.into(),
            clauses: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, status: ClauseStatus, measured: Option<f64>, note: impl Into<String>) {
        self.clauses.push(Clause {
            name: name.to_string(),
            status,
            measured,
            note: note.into(),
        });
    }

    pub fn check(&mut self, name: &str, ok: bool, measured: Option<f64>, note: impl Into<String>) {
        let status = if ok { ClauseStatus::Pass } else { ClauseStatus::Fail };
        self.push(name, status, measured, note);
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    pub fn status(&self, name: &str) -> Option<ClauseStatus> {
        self.clause(name).map(|c| c.status)
    }

    /// True when no clause failed outright (deviations are allowed).
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.status != ClauseStatus::Fail)
    }

    pub fn first_failure(&self) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.status == ClauseStatus::Fail)
    }
}
