//! Shared helpers for the integration tests: an independent evaluator of
//! the soft semantics, a random formula generator, and the property
//! checks used both by the per-suite tests and by the acceptance run.
#![allow(dead_code)]

pub mod gen;
pub mod reference;
pub mod suites;

/// Result of one named property check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.passed, "{}: {}", self.name, self.detail);
    }
}
