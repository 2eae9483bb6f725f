//! Named residuals collected by the verifiers.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    /// The identity being checked, written as a formula.
    pub anchor: String,
    pub value: f64,
    /// Whether finite differences entered the evaluation.
    pub finite_difference: bool,
}

/// Worst-case residual per named identity, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub entries: Vec<Residual>,
}

impl Residuals {
    pub fn record(&mut self, name: &str, anchor: &str, value: f64) {
        self.push(name, anchor, value, false);
    }

    pub fn record_fd(&mut self, name: &str, anchor: &str, value: f64) {
        self.push(name, anchor, value, true);
    }

    pub fn push(&mut self, name: &str, anchor: &str, value: f64, finite_difference: bool) {
        let value = if value.is_nan() { f64::INFINITY } else { value };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => {
                e.value = e.value.max(value);
                e.finite_difference |= finite_difference;
            }
            None => self.entries.push(Residual { name: name.into(), anchor: anchor.into(), value, finite_difference }),
        }
    }

    pub fn merge(&mut self, other: &Residuals) {
        for e in &other.entries {
            self.push(&e.name, &e.anchor, e.value, e.finite_difference);
        }
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.value).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Residual> {
        self.entries.iter().max_by(|a, b| a.value.total_cmp(&b.value))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.value)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
