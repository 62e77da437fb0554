//! Recorded time series: named scalar columns plus optional state snapshots.

use crate::error::{KdvfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Nodal samples of the PDE state.
    pub w: Vec<f64>,
    /// Integrator state, zero when the run has none.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub meta: Vec<(String, String)>,
    /// Time of blow-up when the run stopped early.
    pub blow_up: Option<f64>,
}

impl TimeSeries {
    pub fn new(columns: &[&str]) -> Self {
        TimeSeries {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            snapshots: Vec::new(),
            meta: Vec::new(),
            blow_up: None,
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let k = self
            .column_index(name)
            .ok_or_else(|| KdvfError::Precondition(format!("no column named {name}")))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.column("t").unwrap_or_default()
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        let k = self.column_index(name)?;
        self.rows.last().map(|r| r[k])
    }

    pub fn add_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    /// Turns a flagged early stop into an error.
    pub fn into_result(self) -> Result<TimeSeries> {
        match self.blow_up {
            Some(t) => Err(KdvfError::BlowUp { t }),
            None => Ok(self),
        }
    }
}
