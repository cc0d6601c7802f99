//! Record-level datasets of materialized study variables.
//!
//! A [`Dataset`] holds `n` rows over the study variables; each entry is
//! either an observed level index or missing (the materialized placeholder).
//! Missingness patterns are derived from the placeholders, never stored.

use crate::error::{Error, Result};
use crate::observed::ObservedTable;
use crate::space::Space;
use crate::table::ProbTable;

/// A sample of materialized records over a study-variable space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    space: Space,
    records: Vec<Vec<Option<usize>>>,
}

impl Dataset {
    /// Validates that every record has one entry per variable and that all
    /// observed level indices are in range.
    pub fn new(space: Space, records: Vec<Vec<Option<usize>>>) -> Result<Dataset> {
        for (i, rec) in records.iter().enumerate() {
            if rec.len() != space.n_vars() {
                return Err(Error::InvalidData(format!(
                    "record {i} has {} entries, expected {}",
                    rec.len(),
                    space.n_vars()
                )));
            }
            for (v, entry) in rec.iter().enumerate() {
                if let Some(level) = entry {
                    if *level >= space.var(v).n_levels() {
                        return Err(Error::InvalidData(format!(
                            "record {i}: level index {level} out of range for variable `{}`",
                            space.var(v).name()
                        )));
                    }
                }
            }
        }
        Ok(Dataset { space, records })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn records(&self) -> &[Vec<Option<usize>>] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fraction of records missing the named variable.
    pub fn missing_fraction(&self, name: &str) -> Result<f64> {
        let pos = self.space.positions_of(&[name.to_string()])?[0];
        if self.records.is_empty() {
            return Ok(0.0);
        }
        let miss = self.records.iter().filter(|r| r[pos].is_none()).count();
        Ok(miss as f64 / self.records.len() as f64)
    }

    /// Per-variable missingness fractions, in space order.
    pub fn missing_fractions(&self) -> Vec<(String, f64)> {
        self.space
            .vars()
            .iter()
            .map(|v| {
                (
                    v.name().to_string(),
                    self.missing_fraction(v.name()).unwrap(),
                )
            })
            .collect()
    }

    /// Observed-data empirical frequencies of one variable (uniform when the
    /// variable is never observed).
    pub fn empirical_frequencies(&self, position: usize) -> Vec<f64> {
        let k = self.space.var(position).n_levels();
        let mut counts = vec![0.0f64; k];
        for rec in &self.records {
            if let Some(level) = rec[position] {
                counts[level] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            vec![1.0 / k as f64; k]
        } else {
            counts.iter().map(|c| c / total).collect()
        }
    }

    /// Empirical observed-data distribution as an [`ObservedTable`], with the
    /// listed variables treated as subject to missingness. Records may be
    /// missing only in those variables.
    pub fn empirical_observed(&self, flagged: &[String]) -> Result<ObservedTable> {
        if self.records.is_empty() {
            return Err(Error::InvalidData(
                "cannot form an observed table from an empty dataset".into(),
            ));
        }
        let positions = self.space.positions_of(flagged)?;
        let mut vars = Vec::new();
        for (i, v) in self.space.vars().iter().enumerate() {
            if positions.contains(&i) {
                vars.push(v.materialized());
            } else {
                vars.push(v.clone());
            }
        }
        let mat_space = Space::new(vars)?;
        let mut counts = vec![0.0f64; mat_space.n_cells()];
        let mut assignment = vec![0usize; self.space.n_vars()];
        for (i, rec) in self.records.iter().enumerate() {
            for (v, entry) in rec.iter().enumerate() {
                assignment[v] = match entry {
                    Some(level) => *level,
                    None => {
                        if !positions.contains(&v) {
                            return Err(Error::InvalidData(format!(
                                "record {i} is missing variable `{}`, which is not \
                                 declared subject to missingness",
                                self.space.var(v).name()
                            )));
                        }
                        mat_space.var(v).star_index()
                    }
                };
            }
            counts[mat_space.index_of(&assignment)] += 1.0;
        }
        ObservedTable::from_materialized(&ProbTable::from_weights(mat_space, counts)?)
    }
}
