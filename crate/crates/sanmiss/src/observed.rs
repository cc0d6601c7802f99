//! Observed-data distributions under missingness.
//!
//! A full-data table over `(X, Y, M)` induces, for each missingness pattern,
//! the joint mass of that pattern and the distribution of the values actually
//! seen. [`materialize`] performs that reduction; [`ObservedTable`] stores the
//! result either as per-pattern slices or, equivalently, as a single table
//! over *materialized* cells in which each missing value is replaced by the
//! reserved level `*`.
//!
//! Indicator variables follow the naming convention `M:<variable>` with
//! levels `0` (observed) and `1` (missing); [`crate::san::assemble_full_data`]
//! produces tables in exactly this form.

use crate::error::{Error, Result};
use crate::space::{Space, VariableSpace, Variable};
use crate::table::{ProbTable, StableSum};

/// Prefix for missingness-indicator variable names.
pub const INDICATOR_PREFIX: &str = "M:";

/// Indicator variable for missingness of `name`: levels `0` then `1`.
pub fn indicator_variable(name: &str) -> Variable {
    Variable::new(format!("{INDICATOR_PREFIX}{name}"), &["0", "1"])
        .expect("indicator variables are always valid")
}

/// A missingness pattern split by role: `w` flags missing X-block variables,
/// `m` flags missing Y-block variables, both in declared block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingnessPattern {
    pub w: Vec<bool>,
    pub m: Vec<bool>,
}

impl MissingnessPattern {
    /// Number of missing entries in the pattern.
    pub fn n_missing(&self) -> usize {
        self.w.iter().chain(self.m.iter()).filter(|&&b| b).count()
    }
}

/// One missingness pattern of an [`ObservedTable`]: its joint probability and
/// the conditional distribution of the observed entries.
#[derive(Debug, Clone)]
pub struct PatternEntry {
    /// Missing flags over the flagged variables, in flagged order.
    pub missing: Vec<bool>,
    /// Joint probability of the pattern.
    pub weight: f64,
    /// Conditional table over the observed variables (study variables minus
    /// those flagged missing), in declared order.
    pub table: ProbTable,
}

/// The observed-data distribution over materialized cells.
#[derive(Debug, Clone)]
pub struct ObservedTable {
    /// Study-variable space (no indicators, no `*` levels).
    space: Space,
    /// Positions (within `space`) of variables subject to missingness.
    flagged: Vec<usize>,
    /// Patterns with positive probability, ordered by pattern index
    /// (row-major over the flagged variables, observed-first).
    patterns: Vec<PatternEntry>,
}

impl ObservedTable {
    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Positions of the flagged variables within the study space.
    pub fn flagged_positions(&self) -> &[usize] {
        &self.flagged
    }

    pub fn flagged_names(&self) -> Vec<&str> {
        self.flagged.iter().map(|&p| self.space.var(p).name()).collect()
    }

    pub fn patterns(&self) -> &[PatternEntry] {
        &self.patterns
    }

    /// Marginal probability that the given variable is missing.
    pub fn missing_fraction(&self, name: &str) -> Result<f64> {
        let k = self
            .flagged
            .iter()
            .position(|&p| self.space.var(p).name() == name);
        match k {
            None => {
                self.space.var_by_name(name)?;
                Ok(0.0)
            }
            Some(k) => {
                let mut acc = StableSum::new();
                for e in &self.patterns {
                    if e.missing[k] {
                        acc.add(e.weight);
                    }
                }
                Ok(acc.value())
            }
        }
    }

    /// Splits a pattern's flags by role, given the space's block structure.
    pub fn role_pattern(&self, entry: &PatternEntry, vspace: &VariableSpace) -> MissingnessPattern {
        let flag_of = |pos: usize| -> bool {
            self.flagged
                .iter()
                .position(|&p| p == pos)
                .map(|k| entry.missing[k])
                .unwrap_or(false)
        };
        MissingnessPattern {
            w: vspace.x_positions().iter().map(|&p| flag_of(p)).collect(),
            m: vspace.y_positions().iter().map(|&p| flag_of(p)).collect(),
        }
    }

    /// The materialized space: flagged variables carry the extra `*` level.
    pub fn materialized_space(&self) -> Space {
        let mut sp = self.space.clone();
        for &p in &self.flagged {
            sp = sp.with_var_replaced(p, sp.var(p).materialized());
        }
        sp
    }

    /// The single-table form over materialized cells.
    pub fn to_materialized(&self) -> ProbTable {
        let msp = self.materialized_space();
        let strides = msp.strides();
        let mut mass = vec![0.0; msp.n_cells()];
        for entry in &self.patterns {
            let observed: Vec<usize> = (0..self.space.n_vars())
                .filter(|i| {
                    self.flagged
                        .iter()
                        .position(|&p| p == *i)
                        .map(|k| !entry.missing[k])
                        .unwrap_or(true)
                })
                .collect();
            let base: usize = self
                .flagged
                .iter()
                .zip(&entry.missing)
                .filter(|&(_, &miss)| miss)
                .map(|(&p, _)| strides[p] * msp.var(p).star_index())
                .sum();
            let sub = entry.table.space();
            let sub_strides = sub.strides();
            for (sub_idx, &m) in entry.table.mass().iter().enumerate() {
                let mut idx = base;
                for (k, &p) in observed.iter().enumerate() {
                    idx += sub_idx / sub_strides[k] % sub.var(k).n_levels() * strides[p];
                }
                mass[idx] = entry.weight * m;
            }
        }
        ProbTable::from_normalized_unchecked(msp, mass)
    }

    /// Rebuilds the pattern form from a table over materialized cells.
    /// Variables whose last level is `*` are taken as flagged.
    pub fn from_materialized(table: &ProbTable) -> Result<ObservedTable> {
        let msp = table.space();
        let flagged: Vec<usize> = (0..msp.n_vars())
            .filter(|&i| msp.var(i).is_materialized())
            .collect();
        if flagged.is_empty() {
            return Err(Error::InvalidTable(
                "no materialized variables found (no `*` levels)".into(),
            ));
        }
        let mut space = msp.clone();
        for &p in &flagged {
            space = space.with_var_replaced(p, space.var(p).unmaterialized());
        }

        let strides = msp.strides();
        let mut patterns = Vec::new();
        for bits in 0..(1usize << flagged.len()) {
            let missing: Vec<bool> = (0..flagged.len()).map(|k| bits >> k & 1 == 1).collect();
            let observed: Vec<usize> = (0..space.n_vars())
                .filter(|i| {
                    flagged
                        .iter()
                        .position(|&p| p == *i)
                        .map(|k| !missing[k])
                        .unwrap_or(true)
                })
                .collect();
            let sub = space.select(&observed);
            let sub_strides = sub.strides();
            let base: usize = flagged
                .iter()
                .zip(&missing)
                .filter(|&(_, &miss)| miss)
                .map(|(&p, _)| strides[p] * msp.var(p).star_index())
                .sum();
            let mut weights = vec![0.0; sub.n_cells()];
            let mut total = StableSum::new();
            for (sub_idx, w) in weights.iter_mut().enumerate() {
                let mut idx = base;
                for (k, &p) in observed.iter().enumerate() {
                    idx += sub_idx / sub_strides[k] % sub.var(k).n_levels() * strides[p];
                }
                *w = table.mass()[idx];
                total.add(*w);
            }
            let weight = total.value();
            if weight > 0.0 {
                patterns.push(PatternEntry {
                    missing,
                    weight,
                    table: ProbTable::from_weights(sub, weights)?,
                });
            }
        }
        // Any residual mass would sit on cells where a raw level coexists
        // with `*` on the same variable; the loop above covers all cells, so
        // the weights partition the table exactly.
        Ok(ObservedTable {
            space,
            flagged,
            patterns,
        })
    }

    /// Total mass across patterns; 1 up to accumulated rounding.
    pub fn total(&self) -> f64 {
        let mut acc = StableSum::new();
        for e in &self.patterns {
            acc.add(e.weight);
        }
        acc.value()
    }
}

/// Reduces a full-data table over study variables and `M:`-indicators to the
/// observed-data distribution: for each pattern, flagged-missing variables
/// are summed out. Total mass is preserved exactly.
pub fn materialize(full: &ProbTable) -> Result<ObservedTable> {
    let table = materialize_table(full)?;
    ObservedTable::from_materialized(&table)
}

/// The single-table form of [`materialize`]: a table over materialized cells.
pub fn materialize_table(full: &ProbTable) -> Result<ProbTable> {
    let fsp = full.space();
    // indicator position -> flagged study variable position
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..fsp.n_vars() {
        let name = fsp.var(i).name();
        if let Some(target) = name.strip_prefix(INDICATOR_PREFIX) {
            let p = fsp.var_index(target).ok_or_else(|| {
                Error::InvalidTable(format!(
                    "indicator `{name}` has no matching variable `{target}`"
                ))
            })?;
            if fsp.var(i).levels() != ["0".to_string(), "1".to_string()] {
                return Err(Error::InvalidTable(format!(
                    "indicator `{name}` must have levels [0, 1]"
                )));
            }
            pairs.push((i, p));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidTable(
            "full table declares no `M:` indicator variables".into(),
        ));
    }

    let study: Vec<usize> = (0..fsp.n_vars())
        .filter(|i| !pairs.iter().any(|&(ind, _)| ind == *i))
        .collect();
    let mut msp = fsp.select(&study);
    let mut flagged_in_study: Vec<usize> = Vec::new();
    for &(_, p) in &pairs {
        let pos = study
            .iter()
            .position(|&s| s == p)
            .expect("flagged variable is a study variable");
        flagged_in_study.push(pos);
        msp = msp.with_var_replaced(pos, msp.var(pos).materialized());
    }

    let mstrides = msp.strides();
    let mut acc = vec![StableSum::new(); msp.n_cells()];
    for (idx, &mass) in full.mass().iter().enumerate() {
        let cell = fsp.cell_of(idx);
        let mut midx = 0usize;
        for (k, &sp) in study.iter().enumerate() {
            let level = match flagged_in_study.iter().position(|&f| f == k) {
                Some(j) if cell[pairs[j].0] == 1 => msp.var(k).star_index(),
                _ => cell[sp],
            };
            midx += level * mstrides[k];
        }
        acc[midx].add(mass);
    }
    Ok(ProbTable::from_normalized_unchecked(
        msp,
        acc.into_iter().map(StableSum::value).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Variable;

    /// (x, y, M:y) with a constant half-half mechanism.
    fn half_mechanism_full() -> ProbTable {
        let space = Space::new(vec![
            Variable::new("x", &["0", "1"]).unwrap(),
            Variable::new("y", &["0", "1"]).unwrap(),
            indicator_variable("y"),
        ])
        .unwrap();
        let joint = [[0.28, 0.42], [0.12, 0.18]];
        let mut w = Vec::new();
        for xi in 0..2 {
            for yi in 0..2 {
                for _m in 0..2 {
                    w.push(joint[xi][yi] * 0.5);
                }
            }
        }
        ProbTable::from_probabilities(space, w).unwrap()
    }

    #[test]
    fn materialize_splits_into_patterns() {
        let obs = materialize(&half_mechanism_full()).unwrap();
        assert_eq!(obs.patterns().len(), 2);
        let observed = &obs.patterns()[0];
        assert_eq!(observed.missing, vec![false]);
        assert!((observed.weight - 0.5).abs() < 1e-15);
        assert_eq!(observed.table.space().n_vars(), 2);
        for (got, want) in observed.table.mass().iter().zip([0.28, 0.42, 0.12, 0.18]) {
            assert!((got - want).abs() < 1e-14);
        }
        let missing = &obs.patterns()[1];
        assert_eq!(missing.missing, vec![true]);
        assert!((missing.weight - 0.5).abs() < 1e-15);
        // table over x only: the X marginal
        assert_eq!(missing.table.space().n_vars(), 1);
        assert!((missing.table.mass()[0] - 0.70).abs() < 1e-14);
        assert!((missing.table.mass()[1] - 0.30).abs() < 1e-14);
        assert!((obs.total() - 1.0).abs() < 1e-12);
        assert!((obs.missing_fraction("y").unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(obs.missing_fraction("x").unwrap(), 0.0);
    }

    #[test]
    fn materialized_round_trip() {
        let obs = materialize(&half_mechanism_full()).unwrap();
        let mt = obs.to_materialized();
        assert_eq!(mt.space().var(1).n_levels(), 3);
        assert!((mt.total() - 1.0).abs() < 1e-12);
        let back = ObservedTable::from_materialized(&mt).unwrap();
        assert_eq!(back.patterns().len(), obs.patterns().len());
        for (a, b) in back.patterns().iter().zip(obs.patterns()) {
            assert_eq!(a.missing, b.missing);
            assert!((a.weight - b.weight).abs() < 1e-15);
            assert_eq!(a.table.space(), b.table.space());
            for (x, y) in a.table.mass().iter().zip(b.table.mass()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn materialize_requires_indicators() {
        let t = ProbTable::uniform(
            Space::new(vec![
                Variable::new("x", &["0", "1"]).unwrap(),
                Variable::new("y", &["0", "1"]).unwrap(),
            ])
            .unwrap(),
        );
        assert!(materialize(&t).is_err());
    }
}
