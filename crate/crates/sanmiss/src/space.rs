//! Finite categorical spaces and the cell-index bijection.
//!
//! A [`Space`] is an ordered list of named variables, each with at least two
//! named levels. A *cell* is a joint level assignment, one level index per
//! variable. Cells map to flat indices in row-major order with the first
//! declared variable varying slowest:
//!
//! ```text
//! index = ((i_1 * n_2 + i_2) * n_3 + i_3) * ... , cell = (i_1, ..., i_k)
//! ```
//!
//! This bijection is part of the public contract: every dense array in the
//! crate (table masses, coefficient tables, CSV/JSON payloads) is laid out in
//! this order relative to its declared variables.
//!
//! [`VariableSpace`] adds the role partition used by the missing-data
//! machinery: a Y block of study variables subject to nonresponse modelling
//! and an X block of remaining covariates.
//!
//! The level label `*` is reserved for materialized (missing) values and
//! `NA` is reserved as the file-format missingness sentinel; neither may be
//! declared as an ordinary level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on dense table size; spaces beyond this are rejected.
pub const MAX_CELLS: usize = 1_000_000;

/// Reserved level label for a materialized missing value.
pub const STAR: &str = "*";

/// Reserved sentinel for missing cells in datasets.
pub const NA: &str = "NA";

/// A named categorical variable with ordered levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    name: String,
    levels: Vec<String>,
}

impl Variable {
    pub fn new(name: impl Into<String>, levels: &[&str]) -> Result<Self> {
        Self::from_labels(
            name.into(),
            levels.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn from_labels(name: String, levels: Vec<String>) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::InvalidSpace("variable name is empty".into()));
        }
        if levels.len() < 2 {
            return Err(Error::InvalidSpace(format!(
                "variable `{name}` has {} level(s); at least 2 are required",
                levels.len()
            )));
        }
        for (i, a) in levels.iter().enumerate() {
            if a == STAR || a == NA {
                return Err(Error::InvalidSpace(format!(
                    "variable `{name}` declares reserved level `{a}`"
                )));
            }
            if levels[..i].contains(a) {
                return Err(Error::InvalidSpace(format!(
                    "variable `{name}` declares duplicate level `{a}`"
                )));
            }
        }
        Ok(Variable { name, levels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    /// The materialized version of this variable: original levels plus `*`.
    pub fn materialized(&self) -> Variable {
        debug_assert!(!self.is_materialized());
        let mut levels = self.levels.clone();
        levels.push(STAR.to_string());
        Variable {
            name: self.name.clone(),
            levels,
        }
    }

    /// Whether this variable carries the reserved `*` level.
    pub fn is_materialized(&self) -> bool {
        self.levels.last().map(String::as_str) == Some(STAR)
    }

    /// Index of the `*` level; only meaningful when materialized.
    pub fn star_index(&self) -> usize {
        self.levels.len() - 1
    }

    /// The raw version of a materialized variable (drops the `*` level).
    pub fn unmaterialized(&self) -> Variable {
        debug_assert!(self.is_materialized());
        Variable {
            name: self.name.clone(),
            levels: self.levels[..self.levels.len() - 1].to_vec(),
        }
    }
}

/// An ordered list of variables with the row-major cell-index bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Space {
    vars: Vec<Variable>,
}

impl Space {
    /// Builds a space, checking name uniqueness and the dense-table cap.
    /// A space over zero variables is valid and has exactly one cell.
    pub fn new(vars: Vec<Variable>) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|u| u.name == v.name) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate variable name `{}`",
                    v.name
                )));
            }
        }
        let mut cells: usize = 1;
        for v in &vars {
            cells = cells.checked_mul(v.n_levels()).unwrap_or(usize::MAX);
            if cells > MAX_CELLS {
                return Err(Error::TableTooLarge {
                    cells,
                    cap: MAX_CELLS,
                });
            }
        }
        Ok(Space { vars })
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn var(&self, i: usize) -> &Variable {
        &self.vars[i]
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn var_by_name(&self, name: &str) -> Result<&Variable> {
        self.var_index(name)
            .map(|i| &self.vars[i])
            .ok_or_else(|| Error::InvalidSpace(format!("unknown variable `{name}`")))
    }

    pub fn n_cells(&self) -> usize {
        self.vars.iter().map(Variable::n_levels).product()
    }

    /// Row-major strides: `strides[i]` is the index step for variable `i`.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.vars[i + 1].n_levels();
        }
        strides
    }

    /// Flat index of a cell (one level index per variable).
    pub fn index_of(&self, cell: &[usize]) -> usize {
        debug_assert_eq!(cell.len(), self.vars.len());
        let mut idx = 0;
        for (i, v) in self.vars.iter().enumerate() {
            debug_assert!(cell[i] < v.n_levels());
            idx = idx * v.n_levels() + cell[i];
        }
        idx
    }

    /// Cell (level indices) for a flat index; inverse of [`Space::index_of`].
    pub fn cell_of(&self, index: usize) -> Vec<usize> {
        debug_assert!(index < self.n_cells());
        let mut cell = vec![0usize; self.vars.len()];
        let mut rem = index;
        for i in (0..self.vars.len()).rev() {
            let n = self.vars[i].n_levels();
            cell[i] = rem % n;
            rem /= n;
        }
        cell
    }

    /// Iterates all cells in index order.
    pub fn cells(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.n_cells()).map(|i| self.cell_of(i))
    }

    /// Level labels for a cell, in variable order.
    pub fn labels_of(&self, cell: &[usize]) -> Vec<&str> {
        cell.iter()
            .zip(&self.vars)
            .map(|(&l, v)| v.levels[l].as_str())
            .collect()
    }

    /// Positions of the named variables, in the order given.
    /// Errors on unknown names or duplicates.
    pub fn positions_of(&self, names: &[String]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(names.len());
        for n in names {
            let i = self
                .var_index(n)
                .ok_or_else(|| Error::InvalidSpace(format!("unknown variable `{n}`")))?;
            if out.contains(&i) {
                return Err(Error::InvalidSpace(format!("variable `{n}` listed twice")));
            }
            out.push(i);
        }
        Ok(out)
    }

    /// The sub-space over the given variable positions (in the order given).
    pub fn select(&self, positions: &[usize]) -> Space {
        Space {
            vars: positions.iter().map(|&i| self.vars[i].clone()).collect(),
        }
    }

    /// Replaces the variable at `position` with `var`, keeping the rest.
    pub fn with_var_replaced(&self, position: usize, var: Variable) -> Space {
        let mut vars = self.vars.clone();
        vars[position] = var;
        Space { vars }
    }

    /// Space with the variable at `position` removed.
    pub fn without_var(&self, position: usize) -> Space {
        let mut vars = self.vars.clone();
        vars.remove(position);
        Space { vars }
    }
}

/// A space with its role partition: a Y block of study variables subject to
/// nonresponse modelling and an X block of remaining covariates.
///
/// The Y block must be a subsequence of the declared variable order, so a
/// single row-major bijection serves both the full space and the Y marginal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpace {
    space: Space,
    y_positions: Vec<usize>,
}

/// Builds a [`VariableSpace`] from `(name, levels)` declarations and the
/// names forming the Y block.
pub fn build_space(
    declarations: &[(&str, &[&str])],
    y_block: &[&str],
) -> Result<VariableSpace> {
    let vars = declarations
        .iter()
        .map(|(name, levels)| Variable::new(*name, levels))
        .collect::<Result<Vec<_>>>()?;
    let space = Space::new(vars)?;
    VariableSpace::new(space, &y_block.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

impl VariableSpace {
    pub fn new(space: Space, y_block: &[String]) -> Result<Self> {
        if y_block.is_empty() {
            return Err(Error::InvalidSpace("the Y block is empty".into()));
        }
        let y_positions = space.positions_of(y_block)?;
        if y_positions.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSpace(
                "the Y block must be listed in declared variable order".into(),
            ));
        }
        Ok(VariableSpace { space, y_positions })
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Positions of the Y-block variables within the declared order.
    pub fn y_positions(&self) -> &[usize] {
        &self.y_positions
    }

    /// Positions of the X-block variables within the declared order.
    pub fn x_positions(&self) -> Vec<usize> {
        (0..self.space.n_vars())
            .filter(|i| !self.y_positions.contains(i))
            .collect()
    }

    pub fn y_vars(&self) -> Vec<&Variable> {
        self.y_positions.iter().map(|&i| self.space.var(i)).collect()
    }

    pub fn x_vars(&self) -> Vec<&Variable> {
        self.x_positions()
            .into_iter()
            .map(|i| self.space.var(i))
            .collect()
    }

    /// The sub-space over the Y block, in declared order.
    pub fn y_space(&self) -> Space {
        self.space.select(&self.y_positions)
    }

    /// The sub-space over the X block, in declared order.
    pub fn x_space(&self) -> Space {
        self.space.select(&self.x_positions())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_bijection_round_trips() {
        let space = Space::new(vec![
            Variable::new("a", &["0", "1"]).unwrap(),
            Variable::new("b", &["x", "y", "z"]).unwrap(),
        ])
        .unwrap();
        assert_eq!(space.n_cells(), 6);
        for idx in 0..6 {
            let cell = space.cell_of(idx);
            assert_eq!(space.index_of(&cell), idx);
        }
        // row-major with the first variable slowest
        assert_eq!(space.index_of(&[1, 2]), 5);
        assert_eq!(space.index_of(&[0, 2]), 2);
        assert_eq!(space.cell_of(3), vec![1, 0]);
        assert_eq!(space.strides(), vec![3, 1]);
    }

    #[test]
    fn empty_space_has_one_cell() {
        let space = Space::new(vec![]).unwrap();
        assert_eq!(space.n_cells(), 1);
        assert_eq!(space.index_of(&[]), 0);
        assert_eq!(space.cell_of(0), Vec::<usize>::new());
    }

    #[test]
    fn validation_rejects_bad_declarations() {
        assert!(Variable::new("a", &["only"]).is_err());
        assert!(Variable::new("a", &["x", "x"]).is_err());
        assert!(Variable::new("a", &["x", "*"]).is_err());
        assert!(Variable::new("a", &["x", "NA"]).is_err());
        let v = Variable::new("a", &["0", "1"]).unwrap();
        let w = Variable::new("a", &["2", "3"]).unwrap();
        assert!(Space::new(vec![v, w]).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        // 101 * 100^3 > 1e6
        let vars = (0..4)
            .map(|i| {
                let levels: Vec<String> = (0..if i == 0 { 101 } else { 100 })
                    .map(|l| format!("l{l}"))
                    .collect();
                Variable::from_labels(format!("v{i}"), levels).unwrap()
            })
            .collect();
        match Space::new(vars) {
            Err(Error::TableTooLarge { .. }) => {}
            other => panic!("expected TableTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn materialization_round_trips() {
        let v = Variable::new("age", &["young", "old"]).unwrap();
        let m = v.materialized();
        assert!(m.is_materialized());
        assert_eq!(m.n_levels(), 3);
        assert_eq!(m.star_index(), 2);
        assert_eq!(m.unmaterialized(), v);
    }

    #[test]
    fn variable_space_roles() {
        let vs = build_space(
            &[
                ("x", &["no", "yes"]),
                ("age", &["20-34", "35-49", "50-64", "65+"]),
                ("race", &["black", "white", "other"]),
            ],
            &["age", "race"],
        )
        .unwrap();
        assert_eq!(vs.y_positions(), &[1, 2]);
        assert_eq!(vs.x_positions(), vec![0]);
        assert_eq!(vs.y_space().n_cells(), 12);
        assert_eq!(vs.x_space().n_cells(), 2);
        // Y block out of declared order is rejected
        assert!(build_space(
            &[("x", &["no", "yes"]), ("a", &["0", "1"]), ("b", &["0", "1"])],
            &["b", "a"],
        )
        .is_err());
    }
}
