//! Dense probability tables over finite categorical spaces.
//!
//! [`ProbTable`] stores one nonnegative mass per cell in the row-major order
//! defined by its [`Space`]. Construction normalizes and validates; every
//! algebraic operation (marginalization, conditioning, moments) accumulates
//! with compensated summation so that results are insensitive to the grouping
//! of additions. In particular marginalizing to `A` and then to `B ⊆ A`
//! produces the same array as marginalizing directly to `B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Space;

/// Tolerance for accepting an input vector as already normalized.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Compensated (Kahan-Babuska-Neumaier) accumulator.
///
/// Keeps a running error term so sums of up to `MAX_CELLS` doubles are
/// accurate to a few units in the last place of the exact result regardless
/// of the order or grouping of additions.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StableSum {
    hi: f64,
    lo: f64,
}

impl StableSum {
    pub fn new() -> Self {
        StableSum::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Sums a slice with compensated accumulation.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = StableSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Maps flat indices of a space onto flat indices of a sub-space over a
/// subset of its variables (subset listed in table order).
#[derive(Debug, Clone)]
pub(crate) struct CellProjector {
    // (full-space stride, level count, sub-space stride) per kept variable
    terms: Vec<(usize, usize, usize)>,
}

impl CellProjector {
    pub fn new(space: &Space, kept_positions: &[usize]) -> Self {
        let full_strides = space.strides();
        let mut sub_stride = 1usize;
        let mut terms: Vec<(usize, usize, usize)> = kept_positions
            .iter()
            .rev()
            .map(|&p| {
                let t = (full_strides[p], space.var(p).n_levels(), sub_stride);
                sub_stride *= space.var(p).n_levels();
                t
            })
            .collect();
        terms.reverse();
        CellProjector { terms }
    }

    #[inline]
    pub fn project(&self, full_index: usize) -> usize {
        self.terms
            .iter()
            .map(|&(stride, n, sub)| (full_index / stride % n) * sub)
            .sum()
    }
}

/// A normalized probability table: nonnegative masses summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbTable {
    space: Space,
    mass: Vec<f64>,
}

impl ProbTable {
    /// Builds a table from arbitrary nonnegative weights, normalizing by
    /// their exact total. Zero-mass cells are legal; a zero total is not.
    pub fn from_weights(space: Space, weights: Vec<f64>) -> Result<Self> {
        Self::check_shape(&space, &weights)?;
        let total = stable_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(Error::InvalidTable("total mass is zero".into()));
        }
        let mass = weights.into_iter().map(|w| w / total).collect();
        Ok(ProbTable { space, mass })
    }

    /// Builds a table from masses that must already sum to one within
    /// [`NORMALIZATION_TOL`]; they are then renormalized exactly.
    pub fn from_probabilities(space: Space, probs: Vec<f64>) -> Result<Self> {
        Self::check_shape(&space, &probs)?;
        let total = stable_sum(probs.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidTable(format!(
                "masses sum to {total:.17}, outside 1 +/- {NORMALIZATION_TOL:.0e}"
            )));
        }
        Self::from_weights(space, probs)
    }

    /// The uniform distribution on `space`.
    pub fn uniform(space: Space) -> Self {
        let n = space.n_cells();
        ProbTable {
            space,
            mass: vec![1.0 / n as f64; n],
        }
    }

    fn check_shape(space: &Space, weights: &[f64]) -> Result<()> {
        if weights.len() != space.n_cells() {
            return Err(Error::InvalidTable(format!(
                "expected {} masses for the declared space, got {}",
                space.n_cells(),
                weights.len()
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidTable(format!(
                    "mass {w} at cell {i} is negative or not finite"
                )));
            }
        }
        Ok(())
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn prob_at(&self, index: usize) -> f64 {
        self.mass[index]
    }

    pub fn prob(&self, cell: &[usize]) -> f64 {
        self.mass[self.space.index_of(cell)]
    }

    /// Total mass; 1 up to accumulated rounding.
    pub fn total(&self) -> f64 {
        stable_sum(self.mass.iter().copied())
    }

    /// Positions of `names` within this table's space, validated to be in
    /// table order so the result's bijection is predictable.
    fn ordered_positions(&self, names: &[String]) -> Result<Vec<usize>> {
        let positions = self.space.positions_of(names)?;
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTable(
                "variables must be listed in table order".into(),
            ));
        }
        Ok(positions)
    }

    /// Marginal over the named variables (which must appear in table order).
    pub fn marginalize(&self, keep: &[&str]) -> Result<ProbTable> {
        let names: Vec<String> = keep.iter().map(|s| s.to_string()).collect();
        let positions = self.ordered_positions(&names)?;
        Ok(self.marginalize_positions(&positions))
    }

    /// Marginal over variables at the given ascending positions.
    pub(crate) fn marginalize_positions(&self, positions: &[usize]) -> ProbTable {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let sub = self.space.select(positions);
        let projector = CellProjector::new(&self.space, positions);
        let mut acc = vec![StableSum::new(); sub.n_cells()];
        for (idx, &m) in self.mass.iter().enumerate() {
            acc[projector.project(idx)].add(m);
        }
        ProbTable {
            space: sub,
            mass: acc.into_iter().map(StableSum::value).collect(),
        }
    }

    /// Conditions on `assignment` (variable name, level label), returning the
    /// conditional table over the remaining variables and the probability of
    /// the conditioning event. Errors if that probability is zero.
    pub fn condition(&self, assignment: &[(&str, &str)]) -> Result<(ProbTable, f64)> {
        let mut fixed = Vec::with_capacity(assignment.len());
        for (name, label) in assignment {
            let p = self
                .space
                .var_index(name)
                .ok_or_else(|| Error::InvalidSpace(format!("unknown variable `{name}`")))?;
            let l = self.space.var(p).level_index(label).ok_or_else(|| {
                Error::InvalidSpace(format!("variable `{name}` has no level `{label}`"))
            })?;
            if fixed.iter().any(|&(q, _)| q == p) {
                return Err(Error::InvalidTable(format!(
                    "variable `{name}` assigned twice in conditioning event"
                )));
            }
            fixed.push((p, l));
        }
        self.condition_positions(&fixed)
    }

    /// Conditioning by (variable position, level index) pairs.
    pub(crate) fn condition_positions(
        &self,
        fixed: &[(usize, usize)],
    ) -> Result<(ProbTable, f64)> {
        let keep: Vec<usize> = (0..self.space.n_vars())
            .filter(|i| !fixed.iter().any(|&(p, _)| p == *i))
            .collect();
        let sub = self.space.select(&keep);
        let strides = self.space.strides();
        let base: usize = fixed.iter().map(|&(p, l)| strides[p] * l).sum();
        let sub_strides = sub.strides();
        let mut mass = vec![0.0; sub.n_cells()];
        let mut total = StableSum::new();
        for sub_idx in 0..sub.n_cells() {
            let mut full_idx = base;
            for (k, &p) in keep.iter().enumerate() {
                full_idx += sub_idx / sub_strides[k] % self.space.var(p).n_levels() * strides[p];
            }
            mass[sub_idx] = self.mass[full_idx];
            total.add(self.mass[full_idx]);
        }
        let prob = total.value();
        if prob <= 0.0 {
            let desc: Vec<String> = fixed
                .iter()
                .map(|&(p, l)| {
                    format!("{}={}", self.space.var(p).name(), self.space.var(p).levels()[l])
                })
                .collect();
            return Err(Error::NullConditioning(desc.join(", ")));
        }
        for m in &mut mass {
            *m /= prob;
        }
        Ok((ProbTable { space: sub, mass }, prob))
    }

    /// Expectation of a moment function under this table.
    pub fn moment(&self, constraint: &MomentConstraint) -> Result<f64> {
        let values = constraint.dense_on(&self.space)?;
        let mut acc = StableSum::new();
        for (idx, &m) in self.mass.iter().enumerate() {
            acc.add(values[idx] * m);
        }
        Ok(acc.value())
    }

    /// Reorders the table's axes to the given permutation of its variables.
    pub fn reorder(&self, names: &[String]) -> Result<ProbTable> {
        let perm = self.space.positions_of(names)?;
        if perm.len() != self.space.n_vars() {
            return Err(Error::InvalidTable(
                "reorder requires a full permutation of the table's variables".into(),
            ));
        }
        let new_space = self.space.select(&perm);
        let mut mass = vec![0.0; self.mass.len()];
        for (new_idx, new_cell) in new_space.cells().enumerate() {
            let mut old_cell = vec![0usize; perm.len()];
            for (k, &p) in perm.iter().enumerate() {
                old_cell[p] = new_cell[k];
            }
            mass[new_idx] = self.mass[self.space.index_of(&old_cell)];
        }
        Ok(ProbTable {
            space: new_space,
            mass,
        })
    }

    /// Supremum-norm distance between two tables over the same space.
    pub fn sup_distance(&self, other: &ProbTable) -> Result<f64> {
        if self.space != other.space {
            return Err(Error::InvalidTable(
                "sup_distance requires tables over the same space".into(),
            ));
        }
        Ok(self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Internal constructor for masses already known to be valid.
    pub(crate) fn from_normalized_unchecked(space: Space, mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), space.n_cells());
        debug_assert!(
            (stable_sum(mass.iter().copied()) - 1.0).abs() <= 1e-9,
            "unchecked table mass drifted: {}",
            stable_sum(mass.iter().copied())
        );
        ProbTable { space, mass }
    }
}

/// A linear moment constraint `E[u(Z_scope)] = target`.
///
/// `values` is the dense table of `u` over the scope's cells, row-major in
/// scope order; the scope must be a subset of the target table's variables,
/// listed in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConstraint {
    pub name: String,
    pub scope: Vec<String>,
    pub values: Vec<f64>,
    pub target: f64,
}

impl MomentConstraint {
    pub fn new(
        name: impl Into<String>,
        scope: Vec<String>,
        values: Vec<f64>,
        target: f64,
    ) -> Result<Self> {
        let name = name.into();
        if values.iter().any(|v| !v.is_finite()) || !target.is_finite() {
            return Err(Error::InvalidConstraint {
                name,
                detail: "values and target must be finite".into(),
            });
        }
        Ok(MomentConstraint {
            name,
            scope,
            values,
            target,
        })
    }

    /// The indicator constraint `P(scope cell = cell) = target`.
    pub fn indicator(
        name: impl Into<String>,
        scope_space: &Space,
        scope: Vec<String>,
        cell_index: usize,
        target: f64,
    ) -> Self {
        let mut values = vec![0.0; scope_space.n_cells()];
        values[cell_index] = 1.0;
        MomentConstraint {
            name: name.into(),
            scope,
            values,
            target,
        }
    }

    /// Expands `values` to a dense vector over the cells of `space`.
    pub fn dense_on(&self, space: &Space) -> Result<Vec<f64>> {
        let positions = space.positions_of(&self.scope).map_err(|_| {
            Error::InvalidConstraint {
                name: self.name.clone(),
                detail: format!(
                    "scope [{}] is not a subset of the table's variables",
                    self.scope.join(", ")
                ),
            }
        })?;
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConstraint {
                name: self.name.clone(),
                detail: "scope must be listed in table order".into(),
            });
        }
        let scope_space = space.select(&positions);
        if self.values.len() != scope_space.n_cells() {
            return Err(Error::InvalidConstraint {
                name: self.name.clone(),
                detail: format!(
                    "expected {} values over the scope, got {}",
                    scope_space.n_cells(),
                    self.values.len()
                ),
            });
        }
        let projector = CellProjector::new(space, &positions);
        Ok((0..space.n_cells())
            .map(|idx| self.values[projector.project(idx)])
            .collect())
    }

    /// Whether `u` is constant across the cells of the scope.
    pub fn is_constant(&self) -> bool {
        self.values
            .windows(2)
            .all(|w| (w[0] - w[1]).abs() <= f64::EPSILON * w[0].abs().max(w[1].abs()).max(1.0))
    }
}
