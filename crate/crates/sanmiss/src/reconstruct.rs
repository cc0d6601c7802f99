//! Identification of the full-data law from observed data plus auxiliary
//! margins.
//!
//! Given the observed-data distribution over materialized cells and auxiliary
//! marginal information on `Y` (a known joint or a set of moment targets),
//! the backward pipeline recovers the unique SAN-compatible full-data law.
//! Working over the cells of `(X, Y*_{<j}, Y_{≥j})`, step `j` does:
//!
//! * (a) split the current law at `Y*_j`: the missing slice (`y*_j = *`) has
//!   mass `π_j`, the observed slice conditions on `M_j = 0`;
//! * (b) derive the conditional targets
//!   `E[u(Y_{≥j}) | M_j = 1] = (E[u] − (1−π_j)·E[u | M_j = 0]) / π_j`
//!   for every auxiliary function `u` of `y_{≥j}`;
//! * (c) f-project the observed slice onto the fixed marginal
//!   `f(x, y*_{<j}, y_{>j} | M_j = 1)` plus those targets, with the generator
//!   built from the link and `c_j = (1 − π_j)/π_j`;
//! * (d) mix the slices back and read the mechanism off the ratio.
//!
//! A variable with `π_j = 0` is never missing: its projection is skipped and
//! its mechanism is degenerate. `π_j = 1` is a hard error, since such a
//! variable is never observed and no moment on it can repair that.

use crate::error::{Error, Result};
use crate::link::{FGenerator, Link};
use crate::observed::ObservedTable;
use crate::projection::{project, ConstraintSet, ProjectionOptions, ProjectionResult};
use crate::space::{Space, VariableSpace, STAR};
use crate::table::{MomentConstraint, ProbTable, StableSum};

/// Auxiliary marginal information about the Y block.
#[derive(Debug, Clone)]
pub enum Margins {
    /// The full joint law of the Y variables (e.g. a census table); expanded
    /// internally into cell-indicator constraints at each step.
    Joint(ProbTable),
    /// Moment constraints `E[u(Y)] = t`; each scope must be a subset of the
    /// Y block.
    Moments(Vec<MomentConstraint>),
}

impl Margins {
    /// The indicator constraints or declared moments whose scope lies inside
    /// the suffix `Y_{≥j}` (given by the positions in `suffix`), expressed as
    /// targets for the current reconstruction space.
    fn constraints_for_suffix(
        &self,
        vars: &VariableSpace,
        suffix: &[usize],
    ) -> Result<Vec<MomentConstraint>> {
        let space = vars.space();
        match self {
            Margins::Joint(joint) => {
                let keep: Vec<&str> = space
                    .vars()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| suffix.contains(i))
                    .map(|(_, v)| v.name())
                    .collect();
                let marg = joint.marginalize(&keep)?;
                let scope: Vec<String> = keep.iter().map(|s| s.to_string()).collect();
                let mut out = Vec::with_capacity(marg.space().n_cells());
                for (idx, cell) in marg.space().cells().enumerate() {
                    let mut values = vec![0.0; marg.space().n_cells()];
                    values[idx] = 1.0;
                    let labels = marg.space().labels_of(&cell).join(",");
                    out.push(MomentConstraint::new(
                        format!("margin[{labels}]"),
                        scope.clone(),
                        values,
                        marg.mass()[idx],
                    )?);
                }
                Ok(out)
            }
            Margins::Moments(list) => {
                let mut out = Vec::new();
                for m in list {
                    let positions = space.positions_of(&m.scope)?;
                    if positions.iter().all(|p| suffix.contains(p)) {
                        out.push(m.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    /// Validates the identification requirement: for every modeled variable
    /// there must be at least one auxiliary function, with scope inside that
    /// variable's suffix, that actually varies in the variable.
    pub fn validate_coverage(
        &self,
        vars: &VariableSpace,
        ordering: &[usize],
        n_modeled: usize,
    ) -> Result<()> {
        let space = vars.space();
        if let Margins::Joint(joint) = self {
            if joint.space() != &vars.y_space() {
                return Err(Error::InvalidConstraint {
                    name: "margins".into(),
                    detail: "a joint margin must be over exactly the Y variables, in \
                             declaration order"
                        .into(),
                });
            }
        }
        for j in 0..n_modeled {
            let suffix: Vec<usize> = ordering[j..].to_vec();
            let constraints = self.constraints_for_suffix(vars, &suffix)?;
            let pos = ordering[j];
            let name = space.var(pos).name();
            let covered = match self {
                Margins::Joint(_) => !constraints.is_empty(),
                Margins::Moments(_) => constraints
                    .iter()
                    .any(|m| m.scope.iter().any(|s| s.as_str() == name) && varies_in(space, m, pos)),
            };
            if !covered {
                return Err(Error::InvalidConstraint {
                    name: format!("margins for `{name}`"),
                    detail: format!(
                        "no auxiliary function with scope inside Y_(>={}) varies in `{name}`; \
                         the mechanism coefficient beta_{} is unidentified",
                        j + 1,
                        j + 1
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Whether the moment function varies in the variable at `position`.
fn varies_in(space: &Space, m: &MomentConstraint, position: usize) -> bool {
    let positions = match space.positions_of(&m.scope) {
        Ok(p) => p,
        Err(_) => return false,
    };
    let axis = match positions.iter().position(|&p| p == position) {
        Some(a) => a,
        None => return false,
    };
    let dims: Vec<usize> = positions.iter().map(|&p| space.var(p).n_levels()).collect();
    if m.values.len() != dims.iter().product::<usize>() {
        return false;
    }
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    for cell in 0..m.values.len() {
        let coord = (cell / strides[axis]) % dims[axis];
        if coord + 1 < dims[axis] {
            if (m.values[cell] - m.values[cell + strides[axis]]).abs() > 0.0 {
                return true;
            }
        }
    }
    false
}

/// Per-step diagnostics retained for auditability.
#[derive(Debug, Clone)]
pub struct StepReport {
    /// 0-based step index (the variable treated at this step).
    pub j: usize,
    pub variable: String,
    /// Marginal missingness probability `π_j` at this step.
    pub pi: f64,
    /// Number of constraints passed to the projection.
    pub n_constraints: usize,
    /// Projection diagnostics (`None` when the step was skipped, `π_j = 0`).
    pub projection: Option<ProjectionDiagnostics>,
}

/// The solver diagnostics kept from one projection call.
#[derive(Debug, Clone)]
pub struct ProjectionDiagnostics {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub marginal_residual: f64,
    pub moment_residual: f64,
    pub divergence: f64,
    pub iterations: usize,
    /// Sup gap of the additive dual characterization at the solution.
    pub decomposition_residual: f64,
}

impl ProjectionDiagnostics {
    fn from_result(res: &ProjectionResult, decomposition_residual: f64) -> ProjectionDiagnostics {
        ProjectionDiagnostics {
            alpha: res.alpha.clone(),
            beta: res.beta.clone(),
            marginal_residual: res.marginal_residual,
            moment_residual: res.moment_residual,
            divergence: res.divergence,
            iterations: res.iterations,
            decomposition_residual,
        }
    }
}

/// A mechanism conditional `g(M_j = 1 | x, y*_{<j}, y_{≥j})` as a dense table
/// over the step-`j` working space.
#[derive(Debug, Clone)]
pub struct MechanismTable {
    pub variable: String,
    /// The working space `(X, Y*_{<j}, Y_{≥j})`.
    pub space: Space,
    /// `g(M_j = 1 | cell)` per cell.
    pub prob: Vec<f64>,
}

/// Output of the reconstruction: the recovered joint, the per-step mechanism
/// conditionals, the assembled full-data table over `(X, Y, M)`, and the
/// step diagnostics.
#[derive(Debug, Clone)]
pub struct FullDataReconstruction {
    /// Recovered study-variable law `g(x, y)`.
    pub joint: ProbTable,
    /// Mechanism conditionals, one per modeled variable, in ordering.
    pub mechanisms: Vec<MechanismTable>,
    /// The assembled `g(x, y, m)` over study variables plus indicators.
    pub full: ProbTable,
    pub steps: Vec<StepReport>,
}

/// Runs the backward identification pipeline.
///
/// `observed` must be an observed table whose flagged variables are exactly
/// the modeled variables; `ordering` names them in mechanism order. The
/// always-observed Y variables named by the `VariableSpace` inside `margins`
/// constraints participate through the suffix scopes.
pub fn reconstruct_algorithm1(
    observed: &ObservedTable,
    vars: &VariableSpace,
    ordering: &[&str],
    margins: &Margins,
    link: Link,
    options: &ProjectionOptions,
) -> Result<FullDataReconstruction> {
    let space = vars.space();
    if observed.space() != space {
        return Err(Error::InvalidTable(
            "observed table is over a different study space".into(),
        ));
    }
    // ordering must list the flagged variables, then optionally the
    // always-observed Y variables
    let mut order_positions = Vec::with_capacity(ordering.len());
    for name in ordering {
        let pos = space
            .var_index(name)
            .ok_or_else(|| Error::InvalidModel(format!("unknown variable `{name}`")))?;
        if order_positions.contains(&pos) {
            return Err(Error::InvalidModel(format!(
                "variable `{name}` appears twice in the ordering"
            )));
        }
        order_positions.push(pos);
    }
    let flagged = observed.flagged_positions();
    let n_modeled = flagged.len();
    {
        let mut sorted = order_positions[..n_modeled.min(order_positions.len())].to_vec();
        sorted.sort_unstable();
        let mut flg = flagged.to_vec();
        flg.sort_unstable();
        if sorted != flg {
            return Err(Error::InvalidModel(
                "the first ordering entries must be exactly the variables with missingness"
                    .into(),
            ));
        }
    }
    for &pos in vars.y_positions() {
        if !order_positions.contains(&pos) {
            order_positions.push(pos);
        }
    }
    if order_positions.iter().any(|p| !vars.y_positions().contains(p)) {
        return Err(Error::InvalidModel(
            "the mechanism ordering may only contain Y variables".into(),
        ));
    }
    margins.validate_coverage(vars, &order_positions, n_modeled)?;

    // state: current law over (X, Y*_{<j}, Y_{≥j}); start at j = p with all
    // modeled variables materialized
    let mut state = observed.to_materialized();
    let mut steps = Vec::with_capacity(n_modeled);
    let mut mechanisms: Vec<Option<MechanismTable>> = (0..n_modeled).map(|_| None).collect();

    for j in (0..n_modeled).rev() {
        let pos = order_positions[j];
        let var_name = space.var(pos).name().to_string();
        // step a: split at Y*_j
        let (cond_missing, pi) = match state.condition(&[(var_name.as_str(), STAR)]) {
            Ok(pair) => pair,
            Err(Error::NullConditioning(_)) => {
                // π_j = 0: never missing; drop the star level and skip
                let raw = state.space().var(pos).unmaterialized();
                let reduced = slice_off_star(&state, pos, &raw)?;
                let mech = MechanismTable {
                    variable: var_name.clone(),
                    space: reduced.space().clone(),
                    prob: vec![0.0; reduced.space().n_cells()],
                };
                mechanisms[j] = Some(mech);
                steps.push(StepReport {
                    j,
                    variable: var_name,
                    pi: 0.0,
                    n_constraints: 0,
                    projection: None,
                });
                state = reduced;
                continue;
            }
            Err(e) => return Err(e),
        };
        if pi >= 1.0 {
            return Err(Error::AlwaysMissing {
                variable: var_name,
            });
        }
        // the observed slice: condition on Y*_j ≠ * and make the axis raw
        let raw = state.space().var(pos).unmaterialized();
        let obs_slice = observed_slice(&state, pos, &raw, pi)?;
        // cond_missing lives on the space without Y_j; the observed slice on
        // the space with a raw Y_j axis
        let suffix: Vec<usize> = order_positions[j..].to_vec();
        let constraints = margins.constraints_for_suffix(vars, &suffix)?;
        let n_constraints = constraints.len();
        // step b: conditional targets given M_j = 1
        let mut step_constraints = Vec::with_capacity(constraints.len());
        for m in &constraints {
            let dense = m.dense_on(obs_slice.space())?;
            let e_obs = {
                let mut acc = StableSum::new();
                for (z, &w) in obs_slice.mass().iter().enumerate() {
                    acc.add(dense[z] * w);
                }
                acc.value()
            };
            let target = (m.target - (1.0 - pi) * e_obs) / pi;
            step_constraints.push(MomentConstraint::new(
                format!("{}|M_{}=1", m.name, var_name),
                m.scope.clone(),
                m.values.clone(),
                target,
            )?);
        }
        // step c: project the observed slice onto the missing slice's
        // marginal and the conditional targets
        let gen = FGenerator::from_pi(link, pi)?;
        let fixed = reorder_like(&cond_missing, obs_slice.space(), pos)?;
        let cs = ConstraintSet::new(fixed, step_constraints);
        let res = project(&obs_slice, &cs, &gen, options).map_err(|e| match e {
            Error::Infeasible { name, detail } => Error::Infeasible {
                name: format!("step {} ({var_name}): {name}", j + 1),
                detail,
            },
            other => other,
        })?;
        // step d: mix back and read off the mechanism
        let mut mixed = vec![0.0; obs_slice.space().n_cells()];
        let mut mech = vec![0.0; obs_slice.space().n_cells()];
        for z in 0..mixed.len() {
            let m1 = res.table.mass()[z] * pi;
            let m0 = obs_slice.mass()[z] * (1.0 - pi);
            mixed[z] = m0 + m1;
            mech[z] = if mixed[z] > 0.0 { m1 / mixed[z] } else { pi };
        }
        mechanisms[j] = Some(MechanismTable {
            variable: var_name.clone(),
            space: obs_slice.space().clone(),
            prob: mech,
        });
        let decomposition =
            crate::projection::additive_decomposition_residual(&res.table, &obs_slice, &cs, &gen)?;
        steps.push(StepReport {
            j,
            variable: var_name,
            pi,
            n_constraints,
            projection: Some(ProjectionDiagnostics::from_result(&res, decomposition)),
        });
        state = renormalized(
            obs_slice.space().clone(),
            mixed,
            &format!("step {} mixture", j + 1),
        )?;
    }
    steps.reverse();

    let mechanisms: Vec<MechanismTable> = mechanisms.into_iter().map(Option::unwrap).collect();
    let full = assemble_from_parts(&state, &mechanisms, &order_positions, n_modeled)?;
    Ok(FullDataReconstruction {
        joint: state,
        mechanisms,
        full,
        steps,
    })
}

/// Wraps a mass vector that is normalized up to accumulated solver
/// tolerance; drift beyond `1e-8` signals a genuine assembly bug.
fn renormalized(space: Space, mass: Vec<f64>, what: &str) -> Result<ProbTable> {
    let mut acc = StableSum::new();
    for &w in &mass {
        acc.add(w);
    }
    let total = acc.value();
    if !total.is_finite() || (total - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidTable(format!(
            "{what}: mass sums to {total:.17}, too far from 1 to renormalize"
        )));
    }
    ProbTable::from_weights(space, mass)
}

/// Conditional law given `Y*_j ≠ *`, with the materialized axis replaced by
/// the raw variable.
fn observed_slice(
    state: &ProbTable,
    position: usize,
    raw: &crate::space::Variable,
    pi: f64,
) -> Result<ProbTable> {
    let reduced_space = state.space().with_var_replaced(position, raw.clone());
    let full_dims: Vec<usize> = state.space().vars().iter().map(|v| v.n_levels()).collect();
    let star = full_dims[position] - 1;
    let mut mass = vec![0.0; reduced_space.n_cells()];
    let mut out = 0usize;
    for (z, cell) in state.space().cells().enumerate() {
        if cell[position] == star {
            continue;
        }
        mass[out] = state.mass()[z] / (1.0 - pi);
        out += 1;
    }
    renormalized(reduced_space, mass, "observed slice")
}

/// Drops a star level that carries no mass.
fn slice_off_star(
    state: &ProbTable,
    position: usize,
    raw: &crate::space::Variable,
) -> Result<ProbTable> {
    observed_slice(state, position, raw, 0.0)
}

/// Reorders the missing-slice marginal onto the variable order of the
/// projection space (all variables except `Y_j` in that space's order).
fn reorder_like(
    cond_missing: &ProbTable,
    proj_space: &Space,
    position: usize,
) -> Result<ProbTable> {
    let names: Vec<String> = proj_space
        .vars()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != position)
        .map(|(_, v)| v.name().to_string())
        .collect();
    cond_missing.reorder(&names)
}

/// Assembles `g(x, y, m)` from the recovered joint and the per-step
/// mechanism conditionals.
fn assemble_from_parts(
    joint: &ProbTable,
    mechanisms: &[MechanismTable],
    order_positions: &[usize],
    n_modeled: usize,
) -> Result<ProbTable> {
    let study = joint.space();
    let mut vars = study.vars().to_vec();
    for j in 0..n_modeled {
        vars.push(crate::observed::indicator_variable(
            study.var(order_positions[j]).name(),
        ));
    }
    let full_space = Space::new(vars)?;
    let mut mass = vec![0.0; full_space.n_cells()];
    let p = n_modeled;
    for (idx, cell) in study.cells().enumerate() {
        let base = joint.mass()[idx];
        // mechanism probability for each step given the prefix pattern
        let mut stack = vec![(0usize, base, 0usize)];
        while let Some((j, w, code)) = stack.pop() {
            if j == p {
                mass[(idx << p) | code] = w;
                continue;
            }
            let pj = mechanism_lookup(&mechanisms[j], study, &cell, order_positions, code, j)?;
            stack.push((j + 1, w * pj, (code << 1) | 1));
            stack.push((j + 1, w * (1.0 - pj), code << 1));
        }
    }
    renormalized(full_space, mass, "full-data assembly")
}

/// Looks up `g(M_j = 1 | x, y*_{<j}, y_{≥j})` for a raw study cell and a
/// prefix pattern packed in `code` (bit `j-1-k` is `m_k`... bit 0 is the most
/// recent variable).
fn mechanism_lookup(
    mech: &MechanismTable,
    study: &Space,
    cell: &[usize],
    order_positions: &[usize],
    code: usize,
    j: usize,
) -> Result<f64> {
    let mut coords = Vec::with_capacity(mech.space.n_vars());
    for (i, var) in mech.space.vars().iter().enumerate() {
        let study_var = study.var(i);
        debug_assert_eq!(var.name(), study_var.name());
        let ord = order_positions[..j].iter().position(|&p| p == i);
        let coord = match ord {
            Some(k) if (code >> (j - 1 - k)) & 1 == 1 => var.n_levels() - 1,
            _ => cell[i],
        };
        coords.push(coord);
    }
    Ok(mech.prob[mech.space.index_of(&coords)])
}

/// Observational-equivalence report between two full-data tables.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub max_obs_gap: f64,
    pub max_moment_gap: f64,
}

/// Materializes both tables and compares the observed laws, plus the implied
/// Y-moments against each other.
pub fn observational_equivalence(
    g_a: &ProbTable,
    g_b: &ProbTable,
    moments: &[MomentConstraint],
) -> Result<EquivalenceReport> {
    if g_a.space() != g_b.space() {
        return Err(Error::InvalidTable(
            "observational equivalence requires a common space".into(),
        ));
    }
    let obs_a = crate::observed::materialize_table(g_a)?;
    let obs_b = crate::observed::materialize_table(g_b)?;
    let max_obs_gap = obs_a.sup_distance(&obs_b)?;
    let mut max_moment_gap = 0.0f64;
    for m in moments {
        let a = moment_on_full(g_a, m)?;
        let b = moment_on_full(g_b, m)?;
        max_moment_gap = max_moment_gap.max((a - b).abs());
    }
    Ok(EquivalenceReport {
        max_obs_gap,
        max_moment_gap,
    })
}

fn moment_on_full(full: &ProbTable, m: &MomentConstraint) -> Result<f64> {
    full.moment(m)
}
