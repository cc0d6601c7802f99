//! Sequentially additive nonignorable (SAN) missingness mechanisms.
//!
//! For study variables `X` (always observed) and `Y_1..Y_p` (subject to
//! missingness, taken in a declared order), the mechanism factors as
//!
//! ```text
//! f(m | x, y) = ∏_j f(m_j | x, y*_{<j}, y_{≥j})
//! λ{ f(M_j = 1 | x, y*_{<j}, y_{≥j}) } = α_j(x, y*_{<j}, y_{>j}) + β_j(y_{≥j})
//! ```
//!
//! where `y*_{<j}` are the materialized earlier variables (observed value or
//! `*`) and the identification constraint pins `β_j(y_j⁰, y_{>j}) = 0` at a
//! baseline level `y_j⁰`. Six submodels restrict the argument lists of `α_j`
//! and `β_j`, from the comprehensive form down to an ignorable mechanism;
//! coefficients are stored as dense tables over each term's scope with the
//! baseline cells frozen at zero.
//!
//! Y variables that are never missing may appear in the ordering only after
//! all modeled variables; they then enter every `α_j`/`β_j` scope through the
//! future block `y_{>j}`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::link::Link;
use crate::observed::indicator_variable;
use crate::space::{Space, VariableSpace};
use crate::table::ProbTable;

/// The six mechanism submodels, from the comprehensive SAN form to ignorable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Submodel {
    Full,
    MainEffects,
    OrderInvariant,
    DirectOnly,
    NoDirect,
    Ignorable,
}

impl Submodel {
    pub fn from_id(id: u8) -> Result<Submodel> {
        Ok(match id {
            0 => Submodel::Full,
            1 => Submodel::MainEffects,
            2 => Submodel::OrderInvariant,
            3 => Submodel::DirectOnly,
            4 => Submodel::NoDirect,
            5 => Submodel::Ignorable,
            _ => {
                return Err(Error::InvalidModel(format!(
                    "submodel id {id} out of range 0..=5"
                )))
            }
        })
    }

    pub fn id(&self) -> u8 {
        match self {
            Submodel::Full => 0,
            Submodel::MainEffects => 1,
            Submodel::OrderInvariant => 2,
            Submodel::DirectOnly => 3,
            Submodel::NoDirect => 4,
            Submodel::Ignorable => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Submodel::Full => "full",
            Submodel::MainEffects => "main_effects",
            Submodel::OrderInvariant => "order_invariant",
            Submodel::DirectOnly => "direct_only",
            Submodel::NoDirect => "no_direct",
            Submodel::Ignorable => "ignorable",
        }
    }

    /// Whether inferences under this submodel are invariant to the ordering
    /// of the modeled variables.
    pub fn order_invariant(&self) -> bool {
        matches!(
            self,
            Submodel::OrderInvariant | Submodel::DirectOnly | Submodel::Ignorable
        )
    }
}

/// Prior role of a coefficient term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alpha,
    Beta,
}

/// One scope variable of a term: a study-space position, evaluated either at
/// its raw level or at its materialized level (observed value or `*`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScopeVar {
    pub position: usize,
    pub materialized: bool,
}

/// A coefficient table over the cells of a term scope, with an optional
/// zero-constraint mask (the baseline identification cells).
#[derive(Debug, Clone)]
pub struct Term {
    id: String,
    role: Role,
    vars: Vec<ScopeVar>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<f64>,
    zero_mask: Vec<bool>,
}

impl Term {
    fn new(id: String, role: Role, vars: Vec<ScopeVar>, space: &Space) -> Term {
        let dims: Vec<usize> = vars
            .iter()
            .map(|sv| space.var(sv.position).n_levels() + usize::from(sv.materialized))
            .collect();
        let n: usize = dims.iter().product();
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        Term {
            id,
            role,
            vars,
            dims,
            strides,
            values: vec![0.0; n],
            zero_mask: vec![false; n],
        }
    }

    /// Freezes at zero every cell whose coordinate on `position` equals
    /// `level`.
    fn constrain_at(&mut self, position: usize, level: usize) {
        let axis = self
            .vars
            .iter()
            .position(|sv| sv.position == position)
            .expect("constraint variable not in term scope");
        for cell in 0..self.values.len() {
            if (cell / self.strides[axis]) % self.dims[axis] == level {
                self.zero_mask[cell] = true;
            }
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn scope(&self) -> &[ScopeVar] {
        &self.vars
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zero_mask(&self) -> &[bool] {
        &self.zero_mask
    }

    /// Indices of unconstrained coefficient cells.
    pub fn free_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.zero_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &z)| (!z).then_some(i))
    }

    /// Replaces the whole coefficient table; constrained cells must be zero.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::InvalidModel(format!(
                "term `{}` expects {} coefficients, got {}",
                self.id,
                self.values.len(),
                values.len()
            )));
        }
        for (i, (&v, &z)) in values.iter().zip(&self.zero_mask).enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "term `{}` has non-finite coefficient at cell {i}",
                    self.id
                )));
            }
            if z && v != 0.0 {
                return Err(Error::InvalidModel(format!(
                    "term `{}` cell {i} is constrained to zero (baseline), got {v}",
                    self.id
                )));
            }
        }
        self.values = values;
        Ok(())
    }

    /// Sets one free coefficient.
    pub fn set_value(&mut self, cell: usize, value: f64) -> Result<()> {
        if cell >= self.values.len() {
            return Err(Error::InvalidModel(format!(
                "term `{}`: cell {cell} out of range",
                self.id
            )));
        }
        if self.zero_mask[cell] {
            return Err(Error::InvalidModel(format!(
                "term `{}`: cell {cell} is constrained to zero (baseline)",
                self.id
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidModel(format!(
                "term `{}`: non-finite coefficient",
                self.id
            )));
        }
        self.values[cell] = value;
        Ok(())
    }

    fn locate(&self, mut coord: impl FnMut(&ScopeVar) -> usize) -> usize {
        self.vars
            .iter()
            .zip(&self.strides)
            .map(|(sv, stride)| coord(sv) * stride)
            .sum()
    }

    /// Scope variable names, in scope order.
    pub fn scope_names(&self, space: &Space) -> Vec<String> {
        self.vars
            .iter()
            .map(|sv| space.var(sv.position).name().to_string())
            .collect()
    }

    /// Level labels of one scope cell (`*` for materialized-missing
    /// coordinates).
    pub fn cell_labels(&self, space: &Space, cell: usize) -> Vec<String> {
        self.vars
            .iter()
            .zip(self.strides.iter().zip(&self.dims))
            .map(|(sv, (stride, dim))| {
                let coord = (cell / stride) % dim;
                let var = space.var(sv.position);
                if sv.materialized && coord == var.n_levels() {
                    crate::space::STAR.to_string()
                } else {
                    var.levels()[coord].clone()
                }
            })
            .collect()
    }

    /// Flat cell index of a scope assignment given by level labels
    /// (use `*` for materialized-missing coordinates).
    pub fn cell_of_labels(&self, space: &Space, labels: &[&str]) -> Result<usize> {
        if labels.len() != self.vars.len() {
            return Err(Error::InvalidModel(format!(
                "term `{}` scope has {} variables, got {} labels",
                self.id,
                self.vars.len(),
                labels.len()
            )));
        }
        let mut cell = 0;
        for ((sv, stride), &label) in self.vars.iter().zip(&self.strides).zip(labels) {
            let var = space.var(sv.position);
            let coord = if sv.materialized && label == crate::space::STAR {
                var.n_levels()
            } else {
                var.level_index(label).ok_or_else(|| {
                    Error::InvalidModel(format!(
                        "term `{}`: unknown level `{label}` for variable `{}`",
                        self.id,
                        var.name()
                    ))
                })?
            };
            cell += coord * stride;
        }
        Ok(cell)
    }
}

/// A full SAN mechanism specification: study variables, ordering, link,
/// submodel, baselines, and per-step coefficient terms.
#[derive(Debug, Clone)]
pub struct SanSpec {
    vars: VariableSpace,
    ordering: Vec<usize>,
    n_modeled: usize,
    link: Link,
    submodel: Submodel,
    /// Baseline level per study-space position (Y positions only meaningful).
    baselines: Vec<usize>,
    /// Ordinal in the modeled ordering, per study-space position.
    modeled_ordinal: Vec<Option<usize>>,
    terms: Vec<Vec<Term>>,
}

impl SanSpec {
    /// Builds a specification with all coefficients zero. `modeled` lists the
    /// Y variables subject to missingness in mechanism order; the remaining
    /// Y variables are appended as always-observed and enter scopes through
    /// the future block.
    pub fn new(
        vars: VariableSpace,
        modeled: &[&str],
        link: Link,
        submodel: Submodel,
    ) -> Result<SanSpec> {
        let space = vars.space();
        let mut ordering = Vec::with_capacity(vars.y_positions().len());
        for name in modeled {
            let pos = space.var_index(name).ok_or_else(|| {
                Error::InvalidModel(format!("modeled variable `{name}` not in the space"))
            })?;
            if !vars.y_positions().contains(&pos) {
                return Err(Error::InvalidModel(format!(
                    "modeled variable `{name}` is not in the Y block"
                )));
            }
            if ordering.contains(&pos) {
                return Err(Error::InvalidModel(format!(
                    "modeled variable `{name}` listed twice"
                )));
            }
            ordering.push(pos);
        }
        let n_modeled = ordering.len();
        for &pos in vars.y_positions() {
            if !ordering.contains(&pos) {
                ordering.push(pos);
            }
        }
        let mut modeled_ordinal = vec![None; space.n_vars()];
        for (ord, &pos) in ordering.iter().take(n_modeled).enumerate() {
            modeled_ordinal[pos] = Some(ord);
        }
        let baselines = vec![0usize; space.n_vars()];
        let mut spec = SanSpec {
            vars,
            ordering,
            n_modeled,
            link,
            submodel,
            baselines,
            modeled_ordinal,
            terms: Vec::new(),
        };
        spec.rebuild_terms();
        Ok(spec)
    }

    /// Overrides baseline levels (variable name, level label); coefficients
    /// are reset to zero because the constraint pattern changes.
    pub fn with_baselines(mut self, baselines: &[(&str, &str)]) -> Result<SanSpec> {
        for &(name, level) in baselines {
            let pos = self
                .vars
                .space()
                .var_index(name)
                .ok_or_else(|| Error::InvalidModel(format!("unknown variable `{name}`")))?;
            if !self.vars.y_positions().contains(&pos) {
                return Err(Error::InvalidModel(format!(
                    "baselines apply to Y variables; `{name}` is not one"
                )));
            }
            let idx = self
                .vars
                .space()
                .var(pos)
                .level_index(level)
                .ok_or_else(|| {
                    Error::InvalidModel(format!("unknown level `{level}` for `{name}`"))
                })?;
            self.baselines[pos] = idx;
        }
        self.rebuild_terms();
        Ok(self)
    }

    fn rebuild_terms(&mut self) {
        let space = self.vars.space().clone();
        let x_positions = self.vars.x_positions();
        let mut terms = Vec::with_capacity(self.n_modeled);
        for j in 0..self.n_modeled {
            let self_pos = self.ordering[j];
            let past: Vec<ScopeVar> = self.ordering[..j]
                .iter()
                .map(|&p| ScopeVar {
                    position: p,
                    materialized: true,
                })
                .collect();
            let future: Vec<ScopeVar> = self.ordering[j + 1..]
                .iter()
                .map(|&p| ScopeVar {
                    position: p,
                    materialized: false,
                })
                .collect();
            let observed_y: Vec<ScopeVar> = self.ordering[self.n_modeled..]
                .iter()
                .map(|&p| ScopeVar {
                    position: p,
                    materialized: false,
                })
                .collect();
            let x_scope: Vec<ScopeVar> = x_positions
                .iter()
                .map(|&p| ScopeVar {
                    position: p,
                    materialized: false,
                })
                .collect();
            let self_var = ScopeVar {
                position: self_pos,
                materialized: false,
            };
            let step = j + 1;
            let mut step_terms = Vec::new();
            match self.submodel {
                Submodel::Full | Submodel::NoDirect => {
                    let mut scope = x_scope.clone();
                    scope.extend(past.iter().cloned());
                    scope.extend(future.iter().cloned());
                    step_terms.push(Term::new(format!("alpha{step}"), Role::Alpha, scope, &space));
                    if self.submodel == Submodel::Full {
                        let mut scope = vec![self_var];
                        scope.extend(future.iter().cloned());
                        let mut t =
                            Term::new(format!("beta{step}"), Role::Beta, scope, &space);
                        t.constrain_at(self_pos, self.baselines[self_pos]);
                        step_terms.push(t);
                    }
                }
                Submodel::MainEffects => {
                    step_terms.push(Term::new(
                        format!("alpha{step}"),
                        Role::Alpha,
                        x_scope.clone(),
                        &space,
                    ));
                    for sv in past.iter().chain([&self_var]).chain(future.iter()) {
                        let name = space.var(sv.position).name();
                        let mut t = Term::new(
                            format!("beta{step}_{name}"),
                            Role::Beta,
                            vec![*sv],
                            &space,
                        );
                        if sv.materialized {
                            t.constrain_at(sv.position, space.var(sv.position).n_levels());
                        } else {
                            t.constrain_at(sv.position, self.baselines[sv.position]);
                        }
                        step_terms.push(t);
                    }
                }
                Submodel::OrderInvariant => {
                    let mut scope = x_scope.clone();
                    scope.extend(observed_y.iter().cloned());
                    step_terms.push(Term::new(format!("alpha{step}"), Role::Alpha, scope, &space));
                    let mut scope = vec![self_var];
                    scope.extend(observed_y.iter().cloned());
                    let mut t = Term::new(format!("beta{step}"), Role::Beta, scope, &space);
                    t.constrain_at(self_pos, self.baselines[self_pos]);
                    step_terms.push(t);
                }
                Submodel::DirectOnly => {
                    step_terms.push(Term::new(
                        format!("alpha{step}"),
                        Role::Alpha,
                        Vec::new(),
                        &space,
                    ));
                    let mut t = Term::new(
                        format!("beta{step}"),
                        Role::Beta,
                        vec![self_var],
                        &space,
                    );
                    t.constrain_at(self_pos, self.baselines[self_pos]);
                    step_terms.push(t);
                }
                Submodel::Ignorable => {
                    let mut scope = x_scope.clone();
                    scope.extend(past.iter().cloned());
                    step_terms.push(Term::new(format!("alpha{step}"), Role::Alpha, scope, &space));
                }
            }
            terms.push(step_terms);
        }
        self.terms = terms;
    }

    pub fn vars(&self) -> &VariableSpace {
        &self.vars
    }

    pub fn space(&self) -> &Space {
        self.vars.space()
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn submodel(&self) -> Submodel {
        self.submodel
    }

    pub fn n_modeled(&self) -> usize {
        self.n_modeled
    }

    /// Study-space positions of the Y variables in mechanism order
    /// (modeled first, then always-observed).
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    pub fn modeled_names(&self) -> Vec<&str> {
        self.ordering[..self.n_modeled]
            .iter()
            .map(|&p| self.vars.space().var(p).name())
            .collect()
    }

    pub fn baseline(&self, position: usize) -> usize {
        self.baselines[position]
    }

    pub fn terms(&self, j: usize) -> &[Term] {
        &self.terms[j]
    }

    pub fn term(&self, j: usize, id: &str) -> Result<&Term> {
        self.terms
            .get(j)
            .and_then(|ts| ts.iter().find(|t| t.id() == id))
            .ok_or_else(|| Error::InvalidModel(format!("no term `{id}` at step {j}")))
    }

    pub fn term_mut(&mut self, j: usize, id: &str) -> Result<&mut Term> {
        self.terms
            .get_mut(j)
            .and_then(|ts| ts.iter_mut().find(|t| t.id() == id))
            .ok_or_else(|| Error::InvalidModel(format!("no term `{id}` at step {j}")))
    }

    /// All (step, term) pairs in declaration order.
    pub fn all_terms(&self) -> impl Iterator<Item = (usize, &Term)> + '_ {
        self.terms
            .iter()
            .enumerate()
            .flat_map(|(j, ts)| ts.iter().map(move |t| (j, t)))
    }

    /// Fills every free coefficient with an independent normal draw.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, sd_alpha: f64, sd_beta: f64) {
        for step in self.terms.iter_mut() {
            for term in step.iter_mut() {
                let sd = match term.role {
                    Role::Alpha => sd_alpha,
                    Role::Beta => sd_beta,
                };
                let dist = Normal::new(0.0, sd).unwrap();
                for i in 0..term.values.len() {
                    if !term.zero_mask[i] {
                        term.values[i] = dist.sample(rng);
                    }
                }
            }
        }
    }

    fn locate_term(&self, term: &Term, assignment: &[usize], m: &[bool]) -> usize {
        term.locate(|sv| {
            if sv.materialized {
                let ord = self.modeled_ordinal[sv.position].unwrap();
                if m[ord] {
                    self.vars.space().var(sv.position).n_levels()
                } else {
                    assignment[sv.position]
                }
            } else {
                assignment[sv.position]
            }
        })
    }

    /// Linear predictor `α_j + β_j` at a full study assignment with the
    /// missingness prefix `m` (length at least `j`).
    pub fn linear_predictor(&self, j: usize, assignment: &[usize], m: &[bool]) -> f64 {
        self.terms[j]
            .iter()
            .map(|term| term.values[self.locate_term(term, assignment, m)])
            .sum()
    }

    /// The coefficient cell each step-`j` term resolves to under an
    /// assignment and missingness prefix, in term order.
    pub fn term_cells(&self, j: usize, assignment: &[usize], m: &[bool]) -> Vec<usize> {
        self.terms[j]
            .iter()
            .map(|term| self.locate_term(term, assignment, m))
            .collect()
    }

    /// `f(M_j = 1 | x, y*_{<j}, y_{≥j})` for the step with 0-based index `j`.
    /// `assignment` gives a level per study variable; `m_prefix` the
    /// missingness bits of the first `j` modeled variables.
    pub fn mechanism_prob(
        &self,
        j: usize,
        assignment: &[usize],
        m_prefix: &[bool],
    ) -> Result<f64> {
        if j >= self.n_modeled {
            return Err(Error::InvalidModel(format!(
                "step index {j} out of range for {} modeled variables",
                self.n_modeled
            )));
        }
        if m_prefix.len() < j {
            return Err(Error::InvalidModel(format!(
                "missingness prefix has {} entries, step {j} needs {j}",
                m_prefix.len()
            )));
        }
        if assignment.len() != self.vars.space().n_vars() {
            return Err(Error::InvalidModel(format!(
                "assignment has {} entries, expected {}",
                assignment.len(),
                self.vars.space().n_vars()
            )));
        }
        Ok(self.link.inverse(self.linear_predictor(j, assignment, m_prefix)))
    }

    /// Re-expresses this specification through the comprehensive submodel:
    /// same mechanism, coefficients summed into the full `α_j`/`β_j` scopes.
    pub fn embed_full(&self) -> Result<SanSpec> {
        let mut full = SanSpec::new(
            self.vars.clone(),
            &self
                .ordering[..self.n_modeled]
                .iter()
                .map(|&p| self.vars.space().var(p).name())
                .collect::<Vec<_>>(),
            self.link,
            Submodel::Full,
        )?;
        let baselines: Vec<(String, String)> = self
            .vars
            .y_positions()
            .iter()
            .map(|&p| {
                let var = self.vars.space().var(p);
                (
                    var.name().to_string(),
                    var.levels()[self.baselines[p]].clone(),
                )
            })
            .collect();
        let refs: Vec<(&str, &str)> = baselines
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        full = full.with_baselines(&refs)?;
        let space = self.vars.space();
        for j in 0..self.n_modeled {
            let self_pos = self.ordering[j];
            // a term "involves self" exactly when the self variable is in
            // its scope; those sum into the full β, the rest into the full α
            let involves_self: Vec<bool> = self.terms[j]
                .iter()
                .map(|t| t.vars.iter().any(|sv| sv.position == self_pos))
                .collect();
            for target_id in ["alpha", "beta"] {
                let into_beta = target_id == "beta";
                let tid = format!("{target_id}{}", j + 1);
                let mut tvals;
                {
                    let target = full.term(j, &tid)?;
                    tvals = vec![0.0; target.n_cells()];
                    for cell in 0..target.n_cells() {
                        // decode the target cell into coordinates
                        let mut assignment = vec![0usize; space.n_vars()];
                        let mut m = vec![false; self.n_modeled];
                        assignment[self_pos] = self.baselines[self_pos];
                        for (sv, (stride, dim)) in target
                            .vars
                            .iter()
                            .zip(target.strides.iter().zip(&target.dims))
                        {
                            let coord = (cell / stride) % dim;
                            if sv.materialized && coord == space.var(sv.position).n_levels() {
                                m[self.modeled_ordinal[sv.position].unwrap()] = true;
                            } else {
                                assignment[sv.position] = coord;
                            }
                        }
                        let mut s = 0.0;
                        for (t, &inv) in self.terms[j].iter().zip(&involves_self) {
                            if inv != into_beta {
                                continue;
                            }
                            let idx = t.locate(|sv| {
                                if sv.materialized
                                    && m[self.modeled_ordinal[sv.position].unwrap()]
                                {
                                    space.var(sv.position).n_levels()
                                } else {
                                    assignment[sv.position]
                                }
                            });
                            s += t.values[idx];
                        }
                        tvals[cell] = s;
                    }
                }
                full.term_mut(j, &tid)?.set_values(tvals)?;
            }
        }
        Ok(full)
    }
}

/// A joint study-variable law together with a SAN mechanism.
#[derive(Debug, Clone)]
pub struct FullDataModel {
    pub joint: ProbTable,
    pub mechanism: SanSpec,
}

impl FullDataModel {
    pub fn new(joint: ProbTable, mechanism: SanSpec) -> Result<FullDataModel> {
        if joint.space() != mechanism.vars.space() {
            return Err(Error::InvalidModel(
                "joint table and mechanism are over different spaces".into(),
            ));
        }
        Ok(FullDataModel { joint, mechanism })
    }
}

/// The implied table over `(X, Y, M)`: study variables followed by one
/// missingness indicator per modeled variable, in mechanism order.
pub fn assemble_full_data(model: &FullDataModel) -> Result<ProbTable> {
    let spec = &model.mechanism;
    let study = spec.vars.space();
    let p = spec.n_modeled;
    let mut vars = study.vars().to_vec();
    for j in 0..p {
        vars.push(indicator_variable(study.var(spec.ordering[j]).name()));
    }
    let full_space = Space::new(vars)?;
    let mut mass = vec![0.0; full_space.n_cells()];
    let mut m = vec![false; p];
    for (study_idx, assignment) in study.cells().enumerate() {
        let base = model.joint.mass()[study_idx];
        fill_patterns(spec, &assignment, &mut m, 0, base, study_idx, &mut mass);
    }
    ProbTable::from_probabilities(full_space, mass)
}

fn fill_patterns(
    spec: &SanSpec,
    assignment: &[usize],
    m: &mut Vec<bool>,
    j: usize,
    weight: f64,
    code: usize,
    out: &mut [f64],
) {
    if j == spec.n_modeled {
        out[code] = weight;
        return;
    }
    if weight == 0.0 {
        // still enumerate so every cell is written
        for c in 0..(1usize << (spec.n_modeled - j)) {
            out[(code << (spec.n_modeled - j)) | c] = 0.0;
        }
        return;
    }
    let pj = spec
        .link
        .inverse(spec.linear_predictor(j, assignment, &m[..j]));
    m[j] = false;
    fill_patterns(spec, assignment, m, j + 1, weight * (1.0 - pj), code << 1, out);
    m[j] = true;
    fill_patterns(spec, assignment, m, j + 1, weight * pj, (code << 1) | 1, out);
    m[j] = false;
}

/// Draws `n` i.i.d. materialized records from the model. Deterministic given
/// the seed.
pub fn simulate(model: &FullDataModel, n: usize, seed: u64) -> Result<Dataset> {
    use rand::SeedableRng;
    if n == 0 {
        return Err(Error::InvalidModel("simulate requires n >= 1".into()));
    }
    let spec = &model.mechanism;
    let study = spec.vars.space();
    let mut cum = Vec::with_capacity(study.n_cells());
    let mut acc = 0.0;
    for &w in model.joint.mass() {
        acc += w;
        cum.push(acc);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut m = vec![false; spec.n_modeled];
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let cell_idx = cum.partition_point(|&c| c <= u).min(study.n_cells() - 1);
        let assignment = study.cell_of(cell_idx);
        let mut record: Vec<Option<usize>> =
            assignment.iter().map(|&lvl| Some(lvl)).collect();
        for j in 0..spec.n_modeled {
            let pj = spec
                .link
                .inverse(spec.linear_predictor(j, &assignment, &m[..j]));
            m[j] = rng.random::<f64>() < pj;
            if m[j] {
                record[spec.ordering[j]] = None;
            }
        }
        records.push(record);
    }
    Dataset::new(study.clone(), records)
}

/// Mechanism-ordering heuristic: highest missingness fraction first
/// (ties keep the given order).
pub fn order_by_missingness(dataset: &Dataset, modeled: &[String]) -> Result<Vec<String>> {
    let mut scored: Vec<(usize, f64, String)> = Vec::with_capacity(modeled.len());
    for (i, name) in modeled.iter().enumerate() {
        scored.push((i, dataset.missing_fraction(name)?, name.clone()));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(_, _, name)| name).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::build_space;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn study() -> VariableSpace {
        build_space(
            &[
                ("x", &["lo", "hi"]),
                ("y1", &["a", "b"]),
                ("y2", &["u", "v", "w"]),
            ],
            &["y1", "y2"],
        )
        .unwrap()
    }

    fn all_submodels() -> [Submodel; 6] {
        [
            Submodel::Full,
            Submodel::MainEffects,
            Submodel::OrderInvariant,
            Submodel::DirectOnly,
            Submodel::NoDirect,
            Submodel::Ignorable,
        ]
    }

    #[test]
    fn zero_coefficients_give_half_logit() {
        for sub in all_submodels() {
            let spec = SanSpec::new(study(), &["y1", "y2"], Link::Logit, sub).unwrap();
            for cell in spec.space().cells() {
                for j in 0..2 {
                    let prefix = vec![false; j];
                    let p = spec.mechanism_prob(j, &cell, &prefix).unwrap();
                    assert_eq!(p, 0.5, "{}", sub.name());
                }
            }
        }
    }

    #[test]
    fn direct_only_logistic_value() {
        let mut spec =
            SanSpec::new(study(), &["y1", "y2"], Link::Logit, Submodel::DirectOnly).unwrap();
        spec.term_mut(0, "alpha1")
            .unwrap()
            .set_values(vec![1.0])
            .unwrap();
        // y1 at its baseline level: probability is logistic(1)
        let p = spec
            .mechanism_prob(0, &[0, 0, 0], &[])
            .unwrap();
        assert!((p - 0.7310585786300049).abs() < 1e-15);
    }

    #[test]
    fn materialization_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for sub in all_submodels() {
            let mut spec = SanSpec::new(study(), &["y1", "y2"], Link::Probit, sub).unwrap();
            spec.randomize(&mut rng, 1.0, 1.0);
            // step 1 (j = 1): vary y1 under m_1 = 1
            for x in 0..2 {
                for y2 in 0..3 {
                    let base = spec
                        .mechanism_prob(1, &[x, 0, y2], &[true])
                        .unwrap();
                    let alt = spec
                        .mechanism_prob(1, &[x, 1, y2], &[true])
                        .unwrap();
                    assert_eq!(base, alt, "{}", sub.name());
                }
            }
        }
    }

    #[test]
    fn baseline_makes_beta_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for sub in [Submodel::Full, Submodel::OrderInvariant, Submodel::DirectOnly] {
            let mut spec = SanSpec::new(study(), &["y1", "y2"], Link::Logit, sub).unwrap();
            spec.randomize(&mut rng, 1.0, 1.0);
            let mut no_beta = spec.clone();
            for j in 0..2 {
                let id = format!("beta{}", j + 1);
                let n = no_beta.term(j, &id).unwrap().n_cells();
                no_beta.term_mut(j, &id).unwrap().set_values(vec![0.0; n]).unwrap();
            }
            // with y_j at baseline the beta term contributes exactly zero
            for cell in spec.space().cells() {
                if cell[1] == 0 {
                    let a = spec.mechanism_prob(0, &cell, &[]).unwrap();
                    let b = no_beta.mechanism_prob(0, &cell, &[]).unwrap();
                    assert_eq!(a, b, "{}", sub.name());
                }
                if cell[2] == 0 {
                    for m1 in [false, true] {
                        let a = spec.mechanism_prob(1, &cell, &[m1]).unwrap();
                        let b = no_beta.mechanism_prob(1, &cell, &[m1]).unwrap();
                        assert_eq!(a, b, "{}", sub.name());
                    }
                }
            }
        }
    }

    #[test]
    fn submodel3_embeds_exactly_in_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec =
            SanSpec::new(study(), &["y1", "y2"], Link::Cloglog, Submodel::DirectOnly).unwrap();
        spec.randomize(&mut rng, 1.2, 2.0);
        let full = spec.embed_full().unwrap();
        assert_eq!(full.submodel(), Submodel::Full);
        for cell in spec.space().cells() {
            for j in 0..2 {
                for m1 in [false, true] {
                    let prefix: Vec<bool> = vec![m1; j];
                    let a = spec.mechanism_prob(j, &cell, &prefix).unwrap();
                    let b = full.mechanism_prob(j, &cell, &prefix).unwrap();
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn other_submodels_embed_within_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for sub in [Submodel::MainEffects, Submodel::OrderInvariant, Submodel::Ignorable] {
            let mut spec = SanSpec::new(study(), &["y1", "y2"], Link::Logit, sub).unwrap();
            spec.randomize(&mut rng, 1.0, 1.5);
            let full = spec.embed_full().unwrap();
            for cell in spec.space().cells() {
                for j in 0..2 {
                    for m1 in [false, true] {
                        let prefix: Vec<bool> = vec![m1; j];
                        let a = spec.mechanism_prob(j, &cell, &prefix).unwrap();
                        let b = full.mechanism_prob(j, &cell, &prefix).unwrap();
                        assert!((a - b).abs() < 1e-12, "{}", sub.name());
                    }
                }
            }
        }
    }

    #[test]
    fn assemble_ignorable_alpha_zero_is_symmetric() {
        let vs = study();
        let joint = ProbTable::from_weights(
            vs.space().clone(),
            (1..=12).map(|i| i as f64).collect(),
        )
        .unwrap();
        let spec = SanSpec::new(vs, &["y1", "y2"], Link::Logit, Submodel::Ignorable).unwrap();
        let model = FullDataModel::new(joint.clone(), spec).unwrap();
        let full = assemble_full_data(&model).unwrap();
        assert_eq!(full.space().n_vars(), 5);
        for (i, &w) in joint.mass().iter().enumerate() {
            for code in 0..4usize {
                let got = full.mass()[(i << 2) | code];
                assert_eq!(got, w * 0.25);
            }
        }
    }

    #[test]
    fn assemble_p1_matches_enumeration() {
        let vs = build_space(&[("x", &["0", "1"]), ("y", &["a", "b", "c"])], &["y"]).unwrap();
        let joint = ProbTable::from_weights(
            vs.space().clone(),
            vec![0.5, 1.5, 2.0, 1.0, 0.5, 0.5],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut spec = SanSpec::new(vs, &["y"], Link::Logit, Submodel::Full).unwrap();
        spec.randomize(&mut rng, 1.0, 2.0);
        let model = FullDataModel::new(joint.clone(), spec.clone()).unwrap();
        let full = assemble_full_data(&model).unwrap();
        for (i, cell) in joint.space().cells().enumerate() {
            let p1 = spec.mechanism_prob(0, &cell, &[]).unwrap();
            assert!((full.mass()[2 * i] - joint.mass()[i] * (1.0 - p1)).abs() < 1e-15);
            assert!((full.mass()[2 * i + 1] - joint.mass()[i] * p1).abs() < 1e-15);
        }
        let total: f64 = full.mass().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulate_is_deterministic_and_calibrated() {
        let vs = study();
        let joint = ProbTable::uniform(vs.space().clone());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut spec = SanSpec::new(vs, &["y1", "y2"], Link::Logit, Submodel::MainEffects).unwrap();
        spec.randomize(&mut rng, 0.8, 1.2);
        let model = FullDataModel::new(joint, spec).unwrap();
        let a = simulate(&model, 60_000, 99).unwrap();
        let b = simulate(&model, 60_000, 99).unwrap();
        assert_eq!(a, b);
        let one = simulate(&model, 1, 4).unwrap();
        assert_eq!(one.n(), 1);

        // missingness fractions vs the exact assembled table
        let full = assemble_full_data(&model).unwrap();
        for name in ["y1", "y2"] {
            let mname = format!("M:{name}");
            let marg = full.marginalize(&[mname.as_str()]).unwrap();
            let exact = marg.mass()[1];
            let got = a.missing_fraction(name).unwrap();
            let se = (exact * (1.0 - exact) / 60_000.0).sqrt();
            assert!(
                (got - exact).abs() < 3.0 * se,
                "{name}: fraction {got} vs exact {exact} (se {se})"
            );
        }
    }

    #[test]
    fn ordering_helper_sorts_desc() {
        let vs = build_space(
            &[("x", &["0", "1"]), ("y1", &["a", "b"]), ("y2", &["a", "b"])],
            &["y1", "y2"],
        )
        .unwrap();
        let records = vec![
            vec![Some(0), Some(0), None],
            vec![Some(0), Some(1), None],
            vec![Some(1), None, Some(0)],
            vec![Some(1), Some(0), Some(1)],
        ];
        let data = Dataset::new(vs.space().clone(), records).unwrap();
        let order =
            order_by_missingness(&data, &["y1".into(), "y2".into()]).unwrap();
        assert_eq!(order, vec!["y2".to_string(), "y1".to_string()]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SanSpec::new(study(), &["x"], Link::Logit, Submodel::Full).is_err());
        assert!(SanSpec::new(study(), &["y1", "y1"], Link::Logit, Submodel::Full).is_err());
        assert!(SanSpec::new(study(), &["nope"], Link::Logit, Submodel::Full).is_err());
        assert!(Submodel::from_id(6).is_err());
        let mut spec = SanSpec::new(study(), &["y1"], Link::Logit, Submodel::Full).unwrap();
        // beta1 cell with y1 at baseline is constrained
        let err = spec.term_mut(0, "beta1").unwrap().set_value(0, 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn always_observed_vars_enter_scopes() {
        // y2 never missing: modeled = [y1] only
        let spec = SanSpec::new(study(), &["y1"], Link::Logit, Submodel::OrderInvariant).unwrap();
        assert_eq!(spec.n_modeled(), 1);
        let alpha = spec.term(0, "alpha1").unwrap();
        assert_eq!(alpha.scope_names(spec.space()), vec!["x", "y2"]);
        let beta = spec.term(0, "beta1").unwrap();
        assert_eq!(beta.scope_names(spec.space()), vec!["y1", "y2"]);
    }
}
