//! Exact f-projections onto linear constraint sets.
//!
//! Given a base table `Q`, a generator `f_λ` (link plus odds factor `c`), and
//! a constraint set consisting of a fixed marginal and moment conditions,
//! [`project`] computes the unique minimizer of
//!
//! ```text
//! I_f(P, Q) = Σ_z f_λ( P(z)/Q(z) ) · Q(z)
//! ```
//!
//! over tables `P` that reproduce the fixed marginal and satisfy
//! `E_P[u_k] = t_k` for every moment constraint. The minimizer has the form
//!
//! ```text
//! f_λ'( P*(z)/Q(z) ) = α(a(z)) + Σ_k β_k u_k(z)
//! ```
//!
//! with one `α` per fiber of the fixed marginal and one `β` per moment
//! function, so `P*(z) = Q(z) · r(α + β·u)` with `r = (f_λ')⁻¹`. The dual
//! problem is smooth and convex; its gradient is exactly the constraint
//! residual of `P(ν)`, which a damped Newton iteration with backtracking
//! drives below `tol` (default `1e-10`, at most `max_iter = 200` steps).
//! Redundant-but-consistent constraints leave flat dual directions; a small
//! ridge keeps the Newton system well posed without moving the primal.
//!
//! Feasibility of each moment target is pre-checked against its exact
//! attainable range over the fixed-marginal polytope
//! (`Σ_a m_a · min/max_{z ∈ fiber a} u(z)`), which also catches constraints
//! that the fixed marginal already determines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::FGenerator;
use crate::table::{stable_sum, CellProjector, MomentConstraint, ProbTable, StableSum};

/// Constraints of a projection: a fixed marginal (possibly over the empty
/// variable list, which constrains only total mass) plus moment conditions.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub fixed_marginal: ProbTable,
    pub moments: Vec<MomentConstraint>,
}

impl ConstraintSet {
    pub fn new(fixed_marginal: ProbTable, moments: Vec<MomentConstraint>) -> Self {
        ConstraintSet {
            fixed_marginal,
            moments,
        }
    }
}

/// Solver options for [`project`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Convergence threshold on the sup-norm of the constraint residual.
    pub tol: f64,
    /// Iteration cap for the damped Newton loop.
    pub max_iter: usize,
    /// Replace a base table with zero cells by `(Q + 1e-9)/normalization`.
    /// Off by default; zero cells are rejected.
    pub smooth_zeros: bool,
    /// Optional warm start for the dual variables `(α..., β...)`.
    #[serde(skip)]
    pub dual_init: Option<Vec<f64>>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            tol: 1e-10,
            max_iter: 200,
            smooth_zeros: false,
            dual_init: None,
        }
    }
}

/// Smoothing mass added per cell when `smooth_zeros` is enabled.
pub const SMOOTHING_EPS: f64 = 1e-9;

/// Result of a projection.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// The projected table `P*`.
    pub table: ProbTable,
    /// Dual coefficients, one per fiber of the fixed marginal
    /// (`-∞` for fibers the marginal gives zero mass).
    pub alpha: Vec<f64>,
    /// Dual coefficients, one per moment constraint.
    pub beta: Vec<f64>,
    /// Final sup-norm residual of the fixed-marginal constraints.
    pub marginal_residual: f64,
    /// Final sup-norm residual of the moment constraints.
    pub moment_residual: f64,
    /// `I_f(P*, Q)`.
    pub divergence: f64,
    /// Newton iterations used.
    pub iterations: usize,
    /// Whether zero-smoothing was applied to the base table.
    pub smoothed: bool,
}

/// Internal: constraint geometry resolved against a base table's space.
struct Geometry {
    /// Fiber index per cell.
    fiber: Vec<usize>,
    /// Fiber masses (the fixed marginal).
    marginal: Vec<f64>,
    /// Dense moment values per constraint.
    u: Vec<Vec<f64>>,
    /// Moment targets.
    targets: Vec<f64>,
}

impl Geometry {
    fn resolve(q: &ProbTable, constraints: &ConstraintSet) -> Result<Geometry> {
        let space = q.space();
        let marg_space = constraints.fixed_marginal.space();
        let names: Vec<String> = marg_space
            .vars()
            .iter()
            .map(|v| v.name().to_string())
            .collect();
        let positions = space.positions_of(&names)?;
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConstraint {
                name: "fixed_marginal".into(),
                detail: "marginal variables must be listed in table order".into(),
            });
        }
        for (&p, v) in positions.iter().zip(marg_space.vars()) {
            if space.var(p) != v {
                return Err(Error::InvalidConstraint {
                    name: "fixed_marginal".into(),
                    detail: format!(
                        "variable `{}` has different levels in the marginal and the table",
                        v.name()
                    ),
                });
            }
        }
        let projector = CellProjector::new(space, &positions);
        let fiber: Vec<usize> = (0..space.n_cells()).map(|i| projector.project(i)).collect();
        let u = constraints
            .moments
            .iter()
            .map(|m| m.dense_on(space))
            .collect::<Result<Vec<_>>>()?;
        Ok(Geometry {
            fiber,
            marginal: constraints.fixed_marginal.mass().to_vec(),
            u,
            targets: constraints.moments.iter().map(|m| m.target).collect(),
        })
    }

    fn n_fibers(&self) -> usize {
        self.marginal.len()
    }

    fn n_moments(&self) -> usize {
        self.targets.len()
    }
}

/// Exact attainable range of each moment over the fixed-marginal polytope,
/// restricted to the support of `q`. Errors with the constraint's name if a
/// target is outside its range (or inconsistent when the range degenerates).
pub fn check_feasibility(q: &ProbTable, constraints: &ConstraintSet) -> Result<()> {
    let geo = Geometry::resolve(q, constraints)?;
    feasibility_of(&geo, q, constraints)
}

fn feasibility_of(geo: &Geometry, q: &ProbTable, constraints: &ConstraintSet) -> Result<()> {
    for (k, m) in constraints.moments.iter().enumerate() {
        let mut lo_fiber = vec![f64::INFINITY; geo.n_fibers()];
        let mut hi_fiber = vec![f64::NEG_INFINITY; geo.n_fibers()];
        for (z, &a) in geo.fiber.iter().enumerate() {
            if q.mass()[z] > 0.0 {
                lo_fiber[a] = lo_fiber[a].min(geo.u[k][z]);
                hi_fiber[a] = hi_fiber[a].max(geo.u[k][z]);
            }
        }
        let mut lo = StableSum::new();
        let mut hi = StableSum::new();
        for a in 0..geo.n_fibers() {
            if geo.marginal[a] > 0.0 {
                if lo_fiber[a].is_infinite() {
                    return Err(Error::Infeasible {
                        name: m.name.clone(),
                        detail: format!(
                            "the fixed marginal puts mass on fiber {a}, where q has no support"
                        ),
                    });
                }
                lo.add(geo.marginal[a] * lo_fiber[a]);
                hi.add(geo.marginal[a] * hi_fiber[a]);
            }
        }
        let (lo, hi) = (lo.value(), hi.value());
        let scale = 1.0 + m.target.abs().max(hi.abs()).max(lo.abs());
        let span = hi - lo;
        if span <= 1e-10 * scale {
            // the fixed marginal already determines this expectation
            if (m.target - 0.5 * (lo + hi)).abs() > 1e-8 * scale {
                return Err(Error::Infeasible {
                    name: m.name.clone(),
                    detail: format!(
                        "the fixed marginal pins this moment to {:.12}, target is {:.12}",
                        0.5 * (lo + hi),
                        m.target
                    ),
                });
            }
        } else if m.target <= lo + 1e-12 * span || m.target >= hi - 1e-12 * span {
            return Err(Error::Infeasible {
                name: m.name.clone(),
                detail: format!(
                    "target {:.12} outside the attainable range [{lo:.12}, {hi:.12}]",
                    m.target
                ),
            });
        }
    }
    Ok(())
}

/// The f-divergence `I_f(P, Q) = Σ f_λ(P/Q)·Q`. Cells with `Q = 0` must
/// carry no `P` mass (dominance) and contribute zero.
pub fn f_divergence(p: &ProbTable, q: &ProbTable, gen: &FGenerator) -> Result<f64> {
    if p.space() != q.space() {
        return Err(Error::InvalidTable(
            "f_divergence requires tables over the same space".into(),
        ));
    }
    let mut acc = StableSum::new();
    for (z, (&pm, &qm)) in p.mass().iter().zip(q.mass()).enumerate() {
        if qm == 0.0 {
            if pm > 0.0 {
                return Err(Error::NotDominated(format!(
                    "P has mass {pm} at cell {z} where Q is zero"
                )));
            }
        } else {
            acc.add(gen.f_lambda(pm / qm)? * qm);
        }
    }
    Ok(acc.value())
}

/// Dual objective of the projection at dual point `(α, β)`:
/// `h(ν) = Σ_z Q(z)·f_λ*(s_z) − Σ_a α_a m_a − Σ_k β_k t_k` with
/// `s_z = α_{a(z)} + Σ_k β_k u_k(z)`. Minimizing `h` is equivalent to the
/// primal projection; its gradient is the constraint residual of `P(ν)`.
pub fn dual_objective(
    q: &ProbTable,
    constraints: &ConstraintSet,
    gen: &FGenerator,
    alpha: &[f64],
    beta: &[f64],
) -> Result<f64> {
    let geo = Geometry::resolve(q, constraints)?;
    if alpha.len() != geo.n_fibers() || beta.len() != geo.n_moments() {
        return Err(Error::InvalidConstraint {
            name: "dual point".into(),
            detail: "dual dimensions do not match the constraint set".into(),
        });
    }
    let mut acc = StableSum::new();
    for (z, &qm) in q.mass().iter().enumerate() {
        if qm == 0.0 || geo.marginal[geo.fiber[z]] == 0.0 {
            continue;
        }
        let mut s = alpha[geo.fiber[z]];
        for (k, u) in geo.u.iter().enumerate() {
            s += beta[k] * u[z];
        }
        acc.add(qm * gen.conjugate(s));
    }
    for (a, &m) in geo.marginal.iter().enumerate() {
        acc.add(-alpha[a] * m);
    }
    for (k, &t) in geo.targets.iter().enumerate() {
        acc.add(-beta[k] * t);
    }
    Ok(acc.value())
}

/// Analytic gradient of [`dual_objective`], returned as
/// `(marginal residuals, moment residuals)` of `P(ν)`.
pub fn dual_gradient(
    q: &ProbTable,
    constraints: &ConstraintSet,
    gen: &FGenerator,
    alpha: &[f64],
    beta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let geo = Geometry::resolve(q, constraints)?;
    let state = DualState::evaluate(&geo, q.mass(), gen, alpha, beta);
    Ok((state.g_marg, state.g_mom))
}

/// One dual evaluation: primal point, residuals, and curvature weights.
struct DualState {
    p: Vec<f64>,
    weight: Vec<f64>,
    g_marg: Vec<f64>,
    g_mom: Vec<f64>,
    finite: bool,
}

impl DualState {
    fn evaluate(geo: &Geometry, q: &[f64], gen: &FGenerator, alpha: &[f64], beta: &[f64]) -> Self {
        let n = q.len();
        let mut p = vec![0.0; n];
        let mut weight = vec![0.0; n];
        let mut marg_acc = vec![StableSum::new(); geo.n_fibers()];
        let mut mom_acc = vec![StableSum::new(); geo.n_moments()];
        let mut finite = true;
        for z in 0..n {
            let a = geo.fiber[z];
            if q[z] == 0.0 || geo.marginal[a] == 0.0 {
                continue;
            }
            let mut s = alpha[a];
            for (k, u) in geo.u.iter().enumerate() {
                s += beta[k] * u[z];
            }
            let r = gen.ratio(s);
            let pz = q[z] * r;
            if !pz.is_finite() {
                finite = false;
                break;
            }
            p[z] = pz;
            weight[z] = q[z] * gen.ratio_deriv(s);
            marg_acc[a].add(pz);
            for (k, u) in geo.u.iter().enumerate() {
                mom_acc[k].add(u[z] * pz);
            }
        }
        let g_marg: Vec<f64> = marg_acc
            .iter()
            .zip(&geo.marginal)
            .map(|(acc, m)| acc.value() - m)
            .collect();
        let g_mom: Vec<f64> = mom_acc
            .iter()
            .zip(&geo.targets)
            .map(|(acc, t)| acc.value() - t)
            .collect();
        DualState {
            p,
            weight,
            g_marg,
            g_mom,
            finite,
        }
    }

    fn merit(&self) -> f64 {
        if !self.finite {
            return f64::INFINITY;
        }
        let m = stable_sum(
            self.g_marg
                .iter()
                .chain(self.g_mom.iter())
                .map(|g| g * g),
        );
        if m.is_finite() {
            0.5 * m
        } else {
            f64::INFINITY
        }
    }

    fn residual_sup(&self) -> f64 {
        self.g_marg
            .iter()
            .chain(self.g_mom.iter())
            .fold(0.0f64, |acc, g| acc.max(g.abs()))
    }
}

/// f-projection of `q` onto the constraint set, by damped Newton on the dual.
pub fn project(
    q: &ProbTable,
    constraints: &ConstraintSet,
    gen: &FGenerator,
    options: &ProjectionOptions,
) -> Result<ProjectionResult> {
    let (q_work, smoothed) = prepare_base(q, options)?;
    let geo = Geometry::resolve(&q_work, constraints)?;
    feasibility_of(&geo, &q_work, constraints)?;

    let nf = geo.n_fibers();
    let nk = geo.n_moments();
    let mut alpha = vec![0.0; nf];
    let mut beta = vec![0.0; nk];
    if let Some(init) = &options.dual_init {
        if init.len() != nf + nk {
            return Err(Error::InvalidConstraint {
                name: "dual_init".into(),
                detail: format!("expected {} dual values, got {}", nf + nk, init.len()),
            });
        }
        alpha.copy_from_slice(&init[..nf]);
        beta.copy_from_slice(&init[nf..]);
    }

    let qm = q_work.mass();
    let mut state = DualState::evaluate(&geo, qm, gen, &alpha, &beta);
    if !state.finite {
        return Err(Error::NonConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    let mut iterations = 0;
    while state.residual_sup() >= options.tol {
        if iterations >= options.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: state.residual_sup(),
            });
        }
        iterations += 1;
        let (da, db) = newton_direction(&geo, &state);
        let merit = state.merit();
        let mut step = 1.0;
        loop {
            let trial_alpha: Vec<f64> = alpha
                .iter()
                .zip(&da)
                .map(|(a, d)| a + step * d)
                .collect();
            let trial_beta: Vec<f64> =
                beta.iter().zip(&db).map(|(b, d)| b + step * d).collect();
            let trial = DualState::evaluate(&geo, qm, gen, &trial_alpha, &trial_beta);
            if trial.merit() <= merit * (1.0 - 1e-4 * step) || trial.merit() < 1e-60 {
                alpha = trial_alpha;
                beta = trial_beta;
                state = trial;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::NonConvergence {
                    iterations,
                    residual: state.residual_sup(),
                });
            }
        }
    }

    // divergence from the final ratios, skipping zero-mass fibers
    let mut div = StableSum::new();
    for (z, &m) in qm.iter().enumerate() {
        if m > 0.0 {
            div.add(gen.f_raw(state.p[z] / m) * m);
        }
    }
    let marginal_residual = state.g_marg.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let moment_residual = state.g_mom.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    for (a, &m) in geo.marginal.iter().enumerate() {
        if m == 0.0 {
            alpha[a] = f64::NEG_INFINITY;
        }
    }
    Ok(ProjectionResult {
        table: ProbTable::from_normalized_unchecked(q.space().clone(), state.p),
        alpha,
        beta,
        marginal_residual,
        moment_residual,
        divergence: div.value(),
        iterations,
        smoothed,
    })
}

fn prepare_base(q: &ProbTable, options: &ProjectionOptions) -> Result<(ProbTable, bool)> {
    let zero_cells = q.mass().iter().filter(|&&m| m == 0.0).count();
    if zero_cells == 0 {
        return Ok((q.clone(), false));
    }
    if !options.smooth_zeros {
        let first = q.mass().iter().position(|&m| m == 0.0).unwrap();
        return Err(Error::InvalidTable(format!(
            "base table has {zero_cells} zero cell(s) (first at index {first}); \
             enable smooth_zeros or supply a strictly positive table"
        )));
    }
    let weights: Vec<f64> = q.mass().iter().map(|m| m + SMOOTHING_EPS).collect();
    Ok((ProbTable::from_weights(q.space().clone(), weights)?, true))
}

/// Newton direction via block elimination of the dual Hessian
/// `H = [D, B; Bᵀ, C]` with diagonal fiber block `D`.
fn newton_direction(geo: &Geometry, state: &DualState) -> (Vec<f64>, Vec<f64>) {
    let nf = geo.n_fibers();
    let nk = geo.n_moments();
    let mut d = vec![0.0; nf];
    let mut b = vec![vec![0.0; nk]; nf];
    let mut c = nalgebra::DMatrix::<f64>::zeros(nk, nk);
    for (z, &w) in state.weight.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let a = geo.fiber[z];
        d[a] += w;
        for k in 0..nk {
            b[a][k] += w * geo.u[k][z];
            for l in k..nk {
                c[(k, l)] += w * geo.u[k][z] * geo.u[l][z];
            }
        }
    }
    for k in 0..nk {
        for l in 0..k {
            c[(k, l)] = c[(l, k)];
        }
    }
    let scale = d
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max((0..nk).map(|k| c[(k, k)]).fold(0.0, f64::max))
        .max(1.0);
    let mut ridge = 1e-12 * scale;
    loop {
        // Schur complement S = C + ridge - Bᵀ (D + ridge)⁻¹ B
        let mut s = c.clone();
        for k in 0..nk {
            s[(k, k)] += ridge;
        }
        let mut rhs_beta = nalgebra::DVector::<f64>::from_fn(nk, |k, _| -state.g_mom[k]);
        for a in 0..nf {
            let da = d[a] + ridge;
            if da <= 0.0 {
                continue;
            }
            for k in 0..nk {
                rhs_beta[k] += b[a][k] * state.g_marg[a] / da;
                for l in 0..nk {
                    s[(k, l)] -= b[a][k] * b[a][l] / da;
                }
            }
        }
        let solved = if nk == 0 {
            Some(nalgebra::DVector::<f64>::zeros(0))
        } else {
            s.clone().cholesky().map(|ch| ch.solve(&rhs_beta))
        };
        if let Some(db) = solved {
            let mut da_out = vec![0.0; nf];
            for a in 0..nf {
                let dd = d[a] + ridge;
                if dd <= 0.0 {
                    continue;
                }
                let mut by = 0.0;
                for k in 0..nk {
                    by += b[a][k] * db[k];
                }
                da_out[a] = (-state.g_marg[a] - by) / dd;
            }
            return (da_out, db.iter().cloned().collect());
        }
        ridge *= 100.0;
        if ridge > 1e3 * scale {
            // fall back to a plain gradient descent direction
            return (
                state.g_marg.iter().map(|g| -g).collect(),
                state.g_mom.iter().map(|g| -g).collect(),
            );
        }
    }
}

/// Sup-norm of the off-span part of `f_λ'(P/Q)` after least-squares fitting
/// onto the span of fiber indicators and moment functions. Near zero exactly
/// when `P` admits the additive dual decomposition for the constraint set.
pub fn additive_decomposition_residual(
    p: &ProbTable,
    q: &ProbTable,
    constraints: &ConstraintSet,
    gen: &FGenerator,
) -> Result<f64> {
    if p.space() != q.space() {
        return Err(Error::InvalidTable(
            "decomposition residual requires tables over the same space".into(),
        ));
    }
    let geo = Geometry::resolve(q, constraints)?;
    let mut support = Vec::new();
    for (z, (&pm, &qm)) in p.mass().iter().zip(q.mass()).enumerate() {
        if qm == 0.0 {
            if pm > 0.0 {
                return Err(Error::NotDominated(format!(
                    "P has mass {pm} at cell {z} where Q is zero"
                )));
            }
            continue;
        }
        if pm <= 0.0 {
            return Err(Error::InvalidTable(format!(
                "P must be positive on the support of Q (cell {z} is zero)"
            )));
        }
        support.push(z);
    }
    let n = support.len();
    let nf = geo.n_fibers();
    let nk = geo.n_moments();
    let mut design = nalgebra::DMatrix::<f64>::zeros(n, nf + nk);
    let mut v = nalgebra::DVector::<f64>::zeros(n);
    for (row, &z) in support.iter().enumerate() {
        v[row] = gen.f_prime(p.mass()[z] / q.mass()[z]);
        design[(row, geo.fiber[z])] = 1.0;
        for k in 0..nk {
            design[(row, nf + k)] = geo.u[k][z];
        }
    }
    let svd = design.svd(true, true);
    let coef = svd
        .solve(&v, 1e-12)
        .map_err(|e| Error::InvalidTable(format!("least-squares failure: {e}")))?;
    let mut resid = 0.0f64;
    for (row, &z) in support.iter().enumerate() {
        let mut fit = coef[geo.fiber[z]];
        for k in 0..nk {
            fit += geo.u[k][z] * coef[nf + k];
        }
        resid = resid.max((v[row] - fit).abs());
    }
    Ok(resid)
}
