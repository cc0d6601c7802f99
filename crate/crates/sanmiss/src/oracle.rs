//! Reference solvers for cross-checking [`crate::projection::project`].
//!
//! Two independent methods are provided:
//!
//! * [`project_oracle`]: a penalized-descent solver (augmented Lagrangian
//!   outer loop, Barzilai-Borwein projected gradient inner loop, multiple
//!   starting points) that never forms the dual problem;
//! * [`kl_iterative_scaling`]: cyclic I-projections (iterative proportional
//!   fitting for the fixed marginal, one-dimensional exponential tilts for
//!   each moment), valid for the KL objective that the logit generator
//!   reduces to.
//!
//! Both return raw mass vectors so callers can compare solvers without going
//! through table constructors that renormalize.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::link::FGenerator;
use crate::projection::ConstraintSet;
use crate::table::{CellProjector, ProbTable, StableSum};

/// Resolved constraint geometry on the support cells of `q`.
struct Posed {
    /// Indices of cells that can carry mass.
    support: Vec<usize>,
    /// Base masses on the support.
    q: Vec<f64>,
    /// Fiber index per support cell.
    fiber: Vec<usize>,
    /// Fiber targets.
    marginal: Vec<f64>,
    /// Moment rows restricted to the support.
    u: Vec<Vec<f64>>,
    /// Moment targets.
    targets: Vec<f64>,
    n_full: usize,
}

impl Posed {
    fn new(q: &ProbTable, constraints: &ConstraintSet) -> Result<Posed> {
        let space = q.space();
        let marg_space = constraints.fixed_marginal.space();
        let names: Vec<String> = marg_space
            .vars()
            .iter()
            .map(|v| v.name().to_string())
            .collect();
        let positions = space.positions_of(&names)?;
        let projector = CellProjector::new(space, &positions);
        let marginal = constraints.fixed_marginal.mass().to_vec();
        let dense: Vec<Vec<f64>> = constraints
            .moments
            .iter()
            .map(|m| m.dense_on(space))
            .collect::<Result<Vec<_>>>()?;
        let mut support = Vec::new();
        let mut fiber = Vec::new();
        for z in 0..space.n_cells() {
            let a = projector.project(z);
            if q.mass()[z] > 0.0 && marginal[a] > 0.0 {
                support.push(z);
                fiber.push(a);
            }
        }
        if support.is_empty() {
            return Err(Error::InvalidTable(
                "base table has no support compatible with the fixed marginal".into(),
            ));
        }
        let qs: Vec<f64> = support.iter().map(|&z| q.mass()[z]).collect();
        let u: Vec<Vec<f64>> = dense
            .iter()
            .map(|row| support.iter().map(|&z| row[z]).collect())
            .collect();
        Ok(Posed {
            support,
            q: qs,
            fiber,
            marginal,
            u,
            targets: constraints.moments.iter().map(|m| m.target).collect(),
            n_full: space.n_cells(),
        })
    }

    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        let mut marg = vec![StableSum::new(); self.marginal.len()];
        for (i, &pi) in p.iter().enumerate() {
            marg[self.fiber[i]].add(pi);
        }
        let mut c: Vec<f64> = marg
            .iter()
            .zip(&self.marginal)
            .map(|(s, m)| s.value() - m)
            .collect();
        for (k, u) in self.u.iter().enumerate() {
            let mut s = StableSum::new();
            for (i, &pi) in p.iter().enumerate() {
                s.add(u[i] * pi);
            }
            c.push(s.value() - self.targets[k]);
        }
        c
    }

    fn expand(&self, p: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_full];
        for (i, &z) in self.support.iter().enumerate() {
            full[z] = p[i];
        }
        full
    }
}

/// Euclidean projection onto the simplex `{p ≥ 0, Σp = total}`.
fn project_simplex(v: &mut [f64], total: f64) {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - total) / (i + 1) as f64;
        if i + 1 == sorted.len() || sorted[i + 1] <= t {
            if s > t {
                theta = t;
                break;
            }
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn objective(posed: &Posed, gen: &FGenerator, p: &[f64]) -> f64 {
    let mut acc = StableSum::new();
    for (i, &q) in posed.q.iter().enumerate() {
        let ratio = (p[i] / q).max(1e-300);
        acc.add(gen.f_raw(ratio) * q);
    }
    acc.value()
}

fn al_gradient(posed: &Posed, gen: &FGenerator, p: &[f64], mu: &[f64], rho: f64) -> Vec<f64> {
    let c = posed.residuals(p);
    let nf = posed.marginal.len();
    let mut grad = vec![0.0; p.len()];
    for (i, &q) in posed.q.iter().enumerate() {
        let ratio = (p[i] / q).max(1e-300);
        let mut g = gen.f_prime(ratio);
        let a = posed.fiber[i];
        g += mu[a] + rho * c[a];
        for (k, u) in posed.u.iter().enumerate() {
            g += (mu[nf + k] + rho * c[nf + k]) * u[i];
        }
        grad[i] = g;
    }
    grad
}

fn al_run(posed: &Posed, gen: &FGenerator, start: Vec<f64>) -> (Vec<f64>, f64, f64) {
    let total: f64 = posed.marginal.iter().sum();
    let n_con = posed.marginal.len() + posed.targets.len();
    let mut p = start;
    project_simplex(&mut p, total);
    let mut mu = vec![0.0; n_con];
    let mut rho = 10.0;
    // the iterate can degrade once rho amplifies rounding noise in the
    // residuals, so keep the most feasible point seen
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _outer in 0..30 {
        let mut grad = al_gradient(posed, gen, &p, &mu, rho);
        let mut eta = 1e-3 / rho;
        let mut p_prev = p.clone();
        let mut g_prev = grad.clone();
        for _inner in 0..600 {
            let mut trial: Vec<f64> = p.iter().zip(&grad).map(|(x, g)| x - eta * g).collect();
            project_simplex(&mut trial, total);
            let moved = trial
                .iter()
                .zip(&p)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            p_prev.copy_from_slice(&p);
            g_prev.copy_from_slice(&grad);
            p = trial;
            if moved < 1e-15 {
                break;
            }
            grad = al_gradient(posed, gen, &p, &mu, rho);
            let mut sy = 0.0;
            let mut ss = 0.0;
            for i in 0..p.len() {
                let dp = p[i] - p_prev[i];
                let dg = grad[i] - g_prev[i];
                sy += dp * dg;
                ss += dp * dp;
            }
            eta = if sy > 0.0 && ss > 0.0 {
                (ss / sy).clamp(1e-12, 1e3)
            } else {
                1e-3 / rho
            };
        }
        let c = posed.residuals(&p);
        let feas = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if best.as_ref().is_none_or(|(_, bf)| feas < *bf) {
            best = Some((p.clone(), feas));
        }
        if feas < 1e-12 {
            break;
        }
        for (m, ci) in mu.iter_mut().zip(&c) {
            *m += rho * ci;
        }
        rho = (rho * 2.5).min(1e9);
    }
    let (p, feas) = best.expect("at least one outer iteration ran");
    let obj = objective(posed, gen, &p);
    (p, feas, obj)
}

/// Penalized-descent reference projection. Runs from several starting points
/// and returns the mass vector of the best run (feasibility first, then
/// objective). Deterministic given `seed`.
pub fn project_oracle(
    q: &ProbTable,
    constraints: &ConstraintSet,
    gen: &FGenerator,
    seed: u64,
) -> Result<Vec<f64>> {
    let posed = Posed::new(q, constraints)?;
    let total: f64 = posed.marginal.iter().sum();
    let n = posed.support.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = vec![
        posed.q.clone(),
        vec![total / n as f64; n],
    ];
    let mut random: Vec<f64> = (0..n).map(|_| -(rng.random::<f64>().max(1e-12)).ln()).collect();
    let rs: f64 = random.iter().sum();
    for x in random.iter_mut() {
        *x *= total / rs;
    }
    starts.push(random);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for start in starts {
        let (p, feas, obj) = al_run(&posed, gen, start);
        let better = match &best {
            None => true,
            Some((_, bf, bo)) => {
                if (feas - bf).abs() > 1e-11 {
                    feas < *bf
                } else {
                    obj < *bo
                }
            }
        };
        if better {
            best = Some((p, feas, obj));
        }
    }
    let (p, feas, _) = best.unwrap();
    if feas > 1e-7 {
        return Err(Error::NonConvergence {
            iterations: 30,
            residual: feas,
        });
    }
    Ok(posed.expand(&p))
}

/// Cyclic I-projections for the KL objective: an iterative-proportional-
/// fitting pass for the fixed marginal alternating with an exponential tilt
/// `P ∝ P·e^{μ·u}` solved for each moment by bisection on `E[u] = t`.
pub fn kl_iterative_scaling(
    q: &ProbTable,
    constraints: &ConstraintSet,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let posed = Posed::new(q, constraints)?;
    let mut p = posed.q.clone();
    let total: f64 = posed.marginal.iter().sum();
    let scale: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x *= total / scale;
    }
    for _ in 0..max_iter {
        // marginal pass
        let mut sums = vec![StableSum::new(); posed.marginal.len()];
        for (i, &pi) in p.iter().enumerate() {
            sums[posed.fiber[i]].add(pi);
        }
        let factors: Vec<f64> = sums
            .iter()
            .zip(&posed.marginal)
            .map(|(s, m)| if s.value() > 0.0 { m / s.value() } else { 0.0 })
            .collect();
        for (i, x) in p.iter_mut().enumerate() {
            *x *= factors[posed.fiber[i]];
        }
        // moment tilts
        for (k, u) in posed.u.iter().enumerate() {
            let t = posed.targets[k];
            tilt_to_target(&mut p, u, t)?;
        }
        let c = posed.residuals(&p);
        let feas = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if feas < tol {
            return Ok(posed.expand(&p));
        }
    }
    let c = posed.residuals(&p);
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: c.iter().fold(0.0f64, |m, x| m.max(x.abs())),
    })
}

/// Replace `p` by `p·e^{μ(u-t)}` normalized to the same total, with `μ`
/// chosen so that `E[u] = t`. Requires `t` strictly inside the attainable
/// range of `u` over the support of `p`.
fn tilt_to_target(p: &mut [f64], u: &[f64], t: f64) -> Result<()> {
    let total: f64 = p.iter().sum();
    let g = |mu: f64| -> f64 {
        let mut num = StableSum::new();
        for (i, &pi) in p.iter().enumerate() {
            if pi > 0.0 {
                num.add(pi * ((mu * (u[i] - t)).min(700.0)).exp() * (u[i] - t));
            }
        }
        num.value()
    };
    if g(0.0).abs() < 1e-300 {
        return Ok(());
    }
    let spread = u
        .iter()
        .zip(p.iter())
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(&ui, _)| (ui - t).abs())
        .fold(0.0f64, f64::max);
    if spread == 0.0 {
        return Err(Error::Infeasible {
            name: "tilt".into(),
            detail: "moment function is constant on the support".into(),
        });
    }
    let limit = 600.0 / spread;
    let (mut lo, mut hi) = (-limit, limit);
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::Infeasible {
            name: "tilt".into(),
            detail: "moment target outside the attainable range".into(),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    for (i, x) in p.iter_mut().enumerate() {
        *x *= ((mu * (u[i] - t)).min(700.0)).exp();
    }
    let new_total: f64 = p.iter().sum();
    for x in p.iter_mut() {
        *x *= total / new_total;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::Link;
    use crate::projection::{project, ProjectionOptions};
    use crate::space::{Space, Variable};
    use crate::table::MomentConstraint;

    fn instance() -> (ProbTable, ConstraintSet) {
        let space = Space::new(vec![
            Variable::new("x", &["0", "1"]).unwrap(),
            Variable::new("y", &["0", "1", "2"]).unwrap(),
        ])
        .unwrap();
        let w = vec![1.0, 2.0, 1.5, 0.8, 1.2, 0.5];
        let q = ProbTable::from_weights(space.clone(), w).unwrap();
        let marg = ProbTable::from_probabilities(space.select(&[0]), vec![0.55, 0.45]).unwrap();
        let u = MomentConstraint::new("mean_y", vec!["y".into()], vec![0.0, 1.0, 2.0], 0.9)
            .unwrap();
        (q, ConstraintSet::new(marg, vec![u]))
    }

    #[test]
    fn oracle_matches_newton_logit() {
        let (q, cs) = instance();
        let gen = FGenerator::new(Link::Logit, 1.3).unwrap();
        let newton = project(&q, &cs, &gen, &ProjectionOptions::default()).unwrap();
        let oracle = project_oracle(&q, &cs, &gen, 7).unwrap();
        for (a, b) in newton.table.mass().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "newton {a} vs oracle {b}");
        }
    }

    #[test]
    fn oracle_matches_newton_probit() {
        let (q, cs) = instance();
        let gen = FGenerator::new(Link::Probit, 0.7).unwrap();
        let newton = project(&q, &cs, &gen, &ProjectionOptions::default()).unwrap();
        let oracle = project_oracle(&q, &cs, &gen, 11).unwrap();
        for (a, b) in newton.table.mass().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "newton {a} vs oracle {b}");
        }
    }

    #[test]
    fn logit_projection_equals_kl_projection_any_c() {
        let (q, cs) = instance();
        let scaling = kl_iterative_scaling(&q, &cs, 1e-13, 100_000).unwrap();
        for c in [0.3, 1.0, 4.0] {
            let gen = FGenerator::new(Link::Logit, c).unwrap();
            let newton = project(&q, &cs, &gen, &ProjectionOptions::default()).unwrap();
            for (a, b) in newton.table.mass().iter().zip(&scaling) {
                assert!(
                    (a - b).abs() < 1e-9,
                    "c = {c}: newton {a} vs scaling {b}"
                );
            }
        }
    }

    #[test]
    fn simplex_projection_properties() {
        let mut v = vec![0.3, -0.1, 0.9, 0.05];
        project_simplex(&mut v, 1.0);
        let sum: f64 = v.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
        // a point already on the simplex is fixed
        let mut w = vec![0.25, 0.25, 0.25, 0.25];
        project_simplex(&mut w, 1.0);
        for (a, b) in w.iter().zip([0.25; 4]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
