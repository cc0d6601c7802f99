//! One-step Markov kernels for the mechanism-coefficient blocks.
//!
//! Each mechanism step `j` is a binary regression of `M_j` on cell-indicator
//! dummies, `lambda{P(M_j = 1 | .)} = sum_k gamma_k u_k`, with independent
//! `N(0, sd_k^2)` priors. Three kernels leave the conditional posterior
//! invariant: Polya-Gamma augmentation (logit), truncated-normal
//! data augmentation (probit), and componentwise random-walk Metropolis
//! (any link).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::pg::sample_pg1;
use crate::link::{norm_cdf, Link};

/// 0/1 design in sparse form: the active coefficient indices of each row.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n_coeffs: usize,
    rows: Vec<Vec<u32>>,
    rows_of_coeff: Vec<Vec<u32>>,
}

impl DesignMatrix {
    pub fn new(n_coeffs: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let mut rows_of_coeff = vec![Vec::new(); n_coeffs];
        for (i, row) in rows.iter().enumerate() {
            for &k in row {
                if k as usize >= n_coeffs {
                    return Err(Error::InvalidModel(format!(
                        "design row {i} references coefficient {k}, but only {n_coeffs} exist"
                    )));
                }
                rows_of_coeff[k as usize].push(i as u32);
            }
        }
        Ok(DesignMatrix {
            n_coeffs,
            rows,
            rows_of_coeff,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    /// Linear predictor of every row under `coeffs`.
    pub fn linear_predictors(&self, coeffs: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&k| coeffs[k as usize]).sum())
            .collect()
    }
}

/// Conditional-update kernel for a coefficient block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMethod {
    PolyaGamma,
    TruncatedNormal,
    RandomWalk,
}

impl UpdateMethod {
    pub fn name(&self) -> &'static str {
        match self {
            UpdateMethod::PolyaGamma => "polya_gamma",
            UpdateMethod::TruncatedNormal => "truncated_normal",
            UpdateMethod::RandomWalk => "random_walk",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "polya_gamma" => Ok(UpdateMethod::PolyaGamma),
            "truncated_normal" => Ok(UpdateMethod::TruncatedNormal),
            "random_walk" => Ok(UpdateMethod::RandomWalk),
            other => Err(Error::InvalidConfig(format!(
                "unknown update method `{other}`"
            ))),
        }
    }
}

/// Result of one kernel application.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub coeffs: Vec<f64>,
    pub accepted: u64,
    pub proposed: u64,
}

const RW_STEP: f64 = 0.25;

/// One Markov-kernel step on a coefficient block, leaving the conditional
/// posterior given `(design, responses)` invariant.
pub fn logistic_conditional_update<R: Rng + ?Sized>(
    link: Link,
    coeffs: &[f64],
    design: &DesignMatrix,
    responses: &[bool],
    prior_sd: &[f64],
    method: UpdateMethod,
    rng: &mut R,
) -> Result<UpdateOutcome> {
    if coeffs.len() != design.n_coeffs() || prior_sd.len() != design.n_coeffs() {
        return Err(Error::InvalidModel(format!(
            "coefficient block of size {} does not match design with {} columns",
            coeffs.len(),
            design.n_coeffs()
        )));
    }
    if responses.len() != design.n_rows() {
        return Err(Error::InvalidModel(format!(
            "{} responses for {} design rows",
            responses.len(),
            design.n_rows()
        )));
    }
    if prior_sd.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidModel(
            "prior standard deviations must be positive and finite".into(),
        ));
    }
    match (method, link) {
        (UpdateMethod::PolyaGamma, Link::Logit) => polya_gamma_step(coeffs, design, responses, prior_sd, rng),
        (UpdateMethod::PolyaGamma, other) => Err(Error::InvalidConfig(format!(
            "the Polya-Gamma kernel requires the logit link, got {}",
            other.name()
        ))),
        (UpdateMethod::TruncatedNormal, Link::Probit) => {
            albert_chib_step(coeffs, design, responses, prior_sd, rng)
        }
        (UpdateMethod::TruncatedNormal, other) => Err(Error::InvalidConfig(format!(
            "the truncated-normal kernel requires the probit link, got {}",
            other.name()
        ))),
        (UpdateMethod::RandomWalk, link) => {
            random_walk_step(link, coeffs, design, responses, prior_sd, rng)
        }
    }
}

/// Gaussian block draw shared by the two augmentation kernels: precision
/// `B^-1 + X^T diag(w) X`, right-hand side `X^T v`.
fn gaussian_block_draw<R: Rng + ?Sized>(
    design: &DesignMatrix,
    weights: &[f64],
    rhs_per_row: &[f64],
    prior_sd: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = design.n_coeffs();
    let mut prec = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for k in 0..d {
        prec[(k, k)] = 1.0 / (prior_sd[k] * prior_sd[k]);
    }
    for (i, row) in design.rows().iter().enumerate() {
        for &a in row {
            rhs[a as usize] += rhs_per_row[i];
            for &b in row {
                prec[(a as usize, b as usize)] += weights[i];
            }
        }
    }
    let chol = Cholesky::new(prec).ok_or_else(|| {
        Error::NumericalFailure("coefficient full-conditional precision is not positive definite".into())
    })?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    // solve L^T x = z so that x ~ N(0, P^-1)
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed in block draw".into()))?;
    Ok((mean + x).iter().copied().collect())
}

fn polya_gamma_step<R: Rng + ?Sized>(
    coeffs: &[f64],
    design: &DesignMatrix,
    responses: &[bool],
    prior_sd: &[f64],
    rng: &mut R,
) -> Result<UpdateOutcome> {
    let eta = design.linear_predictors(coeffs);
    let weights: Vec<f64> = eta.iter().map(|&e| sample_pg1(rng, e)).collect();
    let rhs: Vec<f64> = responses.iter().map(|&y| if y { 0.5 } else { -0.5 }).collect();
    let coeffs = gaussian_block_draw(design, &weights, &rhs, prior_sd, rng)?;
    Ok(UpdateOutcome {
        coeffs,
        accepted: 0,
        proposed: 0,
    })
}

fn albert_chib_step<R: Rng + ?Sized>(
    coeffs: &[f64],
    design: &DesignMatrix,
    responses: &[bool],
    prior_sd: &[f64],
    rng: &mut R,
) -> Result<UpdateOutcome> {
    let eta = design.linear_predictors(coeffs);
    let mut latent = vec![0.0; eta.len()];
    for (i, (&e, &y)) in eta.iter().zip(responses).enumerate() {
        latent[i] = if y {
            e + std_normal_above(rng, -e)
        } else {
            e - std_normal_above(rng, e)
        };
    }
    let weights = vec![1.0; eta.len()];
    let coeffs = gaussian_block_draw(design, &weights, &latent, prior_sd, rng)?;
    Ok(UpdateOutcome {
        coeffs,
        accepted: 0,
        proposed: 0,
    })
}

/// Standard normal conditioned on `Z > a`; rejection from the untruncated
/// law near the bulk, shifted-exponential proposals in the tail.
fn std_normal_above<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    if a < 0.4 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let x = a - (1.0 - rng.random::<f64>()).ln() / lambda;
        let d = x - lambda;
        if rng.random::<f64>() <= (-0.5 * d * d).exp() {
            return x;
        }
    }
}

fn random_walk_step<R: Rng + ?Sized>(
    link: Link,
    coeffs: &[f64],
    design: &DesignMatrix,
    responses: &[bool],
    prior_sd: &[f64],
    rng: &mut R,
) -> Result<UpdateOutcome> {
    let mut cur = coeffs.to_vec();
    let mut eta = design.linear_predictors(&cur);
    let mut accepted = 0u64;
    let mut proposed = 0u64;
    for k in 0..cur.len() {
        let step: f64 = rng.sample::<f64, _>(StandardNormal) * RW_STEP;
        let cand = cur[k] + step;
        let mut delta = (cur[k] * cur[k] - cand * cand) / (2.0 * prior_sd[k] * prior_sd[k]);
        for &i in &design.rows_of_coeff[k] {
            let i = i as usize;
            let new_eta = eta[i] + step;
            delta += bernoulli_loglik(link, new_eta, responses[i])
                - bernoulli_loglik(link, eta[i], responses[i]);
        }
        proposed += 1;
        if delta >= 0.0 || rng.random::<f64>() < delta.exp() {
            accepted += 1;
            cur[k] = cand;
            for &i in &design.rows_of_coeff[k] {
                eta[i as usize] += step;
            }
        }
    }
    Ok(UpdateOutcome {
        coeffs: cur,
        accepted,
        proposed,
    })
}

/// `log P(M = m | eta)` for a Bernoulli response under the link, in forms
/// stable across the whole real line.
pub fn bernoulli_loglik(link: Link, eta: f64, m: bool) -> f64 {
    match link {
        Link::Logit => {
            let s = if m { -eta } else { eta };
            -softplus(s)
        }
        Link::Probit => {
            if m {
                log_norm_cdf(eta)
            } else {
                log_norm_cdf(-eta)
            }
        }
        Link::Cloglog => {
            let g = eta.min(700.0).exp();
            if m {
                // log(1 - exp(-g))
                (-(-g).exp_m1()).ln()
            } else {
                -g
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_norm_cdf(x: f64) -> f64 {
    if x > -8.0 {
        norm_cdf(x).ln()
    } else {
        // asymptotic tail expansion of Mills' ratio
        let x2 = x * x;
        -0.5 * x2 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (-x).ln()
            + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}
