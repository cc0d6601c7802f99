//! Link functions and the induced convex generators.
//!
//! A link `λ` is a strictly increasing bijection from `(0, 1)` onto an
//! interval of the extended reals (logit, probit, or complementary log-log).
//! Together with the odds factor `c > 0` it induces the generator
//!
//! ```text
//! f_λ(z) = ∫_0^z λ( v / (c + v) ) dv ,   z ≥ 0,
//! ```
//!
//! which is strictly convex because the integrand is strictly increasing.
//! Its derivative `f_λ'(z) = λ(z/(c+z))` and the inverse of that derivative
//! `r(s) = c · λ⁻¹(s) / (1 − λ⁻¹(s))` are the quantities the projection
//! solver works with; `f_λ` itself is only needed to report divergence
//! values. For the logit link `f_λ(z) = z·log(z/c) − z` in closed form
//! (with `0·log 0 = 0`); for probit and cloglog the generator is evaluated
//! by adaptive quadrature (absolute tolerance `1e-12`) accumulated on a
//! cached geometric grid.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506628274631000502415765284811;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal distribution function, accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal quantile: rational initial guess refined by two Halley
/// steps against [`norm_cdf`], giving full double-precision round-trips.
pub fn norm_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    for _ in 0..2 {
        let pdf = norm_pdf(x);
        if pdf <= f64::MIN_POSITIVE {
            break;
        }
        // evaluate the error through the smaller tail to avoid cancellation
        let err = if p > 0.5 {
            (1.0 - p) - norm_sf(x)
        } else {
            norm_cdf(x) - p
        };
        let u = err / pdf;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// The three supported link functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
    Cloglog,
}

impl Link {
    pub fn name(&self) -> &'static str {
        match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
            Link::Cloglog => "cloglog",
        }
    }

    pub fn from_name(name: &str) -> Result<Link> {
        match name {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            "cloglog" => Ok(Link::Cloglog),
            other => Err(Error::InvalidConfig(format!("unknown link `{other}`"))),
        }
    }

    /// `λ(p)` for `p ∈ (0, 1)`.
    pub fn eval(&self, p: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&p));
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Probit => norm_quantile(p),
            Link::Cloglog => (-(-p).ln_1p()).ln(),
        }
    }

    /// `λ⁻¹(t)`, defined for all real `t`; may underflow to 0 or round to 1
    /// at extreme arguments.
    pub fn inverse(&self, t: f64) -> f64 {
        match self {
            Link::Logit => 1.0 / (1.0 + (-t).exp()),
            Link::Probit => norm_cdf(t),
            Link::Cloglog => -(-t.exp()).exp_m1(),
        }
    }

    /// `dλ/dp`, used by the quadrature backing the generator.
    pub fn deriv(&self, p: f64) -> f64 {
        match self {
            Link::Logit => 1.0 / (p * (1.0 - p)),
            Link::Probit => 1.0 / norm_pdf(norm_quantile(p)),
            Link::Cloglog => {
                let l = -(-p).ln_1p(); // -log(1-p)
                1.0 / ((1.0 - p) * l)
            }
        }
    }

    /// `lim_{p→0} p·λ'(p)`: 1 for logit and cloglog, 0 for probit.
    fn p_deriv_limit0(&self) -> f64 {
        match self {
            Link::Probit => 0.0,
            _ => 1.0,
        }
    }
}

/// Geometric grid caching cumulative integrals of `λ(v/(c+v))`.
#[derive(Debug)]
struct CumGrid {
    nodes: Vec<f64>,
    cum: Vec<f64>,
}

/// Generator `f_λ` for a link and odds factor `c = (1 − π)/π`.
#[derive(Debug)]
pub struct FGenerator {
    link: Link,
    c: f64,
    grid: OnceLock<CumGrid>,
}

const GRID_MIN: f64 = 1e-12;
const GRID_RATIO: f64 = 1.5;
const GRID_MAX: f64 = 1e6;
const SEGMENT_TOL: f64 = 1e-14;

impl FGenerator {
    pub fn new(link: Link, c: f64) -> Result<Self> {
        if !c.is_finite() || c <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "odds factor c = {c} must be finite and positive"
            )));
        }
        Ok(FGenerator {
            link,
            c,
            grid: OnceLock::new(),
        })
    }

    /// Generator for missingness probability `π ∈ (0, 1)`: `c = (1−π)/π`.
    pub fn from_pi(link: Link, pi: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidModel(format!(
                "missingness probability pi = {pi} must lie in (0, 1)"
            )));
        }
        FGenerator::new(link, (1.0 - pi) / pi)
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `f_λ(z)` for `z ≥ 0`.
    pub fn f_lambda(&self, z: f64) -> Result<f64> {
        if !z.is_finite() || z < 0.0 {
            return Err(Error::InvalidTable(format!(
                "f_lambda requires a finite ratio z >= 0, got {z}"
            )));
        }
        Ok(self.f_raw(z))
    }

    pub(crate) fn f_raw(&self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        if let Link::Logit = self.link {
            return z * (z / self.c).ln() - z;
        }
        let grid = self.grid.get_or_init(|| self.build_grid());
        if z < GRID_MIN {
            return self.head_integral(z);
        }
        // integrate the remainder from the last grid node below z
        let k = match grid.nodes.binary_search_by(|n| n.partial_cmp(&z).unwrap()) {
            Ok(k) => return grid.cum[k],
            Err(k) => k - 1,
        };
        grid.cum[k] + self.segment_integral(grid.nodes[k], z)
    }

    /// `f_λ'(z) = λ(z/(c+z))` for `z > 0`.
    pub fn f_prime(&self, z: f64) -> f64 {
        self.lambda_of_odds(z)
    }

    /// `λ(v/(c+v))` evaluated directly from `v`. Forming `p = v/(c+v)` first
    /// loses tail precision once `p` rounds near 1, which turns the integrand
    /// into a staircase; routing through the complementary mass `c/(c+v)`
    /// keeps full relative accuracy for every `v`.
    fn lambda_of_odds(&self, v: f64) -> f64 {
        let c = self.c;
        match self.link {
            Link::Logit => (v / c).ln(),
            Link::Probit => {
                if v <= c {
                    norm_quantile(v / (c + v))
                } else {
                    -norm_quantile(c / (c + v))
                }
            }
            Link::Cloglog => (v / c).ln_1p().ln(),
        }
    }

    /// `r(s) = (f_λ')⁻¹(s) = c·λ⁻¹(s)/(1 − λ⁻¹(s))`, evaluated in a form
    /// stable in both tails. May overflow to `+∞` for extreme `s`.
    pub fn ratio(&self, s: f64) -> f64 {
        let c = self.c;
        match self.link {
            Link::Logit => c * s.min(700.0).exp(),
            Link::Probit => c * norm_cdf(s) / norm_sf(s),
            Link::Cloglog => c * s.min(700.0).exp().exp_m1(),
        }
    }

    /// `r'(s)`, the curvature weight of the dual Hessian.
    pub fn ratio_deriv(&self, s: f64) -> f64 {
        let c = self.c;
        match self.link {
            Link::Logit => c * s.min(700.0).exp(),
            Link::Probit => {
                let sf = norm_sf(s);
                c * norm_pdf(s) / (sf * sf)
            }
            Link::Cloglog => {
                let g = s.min(700.0).exp();
                c * (g + s.min(700.0)).min(700.0).exp()
            }
        }
    }

    /// Convex conjugate `f_λ*(s) = s·r(s) − f_λ(r(s))`; the dual objective
    /// of the projection is built from it.
    pub fn conjugate(&self, s: f64) -> f64 {
        match self.link {
            Link::Logit => self.c * s.min(700.0).exp(),
            _ => {
                let r = self.ratio(s);
                s * r - self.f_raw(r)
            }
        }
    }

    fn build_grid(&self) -> CumGrid {
        let mut nodes = vec![0.0, GRID_MIN];
        while *nodes.last().unwrap() < GRID_MAX {
            nodes.push(nodes.last().unwrap() * GRID_RATIO);
        }
        let mut cum = Vec::with_capacity(nodes.len());
        cum.push(0.0);
        cum.push(self.head_integral(GRID_MIN));
        for w in nodes.windows(2).skip(1) {
            let last = *cum.last().unwrap();
            cum.push(last + self.segment_integral(w[0], w[1]));
        }
        CumGrid { nodes, cum }
    }

    /// `∫_0^a λ(v/(c+v)) dv` by parts, avoiding the integrable singularity:
    /// `a·λ(a/(c+a)) − ∫_0^a v λ'(v/(c+v)) c/(c+v)² dv`.
    fn head_integral(&self, a: f64) -> f64 {
        let c = self.c;
        let boundary = a * self.lambda_of_odds(a);
        let w = |v: f64| -> f64 {
            if v == 0.0 {
                return self.link.p_deriv_limit0();
            }
            let p = v / (c + v);
            v * self.link.deriv(p) * c / ((c + v) * (c + v))
        };
        boundary - adaptive_simpson(&w, 0.0, a, SEGMENT_TOL)
    }

    fn segment_integral(&self, a: f64, b: f64) -> f64 {
        let g = |v: f64| self.lambda_of_odds(v);
        adaptive_simpson(&g, a, b, SEGMENT_TOL)
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub(crate) fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(h: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(m - a, fa, flm, fm);
        let right = simpson(b - m, fm, frm, fb);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return left + right;
        }
        // the relative floor keeps the stopping rule attainable when the
        // segment value is large relative to the absolute tolerance
        let floor = 1e-15 * whole.abs().max((left + right).abs());
        if depth == 0 || delta.abs() <= 15.0 * tol.max(floor) {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, simpson(b - a, fa, fm, fb), tol, 48)
}
