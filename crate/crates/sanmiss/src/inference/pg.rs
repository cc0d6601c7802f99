//! Exact sampling from the Polya-Gamma law `PG(1, psi)`.
//!
//! The sampler follows the alternating-series accept-reject scheme for the
//! tilted Jacobi law `J*(1, z)` with `z = |psi| / 2`: proposals come from an
//! inverse-Gaussian body below the threshold `t = 0.64` and an exponential
//! tail above it, and the series partial sums squeeze the target density from
//! both sides. A `PG(1, psi)` draw is `J*(1, z) / 4`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::link::norm_cdf;

const TRUNC: f64 = 0.64;

/// One exact draw from `PG(1, psi)`.
pub fn sample_pg1<R: Rng + ?Sized>(rng: &mut R, psi: f64) -> f64 {
    let z = psi.abs() / 2.0;
    let k = PI * PI / 8.0 + z * z / 2.0;
    let p_tail = PI / (2.0 * k) * (-k * TRUNC).exp();
    let q_body = 2.0 * (-z).exp() * inverse_gaussian_cdf(TRUNC, z);
    loop {
        let x = if rng.random::<f64>() * (p_tail + q_body) < p_tail {
            TRUNC + exponential(rng) / k
        } else {
            truncated_inverse_gaussian(rng, z)
        };
        // alternating series squeeze around the density at x
        let mut s = coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0usize;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= coef(n, x);
                if y <= s {
                    return x / 4.0;
                }
            } else {
                s += coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Series coefficient `a_n(x)` of the Jacobi density.
fn coef(n: usize, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    if x <= TRUNC {
        PI * h * (2.0 / (PI * x)).powf(1.5) * (-2.0 * h * h / x).exp()
    } else {
        PI * h * (-h * h * PI * PI * x / 2.0).exp()
    }
}

fn exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

/// `P(IG(1/z, 1) <= t)`, with the one-sided stable limit at `z = 0`.
fn inverse_gaussian_cdf(t: f64, z: f64) -> f64 {
    let rt = t.sqrt();
    if z <= 0.0 {
        return 2.0 * norm_cdf(-1.0 / rt);
    }
    let a = norm_cdf(rt * z - 1.0 / rt);
    let b = norm_cdf(-rt * z - 1.0 / rt) * (2.0 * z).exp();
    a + b
}

/// Draws `IG(1/z, 1)` conditioned on `(0, TRUNC]`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(rng: &mut R, z: f64) -> f64 {
    if z < 1.0 / TRUNC {
        // large mean: rejection against the one-sided stable proposal,
        // thinned by exp(-z^2 x / 2)
        loop {
            let (mut e1, mut e2) = (exponential(rng), exponential(rng));
            while e1 * e1 > 2.0 * e2 / TRUNC {
                e1 = exponential(rng);
                e2 = exponential(rng);
            }
            let x = TRUNC / ((1.0 + TRUNC * e1) * (1.0 + TRUNC * e1));
            if rng.random::<f64>() <= (-z * z * x / 2.0).exp() {
                return x;
            }
        }
    }
    let mu = 1.0 / z;
    loop {
        // Michael-Schucany-Haas, then keep draws inside the body
        let nu: f64 = rng.sample(StandardNormal);
        let y = nu * nu;
        let x = mu + 0.5 * mu * mu * y
            - 0.5 * mu * (4.0 * mu * y + mu * mu * y * y).sqrt();
        let x = if rng.random::<f64>() > mu / (mu + x) {
            mu * mu / x
        } else {
            x
        };
        if x <= TRUNC && x > 0.0 {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `E[PG(1, psi)] = tanh(psi/2) / (2 psi)`, `1/4` at `psi = 0`.
    fn pg_mean(psi: f64) -> f64 {
        if psi == 0.0 {
            0.25
        } else {
            (psi / 2.0).tanh() / (2.0 * psi)
        }
    }

    #[test]
    fn matches_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &psi in &[0.0, 0.3, 1.0, 2.5, 6.0] {
            let n = 200_000usize;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let w = sample_pg1(&mut rng, psi);
                sum += w;
                sumsq += w * w;
            }
            let mean = sum / n as f64;
            let var = sumsq / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            let want = pg_mean(psi);
            assert!(
                (mean - want).abs() < 5.0 * se,
                "psi={psi}: mean {mean} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn matches_laplace_transform() {
        // E[exp(-s W)] = cosh(psi/2) / cosh(sqrt(psi^2/4 + s/2)) for PG(1, psi)
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(psi, s) in &[(0.0_f64, 1.0_f64), (1.0, 0.5), (2.0, 2.0), (4.0, 1.5)] {
            let n = 200_000usize;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let v = (-s * sample_pg1(&mut rng, psi)).exp();
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / n as f64;
            let se = ((sumsq / n as f64 - mean * mean) / n as f64).sqrt();
            let want = (psi / 2.0).cosh() / (psi * psi / 4.0 + s / 2.0).sqrt().cosh();
            assert!(
                (mean - want).abs() < 5.0 * se.max(1e-6),
                "psi={psi} s={s}: {mean} vs {want} (se {se})"
            );
        }
    }

    #[test]
    fn sign_of_psi_is_irrelevant_and_seeded_draws_repeat() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let wa = sample_pg1(&mut a, 1.7);
            let wb = sample_pg1(&mut b, -1.7);
            assert_eq!(wa, wb);
            assert!(wa > 0.0);
        }
    }
}
