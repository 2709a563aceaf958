//! The nonlocal terms
//!
//! ```text
//! P(ξ) =  ¼ ∫ e^{−|y(ξ)−y(η)|} f(η) dη,
//! Q(ξ) = −¼ ∫ sign(ξ−η) e^{−|y(ξ)−y(η)|} f(η) dη,     f = 2U²y_ξ + h,
//! ```
//!
//! in O(N). Since y is nondecreasing, |y(ξ)−y(η)| splits by the sign of ξ−η
//! and both integrals follow from a forward and a backward recursion
//!
//! ```text
//! A_i = e^{−(y_i−y_{i−1})} A_{i−1} + ∫_{ξ_{i−1}}^{ξ_i} e^{−(y_i−y)} f,
//! B_i = e^{−(y_{i+1}−y_i)} B_{i+1} + ∫_{ξ_i}^{ξ_{i+1}} e^{−(y−y_i)} f,
//! ```
//!
//! with P = ¼(A + B) and Q = −¼(A − B). Each cell integral is taken exactly
//! for y and f linear on the cell. Outside the grid the state is assumed to
//! be U ≡ c, y_ξ = 1, h = 0, which contributes A_0 = B_N = 2c².

use crate::coords::LagrangianState;
use crate::error::{domain, Result};

const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: usize = 18;
/// Largest tolerated y decrease across a cell, relative to its width.
const CROSS_TOL: f64 = 1e-6;

/// g0(a) = ∫₀¹ e^{−a s} ds and g1(a) = ∫₀¹ s e^{−a s} ds for a ≥ 0.
#[inline]
pub(crate) fn g01(a: f64, ea: f64) -> (f64, f64) {
    if a < SERIES_CUTOFF {
        // g0 = Σ (−a)^n/(n+1)!, g1 = Σ (−a)^n/(n!(n+2))
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        for n in (0..SERIES_TERMS).rev() {
            g0 = G0_COEF[n] - a * g0;
            g1 = G1_COEF[n] - a * g1;
        }
        (g0, g1)
    } else {
        let om = -(-a).exp_m1();
        (om / a, (om - a * ea) / (a * a))
    }
}

const G0_COEF: [f64; SERIES_TERMS] = coefficients(1);
const G1_COEF: [f64; SERIES_TERMS] = coefficients(2);

const fn coefficients(shift: usize) -> [f64; SERIES_TERMS] {
    // 1/(n+1)! for shift 1, 1/(n!(n+2)) for shift 2
    let mut out = [0.0; SERIES_TERMS];
    let mut fact = 1.0;
    let mut n = 0;
    while n < SERIES_TERMS {
        if n > 0 {
            fact *= n as f64;
        }
        out[n] = if shift == 1 {
            1.0 / (fact * (n + 1) as f64)
        } else {
            1.0 / (fact * (n + 2) as f64)
        };
        n += 1;
    }
    out
}

/// Integrand f = 2U²y_ξ + h at every node.
pub fn source(u: &[f64], h: &[f64], y_xi: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        out[i] = 2.0 * u[i] * u[i] * y_xi[i] + h[i];
    }
}

/// Evaluate P and Q for characteristic positions `y` and source `f` on `xi`.
/// `far` is the far-field source value 2c².
pub fn pq_into(xi: &[f64], y: &[f64], f: &[f64], far: f64, p: &mut [f64], q: &mut [f64]) -> Result<()> {
    let n = xi.len();
    if n == 0 {
        return Ok(());
    }
    let scale = y[0].abs().max(y[n - 1].abs()).max(1.0);
    // forward pass into p, backward pass into q
    p[0] = far;
    for i in 1..n {
        let d = xi[i] - xi[i - 1];
        let mut a = y[i] - y[i - 1];
        if a < 0.0 || a.is_nan() {
            // touching characteristics carry integration noise of either sign
            if !(a >= -(CROSS_TOL * d + 1e-12 * scale)) {
                return domain(format!("characteristics cross between nodes {} and {}", i - 1, i));
            }
            a = 0.0;
        }
        let ea = (-a).exp();
        let (g0, g1) = g01(a, ea);
        p[i] = ea * p[i - 1] + d * (f[i - 1] * g1 + f[i] * (g0 - g1));
    }
    q[n - 1] = far;
    for i in (0..n - 1).rev() {
        let a = (y[i + 1] - y[i]).max(0.0);
        let ea = (-a).exp();
        let (g0, g1) = g01(a, ea);
        let d = xi[i + 1] - xi[i];
        q[i] = ea * q[i + 1] + d * (f[i + 1] * g1 + f[i] * (g0 - g1));
    }
    for i in 0..n {
        let (fa, fb) = (p[i], q[i]);
        p[i] = 0.25 * (fa + fb);
        q[i] = -0.25 * (fa - fb);
    }
    Ok(())
}

/// P and Q at every node of `x`.
pub fn compute_pq(x: &LagrangianState) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let mut f = vec![0.0; n];
    source(x.u(), x.h(), x.y_xi(), &mut f);
    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
    let c = x.asymptote();
    pq_into(x.xi(), x.y(), &f, 2.0 * c * c, &mut p, &mut q)?;
    Ok((p, q))
}

pub fn compute_p(x: &LagrangianState) -> Result<Vec<f64>> {
    compute_pq(x).map(|r| r.0)
}

pub fn compute_q(x: &LagrangianState) -> Result<Vec<f64>> {
    compute_pq(x).map(|r| r.1)
}
