//! The cuspon with exponential decay: the even travelling wave u = φ(x − σt) + κ
//! with σ = s + κ, κ = (s − 2m − M)/2 and
//!
//! ```text
//! φ_x² = (M − φ)(φ − m)²/(s − φ),   φ(0) = s,   φ → m as |x| → ∞.
//! ```
//!
//! Everything is parametrised by t = √ln((s−m)/(φ−m)), in which both the
//! two-thirds-power cusp and the logarithmic tail become smooth:
//! x(t) = ∫₀ᵗ 2τ√(s−φ)/√(M−φ) dτ.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coords::LagrangianState;
use crate::dynamics::Trajectory;
use crate::error::{domain, Result};
use crate::grid::GridSpec;
use crate::numeric::{gk21, integrate};

const TABLE_STEP: f64 = 0.01;
/// e^{−T²} is about 1e−294 here, far below anything a grid reaches.
const TABLE_END: f64 = 26.0;
/// Core of the Lagrangian grid covers φ − m ≥ 1e−10 (s − m).
const CORE_DECAY: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusponParams {
    pub m: f64,
    pub s: f64,
    pub m_max: f64,
    pub kappa: f64,
    pub speed: f64,
}

/// (κ, speed) = ((s − 2m − M)/2, s + κ).
pub fn cuspon_params(m: f64, s: f64, m_max: f64) -> Result<(f64, f64)> {
    if !(m < s && s < m_max) || ![m, s, m_max].iter().all(|v| v.is_finite()) {
        return domain(format!("cuspon needs m < s < M, got ({m}, {s}, {m_max})"));
    }
    let kappa = 0.5 * (s - 2.0 * m - m_max);
    Ok((kappa, s + kappa))
}

impl CusponParams {
    pub fn new(m: f64, s: f64, m_max: f64) -> Result<Self> {
        let (kappa, speed) = cuspon_params(m, s, m_max)?;
        Ok(Self {
            m,
            s,
            m_max,
            kappa,
            speed,
        })
    }

    /// Far-field value m + κ of u.
    pub fn asymptote(&self) -> f64 {
        self.m + self.kappa
    }

    /// (φ, s − φ, φ − m) at parameter t.
    fn at(&self, t: f64) -> (f64, f64, f64) {
        let w = self.s - self.m;
        let below = w * -(-t * t).exp_m1();
        let above = w * (-t * t).exp();
        let phi = if below < above { self.s - below } else { self.m + above };
        (phi, below, above)
    }

    /// t/√(1 − e^{−t²}), equal to 1 at t = 0.
    fn r(t: f64) -> f64 {
        if t < 1e-8 {
            1.0
        } else {
            t / (-(-t * t).exp_m1()).sqrt()
        }
    }

    /// dx/dt.
    fn dx(&self, t: f64) -> f64 {
        let (phi, below, _) = self.at(t);
        2.0 * t * below.sqrt() / (self.m_max - phi).sqrt()
    }

    /// d/dt of the energy between the crest and x(t).
    fn de(&self, t: f64) -> f64 {
        let (phi, _, above) = self.at(t);
        2.0 * above * above * (self.m_max - phi).sqrt() * Self::r(t) / (self.s - self.m).sqrt()
    }

    /// dx/dt divided by s − φ: the time a characteristic spends per unit t
    /// while the crest overtakes it.
    fn dmeet(&self, t: f64) -> f64 {
        let (phi, _, _) = self.at(t);
        2.0 * Self::r(t) / ((self.m_max - phi).sqrt() * (self.s - self.m).sqrt())
    }

    fn t_of_phi(&self, phi: f64) -> Result<f64> {
        if !(phi > self.m && phi <= self.s) {
            return domain(format!("need m < φ <= s, got {phi}"));
        }
        Ok(((self.s - self.m) / (phi - self.m)).ln().max(0.0).sqrt())
    }
}

/// x ≥ 0 with φ(x) = φ_val, by adaptive quadrature.
pub fn x_of_phi(phi_val: f64, p: &CusponParams) -> Result<f64> {
    let t = p.t_of_phi(phi_val)?;
    Ok(integrate(|v| p.dx(v), 0.0, t, 1e-15, 1e-15))
}

/// ∫_{−∞}^x φ_z² dz, through s − z = w² in the φ-integral.
pub fn energy_to(x: f64, p: &CusponParams) -> f64 {
    let left = |xl: f64| {
        let phi = phi_value(xl, p);
        let (m, s, mm) = (p.m, p.s, p.m_max);
        let f = |w: f64| 2.0 * (mm - s + w * w).sqrt() * (s - m - w * w);
        integrate(f, (s - phi).max(0.0).sqrt(), (s - m).sqrt(), 1e-15, 1e-15)
    };
    if x <= 0.0 {
        left(x)
    } else {
        2.0 * left(0.0) - left(-x)
    }
}

/// Upper bound 2√((M − m)(s − m))(s − m) on energy_to(0).
pub fn energy_bound(p: &CusponParams) -> f64 {
    2.0 * ((p.m_max - p.m) * (p.s - p.m)).sqrt() * (p.s - p.m)
}

/// Q_t at the moment a characteristic meets the crest, as claimed: (M − s)(s − m)².
pub fn qt_at_cusp(p: &CusponParams) -> f64 {
    (p.m_max - p.s) * (p.s - p.m) * (p.s - p.m)
}

/// Hölder bound (M − m)(3|x|/2)^{2/3} on s − φ(x).
pub fn holder_bound(x: f64, p: &CusponParams) -> f64 {
    (p.m_max - p.m) * (1.5 * x.abs()).powf(2.0 / 3.0)
}

fn phi_value(x: f64, p: &CusponParams) -> f64 {
    // without a table: direct root finding on x(t)
    if x == 0.0 {
        return p.s;
    }
    let target = x.abs();
    let mut hi = 1.0;
    while integrate(|v| p.dx(v), 0.0, hi, 1e-15, 1e-15) < target && hi < TABLE_END {
        hi *= 2.0;
    }
    let t = crate::numeric::bisect_increasing(|v| integrate(|w| p.dx(w), 0.0, v, 1e-15, 1e-15), target, 0.0, hi, 1e-15);
    p.at(t).0
}

/// Lagrangian initial data for the cuspon together with the crest label.
#[derive(Debug, Clone)]
pub struct CusponState {
    pub state: LagrangianState,
    /// Index of the node at ξ̄, where y_ξ = 0.
    pub cusp_index: usize,
    pub xi_bar: f64,
}

/// φ tabulated over t ∈ [0, 26] with cumulative x(t) and crest-outward energy.
#[derive(Debug, Clone)]
pub struct CusponProfile {
    params: CusponParams,
    x: Vec<f64>,
    e: Vec<f64>,
    g: Vec<f64>,
    meet: Vec<f64>,
}

impl CusponProfile {
    pub fn new(params: CusponParams) -> Result<Self> {
        let p = params;
        cuspon_params(p.m, p.s, p.m_max)?;
        let n = (TABLE_END / TABLE_STEP).round() as usize;
        let (mut x, mut e, mut meet) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
        for k in 0..n {
            let (a, b) = (tk(k), tk(k + 1));
            x[k + 1] = x[k] + gk21(&|v| p.dx(v), a, b).0;
            e[k + 1] = e[k] + gk21(&|v| p.de(v), a, b).0;
            meet[k + 1] = meet[k] + gk21(&|v| p.dmeet(v), a, b).0;
        }
        let g = x.iter().zip(&e).map(|(a, b)| a + b).collect();
        Ok(Self { params, x, e, g, meet })
    }

    pub fn params(&self) -> &CusponParams {
        &self.params
    }

    /// Largest tabulated x; φ = m to double precision beyond it.
    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    fn t_for(&self, cum: &[f64], rate: impl Fn(f64) -> f64, target: f64) -> f64 {
        let n = cum.len();
        if target <= 0.0 {
            return 0.0;
        }
        if target >= cum[n - 1] {
            return TABLE_END;
        }
        let k = cum.partition_point(|&v| v <= target).clamp(1, n - 1) - 1;
        let (t0, mut lo, mut hi) = (tk(k), tk(k), tk(k + 1));
        let mut t = lo + (hi - lo) * (target - cum[k]) / (cum[k + 1] - cum[k]);
        for _ in 0..80 {
            let f = cum[k] + gk21(&rate, t0, t).0 - target;
            if f == 0.0 {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = rate(t);
            let mut next = t - f / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - t).abs() <= 4.0 * f64::EPSILON * t;
            t = next;
            if done || hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        t
    }

    fn t_of_x(&self, x: f64) -> f64 {
        let p = self.params;
        self.t_for(&self.x, |v| p.dx(v), x.abs())
    }

    pub fn phi(&self, x: f64) -> f64 {
        if x == 0.0 {
            return self.params.s;
        }
        self.params.at(self.t_of_x(x)).0
    }

    /// −sign(x)·√((M − φ)(φ − m)²/(s − φ)); undefined at the crest.
    pub fn phi_x(&self, x: f64) -> Result<f64> {
        if x == 0.0 || !x.is_finite() {
            return domain("φ_x is undefined at the cusp");
        }
        let p = self.params;
        let (phi, below, above) = p.at(self.t_of_x(x));
        Ok(-x.signum() * above * ((p.m_max - phi) / below).sqrt())
    }

    /// ∫_{−∞}^x φ_z² dz from the table.
    pub fn energy_to(&self, x: f64) -> f64 {
        let p = self.params;
        let total = self.e[self.e.len() - 1];
        let t = self.t_of_x(x);
        let k = ((t / TABLE_STEP) as usize).min(self.e.len() - 2);
        let inner = self.e[k] + gk21(&|v| p.de(v), tk(k), t).0;
        if x <= 0.0 {
            total - inner
        } else {
            total + inner
        }
    }

    /// Time for the crest to reach a characteristic that starts z0 ahead of it,
    /// or `None` if z0 ≤ 0 (the crest moves away from those).
    pub fn meeting_time(&self, z0: f64) -> Option<f64> {
        if !(z0 > 0.0) {
            return None;
        }
        let p = self.params;
        let t = self.t_of_x(z0);
        let k = ((t / TABLE_STEP) as usize).min(self.meet.len() - 2);
        Some(self.meet[k] + gk21(&|v| p.dmeet(v), tk(k), t).0)
    }

    /// Grid anchored at ξ̄ = ∫_{−∞}^0 φ_x², y from inverting ξ = x + ∫_{−∞}^x φ_z²,
    /// U = φ(y) + κ, y_ξ = 1/(1 + φ_x²), h = 1 − y_ξ.
    pub fn lagrangian_state(&self, spec: &GridSpec) -> Result<CusponState> {
        let p = self.params;
        let xi_bar = self.e[self.e.len() - 1];
        let t_core = (1.0 / CORE_DECAY).ln().sqrt();
        let kc = (t_core / TABLE_STEP).ceil() as usize;
        let xi = spec.build_anchored(xi_bar, self.g[kc.min(self.g.len() - 1)])?;
        let cusp_index = xi.partition_point(|&v| v < xi_bar);
        if cusp_index >= xi.len() || xi[cusp_index] != xi_bar {
            return domain("grid does not contain the crest label");
        }
        let n = xi.len();
        let (mut y, mut u, mut h, mut yx, mut ux) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let d = xi[i] - xi_bar;
            let t = self.t_for(&self.g, |v| p.dx(v) + p.de(v), d.abs());
            let k = ((t / TABLE_STEP) as usize).min(self.x.len() - 2);
            let x = self.x[k] + gk21(&|v| p.dx(v), tk(k), t).0;
            let (phi, below, above) = p.at(t);
            let q = (p.m_max - phi) * above * above;
            y[i] = d.signum() * x;
            u[i] = phi + p.kappa;
            yx[i] = below / (below + q);
            h[i] = q / (below + q);
            ux[i] = -d.signum() * above * ((p.m_max - phi) * below).sqrt() / (below + q);
        }
        y[cusp_index] = 0.0;
        let state = LagrangianState::new(xi, &y, &u, &h, &yx, &ux, p.asymptote())?;
        Ok(CusponState {
            state,
            cusp_index,
            xi_bar,
        })
    }

    /// `x,phi,phi_x` rows; φ_x at the crest is written as `nan`.
    pub fn to_csv(&self, xs: &[f64]) -> String {
        let mut s = String::from("x,phi,phi_x\n");
        for &x in xs {
            let px = self.phi_x(x).unwrap_or(f64::NAN);
            let _ = writeln!(s, "{},{},{}", x, self.phi(x), px);
        }
        s
    }
}

fn tk(k: usize) -> f64 {
    k as f64 * TABLE_STEP
}

/// Characteristics relative to the crest: z = y − σt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowdownReport {
    /// max over nodes and snapshots of z_t = U − σ.
    pub max_zt: f64,
    /// Largest increase of z between consecutive snapshots.
    pub max_z_increase: f64,
    /// Nodes starting ahead of the crest (z > 0) and behind it at the end.
    pub overtaken: usize,
    pub violations: Vec<usize>,
}

/// z_t = φ(z) − s ≤ 0: no characteristic outruns the crest.
pub fn characteristic_slowdown_check(traj: &Trajectory, p: &CusponParams, tol: f64) -> SlowdownReport {
    let mut max_zt = f64::NEG_INFINITY;
    let mut max_inc = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let z: Vec<f64> = s.y().iter().map(|y| y - p.speed * t).collect();
        for (i, u) in s.u().iter().enumerate() {
            let zt = u - p.speed;
            max_zt = max_zt.max(zt);
            if zt > tol && violations.last() != Some(&i) {
                violations.push(i);
            }
        }
        if let Some(zp) = &prev {
            for i in 0..z.len() {
                max_inc = max_inc.max(z[i] - zp[i]);
            }
        }
        prev = Some(z);
    }
    violations.sort_unstable();
    violations.dedup();
    let overtaken = match (traj.states.first(), traj.states.last(), traj.times.last()) {
        (Some(a), Some(b), Some(&t)) => a
            .y()
            .iter()
            .zip(b.y())
            .filter(|(y0, y1)| **y0 > 0.0 && **y1 - p.speed * t < 0.0)
            .count(),
        _ => 0,
    };
    SlowdownReport {
        max_zt,
        max_z_increase: max_inc,
        overtaken,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p135() -> CusponParams {
        CusponParams::new(1.0, 3.0, 5.0).unwrap()
    }

    #[test]
    fn params_examples() {
        assert_eq!(cuspon_params(1.0, 3.0, 5.0).unwrap(), (-2.0, 1.0));
        assert_eq!(cuspon_params(0.0, 1.0, 2.0).unwrap(), (-0.5, 0.5));
        assert_eq!(cuspon_params(0.0, 1.0, 3.0).unwrap(), (-1.0, 0.0));
        assert!(cuspon_params(1.0, 1.0, 5.0).is_err());
        assert!(cuspon_params(3.0, 1.0, 5.0).is_err());
        assert_eq!(qt_at_cusp(&p135()), 8.0);
    }

    #[test]
    fn x_of_phi_endpoints() {
        let p = p135();
        assert_eq!(x_of_phi(3.0, &p).unwrap(), 0.0);
        assert!(x_of_phi(1.0, &p).is_err());
        assert!(x_of_phi(1.0 + 1e-15, &p).unwrap() > 20.0);
        for phi in [2.999, 2.99, 2.9] {
            let x = x_of_phi(phi, &p).unwrap();
            assert!(x >= 2.0 / 3.0 * ((3.0 - phi) / 4.0f64).powf(1.5));
        }
    }

    #[test]
    fn phi_inverts_x_of_phi() {
        let prof = CusponProfile::new(p135()).unwrap();
        assert_eq!(prof.phi(0.0), 3.0);
        for x in [1e-6, 1e-3, 0.01, 0.3, 1.0, 4.0, 10.0] {
            let phi = prof.phi(x);
            assert!(
                (x_of_phi(phi, prof.params()).unwrap() - x).abs() <= 1e-10 * (1.0 + x),
                "x = {x}"
            );
            assert_eq!(prof.phi(-x), phi);
            assert!(prof.phi_x(x).unwrap() < 0.0);
            assert!(3.0 - phi <= holder_bound(x, prof.params()));
        }
        assert!(prof.phi_x(0.0).is_err());
        assert!(prof.phi_x(40.0).unwrap().abs() < 1e-20);
    }

    #[test]
    fn table_energy_matches_quadrature() {
        let p = p135();
        let prof = CusponProfile::new(p).unwrap();
        let e0 = energy_to(0.0, &p);
        assert!(e0 <= energy_bound(&p));
        assert!((prof.energy_to(0.0) - e0).abs() < 1e-12 * e0);
        for x in [-3.0, -0.2, 0.5] {
            assert!((prof.energy_to(x) - energy_to(x, &p)).abs() < 1e-11 * e0, "x = {x}");
        }
        assert!(energy_to(-60.0, &p) < 1e-30);
    }

    #[test]
    fn lagrangian_state_has_single_flat_node() {
        let prof = CusponProfile::new(p135()).unwrap();
        let cs = prof.lagrangian_state(&GridSpec::with_nodes(512)).unwrap();
        let x = &cs.state;
        assert_eq!(x.y()[cs.cusp_index], 0.0);
        assert_eq!(x.y_xi()[cs.cusp_index], 0.0);
        assert_eq!(x.u()[cs.cusp_index], 1.0);
        assert!(x.y_xi().iter().enumerate().all(|(i, &v)| i == cs.cusp_index || v > 0.0));
        let inv = x.invariants();
        assert!(inv.y_nondecreasing && inv.max_constraint_defect < 1e-14);
        // y_ξ(ξ) = 1/(1 + φ_x(y)²)
        for i in [cs.cusp_index + 3, cs.cusp_index + 100] {
            let px = prof.phi_x(x.y()[i]).unwrap();
            assert!((x.y_xi()[i] - 1.0 / (1.0 + px * px)).abs() < 1e-12);
        }
    }
}
