//! Time evolution of Lagrangian states.
//!
//! ```text
//! y_t = U,   U_t = −Q,   y_ξ,t = U_ξ,
//! U_ξ,t = ½h + (U² − P) y_ξ,   h_t = 2(U² − P) U_ξ
//! ```
//!
//! integrated node by node with an embedded Dormand–Prince 5(4) pair.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coords::{LagrangianState, H, U, U_XI, Y, Y_XI};
use crate::error::{domain, Error, Result};
use crate::grid::trapezoid;
use crate::kernel::{pq_into, source};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Mixed absolute/relative local error tolerance.
    pub tol_step: f64,
    /// Largest accepted relative energy change in a single step.
    pub tol_energy: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_min: 1e-12,
            dt_max: 0.05,
            tol_step: 1e-10,
            tol_energy: 1e-6,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.dt_init, self.dt_min, self.dt_max, self.tol_step, self.tol_energy];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return domain("integrator options must be positive and finite");
        }
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return domain("integrator options need dt_min <= dt_init <= dt_max");
        }
        Ok(())
    }
}

/// ∫ ((U − c)² y_ξ + h) dξ, i.e. ‖u − c‖²_{L²} + μ(ℝ).
pub fn total_energy(x: &LagrangianState) -> f64 {
    energy_of(x.xi(), x.data(), x.asymptote())
}

fn energy_of(xi: &[f64], z: &[f64], c: f64) -> f64 {
    let n = xi.len();
    let (u, h, yx) = (
        &z[U * n..(U + 1) * n],
        &z[H * n..(H + 1) * n],
        &z[Y_XI * n..(Y_XI + 1) * n],
    );
    trapezoid(xi, (0..n).map(|i| (u[i] - c) * (u[i] - c) * yx[i] + h[i]))
}

/// Right-hand side evaluator with reusable work buffers.
pub struct Rhs {
    xi: Arc<[f64]>,
    far: f64,
    f: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

impl Rhs {
    pub fn new(x: &LagrangianState) -> Self {
        let n = x.len();
        let c = x.asymptote();
        Self {
            xi: x.shared_grid().clone(),
            far: 2.0 * c * c,
            f: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn eval(&mut self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.xi.len();
        let (y, u, h, yx, ux) = (
            &z[Y * n..][..n],
            &z[U * n..][..n],
            &z[H * n..][..n],
            &z[Y_XI * n..][..n],
            &z[U_XI * n..][..n],
        );
        source(u, h, yx, &mut self.f);
        pq_into(&self.xi, y, &self.f, self.far, &mut self.p, &mut self.q)?;
        for i in 0..n {
            let w = u[i] * u[i] - self.p[i];
            dz[Y * n + i] = u[i];
            dz[U * n + i] = -self.q[i];
            dz[H * n + i] = 2.0 * w * ux[i];
            dz[Y_XI * n + i] = ux[i];
            dz[U_XI * n + i] = 0.5 * h[i] + w * yx[i];
        }
        Ok(())
    }

    /// P and Q from the last evaluation.
    pub fn last_pq(&self) -> (&[f64], &[f64]) {
        (&self.p, &self.q)
    }
}

/// Time derivative of every component, in storage order.
pub fn rhs(x: &LagrangianState) -> Result<Vec<f64>> {
    let mut r = Rhs::new(x);
    let mut dz = vec![0.0; x.data().len()];
    r.eval(x.data(), &mut dz)?;
    Ok(dz)
}

// Dormand–Prince 5(4) tableau (the system is autonomous, nodes c_i are not needed)
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper {
    rhs: Rhs,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    fsal_valid: bool,
}

impl Stepper {
    fn new(x: &LagrangianState) -> Self {
        let m = x.data().len();
        Self {
            rhs: Rhs::new(x),
            k: std::array::from_fn(|_| vec![0.0; m]),
            stage: vec![0.0; m],
            fsal_valid: false,
        }
    }

    /// One trial step; the fifth-order result goes to `out`, the returned value
    /// is the scaled error norm.
    fn attempt(&mut self, z: &[f64], dt: f64, tol: f64, out: &mut [f64]) -> Result<f64> {
        let m = z.len();
        if !self.fsal_valid {
            let (k0, _) = self.k.split_at_mut(1);
            self.rhs.eval(z, &mut k0[0])?;
            self.fsal_valid = true;
        }
        for s in 1..7 {
            for j in 0..m {
                let mut acc = 0.0;
                for r in 0..s {
                    acc += A[s][r] * self.k[r][j];
                }
                self.stage[j] = z[j] + dt * acc;
            }
            let (_, tail) = self.k.split_at_mut(s);
            self.rhs.eval(&self.stage, &mut tail[0])?;
        }
        // stage 7 is evaluated at the fifth-order solution (FSAL)
        out.copy_from_slice(&self.stage);
        let mut err = 0.0f64;
        for j in 0..m {
            let mut e = 0.0;
            for r in 0..7 {
                e += E[r] * self.k[r][j];
            }
            let sc = tol * (1.0 + z[j].abs().max(out[j].abs()));
            err = err.max((dt * e).abs() / sc);
        }
        if !err.is_finite() || out.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        Ok(err)
    }

    fn accept(&mut self) {
        self.k.swap(0, 6);
    }
}

/// Single fixed DP5 step of size `dt` (negative runs backward in time).
pub fn step(x: &LagrangianState, dt: f64) -> Result<LagrangianState> {
    let mut s = Stepper::new(x);
    let mut out = vec![0.0; x.data().len()];
    let err = s.attempt(x.data(), dt, 1.0, &mut out)?;
    if !err.is_finite() {
        return Err(Error::Integration {
            t: dt,
            reason: "non-finite state".into(),
        });
    }
    x.with_data(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted: usize,
    pub rejected_error: usize,
    pub rejected_energy: usize,
    /// Largest |E(t) − E(0)| / E(0) over all accepted steps.
    pub max_energy_drift: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// Integrate from t = 0 and call `observe(t, state)` at every requested time
/// (in order, all of one sign). The initial state is observed if 0 is listed.
pub fn evolve_observed(
    x0: &LagrangianState,
    times: &[f64],
    opts: &IntegratorOptions,
    mut observe: impl FnMut(f64, &LagrangianState) -> Result<()>,
) -> Result<IntegrationStats> {
    opts.validate()?;
    if times.is_empty() {
        return Ok(IntegrationStats::default());
    }
    let dir = if times.iter().any(|&t| t < 0.0) { -1.0 } else { 1.0 };
    if times.iter().any(|&t| t * dir < 0.0 || !t.is_finite()) || !times.windows(2).all(|w| (w[1] - w[0]) * dir > 0.0) {
        return domain("output times must be finite, of one sign and strictly monotone away from 0");
    }
    let m = x0.data().len();
    let mut z = x0.data().to_vec();
    let mut trial = vec![0.0; m];
    let mut st = Stepper::new(x0);
    let c = x0.asymptote();
    let e0 = energy_of(x0.xi(), &z, c);
    let e_scale = if e0 > 0.0 { e0 } else { 1.0 };
    let mut e_prev = e0;
    let mut stats = IntegrationStats {
        min_dt: f64::INFINITY,
        ..Default::default()
    };
    let mut t = 0.0f64;
    let mut h = opts.dt_init;
    let mut err_prev = 1.0f64;
    let mut snapshot = x0.clone();

    for &target in times {
        while (target - t) * dir > 0.0 {
            if stats.accepted + stats.rejected_error + stats.rejected_energy >= opts.max_steps {
                return Err(Error::Integration {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = (target - t).abs();
            let landing = remaining <= h * (1.0 + 1e-12);
            let dt_abs = if landing { remaining } else { h.min(remaining) };
            let err = match st.attempt(&z, dir * dt_abs, opts.tol_step, &mut trial) {
                Ok(err) => err,
                // a stage left the admissible set: retry with a smaller step
                Err(Error::Domain(msg)) => {
                    if dt_abs <= opts.dt_min {
                        return Err(Error::Integration { t, reason: msg });
                    }
                    stats.rejected_error += 1;
                    h = (0.25 * dt_abs).max(opts.dt_min);
                    continue;
                }
                Err(other) => return Err(other),
            };
            if err > 1.0 {
                stats.rejected_error += 1;
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.5)
                } else {
                    0.25
                };
                h = (dt_abs * fac).max(opts.dt_min);
                if dt_abs <= opts.dt_min {
                    return Err(Error::Integration {
                        t,
                        reason: format!("step size underflow (error norm {err:.3e})"),
                    });
                }
                continue;
            }
            let e_new = energy_of(x0.xi(), &trial, c);
            if (e_new - e_prev).abs() > opts.tol_energy * e_scale && dt_abs > opts.dt_min {
                stats.rejected_energy += 1;
                h = (0.5 * dt_abs).max(opts.dt_min);
                continue;
            }
            // accepted
            std::mem::swap(&mut z, &mut trial);
            st.accept();
            t = if landing { target } else { t + dir * dt_abs };
            e_prev = e_new;
            stats.accepted += 1;
            stats.min_dt = stats.min_dt.min(dt_abs);
            stats.max_dt = stats.max_dt.max(dt_abs);
            stats.max_energy_drift = stats.max_energy_drift.max((e_new - e0).abs() / e_scale);
            let e = err.max(1e-10);
            let fac = (0.9 * e.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0)).clamp(0.2, 5.0);
            err_prev = e;
            if !landing {
                h = (dt_abs * fac).clamp(opts.dt_min, opts.dt_max);
            } else {
                h = h.max(dt_abs * fac.min(1.0)).clamp(opts.dt_min, opts.dt_max);
            }
        }
        snapshot.data_mut().copy_from_slice(&z);
        observe(t, &snapshot)?;
    }
    if stats.min_dt == f64::INFINITY {
        stats.min_dt = 0.0;
    }
    Ok(stats)
}

/// Snapshots of a run on one ξ-grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LagrangianState>,
    pub energy: Vec<f64>,
    pub options: IntegratorOptions,
    pub stats: IntegrationStats,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    times: Vec<f64>,
    energies: Vec<f64>,
    options: IntegratorOptions,
    stats: IntegrationStats,
    asymptote: f64,
    grid: Vec<f64>,
    snapshots: Vec<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest relative deviation of the recorded energies from the first one.
    pub fn relative_energy_drift(&self) -> f64 {
        let Some(&e0) = self.energy.first() else {
            return 0.0;
        };
        let s = if e0 > 0.0 { e0 } else { 1.0 };
        self.energy.iter().fold(0.0, |m, e| m.max((e - e0).abs() / s))
    }

    /// `snapshot_NNNNN.csv` per time plus `manifest.json`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut names = Vec::with_capacity(self.len());
        for (k, s) in self.states.iter().enumerate() {
            let name = format!("snapshot_{k:05}.csv");
            std::fs::write(dir.join(&name), s.to_csv())?;
            names.push(name);
        }
        let manifest = Manifest {
            times: self.times.clone(),
            energies: self.energy.clone(),
            options: self.options,
            stats: self.stats,
            asymptote: self.states.first().map_or(0.0, |s| s.asymptote()),
            grid: self.states.first().map_or_else(Vec::new, |s| s.xi().to_vec()),
            snapshots: names,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn import(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if m.snapshots.len() != m.times.len() {
            return Err(Error::Parse(
                "manifest lists a different number of snapshots and times".into(),
            ));
        }
        let mut states = Vec::with_capacity(m.times.len());
        for name in &m.snapshots {
            states.push(LagrangianState::from_csv(
                &std::fs::read_to_string(dir.join(name))?,
                m.asymptote,
            )?);
        }
        Ok(Self {
            times: m.times,
            states,
            energy: m.energies,
            options: m.options,
            stats: m.stats,
        })
    }
}

/// Uniform output times `T/k, 2T/k, …, T` preceded by 0.
pub fn output_times(t_end: f64, snapshots: usize) -> Vec<f64> {
    let k = snapshots.max(1);
    (0..=k)
        .map(|i| if i == k { t_end } else { t_end * i as f64 / k as f64 })
        .collect()
}

/// Evolve to `t_end` and keep `snapshots + 1` equally spaced states (t = 0 included).
pub fn evolve(x0: &LagrangianState, t_end: f64, snapshots: usize, opts: &IntegratorOptions) -> Result<Trajectory> {
    if !t_end.is_finite() || t_end == 0.0 {
        return domain("t_end must be finite and nonzero");
    }
    evolve_at(x0, &output_times(t_end, snapshots), opts)
}

/// Evolve and keep the states at the given output times.
pub fn evolve_at(x0: &LagrangianState, times: &[f64], opts: &IntegratorOptions) -> Result<Trajectory> {
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        energy: Vec::new(),
        options: *opts,
        stats: Default::default(),
    };
    traj.stats = evolve_observed(x0, times, opts, |t, s| {
        traj.times.push(t);
        traj.energy.push(total_energy(s));
        traj.states.push(s.clone());
        Ok(())
    })?;
    Ok(traj)
}
