//! Eulerian and Lagrangian states and the maps between them.
//!
//! An Eulerian state is a pair (u, μ) with μ = u_x² dx + atoms. A Lagrangian
//! state is the tuple (y, U, h, y_ξ, U_ξ) sampled on a ξ-grid, together with
//! the far-field constant c of U.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::{nodes_per_piece, trapezoid, GridSpec};
use crate::numeric::bisect_increasing;
use crate::profiles::PiecewiseLinearProfile;

/// Component offsets inside [`LagrangianState::data`].
pub const Y: usize = 0;
pub const U: usize = 1;
pub const H: usize = 2;
pub const Y_XI: usize = 3;
pub const U_XI: usize = 4;
pub const COMPONENTS: usize = 5;

pub const CSV_HEADER: &str = "xi,y,U,h,y_xi,U_xi";

/// Point mass of the energy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub mass: f64,
}

/// (u, μ) with u − c a piecewise-linear profile and μ = u_x² dx + Σ atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerianState {
    profile: PiecewiseLinearProfile,
    asymptote: f64,
    atoms: Vec<Atom>,
}

impl EulerianState {
    pub fn new(profile: PiecewiseLinearProfile, asymptote: f64, mut atoms: Vec<Atom>) -> Result<Self> {
        profile.validate()?;
        if !asymptote.is_finite() {
            return domain("asymptote must be finite");
        }
        if atoms
            .iter()
            .any(|a| !a.x.is_finite() || !(a.mass > 0.0) || !a.mass.is_finite())
        {
            return domain("atoms need finite locations and positive finite masses");
        }
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.x == a.x => last.mass += a.mass,
                _ => merged.push(a),
            }
        }
        Ok(Self {
            profile,
            asymptote,
            atoms: merged,
        })
    }

    /// Atom-free state with μ = u_x² dx.
    pub fn from_profile(profile: PiecewiseLinearProfile) -> Result<Self> {
        Self::new(profile, 0.0, Vec::new())
    }

    pub fn profile(&self) -> &PiecewiseLinearProfile {
        &self.profile
    }

    pub fn asymptote(&self) -> f64 {
        self.asymptote
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn u(&self, x: f64) -> f64 {
        self.asymptote + self.profile.eval(x)
    }

    /// Density of the absolutely continuous part (right limit at breakpoints).
    pub fn density(&self, x: f64) -> f64 {
        let k = self.profile.eval_derivative(x);
        k * k
    }

    pub fn total_mass(&self) -> f64 {
        let (b, k) = (self.profile.breakpoints(), self.profile.slopes());
        let ac: f64 = k.iter().zip(b.windows(2)).map(|(k, w)| k * k * (w[1] - w[0])).sum();
        ac + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// Total energy ‖u − c‖²_{L²} + μ(ℝ).
    pub fn energy(&self) -> f64 {
        let b = self.profile.breakpoints();
        let v = self.profile.values();
        let l2: f64 = b
            .windows(2)
            .zip(v.windows(2))
            .map(|(w, u)| (w[1] - w[0]) * (u[0] * u[0] + u[0] * u[1] + u[1] * u[1]) / 3.0)
            .sum();
        l2 + self.total_mass()
    }

    /// ξ-images of breakpoints and atom ends; the Lagrangian data is smooth between them.
    pub fn seams(&self) -> Vec<f64> {
        let c = Cumulative::new(self);
        let mut s = Vec::with_capacity(2 * c.x.len());
        for k in 0..c.x.len() {
            s.push(c.x[k] + c.left[k]);
            if c.right[k] > c.left[k] {
                s.push(c.x[k] + c.right[k]);
            }
        }
        s
    }

    /// μ([a, b)).
    pub fn measure_of(&self, a: f64, b: f64) -> f64 {
        let c = Cumulative::new(self);
        c.below(b) - c.below(a)
    }
}

/// x ↦ μ((−∞, x)) as a piecewise-linear function with jumps at atoms.
struct Cumulative {
    x: Vec<f64>,
    /// μ((−∞, x_k))
    left: Vec<f64>,
    /// μ((−∞, x_k])
    right: Vec<f64>,
    /// slope of u on (x_k, x_{k+1})
    slope: Vec<f64>,
}

impl Cumulative {
    fn new(e: &EulerianState) -> Self {
        let mut x: Vec<f64> = e.profile.breakpoints().to_vec();
        x.extend(e.atoms.iter().map(|a| a.x));
        x.sort_by(f64::total_cmp);
        x.dedup();
        let n = x.len();
        let slope: Vec<f64> = (0..n)
            .map(|k| {
                if k + 1 < n {
                    e.profile.eval_derivative(0.5 * (x[k] + x[k + 1]))
                } else {
                    0.0
                }
            })
            .collect();
        let (mut left, mut right) = (vec![0.0; n], vec![0.0; n]);
        let mut acc = 0.0;
        let mut ai = 0;
        for k in 0..n {
            if k > 0 {
                acc += slope[k - 1] * slope[k - 1] * (x[k] - x[k - 1]);
            }
            left[k] = acc;
            while ai < e.atoms.len() && e.atoms[ai].x == x[k] {
                acc += e.atoms[ai].mass;
                ai += 1;
            }
            right[k] = acc;
        }
        Self { x, left, right, slope }
    }

    fn below(&self, x: f64) -> f64 {
        let k = self.x.partition_point(|&v| v < x);
        if k == 0 {
            return 0.0;
        }
        let j = k - 1;
        self.right[j] + self.slope[j] * self.slope[j] * (x - self.x[j])
    }

    /// y(ξ) = sup{ y : y + μ((−∞, y)) < ξ } with the segment slope at y.
    /// Returns (y, Some(slope)) on a.c. stretches and (x_atom, None) inside atoms.
    fn invert(&self, xi: f64) -> (f64, Option<f64>) {
        let n = self.x.len();
        if n == 0 || xi <= self.x[0] {
            return (xi, Some(0.0));
        }
        // last knot with F(x_k^-) < ξ
        let (mut k, mut hi) = (0usize, n);
        while hi - k > 1 {
            let mid = (k + hi) / 2;
            if self.x[mid] + self.left[mid] < xi {
                k = mid;
            } else {
                hi = mid;
            }
        }
        if xi <= self.x[k] + self.right[k] {
            return (self.x[k], None);
        }
        if k + 1 == n {
            return (xi - self.right[k], Some(0.0));
        }
        let (a, b) = (self.x[k], self.x[k + 1]);
        let g = self.slope[k] * self.slope[k];
        let base = self.right[k];
        let y = bisect_increasing(|x| x + base + g * (x - a), xi, a, b, 1e-13);
        (y.clamp(a, b), Some(self.slope[k]))
    }
}

/// Lagrangian state on a shared ξ-grid.
///
/// Components are stored contiguously: `data[k*n..(k+1)*n]` for k in
/// `Y, U, H, Y_XI, U_XI`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    xi: Arc<[f64]>,
    data: Vec<f64>,
    asymptote: f64,
}

/// Pointwise diagnostics for the defining constraints of Lagrangian states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub min_y_xi: f64,
    pub min_h: f64,
    pub min_y_xi_plus_h: f64,
    pub max_constraint_defect: f64,
    pub y_nondecreasing: bool,
}

impl LagrangianState {
    pub fn from_parts(xi: Arc<[f64]>, data: Vec<f64>, asymptote: f64) -> Result<Self> {
        let n = xi.len();
        if n < 2 {
            return domain("Lagrangian grid needs at least two nodes");
        }
        if data.len() != COMPONENTS * n {
            return domain(format!("expected {} values, got {}", COMPONENTS * n, data.len()));
        }
        if !xi.windows(2).all(|w| w[1] > w[0]) || xi.iter().any(|v| !v.is_finite()) {
            return domain("ξ-grid must be finite and strictly increasing");
        }
        if !asymptote.is_finite() {
            return domain("asymptote must be finite");
        }
        Ok(Self { xi, data, asymptote })
    }

    pub fn new(
        xi: Vec<f64>,
        y: &[f64],
        u: &[f64],
        h: &[f64],
        y_xi: &[f64],
        u_xi: &[f64],
        asymptote: f64,
    ) -> Result<Self> {
        let n = xi.len();
        if [y.len(), u.len(), h.len(), y_xi.len(), u_xi.len()]
            .iter()
            .any(|&l| l != n)
        {
            return domain("all components must have the grid length");
        }
        let mut data = Vec::with_capacity(COMPONENTS * n);
        for c in [y, u, h, y_xi, u_xi] {
            data.extend_from_slice(c);
        }
        Self::from_parts(xi.into(), data, asymptote)
    }

    /// y = ξ, U ≡ c, h ≡ 0.
    pub fn constant(xi: Vec<f64>, c: f64) -> Result<Self> {
        let n = xi.len();
        let y = xi.clone();
        Self::new(xi, &y, &vec![c; n], &vec![0.0; n], &vec![1.0; n], &vec![0.0; n], c)
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn shared_grid(&self) -> &Arc<[f64]> {
        &self.xi
    }

    pub fn asymptote(&self) -> f64 {
        self.asymptote
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn y(&self) -> &[f64] {
        self.component(Y)
    }

    pub fn u(&self) -> &[f64] {
        self.component(U)
    }

    pub fn h(&self) -> &[f64] {
        self.component(H)
    }

    pub fn y_xi(&self) -> &[f64] {
        self.component(Y_XI)
    }

    pub fn u_xi(&self) -> &[f64] {
        self.component(U_XI)
    }

    /// Same grid and asymptote, new component data.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.xi.clone(), data, self.asymptote)
    }

    pub fn invariants(&self) -> InvariantReport {
        let (yx, h, ux) = (self.y_xi(), self.h(), self.u_xi());
        let mut r = InvariantReport {
            min_y_xi: f64::INFINITY,
            min_h: f64::INFINITY,
            min_y_xi_plus_h: f64::INFINITY,
            max_constraint_defect: 0.0,
            y_nondecreasing: self.y().windows(2).all(|w| w[1] >= w[0]),
        };
        for i in 0..self.len() {
            r.min_y_xi = r.min_y_xi.min(yx[i]);
            r.min_h = r.min_h.min(h[i]);
            r.min_y_xi_plus_h = r.min_y_xi_plus_h.min(yx[i] + h[i]);
            r.max_constraint_defect = r.max_constraint_defect.max((yx[i] * h[i] - ux[i] * ux[i]).abs());
        }
        r
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 120);
        s.push_str(CSV_HEADER);
        s.push('\n');
        let (y, u, h, yx, ux) = (self.y(), self.u(), self.h(), self.y_xi(), self.u_xi());
        for i in 0..self.len() {
            let _ = writeln!(s, "{},{},{},{},{},{}", self.xi[i], y[i], u[i], h[i], yx[i], ux[i]);
        }
        s
    }

    pub fn from_csv(text: &str, asymptote: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => return Err(Error::Parse(format!("expected header `{CSV_HEADER}`"))),
        }
        let mut cols: [Vec<f64>; 6] = Default::default();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!("line {}: expected 6 fields", ln + 2)));
            }
            for (c, f) in cols.iter_mut().zip(fields) {
                let v = f
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", ln + 2)))?;
                c.push(v);
            }
        }
        let [xi, y, u, h, yx, ux] = cols;
        Self::new(xi, &y, &u, &h, &yx, &ux, asymptote)
    }
}

/// The map L on a grid built from `spec` with seams at the ξ-images of all kinks.
pub fn to_lagrangian(e: &EulerianState, spec: &GridSpec) -> Result<LagrangianState> {
    let grid = spec.build_seamed(&e.seams())?;
    to_lagrangian_on(e, grid)
}

/// The map L evaluated at the nodes of a given grid.
pub fn to_lagrangian_on(e: &EulerianState, grid: Vec<f64>) -> Result<LagrangianState> {
    let cum = Cumulative::new(e);
    let n = grid.len();
    let mut data = vec![0.0; COMPONENTS * n];
    for (i, &xi) in grid.iter().enumerate() {
        let (y, slope) = cum.invert(xi);
        let (yx, ux) = match slope {
            Some(k) => {
                let yx = 1.0 / (1.0 + k * k);
                (yx, k * yx)
            }
            None => (0.0, 0.0),
        };
        data[Y * n + i] = y;
        data[U * n + i] = e.u(y);
        data[H * n + i] = 1.0 - yx;
        data[Y_XI * n + i] = yx;
        data[U_XI * n + i] = ux;
    }
    LagrangianState::from_parts(grid.into(), data, e.asymptote)
}

/// Pieces between consecutive seams that the grid resolves with fewer than two nodes.
pub fn resolution_warnings(e: &EulerianState, grid: &[f64]) -> Vec<String> {
    let mut seams = e.seams();
    seams.sort_by(f64::total_cmp);
    nodes_per_piece(grid, &seams)
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < 2)
        .map(|(i, c)| format!("ξ-piece [{}, {}] is resolved by {} node(s)", seams[i], seams[i + 1], c))
        .collect()
}

/// Output of the map M, sampled at the characteristic positions y(ξ_i).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledEulerian {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// h / y_ξ, infinite where y_ξ vanishes at an isolated node.
    pub density: Vec<f64>,
    /// Absolutely continuous mass lumped to each sample.
    pub mass: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub asymptote: f64,
}

impl SampledEulerian {
    /// Piecewise-linear interpolation of the samples, c outside their range.
    pub fn u_at(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 0 || x < self.x[0] || x > self.x[n - 1] {
            return self.asymptote;
        }
        let k = self.x.partition_point(|&v| v <= x);
        if k == n {
            return self.u[n - 1];
        }
        let (x0, x1) = (self.x[k - 1], self.x[k]);
        let t = (x - x0) / (x1 - x0);
        self.u[k - 1] + t * (self.u[k] - self.u[k - 1])
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.atoms.iter().map(|a| a.mass).sum::<f64>()
    }

    /// max_i |u_i − reference(x_i)|.
    pub fn sup_distance(&self, reference: impl Fn(f64) -> f64) -> f64 {
        self.x
            .iter()
            .zip(&self.u)
            .fold(0.0, |m, (&x, &u)| m.max((u - reference(x)).abs()))
    }

    /// Total variation distance between μ and a reference measure, sampled:
    /// the density mismatch |h/y_ξ − u_x²| is integrated over x with trapezoid
    /// weights at the samples, and atoms are matched by location (an unmatched
    /// atom counts with its full mass).
    pub fn measure_distance(&self, e: &EulerianState) -> f64 {
        let n = self.x.len();
        let mut ac = 0.0;
        for i in 0..n {
            let lo = if i > 0 { self.x[i - 1] } else { self.x[i] };
            let hi = if i + 1 < n { self.x[i + 1] } else { self.x[i] };
            let w = 0.5 * (hi - lo);
            if w > 0.0 {
                ac += w * (self.density[i] - e.density(self.x[i])).abs();
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        let mut atoms = 0.0;
        for a in &self.atoms {
            let other: f64 = e.atoms().iter().filter(|b| close(a.x, b.x)).map(|b| b.mass).sum();
            atoms += (a.mass - other).abs();
        }
        for b in e.atoms() {
            if !self.atoms.iter().any(|a| close(a.x, b.x)) {
                atoms += b.mass;
            }
        }
        ac + atoms
    }
}

/// The map M. Runs of at least two nodes with a common y and vanishing y_ξ
/// become atoms; everything else is a.c. mass lumped with trapezoid weights.
pub fn to_eulerian(x: &LagrangianState) -> SampledEulerian {
    let n = x.len();
    let (xi, y, u, h, yx) = (x.xi(), x.y(), x.u(), x.h(), x.y_xi());
    let scale = (0..n).fold(0.0f64, |m, i| m.max(yx[i] + h[i]));
    let thr = 1e-10 * scale;

    // maximal plateau runs [a, b] with b > a
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if yx[i] <= thr {
            let mut j = i;
            while j + 1 < n && yx[j + 1] <= thr && (y[j + 1] - y[i]).abs() <= 1e-12 * (1.0 + y[i].abs()) {
                j += 1;
            }
            if j > i {
                runs.push((i, j));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    // seam positions bounding each run, extrapolated from the outer neighbours
    let seam_left = |a: usize| -> f64 {
        if a == 0 || yx[a - 1] <= thr {
            return xi[a];
        }
        let p = a - 1;
        (xi[p] + (y[a] - y[p]) / yx[p]).clamp(xi[p], xi[a])
    };
    let seam_right = |b: usize| -> f64 {
        if b + 1 == n || yx[b + 1] <= thr {
            return xi[b];
        }
        let p = b + 1;
        (xi[p] - (y[p] - y[b]) / yx[p]).clamp(xi[b], xi[p])
    };

    let mut run_of = vec![usize::MAX; n];
    for (r, &(a, b)) in runs.iter().enumerate() {
        for k in a..=b {
            run_of[k] = r;
        }
    }
    let bounds: Vec<(f64, f64)> = runs.iter().map(|&(a, b)| (seam_left(a), seam_right(b))).collect();

    let mut out = SampledEulerian {
        x: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        density: Vec::with_capacity(n),
        mass: Vec::with_capacity(n),
        atoms: Vec::with_capacity(runs.len()),
        asymptote: x.asymptote(),
    };
    let mut i = 0;
    while i < n {
        if run_of[i] != usize::MAX {
            let r = run_of[i];
            let (a, b) = runs[r];
            let (sl, sr) = bounds[r];
            let inner = trapezoid(&xi[a..=b], h[a..=b].iter().copied());
            let mass = (xi[a] - sl) * h[a] + inner + (sr - xi[b]) * h[b];
            out.x.push(y[a]);
            out.u.push(u[a]);
            out.density.push(0.0);
            out.mass.push(0.0);
            out.atoms.push(Atom { x: y[a], mass });
            i = b + 1;
            continue;
        }
        let left = if i > 0 && run_of[i - 1] != usize::MAX {
            (xi[i] - bounds[run_of[i - 1]].1) * h[i]
        } else if i > 0 {
            0.5 * (xi[i] - xi[i - 1]) * h[i]
        } else {
            0.0
        };
        let right = if i + 1 < n && run_of[i + 1] != usize::MAX {
            (bounds[run_of[i + 1]].0 - xi[i]) * h[i]
        } else if i + 1 < n {
            0.5 * (xi[i + 1] - xi[i]) * h[i]
        } else {
            0.0
        };
        out.x.push(y[i]);
        out.u.push(u[i]);
        out.density.push(if yx[i] > 0.0 { h[i] / yx[i] } else { f64::INFINITY });
        out.mass.push(left + right);
        i += 1;
    }
    out
}

/// Strictly increasing relabeling ξ ↦ f(ξ) with f − id bounded.
pub trait Relabeling {
    fn apply(&self, xi: f64) -> f64;
    fn derivative(&self, xi: f64) -> f64;
    /// An upper bound for sup |f − id|.
    fn max_shift(&self) -> f64;

    fn inverse(&self, xi: f64) -> f64 {
        let b = self.max_shift() * (1.0 + 1e-12) + 1e-300;
        let tol = 1e-15 * (1.0 + xi.abs());
        bisect_increasing(|v| self.apply(v), xi, xi - b, xi + b, tol)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Relabeling for Identity {
    fn apply(&self, xi: f64) -> f64 {
        xi
    }
    fn derivative(&self, _: f64) -> f64 {
        1.0
    }
    fn max_shift(&self) -> f64 {
        0.0
    }
    fn inverse(&self, xi: f64) -> f64 {
        xi
    }
}

/// f(ξ) = ξ + a·exp(−((ξ − center)/width)²).
#[derive(Debug, Clone, Copy)]
pub struct GaussianBump {
    amplitude: f64,
    center: f64,
    width: f64,
}

impl GaussianBump {
    pub fn new(amplitude: f64, center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !amplitude.is_finite() || !center.is_finite() {
            return domain("bump needs finite amplitude and centre and positive width");
        }
        // min f' = 1 − 2|a| max(t e^{−t²}) / w = 1 − |a| √(2/e) / w
        if amplitude.abs() * (2.0 / std::f64::consts::E).sqrt() >= width {
            return domain("bump relabeling is not strictly increasing");
        }
        Ok(Self {
            amplitude,
            center,
            width,
        })
    }
}

impl Relabeling for GaussianBump {
    fn apply(&self, xi: f64) -> f64 {
        let t = (xi - self.center) / self.width;
        xi + self.amplitude * (-t * t).exp()
    }
    fn derivative(&self, xi: f64) -> f64 {
        let t = (xi - self.center) / self.width;
        1.0 - 2.0 * self.amplitude * t / self.width * (-t * t).exp()
    }
    fn max_shift(&self) -> f64 {
        self.amplitude.abs()
    }
}

/// X ∘ f on the grid f⁻¹(ξ_i), so that nodal values of y and U are unchanged
/// and y_ξ, U_ξ, h pick up the factor f_ξ.
pub fn relabel(x: &LagrangianState, f: &dyn Relabeling) -> Result<LagrangianState> {
    let n = x.len();
    let grid: Vec<f64> = x.xi().iter().map(|&v| f.inverse(v)).collect();
    if !grid.windows(2).all(|w| w[1] > w[0]) {
        return domain("relabeling is not strictly increasing on the grid");
    }
    let mut data = x.data().to_vec();
    for (i, &g) in grid.iter().enumerate() {
        let d = f.derivative(g);
        if !(d > 0.0) || !d.is_finite() {
            return domain(format!("relabeling derivative {d} is not positive at ξ = {g}"));
        }
        for k in [H, Y_XI, U_XI] {
            data[k * n + i] *= d;
        }
    }
    LagrangianState::from_parts(grid.into(), data, x.asymptote())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::piecewise_linear;

    fn hat() -> EulerianState {
        EulerianState::from_profile(piecewise_linear(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap()).unwrap()
    }

    fn zero() -> PiecewiseLinearProfile {
        piecewise_linear(&[(0.0, 0.0), (1.0, 0.0)]).unwrap()
    }

    fn delta() -> EulerianState {
        EulerianState::new(zero(), 0.0, vec![Atom { x: 0.0, mass: 1.0 }]).unwrap()
    }

    #[test]
    fn zero_state_maps_to_identity() {
        let e = EulerianState::from_profile(zero()).unwrap();
        let x = to_lagrangian(&e, &GridSpec::with_nodes(64)).unwrap();
        for i in 0..x.len() {
            assert!((x.y()[i] - x.xi()[i]).abs() < 1e-13);
            assert_eq!(x.u()[i], 0.0);
            assert_eq!(x.h()[i], 0.0);
        }
        let m = to_eulerian(&x);
        assert!(m.atoms.is_empty());
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn delta_plateau() {
        let x = to_lagrangian(&delta(), &GridSpec::with_nodes(200)).unwrap();
        for i in 0..x.len() {
            let xi = x.xi()[i];
            let (y, h) = (x.y()[i], x.h()[i]);
            if xi <= 0.0 {
                assert!((y - xi).abs() < 1e-13 && h == 0.0);
            } else if xi < 1.0 {
                assert!(y == 0.0 && h == 1.0);
            } else {
                assert!((y - (xi - 1.0)).abs() < 1e-13 && h == 0.0);
            }
        }
        let m = to_eulerian(&x);
        assert_eq!(m.atoms.len(), 1);
        assert_eq!(m.atoms[0].x, 0.0);
        assert!((m.atoms[0].mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_relations_after_l() {
        let x = to_lagrangian(&hat(), &GridSpec::with_nodes(256)).unwrap();
        let r = x.invariants();
        assert!(r.max_constraint_defect < 1e-15);
        for i in 0..x.len() {
            assert_eq!(x.y_xi()[i] + x.h()[i], 1.0);
        }
        for w in x.y().windows(2).zip(x.xi().windows(2)) {
            assert!(w.0[1] - w.0[0] <= (w.1[1] - w.1[0]) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn round_trip_hat() {
        let e = hat();
        let x = to_lagrangian(&e, &GridSpec::with_nodes(1024)).unwrap();
        let m = to_eulerian(&x);
        assert!(m.sup_distance(|v| e.u(v)) < 1e-12);
        assert!(m.measure_distance(&e) < 1e-9);
        assert!(m.atoms.is_empty());
    }

    #[test]
    fn relabel_identity_and_bump() {
        let e = hat();
        let x = to_lagrangian(&e, &GridSpec::with_nodes(512)).unwrap();
        assert_eq!(relabel(&x, &Identity).unwrap(), x);
        let f = GaussianBump::new(0.1, 0.0, 1.0).unwrap();
        let z = relabel(&x, &f).unwrap();
        let (a, b) = (to_eulerian(&x), to_eulerian(&z));
        assert_eq!(a.x.len(), b.x.len());
        assert!(b.sup_distance(|v| a.u_at(v)) < 1e-8);
        let ha = trapezoid(x.xi(), x.h().iter().copied());
        let hb = trapezoid(z.xi(), z.h().iter().copied());
        assert!((ha - hb).abs() < 1e-4 * ha);
        assert!(z.invariants().max_constraint_defect < 1e-14);
    }

    #[test]
    fn non_monotone_bump_rejected() {
        assert!(GaussianBump::new(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let x = to_lagrangian(&hat(), &GridSpec::with_nodes(32)).unwrap();
        let back = LagrangianState::from_csv(&x.to_csv(), 0.0).unwrap();
        assert_eq!(back, x);
        assert!(LagrangianState::from_csv("a,b\n", 0.0).is_err());
    }

    #[test]
    fn energy_of_hat() {
        assert!((hat().energy() - 8.0 / 3.0).abs() < 1e-15);
    }
}
