//! Prediction, bracketing and detection of wave breaking.
//!
//! A label ξ breaks at time τ when y_ξ(τ, ξ) = 0. Since y_ξ h = U_ξ² and
//! h > 0 there, U_ξ vanishes at the same instant and changes sign from
//! negative to positive. Detection uses the sign change as the primary signal
//! and a dip of y_ξ as confirmation.

use std::fmt::Write as _;

use serde::Serialize;

use crate::coords::LagrangianState;
use crate::dynamics::Trajectory;
use crate::error::{domain, Result};
use crate::kernel::compute_pq;

fn check_energy(energy: f64) -> Result<()> {
    if !(energy >= 0.0) || !energy.is_finite() {
        return domain("energy must be finite and nonnegative");
    }
    Ok(())
}

/// Time T > 0 by which a profile with slope `slope` and total energy
/// `energy` has broken: (s + √(2C))/(s − √(2C)) = exp(−√(2C)T), C = 2·energy.
///
/// `None` when s ≥ −√(2C), where no forward statement is available.
pub fn predict_forward(slope: f64, energy: f64) -> Result<Option<f64>> {
    check_energy(energy)?;
    if slope.is_nan() {
        return domain("slope is NaN");
    }
    let r = (4.0 * energy).sqrt();
    if !(slope < -r) {
        return Ok(None);
    }
    if slope == f64::NEG_INFINITY {
        return Ok(Some(0.0));
    }
    if r == 0.0 {
        // Riccati limit u_x' = −u_x²/2
        return Ok(Some(-2.0 / slope));
    }
    // ln((s − r)/(s + r)) = ln(1 − 2r/(s + r))
    Ok(Some((-2.0 * r / (slope + r)).ln_1p() / r))
}

/// Mirror of [`predict_forward`]: a time T < 0 such that breaking occurred in [T, 0].
pub fn predict_backward(slope: f64, energy: f64) -> Result<Option<f64>> {
    Ok(predict_forward(-slope, energy)?.map(|t| -t))
}

/// Maximal node ranges (inclusive) of κ_{1−γ} = { h/(y_ξ + h) ≥ 1 − γ, U_ξ ≤ 0 }.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaSet {
    pub gamma: f64,
    pub intervals: Vec<(usize, usize)>,
}

/// Relative slack in the energy-fraction comparison.
pub const KAPPA_TOL: f64 = 1e-12;

impl KappaSet {
    pub fn contains(&self, node: usize) -> bool {
        let k = self.intervals.partition_point(|r| r.1 < node);
        k < self.intervals.len() && self.intervals[k].0 <= node
    }

    pub fn len(&self) -> usize {
        self.intervals.iter().map(|(a, b)| b - a + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.intervals.iter().flat_map(|&(a, b)| a..=b)
    }
}

pub fn kappa_set(x0: &LagrangianState, gamma: f64) -> Result<KappaSet> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return domain("γ must lie in (0, 1/2]");
    }
    let (h, yx, ux) = (x0.h(), x0.y_xi(), x0.u_xi());
    let mut intervals = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..x0.len() {
        let s = yx[i] + h[i];
        let inside = ux[i] <= 0.0 && h[i] >= (1.0 - gamma) * s * (1.0 - KAPPA_TOL);
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                intervals.push((a, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        intervals.push((a, x0.len() - 1));
    }
    Ok(KappaSet { gamma, intervals })
}

/// Window [t2, t1] for the first breaking time of labels in κ_{1−γ}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowParams {
    pub gamma: f64,
    pub c_of_m: f64,
    /// Upper end; infinite when ½ − C(M)γ ≤ 0 and only the lower end is available.
    pub t1: f64,
    pub t2: f64,
}

impl WindowParams {
    pub fn has_upper_bound(&self) -> bool {
        self.t1.is_finite()
    }

    /// The window scaled by `factor` ≥ 1 on both ends: [t2/factor, t1·factor].
    pub fn inflated(&self, factor: f64) -> (f64, f64) {
        (self.t2 / factor, self.t1 * factor)
    }
}

/// t1 = √(γ(1−γ))/(½ − Cγ), t2 = √(γ(1−γ))/(½ + Cγ).
pub fn breaking_window(gamma: f64, c_of_m: f64) -> Result<WindowParams> {
    let w = breaking_window_lower(gamma, c_of_m)?;
    if !w.has_upper_bound() {
        return domain(format!(
            "need 1/2 − C(M)·γ > 0, got 1/2 − {c_of_m}·{gamma} = {}",
            0.5 - c_of_m * gamma
        ));
    }
    Ok(w)
}

/// As [`breaking_window`], but returns t1 = ∞ instead of failing when ½ − Cγ ≤ 0.
pub fn breaking_window_lower(gamma: f64, c_of_m: f64) -> Result<WindowParams> {
    if !(gamma > 0.0 && gamma < 1.0) || !(c_of_m >= 0.0) || !c_of_m.is_finite() {
        return domain("window needs γ in (0, 1) and finite C(M) >= 0");
    }
    let num = (gamma * (1.0 - gamma)).sqrt();
    let lo = 0.5 - c_of_m * gamma;
    let t1 = if lo > 0.0 { num / lo } else { f64::INFINITY };
    Ok(WindowParams {
        gamma,
        c_of_m,
        t1,
        t2: num / (0.5 + c_of_m * gamma),
    })
}

/// Heuristic stand-in for C(M): 2·sup|U² − P| + 1 at the given state.
pub fn estimate_c_of_m(x0: &LagrangianState) -> Result<f64> {
    let (p, _) = compute_pq(x0)?;
    let u = x0.u();
    let sup = (0..x0.len()).fold(0.0f64, |m, i| m.max((u[i] * u[i] - p[i]).abs()));
    Ok(2.0 * sup + 1.0)
}

/// Closed-form time derivative of the ratio U_ξ/(y_ξ + h):
///
/// ```text
/// ½ + (U² − P − ½)·y_ξ/(y_ξ + h) − (2U² − 2P + 1)·U_ξ²/(y_ξ + h)²
/// ```
pub fn ratio_rate(x: &LagrangianState) -> Result<Vec<f64>> {
    let (p, _) = compute_pq(x)?;
    let (u, h, yx, ux) = (x.u(), x.h(), x.y_xi(), x.u_xi());
    Ok((0..x.len())
        .map(|i| {
            let s = yx[i] + h[i];
            let w = u[i] * u[i] - p[i];
            0.5 + (w - 0.5) * yx[i] / s - (2.0 * w + 1.0) * ux[i] * ux[i] / (s * s)
        })
        .collect())
}

/// U_ξ/(y_ξ + h) at every node.
pub fn ratio(x: &LagrangianState) -> Vec<f64> {
    let (h, yx, ux) = (x.h(), x.y_xi(), x.u_xi());
    (0..x.len()).map(|i| ux[i] / (yx[i] + h[i])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

impl Confidence {
    fn as_str(self) -> &'static str {
        match self {
            Confidence::High => "high",
            Confidence::Low => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakingEvent {
    pub node: usize,
    pub xi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// 1 for the first breaking of this label, 2 for the second, …
    pub ordinal: usize,
    /// Minimum of the cubic Hermite interpolant of y_ξ over the bracket.
    pub min_y_xi: f64,
    pub u_xi_before: f64,
    pub u_xi_after: f64,
    pub confidence: Confidence,
}

impl BreakingEvent {
    pub fn width(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

pub const EVENTS_HEADER: &str = "node,xi,t_lo,t_hi,ordinal,min_y_xi,confidence";

pub fn events_to_csv(events: &[BreakingEvent]) -> String {
    let mut s = String::from(EVENTS_HEADER);
    s.push('\n');
    for e in events {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.node,
            e.xi,
            e.t_lo,
            e.t_hi,
            e.ordinal,
            e.min_y_xi,
            e.confidence.as_str()
        );
    }
    s
}

/// Minimum over [0, 1] of the cubic Hermite interpolant with end values
/// `p0, p1` and end slopes `m0, m1` (slopes per unit parameter).
fn hermite_min(p0: f64, p1: f64, m0: f64, m1: f64) -> f64 {
    let eval = |s: f64| {
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * m1
    };
    // derivative: a s² + b s + c
    let a = 6.0 * p0 + 3.0 * m0 - 6.0 * p1 + 3.0 * m1;
    let b = -6.0 * p0 - 4.0 * m0 + 6.0 * p1 - 2.0 * m1;
    let c = m0;
    let mut best = p0.min(p1);
    let mut consider = |s: f64| {
        if s > 0.0 && s < 1.0 {
            best = best.min(eval(s));
        }
    };
    if a.abs() < 1e-300 {
        if b != 0.0 {
            consider(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let qq = -0.5 * (b + b.signum() * sq);
            if qq != 0.0 {
                consider(qq / a);
                consider(c / qq);
            } else {
                consider(0.0);
            }
        }
    }
    best
}

#[derive(Clone, Copy)]
struct Sample {
    t: f64,
    index: usize,
    u_xi: f64,
    y_xi: f64,
}

/// Streaming detector fed with successive snapshots of one run. Memory is
/// O(N) regardless of the number of snapshots.
pub struct BreakingDetector {
    eps_break: f64,
    threshold: Option<f64>,
    xi: Vec<f64>,
    dir: Option<f64>,
    count: usize,
    first_t: f64,
    last_seen: Vec<Option<Sample>>,
    ordinals: Vec<usize>,
    events: Vec<BreakingEvent>,
    unconfirmed: usize,
}

impl BreakingDetector {
    /// `eps_break` is relative to the median of the initial y_ξ.
    pub fn new(eps_break: f64) -> Self {
        Self {
            eps_break,
            threshold: None,
            xi: Vec::new(),
            dir: None,
            count: 0,
            first_t: 0.0,
            last_seen: Vec::new(),
            ordinals: Vec::new(),
            events: Vec::new(),
            unconfirmed: 0,
        }
    }

    /// Absolute y_ξ threshold, fixed by the first snapshot.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn observe(&mut self, t: f64, x: &LagrangianState) {
        let n = x.len();
        if self.threshold.is_none() {
            let mut v = x.y_xi().to_vec();
            v.sort_by(f64::total_cmp);
            let med = if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            };
            self.threshold = Some(self.eps_break * med);
            self.xi = x.xi().to_vec();
            self.last_seen = vec![None; n];
            self.ordinals = vec![0; n];
            self.first_t = t;
        } else if self.dir.is_none() {
            self.dir = Some(if t >= self.first_t { 1.0 } else { -1.0 });
        }
        let thr = self.threshold.unwrap_or(0.0);
        // in stream order a forward-time crossing −→+ appears as `first` then `second`
        let dir = self.dir.unwrap_or(1.0);
        let index = self.count;
        self.count += 1;
        let (yx, ux) = (x.y_xi(), x.u_xi());
        for i in 0..n {
            let cur = Sample {
                t,
                index,
                u_xi: ux[i],
                y_xi: yx[i],
            };
            let s = ux[i] * dir;
            if s < 0.0 {
                self.last_seen[i] = Some(cur);
            } else if s > 0.0 {
                if let Some(prev) = self.last_seen[i].take() {
                    let (a, b) = if prev.t <= cur.t { (prev, cur) } else { (cur, prev) };
                    let dt = b.t - a.t;
                    let min = hermite_min(a.y_xi, b.y_xi, a.u_xi * dt, b.u_xi * dt);
                    if min <= thr {
                        self.ordinals[i] += 1;
                        self.events.push(BreakingEvent {
                            node: i,
                            xi: self.xi[i],
                            t_lo: a.t,
                            t_hi: b.t,
                            ordinal: self.ordinals[i],
                            min_y_xi: min,
                            u_xi_before: a.u_xi,
                            u_xi_after: b.u_xi,
                            confidence: if cur.index - prev.index > 1 {
                                Confidence::Low
                            } else {
                                Confidence::High
                            },
                        });
                    } else {
                        self.unconfirmed += 1;
                    }
                }
            }
        }
    }

    /// Sign changes of U_ξ that were not accompanied by a y_ξ dip.
    pub fn unconfirmed_crossings(&self) -> usize {
        self.unconfirmed
    }

    pub fn events(&self) -> &[BreakingEvent] {
        &self.events
    }

    /// Events sorted by node, then ordinal.
    pub fn finish(mut self) -> Vec<BreakingEvent> {
        self.events
            .sort_by(|a, b| (a.node, a.ordinal).cmp(&(b.node, b.ordinal)));
        self.events
    }
}

/// Default relative threshold for the y_ξ confirmation.
pub const EPS_BREAK: f64 = 1e-6;

pub fn detect_breaking(traj: &Trajectory, eps_break: f64) -> Vec<BreakingEvent> {
    let mut d = BreakingDetector::new(eps_break);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        d.observe(*t, s);
    }
    d.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub t_hat: f64,
    pub passed: bool,
    /// Smallest lower bound t_lo(j+1) − t_hi(j) over all labels with repeated events.
    pub min_gap: Option<f64>,
    pub nodes_with_repeats: usize,
    pub violations: Vec<usize>,
}

pub fn check_separation(events: &[BreakingEvent], t_hat: f64) -> SeparationReport {
    let mut ev: Vec<&BreakingEvent> = events.iter().collect();
    ev.sort_by(|a, b| a.node.cmp(&b.node).then(a.t_lo.total_cmp(&b.t_lo)));
    let mut min_gap: Option<f64> = None;
    let mut violations = Vec::new();
    let mut repeats = 0;
    let mut i = 0;
    while i < ev.len() {
        let mut j = i;
        while j + 1 < ev.len() && ev[j + 1].node == ev[i].node {
            j += 1;
        }
        if j > i {
            repeats += 1;
            for k in i..j {
                let gap = ev[k + 1].t_lo - ev[k].t_hi;
                min_gap = Some(min_gap.map_or(gap, |m| m.min(gap)));
                if !(gap > t_hat) && violations.last() != Some(&ev[i].node) {
                    violations.push(ev[i].node);
                }
            }
        }
        i = j + 1;
    }
    SeparationReport {
        t_hat,
        passed: violations.is_empty(),
        min_gap,
        nodes_with_repeats: repeats,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_examples() {
        let t = predict_forward(-6.0, 1.0).unwrap().unwrap();
        assert!((t - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        assert_eq!(predict_forward(-2.0, 1.0).unwrap(), None);
        assert_eq!(predict_forward(3.0, 1.0).unwrap(), None);
        assert!(predict_forward(-1e12, 1.0).unwrap().unwrap() < 1e-11);
        assert!(predict_forward(-2.0 * (1.0 + 1e-9), 1.0).unwrap().unwrap() > 5.0);
        assert_eq!(predict_backward(6.0, 1.0).unwrap().unwrap(), -t);
        assert!(predict_forward(-1.0, -1.0).is_err());
    }

    #[test]
    fn window_examples() {
        let w = breaking_window(0.01, 1.0).unwrap();
        assert!((w.t1 - 0.203_060).abs() < 5e-6 && (w.t2 - 0.195_096).abs() < 5e-6);
        assert!(breaking_window(0.4, 2.0).is_err());
        let l = breaking_window_lower(0.4, 2.0).unwrap();
        assert!(!l.has_upper_bound() && l.t2 > 0.0);
    }

    #[test]
    fn hermite_minimum() {
        // p(s) = (s − ½)² has p(0)=p(1)=¼, p'(0)=−1, p'(1)=1
        assert!(hermite_min(0.25, 0.25, -1.0, 1.0).abs() < 1e-15);
        assert_eq!(hermite_min(1.0, 2.0, 1.0, 1.0), 1.0);
    }

    #[test]
    fn separation_synthetic() {
        let ev = |node, t_lo: f64, ordinal| BreakingEvent {
            node,
            xi: 0.0,
            t_lo,
            t_hi: t_lo + 0.01,
            ordinal,
            min_y_xi: 0.0,
            u_xi_before: -1.0,
            u_xi_after: 1.0,
            confidence: Confidence::High,
        };
        let r = check_separation(&[ev(3, 0.1, 1), ev(3, 0.41, 2), ev(4, 0.2, 1)], 0.2);
        assert!(r.passed);
        assert!((r.min_gap.unwrap() - 0.3).abs() < 1e-12);
        assert!(!check_separation(&[ev(3, 0.1, 1), ev(3, 0.2, 2)], 0.2).passed);
        assert!(check_separation(&[], 1.0).passed);
    }

    #[test]
    fn csv_header() {
        assert!(events_to_csv(&[]).starts_with(EVENTS_HEADER));
    }
}
