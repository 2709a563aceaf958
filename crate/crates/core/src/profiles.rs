//! Piecewise-linear initial profiles with compact support.
//!
//! A [`PiecewiseLinearProfile`] is `k_j x + d_j` on `[x_j, x_{j+1}]` and zero
//! outside `[x_first, x_last]`. Besides the general builder, this module
//! constructs the accumulating-breaking profile: alternating steep descents
//! and ascents whose widths shrink like `q^{4j}` while the slopes grow like
//! `q^{-j}`, so that every descent breaks and the breaking times tend to zero.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Relative tolerance used when validating continuity and endpoint zeros.
const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearProfile {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
}

impl PiecewiseLinearProfile {
    /// Builds a profile from raw segment data, checking shape, ordering,
    /// continuity and the zero boundary values.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        let p = Self {
            breakpoints,
            slopes,
            intercepts,
        };
        p.validate()?;
        Ok(p)
    }

    /// Re-checks the invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.breakpoints.len();
        if n < 2 {
            return domain("a profile needs at least two breakpoints");
        }
        if self.slopes.len() != n - 1 || self.intercepts.len() != n - 1 {
            return domain(format!(
                "expected {} slopes and intercepts, got {} and {}",
                n - 1,
                self.slopes.len(),
                self.intercepts.len()
            ));
        }
        let all = self.breakpoints.iter().chain(&self.slopes).chain(&self.intercepts);
        if all.into_iter().any(|v| !v.is_finite()) {
            return domain("profile data must be finite");
        }
        if self.breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return domain("breakpoints must be strictly increasing");
        }
        let scale = self.term_scale().max(1.0);
        if self.continuity_defect() > CONTINUITY_TOL * scale {
            return domain(format!(
                "profile is discontinuous (defect {:e})",
                self.continuity_defect()
            ));
        }
        let left = self.slopes[0] * self.breakpoints[0] + self.intercepts[0];
        let right = self.slopes[n - 2] * self.breakpoints[n - 1] + self.intercepts[n - 2];
        if left.abs() > CONTINUITY_TOL * scale || right.abs() > CONTINUITY_TOL * scale {
            return domain("profile must vanish at both ends of its support");
        }
        Ok(())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn segment_count(&self) -> usize {
        self.slopes.len()
    }

    /// Support interval `[x_first, x_last]`.
    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Largest jump between the one-sided values at interior breakpoints.
    pub fn continuity_defect(&self) -> f64 {
        (1..self.slopes.len())
            .map(|j| {
                let x = self.breakpoints[j];
                let left = self.slopes[j - 1] * x + self.intercepts[j - 1];
                let right = self.slopes[j] * x + self.intercepts[j];
                (left - right).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Size of the terms k_j·x and d_j whose cancellation produces the values;
    /// rounding in the continuity check is relative to it.
    fn term_scale(&self) -> f64 {
        (0..self.slopes.len())
            .map(|j| {
                let x = self.breakpoints[j].abs().max(self.breakpoints[j + 1].abs());
                (self.slopes[j] * x).abs() + self.intercepts[j].abs()
            })
            .fold(0.0, f64::max)
    }

    /// Index of the segment containing `x`, using right limits at breakpoints.
    /// `None` outside the half-open support `[x_first, x_last)`.
    pub fn segment_at(&self, x: f64) -> Option<usize> {
        let b = &self.breakpoints;
        if !(x >= b[0] && x < b[b.len() - 1]) {
            return None;
        }
        // first breakpoint strictly greater than x, minus one
        let idx = b.partition_point(|&bp| bp <= x);
        Some(idx - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        if x == b[b.len() - 1] {
            let j = self.slopes.len() - 1;
            return self.slopes[j] * x + self.intercepts[j];
        }
        match self.segment_at(x) {
            Some(j) => self.slopes[j] * x + self.intercepts[j],
            None => 0.0,
        }
    }

    /// Derivative with the right-limit convention at breakpoints.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.segment_at(x).map_or(0.0, |j| self.slopes[j])
    }

    /// Values at the breakpoints (left and right limits agree up to rounding).
    pub fn values(&self) -> Vec<f64> {
        let n = self.breakpoints.len();
        (0..n)
            .map(|i| {
                let j = i.min(n - 2);
                self.slopes[j] * self.breakpoints[i] + self.intercepts[j]
            })
            .collect()
    }

    /// `‖u‖²_{L²} + ‖u_x‖²_{L²}`, summed exactly segment by segment.
    pub fn h1_norm_sq(&self) -> f64 {
        (0..self.slopes.len())
            .map(|j| {
                let (x0, x1) = (self.breakpoints[j], self.breakpoints[j + 1]);
                let w = x1 - x0;
                let a = self.slopes[j] * x0 + self.intercepts[j];
                let b = self.slopes[j] * x1 + self.intercepts[j];
                w * (a * a + a * b + b * b) / 3.0 + self.slopes[j] * self.slopes[j] * w
            })
            .sum()
    }

    /// JSON as `{"breakpoints": [...], "slopes": [...], "intercepts": [...]}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Continuous piecewise-linear interpolant through `(x, u)` points.
///
/// The first and last values must be zero so the result has compact support.
pub fn piecewise_linear(points: &[(f64, f64)]) -> Result<PiecewiseLinearProfile> {
    if points.len() < 2 {
        return domain("need at least two points");
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return domain("x values must be strictly increasing");
    }
    if points[0].1 != 0.0 || points[points.len() - 1].1 != 0.0 {
        return domain("first and last values must be zero");
    }
    let breakpoints = points.iter().map(|p| p.0).collect();
    let (slopes, intercepts) = points
        .windows(2)
        .map(|w| {
            let k = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            (k, w[0].1 - k * w[0].0)
        })
        .unzip();
    PiecewiseLinearProfile::new(breakpoints, slopes, intercepts)
}

/// q^n by binary exponentiation. Unlike `powi`, the result does not depend
/// on whether the compiler folds the call.
pub fn pow_int(q: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / q } else { q };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// Slope of descent `2j` of the accumulating profile: `-q^{1-j}`.
pub fn descent_slope(q: f64, j: usize) -> f64 {
    -pow_int(q, 1 - j as i32)
}

/// Slope of ascent `2j+1`: `(q + q^4) / (2 q^j)`.
pub fn ascent_slope(q: f64, j: usize) -> f64 {
    0.5 * (q + pow_int(q, 4)) / pow_int(q, j as i32)
}

/// Accumulating-breaking profile truncated after descent `2J`.
///
/// Segment layout of the returned profile:
/// * segment `0`: left ramp on `[-2/(1-q^4), 0]`, value `q/2` at `x = 0`;
/// * segment `1 + i` for `i = 0..=2J`: piece `i` on `[x_i, x_{i+1}]`
///   (even `i` descend, odd `i` ascend);
/// * last segment: connector with the next ascent slope, closing to zero.
///
/// Breakpoints follow `x_0 = 0`, `x_{2j+1} - x_{2j} = x_{2j+2} - x_{2j+1} = q^{4j}`.
pub fn accumulating_profile(q: f64, segments: usize) -> Result<PiecewiseLinearProfile> {
    if !(q > 0.0 && q < 1.0) {
        return domain(format!("q must lie in (0, 1), got {q}"));
    }
    if segments == 0 {
        return domain("segment count J must be at least 1");
    }
    let j_max = segments;
    let q4 = pow_int(q, 4);

    let mut breakpoints = vec![-2.0 / (1.0 - q4), 0.0];
    let mut slopes = vec![0.25 * q * (1.0 - q4)];
    let mut intercepts = vec![0.5 * q];

    let mut x = 0.0;
    for i in 0..=2 * j_max {
        let j = i / 2;
        let width = pow_int(q, 4 * j as i32);
        x += width;
        breakpoints.push(x);
        let qj1 = pow_int(q, j as i32 - 1);
        let qn = |e: usize| pow_int(q, e as i32);
        if i % 2 == 0 {
            slopes.push(descent_slope(q, j));
            intercepts.push(0.5 / (qj1 * (1.0 - q4)) * (4.0 - 3.0 * qn(4 * j) - qn(4 * (j + 1))));
        } else {
            slopes.push(ascent_slope(q, j));
            intercepts.push(
                -0.5 / (qj1 * (1.0 - q4))
                    * (2.0 + 2.0 * pow_int(q, 3) - qn(4 * j + 3) - 2.0 * qn(4 * j + 4) - qn(4 * j + 7)),
            );
        }
    }

    // Connector: continue with the next ascent slope until the profile reaches
    // zero. The end value -q^{3J+1}/2 is used in closed form; evaluating the
    // last piece would cancel digits of the large intercepts.
    let end_value = -0.5 * pow_int(q, 3 * j_max as i32 + 1);
    let k = ascent_slope(q, j_max);
    let root = x - end_value / k;
    breakpoints.push(root);
    slopes.push(k);
    intercepts.push(-k * root);

    if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
        return domain(format!(
            "segment widths q^(4j) are not representable next to x = {x} for q = {q}, J = {j_max}"
        ));
    }
    PiecewiseLinearProfile::new(breakpoints, slopes, intercepts)
}

/// Maps a descent index `j` to its segment index inside [`accumulating_profile`].
pub fn descent_segment(j: usize) -> usize {
    1 + 2 * j
}

/// Maps an ascent index `j` to its segment index; `j = J` is the connector.
pub fn ascent_segment(j: usize) -> usize {
    2 + 2 * j
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hat() -> PiecewiseLinearProfile {
        piecewise_linear(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn breakpoint_recursion_for_half() {
        let p = accumulating_profile(0.5, 2).unwrap();
        let x = &p.breakpoints()[1..];
        let expect = [0.0, 1.0, 2.0, 2.0625, 2.125];
        for (a, b) in x.iter().zip(expect) {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn descent_slopes_for_half() {
        let p = accumulating_profile(0.5, 2).unwrap();
        assert_eq!(p.slopes()[descent_segment(0)], -0.5);
        assert_eq!(p.slopes()[descent_segment(1)], -1.0);
        assert_eq!(p.slopes()[descent_segment(2)], -2.0);
    }

    #[test]
    fn anchor_values() {
        for &q in &[0.3, 0.5, 0.8, 0.95] {
            let p = accumulating_profile(q, 3).unwrap();
            assert!((p.eval(0.0) - q / 2.0).abs() < 1e-15);
            assert!(p.eval(-2.0 / (1.0 - q.powi(4))).abs() < 1e-15);
            let (_, right) = p.support();
            assert!(p.eval(right).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(accumulating_profile(0.0, 2).is_err());
        assert!(accumulating_profile(1.0, 2).is_err());
        assert!(accumulating_profile(-0.2, 2).is_err());
        assert!(accumulating_profile(0.5, 0).is_err());
        assert!(accumulating_profile(0.05, 9).is_err());
    }

    #[test]
    fn builder_examples() {
        let h = hat();
        assert_eq!(h.slopes(), &[1.0, -1.0]);
        let z = piecewise_linear(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert_eq!(z.slopes(), &[0.0]);
        assert_eq!(z.h1_norm_sq(), 0.0);
        let t = piecewise_linear(&[(0.0, 0.0), (1.0, 3.0), (1.5, 0.0)]).unwrap();
        assert_eq!(t.slopes(), &[3.0, -6.0]);
    }

    #[test]
    fn builder_errors() {
        assert!(piecewise_linear(&[(0.0, 0.0), (0.0, 0.0)]).is_err());
        assert!(piecewise_linear(&[(1.0, 0.0), (0.0, 0.0)]).is_err());
        assert!(piecewise_linear(&[(0.0, 1.0), (1.0, 0.0)]).is_err());
        assert!(piecewise_linear(&[(0.0, 0.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn evaluation() {
        let h = hat();
        assert_eq!(h.eval(0.5), 0.5);
        assert_eq!(h.eval(-3.0), 0.0);
        assert_eq!(h.eval(7.0), 0.0);
        assert_eq!(h.eval_derivative(1.0), -1.0);
        assert_eq!(h.eval_derivative(0.0), 1.0);
        assert_eq!(h.eval_derivative(2.0), 0.0);
    }

    #[test]
    fn hat_h1_norm() {
        assert!((hat().h1_norm_sq() - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn h1_norm_matches_simpson() {
        let p = accumulating_profile(0.5, 6).unwrap();
        let oracle: f64 = p
            .breakpoints()
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let k = p.eval_derivative(mid);
                simpson(|x| p.eval(x).powi(2) + k * k, w[0], w[1], 64)
            })
            .sum();
        assert!(
            (p.h1_norm_sq() - oracle).abs() < 1e-10,
            "{} vs {}",
            p.h1_norm_sq(),
            oracle
        );
    }

    #[test]
    fn slope_signs_on_pieces() {
        let q = 0.8;
        let p = accumulating_profile(q, 5).unwrap();
        for j in 0..=5 {
            let s = descent_segment(j);
            let mid = 0.5 * (p.breakpoints()[s] + p.breakpoints()[s + 1]);
            assert_eq!(p.eval_derivative(mid), descent_slope(q, j));
            assert!(descent_slope(q, j) < 0.0);
        }
        for j in 0..5 {
            let s = ascent_segment(j);
            let mid = 0.5 * (p.breakpoints()[s] + p.breakpoints()[s + 1]);
            assert_eq!(p.eval_derivative(mid), ascent_slope(q, j));
            assert!(ascent_slope(q, j) > 0.0);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = accumulating_profile(0.7, 4).unwrap();
        let back = PiecewiseLinearProfile::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn json_rejects_invalid() {
        let bad = r#"{"breakpoints":[0,1],"slopes":[1],"intercepts":[0]}"#;
        assert!(PiecewiseLinearProfile::from_json(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn continuous_for_all_q(q in 0.5f64..0.97, j in 1usize..8) {
                let p = accumulating_profile(q, j).unwrap();
                prop_assert!(p.continuity_defect() <= 1e-12 * p.term_scale().max(1.0));
            }

            #[test]
            fn h1_norm_grows_with_j_and_stays_bounded(q in 0.7f64..0.9, j in 1usize..7) {
                let a = accumulating_profile(q, j).unwrap().h1_norm_sq();
                let b = accumulating_profile(q, j + 1).unwrap().h1_norm_sq();
                let far = accumulating_profile(q, j + 10).unwrap().h1_norm_sq();
                prop_assert!(b > a);
                // geometric tail: each further pair adds at most 2 q^{2j}
                prop_assert!(far - a <= 4.0 * q.powi(2 * j as i32) / (1.0 - q * q));
            }

            #[test]
            fn json_round_trip(q in 0.5f64..0.95, j in 1usize..7) {
                let p = accumulating_profile(q, j).unwrap();
                let back = PiecewiseLinearProfile::from_json(&p.to_json().unwrap()).unwrap();
                prop_assert_eq!(p, back);
            }
        }
    }
}
