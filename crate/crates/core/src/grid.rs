//! Construction of (nonuniform) label grids in ξ.
//!
//! Lagrangian data is only piecewise smooth in ξ, and its kinks never move:
//! the system is an ODE per label. Grids therefore place every known kink
//! ("seam") at the midpoint of a cell, which keeps trapezoid-type quadrature
//! second order across the kink. Away from the data the spacing grows
//! geometrically so that exponential tails can be carried cheaply.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Approximate number of nodes in the core region.
    pub nodes: usize,
    /// Core padding beyond the outermost seams.
    pub pad: f64,
    /// Total extent beyond the outermost seams, tails included (>= pad).
    pub margin: f64,
    /// Ratio between consecutive tail spacings (1 keeps the core spacing).
    pub growth: f64,
    /// Minimum nodes per piece between consecutive seams. Short pieces are
    /// refined locally to reach it.
    pub min_piece_nodes: usize,
}

impl GridSpec {
    /// Uniform core of `nodes` nodes, unit padding, tails graded to distance 10.
    pub fn with_nodes(nodes: usize) -> Self {
        Self {
            nodes,
            pad: 1.0,
            margin: 10.0,
            growth: 1.005,
            min_piece_nodes: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes < 4 {
            return domain("grid needs at least 4 core nodes");
        }
        if !(self.pad > 0.0 && self.margin >= self.pad && self.margin.is_finite()) {
            return domain("grid padding must satisfy 0 < pad <= margin < inf");
        }
        if !(self.growth >= 1.0 && self.growth < 2.0) {
            return domain("tail growth must lie in [1, 2)");
        }
        if self.min_piece_nodes == 0 {
            return domain("min_piece_nodes must be positive");
        }
        Ok(())
    }

    /// Grid with every seam at the midpoint between two neighbouring nodes
    /// (exactly when the spacings on both sides agree).
    pub fn build_seamed(&self, seams: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let seams = dedup_seams(seams)?;
        let (first, last) = (seams[0], seams[seams.len() - 1]);
        let core = (last - first) + 2.0 * self.pad;
        let d = core / self.nodes as f64;

        let mut core_nodes = Vec::with_capacity(self.nodes + 16);
        // left pad: nodes at first - (i + 1/2) h
        let m = ((self.pad / d).round() as usize).max(1);
        let h_left = self.pad / m as f64;
        for i in (0..m).rev() {
            core_nodes.push(first - (i as f64 + 0.5) * h_left);
        }
        for w in seams.windows(2) {
            let len = w[1] - w[0];
            let m = ((len / d).round() as usize).max(self.min_piece_nodes);
            let h = len / m as f64;
            core_nodes.extend((0..m).map(|i| w[0] + (i as f64 + 0.5) * h));
        }
        let m = ((self.pad / d).round() as usize).max(1);
        let h_right = self.pad / m as f64;
        core_nodes.extend((0..m).map(|i| last + (i as f64 + 0.5) * h_right));

        Ok(self.attach_tails(core_nodes, first - self.margin, last + self.margin))
    }

    /// Grid whose core is uniform with a node exactly at `center`, covering
    /// `center ± half_width`.
    pub fn build_anchored(&self, center: f64, half_width: f64) -> Result<Vec<f64>> {
        self.validate()?;
        if !(half_width > 0.0) {
            return domain("anchored grid needs a positive half width");
        }
        let half = (self.nodes / 2).max(2);
        let d = half_width / half as f64;
        let core: Vec<f64> = (0..=2 * half).map(|i| center + (i as f64 - half as f64) * d).collect();
        let reach = half_width + self.margin;
        Ok(self.attach_tails(core, center - reach, center + reach))
    }

    fn attach_tails(&self, core: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
        let n = core.len();
        let mut left = Vec::new();
        let mut h = core[1] - core[0];
        let mut x = core[0];
        while x > lo {
            h *= self.growth;
            x -= h;
            left.push(x);
        }
        let mut right = Vec::new();
        let mut h = core[n - 1] - core[n - 2];
        let mut x = core[n - 1];
        while x < hi {
            h *= self.growth;
            x += h;
            right.push(x);
        }
        left.reverse();
        left.extend(core);
        left.extend(right);
        left
    }
}

fn dedup_seams(seams: &[f64]) -> Result<Vec<f64>> {
    if seams.is_empty() {
        return domain("seamed grid needs at least one seam");
    }
    if seams.iter().any(|s| !s.is_finite()) {
        return domain("seams must be finite");
    }
    let mut s = seams.to_vec();
    s.sort_by(f64::total_cmp);
    let scale = s.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    s.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    Ok(s)
}

/// Number of grid nodes strictly between consecutive seams. A piece with
/// fewer than two nodes cannot resolve the data living on it.
pub fn nodes_per_piece(grid: &[f64], seams: &[f64]) -> Vec<usize> {
    let mut s = seams.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2)
        .map(|w| grid.iter().filter(|&&x| x > w[0] && x < w[1]).count())
        .collect()
}

/// Trapezoid weights on a nonuniform grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let right = if i + 1 < n { grid[i + 1] - grid[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Trapezoid rule of nodal values on a nonuniform grid.
pub fn trapezoid(grid: &[f64], values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (&x, v) in grid.iter().zip(values) {
        if let Some((px, pv)) = prev {
            acc += 0.5 * (x - px) * (v + pv);
        }
        prev = Some((x, v));
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seams_sit_at_midpoints() {
        let spec = GridSpec {
            nodes: 400,
            pad: 0.5,
            margin: 3.0,
            growth: 1.02,
            min_piece_nodes: 4,
        };
        let seams = [0.0, 1.0, 1.3, 2.7];
        let g = spec.build_seamed(&seams).unwrap();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        for s in seams {
            let i = g.partition_point(|&x| x < s);
            let mid = 0.5 * (g[i - 1] + g[i]);
            let cell = g[i] - g[i - 1];
            assert!((mid - s).abs() < 0.05 * cell, "seam {s} off-centre");
        }
        assert!(g[0] <= -3.0 && *g.last().unwrap() >= 5.7);
    }

    #[test]
    fn short_pieces_get_refined() {
        let spec = GridSpec {
            nodes: 100,
            pad: 1.0,
            margin: 1.0,
            growth: 1.0,
            min_piece_nodes: 6,
        };
        let seams = [0.0, 1e-3, 5.0];
        let g = spec.build_seamed(&seams).unwrap();
        assert_eq!(nodes_per_piece(&g, &seams)[0], 6);
    }

    #[test]
    fn anchored_has_center_node() {
        let spec = GridSpec::with_nodes(101);
        let g = spec.build_anchored(3.25, 2.0).unwrap();
        assert!(g.iter().any(|&x| x == 3.25));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_specs() {
        let mut s = GridSpec::with_nodes(100);
        s.growth = 0.9;
        assert!(s.build_seamed(&[0.0]).is_err());
        assert!(GridSpec::with_nodes(2).build_seamed(&[0.0]).is_err());
        assert!(GridSpec::with_nodes(50).build_seamed(&[]).is_err());
    }

    #[test]
    fn trapezoid_exact_for_linear() {
        let g = [0.0, 0.1, 0.5, 1.5, 2.0];
        let v = trapezoid(&g, g.iter().map(|x| 3.0 * x + 1.0));
        assert!((v - (1.5 * 4.0 + 2.0)).abs() < 1e-14);
        let w: f64 = trapezoid_weights(&g).iter().sum();
        assert!((w - 2.0).abs() < 1e-15);
    }
}
