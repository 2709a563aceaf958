#![allow(dead_code)]

use chlab::coords::{relabel, to_lagrangian, Atom, EulerianState, GaussianBump, LagrangianState};
use chlab::grid::GridSpec;
use chlab::profiles::piecewise_linear;
use rand::rngs::StdRng;
use rand::Rng;

// 10-point Gauss–Legendre on [−1, 1]
const GL_X: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_W: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_04,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_14,
];

pub fn gl10(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for k in 0..5 {
        s += GL_W[k] * (f(c - r * GL_X[k]) + f(c + r * GL_X[k]));
    }
    s * r
}

/// P and Q by direct quadrature over every cell for every node, with y and
/// f = 2U²y_ξ + h interpolated linearly and the constant state outside.
pub fn brute_force_pq(x: &LagrangianState) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let (xi, y) = (x.xi(), x.y());
    let c = x.asymptote();
    let f: Vec<f64> = (0..n)
        .map(|i| 2.0 * x.u()[i] * x.u()[i] * x.y_xi()[i] + x.h()[i])
        .collect();
    let far = 2.0 * c * c;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let left_tail = far * (-(y[i] - y[0])).exp();
        let right_tail = far * (-(y[n - 1] - y[i])).exp();
        let (mut left, mut right) = (left_tail, right_tail);
        for k in 0..n - 1 {
            let (a, b) = (xi[k], xi[k + 1]);
            let lin = |v: &[f64], s: f64| v[k] + (v[k + 1] - v[k]) * (s - a) / (b - a);
            let val = gl10(|s| (-(y[i] - lin(y, s)).abs()).exp() * lin(&f, s), a, b);
            if k < i {
                left += val;
            } else {
                right += val;
            }
        }
        p[i] = 0.25 * (left + right);
        q[i] = -0.25 * (left - right);
    }
    (p, q)
}

/// Random admissible state: a random piecewise-linear profile around a random
/// asymptote, up to two atoms, then a random smooth relabeling.
pub fn random_state(rng: &mut StdRng, nodes: usize) -> LagrangianState {
    let k = rng.gen_range(3..8);
    let mut pts = vec![(0.0, 0.0)];
    let mut xpos = 0.0;
    for _ in 0..k {
        xpos += rng.gen_range(0.2..1.5);
        pts.push((xpos, rng.gen_range(-1.5..1.5)));
    }
    pts.push((xpos + rng.gen_range(0.2..1.5), 0.0));
    let profile = piecewise_linear(&pts).unwrap();
    let c = rng.gen_range(-0.5..0.5);
    let atoms: Vec<Atom> = (0..rng.gen_range(0..3))
        .map(|_| Atom {
            x: rng.gen_range(0.0..xpos),
            mass: rng.gen_range(0.05..0.5),
        })
        .collect();
    let e = EulerianState::new(profile, c, atoms).unwrap();
    let x = to_lagrangian(&e, &GridSpec::with_nodes(nodes)).unwrap();
    let mid = 0.5 * (x.xi()[0] + x.xi()[x.len() - 1]);
    let bump = GaussianBump::new(rng.gen_range(-0.3..0.3), mid, rng.gen_range(0.5..2.0)).unwrap();
    relabel(&x, &bump).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (u, v)| m.max((u - v).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
