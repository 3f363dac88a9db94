//! The five-dimensional state space `(ρ, v, q)`, its 3×3 matrix embedding,
//! the wave cone of the linearized system and distances to the constraint
//! set `K = {(ρ, v, ρv)}`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

/// Absolute tolerance used for cone membership at unit scale.
pub const CONE_TOL: f64 = 1e-12;

/// A point `(ρ, v, q)` of the linearized state space.
///
/// The coordinates `(ρ, w, z)` used for the T4 geometry are the same
/// numbers: `w ≡ v` and `z ≡ q`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateU {
    pub rho: f64,
    pub v: [f64; 2],
    pub q: [f64; 2],
}

impl StateU {
    pub const ZERO: StateU = StateU { rho: 0.0, v: [0.0; 2], q: [0.0; 2] };

    pub const fn new(rho: f64, v: [f64; 2], q: [f64; 2]) -> Self {
        Self { rho, v, q }
    }

    /// The point `(r, u, r·u)` of `K`.
    pub fn on_k(r: f64, u: [f64; 2]) -> Self {
        Self { rho: r, v: u, q: [r * u[0], r * u[1]] }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.rho, self.v[0], self.v[1], self.q[0], self.q[1]]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { rho: a[0], v: [a[1], a[2]], q: [a[3], a[4]] }
    }

    pub fn dot(self, other: StateU) -> f64 {
        self.to_array().iter().zip(other.to_array()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, other: StateU) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// `|q − ρv|`, the pointwise defect of the nonlinear constraint.
    pub fn constraint_defect(self) -> f64 {
        let d0 = self.q[0] - self.rho * self.v[0];
        let d1 = self.q[1] - self.rho * self.v[1];
        d0.hypot(d1)
    }

    /// Convex combination `t·self + (1−t)·other`.
    pub fn lerp(self, other: StateU, t: f64) -> StateU {
        self * t + other * (1.0 - t)
    }
}

impl Add for StateU {
    type Output = StateU;
    fn add(self, o: StateU) -> StateU {
        StateU {
            rho: self.rho + o.rho,
            v: [self.v[0] + o.v[0], self.v[1] + o.v[1]],
            q: [self.q[0] + o.q[0], self.q[1] + o.q[1]],
        }
    }
}

impl Sub for StateU {
    type Output = StateU;
    fn sub(self, o: StateU) -> StateU {
        self + (-o)
    }
}

impl Neg for StateU {
    type Output = StateU;
    fn neg(self) -> StateU {
        self * -1.0
    }
}

impl Mul<f64> for StateU {
    type Output = StateU;
    fn mul(self, t: f64) -> StateU {
        StateU { rho: self.rho * t, v: [self.v[0] * t, self.v[1] * t], q: [self.q[0] * t, self.q[1] * t] }
    }
}

impl std::iter::Sum for StateU {
    fn sum<I: Iterator<Item = StateU>>(iter: I) -> StateU {
        iter.fold(StateU::ZERO, |a, b| a + b)
    }
}

/// Matrix embedding whose row-wise divergence (in `x₁, x₂, t`) is the
/// linear part of the system.
pub fn to_matrix(s: StateU) -> [[f64; 3]; 3] {
    let StateU { rho, v, q } = s;
    [[-v[1] - rho, v[0], 0.0], [v[0], v[1], 0.0], [q[0], q[1], rho]]
}

/// `ρ(|v|² + ρv₂)`, which equals `−det(to_matrix(s))`.
pub fn cone_residual(s: StateU) -> f64 {
    let StateU { rho, v, .. } = s;
    rho * (v[0] * v[0] + v[1] * v[1] + rho * v[1])
}

/// Scale-aware cone membership: `|residual| ≤ tol·(1+|s|)³`.
pub fn in_cone_tol(s: StateU, tol: f64) -> bool {
    let scale = 1.0 + s.norm();
    cone_residual(s).abs() <= tol * scale * scale * scale
}

pub fn in_cone(s: StateU) -> bool {
    in_cone_tol(s, CONE_TOL)
}

/// The barrier `q₂ − ρv₂`, convex along every cone direction and zero on `K`.
pub fn lambda_convex_f(s: StateU) -> f64 {
    s.q[1] - s.rho * s.v[1]
}

pub fn segment_in_cone(a: StateU, b: StateU) -> bool {
    in_cone(a - b)
}

/// Squared distance from `s` to `K`, minimised over `u` for a fixed `r`.
///
/// For fixed `r` the optimal `u` solves a 2×2 least-squares problem whose
/// value is `|q − r v|² / (1 + r²)`.
fn profile(s: StateU, r: f64) -> f64 {
    let d0 = s.q[0] - r * s.v[0];
    let d1 = s.q[1] - r * s.v[1];
    (s.rho - r).powi(2) + (d0 * d0 + d1 * d1) / (1.0 + r * r)
}

/// The point of `K` attaining `dist_to_K`.
pub fn nearest_on_k(s: StateU) -> StateU {
    let r = argmin_profile(s);
    let denom = 1.0 + r * r;
    let u = [(s.v[0] + r * s.q[0]) / denom, (s.v[1] + r * s.q[1]) / denom];
    StateU::on_k(r, u)
}

fn argmin_profile(s: StateU) -> f64 {
    // Any minimiser satisfies (ρ−r)² ≤ profile(ρ), which brackets the search.
    let reach = profile(s, s.rho).sqrt();
    if reach == 0.0 {
        return s.rho;
    }
    const SCAN: usize = 48;
    let lo = s.rho - reach;
    let step = 2.0 * reach / SCAN as f64;
    let vals: Vec<f64> = (0..=SCAN).map(|i| profile(s, lo + step * i as f64)).collect();
    let mut best_r = s.rho;
    let mut best = profile(s, s.rho);
    for i in 0..=SCAN {
        let left = if i == 0 { f64::INFINITY } else { vals[i - 1] };
        let right = if i == SCAN { f64::INFINITY } else { vals[i + 1] };
        if vals[i] <= left && vals[i] <= right {
            let a = lo + step * (i as f64 - 1.0).max(0.0);
            let b = lo + step * (i as f64 + 1.0).min(SCAN as f64);
            let r = golden_min(|r| profile(s, r), a, b);
            let val = profile(s, r);
            if val < best {
                best = val;
                best_r = r;
            }
        }
    }
    best_r
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Euclidean distance in ℝ⁵ from `s` to `K`.
pub fn dist_to_k(s: StateU) -> f64 {
    if s.constraint_defect() == 0.0 {
        return 0.0;
    }
    profile(s, argmin_profile(s)).max(0.0).sqrt()
}

/// Cofactor-expansion determinant, kept separate from [`cone_residual`].
pub fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
