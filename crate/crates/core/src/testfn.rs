//! Smooth space-time test functions with closed-form derivatives: a Fourier
//! mode on `𝕋²` times a polynomial bump in time.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Cos,
    Sin,
}

/// `m(x)·b(t)` with `m = cos` or `sin` of `2π k·x` (or `m ≡ 1` for `k = 0`
/// with `Cos`) and `b(t) = ((t−a)(b−t))⁴ / ((b−a)/2)⁸` on `(a, b)`, zero
/// elsewhere. The bump is `C³`, which is all the weak identities need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub k: [i32; 2],
    pub mode: Mode,
    pub support: [f64; 2],
}

impl TestFunction {
    /// The time factor and its derivative.
    pub fn bump(&self, t: f64) -> (f64, f64) {
        let [a, b] = self.support;
        if t <= a || t >= b {
            return (0.0, 0.0);
        }
        let scale = (0.5 * (b - a)).powi(8);
        let g = (t - a) * (b - t);
        let dg = (b - t) - (t - a);
        (g.powi(4) / scale, 4.0 * g.powi(3) * dg / scale)
    }

    fn spatial(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let kx = [TAU * self.k[0] as f64, TAU * self.k[1] as f64];
        let arg = kx[0] * x[0] + kx[1] * x[1];
        let (s, c) = arg.sin_cos();
        match self.mode {
            Mode::Cos => (c, [-s * kx[0], -s * kx[1]]),
            Mode::Sin => (s, [c * kx[0], c * kx[1]]),
        }
    }

    pub fn value(&self, p: [f64; 3]) -> f64 {
        self.spatial([p[0], p[1]]).0 * self.bump(p[2]).0
    }

    /// `(∂₁, ∂₂, ∂_t)`.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let (m, dm) = self.spatial([p[0], p[1]]);
        let (b, db) = self.bump(p[2]);
        [dm[0] * b, dm[1] * b, m * db]
    }

    /// Spatial factor and its gradient alone.
    pub fn mode_value(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        self.spatial(x)
    }

    /// `max |∇_{x,t} φ|`, a closed-form bound.
    pub fn gradient_bound(&self) -> f64 {
        let kx = TAU * ((self.k[0] * self.k[0] + self.k[1] * self.k[1]) as f64).sqrt();
        let [a, b] = self.support;
        let h = 0.5 * (b - a);
        // max |g³ g′| over (a,b) with g ≤ h², |g′| ≤ 2h.
        let db = 8.0 * h.powi(7) / h.powi(8);
        (kx * kx + db * db).sqrt()
    }
}

/// Which weak identity a family is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Identity {
    /// Transport with initial data: tests vanish for `t ≥ T` but not at `t = 0`.
    Transport,
    /// Incompressibility `div v = 0`.
    Incompressibility,
    /// Darcy's law in curl form.
    Darcy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub identity: Identity,
    pub members: Vec<TestFunction>,
}

const MODES: [([i32; 2], Mode); 8] = [
    ([1, 0], Mode::Cos),
    ([0, 1], Mode::Sin),
    ([1, 1], Mode::Cos),
    ([2, -1], Mode::Sin),
    ([1, 2], Mode::Cos),
    ([0, 2], Mode::Cos),
    ([2, 1], Mode::Sin),
    ([3, 0], Mode::Sin),
];

impl TestFamily {
    /// The default family of `size` members (at most 8) for horizon `t_end`.
    pub fn standard(identity: Identity, t_end: f64, size: usize) -> Self {
        let support = match identity {
            Identity::Transport => [-0.5 * t_end, 0.9 * t_end],
            Identity::Incompressibility | Identity::Darcy => [-0.25 * t_end, 1.25 * t_end],
        };
        let members = MODES.iter().take(size.min(MODES.len())).map(|&(k, mode)| TestFunction { k, mode, support }).collect();
        Self { identity, members }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let f = TestFunction { k: [2, -1], mode: Mode::Sin, support: [-0.3, 0.8] };
        let p = [0.31, 0.77, 0.2];
        let g = f.gradient(p);
        let h = 1e-6;
        for i in 0..3 {
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            assert!(((f.value(a) - f.value(b)) / (2.0 * h) - g[i]).abs() < 1e-6);
        }
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() <= f.gradient_bound());
    }

    #[test]
    fn transport_family_vanishes_near_horizon() {
        for f in TestFamily::standard(Identity::Transport, 1.0, 5).members {
            assert_eq!(f.value([0.2, 0.3, 0.95]), 0.0);
            assert!(f.bump(0.0).0 > 0.0);
        }
    }
}
