//! Quadrature over a patch ball aligned with its discontinuities.
//!
//! The ball is sliced along the phase normal: `y = a·n + ρ(cos β e₂ + sin β e₃)`.
//! The `a` axis is split at every jump plane of the saw-tooth and at `±R′`
//! (the plateau radius), and each slice disc is split at the plateau circle,
//! so every piece carries a smooth integrand. Gauss–Legendre is used in `a`
//! and `ρ`, the periodic trapezoid rule in `β`.

use crate::cover::complete_basis;
use crate::quadrature::GaussRule;
use crate::wave::WavePatch;

/// Which part of the ball to integrate over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Whole,
    Plateau,
    Annulus,
}

/// Node counts per smooth piece.
#[derive(Clone, Debug)]
pub struct PatchRule {
    along: GaussRule,
    radial: GaussRule,
    angular: usize,
}

impl PatchRule {
    pub fn new(along: usize, radial: usize, angular: usize) -> Self {
        Self { along: GaussRule::new(along), radial: GaussRule::new(radial), angular: angular.max(3) }
    }

    /// Rule used at verification resolution `n`: `q = max(2, n/32)` nodes
    /// per piece and `4q` angles.
    pub fn for_resolution(n: usize) -> Self {
        let q = (n / 32).max(2);
        Self::new(q, q, 4 * q)
    }

    /// Visits `(physical point, unit-ball point, weight)` for `part` of the patch.
    pub fn visit(&self, p: &WavePatch, part: Part, mut f: impl FnMut([f64; 3], [f64; 3], f64)) {
        let n = p.coefficients.unit_normal();
        let (e2, e3) = complete_basis(n);
        let r_in = p.plateau_radius();
        let mut cuts = vec![-1.0, -r_in, r_in, 1.0];
        cuts.extend(p.jump_planes(-1.0, 1.0));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let vol = p.radius.powi(3);
        let dbeta = std::f64::consts::TAU / self.angular as f64;
        let trig: Vec<(f64, f64)> = (0..self.angular).map(|k| (k as f64 * dbeta).sin_cos()).collect();
        for w in cuts.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            for (a, wa) in self.along.on(w[0], w[1]) {
                let outer = (1.0 - a * a).max(0.0).sqrt();
                let inner = (r_in * r_in - a * a).max(0.0).sqrt();
                let ranges: &[(f64, f64)] = match part {
                    Part::Whole => &[(0.0, inner), (inner, outer)],
                    Part::Plateau => &[(0.0, inner)],
                    Part::Annulus => &[(inner, outer)],
                };
                for &(r0, r1) in ranges {
                    if r1 <= r0 {
                        continue;
                    }
                    for (rho, wr) in self.radial.on(r0, r1) {
                        let base = wa * wr * rho * dbeta * vol;
                        for &(sb, cb) in &trig {
                            let y: [f64; 3] = std::array::from_fn(|k| a * n[k] + rho * (cb * e2[k] + sb * e3[k]));
                            f(p.from_local(y), y, base);
                        }
                    }
                }
            }
        }
    }

    /// `∫ g` over `part` of the patch ball.
    pub fn integrate(&self, p: &WavePatch, part: Part, g: impl Fn([f64; 3], [f64; 3]) -> f64) -> f64 {
        let mut acc = 0.0;
        self.visit(p, part, |x, y, w| acc += w * g(x, y));
        acc
    }
}
