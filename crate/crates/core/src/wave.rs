//! Saw-tooth profiles, the potential operator `D(φ, ψ)`, localized plane-wave
//! patches and the building block that fills a domain with them.
//!
//! Every patch field is `D` applied to cutoff-multiplied closed-form
//! potentials, so it solves the linear system exactly in the weak sense.
//! All derivatives are expanded analytically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cover::{greedy_ball_cover, Ball, CoverDomain};
use crate::error::WaveError;
use crate::geometry::{in_cone_tol, StateU};

/// Default cutoff width: keeps the annulus of a unit ball below 5% of its volume.
pub const DEFAULT_CUTOFF: f64 = 0.015;

/// The 1-periodic saw-tooth `s` with `s′ = 1−λ` on `[0, λ/2] ∪ (1−λ/2, 1)` and
/// `s′ = −λ` elsewhere, its primitive `S` (`S(0) = 0`) and `s′`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SawtoothProfile {
    pub lambda: f64,
}

impl SawtoothProfile {
    pub fn new(lambda: f64) -> Result<Self, WaveError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(WaveError::InvalidParameter(format!("lambda must lie in (0,1), got {lambda}")));
        }
        Ok(Self { lambda })
    }

    /// `(S, s, s′)` at `x`. At jumps of `s′` the value from the left is returned.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let l = self.lambda;
        let h = 0.5 * (1.0 - l) * l;
        let mut f = x - x.floor();
        // Left-value convention: an integer argument belongs to the last piece.
        if f == 0.0 {
            f = 1.0;
        }
        if f <= 0.5 * l {
            (0.5 * (1.0 - l) * f * f, (1.0 - l) * f, 1.0 - l)
        } else if f <= 1.0 - 0.5 * l {
            let g = f - 0.5 * l;
            ((1.0 - l) * l * l / 8.0 + h * g - 0.5 * l * g * g, h - l * g, -l)
        } else {
            let g = f - 1.0;
            (0.5 * (1.0 - l) * g * g, (1.0 - l) * g, 1.0 - l)
        }
    }

    pub fn plus_value(&self) -> f64 {
        1.0 - self.lambda
    }

    pub fn minus_value(&self) -> f64 {
        -self.lambda
    }

    /// `max |s| = λ(1−λ)/2`.
    pub fn max_s(&self) -> f64 {
        0.5 * self.lambda * (1.0 - self.lambda)
    }

    /// `max |S| = λ(1−λ)/8`.
    pub fn max_big_s(&self) -> f64 {
        self.lambda * (1.0 - self.lambda) / 8.0
    }
}

/// Phase covector `ξ = (ξ₁, ξ₂, c)` and tilt `d` of the plane wave along a
/// cone direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveCoefficients {
    pub xi: [f64; 3],
    pub c: f64,
    pub d: f64,
    /// `sign(ρ)`, equal to `−sign(v₂)` on the cone.
    pub sigma: f64,
}

impl WaveCoefficients {
    pub fn norm(&self) -> f64 {
        let [a, b, c] = self.xi;
        (a * a + b * b + c * c).sqrt()
    }

    pub fn unit_normal(&self) -> [f64; 3] {
        let n = self.norm();
        self.xi.map(|x| x / n)
    }
}

/// Solves for the plane wave `ψ = σS(Nθ)/N²`, `φ = dS′(Nθ)/N` with
/// `θ = ξ₁x₁ + ξ₂x₂ + ct` whose image under `D` is `S″(Nθ)·U`.
///
/// With `ξ₁ = √|v₂|` and `ξ₂ = σv₁/√|v₂|` the second derivatives of `ψ`
/// reproduce `ρ` and `v`; `(c, d)` then solve
/// `[[−σξ₁, −ξ₂], [−σξ₂, ξ₁]]·(c, d) = (q₁, q₂)`, whose determinant is
/// `−σ|ξ|² = −ρ`.
pub fn wave_coefficients(u: StateU) -> Result<WaveCoefficients, WaveError> {
    let StateU { rho, v, q } = u;
    if rho == 0.0 || v[1] == 0.0 || !u.is_finite() {
        return Err(WaveError::DegenerateDirection);
    }
    if !in_cone_tol(u, 1e-10) {
        return Err(WaveError::NotInCone(crate::geometry::cone_residual(u)));
    }
    let sigma = rho.signum();
    let sq = v[1].abs().sqrt();
    let (x1, x2) = (sq, sigma * v[0] / sq);
    let n2 = rho.abs();
    let c = -(x1 * q[0] + x2 * q[1]) / rho;
    let d = (x1 * q[1] - x2 * q[0]) / n2;
    Ok(WaveCoefficients { xi: [x1, x2, c], c, d, sigma })
}

/// Reads a state off `D(φ, ψ)` given `∇φ = (φ₁, φ₂, φ_t)` and the space-time
/// Hessian of `ψ` (index 2 is time):
/// `ρ = Δψ`, `v = (ψ₁₂, −ψ₁₁)`, `q = (−ψ_{t1} − φ₂, −ψ_{t2} + φ₁)`.
pub fn potential_apply(phi_grad: [f64; 3], psi_hess: [[f64; 3]; 3]) -> StateU {
    let h = psi_hess;
    StateU {
        rho: h[0][0] + h[1][1],
        v: [h[0][1], -h[0][0]],
        q: [-h[2][0] - phi_grad[1], -h[2][1] + phi_grad[0]],
    }
}

/// Radial quintic smooth-step: `1` on `[0, 1−w]`, `0` from `1` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub width: f64,
}

impl Cutoff {
    pub fn inner(&self) -> f64 {
        1.0 - self.width
    }

    /// `(Z, Z′, Z″)` at radius `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let r0 = self.inner();
        if r <= r0 {
            return (1.0, 0.0, 0.0);
        }
        if r >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let w = self.width;
        let u = (r - r0) / w;
        let p = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
        let dp = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        let ddp = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
        (1.0 - p, -dp / w, -ddp / (w * w))
    }

    pub const MAX_DP: f64 = 1.875;
    /// `max |P″|` of the quintic step, attained at `u = ½ ± √3/6`.
    pub const MAX_DDP: f64 = 5.773_502_691_896_258;
}

/// Values, gradient and Hessian of `ζ(|y|)` at `y`.
fn cutoff_jet(c: &Cutoff, y: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let (z, dz, ddz) = c.eval(r);
    if dz == 0.0 && ddz == 0.0 {
        return (z, [0.0; 3], [[0.0; 3]; 3]);
    }
    let g = y.map(|yi| dz * yi / r);
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let yy = y[i] * y[j] / (r * r);
            let delta = if i == j { 1.0 } else { 0.0 };
            h[i][j] = ddz * yy + dz * (delta - yy) / r;
        }
    }
    (z, g, h)
}

/// One localized saw-tooth plane wave on the space-time ball `B(center, radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePatch {
    /// `(x₁, x₂, t)`.
    pub center: [f64; 3],
    pub radius: f64,
    pub direction: StateU,
    pub lambda: f64,
    pub frequency: u32,
    pub cutoff: f64,
    /// Offset added to `N·ξ·y` before the profile is applied.
    pub phase_offset: f64,
    pub coefficients: WaveCoefficients,
}

/// Jet of the localized potentials in unit-ball coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct PotentialJet {
    pub psi: f64,
    pub phi: f64,
    pub psi_grad: [f64; 3],
    pub psi_hess: [[f64; 3]; 3],
    pub phi_grad: [f64; 3],
}

/// A slab `a ∈ [a0, a1]` (unit-ball coordinate along the phase normal) of the
/// plateau ball where the patch field is constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabPiece {
    pub a0: f64,
    pub a1: f64,
    /// `true` for the value `(1−λ)U`, `false` for `−λU`.
    pub plus: bool,
}

/// `|{|y| ≤ R, a0 ≤ y·n ≤ a1}| = π[R²a − a³/3]` evaluated between the clipped bounds.
pub fn slab_ball_volume(radius: f64, a0: f64, a1: f64) -> f64 {
    let lo = a0.max(-radius);
    let hi = a1.min(radius);
    if hi <= lo {
        return 0.0;
    }
    let f = |a: f64| radius * radius * a - a * a * a / 3.0;
    std::f64::consts::PI * (f(hi) - f(lo))
}

pub fn ball_volume(radius: f64) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * radius.powi(3)
}

/// Minimal-image displacement on `𝕋² × ℝ`.
pub fn torus_delta(p: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let wrap = |d: f64| d - d.round();
    [wrap(p[0] - c[0]), wrap(p[1] - c[1]), p[2] - c[2]]
}

impl WavePatch {
    pub fn new(
        center: [f64; 3],
        radius: f64,
        direction: StateU,
        lambda: f64,
        frequency: u32,
        cutoff: f64,
        phase_offset: f64,
    ) -> Result<Self, WaveError> {
        SawtoothProfile::new(lambda)?;
        if !(radius > 0.0 && radius <= 0.5) {
            return Err(WaveError::InvalidParameter(format!("radius must lie in (0, 1/2], got {radius}")));
        }
        if frequency == 0 {
            return Err(WaveError::InvalidParameter("frequency must be at least 1".into()));
        }
        if !(cutoff > 0.0 && cutoff < 0.5) {
            return Err(WaveError::InvalidParameter(format!("cutoff width must lie in (0, 1/2), got {cutoff}")));
        }
        let coefficients = wave_coefficients(direction)?;
        Ok(Self { center, radius, direction, lambda, frequency, cutoff, phase_offset, coefficients })
    }

    pub fn profile(&self) -> SawtoothProfile {
        SawtoothProfile { lambda: self.lambda }
    }

    pub fn cutoff_fn(&self) -> Cutoff {
        Cutoff { width: self.cutoff }
    }

    pub fn plateau_radius(&self) -> f64 {
        1.0 - self.cutoff
    }

    /// Unit-ball coordinates of a space-time point.
    pub fn local(&self, p: [f64; 3]) -> [f64; 3] {
        torus_delta(p, self.center).map(|d| d / self.radius)
    }

    pub fn from_local(&self, y: [f64; 3]) -> [f64; 3] {
        [
            self.center[0] + self.radius * y[0],
            self.center[1] + self.radius * y[1],
            self.center[2] + self.radius * y[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let y = self.local(p);
        y[0] * y[0] + y[1] * y[1] + y[2] * y[2] < 1.0
    }

    /// `N·ξ·y + θ₀`.
    pub fn phase(&self, y: [f64; 3]) -> f64 {
        let xi = self.coefficients.xi;
        self.frequency as f64 * (xi[0] * y[0] + xi[1] * y[1] + xi[2] * y[2]) + self.phase_offset
    }

    /// Coordinate of `y` along the unit phase normal.
    pub fn normal_coordinate(&self, y: [f64; 3]) -> f64 {
        let n = self.coefficients.unit_normal();
        n[0] * y[0] + n[1] * y[1] + n[2] * y[2]
    }

    /// Jet of `ζψ_N` and `ζφ_N` at unit-ball coordinates `y`.
    pub fn jet(&self, y: [f64; 3]) -> PotentialJet {
        let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        if r2 >= 1.0 {
            return PotentialJet::default();
        }
        let n = self.frequency as f64;
        let WaveCoefficients { xi, d, sigma, .. } = self.coefficients;
        let (big_s, s, s2) = self.profile().eval(self.phase(y));
        let psi = sigma * big_s / (n * n);
        let psi_g = xi.map(|x| sigma * s * x / n);
        let phi = d * s / n;
        let phi_g = xi.map(|x| d * s2 * x);
        let (z, zg, zh) = cutoff_jet(&self.cutoff_fn(), y);
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = zh[i][j] * psi + zg[i] * psi_g[j] + zg[j] * psi_g[i] + z * sigma * s2 * xi[i] * xi[j];
            }
        }
        PotentialJet {
            psi: z * psi,
            phi: z * phi,
            psi_grad: std::array::from_fn(|i| zg[i] * psi + z * psi_g[i]),
            psi_hess: h,
            phi_grad: std::array::from_fn(|i| zg[i] * phi + z * phi_g[i]),
        }
    }

    /// The patch field at unit-ball coordinates.
    pub fn field_local(&self, y: [f64; 3]) -> StateU {
        let j = self.jet(y);
        potential_apply(j.phi_grad, j.psi_hess)
    }

    /// Physical potentials `(Φ, Ψ) = (r·ζφ_N, r²·ζψ_N)`, for which
    /// `D_x(Φ, Ψ)` equals the patch field.
    pub fn potentials(&self, p: [f64; 3]) -> (f64, f64) {
        let j = self.jet(self.local(p));
        (self.radius * j.phi, self.radius * self.radius * j.psi)
    }

    /// `(1−λ)U` and `−λU`.
    pub fn endpoints(&self) -> (StateU, StateU) {
        (self.direction * (1.0 - self.lambda), self.direction * -self.lambda)
    }

    /// Positions along the unit normal where `s′(N·ξ·y + θ₀)` jumps, within `(lo, hi)`.
    pub fn jump_planes(&self, lo: f64, hi: f64) -> Vec<f64> {
        let k = self.frequency as f64 * self.coefficients.norm();
        let half = 0.5 * self.lambda;
        let first = (lo * k + self.phase_offset - half).floor() as i64 - 1;
        let last = (hi * k + self.phase_offset + half).ceil() as i64 + 1;
        let mut out = Vec::new();
        for m in first..=last {
            for b in [m as f64 - half, m as f64 + half] {
                let a = (b - self.phase_offset) / k;
                if a > lo && a < hi {
                    out.push(a);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// The slabs of the plateau ball on which the field is constant.
    pub fn plateau_slabs(&self) -> Vec<SlabPiece> {
        let r = self.plateau_radius();
        let mut cuts = vec![-r];
        cuts.extend(self.jump_planes(-r, r));
        cuts.push(r);
        let k = self.frequency as f64 * self.coefficients.norm();
        let prof = self.profile();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let (_, _, s2) = prof.eval(k * mid + self.phase_offset);
                SlabPiece { a0: w[0], a1: w[1], plus: s2 > 0.0 }
            })
            .collect()
    }

    /// Physical volume of a plateau slab.
    pub fn slab_volume(&self, slab: &SlabPiece) -> f64 {
        self.radius.powi(3) * slab_ball_volume(self.plateau_radius(), slab.a0, slab.a1)
    }

    pub fn volume(&self) -> f64 {
        ball_volume(self.radius)
    }

    pub fn annulus_volume(&self) -> f64 {
        ball_volume(self.radius) - ball_volume(self.radius * self.plateau_radius())
    }

    /// Upper bound on the distance of the field to the segment
    /// `[−λU, (1−λ)U]`, from the cutoff derivative terms.
    pub fn segment_deviation_bound(&self) -> f64 {
        segment_deviation_bound(&self.coefficients, self.lambda, self.cutoff, self.frequency as f64)
    }
}

/// The patch field at a space-time point, zero outside the ball.
pub fn patch_field(p: &WavePatch, point: [f64; 3]) -> StateU {
    p.field_local(p.local(point))
}

/// `A₁/N + A₂/N²` bounding the non-plateau terms of a patch field.
pub fn segment_deviation_bound(coef: &WaveCoefficients, lambda: f64, cutoff: f64, n: f64) -> f64 {
    let prof = SawtoothProfile { lambda };
    let xi_max = coef.xi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dz = Cutoff::MAX_DP / cutoff;
    let ddz = Cutoff::MAX_DDP / (cutoff * cutoff) + dz / (1.0 - cutoff);
    let a1 = 2.0 * dz * prof.max_s() * xi_max + dz * prof.max_s() * coef.d.abs();
    let a2 = ddz * prof.max_big_s();
    // Each of the five components collects at most two such terms.
    2.0 * 5f64.sqrt() * (a1 / n + a2 / (n * n))
}

/// Distance from `s` to the segment `[a, b]`.
pub fn dist_to_segment(s: StateU, a: StateU, b: StateU) -> f64 {
    let d = b - a;
    let dd = d.dot(d);
    let t = if dd == 0.0 { 0.0 } else { ((s - a).dot(d) / dd).clamp(0.0, 1.0) };
    s.dist(a + d * t)
}

/// Largest distance from the summed field of `patches` to the segment of
/// their common endpoints, over a `k³` node lattice of the box `[lo, hi]`.
pub fn sampled_segment_deviation(patches: &[WavePatch], lo: [f64; 3], hi: [f64; 3], k: usize) -> f64 {
    let Some(first) = patches.first() else { return 0.0 };
    let (a, b) = first.endpoints();
    let h: [f64; 3] = std::array::from_fn(|i| (hi[i] - lo[i]) / (k.max(2) - 1) as f64);
    (0..k * k * k)
        .map(|idx| {
            let p = [lo[0] + h[0] * (idx % k) as f64, lo[1] + h[1] * ((idx / k) % k) as f64, lo[2] + h[2] * (idx / (k * k)) as f64];
            let u: StateU = patches.iter().filter(|q| q.contains(p)).map(|q| patch_field(q, p)).sum();
            dist_to_segment(u, a, b)
        })
        .fold(0.0, f64::max)
}

/// Options for [`building_block`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub cutoff: f64,
    /// Seed for phase offsets; `None` centers a slab on every ball center.
    pub seed: Option<u64>,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self { cutoff: DEFAULT_CUTOFF, seed: None }
    }
}

/// Exact measure accounting of a building block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub domain_volume: f64,
    pub covered_volume: f64,
    pub plus_volume: f64,
    pub minus_volume: f64,
    pub annulus_volume: f64,
    pub fraction_plus: f64,
    pub fraction_minus: f64,
    pub uncovered_fraction: f64,
    /// Annulus volume over domain volume.
    pub cutoff_budget: f64,
    pub deviation_bound: f64,
    /// Smallest frequency whose deviation bound is below the requested epsilon.
    pub n_min: u32,
    pub balls: usize,
}

/// Phase offset that centers a value slab at the ball center.
pub fn default_phase_offset(lambda: f64) -> f64 {
    if lambda >= 0.5 {
        0.0
    } else {
        0.5
    }
}

/// Fills `domain` with disjoint patches along `direction`, so that the field
/// takes the value `(1−λ)U` on a fraction close to `λ` and `−λU` on a
/// fraction close to `1−λ`.
pub fn building_block(
    domain: &CoverDomain,
    direction: StateU,
    lambda: f64,
    epsilon: f64,
    n: u32,
    opts: &BlockOptions,
) -> Result<(Vec<WavePatch>, MeasureStats), WaveError> {
    SawtoothProfile::new(lambda)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(WaveError::InvalidParameter(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    let coef = wave_coefficients(direction)?;
    let cover = greedy_ball_cover(domain, 1.0 - epsilon)?;
    let mut rng = opts.seed.map(ChaCha8Rng::seed_from_u64);
    let mut patches = Vec::with_capacity(cover.balls.len());
    for Ball { center, radius } in &cover.balls {
        let offset = match rng.as_mut() {
            Some(r) => r.gen::<f64>(),
            None => default_phase_offset(lambda),
        };
        patches.push(WavePatch::new(*center, *radius, direction, lambda, n, opts.cutoff, offset)?);
    }
    let mut stats = MeasureStats { domain_volume: domain.volume(), balls: patches.len(), ..Default::default() };
    for p in &patches {
        stats.covered_volume += p.volume();
        stats.annulus_volume += p.annulus_volume();
        for s in p.plateau_slabs() {
            if s.plus {
                stats.plus_volume += p.slab_volume(&s);
            } else {
                stats.minus_volume += p.slab_volume(&s);
            }
        }
    }
    let v = stats.domain_volume;
    stats.fraction_plus = stats.plus_volume / v;
    stats.fraction_minus = stats.minus_volume / v;
    stats.uncovered_fraction = 1.0 - stats.covered_volume / v;
    stats.cutoff_budget = stats.annulus_volume / v;
    stats.deviation_bound = segment_deviation_bound(&coef, lambda, opts.cutoff, n as f64);
    stats.n_min = (1..=1u32 << 20)
        .find(|&m| segment_deviation_bound(&coef, lambda, opts.cutoff, m as f64) <= epsilon)
        .unwrap_or(u32::MAX);
    Ok((patches, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cone_residual;
    use crate::quadrature::GaussRule;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sawtooth_examples() {
        let p = SawtoothProfile::new(0.5).unwrap();
        assert_abs_diff_eq!(p.eval(0.25).1, 0.125, epsilon = 1e-15);
        for l in [0.1, 1.0 / 3.0, 0.5, 0.9] {
            let p = SawtoothProfile::new(l).unwrap();
            assert_abs_diff_eq!(p.eval(0.5).1, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.eval(0.5 * l).1, 0.5 * (1.0 - l) * l, epsilon = 1e-15);
            // Zero mean of s, piece by piece.
            let g = GaussRule::new(4);
            let mean = g.integrate(0.0, 0.5 * l, |x| p.eval(x).1)
                + g.integrate(0.5 * l, 1.0 - 0.5 * l, |x| p.eval(x).1)
                + g.integrate(1.0 - 0.5 * l, 1.0, |x| p.eval(x).1);
            assert!(mean.abs() <= 1e-14);
            // s′ is symmetric about ½, s is odd about ½, S is periodic.
            for x in [0.01, 0.1, 0.3, 0.44] {
                assert_eq!(p.eval(0.5 + x).2, p.eval(0.5 - x).2);
                assert_abs_diff_eq!(p.eval(0.5 + x).1, -p.eval(0.5 - x).1, epsilon = 1e-15);
                assert_abs_diff_eq!(p.eval(x).0, p.eval(x + 3.0).0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn sawtooth_derivatives_are_consistent() {
        let p = SawtoothProfile::new(0.3).unwrap();
        let h = 1e-6;
        for x in [0.05, 0.2, 0.4, 0.7, 0.9] {
            let (s0, s1, s2) = p.eval(x);
            assert_abs_diff_eq!((p.eval(x + h).0 - p.eval(x - h).0) / (2.0 * h), s1, epsilon = 1e-8);
            assert_abs_diff_eq!((p.eval(x + h).1 - p.eval(x - h).1) / (2.0 * h), s2, epsilon = 1e-8);
            assert!(s0 >= 0.0 && s0 <= p.max_big_s() + 1e-15);
        }
    }

    #[test]
    fn coefficients_examples() {
        let c = wave_coefficients(StateU::new(1.0, [0.0, -1.0], [0.4, -0.7])).unwrap();
        assert_eq!(c.xi[0], 1.0);
        assert_eq!(c.xi[1], 0.0);
        assert_abs_diff_eq!(c.c, -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(c.d, -0.7, epsilon = 1e-15);
        let c = wave_coefficients(StateU::new(1.0, [0.0, -1.0], [0.0, 0.0])).unwrap();
        assert_eq!((c.c, c.d), (0.0, 0.0));
        assert_eq!(wave_coefficients(StateU::new(1.0, [0.0, 0.0], [0.0, 0.0])), Err(WaveError::DegenerateDirection));
    }

    #[test]
    fn potential_examples() {
        assert_eq!(potential_apply([0.0; 3], [[0.0; 3]; 3]), StateU::ZERO);
        // ψ = x₁²: Hessian diag(2, 0, 0).
        let s = potential_apply([0.0; 3], [[2.0, 0.0, 0.0], [0.0; 3], [0.0; 3]]);
        assert_eq!(s, StateU::new(2.0, [0.0, -2.0], [0.0, 0.0]));
        assert_eq!(cone_residual(s), 0.0);
    }

    fn sample_direction() -> StateU {
        // ρ = −0.8, v on the circle |v|² + ρv₂ = 0.
        let rho = -0.8;
        let ang: f64 = 1.1;
        let v = [0.4 * ang.cos(), 0.4 + 0.4 * ang.sin()];
        StateU::new(rho, v, [0.3, -0.45])
    }

    #[test]
    fn plateau_value_is_exact() {
        let u = sample_direction();
        let p = WavePatch::new([0.5, 0.5, 0.5], 0.3, u, 0.25, 6, 0.1, 0.3).unwrap();
        for y in [[0.1, 0.2, -0.3], [0.0, 0.0, 0.0], [-0.5, 0.1, 0.4]] {
            let (_, _, s2) = p.profile().eval(p.phase(y));
            let f = p.field_local(y);
            assert!(f.dist(u * s2) < 1e-12, "{f:?}");
        }
        assert_eq!(patch_field(&p, [0.5, 0.5, 0.81]), StateU::ZERO);
    }

    #[test]
    fn field_matches_finite_differences_of_potentials() {
        let u = sample_direction();
        let p = WavePatch::new([0.2, 0.7, 0.4], 0.25, u, 0.4, 3, 0.2, 0.1).unwrap();
        // A point in the cutoff annulus, away from jump planes.
        let point = p.from_local([0.55, 0.55, 0.3]);
        let h = 1e-4;
        let pot = |q: [f64; 3]| p.potentials(q);
        let shifted = |i: usize, s: f64| {
            let mut q = point;
            q[i] += s;
            q
        };
        let d2 = |i: usize, j: usize| {
            let f = |a: f64, b: f64| {
                let mut q = point;
                q[i] += a;
                q[j] += b;
                pot(q).1
            };
            (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h)
        };
        let d1 = |i: usize| (pot(shifted(i, h)).0 - pot(shifted(i, -h)).0) / (2.0 * h);
        let hess = std::array::from_fn(|i| std::array::from_fn(|j| d2(i, j)));
        let fd = potential_apply([d1(0), d1(1), d1(2)], hess);
        let exact = patch_field(&p, point);
        assert!(fd.dist(exact) < 1e-4 * (1.0 + exact.norm()), "{fd:?} vs {exact:?}");
    }

    #[test]
    fn slab_volumes_sum_to_plateau() {
        let p = WavePatch::new([0.5; 3], 0.4, sample_direction(), 0.3, 5, 0.05, 0.17).unwrap();
        let total: f64 = p.plateau_slabs().iter().map(|s| p.slab_volume(s)).sum();
        assert_abs_diff_eq!(total, ball_volume(0.4 * 0.95), epsilon = 1e-14);
        assert_abs_diff_eq!(total + p.annulus_volume(), p.volume(), epsilon = 1e-14);
        for s in p.plateau_slabs() {
            let mid = p.from_local(p.coefficients.unit_normal().map(|n| n * 0.5 * (s.a0 + s.a1)));
            let (plus, minus) = p.endpoints();
            let f = patch_field(&p, mid);
            assert!(f.dist(if s.plus { plus } else { minus }) < 1e-12);
        }
    }
}
