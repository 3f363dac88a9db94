//! Degenerate T4 configurations around states `(0, 0, z)`, the ball `𝔹_z`,
//! the relaxed set `𝒰_z` (first cone-hull of `𝔹_z` with its corner images),
//! hull membership with explicit witnesses, the openness margin and the
//! staircase laminate.
//!
//! Corner conventions: for a center `A = (ρ, w, z)` with `|ρ| < 1`,
//! `A − (1, x, x)` is a cone direction iff `x − w` lies on the circle through
//! the origin with center `(0, −(1−ρ)/2)` and radius `(1−ρ)/2`, and
//! `A − (−1, y, −y)` is one iff `y − w` lies on the circle with center
//! `(0, (1+ρ)/2)` and radius `(1+ρ)/2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::HullError;
use crate::geometry::{dist_to_k, in_cone_tol, StateU};

/// Largest radius `admissible_delta` will return.
pub const DELTA_CAP: f64 = 0.25;
/// Minimum margin every sampled T4 of an admissible ball must keep.
pub const DELTA_FLOOR: f64 = 0.01;
/// Mixing threshold above which the segment case recurses into the ball case.
pub const SEGMENT_RECURSION_MIX: f64 = 7.0 / 8.0;
/// Lower bound on the fraction of the domain moved by one perturbation step.
pub const APP_C0: f64 = 7.0 / 32.0;

const DELTA_SEED: u64 = 0x7434_6465_6c74_61;

/// Anchor of the relaxed set: the ball `𝔹_z` of radius `delta` around `(0,0,z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HullSpec {
    pub z: [f64; 2],
    pub delta: f64,
}

impl HullSpec {
    pub fn new(z: [f64; 2], delta: f64) -> Result<Self, HullError> {
        let spec = Self { z, delta };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the spec with the radius returned by [`admissible_delta`].
    pub fn admissible(z: [f64; 2]) -> Result<Self, HullError> {
        Self::new(z, admissible_delta(z)?)
    }

    pub fn center(&self) -> StateU {
        StateU::new(0.0, [0.0, 0.0], self.z)
    }

    pub fn validate(&self) -> Result<(), HullError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(HullError::InvalidSpec(format!("delta must be positive, got {}", self.delta)));
        }
        if !anchor_disc_contains(self.z) {
            return Err(HullError::InvalidSpec(format!(
                "z = ({}, {}) must lie in the open disc of radius 1/2 around (0, -1/2), off its center",
                self.z[0], self.z[1]
            )));
        }
        Ok(())
    }

    pub fn in_ball(&self, s: StateU) -> bool {
        s.dist(self.center()) <= self.delta * (1.0 + 1e-12)
    }

    /// `dist(s, ∂𝔹_z)` for points inside the ball, negative outside.
    pub fn ball_slack(&self, s: StateU) -> f64 {
        self.delta - s.dist(self.center())
    }
}

/// The anchor flux must satisfy `|z + (0, ½)| ∈ (0, ½)`: at `A = (0,0,z)` this
/// is exactly the condition that `x(A)` and `y(A)` sit strictly inside their
/// corner balls and off the ball centers.
pub fn anchor_disc_contains(z: [f64; 2]) -> bool {
    let d = z[0].hypot(z[1] + 0.5);
    d > 0.0 && d < 0.5
}

/// Radius convention used when splitting `x` and `y` on their circles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadiusConvention {
    /// `r_x = (1−ρ)/2`, `r_y = (1+ρ)/2`: the circles of the wave cone.
    Corrected,
    /// `r_x = 1−ρ`, `r_y = 1+ρ`. Kept only as a regression guard: corners
    /// built this way are not cone-connected to the center.
    Literal,
}

/// A degenerate T4 configuration centered at `center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct T4Configuration {
    pub center: StateU,
    /// `(1,x₁,x₁)`, `(1,x₂,x₂)`, `(−1,y₁,−y₁)`, `(−1,y₂,−y₂)`.
    pub corners: [StateU; 4],
    pub weights: [f64; 4],
    pub t: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub a_x: [f64; 2],
    pub a_y: [f64; 2],
    pub r_x: f64,
    pub r_y: f64,
}

impl T4Configuration {
    /// `min(|x−a_x|, r_x−|x−a_x|, |y−a_y|, r_y−|y−a_y|)`.
    pub fn margin(&self) -> f64 {
        let dx = dist2(self.x, self.a_x);
        let dy = dist2(self.y, self.a_y);
        dx.min(self.r_x - dx).min(dy).min(self.r_y - dy)
    }

    pub fn reconstruct(&self) -> StateU {
        self.corners.iter().zip(self.weights).map(|(c, l)| *c * l).sum()
    }

    /// The pulled-in corner `(1−s)·center + s·Tᵢ`.
    pub fn shrunk_corner(&self, i: usize, shrink: f64) -> StateU {
        self.center * (1.0 - shrink) + self.corners[i] * shrink
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Splits `p` inside the disc `(a, r)` into the two antipodal boundary points
/// on the ray through `p`, returning `(p₁, p₂, μ₁, μ₂)` with `p = μ₁p₁ + μ₂p₂`.
fn split_on_circle(p: [f64; 2], a: [f64; 2], r: f64) -> Result<([f64; 2], [f64; 2], f64, f64), HullError> {
    let d = dist2(p, a);
    if d == 0.0 {
        return Err(HullError::CenterOnAxis);
    }
    if d >= r {
        return Err(HullError::OutOfBall { margin: r - d });
    }
    let e = [(p[0] - a[0]) / d, (p[1] - a[1]) / d];
    let p1 = [a[0] - r * e[0], a[1] - r * e[1]];
    let p2 = [a[0] + r * e[0], a[1] + r * e[1]];
    Ok((p1, p2, 0.5 * (1.0 - d / r), 0.5 * (1.0 + d / r)))
}

/// The T4 configuration whose barycenter is `a`.
pub fn t4_for_center(a: StateU) -> Result<T4Configuration, HullError> {
    t4_for_center_with(a, RadiusConvention::Corrected)
}

pub fn t4_for_center_with(a: StateU, convention: RadiusConvention) -> Result<T4Configuration, HullError> {
    let StateU { rho, v: w, q: z } = a;
    if !(rho.abs() < 1.0) {
        return Err(HullError::OutOfBall { margin: 1.0 - rho.abs() });
    }
    let t = 0.5 * (1.0 + rho);
    let x = [(z[0] + w[0]) / (1.0 + rho), (z[1] + w[1]) / (1.0 + rho)];
    let y = [(w[0] - z[0]) / (1.0 - rho), (w[1] - z[1]) / (1.0 - rho)];
    let a_x = [w[0], w[1] - 0.5 * (1.0 - rho)];
    let a_y = [w[0], w[1] + 0.5 * (1.0 + rho)];
    let (r_x, r_y) = match convention {
        RadiusConvention::Corrected => (0.5 * (1.0 - rho), 0.5 * (1.0 + rho)),
        RadiusConvention::Literal => (1.0 - rho, 1.0 + rho),
    };
    let (x1, x2, mu1, mu2) = split_on_circle(x, a_x, r_x)?;
    let (y1, y2, nu1, nu2) = split_on_circle(y, a_y, r_y)?;
    Ok(T4Configuration {
        center: a,
        corners: [
            StateU::on_k(1.0, x1),
            StateU::on_k(1.0, x2),
            StateU::on_k(-1.0, y1),
            StateU::on_k(-1.0, y2),
        ],
        weights: [t * mu1, t * mu2, (1.0 - t) * nu1, (1.0 - t) * nu2],
        t,
        x,
        y,
        a_x,
        a_y,
        r_x,
        r_y,
    })
}

/// `x`-coordinate of corner `family` of the T4 centered at `b`.
pub fn corner_coordinate(family: usize, b: StateU) -> Option<[f64; 2]> {
    let cfg = t4_for_center(b).ok()?;
    Some(cfg.corners[family].v)
}

fn unit_sphere_5(rng: &mut ChaCha8Rng) -> [f64; 5] {
    loop {
        let mut p = [0.0; 5];
        for x in p.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return p.map(|x| x / n);
        }
    }
}

/// Deterministic sample of directions in ℝ⁵: the ten signed axes plus
/// `count` seeded random unit vectors.
pub fn sample_directions(count: usize, seed: u64) -> Vec<StateU> {
    let mut dirs = Vec::with_capacity(count + 10);
    for i in 0..5 {
        for sign in [1.0, -1.0] {
            let mut e = [0.0; 5];
            e[i] = sign;
            dirs.push(StateU::from_array(e));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dirs.extend((0..count).map(|_| StateU::from_array(unit_sphere_5(&mut rng))));
    dirs
}

/// Uniform sample of the closed ball of radius `radius` around `center`.
pub fn sample_ball(center: StateU, radius: f64, count: usize, seed: u64) -> Vec<StateU> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let dir = StateU::from_array(unit_sphere_5(&mut rng));
            let u: f64 = rand::Rng::gen(&mut rng);
            center + dir * (radius * u.powf(0.2))
        })
        .collect()
}

fn sampled_margin(center: StateU, delta: f64, dirs: &[StateU]) -> f64 {
    let mut worst = match t4_for_center(center) {
        Ok(c) => c.margin(),
        Err(_) => return f64::NEG_INFINITY,
    };
    for frac in [1.0, 0.5] {
        for d in dirs {
            let m = match t4_for_center(center + *d * (delta * frac)) {
                Ok(c) => c.margin(),
                Err(_) => return f64::NEG_INFINITY,
            };
            worst = worst.min(m);
        }
    }
    worst
}

/// Largest `δ ≤ DELTA_CAP` for which every sampled state of the closed ball
/// of radius `δ` around `(0,0,z)` carries a T4 with margin at least
/// `DELTA_FLOOR`. Deterministic: the sample directions are seeded.
pub fn admissible_delta(z: [f64; 2]) -> Result<f64, HullError> {
    let err = || HullError::NoAdmissibleDelta(z[0], z[1]);
    if !anchor_disc_contains(z) {
        return Err(err());
    }
    let center = StateU::new(0.0, [0.0, 0.0], z);
    let dirs = sample_directions(512, DELTA_SEED);
    let ok = |d: f64| sampled_margin(center, d, &dirs) >= DELTA_FLOOR;
    if !ok(0.0) {
        return Err(err());
    }
    if ok(DELTA_CAP) {
        return Ok(DELTA_CAP);
    }
    let (mut lo, mut hi) = (0.0, DELTA_CAP);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 1e-9 {
        return Err(err());
    }
    Ok(lo)
}

/// `M(δ) = 1 + δ + max_{C∈𝔹_z} max_i |Tᵢ(C)|` (sampled) and
/// `c₁ = (1−δ)/(8M)`.
pub fn app_constants(spec: &HullSpec) -> (f64, f64) {
    let mut max_corner: f64 = 0.0;
    let mut pts = sample_ball(spec.center(), spec.delta, 256, DELTA_SEED ^ 1);
    pts.extend(sample_directions(64, DELTA_SEED ^ 2).into_iter().map(|d| spec.center() + d * spec.delta));
    for p in pts {
        if let Ok(cfg) = t4_for_center(p) {
            for c in cfg.corners {
                max_corner = max_corner.max(c.norm());
            }
        }
    }
    let m = 1.0 + spec.delta + max_corner;
    (m, (1.0 - spec.delta) / (8.0 * m))
}

/// Evidence that a state lies in `𝒰_z`: `state = mix·c + (1−mix)·x` with
/// `c ∈ 𝔹_z`, `x ∈ T_family(𝔹_z)` and `c − x` a cone direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub family: usize,
    pub c: StateU,
    pub x: StateU,
    pub mix: f64,
}

impl Witness {
    pub fn point(&self) -> StateU {
        self.c.lerp(self.x, self.mix)
    }

    /// Residual of `state = mix·c + (1−mix)·x`.
    pub fn defect(&self, state: StateU) -> f64 {
        self.point().dist(state)
    }
}

/// A state of `𝔹_z` whose corner `family` equals `(ρ_X, x, ρ_X·x)`, chosen as
/// close to the ball center as the Gauss–Newton iteration finds, together
/// with its distance to the center. `None` if the iteration fails.
pub fn corner_preimage(family: usize, x: [f64; 2], spec: &HullSpec) -> Option<(StateU, f64)> {
    let c0 = spec.center();
    let mut best: Option<(StateU, f64)> = None;
    for start in [c0] {
        if let Some(b) = gauss_newton_preimage(family, x, start, c0) {
            let d = b.dist(c0);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((b, d));
            }
        }
    }
    best
}

fn corner_jacobian(family: usize, b: StateU) -> Option<([f64; 2], [[f64; 5]; 2])> {
    let f0 = corner_coordinate(family, b)?;
    let h = 1e-7;
    let base = b.to_array();
    let mut jac = [[0.0; 5]; 2];
    for k in 0..5 {
        let mut p = base;
        p[k] += h;
        let fp = corner_coordinate(family, StateU::from_array(p))?;
        let mut m = base;
        m[k] -= h;
        let fm = corner_coordinate(family, StateU::from_array(m))?;
        jac[0][k] = (fp[0] - fm[0]) / (2.0 * h);
        jac[1][k] = (fp[1] - fm[1]) / (2.0 * h);
    }
    Some((f0, jac))
}

/// Minimum-norm Gauss–Newton solve of `x_family(B) = x`, followed by a
/// projection that pulls `B` toward `anchor` along the level set.
fn gauss_newton_preimage(family: usize, x: [f64; 2], start: StateU, anchor: StateU) -> Option<StateU> {
    let mut b = start.to_array();
    for outer in 0..3 {
        for _ in 0..30 {
            let (f, j) = corner_jacobian(family, StateU::from_array(b))?;
            let r = [f[0] - x[0], f[1] - x[1]];
            if r[0].hypot(r[1]) < 1e-13 {
                break;
            }
            let step = min_norm_solve(&j, r)?;
            let mut scale = 1.0;
            let n0 = r[0].hypot(r[1]);
            loop {
                let trial: [f64; 5] = std::array::from_fn(|k| b[k] - scale * step[k]);
                if let Some(ft) = corner_coordinate(family, StateU::from_array(trial)) {
                    if (ft[0] - x[0]).hypot(ft[1] - x[1]) < n0 {
                        b = trial;
                        break;
                    }
                }
                scale *= 0.5;
                if scale < 1e-6 {
                    return None;
                }
            }
        }
        if outer == 2 {
            break;
        }
        // Move toward the anchor within the tangent space of the level set.
        let (_, j) = corner_jacobian(family, StateU::from_array(b))?;
        let a = anchor.to_array();
        let d: [f64; 5] = std::array::from_fn(|k| a[k] - b[k]);
        let jd = [dot5(&j[0], &d), dot5(&j[1], &d)];
        let corr = min_norm_solve(&j, jd)?;
        b = std::array::from_fn(|k| b[k] + d[k] - corr[k]);
    }
    let f = corner_coordinate(family, StateU::from_array(b))?;
    ((f[0] - x[0]).hypot(f[1] - x[1]) < 1e-10).then(|| StateU::from_array(b))
}

fn dot5(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Jᵀ(JJᵀ)⁻¹ r` for a 2×5 Jacobian.
fn min_norm_solve(j: &[[f64; 5]; 2], r: [f64; 2]) -> Option<[f64; 5]> {
    let g00 = dot5(&j[0], &j[0]);
    let g01 = dot5(&j[0], &j[1]);
    let g11 = dot5(&j[1], &j[1]);
    let det = g00 * g11 - g01 * g01;
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    let c0 = (g11 * r[0] - g01 * r[1]) / det;
    let c1 = (-g01 * r[0] + g00 * r[1]) / det;
    Some(std::array::from_fn(|k| j[0][k] * c0 + j[1][k] * c1))
}

fn family_sign(family: usize) -> f64 {
    if family < 2 {
        1.0
    } else {
        -1.0
    }
}

/// Candidate corner `X(φ)` of sign `σ` cone-connected to `s`.
fn corner_on_circle(s: StateU, sigma: f64, phi: f64) -> StateU {
    let rd = s.rho - sigma;
    let vd = [0.5 * rd.abs() * phi.cos(), -0.5 * rd + 0.5 * rd.abs() * phi.sin()];
    StateU::on_k(sigma, [s.v[0] - vd[0], s.v[1] - vd[1]])
}

/// Best `u = 1/mix ≥ 1` placing `X + u(s−X)` inside the ball, and its slack.
fn best_extension(s: StateU, x: StateU, spec: &HullSpec) -> (f64, f64) {
    let c0 = spec.center();
    let d = s - x;
    let dd = d.dot(d);
    if dd == 0.0 {
        return (1.0, f64::NEG_INFINITY);
    }
    let u_star = (-(x - c0).dot(d) / dd).max(1.0);
    let closest = (x + d * u_star).dist(c0);
    let slack = spec.delta - closest;
    if slack <= 0.0 {
        return (u_star, slack);
    }
    // Feasible interval in u is [u_star − h, u_star + h] ∩ [1, ∞); aim for its middle.
    let h = (spec.delta * spec.delta - closest * closest).max(0.0).sqrt() / dd.sqrt();
    let lo = (u_star - h).max(1.0);
    let hi = u_star + h;
    let u = 0.5 * (lo + hi);
    (u, spec.delta - (x + d * u).dist(c0))
}

fn candidate(s: StateU, family: usize, phi: f64, spec: &HullSpec) -> (f64, Witness) {
    let sigma = family_sign(family);
    let x = corner_on_circle(s, sigma, phi);
    let (u, slack_c) = best_extension(s, x, spec);
    let c = x + (s - x) * u;
    let w = Witness { family, c, x, mix: 1.0 / u };
    if slack_c <= 0.0 {
        return (slack_c - 1.0, w);
    }
    match corner_preimage(family, x.v, spec) {
        Some((_, d)) => ((spec.delta - d).min(slack_c), w),
        None => (-1.0, w),
    }
}

/// Decides membership in `𝒰_z` by parametrized search over the four corner
/// families, the corner circle and the mixing ratio.
pub fn membership_in_uz(s: StateU, spec: &HullSpec) -> Result<Witness, HullError> {
    if spec.in_ball(s) {
        return Ok(ball_witness(s, spec));
    }
    // States of K_z: mix 0 with a preimage as the ball end.
    if (s.rho.abs() - 1.0).abs() < 1e-14 && s.constraint_defect() < 1e-14 {
        let fams: &[usize] = if s.rho > 0.0 { &[0, 1] } else { &[2, 3] };
        for &f in fams {
            if let Some((b, d)) = corner_preimage(f, s.v, spec) {
                if d <= spec.delta {
                    return Ok(Witness { family: f, c: b, x: s, mix: 0.0 });
                }
            }
        }
    }
    let mut best: Option<(f64, Witness)> = None;
    for family in 0..4 {
        const COARSE: usize = 96;
        let mut scores: Vec<(f64, f64)> = (0..COARSE)
            .map(|k| {
                let phi = std::f64::consts::TAU * k as f64 / COARSE as f64;
                (cheap_score(s, family, phi, spec), phi)
            })
            .collect();
        scores.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, phi0) in scores.iter().take(3) {
            let h = std::f64::consts::TAU / COARSE as f64;
            let phi = golden_max(|p| cheap_score(s, family, p, spec), phi0 - h, phi0 + h);
            let (score, w) = candidate(s, family, phi, spec);
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                best = Some((score, w));
            }
        }
    }
    let (score, w) = best.expect("four families searched");
    if score > 0.0 && w.defect(s) < 1e-9 && in_cone_tol(w.c - w.x, 1e-10) {
        Ok(w)
    } else {
        Err(HullError::NotMember { best: Some(Box::new(w)), defect: -score })
    }
}

/// Slack of the ball end only; used to steer the search before the more
/// expensive preimage check.
fn cheap_score(s: StateU, family: usize, phi: f64, spec: &HullSpec) -> f64 {
    let x = corner_on_circle(s, family_sign(family), phi);
    let (_, slack) = best_extension(s, x, spec);
    let t4 = t4_for_center(spec.center()).ok();
    // Prefer corners near the ball center's own corner of this family.
    let pull = t4.map_or(0.0, |c| dist2(c.corners[family].v, x.v));
    slack - 1e-3 * pull
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc > fd {
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

/// Witness for a state of `𝔹_z`: the segment toward its own first corner,
/// with the ball end placed midway along the feasible extension.
pub fn ball_witness(s: StateU, spec: &HullSpec) -> Witness {
    let x = t4_for_center(s).map(|c| c.corners[0]).unwrap_or(StateU::on_k(1.0, s.v));
    let (u, slack) = best_extension(s, x, spec);
    if slack > 0.0 {
        Witness { family: 0, c: x + (s - x) * u, x, mix: 1.0 / u }
    } else {
        Witness { family: 0, c: s, x, mix: 1.0 }
    }
}

/// Lower estimate of `dist(x, ∂ x_family(𝔹_z))` by bisection along rays.
pub fn image_boundary_distance(family: usize, x: [f64; 2], spec: &HullSpec) -> f64 {
    let inside = |p: [f64; 2]| corner_preimage(family, p, spec).map_or(false, |(_, d)| d <= spec.delta);
    if !inside(x) {
        return 0.0;
    }
    const RAYS: usize = 32;
    let mut best = f64::INFINITY;
    for k in 0..RAYS {
        let th = std::f64::consts::TAU * k as f64 / RAYS as f64;
        let e = [th.cos(), th.sin()];
        let (mut lo, mut hi) = (0.0, 4.0 * spec.delta + 0.1);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if inside([x[0] + mid * e[0], x[1] + mid * e[1]]) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = best.min(lo);
    }
    best
}

/// `ε = ⅛·min(mix·dist(c, ∂𝔹_z), dist(x_X, ∂x(𝔹_z)))`.
pub fn openness_margin(w: &Witness, spec: &HullSpec) -> Result<f64, HullError> {
    if !(w.mix > 0.0 && w.mix < 1.0) {
        return Err(HullError::DegenerateWitness { mix: w.mix, margin: 0.0 });
    }
    let ball_term = w.mix * spec.ball_slack(w.c);
    if ball_term <= 0.0 {
        return Err(HullError::DegenerateWitness { mix: w.mix, margin: ball_term.max(0.0) });
    }
    let image_term = image_boundary_distance(w.family, w.x.v, spec);
    let eps = ball_term.min(image_term) / 8.0;
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(HullError::DegenerateWitness { mix: w.mix, margin: 0.0 })
    }
}

/// Which T4 the staircase steps along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StaircaseAnchor {
    /// Corners are the pulled-in corners of the base state, translated to the
    /// current node: `Tₖ = T_{i,s}(C) + (C_{k−1} − C)`.
    Base,
    /// Corners are the pulled-in corners of the T4 centered at the current node.
    Node,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CornerOrder {
    /// Families 1, 2, 3, 4, 1, …
    Cyclic,
    /// The family whose step keeps the next node closest to the ball center.
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseOptions {
    pub anchor: StaircaseAnchor,
    pub order: CornerOrder,
}

impl Default for StaircaseOptions {
    fn default() -> Self {
        Self { anchor: StaircaseAnchor::Base, order: CornerOrder::Cyclic }
    }
}

/// One mixing step: `prev = (1−ε')·node + ε'·corner` with `ε' = ε/(1+ε)` and
/// `corner − prev` a cone direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseStep {
    pub family: usize,
    pub prev: StateU,
    pub corner: StateU,
    pub node: StateU,
    /// `corner − prev`.
    pub direction: StateU,
    pub corner_witness: Witness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseLaminate {
    pub base: StateU,
    pub shrink: f64,
    pub epsilon: f64,
    pub steps: Vec<StaircaseStep>,
}

impl StaircaseLaminate {
    pub fn mixing_ratio(&self) -> f64 {
        self.epsilon / (1.0 + self.epsilon)
    }

    /// `[C, C₁, …, C_depth]`.
    pub fn points(&self) -> Vec<StateU> {
        std::iter::once(self.base).chain(self.steps.iter().map(|s| s.node)).collect()
    }

    pub fn last_node(&self) -> StateU {
        self.steps.last().map_or(self.base, |s| s.node)
    }

    /// Terminal states of the mixing tree with their volume fractions: the
    /// corner of step `k` carries `ε'(1−ε')^{k−1}`, the last node `(1−ε')^depth`.
    pub fn terminal_distribution(&self) -> Vec<(StateU, f64)> {
        let e = self.mixing_ratio();
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut rest = 1.0;
        for s in &self.steps {
            out.push((s.corner, rest * e));
            rest *= 1.0 - e;
        }
        out.push((self.last_node(), rest));
        out
    }
}

/// Smallest shrink for which `2|C − T_{i,s}(C)| ≥ dist_K(C)` holds for all
/// four corners, found by bisection.
pub fn minimal_shrink(cfg: &T4Configuration) -> f64 {
    let d = dist_to_k(cfg.center);
    let ok = |s: f64| (0..4).all(|i| 2.0 * cfg.center.dist(cfg.shrunk_corner(i, s)) >= d);
    if ok(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The staircase laminate at `c` with the default (base-anchored, cyclic) steps.
pub fn staircase(c: StateU, spec: &HullSpec, epsilon: f64, shrink: f64, depth: usize) -> Result<StaircaseLaminate, HullError> {
    staircase_with(c, spec, epsilon, shrink, depth, StaircaseOptions::default())
}

pub fn staircase_with(
    c: StateU,
    spec: &HullSpec,
    epsilon: f64,
    shrink: f64,
    depth: usize,
    opts: StaircaseOptions,
) -> Result<StaircaseLaminate, HullError> {
    if !(epsilon > 0.0) {
        return Err(HullError::InvalidSpec(format!("epsilon must be positive, got {epsilon}")));
    }
    if !spec.in_ball(c) {
        return Err(HullError::CornerEscape { step: 0, node: c });
    }
    let base_cfg = t4_for_center(c)?;
    let min_shrink = minimal_shrink(&base_cfg);
    if !(shrink > min_shrink && shrink < 1.0) {
        return Err(HullError::BadShrink { shrink, min_shrink });
    }
    let mut steps = Vec::with_capacity(depth);
    let mut node = c;
    for k in 0..depth {
        let cfg = match opts.anchor {
            StaircaseAnchor::Base => base_cfg,
            StaircaseAnchor::Node => t4_for_center(node).map_err(|_| HullError::CornerEscape { step: k, node })?,
        };
        let dir_of = |i: usize| cfg.shrunk_corner(i, shrink) - cfg.center;
        let family = match opts.order {
            CornerOrder::Cyclic => k % 4,
            CornerOrder::Nearest => (0..4)
                .min_by(|&a, &b| {
                    let na = (node - dir_of(a) * epsilon).dist(spec.center());
                    let nb = (node - dir_of(b) * epsilon).dist(spec.center());
                    na.total_cmp(&nb)
                })
                .unwrap(),
        };
        let direction = dir_of(family);
        let corner = node + direction;
        let next = node - direction * epsilon;
        let corner_witness = match opts.anchor {
            StaircaseAnchor::Node => Witness { family, c: node, x: cfg.corners[family], mix: 1.0 - shrink },
            StaircaseAnchor::Base => membership_in_uz(corner, spec).map_err(|_| HullError::CornerEscape { step: k + 1, node: corner })?,
        };
        if !spec.in_ball(next) && membership_in_uz(next, spec).is_err() {
            return Err(HullError::CornerEscape { step: k + 1, node: next });
        }
        steps.push(StaircaseStep { family, prev: node, corner, node: next, direction, corner_witness });
        node = next;
    }
    Ok(StaircaseLaminate { base: c, shrink, epsilon, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cone_residual, det3, lambda_convex_f, to_matrix};
    use approx::assert_abs_diff_eq;

    fn z0() -> [f64; 2] {
        [0.3, -0.2]
    }

    #[test]
    fn t4_worked_example() {
        let cfg = t4_for_center(StateU::new(0.0, [0.0, 0.0], z0())).unwrap();
        assert_abs_diff_eq!(cfg.t, 0.5);
        assert_abs_diff_eq!(cfg.x[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.x[1], -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.y[0], -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.y[1], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.a_x[1], -0.5);
        assert_abs_diff_eq!(cfg.r_x, 0.5);
        let x1 = cfg.corners[0].v;
        let x2 = cfg.corners[1].v;
        assert_abs_diff_eq!(x1[0], -0.354, epsilon = 1e-3);
        assert_abs_diff_eq!(x1[1], -0.854, epsilon = 1e-3);
        assert_abs_diff_eq!(x2[0], 0.354, epsilon = 1e-3);
        assert_abs_diff_eq!(x2[1], -0.146, epsilon = 1e-3);
        assert_abs_diff_eq!(cfg.weights[0], 0.0379, epsilon = 1e-4);
        assert_abs_diff_eq!(cfg.weights[1], 0.462, epsilon = 1e-3);
        assert_abs_diff_eq!(cfg.weights[2], 0.0379, epsilon = 1e-4);
        assert_abs_diff_eq!(cfg.weights[3], 0.462, epsilon = 1e-3);
        assert_abs_diff_eq!(cfg.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        for c in cfg.corners {
            assert!(det3(&to_matrix(cfg.center - c)).abs() < 1e-12);
            assert_eq!(c.constraint_defect(), 0.0);
            assert_eq!(lambda_convex_f(c), 0.0);
        }
    }

    #[test]
    fn excluded_anchor_is_rejected() {
        assert_eq!(t4_for_center(StateU::new(0.0, [0.0, 0.0], [0.0, -0.5])), Err(HullError::CenterOnAxis));
        assert_eq!(admissible_delta([0.0, -0.5]), Err(HullError::NoAdmissibleDelta(0.0, -0.5)));
    }

    #[test]
    fn literal_radius_breaks_the_cone() {
        let cfg = t4_for_center_with(StateU::new(0.0, [0.0, 0.0], [0.1, -0.3]), RadiusConvention::Literal).unwrap();
        let worst = cfg.corners.iter().map(|c| cone_residual(cfg.center - *c).abs()).fold(0.0, f64::max);
        assert!(worst > 1e-3);
    }

    #[test]
    fn admissible_delta_is_verified_by_sampling() {
        let delta = admissible_delta(z0()).unwrap();
        assert!(delta > 0.0 && delta <= DELTA_CAP);
        let center = StateU::new(0.0, [0.0, 0.0], z0());
        for a in sample_ball(center, delta, 10_000, 17) {
            let cfg = t4_for_center(a).unwrap();
            assert_abs_diff_eq!(cfg.reconstruct().dist(a), 0.0, epsilon = 1e-10);
            assert!(cfg.weights.iter().all(|&l| l > 0.0 && l < 1.0));
        }
    }

    #[test]
    fn near_rim_anchor_has_small_delta() {
        // |z + (0,½)| = 0.48: close to the rim of the anchor disc.
        let z = [0.48 * 0.6, -0.5 + 0.48 * 0.8];
        let delta = admissible_delta(z).unwrap();
        let center = StateU::new(0.0, [0.0, 0.0], z);
        // Distance to failure along sampled rays bounds delta from above.
        for d in sample_directions(64, 5) {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if t4_for_center(center + d * mid).map_or(false, |c| c.margin() > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!(delta <= lo, "{delta} > {lo}");
        }
        assert!(delta < 0.03);
        assert!(admissible_delta([0.49 * 0.6, -0.5 + 0.49 * 0.8]).is_err());
        assert!(admissible_delta([0.99, 0.0]).is_err());
    }

    #[test]
    fn membership_center_and_midpoint() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let c0 = spec.center();
        let w = membership_in_uz(c0, &spec).unwrap();
        assert!(w.defect(c0) < 1e-12);
        let t1 = t4_for_center(c0).unwrap().corners[0];
        let mid = c0.lerp(t1, 0.5);
        let w = membership_in_uz(mid, &spec).unwrap();
        assert!(w.defect(mid) < 1e-9);
        assert!(in_cone_tol(w.c - w.x, 1e-10));
        assert!(spec.in_ball(w.c));
        assert!((w.mix - 0.5).abs() < 0.2, "mix {}", w.mix);
    }

    #[test]
    fn far_state_is_not_member() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let err = membership_in_uz(StateU::new(1.0, [5.0, 5.0], [5.0, 5.0]), &spec).unwrap_err();
        assert!(matches!(err, HullError::NotMember { .. }));
    }

    #[test]
    fn openness_boundary_witness_is_degenerate() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let c = spec.center() + StateU::new(1.0, [0.0; 2], [0.0; 2]) * spec.delta;
        let x = t4_for_center(c).unwrap().corners[0];
        let w = Witness { family: 0, c, x, mix: 0.5 };
        assert!(matches!(openness_margin(&w, &spec), Err(HullError::DegenerateWitness { .. })));
        let w = Witness { mix: 1.0, ..w };
        assert!(matches!(openness_margin(&w, &spec), Err(HullError::DegenerateWitness { .. })));
    }

    #[test]
    fn staircase_depth_zero_and_four() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let c = spec.center();
        let lam = staircase(c, &spec, 0.05, 0.95, 0).unwrap();
        assert_eq!(lam.points(), vec![c]);
        let lam = staircase(c, &spec, 5e-4, 0.9, 4).unwrap();
        assert_eq!(lam.steps.len(), 4);
        let e = lam.mixing_ratio();
        for s in &lam.steps {
            let mixed = s.node * (1.0 - e) + s.corner * e;
            assert!(mixed.dist(s.prev) < 1e-12);
            assert!(cone_residual(s.corner - s.prev).abs() < 1e-10);
            assert!(cone_residual(s.node - s.corner).abs() < 1e-10);
        }
        let bary: StateU = lam.terminal_distribution().iter().map(|(p, w)| *p * *w).sum();
        assert!(bary.dist(c) < 1e-10);
        let total: f64 = lam.terminal_distribution().iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn node_anchored_staircase_has_exact_witnesses() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let opts = StaircaseOptions { anchor: StaircaseAnchor::Node, order: CornerOrder::Nearest };
        let lam = staircase_with(spec.center(), &spec, 0.02, 0.95, 12, opts).unwrap();
        for s in &lam.steps {
            assert!(s.corner_witness.defect(s.corner) < 1e-12);
            assert!(spec.in_ball(s.prev));
            assert!(in_cone_tol(s.corner_witness.c - s.corner_witness.x, 1e-10));
        }
    }

    #[test]
    fn bad_shrink_is_reported() {
        let spec = HullSpec::admissible(z0()).unwrap();
        let err = staircase(spec.center(), &spec, 0.05, 0.01, 2).unwrap_err();
        assert!(matches!(err, HullError::BadShrink { .. }));
    }
}
