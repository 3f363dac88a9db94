//! Quadrature checks of everything the construction claims.
//!
//! Two evaluation paths are used. Weak residuals and weak traces integrate
//! patch by patch with rules aligned to every jump plane and cutoff sphere,
//! so they converge at the Gauss rate even though the field is
//! discontinuous. Pointwise statistics, the `ρv` variant of the transport
//! identity, pressure reconstruction and Sobolev norms use a rendered
//! [`FieldGrid`] (trapezoid in space, Simpson in time).

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::construct::Subsolution;
use crate::error::VerifyError;
use crate::geometry::{dist_to_k, StateU};
use crate::patchquad::{Part, PatchRule};
use crate::quadrature::{simpson_weights, GaussRule};
use crate::testfn::{Identity, Mode, TestFamily, TestFunction};
use crate::wave::WavePatch;

pub const FIELD_MAGIC: &[u8; 8] = b"WFGRID01";
pub const REPORT_FORMAT: &str = "wildflow-verification";
pub const REPORT_VERSION: u32 = 1;

/// Residuals at or below this are treated as converged when checking order.
pub const RESIDUAL_FLOOR: f64 = 1e-11;
/// Minimum observed order between resolutions `n` and `2n`.
pub const MIN_ORDER: f64 = 1.8;
/// `|ρ ∓ 1| ≤ BAND_ETA` counts toward the value fractions.
pub const BAND_ETA: f64 = 0.1;
/// Largest `|κ|∞` used by the exact-coefficient pressure check.
pub const PRESSURE_BAND: usize = 3;
/// Gauss order per piece of the slice rule used by the pressure check.
pub const PRESSURE_ORDER: usize = 10;

/// Reporting tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub weak_residual: f64,
    pub trace: f64,
    /// Relative least-squares misfit allowed in pressure reconstruction.
    pub pressure: f64,
    pub nontrivial_rho: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { weak_residual: 1e-6, trace: 1e-6, pressure: 1e-3, nontrivial_rho: 0.5 }
    }
}

impl Tolerances {
    /// Sets a tolerance by its key name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), VerifyError> {
        match name {
            "weak_residual" => self.weak_residual = value,
            "trace" => self.trace = value,
            "pressure" => self.pressure = value,
            "nontrivial_rho" => self.nontrivial_rho = value,
            _ => return Err(VerifyError::Format(format!("unknown tolerance {name}"))),
        }
        Ok(())
    }
}

/// A known violation of the transport identity: `q += a·sin(2πx₁)·b(t)e₁`
/// with `b(t) = sin²(πt/T)` on `(0, T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub amplitude: f64,
}

impl Corruption {
    pub fn at(&self, p: [f64; 3], horizon: f64) -> StateU {
        if p[2] <= 0.0 || p[2] >= horizon {
            return StateU::default();
        }
        let b = (std::f64::consts::PI * p[2] / horizon).sin().powi(2);
        StateU::new(0.0, [0.0; 2], [self.amplitude * (TAU * p[0]).sin() * b, 0.0])
    }
}

// ---------------------------------------------------------------------------
// Field grids

/// Samples of the field on `n×n` periodic nodes times `m+1` time nodes
/// spanning `[−pad, T+pad]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub n: usize,
    /// Number of time intervals; must be even.
    pub m: usize,
    pub horizon: f64,
    pub pad: f64,
    pub provenance: String,
    /// Node-major, components `ρ, v₁, v₂, q₁, q₂`; node `(i₁, i₂, j)` at
    /// `((j·n + i₂)·n + i₁)`.
    pub data: Vec<f64>,
}

impl FieldGrid {
    pub fn from_fn(n: usize, m: usize, horizon: f64, pad: f64, provenance: &str, f: impl Fn([f64; 3]) -> StateU + Sync) -> Self {
        assert!(n >= 2 && m >= 2 && m % 2 == 0, "grid needs n ≥ 2 and an even m ≥ 2");
        let mut data = vec![0.0; 5 * n * n * (m + 1)];
        let dt = (horizon + 2.0 * pad) / m as f64;
        data.par_chunks_mut(5 * n * n).enumerate().for_each(|(j, slab)| {
            let t = -pad + j as f64 * dt;
            for i2 in 0..n {
                for i1 in 0..n {
                    let u = f([i1 as f64 / n as f64, i2 as f64 / n as f64, t]).to_array();
                    slab[5 * (i2 * n + i1)..5 * (i2 * n + i1) + 5].copy_from_slice(&u);
                }
            }
        });
        Self { n, m, horizon, pad, provenance: provenance.into(), data }
    }

    pub fn render(sub: &Subsolution, n: usize, m: usize, corruption: Option<Corruption>) -> Self {
        let provenance = format!("subsolution rounds={} patches={}", sub.generations.len(), sub.patches.len());
        let horizon = sub.horizon;
        Self::from_fn(n, m, horizon, horizon / 8.0, &provenance, |p| {
            let u = sub.eval(p);
            match corruption {
                Some(c) => u + c.at(p, horizon),
                None => u,
            }
        })
    }

    pub fn time(&self, j: usize) -> f64 {
        -self.pad + j as f64 * (self.horizon + 2.0 * self.pad) / self.m as f64
    }

    pub fn point(&self, i1: usize, i2: usize, j: usize) -> [f64; 3] {
        [i1 as f64 / self.n as f64, i2 as f64 / self.n as f64, self.time(j)]
    }

    pub fn get(&self, i1: usize, i2: usize, j: usize) -> StateU {
        let k = 5 * ((j * self.n + i2) * self.n + i1);
        StateU::from_array(self.data[k..k + 5].try_into().unwrap())
    }

    /// Component `c` of time slice `j`, row-major in `(i₂, i₁)`.
    pub fn slice_component(&self, j: usize, c: usize) -> Vec<f64> {
        (0..self.n * self.n).map(|k| self.data[5 * (j * self.n * self.n + k) + c]).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), VerifyError> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.pad.to_le_bytes())?;
        w.write_all(&(self.provenance.len() as u64).to_le_bytes())?;
        w.write_all(self.provenance.as_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, VerifyError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(VerifyError::Format("not a field grid".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8], VerifyError> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let horizon = f64::from_le_bytes(next(&mut r)?);
        let pad = f64::from_le_bytes(next(&mut r)?);
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        if n < 2 || m < 2 || m % 2 == 1 || n > 1 << 14 || m > 1 << 16 || len > 1 << 16 {
            return Err(VerifyError::Format(format!("bad grid header n={n} m={m}")));
        }
        let mut prov = vec![0u8; len];
        r.read_exact(&mut prov)?;
        let provenance = String::from_utf8(prov).map_err(|e| VerifyError::Format(e.to_string()))?;
        let mut raw = vec![0u8; 8 * 5 * n * n * (m + 1)];
        r.read_exact(&mut raw)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(VerifyError::Format("non-finite grid value".into()));
        }
        Ok(Self { n, m, horizon, pad, provenance, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), VerifyError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, VerifyError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Space-time quadrature weights per time node (Simpson) and per
    /// spatial node (`1/n²`).
    fn time_weights(&self) -> Vec<f64> {
        simpson_weights(self.m, -self.pad, self.horizon + self.pad)
    }

    /// Time nodes strictly inside `(0, T)`.
    fn interior_slices(&self) -> Vec<usize> {
        (0..=self.m).filter(|&j| self.time(j) > 0.0 && self.time(j) < self.horizon).collect()
    }
}

// ---------------------------------------------------------------------------
// Weak residuals

/// The integrand of each identity: the row of the state matrix paired with
/// `∇_{x,t}` of the test function.
fn identity_density(id: Identity, u: StateU, g: [f64; 3], rho_v: bool) -> f64 {
    match id {
        Identity::Transport => {
            let q = if rho_v { [u.rho * u.v[0], u.rho * u.v[1]] } else { u.q };
            u.rho * g[2] + q[0] * g[0] + q[1] * g[1]
        }
        Identity::Incompressibility => u.v[0] * g[0] + u.v[1] * g[1],
        Identity::Darcy => -u.v[0] * g[1] + (u.v[1] + u.rho) * g[0],
    }
}

fn spatial_mean(f: &TestFunction) -> f64 {
    if f.k == [0, 0] && f.mode == Mode::Cos {
        1.0
    } else {
        0.0
    }
}

/// Contribution of a constant state on `𝕋² × (0, T)`, including the
/// initial-data term of the transport identity.
fn base_contribution(id: Identity, base: StateU, f: &TestFunction, horizon: f64) -> f64 {
    match id {
        Identity::Transport => {
            let bump = |t: f64| f.bump(t).0;
            let m = spatial_mean(f);
            // ∫ρ∂ₜφ over (0,T) plus the initial term ∫ρ₀φ(·,0) with ρ₀ = ρ_A.
            base.rho * m * (bump(horizon) - bump(0.0)) + base.rho * m * bump(0.0)
        }
        _ => 0.0,
    }
}

/// One identity's residuals over a test family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTable {
    pub identity: Identity,
    pub variant: String,
    pub values: Vec<f64>,
}

impl ResidualTable {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// The three default test families for horizon `t_end`.
pub fn default_families(t_end: f64, size: usize) -> [TestFamily; 3] {
    [
        TestFamily::standard(Identity::Transport, t_end, size),
        TestFamily::standard(Identity::Incompressibility, t_end, size),
        TestFamily::standard(Identity::Darcy, t_end, size),
    ]
}

/// Patch-aligned weak residuals at verification resolution `n`.
pub fn forest_residuals(sub: &Subsolution, families: &[TestFamily], n: usize, corruption: Option<Corruption>) -> Vec<ResidualTable> {
    let rule = PatchRule::for_resolution(n);
    let sizes: Vec<usize> = families.iter().map(|f| f.members.len()).collect();
    let total: usize = sizes.iter().sum();
    let sums = sub
        .patches
        .par_iter()
        .map(|node| {
            let mut acc = vec![0.0; total];
            rule.visit(&node.patch, Part::Whole, |x, y, w| {
                let u = node.patch.field_local(y);
                let mut k = 0;
                for fam in families {
                    for f in &fam.members {
                        acc[k] += w * identity_density(fam.identity, u, f.gradient(x), false);
                        k += 1;
                    }
                }
            });
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(vec![0.0; total], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let mut k = 0;
    families
        .iter()
        .map(|fam| {
            let values = fam
                .members
                .iter()
                .map(|f| {
                    let mut r = sums[k] + base_contribution(fam.identity, sub.base, f, sub.horizon);
                    if let (Identity::Transport, Some(c)) = (fam.identity, corruption) {
                        r += corruption_pairing(c, f, sub.horizon, n);
                    }
                    k += 1;
                    r
                })
                .collect();
            ResidualTable { identity: fam.identity, variant: "q".into(), values }
        })
        .collect()
}

fn corruption_pairing(c: Corruption, f: &TestFunction, horizon: f64, n: usize) -> f64 {
    let g = GaussRule::new((n / 4).max(16));
    let mut acc = 0.0;
    for (t, wt) in g.on(0.0, horizon) {
        for (x2, w2) in g.on(0.0, 1.0) {
            for (x1, w1) in g.on(0.0, 1.0) {
                let p = [x1, x2, t];
                acc += wt * w2 * w1 * c.at(p, horizon).q[0] * f.gradient(p)[0];
            }
        }
    }
    acc
}

/// Weak residuals of a rendered grid, in the `q` and `ρv` forms.
pub fn grid_residuals(grid: &FieldGrid, families: &[TestFamily], base: StateU) -> Vec<ResidualTable> {
    let wt = grid.time_weights();
    let cell = 1.0 / (grid.n * grid.n) as f64;
    let mut out = Vec::new();
    for fam in families {
        let variants: &[bool] = if fam.identity == Identity::Transport { &[false, true] } else { &[false] };
        for &rho_v in variants {
            let values = fam
                .members
                .par_iter()
                .map(|f| {
                    let mut acc = 0.0;
                    for j in 0..=grid.m {
                        let mut s = 0.0;
                        for i2 in 0..grid.n {
                            for i1 in 0..grid.n {
                                let p = grid.point(i1, i2, j);
                                s += identity_density(fam.identity, grid.get(i1, i2, j), f.gradient(p), rho_v);
                            }
                        }
                        acc += wt[j] * s * cell;
                    }
                    // Outside (0,T) the grid holds the base state, which the
                    // identities do not integrate; remove it exactly and add
                    // the initial-data term.
                    acc - outside_base(grid, fam.identity, base, f) + initial_term(fam.identity, base, f)
                })
                .collect();
            out.push(ResidualTable { identity: fam.identity, variant: if rho_v { "rho_v".into() } else { "q".into() }, values });
        }
    }
    out
}

/// `∫∫` of the base-state density over `t ∉ (0,T)` on the grid, exactly.
/// Only `ρ∂ₜφ` survives the spatial integration.
fn outside_base(grid: &FieldGrid, id: Identity, base: StateU, f: &TestFunction) -> f64 {
    if id != Identity::Transport {
        return 0.0;
    }
    let b = |t: f64| f.bump(t).0;
    base.rho * spatial_mean(f) * ((b(0.0) - b(-grid.pad)) + (b(grid.horizon + grid.pad) - b(grid.horizon)))
}

/// `∫ρ₀φ(·,0)` with `ρ₀` the base density.
fn initial_term(id: Identity, base: StateU, f: &TestFunction) -> f64 {
    if id == Identity::Transport {
        base.rho * spatial_mean(f) * f.bump(0.0).0
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Constraint statistics

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintStats {
    pub defect_l1: f64,
    pub defect_l2: f64,
    pub defect_linf: f64,
    pub dist_l1: f64,
    pub dist_linf: f64,
    /// Ten equal bins of `dist_K` over `[0, dist_linf]`, as measure fractions.
    pub dist_histogram: Vec<f64>,
    pub rho_plus_fraction: f64,
    pub rho_minus_fraction: f64,
}

/// Pointwise statistics over the grid nodes inside `𝕋² × (0, T)`.
pub fn constraint_stats(grid: &FieldGrid) -> ConstraintStats {
    let slices = grid.interior_slices();
    let vals: Vec<(f64, f64, f64)> = slices
        .par_iter()
        .flat_map_iter(|&j| {
            (0..grid.n * grid.n).map(move |k| {
                let u = grid.get(k % grid.n, k / grid.n, j);
                (u.constraint_defect(), dist_to_k(u), u.rho)
            })
        })
        .collect();
    let count = vals.len().max(1) as f64;
    let vol = grid.horizon / count;
    let mut s = ConstraintStats::default();
    for &(d, k, r) in &vals {
        s.defect_l1 += d * vol;
        s.defect_l2 += d * d * vol;
        s.defect_linf = s.defect_linf.max(d);
        s.dist_l1 += k * vol;
        s.dist_linf = s.dist_linf.max(k);
        if (r - 1.0).abs() <= BAND_ETA {
            s.rho_plus_fraction += 1.0 / count;
        }
        if (r + 1.0).abs() <= BAND_ETA {
            s.rho_minus_fraction += 1.0 / count;
        }
    }
    s.defect_l2 = s.defect_l2.sqrt();
    s.dist_histogram = vec![0.0; 10];
    for &(_, k, _) in &vals {
        let b = if s.dist_linf > 0.0 { ((k / s.dist_linf) * 10.0).floor().min(9.0) as usize } else { 0 };
        s.dist_histogram[b] += 1.0 / count;
    }
    s
}

// ---------------------------------------------------------------------------
// Pressure

fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::default(); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = data[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            data[r * n + c] = col[r];
        }
    }
    if inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|x| *x *= s);
    }
}

fn wavenumber(i: usize, n: usize) -> f64 {
    let k = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
    TAU * k
}

/// Pressure of one slice with its relative misfit.
#[derive(Clone, Debug, PartialEq)]
pub struct Pressure {
    pub p: Vec<f64>,
    pub residual: f64,
}

/// Solves `∇p = −v − (0, ρ)` in the spectral least-squares sense on slice
/// `j`, returning `p` with zero mean and `‖∇p − g‖/‖g‖` (0 when `g ≡ 0`).
pub fn pressure_reconstruct(grid: &FieldGrid, j: usize, tolerance: f64) -> Result<Pressure, VerifyError> {
    let n = grid.n;
    let rho = grid.slice_component(j, 0);
    let g1: Vec<f64> = grid.slice_component(j, 1).iter().map(|v| -v).collect();
    let g2: Vec<f64> = grid.slice_component(j, 2).iter().zip(&rho).map(|(v, r)| -v - r).collect();
    let mut a: Vec<Complex<f64>> = g1.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut b: Vec<Complex<f64>> = g2.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2(&mut a, n, false);
    fft2(&mut b, n, false);
    let mut p = vec![Complex::default(); n * n];
    let (mut total, mut misfit) = (0.0, 0.0);
    for r in 0..n {
        for c in 0..n {
            let k = r * n + c;
            let (k1, k2) = (wavenumber(c, n), wavenumber(r, n));
            let kk = k1 * k1 + k2 * k2;
            total += a[k].norm_sqr() + b[k].norm_sqr();
            if kk == 0.0 {
                misfit += a[k].norm_sqr() + b[k].norm_sqr();
                continue;
            }
            // p̂ = −i(k·ĝ)/|k|², the L² projection onto gradients.
            let dot = a[k] * k1 + b[k] * k2;
            p[k] = Complex::new(0.0, -1.0) * dot / kk;
            let grad = [Complex::new(0.0, k1) * p[k], Complex::new(0.0, k2) * p[k]];
            misfit += (grad[0] - a[k]).norm_sqr() + (grad[1] - b[k]).norm_sqr();
        }
    }
    fft2(&mut p, n, true);
    let residual = if total > 0.0 { (misfit / total).sqrt() } else { 0.0 };
    if residual > tolerance {
        return Err(VerifyError::NotIrrotational(residual));
    }
    Ok(Pressure { p: p.iter().map(|z| z.re).collect(), residual })
}

/// Exact Fourier coefficients `ĝ(κ)` of `g = −v − (0, ρ)` on the slice at
/// time `t`, for `|κ|∞ ≤ band`, from slice-aligned quadrature. Index
/// `(κ₂ + band)(2·band + 1) + κ₁ + band`.
pub fn slice_fourier(sub: &Subsolution, t: f64, band: usize, order: usize) -> Vec<[Complex<f64>; 2]> {
    let w = 2 * band + 1;
    let b = band as i64;
    let mut out = vec![[Complex::default(); 2]; w * w];
    let base = sub.base;
    out[band * w + band] = [Complex::new(-base.v[0], 0.0), Complex::new(-base.v[1] - base.rho, 0.0)];
    if t <= 0.0 || t >= sub.horizon {
        return out;
    }
    let parts: Vec<Vec<[Complex<f64>; 2]>> = sub
        .patches
        .par_iter()
        .map(|node| {
            let mut acc = vec![[Complex::default(); 2]; w * w];
            let mut e1 = vec![Complex::default(); w];
            let mut e2 = vec![Complex::default(); w];
            slice_visit(&node.patch, t, order, |x, y, wt| {
                let u = node.patch.field_local(y);
                let g = [-u.v[0] * wt, (-u.v[1] - u.rho) * wt];
                for (e, xc) in [(&mut e1, x[0]), (&mut e2, x[1])] {
                    let step = Complex::from_polar(1.0, -TAU * xc);
                    let mut z = Complex::from_polar(1.0, TAU * xc * b as f64);
                    for slot in e.iter_mut() {
                        *slot = z;
                        z *= step;
                    }
                }
                for k2 in 0..w {
                    for k1 in 0..w {
                        let z = e1[k1] * e2[k2];
                        let a = &mut acc[k2 * w + k1];
                        a[0] += z * g[0];
                        a[1] += z * g[1];
                    }
                }
            });
            acc
        })
        .collect();
    for part in parts {
        for (o, a) in out.iter_mut().zip(part) {
            o[0] += a[0];
            o[1] += a[1];
        }
    }
    out
}

/// Least-squares fit of `ĝ` by gradients: relative misfit over the band.
pub fn gradient_misfit(coeffs: &[[Complex<f64>; 2]], band: usize) -> f64 {
    let w = 2 * band + 1;
    let (mut total, mut misfit) = (0.0, 0.0);
    for k2 in 0..w {
        for k1 in 0..w {
            let g = coeffs[k2 * w + k1];
            let kv = [TAU * (k1 as f64 - band as f64), TAU * (k2 as f64 - band as f64)];
            let kk = kv[0] * kv[0] + kv[1] * kv[1];
            let n2 = g[0].norm_sqr() + g[1].norm_sqr();
            total += n2;
            misfit += if kk == 0.0 {
                n2
            } else {
                let dot = g[0] * kv[0] + g[1] * kv[1];
                n2 - dot.norm_sqr() / kk
            };
        }
    }
    if total > 0.0 {
        (misfit.max(0.0) / total).sqrt()
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Weak traces

/// Visits a time slice of a patch ball with quadrature aligned to the jump
/// lines and plateau circle. Yields `(x, y, w)` with `w` the spatial weight.
pub fn slice_visit(p: &WavePatch, t: f64, order: usize, mut f: impl FnMut([f64; 2], [f64; 3], f64)) {
    let yt = (t - p.center[2]) / p.radius;
    if yt.abs() >= 1.0 {
        return;
    }
    let big_r = (1.0 - yt * yt).sqrt();
    let n = p.coefficients.unit_normal();
    let nu = n[0].hypot(n[1]);
    let (e, jumps): ([f64; 2], Vec<f64>) = if nu < 1e-12 {
        ([1.0, 0.0], Vec::new())
    } else {
        let e = [n[0] / nu, n[1] / nu];
        (e, p.jump_planes(-1.0, 1.0).into_iter().map(|a| (a - n[2] * yt) / nu).collect())
    };
    let w_dir = [-e[1], e[0]];
    let r_in = p.plateau_radius();
    let inner2 = r_in * r_in - yt * yt;
    let mut cuts = vec![-big_r, big_r];
    if inner2 > 0.0 {
        cuts.extend([-inner2.sqrt(), inner2.sqrt()]);
    }
    cuts.extend(jumps.into_iter().filter(|u| u.abs() < big_r));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let g = GaussRule::new(order);
    let area = p.radius * p.radius;
    // u = R sin θ absorbs the square-root behaviour at the rim.
    let thetas: Vec<f64> = cuts.iter().map(|u| (u / big_r).clamp(-1.0, 1.0).asin()).collect();
    for c in thetas.windows(2) {
        if c[1] <= c[0] {
            continue;
        }
        for (th, wt) in g.on(c[0], c[1]) {
            let u = big_r * th.sin();
            let wu = wt * big_r * th.cos();
            let wmax = big_r * th.cos();
            let wi = (inner2 - u * u).max(0.0).sqrt();
            let ranges: Vec<(f64, f64)> =
                if wi > 0.0 { vec![(-wmax, -wi), (-wi, wi), (wi, wmax)] } else { vec![(-wmax, wmax)] };
            for (lo, hi) in ranges {
                if hi <= lo {
                    continue;
                }
                for (w, ww) in g.on(lo, hi) {
                    let y = [u * e[0] + w * w_dir[0], u * e[1] + w * w_dir[1], yt];
                    let x = p.from_local(y);
                    f([x[0], x[1]], y, wu * ww * area);
                }
            }
        }
    }
}

/// Trace values at one time for one spatial test mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub rho: f64,
    pub v: [f64; 2],
    /// `⟨q, ∇φ⟩`.
    pub q_grad: f64,
}

/// `t ↦ ⟨ρ(·,t),φ⟩, ⟨v(·,t),φ⟩, ⟨q(·,t),∇φ⟩` for the spatial part of `f`.
pub fn weak_trace(sub: &Subsolution, f: &TestFunction, times: &[f64], order: usize) -> Vec<TracePoint> {
    times
        .par_iter()
        .map(|&t| {
            let m = spatial_mean(f);
            let mut tp = TracePoint { t, rho: sub.base.rho * m, v: [sub.base.v[0] * m, sub.base.v[1] * m], q_grad: 0.0 };
            if t <= 0.0 || t >= sub.horizon {
                return tp;
            }
            for node in &sub.patches {
                slice_visit(&node.patch, t, order, |x, y, w| {
                    let u = node.patch.field_local(y);
                    let (phi, g) = f.mode_value(x);
                    tp.rho += w * u.rho * phi;
                    tp.v[0] += w * u.v[0] * phi;
                    tp.v[1] += w * u.v[1] * phi;
                    tp.q_grad += w * (u.q[0] * g[0] + u.q[1] * g[1]);
                });
            }
            tp
        })
        .collect()
}

/// Largest jump between successive trace samples.
pub fn trace_variation(curve: &[TracePoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| {
            let d = [w[1].rho - w[0].rho, w[1].v[0] - w[0].v[0], w[1].v[1] - w[0].v[1]];
            d.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Sobolev diagnostic

/// `‖ρ(·,t_j)‖_{H^s}` with `‖f‖² = Σ (1+|κ|²)^s |f̂(κ)|²` over integer
/// wavenumbers `κ` and `f̂` the normalized DFT. A unit-amplitude complex
/// mode of wavenumber `κ` has norm `(1+|κ|²)^{s/2}`; `cos(2πκ·x)` has
/// `2^{−1/2}` times that.
pub fn sobolev_norm(values: &[f64], n: usize, s: f64) -> f64 {
    let mut a: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft2(&mut a, n, false);
    let scale = 1.0 / (n * n) as f64;
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            let k1 = wavenumber(c, n) / TAU;
            let k2 = wavenumber(r, n) / TAU;
            acc += (1.0 + k1 * k1 + k2 * k2).powf(s) * (a[r * n + c] * scale).norm_sqr();
        }
    }
    acc.sqrt()
}

/// `(t_j, ‖ρ(·,t_j)‖_{H^s})` for every slice of the grid.
pub fn sobolev_diagnostic(grid: &FieldGrid, s: f64) -> Vec<(f64, f64)> {
    (0..=grid.m).into_par_iter().map(|j| (grid.time(j), sobolev_norm(&grid.slice_component(j, 0), grid.n, s))).collect()
}

// ---------------------------------------------------------------------------
// Report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(deserialize_with = "null_as_infinity")]
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value <= tolerance }
    }

    fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, pass: value >= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub n: usize,
    pub m: usize,
    pub family_size: usize,
    pub sobolev_s: f64,
    /// Times at which traces are sampled: `trace_samples` steps on `[−T/4, T/4]`.
    pub trace_samples: usize,
    pub tolerances: Tolerances,
    pub corruption: Option<Corruption>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { n: 64, m: 32, family_size: 5, sobolev_s: 0.5, trace_samples: 16, tolerances: Tolerances::default(), corruption: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub identity: Identity,
    pub coarse: f64,
    pub fine: f64,
    #[serde(deserialize_with = "null_as_infinity")]
    pub order: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub format: String,
    pub version: u32,
    pub provenance: String,
    pub n: usize,
    pub m: usize,
    pub forest_coarse: Vec<ResidualTable>,
    pub forest_fine: Vec<ResidualTable>,
    pub orders: Vec<OrderRow>,
    pub grid_residuals: Vec<ResidualTable>,
    pub grid_stats: ConstraintStats,
    /// Exact region-accounting counterparts of the grid statistics.
    pub exact_dist_l1: f64,
    pub exact_defect_l1: f64,
    pub exact_band_fraction: f64,
    pub annulus_fraction: f64,
    pub pressure_residual_max: f64,
    pub grid_pressure_residual_max: f64,
    pub traces: Vec<Vec<TracePoint>>,
    pub trace_variation: [f64; 2],
    pub sup_abs_rho: f64,
    pub sobolev: Vec<(f64, f64)>,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

fn identity_key(id: Identity) -> &'static str {
    match id {
        Identity::Transport => "transport_q",
        Identity::Incompressibility => "incompressibility",
        Identity::Darcy => "darcy_curl",
    }
}

/// Observed order between resolutions `n` and `2n`, infinite when the fine
/// residual is at the floor.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    if fine <= RESIDUAL_FLOOR {
        f64::INFINITY
    } else if coarse <= 0.0 {
        0.0
    } else {
        (coarse / fine).log2()
    }
}

/// JSON has no infinity and writes it as `null`; orders at the residual
/// floor are infinite, so read `null` back as `+∞`.
fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Runs every check on a subsolution.
pub fn verify_subsolution(sub: &Subsolution, cfg: &VerifyConfig) -> Result<VerificationReport, VerifyError> {
    let tol = &cfg.tolerances;
    let families = default_families(sub.horizon, cfg.family_size);
    let coarse = forest_residuals(sub, &families, cfg.n, cfg.corruption);
    let fine = forest_residuals(sub, &families, 2 * cfg.n, cfg.corruption);
    let mut checks = Vec::new();
    let mut orders = Vec::new();
    for (c, f) in coarse.iter().zip(&fine) {
        let (a, b) = (c.max_abs(), f.max_abs());
        let estimate = (a - b).abs();
        if estimate > tol.weak_residual && b <= tol.weak_residual && a > tol.weak_residual * 1e3 {
            return Err(VerifyError::GridTooCoarse { estimate, tolerance: tol.weak_residual });
        }
        let order = observed_order(a, b);
        let key = identity_key(c.identity);
        checks.push(Check::at_most(&format!("weak_{key}"), b, tol.weak_residual));
        checks.push(Check::at_least(&format!("order_{key}"), order, MIN_ORDER));
        orders.push(OrderRow { identity: c.identity, coarse: a, fine: b, order });
    }

    let grid = FieldGrid::render(sub, cfg.n, cfg.m, cfg.corruption);
    let grid_res = grid_residuals(&grid, &families[..1], sub.base);
    let stats = constraint_stats(&grid);
    // |R_ρv − R_q| ≤ ‖q − ρv‖_{L¹} · max|∇φ| for every test function.
    let bound = families[0].members.iter().map(|f| f.gradient_bound()).fold(0.0, f64::max) * stats.defect_l1;
    let gap = grid_res[0].values.iter().zip(&grid_res[1].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("transport_variant_gap", gap, bound * 1.05 + 1e-12));

    // Point samples of thin slabs alias, so the grid misfit is reported only;
    // the check uses exact Fourier coefficients of a few slices.
    let mut grid_pressure: f64 = 0.0;
    for j in grid.interior_slices() {
        let r = match pressure_reconstruct(&grid, j, f64::INFINITY) {
            Ok(p) => p.residual,
            Err(VerifyError::NotIrrotational(r)) => r,
            Err(e) => return Err(e),
        };
        grid_pressure = grid_pressure.max(r);
    }
    let band = PRESSURE_BAND.min(cfg.n / 4).max(1);
    let pressure_max = [0.25, 0.5, 0.75]
        .iter()
        .map(|f| gradient_misfit(&slice_fourier(sub, f * sub.horizon, band, PRESSURE_ORDER), band))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("pressure_misfit", pressure_max, tol.pressure));

    let boundary = (0..=grid.m)
        .filter(|&j| grid.time(j) <= 0.0 || grid.time(j) >= grid.horizon)
        .flat_map(|j| (0..grid.n * grid.n).map(move |k| (j, k)))
        .map(|(j, k)| grid.get(k % grid.n, k / grid.n, j).dist(sub.base))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("boundary_pinning", boundary, 0.0));

    let (traces, variation) = trace_study(sub, &families[1], cfg.trace_samples);
    let initial = traces
        .iter()
        .flatten()
        .filter(|p| p.t <= 0.0)
        .map(|p| p.rho.abs().max(p.v[0].abs()).max(p.v[1].abs()))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("trace_initial", initial, tol.trace));
    let continuity = if variation[1] <= RESIDUAL_FLOOR { 0.0 } else { variation[1] / variation[0].max(f64::MIN_POSITIVE) };
    checks.push(Check::at_most("trace_refinement_ratio", continuity, 0.75));

    let sup_abs_rho = sub.max_abs_rho();
    if !sub.patches.is_empty() {
        checks.push(Check::at_least("nontrivial_rho", sup_abs_rho, tol.nontrivial_rho));
    }

    Ok(VerificationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        provenance: grid.provenance.clone(),
        n: cfg.n,
        m: cfg.m,
        forest_coarse: coarse,
        forest_fine: fine,
        orders,
        grid_residuals: grid_res,
        grid_stats: stats,
        exact_dist_l1: sub.integral_dist_k(),
        exact_defect_l1: sub.integral_defect(),
        exact_band_fraction: sub.rho_band_fraction(),
        annulus_fraction: sub.annulus_volume() / sub.domain_volume(),
        pressure_residual_max: pressure_max,
        grid_pressure_residual_max: grid_pressure,
        traces,
        trace_variation: variation,
        sup_abs_rho,
        sobolev: sobolev_diagnostic(&grid, cfg.sobolev_s),
        checks,
    })
}

/// Trace curves on `[−T/4, T/4]` at `samples` and `2·samples` steps for each
/// family member, with the largest successive jump at each resolution.
pub fn trace_study(sub: &Subsolution, family: &TestFamily, samples: usize) -> (Vec<Vec<TracePoint>>, [f64; 2]) {
    let tau = 0.25 * sub.horizon;
    let mut curves = Vec::new();
    let mut variation = [0.0f64; 2];
    for (r, steps) in [samples.max(2), 2 * samples.max(2)].into_iter().enumerate() {
        let times: Vec<f64> = (0..=steps).map(|i| -tau + 2.0 * tau * i as f64 / steps as f64).collect();
        for f in &family.members {
            let c = weak_trace(sub, f, &times, 6);
            variation[r] = variation[r].max(trace_variation(&c));
            if r == 1 {
                curves.push(c);
            }
        }
    }
    (curves, variation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{direct_construction, initialize, ConstructionConfig};
    use approx::assert_abs_diff_eq;

    fn small() -> ConstructionConfig {
        ConstructionConfig { rounds: 1, max_patches_per_round: 40, ..Default::default() }
    }

    #[test]
    fn grid_round_trip() {
        let sub = initialize(&small()).unwrap();
        let g = FieldGrid::render(&sub, 4, 4, None);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(FieldGrid::read_from(&buf[..]).unwrap(), g);
        buf[0] = b'X';
        assert!(FieldGrid::read_from(&buf[..]).is_err());
    }

    #[test]
    fn constant_field_is_clean() {
        let sub = initialize(&small()).unwrap();
        let r = verify_subsolution(&sub, &VerifyConfig { n: 16, m: 8, ..Default::default() }).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        assert_abs_diff_eq!(r.grid_stats.defect_l1, (0.3f64.hypot(0.2)), epsilon = 1e-12);
    }

    #[test]
    fn pressure_of_gradient_field() {
        // v + (0,ρ) = −∇g with g = sin(2πx)cos(4πy).
        let g = |x: f64, y: f64| (TAU * x).sin() * (2.0 * TAU * y).cos();
        let grid = FieldGrid::from_fn(32, 2, 1.0, 0.0, "test", |p| {
            let gx = TAU * (TAU * p[0]).cos() * (2.0 * TAU * p[1]).cos();
            let gy = -2.0 * TAU * (TAU * p[0]).sin() * (2.0 * TAU * p[1]).sin();
            let rho = 0.3 * (TAU * p[0]).cos();
            StateU::new(rho, [-gx, -gy - rho], [0.0, 0.0])
        });
        let p = pressure_reconstruct(&grid, 1, 1e-10).unwrap();
        for k in 0..32 * 32 {
            let (x, y) = ((k % 32) as f64 / 32.0, (k / 32) as f64 / 32.0);
            assert_abs_diff_eq!(p.p[k], g(x, y), epsilon = 1e-10);
        }
        // Darcy with zero pressure.
        let zero = FieldGrid::from_fn(16, 2, 1.0, 0.0, "test", |p| {
            let rho = (TAU * p[1]).sin();
            StateU::new(rho, [0.0, -rho], [0.0, 0.0])
        });
        let p = pressure_reconstruct(&zero, 0, 1e-12).unwrap();
        assert!(p.p.iter().all(|x| x.abs() < 1e-12));
        // A rotational field is rejected.
        let rot = FieldGrid::from_fn(16, 2, 1.0, 0.0, "test", |p| StateU::new(0.0, [(TAU * p[1]).sin(), 0.0], [0.0, 0.0]));
        assert!(matches!(pressure_reconstruct(&rot, 0, 0.1), Err(VerifyError::NotIrrotational(_))));
    }

    #[test]
    fn sobolev_of_modes() {
        let n = 16;
        let vals: Vec<f64> = (0..n * n).map(|k| (TAU * (3.0 * (k % n) as f64 / n as f64 + 2.0 * (k / n) as f64 / n as f64)).cos()).collect();
        let s = 1.5;
        assert_abs_diff_eq!(sobolev_norm(&vals, n, s), 0.5f64.sqrt() * 14f64.powf(s / 2.0), epsilon = 1e-12);
        assert_eq!(sobolev_norm(&vec![0.0; n * n], n, s), 0.0);
    }

    #[test]
    fn slice_rule_measures_discs() {
        let (seq, _) = direct_construction(&small()).unwrap();
        let p = &seq[1].patches[0].patch;
        for t in [0.2, 0.5, 0.93] {
            let mut area = 0.0;
            slice_visit(p, t, 4, |_, _, w| area += w);
            let h = t - p.center[2];
            let exact = std::f64::consts::PI * (p.radius * p.radius - h * h);
            assert!((area - exact).abs() < 1e-6 * exact, "{area} vs {exact}");
        }
    }

    #[test]
    fn one_round_passes_and_corruption_fails_transport_only() {
        let (seq, _) = direct_construction(&small()).unwrap();
        let cfg = VerifyConfig { n: 64, m: 16, trace_samples: 8, ..Default::default() };
        let r = verify_subsolution(&seq[1], &cfg).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        let bad = VerifyConfig { corruption: Some(Corruption { amplitude: 0.05 }), ..cfg };
        let r = verify_subsolution(&seq[1], &bad).unwrap();
        let failed: Vec<&str> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["weak_transport_q", "order_transport_q"], "{:#?}", r.checks);
    }
}
