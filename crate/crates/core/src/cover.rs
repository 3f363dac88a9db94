//! Disjoint ball packings of boxes, balls and slabs of balls.
//!
//! Balls are centered on octree cells laid over the domain in a local frame.
//! A cell takes the largest ball around its center that stays inside the
//! cell and the domain and misses the balls of its ancestors, provided that
//! radius is at least a quarter of the cell side. Every cell is then split to
//! reach the space its ball leaves free. Balls of disjoint cells are disjoint,
//! so only ancestors need checking, and a packing can be deepened later by
//! passing its accepted cells back in.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::WaveError;
use crate::wave::{ball_volume, slab_ball_volume};

/// Deepest octree level [`greedy_ball_cover`] explores.
pub const LEVEL_CAP: u32 = 6;
/// Most balls [`greedy_ball_cover`] will place.
pub const BALL_CAP: usize = 200_000;
/// Most cells one traversal may visit.
pub const CELL_CAP: usize = 4_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Ball {
    pub fn volume(&self) -> f64 {
        ball_volume(self.radius)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A region of space-time to be packed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoverDomain {
    Box { lo: [f64; 3], hi: [f64; 3] },
    Ball { center: [f64; 3], radius: f64 },
    /// `{|p − center| ≤ radius, a0 ≤ normal·(p − center) ≤ a1}` with a unit normal.
    SlabInBall { center: [f64; 3], radius: f64, normal: [f64; 3], a0: f64, a1: f64 },
}

impl CoverDomain {
    pub fn volume(&self) -> f64 {
        match *self {
            CoverDomain::Box { lo, hi } => (0..3).map(|k| hi[k] - lo[k]).product(),
            CoverDomain::Ball { radius, .. } => ball_volume(radius),
            CoverDomain::SlabInBall { radius, a0, a1, .. } => slab_ball_volume(radius, a0, a1),
        }
    }

    /// Distance from `c` to the complement of the domain (negative outside).
    pub fn inner_distance(&self, c: [f64; 3]) -> f64 {
        match *self {
            CoverDomain::Box { lo, hi } => (0..3).map(|k| (c[k] - lo[k]).min(hi[k] - c[k])).fold(f64::INFINITY, f64::min),
            CoverDomain::Ball { center, radius } => radius - dist(c, center),
            CoverDomain::SlabInBall { center, radius, normal, a0, a1 } => {
                let d = [c[0] - center[0], c[1] - center[1], c[2] - center[2]];
                let a = dot(normal, d);
                (radius - dist(c, center)).min(a - a0).min(a1 - a)
            }
        }
    }

    pub fn contains_ball(&self, c: [f64; 3], r: f64) -> bool {
        self.inner_distance(c) >= r
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        self.contains_ball(p, 0.0)
    }

    /// `true` only if the ball certainly does not meet the domain.
    pub fn misses_ball(&self, c: [f64; 3], r: f64) -> bool {
        match *self {
            CoverDomain::Box { lo, hi } => (0..3).any(|k| c[k] + r <= lo[k] || c[k] - r >= hi[k]),
            CoverDomain::Ball { center, radius } => dist(c, center) >= radius + r,
            CoverDomain::SlabInBall { center, radius, normal, a0, a1 } => {
                let d = [c[0] - center[0], c[1] - center[1], c[2] - center[2]];
                let a = dot(normal, d);
                dist(c, center) >= radius + r || a >= a1 + r || a <= a0 - r
            }
        }
    }

    /// The octree frame laid over the domain. `offset ∈ [0,1)²` shifts the
    /// lateral tiling of slabs.
    pub fn frame(&self, offset: [f64; 2]) -> CoverFrame {
        match *self {
            CoverDomain::Box { lo, hi } => {
                let ext: [f64; 3] = std::array::from_fn(|k| hi[k] - lo[k]);
                let side = ext.iter().cloned().fold(f64::INFINITY, f64::min);
                CoverFrame {
                    origin: lo,
                    axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                    side,
                    tiles: ext.map(|e| ((e / side) - 1e-12).ceil().max(1.0) as i64),
                }
            }
            CoverDomain::Ball { center, radius } => CoverFrame {
                origin: center.map(|x| x - radius),
                axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                side: 2.0 * radius,
                tiles: [1, 1, 1],
            },
            CoverDomain::SlabInBall { center, radius, normal, a0, a1 } => {
                let (e2, e3) = complete_basis(normal);
                let side = a1 - a0;
                let shift = [offset[0] * side, offset[1] * side];
                let lateral = ((2.0 * radius + shift[0].max(shift[1])) / side).ceil().max(1.0) as i64;
                let origin: [f64; 3] = std::array::from_fn(|k| {
                    center[k] + a0 * normal[k] - (radius + shift[0]) * e2[k] - (radius + shift[1]) * e3[k]
                });
                CoverFrame { origin, axes: [normal, e2, e3], side, tiles: [1, lateral + 1, lateral + 1] }
            }
        }
    }
}

/// Orthonormal completion of a unit vector.
pub fn complete_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t = dot(helper, n);
    let mut e2 = [helper[0] - t * n[0], helper[1] - t * n[1], helper[2] - t * n[2]];
    let l = dot(e2, e2).sqrt();
    e2 = e2.map(|x| x / l);
    let e3 = [n[1] * e2[2] - n[2] * e2[1], n[2] * e2[0] - n[0] * e2[2], n[0] * e2[1] - n[1] * e2[0]];
    (e2, e3)
}

/// Local octree frame: level-0 cells are cubes of side `side` spanned by `axes`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverFrame {
    pub origin: [f64; 3],
    pub axes: [[f64; 3]; 3],
    pub side: f64,
    pub tiles: [i64; 3],
}

/// `(level, index)` of an octree cell.
pub type CellKey = (u32, [i64; 3]);

impl CoverFrame {
    pub fn cell_side(&self, level: u32) -> f64 {
        self.side / (1u64 << level) as f64
    }

    pub fn cell_center(&self, key: CellKey) -> [f64; 3] {
        let h = self.cell_side(key.0);
        let mut p = self.origin;
        for a in 0..3 {
            let s = (key.1[a] as f64 + 0.5) * h;
            for k in 0..3 {
                p[k] += s * self.axes[a][k];
            }
        }
        p
    }

    pub fn cell_ball(&self, key: CellKey, radius: f64) -> Ball {
        Ball { center: self.cell_center(key), radius }
    }
}

/// Outcome of one traversal.
#[derive(Clone, Debug, Default)]
pub struct CoverExtension {
    pub accepted: Vec<(CellKey, Ball)>,
    /// Deepest level fully processed.
    pub level_reached: u32,
    /// Whether the traversal stopped on a ball or cell cap.
    pub truncated: bool,
}

/// Limits of one traversal.
#[derive(Clone, Copy, Debug)]
pub struct TraversalLimits {
    pub max_level: u32,
    pub max_new: usize,
    /// Stop at the end of the first level whose packed volume reaches this.
    pub stop_volume: Option<f64>,
}

/// Packs new balls into `domain` minus the balls of `occupied` cells, given
/// with their radii.
pub fn extend_cover(
    domain: &CoverDomain,
    frame: &CoverFrame,
    occupied: &HashMap<CellKey, f64>,
    limits: TraversalLimits,
) -> CoverExtension {
    let sqrt3_half = 3f64.sqrt() / 2.0;
    let mut out = CoverExtension::default();
    let mut radii: Vec<f64> = occupied.values().copied().collect();
    radii.sort_by(f64::total_cmp);
    let mut packed: f64 = radii.iter().map(|r| ball_volume(*r)).sum();
    let mut current: Vec<([i64; 3], Vec<Ball>)> = Vec::new();
    for i in 0..frame.tiles[0] {
        for j in 0..frame.tiles[1] {
            for k in 0..frame.tiles[2] {
                current.push(([i, j, k], Vec::new()));
            }
        }
    }
    let mut visited = 0usize;
    for level in 0..=limits.max_level {
        let mut next = Vec::new();
        let h = frame.cell_side(level);
        for (idx, ancestors) in current {
            visited += 1;
            if visited > CELL_CAP {
                out.truncated = true;
                return out;
            }
            let key = (level, idx);
            let center = frame.cell_center(key);
            let bound = sqrt3_half * h;
            if domain.misses_ball(center, bound) {
                continue;
            }
            if ancestors.iter().any(|a| dist(a.center, center) + bound <= a.radius) {
                continue;
            }
            let mut blockers: Vec<Ball> =
                ancestors.into_iter().filter(|a| dist(a.center, center) < a.radius + bound).collect();
            if let Some(&r) = occupied.get(&key) {
                blockers.push(Ball { center, radius: r });
            } else {
                let room = blockers
                    .iter()
                    .map(|a| dist(a.center, center) - a.radius)
                    .fold(domain.inner_distance(center), f64::min)
                    .min(0.5 * h);
                if room >= 0.25 * h {
                    if out.accepted.len() >= limits.max_new {
                        out.truncated = true;
                        return out;
                    }
                    let ball = Ball { center, radius: room };
                    out.accepted.push((key, ball));
                    packed += ball.volume();
                    blockers.push(ball);
                }
            }
            if level < limits.max_level {
                for c in 0..8i64 {
                    let child = [2 * idx[0] + (c & 1), 2 * idx[1] + ((c >> 1) & 1), 2 * idx[2] + ((c >> 2) & 1)];
                    next.push((child, blockers.clone()));
                }
            }
        }
        out.level_reached = level;
        if limits.stop_volume.map_or(false, |v| packed >= v) {
            break;
        }
        current = next;
    }
    out
}

/// A finite disjoint ball family inside a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallCover {
    pub domain: CoverDomain,
    pub balls: Vec<Ball>,
    pub covered_fraction: f64,
    pub uncovered_fraction: f64,
}

/// Deterministic dyadic packing until the covered fraction reaches
/// `target_fraction`.
pub fn greedy_ball_cover(domain: &CoverDomain, target_fraction: f64) -> Result<BallCover, WaveError> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(WaveError::InvalidParameter(format!("target fraction must lie in (0,1), got {target_fraction}")));
    }
    let vol = domain.volume();
    let frame = domain.frame([0.0, 0.0]);
    let ext = extend_cover(
        domain,
        &frame,
        &HashMap::new(),
        TraversalLimits { max_level: LEVEL_CAP, max_new: BALL_CAP, stop_volume: Some(target_fraction * vol) },
    );
    let balls: Vec<Ball> = ext.accepted.into_iter().map(|(_, b)| b).collect();
    let covered = balls.iter().map(Ball::volume).sum::<f64>() / vol;
    if covered < target_fraction {
        return Err(WaveError::IterationCap { achieved: covered, target: target_fraction });
    }
    Ok(BallCover { domain: *domain, balls, covered_fraction: covered, uncovered_fraction: 1.0 - covered })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_disjoint_inside(cover: &BallCover) {
        for b in &cover.balls {
            assert!(cover.domain.contains_ball(b.center, b.radius * (1.0 - 1e-12)));
        }
        let mut violations = 0;
        for (i, a) in cover.balls.iter().enumerate() {
            for b in &cover.balls[i + 1..] {
                if dist(a.center, b.center) < a.radius + b.radius - 1e-12 {
                    violations += 1;
                }
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn unit_ball_half() {
        let d = CoverDomain::Ball { center: [0.0; 3], radius: 1.0 };
        let c = greedy_ball_cover(&d, 0.5).unwrap();
        assert!(c.covered_fraction >= 0.5);
        assert_disjoint_inside(&c);
    }

    #[test]
    fn box_cover_is_disjoint_and_monotone() {
        let d = CoverDomain::Box { lo: [0.0; 3], hi: [1.0, 1.0, 1.0] };
        let mut last = 0.0;
        for target in [0.3, 0.6, 0.7] {
            let c = greedy_ball_cover(&d, target).unwrap();
            assert!(c.covered_fraction >= target && c.covered_fraction >= last);
            last = c.covered_fraction;
            assert_disjoint_inside(&c);
        }
    }

    #[test]
    fn unreachable_target_reports_achieved_fraction() {
        let d = CoverDomain::Box { lo: [0.0; 3], hi: [1.0; 3] };
        match greedy_ball_cover(&d, 0.99) {
            Err(WaveError::IterationCap { achieved, target }) => {
                assert!(achieved > 0.7 && achieved < 0.99);
                assert_eq!(target, 0.99);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slab_cover() {
        let n = [0.6, 0.0, 0.8];
        let d = CoverDomain::SlabInBall { center: [0.5; 3], radius: 0.3, normal: n, a0: -0.05, a1: 0.1 };
        let c = greedy_ball_cover(&d, 0.7).unwrap();
        assert_disjoint_inside(&c);
    }

    #[test]
    fn extension_respects_occupied_cells() {
        let d = CoverDomain::Box { lo: [0.0; 3], hi: [1.0; 3] };
        let frame = d.frame([0.0; 2]);
        let lim = |lvl| TraversalLimits { max_level: lvl, max_new: usize::MAX, stop_volume: None };
        let first = extend_cover(&d, &frame, &HashMap::new(), lim(2));
        let occ: HashMap<CellKey, f64> = first.accepted.iter().map(|(k, b)| (*k, b.radius)).collect();
        let second = extend_cover(&d, &frame, &occ, lim(4));
        let all: Vec<Ball> = first.accepted.iter().chain(&second.accepted).map(|(_, b)| *b).collect();
        let cover = BallCover { domain: d, balls: all, covered_fraction: 0.0, uncovered_fraction: 0.0 };
        assert_disjoint_inside(&cover);
        assert!(second.accepted.iter().all(|(k, _)| k.0 > 2 || !occ.contains_key(k)));
    }
}
