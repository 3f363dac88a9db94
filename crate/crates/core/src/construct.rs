//! Subsolutions as patch forests and the direct construction.
//!
//! A subsolution starts as the constant state `A = (0, 0, z)` on
//! `𝕋² × (0, T)`. Each round packs new balls into the regions where the
//! field is still constant and off `K`, and installs one wave patch per ball:
//! a staircase step when the local state lies in `𝔹_z`, a segment step along
//! the hull witness otherwise. The plateau of every patch splits into slabs
//! of constant value, which become regions of their own. Measures and
//! plateau integrals are therefore exact; only the thin cutoff annuli are
//! integrated numerically.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cover::{extend_cover, Ball, CellKey, CoverDomain, CoverFrame, TraversalLimits};
use crate::error::{ConstructError, HullError};
use crate::geometry::{dist_to_k, StateU};
use crate::hull::{
    app_constants, membership_in_uz, t4_for_center, HullSpec, Witness, APP_C0, SEGMENT_RECURSION_MIX,
};
use crate::patchquad::{Part, PatchRule};
use crate::testfn::{Identity, TestFamily};
use crate::wave::{patch_field, SlabPiece, WavePatch};

pub const SUBSOLUTION_FORMAT: &str = "wildflow-subsolution";
pub const SUBSOLUTION_VERSION: u32 = 1;

/// States closer than this to `K` are left alone.
pub const K_TOLERANCE: f64 = 1e-12;
/// Band `||ρ| − 1| ≤ RHO_BAND` tracked by the log.
pub const RHO_BAND: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstructionConfig {
    pub z: [f64; 2],
    /// Radius of `𝔹_z`; `None` uses the admissible radius.
    pub delta: Option<f64>,
    pub horizon: f64,
    pub rounds: usize,
    /// Frequency of every patch in unit-ball coordinates.
    pub frequency: u32,
    /// How often a round may be retried at doubled frequency.
    pub frequency_retries: u32,
    pub cutoff: f64,
    /// Staircase mixing parameter `ε`; the mixing ratio is `ε/(1+ε)`.
    pub epsilon: f64,
    /// Corner pull-in `s`.
    pub shrink: f64,
    /// Steps applied to a ball-valued region within one round.
    pub staircase_depth: usize,
    /// Octree levels a region explores on its first cover.
    pub initial_levels: u32,
    /// Extra octree levels per later round.
    pub levels_per_round: u32,
    pub max_balls_per_region: usize,
    pub max_patches_per_round: usize,
    /// Annulus quadrature nodes per piece.
    pub annulus_nodes: usize,
    pub mollifier_samples: usize,
    pub test_family_size: usize,
    pub seed: u64,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            z: [0.3, -0.2],
            delta: None,
            horizon: 1.0,
            rounds: 3,
            frequency: 32,
            frequency_retries: 3,
            cutoff: 0.015,
            epsilon: 0.1,
            shrink: 0.95,
            staircase_depth: 1,
            initial_levels: 1,
            levels_per_round: 1,
            max_balls_per_region: 48,
            max_patches_per_round: 300,
            annulus_nodes: 2,
            mollifier_samples: 256,
            test_family_size: 5,
            seed: 1,
        }
    }
}

impl ConstructionConfig {
    /// Checks the configuration and resolves the hull spec.
    pub fn hull_spec(&self) -> Result<HullSpec, ConstructError> {
        let bad = |m: String| Err(ConstructError::InvalidConfig(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.frequency == 0 {
            return bad("frequency must be at least 1".into());
        }
        if !(self.cutoff > 0.0 && self.cutoff < 0.5) {
            return bad(format!("cutoff must lie in (0, 1/2), got {}", self.cutoff));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink must lie in (0, 1), got {}", self.shrink));
        }
        if self.staircase_depth == 0 || self.annulus_nodes == 0 || self.max_balls_per_region == 0 {
            return bad("depth, annulus nodes and ball caps must be positive".into());
        }
        let spec = match self.delta {
            Some(d) => HullSpec::new(self.z, d),
            None => HullSpec::admissible(self.z),
        }
        .map_err(|e| ConstructError::InvalidConfig(e.to_string()))?;
        let max = crate::hull::admissible_delta(self.z).map_err(|e| ConstructError::InvalidConfig(e.to_string()))?;
        if spec.delta > max * (1.0 + 1e-12) {
            return bad(format!("delta {} exceeds the admissible radius {max}", spec.delta));
        }
        Ok(spec)
    }
}

/// How a patch was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    /// Mixing toward the pulled-in corner `family` of the T4 at the local state.
    Staircase { family: usize, epsilon: f64 },
    /// Splitting along the witness segment.
    Segment { family: usize, mix: f64 },
}

/// A region where the field is constant away from its child balls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub domain: CoverDomain,
    pub value: StateU,
    pub witness: Option<Witness>,
    /// Patch whose plateau slab this region is.
    pub parent: Option<usize>,
    pub round: usize,
    pub frame: CoverFrame,
    /// Accepted octree cells and the patch installed in each.
    pub cells: Vec<(CellKey, usize)>,
    /// Deepest octree level explored so far.
    pub level_done: Option<u32>,
    /// Steps still to apply within the round that created the region.
    #[serde(skip)]
    pending: usize,
    #[serde(skip)]
    lookup: HashMap<CellKey, usize>,
    #[serde(skip)]
    levels: Vec<u32>,
}

impl Region {
    fn new(domain: CoverDomain, value: StateU, witness: Option<Witness>, parent: Option<usize>, round: usize, frame: CoverFrame) -> Self {
        Self {
            domain,
            value,
            witness,
            parent,
            round,
            frame,
            cells: Vec::new(),
            level_done: None,
            pending: 0,
            lookup: HashMap::new(),
            levels: Vec::new(),
        }
    }

    fn index_cell(&mut self, key: CellKey, patch: usize) {
        self.lookup.insert(key, patch);
        if let Err(pos) = self.levels.binary_search(&key.0) {
            self.levels.insert(pos, key.0);
        }
    }

    fn locate(&self, p: [f64; 3]) -> impl Iterator<Item = usize> + '_ {
        let f = &self.frame;
        let d = [p[0] - f.origin[0], p[1] - f.origin[1], p[2] - f.origin[2]];
        let l: [f64; 3] = std::array::from_fn(|a| f.axes[a][0] * d[0] + f.axes[a][1] * d[1] + f.axes[a][2] * d[2]);
        self.levels.iter().filter_map(move |&lvl| {
            let h = f.cell_side(lvl);
            let idx = l.map(|x| (x / h).floor() as i64);
            self.lookup.get(&(lvl, idx)).copied()
        })
    }
}

/// A patch with its place in the forest and cached annulus integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchNode {
    pub patch: WavePatch,
    pub region: usize,
    pub round: usize,
    pub kind: StepKind,
    pub slabs: Vec<SlabPiece>,
    pub slab_regions: Vec<usize>,
    /// `∫ dist_K(U)` over the cutoff annulus.
    pub annulus_dist: f64,
    /// `∫ |q − ρv|` over the cutoff annulus.
    pub annulus_defect: f64,
    /// Measure of the annulus where `||ρ| − 1| ≤ RHO_BAND`.
    pub annulus_band: f64,
}

/// A finite-stage subsolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subsolution {
    pub format: String,
    pub version: u32,
    pub base: StateU,
    pub horizon: f64,
    pub spec: HullSpec,
    pub config: ConstructionConfig,
    pub regions: Vec<Region>,
    pub patches: Vec<PatchNode>,
    /// Frequency used in each completed round.
    pub generations: Vec<Generation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub round: usize,
    pub frequency: u32,
    pub first_patch: usize,
    pub patch_count: usize,
}

/// The constant subsolution `(0, 0, z)`.
pub fn initialize(config: &ConstructionConfig) -> Result<Subsolution, ConstructError> {
    let spec = config.hull_spec()?;
    let domain = CoverDomain::Box { lo: [0.0; 3], hi: [1.0, 1.0, config.horizon] };
    let root = Region::new(domain, spec.center(), None, None, 0, domain.frame([0.0; 2]));
    Ok(Subsolution {
        format: SUBSOLUTION_FORMAT.into(),
        version: SUBSOLUTION_VERSION,
        base: spec.center(),
        horizon: config.horizon,
        spec,
        config: config.clone(),
        regions: vec![root],
        patches: Vec::new(),
        generations: Vec::new(),
    })
}

/// What a single perturbation step does to a constant state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepPlan {
    pub direction: StateU,
    pub lambda: f64,
    pub kind: StepKind,
    /// Value on the `λ` fraction and its hull witness, if not in `𝔹_z`.
    pub plus: (StateU, Option<Witness>),
    /// Value on the `1−λ` fraction and its hull witness, if not in `𝔹_z`.
    pub minus: (StateU, Option<Witness>),
    /// Whether the plus value should be stepped again in the same round.
    pub recurse_plus: bool,
}

fn snap_to_k(s: StateU, exact: StateU) -> StateU {
    if s.dist(exact) < 1e-12 {
        exact
    } else {
        s
    }
}

/// Largest `e ≤ cap` keeping `s − e·d` within `radius` of `c0`, if any.
fn step_room(s: StateU, d: StateU, c0: StateU, radius: f64, cap: f64) -> Option<f64> {
    let w = s - c0;
    let dd = d.dot(d);
    let wd = w.dot(d);
    let disc = wd * wd - dd * (w.dot(w) - radius * radius);
    if dd == 0.0 || disc < 0.0 {
        return None;
    }
    let hi = (wd + disc.sqrt()) / dd;
    let lo = (wd - disc.sqrt()) / dd;
    let e = hi.min(cap);
    (e > 0.0 && e >= lo).then_some(e)
}

/// Chooses the perturbation of a constant state `s ∈ 𝒰_z`.
pub fn plan_step(
    s: StateU,
    witness: Option<Witness>,
    spec: &HullSpec,
    config: &ConstructionConfig,
) -> Result<Option<StepPlan>, ConstructError> {
    if dist_to_k(s) <= K_TOLERANCE {
        return Ok(None);
    }
    if spec.in_ball(s) {
        let cfg = t4_for_center(s).map_err(ConstructError::NotInHull)?;
        let c0 = spec.center();
        let mut best: Option<(f64, usize, StateU)> = None;
        for i in 0..4 {
            let d = cfg.shrunk_corner(i, config.shrink) - s;
            if crate::wave::wave_coefficients(d).is_err() {
                continue;
            }
            if let Some(e) = step_room(s, d, c0, 0.9 * spec.delta, config.epsilon) {
                if best.map_or(true, |(b, _, _)| e > b) {
                    best = Some((e, i, d));
                }
            }
        }
        let (e, family, d) = best.ok_or(ConstructError::NotInHull(HullError::CornerEscape { step: 0, node: s }))?;
        let lambda = e / (1.0 + e);
        let corner = s + d;
        let node = s - d * e;
        let corner_witness = Witness { family, c: s, x: cfg.corners[family], mix: 1.0 - config.shrink };
        return Ok(Some(StepPlan {
            direction: d * (1.0 / (1.0 - lambda)),
            lambda,
            kind: StepKind::Staircase { family, epsilon: e },
            plus: (corner, Some(corner_witness)),
            minus: (node, None),
            recurse_plus: false,
        }));
    }
    let w = match witness {
        Some(w) => w,
        None => membership_in_uz(s, spec).map_err(ConstructError::NotInHull)?,
    };
    if !(w.mix > 0.0 && w.mix < 1.0) {
        return Err(ConstructError::NotInHull(HullError::DegenerateWitness { mix: w.mix, margin: 0.0 }));
    }
    let u = w.c - w.x;
    let plus = s + u * (1.0 - w.mix);
    let minus = snap_to_k(s - u * w.mix, w.x);
    Ok(Some(StepPlan {
        direction: u,
        lambda: w.mix,
        kind: StepKind::Segment { family: w.family, mix: w.mix },
        plus: (plus, None),
        minus: (minus, Some(Witness { family: w.family, c: w.c, x: w.x, mix: 0.0 })),
        recurse_plus: w.mix >= SEGMENT_RECURSION_MIX,
    }))
}

/// Installs the patch realizing one step on a ball.
pub fn app_step(ball: Ball, local_state: StateU, plan: &StepPlan, frequency: u32, cutoff: f64, phase_offset: f64) -> Result<WavePatch, ConstructError> {
    let _ = local_state;
    Ok(WavePatch::new(ball.center, ball.radius, plan.direction, plan.lambda, frequency, cutoff, phase_offset)?)
}

impl Subsolution {
    /// Field value at a space-time point (`x` taken modulo 1).
    pub fn eval(&self, p: [f64; 3]) -> StateU {
        if p[2] <= 0.0 || p[2] >= self.horizon {
            return self.base;
        }
        let q = [p[0] - p[0].floor(), p[1] - p[1].floor(), p[2]];
        let mut region = &self.regions[0];
        'descend: loop {
            for pid in region.locate(q) {
                let node = &self.patches[pid];
                let y = node.patch.local(q);
                let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
                if r2 >= 1.0 {
                    continue;
                }
                let rp = node.patch.plateau_radius();
                if r2 > rp * rp {
                    return region.value + node.patch.field_local(y);
                }
                let a = node.patch.normal_coordinate(y);
                let k = node.slabs.partition_point(|s| s.a1 < a).min(node.slabs.len() - 1);
                region = &self.regions[node.slab_regions[k]];
                continue 'descend;
            }
            return region.value;
        }
    }

    /// `U − A` as the sum of all patch fields containing `p`.
    pub fn eval_by_sum(&self, p: [f64; 3]) -> StateU {
        self.base + self.patches.iter().map(|n| patch_field(&n.patch, p)).sum::<StateU>()
    }

    pub fn domain_volume(&self) -> f64 {
        self.horizon
    }

    /// Volume of a region not covered by its child balls.
    pub fn free_volume(&self, region: usize) -> f64 {
        let r = &self.regions[region];
        r.domain.volume() - r.cells.iter().map(|(_, p)| self.patches[*p].patch.volume()).sum::<f64>()
    }

    /// `∫_Ω g(U)` split into constant regions (exact) and annuli (cached).
    fn region_sum(&self, g: impl Fn(StateU) -> f64 + Sync) -> f64 {
        let parts: Vec<f64> = (0..self.regions.len()).into_par_iter().map(|i| g(self.regions[i].value) * self.free_volume(i)).collect();
        parts.iter().sum()
    }

    pub fn integral_dist_k(&self) -> f64 {
        self.region_sum(dist_to_k) + self.patches.iter().map(|p| p.annulus_dist).sum::<f64>()
    }

    pub fn integral_defect(&self) -> f64 {
        self.region_sum(|s| s.constraint_defect()) + self.patches.iter().map(|p| p.annulus_defect).sum::<f64>()
    }

    /// Fraction of `Ω` where `||ρ| − 1| ≤ RHO_BAND`.
    pub fn rho_band_fraction(&self) -> f64 {
        let plateau = self.region_sum(|s| if (s.rho.abs() - 1.0).abs() <= RHO_BAND { 1.0 } else { 0.0 });
        (plateau + self.patches.iter().map(|p| p.annulus_band).sum::<f64>()) / self.domain_volume()
    }

    /// Total annulus volume, where the field is not piecewise constant.
    pub fn annulus_volume(&self) -> f64 {
        self.patches.iter().map(|p| p.patch.annulus_volume()).sum()
    }

    /// Largest `|ρ|` over constant regions of positive volume.
    pub fn max_abs_rho(&self) -> f64 {
        (0..self.regions.len())
            .filter(|&i| self.free_volume(i) > 0.0)
            .map(|i| self.regions[i].value.rho.abs())
            .fold(0.0, f64::max)
    }

    /// Regions still constant and off `K`, in creation order.
    pub fn active_regions(&self) -> Vec<usize> {
        (0..self.regions.len()).filter(|&i| dist_to_k(self.regions[i].value) > K_TOLERANCE).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("subsolutions serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, ConstructError> {
        let mut sub: Subsolution = serde_json::from_str(s).map_err(|e| ConstructError::InvalidConfig(e.to_string()))?;
        if sub.format != SUBSOLUTION_FORMAT || sub.version != SUBSOLUTION_VERSION {
            return Err(ConstructError::InvalidConfig(format!("unsupported document {} v{}", sub.format, sub.version)));
        }
        sub.rebuild_index();
        Ok(sub)
    }

    fn rebuild_index(&mut self) {
        for r in &mut self.regions {
            r.lookup.clear();
            r.levels.clear();
            for (k, p) in r.cells.clone() {
                r.index_cell(k, p);
            }
        }
    }

    fn annulus_stats(&self, node: &PatchNode, nodes: usize) -> (f64, f64, f64) {
        let rule = PatchRule::new(nodes, nodes, 4 * nodes);
        let parent = self.regions[node.region].value;
        let (mut dist, mut defect, mut band) = (0.0, 0.0, 0.0);
        rule.visit(&node.patch, Part::Annulus, |_, y, w| {
            let u = parent + node.patch.field_local(y);
            dist += w * dist_to_k(u);
            defect += w * u.constraint_defect();
            if (u.rho.abs() - 1.0).abs() <= RHO_BAND {
                band += w;
            }
        });
        (dist, defect, band)
    }
}

/// Per-round record of the convergence log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub frequency: u32,
    pub retries: u32,
    pub patches_added: usize,
    pub total_patches: usize,
    pub integral_dist_k: f64,
    pub integral_defect: f64,
    pub rho_band_fraction: f64,
    pub annulus_fraction: f64,
    /// `∫|U_{k+1} − U_k|` over the new plateaus (a lower bound).
    pub increment_l1: f64,
    /// `(c₀c₁/2)·∫dist_K(U_k)`.
    pub progress_bound: f64,
    /// Smallest per-ball fraction with `|increment| ≥ c₁·dist_K`.
    pub app_fraction_min: f64,
    /// The same fraction over all new balls together.
    pub app_fraction_mean: f64,
    /// Annulus share of the new balls, charged against the fraction.
    pub app_budget: f64,
    pub pairing_max: f64,
    pub pairing_tolerance: f64,
    pub mollifier_width: f64,
    pub mollifier_l1: f64,
    /// `∫dist_K(U_{k+1}) / ∫dist_K(U_k)`.
    pub contraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLog {
    pub c0: f64,
    pub c1: f64,
    pub big_m: f64,
    pub records: Vec<RoundRecord>,
}

impl ConvergenceLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("logs serialize")
    }
}

fn round_rng(seed: u64, round: usize, attempt: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((attempt as u64) << 48))
}

/// Statistics of one round gathered while it is built.
#[derive(Default)]
struct RoundTally {
    increment_l1: f64,
    app_hits: f64,
    app_volume: f64,
    app_min: f64,
    annulus: f64,
}

/// One perturbation round at a fixed frequency.
fn perturb_once(sub: &Subsolution, round: usize, frequency: u32, attempt: u32, c1: f64) -> Result<(Subsolution, RoundTally), ConstructError> {
    let cfg = &sub.config;
    let spec = sub.spec;
    let mut out = sub.clone();
    out.rebuild_index();
    let mut rng = round_rng(cfg.seed, round, attempt);
    let first_patch = out.patches.len();
    let mut queue: VecDeque<usize> = out.active_regions().into();
    for &r in &queue {
        out.regions[r].pending = cfg.staircase_depth;
    }
    let mut tally = RoundTally { app_min: 1.0, ..Default::default() };
    while let Some(rid) = queue.pop_front() {
        let budget = cfg.max_patches_per_round.saturating_sub(out.patches.len() - first_patch);
        if budget == 0 {
            break;
        }
        if out.regions[rid].pending == 0 {
            continue;
        }
        out.regions[rid].pending -= 1;
        let region = &out.regions[rid];
        let max_level = region.level_done.map_or(cfg.initial_levels, |l| l + cfg.levels_per_round);
        let occupied: HashMap<CellKey, f64> =
            region.cells.iter().map(|(k, p)| (*k, out.patches[*p].patch.radius)).collect();
        let ext = extend_cover(
            &region.domain,
            &region.frame,
            &occupied,
            TraversalLimits { max_level, max_new: cfg.max_balls_per_region.min(budget), stop_volume: None },
        );
        out.regions[rid].level_done = Some(max_level);
        let value = out.regions[rid].value;
        let Some(plan) = plan_step(value, out.regions[rid].witness, &spec, cfg)? else { continue };
        let threshold = c1 * dist_to_k(value);
        for (key, ball) in ext.accepted {
            let patch = app_step(ball, value, &plan, frequency, cfg.cutoff, rng.gen::<f64>())?;
            let pid = out.patches.len();
            let slabs = patch.plateau_slabs();
            let normal = patch.coefficients.unit_normal();
            let mut slab_regions = Vec::with_capacity(slabs.len());
            let mut hits = 0.0;
            for s in &slabs {
                let (val, wit) = if s.plus { plan.plus } else { plan.minus };
                let domain = CoverDomain::SlabInBall {
                    center: patch.center,
                    radius: patch.radius * patch.plateau_radius(),
                    normal,
                    a0: patch.radius * s.a0,
                    a1: patch.radius * s.a1,
                };
                let frame = domain.frame([rng.gen::<f64>(), rng.gen::<f64>()]);
                let mut reg = Region::new(domain, val, wit, Some(pid), round, frame);
                let vol = patch.slab_volume(s);
                let inc = (val - value).norm();
                tally.increment_l1 += inc * vol;
                if inc >= threshold {
                    hits += vol;
                }
                let again = if s.plus { plan.recurse_plus } else { false };
                let stair_more = matches!(plan.kind, StepKind::Staircase { .. }) && !s.plus;
                if again {
                    reg.pending = cfg.staircase_depth;
                } else if stair_more {
                    reg.pending = out.regions[rid].pending;
                }
                let nid = out.regions.len();
                if reg.pending > 0 {
                    queue.push_back(nid);
                }
                out.regions.push(reg);
                slab_regions.push(nid);
            }
            let frac = hits / patch.volume();
            tally.app_min = tally.app_min.min(frac);
            tally.app_hits += hits;
            tally.app_volume += patch.volume();
            tally.annulus += patch.annulus_volume();
            out.patches.push(PatchNode {
                patch,
                region: rid,
                round,
                kind: plan.kind,
                slabs,
                slab_regions,
                annulus_dist: 0.0,
                annulus_defect: 0.0,
                annulus_band: 0.0,
            });
            out.regions[rid].cells.push((key, pid));
            out.regions[rid].index_cell(key, pid);
        }
    }
    let stats: Vec<(f64, f64, f64)> =
        (first_patch..out.patches.len()).into_par_iter().map(|i| out.annulus_stats(&out.patches[i], cfg.annulus_nodes)).collect();
    for (i, (d, q, b)) in stats.into_iter().enumerate() {
        let node = &mut out.patches[first_patch + i];
        node.annulus_dist = d;
        node.annulus_defect = q;
        node.annulus_band = b;
    }
    out.generations.push(Generation { round, frequency, first_patch, patch_count: out.patches.len() - first_patch });
    Ok((out, tally))
}

/// Largest pairing of the patches installed since `first_patch` against the
/// test family, over all components.
pub fn increment_pairing(sub: &Subsolution, first_patch: usize, family: &TestFamily, nodes: usize) -> f64 {
    let rule = PatchRule::new(nodes, nodes, 4 * nodes);
    let m = family.members.len();
    let sums = sub.patches[first_patch..]
        .par_iter()
        .map(|node| {
            let mut acc = vec![0.0; 5 * m];
            rule.visit(&node.patch, Part::Whole, |x, y, w| {
                let u = node.patch.field_local(y).to_array();
                for (j, f) in family.members.iter().enumerate() {
                    let phi = w * f.value(x);
                    for k in 0..5 {
                        acc[5 * j + k] += u[k] * phi;
                    }
                }
            });
            acc
        })
        .collect::<Vec<_>>();
    // Summed in patch order so the result does not depend on scheduling.
    let mut total = vec![0.0; 5 * m];
    for part in sums {
        total.iter_mut().zip(part).for_each(|(t, x)| *t += x);
    }
    total.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Chooses the widest mollifier `2^{−j}` whose sampled `L¹` distance to the
/// field is at most `tol`. Returns `(width, estimate)`.
pub fn mollifier_check(sub: &Subsolution, tol: f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 3]> =
        (0..samples).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), sub.horizon * rng.gen::<f64>()]).collect();
    let offsets: Vec<[f64; 3]> = crate::hull::sample_directions(6, seed ^ 3)
        .into_iter()
        .map(|d| {
            let a = d.to_array();
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt().max(1e-9);
            [a[0] / n, a[1] / n, a[2] / n]
        })
        .collect();
    let values: Vec<StateU> = points.par_iter().map(|p| sub.eval(*p)).collect();
    let mut last = (0.0, 0.0);
    for j in 1..=30 {
        let w = 0.5f64.powi(j);
        let est: f64 = points
            .par_iter()
            .zip(&values)
            .map(|(p, u)| {
                let avg: StateU = offsets
                    .iter()
                    .map(|o| sub.eval([p[0] + 0.5 * w * o[0], p[1] + 0.5 * w * o[1], p[2] + 0.5 * w * o[2]]))
                    .sum::<StateU>()
                    * (1.0 / offsets.len() as f64);
                (*u - avg).norm()
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum::<f64>()
            / samples as f64
            * sub.domain_volume();
        last = (w, est);
        if est <= tol {
            break;
        }
    }
    last
}

/// One perturbation round, retried at doubled frequency until the increment
/// pairings meet `2^{−k}`.
pub fn perturbation_round(sub: &Subsolution, k: usize) -> Result<(Subsolution, RoundRecord), ConstructError> {
    let cfg = &sub.config;
    let (big_m, c1) = app_constants(&sub.spec);
    let family = TestFamily::standard(Identity::Incompressibility, sub.horizon, cfg.test_family_size);
    let tol = 0.5f64.powi(k as i32);
    let before = sub.integral_dist_k();
    let _ = big_m;
    for attempt in 0..=cfg.frequency_retries {
        let frequency = cfg.frequency << attempt;
        let (next, tally) = perturb_once(sub, k, frequency, attempt, c1)?;
        let first = next.generations.last().map_or(0, |g| g.first_patch);
        let pairing = increment_pairing(&next, first, &family, 3);
        if pairing > tol {
            continue;
        }
        let after = next.integral_dist_k();
        let (mw, ml1) = mollifier_check(&next, tol, cfg.mollifier_samples, cfg.seed ^ k as u64);
        let rec = RoundRecord {
            round: k,
            frequency,
            retries: attempt,
            patches_added: next.patches.len() - sub.patches.len(),
            total_patches: next.patches.len(),
            integral_dist_k: after,
            integral_defect: next.integral_defect(),
            rho_band_fraction: next.rho_band_fraction(),
            annulus_fraction: next.annulus_volume() / next.domain_volume(),
            increment_l1: tally.increment_l1,
            progress_bound: 0.5 * APP_C0 * c1 * before,
            app_fraction_min: if tally.app_volume > 0.0 { tally.app_min } else { 0.0 },
            app_fraction_mean: if tally.app_volume > 0.0 { tally.app_hits / tally.app_volume } else { 0.0 },
            app_budget: if tally.app_volume > 0.0 { tally.annulus / tally.app_volume } else { 0.0 },
            pairing_max: pairing,
            pairing_tolerance: tol,
            mollifier_width: mw,
            mollifier_l1: ml1,
            contraction: if before > 0.0 { after / before } else { 1.0 },
        };
        return Ok((next, rec));
    }
    Err(ConstructError::ToleranceUnreachable(k))
}

/// Runs `config.rounds` perturbation rounds from the constant state.
pub fn direct_construction(config: &ConstructionConfig) -> Result<(Vec<Subsolution>, ConvergenceLog), ConstructError> {
    let first = initialize(config)?;
    let (big_m, c1) = app_constants(&first.spec);
    let mut log = ConvergenceLog { c0: APP_C0, c1, big_m, records: Vec::new() };
    log.records.push(RoundRecord {
        integral_dist_k: first.integral_dist_k(),
        integral_defect: first.integral_defect(),
        rho_band_fraction: first.rho_band_fraction(),
        contraction: 1.0,
        ..Default::default()
    });
    let mut seq = vec![first];
    for k in 0..config.rounds {
        let (next, mut rec) = perturbation_round(seq.last().unwrap(), k)?;
        rec.round = k + 1;
        log.records.push(rec);
        seq.push(next);
    }
    Ok((seq, log))
}
