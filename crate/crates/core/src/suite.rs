//! Property suites over the geometry and the hull, shared by the command
//! line and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{StepKind, Subsolution};
use crate::geometry::{cone_residual, det3, lambda_convex_f, to_matrix, StateU};
use crate::hull::{admissible_delta, sample_ball, t4_for_center_with, HullSpec, RadiusConvention};
use crate::wave::{building_block, sampled_segment_deviation, BlockOptions, MeasureStats, WavePatch};
use crate::cover::CoverDomain;
use crate::patchquad::{Part, PatchRule};
use crate::testfn::{Identity, TestFamily};

/// One line of a suite summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub samples: usize,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteRow {
    fn at_most(name: &str, samples: usize, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), samples, value, tolerance, pass: value <= tolerance }
    }
}

fn random_state(rng: &mut ChaCha8Rng, scale: f64) -> StateU {
    let mut a = [0.0; 5];
    for x in a.iter_mut() {
        *x = rng.gen_range(-scale..scale);
    }
    StateU::from_array(a)
}

/// `max |cone_residual(s) + det(to_matrix(s))| / (1 + |s|³)` over random states.
pub fn cone_oracle(samples: usize, seed: u64) -> SuiteRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = (0..samples)
        .map(|_| {
            let s = random_state(&mut rng, 3.0);
            (cone_residual(s) + det3(&to_matrix(s))).abs() / (1.0 + s.norm().powi(3))
        })
        .fold(0.0, f64::max);
    SuiteRow::at_most("cone_determinant", samples, worst, 1e-10)
}

/// Anchor fluxes `z` in the disc `B((0,−½), ½)` at distance `[0.05, 0.48]`
/// from its center.
pub fn sample_anchor(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let r = (rng.gen_range(0.05f64.powi(2)..0.48f64.powi(2))).sqrt();
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    [r * a.cos(), -0.5 + r * a.sin()]
}

/// Worst defects of the T4 configurations over `pairs` samples `(z, A ∈ 𝔹_z)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct T4Validity {
    pub pairs: usize,
    pub failures: usize,
    pub cone: f64,
    pub weight_sum: f64,
    pub weight_min: f64,
    pub weight_max: f64,
    pub corner_defect: f64,
    pub barycenter: f64,
}

pub fn t4_validity(pairs: usize, seed: u64, convention: RadiusConvention) -> T4Validity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = T4Validity { pairs, weight_min: 1.0, ..Default::default() };
    for k in 0..pairs {
        let z = sample_anchor(&mut rng);
        let Ok(delta) = admissible_delta(z) else {
            out.failures += 1;
            continue;
        };
        let spec = HullSpec { z, delta };
        let a = sample_ball(spec.center(), delta, 1, seed ^ k as u64)[0];
        let Ok(cfg) = t4_for_center_with(a, convention) else {
            out.failures += 1;
            continue;
        };
        for c in cfg.corners {
            let d = a - c;
            out.cone = out.cone.max(cone_residual(d).abs());
            out.corner_defect = out.corner_defect.max(c.constraint_defect());
        }
        out.weight_sum = out.weight_sum.max((cfg.weights.iter().sum::<f64>() - 1.0).abs());
        for w in cfg.weights {
            out.weight_min = out.weight_min.min(w);
            out.weight_max = out.weight_max.max(w);
        }
        out.barycenter = out.barycenter.max(cfg.reconstruct().dist(a));
    }
    out
}

impl T4Validity {
    pub fn rows(&self) -> Vec<SuiteRow> {
        let n = self.pairs;
        vec![
            SuiteRow::at_most("t4_failures", n, self.failures as f64, 0.0),
            SuiteRow::at_most("t4_cone_singularity", n, self.cone, 1e-10),
            SuiteRow::at_most("t4_weight_sum", n, self.weight_sum, 1e-12),
            SuiteRow { name: "t4_weight_min".into(), samples: n, value: self.weight_min, tolerance: 1e-6, pass: self.weight_min > 1e-6 },
            SuiteRow { name: "t4_weight_max".into(), samples: n, value: self.weight_max, tolerance: 1.0, pass: self.weight_max < 1.0 },
            SuiteRow::at_most("t4_corner_defect", n, self.corner_defect, 0.0),
            SuiteRow::at_most("t4_barycenter", n, self.barycenter, 1e-12),
        ]
    }

    pub fn passed(&self) -> bool {
        self.rows().iter().all(|r| r.pass)
    }
}

/// `max |f|` over random points of `K`; must vanish exactly.
pub fn barrier_on_k(samples: usize, seed: u64) -> SuiteRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = (0..samples)
        .map(|_| {
            let r = rng.gen_range(-2.0..2.0);
            let u = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            lambda_convex_f(StateU::on_k(r, u)).abs()
        })
        .fold(0.0, f64::max);
    SuiteRow::at_most("barrier_on_k", samples, worst, 0.0)
}

/// `max f` over every plateau value of a subsolution, every staircase corner
/// and node, and eleven points on each hull-witness segment.
pub fn barrier_on_run(sub: &Subsolution) -> SuiteRow {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0usize;
    let mut see = |s: StateU| {
        worst = worst.max(lambda_convex_f(s));
        count += 1;
    };
    for r in &sub.regions {
        see(r.value);
        if let Some(w) = r.witness {
            for k in 0..=10 {
                see(w.x.lerp(w.c, k as f64 / 10.0));
            }
        }
    }
    for node in &sub.patches {
        if let StepKind::Staircase { .. } = node.kind {
            let (plus, minus) = node.patch.endpoints();
            let parent = sub.regions[node.region].value;
            see(parent + plus);
            see(parent + minus);
        }
    }
    SuiteRow::at_most("barrier_on_run", count, worst, 1e-10)
}

/// Measurements of one building block on the ball of unit diameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockReport {
    pub frequency: u32,
    pub stats: MeasureStats,
    pub sampled_deviation: f64,
    pub pairing: f64,
}

/// Default building-block direction, a point of the wave cone.
pub fn block_direction() -> StateU {
    StateU::new(1.0, [0.0, -1.0], [0.2, 0.1])
}

/// Builds the block at frequency `n`, samples the segment deviation on a
/// `k³` lattice and pairs the field with a fixed family of five tests.
pub fn block_report(direction: StateU, lambda: f64, epsilon: f64, n: u32, k: usize, cutoff: f64) -> Result<BlockReport, crate::WaveError> {
    let domain = CoverDomain::Ball { center: [0.5; 3], radius: 0.5 };
    let (patches, stats) = building_block(&domain, direction, lambda, epsilon, n, &BlockOptions { cutoff, seed: None })?;
    let sampled_deviation = sampled_segment_deviation(&patches, [0.0; 3], [1.0; 3], k);
    Ok(BlockReport { frequency: n, stats, sampled_deviation, pairing: block_pairing(&patches) })
}

/// Largest `|∫ U·φ|` over the five components and five fixed tests.
pub fn block_pairing(patches: &[WavePatch]) -> f64 {
    let family = TestFamily::standard(Identity::Incompressibility, 1.0, 5);
    let rule = PatchRule::new(4, 4, 16);
    let mut acc = vec![0.0; 25];
    for p in patches {
        rule.visit(p, Part::Whole, |x, y, w| {
            let u = p.field_local(y).to_array();
            for (j, f) in family.members.iter().enumerate() {
                let phi = w * f.value(x);
                for c in 0..5 {
                    acc[5 * j + c] += u[c] * phi;
                }
            }
        });
    }
    acc.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_and_literal_radius_fails() {
        assert!(cone_oracle(1000, 1).pass);
        assert!(t4_validity(100, 2, RadiusConvention::Corrected).passed());
        let bad = t4_validity(100, 2, RadiusConvention::Literal);
        assert!(!bad.passed());
        assert!(barrier_on_k(1000, 3).pass);
    }
}
