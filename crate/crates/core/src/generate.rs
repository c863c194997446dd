//! Seeded synthetic instance families.
//!
//! All families draw transition measures as normalised uniform positives and
//! features from the probability simplex, so every induced transition row is a
//! convex combination of distributions and therefore valid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{occupancy, q_optimal, LinearMdp, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Target is the clean optimal policy with a uniform action gap on its support.
    AttackableByConstruction,
    /// Some non-target action shares the target feature at support states.
    RobustByConstruction,
    /// Any valid instance with a uniformly random deterministic target.
    Random,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attackable" | "attackable_by_construction" => Ok(Family::AttackableByConstruction),
            "robust" | "robust_by_construction" => Ok(Family::RobustByConstruction),
            "random" => Ok(Family::Random),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub dim: usize,
    pub seed: u64,
    pub family: Family,
    /// Minimum clean action gap for the attackable family.
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_gap() -> f64 {
    0.05
}

impl GeneratorSpec {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize, dim: usize, seed: u64, family: Family) -> Self {
        GeneratorSpec { num_states, num_actions, horizon, dim, seed, family, gap: default_gap(), noise_sigma: 0.0 }
    }
}

const MAX_ATTEMPTS: usize = 2000;

/// Builds an instance and its target policy. Pure function of `spec`.
pub fn gen_instance(spec: &GeneratorSpec) -> Result<(LinearMdp, Policy)> {
    let GeneratorSpec { num_states: sn, num_actions: an, horizon: hn, dim: d, .. } = *spec;
    if sn == 0 || an == 0 || hn == 0 || d == 0 {
        return Err(Error::Generation("all sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.family {
        Family::Random => {
            let target = random_target(&mut rng, hn, sn, 0..an);
            let phi = random_phi(&mut rng, hn, sn, an, d);
            let mdp = assemble(&mut rng, phi, spec, |rng, _| DVector::from_fn(d, |_, _| rng.random::<f64>()))?;
            Ok((mdp, target))
        }
        Family::RobustByConstruction => {
            if an < 2 {
                return Err(Error::Generation("robust family needs at least two actions".into()));
            }
            // duplicate sits at action 0 and the target above it, so lowest-index
            // tie-breaking in the learner never lands on the target by accident
            let target = random_target(&mut rng, hn, sn, 1..an);
            let mut phi = random_phi(&mut rng, hn, sn, an, d);
            for h in 0..hn {
                for s in 0..sn {
                    let t = target.action(h, s).expect("deterministic");
                    phi[h][s][0] = phi[h][s][t].clone();
                }
            }
            let mdp = assemble(&mut rng, phi, spec, |rng, _| DVector::from_fn(d, |_, _| rng.random::<f64>()))?;
            Ok((mdp, target))
        }
        Family::AttackableByConstruction => {
            if d < 2 && an > 1 {
                return Err(Error::Generation("attackable family needs d >= 2".into()));
            }
            for _ in 0..MAX_ATTEMPTS {
                let target = random_target(&mut rng, hn, sn, 0..an);
                let phi = separated_phi(&mut rng, &target, hn, sn, an, d);
                let mdp = assemble(&mut rng, phi, spec, |rng, _| {
                    DVector::from_fn(d, |i, _| if i == 0 { rng.random_range(0.85..1.0) } else { rng.random_range(0.0..0.4) })
                })?;
                let (q, greedy) = q_optimal(&mdp);
                let occ = occupancy(&mdp, &greedy)?;
                let ok = (0..hn).all(|h| {
                    occ.support(h).all(|s| {
                        let t = greedy.action(h, s).expect("greedy is deterministic");
                        t == target.action(h, s).expect("deterministic")
                            && (0..an).filter(|&a| a != t).all(|a| q.get(h, s, t) - q.get(h, s, a) >= spec.gap)
                    })
                });
                if ok {
                    return Ok((mdp, greedy));
                }
            }
            Err(Error::Generation(format!("no instance with gap {} found in {MAX_ATTEMPTS} draws", spec.gap)))
        }
    }
}

fn random_target(rng: &mut ChaCha8Rng, hn: usize, sn: usize, range: std::ops::Range<usize>) -> Policy {
    Policy::deterministic((0..hn).map(|_| (0..sn).map(|_| rng.random_range(range.clone())).collect()).collect())
}

/// Uniform positives normalised to sum one.
fn simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn random_phi(rng: &mut ChaCha8Rng, hn: usize, sn: usize, an: usize, d: usize) -> Vec<Vec<Vec<DVector<f64>>>> {
    (0..hn)
        .map(|_| (0..sn).map(|_| (0..an).map(|_| DVector::from_vec(simplex(rng, d))).collect()).collect())
        .collect()
}

/// Target features lean on coordinate 0, the others avoid it entirely.
fn separated_phi(rng: &mut ChaCha8Rng, target: &Policy, hn: usize, sn: usize, an: usize, d: usize) -> Vec<Vec<Vec<DVector<f64>>>> {
    (0..hn)
        .map(|h| {
            (0..sn)
                .map(|s| {
                    (0..an)
                        .map(|a| {
                            let mut v = DVector::zeros(d);
                            if d == 1 {
                                v[0] = 1.0;
                                return v;
                            }
                            let rest = simplex(rng, d - 1);
                            if Some(a) == target.action(h, s) {
                                let spill = rng.random_range(0.0..0.3);
                                v[0] = 1.0 - spill;
                                for (i, x) in rest.iter().enumerate() {
                                    v[i + 1] = spill * x;
                                }
                            } else {
                                for (i, x) in rest.iter().enumerate() {
                                    v[i + 1] = *x;
                                }
                            }
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn assemble(
    rng: &mut ChaCha8Rng,
    phi: Vec<Vec<Vec<DVector<f64>>>>,
    spec: &GeneratorSpec,
    mut theta_for: impl FnMut(&mut ChaCha8Rng, usize) -> DVector<f64>,
) -> Result<LinearMdp> {
    let (hn, sn, d) = (spec.horizon, spec.num_states, spec.dim);
    let theta: Vec<_> = (0..hn).map(|h| theta_for(rng, h)).collect();
    let mu = (0..hn)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..d).map(|_| simplex(rng, sn)).collect();
            DMatrix::from_fn(d, sn, |i, j| rows[i][j])
        })
        .collect();
    let rho = simplex(rng, sn);
    LinearMdp::new_validated(phi, theta, mu, rho, spec.noise_sigma)
        .map_err(|e| Error::Generation(format!("generated instance failed validation: {e}")))
}
