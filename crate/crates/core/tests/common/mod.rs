//! Oracles shared by several integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Tables = (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<Vec<f64>>>>, Vec<f64>);

/// Random 2-state 2-action H=2 tables with full-support transitions.
pub fn tiny_tables(seed: u64) -> (Tables, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |rng: &mut ChaCha8Rng| {
        let p: f64 = rng.random_range(0.05..0.95);
        vec![p, 1.0 - p]
    };
    let rewards = (0..2).map(|_| (0..2).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect()).collect();
    let trans = (0..2).map(|_| (0..2).map(|_| (0..2).map(|_| dist(&mut rng)).collect()).collect()).collect();
    let rho = dist(&mut rng);
    let target = (0..2).map(|_| (0..2).map(|_| rng.random_range(0..2)).collect()).collect();
    ((rewards, trans, rho), target)
}

/// Brute-force margin for the one-hot 2x2xH=2 case.
///
/// Both states are on the support at both stages, so the target entries of the
/// reward table are pinned and target values downstream are clean. The only
/// free entries are the two non-target rewards per stage, which share the
/// stage's ball. Grid over the first one; the second is best pushed to the
/// bottom of the ball.
pub fn grid_oracle(tables: &Tables, target: &[Vec<usize>], resolution: f64) -> f64 {
    let (rewards, trans, _) = tables;
    let d = 4.0f64;
    // clean target values
    let mut v_next = [0.0; 2];
    let mut stage_margins = [0.0; 2];
    for h in (0..2).rev() {
        let vn = v_next;
        let cont = |s: usize, a: usize| trans[h][s][a][0] * vn[0] + trans[h][s][a][1] * vn[1];
        let mut k = [0.0; 2];
        let mut used = 0.0;
        for s in 0..2 {
            let t = target[h][s];
            let a = 1 - t;
            k[s] = rewards[h][s][t] + cont(s, t) - cont(s, a);
            used += rewards[h][s][t] * rewards[h][s][t];
        }
        let r2 = d - used;
        let r = r2.sqrt();
        let steps = (2.0 * r / resolution).ceil() as usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..=steps {
            let x0 = (-r + i as f64 * resolution).min(r);
            let x1 = -(r2 - x0 * x0).max(0.0).sqrt();
            best = best.max((k[0] - x0).min(k[1] - x1));
        }
        stage_margins[h] = best;
        for s in 0..2 {
            let t = target[h][s];
            v_next[s] = rewards[h][s][t] + cont(s, t);
        }
    }
    stage_margins[0].min(stage_margins[1])
}

