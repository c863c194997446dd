//! The victim learner: LSVI-UCB with a time-growing ridge regularizer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, FeatureTable};

/// What an attacker needs from a learner.
///
/// Per episode the harness calls `plan`, then `act` and `observe` once per
/// stage, then `end_episode`.
pub trait Learner {
    fn plan(&mut self, initial_state: usize, episode: usize) -> Result<()>;
    /// Deterministic given the learner state; ties go to the lowest index.
    fn act(&mut self, h: usize, s: usize) -> usize;
    fn observe(&mut self, h: usize, s: usize, a: usize, fed_reward: f64, next_state: usize);
    fn end_episode(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsviConfig {
    pub delta: f64,
    /// Multiplier on the `d * H` part of the confidence width.
    pub c0: f64,
}

impl Default for LsviConfig {
    fn default() -> Self {
        LsviConfig { delta: 0.01, c0: 1.0 }
    }
}

/// LSVI-UCB over a known feature map.
///
/// History is kept as sufficient statistics: per stage the Gram matrix, the
/// sum of `phi * fed_reward`, and for each next state the sum of the features
/// that led there. The regression target `max_a Q(s', a)` depends on the
/// history only through `s'`, so this is exact.
#[derive(Debug, Clone)]
pub struct LsviUcb {
    features: FeatureTable,
    config: LsviConfig,
    /// `phi` stacked per stage as `(S*A) x d`.
    design: Vec<DMatrix<f64>>,
    gram: Vec<DMatrix<f64>>,
    phi_reward: Vec<DVector<f64>>,
    /// `next_mass[h]` is `d x S`.
    next_mass: Vec<DMatrix<f64>>,
    visits: usize,
    episode: usize,
    lambda: f64,
    beta: Vec<f64>,
    w: Vec<DVector<f64>>,
    q: Vec<f64>,
}

impl LsviUcb {
    pub fn new(features: FeatureTable, config: LsviConfig) -> Result<Self> {
        if !(config.delta > 0.0 && config.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0,1), got {}", config.delta)));
        }
        if !(config.c0 >= 0.0) {
            return Err(Error::Config(format!("c0 must be non-negative, got {}", config.c0)));
        }
        let (hn, sn, an, d) = (features.horizon(), features.num_states(), features.num_actions(), features.dim());
        let design = (0..hn)
            .map(|h| DMatrix::from_fn(sn * an, d, |r, c| features.get(h, r / an, r % an)[c]))
            .collect();
        Ok(LsviUcb {
            design,
            gram: vec![DMatrix::zeros(d, d); hn],
            phi_reward: vec![DVector::zeros(d); hn],
            next_mass: vec![DMatrix::zeros(d, sn); hn],
            visits: 0,
            episode: 0,
            lambda: 0.0,
            beta: vec![0.0; hn],
            w: vec![DVector::zeros(d); hn],
            q: vec![0.0; hn * sn * an],
            features,
            config,
        })
    }

    /// `lambda_t = 4 H S sqrt(d t)`
    pub fn lambda_at(&self, t: usize) -> f64 {
        let f = &self.features;
        4.0 * f.horizon() as f64 * f.num_states() as f64 * (f.dim() as f64 * t as f64).sqrt()
    }

    /// Regularizer used in the last plan.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Per-stage confidence width used in the last plan.
    pub fn beta(&self, h: usize) -> f64 {
        self.beta[h]
    }

    pub fn weights(&self, h: usize) -> &DVector<f64> {
        &self.w[h]
    }

    /// `lambda I + sum phi phi^T` over everything observed so far, with the
    /// regularizer of the last plan.
    pub fn design_matrix(&self, h: usize) -> DMatrix<f64> {
        &self.gram[h] + DMatrix::identity(self.features.dim(), self.features.dim()) * self.lambda
    }

    /// Optimistic `Q~_h(s, a)` from the last plan.
    pub fn q_tilde(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.features.num_states() + s) * self.features.num_actions() + a]
    }

    pub fn q_row(&self, h: usize, s: usize) -> &[f64] {
        let an = self.features.num_actions();
        let i = (h * self.features.num_states() + s) * an;
        &self.q[i..i + an]
    }

    /// Number of observed transitions (summed over stages).
    pub fn visits(&self) -> usize {
        self.visits
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    /// Backward pass for episode `t` (1-based) over all history so far.
    pub fn plan_episode(&mut self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::Config("episodes are numbered from 1".into()));
        }
        let (hn, sn, an, d) =
            (self.features.horizon(), self.features.num_states(), self.features.num_actions(), self.features.dim());
        let horizon = hn as f64;
        let lambda = self.lambda_at(t);
        let base = self.config.c0 * d as f64 * horizon;
        let conf = (2.0 * (1.0 / self.config.delta).ln()).sqrt();
        let mut v_next = DVector::zeros(sn);
        for h in (0..hn).rev() {
            let lam = self.design_matrix_with(h, lambda);
            let chol = lam.cholesky().ok_or_else(|| Error::Solver(format!("design matrix at stage {h} is not positive definite")))?;
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
            let log_ratio = (log_det - d as f64 * lambda.ln()).max(0.0);
            let beta = base * (log_ratio.sqrt() + conf) + lambda.sqrt() / (2.0 * sn as f64);
            let target = &self.phi_reward[h] + &self.next_mass[h] * &v_next;
            let w = chol.solve(&target);
            let means = &self.design[h] * &w;
            let whitened = chol.l().solve_lower_triangular(&self.design[h].transpose()).expect("cholesky factor is invertible");
            let mut v = DVector::zeros(sn);
            for s in 0..sn {
                for a in 0..an {
                    let i = s * an + a;
                    let width = whitened.column(i).norm();
                    self.q[(h * sn + s) * an + a] = (means[i] + beta * width).min(horizon);
                }
                let row = &self.q[(h * sn + s) * an..(h * sn + s + 1) * an];
                v[s] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
            self.beta[h] = beta;
            self.w[h] = w;
            v_next = v;
        }
        self.lambda = lambda;
        self.episode = t;
        Ok(())
    }

    fn design_matrix_with(&self, h: usize, lambda: f64) -> DMatrix<f64> {
        let d = self.features.dim();
        &self.gram[h] + DMatrix::identity(d, d) * lambda
    }
}

impl Learner for LsviUcb {
    fn plan(&mut self, _initial_state: usize, episode: usize) -> Result<()> {
        self.plan_episode(episode)
    }

    fn act(&mut self, h: usize, s: usize) -> usize {
        argmax(self.q_row(h, s))
    }

    fn observe(&mut self, h: usize, s: usize, a: usize, fed_reward: f64, next_state: usize) {
        let phi = self.features.get(h, s, a);
        self.gram[h].ger(1.0, phi, phi, 1.0);
        self.phi_reward[h].axpy(fed_reward, phi, 1.0);
        if h + 1 < self.features.horizon() {
            let mut col = self.next_mass[h].column_mut(next_state);
            col += phi;
        }
        self.visits += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_instance, Family, GeneratorSpec};

    fn learner(seed: u64) -> LsviUcb {
        let (mdp, _) = gen_instance(&GeneratorSpec::new(3, 2, 2, 4, seed, Family::Random)).unwrap();
        LsviUcb::new(mdp.features(), LsviConfig::default()).unwrap()
    }

    #[test]
    fn first_episode_is_pure_bonus() {
        let mut l = learner(1);
        l.plan(0, 1).unwrap();
        let lam = l.lambda_at(1);
        assert_eq!(lam, 4.0 * 2.0 * 3.0 * 2.0);
        let beta = 4.0 * 2.0 * (2.0 * 100f64.ln()).sqrt() + lam.sqrt() / 6.0;
        for h in 0..2 {
            assert!((l.beta(h) - beta).abs() <= 1e-12);
            assert!(l.weights(h).iter().all(|&x| x == 0.0));
            for s in 0..3 {
                for a in 0..2 {
                    let expect = (beta * l.features().get(h, s, a).norm() / lam.sqrt()).min(2.0);
                    assert!((l.q_tilde(h, s, a) - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.3, 0.3]), 0);
        assert_eq!(argmax(&[0.1, 0.9]), 1);
    }

    #[test]
    fn rejects_bad_config() {
        let (mdp, _) = gen_instance(&GeneratorSpec::new(2, 2, 1, 2, 0, Family::Random)).unwrap();
        assert!(LsviUcb::new(mdp.features(), LsviConfig { delta: 0.0, c0: 1.0 }).is_err());
        assert!(LsviUcb::new(mdp.features(), LsviConfig { delta: 0.1, c0: -1.0 }).is_err());
    }
}
