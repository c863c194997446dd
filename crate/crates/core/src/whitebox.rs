//! White-box attack: overwrite rewards off the target branch with `<phi, theta_dagger>`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::attackability::AttackCertificate;
use crate::error::{Error, Result};
use crate::mdp::{occupancy, FeatureTable, LinearMdp, OccupancyMeasure, Policy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    ClipToUnit,
    Raw,
}

impl ClipMode {
    #[inline]
    pub fn apply(self, r: f64) -> f64 {
        match self {
            ClipMode::ClipToUnit => r.clamp(0.0, 1.0),
            ClipMode::Raw => r,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WhiteboxStrategy {
    certificate: AttackCertificate,
    theta_dagger: Vec<DVector<f64>>,
    target: Policy,
    support: OccupancyMeasure,
    features: FeatureTable,
    clip_mode: ClipMode,
    /// Extra amount subtracted from every perturbed reward (forced mode only).
    shortfall: f64,
}

impl WhiteboxStrategy {
    /// Fails with [`Error::NotAttackable`] unless the certificate is positive.
    pub fn new(mdp: &LinearMdp, target: &Policy, certificate: AttackCertificate, clip_mode: ClipMode) -> Result<Self> {
        if !certificate.is_attackable() {
            return Err(Error::NotAttackable {
                verdict: certificate.verdict.to_string(),
                epsilon_star: certificate.epsilon_star,
            });
        }
        Self::build(mdp, target, certificate, clip_mode, 0.0)
    }

    /// Attacks regardless of the verdict.
    ///
    /// Uses the certificate's optimiser (the parameters that come closest to a
    /// positive margin) and lowers every perturbed reward by the missing margin
    /// `max(0, margin - eps_star)`. On a robust instance this can never make the
    /// target strictly preferred, so the cost keeps accruing.
    pub fn forced(mdp: &LinearMdp, target: &Policy, certificate: AttackCertificate, margin: f64, clip_mode: ClipMode) -> Result<Self> {
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Error::Config(format!("forced margin must be finite and non-negative, got {margin}")));
        }
        let shortfall = (margin - certificate.epsilon_star).max(0.0);
        Self::build(mdp, target, certificate, clip_mode, shortfall)
    }

    fn build(mdp: &LinearMdp, target: &Policy, certificate: AttackCertificate, clip_mode: ClipMode, shortfall: f64) -> Result<Self> {
        if !target.is_deterministic() {
            return Err(Error::Policy("the target policy must be deterministic".into()));
        }
        let support = occupancy(mdp, target)?;
        let theta_dagger = certificate.theta_dagger_vectors();
        if theta_dagger.len() != mdp.horizon() || theta_dagger.iter().any(|t| t.len() != mdp.dim()) {
            return Err(Error::Shape("certificate parameters do not match the model".into()));
        }
        Ok(WhiteboxStrategy {
            certificate,
            theta_dagger,
            target: target.clone(),
            support,
            features: mdp.features(),
            clip_mode,
            shortfall,
        })
    }

    pub fn certificate(&self) -> &AttackCertificate {
        &self.certificate
    }

    pub fn target(&self) -> &Policy {
        &self.target
    }

    pub fn support(&self) -> &OccupancyMeasure {
        &self.support
    }

    pub fn shortfall(&self) -> f64 {
        self.shortfall
    }

    /// Returns `(fed reward, |clean - fed|)`.
    pub fn perturb(&self, h: usize, s: usize, a: usize, clean_r: f64) -> (f64, f64) {
        if self.support.is_support(h, s) && self.target.action(h, s) == Some(a) {
            return (clean_r, 0.0);
        }
        let raw = self.features.get(h, s, a).dot(&self.theta_dagger[h]) - self.shortfall;
        let fed = self.clip_mode.apply(raw);
        (fed, (clean_r - fed).abs())
    }
}

/// Running attack cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub episode_costs: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Episodes with at least one deviation from the target on its support.
    pub n_dev: usize,
}

impl CostLedger {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Appends one episode.
    pub fn update(&mut self, step_costs: &[f64], deviated: bool) {
        debug_assert!(step_costs.iter().all(|&c| c >= 0.0));
        let cost: f64 = step_costs.iter().sum();
        let total = self.total() + cost;
        self.episode_costs.push(cost);
        self.cumulative.push(total);
        if deviated {
            self.n_dev += 1;
        }
    }
}
