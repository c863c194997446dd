//! Finite-horizon linear MDPs.
//!
//! A [`LinearMdp`] carries a feature map `phi_h(s, a) in R^d`, per-stage reward
//! parameters `theta_h`, per-stage transition measures `mu_h` (one distribution
//! over next states per feature coordinate) and an initial distribution `rho`.
//! Rewards and transitions are linear in the features:
//!
//! ```text
//!     r_h(s, a)      = <phi_h(s, a), theta_h>
//!     P_h(s' | s, a) = sum_i phi_h(s, a)_i * mu_h[i][s']
//! ```
//!
//! Stages are zero-based throughout the crate: `h` ranges over `0..horizon`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Occupancy below this value is treated as outside the support.
pub const SUPPORT_EPS: f64 = 1e-12;

const FEATURE_NORM_TOL: f64 = 1e-12;
const DIST_TOL: f64 = 1e-9;
const RHO_TOL: f64 = 1e-12;

/// A single broken invariant, with the indices where it was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    FeatureNorm { stage: usize, state: usize, action: usize, norm: f64 },
    ThetaNorm { stage: usize, norm: f64, bound: f64 },
    MuRowSum { stage: usize, coord: usize, sum: f64 },
    MuNegative { stage: usize, coord: usize, next_state: usize, value: f64 },
    TransitionRange { stage: usize, state: usize, action: usize, next_state: usize, value: f64 },
    TransitionRowSum { stage: usize, state: usize, action: usize, sum: f64 },
    RewardRange { stage: usize, state: usize, action: usize, value: f64 },
    RhoNegative { state: usize, value: f64 },
    RhoSum { sum: f64 },
    NoiseSigma { value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeatureNorm { stage, state, action, norm } => {
                write!(f, "||phi_{stage}({state},{action})|| = {norm:.6e} > 1")
            }
            Violation::ThetaNorm { stage, norm, bound } => {
                write!(f, "||theta_{stage}|| = {norm:.6e} > {bound:.6e}")
            }
            Violation::MuRowSum { stage, coord, sum } => {
                write!(f, "mu_{stage} row {coord} sums to {sum:.12}")
            }
            Violation::MuNegative { stage, coord, next_state, value } => {
                write!(f, "mu_{stage}[{coord}][{next_state}] = {value:.6e} < 0")
            }
            Violation::TransitionRange { stage, state, action, next_state, value } => {
                write!(f, "P_{stage}({next_state}|{state},{action}) = {value:.6e} outside [0,1]")
            }
            Violation::TransitionRowSum { stage, state, action, sum } => {
                write!(f, "P_{stage}(.|{state},{action}) sums to {sum:.12}")
            }
            Violation::RewardRange { stage, state, action, value } => {
                write!(f, "r_{stage}({state},{action}) = {value:.6e} outside [0,1]")
            }
            Violation::RhoNegative { state, value } => write!(f, "rho[{state}] = {value:.6e} < 0"),
            Violation::RhoSum { sum } => write!(f, "rho sums to {sum:.15}"),
            Violation::NoiseSigma { value } => write!(f, "noise sigma {value} is negative or not finite"),
        }
    }
}

/// Result of [`LinearMdp::validate`]: empty means the model is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Invalid(self.violations))
        }
    }
}

/// A finite-horizon linear MDP.
///
/// Immutable after construction. Reward and transition tables are derived
/// once from the linear parameters and cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMdp {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    phi: Vec<DVector<f64>>,
    theta: Vec<DVector<f64>>,
    mu: Vec<DMatrix<f64>>,
    rho: Vec<f64>,
    noise_sigma: f64,
    rewards: Vec<f64>,
    transitions: Vec<f64>,
}

impl LinearMdp {
    /// Builds a model after checking shapes only. Call [`LinearMdp::validate`]
    /// (or use [`LinearMdp::new_validated`]) to check the linear-MDP invariants.
    ///
    /// `phi` is indexed `[h][s][a]`, `theta` by `[h]`, `mu` by `[h]` with each
    /// matrix of shape `d x S` (row `i` is the measure of coordinate `i`).
    pub fn new(
        phi: Vec<Vec<Vec<DVector<f64>>>>,
        theta: Vec<DVector<f64>>,
        mu: Vec<DMatrix<f64>>,
        rho: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        let horizon = phi.len();
        if horizon == 0 {
            return Err(Error::Shape("horizon must be at least 1".into()));
        }
        let num_states = phi[0].len();
        if num_states == 0 {
            return Err(Error::Shape("need at least one state".into()));
        }
        let num_actions = phi[0][0].len();
        if num_actions == 0 {
            return Err(Error::Shape("need at least one action".into()));
        }
        let dim = phi[0][0][0].len();
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        let mut flat = Vec::with_capacity(horizon * num_states * num_actions);
        for (h, stage) in phi.into_iter().enumerate() {
            if stage.len() != num_states {
                return Err(Error::Shape(format!("phi[{h}] has {} states, expected {num_states}", stage.len())));
            }
            for (s, row) in stage.into_iter().enumerate() {
                if row.len() != num_actions {
                    return Err(Error::Shape(format!(
                        "phi[{h}][{s}] has {} actions, expected {num_actions}",
                        row.len()
                    )));
                }
                for (a, v) in row.into_iter().enumerate() {
                    if v.len() != dim {
                        return Err(Error::Shape(format!("phi[{h}][{s}][{a}] has length {}, expected {dim}", v.len())));
                    }
                    flat.push(v);
                }
            }
        }
        if theta.len() != horizon {
            return Err(Error::Shape(format!("theta has {} stages, expected {horizon}", theta.len())));
        }
        if let Some((h, t)) = theta.iter().enumerate().find(|(_, t)| t.len() != dim) {
            return Err(Error::Shape(format!("theta[{h}] has length {}, expected {dim}", t.len())));
        }
        if mu.len() != horizon {
            return Err(Error::Shape(format!("mu has {} stages, expected {horizon}", mu.len())));
        }
        if let Some((h, m)) = mu.iter().enumerate().find(|(_, m)| m.shape() != (dim, num_states)) {
            return Err(Error::Shape(format!(
                "mu[{h}] has shape {:?}, expected ({dim}, {num_states})",
                m.shape()
            )));
        }
        if rho.len() != num_states {
            return Err(Error::Shape(format!("rho has length {}, expected {num_states}", rho.len())));
        }

        let mut mdp = LinearMdp {
            horizon,
            num_states,
            num_actions,
            dim,
            phi: flat,
            theta,
            mu,
            rho,
            noise_sigma,
            rewards: Vec::new(),
            transitions: Vec::new(),
        };
        mdp.tabulate();
        Ok(mdp)
    }

    /// [`LinearMdp::new`] followed by [`LinearMdp::validate`].
    pub fn new_validated(
        phi: Vec<Vec<Vec<DVector<f64>>>>,
        theta: Vec<DVector<f64>>,
        mu: Vec<DMatrix<f64>>,
        rho: Vec<f64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        let mdp = Self::new(phi, theta, mu, rho, noise_sigma)?;
        mdp.validate().into_result()?;
        Ok(mdp)
    }

    fn tabulate(&mut self) {
        let (hn, sn, an) = (self.horizon, self.num_states, self.num_actions);
        self.rewards = Vec::with_capacity(hn * sn * an);
        self.transitions = Vec::with_capacity(hn * sn * an * sn);
        for h in 0..hn {
            let mu_t = self.mu[h].transpose();
            for s in 0..sn {
                for a in 0..an {
                    let f = &self.phi[self.index(h, s, a)];
                    self.rewards.push(f.dot(&self.theta[h]));
                    self.transitions.extend((&mu_t * f).iter());
                }
            }
        }
    }

    #[inline]
    fn index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn theta(&self) -> &[DVector<f64>] {
        &self.theta
    }

    pub fn mu(&self) -> &[DMatrix<f64>] {
        &self.mu
    }

    #[inline]
    pub fn phi(&self, h: usize, s: usize, a: usize) -> &DVector<f64> {
        &self.phi[self.index(h, s, a)]
    }

    /// Clean mean reward `<phi_h(s,a), theta_h>`.
    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[self.index(h, s, a)]
    }

    /// Induced next-state distribution `P_h(. | s, a)` (unclipped).
    #[inline]
    pub fn transition(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let i = self.index(h, s, a) * self.num_states;
        &self.transitions[i..i + self.num_states]
    }

    /// The feature map alone, which is all a learner or black-box attacker may see.
    pub fn features(&self) -> FeatureTable {
        FeatureTable {
            horizon: self.horizon,
            num_states: self.num_states,
            num_actions: self.num_actions,
            dim: self.dim,
            phi: self.phi.clone(),
        }
    }

    /// Returns a copy whose reward parameters are replaced.
    pub fn with_theta(&self, theta: Vec<DVector<f64>>) -> Result<Self> {
        if theta.len() != self.horizon || theta.iter().any(|t| t.len() != self.dim) {
            return Err(Error::Shape("replacement theta has wrong shape".into()));
        }
        let mut out = self.clone();
        out.theta = theta;
        out.tabulate();
        Ok(out)
    }

    /// Checks every linear-MDP invariant and lists all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let (hn, sn, an) = (self.horizon, self.num_states, self.num_actions);
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            v.push(Violation::NoiseSigma { value: self.noise_sigma });
        }
        for h in 0..hn {
            let norm = self.theta[h].norm();
            let bound = (self.dim as f64).sqrt();
            if norm > bound + FEATURE_NORM_TOL {
                v.push(Violation::ThetaNorm { stage: h, norm, bound });
            }
            for (i, row) in self.mu[h].row_iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > DIST_TOL {
                    v.push(Violation::MuRowSum { stage: h, coord: i, sum });
                }
                for (sp, &x) in row.iter().enumerate() {
                    if x < -FEATURE_NORM_TOL {
                        v.push(Violation::MuNegative { stage: h, coord: i, next_state: sp, value: x });
                    }
                }
            }
            for s in 0..sn {
                for a in 0..an {
                    let norm = self.phi(h, s, a).norm();
                    if norm > 1.0 + FEATURE_NORM_TOL {
                        v.push(Violation::FeatureNorm { stage: h, state: s, action: a, norm });
                    }
                    let r = self.reward(h, s, a);
                    if !(-DIST_TOL..=1.0 + DIST_TOL).contains(&r) {
                        v.push(Violation::RewardRange { stage: h, state: s, action: a, value: r });
                    }
                    let row = self.transition(h, s, a);
                    for (sp, &p) in row.iter().enumerate() {
                        if !(-DIST_TOL..=1.0 + DIST_TOL).contains(&p) {
                            v.push(Violation::TransitionRange { stage: h, state: s, action: a, next_state: sp, value: p });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > DIST_TOL {
                        v.push(Violation::TransitionRowSum { stage: h, state: s, action: a, sum });
                    }
                }
            }
        }
        for (s, &p) in self.rho.iter().enumerate() {
            if p < 0.0 {
                v.push(Violation::RhoNegative { state: s, value: p });
            }
        }
        let sum: f64 = self.rho.iter().sum();
        if (sum - 1.0).abs() > RHO_TOL {
            v.push(Violation::RhoSum { sum });
        }
        ValidationReport { violations: v }
    }

    pub fn to_file(&self) -> MdpFile {
        let (hn, sn, an) = (self.horizon, self.num_states, self.num_actions);
        MdpFile {
            horizon: hn,
            states: sn,
            actions: an,
            d: self.dim,
            phi: (0..hn)
                .map(|h| {
                    (0..sn)
                        .map(|s| (0..an).map(|a| self.phi(h, s, a).iter().copied().collect()).collect())
                        .collect()
                })
                .collect(),
            theta: self.theta.iter().map(|t| t.iter().copied().collect()).collect(),
            mu: self
                .mu
                .iter()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
            rho: self.rho.clone(),
            noise_sigma: self.noise_sigma,
        }
    }

    /// Loads and validates a model from its JSON file format.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MdpFile = serde_json::from_str(&text)?;
        file.into_mdp()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Read-only feature map `phi_h(s, a)` without rewards or transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    phi: Vec<DVector<f64>>,
}

impl FeatureTable {
    /// `phi` is indexed `[(h * S + s) * A + a]`.
    pub fn new(horizon: usize, num_states: usize, num_actions: usize, phi: Vec<DVector<f64>>) -> Result<Self> {
        if horizon * num_states * num_actions == 0 || phi.len() != horizon * num_states * num_actions {
            return Err(Error::Shape(format!("expected {} feature vectors, got {}", horizon * num_states * num_actions, phi.len())));
        }
        let dim = phi[0].len();
        if dim == 0 || phi.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("features must share a nonzero dimension".into()));
        }
        Ok(FeatureTable { horizon, num_states, num_actions, dim, phi })
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> &DVector<f64> {
        &self.phi[(h * self.num_states + s) * self.num_actions + a]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// On-disk JSON layout of a [`LinearMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    pub d: usize,
    /// `[h][s][a][d]`
    pub phi: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[h][d]`
    pub theta: Vec<Vec<f64>>,
    /// `[h][d][S]`
    pub mu: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl MdpFile {
    /// Converts to a model, checking declared sizes and running validation.
    pub fn into_mdp(self) -> Result<LinearMdp> {
        let MdpFile { horizon, states, actions, d, phi, theta, mu, rho, noise_sigma } = self;
        if phi.len() != horizon
            || phi.iter().any(|st| st.len() != states || st.iter().any(|r| r.len() != actions))
        {
            return Err(Error::Shape("phi does not match declared H, S, A".into()));
        }
        if phi.iter().flatten().flatten().any(|v| v.len() != d) {
            return Err(Error::Shape("phi vectors do not match declared d".into()));
        }
        if mu.iter().any(|m| m.len() != d || m.iter().any(|r| r.len() != states)) {
            return Err(Error::Shape("mu does not match declared d, S".into()));
        }
        let phi = phi
            .into_iter()
            .map(|st| st.into_iter().map(|r| r.into_iter().map(DVector::from_vec).collect()).collect())
            .collect();
        let theta = theta.into_iter().map(DVector::from_vec).collect();
        let mu = mu
            .into_iter()
            .map(|m| {
                let rows = m.len();
                DMatrix::from_row_iterator(rows, states, m.into_iter().flatten())
            })
            .collect();
        LinearMdp::new_validated(phi, theta, mu, rho, noise_sigma)
    }
}

/// A stage-indexed policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// `actions[h][s]`
    Deterministic { actions: Vec<Vec<usize>> },
    /// `probs[h][s][a]`
    Stochastic { probs: Vec<Vec<Vec<f64>>> },
}

impl Policy {
    pub fn deterministic(actions: Vec<Vec<usize>>) -> Self {
        Policy::Deterministic { actions }
    }

    /// Same action at every stage and state.
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Policy::Deterministic { actions: vec![vec![action; num_states]; horizon] }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Policy::Deterministic { .. })
    }

    /// Action of a deterministic policy; `None` for stochastic ones.
    #[inline]
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        match self {
            Policy::Deterministic { actions } => Some(actions[h][s]),
            Policy::Stochastic { .. } => None,
        }
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic { actions } => f64::from(u8::from(actions[h][s] == a)),
            Policy::Stochastic { probs } => probs[h][s][a],
        }
    }

    /// Checks the policy is defined on every `(h, s)` of the model.
    pub fn check(&self, horizon: usize, num_states: usize, num_actions: usize) -> Result<()> {
        match self {
            Policy::Deterministic { actions } => {
                if actions.len() != horizon || actions.iter().any(|r| r.len() != num_states) {
                    return Err(Error::Policy(format!("expected {horizon} stages of {num_states} states")));
                }
                for (h, row) in actions.iter().enumerate() {
                    for (s, &a) in row.iter().enumerate() {
                        if a >= num_actions {
                            return Err(Error::Policy(format!("action {a} at ({h},{s}) out of range")));
                        }
                    }
                }
            }
            Policy::Stochastic { probs } => {
                if probs.len() != horizon
                    || probs.iter().any(|r| r.len() != num_states || r.iter().any(|p| p.len() != num_actions))
                {
                    return Err(Error::Policy(format!(
                        "expected {horizon} x {num_states} x {num_actions} probabilities"
                    )));
                }
                for (h, row) in probs.iter().enumerate() {
                    for (s, p) in row.iter().enumerate() {
                        let sum: f64 = p.iter().sum();
                        if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&x| x < 0.0) {
                            return Err(Error::Policy(format!("row ({h},{s}) is not a distribution")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_for(&self, mdp: &LinearMdp) -> Result<()> {
        self.check(mdp.horizon(), mdp.num_states(), mdp.num_actions())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// State-visit probabilities `d_h(s)` of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    /// `d_occ[h][s]`
    pub d_occ: Vec<Vec<f64>>,
    pub support_eps: f64,
}

impl OccupancyMeasure {
    #[inline]
    pub fn is_support(&self, h: usize, s: usize) -> bool {
        self.d_occ[h][s] > self.support_eps
    }

    /// Support states at stage `h`.
    pub fn support(&self, h: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.d_occ[h].len()).filter(move |&s| self.is_support(h, s))
    }
}

/// Q-values over `[h][s][a]`, optionally with a per-stage linear fit.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    /// Least-squares weights `w_h` with `q ~= phi^T w_h`.
    pub w: Option<Vec<DVector<f64>>>,
    /// Per-stage max absolute residual of the fit in `w`.
    pub fit_residual: Option<Vec<f64>>,
}

impl QFunction {
    fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        QFunction { horizon, num_states, num_actions, q: vec![0.0; horizon * num_states * num_actions], w: None, fit_residual: None }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.q[(h * self.num_states + s) * self.num_actions + a]
    }

    #[inline]
    fn set(&mut self, h: usize, s: usize, a: usize, v: f64) {
        self.q[(h * self.num_states + s) * self.num_actions + a] = v;
    }

    pub fn row(&self, h: usize, s: usize) -> &[f64] {
        let i = (h * self.num_states + s) * self.num_actions;
        &self.q[i..i + self.num_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// `max_a Q_h(s, a)`
    pub fn value(&self, h: usize, s: usize) -> f64 {
        self.row(h, s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy deterministic policy with lowest-index tie-breaking.
    pub fn greedy(&self) -> Policy {
        let actions = (0..self.horizon)
            .map(|h| (0..self.num_states).map(|s| argmax(self.row(h, s))).collect())
            .collect();
        Policy::Deterministic { actions }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }
}

/// Index of the largest entry, ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Forward occupancy recursion `d_{h+1}(s') = sum_{s,a} d_h(s) pi_h(a|s) P_h(s'|s,a)`.
pub fn occupancy(mdp: &LinearMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    pi.check_for(mdp)?;
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut d_occ = Vec::with_capacity(hn);
    d_occ.push(mdp.rho().to_vec());
    for h in 0..hn - 1 {
        let cur = &d_occ[h];
        let mut next = vec![0.0; sn];
        for s in 0..sn {
            if cur[s] == 0.0 {
                continue;
            }
            for a in 0..an {
                let w = cur[s] * pi.prob(h, s, a);
                if w == 0.0 {
                    continue;
                }
                for (n, p) in next.iter_mut().zip(mdp.transition(h, s, a)) {
                    *n += w * p;
                }
            }
        }
        d_occ.push(next);
    }
    Ok(OccupancyMeasure { d_occ, support_eps: SUPPORT_EPS })
}

/// Optimal Q-function by backward induction, its greedy policy, and a
/// per-stage least-squares fit of the values onto the features.
pub fn q_optimal(mdp: &LinearMdp) -> (QFunction, Policy) {
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut q = QFunction::zeros(hn, sn, an);
    let mut next_v = vec![0.0; sn];
    for h in (0..hn).rev() {
        let mut v = vec![0.0; sn];
        for s in 0..sn {
            for a in 0..an {
                let cont: f64 = mdp.transition(h, s, a).iter().zip(&next_v).map(|(p, v)| p * v).sum();
                q.set(h, s, a, mdp.reward(h, s, a) + cont);
            }
            v[s] = q.value(h, s);
        }
        next_v = v;
    }
    fit_weights(mdp, &mut q);
    let pi = q.greedy();
    (q, pi)
}

/// Q-function of `pi`, optionally under replacement reward parameters.
pub fn q_policy(mdp: &LinearMdp, pi: &Policy, theta_override: Option<&[DVector<f64>]>) -> Result<QFunction> {
    pi.check_for(mdp)?;
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    if let Some(th) = theta_override {
        if th.len() != hn || th.iter().any(|t| t.len() != mdp.dim()) {
            return Err(Error::Shape("theta override has wrong shape".into()));
        }
    }
    let mut q = QFunction::zeros(hn, sn, an);
    let mut next_v = vec![0.0; sn];
    for h in (0..hn).rev() {
        let mut v = vec![0.0; sn];
        for s in 0..sn {
            for a in 0..an {
                let r = match theta_override {
                    Some(th) => mdp.phi(h, s, a).dot(&th[h]),
                    None => mdp.reward(h, s, a),
                };
                let cont: f64 = mdp.transition(h, s, a).iter().zip(&next_v).map(|(p, v)| p * v).sum();
                q.set(h, s, a, r + cont);
            }
            v[s] = (0..an).map(|a| pi.prob(h, s, a) * q.get(h, s, a)).sum();
        }
        next_v = v;
    }
    Ok(q)
}

fn fit_weights(mdp: &LinearMdp, q: &mut QFunction) {
    let (hn, sn, an, d) = (mdp.horizon(), mdp.num_states(), mdp.num_actions(), mdp.dim());
    let mut ws = Vec::with_capacity(hn);
    let mut res = Vec::with_capacity(hn);
    for h in 0..hn {
        let design = DMatrix::from_fn(sn * an, d, |r, c| mdp.phi(h, r / an, r % an)[c]);
        let target = DVector::from_fn(sn * an, |r, _| q.get(h, r / an, r % an));
        let svd = design.clone().svd(true, true);
        let w = svd.solve(&target, 1e-12).unwrap_or_else(|_| DVector::zeros(d));
        let resid = (&design * &w - &target).amax();
        ws.push(w);
        res.push(resid);
    }
    q.w = Some(ws);
    q.fit_residual = Some(res);
}

/// One-hot embedding of a tabular MDP.
///
/// `rewards[h][s][a]` in `[0,1]`, `transitions[h][s][a][s']` rows must be
/// distributions. The embedding uses `d = S * A` with
/// `phi_h(s,a) = e_{s*A + a}`.
pub fn make_tabular(rewards: &[Vec<Vec<f64>>], transitions: &[Vec<Vec<Vec<f64>>>], rho: Vec<f64>) -> Result<LinearMdp> {
    let hn = rewards.len();
    if hn == 0 || transitions.len() != hn {
        return Err(Error::Shape("rewards and transitions must share a nonzero horizon".into()));
    }
    let sn = rewards[0].len();
    let an = rewards[0].first().map_or(0, Vec::len);
    if sn == 0 || an == 0 {
        return Err(Error::Shape("empty state or action set".into()));
    }
    let d = sn * an;
    for h in 0..hn {
        if rewards[h].len() != sn || transitions[h].len() != sn {
            return Err(Error::Shape(format!("stage {h} has the wrong number of states")));
        }
        for s in 0..sn {
            if rewards[h][s].len() != an || transitions[h][s].len() != an {
                return Err(Error::Shape(format!("({h},{s}) has the wrong number of actions")));
            }
            for a in 0..an {
                let row = &transitions[h][s][a];
                if row.len() != sn {
                    return Err(Error::Shape(format!("transition row ({h},{s},{a}) has length {}", row.len())));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > DIST_TOL || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::Invalid(vec![Violation::TransitionRowSum { stage: h, state: s, action: a, sum }]));
                }
                let r = rewards[h][s][a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Invalid(vec![Violation::RewardRange { stage: h, state: s, action: a, value: r }]));
                }
            }
        }
    }
    let phi = (0..hn)
        .map(|_| {
            (0..sn)
                .map(|s| (0..an).map(|a| DVector::from_fn(d, |i, _| f64::from(u8::from(i == s * an + a)))).collect())
                .collect()
        })
        .collect();
    let theta = (0..hn).map(|h| DVector::from_fn(d, |i, _| rewards[h][i / an][i % an])).collect();
    let mu = (0..hn).map(|h| DMatrix::from_fn(d, sn, |i, sp| transitions[h][i / an][i % an][sp])).collect();
    // entries <= 1 with d = S*A keep ||theta_h|| <= sqrt(d)
    LinearMdp::new_validated(phi, theta, mu, rho, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> LinearMdp {
        // two states, one action, deterministic 0 -> 1 -> 1
        let rewards = vec![vec![vec![0.2], vec![0.7]]; 2];
        let trans = vec![vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]]; 2];
        make_tabular(&rewards, &trans, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn tabular_single_pair() {
        let mdp = make_tabular(&[vec![vec![0.5]]], &[vec![vec![vec![1.0]]]], vec![1.0]).unwrap();
        assert_eq!(mdp.dim(), 1);
        assert_eq!(mdp.phi(0, 0, 0).as_slice(), &[1.0]);
        assert_eq!(mdp.theta()[0].as_slice(), &[0.5]);
        assert!(mdp.validate().is_valid());
    }

    #[test]
    fn tabular_chain_reproduces_table() {
        let mdp = chain();
        assert_eq!(mdp.transition(0, 0, 0), &[0.0, 1.0]);
        assert_eq!(mdp.transition(1, 1, 0), &[0.0, 1.0]);
        assert_eq!(mdp.reward(1, 1, 0), 0.7);
    }

    #[test]
    fn non_stochastic_row_rejected() {
        let err = make_tabular(&[vec![vec![0.5]]], &[vec![vec![vec![0.9]]]], vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::Invalid(ref v) if matches!(v[0], Violation::TransitionRowSum { stage: 0, state: 0, action: 0, .. })));
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let phi = vec![vec![vec![DVector::from_vec(vec![1.0])]]];
        let err = LinearMdp::new(phi, vec![DVector::from_vec(vec![0.5, 0.1])], vec![DMatrix::from_element(1, 1, 1.0)], vec![1.0], 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn theta_norm_violation_listed() {
        let mdp = chain();
        let d = mdp.dim() as f64;
        let theta: Vec<_> = mdp.theta().iter().map(|t| t * (2.0 * d.sqrt() / t.norm())).collect();
        let bad = LinearMdp::new(
            (0..2).map(|h| (0..2).map(|s| vec![mdp.phi(h, s, 0).clone()]).collect()).collect(),
            theta,
            mdp.mu().to_vec(),
            mdp.rho().to_vec(),
            0.0,
        )
        .unwrap();
        let report = bad.validate();
        assert!(report.violations.iter().any(|v| matches!(v, Violation::ThetaNorm { .. })));
    }

    #[test]
    fn horizon_one_occupancy_is_rho() {
        let mdp = make_tabular(&[vec![vec![0.5], vec![0.1]]], &[vec![vec![vec![0.5, 0.5]], vec![vec![1.0, 0.0]]]], vec![0.3, 0.7]).unwrap();
        let occ = occupancy(&mdp, &Policy::constant(1, 2, 0)).unwrap();
        assert_eq!(occ.d_occ, vec![vec![0.3, 0.7]]);
        let (q, _) = q_optimal(&mdp);
        assert_eq!(q.get(0, 0, 0), 0.5);
        assert_eq!(q.get(0, 1, 0), 0.1);
    }

    #[test]
    fn self_loop_occupancy_is_one() {
        let h = 6;
        let mdp = make_tabular(&vec![vec![vec![0.3, 0.6]]; h], &vec![vec![vec![vec![1.0]; 2]]; h], vec![1.0]).unwrap();
        let occ = occupancy(&mdp, &Policy::constant(h, 1, 1)).unwrap();
        assert!(occ.d_occ.iter().all(|d| d == &vec![1.0]));
    }

    #[test]
    fn zero_reward_q_is_zero_and_picks_action_zero() {
        let h = 3;
        let mdp = make_tabular(&vec![vec![vec![0.0; 3]; 2]; h], &vec![vec![vec![vec![0.5, 0.5]; 3]; 2]; h], vec![0.5, 0.5]).unwrap();
        let (q, pi) = q_optimal(&mdp);
        assert!(q.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(pi, Policy::constant(h, 2, 0));
    }

    #[test]
    fn override_identity_and_zero() {
        let mdp = chain();
        let pi = Policy::constant(2, 2, 0);
        let clean = q_policy(&mdp, &pi, None).unwrap();
        let same = q_policy(&mdp, &pi, Some(mdp.theta())).unwrap();
        assert_eq!(clean, same);
        let zeros = vec![DVector::zeros(mdp.dim()); 2];
        let z = q_policy(&mdp, &pi, Some(&zeros)).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.3, 0.3, 0.3]), 0);
        assert_eq!(argmax(&[0.1, 0.9]), 1);
    }

    #[test]
    fn json_round_trip() {
        let mdp = chain();
        let text = serde_json::to_string(&mdp.to_file()).unwrap();
        let back: MdpFile = serde_json::from_str(&text).unwrap();
        let loaded = back.into_mdp().unwrap();
        assert_eq!(loaded.to_file(), mdp.to_file());
    }
}
