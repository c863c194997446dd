//! Two-stage black-box attack.
//!
//! Stage 1 steers the learner with a surrogate reward built from the features
//! alone, learning only the one-step continuation term, and freezes the reward
//! once a lower-confidence margin clears a threshold. Stage 2 estimates the
//! clean target Q-function from compliant episodes, designs a penalty that is
//! invisible on the target branch, and repays the reward discrepancy that
//! Stage 1 left on target actions.
//!
//! The attacker only ever sees the feature table, the target policy and the
//! observed steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Attacker, StepRecord};
use crate::mdp::{FeatureTable, Policy};
use crate::qp::{self, Constraint, Program, SolveStatus, SolverSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlackboxConfig {
    /// Stage-1 length; defaults to `ceil(200 sqrt(T))` capped at `T / 4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t1: Option<usize>,
    pub s_budget: f64,
    /// Certification threshold; defaults to `1 / (2 s_budget)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta1: Option<f64>,
    pub lambda_ridge: f64,
    pub delta: f64,
    /// `[h]` -> certified states; defaults to every state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_support: Option<Vec<Vec<usize>>>,
    pub alpha_scale: f64,
    pub comp_cap: f64,
}

impl Default for BlackboxConfig {
    fn default() -> Self {
        BlackboxConfig {
            t1: None,
            s_budget: 1.0,
            eta1: None,
            lambda_ridge: 1.0,
            delta: 0.01,
            certified_support: None,
            alpha_scale: 0.5,
            comp_cap: 1.0,
        }
    }
}

impl BlackboxConfig {
    pub fn stage1_length(&self, episodes: usize) -> usize {
        self.t1.unwrap_or_else(|| {
            let t = (200.0 * (episodes as f64).sqrt()).ceil() as usize;
            t.min(episodes / 4).max(1)
        })
    }

    pub fn eta1(&self) -> f64 {
        self.eta1.unwrap_or(1.0 / (2.0 * self.s_budget))
    }

    fn check(&self, features: &FeatureTable) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.s_budget > 0.0 && self.s_budget.is_finite()) {
            return bad(format!("s_budget must be positive, got {}", self.s_budget));
        }
        if !(self.eta1() > 0.0) {
            return bad(format!("eta1 must be positive, got {}", self.eta1()));
        }
        if !(self.lambda_ridge > 0.0) {
            return bad(format!("lambda_ridge must be positive, got {}", self.lambda_ridge));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0,1), got {}", self.delta));
        }
        if !(self.alpha_scale >= 0.0 && self.comp_cap >= 0.0) {
            return bad("alpha_scale and comp_cap must be non-negative".into());
        }
        if self.t1 == Some(0) {
            return bad("t1 must be at least 1".into());
        }
        if let Some(c) = &self.certified_support {
            if c.len() != features.horizon() {
                return bad(format!("certified_support has {} stages, expected {}", c.len(), features.horizon()));
            }
            if c.iter().flatten().any(|&s| s >= features.num_states()) {
                return bad("certified_support names a state out of range".into());
            }
        }
        Ok(())
    }

    /// Per-stage membership table for the certified support.
    pub fn certified(&self, features: &FeatureTable) -> Vec<Vec<bool>> {
        let (hn, sn) = (features.horizon(), features.num_states());
        match &self.certified_support {
            None => vec![vec![true; sn]; hn],
            Some(sets) => sets
                .iter()
                .map(|set| {
                    let mut row = vec![false; sn];
                    for &s in set {
                        row[s] = true;
                    }
                    row
                })
                .collect(),
        }
    }
}

fn target_feature<'a>(features: &'a FeatureTable, target: &Policy, h: usize, s: usize) -> &'a DVector<f64> {
    features.get(h, s, target.action(h, s).expect("deterministic target"))
}

fn ridge_width(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, phi: &DVector<f64>) -> f64 {
    phi.dot(&chol.solve(phi)).max(0.0).sqrt()
}

fn factor(gram: &DMatrix<f64>, lambda: f64) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let d = gram.nrows();
    (gram + DMatrix::identity(d, d) * lambda).cholesky().expect("ridge matrix is positive definite")
}

/// Stage-1 state: surrogate directions, continuation regression, freezing.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1State {
    /// `q_{0,h} = s_budget * w_{0,h}`
    pub q0: Vec<DVector<f64>>,
    pub eps0_star: f64,
    pub eps_per_stage: Vec<f64>,
    pub status: SolveStatus,
    gram: Vec<DMatrix<f64>>,
    moment: Vec<DVector<f64>>,
    /// Continuation estimate `b_hat_{0,h}` after the last update.
    pub b_hat: Vec<DVector<f64>>,
    /// Last lower-confidence margin.
    pub margin: f64,
    pub frozen: bool,
    pub theta0_hat: Option<Vec<DVector<f64>>>,
    /// First episode fed with the frozen reward.
    pub tau_fix: Option<usize>,
}

impl Stage1State {
    pub fn is_attackable(&self) -> bool {
        self.status == SolveStatus::Optimal && self.eps0_star > 0.0
    }

    /// Surrogate target value `v_{0,h}(s) = <phi_dagger(s), q_{0,h}>`.
    pub fn surrogate_value(&self, features: &FeatureTable, target: &Policy, h: usize, s: usize) -> f64 {
        target_feature(features, target, h, s).dot(&self.q0[h])
    }

    /// Provisional reward before freezing, frozen linear form after, clipped to `[0,1]`.
    pub fn fed_reward(&self, features: &FeatureTable, h: usize, s: usize, a: usize) -> f64 {
        let phi = features.get(h, s, a);
        let raw = match &self.theta0_hat {
            Some(theta) => phi.dot(&theta[h]),
            None => phi.dot(&self.q0[h]) - phi.dot(&self.b_hat[h]),
        };
        raw.clamp(0.0, 1.0)
    }

    /// Ridge update after episode `t`, then the certification check.
    pub fn update(&mut self, features: &FeatureTable, target: &Policy, config: &BlackboxConfig, t: usize, steps: &[StepRecord]) {
        let hn = features.horizon();
        for st in steps {
            if st.h + 1 >= hn {
                continue;
            }
            let phi = features.get(st.h, st.s, st.a);
            self.gram[st.h].ger(1.0, phi, phi, 1.0);
            let v = self.surrogate_value(features, target, st.h + 1, st.next);
            self.moment[st.h].axpy(v, phi, 1.0);
        }
        if self.frozen {
            return;
        }
        let d = features.dim();
        let beta0 = config.alpha_scale * (d as f64 * ((1.0 + t as f64) / config.delta).ln()).sqrt();
        let certified = config.certified(features);
        let mut widths = vec![0.0; hn];
        for h in 0..hn.saturating_sub(1) {
            let chol = factor(&self.gram[h], config.lambda_ridge);
            self.b_hat[h] = chol.solve(&self.moment[h]);
            let mut sup = 0.0f64;
            for s in (0..features.num_states()).filter(|&s| certified[h][s]) {
                for a in 0..features.num_actions() {
                    sup = sup.max(beta0 * ridge_width(&chol, features.get(h, s, a)));
                }
            }
            widths[h] = sup;
        }
        // the last stage has no continuation, so its term is exact
        let scaled = config.s_budget * self.eps0_star;
        self.margin = (0..hn).map(|h| scaled - 2.0 * widths[h..].iter().sum::<f64>()).fold(f64::INFINITY, f64::min);
        if self.margin >= config.eta1() {
            self.frozen = true;
            self.theta0_hat = Some(self.q0.iter().zip(&self.b_hat).map(|(q, b)| q - b).collect());
            self.tau_fix = Some(t + 1);
        }
    }
}

/// Per stage: `max eps` s.t. `<phi_dagger(s) - phi(s,a), w> >= eps` on certified
/// states and `||w|| <= 1 / (2 s_budget)`.
pub fn stage1_solve(features: &FeatureTable, target: &Policy, config: &BlackboxConfig) -> Result<Stage1State> {
    config.check(features)?;
    target.check(features.horizon(), features.num_states(), features.num_actions())?;
    let (hn, sn, an, d) = (features.horizon(), features.num_states(), features.num_actions(), features.dim());
    let certified = config.certified(features);
    let radius = 1.0 / (2.0 * config.s_budget);
    let mut q0 = Vec::with_capacity(hn);
    let mut eps = Vec::with_capacity(hn);
    let mut status = SolveStatus::Optimal;
    for h in 0..hn {
        let mut c = DVector::zeros(d + 1);
        c[0] = -1.0;
        let mut program = Program::minimize(c);
        for s in (0..sn).filter(|&s| certified[h][s]) {
            let t = target.action(h, s).expect("deterministic target");
            let phi_t = features.get(h, s, t);
            for a in (0..an).filter(|&a| a != t) {
                // eps - <phi_t - phi_a, w> <= 0
                let mut row = DVector::zeros(d + 1);
                row[0] = 1.0;
                row.rows_mut(1, d).copy_from(&(features.get(h, s, a) - phi_t));
                program.le(row, 0.0);
            }
        }
        if program.inequalities.is_empty() {
            // nothing to separate at this stage
            q0.push(DVector::zeros(d));
            continue;
        }
        program.push(Constraint::ball(d + 1, 1, &DVector::zeros(d), radius));
        let sol = qp::solve(&program, &SolverSettings::default());
        if sol.status != SolveStatus::Optimal {
            status = sol.status;
        }
        eps.push(sol.x[0]);
        q0.push(sol.x.rows(1, d).into_owned() * config.s_budget);
    }
    if eps.is_empty() {
        return Err(Error::Domain("no competing actions on the certified support".into()));
    }
    let mut eps_per_stage = vec![f64::INFINITY; hn];
    let mut k = 0;
    for h in 0..hn {
        let has_rows = (0..sn).any(|s| certified[h][s]) && an > 1;
        if has_rows {
            eps_per_stage[h] = eps[k];
            k += 1;
        }
    }
    let eps0_star = eps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Stage1State {
        q0,
        eps0_star,
        eps_per_stage,
        status,
        gram: vec![DMatrix::zeros(d, d); hn],
        moment: vec![DVector::zeros(d); hn],
        b_hat: vec![DVector::zeros(d); hn],
        margin: f64::NEG_INFINITY,
        frozen: false,
        theta0_hat: None,
        tau_fix: None,
    })
}

/// Stage-2 estimates and design.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Design {
    /// Number of compliant episodes used for the fit.
    pub clean_episodes: usize,
    pub w_hat: Vec<DVector<f64>>,
    pub alpha: f64,
    /// Unregularized Gram matrices of the target features used in the fit.
    pub gram: Vec<DMatrix<f64>>,
    /// `g[h][s][a]`, zero on target actions and outside the certified support.
    pub gap_bound: Vec<Vec<Vec<f64>>>,
    pub eps2_star: f64,
    pub status: SolveStatus,
    pub u: Vec<DVector<f64>>,
    /// Target debts `D_h`.
    pub debts: Vec<f64>,
    /// Debt repaid so far per stage; never exceeds `|D_h|`.
    paid: Vec<f64>,
    certified: Vec<Vec<bool>>,
    comp_cap: f64,
    /// Total compensation handed out so far (including clipped mass).
    pub compensation_mass: f64,
}

impl Stage2Design {
    /// `Q_hat_h(s, a) = <phi(s,a), w_hat_h>`
    pub fn q_hat(&self, features: &FeatureTable, h: usize, s: usize, a: usize) -> f64 {
        features.get(h, s, a).dot(&self.w_hat[h])
    }

    pub fn is_attackable(&self) -> bool {
        self.status == SolveStatus::Optimal && self.eps2_star > 0.0
    }

    /// `clip(clean - <phi, u_h>)` off target, otherwise the clean reward.
    pub fn reference_reward(&self, features: &FeatureTable, target: &Policy, h: usize, s: usize, a: usize, clean: f64) -> f64 {
        if !self.certified[h][s] || target.action(h, s) == Some(a) {
            return clean;
        }
        (clean - features.get(h, s, a).dot(&self.u[h])).clamp(0.0, 1.0)
    }

    /// Next compensation for a target visit at stage `h`, consuming the schedule.
    pub fn next_compensation(&mut self, h: usize) -> f64 {
        let total = self.debts[h].abs();
        let left = total - self.paid[h];
        if left <= 0.0 || self.comp_cap <= 0.0 {
            return 0.0;
        }
        // the last piece lands exactly on the debt, so the mass bound holds in floating point
        let c = if left <= self.comp_cap {
            self.paid[h] = total;
            left
        } else {
            self.paid[h] += self.comp_cap;
            self.comp_cap
        };
        self.compensation_mass = self.paid.iter().sum();
        -self.debts[h].signum() * c
    }

    /// Fed reward and cost of one Stage-2 step.
    pub fn perturb(&mut self, features: &FeatureTable, target: &Policy, h: usize, s: usize, a: usize, clean: f64) -> (f64, f64) {
        let fed = if self.certified[h][s] && target.action(h, s) == Some(a) {
            let c = self.next_compensation(h);
            (clean + c).clamp(0.0, 1.0)
        } else {
            self.reference_reward(features, target, h, s, a, clean)
        };
        (fed, (fed - clean).abs())
    }
}

/// Greedy cap fill: magnitudes `min(cap, remaining)` until `|debt|` is used up.
pub fn compensation_schedule(debt: f64, cap: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut left = debt.abs();
    if cap <= 0.0 {
        return out;
    }
    while left > 0.0 {
        let c = left.min(cap);
        out.push(-debt.signum() * c);
        left -= c;
    }
    out
}

/// Monte-Carlo regression of the clean target Q-function on compliant
/// episodes and the conservative gap bound.
///
/// `episodes` are the Stage-1 episodes from `tau_fix` on; only fully compliant
/// ones (target action at every certified step) are used.
pub fn stage2_fit(features: &FeatureTable, target: &Policy, config: &BlackboxConfig, episodes: &[Vec<StepRecord>]) -> Result<Stage2Design> {
    let (hn, sn, an, d) = (features.horizon(), features.num_states(), features.num_actions(), features.dim());
    let certified = config.certified(features);
    let compliant: Vec<&Vec<StepRecord>> = episodes
        .iter()
        .filter(|ep| ep.iter().all(|st| !certified[st.h][st.s] || target.action(st.h, st.s) == Some(st.a)))
        .collect();
    if compliant.is_empty() {
        return Err(Error::InsufficientData("no compliant episode after freezing".into()));
    }
    let mut gram = vec![DMatrix::zeros(d, d); hn];
    let mut moment = vec![DVector::zeros(d); hn];
    for ep in &compliant {
        let mut ret = 0.0;
        for st in ep.iter().rev() {
            ret += st.clean;
            let phi = features.get(st.h, st.s, st.a);
            gram[st.h].ger(1.0, phi, phi, 1.0);
            moment[st.h].axpy(ret, phi, 1.0);
        }
    }
    let n = compliant.len();
    let alpha = config.alpha_scale * hn as f64 * (d as f64 * ((1.0 + n as f64) / config.delta).ln()).sqrt();
    let mut w_hat = Vec::with_capacity(hn);
    let mut gap_bound = vec![vec![vec![0.0; an]; sn]; hn];
    for h in 0..hn {
        let chol = factor(&gram[h], config.lambda_ridge);
        let w = chol.solve(&moment[h]);
        for s in (0..sn).filter(|&s| certified[h][s]) {
            let t = target.action(h, s).expect("deterministic target");
            let phi_t = features.get(h, s, t);
            let q_t = phi_t.dot(&w);
            let width_t = ridge_width(&chol, phi_t);
            for a in (0..an).filter(|&a| a != t) {
                let phi = features.get(h, s, a);
                gap_bound[h][s][a] = (phi.dot(&w) - q_t).max(0.0) + alpha * (ridge_width(&chol, phi) + width_t);
            }
        }
        w_hat.push(w);
    }
    Ok(Stage2Design {
        clean_episodes: n,
        w_hat,
        alpha,
        gram,
        gap_bound,
        eps2_star: f64::NEG_INFINITY,
        status: SolveStatus::NumericalFailure,
        u: vec![DVector::zeros(d); hn],
        debts: vec![0.0; hn],
        paid: vec![0.0; hn],
        certified,
        comp_cap: config.comp_cap,
        compensation_mass: 0.0,
    })
}

/// Penalty design: per stage `max eps` s.t. `<phi(s,a), u> >= g(s,a) + eps`,
/// `<phi_dagger(s), u> = 0` on certified states and `||u|| <= sqrt(d)`. Also
/// installs the debts to repay.
pub fn stage2_design(mut design: Stage2Design, features: &FeatureTable, target: &Policy, debts: &[f64]) -> Result<Stage2Design> {
    let (hn, sn, an, d) = (features.horizon(), features.num_states(), features.num_actions(), features.dim());
    if debts.len() != hn {
        return Err(Error::Shape(format!("expected {hn} debts, got {}", debts.len())));
    }
    let mut eps2 = f64::INFINITY;
    let mut status = SolveStatus::Optimal;
    for h in 0..hn {
        let mut c = DVector::zeros(d + 1);
        c[0] = -1.0;
        let mut program = Program::minimize(c);
        for s in (0..sn).filter(|&s| design.certified[h][s]) {
            let t = target.action(h, s).expect("deterministic target");
            let mut eq = DVector::zeros(d + 1);
            eq.rows_mut(1, d).copy_from(features.get(h, s, t));
            program.eq(eq, 0.0);
            for a in (0..an).filter(|&a| a != t) {
                // eps + g - <phi, u> <= 0
                let mut row = DVector::zeros(d + 1);
                row[0] = 1.0;
                row.rows_mut(1, d).copy_from(&(-features.get(h, s, a)));
                program.le(row, -design.gap_bound[h][s][a]);
            }
        }
        if program.inequalities.is_empty() {
            continue;
        }
        program.push(Constraint::ball(d + 1, 1, &DVector::zeros(d), (d as f64).sqrt()));
        let sol = qp::solve(&program, &SolverSettings::default());
        if sol.status != SolveStatus::Optimal {
            status = sol.status;
        }
        eps2 = eps2.min(sol.x[0]);
        design.u[h] = sol.x.rows(1, d).into_owned();
    }
    if !eps2.is_finite() {
        return Err(Error::Domain("no competing actions on the certified support".into()));
    }
    design.eps2_star = eps2;
    design.status = status;
    design.debts = debts.to_vec();
    design.paid = vec![0.0; hn];
    design.compensation_mass = 0.0;
    Ok(design)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlackboxStatus {
    /// Still in Stage 1.
    Steering,
    /// Stage 2 penalty in force.
    Penalizing,
    /// Relaxed Stage-1 program has no positive margin.
    Stage1NotAttackable,
    /// The margin never cleared the threshold within Stage 1.
    NotCertified,
    /// No compliant episode to fit Stage 2 on.
    InsufficientData,
    /// Penalty program has no positive margin.
    Stage2NotAttackable,
    SolverFailure,
}

/// What the black-box attacker reports at the end of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxSummary {
    pub status: BlackboxStatus,
    pub t1: usize,
    pub eps0_star: f64,
    pub tau_fix: Option<usize>,
    pub final_margin: f64,
    pub clean_episodes: usize,
    pub eps2_star: Option<f64>,
    pub debts: Vec<f64>,
    pub compensation_mass: f64,
    pub min_fed: f64,
    pub max_fed: f64,
}

/// The full attacker as driven by the harness.
#[derive(Debug, Clone)]
pub struct BlackboxAttacker {
    features: FeatureTable,
    target: Policy,
    config: BlackboxConfig,
    certified: Vec<Vec<bool>>,
    t1: usize,
    stage1: Stage1State,
    stage2: Option<Stage2Design>,
    status: BlackboxStatus,
    debts: Vec<f64>,
    suffix: Vec<Vec<StepRecord>>,
    min_fed: f64,
    max_fed: f64,
}

impl BlackboxAttacker {
    pub fn new(features: FeatureTable, target: Policy, config: BlackboxConfig, episodes: usize) -> Result<Self> {
        let stage1 = stage1_solve(&features, &target, &config)?;
        let status = match stage1.status {
            SolveStatus::Optimal if stage1.eps0_star > 0.0 => BlackboxStatus::Steering,
            SolveStatus::Optimal => BlackboxStatus::Stage1NotAttackable,
            _ => BlackboxStatus::SolverFailure,
        };
        let hn = features.horizon();
        Ok(BlackboxAttacker {
            certified: config.certified(&features),
            t1: config.stage1_length(episodes),
            stage1,
            stage2: None,
            status,
            debts: vec![0.0; hn],
            suffix: Vec::new(),
            min_fed: f64::INFINITY,
            max_fed: f64::NEG_INFINITY,
            features,
            target,
            config,
        })
    }

    pub fn stage1(&self) -> &Stage1State {
        &self.stage1
    }

    pub fn stage2(&self) -> Option<&Stage2Design> {
        self.stage2.as_ref()
    }

    pub fn status(&self) -> BlackboxStatus {
        self.status
    }

    pub fn summary(&self) -> BlackboxSummary {
        BlackboxSummary {
            status: self.status,
            t1: self.t1,
            eps0_star: self.stage1.eps0_star,
            tau_fix: self.stage1.tau_fix,
            final_margin: self.stage1.margin,
            clean_episodes: self.stage2.as_ref().map_or(0, |d| d.clean_episodes),
            eps2_star: self.stage2.as_ref().map(|d| d.eps2_star),
            debts: self.debts.clone(),
            compensation_mass: self.stage2.as_ref().map_or(0.0, |d| d.compensation_mass),
            min_fed: self.min_fed,
            max_fed: self.max_fed,
        }
    }

    fn finish_stage1(&mut self) {
        if !self.stage1.frozen {
            self.status = BlackboxStatus::NotCertified;
            return;
        }
        let design = match stage2_fit(&self.features, &self.target, &self.config, &self.suffix) {
            Ok(d) => d,
            Err(_) => {
                self.status = BlackboxStatus::InsufficientData;
                return;
            }
        };
        self.suffix = Vec::new();
        match stage2_design(design, &self.features, &self.target, &self.debts) {
            Ok(d) if d.status != SolveStatus::Optimal => {
                self.status = BlackboxStatus::SolverFailure;
                self.stage2 = Some(d);
            }
            Ok(d) => {
                self.status = if d.eps2_star > 0.0 { BlackboxStatus::Penalizing } else { BlackboxStatus::Stage2NotAttackable };
                self.stage2 = Some(d);
            }
            Err(_) => self.status = BlackboxStatus::SolverFailure,
        }
    }
}

impl Attacker for BlackboxAttacker {
    fn perturb(&mut self, episode: usize, h: usize, s: usize, a: usize, clean: f64) -> f64 {
        let fed = match self.status {
            BlackboxStatus::Steering if episode <= self.t1 => {
                let fed = self.stage1.fed_reward(&self.features, h, s, a);
                if self.certified[h][s] && self.target.action(h, s) == Some(a) {
                    self.debts[h] += fed - clean;
                }
                fed
            }
            BlackboxStatus::Penalizing => {
                let design = self.stage2.as_mut().expect("stage 2 designed");
                design.perturb(&self.features, &self.target, h, s, a, clean).0
            }
            _ => clean,
        };
        self.min_fed = self.min_fed.min(fed);
        self.max_fed = self.max_fed.max(fed);
        fed
    }

    fn end_episode(&mut self, episode: usize, steps: &[StepRecord]) {
        if self.status != BlackboxStatus::Steering || episode > self.t1 {
            return;
        }
        if self.stage1.frozen {
            self.suffix.push(steps.to_vec());
        }
        self.stage1.update(&self.features, &self.target, &self.config, episode, steps);
        if episode == self.t1 {
            self.finish_stage1();
        }
    }

    fn blackbox_summary(&self) -> Option<BlackboxSummary> {
        Some(self.summary())
    }
}
