//! Attackability certificates.
//!
//! The margin program maximises `eps` over replacement reward parameters
//! `theta_dag = (theta_dag_1, .., theta_dag_H)` such that, at every state the
//! target visits, the target action beats every other action by `eps` under
//! the target policy's Q-function, while rewards on the target branch stay
//! clean (the attacker pays nothing while the learner complies). A positive
//! optimum means a sublinear-cost attack exists; a non-positive one means the
//! instance is intrinsically robust for that target.
//!
//! Q-values under the target policy are affine in the stacked parameters, see
//! [`QCoefficients`], so the program is a small QCQP handled by [`crate::qp`].

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{occupancy, q_policy, LinearMdp, OccupancyMeasure, Policy};
use crate::qp::{self, Constraint, Program, SolveStatus, SolverSettings};

/// Band around zero inside which a margin counts as the boundary case.
pub const DECISION_EPS: f64 = 1e-6;

/// Below this width a delta slab is treated as an equality.
const TIGHT_DELTA: f64 = 1e-9;

/// Largest policy product searched exhaustively by [`solve_attackability_set`].
pub const ENUMERATION_CAP: usize = 64;

/// Linear map from stacked `theta_dag` to target-policy Q-values at support states.
#[derive(Debug, Clone)]
pub struct QCoefficients {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    dim: usize,
    coeff: Vec<Option<DVector<f64>>>,
}

impl QCoefficients {
    /// Coefficient vector `c` with `Q_h(s,a) = c' theta_stacked`, if `(h,s)` is on the support.
    pub fn get(&self, h: usize, s: usize, a: usize) -> Option<&DVector<f64>> {
        self.coeff[(h * self.num_states + s) * self.num_actions + a].as_ref()
    }

    pub fn stacked_len(&self) -> usize {
        self.horizon * self.dim
    }

    pub fn q_value(&self, h: usize, s: usize, a: usize, stacked: &DVector<f64>) -> Option<f64> {
        self.get(h, s, a).map(|c| c.dot(stacked))
    }
}

/// Stacks per-stage vectors into one `H*d` vector.
pub fn stack(theta: &[DVector<f64>]) -> DVector<f64> {
    let d = theta.first().map_or(0, DVector::len);
    DVector::from_iterator(theta.len() * d, theta.iter().flat_map(|t| t.iter().copied()))
}

/// Backward recursion `c(h,s,a) = e_h (x) phi_h(s,a) + sum_{s'} P_h(s'|s,a) c(h+1, s', pi(s'))`.
pub fn build_q_coefficients(mdp: &LinearMdp, target: &Policy, occ: &OccupancyMeasure) -> Result<QCoefficients> {
    target.check_for(mdp)?;
    if !target.is_deterministic() {
        return Err(Error::Policy("target policy must be deterministic".into()));
    }
    let (hn, sn, an, d) = (mdp.horizon(), mdp.num_states(), mdp.num_actions(), mdp.dim());
    let n = hn * d;
    let mut coeff = vec![None; hn * sn * an];
    // target-branch coefficients at every state of stage h+1
    let mut next_branch: Vec<DVector<f64>> = vec![DVector::zeros(n); sn];
    for h in (0..hn).rev() {
        let pair = |s: usize, a: usize| {
            let mut c = DVector::zeros(n);
            c.rows_mut(h * d, d).copy_from(mdp.phi(h, s, a));
            if h + 1 < hn {
                for (sp, &p) in mdp.transition(h, s, a).iter().enumerate() {
                    if p != 0.0 {
                        c.axpy(p, &next_branch[sp], 1.0);
                    }
                }
            }
            c
        };
        let mut branch = Vec::with_capacity(sn);
        for s in 0..sn {
            let t = target.action(h, s).expect("deterministic");
            if occ.is_support(h, s) {
                for a in 0..an {
                    coeff[(h * sn + s) * an + a] = Some(pair(s, a));
                }
                branch.push(coeff[(h * sn + s) * an + t].clone().expect("just set"));
            } else {
                branch.push(pair(s, t));
            }
        }
        next_branch = branch;
    }
    Ok(QCoefficients { horizon: hn, num_states: sn, num_actions: an, dim: d, coeff })
}

/// Constraint family bounding the replacement parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// `||theta_dag_h|| <= sqrt(d)`
    NormBall,
    /// `|<phi_h(s,a), theta_h - theta_dag_h>| <= delta` on every relevant pair.
    DeltaBound(f64),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::NormBall => f.write_str("norm"),
            Mode::DeltaBound(x) => write!(f, "delta:{x}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "norm" || s == "norm_ball" {
            return Ok(Mode::NormBall);
        }
        if let Some(rest) = s.strip_prefix("delta:") {
            let v: f64 = rest.parse().map_err(|_| Error::Config(format!("bad delta value `{rest}`")))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("delta must be nonnegative, got {v}")));
            }
            return Ok(Mode::DeltaBound(v));
        }
        Err(Error::Config(format!("unknown mode `{s}` (expected `norm` or `delta:<value>`)")))
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Attackable,
    Boundary,
    Robust,
    /// The solver did not return an optimal point.
    Withheld,
}

impl Verdict {
    pub fn from_margin(epsilon_star: f64) -> Self {
        if epsilon_star > DECISION_EPS {
            Verdict::Attackable
        } else if epsilon_star.abs() <= DECISION_EPS {
            Verdict::Boundary
        } else {
            Verdict::Robust
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Attackable => "attackable",
            Verdict::Boundary => "boundary",
            Verdict::Robust => "robust",
            Verdict::Withheld => "withheld",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetStrategy {
    Enumeration,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub iterations: usize,
    pub gap: f64,
}

/// Output of the margin program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCertificate {
    pub epsilon_star: f64,
    pub verdict: Verdict,
    pub status: SolveStatus,
    /// `[h][d]`
    pub theta_dagger: Vec<Vec<f64>>,
    pub mode: Mode,
    pub solver: SolverInfo,
    pub solver_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_policy: Option<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<SetStrategy>,
}

impl AttackCertificate {
    pub fn theta_dagger_vectors(&self) -> Vec<DVector<f64>> {
        self.theta_dagger.iter().map(|t| DVector::from_column_slice(t)).collect()
    }

    pub fn is_attackable(&self) -> bool {
        self.verdict == Verdict::Attackable
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Solves the margin program for a single deterministic target.
pub fn solve_attackability(mdp: &LinearMdp, target: &Policy, mode: Mode) -> Result<AttackCertificate> {
    let occ = occupancy(mdp, target)?;
    solve_margin_program(mdp, target, &occ, mode, |_, _, _| false)
}

/// Builds and solves the program; `permitted(h, s, a)` removes the margin
/// constraint against `a` (used by the target-set variant).
fn solve_margin_program(
    mdp: &LinearMdp,
    target: &Policy,
    occ: &OccupancyMeasure,
    mode: Mode,
    permitted: impl Fn(usize, usize, usize) -> bool,
) -> Result<AttackCertificate> {
    let coeffs = build_q_coefficients(mdp, target, occ)?;
    let (hn, an, d) = (mdp.horizon(), mdp.num_actions(), mdp.dim());
    let n = 1 + hn * d;
    let theta_block = |c: &DVector<f64>| c.clone().insert_row(0, 0.0);

    let mut objective = DVector::zeros(n);
    objective[0] = -1.0;
    let mut program = Program::minimize(objective);
    let mut margins = 0;
    for h in 0..hn {
        for s in occ.support(h) {
            let t = target.action(h, s).expect("deterministic");
            let ct = coeffs.get(h, s, t).expect("support");
            for a in (0..an).filter(|&a| a != t && !permitted(h, s, a)) {
                // eps + c_a' theta - c_t' theta <= 0
                let mut row = theta_block(&(coeffs.get(h, s, a).expect("support") - ct));
                row[0] = 1.0;
                program.le(row, 0.0);
                margins += 1;
            }
            let mut eq = DVector::zeros(n);
            eq.rows_mut(1 + h * d, d).copy_from(mdp.phi(h, s, t));
            program.eq(eq, mdp.reward(h, s, t));
        }
    }
    if margins == 0 {
        return Err(Error::Domain("no competing actions on the target support; the margin is unbounded".into()));
    }
    match mode {
        Mode::NormBall => {
            let radius = (d as f64).sqrt();
            for h in 0..hn {
                program.push(Constraint::ball(n, 1 + h * d, &DVector::zeros(d), radius));
            }
        }
        Mode::DeltaBound(delta) => {
            if !(delta >= 0.0) || !delta.is_finite() {
                return Err(Error::Domain(format!("delta must be finite and non-negative, got {delta}")));
            }
            for (h, s, a) in relevant_pairs(mdp, target, occ) {
                let phi = mdp.phi(h, s, a);
                let r = mdp.reward(h, s, a);
                let mut row = DVector::zeros(n);
                row.rows_mut(1 + h * d, d).copy_from(phi);
                if delta <= TIGHT_DELTA {
                    // the slab has no interior, pin the reward instead
                    program.eq(row, r);
                } else {
                    // r - delta <= <phi, theta_dag> <= r + delta
                    program.le(row.clone(), r + delta);
                    program.le(-row, delta - r);
                }
            }
        }
    }

    let settings = SolverSettings::default();
    let sol = qp::solve(&program, &settings);
    let theta_dagger = (0..hn).map(|h| sol.x.rows(1 + h * d, d).iter().copied().collect()).collect();
    let epsilon_star = sol.x[0];
    let verdict = if sol.status == SolveStatus::Optimal { Verdict::from_margin(epsilon_star) } else { Verdict::Withheld };
    Ok(AttackCertificate {
        epsilon_star,
        verdict,
        status: sol.status,
        theta_dagger,
        mode,
        solver: SolverInfo { iterations: sol.iterations, gap: sol.gap },
        solver_tolerance: settings.gap_tol,
        chosen_policy: None,
        strategy: None,
    })
}

/// Pairs whose features enter some support coefficient: every action at a
/// support state, plus the target branch at any state reachable from them.
fn relevant_pairs(mdp: &LinearMdp, target: &Policy, occ: &OccupancyMeasure) -> Vec<(usize, usize, usize)> {
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut out = Vec::new();
    let mut reach = vec![false; sn];
    for h in 0..hn {
        let mut next = vec![false; sn];
        for s in 0..sn {
            let t = target.action(h, s).expect("deterministic");
            let actions: Vec<usize> = if occ.is_support(h, s) {
                (0..an).collect()
            } else if reach[s] {
                vec![t]
            } else {
                continue;
            };
            for a in actions {
                out.push((h, s, a));
                if h + 1 < hn {
                    for (sp, &p) in mdp.transition(h, s, a).iter().enumerate() {
                        if p > occ.support_eps {
                            next[sp] = true;
                        }
                    }
                }
            }
        }
        reach = next;
    }
    out
}

/// Per-stage permissible action sets `A_dag(h, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissibleSets(pub Vec<Vec<Vec<usize>>>);

impl PermissibleSets {
    /// Same per-state sets at every stage.
    pub fn from_state_sets(horizon: usize, sets: Vec<Vec<usize>>) -> Self {
        PermissibleSets(vec![sets; horizon])
    }

    /// Singleton sets holding the policy's action.
    pub fn singleton(policy: &Policy, horizon: usize, num_states: usize) -> Self {
        PermissibleSets(
            (0..horizon)
                .map(|h| (0..num_states).map(|s| vec![policy.action(h, s).expect("deterministic")]).collect())
                .collect(),
        )
    }

    pub fn contains(&self, h: usize, s: usize, a: usize) -> bool {
        self.0[h][s].contains(&a)
    }
}

/// Target-set variant: margins only against actions outside `A_dag(s)`, with
/// the best policy in the product set chosen.
pub fn solve_attackability_set(
    mdp: &LinearMdp,
    permissible: &PermissibleSets,
    target_support_policy: &Policy,
    mode: Mode,
) -> Result<AttackCertificate> {
    target_support_policy.check_for(mdp)?;
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    if permissible.0.len() != hn || permissible.0.iter().any(|r| r.len() != sn) {
        return Err(Error::Shape("permissible sets must be indexed [h][s]".into()));
    }
    let occ = occupancy(mdp, target_support_policy)?;
    let mut support = Vec::new();
    for h in 0..hn {
        for s in occ.support(h) {
            let t = target_support_policy.action(h, s).expect("deterministic");
            let set = &permissible.0[h][s];
            if !set.contains(&t) {
                return Err(Error::Policy(format!("permissible set at ({h},{s}) lacks the target action {t}")));
            }
            if let Some(&bad) = set.iter().find(|&&a| a >= an) {
                return Err(Error::Policy(format!("permissible action {bad} at ({h},{s}) out of range")));
            }
            if h + 1 < hn {
                for &a in set {
                    let leaves = mdp
                        .transition(h, s, a)
                        .iter()
                        .enumerate()
                        .any(|(sp, &p)| p > occ.support_eps && !occ.is_support(h + 1, sp));
                    if leaves {
                        return Err(Error::SupportMismatch { stage: h, state: s, action: a });
                    }
                }
            }
            support.push((h, s));
        }
    }

    let excluded = |h: usize, s: usize, a: usize| permissible.contains(h, s, a);
    let base = match target_support_policy {
        Policy::Deterministic { actions } => actions.clone(),
        Policy::Stochastic { .. } => return Err(Error::Policy("target policy must be deterministic".into())),
    };
    let solve_for = |actions: &Vec<Vec<usize>>| -> Result<AttackCertificate> {
        let pi = Policy::deterministic(actions.clone());
        let mut cert = solve_margin_program(mdp, &pi, &occ, mode, excluded)?;
        cert.chosen_policy = Some(pi);
        Ok(cert)
    };
    let better = |a: &AttackCertificate, b: &AttackCertificate| {
        let rank = |c: &AttackCertificate| if c.status == SolveStatus::Optimal { c.epsilon_star } else { f64::NEG_INFINITY };
        rank(a) > rank(b)
    };

    let product = support
        .iter()
        .try_fold(1usize, |acc, &(h, s)| acc.checked_mul(permissible.0[h][s].len()))
        .unwrap_or(usize::MAX);

    if product <= ENUMERATION_CAP {
        let mut best: Option<AttackCertificate> = None;
        let mut choice = vec![0usize; support.len()];
        loop {
            let mut actions = base.clone();
            for (&(h, s), &k) in support.iter().zip(&choice) {
                actions[h][s] = permissible.0[h][s][k];
            }
            let cert = solve_for(&actions)?;
            if best.as_ref().is_none_or(|b| better(&cert, b)) {
                best = Some(cert);
            }
            // odometer increment over the product
            let mut i = 0;
            while i < support.len() {
                let (h, s) = support[i];
                choice[i] += 1;
                if choice[i] < permissible.0[h][s].len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == support.len() {
                break;
            }
        }
        let mut best = best.expect("product is nonempty");
        best.strategy = Some(SetStrategy::Enumeration);
        Ok(best)
    } else {
        let mut actions = base;
        let mut best = solve_for(&actions)?;
        for &(h, s) in &support {
            let current = actions[h][s];
            for &a in &permissible.0[h][s] {
                if a == current {
                    continue;
                }
                let mut trial = actions.clone();
                trial[h][s] = a;
                let cert = solve_for(&trial)?;
                if better(&cert, &best) {
                    best = cert;
                    actions = trial;
                }
            }
        }
        best.strategy = Some(SetStrategy::Greedy);
        Ok(best)
    }
}

/// Closed-form margin of the bounded tabular attack in the discounted setting:
/// `2 / (1 + gamma) * (delta - delta3)`.
pub fn remark_gap_discounted(delta: f64, delta3: f64, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if delta < 0.0 || delta3 < 0.0 {
        return Err(Error::Domain("delta and delta3 must be nonnegative".into()));
    }
    Ok(2.0 / (1.0 + gamma) * (delta - delta3))
}

/// Largest violation of the certificate's constraints, recomputed through
/// direct policy evaluation rather than the coefficient expansion.
pub fn certificate_violation(mdp: &LinearMdp, target: &Policy, cert: &AttackCertificate) -> Result<f64> {
    let occ = occupancy(mdp, target)?;
    let theta = cert.theta_dagger_vectors();
    let q = q_policy(mdp, target, Some(&theta))?;
    let (hn, an, d) = (mdp.horizon(), mdp.num_actions(), mdp.dim());
    let mut worst: f64 = 0.0;
    for h in 0..hn {
        for s in occ.support(h) {
            let t = target.action(h, s).expect("deterministic");
            for a in (0..an).filter(|&a| a != t) {
                worst = worst.max(cert.epsilon_star - (q.get(h, s, t) - q.get(h, s, a)));
            }
            worst = worst.max((mdp.phi(h, s, t).dot(&theta[h]) - mdp.reward(h, s, t)).abs());
        }
    }
    match cert.mode {
        Mode::NormBall => {
            for t in &theta {
                worst = worst.max(t.norm() - (d as f64).sqrt());
            }
        }
        Mode::DeltaBound(delta) => {
            for (h, s, a) in relevant_pairs(mdp, target, &occ) {
                worst = worst.max((mdp.phi(h, s, a).dot(&theta[h]) - mdp.reward(h, s, a)).abs() - delta);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_instance, Family, GeneratorSpec};
    use crate::mdp::make_tabular;
    use approx::assert_abs_diff_eq;

    #[test]
    fn last_stage_coefficient_is_phi_block() {
        let (mdp, pi) = gen_instance(&GeneratorSpec::new(3, 2, 3, 4, 1, Family::Random)).unwrap();
        let occ = occupancy(&mdp, &pi).unwrap();
        let c = build_q_coefficients(&mdp, &pi, &occ).unwrap();
        for s in occ.support(2) {
            for a in 0..2 {
                let v = c.get(2, s, a).unwrap();
                assert_eq!(v.rows(8, 4), mdp.phi(2, s, a).rows(0, 4));
                assert!(v.rows(0, 8).iter().all(|&x| x == 0.0));
            }
        }
        let zero = DVector::zeros(12);
        assert_eq!(c.q_value(0, 0, 0, &zero), Some(0.0));
    }

    #[test]
    fn remark_examples() {
        assert_eq!(remark_gap_discounted(0.4, 0.4, 0.3).unwrap(), 0.0);
        assert_abs_diff_eq!(remark_gap_discounted(1.0, 0.25, 0.0).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(remark_gap_discounted(0.9, 0.3, 0.5).unwrap(), 0.8, epsilon = 1e-15);
        assert!(matches!(remark_gap_discounted(0.9, 0.3, 1.0), Err(Error::Domain(_))));
        assert!(matches!(remark_gap_discounted(0.9, 0.3, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("norm".parse::<Mode>().unwrap(), Mode::NormBall);
        assert_eq!("delta:0.25".parse::<Mode>().unwrap(), Mode::DeltaBound(0.25));
        assert!("delta:-1".parse::<Mode>().is_err());
        assert!("box".parse::<Mode>().is_err());
    }

    #[test]
    fn verdict_bands() {
        assert_eq!(Verdict::from_margin(0.01), Verdict::Attackable);
        assert_eq!(Verdict::from_margin(5e-7), Verdict::Boundary);
        assert_eq!(Verdict::from_margin(-5e-7), Verdict::Boundary);
        assert_eq!(Verdict::from_margin(-0.01), Verdict::Robust);
    }

    #[test]
    fn single_action_has_no_margin() {
        let mdp = make_tabular(&[vec![vec![0.5]]], &[vec![vec![vec![1.0]]]], vec![1.0]).unwrap();
        let err = solve_attackability(&mdp, &Policy::constant(1, 1, 0), Mode::NormBall).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn certificate_json_shape() {
        let (mdp, pi) = gen_instance(&GeneratorSpec::new(3, 2, 2, 4, 3, Family::AttackableByConstruction)).unwrap();
        let cert = solve_attackability(&mdp, &pi, Mode::NormBall).unwrap();
        let v: serde_json::Value = serde_json::from_str(&cert.to_json().unwrap()).unwrap();
        for key in ["epsilon_star", "verdict", "status", "theta_dagger", "mode", "solver"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["solver"].get("iterations").is_some() && v["solver"].get("gap").is_some());
        assert_eq!(v["mode"], "norm");
        let back: AttackCertificate = serde_json::from_value(v).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn support_mismatch_detected() {
        // state 1 is unreachable under the target, but action 1 at state 0 leads there
        let rewards = vec![vec![vec![0.9, 0.1], vec![0.5, 0.5]]; 2];
        let trans = vec![vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![1.0, 0.0]]]; 2];
        let mdp = make_tabular(&rewards, &trans, vec![1.0, 0.0]).unwrap();
        let pi = Policy::constant(2, 2, 0);
        let sets = PermissibleSets::from_state_sets(2, vec![vec![0, 1], vec![0, 1]]);
        let err = solve_attackability_set(&mdp, &sets, &pi, Mode::NormBall).unwrap_err();
        assert!(matches!(err, Error::SupportMismatch { stage: 0, state: 0, action: 1 }));
    }
}
