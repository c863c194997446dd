//! Scenario configuration, the seeded episode loop, metrics and reports.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attackability::{solve_attackability, AttackCertificate, Mode};
use crate::blackbox::{BlackboxAttacker, BlackboxConfig, BlackboxSummary};
use crate::error::{Error, Result};
use crate::generate::{gen_instance, GeneratorSpec};
use crate::learner::{Learner, LsviConfig, LsviUcb};
use crate::mdp::{occupancy, q_optimal, q_policy, LinearMdp, OccupancyMeasure, Policy};
use crate::whitebox::{ClipMode, CostLedger, WhiteboxStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdpSource {
    File(PathBuf),
    Generate(GeneratorSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    /// The policy returned by the generator (requires a generated model).
    #[default]
    Generated,
    /// The clean optimal policy.
    Optimal,
    File(PathBuf),
    Inline(Policy),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackerConfig {
    #[default]
    None,
    Whitebox {
        #[serde(default = "default_mode")]
        mode: Mode,
        #[serde(default)]
        clip_mode: ClipMode,
        /// Attack even when the certificate is not positive, asking for this margin.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forced_margin: Option<f64>,
    },
    Blackbox(BlackboxConfig),
}

fn default_mode() -> Mode {
    Mode::NormBall
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mdp: MdpSource,
    #[serde(default)]
    pub target: TargetSource,
    #[serde(default)]
    pub attacker: AttackerConfig,
    #[serde(default)]
    pub learner: LsviConfig,
    pub episodes: usize,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_m1_window")]
    pub m1_window: usize,
    #[serde(default = "default_m2_threshold")]
    pub m2_threshold: f64,
    #[serde(default = "default_m2_tail")]
    pub m2_tail: f64,
    /// Also record the learner's expected regret per episode.
    #[serde(default)]
    pub track_regret: bool,
    /// Keep every step in the report (memory grows with `episodes * H`).
    #[serde(default)]
    pub keep_logs: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn default_m1_window() -> usize {
    500
}

fn default_m2_threshold() -> f64 {
    0.9
}

fn default_m2_tail() -> f64 {
    0.25
}

impl ScenarioConfig {
    pub fn new(mdp: MdpSource, attacker: AttackerConfig, episodes: usize) -> Self {
        ScenarioConfig {
            mdp,
            target: TargetSource::default(),
            attacker,
            learner: LsviConfig::default(),
            episodes,
            trials: 1,
            base_seed: 0,
            m1_window: default_m1_window(),
            m2_threshold: default_m2_threshold(),
            m2_tail: default_m2_tail(),
            track_regret: false,
            keep_logs: false,
            output_dir: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ScenarioConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        // relative paths are resolved against the config file
        if let Some(dir) = path.parent() {
            if let MdpSource::File(p) = &mut cfg.mdp {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let TargetSource::File(p) = &mut cfg.target {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let Some(p) = &mut cfg.output_dir {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.m1_window < 2 || self.episodes <= self.m1_window {
            return Err(Error::Config(format!(
                "need episodes > m1_window >= 2, got episodes = {} and m1_window = {}",
                self.episodes, self.m1_window
            )));
        }
        if !(self.m2_tail > 0.0 && self.m2_tail <= 1.0) {
            return Err(Error::Config(format!("m2_tail must lie in (0,1], got {}", self.m2_tail)));
        }
        Ok(())
    }

    /// Loads the model and target and validates both.
    pub fn environment(&self) -> Result<(LinearMdp, Policy)> {
        let (mdp, generated) = match &self.mdp {
            MdpSource::File(p) => (LinearMdp::load(p)?, None),
            MdpSource::Generate(spec) => {
                let (m, t) = gen_instance(spec)?;
                (m, Some(t))
            }
        };
        mdp.validate().into_result()?;
        let target = match &self.target {
            TargetSource::Generated => {
                generated.ok_or_else(|| Error::Config("target `generated` needs a generated model".into()))?
            }
            TargetSource::Optimal => q_optimal(&mdp).1,
            TargetSource::File(p) => Policy::load(p)?,
            TargetSource::Inline(p) => p.clone(),
        };
        target.check_for(&mdp)?;
        if !target.is_deterministic() {
            return Err(Error::Policy("the target policy must be deterministic".into()));
        }
        Ok((mdp, target))
    }
}

/// One environment step as seen by the attacker and the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub h: usize,
    pub s: usize,
    pub a: usize,
    pub clean: f64,
    pub fed: f64,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub cost: f64,
    pub agreement: f64,
}

/// The attacker side of the episode loop.
pub trait Attacker {
    /// Fed reward for one step.
    fn perturb(&mut self, episode: usize, h: usize, s: usize, a: usize, clean: f64) -> f64;
    /// Called once the episode is over.
    fn end_episode(&mut self, _episode: usize, _steps: &[StepRecord]) {}
    fn blackbox_summary(&self) -> Option<BlackboxSummary> {
        None
    }
}

struct NoAttack;

impl Attacker for NoAttack {
    fn perturb(&mut self, _: usize, _: usize, _: usize, _: usize, clean: f64) -> f64 {
        clean
    }
}

impl Attacker for WhiteboxStrategy {
    fn perturb(&mut self, _episode: usize, h: usize, s: usize, a: usize, clean: f64) -> f64 {
        WhiteboxStrategy::perturb(self, h, s, a, clean).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M1Result {
    pub sublinear: bool,
    pub statistic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Result {
    pub success: bool,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub cumulative_cost: Vec<f64>,
    pub episode_cost: Vec<f64>,
    pub agreement: Vec<f64>,
    /// Cumulative expected regret against the clean optimal value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret: Option<Vec<f64>>,
    pub n_dev: usize,
    pub m1: M1Result,
    pub m2: M2Result,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<AttackCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blackbox: Option<BlackboxSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logs: Option<Vec<EpisodeLog>>,
    pub wall_clock_secs: f64,
}

/// Independent stream for trial `trial` under `base_seed`.
pub fn trial_rng(base_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial as u64);
    rng
}

/// Draws an index from a distribution whose tiny negative entries are clipped
/// to zero before renormalising.
pub fn sample_index(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Runs one seeded trial.
///
/// Random draws per episode, in order: the initial state, then for each stage
/// the reward noise (only when the noise level is positive) and the next state.
pub fn run_trial(config: &ScenarioConfig, trial: usize) -> Result<TrialReport> {
    config.check()?;
    let (mdp, target) = config.environment()?;
    run_trial_on(config, &mdp, &target, trial)
}

/// [`run_trial`] on an already loaded environment.
pub fn run_trial_on(config: &ScenarioConfig, mdp: &LinearMdp, target: &Policy, trial: usize) -> Result<TrialReport> {
    config.check()?;
    let start = Instant::now();
    let support = occupancy(mdp, target)?;
    let mut certificate = None;
    let mut attacker: Box<dyn Attacker> = match &config.attacker {
        AttackerConfig::None => Box::new(NoAttack),
        AttackerConfig::Whitebox { mode, clip_mode, forced_margin } => {
            let cert = solve_attackability(mdp, target, *mode)?;
            certificate = Some(cert.clone());
            match forced_margin {
                Some(m) => Box::new(WhiteboxStrategy::forced(mdp, target, cert, *m, *clip_mode)?),
                None => Box::new(WhiteboxStrategy::new(mdp, target, cert, *clip_mode)?),
            }
        }
        AttackerConfig::Blackbox(cfg) => Box::new(BlackboxAttacker::new(mdp.features(), target.clone(), cfg.clone(), config.episodes)?),
    };
    let mut learner = LsviUcb::new(mdp.features(), config.learner)?;
    let mut out = simulate(config, mdp, target, &support, &mut learner, attacker.as_mut(), trial)?;
    out.certificate = certificate;
    out.blackbox = attacker.blackbox_summary();
    out.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn simulate(
    config: &ScenarioConfig,
    mdp: &LinearMdp,
    target: &Policy,
    support: &OccupancyMeasure,
    learner: &mut LsviUcb,
    attacker: &mut dyn Attacker,
    trial: usize,
) -> Result<TrialReport> {
    let (hn, sn, an) = (mdp.horizon(), mdp.num_states(), mdp.num_actions());
    let mut rng = trial_rng(config.base_seed, trial);
    let noise = if mdp.noise_sigma() > 0.0 {
        Some(Normal::new(0.0, mdp.noise_sigma()).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let v_star = if config.track_regret {
        let (q, _) = q_optimal(mdp);
        Some((0..sn).map(|s| q.value(0, s)).collect::<Vec<_>>())
    } else {
        None
    };
    let mut ledger = CostLedger::default();
    let mut agreement = Vec::with_capacity(config.episodes);
    let mut regret = v_star.as_ref().map(|_| Vec::with_capacity(config.episodes));
    let mut logs = config.keep_logs.then(|| Vec::with_capacity(config.episodes));
    let mut steps = Vec::with_capacity(hn);
    let mut costs = Vec::with_capacity(hn);
    let mut running_regret = 0.0;

    for t in 1..=config.episodes {
        let s0 = sample_index(&mut rng, mdp.rho());
        learner.plan(s0, t)?;
        if let (Some(v_star), Some(series)) = (&v_star, regret.as_mut()) {
            let pi = Policy::deterministic((0..hn).map(|h| (0..sn).map(|s| learner.act(h, s)).collect()).collect());
            let q = q_policy(mdp, &pi, None)?;
            let gap: f64 = (0..sn).map(|s| mdp.rho()[s] * (v_star[s] - q.get(0, s, pi.action(0, s).expect("deterministic")))).sum();
            running_regret += gap;
            series.push(running_regret);
        }
        steps.clear();
        costs.clear();
        let (mut on_support, mut agreed) = (0usize, 0usize);
        let mut s = s0;
        for h in 0..hn {
            let a = learner.act(h, s);
            debug_assert!(a < an);
            let mut clean = mdp.reward(h, s, a);
            if let Some(n) = &noise {
                clean = (clean + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
            let next = sample_index(&mut rng, mdp.transition(h, s, a));
            let fed = attacker.perturb(t, h, s, a, clean);
            learner.observe(h, s, a, fed, next);
            if support.is_support(h, s) {
                on_support += 1;
                if target.action(h, s) == Some(a) {
                    agreed += 1;
                }
            }
            costs.push((clean - fed).abs());
            steps.push(StepRecord { h, s, a, clean, fed, next });
            s = next;
        }
        learner.end_episode();
        attacker.end_episode(t, &steps);
        let frac = if on_support == 0 { 0.0 } else { agreed as f64 / on_support as f64 };
        ledger.update(&costs, agreed < on_support);
        agreement.push(frac);
        if let Some(l) = logs.as_mut() {
            l.push(EpisodeLog { steps: steps.clone(), cost: *ledger.episode_costs.last().expect("just pushed"), agreement: frac });
        }
    }

    let m1 = metric_m1(&ledger.cumulative, config.m1_window)?;
    let m2 = metric_m2(&agreement, config.m2_threshold, config.m2_tail)?;
    Ok(TrialReport {
        trial,
        seed: config.base_seed,
        cumulative_cost: ledger.cumulative,
        episode_cost: ledger.episode_costs,
        agreement,
        regret,
        n_dev: ledger.n_dev,
        m1,
        m2,
        certificate: None,
        blackbox: None,
        logs,
        wall_clock_secs: 0.0,
    })
}

/// Runs trials `0..config.trials` in parallel, returned in trial order.
pub fn run_batch(config: &ScenarioConfig) -> Result<Vec<TrialReport>> {
    config.check()?;
    let (mdp, target) = config.environment()?;
    (0..config.trials).into_par_iter().map(|i| run_trial_on(config, &mdp, &target, i)).collect()
}

/// Sublinearity test: fit a line to `C_1..C_m` and sum how far the rest of
/// the series falls below its extrapolation.
///
/// The verdict is sublinear only if the statistic clears a relative round-off
/// band, so an exactly linear series is not sublinear.
pub fn metric_m1(costs: &[f64], m: usize) -> Result<M1Result> {
    let n = costs.len();
    if m < 2 || n <= m {
        return Err(Error::Config(format!("M1 needs a series longer than the window (len {n}, window {m})")));
    }
    let mf = m as f64;
    let mean_t = (mf + 1.0) / 2.0;
    let mean_c = costs[..m].iter().sum::<f64>() / mf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, c) in costs[..m].iter().enumerate() {
        let dt = (i + 1) as f64 - mean_t;
        sxy += dt * (c - mean_c);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    let intercept = mean_c - slope * mean_t;
    let statistic: f64 = costs[m - 1..].iter().enumerate().map(|(i, c)| slope * (m + i) as f64 + intercept - c).sum();
    let scale = costs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let band = n as f64 * 1e-9 * scale.max(f64::MIN_POSITIVE);
    Ok(M1Result { sublinear: statistic > band, statistic })
}

/// Mean of the last `tail` fraction of the agreement series against a threshold.
pub fn metric_m2(agreement: &[f64], threshold: f64, tail: f64) -> Result<M2Result> {
    if agreement.is_empty() {
        return Err(Error::Config("M2 needs a nonempty agreement series".into()));
    }
    let k = ((agreement.len() as f64 * tail).ceil() as usize).clamp(1, agreement.len());
    let statistic = agreement[agreement.len() - k..].iter().sum::<f64>() / k as f64;
    Ok(M2Result { success: statistic >= threshold, statistic })
}
