//! Reward-poisoning attackability analysis and attack simulation for
//! finite-horizon linear MDPs.
//!
//! [`solve_attackability`] decides whether a target policy can be forced on a
//! learner at sublinear cost. [`WhiteboxStrategy`] and [`BlackboxAttacker`]
//! carry the attack out against [`LsviUcb`], and [`run_trial`] wires it all
//! into a seeded episode loop.

pub mod attackability;
pub mod blackbox;
pub mod error;
pub mod generate;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod qp;
pub mod report;
pub mod whitebox;

pub use attackability::{
    remark_gap_discounted, solve_attackability, solve_attackability_set, AttackCertificate, Mode, Verdict,
};
pub use blackbox::{BlackboxAttacker, BlackboxConfig, BlackboxStatus, BlackboxSummary};
pub use error::{Error, Result};
pub use generate::{gen_instance, Family, GeneratorSpec};
pub use harness::{
    metric_m1, metric_m2, run_batch, run_trial, AttackerConfig, M1Result, M2Result, MdpSource, ScenarioConfig,
    TargetSource, TrialReport,
};
pub use learner::{Learner, LsviConfig, LsviUcb};
pub use mdp::{occupancy, q_optimal, q_policy, FeatureTable, LinearMdp, OccupancyMeasure, Policy};
pub use report::{emit_report, regenerate_report, MetricSettings, Summary};
pub use whitebox::{ClipMode, CostLedger, WhiteboxStrategy};
