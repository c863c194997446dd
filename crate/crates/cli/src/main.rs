use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use linpoison::attackability::PermissibleSets;
use linpoison::qp::SolveStatus;
use linpoison::report::MetricSettings;
use linpoison::{
    emit_report, gen_instance, regenerate_report, run_batch, solve_attackability, solve_attackability_set,
    AttackerConfig, Error, Family, GeneratorSpec, LinearMdp, Mode, Policy, ScenarioConfig, TrialReport,
};

/// Reward-poisoning attackability and attack simulation for linear MDPs.
#[derive(Parser)]
#[command(name = "linpoison", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the attackability program and print the certificate as JSON.
    Characterize {
        mdp: PathBuf,
        policy: PathBuf,
        /// `norm` or `delta:<value>`
        #[arg(long, default_value = "norm")]
        mode: Mode,
        /// Permissible action sets, JSON indexed `[h][s]`; the policy then only fixes the support.
        #[arg(long, value_name = "SETS_JSON")]
        set: Option<PathBuf>,
    },
    /// Run the scenario's attack and write reports.
    Attack {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the scenario without an attacker and write reports.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild summary and plots from the trial CSVs in a report directory.
    Report { dir: PathBuf },
    /// Generate a synthetic instance.
    Gen {
        #[arg(long)]
        family: Family,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the family's target policy here.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        horizon: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0.05)]
        gap: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

/// Exit 2 for bad input, 3 when the solver fails.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) => 3,
        _ => 2,
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn out(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Characterize { mdp, policy, mode, set } => {
            let mdp = LinearMdp::load(&mdp).map_err(|e| with_path(e, &mdp))?;
            mdp.validate().into_result()?;
            let policy = Policy::load(&policy).map_err(|e| with_path(e, &policy))?;
            let cert = match set {
                None => solve_attackability(&mdp, &policy, mode)?,
                Some(path) => {
                    let sets: PermissibleSets = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                    solve_attackability_set(&mdp, &sets, &policy, mode)?
                }
            };
            out(&cert.to_json()?);
            Ok(if cert.status == SolveStatus::Optimal { 0 } else { 3 })
        }
        Command::Attack { config } => {
            let cfg = ScenarioConfig::load(&config).map_err(|e| with_path(e, &config))?;
            run_scenario(cfg, &config)
        }
        Command::Simulate { config } => {
            let mut cfg = ScenarioConfig::load(&config).map_err(|e| with_path(e, &config))?;
            cfg.attacker = AttackerConfig::None;
            run_scenario(cfg, &config)
        }
        Command::Report { dir } => {
            let summary = regenerate_report(&dir)?;
            out(&serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Gen { family, seed, output, target, states, actions, horizon, dim, gap, noise } => {
            let mut spec = GeneratorSpec::new(states, actions, horizon, dim, seed, family);
            spec.gap = gap;
            spec.noise_sigma = noise;
            let (mdp, pi) = gen_instance(&spec)?;
            mdp.save(&output)?;
            if let Some(p) = target {
                pi.save(p)?;
            }
            Ok(0)
        }
    }
}

fn run_scenario(cfg: ScenarioConfig, config_path: &Path) -> Result<u8, Error> {
    let reports = run_batch(&cfg)?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| {
        let base = config_path.parent().unwrap_or(Path::new("."));
        base.join("report")
    });
    emit_report(&reports, MetricSettings::from(&cfg), &dir)?;
    for r in &reports {
        out(&trial_line(r));
    }
    out(&format!("reports written to {}", dir.display()));
    Ok(0)
}

fn trial_line(r: &TrialReport) -> String {
    format!(
        "trial {}: cost {:.4}  n_dev {}  M1 {} ({:.4e})  M2 {} ({:.3}){}",
        r.trial,
        r.cumulative_cost.last().copied().unwrap_or(0.0),
        r.n_dev,
        if r.m1.sublinear { "sublinear" } else { "not-sublinear" },
        r.m1.statistic,
        if r.m2.success { "success" } else { "failure" },
        r.m2.statistic,
        match &r.blackbox {
            Some(b) => format!("  blackbox {:?} tau_fix {:?} eps2 {:?}", b.status, b.tau_fix, b.eps2_star),
            None => String::new(),
        }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_errors_map_to_3() {
        assert_eq!(exit_code(&Error::Solver("stalled".into())), 3);
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
    }
}
