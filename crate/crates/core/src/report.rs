//! Report files: one CSV per trial, a JSON summary and two SVG line plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attackability::AttackCertificate;
use crate::blackbox::BlackboxSummary;
use crate::error::{Error, Result};
use crate::harness::{metric_m1, metric_m2, M1Result, M2Result, ScenarioConfig, TrialReport};

pub const SUMMARY_FILE: &str = "summary.json";
pub const COST_PLOT: &str = "cost.svg";
pub const AGREEMENT_PLOT: &str = "agreement.svg";
const CSV_HEADER: [&str; 4] = ["episode", "cumulative_cost", "episode_cost", "agreement"];

/// Metric settings, stored so `report` can recompute verdicts from the CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub m1_window: usize,
    pub m2_threshold: f64,
    pub m2_tail: f64,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings { m1_window: 500, m2_threshold: 0.9, m2_tail: 0.25 }
    }
}

impl From<&ScenarioConfig> for MetricSettings {
    fn from(c: &ScenarioConfig) -> Self {
        MetricSettings { m1_window: c.m1_window, m2_threshold: c.m2_threshold, m2_tail: c.m2_tail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub csv: String,
    pub episodes: usize,
    pub total_cost: f64,
    pub n_dev: usize,
    pub m1: M1Result,
    pub m2: M2Result,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blackbox: Option<BlackboxSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub settings: MetricSettings,
    pub trials: Vec<TrialSummary>,
    /// Percent of trials whose cost passed M1.
    pub m1_sublinear_pct: f64,
    /// Percent of trials that passed M2.
    pub m2_success_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<AttackCertificate>,
}

/// Series read back from a trial CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSeries {
    pub cumulative_cost: Vec<f64>,
    pub episode_cost: Vec<f64>,
    pub agreement: Vec<f64>,
}

pub fn csv_name(trial: usize) -> String {
    format!("trial_{trial:03}.csv")
}

/// Writes every report file into `dir` (created if missing) and returns the paths.
pub fn emit_report(reports: &[TrialReport], settings: MetricSettings, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Config("nothing to report".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut trials = Vec::new();
    let mut series = Vec::new();
    for r in reports {
        let name = csv_name(r.trial);
        let s = TrialSeries {
            cumulative_cost: r.cumulative_cost.clone(),
            episode_cost: r.episode_cost.clone(),
            agreement: r.agreement.clone(),
        };
        write_trial_csv(&dir.join(&name), &s)?;
        written.push(dir.join(&name));
        trials.push(TrialSummary {
            trial: r.trial,
            csv: name,
            episodes: r.agreement.len(),
            total_cost: r.cumulative_cost.last().copied().unwrap_or(0.0),
            n_dev: r.n_dev,
            m1: r.m1,
            m2: r.m2,
            blackbox: r.blackbox.clone(),
        });
        series.push(s);
    }
    let certificate = reports.iter().find_map(|r| r.certificate.clone());
    written.extend(write_summary_and_plots(dir, summarize(settings, trials, certificate), &series)?);
    Ok(written)
}

/// Rebuilds the summary and plots of `dir` from its trial CSVs.
///
/// Metric settings, the certificate and black-box details are kept from an
/// existing summary when there is one.
pub fn regenerate_report(dir: impl AsRef<Path>) -> Result<Summary> {
    let dir = dir.as_ref();
    let old: Option<Summary> = match fs::read_to_string(dir.join(SUMMARY_FILE)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let settings = old.as_ref().map(|o| o.settings).unwrap_or_default();
    let mut names: Vec<(usize, String)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let idx = name.strip_prefix("trial_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((idx, name))
        })
        .collect();
    if names.is_empty() {
        return Err(Error::Config(format!("no trial CSVs in {}", dir.display())));
    }
    names.sort();
    let mut trials = Vec::new();
    let mut series = Vec::new();
    for (trial, name) in names {
        let s = read_trial_csv(dir.join(&name))?;
        let prior = old.as_ref().and_then(|o| o.trials.iter().find(|t| t.trial == trial));
        trials.push(TrialSummary {
            trial,
            csv: name,
            episodes: s.agreement.len(),
            total_cost: s.cumulative_cost.last().copied().unwrap_or(0.0),
            n_dev: prior.map(|p| p.n_dev).unwrap_or_else(|| s.agreement.iter().filter(|&&a| a < 1.0).count()),
            m1: metric_m1(&s.cumulative_cost, settings.m1_window)?,
            m2: metric_m2(&s.agreement, settings.m2_threshold, settings.m2_tail)?,
            blackbox: prior.and_then(|p| p.blackbox.clone()),
        });
        series.push(s);
    }
    let summary = summarize(settings, trials, old.and_then(|o| o.certificate));
    write_summary_and_plots(dir, summary.clone(), &series)?;
    Ok(summary)
}

fn summarize(settings: MetricSettings, trials: Vec<TrialSummary>, certificate: Option<AttackCertificate>) -> Summary {
    let n = trials.len() as f64;
    let pct = |k: usize| 100.0 * k as f64 / n;
    Summary {
        settings,
        m1_sublinear_pct: pct(trials.iter().filter(|t| t.m1.sublinear).count()),
        m2_success_pct: pct(trials.iter().filter(|t| t.m2.success).count()),
        trials,
        certificate,
    }
}

fn write_summary_and_plots(dir: &Path, summary: Summary, series: &[TrialSeries]) -> Result<Vec<PathBuf>> {
    let paths = [dir.join(SUMMARY_FILE), dir.join(COST_PLOT), dir.join(AGREEMENT_PLOT)];
    fs::write(&paths[0], serde_json::to_string_pretty(&summary)? + "\n")?;
    let cost: Vec<&[f64]> = series.iter().map(|s| s.cumulative_cost.as_slice()).collect();
    fs::write(&paths[1], line_plot("cumulative attack cost", &cost))?;
    let agree: Vec<&[f64]> = series.iter().map(|s| s.agreement.as_slice()).collect();
    fs::write(&paths[2], line_plot("agreement with target", &agree))?;
    Ok(paths.to_vec())
}

pub fn write_trial_csv(path: impl AsRef<Path>, s: &TrialSeries) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for (i, ((c, e), a)) in s.cumulative_cost.iter().zip(&s.episode_cost).zip(&s.agreement).enumerate() {
        w.write_record(&[(i + 1).to_string(), c.to_string(), e.to_string(), a.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_csv(path: impl AsRef<Path>) -> Result<TrialSeries> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!("{}: unexpected CSV header", path.display())));
    }
    let mut out = TrialSeries::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad value in row {}", path.display(), i + 2)))
        };
        if num(0)? != (i + 1) as f64 {
            return Err(Error::Config(format!("{}: episodes out of order at row {}", path.display(), i + 2)));
        }
        out.cumulative_cost.push(num(1)?);
        out.episode_cost.push(num(2)?);
        out.agreement.push(num(3)?);
    }
    Ok(out)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MAX_POINTS: usize = 1000;

/// Episode on the x axis, one polyline per series.
fn line_plot(title: &str, series: &[&[f64]]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let n = series.iter().map(|s| s.len()).max().unwrap_or(0).max(2);
    let ymax = series.iter().flat_map(|s| s.iter()).fold(0.0f64, |m, &v| m.max(v));
    let ymax = if ymax > 0.0 { ymax } else { 1.0 };
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / ymax;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="25" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">episode (1..{n})</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{ymax:.4}</text>"#, pad - 4.0, pad + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">0</text>"#, pad - 4.0, h - pad + 4.0);
    for (k, s) in series.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let stride = s.len().div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        let mut idx: Vec<usize> = (0..s.len()).step_by(stride).collect();
        if idx.last() != Some(&(s.len() - 1)) {
            idx.push(s.len() - 1);
        }
        for i in idx {
            let _ = write!(pts, "{:.2},{:.2} ", x(i), y(s[i]));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            pts.trim_end()
        );
    }
    svg.push_str("</svg>\n");
    svg
}
