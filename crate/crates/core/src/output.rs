//! CSV tables, the gnuplot script and the run manifest.
//!
//! Floats are printed with 9 significant digits in shortest round-trip form
//! (`-0` prints as `0`). Files use LF line endings and always carry a header.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ScenarioFile;
use crate::dynamics::{AggregatePath, MeanFieldTrajectory};
use crate::error::{Error, Result};
use crate::finite::{ConvergenceRow, FiniteSimResult};
use crate::hjb::ControlPolicy;
use crate::model::{NetworkModel, ScenarioConfig};
use crate::solver::{summary_metrics, EquilibriumSolution, PolicyOutcome, SummaryMetrics};

pub const MEAN_FIELD_HEADER: [&str; 8] = ["t", "degree", "type", "m_S", "m_E", "m_L", "m_I", "alpha"];
pub const AGGREGATES_HEADER: [&str; 5] = ["t", "theta", "eta", "theta_baseline", "eta_baseline"];
pub const QOI_HEADER: [&str; 5] = ["t", "degree", "type", "qoi_mfe", "qoi_baseline"];
pub const SUMMARY_HEADER: [&str; 11] = [
    "degree",
    "type",
    "infected_mfe",
    "infected_baseline",
    "infection_reduction_pct",
    "qoi_mfe",
    "qoi_baseline",
    "qoi_ratio",
    "cost_mfe",
    "cost_baseline",
    "theta_reduction_pct",
];
pub const SWEEP_HEADER: [&str; 8] =
    ["value", "degree", "type", "theta_at_T", "qoi_at_T", "alpha_at_T", "converged", "iterations"];
pub const CONVERGENCE_HEADER: [&str; 4] = ["n", "sup_deviation", "sup_theta_gap", "theta_final"];
pub const SIMULATION_HEADER: [&str; 5] = ["t", "theta_n", "eta_n", "theta_mf", "deviation"];

/// 9 significant digits, shortest representation.
pub fn format_value(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("valid float");
    if rounded == 0.0 {
        "0".into()
    } else {
        rounded.to_string()
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_value).unwrap_or_else(|| "undefined".into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmittedFile {
    pub name: String,
    pub sha256: String,
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

/// Writes `bytes` to `dir/name` and returns its digest entry.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<EmittedFile> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(EmittedFile { name: name.into(), sha256: hex::encode(Sha256::digest(bytes)) })
}

fn class_rows<'a>(
    net: &'a NetworkModel,
    times: &'a [f64],
    mut row: impl FnMut(usize, usize) -> Vec<String> + 'a,
) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..times.len()).flat_map(move |j| {
        (0..net.len())
            .map(|c| {
                let class = &net.classes[c];
                let mut r = vec![format_value(times[j]), class.degree.to_string(), class.type_id.to_string()];
                r.extend(row(j, c));
                r
            })
            .collect::<Vec<_>>()
    })
}

pub fn mean_field_csv(traj: &MeanFieldTrajectory, policy: &ControlPolicy, net: &NetworkModel) -> Result<Vec<u8>> {
    let times: Vec<f64> = traj.grid.times().collect();
    let rows = class_rows(net, &times, |j, c| {
        let m = traj.at(j, c);
        let mut r: Vec<String> = m.iter().map(|&v| format_value(v)).collect();
        r.push(format_value(policy.alpha[c][j]));
        r
    });
    csv_bytes(&MEAN_FIELD_HEADER, rows)
}

pub fn aggregates_csv(mfe: &AggregatePath, baseline: &AggregatePath, times: &[f64]) -> Result<Vec<u8>> {
    let rows = times.iter().enumerate().map(|(j, &t)| {
        [t, mfe.theta[j], mfe.eta[j], baseline.theta[j], baseline.eta[j]].map(format_value)
    });
    csv_bytes(&AGGREGATES_HEADER, rows)
}

pub fn qoi_csv(mfe: &[Vec<f64>], baseline: &[Vec<f64>], net: &NetworkModel, times: &[f64]) -> Result<Vec<u8>> {
    let rows = class_rows(net, times, |j, c| vec![format_value(mfe[c][j]), format_value(baseline[c][j])]);
    csv_bytes(&QOI_HEADER, rows)
}

pub fn summary_csv(summary: &SummaryMetrics) -> Result<Vec<u8>> {
    let rows = summary.classes.iter().map(|c| {
        vec![
            c.degree.to_string(),
            c.type_id.to_string(),
            format_value(c.infected_mfe),
            format_value(c.infected_baseline),
            format_opt(c.infection_reduction_pct),
            format_value(c.qoi_mfe),
            format_value(c.qoi_baseline),
            format_opt(c.qoi_ratio),
            format_value(c.cost_mfe),
            format_value(c.cost_baseline),
            format_opt(summary.theta_reduction_pct),
        ]
    });
    csv_bytes(&SUMMARY_HEADER, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub degree: u32,
    pub type_id: u32,
    pub theta_at_t: f64,
    pub qoi_at_t: f64,
    pub alpha_at_t: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                format_value(r.value),
                r.degree.to_string(),
                r.type_id.to_string(),
                format_value(r.theta_at_t),
                format_value(r.qoi_at_t),
                format_value(r.alpha_at_t),
                r.converged.to_string(),
                r.iterations.to_string(),
            ]
        }),
    )
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &CONVERGENCE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                format_value(r.sup_deviation),
                format_value(r.sup_theta_gap),
                format_value(r.theta_final),
            ]
        }),
    )
}

pub fn simulation_csv(sim: &FiniteSimResult, mf: &AggregatePath, deviation: &[f64]) -> Result<Vec<u8>> {
    let rows = sim.grid.times().enumerate().map(|(j, t)| {
        [t, sim.theta[j], sim.eta[j], mf.theta[j], deviation[j]].map(format_value)
    });
    csv_bytes(&SIMULATION_HEADER, rows)
}

/// gnuplot script regenerating the acceptance, infection, link-probability
/// and QoI curves from the emitted CSVs.
pub fn plot_script(net: &NetworkModel) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,540\nset xlabel 't'\n",
    );
    let per_class = |file: &str, col: &str, title: &str, out: &str, baseline_col: Option<&str>| {
        let mut plots = Vec::new();
        for c in &net.classes {
            let filter = format!("($2=={} && $3=={} ? ${} : 1/0)", c.degree, c.type_id, col);
            plots.push(format!("'{file}' using 1:{filter} with lines title 'k={} MFE'", c.degree));
            if let Some(b) = baseline_col {
                let filter = format!("($2=={} && $3=={} ? ${} : 1/0)", c.degree, c.type_id, b);
                plots.push(format!("'{file}' using 1:{filter} with lines dashtype 2 title 'k={} baseline'", c.degree));
            }
        }
        format!("set output '{out}'\nset ylabel '{title}'\nplot {}\n", plots.join(", \\\n     "))
    };
    s += &per_class("mean_field.csv", "8", "acceptance probability", "acceptance.png", None);
    s += &per_class("mean_field.csv", "7", "infected fraction", "infected.png", None);
    s += "set output 'theta.png'\nset ylabel 'infected link probability'\n";
    s += "plot 'aggregates.csv' using 1:2 with lines title 'MFE', \\\n     'aggregates.csv' using 1:4 with lines dashtype 2 title 'baseline'\n";
    s += &per_class("qoi.csv", "4", "QoI", "qoi.png", Some("5"));
    s
}

/// Writes `mean_field.csv`, `aggregates.csv`, `qoi.csv`, `summary.csv` and
/// `plots.gp` into `out_dir`.
pub fn emit_trajectories(
    solution: &EquilibriumSolution,
    baseline: &PolicyOutcome,
    net: &NetworkModel,
    out_dir: &Path,
) -> Result<Vec<EmittedFile>> {
    let times: Vec<f64> = solution.trajectory.grid.times().collect();
    let mfe = PolicyOutcome::of_solution(solution, net);
    let summary = summary_metrics(&mfe, baseline, net);
    Ok(vec![
        write_file(out_dir, "mean_field.csv", &mean_field_csv(&solution.trajectory, &solution.policy, net)?)?,
        write_file(out_dir, "aggregates.csv", &aggregates_csv(&solution.aggregates, &baseline.aggregates, &times)?)?,
        write_file(out_dir, "qoi.csv", &qoi_csv(&mfe.qoi, &baseline.qoi, net, &times)?)?,
        write_file(out_dir, "summary.csv", &summary_csv(&summary)?)?,
        write_file(out_dir, "plots.gp", plot_script(net).as_bytes())?,
    ])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ScenarioFile,
    pub tool_version: String,
    pub seed: u64,
    pub timestamp: u64,
    pub files: Vec<EmittedFile>,
    pub defaults_applied: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrated_nu: Option<f64>,
}

impl RunManifest {
    pub fn new(config: &ScenarioConfig, files: Vec<EmittedFile>, defaults_applied: Vec<String>) -> Self {
        RunManifest {
            config: ScenarioFile::from_config(config),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            files,
            defaults_applied,
            calibrated_nu: None,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(out_dir, "manifest.json", text.as_bytes())?;
        Ok(out_dir.join("manifest.json"))
    }
}
