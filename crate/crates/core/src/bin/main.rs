use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use misinfo_mfg::config::{load_config, LoadedConfig};
use misinfo_mfg::dynamics::integrate_forward;
use misinfo_mfg::experiments::{calibrate_nu, run_sweep, SweepParam};
use misinfo_mfg::finite::{mean_field_deviation, simulate};
use misinfo_mfg::hjb::ControlPolicy;
use misinfo_mfg::output::{
    emit_trajectories, format_value, mean_field_csv, simulation_csv, sweep_csv, write_file, RunManifest,
};
use misinfo_mfg::reproduce::{reproduce, verdict_table, ReproduceOptions, REPLICAS};
use misinfo_mfg::solver::{baseline_evaluation, solve_mfe, summary_metrics, EquilibriumSolution, PolicyOutcome};
use misinfo_mfg::{Error, Result};

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_CRITERIA: u8 = 4;

#[derive(Parser)]
#[command(name = "misinfo-mfg", version, about = "Mean-field equilibrium of misinformation acceptance on a multiclass network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium and write trajectories, QoI and summary CSVs.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the always-accept baseline.
    Baseline {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a finite population playing the equilibrium policy.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 20)]
        replicas: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-solve the equilibrium for several values of one class parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Degree of the class to modify.
        #[arg(long = "class")]
        degree: u32,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full reference experiment and print the verdict table.
    Reproduce {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = REPLICAS)]
        replicas: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Fit the shared curing rate to baseline infected fractions at T.
    Calibrate {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<f64>,
    },
}

fn out_dir(loaded: &LoadedConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| loaded.config.output_dir.clone())
}

/// Solution plus whether it converged; a non-converged best iterate is kept.
fn solve_or_best(loaded: &LoadedConfig) -> Result<(EquilibriumSolution, bool)> {
    match solve_mfe(&loaded.config) {
        Ok(s) => Ok((s, true)),
        Err(Error::NotConverged(nc)) => {
            eprintln!(
                "warning: not converged after {} iterations, using best iterate (residual {:e})",
                nc.iterations_used, nc.final_residual
            );
            Ok((nc.best, false))
        }
        Err(e) => Err(e),
    }
}

fn status(converged: bool) -> u8 {
    if converged {
        0
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn write_manifest(loaded: &LoadedConfig, files: Vec<misinfo_mfg::output::EmittedFile>, dir: &Path) -> Result<()> {
    let mut cfg = loaded.config.clone();
    cfg.output_dir = dir.to_path_buf();
    RunManifest::new(&cfg, files, loaded.defaults_applied.clone()).write(dir)?;
    Ok(())
}

fn cmd_solve(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let loaded = load_config(config)?;
    let dir = out_dir(&loaded, out);
    let net = &loaded.config.network;
    let (sol, converged) = solve_or_best(&loaded)?;
    let baseline = baseline_evaluation(&loaded.config)?;
    let files = emit_trajectories(&sol, &baseline, net, &dir)?;
    write_manifest(&loaded, files, &dir)?;

    let summary = summary_metrics(&PolicyOutcome::of_solution(&sol, net), &baseline, net);
    println!(
        "iterations {}  residual {:e}  last step {:e}  damping {}",
        sol.iterations_used, sol.final_residual, sol.final_step, sol.damping
    );
    println!("degree  type  infected_T  baseline_T  reduction%  qoi_T  baseline_qoi_T");
    for c in &summary.classes {
        println!(
            "{:>6}  {:>4}  {:>10.5}  {:>10.5}  {:>10}  {:>6.3}  {:>14.3}",
            c.degree,
            c.type_id,
            c.infected_mfe,
            c.infected_baseline,
            c.infection_reduction_pct.map(|r| format!("{r:.2}")).unwrap_or_else(|| "undefined".into()),
            c.qoi_mfe,
            c.qoi_baseline
        );
    }
    println!("theta(T) {:.5} vs baseline {:.5}", summary.theta_mfe, summary.theta_baseline);
    println!("wrote {}", dir.display());
    Ok(status(converged))
}

fn cmd_baseline(config: &Path, out: Option<PathBuf>) -> Result<u8> {
    let loaded = load_config(config)?;
    let dir = out_dir(&loaded, out);
    let cfg = &loaded.config;
    let outcome = baseline_evaluation(cfg)?;
    let policy = ControlPolicy::constant(cfg.grid, cfg.network.len(), 1.0);
    let files = vec![write_file(&dir, "baseline.csv", &mean_field_csv(&outcome.trajectory, &policy, &cfg.network)?)?];
    write_manifest(&loaded, files, &dir)?;
    println!("degree  type  infected_T  qoi_0  qoi_T  cost");
    for (c, class) in cfg.network.classes.iter().enumerate() {
        println!(
            "{:>6}  {:>4}  {:>10.5}  {:>5.2}  {:>6.3}  {:.4}",
            class.degree,
            class.type_id,
            outcome.infected_at_end(c),
            outcome.qoi[c][0],
            outcome.qoi_at_end(c),
            outcome.cumulative_cost[c]
        );
    }
    println!("theta(T) {:.5}", outcome.aggregates.last_theta());
    Ok(0)
}

fn cmd_simulate(config: &Path, n: u32, replicas: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<u8> {
    let loaded = load_config(config)?;
    let dir = out_dir(&loaded, out);
    let cfg = &loaded.config;
    let seed = seed.unwrap_or(cfg.seed);
    let (sol, converged) = solve_or_best(&loaded)?;
    let sim = simulate(cfg, &sol.policy, n, replicas, seed)?;
    let (mf, agg) = integrate_forward(&sol.policy, &cfg.network, &cfg.grid)?;
    let dev = mean_field_deviation(&sim, &mf)?;
    let files = vec![write_file(&dir, "simulation.csv", &simulation_csv(&sim, &agg, &dev)?)?];
    let mut run_cfg = cfg.clone();
    run_cfg.seed = seed;
    RunManifest::new(&run_cfg, files, loaded.defaults_applied.clone()).write(&dir)?;
    let gap = sim.theta.iter().zip(&agg.theta).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    println!("N {n} ({:?} per class), {replicas} replicas, seed {seed}", sim.totals);
    println!("sup_t V_N {}", format_value(dev.iter().copied().fold(0.0, f64::max)));
    println!("sup_t |theta_N - theta| {}  (theta(T) {})", format_value(gap), format_value(agg.last_theta()));
    Ok(status(converged))
}

fn cmd_sweep(config: &Path, param: SweepParam, degree: u32, values: &[f64], out: Option<PathBuf>) -> Result<u8> {
    let loaded = load_config(config)?;
    let dir = out_dir(&loaded, out);
    let sweep = run_sweep(&loaded.config, param, degree, values)?;
    let rows = sweep.rows();
    let name = format!("sweep_{}.csv", param.name());
    let files = vec![write_file(&dir, &name, &sweep_csv(&rows)?)?];
    write_manifest(&loaded, files, &dir)?;
    println!("{param:>7}  degree  theta_T  qoi_T  alpha_T  converged  iterations");
    for r in &rows {
        println!(
            "{:>7}  {:>6}  {:.5}  {:>6.3}  {:.4}  {:>9}  {:>10}",
            format_value(r.value),
            r.degree,
            r.theta_at_t,
            r.qoi_at_t,
            r.alpha_at_t,
            r.converged,
            r.iterations
        );
    }
    let all_converged = sweep.points.iter().all(|p| p.solution.converged);
    Ok(status(all_converged))
}

fn cmd_reproduce(out: PathBuf, replicas: usize, seed: u64) -> Result<u8> {
    let opts = ReproduceOptions { out_dir: out, replicas, seed, ..ReproduceOptions::default() };
    let report = reproduce(&opts)?;
    println!("calibrated nu = {}", format_value(report.calibration.nu));
    print!("{}", verdict_table(&report.verdicts));
    println!("artifacts in {}", opts.out_dir.display());
    Ok(if report.all_mandatory_pass() { 0 } else { EXIT_CRITERIA })
}

fn cmd_calibrate(config: &Path, targets: &[f64]) -> Result<u8> {
    let loaded = load_config(config)?;
    match calibrate_nu(&loaded.config, targets) {
        Ok(cal) => {
            println!("nu = {}", format_value(cal.nu));
            println!("per-class errors {:?}", cal.errors.iter().map(|e| format_value(*e)).collect::<Vec<_>>());
            Ok(0)
        }
        Err(Error::CalibrationFailed { nu, worst_error, errors }) => {
            println!("nu = {} (calibration failed: worst error {})", format_value(nu), format_value(worst_error));
            println!("per-class errors {:?}", errors.iter().map(|e| format_value(*e)).collect::<Vec<_>>());
            Ok(EXIT_CRITERIA)
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { config, out } => cmd_solve(&config, out),
        Command::Baseline { config, out } => cmd_baseline(&config, out),
        Command::Simulate { config, n, replicas, seed, out } => cmd_simulate(&config, n, replicas, seed, out),
        Command::Sweep { config, param, degree, values, out } => cmd_sweep(&config, param, degree, &values, out),
        Command::Reproduce { out, replicas, seed } => cmd_reproduce(out, replicas, seed),
        Command::Calibrate { config, targets } => cmd_calibrate(&config, &targets),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidConfig(_) | Error::Parse { .. } => EXIT_CONFIG,
                Error::NotConverged(_) => EXIT_NOT_CONVERGED,
                _ => 1,
            })
        }
    }
}
