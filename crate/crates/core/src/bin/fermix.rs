use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fermix::harness::{
    convergence_study, run_quench, sweep_parameters, sweep_tilt, ExperimentConfig, Preset,
    ShotPlan, SweepAxis, SweepOutcome,
};
use fermix::singleshot::ImagingOrder;
use fermix::{Error, Result};

#[derive(Parser)]
#[command(name = "fermix", version, about = "Few-fermion mixtures in a tilted double well")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_preset)]
    preset: Option<Preset>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Single quench.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// One quench per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// g, mass_ratio, particle_number, barrier_height or tilt.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Quench with simulated single-shot images.
    Shots {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n_shots: usize,
        #[arg(long, default_value = "AB")]
        order: String,
        /// Comma-separated imaging times.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
    },
    /// Orbital-count convergence study.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated orbital counts; the largest is the reference.
        #[arg(long, value_delimiter = ',', required = true)]
        orbitals: Vec<usize>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::preset(common.preset.unwrap_or(Preset::PaperSec3));
    if let Some(path) = &common.config {
        cfg.apply_config_text(&std::fs::read_to_string(path)?)?;
        if let Some(p) = common.preset {
            cfg.barrier_width = ExperimentConfig::preset(p).barrier_width;
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(PathBuf::from("fermix-out"));
    }
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn summary(label: &str, r: &fermix::harness::QuenchResult) {
    let s = &r.series;
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (a0, a1) = range(&s.left_pop_a);
    let (b0, b1) = range(&s.left_pop_b);
    println!(
        "{label}: E0 = {:.10}, <rho_A>_L in [{a0:.4}, {a1:.4}], <rho_B>_L in [{b0:.4}, {b1:.4}], steps = {}, matvecs = {}",
        r.ground.energy, r.stats.steps, r.stats.matvecs
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common } => {
            let cfg = load(&common)?;
            let r = run_quench(&cfg)?;
            summary("run", &r);
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load(&common)?;
            let axis: SweepAxis = axis.parse()?;
            let runs = if axis == SweepAxis::Tilt {
                let sweep = sweep_tilt(&cfg, &values)?;
                for (run, band) in sweep.runs.iter().zip(&sweep.bands) {
                    if let Some(band) = band {
                        println!("d = {}: {band:?}", run.value);
                    }
                }
                sweep.runs
            } else {
                sweep_parameters(&cfg, axis, &values)?
            };
            for run in &runs {
                let label = format!("{} = {}", axis.name(), run.value);
                match &run.outcome {
                    SweepOutcome::Done(r) => summary(&label, r),
                    SweepOutcome::Skipped(why) => println!("{label}: skipped ({why})"),
                }
            }
        }
        Command::Shots {
            common,
            n_shots,
            order,
            times,
        } => {
            let mut cfg = load(&common)?;
            let order: ImagingOrder = order.parse()?;
            let mut plan = cfg.shots.clone().unwrap_or_else(ShotPlan::default);
            plan.n_shots = n_shots;
            plan.order = order;
            if let Some(t) = times {
                plan.times = t;
            }
            cfg.shots = Some(plan);
            let r = run_quench(&cfg)?;
            summary("shots", &r);
            for slice in &r.shots {
                let a = &slice.average;
                let k = r
                    .series
                    .times
                    .iter()
                    .position(|&t| (t - a.time).abs() < 1e-9)
                    .unwrap_or(0);
                println!(
                    "t = {:.2}: A {:.4} ± {:.4} (density {:.4}), B {:.4} ± {:.4} (density {:.4})",
                    a.time,
                    a.left_fraction_a,
                    a.left_error_a,
                    r.series.left_pop_a[k],
                    a.left_fraction_b,
                    a.left_error_b,
                    r.series.left_pop_b[k]
                );
            }
        }
        Command::Converge { common, orbitals } => {
            let cfg = load(&common)?;
            let report = convergence_study(&cfg, &orbitals)?;
            for (k, label) in report.compared.iter().enumerate() {
                println!(
                    "{label} vs {}: max deviation A = {:.4}, B = {:.4}",
                    report.reference, report.max_a[k], report.max_b[k]
                );
            }
            if let Some(dir) = &cfg.output_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("convergence.json");
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
