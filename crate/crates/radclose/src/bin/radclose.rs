//! Command-line pipeline: generate kinetic data, learn constrained closures,
//! simulate them forward, and evaluate against references.

use clap::{Parser, Subcommand};
use radclose::closure::{ClosureModel, ParametrizedClosure};
use radclose::dataset::MomentDataset;
use radclose::error::Error;
use radclose::pipeline::{self, Manifest, PipelineConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "radclose",
    version,
    about = "Learned moment closures for 1D thermal radiation transport"
)]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the opacity scale gamma.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// Override the drive temperature via T_in^3.
    #[arg(long, global = true)]
    t_in_cubed: Option<f64>,

    /// Override the kinetic cell count.
    #[arg(long, global = true)]
    n_cells: Option<usize>,

    /// Override the kinetic step count.
    #[arg(long, global = true)]
    n_steps: Option<usize>,

    /// Override the discrete angle count.
    #[arg(long, global = true)]
    m_omega: Option<usize>,

    /// Override the frequency group count.
    #[arg(long, global = true)]
    groups: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the kinetic reference solver at one parameter point.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn closure models from one or more datasets (group-coupled).
    Learn {
        /// Dataset directories.
        datasets: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward-simulate a closure with IC/BC taken from a dataset.
    Simulate {
        #[arg(long)]
        closure: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error metrics of a candidate dataset against a reference.
    Evaluate {
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Subsample the reference onto the candidate grid when they differ.
        #[arg(long)]
        resample: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the log-linear parametrization over learned models.
    Extrapolate {
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter-grid report for a parametrized closure.
    Sweep {
        #[arg(long)]
        closure: PathBuf,
        /// Directory scanned for references named g<gamma>_t<T_in^3>.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(g) = cli.gamma {
        cfg.problem.gamma = g;
    }
    if let Some(t3) = cli.t_in_cubed {
        cfg.problem.t_in = t3.cbrt();
    }
    if let Some(n) = cli.n_cells {
        cfg.kinetic.n_cells = n;
    }
    if let Some(n) = cli.n_steps {
        cfg.kinetic.n_steps = n;
    }
    if let Some(m) = cli.m_omega {
        cfg.kinetic.m_omega = m;
    }
    if let Some(g) = cli.groups {
        cfg.kinetic.groups = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical reference name for a sweep grid point.
fn reference_name(gamma: f64, t3: f64) -> String {
    format!("g{gamma:.3e}_t{t3:.3e}")
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Generate { out } => {
            std::fs::create_dir_all(out)?;
            let dir = pipeline::generate(&config, out)?;
            Manifest {
                command: "generate".into(),
                config_hash: config.hash(),
                artifacts: vec![dir.display().to_string()],
            }
            .write(out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Learn { datasets, out } => {
            if datasets.is_empty() {
                return Err(Error::InvalidArgument("no dataset paths given".into()));
            }
            let loaded: Result<Vec<MomentDataset>, Error> =
                datasets.iter().map(|p| MomentDataset::read(p)).collect();
            let loaded = loaded?;
            let result = pipeline::learn(&config, &loaded)?;
            std::fs::create_dir_all(out)?;
            let mut artifacts = Vec::new();
            for model in &result.models {
                let name = format!(
                    "closure_{}.json",
                    reference_name(model.params.gamma, model.params.t_in_cubed)
                );
                let path = out.join(&name);
                model.write_json(&path)?;
                artifacts.push(name);
            }
            let report_path = out.join("regression_report.json");
            std::fs::write(&report_path, serde_json::to_string_pretty(&result.report)?)?;
            artifacts.push("regression_report.json".into());
            Manifest {
                command: "learn".into(),
                config_hash: config.hash(),
                artifacts,
            }
            .write(out)?;
            println!(
                "learned {} model(s) into {}",
                result.models.len(),
                out.display()
            );
        }
        Command::Simulate { closure, data, out } => {
            let model = ClosureModel::read_json(closure)?;
            let ds = MomentDataset::read(data)?;
            let sim = pipeline::simulate(&config, &model, &ds)?;
            std::fs::create_dir_all(out)?;
            let dir = out.join("dataset");
            sim.write(&dir)?;
            Manifest {
                command: "simulate".into(),
                config_hash: config.hash(),
                artifacts: vec!["dataset".into()],
            }
            .write(out)?;
            println!("simulation written to {}", dir.display());
        }
        Command::Evaluate {
            candidate,
            reference,
            resample,
            out,
        } => {
            let cand = MomentDataset::read(candidate)?;
            let refr = MomentDataset::read(reference)?;
            let report = pipeline::evaluate(&cand, &refr, *resample)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            let mut csv = Vec::new();
            report.write_series_csv(&cand.t.coords(), &mut csv)?;
            std::fs::write(out.join("metrics_series.csv"), csv)?;
            Manifest {
                command: "evaluate".into(),
                config_hash: config.hash(),
                artifacts: vec!["metrics.json".into(), "metrics_series.csv".into()],
            }
            .write(out)?;
            println!(
                "err_L1: e {:.4} F {:.4} T {:.4} S {:.4}",
                report.e.err_l1, report.f.err_l1, report.t.err_l1, report.s.err_l1
            );
        }
        Command::Extrapolate { models, out } => {
            if models.len() < 3 {
                return Err(Error::InvalidArgument(
                    "extrapolate needs at least 3 learned models".into(),
                ));
            }
            let loaded: Result<Vec<ClosureModel>, Error> =
                models.iter().map(|p| ClosureModel::read_json(p)).collect();
            let pc = pipeline::extrapolate(&config, &loaded?)?;
            std::fs::create_dir_all(out)?;
            pc.write_json(&out.join("parametrized_closure.json"))?;
            Manifest {
                command: "extrapolate".into(),
                config_hash: config.hash(),
                artifacts: vec!["parametrized_closure.json".into()],
            }
            .write(out)?;
            println!("parametrized closure written to {}", out.display());
        }
        Command::Sweep {
            closure,
            references,
            out,
        } => {
            let pc = ParametrizedClosure::read_json(closure)?;
            let lookup = |gamma: f64, t3: f64| -> Option<MomentDataset> {
                let dir = references.as_ref()?;
                let path = dir.join(reference_name(gamma, t3));
                if path.is_dir() {
                    MomentDataset::read(&path).ok()
                } else {
                    None
                }
            };
            let rows = pipeline::sweep(&config, &pc, &lookup)?;
            std::fs::create_dir_all(out)?;
            let mut csv = Vec::new();
            radclose::evaluate::write_sweep_csv(&rows, &mut csv)?;
            std::fs::write(out.join("sweep.csv"), csv)?;
            std::fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&rows)?)?;
            Manifest {
                command: "sweep".into(),
                config_hash: config.hash(),
                artifacts: vec!["sweep.csv".into(), "sweep.json".into()],
            }
            .write(out)?;
            println!("sweep written to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let code = err.exit_code();
        let payload = serde_json::json!({
            "error": {
                "message": err.to_string(),
                "exit_code": code,
            }
        });
        eprintln!("{payload}");
        std::process::exit(code);
    }
}
