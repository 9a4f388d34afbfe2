use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use secure_fusion::analysis::robustness_condition;
use secure_fusion::harness::{
    run_bound, run_scenario, run_table1, table_to_csv, AttackKind, ExperimentConfig, DEFAULT_TABLE_LAMBDAS,
    DEFAULT_TABLE_SAMPLES,
};
use secure_fusion::Execution;

#[derive(Parser)]
#[command(
    name = "secfuse",
    version,
    about = "Robust state estimation under sparse sensor attacks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory, attack it and write estimates, deviations and bounds as CSV.
    Simulate(Common),
    /// Write the attack-free deviation bound per step.
    Bound(Common),
    /// Monte Carlo probability that the robust estimate equals the Kalman estimate.
    Table1 {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo draws per run.
        #[arg(long, default_value_t = DEFAULT_TABLE_SAMPLES)]
        samples: usize,
    },
    /// Robustness verdict for p compromised sensors out of m.
    Check {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    None,
    Drive,
    Random,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults to the built-in two-state scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Penalty parameter; repeat for several.
    #[arg(long = "lambda")]
    lambdas: Vec<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    /// Comma-separated drive direction, e.g. `1,0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    drive_direction: Option<Vec<f64>>,
    #[arg(long)]
    drive_magnitude: Option<f64>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg.steps = steps;
        }
        if !self.lambdas.is_empty() {
            cfg.lambdas = self.lambdas.clone();
        }
        if let Some(p) = self.p {
            cfg.p = p;
            cfg.attack.compromised = None;
        }
        let n = cfg.model.state_dim();
        let (mut direction, mut magnitude) = match &cfg.attack.kind {
            AttackKind::Drive { direction, magnitude } => (direction.clone(), *magnitude),
            _ => (DVector::from_element(n, 1.0), 100.0),
        };
        if let Some(d) = &self.drive_direction {
            direction = DVector::from_vec(d.clone());
        }
        if let Some(t) = self.drive_magnitude {
            magnitude = t;
        }
        match self.attack {
            Some(AttackArg::None) => cfg.attack.kind = AttackKind::None,
            Some(AttackArg::Random) => {
                if !matches!(cfg.attack.kind, AttackKind::Random { .. }) {
                    cfg.attack.kind = AttackKind::Random {
                        scale: 10.0,
                        seed: cfg.seed,
                    };
                }
            }
            Some(AttackArg::Drive) => cfg.attack.kind = AttackKind::Drive { direction, magnitude },
            None => {
                if let AttackKind::Drive { .. } = cfg.attack.kind {
                    cfg.attack.kind = AttackKind::Drive { direction, magnitude };
                }
            }
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.load()?;
            let artifact = run_scenario(&cfg)?;
            let v = artifact.summary.robustness;
            eprintln!("verdict: {:?} (p = {}, m = {})", v.verdict, v.p, v.m);
            match &cfg.output {
                Some(path) => {
                    let sidecar = artifact.write(path)?;
                    eprintln!("wrote {} and {}", path.display(), sidecar.display());
                }
                None => print!("{}", artifact.to_csv()?),
            }
        }
        Command::Bound(common) => {
            let cfg = common.load()?;
            let trace = run_bound(&cfg)?;
            emit(cfg.output.as_ref(), &trace.to_csv()?)?;
        }
        Command::Table1 { common, samples } => {
            let cfg = common.load()?;
            let lambdas = if common.lambdas.is_empty() {
                DEFAULT_TABLE_LAMBDAS.to_vec()
            } else {
                common.lambdas.clone()
            };
            let table = run_table1(&cfg.model, &lambdas, samples, cfg.seed, Execution::default())?;
            emit(cfg.output.as_ref(), &table_to_csv(&table))?;
        }
        Command::Check { p, m, config } => {
            let m = match (m, config) {
                (Some(m), _) => m,
                (None, Some(path)) => ExperimentConfig::from_file(&path)?.model.sensors,
                (None, None) => bail!("--m or --config is required"),
            };
            let v = robustness_condition(p, m)?;
            println!("{:?}", v.verdict);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
