use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use t2g::config::Config;
use t2g::pipeline::{
    gen_minirdb, ingest, run_distill, run_evaluate, run_pretrain, run_report, Baseline, Outcome, Workspace,
};
use t2g_core::eval::ModelKind;
use t2g_core::minirdb::MiniRdbConfig;

#[derive(Parser)]
#[command(name = "t2g", version, about = "Distill a relational database into a small synthetic graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Hgnn,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Random,
    Full,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a schema and its CSV files and initialize a workspace.
    Ingest {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hyper-parameter file; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Pretrain tokenizers and encoder, and cluster every table.
    Pretrain {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Build the synthetic structure and distill features and labels.
    Distill {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Train downstream models on the artifact and score them on the test split.
    Evaluate {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long, value_enum, default_value = "hgnn")]
        model: Model,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
        baseline: Vec<BaselineArg>,
    },
    /// Aggregate evaluation runs into report.csv.
    Report {
        #[arg(long)]
        workspace: PathBuf,
    },
    /// Write a planted two-table database with a schema file.
    GenMinirdb {
        #[arg(long, default_value_t = MiniRdbConfig::default().rows)]
        rows: usize,
        /// Parent rows; defaults to a tenth of `rows`.
        #[arg(long)]
        parents: Option<usize>,
        #[arg(long, default_value_t = MiniRdbConfig::default().clusters)]
        clusters: usize,
        #[arg(long, default_value_t = MiniRdbConfig::default().intra)]
        intra: f64,
        #[arg(long, default_value_t = MiniRdbConfig::default().inter)]
        inter: f64,
        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,
        #[arg(long, default_value_t = MiniRdbConfig::default().noise)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn report_outcome(stage: &str, o: Outcome) {
    match o {
        Outcome::Ran => println!("{stage}: done"),
        Outcome::UpToDate => println!("{stage}: up to date"),
    }
}

fn run(cli: Cli) -> t2g::Result<()> {
    match cli.command {
        Command::Ingest {
            schema,
            data_dir,
            out,
            config,
        } => {
            let config = config.map(|p| Config::load(&p)).transpose()?;
            report_outcome("ingest", ingest(&schema, &data_dir, &Workspace::new(out), config)?);
        }
        Command::Pretrain {
            workspace,
            ratio,
            seed,
            epochs,
            lr,
        } => {
            let o = run_pretrain(&Workspace::new(workspace), |c| {
                set(&mut c.ratio, ratio);
                set(&mut c.seed, seed);
                set(&mut c.pretrain_epochs, epochs);
                set(&mut c.pretrain_lr, lr);
            })?;
            report_outcome("pretrain", o);
        }
        Command::Distill {
            workspace,
            beta,
            rho,
            iters,
            lambda,
            lr,
        } => {
            let o = run_distill(&Workspace::new(workspace), |c| {
                set(&mut c.beta, beta);
                set(&mut c.rho, rho);
                set(&mut c.distill_iters, iters);
                set(&mut c.lambda, lambda);
                set(&mut c.distill_lr, lr);
            })?;
            report_outcome("distill", o);
        }
        Command::Evaluate {
            workspace,
            model,
            repeats,
            baseline,
        } => {
            let model = match model {
                Model::Hgnn => ModelKind::Hgnn,
                Model::Mlp => ModelKind::Mlp,
            };
            let mut baselines = Vec::new();
            for b in baseline {
                let b = match b {
                    BaselineArg::Random => Baseline::Random,
                    BaselineArg::Full => Baseline::Full,
                    BaselineArg::None => continue,
                };
                if !baselines.contains(&b) {
                    baselines.push(b);
                }
            }
            for r in run_evaluate(&Workspace::new(workspace), model, repeats, &baselines)? {
                println!("{} seed {}: {} {:.4}", r.config, r.seed, r.metric.as_str(), r.value);
            }
        }
        Command::Report { workspace } => {
            let ws = Workspace::new(workspace);
            run_report(&ws)?;
            print!("{}", std::fs::read_to_string(ws.report_path()).map_err(t2g::Error::io(ws.report_path()))?);
        }
        Command::GenMinirdb {
            rows,
            parents,
            clusters,
            intra,
            inter,
            task,
            noise,
            seed,
            out,
        } => {
            let cfg = MiniRdbConfig {
                rows,
                parents: parents.unwrap_or((rows / 10).max(clusters)),
                clusters,
                intra,
                inter,
                classification: matches!(task, TaskArg::Classification),
                noise,
                seed,
            };
            gen_minirdb(&cfg, &out)?;
            println!("wrote {} and {} rows to {}", cfg.parents, cfg.rows, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
