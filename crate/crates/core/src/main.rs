//! Command-line front end: train / eval / sweep / theory / gen-data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmboost::checkpoint::{load_params, save_params};
use mmboost::data::{save_features, PerturbationSpec};
use mmboost::error::{Error, Result};
use mmboost::harness::config::{ExperimentConfig, SeedPlan};
use mmboost::harness::eval::evaluate;
use mmboost::harness::runlog::write_run_files;
use mmboost::harness::sweep::{sweep, write_sweep_csv, SweepParam};
use mmboost::harness::train::{build_dataset, build_splits, train};
use mmboost::model::MultimodalModel;
use mmboost::theory::{run_grid, GridSpec};

#[derive(Parser)]
#[command(name = "mmboost", about = "Sustained-boosting multimodal training", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes logs, summary and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of the config's dataset.
    Eval(EvalArgs),
    /// Sweep one hyperparameter over a value grid and seed set.
    Sweep(SweepArgs),
    /// Verify the gap convergence bound on the quadratic simulator grid.
    Theory(TheoryArgs),
    /// Generate a synthetic dataset and write it as an mmfeat file.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run seed; every source of randomness derives from it.
    #[arg(long)]
    seed: u64,
    /// Overrides the config's output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed for dataset regeneration/split (defaults to the config seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Which split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Perturbation target modality; enables --missing-rate/--noise-rate.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long)]
    perturb_seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// sigma, lambda or max_classifiers.
    #[arg(long)]
    param: String,
    /// Comma-separated values, e.g. "1.0,1.25,1.5".
    #[arg(long)]
    values: String,
    /// Comma-separated seeds, e.g. "1,2,3".
    #[arg(long)]
    seeds: String,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Comma-separated weak-learner qualities.
    #[arg(long, default_value = "0.5,0.9,1.0")]
    nus: String,
    /// Comma-separated condition numbers.
    #[arg(long, default_value = "1,10,100")]
    conds: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    /// Directory for per-cell trace CSVs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| Error::Config(format!("bad {what} value {t:?}"))))
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    cfg.seed = Some(args.seed);
    if let Some(dir) = args.output_dir {
        cfg.output_dir = Some(dir);
    }
    let out = train(&cfg)?;

    if let Some(dir) = cfg.output_dir.clone() {
        write_run_files(&out.log, &cfg, &dir)?;
        save_params(out.model.store(), &dir.join("model.ckpt"))?;
        println!("run written to {}", dir.display());
    }
    if let Some(test) = &out.log.final_test {
        println!(
            "test accuracy {:.4}  map {:.4}  macro_f1 {:.4}",
            test.multi.accuracy, test.multi.map, test.multi.macro_f1
        );
        for m in &test.per_modality {
            if let Some(rep) = &m.report {
                println!(
                    "  {}: accuracy {:.4}  map {:.4}  macro_f1 {:.4}",
                    m.name, rep.accuracy, rep.map, rep.macro_f1
                );
            }
        }
    }
    let counts: Vec<String> = out
        .model
        .modalities()
        .iter()
        .map(|m| format!("{}={}", m.name(), m.num_classifiers()))
        .collect();
    println!("classifiers: {}", counts.join(" "));
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    let seed = cfg.require_seed()?;
    let seeds = SeedPlan::new(seed);
    let splits = build_splits(&cfg, &seeds)?;
    let dataset = match args.split.as_str() {
        "train" => splits.train,
        "val" => splits.val,
        "test" => splits.test,
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };

    let store = load_params(&args.checkpoint)?;
    let model = MultimodalModel::from_store(store)?;

    let perturbation = match args.target {
        Some(target) => Some(PerturbationSpec {
            target,
            noise_rate: args.noise_rate,
            noise_scale: args.noise_scale,
            missing_rate: args.missing_rate,
            seed: args.perturb_seed.unwrap_or(seeds.perturb),
        }),
        None => {
            if args.noise_rate > 0.0 || args.missing_rate > 0.0 {
                return Err(Error::Config(
                    "perturbation rates need --target <modality>".to_string(),
                ));
            }
            cfg.perturbation.clone()
        }
    };

    let report = evaluate(&model, &dataset, perturbation.as_ref())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_toml_file(&args.config)?;
    let param: SweepParam = args.param.parse()?;
    let values: Vec<f64> = parse_list(&args.values, "sweep")?;
    let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
    let rows = sweep(&cfg, param, &values, &seeds)?;
    match args.out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_sweep_csv(param, &rows, &mut file)?;
            println!("sweep written to {}", path.display());
        }
        None => {
            let mut buf = Vec::new();
            write_sweep_csv(param, &rows, &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    Ok(())
}

fn cmd_theory(args: TheoryArgs) -> Result<()> {
    let spec = GridSpec {
        nus: parse_list(&args.nus, "nu")?,
        condition_numbers: parse_list(&args.conds, "condition number")?,
        seeds: parse_list(&args.seeds, "seed")?,
        dim: args.dim,
        steps: args.steps,
        beta: args.beta,
    };
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        for &nu in &spec.nus {
            for &cond in &spec.condition_numbers {
                for &seed in &spec.seeds {
                    let problem =
                        mmboost::theory::make_problem(spec.dim, 1.0, cond, 1.0, cond, seed)?;
                    let constants = mmboost::theory::estimate_constants(&problem, nu, spec.beta)?;
                    let trace =
                        mmboost::theory::run_gap_sim(&problem, &constants, spec.steps, seed)?;
                    let name = format!("trace_nu{nu}_cond{cond}_seed{seed}.csv");
                    let mut file =
                        std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
                    mmboost::theory::write_trace_csv(&trace, &mut file)?;
                }
            }
        }
    }
    let reports = run_grid(&spec)?;
    println!(
        "gap bound, per-step descent and gradient-gap inequality verified on {} traces",
        reports.len()
    );
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_file(&args.config)?;
    cfg.seed = Some(args.seed);
    let dataset = build_dataset(&cfg, args.seed)?;
    save_features(&dataset, &args.out)?;
    println!("{} samples written to {}", dataset.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Theory(args) => cmd_theory(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
