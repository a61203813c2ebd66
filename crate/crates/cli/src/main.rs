use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dgcnn::dataset::{generate, Dataset, DatasetSpec, EnsembleStats};
use dgcnn::experiments::{model_inputs, run_experiment, with_provenance, ExperimentSpec, RunConfig};
use dgcnn::model::{
    compare_rows, load_checkpoint, param_count, reconcile, save_checkpoint, Accounting, ArchSpec, BnCounting,
    ChannelLayout, ModelParams, REFERENCE_COUNTS,
};
use dgcnn::training::{evaluate, fit, prepare, split, ConditioningStats, History, ModelInput, Split};
use dgcnn::Error;

#[derive(Parser, Debug)]
#[command(name = "dgcnn", version, about = "Graph convolutional surrogates of microstructure stress response")]
struct Cli {
    /// Output directory (defaults to a subdirectory of the output root).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, global = true, env = "DGCNN_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate and label a dataset from a TOML dataset spec.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a model from a TOML run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate the held-out test split recorded in the checkpoint, or every realization.
        #[arg(long, value_enum, default_value_t = EvalSet::Test)]
        set: EvalSet,
    },
    /// Run an experiment grid from a TOML experiment spec.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Parameter count of an architecture, or the reference-table reconciliation.
    ParamCount {
        /// Architecture such as `dgcnn:4/2/1` (ignored with --table).
        #[arg(long, default_value = "dgcnn:4/1/1")]
        arch: String,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = BnArg::Full)]
        bn: BnArg,
        #[arg(long)]
        no_recurrent: bool,
        /// Reconcile against the built-in reference rows instead.
        #[arg(long)]
        table: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EvalSet {
    Test,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BnArg {
    Affine,
    Full,
}

enum Failure {
    Config(String),
    Numerical(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_)
            | Error::Diverged { .. }
            | Error::NonConvergent { .. }
            | Error::ZeroVariance
            | Error::ZeroMaximum(_)
            | Error::InfeasiblePorosity(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn out_dir(cli: &Cli, kind: &str, hash: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cli.output_root.join(format!("{kind}-{hash}")))
}

fn write_csv(path: &Path, body: &str, hash: &str, seed: u64) -> CmdResult {
    fs::write(path, with_provenance(body, hash, &[seed]))?;
    Ok(())
}

fn cmd_generate(cli: &Cli, config: &Path) -> CmdResult {
    let mut spec = DatasetSpec::from_toml(&read(config)?)?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let hash = spec.hash();
    let dir = out_dir(cli, "dataset", &hash);
    let ds = generate(&spec, cli.workers)?;
    ds.save(&dir)?;
    let stats = EnsembleStats::compute(&ds.samples)?;
    write_csv(&dir.join("ensemble.csv"), &stats.to_csv(), &hash, spec.seed)?;
    println!("{}", dir.display());
    Ok(())
}

fn subset(inputs: &[ModelInput], idx: &[usize]) -> Vec<ModelInput> {
    idx.iter().map(|&i| inputs[i].clone()).collect()
}

fn cmd_train(cli: &Cli, config: &Path, resume: bool) -> CmdResult {
    let mut cfg = RunConfig::from_toml(&read(config)?)?;
    if let Some(s) = cli.seed {
        cfg.model_seed = s;
        cfg.train.seed = s;
    }
    let hash = cfg.hash();
    cfg.train.workers = cli.workers;
    let dir = out_dir(cli, "train", &hash);
    let base = config.parent().unwrap_or(Path::new("."));
    let ds = cfg.dataset.resolve(base, cli.workers)?;
    let arch = cfg.arch()?;
    let inputs = model_inputs(&arch, &ds.samples, cfg.grain_features)?;
    let ckpt = dir.join("checkpoint");
    let (mut params, stats, sp, mut history) = if resume {
        let (p, m) = load_checkpoint::<f64>(&ckpt)?;
        let stats: ConditioningStats = serde_json::from_value(m.extra["stats"].clone())?;
        let sp: Split = serde_json::from_value(m.extra["split"].clone())?;
        let h: History = serde_json::from_str(&read(&dir.join("history.json"))?)?;
        if p.spec != arch {
            return Err(Failure::Config("checkpoint architecture differs from the config".into()));
        }
        cfg.train.start_epoch = h.last_epoch().map_or(0, |e| e + 1);
        cfg.train.calibrate_bn = false;
        (p, stats, sp, h)
    } else {
        let sp = split(inputs.len(), cfg.train.split, cfg.split_seed)?;
        let train = subset(&inputs, &sp.train);
        let stats = ConditioningStats::fit(&train, cfg.train.std_basis)?;
        let first = &train[0];
        let p = ModelParams::<f64>::build(&arch, &first.complex, first.features.ncols(), cfg.model_seed)?;
        (p, stats, sp, History::default())
    };
    let ptrain = prepare(&subset(&inputs, &sp.train), &stats, &params)?;
    let pval = prepare(&subset(&inputs, &sp.val), &stats, &params)?;
    let result = fit(&mut params, &ptrain, &pval, &cfg.train, &mut history);
    let extra = serde_json::json!({
        "stats": stats,
        "split": sp,
        "config": cfg,
        "config_hash": hash,
        "grain_features": cfg.grain_features,
    });
    save_checkpoint(&ckpt, &params, extra)?;
    fs::write(dir.join("history.json"), serde_json::to_string_pretty(&history)?)?;
    write_csv(&dir.join("history.csv"), &history.to_csv(), &hash, cfg.train.seed)?;
    result?;
    println!("{}", dir.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, checkpoint: &Path, dataset: &Path, set: EvalSet) -> CmdResult {
    let (params, m) = load_checkpoint::<f64>(checkpoint)?;
    let stats: ConditioningStats = serde_json::from_value(m.extra["stats"].clone())?;
    let grain_features = m.extra["grain_features"].as_u64().unwrap_or(2) as usize;
    let hash = m.extra["config_hash"].as_str().unwrap_or("unknown").to_string();
    let seed = m.extra["config"]["train"]["seed"].as_u64().unwrap_or(0);
    let ds = Dataset::load(dataset)?;
    let inputs = model_inputs(&params.spec, &ds.samples, grain_features)?;
    let idx: Vec<usize> = match set {
        EvalSet::All => (0..inputs.len()).collect(),
        EvalSet::Test => serde_json::from_value::<Split>(m.extra["split"].clone())?.test,
    };
    if idx.iter().any(|&i| i >= inputs.len()) {
        return Err(Failure::Config("checkpoint split does not fit this dataset".into()));
    }
    let chosen = subset(&inputs, &idx);
    let (report, preds, truths) = evaluate(&params, &chosen, &stats)?;
    let dir = cli.out.clone().unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join("eval"));
    fs::create_dir_all(&dir)?;
    write_csv(&dir.join("curves.csv"), &report.curves_csv(), &hash, seed)?;
    write_csv(&dir.join("per_sample.csv"), &report.per_sample_csv(), &hash, seed)?;
    write_csv(&dir.join("cdf.csv"), &report.cdf_csv(), &hash, seed)?;
    write_csv(&dir.join("histograms.csv"), &report.histogram_csv(), &hash, seed)?;
    let mut overlay = String::from("sample,step,strain,true_MPa,pred_MPa\n");
    for (r, &i) in idx.iter().enumerate() {
        for k in 0..truths.ncols() {
            overlay.push_str(&format!(
                "{},{k},{},{},{}\n",
                ds.samples[i].name,
                report.strain[k],
                truths[[r, k]],
                preds[[r, k]]
            ));
        }
    }
    write_csv(&dir.join("overlays.csv"), &overlay, &hash, seed)?;
    let metrics = serde_json::json!({
        "config_hash": hash,
        "samples": idx.len(),
        "mean_rmse": report.mean_rmse(),
        "mean_correlation": report.mean_correlation(),
        "min_correlation": report.min_correlation(),
        "normalizer": report.normalizer,
    });
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn cmd_experiment(cli: &Cli, config: &Path) -> CmdResult {
    let mut spec = ExperimentSpec::from_toml(&read(config)?)?;
    if let Some(s) = cli.seed {
        spec.seeds = vec![s];
    }
    let hash = spec.hash();
    let dir = out_dir(cli, spec.id.name(), &hash);
    let base = config.parent().unwrap_or(Path::new("."));
    let report = run_experiment(&spec, base, cli.workers)?;
    report.write(&dir, &hash, &spec.seeds)?;
    println!("{}", dir.display());
    if report.groups.is_empty() {
        return Err(Failure::Numerical("every cell of the grid failed".into()));
    }
    if !report.failures.is_empty() {
        return Err(Failure::Partial(format!("{} grid cells failed", report.failures.len())));
    }
    Ok(())
}

fn cmd_param_count(arch: &str, channels: usize, dim: usize, bn: BnArg, no_recurrent: bool, table: bool) -> CmdResult {
    if table {
        let best = reconcile(&REFERENCE_COUNTS)?;
        print!("{}", best.to_csv());
        let plain = compare_rows(&REFERENCE_COUNTS, Accounting::default(), ChannelLayout { cnn: 1, dgcnn: 1, rgcnn: 2 })?;
        eprintln!("exact rows: best {} of 8, default accounting {} of 8", best.exact_rows(), plain.exact_rows());
        return Ok(());
    }
    let spec: ArchSpec = arch.parse()?;
    let params = ModelParams::<f64>::init(&spec, channels, Some(dim), 0)?;
    let acc = Accounting {
        bn: match bn {
            BnArg::Affine => BnCounting::Affine,
            BnArg::Full => BnCounting::Full,
        },
        include_recurrent: !no_recurrent,
        cnn_first_layer_taps: None,
    };
    let r = param_count(&params, &acc);
    print!("{}", r.to_csv());
    eprintln!("total {}", r.total);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Generate { config } => cmd_generate(&cli, config),
        Command::Train { config, resume } => cmd_train(&cli, config, *resume),
        Command::Eval { checkpoint, dataset, set } => cmd_eval(&cli, checkpoint, dataset, *set),
        Command::Experiment { config } => cmd_experiment(&cli, config),
        Command::ParamCount {
            arch,
            channels,
            dim,
            bn,
            no_recurrent,
            table,
        } => cmd_param_count(arch, *channels, *dim, *bn, *no_recurrent, *table),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("partial failure: {m}");
            ExitCode::from(4)
        }
    }
}
