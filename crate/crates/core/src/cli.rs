//! The `gbbhe` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use crate::boosting::{fit, TrainConfig};
use crate::data::{load_csv, read_table, split, Generator, SynthSpec, TargetColumn};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, rate_study, select_best, sweep, sweep_configs, write_rate_csv, write_sweep_csv,
    SweepGrid, RATE_TEST_SIZE,
};
use crate::learner::OobPolicy;
use crate::partition::SplitRule;
use crate::persist::{load_model, save_model};

#[derive(Debug, Parser)]
#[command(name = "gbbhe", version, about = "Gradient boosted binary histogram ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a CSV file and save it as JSON.
    Train(TrainArgs),
    /// Write one prediction per input row.
    Predict(PredictArgs),
    /// Print MSE, MAE and prediction time on a labelled CSV file.
    Eval(EvalArgs),
    /// Full-factorial hyperparameter sweep on a train/test split.
    Sweep(SweepArgs),
    /// Excess-risk versus sample size on synthetic data.
    RateStudy(RateArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Target column: zero-based index or "last".
    #[arg(long, default_value = "last")]
    target_col: TargetColumn,
    /// The first CSV row is a header.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Histogram depth p.
    #[arg(long, default_value_t = 8)]
    depth: u32,
    /// Boosting iterations T.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Histograms per iteration K.
    #[arg(long, default_value_t = 100)]
    hists: usize,
    /// Learning rate rho.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Randomly rotate each histogram (default).
    #[arg(long, overrides_with = "no_rotate")]
    rotate: bool,
    #[arg(long, overrides_with = "rotate")]
    no_rotate: bool,
    /// Split threshold rule: mean or midpoint.
    #[arg(long, default_value = "mean")]
    split_rule: SplitRule,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip predictions into [-M, M].
    #[arg(long, value_name = "M")]
    clip: Option<f64>,
    /// Out-of-box policy: clamp or zero.
    #[arg(long, default_value = "clamp")]
    oob: OobPolicy,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV file of features.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    header: bool,
    /// Zero-based column to drop before predicting (e.g. a target).
    #[arg(long)]
    target_col: Option<TargetColumn>,
    /// Zero-based column copied verbatim to the output as "id".
    #[arg(long)]
    id_col: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON file: a list of training configurations, or an object of
    /// candidate lists expanded as a full factorial.
    #[arg(long)]
    grid_file: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add wall-clock columns to the output.
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RateArgs {
    /// linear, norm or smooth-sine.
    #[arg(long)]
    generator: Generator,
    #[arg(long)]
    dims: usize,
    #[arg(long)]
    sigma: f64,
    /// Comma-separated increasing sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    /// JSON list of training configurations.
    #[arg(long)]
    methods_file: PathBuf,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = RATE_TEST_SIZE)]
    test_size: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Run the command line with `args` (including the program name) and return
/// the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => train_cmd(args),
        Command::Predict(args) => predict_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::RateStudy(args) => rate_cmd(args),
    }
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let data = load_csv(&args.input.data, args.input.target_col, args.input.header)?;
    let config = TrainConfig {
        iters: args.iters,
        hists: args.hists,
        depth: args.depth,
        learning_rate: args.lr,
        rotate: !args.no_rotate,
        split_rule: args.split_rule,
        seed: args.seed,
        clip: args.clip,
        oob_policy: args.oob,
    };
    let model = fit(&data, &config)?;
    save_model(&model, &args.out)?;
    eprintln!(
        "trained {} x {} histograms on {} rows in {:.3} s",
        config.iters,
        config.hists,
        data.n_samples(),
        model.train_seconds().unwrap_or(0.0)
    );
    Ok(())
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let file = File::open(&args.data).map_err(|e| Error::io(&args.data, e))?;
    let table = read_table(file, args.header, args.id_col)?;
    let drop = match args.target_col {
        Some(TargetColumn::Index(i)) => Some(i),
        Some(TargetColumn::Last) => table.width.checked_sub(1),
        None => None,
    };
    let features: Vec<usize> = (0..table.width)
        .filter(|&j| Some(j) != drop && Some(j) != args.id_col)
        .collect();
    if features.len() != model.dim() {
        return Err(Error::Shape {
            expected: model.dim(),
            got: features.len(),
        });
    }
    let x = Array2::from_shape_fn((table.rows.len(), features.len()), |(i, k)| {
        table.rows[i][features[k]]
    });
    let y_hat = model.predict_batch(x.view())?;
    let mut out = create(&args.out)?;
    let io = |e| Error::io(&args.out, e);
    if args.id_col.is_some() {
        writeln!(out, "id,prediction").map_err(io)?;
        for (id, v) in table.text.iter().zip(&y_hat) {
            writeln!(out, "{id},{v}").map_err(io)?;
        }
    } else {
        writeln!(out, "prediction").map_err(io)?;
        for v in &y_hat {
            writeln!(out, "{v}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_csv(&args.input.data, args.input.target_col, args.input.header)?;
    let m = evaluate(&model, &data)?;
    println!("MSE: {:?}", m.mse);
    println!("MAE: {:?}", m.mae);
    println!("predict_seconds: {:.6}", m.predict_seconds);
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum GridFile {
    List(Vec<TrainConfig>),
    Factorial(SweepGrid),
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let grid: GridFile = read_json(&args.grid_file)?;
    let data = load_csv(&args.input.data, args.input.target_col, args.input.header)?;
    let (train, test) = split(&data, args.train_fraction, args.seed)?;
    let started = Instant::now();
    let rows = match grid {
        GridFile::List(configs) => sweep_configs(&train, &test, configs, 1)?,
        GridFile::Factorial(grid) => sweep(&train, &test, &grid, args.seed)?,
    };
    let mut out = create(&args.out)?;
    write_sweep_csv(&rows, &mut out, args.timings)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&args.out, e))?;
    if let Some(best) = select_best(&rows) {
        let c = &best.config;
        println!(
            "best: iters={} hists={} depth={} lr={} rotate={} mse={:?}",
            c.iters,
            c.hists,
            c.depth,
            c.learning_rate,
            c.rotate,
            best.metrics.map(|m| m.mse).unwrap_or(f64::NAN)
        );
    }
    eprintln!("{} rows in {:.3} s", rows.len(), started.elapsed().as_secs_f64());
    Ok(())
}

fn rate_cmd(args: RateArgs) -> Result<()> {
    let methods: Vec<TrainConfig> = read_json(&args.methods_file)?;
    let template = SynthSpec {
        generator: args.generator,
        n: 1,
        d: args.dims,
        noise_sigma: args.sigma,
        seed: args.seed,
    };
    let report = rate_study(&template, &args.n_list, &methods, args.repeats, args.test_size)?;
    let mut out = create(&args.out)?;
    write_rate_csv(&report, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&args.out, e))?;
    for (m, slope) in report.slopes.iter().enumerate() {
        println!("method {m}: slope {slope:.4}");
    }
    if report.floored > 0 {
        eprintln!("{} error estimates floored at 1e-15", report.floored);
    }
    Ok(())
}
