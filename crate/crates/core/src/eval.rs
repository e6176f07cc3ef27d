//! Metrics, hyperparameter sweeps and empirical convergence-rate studies.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::{fit, GbbheModel, TrainConfig};
use crate::data::{split, synth, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Test error and timings of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

/// Mean squared and mean absolute error of `y_hat` against `y`.
pub fn error_metrics(y: &[f64], y_hat: &[f64]) -> Result<(f64, f64)> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = y.len() as f64;
    let (se, ae) = y
        .iter()
        .zip(y_hat)
        .fold((0.0, 0.0), |(se, ae), (a, b)| (se + (a - b) * (a - b), ae + (a - b).abs()));
    Ok((se / n, ae / n))
}

/// Predict `test` in one batch and report MSE, MAE and wall-clock timings.
/// `train_seconds` is taken from the model (0 for models loaded from disk).
pub fn evaluate(model: &GbbheModel, test: &Dataset) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyData);
    }
    let start = Instant::now();
    let y_hat = model.predict_batch(test.x())?;
    let predict_seconds = start.elapsed().as_secs_f64();
    let (mse, mae) = error_metrics(test.y(), &y_hat)?;
    Ok(Metrics {
        mse,
        mae,
        train_seconds: model.train_seconds().unwrap_or(0.0),
        predict_seconds,
    })
}

fn one() -> usize {
    1
}

/// Candidate values for a full-factorial sweep. Fields not swept are taken
/// from `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub iters: Vec<usize>,
    pub hists: Vec<usize>,
    pub depth: Vec<u32>,
    #[serde(rename = "lr")]
    pub learning_rate: Vec<f64>,
    pub rotate: Vec<bool>,
    #[serde(default)]
    pub base: TrainConfig,
    /// Independent repetitions per grid point; metrics are averaged.
    #[serde(default = "one")]
    pub repeats: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("iters", self.iters.is_empty()),
            ("hists", self.hists.is_empty()),
            ("depth", self.depth.is_empty()),
            ("lr", self.learning_rate.is_empty()),
            ("rotate", self.rotate.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Argument(format!("sweep grid list {name:?} is empty")));
        }
        if self.repeats == 0 {
            return Err(Error::Argument("sweep repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Every grid point in deterministic order (`iters` outermost, `rotate`
    /// innermost), with seeds derived from `base_seed`.
    pub fn configs(&self, base_seed: u64) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &iters in &self.iters {
            for &hists in &self.hists {
                for &depth in &self.depth {
                    for &learning_rate in &self.learning_rate {
                        for &rotate in &self.rotate {
                            out.push(TrainConfig {
                                iters,
                                hists,
                                depth,
                                learning_rate,
                                rotate,
                                seed: derive_seed(base_seed, &[out.len() as u64]),
                                ..self.base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid point of a sweep. Failed points carry the error message instead
/// of metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config: TrainConfig,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

fn run_config(train: &Dataset, test: &Dataset, config: &TrainConfig, repeats: usize) -> Result<Metrics> {
    let mut total = Metrics::default();
    for r in 0..repeats {
        let config = TrainConfig {
            seed: derive_seed(config.seed, &[r as u64]),
            ..config.clone()
        };
        let model = fit(train, &config)?;
        let m = evaluate(&model, test)?;
        total.mse += m.mse;
        total.mae += m.mae;
        total.train_seconds += m.train_seconds;
        total.predict_seconds += m.predict_seconds;
    }
    let k = repeats as f64;
    Ok(Metrics {
        mse: total.mse / k,
        mae: total.mae / k,
        train_seconds: total.train_seconds / k,
        predict_seconds: total.predict_seconds / k,
    })
}

/// Train and evaluate every grid point. Rows run one after another so the
/// recorded timings are not inflated by each other; each fit is itself
/// parallel.
pub fn sweep(train: &Dataset, test: &Dataset, grid: &SweepGrid, base_seed: u64) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    sweep_configs(train, test, grid.configs(base_seed), grid.repeats)
}

/// As [`sweep`], over an explicit list of configurations used as given.
pub fn sweep_configs(
    train: &Dataset,
    test: &Dataset,
    configs: Vec<TrainConfig>,
    repeats: usize,
) -> Result<Vec<SweepRow>> {
    if configs.is_empty() {
        return Err(Error::Argument("no configurations to sweep".into()));
    }
    if repeats == 0 {
        return Err(Error::Argument("sweep repeats must be at least 1".into()));
    }
    Ok(configs
        .into_iter()
        .map(|config| match run_config(train, test, &config, repeats) {
            Ok(m) => SweepRow {
                config,
                metrics: Some(m),
                error: None,
            },
            Err(e) => SweepRow {
                config,
                metrics: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Lowest-MSE successful row; ties go to the earliest row in grid order.
pub fn select_best(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .filter_map(|r| r.metrics.map(|m| (r, m.mse)))
        .fold(None, |best: Option<(&SweepRow, f64)>, (r, mse)| match best {
            Some((_, b)) if b <= mse => best,
            _ => Some((r, mse)),
        })
        .map(|(r, _)| r)
}

/// Hold out `validation_fraction` of `train`, sweep on the rest, and return
/// the configuration of the best row.
pub fn select_by_validation(
    train: &Dataset,
    grid: &SweepGrid,
    validation_fraction: f64,
    base_seed: u64,
) -> Result<TrainConfig> {
    let (fit_part, valid) = split(train, 1.0 - validation_fraction, base_seed)?;
    let rows = sweep(&fit_part, &valid, grid, base_seed)?;
    select_best(&rows)
        .map(|r| r.config.clone())
        .ok_or_else(|| Error::Argument("no sweep row trained successfully".into()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn config_fields(c: &TrainConfig) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        c.iters,
        c.hists,
        c.depth,
        c.learning_rate,
        c.rotate,
        serde_plain(&c.split_rule),
        fmt_opt(c.clip),
        serde_plain(&c.oob_policy),
        c.seed
    )
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

const CONFIG_COLUMNS: &str = "iters,hists,depth,lr,rotate,split_rule,clip,oob_policy,seed";

/// Write sweep rows as CSV. Columns: the configuration
/// (`iters,hists,depth,lr,rotate,split_rule,clip,oob_policy,seed`), then
/// `mse,mae`, then `train_seconds,predict_seconds` when `timings` is set, then
/// `error`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W, timings: bool) -> std::io::Result<()> {
    write!(out, "{CONFIG_COLUMNS},mse,mae")?;
    if timings {
        write!(out, ",train_seconds,predict_seconds")?;
    }
    writeln!(out, ",error")?;
    for row in rows {
        write!(out, "{}", config_fields(&row.config))?;
        let m = row.metrics;
        write!(out, ",{},{}", fmt_opt(m.map(|m| m.mse)), fmt_opt(m.map(|m| m.mae)))?;
        if timings {
            write!(
                out,
                ",{},{}",
                fmt_opt(m.map(|m| m.train_seconds)),
                fmt_opt(m.map(|m| m.predict_seconds))
            )?;
        }
        let err = row.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(out, ",{err}")?;
    }
    Ok(())
}

/// Excess-risk estimates per method and sample size, with fitted log-log
/// slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub n_values: Vec<usize>,
    pub methods: Vec<TrainConfig>,
    /// `errors[m][i]`: mean excess risk of method `m` at `n_values[i]`.
    pub errors: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
    /// How many estimates were floored at [`ERROR_FLOOR`] before taking logs.
    pub floored: usize,
}

pub const ERROR_FLOOR: f64 = 1e-15;

/// Size of the noise-free test grid used by [`rate_study`].
pub const RATE_TEST_SIZE: usize = 100_000;

/// Ordinary least-squares slope of `log(errors)` on `log(n)`.
pub fn log_log_slope(n_values: &[usize], errors: &[f64]) -> Result<f64> {
    if n_values.len() != errors.len() {
        return Err(Error::Shape {
            expected: n_values.len(),
            got: errors.len(),
        });
    }
    if n_values.len() < 2 {
        return Err(Error::Argument("a slope needs at least two sample sizes".into()));
    }
    let xs: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Empirical convergence study on synthetic data.
///
/// For each `n` and repeat, a training set is drawn from `template` (with
/// `n` samples) and every method is fit to it. The excess risk is the mean
/// squared distance between the model and the true regression function on a
/// noise-free test set of `test_size` points.
pub fn rate_study(
    template: &SynthSpec,
    n_values: &[usize],
    methods: &[TrainConfig],
    repeats: usize,
    test_size: usize,
) -> Result<RateReport> {
    template.validate()?;
    if n_values.len() < 2 || n_values.windows(2).any(|w| w[0] >= w[1]) || n_values[0] == 0 {
        return Err(Error::Argument(
            "n values must be positive, strictly increasing and at least two".into(),
        ));
    }
    if methods.is_empty() {
        return Err(Error::Argument("no methods given".into()));
    }
    if repeats == 0 || test_size == 0 {
        return Err(Error::Argument("repeats and test size must be positive".into()));
    }
    for m in methods {
        m.validate()?;
    }

    let test = synth(&SynthSpec {
        n: test_size,
        noise_sigma: 0.0,
        seed: derive_seed(template.seed, &[u64::MAX]),
        ..template.clone()
    })?;

    let cells: Vec<(usize, usize)> = (0..n_values.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(i, r)| {
            let n = n_values[i];
            let train = synth(&SynthSpec {
                n,
                seed: derive_seed(template.seed, &[n as u64, r as u64]),
                ..template.clone()
            })?;
            methods
                .iter()
                .map(|m| {
                    let config = TrainConfig {
                        seed: derive_seed(m.seed, &[n as u64, r as u64]),
                        ..m.clone()
                    };
                    let model = fit(&train, &config)?;
                    let y_hat = model.predict_batch(test.x())?;
                    error_metrics(test.y(), &y_hat).map(|(mse, _)| mse)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let mut errors = vec![vec![0.0; n_values.len()]; methods.len()];
    for (&(i, _), per_method) in cells.iter().zip(&results) {
        for (m, e) in per_method.iter().enumerate() {
            errors[m][i] += e / repeats as f64;
        }
    }
    let mut floored = 0;
    for e in errors.iter_mut().flatten() {
        if *e < ERROR_FLOOR {
            *e = ERROR_FLOOR;
            floored += 1;
        }
    }
    let slopes = errors
        .iter()
        .map(|e| log_log_slope(n_values, e))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RateReport {
        n_values: n_values.to_vec(),
        methods: methods.to_vec(),
        errors,
        slopes,
        floored,
    })
}

/// Write a rate report as CSV, one row per (method, n). Columns:
/// `method,iters,hists,depth,lr,rotate,split_rule,clip,oob_policy,seed,n,excess_risk,slope`.
pub fn write_rate_csv<W: Write>(report: &RateReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "method,{CONFIG_COLUMNS},n,excess_risk,slope")?;
    for (m, config) in report.methods.iter().enumerate() {
        for (i, &n) in report.n_values.iter().enumerate() {
            writeln!(
                out,
                "{m},{},{n},{},{}",
                config_fields(config),
                report.errors[m][i],
                report.slopes[m]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Generator;
    use crate::partition::SplitRule;
    use ndarray::array;

    #[test]
    fn metric_examples() {
        assert_eq!(error_metrics(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(error_metrics(&[0.0], &[2.0]).unwrap(), (4.0, 2.0));
        assert_eq!(error_metrics(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), (1.0, 1.0));
        assert!(matches!(error_metrics(&[], &[]), Err(Error::EmptyData)));
    }

    #[test]
    fn inverse_n_gives_slope_minus_one() {
        let ns = [512, 1024, 2048, 4096, 8192, 16384];
        let errs: Vec<f64> = ns.iter().map(|&n| 3.7 / n as f64).collect();
        assert!((log_log_slope(&ns, &errs).unwrap() + 1.0).abs() <= 1e-9);
    }

    fn small_grid() -> SweepGrid {
        SweepGrid {
            iters: vec![2, 4],
            hists: vec![2],
            depth: vec![3],
            learning_rate: vec![0.1, 0.5, 1.0],
            rotate: vec![false],
            base: TrainConfig::default(),
            repeats: 1,
        }
    }

    #[test]
    fn sweep_cardinality_and_determinism() {
        let data = synth(&SynthSpec { generator: Generator::Linear, n: 400, d: 2, noise_sigma: 0.1, seed: 1 }).unwrap();
        let (train, test) = split(&data, 0.7, 0).unwrap();
        let a = sweep(&train, &test, &small_grid(), 9).unwrap();
        let b = sweep(&train, &test, &small_grid(), 9).unwrap();
        assert_eq!(a.len(), 6);
        let strip = |rows: &[SweepRow]| -> Vec<(TrainConfig, f64, f64)> {
            rows.iter()
                .map(|r| (r.config.clone(), r.metrics.unwrap().mse, r.metrics.unwrap().mae))
                .collect()
        };
        assert_eq!(strip(&a), strip(&b));
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_sweep_csv(&a, &mut csv_a, false).unwrap();
        write_sweep_csv(&b, &mut csv_b, false).unwrap();
        assert_eq!(csv_a, csv_b);
        assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 7);
    }

    #[test]
    fn sweep_rows_record_errors() {
        let train = Dataset::new(array![[0.0], [1.0]], vec![0.0, 1.0], None).unwrap();
        let grid = SweepGrid { learning_rate: vec![2.0, 0.5], ..small_grid() };
        let rows = sweep(&train, &train, &grid, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].error.is_some() && rows[0].metrics.is_none());
        assert!(rows[1].metrics.is_some());
        assert!(std::ptr::eq(select_best(&rows).unwrap(), select_best(&rows[..]).unwrap()));
        assert!(select_best(&rows).unwrap().metrics.is_some());
    }

    #[test]
    fn select_best_prefers_first_tie() {
        let row = |mse: f64, seed: u64| SweepRow {
            config: TrainConfig { seed, ..TrainConfig::default() },
            metrics: Some(Metrics { mse, ..Metrics::default() }),
            error: None,
        };
        let rows = vec![row(2.0, 0), row(1.0, 1), row(1.0, 2), row(3.0, 3)];
        assert_eq!(select_best(&rows).unwrap().config.seed, 1);
        assert!(select_best(&[]).is_none());
    }

    #[test]
    fn rate_study_rejects_bad_inputs() {
        let spec = SynthSpec { generator: Generator::Linear, n: 1, d: 2, noise_sigma: 0.1, seed: 0 };
        let m = [TrainConfig { iters: 1, hists: 1, depth: 2, split_rule: SplitRule::Midpoint, ..TrainConfig::default() }];
        assert!(rate_study(&spec, &[100], &m, 1, 100).is_err());
        assert!(rate_study(&spec, &[200, 100], &m, 1, 100).is_err());
        assert!(rate_study(&spec, &[100, 200], &[], 1, 100).is_err());
        let report = rate_study(&spec, &[100, 200], &m, 1, 500).unwrap();
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].len(), 2);
        assert!(report.errors[0].iter().all(|&e| e > 0.0));
    }
}
