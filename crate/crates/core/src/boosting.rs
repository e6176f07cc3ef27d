//! Gradient boosting over ensembles of binary histograms.
//!
//! Training keeps the residuals `U_i = y_i - F_t(x_i)`. At stage `t` it fits
//! `K` independently randomised histograms to `U`, averages them into
//! `f_t = (1/K) sum_k f_t^k`, and updates `F_t = F_{t-1} + rho f_t`, so
//! `U_i <- U_i - rho f_t(x_i)`. With `K = 1` this is plain boosting of single
//! histograms.

use std::time::Instant;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fit_scaler, Dataset, ScalingParams};
use crate::error::{Error, Result};
use crate::learner::{fit_with_fitted_values, BaseParams, BinaryHistogramRegressor, OobPolicy, RootCell};
use crate::partition::{leaf_count, Cell, SplitRule};
use crate::rng::{derive_stream, Stream};
use crate::rotation::RotationMatrix;

/// Hyperparameters of a boosted histogram ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Boosting stages `T`.
    pub iters: usize,
    /// Histograms averaged per stage `K`.
    pub hists: usize,
    /// Histogram depth `p`; each histogram has `2^p` cells.
    pub depth: u32,
    /// Shrinkage `rho` in `(0, 1]`.
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    /// Draw a random rotation per histogram (identity otherwise).
    pub rotate: bool,
    pub split_rule: SplitRule,
    pub seed: u64,
    /// Clip final predictions into `[-clip, clip]`.
    pub clip: Option<f64>,
    pub oob_policy: OobPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 100,
            hists: 100,
            depth: 8,
            learning_rate: 0.1,
            rotate: true,
            split_rule: SplitRule::DataMean,
            seed: 0,
            clip: None,
            oob_policy: OobPolicy::Clamp,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Argument("iters must be at least 1".into()));
        }
        if self.hists == 0 {
            return Err(Error::Argument("hists must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Argument(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if let Some(m) = self.clip {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Argument(format!("clip bound must be positive, got {m}")));
            }
        }
        leaf_count(self.depth)?;
        Ok(())
    }

    fn base_params(&self) -> BaseParams {
        BaseParams {
            depth: self.depth,
            rule: self.split_rule,
            root: RootCell::Bounding,
            oob_policy: self.oob_policy,
        }
    }
}

/// A trained boosted ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct GbbheModel {
    config: TrainConfig,
    scaler: ScalingParams,
    stages: Vec<Vec<BinaryHistogramRegressor>>,
    training_curve: Vec<f64>,
    train_seconds: Option<f64>,
}

/// Min-max scale `data` and train on the scaled features. The scaler is kept
/// on the model, so [`GbbheModel::predict`] takes raw features.
pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<GbbheModel> {
    let scaler = fit_scaler(data)?;
    let x = scaler.apply(data.x())?;
    let mut model = train(x.view(), data.y(), config)?;
    model.scaler = scaler;
    Ok(model)
}

/// Train on features that are already scaled; the model's scaler is the
/// identity.
pub fn train(x: ArrayView2<'_, f64>, y: &[f64], config: &TrainConfig) -> Result<GbbheModel> {
    train_with_streams(x, y, config, |seed, t, k| {
        derive_stream(seed, &[t as u64, k as u64])
    })
}

/// Training loop with the random stream of learner `(t, k)` supplied by
/// `streams(seed, t, k)`.
pub(crate) fn train_with_streams<F>(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    config: &TrainConfig,
    streams: F,
) -> Result<GbbheModel>
where
    F: Fn(u64, usize, usize) -> Stream + Sync,
{
    config.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if y.len() != x.nrows() {
        return Err(Error::Shape {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite target at row {i}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let start = Instant::now();
    let (n, d) = x.dim();
    let mut params = config.base_params();
    if !config.rotate {
        // every learner partitions the same unrotated points
        params.root = RootCell::Fixed(Cell::bounding(x)?);
    }
    let rho = config.learning_rate;
    let k_inv = config.hists as f64;

    let mut residuals = y.to_vec();
    let mut stages = Vec::with_capacity(config.iters);
    let mut training_curve = Vec::with_capacity(config.iters);

    for t in 0..config.iters {
        let fits = (0..config.hists)
            .into_par_iter()
            .map(|k| {
                let mut rng = streams(config.seed, t, k);
                let rotation = if config.rotate {
                    RotationMatrix::sample(d, &mut rng)?
                } else {
                    RotationMatrix::identity(d)?
                };
                fit_with_fitted_values(x, &residuals, &params, rotation, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stage_sum = vec![0.0; n];
        for (_, fitted) in &fits {
            stage_sum.iter_mut().zip(fitted).for_each(|(s, v)| *s += v);
        }
        for (u, s) in residuals.iter_mut().zip(&stage_sum) {
            *u -= rho * (s / k_inv);
        }
        training_curve.push(residuals.iter().map(|u| u * u).sum::<f64>() / n as f64);
        stages.push(fits.into_iter().map(|(f, _)| f).collect());
    }

    Ok(GbbheModel {
        config: config.clone(),
        scaler: ScalingParams::identity(d),
        stages,
        training_curve,
        train_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

impl GbbheModel {
    /// Assemble from stored parts, validating shapes.
    pub fn from_parts(
        config: TrainConfig,
        scaler: ScalingParams,
        stages: Vec<Vec<BinaryHistogramRegressor>>,
        training_curve: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        scaler.validate()?;
        if stages.len() != config.iters {
            return Err(Error::Shape {
                expected: config.iters,
                got: stages.len(),
            });
        }
        for stage in &stages {
            if stage.len() != config.hists {
                return Err(Error::Shape {
                    expected: config.hists,
                    got: stage.len(),
                });
            }
            for f in stage {
                if f.dim() != scaler.dim() {
                    return Err(Error::Shape {
                        expected: scaler.dim(),
                        got: f.dim(),
                    });
                }
                if f.tree().depth() != config.depth {
                    return Err(Error::Data("learner depth differs from config".into()));
                }
            }
        }
        if !training_curve.is_empty() && training_curve.len() != config.iters {
            return Err(Error::Shape {
                expected: config.iters,
                got: training_curve.len(),
            });
        }
        Ok(GbbheModel {
            config,
            scaler,
            stages,
            training_curve,
            train_seconds: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn scaler(&self) -> &ScalingParams {
        &self.scaler
    }

    pub fn stages(&self) -> &[Vec<BinaryHistogramRegressor>] {
        &self.stages
    }

    /// Training MSE after each stage.
    pub fn training_curve(&self) -> &[f64] {
        &self.training_curve
    }

    /// Wall-clock training time, when the model was trained in this process.
    pub fn train_seconds(&self) -> Option<f64> {
        self.train_seconds
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Per-stage averages `f_t(x)` at a raw point.
    fn stage_values(&self, x_raw: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let mut scaled = vec![0.0; x_raw.len()];
        self.scaler.apply_row_into(x_raw, &mut scaled);
        let mut buf = vec![0.0; x_raw.len()];
        let k = self.config.hists as f64;
        self.stages.iter().map(move |stage| {
            let sum: f64 = stage.iter().map(|f| f.predict_with(&scaled, &mut buf)).sum();
            sum / k
        })
    }

    fn clip(&self, v: f64) -> f64 {
        match self.config.clip {
            Some(m) => v.clamp(-m, m),
            None => v,
        }
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<f64> {
        self.check_dim(x_raw.len())?;
        let rho = self.config.learning_rate;
        let raw = self.stage_values(x_raw).fold(0.0, |acc, s| acc + rho * s);
        Ok(self.clip(raw))
    }

    /// Predict every row of `x_raw`, in parallel.
    pub fn predict_batch(&self, x_raw: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x_raw.ncols())?;
        Ok((0..x_raw.nrows())
            .into_par_iter()
            .map(|i| {
                let row = x_raw.row(i).to_vec();
                self.predict(&row).expect("dimension checked")
            })
            .collect())
    }

    /// MSE of the model truncated to stages `1..=t`, for every `t`.
    /// Clipping is applied to each truncated model when configured.
    pub fn staged_mse(&self, x_raw: ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x_raw.ncols())?;
        if y.len() != x_raw.nrows() {
            return Err(Error::Shape {
                expected: x_raw.nrows(),
                got: y.len(),
            });
        }
        if y.is_empty() {
            return Err(Error::EmptyData);
        }
        let rho = self.config.learning_rate;
        let per_row: Vec<Vec<f64>> = (0..y.len())
            .into_par_iter()
            .map(|i| {
                let row = x_raw.row(i).to_vec();
                let mut acc = 0.0;
                self.stage_values(&row)
                    .map(|s| {
                        acc += rho * s;
                        (y[i] - self.clip(acc)).powi(2)
                    })
                    .collect()
            })
            .collect();
        let n = y.len() as f64;
        Ok((0..self.stages.len())
            .map(|t| per_row.iter().map(|r| r[t]).sum::<f64>() / n)
            .collect())
    }
}
