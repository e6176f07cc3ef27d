//! Gradient boosted binary histogram ensembles for regression.
//!
//! The model is built from three layers:
//!
//! * [`rotation`]: uniformly random rotations `H(x) = R x` of the input space;
//! * [`partition`] and [`learner`]: a depth-`p` binary histogram over the
//!   rotated space with one constant per cell;
//! * [`boosting`]: `T` stages of least-squares gradient boosting where each
//!   stage averages `K` independently randomised histograms.
//!
//! [`data`], [`eval`] and [`persist`] provide loading, scaling, metrics,
//! parameter sweeps, convergence-rate studies and model files; [`cli`] wires
//! them into the `gbbhe` command.
//!
//! ```
//! use gbbhe::boosting::{fit, TrainConfig};
//! use gbbhe::data::{synth, Generator, SynthSpec};
//!
//! let data = synth(&SynthSpec { generator: Generator::SmoothSine, n: 2000, d: 3, noise_sigma: 0.1, seed: 1 })?;
//! let config = TrainConfig { iters: 20, hists: 5, depth: 5, ..TrainConfig::default() };
//! let model = fit(&data, &config)?;
//! let y_hat = model.predict(&[0.1, -0.2, 0.3])?;
//! assert!(y_hat.is_finite());
//! # Ok::<(), gbbhe::Error>(())
//! ```

pub mod boosting;
pub mod cli;
pub mod data;
mod error;
pub mod eval;
pub mod learner;
pub mod partition;
pub mod persist;
pub mod rng;
pub mod rotation;

pub use boosting::{fit, train, GbbheModel, TrainConfig};
pub use data::{Dataset, ScalingParams};
pub use error::{Error, Result};
pub use learner::{BinaryHistogramRegressor, OobPolicy};
pub use partition::{Cell, PartitionTree, SplitRule};
pub use rotation::RotationMatrix;

// The guide's code blocks are compiled and run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/rotation.md")]
    struct Rotation;
    #[doc = include_str!("../../../book/src/partition.md")]
    struct Partition;
    #[doc = include_str!("../../../book/src/base-learner.md")]
    struct BaseLearner;
    #[doc = include_str!("../../../book/src/boosting.md")]
    struct Boosting;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/persistence.md")]
    struct Persistence;
}
