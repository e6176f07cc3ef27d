//! The binary histogram regressor: a rotation, a partition of the rotated
//! space, and one constant per leaf.

use ndarray::{ArrayView2, CowArray};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{build_assigned, Cell, PartitionTree, SplitRule, OUTSIDE};
use crate::rotation::RotationMatrix;

/// Behaviour for points whose rotated image falls outside the root cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OobPolicy {
    /// Predict exactly zero.
    Zero,
    /// Project onto the root cell and use the leaf reached there.
    #[default]
    Clamp,
}

impl std::str::FromStr for OobPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(OobPolicy::Zero),
            "clamp" => Ok(OobPolicy::Clamp),
            other => Err(Error::Argument(format!("unknown out-of-box policy {other:?}"))),
        }
    }
}

/// Where the partition's root cell comes from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum RootCell {
    /// Bounding box of the rotated training points.
    #[default]
    Bounding,
    /// A fixed cell in the rotated space, e.g. `[-r, r]^d`.
    Fixed(Cell),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseParams {
    pub depth: u32,
    pub rule: SplitRule,
    pub root: RootCell,
    pub oob_policy: OobPolicy,
}

impl Default for BaseParams {
    fn default() -> Self {
        BaseParams {
            depth: 8,
            rule: SplitRule::DataMean,
            root: RootCell::Bounding,
            oob_policy: OobPolicy::Clamp,
        }
    }
}

/// Piecewise-constant regressor over a (rotated) binary histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryHistogramRegressor {
    rotation: RotationMatrix,
    tree: PartitionTree,
    leaf_values: Vec<f64>,
    oob_policy: OobPolicy,
}

/// Least-squares fit of a binary histogram regressor to `(x, u)`.
///
/// Each leaf takes the mean of the targets that land in it, or zero when
/// no sample does.
pub fn fit_base<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    u: &[f64],
    params: &BaseParams,
    rotation: RotationMatrix,
    rng: &mut R,
) -> Result<BinaryHistogramRegressor> {
    fit_with_fitted_values(x, u, params, rotation, rng).map(|(f, _)| f)
}

/// As [`fit_base`], also returning the regressor's value at every training row.
pub(crate) fn fit_with_fitted_values<R: Rng + ?Sized>(
    x: ArrayView2<'_, f64>,
    u: &[f64],
    params: &BaseParams,
    rotation: RotationMatrix,
    rng: &mut R,
) -> Result<(BinaryHistogramRegressor, Vec<f64>)> {
    if x.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if u.len() != x.nrows() {
        return Err(Error::Shape {
            expected: x.nrows(),
            got: u.len(),
        });
    }
    if rotation.dim() != x.ncols() {
        return Err(Error::Shape {
            expected: x.ncols(),
            got: rotation.dim(),
        });
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite target at row {i}")));
    }

    let rotated: CowArray<'_, f64, _> = if rotation.is_identity() {
        x.into()
    } else {
        rotation.apply_rows(x)?.into()
    };
    let root = match &params.root {
        RootCell::Bounding => Cell::bounding(rotated.view())?,
        RootCell::Fixed(cell) => cell.clone(),
    };
    let (tree, assignment) = build_assigned(rotated.view(), params.depth, params.rule, &root, rng)?;

    let mut sums = vec![0.0; tree.n_leaves()];
    let mut counts = vec![0usize; tree.n_leaves()];
    for (&leaf, &target) in assignment.iter().zip(u) {
        if leaf != OUTSIDE {
            sums[leaf as usize] += target;
            counts[leaf as usize] += 1;
        }
    }
    let leaf_values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();

    let learner = BinaryHistogramRegressor {
        rotation,
        tree,
        leaf_values,
        oob_policy: params.oob_policy,
    };
    let fitted = assignment
        .iter()
        .zip(rotated.rows())
        .map(|(&leaf, row)| {
            if leaf == OUTSIDE {
                learner.value_at_rotated(&row.to_vec())
            } else {
                learner.leaf_values[leaf as usize]
            }
        })
        .collect();
    Ok((learner, fitted))
}

impl BinaryHistogramRegressor {
    /// Assemble from stored parts, validating every invariant.
    pub fn from_parts(
        rotation: RotationMatrix,
        tree: PartitionTree,
        leaf_values: Vec<f64>,
        oob_policy: OobPolicy,
    ) -> Result<Self> {
        if rotation.dim() != tree.dim() {
            return Err(Error::Shape {
                expected: tree.dim(),
                got: rotation.dim(),
            });
        }
        if leaf_values.len() != tree.n_leaves() {
            return Err(Error::Shape {
                expected: tree.n_leaves(),
                got: leaf_values.len(),
            });
        }
        if leaf_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite leaf value".into()));
        }
        Ok(BinaryHistogramRegressor {
            rotation,
            tree,
            leaf_values,
            oob_policy,
        })
    }

    pub fn rotation(&self) -> &RotationMatrix {
        &self.rotation
    }

    pub fn tree(&self) -> &PartitionTree {
        &self.tree
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.leaf_values
    }

    pub fn oob_policy(&self) -> OobPolicy {
        self.oob_policy
    }

    pub fn dim(&self) -> usize {
        self.rotation.dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut buf = vec![0.0; x.len()];
        Ok(self.predict_with(x, &mut buf))
    }

    /// Prediction using `buf` as scratch space for the rotated point.
    pub(crate) fn predict_with(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.rotation.apply_into(x, buf);
        self.value_at_rotated(buf)
    }

    fn value_at_rotated(&self, z: &[f64]) -> f64 {
        let root = self.tree.root();
        if root.contains(z) {
            self.leaf_values[self.tree.descend(z)]
        } else {
            match self.oob_policy {
                OobPolicy::Zero => 0.0,
                OobPolicy::Clamp => self.leaf_values[self.tree.descend(&root.project(z))],
            }
        }
    }
}
