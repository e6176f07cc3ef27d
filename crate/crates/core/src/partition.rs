//! Binary histogram partitions.
//!
//! A partition of depth `p` is a complete binary tree: each of the `2^i` cells
//! at level `i` is split once along a coordinate drawn uniformly at random,
//! giving `2^p` leaf cells. Internal nodes are stored in level order (children
//! of node `i` are `2i + 1` and `2i + 2`), so a leaf identifier is simply the
//! `p`-bit root-to-leaf path with `0` meaning "left".
//!
//! The left child of a node is closed: a point with `x[dim] == threshold`
//! goes left.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Cell {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if lower.iter().chain(&upper).any(|v| !v.is_finite()) {
            return Err(Error::Data("cell bounds must be finite".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::Data("cell lower bound exceeds upper bound".into()));
        }
        Ok(Cell { lower, upper })
    }

    /// The cube `[-r, r]^d`.
    pub fn cube(dim: usize, r: f64) -> Result<Self> {
        Cell::new(vec![-r; dim], vec![r; dim])
    }

    /// Tight bounding box of the rows of `points`, widened on each side by a
    /// relative slack of `1e-12` of the extent (or of 1 for flat extents).
    pub fn bounding(points: ArrayView2<'_, f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyData);
        }
        let d = points.ncols();
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for row in points.rows() {
            for (j, &v) in row.iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        for j in 0..d {
            let slack = 1e-12 * (upper[j] - lower[j]).max(1.0);
            lower[j] -= slack;
            upper[j] += slack;
        }
        Cell::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Inclusive membership test on every face.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Coordinatewise projection of `x` onto the box.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }
}

/// How the threshold of a split is chosen once its coordinate is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Geometric midpoint of the cell along the coordinate.
    Midpoint,
    /// Mean of the in-cell sample coordinates, falling back to the midpoint
    /// when the cell holds no samples or they all share one value.
    #[serde(rename = "mean")]
    DataMean,
}

impl std::str::FromStr for SplitRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(SplitRule::Midpoint),
            "mean" | "data_mean" => Ok(SplitRule::DataMean),
            other => Err(Error::Argument(format!("unknown split rule {other:?}"))),
        }
    }
}

/// Complete binary tree of depth `p` over a root cell.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionTree {
    depth: u32,
    root: Cell,
    split_dims: Vec<usize>,
    split_thresholds: Vec<f64>,
}

/// Number of leaves of a depth-`p` tree, or a capacity error.
pub(crate) fn leaf_count(depth: u32) -> Result<usize> {
    let max_len = isize::MAX as usize / std::mem::size_of::<f64>();
    match 1usize.checked_shl(depth) {
        Some(n) if depth < usize::BITS && n <= max_len => Ok(n),
        _ => Err(Error::Capacity(depth)),
    }
}

fn alloc<T: Clone>(len: usize, fill: T, depth: u32) -> Result<Vec<T>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| Error::Capacity(depth))?;
    v.resize(len, fill);
    Ok(v)
}

/// Marker for rows outside the root cell in a leaf assignment.
pub(crate) const OUTSIDE: u32 = u32::MAX;

/// Build a depth-`depth` partition of `root` from the rows of `points`.
///
/// Rows outside `root` are ignored when computing data-mean thresholds.
pub fn build_partition<R: Rng + ?Sized>(
    points: ArrayView2<'_, f64>,
    depth: u32,
    rule: SplitRule,
    root: &Cell,
    rng: &mut R,
) -> Result<PartitionTree> {
    build_assigned(points, depth, rule, root, rng).map(|(tree, _)| tree)
}

/// Build a partition and return, for every row of `points`, its leaf
/// identifier (or [`OUTSIDE`]).
pub(crate) fn build_assigned<R: Rng + ?Sized>(
    points: ArrayView2<'_, f64>,
    depth: u32,
    rule: SplitRule,
    root: &Cell,
    rng: &mut R,
) -> Result<(PartitionTree, Vec<u32>)> {
    let d = root.dim();
    if points.ncols() != d {
        return Err(Error::Shape {
            expected: d,
            got: points.ncols(),
        });
    }
    let n_leaves = leaf_count(depth)?;
    if depth > 31 && points.nrows() > 0 {
        // leaf ids are stored as u32 in assignments
        return Err(Error::Capacity(depth));
    }
    let mut split_dims = alloc(n_leaves - 1, 0usize, depth)?;
    let mut split_thresholds = alloc(n_leaves - 1, 0.0f64, depth)?;

    let mut order: Vec<usize> = (0..points.nrows())
        .filter(|&i| {
            points
                .row(i)
                .iter()
                .zip(root.lower.iter().zip(&root.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
        })
        .collect();
    let mut scratch = Vec::with_capacity(order.len());

    // cells and row ranges of the current level, in level order
    let mut cells = vec![root.clone()];
    let mut ranges = vec![(0usize, order.len())];

    for level in 0..depth {
        let first = (1usize << level) - 1;
        let mut next_cells = Vec::with_capacity(cells.len() * 2);
        let mut next_ranges = Vec::with_capacity(ranges.len() * 2);
        for (j, (cell, &(start, end))) in cells.iter().zip(&ranges).enumerate() {
            let dim = rng.random_range(0..d);
            let (lo, hi) = (cell.lower[dim], cell.upper[dim]);
            let midpoint = 0.5 * (lo + hi);
            let slice = &mut order[start..end];
            let threshold = match rule {
                SplitRule::Midpoint => midpoint,
                SplitRule::DataMean => data_mean(points, slice, dim).unwrap_or(midpoint),
            };
            split_dims[first + j] = dim;
            split_thresholds[first + j] = threshold;

            let n_left = stable_partition(slice, &mut scratch, |i| points[[i, dim]] <= threshold);

            let mut left = cell.clone();
            left.upper[dim] = threshold;
            let mut right = cell.clone();
            right.lower[dim] = threshold;
            next_cells.push(left);
            next_cells.push(right);
            next_ranges.push((start, start + n_left));
            next_ranges.push((start + n_left, end));
        }
        cells = next_cells;
        ranges = next_ranges;
    }

    let mut assignment = vec![OUTSIDE; points.nrows()];
    for (leaf, &(start, end)) in ranges.iter().enumerate() {
        for &i in &order[start..end] {
            assignment[i] = leaf as u32;
        }
    }

    let tree = PartitionTree {
        depth,
        root: root.clone(),
        split_dims,
        split_thresholds,
    };
    Ok((tree, assignment))
}

/// Mean of `points[rows, dim]`, or `None` if there are no rows or all values
/// coincide.
fn data_mean(points: ArrayView2<'_, f64>, rows: &[usize], dim: usize) -> Option<f64> {
    let first = points[[*rows.first()?, dim]];
    let mut sum = 0.0;
    let mut distinct = false;
    for &i in rows {
        let v = points[[i, dim]];
        distinct |= v != first;
        sum += v;
    }
    distinct.then(|| sum / rows.len() as f64)
}

/// Reorder `slice` so that elements satisfying `pred` come first, keeping the
/// relative order inside both groups. Returns the size of the first group.
fn stable_partition(
    slice: &mut [usize],
    scratch: &mut Vec<usize>,
    pred: impl Fn(usize) -> bool,
) -> usize {
    scratch.clear();
    let mut write = 0;
    for read in 0..slice.len() {
        let i = slice[read];
        if pred(i) {
            slice[write] = i;
            write += 1;
        } else {
            scratch.push(i);
        }
    }
    slice[write..].copy_from_slice(scratch);
    write
}

impl PartitionTree {
    /// Assemble a tree from stored parts, validating every invariant.
    pub fn from_parts(
        depth: u32,
        root: Cell,
        split_dims: Vec<usize>,
        split_thresholds: Vec<f64>,
    ) -> Result<Self> {
        let n_internal = leaf_count(depth)? - 1;
        if split_dims.len() != n_internal {
            return Err(Error::Shape {
                expected: n_internal,
                got: split_dims.len(),
            });
        }
        if split_thresholds.len() != n_internal {
            return Err(Error::Shape {
                expected: n_internal,
                got: split_thresholds.len(),
            });
        }
        let tree = PartitionTree {
            depth,
            root,
            split_dims,
            split_thresholds,
        };
        tree.check_nodes()?;
        Ok(tree)
    }

    fn check_nodes(&self) -> Result<()> {
        let d = self.root.dim();
        let mut cells = vec![self.root.clone()];
        for level in 0..self.depth {
            let first = (1usize << level) - 1;
            let mut next = Vec::with_capacity(cells.len() * 2);
            for (j, cell) in cells.into_iter().enumerate() {
                let node = first + j;
                let dim = self.split_dims[node];
                let t = self.split_thresholds[node];
                if dim >= d {
                    return Err(Error::Data(format!(
                        "node {node}: split dimension {dim} out of range"
                    )));
                }
                if !(cell.lower[dim] <= t && t <= cell.upper[dim]) {
                    return Err(Error::Data(format!(
                        "node {node}: threshold {t} outside its cell"
                    )));
                }
                let mut left = cell.clone();
                left.upper[dim] = t;
                let mut right = cell;
                right.lower[dim] = t;
                next.push(left);
                next.push(right);
            }
            cells = next;
        }
        Ok(())
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.root.dim()
    }

    pub fn root(&self) -> &Cell {
        &self.root
    }

    pub fn split_dims(&self) -> &[usize] {
        &self.split_dims
    }

    pub fn split_thresholds(&self) -> &[f64] {
        &self.split_thresholds
    }

    pub fn n_leaves(&self) -> usize {
        self.split_dims.len() + 1
    }

    /// Leaf containing `x`, or `None` when `x` lies outside the root cell.
    pub fn leaf_index(&self, x: &[f64]) -> Result<Option<usize>> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.root.contains(x).then(|| self.descend(x)))
    }

    /// Walk from the root to a leaf without checking the root box.
    pub(crate) fn descend(&self, x: &[f64]) -> usize {
        let mut node = 0;
        for _ in 0..self.depth {
            let go_right = x[self.split_dims[node]] > self.split_thresholds[node];
            node = 2 * node + 1 + go_right as usize;
        }
        node - self.split_dims.len()
    }

    /// All leaf cells in leaf-identifier order.
    pub fn leaf_boxes(&self) -> Vec<Cell> {
        let mut cells = vec![self.root.clone()];
        for level in 0..self.depth {
            let first = (1usize << level) - 1;
            cells = cells
                .into_iter()
                .enumerate()
                .flat_map(|(j, cell)| {
                    let dim = self.split_dims[first + j];
                    let t = self.split_thresholds[first + j];
                    let mut left = cell.clone();
                    left.upper[dim] = t;
                    let mut right = cell;
                    right.lower[dim] = t;
                    [left, right]
                })
                .collect();
        }
        cells
    }

    /// Number of splits along each coordinate on the path to `leaf`.
    pub fn path_split_counts(&self, leaf: usize) -> Vec<u32> {
        let mut counts = vec![0; self.dim()];
        let mut node = 0;
        for level in (0..self.depth).rev() {
            counts[self.split_dims[node]] += 1;
            node = 2 * node + 1 + ((leaf >> level) & 1);
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::{array, Array2};

    /// Always yields zero, so every split draws the first coordinate.
    struct FirstDim;

    impl rand::RngCore for FirstDim {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn empty(d: usize) -> Array2<f64> {
        Array2::zeros((0, d))
    }

    #[test]
    fn depth_zero_is_root() {
        let root = Cell::cube(2, 1.0).unwrap();
        let tree = build_partition(empty(2).view(), 0, SplitRule::Midpoint, &root, &mut stream(1))
            .unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert_eq!(tree.leaf_boxes(), vec![root]);
    }

    #[test]
    fn midpoint_depth_two_quarters_volume() {
        let r = 1.5;
        let root = Cell::cube(2, r).unwrap();
        let tree = build_partition(empty(2).view(), 2, SplitRule::Midpoint, &root, &mut stream(3))
            .unwrap();
        let boxes = tree.leaf_boxes();
        assert_eq!(boxes.len(), 4);
        for b in &boxes {
            assert!((b.volume() - (2.0 * r) * (2.0 * r) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn data_mean_threshold() {
        let points = array![[0.1, 0.9], [0.9, 0.1], [0.2, 0.2]];
        let root = Cell::cube(2, 1.0).unwrap();
        let root = Cell::new(vec![0.0; 2], root.upper().to_vec()).unwrap();
        let tree = build_partition(points.view(), 1, SplitRule::DataMean, &root, &mut FirstDim)
            .unwrap();
        assert_eq!(tree.split_dims(), &[0]);
        let expected = (0.1 + 0.9 + 0.2) / 3.0;
        assert_eq!(tree.split_thresholds()[0], expected);
        assert!((expected - 0.4).abs() < 1e-15);
    }

    #[test]
    fn data_mean_falls_back_to_midpoint() {
        let points = array![[0.3], [0.3]];
        let root = Cell::new(vec![0.0], vec![1.0]).unwrap();
        let tree = build_partition(points.view(), 2, SplitRule::DataMean, &root, &mut stream(0))
            .unwrap();
        // every node degenerates: constant coordinates at the root, empty or
        // constant cells below
        assert_eq!(tree.split_thresholds(), &[0.5, 0.25, 0.75]);
    }

    fn one_split_tree() -> PartitionTree {
        PartitionTree::from_parts(1, Cell::cube(1, 1.0).unwrap(), vec![0], vec![0.0]).unwrap()
    }

    #[test]
    fn leaf_lookup_convention() {
        let tree = one_split_tree();
        assert_eq!(tree.leaf_index(&[-0.5]).unwrap(), Some(0));
        assert_eq!(tree.leaf_index(&[0.5]).unwrap(), Some(1));
        assert_eq!(tree.leaf_index(&[0.0]).unwrap(), Some(0));
        assert_eq!(tree.leaf_index(&[2.0]).unwrap(), None);
        assert_eq!(tree.leaf_index(&[1.0]).unwrap(), Some(1));
        assert_eq!(tree.leaf_index(&[-1.0]).unwrap(), Some(0));
        assert!(matches!(tree.leaf_index(&[0.0, 1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn from_parts_rejects_bad_trees() {
        let root = Cell::cube(1, 1.0).unwrap();
        assert!(PartitionTree::from_parts(1, root.clone(), vec![0], vec![3.0]).is_err());
        assert!(PartitionTree::from_parts(1, root.clone(), vec![1], vec![0.0]).is_err());
        assert!(PartitionTree::from_parts(2, root, vec![0], vec![0.0]).is_err());
    }

    #[test]
    fn huge_depth_is_a_capacity_error() {
        let root = Cell::cube(1, 1.0).unwrap();
        assert!(matches!(
            build_partition(empty(1).view(), 64, SplitRule::Midpoint, &root, &mut stream(0)),
            Err(Error::Capacity(64))
        ));
        assert!(matches!(
            build_partition(empty(1).view(), 62, SplitRule::Midpoint, &root, &mut stream(0)),
            Err(Error::Capacity(62))
        ));
    }

    #[test]
    fn path_counts_sum_to_depth() {
        let root = Cell::cube(4, 1.0).unwrap();
        let tree = build_partition(empty(4).view(), 7, SplitRule::Midpoint, &root, &mut stream(9))
            .unwrap();
        for leaf in 0..tree.n_leaves() {
            assert_eq!(tree.path_split_counts(leaf).iter().sum::<u32>(), 7);
        }
    }

    #[test]
    fn assignment_matches_lookup() {
        let mut rng = stream(5);
        let points = Array2::from_shape_simple_fn((200, 3), || rng.random_range(-1.0..1.0));
        let root = Cell::bounding(points.view()).unwrap();
        let (tree, assigned) =
            build_assigned(points.view(), 5, SplitRule::DataMean, &root, &mut stream(8)).unwrap();
        for (i, row) in points.rows().into_iter().enumerate() {
            let leaf = tree.leaf_index(row.as_slice().unwrap()).unwrap().unwrap();
            assert_eq!(assigned[i] as usize, leaf);
        }
    }
}
