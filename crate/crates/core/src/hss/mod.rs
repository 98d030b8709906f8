//! Hierarchically semiseparable (HSS) matrices.
//!
//! An HSS matrix is defined over a full binary tree that recursively splits
//! the row and column index ranges in lockstep. Leaves store their diagonal
//! block `D` densely together with orthonormal row/column bases `U`, `V` for
//! the off-diagonal content of their block row/column. A nonleaf node stores
//! the interaction blocks `B` between its two children and, unless it is the
//! root, translation blocks `R`, `W` that express its own (implicit) bases in
//! terms of the children's bases. This nesting makes matrix-vector products
//! and least-squares solves run in near-linear time while the dense matrix is
//! never formed.

pub mod compress;
pub mod io;

pub use compress::{
    blackbox_compress, blackbox_compress_with, compress_from_sources, minimum_samples,
    nullspace_projector, sample_seeds, BorrowedRows, CompressOptions, DenseOracle, GaussianRows,
    MatrixOracle, PartitionedRows, SampleSource,
};

use crate::dense::{CMat, C64};
use crate::rng::SeededRng;
use thiserror::Error;

/// Errors from HSS construction and evaluation.
#[derive(Debug, Error)]
pub enum HssError {
    #[error("dense reconstruction of a {rows}x{cols} matrix exceeds the cap {cap}")]
    SizeCap { rows: usize, cols: usize, cap: usize },
    #[error("{what}: expected {expected} rows/cols, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sample count {got} too small; need at least {needed}")]
    SampleCount { needed: usize, got: usize },
    #[error("nullspace projector needs {needed} columns, block has {got}")]
    NullspaceColumns { needed: usize, got: usize },
}

/// One node of the partition tree: contiguous row and column index ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
    pub level: usize,
    pub children: Option<(usize, usize)>,
    pub parent: Option<usize>,
}

impl TreeNode {
    pub fn num_rows(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn num_cols(&self) -> usize {
        self.col1 - self.col0
    }
}

/// Full binary partition tree over an `num_rows x num_cols` index grid.
///
/// Every node whose row count or column count exceeds `leaf_size` is split;
/// both ranges are halved together (the left child takes the ceiling), so row
/// and column counts shrink in lockstep even for tall matrices. Nodes are
/// stored in depth-first order with the root at index 0, which guarantees
/// that every child index is larger than its parent's index.
#[derive(Clone, Debug)]
pub struct HssTree {
    nodes: Vec<TreeNode>,
    num_rows: usize,
    num_cols: usize,
    leaf_size: usize,
}

impl HssTree {
    pub fn new(num_rows: usize, num_cols: usize, leaf_size: usize) -> Self {
        assert!(leaf_size >= 1, "leaf_size must be positive");
        assert!(num_rows >= 1 && num_cols >= 1, "matrix must be nonempty");
        let mut nodes = vec![TreeNode {
            row0: 0,
            row1: num_rows,
            col0: 0,
            col1: num_cols,
            level: 0,
            children: None,
            parent: None,
        }];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let (r0, r1, c0, c1, level) = {
                let n = &nodes[i];
                (n.row0, n.row1, n.col0, n.col1, n.level)
            };
            if r1 - r0 <= leaf_size && c1 - c0 <= leaf_size {
                continue;
            }
            let rm = r0 + (r1 - r0 + 1) / 2;
            let cm = c0 + (c1 - c0 + 1) / 2;
            let left = nodes.len();
            let right = left + 1;
            nodes.push(TreeNode {
                row0: r0,
                row1: rm,
                col0: c0,
                col1: cm,
                level: level + 1,
                children: None,
                parent: Some(i),
            });
            nodes.push(TreeNode {
                row0: rm,
                row1: r1,
                col0: cm,
                col1: c1,
                level: level + 1,
                children: None,
                parent: Some(i),
            });
            nodes[i].children = Some((left, right));
            stack.push(right);
            stack.push(left);
        }
        HssTree {
            nodes,
            num_rows,
            num_cols,
            leaf_size,
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].children.is_none()
    }

    pub fn children(&self, i: usize) -> Option<(usize, usize)> {
        self.nodes[i].children
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn num_levels(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| self.is_leaf(i))
    }

    /// Largest row count over the leaves.
    pub fn max_leaf_rows(&self) -> usize {
        self.leaves()
            .map(|i| self.nodes[i].num_rows())
            .max()
            .unwrap_or(0)
    }

    /// Largest column count over the leaves.
    pub fn max_leaf_cols(&self) -> usize {
        self.leaves()
            .map(|i| self.nodes[i].num_cols())
            .max()
            .unwrap_or(0)
    }
}

/// Per-node generator storage. Which fields are populated depends on the
/// node's role: leaves hold `d`, `u`, `v`; nonleaf nodes hold the sibling
/// interactions `b12`, `b21` of their children; every node except the root
/// and its two children holds translations `r`, `w` into the parent's bases.
#[derive(Clone, Debug, Default)]
pub struct HssNode {
    pub d: Option<CMat>,
    pub u: Option<CMat>,
    pub v: Option<CMat>,
    pub b12: Option<CMat>,
    pub b21: Option<CMat>,
    pub r: Option<CMat>,
    pub w: Option<CMat>,
    pub ku: usize,
    pub kv: usize,
}

/// HSS matrix: a partition tree plus per-node generators.
#[derive(Clone, Debug)]
pub struct HssMatrix {
    tree: HssTree,
    nodes: Vec<HssNode>,
}

impl HssMatrix {
    /// Creates an all-empty generator set over `tree`; used by builders.
    pub fn empty(tree: HssTree) -> Self {
        let nodes = vec![HssNode::default(); tree.len()];
        HssMatrix { tree, nodes }
    }

    pub fn tree(&self) -> &HssTree {
        &self.tree
    }

    pub fn node(&self, i: usize) -> &HssNode {
        &self.nodes[i]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut HssNode {
        &mut self.nodes[i]
    }

    pub fn num_rows(&self) -> usize {
        self.tree.num_rows()
    }

    pub fn num_cols(&self) -> usize {
        self.tree.num_cols()
    }

    /// Largest row- or column-space rank over all nodes.
    pub fn max_rank(&self) -> usize {
        self.nodes.iter().map(|n| n.ku.max(n.kv)).max().unwrap_or(0)
    }

    /// Total complex entries stored across all generators.
    pub fn stored_entries(&self) -> usize {
        let count = |m: &Option<CMat>| m.as_ref().map_or(0, |b| b.nrows() * b.ncols());
        self.nodes
            .iter()
            .map(|n| {
                count(&n.d)
                    + count(&n.u)
                    + count(&n.v)
                    + count(&n.b12)
                    + count(&n.b21)
                    + count(&n.r)
                    + count(&n.w)
            })
            .sum()
    }

    /// `A X` for a block of vectors, through the telescoping representation.
    pub fn matvec_mat(&self, x: &CMat) -> CMat {
        assert_eq!(x.nrows(), self.num_cols(), "dimension mismatch");
        let t = &self.tree;
        let q = x.ncols();
        let mut xhat: Vec<Option<CMat>> = vec![None; t.len()];
        // Upward: xhat_tau = V_tau^H x_tau through the nested bases. The
        // root is skipped: it has no sibling, so its projection is unused.
        for i in (1..t.len()).rev() {
            let node = t.node(i);
            if t.is_leaf(i) {
                let xt = x.block(node.col0, node.col1, 0, q);
                xhat[i] = Some(self.nodes[i].v.as_ref().expect("leaf V").adjoint_mul(&xt));
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let w1 = self.nodes[c1].w.as_ref().expect("child W");
                let w2 = self.nodes[c2].w.as_ref().expect("child W");
                let mut acc = w1.adjoint_mul(xhat[c1].as_ref().unwrap());
                acc.add_mul(
                    &w2.adjoint(),
                    xhat[c2].as_ref().unwrap(),
                    C64::new(1.0, 0.0),
                );
                xhat[i] = Some(acc);
            }
        }
        // Downward: g_tau collects sibling and ancestor couplings.
        let mut g: Vec<Option<CMat>> = vec![None; t.len()];
        for i in 0..t.len() {
            if let Some((c1, c2)) = t.children(i) {
                let b12 = self.nodes[i].b12.as_ref().expect("B12");
                let b21 = self.nodes[i].b21.as_ref().expect("B21");
                let mut g1 = b12.mul(xhat[c2].as_ref().unwrap());
                let mut g2 = b21.mul(xhat[c1].as_ref().unwrap());
                if let Some(gt) = g[i].as_ref() {
                    let r1 = self.nodes[c1].r.as_ref().expect("child R");
                    let r2 = self.nodes[c2].r.as_ref().expect("child R");
                    g1.add_mul(r1, gt, C64::new(1.0, 0.0));
                    g2.add_mul(r2, gt, C64::new(1.0, 0.0));
                }
                g[i] = None;
                g[c1] = Some(g1);
                g[c2] = Some(g2);
            }
        }
        // Leaves emit D x + U g.
        let mut y = CMat::zeros(self.num_rows(), q);
        for i in 0..t.len() {
            if !t.is_leaf(i) {
                continue;
            }
            let node = t.node(i);
            let xt = x.block(node.col0, node.col1, 0, q);
            let mut yt = self.nodes[i].d.as_ref().expect("leaf D").mul(&xt);
            if let Some(gt) = g[i].as_ref() {
                yt.add_mul(
                    self.nodes[i].u.as_ref().expect("leaf U"),
                    gt,
                    C64::new(1.0, 0.0),
                );
            }
            y.set_block(node.row0, 0, &yt);
        }
        y
    }

    /// `A^H Y` for a block of vectors.
    pub fn adjoint_matvec_mat(&self, y: &CMat) -> CMat {
        assert_eq!(y.nrows(), self.num_rows(), "dimension mismatch");
        let t = &self.tree;
        let q = y.ncols();
        let mut yhat: Vec<Option<CMat>> = vec![None; t.len()];
        for i in (1..t.len()).rev() {
            let node = t.node(i);
            if t.is_leaf(i) {
                let yt = y.block(node.row0, node.row1, 0, q);
                yhat[i] = Some(self.nodes[i].u.as_ref().expect("leaf U").adjoint_mul(&yt));
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let r1 = self.nodes[c1].r.as_ref().expect("child R");
                let r2 = self.nodes[c2].r.as_ref().expect("child R");
                let mut acc = r1.adjoint_mul(yhat[c1].as_ref().unwrap());
                acc.add_mul(
                    &r2.adjoint(),
                    yhat[c2].as_ref().unwrap(),
                    C64::new(1.0, 0.0),
                );
                yhat[i] = Some(acc);
            }
        }
        let mut h: Vec<Option<CMat>> = vec![None; t.len()];
        for i in 0..t.len() {
            if let Some((c1, c2)) = t.children(i) {
                let b12 = self.nodes[i].b12.as_ref().expect("B12");
                let b21 = self.nodes[i].b21.as_ref().expect("B21");
                let mut h1 = b21.adjoint_mul(yhat[c2].as_ref().unwrap());
                let mut h2 = b12.adjoint_mul(yhat[c1].as_ref().unwrap());
                if let Some(ht) = h[i].as_ref() {
                    let w1 = self.nodes[c1].w.as_ref().expect("child W");
                    let w2 = self.nodes[c2].w.as_ref().expect("child W");
                    h1.add_mul(w1, ht, C64::new(1.0, 0.0));
                    h2.add_mul(w2, ht, C64::new(1.0, 0.0));
                }
                h[i] = None;
                h[c1] = Some(h1);
                h[c2] = Some(h2);
            }
        }
        let mut x = CMat::zeros(self.num_cols(), q);
        for i in 0..t.len() {
            if !t.is_leaf(i) {
                continue;
            }
            let node = t.node(i);
            let yt = y.block(node.row0, node.row1, 0, q);
            let mut xt = self.nodes[i].d.as_ref().expect("leaf D").adjoint_mul(&yt);
            if let Some(ht) = h[i].as_ref() {
                xt.add_mul(
                    self.nodes[i].v.as_ref().expect("leaf V"),
                    ht,
                    C64::new(1.0, 0.0),
                );
            }
            x.set_block(node.col0, 0, &xt);
        }
        x
    }

    /// `A v` for a single vector.
    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        self.matvec_mat(&CMat::from_col(v)).into_data()
    }

    /// `A^H f` for a single vector.
    pub fn adjoint_matvec(&self, f: &[C64]) -> Vec<C64> {
        self.adjoint_matvec_mat(&CMat::from_col(f)).into_data()
    }

    /// Row basis of the whole block row at node `i`, expanded through the
    /// translation blocks (`m_i x ku_i`). Not defined for the root.
    pub fn effective_row_basis(&self, i: usize) -> CMat {
        assert_ne!(i, self.tree.root(), "root has no off-diagonal basis");
        if self.tree.is_leaf(i) {
            return self.nodes[i].u.as_ref().expect("leaf U").clone();
        }
        let (c1, c2) = self.tree.children(i).unwrap();
        let top = self
            .effective_row_basis(c1)
            .mul(self.nodes[c1].r.as_ref().expect("child R"));
        let bottom = self
            .effective_row_basis(c2)
            .mul(self.nodes[c2].r.as_ref().expect("child R"));
        CMat::vstack(&top, &bottom)
    }

    /// Column basis of the whole block column at node `i` (`n_i x kv_i`).
    pub fn effective_col_basis(&self, i: usize) -> CMat {
        assert_ne!(i, self.tree.root(), "root has no off-diagonal basis");
        if self.tree.is_leaf(i) {
            return self.nodes[i].v.as_ref().expect("leaf V").clone();
        }
        let (c1, c2) = self.tree.children(i).unwrap();
        let top = self
            .effective_col_basis(c1)
            .mul(self.nodes[c1].w.as_ref().expect("child W"));
        let bottom = self
            .effective_col_basis(c2)
            .mul(self.nodes[c2].w.as_ref().expect("child W"));
        CMat::vstack(&top, &bottom)
    }

    /// Dense reconstruction. Guarded by a size cap (default 8192 per side)
    /// so an accidental call on a large instance fails fast instead of
    /// allocating gigabytes.
    pub fn to_dense(&self) -> Result<CMat, HssError> {
        self.to_dense_capped(8192)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<CMat, HssError> {
        let (m, n) = (self.num_rows(), self.num_cols());
        if m > cap || n > cap {
            return Err(HssError::SizeCap {
                rows: m,
                cols: n,
                cap,
            });
        }
        let t = &self.tree;
        let mut a = CMat::zeros(m, n);
        for i in 0..t.len() {
            let node = t.node(i);
            if t.is_leaf(i) {
                a.set_block(node.row0, node.col0, self.nodes[i].d.as_ref().expect("leaf D"));
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let u1 = self.effective_row_basis(c1);
                let u2 = self.effective_row_basis(c2);
                let v1 = self.effective_col_basis(c1);
                let v2 = self.effective_col_basis(c2);
                let top = u1
                    .mul(self.nodes[i].b12.as_ref().expect("B12"))
                    .mul_adjoint(&v2);
                let bottom = u2
                    .mul(self.nodes[i].b21.as_ref().expect("B21"))
                    .mul_adjoint(&v1);
                a.set_block(t.node(c1).row0, t.node(c2).col0, &top);
                a.set_block(t.node(c2).row0, t.node(c1).col0, &bottom);
            }
        }
        Ok(a)
    }
}

/// Builds a random HSS matrix with exactly the prescribed generator ranks:
/// random diagonal blocks, random orthonormal bases and translations, random
/// interactions. Useful as a synthetic ground truth for compression and
/// factorization tests, since its dense reconstruction is exactly HSS with
/// all block ranks at most `rank`.
pub fn random_hss(
    num_rows: usize,
    num_cols: usize,
    leaf_size: usize,
    rank: usize,
    seed: u64,
) -> HssMatrix {
    let tree = HssTree::new(num_rows, num_cols, leaf_size);
    let mut a = HssMatrix::empty(tree);
    let mut rng = SeededRng::new(seed);
    let mut random_mat = |rows: usize, cols: usize| {
        CMat::from_parts(rows, cols, rng.complex_vector(rows * cols))
    };
    // Ranks bottom-up: capped by the block dimensions at leaves and by the
    // stacked child ranks above them.
    for i in (0..a.tree.len()).rev() {
        let node = a.tree.node(i).clone();
        if a.tree.is_leaf(i) {
            a.nodes[i].ku = rank.min(node.num_rows());
            a.nodes[i].kv = rank.min(node.num_cols());
        } else {
            let (c1, c2) = a.tree.children(i).unwrap();
            a.nodes[i].ku = rank.min(a.nodes[c1].ku + a.nodes[c2].ku);
            a.nodes[i].kv = rank.min(a.nodes[c1].kv + a.nodes[c2].kv);
        }
    }
    for i in 0..a.tree.len() {
        let node = a.tree.node(i).clone();
        let (ku, kv) = (a.nodes[i].ku, a.nodes[i].kv);
        if a.tree.is_leaf(i) {
            a.nodes[i].d = Some(random_mat(node.num_rows(), node.num_cols()));
            a.nodes[i].u = Some(orthonormal_columns(
                random_mat(node.num_rows(), ku),
                ku,
            ));
            a.nodes[i].v = Some(orthonormal_columns(
                random_mat(node.num_cols(), kv),
                kv,
            ));
        }
        if let Some((c1, c2)) = a.tree.children(i) {
            let (ku1, ku2) = (a.nodes[c1].ku, a.nodes[c2].ku);
            let (kv1, kv2) = (a.nodes[c1].kv, a.nodes[c2].kv);
            a.nodes[i].b12 = Some(random_mat(ku1, kv2));
            a.nodes[i].b21 = Some(random_mat(ku2, kv1));
            if i != a.tree.root() {
                // Stacked translations must stay column-orthonormal.
                let rs = orthonormal_columns(random_mat(ku1 + ku2, ku), ku);
                a.nodes[c1].r = Some(rs.block(0, ku1, 0, ku));
                a.nodes[c2].r = Some(rs.block(ku1, ku1 + ku2, 0, ku));
                let ws = orthonormal_columns(random_mat(kv1 + kv2, kv), kv);
                a.nodes[c1].w = Some(ws.block(0, kv1, 0, kv));
                a.nodes[c2].w = Some(ws.block(kv1, kv1 + kv2, 0, kv));
            }
        }
    }
    a
}

fn orthonormal_columns(a: CMat, k: usize) -> CMat {
    crate::dense::householder_qr(a).q_thin(k)
}

#[cfg(test)]
pub(crate) fn identity_hss(tree: HssTree) -> HssMatrix {
    let mut a = HssMatrix::empty(tree);
    for i in 0..a.tree.len() {
        let node = a.tree.node(i).clone();
        if a.tree.is_leaf(i) {
            let (m, n) = (node.num_rows(), node.num_cols());
            let mut d = CMat::zeros(m, n);
            for j in 0..m.min(n) {
                d.set(j, j, C64::new(1.0, 0.0));
            }
            a.nodes[i].d = Some(d);
            a.nodes[i].u = Some(CMat::zeros(m, 0));
            a.nodes[i].v = Some(CMat::zeros(n, 0));
        }
        if let Some((c1, c2)) = a.tree.children(i) {
            a.nodes[i].b12 = Some(CMat::zeros(0, 0));
            a.nodes[i].b21 = Some(CMat::zeros(0, 0));
            if i != a.tree.root() {
                a.nodes[c1].r = Some(CMat::zeros(0, 0));
                a.nodes[c2].r = Some(CMat::zeros(0, 0));
                a.nodes[c1].w = Some(CMat::zeros(0, 0));
                a.nodes[c2].w = Some(CMat::zeros(0, 0));
            }
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::vec_norm;

    #[test]
    fn tree_splits_both_ranges_in_lockstep() {
        let t = HssTree::new(128, 128, 128);
        assert_eq!(t.len(), 1);
        assert_eq!(t.num_levels(), 0);

        let t = HssTree::new(512, 512, 128);
        assert_eq!(t.num_levels(), 2);
        assert_eq!(t.leaves().count(), 4);
        for i in t.leaves() {
            assert_eq!(t.node(i).num_rows(), 128);
            assert_eq!(t.node(i).num_cols(), 128);
        }

        // Tall case: rows keep splitting after columns are already small.
        let t = HssTree::new(1024, 256, 128);
        for i in t.leaves() {
            assert!(t.node(i).num_rows() <= 256);
            assert!(t.node(i).num_cols() <= 256);
        }
        assert_eq!(t.max_leaf_rows(), 128);
        assert_eq!(t.max_leaf_cols(), 32);
    }

    #[test]
    fn tree_ranges_partition_and_nest() {
        for (m, n, leaf) in [(300, 300, 32), (1000, 250, 64), (17, 5, 4), (64, 3, 8)] {
            let t = HssTree::new(m, n, leaf);
            assert_eq!(t.node(t.root()).num_rows(), m);
            assert_eq!(t.node(t.root()).num_cols(), n);
            let mut rows = 0;
            let mut cols = 0;
            for i in t.leaves() {
                rows += t.node(i).num_rows();
                cols += t.node(i).num_cols();
                assert!(t.node(i).num_rows() <= 2 * leaf);
                assert!(t.node(i).num_cols() <= 2 * leaf);
            }
            assert_eq!(rows, m);
            assert_eq!(cols, n);
            for i in 0..t.len() {
                if let Some((c1, c2)) = t.children(i) {
                    assert!(c1 > i && c2 > i, "children must follow parents");
                    let p = t.node(i);
                    let (l, r) = (t.node(c1), t.node(c2));
                    assert_eq!(l.row0, p.row0);
                    assert_eq!(l.row1, r.row0);
                    assert_eq!(r.row1, p.row1);
                    assert_eq!(l.col0, p.col0);
                    assert_eq!(l.col1, r.col0);
                    assert_eq!(r.col1, p.col1);
                    assert!(l.num_rows() >= r.num_rows());
                    assert!(l.num_cols() >= r.num_cols());
                }
            }
        }
    }

    #[test]
    fn matvec_matches_dense_reconstruction() {
        for (m, n, leaf, rank, seed) in [
            (512usize, 512usize, 64usize, 8usize, 7u64),
            (300, 300, 32, 5, 11),
            (256, 64, 16, 3, 13),
            (64, 3, 8, 2, 17),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let dense = a.to_dense().unwrap();
            let mut rng = SeededRng::new(seed + 1000);
            let v = rng.complex_vector(n);
            let f = rng.complex_vector(m);

            let fast = a.matvec(&v);
            let slow = dense.matvec(&v);
            let diff: Vec<C64> = fast.iter().zip(&slow).map(|(x, y)| x - y).collect();
            assert!(
                vec_norm(&diff) <= 1e-12 * vec_norm(&slow).max(1.0),
                "forward mismatch {} at {}x{}",
                vec_norm(&diff),
                m,
                n
            );

            let fast_h = a.adjoint_matvec(&f);
            let slow_h = dense.adjoint_matvec(&f);
            let diff_h: Vec<C64> = fast_h.iter().zip(&slow_h).map(|(x, y)| x - y).collect();
            assert!(
                vec_norm(&diff_h) <= 1e-12 * vec_norm(&slow_h).max(1.0),
                "adjoint mismatch at {}x{}",
                m,
                n
            );

            // Adjoint identity <Av, f> = <v, A^H f>.
            let lhs = crate::dense::dot(&f, &fast);
            let rhs = crate::dense::dot(&fast_h, &v);
            assert!((lhs - rhs).norm() <= 1e-12 * (lhs.norm() + 1.0));
        }
    }

    #[test]
    fn identity_and_zero_generators_behave_trivially() {
        let a = identity_hss(HssTree::new(256, 256, 32));
        let mut rng = SeededRng::new(3);
        let v = rng.complex_vector(256);
        let out = a.matvec(&v);
        let diff: Vec<C64> = out.iter().zip(&v).map(|(x, y)| x - y).collect();
        assert!(vec_norm(&diff) <= 1e-14 * vec_norm(&v));
        let out_h = a.adjoint_matvec(&v);
        let diff_h: Vec<C64> = out_h.iter().zip(&v).map(|(x, y)| x - y).collect();
        assert!(vec_norm(&diff_h) <= 1e-14 * vec_norm(&v));

        let z = random_hss(128, 128, 32, 0, 5);
        let zd = z.to_dense().unwrap();
        // Rank zero kills every off-diagonal block; diagonal blocks remain.
        for i in z.tree().leaves() {
            let node = z.tree().node(i);
            let block = zd.block(node.row0, node.row1, node.col0, node.col1);
            let mut local = block.clone();
            local.axpy(C64::new(-1.0, 0.0), z.node(i).d.as_ref().unwrap());
            assert!(local.max_abs() == 0.0);
        }
    }

    #[test]
    fn effective_bases_are_orthonormal_and_reproduce_blocks() {
        let a = random_hss(384, 384, 48, 6, 23);
        let dense = a.to_dense().unwrap();
        let t = a.tree();
        for i in 1..t.len() {
            let u = a.effective_row_basis(i);
            let v = a.effective_col_basis(i);
            for (label, b) in [("U", &u), ("V", &v)] {
                let mut gram = b.adjoint_mul(b);
                for j in 0..gram.ncols() {
                    let d = gram.get(j, j) - C64::new(1.0, 0.0);
                    gram.set(j, j, d);
                }
                assert!(
                    gram.max_abs() <= 1e-12,
                    "{} not orthonormal at node {}",
                    label,
                    i
                );
            }
        }
        // Sibling off-diagonal block equals U_eff B V_eff^H.
        for i in 0..t.len() {
            if let Some((c1, c2)) = t.children(i) {
                let u1 = a.effective_row_basis(c1);
                let v2 = a.effective_col_basis(c2);
                let prod = u1.mul(a.node(i).b12.as_ref().unwrap()).mul_adjoint(&v2);
                let (n1, n2) = (t.node(c1), t.node(c2));
                let mut block = dense.block(n1.row0, n1.row1, n2.col0, n2.col1);
                block.axpy(C64::new(-1.0, 0.0), &prod);
                assert!(block.max_abs() <= 1e-12 * dense.max_abs());
            }
        }
    }

    #[test]
    fn single_leaf_dense_is_its_diagonal_block() {
        let a = random_hss(96, 96, 128, 4, 9);
        assert_eq!(a.tree().len(), 1);
        let dense = a.to_dense().unwrap();
        let mut diff = dense.clone();
        diff.axpy(C64::new(-1.0, 0.0), a.node(0).d.as_ref().unwrap());
        assert!(diff.max_abs() == 0.0);
    }

    #[test]
    fn dense_reconstruction_respects_size_cap() {
        let a = random_hss(64, 64, 16, 2, 1);
        assert!(a.to_dense_capped(32).is_err());
        assert!(a.to_dense_capped(64).is_ok());
    }
}
