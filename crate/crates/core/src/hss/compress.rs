//! Randomized black-box HSS compression.
//!
//! The compressor sees the target matrix only through two batched products
//! `Y = A Ω` and `Z = A^H Ψ` with Gaussian test matrices. Leaf bases are
//! sketched by projecting the samples onto the nullspace of the local test
//! block (which cancels the diagonal contribution), coarser levels reuse the
//! same samples through merge formulas, and a final top-down pass splits the
//! accumulated diagonal estimates into sibling interaction blocks and leaf
//! diagonal blocks. No additional products are ever requested, so the whole
//! construction costs exactly one forward and one adjoint batch.

use super::{HssError, HssMatrix, HssTree};
use crate::dense::{col_piv_qr, right_pinv_solve, CMat, C64};
use crate::rng::GaussianSource;
use std::sync::atomic::{AtomicUsize, Ordering};

const ONE: C64 = C64::new(1.0, 0.0);
const NEG: C64 = C64::new(-1.0, 0.0);

/// Batched product access to an `nrows x ncols` linear operator.
pub trait MatrixOracle {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `A X`.
    fn apply_batch(&self, x: &CMat) -> CMat;
    /// `A^H Y`.
    fn apply_adjoint_batch(&self, y: &CMat) -> CMat;
}

/// Dense matrix exposed as an oracle, with call and column counters so tests
/// can assert the sample budget.
pub struct DenseOracle {
    matrix: CMat,
    forward_batches: AtomicUsize,
    adjoint_batches: AtomicUsize,
    forward_columns: AtomicUsize,
    adjoint_columns: AtomicUsize,
}

impl DenseOracle {
    pub fn new(matrix: CMat) -> Self {
        DenseOracle {
            matrix,
            forward_batches: AtomicUsize::new(0),
            adjoint_batches: AtomicUsize::new(0),
            forward_columns: AtomicUsize::new(0),
            adjoint_columns: AtomicUsize::new(0),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn forward_batches(&self) -> usize {
        self.forward_batches.load(Ordering::Relaxed)
    }

    pub fn adjoint_batches(&self) -> usize {
        self.adjoint_batches.load(Ordering::Relaxed)
    }

    pub fn forward_columns(&self) -> usize {
        self.forward_columns.load(Ordering::Relaxed)
    }

    pub fn adjoint_columns(&self) -> usize {
        self.adjoint_columns.load(Ordering::Relaxed)
    }
}

impl MatrixOracle for DenseOracle {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply_batch(&self, x: &CMat) -> CMat {
        self.forward_batches.fetch_add(1, Ordering::Relaxed);
        self.forward_columns.fetch_add(x.ncols(), Ordering::Relaxed);
        self.matrix.mul(x)
    }

    fn apply_adjoint_batch(&self, y: &CMat) -> CMat {
        self.adjoint_batches.fetch_add(1, Ordering::Relaxed);
        self.adjoint_columns.fetch_add(y.ncols(), Ordering::Relaxed);
        self.matrix.adjoint_mul(y)
    }
}

/// Row-block access to a conceptual `num_rows x width` sample matrix. The
/// compressor consumes each leaf's row block exactly once, visiting leaves
/// from the highest index range downward, so implementations may release a
/// block as soon as it has been taken.
pub trait SampleSource {
    fn num_rows(&self) -> usize;
    fn width(&self) -> usize;
    fn take_rows(&mut self, r0: usize, r1: usize) -> CMat;
}

/// Gaussian test matrix that is never materialized as a whole: every row
/// block is regenerated on demand from the seed, so two sources with the
/// same seed always agree, block by block.
pub struct GaussianRows {
    source: GaussianSource,
    num_rows: usize,
    width: usize,
}

impl GaussianRows {
    pub fn new(seed: u64, num_rows: usize, width: usize) -> Self {
        GaussianRows {
            source: GaussianSource::new(seed),
            num_rows,
            width,
        }
    }

    /// The full matrix, for callers that need it once (e.g. a batched
    /// oracle application).
    pub fn materialize(&self) -> CMat {
        self.source.matrix(self.num_rows, self.width)
    }
}

impl SampleSource for GaussianRows {
    fn num_rows(&self) -> usize {
        self.num_rows
    }

    fn width(&self) -> usize {
        self.width
    }

    fn take_rows(&mut self, r0: usize, r1: usize) -> CMat {
        self.source.block(r0, r1, 0, self.width)
    }
}

/// Read-only view of an already materialized sample matrix.
pub struct BorrowedRows<'a>(pub &'a CMat);

impl SampleSource for BorrowedRows<'_> {
    fn num_rows(&self) -> usize {
        self.0.nrows()
    }

    fn width(&self) -> usize {
        self.0.ncols()
    }

    fn take_rows(&mut self, r0: usize, r1: usize) -> CMat {
        self.0.block(r0, r1, 0, self.0.ncols())
    }
}

/// Sample matrix stored pre-partitioned into the leaf row blocks of a tree.
/// Each block is handed out by move when taken, so memory is released the
/// moment the compressor is done with it. Filling happens column by column,
/// which matches producers that generate one sample vector at a time.
pub struct PartitionedRows {
    ranges: Vec<(usize, usize)>,
    blocks: Vec<Option<CMat>>,
    num_rows: usize,
    width: usize,
}

impl PartitionedRows {
    fn new(ranges: Vec<(usize, usize)>, num_rows: usize, width: usize) -> Self {
        let blocks = ranges
            .iter()
            .map(|&(a, b)| Some(CMat::zeros(b - a, width)))
            .collect();
        PartitionedRows {
            ranges,
            blocks,
            num_rows,
            width,
        }
    }

    /// Partitioned by the leaf row ranges of `tree`.
    pub fn for_tree_rows(tree: &HssTree, width: usize) -> Self {
        let mut ranges: Vec<(usize, usize)> = tree
            .leaves()
            .map(|i| (tree.node(i).row0, tree.node(i).row1))
            .collect();
        ranges.sort_unstable();
        Self::new(ranges, tree.num_rows(), width)
    }

    /// Partitioned by the leaf column ranges of `tree`.
    pub fn for_tree_cols(tree: &HssTree, width: usize) -> Self {
        let mut ranges: Vec<(usize, usize)> = tree
            .leaves()
            .map(|i| (tree.node(i).col0, tree.node(i).col1))
            .collect();
        ranges.sort_unstable();
        ranges.retain(|&(a, b)| b > a || (a, b) == (0, 0));
        Self::new(ranges, tree.num_cols(), width)
    }

    /// Writes one sample vector (conceptual column `j`) across all blocks.
    pub fn set_column(&mut self, j: usize, values: &[C64]) {
        assert_eq!(values.len(), self.num_rows);
        assert!(j < self.width);
        for (range, block) in self.ranges.iter().zip(self.blocks.iter_mut()) {
            let block = block.as_mut().expect("column set after block taken");
            block
                .col_mut(j)
                .copy_from_slice(&values[range.0..range.1]);
        }
    }

    /// Number of blocks not yet consumed.
    pub fn live_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_some()).count()
    }
}

impl SampleSource for PartitionedRows {
    fn num_rows(&self) -> usize {
        self.num_rows
    }

    fn width(&self) -> usize {
        self.width
    }

    fn take_rows(&mut self, r0: usize, r1: usize) -> CMat {
        let k = self
            .ranges
            .binary_search(&(r0, r1))
            .expect("requested rows must match a leaf block");
        self.blocks[k].take().expect("leaf block taken twice")
    }
}

/// Orthonormal `P` (s x r) with `omega · P = 0`, taken as the trailing `r`
/// columns of the Q factor of a column-pivoted factorization of `omega^H`.
pub fn nullspace_projector(omega: &CMat, r: usize) -> Result<CMat, HssError> {
    let s = omega.ncols();
    let rows = omega.nrows();
    if s < rows + r {
        return Err(HssError::NullspaceColumns {
            needed: rows + r,
            got: s,
        });
    }
    let piv = col_piv_qr(omega.adjoint());
    Ok(piv.qr.q_cols(s - r, s))
}

/// Knobs for the compressor beyond the plain rank/samples/seed triple.
#[derive(Clone, Debug)]
pub struct CompressOptions {
    /// Per-node rank budget for the off-diagonal bases.
    pub rank: usize,
    /// Columns in each test matrix.
    pub samples: usize,
    /// Seed for the Gaussian test matrices.
    pub seed: u64,
    /// Relative pivot cutoff for the pseudoinverse fits against the test
    /// blocks; guards degenerate draws.
    pub pivot_cutoff: f64,
    /// Optional basis truncation: drop sketch directions whose pivot falls
    /// below this fraction of the leading pivot. Zero keeps the full rank
    /// budget everywhere.
    pub rank_tolerance: f64,
}

impl CompressOptions {
    pub fn new(rank: usize, samples: usize, seed: u64) -> Self {
        CompressOptions {
            rank,
            samples,
            seed,
            pivot_cutoff: 1e-13,
            rank_tolerance: 0.0,
        }
    }
}

/// Smallest admissible sample count for a tree and rank budget.
pub fn minimum_samples(tree: &HssTree, rank: usize) -> usize {
    let leaf_dim = tree.max_leaf_rows().max(tree.max_leaf_cols());
    (rank + leaf_dim).max(3 * rank)
}

/// Derives the two independent test-matrix seeds from a user seed.
pub fn sample_seeds(seed: u64) -> (u64, u64) {
    (seed, seed ^ 0x9E37_79B9_7F4A_7C15)
}

/// Compresses the operator behind `oracle` into HSS form over `tree` with
/// rank budget `rank`, using `samples` test vectors per side. Costs exactly
/// one batched forward and one batched adjoint application.
pub fn blackbox_compress(
    oracle: &dyn MatrixOracle,
    tree: &HssTree,
    rank: usize,
    samples: usize,
    seed: u64,
) -> Result<HssMatrix, HssError> {
    blackbox_compress_with(oracle, tree, &CompressOptions::new(rank, samples, seed))
}

pub fn blackbox_compress_with(
    oracle: &dyn MatrixOracle,
    tree: &HssTree,
    opts: &CompressOptions,
) -> Result<HssMatrix, HssError> {
    if oracle.nrows() != tree.num_rows() {
        return Err(HssError::DimensionMismatch {
            what: "oracle rows vs tree",
            expected: tree.num_rows(),
            got: oracle.nrows(),
        });
    }
    if oracle.ncols() != tree.num_cols() {
        return Err(HssError::DimensionMismatch {
            what: "oracle cols vs tree",
            expected: tree.num_cols(),
            got: oracle.ncols(),
        });
    }
    let (m, n, s) = (tree.num_rows(), tree.num_cols(), opts.samples);
    let (seed_omega, seed_psi) = sample_seeds(opts.seed);
    let mut omega_src = GaussianRows::new(seed_omega, n, s);
    let y = {
        let omega = omega_src.materialize();
        let y = oracle.apply_batch(&omega);
        if y.nrows() != m || y.ncols() != s {
            return Err(HssError::DimensionMismatch {
                what: "forward batch result",
                expected: m,
                got: y.nrows(),
            });
        }
        y
    };
    let mut psi_src = GaussianRows::new(seed_psi, m, s);
    let z = {
        let psi = psi_src.materialize();
        let z = oracle.apply_adjoint_batch(&psi);
        if z.nrows() != n || z.ncols() != s {
            return Err(HssError::DimensionMismatch {
                what: "adjoint batch result",
                expected: n,
                got: z.nrows(),
            });
        }
        z
    };
    compress_from_sources(
        tree,
        &mut omega_src,
        &mut BorrowedRows(&y),
        &mut psi_src,
        &mut BorrowedRows(&z),
        opts,
    )
}

/// Core compression pass over already-drawn samples. `omega`/`psi` are the
/// test matrices (indexed by columns resp. rows of the target), `y`/`z` the
/// corresponding products.
pub fn compress_from_sources(
    tree: &HssTree,
    omega: &mut dyn SampleSource,
    y: &mut dyn SampleSource,
    psi: &mut dyn SampleSource,
    z: &mut dyn SampleSource,
    opts: &CompressOptions,
) -> Result<HssMatrix, HssError> {
    let s = opts.samples;
    for (src, rows, what) in [
        (&*omega, tree.num_cols(), "omega rows"),
        (&*y, tree.num_rows(), "Y rows"),
        (&*psi, tree.num_rows(), "psi rows"),
        (&*z, tree.num_cols(), "Z rows"),
    ] {
        if src.num_rows() != rows {
            return Err(HssError::DimensionMismatch {
                what,
                expected: rows,
                got: src.num_rows(),
            });
        }
        if src.width() != s {
            return Err(HssError::DimensionMismatch {
                what: "sample width",
                expected: s,
                got: src.width(),
            });
        }
    }
    let needed = minimum_samples(tree, opts.rank);
    if s < needed {
        return Err(HssError::SampleCount { needed, got: s });
    }
    let mut out = HssMatrix::empty(tree.clone());
    let mut dchecks: Vec<Option<CMat>> = vec![None; tree.len()];
    bottom_up(
        tree,
        tree.root(),
        omega,
        y,
        psi,
        z,
        opts,
        &mut out,
        &mut dchecks,
    )?;
    push_down(tree, &mut out, &mut dchecks);
    Ok(out)
}

/// Projected test/sample blocks a node hands to its parent.
struct Merged {
    omega: CMat,
    y: CMat,
    psi: CMat,
    z: CMat,
}

#[allow(clippy::too_many_arguments)]
fn bottom_up(
    tree: &HssTree,
    idx: usize,
    omega: &mut dyn SampleSource,
    y: &mut dyn SampleSource,
    psi: &mut dyn SampleSource,
    z: &mut dyn SampleSource,
    opts: &CompressOptions,
    out: &mut HssMatrix,
    dchecks: &mut Vec<Option<CMat>>,
) -> Result<Merged, HssError> {
    let (om, yt, ps, zt) = if let Some((c1, c2)) = tree.children(idx) {
        // Right child first: sample sources can then free their storage
        // from the tail of the index range forward.
        let right = bottom_up(tree, c2, omega, y, psi, z, opts, out, dchecks)?;
        let left = bottom_up(tree, c1, omega, y, psi, z, opts, out, dchecks)?;
        (
            CMat::vstack(&left.omega, &right.omega),
            CMat::vstack(&left.y, &right.y),
            CMat::vstack(&left.psi, &right.psi),
            CMat::vstack(&left.z, &right.z),
        )
    } else {
        let node = tree.node(idx);
        (
            omega.take_rows(node.col0, node.col1),
            y.take_rows(node.row0, node.row1),
            psi.take_rows(node.row0, node.row1),
            z.take_rows(node.col0, node.col1),
        )
    };

    if idx == tree.root() {
        // The root has no off-diagonal context: its accumulated block is
        // fit directly from the samples.
        dchecks[idx] = Some(right_pinv_solve(&yt, &om, opts.pivot_cutoff));
        if tree.is_leaf(idx) {
            let node = out.node_mut(idx);
            node.u = Some(CMat::zeros(tree.num_rows(), 0));
            node.v = Some(CMat::zeros(tree.num_cols(), 0));
        }
        return Ok(Merged {
            omega: CMat::zeros(0, 0),
            y: CMat::zeros(0, 0),
            psi: CMat::zeros(0, 0),
            z: CMat::zeros(0, 0),
        });
    }

    let rows_t = yt.nrows();
    let cols_t = om.nrows();

    // Row basis: project the forward samples onto directions that the local
    // test block cannot see, which cancels the diagonal contribution and
    // leaves a sketch of the off-diagonal block row.
    let p = nullspace_projector(&om, opts.rank)?;
    debug_assert!(om.mul(&p).max_abs() <= 1e-10 * om.max_abs().max(1.0));
    let yp = yt.mul(&p);
    let (u, ku) = orth_basis(&yp, opts.rank.min(rows_t), opts.rank_tolerance);

    // Column basis, symmetrically from the adjoint samples.
    let p2 = nullspace_projector(&ps, opts.rank)?;
    debug_assert!(ps.mul(&p2).max_abs() <= 1e-10 * ps.max_abs().max(1.0));
    let zp = zt.mul(&p2);
    let (v, kv) = orth_basis(&zp, opts.rank.min(cols_t), opts.rank_tolerance);

    // Diagonal estimate: everything the bases cannot explain. The part that
    // is bicompressible (row space in U, column space in V) is deliberately
    // left out here; the parent recovers it and the top-down pass restores
    // it, which is what keeps the merge formulas consistent.
    let mut t1 = right_pinv_solve(&yt, &om, opts.pivot_cutoff);
    let ut1 = u.adjoint_mul(&t1);
    t1.add_mul(&u, &ut1, NEG);
    let mut t2 = right_pinv_solve(&zt, &ps, opts.pivot_cutoff);
    let vt2 = v.adjoint_mul(&t2);
    t2.add_mul(&v, &vt2, NEG);
    let t2u = t2.mul(&u);
    let mut dcheck = t1;
    dcheck.add_mul(&u, &t2u.adjoint(), ONE);

    // Merged samples for the parent level.
    let om_hat = v.adjoint_mul(&om);
    let mut yr = yt;
    yr.add_mul(&dcheck, &om, NEG);
    let y_hat = u.adjoint_mul(&yr);
    let ps_hat = u.adjoint_mul(&ps);
    let mut zr = zt;
    zr.add_mul(&dcheck.adjoint(), &ps, NEG);
    let z_hat = v.adjoint_mul(&zr);

    if tree.is_leaf(idx) {
        let node = out.node_mut(idx);
        node.u = Some(u);
        node.v = Some(v);
    } else {
        let (c1, c2) = tree.children(idx).unwrap();
        let ku1 = out.node(c1).ku;
        let ku2 = out.node(c2).ku;
        let kv1 = out.node(c1).kv;
        let kv2 = out.node(c2).kv;
        debug_assert_eq!(ku1 + ku2, rows_t);
        debug_assert_eq!(kv1 + kv2, cols_t);
        out.node_mut(c1).r = Some(u.block(0, ku1, 0, ku));
        out.node_mut(c2).r = Some(u.block(ku1, ku1 + ku2, 0, ku));
        out.node_mut(c1).w = Some(v.block(0, kv1, 0, kv));
        out.node_mut(c2).w = Some(v.block(kv1, kv1 + kv2, 0, kv));
    }
    let node = out.node_mut(idx);
    node.ku = ku;
    node.kv = kv;
    dchecks[idx] = Some(dcheck);

    Ok(Merged {
        omega: om_hat,
        y: y_hat,
        psi: ps_hat,
        z: z_hat,
    })
}

/// Splits the accumulated diagonal estimates top-down into sibling
/// interaction blocks and final leaf diagonal blocks.
fn push_down(tree: &HssTree, out: &mut HssMatrix, dchecks: &mut [Option<CMat>]) {
    let mut corr: Vec<Option<CMat>> = vec![None; tree.len()];
    for i in 0..tree.len() {
        let mut t = dchecks[i].take().expect("every node was visited");
        if let Some(c) = corr[i].take() {
            let (lift_u, lift_v) = if tree.is_leaf(i) {
                (
                    out.node(i).u.as_ref().expect("leaf U").clone(),
                    out.node(i).v.as_ref().expect("leaf V").clone(),
                )
            } else {
                let (c1, c2) = tree.children(i).unwrap();
                (
                    CMat::vstack(
                        out.node(c1).r.as_ref().expect("child R"),
                        out.node(c2).r.as_ref().expect("child R"),
                    ),
                    CMat::vstack(
                        out.node(c1).w.as_ref().expect("child W"),
                        out.node(c2).w.as_ref().expect("child W"),
                    ),
                )
            };
            let add = lift_u.mul(&c).mul_adjoint(&lift_v);
            t.axpy(ONE, &add);
        }
        if tree.is_leaf(i) {
            out.node_mut(i).d = Some(t);
        } else {
            let (c1, c2) = tree.children(i).unwrap();
            let ku1 = out.node(c1).ku;
            let ku2 = out.node(c2).ku;
            let kv1 = out.node(c1).kv;
            let kv2 = out.node(c2).kv;
            out.node_mut(i).b12 = Some(t.block(0, ku1, kv1, kv1 + kv2));
            out.node_mut(i).b21 = Some(t.block(ku1, ku1 + ku2, 0, kv1));
            corr[c1] = Some(t.block(0, ku1, 0, kv1));
            corr[c2] = Some(t.block(ku1, ku1 + ku2, kv1, kv1 + kv2));
        }
    }
}

/// Orthonormal column basis of `a` with at most `kmax` columns, optionally
/// truncated where the pivot magnitudes fall below `tol` relative to the
/// leading pivot.
fn orth_basis(a: &CMat, kmax: usize, tol: f64) -> (CMat, usize) {
    let piv = col_piv_qr(a.clone());
    let kmax = kmax.min(a.nrows()).min(a.ncols());
    let k = if tol > 0.0 {
        piv.rank(tol).min(kmax)
    } else {
        kmax
    };
    (piv.qr.q_thin(k), k)
}
