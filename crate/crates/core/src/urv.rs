//! URV factorization of HSS matrices and the structured least-squares solve.
//!
//! The factorization eliminates the tree bottom-up, treating each node as a
//! leaf of the current stage. An optional size-reduction QR of `[U D]`
//! shrinks tall blocks to `n + k` rows; a reverse QR of `V` packs the node's
//! off-diagonal column dependence into a trailing `k x k` block; a QR of the
//! leading columns of the updated diagonal block decouples `n - k` rows,
//! which become finished triangular equations. The deferred rows of two
//! siblings merge into their parent, which becomes a leaf of a smaller
//! problem of the same form; the root finishes with a plain QR. All factors
//! are unitary or triangular and stay stored per node, never multiplied out,
//! so factorization costs `O(k^2 (M + N))` and each solve `O(k (M + N))`.
//!
//! Besides the least-squares solve, the factorization exposes its adjoint
//! (the conjugate transpose of the pseudoinverse as a linear map) and the
//! forward product reassembled from the factors, built from the same
//! per-node pieces.

use crate::dense::{
    householder_qr, upper_tri_solve, upper_tri_solve_adjoint, CMat, DenseError, QrFactors, C64,
};
use crate::hss::{HssMatrix, HssTree};
use thiserror::Error;

const ONE: C64 = C64::new(1.0, 0.0);
const NEG: C64 = C64::new(-1.0, 0.0);

/// Errors from factorization and solves.
#[derive(Debug, Error)]
pub enum UrvError {
    /// A triangular diagonal factor has an entry at or below the global
    /// deficiency threshold (`1e-14` times the largest diagonal magnitude
    /// over all nodes).
    #[error(
        "rank-deficient triangular factor at node {node}: |R[{index},{index}]| = {value:.3e} <= {threshold:.3e}"
    )]
    RankDeficient {
        node: usize,
        index: usize,
        value: f64,
        threshold: f64,
    },
    /// The HSS generators are missing or inconsistently shaped.
    #[error("inconsistent HSS generators: {what}")]
    Structure { what: String },
    /// An input vector has the wrong length.
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Per-node factors. The node's stage-local system has `m_rows` rows and
/// `n_loc` columns (original block sizes at leaves, merged deferred sizes at
/// nonleaf nodes), reduced to `m_check` rows when the size-reduction QR
/// fired. `ku` and `kv` are the local basis widths; both are zero at the
/// root.
#[derive(Debug, Default)]
struct UrvNode {
    m_rows: usize,
    m_check: usize,
    n_loc: usize,
    ku: usize,
    kv: usize,
    /// Size-reduction factor, the QR of `[U D]`; `None` when not triggered.
    q_omega: Option<QrFactors>,
    /// Reverse QR of `V` (QR of the row-flipped `V`); `None` when `kv == 0`.
    q_tau: Option<QrFactors>,
    /// Trailing `kv x kv` triangle of the reverse factorization of `V`.
    v_hat2: CMat,
    /// Row-decoupling QR of the leading `n_loc - kv` diagonal columns.
    p: QrFactors,
    /// Finished triangular diagonal factor, `(n_loc - kv)` square.
    d_hat11: CMat,
    /// Coupling of the finished rows to the deferred columns.
    d_hat12: CMat,
    /// Finished-row part of the local row basis.
    u_hat1: CMat,
    /// Deferred-row part of the local row basis (it also merges into the
    /// parent's diagonal block during factorization).
    u_hat2: CMat,
    /// Sibling interaction blocks, kept from the HSS matrix (nonleaf only).
    b12: Option<CMat>,
    b21: Option<CMat>,
    /// Basis translation into the parent (absent at the root's children,
    /// matching the HSS layout).
    r: Option<CMat>,
}

impl UrvNode {
    /// Number of finished (decoupled) rows and columns at this node.
    fn n1(&self) -> usize {
        self.n_loc - self.kv
    }

    /// `x <- Q_tau x`, through the row-flip identity for the reverse QR.
    fn qtau_apply(&self, x: &mut CMat) {
        if let Some(q) = &self.q_tau {
            x.flip_rows();
            q.apply_q(x);
            x.flip_rows();
        }
    }

    /// `x <- Q_tau^H x`.
    fn qtau_apply_h(&self, x: &mut CMat) {
        if let Some(q) = &self.q_tau {
            x.flip_rows();
            q.apply_qh(x);
            x.flip_rows();
        }
    }
}

/// Norm bookkeeping for one least-squares solve: with every transform
/// unitary, `input` equals `kept + dropped` up to roundoff, and `dropped`
/// is the squared residual norm of the solved system.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolveStats {
    /// Squared norm of the right-hand side.
    pub input: f64,
    /// Squared norm of the fragments consumed by triangular solves.
    pub kept: f64,
    /// Squared norm of the fragments annihilated by the factor structure
    /// (size-reduction leftovers and the root's trailing rows).
    pub dropped: f64,
}

/// URV factorization of an HSS matrix: per-node unitary and triangular
/// factors supporting least-squares solves, adjoint solves, and forward
/// products, each in time linear in the matrix dimensions.
pub struct UrvFactorization {
    tree: HssTree,
    nodes: Vec<UrvNode>,
    max_diag: f64,
}

/// Factors `a`, consuming it: the generators are transformed into the
/// factorization in place and never needed again.
pub fn urv_factorize(a: HssMatrix) -> Result<UrvFactorization, UrvError> {
    let mut a = a;
    let tree = a.tree().clone();
    let len = tree.len();
    let mut nodes: Vec<UrvNode> = Vec::with_capacity(len);
    nodes.resize_with(len, UrvNode::default);
    // Deferred diagonal and row-basis blocks each eliminated node hands up.
    let mut deferred: Vec<Option<(CMat, CMat)>> = vec![None; len];

    for i in (0..len).rev() {
        let is_root = i == tree.root();
        // Assemble the stage-local leaf view (D, U, V) of node i.
        let (d_loc, u_loc, v_loc) = if tree.is_leaf(i) {
            let (m, n) = (tree.node(i).num_rows(), tree.node(i).num_cols());
            let node = a.node_mut(i);
            let d = take(node.d.take(), "D", i)?;
            // A root leaf has no siblings; its bases never enter the matrix.
            let (u, v) = if is_root {
                (CMat::zeros(m, 0), CMat::zeros(n, 0))
            } else {
                (take(node.u.take(), "U", i)?, take(node.v.take(), "V", i)?)
            };
            if d.nrows() != m || d.ncols() != n || u.nrows() != m || v.nrows() != n {
                return Err(UrvError::Structure {
                    what: format!(
                        "leaf {} generators D {}x{}, U {} rows, V {} rows for a {}x{} block",
                        i,
                        d.nrows(),
                        d.ncols(),
                        u.nrows(),
                        v.nrows(),
                        m,
                        n
                    ),
                });
            }
            (d, u, v)
        } else {
            let (c1, c2) = tree.children(i).unwrap();
            let (d22_1, u2_1) = deferred[c1].take().expect("child factored first");
            let (d22_2, u2_2) = deferred[c2].take().expect("child factored first");
            let b12 = take(a.node_mut(i).b12.take(), "B12", i)?;
            let b21 = take(a.node_mut(i).b21.take(), "B21", i)?;
            if b12.nrows() != u2_1.ncols()
                || b12.ncols() != nodes[c2].kv
                || b21.nrows() != u2_2.ncols()
                || b21.ncols() != nodes[c1].kv
            {
                return Err(UrvError::Structure {
                    what: format!(
                        "interaction blocks at node {} sized {}x{} and {}x{} for ranks ({}, {}) x ({}, {})",
                        i,
                        b12.nrows(),
                        b12.ncols(),
                        b21.nrows(),
                        b21.ncols(),
                        nodes[c1].ku,
                        nodes[c2].ku,
                        nodes[c1].kv,
                        nodes[c2].kv
                    ),
                });
            }
            let cross12 = u2_1.mul(&b12).mul_adjoint(&nodes[c2].v_hat2);
            let cross21 = u2_2.mul(&b21).mul_adjoint(&nodes[c1].v_hat2);
            let d_loc = CMat::vstack(
                &CMat::hstack(&d22_1, &cross12),
                &CMat::hstack(&cross21, &d22_2),
            );
            let m_loc = d_loc.nrows();
            let u_loc = match (a.node_mut(c1).r.take(), a.node_mut(c2).r.take()) {
                (Some(r1), Some(r2)) => {
                    let stacked = CMat::vstack(&u2_1.mul(&r1), &u2_2.mul(&r2));
                    nodes[c1].r = Some(r1);
                    nodes[c2].r = Some(r2);
                    stacked
                }
                (None, None) => CMat::zeros(m_loc, 0),
                _ => {
                    return Err(UrvError::Structure {
                        what: format!("translation present on only one child of node {}", i),
                    })
                }
            };
            let v_loc = match (a.node_mut(c1).w.take(), a.node_mut(c2).w.take()) {
                (Some(w1), Some(w2)) => {
                    CMat::vstack(&nodes[c1].v_hat2.mul(&w1), &nodes[c2].v_hat2.mul(&w2))
                }
                (None, None) => CMat::zeros(nodes[c1].kv + nodes[c2].kv, 0),
                _ => {
                    return Err(UrvError::Structure {
                        what: format!("translation present on only one child of node {}", i),
                    })
                }
            };
            nodes[i].b12 = Some(b12);
            nodes[i].b21 = Some(b21);
            (d_loc, u_loc, v_loc)
        };

        let m = d_loc.nrows();
        let n_loc = d_loc.ncols();
        let ku = u_loc.ncols();
        let kv = v_loc.ncols();
        if v_loc.nrows() != n_loc {
            return Err(UrvError::Structure {
                what: format!(
                    "V at node {} has {} rows for a {}-column block",
                    i,
                    v_loc.nrows(),
                    n_loc
                ),
            });
        }
        // Size reduction: one QR folds every row beyond n + ku away.
        let (u_check, d_check, m_check, q_omega) = if m > n_loc + ku + 16 {
            let qr = householder_qr(CMat::hstack(&u_loc, &d_loc));
            let m_check = n_loc + ku;
            let r = qr.r_block(m_check, ku + n_loc);
            let u_check = r.block(0, m_check, 0, ku);
            let d_check = r.block(0, m_check, ku, ku + n_loc);
            (u_check, d_check, m_check, Some(qr))
        } else {
            (u_loc, d_loc, m, None)
        };

        // Reverse QR of V: V = Q_tau [0; V_hat2], realized by factoring the
        // row-flipped V so the triangle lands at the bottom.
        let (q_tau, v_hat2) = if kv > 0 {
            let mut flipped = v_loc;
            flipped.flip_rows();
            let qr = householder_qr(flipped);
            let mut v_hat2 = qr.r_block(kv, kv);
            v_hat2.flip_rows();
            (Some(qr), v_hat2)
        } else {
            (None, CMat::zeros(0, 0))
        };
        nodes[i].q_tau = q_tau;
        nodes[i].v_hat2 = v_hat2;

        // The updated diagonal block D_check Q_tau, via its adjoint.
        let mut dt = d_check.adjoint();
        nodes[i].qtau_apply_h(&mut dt);
        let d_tilde = dt.adjoint();

        // Decouple the leading n_loc - kv columns.
        let n1 = n_loc - kv;
        if m_check < n1 {
            return Err(UrvError::Structure {
                what: format!(
                    "node {} cannot decouple {} rows from a {}-row block",
                    i, n1, m_check
                ),
            });
        }
        let p = householder_qr(d_tilde.block(0, m_check, 0, n1));
        let d_hat11 = p.r_block(n1, n1);
        let mut d2 = d_tilde.block(0, m_check, n1, n_loc);
        p.apply_qh(&mut d2);
        let d_hat12 = d2.block(0, n1, 0, kv);
        let d22 = d2.block(n1, m_check, 0, kv);
        let mut uh = u_check;
        p.apply_qh(&mut uh);
        let u_hat1 = uh.block(0, n1, 0, ku);
        let u_hat2 = uh.block(n1, m_check, 0, ku);

        let node = &mut nodes[i];
        node.m_rows = m;
        node.m_check = m_check;
        node.n_loc = n_loc;
        node.ku = ku;
        node.kv = kv;
        node.q_omega = q_omega;
        node.p = p;
        node.d_hat11 = d_hat11;
        node.d_hat12 = d_hat12;
        node.u_hat1 = u_hat1;
        node.u_hat2 = u_hat2.clone();
        if !is_root {
            deferred[i] = Some((d22, u_hat2));
        }
    }

    let max_diag = nodes
        .iter()
        .map(|n| {
            (0..n.d_hat11.nrows())
                .map(|j| n.d_hat11.get(j, j).norm())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);

    Ok(UrvFactorization {
        tree,
        nodes,
        max_diag,
    })
}

fn take(m: Option<CMat>, what: &str, node: usize) -> Result<CMat, UrvError> {
    m.ok_or_else(|| UrvError::Structure {
        what: format!("missing generator {} at node {}", what, node),
    })
}

impl UrvFactorization {
    pub fn tree(&self) -> &HssTree {
        &self.tree
    }

    pub fn num_rows(&self) -> usize {
        self.tree.num_rows()
    }

    pub fn num_cols(&self) -> usize {
        self.tree.num_cols()
    }

    /// Whether the size-reduction QR fired at node `i`.
    pub fn size_reduced(&self, i: usize) -> bool {
        self.nodes[i].q_omega.is_some()
    }

    /// Number of nodes where the size-reduction QR fired.
    pub fn num_size_reduced(&self) -> usize {
        self.nodes.iter().filter(|n| n.q_omega.is_some()).count()
    }

    /// Largest triangular diagonal magnitude across all nodes; the
    /// rank-deficiency threshold is `1e-14` times this.
    pub fn max_diag(&self) -> f64 {
        self.max_diag
    }

    /// Checks node `i`'s triangular diagonal against the global deficiency
    /// threshold, naming the node on failure.
    fn check_diag(&self, i: usize) -> Result<(), UrvError> {
        let r = &self.nodes[i].d_hat11;
        let threshold = 1e-14 * self.max_diag;
        for j in 0..r.nrows() {
            let value = r.get(j, j).norm();
            if value <= threshold {
                return Err(UrvError::RankDeficient {
                    node: i,
                    index: j,
                    value,
                    threshold,
                });
            }
        }
        Ok(())
    }

    fn map_tri(&self, node: usize, e: DenseError) -> UrvError {
        match e {
            DenseError::RankDeficient {
                index,
                value,
                threshold,
            } => UrvError::RankDeficient {
                node,
                index,
                value,
                threshold,
            },
            DenseError::DimensionMismatch(what) => UrvError::Structure { what },
        }
    }

    /// Least-squares solve `argmin_u |A u - f|` for a block of right-hand
    /// sides.
    pub fn solve_mat(&self, f: &CMat) -> Result<CMat, UrvError> {
        Ok(self.solve_mat_with_stats(f)?.0)
    }

    /// Single right-hand-side least-squares solve.
    pub fn solve(&self, f: &[C64]) -> Result<Vec<C64>, UrvError> {
        Ok(self.solve_with_stats(f)?.0)
    }

    /// Single right-hand-side solve with norm bookkeeping.
    pub fn solve_with_stats(&self, f: &[C64]) -> Result<(Vec<C64>, SolveStats), UrvError> {
        if f.len() != self.num_rows() {
            return Err(UrvError::Dimension {
                what: "right-hand side",
                expected: self.num_rows(),
                got: f.len(),
            });
        }
        let (u, stats) = self.solve_mat_with_stats(&CMat::from_col(f))?;
        Ok((u.into_data(), stats))
    }

    /// Least-squares solve with norm bookkeeping: since every first-phase
    /// transform is unitary, `stats.input == stats.kept + stats.dropped`
    /// up to roundoff.
    pub fn solve_mat_with_stats(&self, f: &CMat) -> Result<(CMat, SolveStats), UrvError> {
        let t = &self.tree;
        if f.nrows() != self.num_rows() {
            return Err(UrvError::Dimension {
                what: "right-hand side rows",
                expected: self.num_rows(),
                got: f.nrows(),
            });
        }
        let q = f.ncols();
        let mut stats = SolveStats {
            input: f.fro_norm().powi(2),
            ..SolveStats::default()
        };

        // Phase one, bottom-up: rotate the right-hand side into the factor
        // coordinates; keep each node's finished fragment, hand the
        // deferred fragment to the parent.
        let mut fhat1 = self.collect_top_blocks(f, Some(&mut stats));

        // Phase two, top-down: triangular solves, couplings through the
        // sibling interactions and translations, rotation back.
        let mut u_out = CMat::zeros(self.num_cols(), q);
        let mut ghat: Vec<Option<CMat>> = vec![None; t.len()];
        let mut u2_down: Vec<Option<CMat>> = vec![None; t.len()];
        for i in 0..t.len() {
            let node = &self.nodes[i];
            let mut rhs = fhat1[i].take().unwrap();
            let u2 = if i == t.root() {
                CMat::zeros(0, q)
            } else {
                u2_down[i].take().unwrap()
            };
            if node.kv > 0 {
                rhs.add_mul(&node.d_hat12, &u2, NEG);
            }
            if let Some(g) = ghat[i].as_ref() {
                rhs.add_mul(&node.u_hat1, g, NEG);
            }
            self.check_diag(i)?;
            upper_tri_solve(&node.d_hat11, &mut rhs, 1e-300).map_err(|e| self.map_tri(i, e))?;
            let mut u_loc = if node.kv > 0 {
                CMat::vstack(&rhs, &u2)
            } else {
                rhs
            };
            node.qtau_apply(&mut u_loc);
            if t.is_leaf(i) {
                u_out.set_block(t.node(i).col0, 0, &u_loc);
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let kv1 = self.nodes[c1].kv;
                let u2_1 = u_loc.block(0, kv1, 0, q);
                let u2_2 = u_loc.block(kv1, u_loc.nrows(), 0, q);
                let g_i = ghat[i].take();
                let (g1, g2) = self.couplings(i, c1, c2, &u2_1, &u2_2, g_i.as_ref());
                ghat[c1] = Some(g1);
                ghat[c2] = Some(g2);
                u2_down[c1] = Some(u2_1);
                u2_down[c2] = Some(u2_2);
            }
        }
        Ok((u_out, stats))
    }

    /// The coupling blocks a nonleaf node hands its children: sibling
    /// interaction plus the translated coupling from above.
    fn couplings(
        &self,
        i: usize,
        c1: usize,
        c2: usize,
        u2_1: &CMat,
        u2_2: &CMat,
        g_i: Option<&CMat>,
    ) -> (CMat, CMat) {
        let node = &self.nodes[i];
        let b12 = node.b12.as_ref().expect("nonleaf interaction");
        let b21 = node.b21.as_ref().expect("nonleaf interaction");
        let mut g1 = b12.mul(&self.nodes[c2].v_hat2.adjoint_mul(u2_2));
        let mut g2 = b21.mul(&self.nodes[c1].v_hat2.adjoint_mul(u2_1));
        if let Some(g) = g_i {
            g1.add_mul(self.nodes[c1].r.as_ref().expect("child translation"), g, ONE);
            g2.add_mul(self.nodes[c2].r.as_ref().expect("child translation"), g, ONE);
        }
        (g1, g2)
    }

    /// Adjoint of the least-squares solve: applies the conjugate transpose
    /// of the pseudoinverse, by running the adjoint of every solve step in
    /// reverse order.
    pub fn solve_adjoint_mat(&self, ubar: &CMat) -> Result<CMat, UrvError> {
        let t = &self.tree;
        if ubar.nrows() != self.num_cols() {
            return Err(UrvError::Dimension {
                what: "adjoint input rows",
                expected: self.num_cols(),
                got: ubar.nrows(),
            });
        }
        let q = ubar.ncols();

        // Reverse of phase two, bottom-up: peel the triangular solves and
        // couplings off, leaving each node's finished-fragment adjoint.
        let mut tbar: Vec<Option<CMat>> = vec![None; t.len()];
        let mut u2bar: Vec<Option<CMat>> = vec![None; t.len()];
        let mut gbar: Vec<Option<CMat>> = vec![None; t.len()];
        for i in (0..t.len()).rev() {
            let node = &self.nodes[i];
            let mut ubar_loc = if t.is_leaf(i) {
                let tn = t.node(i);
                ubar.block(tn.col0, tn.col1, 0, q)
            } else {
                let (c1, c2) = t.children(i).unwrap();
                // Cross couplings feed the children's deferred adjoints
                // before those are gathered.
                let b12 = node.b12.as_ref().expect("nonleaf interaction");
                let b21 = node.b21.as_ref().expect("nonleaf interaction");
                let g1 = gbar[c1].take().unwrap();
                let g2 = gbar[c2].take().unwrap();
                u2bar[c2]
                    .as_mut()
                    .unwrap()
                    .add_mul(&self.nodes[c2].v_hat2, &b12.adjoint_mul(&g1), ONE);
                u2bar[c1]
                    .as_mut()
                    .unwrap()
                    .add_mul(&self.nodes[c1].v_hat2, &b21.adjoint_mul(&g2), ONE);
                let gathered = CMat::vstack(
                    &u2bar[c1].take().unwrap(),
                    &u2bar[c2].take().unwrap(),
                );
                // Translations carry the children's coupling adjoints up.
                if i != t.root() {
                    let r1 = self.nodes[c1].r.as_ref().expect("child translation");
                    let r2 = self.nodes[c2].r.as_ref().expect("child translation");
                    let mut acc = r1.adjoint_mul(&g1);
                    acc.axpy(ONE, &r2.adjoint_mul(&g2));
                    gbar[i] = Some(acc);
                }
                gathered
            };
            node.qtau_apply_h(&mut ubar_loc);
            let n1 = node.n1();
            let mut a1 = ubar_loc.block(0, n1, 0, q);
            self.check_diag(i)?;
            upper_tri_solve_adjoint(&node.d_hat11, &mut a1, 1e-300)
                .map_err(|e| self.map_tri(i, e))?;
            if i != t.root() {
                let mut a2 = ubar_loc.block(n1, node.n_loc, 0, q);
                if node.kv > 0 {
                    a2.add_mul(&node.d_hat12.adjoint(), &a1, NEG);
                }
                u2bar[i] = Some(a2);
                // The coupling adjoint of this node's own solve step.
                let mut own = node.u_hat1.adjoint_mul(&a1);
                own.scale(NEG);
                match gbar[i].as_mut() {
                    Some(g) => g.axpy(ONE, &own),
                    None => gbar[i] = Some(own),
                }
            }
            tbar[i] = Some(a1);
        }

        // Reverse of phase one, top-down: identical structure to
        // reassembling the product, with the solved fragments on top.
        Ok(self.expand_top_blocks(tbar, q))
    }

    /// Single-vector adjoint solve.
    pub fn solve_adjoint(&self, ubar: &[C64]) -> Result<Vec<C64>, UrvError> {
        if ubar.len() != self.num_cols() {
            return Err(UrvError::Dimension {
                what: "adjoint input",
                expected: self.num_cols(),
                got: ubar.len(),
            });
        }
        Ok(self.solve_adjoint_mat(&CMat::from_col(ubar))?.into_data())
    }

    /// The forward product `A x`, reassembled from the stored factors.
    pub fn apply_mat(&self, x: &CMat) -> CMat {
        let t = &self.tree;
        assert_eq!(x.nrows(), self.num_cols(), "dimension mismatch");
        let q = x.ncols();

        // Bottom-up: the input in per-node solution coordinates.
        let mut u1s: Vec<Option<CMat>> = vec![None; t.len()];
        let mut u2s: Vec<Option<CMat>> = vec![None; t.len()];
        for i in (0..t.len()).rev() {
            let node = &self.nodes[i];
            let mut u_loc = if t.is_leaf(i) {
                let tn = t.node(i);
                x.block(tn.col0, tn.col1, 0, q)
            } else {
                let (c1, c2) = t.children(i).unwrap();
                CMat::vstack(u2s[c1].as_ref().unwrap(), u2s[c2].as_ref().unwrap())
            };
            node.qtau_apply_h(&mut u_loc);
            let n1 = node.n1();
            u1s[i] = Some(u_loc.block(0, n1, 0, q));
            u2s[i] = Some(u_loc.block(n1, node.n_loc, 0, q));
        }

        // Top-down: couplings, then each node's finished rows.
        let mut ghat: Vec<Option<CMat>> = vec![None; t.len()];
        let mut tops: Vec<Option<CMat>> = vec![None; t.len()];
        for i in 0..t.len() {
            let node = &self.nodes[i];
            let mut f1 = node.d_hat11.mul(u1s[i].as_ref().unwrap());
            if node.kv > 0 {
                f1.add_mul(&node.d_hat12, u2s[i].as_ref().unwrap(), ONE);
            }
            if let Some(g) = ghat[i].as_ref() {
                f1.add_mul(&node.u_hat1, g, ONE);
            }
            tops[i] = Some(f1);
            if let Some((c1, c2)) = t.children(i) {
                let g_i = ghat[i].take();
                let (g1, g2) = self.couplings(
                    i,
                    c1,
                    c2,
                    u2s[c1].as_ref().unwrap(),
                    u2s[c2].as_ref().unwrap(),
                    g_i.as_ref(),
                );
                ghat[c1] = Some(g1);
                ghat[c2] = Some(g2);
            }
        }

        self.expand_top_blocks(tops, q)
    }

    /// Single-vector forward product.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.apply_mat(&CMat::from_col(x)).into_data()
    }

    /// The adjoint product `A^H f`, reassembled from the stored factors by
    /// running every step of the forward product backwards.
    pub fn apply_adjoint_mat(&self, f: &CMat) -> CMat {
        let t = &self.tree;
        assert_eq!(f.nrows(), self.num_rows(), "dimension mismatch");
        let q = f.ncols();

        // Adjoint of the top-down reconstruction is the same bottom-up
        // collection the solves use.
        let mut tbar = self.collect_top_blocks(f, None);

        // Adjoint of the product's local pass, children before parents so
        // every coupling adjoint is complete when its parent consumes it.
        let mut u1bar: Vec<Option<CMat>> = vec![None; t.len()];
        let mut u2bar: Vec<Option<CMat>> = vec![None; t.len()];
        let mut gbar: Vec<Option<CMat>> = vec![None; t.len()];
        for i in (0..t.len()).rev() {
            let node = &self.nodes[i];
            let tb = tbar[i].take().unwrap();
            u1bar[i] = Some(node.d_hat11.adjoint_mul(&tb));
            let own2 = node.d_hat12.adjoint_mul(&tb);
            let mut g_i = node.u_hat1.adjoint_mul(&tb);
            if let Some((c1, c2)) = t.children(i) {
                let b12 = node.b12.as_ref().expect("nonleaf interaction");
                let b21 = node.b21.as_ref().expect("nonleaf interaction");
                let g1 = gbar[c1].take().unwrap();
                let g2 = gbar[c2].take().unwrap();
                u2bar[c2]
                    .as_mut()
                    .unwrap()
                    .add_mul(&self.nodes[c2].v_hat2, &b12.adjoint_mul(&g1), ONE);
                u2bar[c1]
                    .as_mut()
                    .unwrap()
                    .add_mul(&self.nodes[c1].v_hat2, &b21.adjoint_mul(&g2), ONE);
                if i != t.root() {
                    let r1 = self.nodes[c1].r.as_ref().expect("child translation");
                    let r2 = self.nodes[c2].r.as_ref().expect("child translation");
                    g_i.axpy(ONE, &r1.adjoint_mul(&g1));
                    g_i.axpy(ONE, &r2.adjoint_mul(&g2));
                }
            }
            gbar[i] = Some(g_i);
            u2bar[i] = Some(own2);
        }

        // Adjoint of the product's gather, top-down: rotate each node's
        // accumulated coordinates back and scatter into the children (or
        // the output rows at a leaf).
        let mut out = CMat::zeros(self.num_cols(), q);
        for i in 0..t.len() {
            let node = &self.nodes[i];
            let u1 = u1bar[i].take().unwrap();
            let mut u_loc = if node.kv > 0 {
                CMat::vstack(&u1, u2bar[i].as_ref().unwrap())
            } else {
                u1
            };
            node.qtau_apply(&mut u_loc);
            if t.is_leaf(i) {
                out.set_block(t.node(i).col0, 0, &u_loc);
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let kv1 = self.nodes[c1].kv;
                u2bar[c1]
                    .as_mut()
                    .unwrap()
                    .axpy(ONE, &u_loc.block(0, kv1, 0, q));
                u2bar[c2]
                    .as_mut()
                    .unwrap()
                    .axpy(ONE, &u_loc.block(kv1, u_loc.nrows(), 0, q));
            }
        }
        out
    }

    /// Single-vector adjoint product.
    pub fn apply_adjoint(&self, f: &[C64]) -> Vec<C64> {
        assert_eq!(f.len(), self.num_rows(), "dimension mismatch");
        self.apply_adjoint_mat(&CMat::from_col(f)).into_data()
    }

    /// Bottom-up rotation of a full-height block into the factor
    /// coordinates, keeping each node's finished fragment — phase one of
    /// the solves and the adjoint of `expand_top_blocks`. Norm bookkeeping
    /// is recorded when `stats` is given.
    fn collect_top_blocks(
        &self,
        f: &CMat,
        mut stats: Option<&mut SolveStats>,
    ) -> Vec<Option<CMat>> {
        let t = &self.tree;
        let q = f.ncols();
        let mut tops: Vec<Option<CMat>> = vec![None; t.len()];
        let mut up: Vec<Option<CMat>> = vec![None; t.len()];
        for i in (0..t.len()).rev() {
            let node = &self.nodes[i];
            let f_loc = if t.is_leaf(i) {
                let tn = t.node(i);
                f.block(tn.row0, tn.row1, 0, q)
            } else {
                let (c1, c2) = t.children(i).unwrap();
                CMat::vstack(&up[c1].take().unwrap(), &up[c2].take().unwrap())
            };
            let mut fh = if let Some(qw) = &node.q_omega {
                let mut fc = f_loc;
                qw.apply_qh(&mut fc);
                if let Some(s) = stats.as_deref_mut() {
                    s.dropped += fc.block(node.m_check, node.m_rows, 0, q).fro_norm().powi(2);
                }
                fc.block(0, node.m_check, 0, q)
            } else {
                f_loc
            };
            node.p.apply_qh(&mut fh);
            let n1 = node.n1();
            let f1 = fh.block(0, n1, 0, q);
            if let Some(s) = stats.as_deref_mut() {
                s.kept += f1.fro_norm().powi(2);
            }
            tops[i] = Some(f1);
            if i == t.root() {
                if let Some(s) = stats.as_deref_mut() {
                    s.dropped += fh.block(n1, node.m_check, 0, q).fro_norm().powi(2);
                }
            } else {
                up[i] = Some(fh.block(n1, node.m_check, 0, q));
            }
        }
        tops
    }

    /// Top-down reconstruction shared by the forward product and the
    /// adjoint solve: given every node's finished-fragment block, rebuilds
    /// the full-length vector by walking the decoupling, size-reduction,
    /// and merge transforms in reverse.
    fn expand_top_blocks(&self, mut tops: Vec<Option<CMat>>, q: usize) -> CMat {
        let t = &self.tree;
        let mut out = CMat::zeros(self.num_rows(), q);
        let mut pending: Vec<Option<CMat>> = vec![None; t.len()];
        for i in 0..t.len() {
            let node = &self.nodes[i];
            let top = tops[i].take().unwrap();
            let f2 = if i == t.root() {
                // The root's trailing rows are exactly zero in the factor
                // coordinates: its decoupling QR annihilates them.
                CMat::zeros(node.m_check - node.n1(), q)
            } else {
                pending[i].take().unwrap()
            };
            let mut f_loc = CMat::vstack(&top, &f2);
            node.p.apply_q(&mut f_loc);
            if let Some(qw) = &node.q_omega {
                let mut full = CMat::zeros(node.m_rows, q);
                full.set_block(0, 0, &f_loc);
                qw.apply_q(&mut full);
                f_loc = full;
            }
            if t.is_leaf(i) {
                out.set_block(t.node(i).row0, 0, &f_loc);
            } else {
                let (c1, c2) = t.children(i).unwrap();
                let rows1 = self.nodes[c1].m_check - self.nodes[c1].n1();
                pending[c1] = Some(f_loc.block(0, rows1, 0, q));
                pending[c2] = Some(f_loc.block(rows1, f_loc.nrows(), 0, q));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{dot, ls_solve, vec_norm};
    use crate::hss::{identity_hss, random_hss};
    use crate::rng::SeededRng;

    fn rel_err_vec(a: &[C64], b: &[C64]) -> f64 {
        let diff: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        vec_norm(&diff) / vec_norm(b).max(1e-300)
    }

    #[test]
    fn identity_matrix_factors_and_solves_trivially() {
        let a = identity_hss(HssTree::new(192, 192, 32));
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(4);
        let f = rng.complex_vector(192);
        let u = fact.solve(&f).unwrap();
        assert!(rel_err_vec(&u, &f) <= 1e-12);
        let back = fact.apply(&f);
        assert!(rel_err_vec(&back, &f) <= 1e-12);
        let adj = fact.solve_adjoint(&f).unwrap();
        assert!(rel_err_vec(&adj, &f) <= 1e-12);
    }

    #[test]
    fn factor_product_reassembles_the_matrix() {
        // Square and tall instances, including a single-leaf tree: applying
        // the factors to the identity must match the dense reconstruction.
        for (m, n, leaf, rank, seed) in [
            (512usize, 512usize, 64usize, 8usize, 3u64),
            (1024, 256, 128, 8, 4),
            (192, 192, 24, 5, 5),
            (96, 24, 8, 3, 6),
            (48, 32, 64, 4, 7),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let dense = a.to_dense().unwrap();
            let fact = urv_factorize(a).unwrap();
            let mut diff = fact.apply_mat(&CMat::identity(n));
            diff.axpy(NEG, &dense);
            let rel = diff.fro_norm() / dense.fro_norm();
            assert!(rel <= 1e-11, "factor product off by {:.2e} at {}x{}", rel, m, n);
        }
    }

    #[test]
    fn tall_solves_match_dense_least_squares() {
        for (m, n, leaf, rank, seed) in [
            (1024usize, 256usize, 128usize, 8usize, 11u64),
            (640, 160, 32, 6, 12),
            (96, 24, 8, 3, 13),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let dense = a.to_dense().unwrap();
            let fact = urv_factorize(a).unwrap();
            let mut rng = SeededRng::new(seed + 100);
            let f = rng.complex_vector(m);
            let u = fact.solve(&f).unwrap();
            let u_dense = ls_solve(&dense, &CMat::from_col(&f)).unwrap().into_data();
            assert!(
                rel_err_vec(&u, &u_dense) <= 1e-10,
                "solve mismatch {:.2e} at {}x{}",
                rel_err_vec(&u, &u_dense),
                m,
                n
            );

            // Residual optimality against the dense solution.
            let resid = |u: &[C64]| {
                let mut t = dense.matvec(u);
                for (a, b) in t.iter_mut().zip(&f) {
                    *a -= b;
                }
                vec_norm(&t)
            };
            let (ru, rd) = (resid(&u), resid(&u_dense));
            assert!(
                ru <= rd * (1.0 + 1e-9),
                "residual {:.15e} exceeds dense optimum {:.15e}",
                ru,
                rd
            );
        }
    }

    #[test]
    fn square_solves_match_dense() {
        let a = random_hss(512, 512, 64, 8, 21);
        let dense = a.to_dense().unwrap();
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(22);
        let f = rng.complex_vector(512);
        let u = fact.solve(&f).unwrap();
        let u_dense = ls_solve(&dense, &CMat::from_col(&f)).unwrap().into_data();
        assert!(rel_err_vec(&u, &u_dense) <= 1e-10);
    }

    #[test]
    fn consistent_systems_recover_the_generator() {
        for (m, n, leaf, rank, seed) in [
            (1024usize, 256usize, 128usize, 8usize, 31u64),
            (384, 384, 48, 6, 32),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let mut rng = SeededRng::new(seed + 7);
            let u0 = rng.complex_vector(n);
            let f = a.matvec(&u0);
            let fact = urv_factorize(a).unwrap();
            let u = fact.solve(&f).unwrap();
            assert!(
                rel_err_vec(&u, &u0) <= 1e-11,
                "consistent recovery off by {:.2e}",
                rel_err_vec(&u, &u0)
            );
        }
    }

    #[test]
    fn orthogonal_residual_components_do_not_move_the_solution() {
        let (m, n) = (320, 96);
        let a = random_hss(m, n, 32, 5, 41);
        let dense = a.to_dense().unwrap();
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(42);
        let f = rng.complex_vector(m);
        // w = g - A A^+ g is orthogonal to the range of A.
        let g = rng.complex_vector(m);
        let sol = ls_solve(&dense, &CMat::from_col(&g)).unwrap().into_data();
        let ag = dense.matvec(&sol);
        let f_plus: Vec<C64> = f
            .iter()
            .zip(g.iter().zip(&ag))
            .map(|(x, (gi, agi))| x + gi - agi)
            .collect();
        let u1 = fact.solve(&f).unwrap();
        let u2 = fact.solve(&f_plus).unwrap();
        assert!(
            rel_err_vec(&u2, &u1) <= 1e-10,
            "solution moved by {:.2e}",
            rel_err_vec(&u2, &u1)
        );
    }

    #[test]
    fn phase_one_conserves_the_right_hand_side_norm() {
        for (m, n, leaf, rank, seed) in [
            (1024usize, 256usize, 128usize, 8usize, 51u64),
            (512, 512, 64, 8, 52),
            (96, 96, 128, 4, 53),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let fact = urv_factorize(a).unwrap();
            let mut rng = SeededRng::new(seed);
            let f = CMat::from_parts(m, 3, rng.complex_vector(3 * m));
            let (_, stats) = fact.solve_mat_with_stats(&f).unwrap();
            let gap = (stats.input - stats.kept - stats.dropped).abs();
            assert!(
                gap <= 1e-12 * stats.input,
                "norm leak {:.2e} of {:.2e} at {}x{}",
                gap,
                stats.input,
                m,
                n
            );
        }
    }

    #[test]
    fn size_reduction_fires_exactly_where_expected() {
        let (m, n, leaf, rank) = (1024usize, 256usize, 128usize, 8usize);
        let a = random_hss(m, n, leaf, rank, 61);
        let dense = a.to_dense().unwrap();
        let fact = urv_factorize(a).unwrap();
        assert!(fact.num_size_reduced() > 0, "tall leaves must reduce");
        for i in 0..fact.tree().len() {
            let node = &fact.nodes[i];
            assert_eq!(
                fact.size_reduced(i),
                node.m_rows > node.n_loc + node.ku + 16,
                "trigger mismatch at node {}",
                i
            );
        }
        // The factored solve still matches the dense one.
        let mut rng = SeededRng::new(62);
        let f = rng.complex_vector(m);
        let u = fact.solve(&f).unwrap();
        let u_dense = ls_solve(&dense, &CMat::from_col(&f)).unwrap().into_data();
        assert!(rel_err_vec(&u, &u_dense) <= 1e-10);
    }

    #[test]
    fn adjoint_solve_is_the_adjoint_of_the_solve() {
        for (m, n, leaf, rank, seed) in [
            (320usize, 96usize, 32usize, 5usize, 71u64),
            (256, 256, 32, 6, 72),
        ] {
            let a = random_hss(m, n, leaf, rank, seed);
            let dense = a.to_dense().unwrap();
            let fact = urv_factorize(a).unwrap();
            let mut rng = SeededRng::new(seed + 1);
            let f = rng.complex_vector(m);
            let w = rng.complex_vector(n);
            // <w, A^+ f> must equal <(A^+)^H w, f>.
            let lhs = dot(&w, &fact.solve(&f).unwrap());
            let rhs = dot(&fact.solve_adjoint(&w).unwrap(), &f);
            assert!(
                (lhs - rhs).norm() <= 1e-11 * (lhs.norm() + 1.0),
                "adjoint identity broken: {} vs {}",
                lhs,
                rhs
            );

            // Against the dense normal-equations form A (A^H A)^{-1} w.
            let gram = dense.adjoint_mul(&dense);
            let sol = ls_solve(&gram, &CMat::from_col(&w)).unwrap();
            let expect = dense.mul(&sol).into_data();
            let got = fact.solve_adjoint(&w).unwrap();
            assert!(
                rel_err_vec(&got, &expect) <= 1e-9,
                "adjoint value off by {:.2e}",
                rel_err_vec(&got, &expect)
            );
        }
    }

    #[test]
    fn adjoint_product_matches_the_dense_adjoint() {
        let cases = [
            (192usize, 128usize, 32usize, 6usize, 51u64),
            (96, 96, 24, 5, 52),
            (64, 48, 64, 4, 53),
        ];
        for (case, &(m, n, leaf, rank, seed)) in cases.iter().enumerate() {
            let a = random_hss(m, n, leaf, rank, seed);
            let dense = a.to_dense().unwrap();
            let urv = urv_factorize(a).unwrap();
            let mut rng = SeededRng::new(seed ^ 0xA1);
            let f = rng.complex_vector(m);
            let got = urv.apply_adjoint(&f);
            let want = dense.adjoint().matvec(&f);
            assert!(
                rel_err_vec(&got, &want) < 1e-11,
                "case {case}: adjoint product drifted from dense"
            );
            // The pairing identity <A x, f> = <x, A^H f>.
            let x = rng.complex_vector(n);
            let lhs = dot(&urv.apply(&x), &f);
            let rhs = dot(&x, &got);
            assert!(
                (lhs - rhs).norm() <= 1e-10 * vec_norm(&x) * vec_norm(&f),
                "case {case}: pairing identity violated"
            );
        }
    }

    #[test]
    fn batched_and_single_solves_agree() {
        let a = random_hss(384, 192, 32, 5, 81);
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(82);
        let fmat = CMat::from_parts(384, 4, rng.complex_vector(384 * 4));
        let batch = fact.solve_mat(&fmat).unwrap();
        for j in 0..4 {
            let single = fact.solve(fmat.col(j)).unwrap();
            assert!(rel_err_vec(batch.col(j), &single) <= 1e-14);
        }
    }

    #[test]
    fn full_rank_off_diagonal_blocks_still_factor() {
        // Basis width equal to the leaf size: no rows decouple at the
        // leaves, everything defers upward.
        let a = random_hss(64, 64, 8, 8, 91);
        let dense = a.to_dense().unwrap();
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(92);
        let f = rng.complex_vector(64);
        let u = fact.solve(&f).unwrap();
        let u_dense = ls_solve(&dense, &CMat::from_col(&f)).unwrap().into_data();
        assert!(rel_err_vec(&u, &u_dense) <= 1e-9);
    }

    #[test]
    fn rank_deficiency_is_reported_with_the_node() {
        // An identity matrix with one leaf's diagonal block zeroed is
        // exactly singular at that node.
        let mut a = identity_hss(HssTree::new(128, 128, 32));
        let victim = a.tree().leaves().next().unwrap();
        let (m, n) = (
            a.tree().node(victim).num_rows(),
            a.tree().node(victim).num_cols(),
        );
        a.node_mut(victim).d = Some(CMat::zeros(m, n));
        let fact = urv_factorize(a).unwrap();
        let mut rng = SeededRng::new(96);
        let f = rng.complex_vector(128);
        match fact.solve(&f) {
            Err(UrvError::RankDeficient { node, .. }) => assert_eq!(node, victim),
            other => panic!("expected rank deficiency, got {:?}", other.map(|_| ())),
        }
        let w = rng.complex_vector(128);
        assert!(matches!(
            fact.solve_adjoint(&w),
            Err(UrvError::RankDeficient { .. })
        ));
    }

    #[test]
    fn stored_rotations_preserve_norms() {
        let a = random_hss(1024, 256, 128, 8, 99);
        let fact = urv_factorize(a).unwrap();
        for i in 0..fact.tree().len() {
            let node = &fact.nodes[i];
            if node.q_tau.is_some() {
                let mut rng = SeededRng::new(1000 + i as u64);
                let x = CMat::from_parts(node.n_loc, 2, rng.complex_vector(node.n_loc * 2));
                let mut y = x.clone();
                node.qtau_apply(&mut y);
                assert!((y.fro_norm() - x.fro_norm()).abs() <= 1e-12 * x.fro_norm());
                node.qtau_apply_h(&mut y);
                y.axpy(NEG, &x);
                assert!(y.fro_norm() <= 1e-12 * x.fro_norm(), "round trip at node {}", i);
            }
            if let Some(qw) = &node.q_omega {
                let mut rng = SeededRng::new(2000 + i as u64);
                let x = CMat::from_parts(node.m_rows, 2, rng.complex_vector(node.m_rows * 2));
                let mut y = x.clone();
                qw.apply_qh(&mut y);
                assert!((y.fro_norm() - x.fro_norm()).abs() <= 1e-12 * x.fro_norm());
            }
        }
    }

    #[test]
    fn wrong_length_inputs_are_rejected() {
        let a = random_hss(128, 64, 32, 4, 7);
        let fact = urv_factorize(a).unwrap();
        assert!(matches!(
            fact.solve(&vec![C64::new(0.0, 0.0); 64]),
            Err(UrvError::Dimension { .. })
        ));
        assert!(matches!(
            fact.solve_adjoint(&vec![C64::new(0.0, 0.0); 128]),
            Err(UrvError::Dimension { .. })
        ));
    }
}
