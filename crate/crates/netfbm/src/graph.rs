//! Metric graph combinatorics: incidence structure, node partition and the
//! node coupling/noise matrices.
//!
//! Vertices are globally ordered with the active (dynamic) nodes first, so
//! indices `0..n0` are active and `n0..n` are passive. Each edge is an
//! interval of unit length parametrized from its tail (`x = 0`) to its head
//! (`x = 1`).

use ndarray::{Array2, ArrayView2, s};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Combinatorial description of the network.
///
/// `iplus[i][j] = 1` iff edge `j` starts (has its tail, `x = 0`) at vertex
/// `i`; `iminus[i][j] = 1` iff it ends (head, `x = 1`) there. Vertex and edge
/// indices are zero-based; [`NetworkGraph::build`] accepts the one-based
/// labels conventionally used in configs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    /// Edge count.
    pub m: usize,
    /// Vertex count.
    pub n: usize,
    /// Number of active (dynamic) vertices, listed first.
    pub n0: usize,
    /// Zero-based (tail, head) per edge.
    pub edges: Vec<(usize, usize)>,
    /// n x m outgoing incidence (tail) matrix.
    pub iplus: Array2<f64>,
    /// n x m incoming incidence (head) matrix.
    pub iminus: Array2<f64>,
    /// iplus - iminus.
    pub incidence: Array2<f64>,
    /// Per-vertex sorted list of incident edge indices.
    pub gamma: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Builds the graph from one-based `(tail, head)` vertex labels.
    ///
    /// Vertex labels must be contiguous `1..=n`; parallel edges are allowed,
    /// self-loops are not. The graph must be connected.
    pub fn build(edges: &[(usize, usize)], n0: usize) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut n = 0;
        for (k, &(t, h)) in edges.iter().enumerate() {
            if t == 0 || h == 0 {
                return Err(Error::InvalidConfig(format!(
                    "edge {} uses vertex label 0; labels are one-based",
                    k + 1
                )));
            }
            if t == h {
                return Err(Error::LoopNotSupported {
                    edge: k + 1,
                    vertex: t,
                });
            }
            n = n.max(t).max(h);
        }
        if n0 < 1 || n0 > n {
            return Err(Error::InvalidActiveCount { n0, n });
        }

        let m = edges.len();
        let edges0: Vec<(usize, usize)> = edges.iter().map(|&(t, h)| (t - 1, h - 1)).collect();

        let mut iplus = Array2::<f64>::zeros((n, m));
        let mut iminus = Array2::<f64>::zeros((n, m));
        let mut gamma = vec![Vec::new(); n];
        for (j, &(t, h)) in edges0.iter().enumerate() {
            iplus[[t, j]] = 1.0;
            iminus[[h, j]] = 1.0;
            gamma[t].push(j);
            gamma[h].push(j);
        }
        for g in &mut gamma {
            g.sort_unstable();
        }

        // Connectivity (and hence absence of unused labels) via union-find.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(t, h) in &edges0 {
            let (rt, rh) = (find(&mut parent, t), find(&mut parent, h));
            if rt != rh {
                parent[rt] = rh;
            }
        }
        let root = find(&mut parent, 0);
        for v in 1..n {
            if find(&mut parent, v) != root {
                return Err(Error::Disconnected);
            }
        }

        let incidence = &iplus - &iminus;
        Ok(NetworkGraph {
            m,
            n,
            n0,
            edges: edges0,
            iplus,
            iminus,
            incidence,
            gamma,
        })
    }

    /// Number of passive vertices.
    pub fn n_passive(&self) -> usize {
        self.n - self.n0
    }

    /// True iff vertex `i` (zero-based) is active.
    pub fn is_active(&self, i: usize) -> bool {
        i < self.n0
    }
}

/// The node interaction matrix `B` and noise matrix `C` with their
/// active/passive partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCoupling {
    pub b: Array2<Complex64>,
    pub c: Array2<f64>,
    pub n0: usize,
}

impl NodeCoupling {
    /// Validates shapes, the sign constraint on `C` and the requirement that
    /// some active-row noise entry is strictly positive.
    pub fn validate(b: Array2<Complex64>, c: Array2<f64>, n0: usize) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", b.nrows(), b.ncols()),
            });
        }
        if c.nrows() != n || c.ncols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                got: format!("{}x{}", c.nrows(), c.ncols()),
            });
        }
        if n0 < 1 || n0 > n {
            return Err(Error::InvalidActiveCount { n0, n });
        }
        for ((i, h), &v) in c.indexed_iter() {
            if v < 0.0 {
                return Err(Error::NegativeNoiseEntry {
                    row: i,
                    col: h,
                    value: v,
                });
            }
        }
        if c.slice(s![..n0, ..]).iter().all(|&v| v == 0.0) {
            return Err(Error::NoActiveNoise);
        }
        Ok(NodeCoupling { b, c, n0 })
    }

    /// Convenience constructor for real `B`.
    pub fn validate_real(b: Array2<f64>, c: Array2<f64>, n0: usize) -> Result<Self> {
        Self::validate(b.mapv(|x| Complex64::new(x, 0.0)), c, n0)
    }

    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    /// First `n0` rows of `B`.
    pub fn b_active(&self) -> ArrayView2<'_, Complex64> {
        self.b.slice(s![..self.n0, ..])
    }

    /// Last `n - n0` rows of `B`.
    pub fn b_passive(&self) -> ArrayView2<'_, Complex64> {
        self.b.slice(s![self.n0.., ..])
    }

    /// First `n0` rows of `C`.
    pub fn c_active(&self) -> ArrayView2<'_, f64> {
        self.c.slice(s![..self.n0, ..])
    }

    /// Last `n - n0` rows of `C`.
    pub fn c_passive(&self) -> ArrayView2<'_, f64> {
        self.c.slice(s![self.n0.., ..])
    }

    /// Top-left `n0 x n0` block of `C`.
    pub fn c_active_active(&self) -> ArrayView2<'_, f64> {
        self.c.slice(s![..self.n0, ..self.n0])
    }

    /// True iff `B` vanishes identically.
    pub fn b_is_zero(&self) -> bool {
        self.b.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    /// True iff the passive-row noise block vanishes.
    pub fn c_passive_is_zero(&self) -> bool {
        self.c_passive().iter().all(|&v| v == 0.0)
    }

    /// Frobenius norm of the active noise rows.
    pub fn c_active_hs_norm(&self) -> f64 {
        self.c_active().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
