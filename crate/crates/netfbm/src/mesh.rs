//! Per-edge uniform meshes, the global degree-of-freedom layout, and sampled
//! edge potentials.
//!
//! Dof ordering: edge-interior nodes first (edge by edge), then the vertex
//! dofs in graph order. Since active vertices come first in the graph, the
//! state dofs (interiors + active vertices) form a contiguous leading block
//! and the passive vertex dofs a trailing one.

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Subdivision count per edge (N_j >= 2).
    pub subdivisions: Vec<usize>,
    /// Start of each edge's interior-dof block.
    interior_offset: Vec<usize>,
    /// Total interior dof count.
    pub n_interior: usize,
    /// Vertex count, active count (copied from the graph).
    pub n: usize,
    pub n0: usize,
    /// Zero-based (tail, head) per edge.
    pub edges: Vec<(usize, usize)>,
}

impl Mesh {
    /// Uniform subdivision of every edge into `n_sub` cells.
    pub fn uniform(graph: &NetworkGraph, n_sub: usize) -> Result<Self> {
        Self::per_edge(graph, &vec![n_sub; graph.m])
    }

    /// Per-edge subdivision counts.
    pub fn per_edge(graph: &NetworkGraph, subdivisions: &[usize]) -> Result<Self> {
        if subdivisions.len() != graph.m {
            return Err(Error::ShapeMismatch {
                expected: format!("{} subdivision counts", graph.m),
                got: format!("{}", subdivisions.len()),
            });
        }
        let mut interior_offset = Vec::with_capacity(graph.m);
        let mut acc = 0;
        for (j, &nj) in subdivisions.iter().enumerate() {
            if nj < 2 {
                return Err(Error::InvalidSubdivision { edge: j, got: nj });
            }
            interior_offset.push(acc);
            acc += nj - 1;
        }
        Ok(Mesh {
            subdivisions: subdivisions.to_vec(),
            interior_offset,
            n_interior: acc,
            n: graph.n,
            n0: graph.n0,
            edges: graph.edges.clone(),
        })
    }

    /// Total dof count: interiors plus one dof per vertex.
    pub fn dim_full(&self) -> usize {
        self.n_interior + self.n
    }

    /// State dof count: interiors plus active vertices.
    pub fn dim_state(&self) -> usize {
        self.n_interior + self.n0
    }

    /// Passive vertex dof count.
    pub fn n_passive(&self) -> usize {
        self.n - self.n0
    }

    /// Global dof of vertex `i`.
    pub fn vertex_dof(&self, i: usize) -> usize {
        self.n_interior + i
    }

    /// Global dof of mesh node `k` (0..=N_j) on edge `j`; endpoints map to
    /// the shared vertex dofs, realizing the continuity condition.
    pub fn node_dof(&self, j: usize, k: usize) -> usize {
        let nj = self.subdivisions[j];
        if k == 0 {
            self.vertex_dof(self.edges[j].0)
        } else if k == nj {
            self.vertex_dof(self.edges[j].1)
        } else {
            self.interior_offset[j] + k - 1
        }
    }

    /// Mesh width of edge `j`.
    pub fn h(&self, j: usize) -> f64 {
        1.0 / self.subdivisions[j] as f64
    }

    /// True iff the global dof is a passive vertex dof.
    pub fn is_passive_dof(&self, dof: usize) -> bool {
        dof >= self.n_interior + self.n0
    }
}

/// Per-edge potential sampled at the mesh nodes, evaluated by piecewise
/// linear interpolation. Units: inverse time.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePotential {
    /// `values[j]` has `N_j + 1` samples at the nodes of edge `j`.
    pub values: Vec<Vec<f64>>,
}

impl EdgePotential {
    /// Zero potential.
    pub fn zero(mesh: &Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    /// The same constant on every edge.
    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        EdgePotential {
            values: mesh
                .subdivisions
                .iter()
                .map(|&nj| vec![c; nj + 1])
                .collect(),
        }
    }

    /// One constant per edge.
    pub fn per_edge_constant(mesh: &Mesh, consts: &[f64]) -> Result<Self> {
        if consts.len() != mesh.subdivisions.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} edge constants", mesh.subdivisions.len()),
                got: format!("{}", consts.len()),
            });
        }
        Ok(EdgePotential {
            values: mesh
                .subdivisions
                .iter()
                .zip(consts)
                .map(|(&nj, &c)| vec![c; nj + 1])
                .collect(),
        })
    }

    /// Node samples supplied directly; lengths must match the mesh.
    pub fn from_samples(mesh: &Mesh, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != mesh.subdivisions.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} edges", mesh.subdivisions.len()),
                got: format!("{}", values.len()),
            });
        }
        for (j, (vals, &nj)) in values.iter().zip(&mesh.subdivisions).enumerate() {
            if vals.len() != nj + 1 {
                return Err(Error::PotentialLengthMismatch {
                    edge: j,
                    expected: nj + 1,
                    got: vals.len(),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinitePotential { edge: j });
            }
        }
        Ok(EdgePotential { values })
    }

    /// Samples a function of (edge, x) at the mesh nodes.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let values = mesh
            .subdivisions
            .iter()
            .enumerate()
            .map(|(j, &nj)| {
                (0..=nj)
                    .map(|k| f(j, k as f64 / nj as f64))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::from_samples(mesh, values)
    }

    /// Piecewise-linear evaluation at `x` in [0, 1] on edge `j`.
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        let vals = &self.values[j];
        let nj = vals.len() - 1;
        let pos = (x.clamp(0.0, 1.0)) * nj as f64;
        let k = (pos.floor() as usize).min(nj - 1);
        let s = pos - k as f64;
        vals[k] * (1.0 - s) + vals[k + 1] * s
    }

    pub fn min(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> NetworkGraph {
        NetworkGraph::build(&[(1, 2), (2, 3)], 2).unwrap()
    }

    #[test]
    fn dof_layout_counts() {
        let g = path_graph();
        let mesh = Mesh::per_edge(&g, &[4, 8]).unwrap();
        assert_eq!(mesh.dim_full(), 3 + 7 + 3);
        assert_eq!(mesh.dim_state(), 3 + 7 + 2);
        // Endpoints share vertex dofs.
        assert_eq!(mesh.node_dof(0, 0), mesh.vertex_dof(0));
        assert_eq!(mesh.node_dof(0, 4), mesh.vertex_dof(1));
        assert_eq!(mesh.node_dof(1, 0), mesh.vertex_dof(1));
        assert_eq!(mesh.node_dof(1, 8), mesh.vertex_dof(2));
        // Dof map is a bijection onto 0..dim.
        let mut seen = vec![false; mesh.dim_full()];
        for j in 0..2 {
            for k in 0..=mesh.subdivisions[j] {
                seen[mesh.node_dof(j, k)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // v3 is the only passive vertex and owns the last dof.
        assert!(mesh.is_passive_dof(mesh.vertex_dof(2)));
        assert!(!mesh.is_passive_dof(mesh.vertex_dof(1)));
    }

    #[test]
    fn subdivision_minimum_enforced() {
        let g = path_graph();
        assert!(matches!(
            Mesh::per_edge(&g, &[1, 8]),
            Err(Error::InvalidSubdivision { edge: 0, got: 1 })
        ));
    }

    #[test]
    fn potential_interpolates_linearly() {
        let g = path_graph();
        let mesh = Mesh::uniform(&g, 4).unwrap();
        let p = EdgePotential::from_fn(&mesh, |_, x| 2.0 * x).unwrap();
        assert!((p.eval(0, 0.375) - 0.75).abs() < 1e-15);
        assert!((p.eval(1, 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(p.min(), 0.0);
        assert_eq!(p.max(), 2.0);
    }

    #[test]
    fn potential_length_checked() {
        let g = path_graph();
        let mesh = Mesh::uniform(&g, 4).unwrap();
        let bad = vec![vec![0.0; 5], vec![0.0; 4]];
        assert!(matches!(
            EdgePotential::from_samples(&mesh, bad),
            Err(Error::PotentialLengthMismatch { edge: 1, .. })
        ));
        let nan = vec![vec![0.0; 5], vec![0.0, f64::NAN, 0.0, 0.0, 0.0]];
        assert!(matches!(
            EdgePotential::from_samples(&mesh, nan),
            Err(Error::NonFinitePotential { edge: 1 })
        ));
    }
}
