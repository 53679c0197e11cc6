//! Finite-dimensional realization of the diffusion generator on the network.
//!
//! The generator acts on the state space "edge functions x active vertex
//! values". It is assembled from the sesquilinear form
//!
//! ```text
//! form(u, v) = (u'|v') + (p u|v) + sum_{i,h} b_ih q^u_h conj(q^v_i)
//! ```
//!
//! with continuous piecewise-linear elements sharing one dof per vertex. The
//! mass carries the L2 edge inner product plus a unit point mass at every
//! active vertex; passive vertex dofs are massless and eliminated exactly by
//! static condensation. The sign convention for the vertex flux operators is
//! the one that makes the dynamic node law dissipative for p >= 0 and
//! positive semidefinite B, i.e. (K v)_i sums tail-side derivatives and
//! subtracts head-side ones.

use ndarray::{s, Array1, Array2, ArrayView1};
use ndarray_linalg::{Cholesky, Eig, Eigh, Inverse, OperationNorm, UPLO, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{NetworkGraph, NodeCoupling};
use crate::mesh::{EdgePotential, Mesh};

pub type C64 = Complex64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn to_c(a: &Array2<f64>) -> Array2<C64> {
    a.mapv(c)
}

/// Owned copy in standard layout; slices of size-one dimensions otherwise
/// carry zero strides that the LAPACK layer rejects.
pub(crate) fn standard_owned(a: ndarray::ArrayView2<'_, C64>) -> Array2<C64> {
    Array2::from_shape_vec((a.nrows(), a.ncols()), a.iter().cloned().collect())
        .expect("shape matches data length")
}

/// Maximum eigenvector-matrix condition number before an operator is treated
/// as non-diagonalizable.
pub const COND_LIMIT: f64 = 1e8;

/// Relative rank tolerance for kernel detection.
pub const RANK_TOL: f64 = 1e-9;

/// One-sided vertex flux maps built from second-order three-point stencils.
///
/// `(K v)_i = sum_{j: tail at i} v_j'(0) - sum_{j: head at i} v_j'(1)`,
/// split into active and passive rows. Both act on full-dof vectors.
#[derive(Debug, Clone)]
pub struct KirchhoffTrace {
    pub active: Array2<f64>,
    pub passive: Array2<f64>,
}

impl KirchhoffTrace {
    fn build(mesh: &Mesh) -> Self {
        let dim = mesh.dim_full();
        let n = mesh.n;
        let n0 = mesh.n0;
        let mut rows = Array2::<f64>::zeros((n, dim));
        for (j, &(tail, head)) in mesh.edges.iter().enumerate() {
            let nj = mesh.subdivisions[j];
            let h = mesh.h(j);
            // u'(0) ~ (-3 u_0 + 4 u_1 - u_2) / (2h)
            rows[[tail, mesh.node_dof(j, 0)]] += -3.0 / (2.0 * h);
            rows[[tail, mesh.node_dof(j, 1)]] += 4.0 / (2.0 * h);
            rows[[tail, mesh.node_dof(j, 2)]] += -1.0 / (2.0 * h);
            // -u'(1) ~ -(3 u_N - 4 u_{N-1} + u_{N-2}) / (2h)
            rows[[head, mesh.node_dof(j, nj)]] += -3.0 / (2.0 * h);
            rows[[head, mesh.node_dof(j, nj - 1)]] += 4.0 / (2.0 * h);
            rows[[head, mesh.node_dof(j, nj - 2)]] += -1.0 / (2.0 * h);
        }
        KirchhoffTrace {
            active: rows.slice(s![..n0, ..]).to_owned(),
            passive: rows.slice(s![n0.., ..]).to_owned(),
        }
    }
}

/// Eigenvector machinery of the transformed pencil; absent when the
/// eigenvector matrix is numerically singular.
#[derive(Debug, Clone)]
pub(crate) struct EigenBasis {
    /// Eigenvectors of the symmetrized operator (columns), z-coordinates.
    pub y: Array2<C64>,
    pub y_inv: Array2<C64>,
    /// Y^H Y; `None` when Y is unitary (Hermitian path).
    pub gram: Option<Array2<C64>>,
    pub cond: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct PencilEigen {
    /// Eigenvalues sorted by descending real part.
    pub values: Array1<C64>,
    /// Eigenvectors in state coordinates, columns matching `values`.
    pub vectors: Array2<C64>,
    pub basis: Option<EigenBasis>,
    pub hermitian: bool,
}

/// FEM-specific byproducts kept for boundary-value problems and diagnostics.
#[derive(Debug, Clone)]
pub struct FemData {
    pub mesh: Mesh,
    /// Uncondensed form matrix on all dofs.
    pub k_full: Array2<C64>,
    /// Passive values from state dofs: v_p = recover . v_s.
    pub recover: Array2<C64>,
    pub traces: KirchhoffTrace,
}

/// Dense realization of the generator as the pencil `A_h x = lambda M_h x`
/// on the state dofs, with cached spectral machinery.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    /// Pencil matrix (condensed, negated form matrix).
    a: Array2<C64>,
    /// Symmetric positive definite mass.
    mass: Array2<f64>,
    mass_c: Array2<C64>,
    /// L^T and L^{-T} as complex matrices, M = L L^T.
    lt: Array2<C64>,
    linv_t: Array2<C64>,
    /// The operator M^{-1} A acting on states.
    op: Array2<C64>,
    eigen: PencilEigen,
    /// Spectral shift used for fractional powers when 0 is in the spectrum.
    shift: f64,
    fem: Option<FemData>,
}

impl DiscreteGenerator {
    /// Assembles the generator for a (graph, coupling, potential) triple on
    /// the given mesh.
    pub fn assemble(
        graph: &NetworkGraph,
        coupling: &NodeCoupling,
        potential: &EdgePotential,
        mesh: &Mesh,
    ) -> Result<Self> {
        if coupling.n() != graph.n {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0} coupling", graph.n),
                got: format!("{0}x{0}", coupling.n()),
            });
        }
        if mesh.edges != graph.edges || mesh.n0 != graph.n0 {
            return Err(Error::ShapeMismatch {
                expected: "mesh built from the same graph".into(),
                got: "mismatched mesh".into(),
            });
        }
        if potential.values.len() != graph.m
            || potential
                .values
                .iter()
                .zip(&mesh.subdivisions)
                .any(|(v, &nj)| v.len() != nj + 1)
        {
            return Err(Error::ShapeMismatch {
                expected: "potential sampled on the mesh".into(),
                got: "mismatched potential".into(),
            });
        }

        let dim = mesh.dim_full();
        let d = mesh.dim_state();
        let np = mesh.n_passive();

        let mut k_full = Array2::<C64>::zeros((dim, dim));
        let mut m_full = Array2::<f64>::zeros((dim, dim));

        for j in 0..graph.m {
            let nj = mesh.subdivisions[j];
            let h = mesh.h(j);
            let p = &potential.values[j];
            for k in 0..nj {
                let a = mesh.node_dof(j, k);
                let b = mesh.node_dof(j, k + 1);
                // Stiffness (u'|v') on the cell.
                k_full[[a, a]] += c(1.0 / h);
                k_full[[b, b]] += c(1.0 / h);
                k_full[[a, b]] += c(-1.0 / h);
                k_full[[b, a]] += c(-1.0 / h);
                // (p u|v) with p linear on the cell, integrated exactly.
                let (pa, pb) = (p[k], p[k + 1]);
                k_full[[a, a]] += c(h * (3.0 * pa + pb) / 12.0);
                k_full[[b, b]] += c(h * (pa + 3.0 * pb) / 12.0);
                k_full[[a, b]] += c(h * (pa + pb) / 12.0);
                k_full[[b, a]] += c(h * (pa + pb) / 12.0);
                // L2 edge mass, skipping massless passive vertex dofs.
                for (r, cc, w) in [
                    (a, a, h / 3.0),
                    (b, b, h / 3.0),
                    (a, b, h / 6.0),
                    (b, a, h / 6.0),
                ] {
                    if !mesh.is_passive_dof(r) && !mesh.is_passive_dof(cc) {
                        m_full[[r, cc]] += w;
                    }
                }
            }
        }
        // Node pairing sum_{i,h} b_ih q^u_h conj(q^v_i): row = test vertex i.
        for i in 0..graph.n {
            for hh in 0..graph.n {
                let b_ih = coupling.b[[i, hh]];
                if b_ih != c(0.0) {
                    k_full[[mesh.vertex_dof(i), mesh.vertex_dof(hh)]] += b_ih;
                }
            }
        }
        // Unit point mass at each active vertex.
        for i in 0..graph.n0 {
            let vd = mesh.vertex_dof(i);
            m_full[[vd, vd]] += 1.0;
        }

        // Static condensation of the massless passive block.
        let (a_state, recover) = if np == 0 {
            (
                k_full.mapv(|z| -z),
                Array2::<C64>::zeros((0, d)),
            )
        } else {
            let k_ss = standard_owned(k_full.slice(s![..d, ..d]));
            let k_sp = standard_owned(k_full.slice(s![..d, d..]));
            let k_ps = standard_owned(k_full.slice(s![d.., ..d]));
            let k_pp = standard_owned(k_full.slice(s![d.., d..]));
            let k_pp_inv = k_pp.inv().map_err(|_| Error::SingularPassiveBlock)?;
            let cond = k_pp.opnorm_one()? * k_pp_inv.opnorm_one()?;
            if !cond.is_finite() || cond > 1e12 {
                return Err(Error::SingularPassiveBlock);
            }
            let recover = -k_pp_inv.dot(&k_ps);
            let condensed = &k_ss + &k_sp.dot(&recover);
            (condensed.mapv(|z| -z), recover)
        };

        let mass = m_full.slice(s![..d, ..d]).to_owned();
        let traces = KirchhoffTrace::build(mesh);
        let fem = FemData {
            mesh: mesh.clone(),
            k_full,
            recover,
            traces,
        };
        Self::finish(a_state, mass, Some(fem))
    }

    /// Builds a generator directly from a pencil `(A, M)` with `M` symmetric
    /// positive definite. Used for surrogate and block operators.
    pub fn from_matrices(a: Array2<C64>, mass: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || mass.nrows() != mass.ncols() || a.nrows() != mass.nrows() {
            return Err(Error::ShapeMismatch {
                expected: "square pencil of matching dimension".into(),
                got: format!("A {}x{}, M {}x{}", a.nrows(), a.ncols(), mass.nrows(), mass.ncols()),
            });
        }
        Self::finish(a, mass, None)
    }

    /// One-dimensional surrogate with operator value `a` (unit mass).
    pub fn scalar(a: f64) -> Self {
        Self::from_matrices(Array2::from_elem((1, 1), c(a)), Array2::eye(1))
            .expect("scalar pencil is always valid")
    }

    fn finish(a: Array2<C64>, mass: Array2<f64>, fem: Option<FemData>) -> Result<Self> {
        let chol = mass
            .cholesky(UPLO::Lower)
            .map_err(|e| Error::Linalg(format!("mass matrix not positive definite: {e}")))?;
        let linv = chol
            .inv()
            .map_err(|e| Error::Linalg(format!("singular Cholesky factor: {e}")))?;
        let lt = to_c(&chol.t().to_owned());
        let linv_t = to_c(&linv.t().to_owned());
        let linv_c = to_c(&linv);

        // Symmetrized operator L^{-1} A L^{-T} and the plain operator M^{-1} A.
        let tilde = linv_c.dot(&a).dot(&linv_t);
        let op = linv_t.dot(&tilde).dot(&lt);

        let eigen = Self::decompose(&tilde, &linv_t)?;
        let scale = a.opnorm_fro().unwrap_or(1.0).max(f64::MIN_POSITIVE);
        let min_abs = eigen
            .values
            .iter()
            .map(|z| z.norm())
            .fold(f64::INFINITY, f64::min);
        let shift = if min_abs <= RANK_TOL * scale { 1.0 } else { 0.0 };

        Ok(DiscreteGenerator {
            mass_c: to_c(&mass),
            a,
            mass,
            lt,
            linv_t,
            op,
            eigen,
            shift,
            fem,
        })
    }

    fn decompose(tilde: &Array2<C64>, linv_t: &Array2<C64>) -> Result<PencilEigen> {
        let herm_defect = {
            let adj = tilde.t().to_owned().mapv(|z| z.conj());
            let diff = tilde - &adj;
            diff.opnorm_fro()?
        };
        let scale = tilde.opnorm_fro()?.max(1.0);
        let hermitian = herm_defect <= 1e-12 * scale;

        let (values, y): (Array1<C64>, Array2<C64>) = if hermitian {
            let sym = {
                let adj = tilde.t().to_owned().mapv(|z| z.conj());
                (tilde + &adj).mapv(|z| z * 0.5)
            };
            let (vals, vecs) = sym
                .eigh(UPLO::Lower)
                .map_err(|e| Error::EigensolverFailure(e.to_string()))?;
            (vals.mapv(c), vecs)
        } else {
            tilde
                .eig()
                .map_err(|e| Error::EigensolverFailure(e.to_string()))?
        };

        // Sort by descending real part (then imaginary, for determinism).
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&i, &j| {
            (values[j].re, values[j].im)
                .partial_cmp(&(values[i].re, values[i].im))
                .unwrap()
        });
        let values = Array1::from_iter(order.iter().map(|&i| values[i]));
        let y = {
            let cols: Vec<_> = order.iter().map(|&i| y.column(i).to_owned()).collect();
            let mut m = Array2::<C64>::zeros((y.nrows(), y.ncols()));
            for (k, col) in cols.iter().enumerate() {
                m.column_mut(k).assign(col);
            }
            m
        };

        let vectors = linv_t.dot(&y);
        let basis = if hermitian {
            Some(EigenBasis {
                y_inv: y.t().to_owned().mapv(|z| z.conj()),
                gram: None,
                cond: 1.0,
                y,
            })
        } else {
            let cond = match y.svd(false, false) {
                Ok((_, sv, _)) => {
                    let smax = sv.iter().cloned().fold(0.0, f64::max);
                    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
                    if smin > 0.0 { smax / smin } else { f64::INFINITY }
                }
                Err(_) => f64::INFINITY,
            };
            match y.inv() {
                Ok(y_inv) if cond.is_finite() => {
                    let gram = y.t().to_owned().mapv(|z| z.conj()).dot(&y);
                    Some(EigenBasis {
                        y_inv,
                        gram: Some(gram),
                        cond,
                        y,
                    })
                }
                _ => None,
            }
        };

        Ok(PencilEigen {
            values,
            vectors,
            basis,
            hermitian,
        })
    }

    // ------------------------------------------------------------------
    // Basic accessors.

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// The pencil matrix A_h.
    pub fn a_matrix(&self) -> &Array2<C64> {
        &self.a
    }

    /// The mass matrix M_h.
    pub fn mass_matrix(&self) -> &Array2<f64> {
        &self.mass
    }

    /// The operator M^{-1} A_h.
    pub fn op_matrix(&self) -> &Array2<C64> {
        &self.op
    }

    pub fn fem(&self) -> Option<&FemData> {
        self.fem.as_ref()
    }

    /// Spectral shift lambda_0 (1 when 0 lies in the spectrum, else 0).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn is_hermitian(&self) -> bool {
        self.eigen.hermitian
    }

    /// Largest real part over the spectrum.
    pub fn spectral_bound(&self) -> f64 {
        self.eigen.values[0].re
    }

    /// Eigenvalues sorted by descending real part.
    pub fn eigenvalues(&self) -> &Array1<C64> {
        &self.eigen.values
    }

    /// Eigenpairs in state coordinates, sorted by descending real part.
    pub fn spectrum(&self) -> (&Array1<C64>, &Array2<C64>) {
        (&self.eigen.values, &self.eigen.vectors)
    }

    /// Dimension of the numerical kernel at the standard rank tolerance.
    pub fn kernel_dim(&self) -> usize {
        let scale = self.a.opnorm_fro().unwrap_or(1.0).max(f64::MIN_POSITIVE);
        self.eigen
            .values
            .iter()
            .filter(|z| z.norm() <= RANK_TOL * scale)
            .count()
    }

    pub(crate) fn basis(&self) -> Option<&EigenBasis> {
        self.eigen.basis.as_ref()
    }

    /// True when functions of the operator can go through the
    /// eigendecomposition at the configured conditioning limit.
    pub fn is_diagonalizable(&self) -> bool {
        self.eigen
            .basis
            .as_ref()
            .map(|b| b.cond <= COND_LIMIT)
            .unwrap_or(false)
    }

    // ------------------------------------------------------------------
    // Inner products and coordinate transforms.

    /// Mass inner product <u, v>_M = v^H M u.
    pub fn inner_m(&self, u: ArrayView1<'_, C64>, v: ArrayView1<'_, C64>) -> C64 {
        let mu = self.mass_c.dot(&u);
        v.iter().zip(mu.iter()).map(|(vi, mi)| vi.conj() * mi).sum()
    }

    /// Mass norm.
    pub fn norm_m(&self, v: ArrayView1<'_, C64>) -> f64 {
        self.inner_m(v, v).re.max(0.0).sqrt()
    }

    /// z = Y^{-1} L^T v (spectral coordinates).
    pub(crate) fn to_spectral(&self, v: ArrayView1<'_, C64>) -> Result<Array1<C64>> {
        let basis = self.require_basis()?;
        Ok(basis.y_inv.dot(&self.lt.dot(&v)))
    }

    /// v = L^{-T} Y z.
    pub(crate) fn from_spectral(&self, z: ArrayView1<'_, C64>) -> Result<Array1<C64>> {
        let basis = self.require_basis()?;
        Ok(self.linv_t.dot(&basis.y.dot(&z)))
    }

    pub(crate) fn lt_matrix(&self) -> &Array2<C64> {
        &self.lt
    }

    pub(crate) fn linv_t_matrix(&self) -> &Array2<C64> {
        &self.linv_t
    }

    fn require_basis(&self) -> Result<&EigenBasis> {
        match self.eigen.basis.as_ref() {
            Some(b) if b.cond <= COND_LIMIT => Ok(b),
            Some(b) => Err(Error::NonDiagonalizable {
                cond: b.cond,
                limit: COND_LIMIT,
            }),
            None => Err(Error::NonDiagonalizable {
                cond: f64::INFINITY,
                limit: COND_LIMIT,
            }),
        }
    }

    /// Applies f(op) to a state via the eigendecomposition.
    pub(crate) fn spectral_apply(
        &self,
        v: ArrayView1<'_, C64>,
        f: impl Fn(C64) -> C64,
    ) -> Result<Array1<C64>> {
        let mut z = self.to_spectral(v)?;
        for (zi, &lam) in z.iter_mut().zip(self.eigen.values.iter()) {
            *zi *= f(lam);
        }
        self.from_spectral(z.view())
    }

    /// Dense matrix of f(op) via the eigendecomposition.
    pub(crate) fn spectral_matrix(&self, f: impl Fn(C64) -> C64) -> Result<Array2<C64>> {
        let basis = self.require_basis()?;
        let mut fy = basis.y.clone();
        for (k, &lam) in self.eigen.values.iter().enumerate() {
            let fl = f(lam);
            fy.column_mut(k).mapv_inplace(|z| z * fl);
        }
        Ok(self.linv_t.dot(&fy).dot(&basis.y_inv).dot(&self.lt))
    }

    // ------------------------------------------------------------------
    // Resolvent, Yosida approximation, fractional powers.

    fn spectrum_hit(&self, lambda: C64) -> Option<Error> {
        let scale = self
            .eigen
            .values
            .iter()
            .map(|z| z.norm())
            .fold(1.0, f64::max);
        let dist = self
            .eigen
            .values
            .iter()
            .map(|z| (z - lambda).norm())
            .fold(f64::INFINITY, f64::min);
        (dist <= 1e-9 * scale).then(|| Error::SpectrumHit(lambda))
    }

    /// Resolvent R(lambda) = (lambda M - A)^{-1} M of the operator.
    pub fn resolvent(&self, lambda: C64) -> Result<Array2<C64>> {
        if let Some(err) = self.spectrum_hit(lambda) {
            return Err(err);
        }
        let mut shifted = self.a.mapv(|z| -z);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                shifted[[i, j]] += lambda * self.mass_c[[i, j]];
            }
        }
        let inv = shifted
            .inv()
            .map_err(|_| Error::SpectrumHit(lambda))?;
        Ok(inv.dot(&self.mass_c))
    }

    /// Yosida approximation A_n = n^2 R(n) - n I for n above the spectral
    /// bound.
    pub fn yosida(&self, n: f64) -> Result<Array2<C64>> {
        let mut out = self.resolvent(c(n))?;
        out.mapv_inplace(|z| z * (n * n));
        for i in 0..self.dim() {
            out[[i, i]] -= c(n);
        }
        Ok(out)
    }

    /// Scalar spectral map of the Yosida approximation:
    /// `yosida_value(lambda, n) = n lambda / (n - lambda)`.
    pub fn yosida_value(lambda: C64, n: f64) -> C64 {
        c(n) * lambda / (c(n) - lambda)
    }

    /// Norm of `(shift - op)^alpha v` in the mass norm, through the cached
    /// eigendecomposition.
    pub fn fractional_norm(&self, alpha: f64, v: ArrayView1<'_, C64>) -> Result<f64> {
        let w = self.fractional_apply(alpha, v)?;
        Ok(self.norm_m(w.view()))
    }

    /// Applies `(shift - op)^alpha` to a state.
    pub fn fractional_apply(&self, alpha: f64, v: ArrayView1<'_, C64>) -> Result<Array1<C64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::OutOfRange {
                key: "alpha".into(),
                value: format!("{alpha}"),
                reason: "fractional powers take alpha in [0, 1]".into(),
            });
        }
        let shift = c(self.shift);
        self.spectral_apply(v, |lam| (shift - lam).powf(alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkGraph;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn single_edge_gen(n_sub: usize, p: f64) -> DiscreteGenerator {
        let g = NetworkGraph::build(&[(1, 2)], 2).unwrap();
        let coupling =
            NodeCoupling::validate_real(Array2::zeros((2, 2)), Array2::eye(2), 2).unwrap();
        let mesh = Mesh::uniform(&g, n_sub).unwrap();
        let pot = EdgePotential::constant(&mesh, p);
        DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap()
    }

    #[test]
    fn single_edge_kernel_is_constant() {
        let gen = single_edge_gen(8, 0.0);
        let (vals, vecs) = gen.spectrum();
        // Largest eigenvalue is 0 with constant eigenvector.
        assert!(vals[0].norm() < 1e-12);
        let v0 = vecs.column(0);
        let ratio = v0[0];
        for z in v0.iter() {
            assert!((z - ratio).norm() < 1e-9 * ratio.norm());
        }
        // All others strictly negative.
        for z in vals.iter().skip(1) {
            assert!(z.re < -1e-6);
        }
        assert_eq!(gen.kernel_dim(), 1);
        assert_eq!(gen.shift(), 1.0);
    }

    #[test]
    fn constant_potential_lowers_spectrum() {
        // The zero-order term acts on the edge component only, so by min-max
        // each eigenvalue moves down by at most the constant and strictly
        // below its p = 0 position.
        let base = single_edge_gen(8, 0.0);
        let shifted = single_edge_gen(8, 0.7);
        for (a, b) in base
            .eigenvalues()
            .iter()
            .zip(shifted.eigenvalues().iter())
        {
            assert!(b.re < a.re + 1e-12);
            assert!(b.re >= a.re - 0.7 - 1e-9);
        }
        assert!(shifted.spectral_bound() < -1e-3);
    }

    #[test]
    fn hermitian_b_gives_real_spectrum() {
        let g = NetworkGraph::build(&[(1, 2)], 2).unwrap();
        let b = array![[1.0, 0.5], [0.5, 2.0]];
        let coupling = NodeCoupling::validate_real(b, Array2::eye(2), 2).unwrap();
        let mesh = Mesh::uniform(&g, 12).unwrap();
        let pot = EdgePotential::zero(&mesh);
        let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
        assert!(gen.is_hermitian());
        for z in gen.eigenvalues().iter() {
            assert!(z.im.abs() < 1e-9);
        }
        // M-self-adjointness of the operator: M^{-1} op^H M = op.
        let m = to_c(gen.mass_matrix());
        let m_inv = m.inv().unwrap();
        let oph = gen.op_matrix().t().to_owned().mapv(|z| z.conj());
        let lhs = m_inv.dot(&oph).dot(&m);
        let diff = (&lhs - gen.op_matrix()).opnorm_fro().unwrap();
        assert!(diff <= 1e-10 * gen.op_matrix().opnorm_fro().unwrap());
    }

    #[test]
    fn scalar_resolvent_and_yosida() {
        let gen = DiscreteGenerator::scalar(-1.0);
        let r = gen.resolvent(c(1.0)).unwrap();
        assert_relative_eq!(r[[0, 0]].re, 0.5, max_relative = 1e-12);
        let a1 = gen.yosida(1.0).unwrap();
        assert_relative_eq!(a1[[0, 0]].re, -0.5, max_relative = 1e-12);
        let a10 = gen.yosida(10.0).unwrap();
        assert_relative_eq!(a10[[0, 0]].re, -10.0 / 11.0, max_relative = 1e-12);
    }

    #[test]
    fn resolvent_identity_and_spectrum_hit() {
        let gen = single_edge_gen(8, 0.5);
        let r1 = gen.resolvent(c(1.0)).unwrap();
        let r2 = gen.resolvent(c(2.0)).unwrap();
        // R(1) - R(2) = (2 - 1) R(1) R(2)
        let lhs = &r1 - &r2;
        let rhs = r1.dot(&r2);
        let err = (&lhs - &rhs).opnorm_fro().unwrap() / rhs.opnorm_fro().unwrap();
        assert!(err < 1e-9, "resolvent identity violated: {err}");
        // Identity R(lambda)(lambda I - M^{-1}A) = I.
        let mut shifted = gen.op_matrix().mapv(|z| -z);
        for i in 0..gen.dim() {
            shifted[[i, i]] += c(1.0);
        }
        let prod = r1.dot(&shifted);
        let eye = Array2::<C64>::eye(gen.dim());
        assert!((&prod - &eye).opnorm_fro().unwrap() < 1e-10 * (gen.dim() as f64).sqrt());

        let lam = gen.eigenvalues()[0];
        assert!(matches!(gen.resolvent(lam), Err(Error::SpectrumHit(_))));
    }

    #[test]
    fn yosida_commutes_and_converges() {
        let gen = single_edge_gen(8, 0.5);
        let a10 = gen.yosida(10.0).unwrap();
        let comm = a10.dot(gen.op_matrix()) - gen.op_matrix().dot(&a10);
        let rel = comm.opnorm_fro().unwrap()
            / (a10.opnorm_fro().unwrap() * gen.op_matrix().opnorm_fro().unwrap());
        assert!(rel < 1e-9, "commutator too large: {rel}");

        // ||A_n v - A v|| decreasing on a smooth state.
        let v = gen.spectrum().1.column(1).to_owned();
        let av = gen.op_matrix().dot(&v);
        let mut prev = f64::INFINITY;
        for n in [10.0, 100.0, 1000.0] {
            let an = gen.yosida(n).unwrap();
            let gap = (&an.dot(&v) - &av).mapv(|z| z.norm_sqr()).sum().sqrt();
            assert!(gap < prev, "Yosida gap not decreasing at n = {n}");
            prev = gap;
        }
    }

    #[test]
    fn fractional_norm_limits() {
        let gen = single_edge_gen(8, 1.0); // invertible, shift = 0
        assert_eq!(gen.shift(), 0.0);
        let v = gen.spectrum().1.column(2).to_owned();
        let n0 = gen.fractional_norm(0.0, v.view()).unwrap();
        assert_relative_eq!(n0, gen.norm_m(v.view()), max_relative = 1e-10);
        let n1 = gen.fractional_norm(1.0, v.view()).unwrap();
        let av = gen.op_matrix().dot(&v);
        assert_relative_eq!(n1, gen.norm_m(av.view()), max_relative = 1e-9);
        // Interpolation inequality on the Hermitian case.
        let nh = gen.fractional_norm(0.5, v.view()).unwrap();
        assert!(nh * nh <= gen.norm_m(v.view()) * gen.norm_m(av.view()) * (1.0 + 1e-8));
    }

    #[test]
    fn spectrum_residuals() {
        let gen = single_edge_gen(16, 0.3);
        let (vals, vecs) = gen.spectrum();
        let scale = gen.a_matrix().opnorm_fro().unwrap();
        for (k, &lam) in vals.iter().enumerate() {
            let x = vecs.column(k);
            let ax = gen.a_matrix().dot(&x);
            let mx = gen.mass_matrix().mapv(|v| c(v)).dot(&x);
            let resid: f64 = ax
                .iter()
                .zip(mx.iter())
                .map(|(a, m)| (a - lam * m).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(resid <= 1e-9 * scale, "residual {resid} at eigenvalue {k}");
        }
    }
}
