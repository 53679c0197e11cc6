//! Semigroup evaluation, long-time classification, the abstract Dirichlet
//! operator and the block semigroup for inhomogeneous passive conditions.

use ndarray::{s, Array1, Array2, ArrayView1};
use ndarray_linalg::{Inverse, OperationNorm};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::NodeCoupling;
use crate::mesh::EdgePotential;
use crate::operator::{DiscreteGenerator, RANK_TOL};

type C64 = Complex64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Matrix exponential by scaling and squaring with a diagonal Pade
/// approximant of order 13. Fallback path for generators whose eigenvector
/// basis is too ill-conditioned.
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    const THETA_13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm = a.opnorm_one().unwrap_or(0.0);
    let s_pow = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / c(2f64.powi(s_pow as i32)));

    let b: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let eye = Array2::<C64>::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let u_inner = a6.mapv(|z| z * c(b[13]))
        + a4.mapv(|z| z * c(b[11]))
        + a2.mapv(|z| z * c(b[9]));
    let u = scaled.dot(
        &(a6.dot(&u_inner)
            + a6.mapv(|z| z * c(b[7]))
            + a4.mapv(|z| z * c(b[5]))
            + a2.mapv(|z| z * c(b[3]))
            + eye.mapv(|z| z * c(b[1]))),
    );
    let v_inner = a6.mapv(|z| z * c(b[12]))
        + a4.mapv(|z| z * c(b[10]))
        + a2.mapv(|z| z * c(b[8]));
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * c(b[6]))
        + a4.mapv(|z| z * c(b[4]))
        + a2.mapv(|z| z * c(b[2]))
        + eye.mapv(|z| z * c(b[0]));

    let denom = &v - &u;
    let numer = &v + &u;
    let mut f = denom
        .inv()
        .expect("Pade denominator is invertible within the scaling radius")
        .dot(&numer);
    for _ in 0..s_pow {
        f = f.dot(&f);
    }
    f
}

impl DiscreteGenerator {
    /// Applies S(t) = exp(t op) to a state. Uses the cached
    /// eigendecomposition; falls back to scaling-and-squaring when the
    /// eigenvector basis is ill-conditioned. S(0) is the identity exactly.
    pub fn propagate(&self, t: f64, v: ArrayView1<'_, C64>) -> Result<Array1<C64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(v.to_owned());
        }
        if self.is_diagonalizable() {
            self.spectral_apply(v, |lam| (lam * t).exp())
        } else {
            let e = expm(&self.op_matrix().mapv(|z| z * c(t)));
            Ok(e.dot(&v))
        }
    }

    /// Dense S(t).
    pub fn propagator(&self, t: f64) -> Result<Array2<C64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(Array2::eye(self.dim()));
        }
        if self.is_diagonalizable() {
            self.spectral_matrix(|lam| (lam * t).exp())
        } else {
            Ok(expm(&self.op_matrix().mapv(|z| z * c(t))))
        }
    }

    /// Operator norm of a state-space matrix in the mass norm.
    pub fn opnorm_m(&self, f: &Array2<C64>) -> Result<f64> {
        // ||F||_M = ||L^T F L^{-T}||_2.
        let t = self.lt_matrix().dot(f).dot(self.linv_t_matrix());
        let (_, sv, _) = ndarray_linalg::SVD::svd(&t, false, false)?;
        Ok(sv.iter().cloned().fold(0.0, f64::max))
    }
}

/// The qualitative long-time classes of the deterministic semigroup.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum StabilityClass {
    Contractive,
    StronglyStable,
    UniformlyExponentiallyStable { rate: f64 },
    ProjectionLimit,
    Unclassified,
}

impl StabilityClass {
    pub fn name(&self) -> &'static str {
        match self {
            StabilityClass::Contractive => "Contractive",
            StabilityClass::StronglyStable => "StronglyStable",
            StabilityClass::UniformlyExponentiallyStable { .. } => {
                "UniformlyExponentiallyStable"
            }
            StabilityClass::ProjectionLimit => "ProjectionLimit",
            StabilityClass::Unclassified => "Unclassified",
        }
    }
}

/// The premises the classifier checked, kept as evidence.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityEvidence {
    pub p_nonneg: bool,
    pub p_min: f64,
    pub p_max: f64,
    pub p_zero: bool,
    pub b_zero: bool,
    pub b_herm_min_eig: f64,
    pub b_herm_psd: bool,
    pub b_herm_pd: bool,
    pub b_adjoint_one_nonzero: bool,
    pub spectral_bound: f64,
    pub kernel_dim: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityAssessment {
    pub class: StabilityClass,
    pub evidence: StabilityEvidence,
}

/// Definiteness tolerance on Hermitian-part eigenvalues.
const DEFINITENESS_TOL: f64 = 1e-12;

/// Classifies the semigroup by the matrix premises, returning the strongest
/// provable class. The spectral bound feeds the exponential rate.
pub fn classify(
    gen: &DiscreteGenerator,
    potential: &EdgePotential,
    coupling: &NodeCoupling,
) -> Result<StabilityAssessment> {
    let p_min = potential.min();
    let p_max = potential.max();
    let p_nonneg = p_min >= 0.0;
    let p_zero = potential.is_zero();
    let b_zero = coupling.b_is_zero();

    let herm = {
        let adj = coupling.b.t().to_owned().mapv(|z| z.conj());
        (&coupling.b + &adj).mapv(|z| z * 0.5)
    };
    let herm_eigs = ndarray_linalg::Eigh::eigh(&herm, ndarray_linalg::UPLO::Lower)
        .map_err(|e| Error::EigensolverFailure(e.to_string()))?
        .0;
    let b_herm_min_eig = herm_eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_herm_psd = b_herm_min_eig >= -DEFINITENESS_TOL;
    let b_herm_pd = b_herm_min_eig > DEFINITENESS_TOL;

    let ones = Array1::<C64>::from_elem(coupling.n(), c(1.0));
    let b_adj_one = coupling.b.t().to_owned().mapv(|z| z.conj()).dot(&ones);
    let b_adjoint_one_nonzero =
        b_adj_one.iter().map(|z| z.norm()).sum::<f64>() > 1e-12;

    let spectral_bound = gen.spectral_bound();
    let kernel_dim = gen.kernel_dim();

    let evidence = StabilityEvidence {
        p_nonneg,
        p_min,
        p_max,
        p_zero,
        b_zero,
        b_herm_min_eig,
        b_herm_psd,
        b_herm_pd,
        b_adjoint_one_nonzero,
        spectral_bound,
        kernel_dim,
    };

    let class = if p_zero && b_zero {
        if kernel_dim == 1 && spectral_bound.abs() <= 1e-7 {
            StabilityClass::ProjectionLimit
        } else {
            StabilityClass::Unclassified
        }
    } else if p_nonneg && b_herm_psd {
        if p_min > 0.0 || b_herm_pd {
            StabilityClass::UniformlyExponentiallyStable {
                rate: -spectral_bound,
            }
        } else if (p_zero && b_adjoint_one_nonzero) || (b_zero && p_max > 0.0) {
            StabilityClass::StronglyStable
        } else {
            StabilityClass::Contractive
        }
    } else {
        StabilityClass::Unclassified
    };

    Ok(StabilityAssessment { class, evidence })
}

/// The rank-one equilibrium projection onto the constant state, available
/// when the semigroup converges to a projection (simple zero eigenvalue with
/// constant eigenvector, rest of the spectrum strictly decaying).
pub fn equilibrium_projection(gen: &DiscreteGenerator) -> Result<Array2<C64>> {
    let scale = gen
        .eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(1.0, f64::max);
    if gen.kernel_dim() != 1 || gen.spectral_bound().abs() > RANK_TOL * scale {
        return Err(Error::NotProjectionCase);
    }
    // Kernel vector must be the constant.
    let kernel = gen.spectrum().1.column(0).to_owned();
    let mean: C64 = kernel.iter().sum::<C64>() / c(kernel.len() as f64);
    if mean.norm() < 1e-12
        || kernel
            .iter()
            .any(|z| (z - mean).norm() > 1e-7 * mean.norm())
    {
        return Err(Error::NotProjectionCase);
    }
    let d = gen.dim();
    let ones = Array1::<C64>::from_elem(d, c(1.0));
    let m_ones = gen.mass_matrix().mapv(c).dot(&ones);
    let denom: C64 = ones
        .iter()
        .zip(m_ones.iter())
        .map(|(o, m)| o.conj() * m)
        .sum();
    let mut p = Array2::<C64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            p[[i, j]] = m_ones[j] / denom;
        }
    }
    Ok(p)
}

/// Abstract Dirichlet operator: solves the stationary problem with the
/// passive boundary functional prescribed, mapping boundary data to states.
#[derive(Debug, Clone)]
pub struct DirichletOperator {
    /// state dofs x passive boundary channels
    pub map: Array2<C64>,
    /// passive vertex values of the solutions
    pub passive_values: Array2<C64>,
    /// Spectral shift that was needed (0 when the generator is invertible).
    pub shift: f64,
}

impl DirichletOperator {
    pub fn apply(&self, phi: ArrayView1<'_, C64>) -> Array1<C64> {
        self.map.dot(&phi)
    }
}

/// Builds the Dirichlet operator from the uncondensed assembly. The
/// boundary functional is the discrete passive-row operator
/// `R v = K_p V - B_p q^V`; when 0 lies in the spectrum the problem is
/// shifted by the generator's lambda_0.
pub fn dirichlet_operator(gen: &DiscreteGenerator) -> Result<DirichletOperator> {
    let fem = gen.fem().ok_or(Error::NotUniquelySolvable)?;
    let np = fem.mesh.n_passive();
    let d = fem.mesh.dim_state();
    let dim = fem.mesh.dim_full();
    if np == 0 {
        return Err(Error::NotUniquelySolvable);
    }
    let shift = gen.shift();
    // (K + shift * M_full) v = (0_state; -phi), passive rows are massless.
    let mut sys = fem.k_full.clone();
    for i in 0..d {
        for j in 0..d {
            sys[[i, j]] += c(shift * gen.mass_matrix()[[i, j]]);
        }
    }
    let inv = match sys.inv() {
        Ok(inv) => inv,
        Err(_) => return Err(Error::NotUniquelySolvable),
    };
    let cond = sys.opnorm_one()? * inv.opnorm_one()?;
    if !cond.is_finite() || cond > 1e12 {
        return Err(Error::NotUniquelySolvable);
    }
    let mut map = Array2::<C64>::zeros((d, np));
    let mut passive_values = Array2::<C64>::zeros((np, np));
    for q in 0..np {
        let mut rhs = Array1::<C64>::zeros(dim);
        rhs[d + q] = c(-1.0);
        let sol = inv.dot(&rhs);
        map.column_mut(q).assign(&sol.slice(s![..d]));
        passive_values.column_mut(q).assign(&sol.slice(s![d..]));
    }
    Ok(DirichletOperator {
        map,
        passive_values,
        shift,
    })
}

/// The block semigroup `[[S(t), (I - S(t)) D0], [0, I]]` generated by the
/// extended operator with frozen passive boundary data.
pub struct BlockSemigroup<'a> {
    pub gen: &'a DiscreteGenerator,
    pub dirichlet: DirichletOperator,
}

impl<'a> BlockSemigroup<'a> {
    /// Requires an invertible generator (no shift) so that the Dirichlet
    /// operator solves the genuine stationary problem.
    pub fn new(gen: &'a DiscreteGenerator) -> Result<Self> {
        if gen.shift() != 0.0 {
            return Err(Error::NotUniquelySolvable);
        }
        let dirichlet = dirichlet_operator(gen)?;
        Ok(BlockSemigroup { gen, dirichlet })
    }

    /// Applies the block semigroup to `(state, boundary)`; the boundary
    /// component is returned untouched.
    pub fn propagate(
        &self,
        t: f64,
        state: ArrayView1<'_, C64>,
        boundary: ArrayView1<'_, C64>,
    ) -> Result<(Array1<C64>, Array1<C64>)> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let d0_phi = self.dirichlet.apply(boundary);
        let sv = self.gen.propagate(t, state.view())?;
        let sd0 = self.gen.propagate(t, d0_phi.view())?;
        let first = &sv + &d0_phi - &sd0;
        Ok((first, boundary.to_owned()))
    }

    /// Dense block generator and block mass for cross-checks: the operator
    /// `[[op, -op D0], [0, 0]]` with mass `diag(M, I)`.
    pub fn block_pencil(&self) -> (Array2<C64>, Array2<f64>) {
        let d = self.gen.dim();
        let np = self.dirichlet.map.ncols();
        let op = self.gen.op_matrix();
        let op_d0 = op.dot(&self.dirichlet.map);
        let mut big_op = Array2::<C64>::zeros((d + np, d + np));
        big_op.slice_mut(s![..d, ..d]).assign(op);
        big_op
            .slice_mut(s![..d, d..])
            .assign(&op_d0.mapv(|z| -z));
        let mut big_m = Array2::<f64>::zeros((d + np, d + np));
        big_m
            .slice_mut(s![..d, ..d])
            .assign(gen_mass(self.gen));
        for q in 0..np {
            big_m[[d + q, d + q]] = 1.0;
        }
        // Pencil matrix A = M * op.
        let big_a = big_m.mapv(c).dot(&big_op);
        (big_a, big_m)
    }
}

fn gen_mass(gen: &DiscreteGenerator) -> &Array2<f64> {
    gen.mass_matrix()
}
