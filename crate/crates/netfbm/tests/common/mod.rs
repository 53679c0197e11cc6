//! Shared test oracles, independent of the library's implementation paths.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex64;

use netfbm::{DiscreteGenerator, EdgePotential, Mesh, NetworkGraph, NodeCoupling};

pub type C64 = Complex64;

pub fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Single edge with both vertices active, identity noise.
pub fn single_edge_model(
    n_sub: usize,
    p: f64,
    b: Array2<f64>,
) -> (NetworkGraph, NodeCoupling, EdgePotential, Mesh, DiscreteGenerator) {
    let g = NetworkGraph::build(&[(1, 2)], 2).unwrap();
    let coupling = NodeCoupling::validate_real(b, Array2::eye(2), 2).unwrap();
    let mesh = Mesh::uniform(&g, n_sub).unwrap();
    let pot = EdgePotential::constant(&mesh, p);
    let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
    (g, coupling, pot, mesh, gen)
}

/// Path graph v1 - v2 - v3 with the middle vertex passive.
pub fn path_graph_model(
    n_sub: usize,
    p: f64,
) -> (NetworkGraph, NodeCoupling, EdgePotential, Mesh, DiscreteGenerator) {
    // Active vertices must come first: label the middle vertex 3 (passive).
    let g = NetworkGraph::build(&[(1, 3), (3, 2)], 2).unwrap();
    let coupling = NodeCoupling::validate_real(Array2::zeros((3, 3)), Array2::eye(3), 2).unwrap();
    let mesh = Mesh::uniform(&g, n_sub).unwrap();
    let pot = EdgePotential::constant(&mesh, p);
    let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
    (g, coupling, pot, mesh, gen)
}

/// Finite generalized eigenvalues of the uncondensed differential-algebraic
/// pencil `-K v = lambda M v` (massless passive rows), via shift-invert with
/// a plain dense solve. Returns eigenvalues sorted by descending real part.
pub fn dae_pencil_eigenvalues(
    k_full: &Array2<C64>,
    m_full: &Array2<f64>,
    n_finite: usize,
) -> Vec<C64> {
    let s = 1.0;
    let dim = k_full.nrows();
    let mut shifted = k_full.clone();
    for i in 0..dim {
        for j in 0..dim {
            shifted[[i, j]] += c(s * m_full[[i, j]]);
        }
    }
    let t = shifted.inv().unwrap().dot(&m_full.mapv(c));
    let (mu, _) = t.eig().unwrap();
    let mut finite: Vec<C64> = mu
        .iter()
        .filter(|m| m.norm() > 1e-10)
        .map(|m| c(s) - 1.0 / m)
        .collect();
    finite.sort_by(|a, b| (b.re, b.im).partial_cmp(&(a.re, a.im)).unwrap());
    finite.truncate(n_finite);
    finite
}

/// Mass matrix of the uncondensed system (zero passive rows), rebuilt
/// directly from the mesh for oracle use.
pub fn uncondensed_mass(mesh: &Mesh) -> Array2<f64> {
    let dim = mesh.dim_full();
    let mut m = Array2::<f64>::zeros((dim, dim));
    for j in 0..mesh.edges.len() {
        let nj = mesh.subdivisions[j];
        let h = mesh.h(j);
        for k in 0..nj {
            let a = mesh.node_dof(j, k);
            let b = mesh.node_dof(j, k + 1);
            for (r, cc, w) in [
                (a, a, h / 3.0),
                (b, b, h / 3.0),
                (a, b, h / 6.0),
                (b, a, h / 6.0),
            ] {
                if !mesh.is_passive_dof(r) && !mesh.is_passive_dof(cc) {
                    m[[r, cc]] += w;
                }
            }
        }
    }
    for i in 0..mesh.n0 {
        let vd = mesh.vertex_dof(i);
        m[[vd, vd]] += 1.0;
    }
    m
}

/// Direct evaluation of the sesquilinear form on full-dof vectors, written
/// independently of the assembly loop.
pub fn direct_form_value(
    mesh: &Mesh,
    potential: &EdgePotential,
    coupling: &NodeCoupling,
    u: &Array1<C64>,
    v: &Array1<C64>,
) -> C64 {
    let mut acc = c(0.0);
    for j in 0..mesh.edges.len() {
        let nj = mesh.subdivisions[j];
        let h = mesh.h(j);
        for k in 0..nj {
            let (a, b) = (mesh.node_dof(j, k), mesh.node_dof(j, k + 1));
            // (u'|v') on the cell.
            acc += (u[b] - u[a]) * (v[b] - v[a]).conj() / c(h);
            // (p u|v) with everything linear: 2-point Gauss is exact for
            // the resulting cubic.
            let (pa, pb) = (potential.values[j][k], potential.values[j][k + 1]);
            for gp in [0.5 - 0.5 / 3.0_f64.sqrt(), 0.5 + 0.5 / 3.0_f64.sqrt()] {
                let w = 0.5 * h;
                let pu = pa * (1.0 - gp) + pb * gp;
                let uu = u[a] * c(1.0 - gp) + u[b] * c(gp);
                let vv = v[a] * c(1.0 - gp) + v[b] * c(gp);
                acc += c(w * pu) * uu * vv.conj();
            }
        }
    }
    for i in 0..coupling.n() {
        for hh in 0..coupling.n() {
            acc += coupling.b[[i, hh]] * u[mesh.vertex_dof(hh)] * v[mesh.vertex_dof(i)].conj();
        }
    }
    acc
}

/// Lifts a state vector to the full dof set using the passive recovery map.
pub fn lift_state(gen: &DiscreteGenerator, v: &Array1<C64>) -> Array1<C64> {
    let fem = gen.fem().unwrap();
    let d = fem.mesh.dim_state();
    let mut full = Array1::<C64>::zeros(fem.mesh.dim_full());
    full.slice_mut(ndarray::s![..d]).assign(v);
    if fem.mesh.n_passive() > 0 {
        let vp = fem.recover.dot(v);
        full.slice_mut(ndarray::s![d..]).assign(&vp);
    }
    full
}

/// Composite Gauss-Legendre quadrature (20 points per panel).
pub fn gauss_legendre(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    // Abscissae/weights for n = 20 on [-1, 1].
    const X: [f64; 10] = [
        0.0765265211334973,
        0.2277858511416451,
        0.3737060887154195,
        0.5108670019508271,
        0.6360536807265150,
        0.7463319064601508,
        0.8391169718222188,
        0.9122344282513259,
        0.9639719272779138,
        0.9931285991850949,
    ];
    const W: [f64; 10] = [
        0.1527533871307258,
        0.1491729864726037,
        0.1420961093183820,
        0.1316886384491766,
        0.1181945319615184,
        0.1019301198172404,
        0.0832767415767048,
        0.0626720483341091,
        0.0406014298003869,
        0.0176140071391521,
    ];
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + (b - a) * p as f64 / panels as f64;
        let hi = a + (b - a) * (p + 1) as f64 / panels as f64;
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for i in 0..10 {
            total += W[i] * half * (f(mid + half * X[i]) + f(mid - half * X[i]));
        }
    }
    total
}

/// Closed-form reduction of the scalar stochastic-convolution variance:
/// `E |W(t)|^2 = (alpha_H / a) int_0^t w^{2H-2} e^{-a w} (e^{2at} - e^{2aw}) dw`
/// for the scalar generator `a < 0`, evaluated by substitution
/// `w = x^{1/(2H-1)}` (which removes the singularity) and Gauss-Legendre.
pub fn scalar_variance_oracle(a: f64, t: f64, h: f64) -> f64 {
    let alpha_h = h * (2.0 * h - 1.0);
    let q = 2.0 * h - 1.0;
    let upper = t.powf(q);
    let integrand = |x: f64| -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let w = x.powf(1.0 / q);
        ((-a * w).exp()) * ((2.0 * a * t).exp() - (2.0 * a * w).exp())
    };
    let integral = gauss_legendre(0.0, upper, 64, integrand) / q;
    2.0 * alpha_h * integral / (2.0 * a)
}

/// Classical Ornstein-Uhlenbeck variance for the Wiener case H = 1/2.
pub fn ou_variance(a: f64, t: f64) -> f64 {
    (1.0 - (2.0 * a * t).exp()) / (2.0 * a.abs())
}

/// Least-squares slope of log y against log x.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0.ln()).sum();
    let sy: f64 = points.iter().map(|p| p.1.ln()).sum();
    let sxx: f64 = points.iter().map(|p| p.0.ln().powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| p.0.ln() * p.1.ln()).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Coarsens a fine fBm path by keeping every `factor`-th grid point, so a
/// refinement family shares the same underlying noise.
pub fn coarsen_path(path: &netfbm::FbmPath, factor: usize) -> netfbm::FbmPath {
    let k = path.grid.len() - 1;
    assert_eq!(k % factor, 0);
    let grid: Vec<f64> = (0..=k / factor).map(|i| path.grid[i * factor]).collect();
    let mut values = Array2::<f64>::zeros((path.spec.channels, grid.len()));
    for ch in 0..path.spec.channels {
        for (i, _) in grid.iter().enumerate() {
            values[[ch, i]] = path.values[[ch, i * factor]];
        }
    }
    netfbm::FbmPath {
        grid,
        values,
        spec: path.spec,
    }
}
