//! Spatial-operator checks against independent oracles: the uncondensed
//! differential-algebraic pencil, Richardson refinement, and direct form
//! evaluation.

mod common;

use common::*;
use ndarray::{Array1, Array2};
use netfbm::{DiscreteGenerator, EdgePotential, Mesh, NetworkGraph, NodeCoupling};
use rand::{Rng, SeedableRng};

#[test]
fn condensation_matches_dae_pencil_oracle() {
    let (_, _, _, mesh, gen) = path_graph_model(32, 0.0);
    let fem = gen.fem().unwrap();
    let m_full = uncondensed_mass(&mesh);
    let oracle = dae_pencil_eigenvalues(&fem.k_full, &m_full, gen.dim());
    let mine = gen.eigenvalues();
    assert_eq!(oracle.len(), gen.dim());
    for (a, b) in mine.iter().zip(oracle.iter()) {
        let scale = a.norm().max(1.0);
        assert!(
            (a - b).norm() <= 1e-8 * scale,
            "condensed {a} vs DAE oracle {b}"
        );
    }
}

#[test]
fn condensation_exact_on_star_graph() {
    // Star with one active hub and three passive leaves.
    let g = NetworkGraph::build(&[(1, 2), (1, 3), (1, 4)], 1).unwrap();
    let mut b = Array2::<f64>::zeros((4, 4));
    b[[1, 1]] = 0.4;
    b[[2, 2]] = 0.9;
    b[[3, 3]] = 1.3;
    let coupling = NodeCoupling::validate_real(b, Array2::eye(4), 1).unwrap();
    let mesh = Mesh::uniform(&g, 12).unwrap();
    let pot = EdgePotential::from_fn(&mesh, |j, x| 0.3 * (j as f64 + 1.0) * x).unwrap();
    let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
    let oracle = dae_pencil_eigenvalues(&gen.fem().unwrap().k_full, &uncondensed_mass(&mesh), gen.dim());
    for (a, b) in gen.eigenvalues().iter().zip(oracle.iter()) {
        assert!((a - b).norm() <= 1e-8 * a.norm().max(1.0));
    }
}

#[test]
fn first_nonzero_eigenvalue_matches_oracle_on_path() {
    let (_, _, _, mesh, gen) = path_graph_model(32, 0.0);
    let oracle = dae_pencil_eigenvalues(&gen.fem().unwrap().k_full, &uncondensed_mass(&mesh), gen.dim());
    // lambda_1 = 0, lambda_2 < 0 is the first nonzero one.
    let lam2 = gen.eigenvalues()[1];
    assert!((lam2 - oracle[1]).norm() <= 1e-8 * lam2.norm());
}

#[test]
fn eigenvalue_refinement_is_second_order() {
    // Richardson exponent from three meshes.
    let lam = |n: usize| {
        let (_, _, _, _, gen) = single_edge_model(n, 0.0, Array2::zeros((2, 2)));
        gen.eigenvalues()[1].re
    };
    let (l8, l16, l32) = (lam(8), lam(16), lam(32));
    let rate = ((l8 - l16) / (l16 - l32)).log2();
    assert!(
        (rate - 2.0).abs() <= 0.2,
        "Richardson exponent {rate} not within 2 +/- 0.2"
    );
}

#[test]
fn form_consistency_on_random_states() {
    let (_, coupling, pot, mesh, gen) = path_graph_model(16, 0.7);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
    for _ in 0..20 {
        let u: Array1<C64> = (0..gen.dim())
            .map(|_| c(rng.gen_range(-1.0..1.0)))
            .collect();
        let v: Array1<C64> = (0..gen.dim())
            .map(|_| c(rng.gen_range(-1.0..1.0)))
            .collect();
        // <-op u, v>_M = form(lift u, lift v)
        let lhs = gen.inner_m(
            gen.op_matrix().dot(&u).mapv(|z| -z).view(),
            v.view(),
        );
        let rhs = direct_form_value(&mesh, &pot, &coupling, &lift_state(&gen, &u), &lift_state(&gen, &v));
        let scale = lhs.norm().max(rhs.norm()).max(1e-12);
        assert!(
            (lhs - rhs).norm() <= 1e-10 * scale,
            "form mismatch: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn dissipativity_for_psd_coupling() {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
    for trial in 0..5 {
        // Random Hermitian psd B = G^H G and nonnegative potential.
        let n = 3;
        let g_mat = Array2::from_shape_fn((n, n), |_| c(rng.gen_range(-1.0..1.0)));
        let b = g_mat.t().mapv(|z| z.conj()).dot(&g_mat);
        let graph = NetworkGraph::build(&[(1, 3), (3, 2)], 2).unwrap();
        let coupling = NodeCoupling::validate(b, Array2::eye(n), 2).unwrap();
        let mesh = Mesh::uniform(&graph, 12).unwrap();
        let pot =
            EdgePotential::from_fn(&mesh, |_, x| 0.5 * (1.0 + (6.0 * x + trial as f64).sin()))
                .unwrap();
        assert!(pot.min() >= 0.0);
        let gen = DiscreteGenerator::assemble(&graph, &coupling, &pot, &mesh).unwrap();
        assert!(
            gen.spectral_bound() <= 1e-10,
            "not dissipative: bound {}",
            gen.spectral_bound()
        );
    }
}

#[test]
fn kernel_is_constants_without_dissipation() {
    let g = NetworkGraph::build(&[(1, 2), (2, 3), (3, 1)], 2).unwrap();
    let coupling = NodeCoupling::validate_real(Array2::zeros((3, 3)), Array2::eye(3), 2).unwrap();
    let mesh = Mesh::uniform(&g, 10).unwrap();
    let pot = EdgePotential::zero(&mesh);
    let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
    assert_eq!(gen.kernel_dim(), 1);
    let kernel = gen.spectrum().1.column(0).to_owned();
    let mean: C64 = kernel.iter().sum::<C64>() / c(kernel.len() as f64);
    for z in kernel.iter() {
        assert!((z - mean).norm() <= 1e-8 * mean.norm());
    }
}

#[test]
fn kirchhoff_traces_kill_constants_and_balance_fluxes() {
    let (_, coupling, _, mesh, gen) = path_graph_model(64, 0.0);
    let fem = gen.fem().unwrap();
    let ones = Array1::<f64>::ones(mesh.dim_full());
    for row in 0..fem.traces.active.nrows() {
        let val: f64 = fem.traces.active.row(row).dot(&ones);
        assert!(val.abs() < 1e-12);
    }
    for row in 0..fem.traces.passive.nrows() {
        let val: f64 = fem.traces.passive.row(row).dot(&ones);
        assert!(val.abs() < 1e-12);
    }
    // On a smooth eigenstate the passive condition K_p V = B_p q holds to
    // truncation order.
    let x = gen.spectrum().1.column(1).to_owned();
    let full = lift_state(&gen, &x);
    let full_re = full.mapv(|z| z.re);
    let kp: f64 = fem.traces.passive.row(0).dot(&full_re);
    let bq: C64 = (0..coupling.n())
        .map(|h| coupling.b[[2, h]] * full[mesh.vertex_dof(h)])
        .sum();
    let scale = full_re.iter().cloned().fold(0.0, f64::max).max(1.0);
    assert!(
        (kp - bq.re).abs() <= 1e-2 * scale,
        "flux balance violated: K_p = {kp}, B_p q = {}",
        bq.re
    );
}

#[test]
fn dirichlet_matches_condensation_route_and_is_mesh_stable() {
    // Independent oracle: eliminate the passive dof by hand and solve the
    // state block directly.
    let build = |n_sub: usize| {
        let g = NetworkGraph::build(&[(1, 2)], 1).unwrap();
        let coupling =
            NodeCoupling::validate_real(Array2::zeros((2, 2)), Array2::eye(2), 1).unwrap();
        let mesh = Mesh::uniform(&g, n_sub).unwrap();
        let pot = EdgePotential::constant(&mesh, 1.0);
        DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap()
    };
    let gen = build(32);
    let d0 = netfbm::dirichlet_operator(&gen).unwrap();

    let fem = gen.fem().unwrap();
    let d = fem.mesh.dim_state();
    let k_ss = fem.k_full.slice(ndarray::s![..d, ..d]).to_owned();
    let k_sp = fem.k_full.slice(ndarray::s![..d, d..]).to_owned();
    let k_pp = fem.k_full.slice(ndarray::s![d.., d..]);
    let kpp = k_pp[[0, 0]];
    // v_p = (-phi - K_ps v_s) / k_pp; state rows: K_ss v + K_sp v_p = 0.
    let k_ps = fem.k_full.slice(ndarray::s![d.., ..d]).to_owned();
    let reduced = &k_ss - &k_sp.dot(&k_ps).mapv(|z| z / kpp);
    let rhs = k_sp.mapv(|z| z / kpp);
    let v_oracle = ndarray_linalg::Inverse::inv(&reduced)
        .unwrap()
        .dot(&rhs)
        .column(0)
        .to_owned();
    let mine = d0.map.column(0);
    for (a, b) in mine.iter().zip(v_oracle.iter()) {
        assert!((a - b).norm() <= 1e-8 * b.norm().max(1.0));
    }

    // Operator norm is finite and mesh-stable within 5%.
    let norm_of = |g: &DiscreteGenerator| {
        let d0 = netfbm::dirichlet_operator(g).unwrap();
        let col = d0.map.column(0).to_owned();
        g.norm_m(col.view())
    };
    let n32 = norm_of(&gen);
    let n64 = norm_of(&build(64));
    assert!(n32.is_finite() && n64.is_finite());
    assert!(
        (n32 - n64).abs() / n64 <= 0.05,
        "Dirichlet norm drifts under refinement: {n32} vs {n64}"
    );
}

#[test]
fn block_propagate_reduces_to_propagate_without_boundary_data() {
    let g = NetworkGraph::build(&[(1, 2)], 1).unwrap();
    let coupling = NodeCoupling::validate_real(Array2::zeros((2, 2)), Array2::eye(2), 1).unwrap();
    let mesh = Mesh::uniform(&g, 16).unwrap();
    let pot = EdgePotential::constant(&mesh, 1.0);
    let gen = DiscreteGenerator::assemble(&g, &coupling, &pot, &mesh).unwrap();
    let block = netfbm::BlockSemigroup::new(&gen).unwrap();
    let v: Array1<C64> = (0..gen.dim()).map(|i| c((i as f64 * 0.3).cos())).collect();
    let phi = Array1::<C64>::zeros(1);
    let (state, _) = block.propagate(0.8, v.view(), phi.view()).unwrap();
    let plain = gen.propagate(0.8, v.view()).unwrap();
    let gap: f64 = state
        .iter()
        .zip(plain.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    assert!(gap <= 1e-12 * gen.norm_m(v.view()).max(1.0));
}
