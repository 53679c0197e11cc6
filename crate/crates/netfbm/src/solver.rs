//! Stochastic convolution, solution residuals, Yosida convergence tables,
//! space regularity and long-time moment diagnostics.
//!
//! Stochastic integrals are discretized by left-endpoint Riemann-Stieltjes
//! sums, which realize the step-function definition of the integral and are
//! Young integrals for H > 1/2. A trajectory is therefore the exact solution
//! of the equation driven by the piecewise-constant-increment noise, which
//! the residual quadratures exploit: integrals of the trajectory account for
//! the noise jump at the left end of every step, so residuals measure pure
//! quadrature error plus discretization gap and nothing else.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::{self, FbmPath, FbmSpec, SamplingMethod};
use crate::graph::NodeCoupling;
use crate::operator::DiscreteGenerator;
use crate::rkhs::{pair_weights, weighted_gram_sum, CellRule};
use crate::semigroup::{BlockSemigroup, StabilityAssessment, StabilityClass};

type C64 = Complex64;

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Noise-to-state map: columns are the states receiving each noise channel.
#[derive(Debug, Clone)]
pub struct NoiseEmbedding {
    matrix: Array2<C64>,
}

impl NoiseEmbedding {
    /// The abstract-problem embedding `q -> (0, C_aa q)`: n0 channels feed
    /// the active vertex dofs through the top-left noise block.
    pub fn active(gen: &DiscreteGenerator, coupling: &NodeCoupling) -> Result<Self> {
        let fem = gen.fem().ok_or_else(|| {
            Error::GridMismatch("noise embedding needs an assembled generator".into())
        })?;
        let n0 = fem.mesh.n0;
        let base = fem.mesh.n_interior;
        let mut matrix = Array2::<C64>::zeros((gen.dim(), n0));
        for i in 0..n0 {
            for h in 0..n0 {
                matrix[[base + i, h]] = c(coupling.c_active_active()[[i, h]]);
            }
        }
        Ok(NoiseEmbedding { matrix })
    }

    /// The full-system active block `q -> (0, C_a q)` driven by all n
    /// channels.
    pub fn active_all_channels(
        gen: &DiscreteGenerator,
        coupling: &NodeCoupling,
    ) -> Result<Self> {
        let fem = gen.fem().ok_or_else(|| {
            Error::GridMismatch("noise embedding needs an assembled generator".into())
        })?;
        let n0 = fem.mesh.n0;
        let n = coupling.n();
        let base = fem.mesh.n_interior;
        let mut matrix = Array2::<C64>::zeros((gen.dim(), n));
        for i in 0..n0 {
            for h in 0..n {
                matrix[[base + i, h]] = c(coupling.c_active()[[i, h]]);
            }
        }
        Ok(NoiseEmbedding { matrix })
    }

    pub fn from_matrix(matrix: Array2<C64>) -> Self {
        NoiseEmbedding { matrix }
    }

    pub fn zero(dim: usize, channels: usize) -> Self {
        NoiseEmbedding {
            matrix: Array2::zeros((dim, channels)),
        }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn channels(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|z| z.norm() == 0.0)
    }
}

/// A sampled solution path: states per grid time plus the driving noise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array1<C64>>,
    pub path: FbmPath,
    pub embedding: Array2<C64>,
}

impl Trajectory {
    /// Noise term `C Z(t_k)` in state coordinates.
    pub fn noise_state(&self, k: usize) -> Array1<C64> {
        self.embedding.dot(&self.path.at_c(k))
    }

    /// Noise jump `C (Z(t_{k+1}) - Z(t_k))`.
    pub fn noise_jump(&self, k: usize) -> Array1<C64> {
        let dz: Array1<C64> = (0..self.path.spec.channels)
            .map(|ch| c(self.path.increment(ch, k)))
            .collect();
        self.embedding.dot(&dz)
    }
}

fn check_grid_match(path: &FbmPath, grid: &[f64]) -> Result<()> {
    if path.grid.len() != grid.len() || path.grid.iter().zip(grid).any(|(a, b)| a != b) {
        return Err(Error::GridMismatch(
            "noise path grid differs from the requested solution grid".into(),
        ));
    }
    Ok(())
}

/// Stochastic convolution by left-endpoint sums:
/// `W(t_k) = sum_{j<k} S(t_k - t_j) C dZ_j`, `W(0) = 0`.
pub fn convolve(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    path: &FbmPath,
    grid: &[f64],
) -> Result<Trajectory> {
    check_grid_match(path, grid)?;
    mild_solution(gen, Array1::zeros(gen.dim()), embedding, path)
}

/// Mild solution `S(t) v0 + W(t)` on the path's grid.
pub fn mild_solution(
    gen: &DiscreteGenerator,
    v0: Array1<C64>,
    embedding: &NoiseEmbedding,
    path: &FbmPath,
) -> Result<Trajectory> {
    if embedding.channels() != path.spec.channels {
        return Err(Error::GridMismatch(format!(
            "embedding has {} channels, path has {}",
            embedding.channels(),
            path.spec.channels
        )));
    }
    if v0.len() != gen.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("state of dimension {}", gen.dim()),
            got: format!("{}", v0.len()),
        });
    }
    let k_steps = path.grid.len() - 1;
    let mut states = Vec::with_capacity(k_steps + 1);

    if gen.is_diagonalizable() {
        let basis_embed = embed_spectral(gen, embedding)?;
        let mut w = gen.to_spectral(v0.view())?;
        states.push(v0.clone());
        let lambdas = gen.eigenvalues().clone();
        for k in 0..k_steps {
            let dt = path.grid[k + 1] - path.grid[k];
            let dz: Array1<C64> = (0..path.spec.channels)
                .map(|ch| c(path.increment(ch, k)))
                .collect();
            let jump = basis_embed.dot(&dz);
            for i in 0..w.len() {
                w[i] = (lambdas[i] * dt).exp() * (w[i] + jump[i]);
            }
            states.push(gen.from_spectral(w.view())?);
        }
    } else {
        // State-space recursion with one propagator per distinct step size.
        let mut cache: Vec<(f64, Array2<C64>)> = Vec::new();
        let mut v = v0.clone();
        states.push(v0.clone());
        for k in 0..k_steps {
            let dt = path.grid[k + 1] - path.grid[k];
            let prop = match cache.iter().find(|(d, _)| *d == dt) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = gen.propagator(dt)?;
                    cache.push((dt, p.clone()));
                    p
                }
            };
            let dz: Array1<C64> = (0..path.spec.channels)
                .map(|ch| c(path.increment(ch, k)))
                .collect();
            let jump = embedding.matrix().dot(&dz);
            v = prop.dot(&(&v + &jump));
            states.push(v.clone());
        }
    }
    Ok(Trajectory {
        times: path.grid.clone(),
        states,
        path: path.clone(),
        embedding: embedding.matrix().clone(),
    })
}

fn embed_spectral(gen: &DiscreteGenerator, embedding: &NoiseEmbedding) -> Result<Array2<C64>> {
    let q = embedding.channels();
    let mut out = Array2::<C64>::zeros((gen.dim(), q));
    for j in 0..q {
        let col = gen.to_spectral(embedding.matrix().column(j))?;
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Spectral quadrature of second moments.

/// Exact-kernel quadrature of
/// `sum_k alpha_H iint <F(t - s) C e_k, F(t - r) C e_k>_M |s - r|^{2H-2}`
/// where `F` is described by a scalar spectral multiplier `m(lambda, tau)`.
fn spectral_second_moment(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    grid: &[f64],
    t: f64,
    hurst: f64,
    rule: CellRule,
    multiplier: impl Fn(C64, f64) -> C64,
) -> Result<f64> {
    let weights = pair_weights(grid, hurst)?;
    let basis_embed = embed_spectral(gen, embedding)?;
    let gram = gen
        .basis()
        .ok_or(Error::NonDiagonalizable {
            cond: f64::INFINITY,
            limit: crate::operator::COND_LIMIT,
        })?
        .gram
        .clone();
    let k_cells = grid.len() - 1;
    let d = gen.dim();
    let lambdas = gen.eigenvalues();

    let mut total = 0.0;
    for ch in 0..embedding.channels() {
        let mut z = Array2::<C64>::zeros((d, k_cells));
        for i in 0..k_cells {
            let sigma = match rule {
                CellRule::Left => grid[i],
                CellRule::Midpoint => 0.5 * (grid[i] + grid[i + 1]),
            };
            let tau = (t - sigma).max(0.0);
            for r in 0..d {
                z[[r, i]] = multiplier(lambdas[r], tau) * basis_embed[[r, ch]];
            }
        }
        total += weighted_gram_sum(&z, &z, gram.as_ref(), &weights);
    }
    Ok(total.max(0.0))
}

fn uniform_grid(t: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| t * i as f64 / cells as f64).collect()
}

/// `E |W(t)|^2` by deterministic quadrature with midpoint cell values: the
/// exact second moment of the continuous-time convolution up to the cell
/// resolution of the integrand.
pub fn variance_quadrature(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    t: f64,
    hurst: f64,
    cells: usize,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    spectral_second_moment(
        gen,
        embedding,
        &uniform_grid(t, cells),
        t,
        hurst,
        CellRule::Midpoint,
        |lam, tau| (lam * tau).exp(),
    )
}

/// Exact second moment of the discrete left-endpoint convolution on a grid
/// prefix: matches the Monte Carlo estimator in expectation with no bias.
pub fn variance_on_grid(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    grid: &[f64],
    upto: usize,
    hurst: f64,
) -> Result<f64> {
    if upto == 0 {
        return Ok(0.0);
    }
    let sub = &grid[..=upto];
    spectral_second_moment(
        gen,
        embedding,
        sub,
        grid[upto],
        hurst,
        CellRule::Left,
        |lam, tau| (lam * tau).exp(),
    )
}

// ---------------------------------------------------------------------
// Residuals.

/// Residual report of a weak- or strong-solution identity.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub times: Vec<f64>,
    /// One row per test functional (a single row for the strong identity).
    pub residuals: Array2<f64>,
    pub sup: f64,
    pub dt: f64,
    pub dim: usize,
}

/// Ratios of consecutive sups across a refinement family of reports.
pub fn refinement_ratios(reports: &[ResidualReport]) -> Vec<f64> {
    reports
        .windows(2)
        .map(|w| w[0].sup / w[1].sup.max(f64::MIN_POSITIVE))
        .collect()
}

/// Jump-aware trapezoid accumulation of `int_0^{t_k} f(v(s)) ds` where the
/// trajectory jumps by the noise at the left end of every step.
fn integrate_states(
    traj: &Trajectory,
    mut f: impl FnMut(&Array1<C64>) -> Array1<C64>,
) -> Vec<Array1<C64>> {
    let k_steps = traj.times.len() - 1;
    let dim = f(&traj.states[0]).len();
    let mut acc = Array1::<C64>::zeros(dim);
    let mut out = Vec::with_capacity(k_steps + 1);
    out.push(acc.clone());
    for k in 0..k_steps {
        let dt = traj.times[k + 1] - traj.times[k];
        let left_state = &traj.states[k] + &traj.noise_jump(k);
        let left = f(&left_state);
        let right = f(&traj.states[k + 1]);
        acc = &acc + &(&left + &right).mapv(|z| z * c(0.5 * dt));
        out.push(acc.clone());
    }
    out
}

/// Weak-solution residual
/// `|<v(t), y> - <v0, y> - <int v, A* y> - <C Z(t), y>|` for every supplied
/// adjoint-domain test vector, with jump-aware trapezoid time quadrature.
pub fn weak_residual(
    traj: &Trajectory,
    gen: &DiscreteGenerator,
    test_vectors: &[Array1<C64>],
) -> Result<ResidualReport> {
    let n_times = traj.times.len();
    let v0 = &traj.states[0];
    let integrals = integrate_states(traj, |v| v.clone());
    // A* y = M^{-1} A^H y.
    let adjoint = |y: &Array1<C64>| -> Array1<C64> {
        let ah_y = gen.a_matrix().t().to_owned().mapv(|z| z.conj()).dot(y);
        solve_mass(gen, &ah_y)
    };
    let mut residuals = Array2::<f64>::zeros((test_vectors.len().max(1), n_times));
    for (r, y) in test_vectors.iter().enumerate() {
        let astar_y = adjoint(y);
        for k in 0..n_times {
            let lhs = gen.inner_m(traj.states[k].view(), y.view());
            let base = gen.inner_m(v0.view(), y.view());
            let drift = gen.inner_m(integrals[k].view(), astar_y.view());
            let noise = gen.inner_m(traj.noise_state(k).view(), y.view());
            residuals[[r, k]] = (lhs - base - drift - noise).norm();
        }
    }
    let sup = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(ResidualReport {
        times: traj.times.clone(),
        residuals,
        sup,
        dt: mean_dt(&traj.times),
        dim: gen.dim(),
    })
}

/// Strong-solution residual
/// `sup_k || v(t_k) - v0 - int_0^{t_k} op v ds - C Z(t_k) ||_M`.
pub fn strong_residual(traj: &Trajectory, gen: &DiscreteGenerator) -> Result<ResidualReport> {
    let n_times = traj.times.len();
    let v0 = &traj.states[0];
    let integrals = integrate_states(traj, |v| gen.op_matrix().dot(v));
    let mut residuals = Array2::<f64>::zeros((1, n_times));
    for k in 0..n_times {
        let r = &traj.states[k] - v0 - &integrals[k] - &traj.noise_state(k);
        residuals[[0, k]] = gen.norm_m(r.view());
    }
    let sup = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(ResidualReport {
        times: traj.times.clone(),
        residuals,
        sup,
        dt: mean_dt(&traj.times),
        dim: gen.dim(),
    })
}

fn mean_dt(times: &[f64]) -> f64 {
    (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
}

fn solve_mass(gen: &DiscreteGenerator, rhs: &Array1<C64>) -> Array1<C64> {
    // Small dense SPD mass: reuse op = M^{-1} A is not applicable here, so
    // go through the stored Cholesky transforms.
    let z = gen.linv_t_matrix().t().to_owned().dot(rhs);
    gen.linv_t_matrix().dot(&z)
}

/// Adjoint-domain test vectors: the left eigenbasis of the pencil,
/// normalized in the mass norm.
pub fn adjoint_test_vectors(gen: &DiscreteGenerator, count: usize) -> Result<Vec<Array1<C64>>> {
    let basis = gen.basis().ok_or(Error::NonDiagonalizable {
        cond: f64::INFINITY,
        limit: crate::operator::COND_LIMIT,
    })?;
    let y_inv_h = basis.y_inv.t().to_owned().mapv(|z| z.conj());
    let mut out = Vec::with_capacity(count.min(gen.dim()));
    for j in 0..count.min(gen.dim()) {
        let v = gen.linv_t_matrix().dot(&y_inv_h.column(j).to_owned());
        let n = gen.norm_m(v.view());
        out.push(v.mapv(|z| z / c(n)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Yosida convergence program.

#[derive(Debug, Clone)]
pub struct YosidaRow {
    pub n: f64,
    /// sup_t E |W_{A_n}(t) - W_A(t)|^2
    pub sup_w_gap: f64,
    /// sup_t E |A_n W_{A_n}(t) - A W_A(t)|^2
    pub sup_aw_gap: f64,
    /// sup_t of the two split terms bounding the gap.
    pub sup_phi1: f64,
    pub sup_phi2: f64,
}

/// Quadrature table of the Yosida convergence quantities over `t` in
/// `(0, t_max]`. Both columns use the difference integrands through the
/// shared eigenbasis (the approximants are rational functions of the
/// generator).
pub fn yosida_convergence(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    hurst: f64,
    n_list: &[f64],
    t_max: f64,
    cells: usize,
) -> Result<Vec<YosidaRow>> {
    let sb = gen.spectral_bound();
    let t_grid: Vec<f64> = (1..=8).map(|i| t_max * i as f64 / 8.0).collect();
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n <= sb {
            return Err(Error::SpectrumHit(c(n)));
        }
        let fnl = move |lam: C64| DiscreteGenerator::yosida_value(lam, n);
        let mut sup_w: f64 = 0.0;
        let mut sup_aw: f64 = 0.0;
        let mut sup_p1: f64 = 0.0;
        let mut sup_p2: f64 = 0.0;
        for &t in &t_grid {
            let grid = uniform_grid(t, cells);
            let w_gap = spectral_second_moment(
                gen,
                embedding,
                &grid,
                t,
                hurst,
                CellRule::Midpoint,
                |lam, tau| (fnl(lam) * tau).exp() - (lam * tau).exp(),
            )?;
            let aw_gap = spectral_second_moment(
                gen,
                embedding,
                &grid,
                t,
                hurst,
                CellRule::Midpoint,
                |lam, tau| fnl(lam) * (fnl(lam) * tau).exp() - lam * (lam * tau).exp(),
            )?;
            let phi1 = spectral_second_moment(
                gen,
                embedding,
                &grid,
                t,
                hurst,
                CellRule::Midpoint,
                |lam, tau| fnl(lam) * ((fnl(lam) * tau).exp() - (lam * tau).exp()),
            )?;
            let phi2 = spectral_second_moment(
                gen,
                embedding,
                &grid,
                t,
                hurst,
                CellRule::Midpoint,
                |lam, tau| (fnl(lam) - lam) * (lam * tau).exp(),
            )?;
            sup_w = sup_w.max(w_gap);
            sup_aw = sup_aw.max(aw_gap);
            sup_p1 = sup_p1.max(phi1);
            sup_p2 = sup_p2.max(phi2);
        }
        rows.push(YosidaRow {
            n,
            sup_w_gap: sup_w,
            sup_aw_gap: sup_aw,
            sup_phi1: sup_p1,
            sup_phi2: sup_p2,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Space regularity.

#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub alpha: f64,
    pub hurst: f64,
    /// E int_0^T ||W(t)||^2 in the fractional space.
    pub time_integral: f64,
    /// Per-time profile E ||W(t)||^2_alpha.
    pub profile: Vec<(f64, f64)>,
    /// Fitted constant in profile(t) <= const * t^{H - alpha}.
    pub fitted_const: f64,
}

/// Fractional-space second moments of the convolution. Requires
/// `alpha < min(1/4, H)`; the generator's spectral shift handles the
/// non-invertible case.
pub fn regularity_profile(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    hurst: f64,
    alpha: f64,
    t_final: f64,
    cells: usize,
) -> Result<RegularityReport> {
    if alpha < 0.0 {
        return Err(Error::OutOfRange {
            key: "alpha".into(),
            value: format!("{alpha}"),
            reason: "must be nonnegative".into(),
        });
    }
    if alpha >= 0.25_f64.min(hurst) {
        return Err(Error::AlphaTooLarge { alpha, hurst });
    }
    let shift = c(gen.shift());
    let n_t = 16usize;
    let mut profile = Vec::with_capacity(n_t);
    for i in 1..=n_t {
        let t = t_final * i as f64 / n_t as f64;
        let grid = uniform_grid(t, cells);
        let val = spectral_second_moment(
            gen,
            embedding,
            &grid,
            t,
            hurst,
            CellRule::Midpoint,
            |lam, tau| (shift - lam).powf(alpha) * (lam * tau).exp(),
        )?;
        profile.push((t, val));
    }
    // Trapezoid in t, with profile(0) = 0.
    let mut time_integral = 0.0;
    let mut prev_t = 0.0;
    let mut prev_v = 0.0;
    for &(t, v) in &profile {
        time_integral += 0.5 * (t - prev_t) * (v + prev_v);
        prev_t = t;
        prev_v = v;
    }
    let fitted_const = profile
        .iter()
        .map(|&(t, v)| v / t.powf(hurst - alpha))
        .fold(0.0, f64::max);
    Ok(RegularityReport {
        alpha,
        hurst,
        time_integral,
        profile,
        fitted_const,
    })
}

// ---------------------------------------------------------------------
// Monte Carlo moments.

#[derive(Debug, Clone)]
pub struct McMoments {
    pub times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Normality statistics of a fixed scalar marginal per time.
    pub marginal_skewness: Vec<f64>,
    pub marginal_excess_kurtosis: Vec<f64>,
    pub samples: usize,
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
    fn value(self) -> f64 {
        self.sum
    }
}

/// Monte Carlo estimate of `E |W(t)|^2_M` at selected grid indices.
/// Replicates use disjoint noise substreams and the reduction is a
/// sequential compensated sum in replicate order, so results are
/// bit-reproducible regardless of thread count.
pub fn mc_second_moments(
    gen: &DiscreteGenerator,
    embedding: &NoiseEmbedding,
    spec: &FbmSpec,
    grid: &[f64],
    method: SamplingMethod,
    samples: usize,
    report_idx: &[usize],
) -> Result<McMoments> {
    let marginal_dof = gen.dim() - 1;
    let per_replicate: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..samples)
        .into_par_iter()
        .map(|r| {
            let path = fbm::sample_replicate(spec, grid, method, r)?;
            let traj = convolve(gen, embedding, &path, grid)?;
            let sq: Vec<f64> = report_idx
                .iter()
                .map(|&k| {
                    let n = gen.norm_m(traj.states[k].view());
                    n * n
                })
                .collect();
            let marg: Vec<f64> = report_idx
                .iter()
                .map(|&k| traj.states[k][marginal_dof].re)
                .collect();
            Ok((sq, marg))
        })
        .collect();

    let mut collected = Vec::with_capacity(samples);
    for r in per_replicate {
        collected.push(r?);
    }

    let nt = report_idx.len();
    let nf = samples as f64;
    let mut mean_sq = Vec::with_capacity(nt);
    let mut stderr = Vec::with_capacity(nt);
    let mut skew = Vec::with_capacity(nt);
    let mut kurt = Vec::with_capacity(nt);
    for k in 0..nt {
        let mut s1 = Kahan::default();
        for (sq, _) in &collected {
            s1.add(sq[k]);
        }
        let mean = s1.value() / nf;
        let mut s2 = Kahan::default();
        for (sq, _) in &collected {
            s2.add((sq[k] - mean).powi(2));
        }
        let var = s2.value() / (nf - 1.0);
        mean_sq.push(mean);
        stderr.push((var / nf).sqrt());

        let mut m1 = Kahan::default();
        for (_, mg) in &collected {
            m1.add(mg[k]);
        }
        let mu = m1.value() / nf;
        let (mut m2, mut m3, mut m4) = (Kahan::default(), Kahan::default(), Kahan::default());
        for (_, mg) in &collected {
            let d = mg[k] - mu;
            m2.add(d * d);
            m3.add(d * d * d);
            m4.add(d * d * d * d);
        }
        let v2 = m2.value() / nf;
        if v2 > 0.0 {
            skew.push(m3.value() / nf / v2.powf(1.5));
            kurt.push(m4.value() / nf / (v2 * v2) - 3.0);
        } else {
            skew.push(0.0);
            kurt.push(0.0);
        }
    }
    Ok(McMoments {
        times: report_idx.iter().map(|&k| grid[k]).collect(),
        mean_sq,
        stderr,
        marginal_skewness: skew,
        marginal_excess_kurtosis: kurt,
        samples,
    })
}

// ---------------------------------------------------------------------
// Long-time behaviour.

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MeasureVerdict {
    InvariantMeasureExists,
    NoInvariantMeasure,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum VerdictRule {
    /// Uniform exponential stability with a bounded trace series.
    Dissipative,
    /// No dissipation at all: the trace grows like t^{2H}.
    NoDissipation,
    /// Noise enters the passive nodes of the full system.
    PassiveNoise,
    /// None of the decisive premises applied.
    None,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub intercept: f64,
    pub residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Which noise block drives the evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Formulation {
    /// Abstract problem: active channels through C_aa only.
    ActiveOnly,
    /// Full system with all n channels and passive-node noise.
    FullSystem,
}

#[derive(Debug, Clone)]
pub struct MomentReport {
    pub times: Vec<f64>,
    /// Tr Q_t series by quadrature.
    pub trace: Vec<f64>,
    pub mc: Option<McMoments>,
    pub growth: Option<ExponentFit>,
    pub verdict: MeasureVerdict,
    pub rule: VerdictRule,
}

fn log_log_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Option<ExponentFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|&(&t, &v)| t >= window.0 && t <= window.1 && v > 0.0)
        .map(|(&t, &v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual = pts
        .iter()
        .map(|&(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        .sqrt()
        / n.sqrt();
    Some(ExponentFit {
        exponent: slope,
        intercept,
        residual,
        window,
        points: pts.len(),
    })
}

/// Long-time moment diagnostics: trace series on a log-spaced grid, growth
/// exponent over the last time decade, and the invariant-measure verdict.
///
/// For the full system the trace is computed on the block pencil (state and
/// boundary components together), which requires an invertible generator.
#[allow(clippy::too_many_arguments)]
pub fn long_time_report(
    gen: &DiscreteGenerator,
    coupling: &NodeCoupling,
    assessment: &StabilityAssessment,
    formulation: Formulation,
    noise: &FbmSpec,
    t_max: f64,
    mc_samples: usize,
    cells: usize,
) -> Result<MomentReport> {
    let hurst = noise.hurst;
    let scale = match noise.normalization {
        crate::fbm::Normalization::Standard => 1.0,
        crate::fbm::Normalization::PaperPrefactor => 1.0 / hurst,
    };

    // Noise-block-dependent generator/embedding pair.
    let block;
    let block_gen;
    let (trace_gen, embedding): (&DiscreteGenerator, NoiseEmbedding) = match formulation {
        Formulation::ActiveOnly => (gen, NoiseEmbedding::active(gen, coupling)?),
        Formulation::FullSystem => {
            block = BlockSemigroup::new(gen)?;
            let (big_a, big_m) = block.block_pencil();
            block_gen = DiscreteGenerator::from_matrices(big_a, big_m)?;
            let d = gen.dim();
            let np = coupling.n() - coupling.n0;
            let n = coupling.n();
            let mut embed = Array2::<C64>::zeros((d + np, n));
            let active = NoiseEmbedding::active_all_channels(gen, coupling)?;
            embed
                .slice_mut(s![..d, ..])
                .assign(active.matrix());
            for i in 0..np {
                for h in 0..n {
                    embed[[d + i, h]] = c(coupling.c_passive()[[i, h]]);
                }
            }
            (&block_gen, NoiseEmbedding::from_matrix(embed))
        }
    };

    // Log-spaced times over three decades up to t_max.
    let n_pts = 36usize;
    let times: Vec<f64> = (0..n_pts)
        .map(|i| t_max * 10f64.powf(-3.0 * (1.0 - i as f64 / (n_pts - 1) as f64)))
        .collect();
    let mut trace = Vec::with_capacity(n_pts);
    for &t in &times {
        let v = spectral_second_moment(
            trace_gen,
            &embedding,
            &uniform_grid(t, cells),
            t,
            hurst,
            CellRule::Midpoint,
            |lam, tau| (lam * tau).exp(),
        )?;
        trace.push(v * scale);
    }

    let growth = log_log_fit(&times, &trace, (t_max / 10.0, t_max));

    let passive_noise = !coupling.c_passive_is_zero();
    let (verdict, rule) = if formulation == Formulation::FullSystem && passive_noise {
        (MeasureVerdict::NoInvariantMeasure, VerdictRule::PassiveNoise)
    } else {
        match assessment.class {
            StabilityClass::UniformlyExponentiallyStable { .. } => {
                let bounded = growth
                    .as_ref()
                    .map(|g| g.exponent.abs() <= 0.05)
                    .unwrap_or(false);
                if bounded {
                    (MeasureVerdict::InvariantMeasureExists, VerdictRule::Dissipative)
                } else {
                    (MeasureVerdict::Inconclusive, VerdictRule::None)
                }
            }
            StabilityClass::ProjectionLimit => {
                (MeasureVerdict::NoInvariantMeasure, VerdictRule::NoDissipation)
            }
            _ => (MeasureVerdict::Inconclusive, VerdictRule::None),
        }
    };

    // Optional Monte Carlo columns on a grid threaded through report times.
    let mc = if mc_samples > 0 && formulation == Formulation::ActiveOnly {
        let base_steps = 1024usize;
        let mut grid: Vec<f64> = (0..=base_steps)
            .map(|i| t_max * i as f64 / base_steps as f64)
            .collect();
        grid.extend(times.iter().cloned());
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * t_max);
        let report_idx: Vec<usize> = times
            .iter()
            .map(|&t| {
                grid.iter()
                    .position(|&g| (g - t).abs() < 1e-12 * t_max)
                    .expect("report time threaded through grid")
            })
            .collect();
        Some(mc_second_moments(
            gen,
            &embedding,
            noise,
            &grid,
            SamplingMethod::Cholesky,
            mc_samples,
            &report_idx,
        )?)
    } else {
        None
    };

    Ok(MomentReport {
        times,
        trace,
        mc,
        growth,
        verdict,
        rule,
    })
}

// ---------------------------------------------------------------------
// Full system with passive-node noise.

/// Trajectory of the block system `(state, passive boundary)`.
#[derive(Debug, Clone)]
pub struct BlockTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array1<C64>>,
    pub boundary: Vec<Array1<C64>>,
    pub path: FbmPath,
}

/// Solves the full system with noise in active and passive nodes by the
/// split representation: the boundary component is `phi0 + C_p Z(t)`
/// exactly, and the state component adds the Dirichlet-lifted passive
/// contribution to the active convolution.
pub fn full_system_solve(
    block: &BlockSemigroup<'_>,
    coupling: &NodeCoupling,
    path: &FbmPath,
    grid: &[f64],
    state0: Array1<C64>,
    boundary0: Array1<C64>,
) -> Result<BlockTrajectory> {
    check_grid_match(path, grid)?;
    let gen = block.gen;
    let n = coupling.n();
    if path.spec.channels != n {
        return Err(Error::GridMismatch(format!(
            "full system needs all {n} channels, path has {}",
            path.spec.channels
        )));
    }
    let np = n - coupling.n0;
    if boundary0.len() != np {
        return Err(Error::ShapeMismatch {
            expected: format!("boundary data of dimension {np}"),
            got: format!("{}", boundary0.len()),
        });
    }

    let active = NoiseEmbedding::active_all_channels(gen, coupling)?;
    let active_traj = convolve(gen, &active, path, grid)?;

    let c_p = coupling.c_passive().mapv(c);
    let passive_noise = c_p.iter().any(|z| z.norm() != 0.0);
    let d0_cp = block.dirichlet.map.dot(&c_p);
    let lifted = if passive_noise {
        Some(convolve(
            gen,
            &NoiseEmbedding::from_matrix(d0_cp.clone()),
            path,
            grid,
        )?)
    } else {
        None
    };

    let d0_phi0 = block.dirichlet.apply(boundary0.view());
    let n_times = grid.len();
    let mut states = Vec::with_capacity(n_times);
    let mut boundary = Vec::with_capacity(n_times);
    for k in 0..n_times {
        let t = grid[k];
        let z_k = path.at_c(k);
        // Deterministic block flow of the initial data.
        let sv = gen.propagate(t, state0.view())?;
        let sd0 = gen.propagate(t, d0_phi0.view())?;
        let mut state = &sv + &d0_phi0 - &sd0;
        // Active-node convolution.
        state = &state + &active_traj.states[k];
        // Passive-node noise through the Dirichlet lift:
        // int (I - S(t-s)) D0 C_p dZ = D0 C_p Z(t) - int S(t-s) D0 C_p dZ.
        if let Some(lift) = &lifted {
            let direct = d0_cp.dot(&z_k);
            state = &state + &direct - &lift.states[k];
        }
        states.push(state);
        boundary.push(&boundary0 + &c_p.dot(&z_k));
    }
    Ok(BlockTrajectory {
        times: grid.to_vec(),
        states,
        boundary,
        path: path.clone(),
    })
}
