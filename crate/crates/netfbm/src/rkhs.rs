//! The |H| inner product for step functions and second moments of
//! Wiener-type integrals against fractional Brownian motion.
//!
//! Functions are represented by one value per grid cell. The weakly singular
//! kernel alpha_H |s - r|^{2H-2} has the elementary double antiderivative
//! |x|^{2H}/2, so every cell-pair integral is evaluated in closed form:
//!
//! ```text
//! alpha_H int_{[a,b]x[c,d]} |s-r|^{2H-2} dr ds
//!   = (|b-c|^{2H} - |b-d|^{2H} - |a-c|^{2H} + |a-d|^{2H}) / 2
//! ```
//!
//! With these weights the inner product of step functions equals the exact
//! covariance of the corresponding discrete Wiener-type sums, which makes
//! Monte Carlo cross-checks sharp. alpha_H = H(2H-1) is the constant that
//! reproduces the indicator isometry |1_(0,t)|^2 = t^{2H}.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Exact kernel weight of one ordered cell pair `[a,b] x [c,d]`.
pub fn cell_weight(a: f64, b: f64, c: f64, d: f64, two_h: f64) -> f64 {
    0.5 * ((b - c).abs().powf(two_h) - (b - d).abs().powf(two_h) - (a - c).abs().powf(two_h)
        + (a - d).abs().powf(two_h))
}

/// Dense matrix of cell-pair weights for a strictly increasing grid.
pub fn pair_weights(grid: &[f64], hurst: f64) -> Result<Array2<f64>> {
    check_hurst(hurst)?;
    check_grid(grid)?;
    let two_h = 2.0 * hurst;
    let k = grid.len() - 1;
    let mut w = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let v = cell_weight(grid[i], grid[i + 1], grid[j], grid[j + 1], two_h);
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
    }
    Ok(w)
}

fn check_hurst(hurst: f64) -> Result<()> {
    if hurst <= 0.5 {
        return Err(Error::HurstTooLow(hurst));
    }
    if hurst >= 1.0 {
        return Err(Error::OutOfRange {
            key: "hurst".into(),
            value: format!("{hurst}"),
            reason: "must be below 1".into(),
        });
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch(
            "quadrature grid must be strictly increasing with at least one cell".into(),
        ));
    }
    Ok(())
}

/// Cell sampling convention used when a function is reduced to per-cell
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRule {
    /// Left endpoints; matches left-endpoint Riemann-Stieltjes sums exactly.
    Left,
    /// Midpoints; second-order accurate for the continuous-time limit.
    Midpoint,
}

/// A (possibly vector-valued) step function: one column of component values
/// per grid cell.
#[derive(Debug, Clone)]
pub struct RkhsGridFunction {
    pub grid: Vec<f64>,
    /// components x cells
    pub values: Array2<Complex64>,
}

impl RkhsGridFunction {
    pub fn new(grid: Vec<f64>, values: Array2<Complex64>) -> Result<Self> {
        check_grid(&grid)?;
        if values.ncols() != grid.len() - 1 {
            return Err(Error::GridMismatch(format!(
                "{} cells in grid, {} value columns",
                grid.len() - 1,
                values.ncols()
            )));
        }
        Ok(RkhsGridFunction { grid, values })
    }

    /// Scalar step function from per-cell real values.
    pub fn scalar(grid: Vec<f64>, cells: &[f64]) -> Result<Self> {
        let values = Array2::from_shape_fn((1, cells.len()), |(_, j)| {
            Complex64::new(cells[j], 0.0)
        });
        Self::new(grid, values)
    }

    /// Samples a scalar function per the cell rule.
    pub fn from_fn(grid: Vec<f64>, rule: CellRule, f: impl Fn(f64) -> f64) -> Result<Self> {
        let cells: Vec<f64> = grid
            .windows(2)
            .map(|w| match rule {
                CellRule::Left => f(w[0]),
                CellRule::Midpoint => f(0.5 * (w[0] + w[1])),
            })
            .collect();
        Self::scalar(grid, &cells)
    }

    /// Indicator of (0, t) on a uniform grid with `cells` cells.
    pub fn indicator(t: f64, cells: usize) -> Result<Self> {
        let grid: Vec<f64> = (0..=cells).map(|i| t * i as f64 / cells as f64).collect();
        Self::scalar(grid, &vec![1.0; cells])
    }

    pub fn cells(&self) -> usize {
        self.values.ncols()
    }
}

fn common_weights(phi: &RkhsGridFunction, psi: &RkhsGridFunction, hurst: f64) -> Result<Array2<f64>> {
    if phi.grid.len() != psi.grid.len()
        || phi
            .grid
            .iter()
            .zip(&psi.grid)
            .any(|(a, b)| (a - b).abs() > 1e-14 * a.abs().max(1.0))
    {
        return Err(Error::GridMismatch(
            "both functions must live on the same grid".into(),
        ));
    }
    if phi.values.nrows() != psi.values.nrows() {
        return Err(Error::GridMismatch(
            "component counts differ".into(),
        ));
    }
    pair_weights(&phi.grid, hurst)
}

/// |H| inner product with the componentwise Hermitian kernel
/// `<phi(s), psi(r)>`; real part is returned (the pairing of a function with
/// itself is real).
pub fn rkhs_inner(phi: &RkhsGridFunction, psi: &RkhsGridFunction, hurst: f64) -> Result<f64> {
    let w = common_weights(phi, psi, hurst)?;
    let k = phi.cells();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let dot: Complex64 = phi
                .values
                .column(i)
                .iter()
                .zip(psi.values.column(j).iter())
                .map(|(p, q)| p * q.conj())
                .sum();
            acc += w[[i, j]] * dot.re;
        }
    }
    Ok(acc)
}

/// Squared |H| norm.
pub fn rkhs_norm_sq(phi: &RkhsGridFunction, hurst: f64) -> Result<f64> {
    rkhs_inner(phi, phi, hurst)
}

/// Squared |H| norm with the majorant kernel `|phi(s)| |phi(r)|`; an upper
/// bound for the inner-product form, used for the paper-style estimates.
pub fn rkhs_norm_sq_majorant(phi: &RkhsGridFunction, hurst: f64) -> Result<f64> {
    let w = pair_weights(&phi.grid, hurst)?;
    let k = phi.cells();
    let mags: Vec<f64> = (0..k)
        .map(|i| {
            phi.values
                .column(i)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            acc += w[[i, j]] * mags[i] * mags[j];
        }
    }
    Ok(acc)
}

/// Second moment of the Wiener-type integral of a deterministic step
/// function against a standard-normalized fBm; by the isometry this is the
/// squared |H| norm.
pub fn integral_second_moment(phi: &RkhsGridFunction, hurst: f64) -> Result<f64> {
    rkhs_norm_sq(phi, hurst)
}

/// Inner product of two per-cell coefficient matrices under a precomputed
/// weight matrix and Gram matrix: used by the solver's spectral quadrature.
pub(crate) fn weighted_gram_sum(
    z_phi: &Array2<Complex64>,
    z_psi: &Array2<Complex64>,
    gram: Option<&Array2<Complex64>>,
    weights: &Array2<f64>,
) -> f64 {
    // P[i][j] = <z_phi_i, z_psi_j> in the Gram inner product.
    let gz: Array2<Complex64> = match gram {
        Some(g) => g.dot(z_phi),
        None => z_phi.clone(),
    };
    let p = z_psi.t().mapv(|z| z.conj()).dot(&gz); // cells_psi x cells_phi
    let mut acc = 0.0;
    for i in 0..weights.nrows() {
        for j in 0..weights.ncols() {
            acc += weights[[i, j]] * p[[j, i]].re;
        }
    }
    acc
}

/// Exact second moment of a left-endpoint Riemann-Stieltjes sum
/// `sum_j phi(t_j) (B(t_{j+1}) - B(t_j))` computed from the increment
/// covariance alone. Test-oracle companion to [`rkhs_norm_sq`].
pub fn discrete_sum_second_moment(
    spec: &crate::fbm::FbmSpec,
    grid: &[f64],
    cells: &Array1<f64>,
) -> f64 {
    let k = grid.len() - 1;
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            acc += cells[i]
                * cells[j]
                * spec.increment_covariance(grid[i], grid[i + 1], grid[j], grid[j + 1]);
        }
    }
    acc
}
