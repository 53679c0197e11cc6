//! Exact-covariance fractional Brownian motion sampling.
//!
//! Paths are generated either from a dense Cholesky factor of the grid
//! covariance (any strictly increasing grid) or by circulant embedding of
//! the increment autocovariance (uniform grids). Both reproduce the target
//! finite-dimensional Gaussian law exactly, so every statistical check
//! downstream is sharp.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Cholesky, UPLO};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use std::io::Write;

use crate::error::{Error, Result};

/// Covariance normalization.
///
/// `Standard` uses the prefactor 1/2 so that Var B(1) = 1 and the
/// indicator isometry reads t^{2H}; `PaperPrefactor` uses 1/(2H).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Normalization {
    Standard,
    PaperPrefactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    Cholesky,
    CirculantEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmSpec {
    pub hurst: f64,
    pub channels: usize,
    pub normalization: Normalization,
    pub seed: u64,
}

impl FbmSpec {
    /// H in [1/2, 1); H = 1/2 is admitted for Wiener cross-checks.
    pub fn new(hurst: f64, channels: usize, normalization: Normalization, seed: u64) -> Result<Self> {
        if !(0.5..1.0).contains(&hurst) {
            return Err(Error::OutOfRange {
                key: "hurst".into(),
                value: format!("{hurst}"),
                reason: "Hurst parameter must lie in [0.5, 1)".into(),
            });
        }
        if channels == 0 {
            return Err(Error::OutOfRange {
                key: "channels".into(),
                value: "0".into(),
                reason: "at least one channel".into(),
            });
        }
        Ok(FbmSpec {
            hurst,
            channels,
            normalization,
            seed,
        })
    }

    /// E[B(t) B(s)] under this spec's normalization.
    pub fn covariance(&self, t: f64, s: f64) -> f64 {
        let two_h = 2.0 * self.hurst;
        let raw = t.abs().powf(two_h) + s.abs().powf(two_h) - (t - s).abs().powf(two_h);
        match self.normalization {
            Normalization::Standard => 0.5 * raw,
            Normalization::PaperPrefactor => raw / two_h,
        }
    }

    /// Covariance of two increments B(b)-B(a) and B(d)-B(c).
    pub fn increment_covariance(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        self.covariance(b, d) - self.covariance(b, c) - self.covariance(a, d)
            + self.covariance(a, c)
    }

    fn amplitude(&self) -> f64 {
        match self.normalization {
            Normalization::Standard => 1.0,
            Normalization::PaperPrefactor => 1.0 / self.hurst.sqrt(),
        }
    }
}

/// A multi-channel path on a grid starting at t0 = 0 with B(0) = 0.
#[derive(Debug, Clone)]
pub struct FbmPath {
    pub grid: Vec<f64>,
    /// channels x (grid length); column 0 is zero.
    pub values: Array2<f64>,
    pub spec: FbmSpec,
}

impl FbmPath {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Increment of channel `ch` over grid interval `k`.
    pub fn increment(&self, ch: usize, k: usize) -> f64 {
        self.values[[ch, k + 1]] - self.values[[ch, k]]
    }

    /// All channel values at grid index k.
    pub fn at(&self, k: usize) -> Array1<f64> {
        self.values.column(k).to_owned()
    }

    /// All channel values at grid index k, as complex.
    pub fn at_c(&self, k: usize) -> Array1<Complex64> {
        self.values.column(k).mapv(|x| Complex64::new(x, 0.0))
    }

    /// Writes `time,channel_1,..,channel_n` rows; the seed and spec go into
    /// a leading comment line.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "# seed={} hurst={} normalization={:?} channels={}",
            self.spec.seed, self.spec.hurst, self.spec.normalization, self.spec.channels
        )?;
        let header: Vec<String> = (1..=self.spec.channels)
            .map(|k| format!("channel_{k}"))
            .collect();
        writeln!(w, "time,{}", header.join(","))?;
        for (k, &t) in self.grid.iter().enumerate() {
            let row: Vec<String> = (0..self.spec.channels)
                .map(|ch| format!("{:.16e}", self.values[[ch, k]]))
                .collect();
            writeln!(w, "{:.16e},{}", t, row.join(","))?;
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::GridMismatch("grid needs at least two points".into()));
    }
    if grid[0] != 0.0 {
        return Err(Error::GridMismatch(format!(
            "grid must start at t0 = 0, got {}",
            grid[0]
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Deterministic per-(seed, channel, replicate) random substream.
pub fn substream(seed: u64, channel: usize, replicate: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 20) | (channel as u64 + 1));
    rng
}

/// Samples a path with the replicate index 0.
pub fn sample(spec: &FbmSpec, grid: &[f64], method: SamplingMethod) -> Result<FbmPath> {
    sample_replicate(spec, grid, method, 0)
}

/// Samples one Monte Carlo replicate; replicates and channels use disjoint
/// substreams so the ensemble is reproducible and order-independent.
pub fn sample_replicate(
    spec: &FbmSpec,
    grid: &[f64],
    method: SamplingMethod,
    replicate: usize,
) -> Result<FbmPath> {
    validate_grid(grid)?;
    let k = grid.len() - 1;
    let mut values = Array2::<f64>::zeros((spec.channels, grid.len()));
    match method {
        SamplingMethod::Cholesky => {
            let factor = cholesky_factor(spec, grid)?;
            for ch in 0..spec.channels {
                let mut rng = substream(spec.seed, ch, replicate);
                let xi: Array1<f64> = Array1::from_iter((0..k).map(|_| rng.sample(StandardNormal)));
                let path = factor.dot(&xi);
                for i in 0..k {
                    values[[ch, i + 1]] = path[i];
                }
            }
        }
        SamplingMethod::CirculantEmbedding => {
            let dt = uniform_step(grid)?;
            let sqrt_eigs = circulant_sqrt_eigs(spec, k, dt)?;
            for ch in 0..spec.channels {
                let mut rng = substream(spec.seed, ch, replicate);
                let fgn = davies_harte_fgn(&sqrt_eigs, k, &mut rng);
                let mut acc = 0.0;
                for i in 0..k {
                    acc += fgn[i];
                    values[[ch, i + 1]] = acc * spec.amplitude();
                }
            }
        }
    }
    Ok(FbmPath {
        grid: grid.to_vec(),
        values,
        spec: *spec,
    })
}

fn uniform_step(grid: &[f64]) -> Result<f64> {
    let dt = grid[1] - grid[0];
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.max(1.0) {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(dt)
}

/// Cholesky factor of the covariance of (B(t_1), .., B(t_K)).
pub fn cholesky_factor(spec: &FbmSpec, grid: &[f64]) -> Result<Array2<f64>> {
    validate_grid(grid)?;
    let k = grid.len() - 1;
    let mut cov = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            cov[[i, j]] = spec.covariance(grid[i + 1], grid[j + 1]);
        }
    }
    cov.cholesky(UPLO::Lower)
        .map_err(|e| Error::Linalg(format!("fBm covariance not positive definite: {e}")))
}

/// Square roots of the circulant eigenvalues for the Davies-Harte method;
/// errors when the embedding fails to be positive semidefinite.
fn circulant_sqrt_eigs(spec: &FbmSpec, k: usize, dt: f64) -> Result<Vec<f64>> {
    let two_h = 2.0 * spec.hurst;
    // Standard-normalization fGn autocovariance on step dt.
    let gamma = |lag: f64| -> f64 {
        0.5 * dt.powf(two_h)
            * ((lag + 1.0).abs().powf(two_h) - 2.0 * lag.abs().powf(two_h)
                + (lag - 1.0).abs().powf(two_h))
    };
    let m = 2 * k;
    let mut row: Vec<Complex64> = Vec::with_capacity(m);
    for i in 0..=k {
        row.push(Complex64::new(gamma(i as f64), 0.0));
    }
    for i in (1..k).rev() {
        row.push(Complex64::new(gamma(i as f64), 0.0));
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);
    let eigs: Vec<f64> = row.iter().map(|z| z.re).collect();
    let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = eigs.iter().cloned().fold(0.0, f64::max).max(1.0);
    if min < -1e-12 * scale {
        return Err(Error::EmbeddingNotPsd(min));
    }
    Ok(eigs.iter().map(|&e| e.max(0.0).sqrt()).collect())
}

/// One fractional Gaussian noise run of length k from precomputed circulant
/// eigenvalue roots.
fn davies_harte_fgn(sqrt_eigs: &[f64], k: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let m = 2 * k;
    let scale = 1.0 / (m as f64).sqrt();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); m];
    let g0: f64 = rng.sample(StandardNormal);
    spectrum[0] = Complex64::new(sqrt_eigs[0] * g0 * scale, 0.0);
    let gk: f64 = rng.sample(StandardNormal);
    spectrum[k] = Complex64::new(sqrt_eigs[k] * gk * scale, 0.0);
    for i in 1..k {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let z = Complex64::new(re * half, im * half) * (sqrt_eigs[i] * scale);
        spectrum[i] = z;
        spectrum[m - i] = z.conj();
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut spectrum);
    spectrum.iter().take(k).map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(h: f64) -> FbmSpec {
        FbmSpec::new(h, 1, Normalization::Standard, 7).unwrap()
    }

    #[test]
    fn covariance_values() {
        let s = spec(0.5);
        assert_relative_eq!(s.covariance(2.0, 3.0), 2.0, max_relative = 1e-15);
        assert_eq!(s.covariance(2.0, 0.0), 0.0);
        let p = FbmSpec::new(0.75, 1, Normalization::PaperPrefactor, 0).unwrap();
        assert_relative_eq!(p.covariance(1.0, 1.0), 4.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn covariance_self_similarity_and_increments() {
        let s = spec(0.8);
        for (a, t, u) in [(2.0, 0.3, 1.1), (0.5, 2.0, 0.7), (3.7, 0.05, 0.9)] {
            let lhs = s.covariance(a * t, a * u);
            let rhs = a.powf(1.6) * s.covariance(t, u);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
            // Stationary increments: Var[B(t) - B(u)] = |t - u|^{2H}.
            let var = s.covariance(t, t) - 2.0 * s.covariance(t, u) + s.covariance(u, u);
            assert_relative_eq!(var, (t - u).abs().powf(1.6), max_relative = 1e-10);
        }
    }

    #[test]
    fn hurst_range_enforced() {
        assert!(matches!(
            FbmSpec::new(1.2, 1, Normalization::Standard, 0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            FbmSpec::new(0.49, 1, Normalization::Standard, 0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn sampling_is_reproducible_and_independent_across_channels() {
        let s = FbmSpec::new(0.7, 3, Normalization::Standard, 42).unwrap();
        let grid: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
        let a = sample(&s, &grid, SamplingMethod::Cholesky).unwrap();
        let b = sample(&s, &grid, SamplingMethod::Cholesky).unwrap();
        assert_eq!(a.values, b.values);
        assert_ne!(a.values.row(0), a.values.row(1));
        for ch in 0..3 {
            assert_eq!(a.values[[ch, 0]], 0.0);
        }
    }

    #[test]
    fn circulant_requires_uniform_grid() {
        let s = spec(0.7);
        let grid = [0.0, 0.1, 0.3, 0.4];
        assert!(matches!(
            sample(&s, &grid, SamplingMethod::CirculantEmbedding),
            Err(Error::NonUniformGrid)
        ));
    }

    #[test]
    fn wiener_increments_uncorrelated() {
        // H = 1/2: lag-1 increment autocorrelation within 3 sigma of zero.
        let s = FbmSpec::new(0.5, 1, Normalization::Standard, 11).unwrap();
        let n = 20_000usize;
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        let mut count = 0usize;
        for r in 0..(n / 63) {
            let p = sample_replicate(&s, &grid, SamplingMethod::CirculantEmbedding, r).unwrap();
            for k in 0..62 {
                num += p.increment(0, k) * p.increment(0, k + 1);
                den += p.increment(0, k).powi(2);
                count += 1;
            }
        }
        let rho = num / den;
        let bound = 3.0 / (count as f64).sqrt();
        assert!(rho.abs() < bound, "lag-1 correlation {rho} vs bound {bound}");
    }

    #[test]
    fn monte_carlo_variance_matches_formula() {
        let s = FbmSpec::new(0.7, 1, Normalization::Standard, 5).unwrap();
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let n = 10_000usize;
        for method in [SamplingMethod::Cholesky, SamplingMethod::CirculantEmbedding] {
            let mut sum_sq = 0.0;
            for r in 0..n {
                let p = sample_replicate(&s, &grid, method, r).unwrap();
                sum_sq += p.values[[0, 8]].powi(2);
            }
            let var = sum_sq / n as f64;
            let tol = 3.0 * (2.0 / n as f64).sqrt();
            assert!(
                (var - 1.0).abs() < tol,
                "empirical Var B(1) = {var} ({method:?})"
            );
        }
    }

    #[test]
    fn paper_prefactor_scales_samples() {
        let h = 0.75;
        let std = FbmSpec::new(h, 1, Normalization::Standard, 9).unwrap();
        let pap = FbmSpec::new(h, 1, Normalization::PaperPrefactor, 9).unwrap();
        let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
        let a = sample(&std, &grid, SamplingMethod::CirculantEmbedding).unwrap();
        let b = sample(&pap, &grid, SamplingMethod::CirculantEmbedding).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert_relative_eq!(y, &(x / h.sqrt()), max_relative = 1e-12);
        }
    }
}
