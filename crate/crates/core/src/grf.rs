//! Gaussian random fields with stationary Matérn covariance on the periodic
//! grid, sampled by diagonalizing the covariance in the Fourier basis.
//!
//! The per-mode variances are the discrete Fourier transform of the
//! periodized kernel evaluated at the grid nodes. By Poisson summation this is
//! the Matérn spectral density folded over all of its aliases, so the sampled
//! field has exactly the Matérn covariance between nodes (and the requested
//! marginal variance) instead of a band-limited approximation of it.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensorgrid::{fft_index, inverse_transform, rfft2_cols, Field, GridSpec, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub nu: f64,
    pub length_scale: f64,
    pub variance: f64,
    pub mean: f64,
}

impl KernelSpec {
    pub fn new(nu: f64, length_scale: f64, variance: f64, mean: f64) -> Result<Self> {
        let k = Self {
            nu,
            length_scale,
            variance,
            mean,
        };
        k.validate()?;
        Ok(k)
    }

    /// `nu = 0.5`, `length_scale = lx / 8`, unit variance, zero mean.
    pub fn default_for(grid: &GridSpec) -> Self {
        Self {
            nu: 0.5,
            length_scale: grid.lx / 8.0,
            variance: 1.0,
            mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.nu) || !ok(self.length_scale) || !ok(self.variance) || !self.mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel needs nu, length_scale, variance > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Matérn correlation at distance `r` (1 at `r = 0`).
    pub fn correlation(&self, r: f64) -> f64 {
        matern_correlation(self.nu, self.length_scale, r)
    }

    /// Normalized 2D spectral density `S(k)` with `int S(k) dk = variance`.
    pub fn spectral_density(&self, k: f64) -> f64 {
        let (nu, l) = (self.nu, self.length_scale);
        self.variance * nu * (2.0 * nu).powf(nu) / (PI * l.powf(2.0 * nu))
            * (2.0 * nu / (l * l) + k * k).powf(-(nu + 1.0))
    }
}

pub fn matern_correlation(nu: f64, l: f64, r: f64) -> f64 {
    let r = r.abs();
    if r == 0.0 {
        return 1.0;
    }
    let s = r / l;
    if nu == 0.5 {
        return (-s).exp();
    }
    if nu == 1.5 {
        let a = 3f64.sqrt() * s;
        return (1.0 + a) * (-a).exp();
    }
    if nu == 2.5 {
        let a = 5f64.sqrt() * s;
        return (1.0 + a + a * a / 3.0) * (-a).exp();
    }
    let x = (2.0 * nu).sqrt() * s;
    if x > 700.0 {
        return 0.0;
    }
    2f64.powf(1.0 - nu) / libm::tgamma(nu) * x.powf(nu) * bessel_k(nu, x)
}

/// Modified Bessel function of the second kind via
/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` (trapezoid rule, which
/// converges geometrically for this double-exponentially decaying integrand).
fn bessel_k(nu: f64, x: f64) -> f64 {
    let upper = ((60.0 / x) + 1.0).acosh() + 1.0;
    let h = 0.01;
    let n = (upper / h).ceil() as usize;
    let mut sum = 0.5 * (-x).exp();
    for i in 1..=n {
        let t = i as f64 * h;
        sum += (-x * t.cosh()).exp() * (nu * t).cosh();
    }
    sum * h
}

#[derive(Debug, Clone)]
pub struct GrfSampler {
    kernel: KernelSpec,
    grid: GridSpec,
    /// Standard deviation per half-spectrum mode, same layout as
    /// [`SpectralField`], scaled so the field variance is `kernel.variance`.
    amplitudes: Vec<f64>,
    seed: u64,
    next_index: u64,
}

pub fn build_sampler(kernel: KernelSpec, grid: GridSpec, seed: u64) -> Result<GrfSampler> {
    kernel.validate()?;
    let k1 = 2.0 * PI / grid.lx.max(grid.ly);
    let k_nyq = PI / grid.dx().max(grid.dy());
    if kernel.spectral_density(k_nyq) > 0.01 * kernel.spectral_density(k1) {
        log::warn!(
            "Matérn spectrum not resolved on {grid}: S(nyquist)/S(k1) = {:.3}",
            kernel.spectral_density(k_nyq) / kernel.spectral_density(k1)
        );
    }

    // Periodized correlation at every node offset.
    let (nx, ny) = (grid.nx, grid.ny);
    let reach = 40.0
        * kernel
            .length_scale
            .max(1.0 / (2.0 * kernel.nu).sqrt() * kernel.length_scale);
    let mx = (reach / grid.lx).ceil() as i64 + 1;
    let my = (reach / grid.ly).ceil() as i64 + 1;
    let mut cov = vec![0.0; grid.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let x0 = ix as f64 * grid.dx();
            let y0 = iy as f64 * grid.dy();
            let mut c = 0.0;
            for a in -mx..=mx {
                for b in -my..=my {
                    let dx = x0 + a as f64 * grid.lx;
                    let dy = y0 + b as f64 * grid.ly;
                    c += kernel.correlation((dx * dx + dy * dy).sqrt());
                }
            }
            cov[iy * nx + ix] = c;
        }
    }
    let c0 = cov[0];
    let n = grid.len() as f64;
    let lambda = rfft2_cols(&cov, nx, ny, grid.half_nx());
    let amplitudes = lambda
        .iter()
        .map(|l| (n * (l.re / c0 * kernel.variance).max(0.0)).sqrt())
        .collect();

    Ok(GrfSampler {
        kernel,
        grid,
        amplitudes,
        seed,
        next_index: 0,
    })
}

impl GrfSampler {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index of the next sample [`GrfSampler::sample`] will produce.
    pub fn position(&self) -> u64 {
        self.next_index
    }

    pub fn set_position(&mut self, index: u64) {
        self.next_index = index;
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    /// The same measure on a different grid (used for resolution transfer).
    pub fn rebuild_for(&self, grid: GridSpec) -> Result<GrfSampler> {
        let mut s = build_sampler(self.kernel, grid, self.seed)?;
        s.next_index = self.next_index;
        Ok(s)
    }

    /// Draws the next `count` fields and advances the stream position.
    pub fn sample(&mut self, count: usize) -> Result<Vec<Field>> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let start = self.next_index;
        self.next_index += count as u64;
        Ok((start..start + count as u64)
            .into_par_iter()
            .map(|i| self.sample_at(i))
            .collect())
    }

    /// Sample number `index` of this sampler's sequence. Each index owns an
    /// independent ChaCha stream, so the result does not depend on how the
    /// sequence is split across workers.
    pub fn sample_at(&self, index: u64) -> Field {
        let spec = self.draw_spectrum(index);
        let mut f = inverse_transform(&spec).expect("sampler spectrum is well formed");
        f.values_mut().iter_mut().for_each(|v| *v += self.kernel.mean);
        f
    }

    /// Hermitian-symmetric spectral draw behind [`GrfSampler::sample_at`].
    pub fn draw_spectrum(&self, index: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let g = self.grid;
        let h = g.half_nx();
        let mut spec = SpectralField::zeros(g);
        let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for iy in 0..g.ny {
            let mirror = (g.ny - iy) % g.ny;
            for kx in 0..h {
                let amp = self.amplitudes[iy * h + kx];
                let self_mirror_col = kx == 0 || kx == g.nx / 2;
                if self_mirror_col {
                    if iy == mirror {
                        spec.set(iy, kx, Complex64::new(amp * gauss(), 0.0));
                    } else if iy < mirror {
                        let z = Complex64::new(gauss(), gauss()) * inv_sqrt2 * amp;
                        spec.set(iy, kx, z);
                        spec.set(mirror, kx, z.conj());
                    }
                } else {
                    let z = Complex64::new(gauss(), gauss()) * inv_sqrt2 * amp;
                    spec.set(iy, kx, z);
                }
            }
        }
        spec
    }

    /// `log S(|k|)` of the continuous Matérn density this sampler uses.
    pub fn log_spectral_density(&self, k_magnitude: f64) -> Result<f64> {
        if !(k_magnitude > 0.0) {
            return Err(Error::InvalidArgument(
                "spectral density is queried for |k| > 0 only".into(),
            ));
        }
        Ok(self.kernel.spectral_density(k_magnitude).ln())
    }

    /// Wavenumber magnitude of half-spectrum entry `(iy, kx)`.
    pub fn mode_magnitude(&self, iy: usize, kx: usize) -> f64 {
        let g = &self.grid;
        let ky = fft_index(iy, g.ny) as f64 * 2.0 * PI / g.ly;
        let kxv = kx as f64 * 2.0 * PI / g.lx;
        (kxv * kxv + ky * ky).sqrt()
    }
}
