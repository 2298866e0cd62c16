//! Periodic 2D grids, real fields on them, and the real-to-complex
//! transforms every other module builds on.
//!
//! Conventions used throughout the crate:
//!
//! * values are row-major with `y` as the slow index: `values[iy * nx + ix]`;
//! * the forward transform is unnormalized, the inverse carries `1/(nx*ny)`;
//! * the half spectrum keeps `kx` in `0..=nx/2` and every `ky` row in FFT
//!   order (`0, 1, .., ny/2-1, -ny/2, .., -1`), stored as
//!   `coeffs[iy * (nx/2 + 1) + kx]`;
//! * the Nyquist index is always assigned the negative sign.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{} on [{}, {}]", self.nx, self.ny, self.lx, self.ly)
    }
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "nx and ny must be even and >= 4, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "domain lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Square `n x n` grid on the torus `[0, 2pi]^2`.
    pub fn torus(n: usize) -> Result<Self> {
        Self::new(n, n, 2.0 * PI, 2.0 * PI)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Quadrature weight of one node in the discrete inner product.
    pub fn cell_area(&self) -> f64 {
        self.lx * self.ly / self.len() as f64
    }

    /// Number of stored `kx` columns in the half spectrum.
    pub fn half_nx(&self) -> usize {
        self.nx / 2 + 1
    }

    /// Same number of points and domain, ignoring float noise in the lengths.
    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.lx - other.lx).abs() <= 1e-12 * self.lx
            && (self.ly - other.ly).abs() <= 1e-12 * self.ly
    }

    pub fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(*self, *other))
        }
    }
}

/// Signed FFT index of position `i` in a length-`n` transform.
pub fn fft_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Physical wavenumbers `(kx, ky)` in FFT order, scaled by `2pi/l`.
pub fn wavenumbers(grid: &GridSpec) -> (Vec<f64>, Vec<f64>) {
    let kx = (0..grid.nx)
        .map(|i| fft_index(i, grid.nx) as f64 * 2.0 * PI / grid.lx)
        .collect();
    let ky = (0..grid.ny)
        .map(|i| fft_index(i, grid.ny) as f64 * 2.0 * PI / grid.ly)
        .collect();
    (kx, ky)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid {} needs {}",
                values.len(),
                grid,
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x, y)` at the grid nodes `x = ix*dx`, `y = iy*dy`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (dx, dy) = (grid.dx(), grid.dy());
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                values.push(f(ix as f64 * dx, iy as f64 * dy));
            }
        }
        Self::new(grid, values)
    }

    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Field) -> Result<()> {
        self.grid.ensure_same(&x.grid)?;
        for (y, xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `a * x + b * y`
    pub fn lincomb(a: f64, x: &Field, b: f64, y: &Field) -> Result<Field> {
        x.grid.ensure_same(&y.grid)?;
        let values = x.values.iter().zip(&y.values).map(|(xv, yv)| a * xv + b * yv).collect();
        Ok(Field::from_raw(x.grid, values))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        Field::lincomb(1.0, self, -1.0, other)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        Field::lincomb(1.0, self, 1.0, other)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Quadrature-weighted inner product approximating the `L^2` inner product on
/// the periodic domain.
pub fn dot(f: &Field, g: &Field) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    Ok(f.grid.cell_area() * raw_dot(&f.values, &g.values))
}

pub fn norm(f: &Field) -> f64 {
    (f.grid.cell_area() * raw_dot(&f.values, &f.values)).sqrt()
}

/// Squared weighted norm of `f - g` without allocating.
pub fn dist_sq(f: &Field, g: &Field) -> Result<f64> {
    f.grid.ensure_same(&g.grid)?;
    let s: f64 = f.values.iter().zip(&g.values).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(f.grid.cell_area() * s)
}

/// Pairwise weighted inner products between two batches, row `i` column `j`.
pub fn dot_batch(a: &[Field], b: &[Field]) -> Result<Vec<Vec<f64>>> {
    a.iter().map(|f| b.iter().map(|g| dot(f, g)).collect()).collect()
}

pub fn raw_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Half-spectrum representation of a real field (see module docs for layout).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.ny * grid.half_nx() {
            return Err(Error::InvalidArgument(format!(
                "spectrum has {} coefficients, grid {} needs {}",
                coeffs.len(),
                grid,
                grid.ny * grid.half_nx()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.ny * grid.half_nx()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient at row `iy` (FFT order) and column `kx`.
    pub fn at(&self, iy: usize, kx: usize) -> Complex64 {
        self.coeffs[iy * self.grid.half_nx() + kx]
    }

    pub fn set(&mut self, iy: usize, kx: usize, c: Complex64) {
        let h = self.grid.half_nx();
        self.coeffs[iy * h + kx] = c;
    }

    /// Multiplicity of column `kx` in the full spectrum: interior columns
    /// stand for themselves and their mirror image.
    pub fn column_weight(&self, kx: usize) -> f64 {
        if kx == 0 || kx == self.grid.nx / 2 {
            1.0
        } else {
            2.0
        }
    }

    /// `sum |c|^2` over the full spectrum reconstructed from this half.
    pub fn full_energy(&self) -> f64 {
        let h = self.grid.half_nx();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| self.column_weight(i % h) * c.norm_sqr())
            .sum()
    }

    /// Largest violation of `c(kx, -ky) = conj(c(kx, ky))` on the columns
    /// that are their own mirror (`kx = 0` and `kx = nx/2`).
    pub fn hermitian_defect(&self) -> f64 {
        let ny = self.grid.ny;
        let mut worst: f64 = 0.0;
        for kx in [0, self.grid.nx / 2] {
            for iy in 0..ny {
                let mirror = (ny - iy) % ny;
                let d = (self.at(iy, kx) - self.at(mirror, kx).conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, FftPair>> = RefCell::new(HashMap::new());
}

#[derive(Clone)]
pub(crate) struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

/// Per-thread cached 1D plans of length `n`.
pub(crate) fn plans(n: usize) -> FftPair {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                FftPair {
                    forward: planner.plan_fft_forward(n),
                    inverse: planner.plan_fft_inverse(n),
                }
            })
            .clone()
    })
}

/// Unnormalized forward transform of a real row-major field, keeping only
/// the first `ncols` columns of `kx` (`ncols <= nx/2 + 1`). Output layout is
/// `[ky row in FFT order][kx < ncols]`.
pub(crate) fn rfft2_cols(values: &[f64], nx: usize, ny: usize, ncols: usize) -> Vec<Complex64> {
    debug_assert!(ncols <= nx / 2 + 1);
    let px = plans(nx);
    let py = plans(ny);
    let mut row = vec![Complex64::new(0.0, 0.0); nx];
    let mut out = vec![Complex64::new(0.0, 0.0); ny * ncols];
    for iy in 0..ny {
        for (r, v) in row.iter_mut().zip(&values[iy * nx..(iy + 1) * nx]) {
            *r = Complex64::new(*v, 0.0);
        }
        px.forward.process(&mut row);
        out[iy * ncols..(iy + 1) * ncols].copy_from_slice(&row[..ncols]);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for kx in 0..ncols {
        for iy in 0..ny {
            col[iy] = out[iy * ncols + kx];
        }
        py.forward.process(&mut col);
        for iy in 0..ny {
            out[iy * ncols + kx] = col[iy];
        }
    }
    out
}

/// Real synthesis from the first `ncols` half-spectrum columns:
/// `y(p) = scale * Re sum_k c_kx Y(k) exp(i k.p)` with `c = 1` on the
/// `kx = 0` and Nyquist columns and `c = 2` elsewhere. With `scale = 1/(nx*ny)`
/// this is the inverse of [`rfft2_cols`] for Hermitian input.
pub(crate) fn irfft2_cols(spec: &[Complex64], nx: usize, ny: usize, ncols: usize, scale: f64) -> Vec<f64> {
    debug_assert_eq!(spec.len(), ny * ncols);
    let px = plans(nx);
    let py = plans(ny);
    let mut work = spec.to_vec();
    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    for kx in 0..ncols {
        for iy in 0..ny {
            col[iy] = work[iy * ncols + kx];
        }
        py.inverse.process(&mut col);
        for iy in 0..ny {
            work[iy * ncols + kx] = col[iy];
        }
    }
    let nyq = nx / 2;
    let mut row = vec![Complex64::new(0.0, 0.0); nx];
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        row.iter_mut().for_each(|r| *r = Complex64::new(0.0, 0.0));
        let z = &work[iy * ncols..(iy + 1) * ncols];
        for (kx, zk) in z.iter().enumerate() {
            if kx == 0 || kx == nyq {
                row[kx] += Complex64::new(zk.re, 0.0);
            } else {
                row[kx] += *zk;
                row[nx - kx] += zk.conj();
            }
        }
        px.inverse.process(&mut row);
        for (o, r) in out[iy * nx..(iy + 1) * nx].iter_mut().zip(&row) {
            *o = r.re * scale;
        }
    }
    out
}

pub fn forward_transform(f: &Field) -> Result<SpectralField> {
    if let Some(index) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let g = f.grid;
    let coeffs = rfft2_cols(&f.values, g.nx, g.ny, g.half_nx());
    Ok(SpectralField { grid: g, coeffs })
}

pub fn inverse_transform(s: &SpectralField) -> Result<Field> {
    let g = s.grid;
    if s.coeffs.len() != g.ny * g.half_nx() {
        return Err(Error::InvalidArgument(
            "spectrum size inconsistent with its grid".into(),
        ));
    }
    let values = irfft2_cols(&s.coeffs, g.nx, g.ny, g.half_nx(), 1.0 / g.len() as f64);
    Field::new(g, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Field::new(grid, v).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(3, 8, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 2, 1.0, 1.0).is_err());
        assert!(GridSpec::new(8, 8, 0.0, 1.0).is_err());
        assert!(GridSpec::new(8, 6, 1.0, 2.0).is_ok());
    }

    #[test]
    fn constant_field_is_dc_only() {
        let g = GridSpec::torus(8).unwrap();
        let s = forward_transform(&Field::constant(g, 1.5)).unwrap();
        assert!((s.at(0, 0) - Complex64::new(64.0 * 1.5, 0.0)).norm() < 1e-12);
        let rest: f64 = s.coeffs().iter().skip(1).map(|c| c.norm()).sum();
        assert!(rest < 1e-12);
    }

    #[test]
    fn single_sine_mode() {
        let g = GridSpec::new(16, 16, 3.0, 3.0).unwrap();
        let f = Field::from_fn(g, |x, _| (2.0 * PI * x / 3.0).sin()).unwrap();
        let s = forward_transform(&f).unwrap();
        let total = s.full_energy();
        // (kx=1, ky=0) and its mirror carry everything
        let e1 = s.column_weight(1) * s.at(0, 1).norm_sqr();
        assert!((e1 - total).abs() < 1e-10 * total);
    }

    #[test]
    fn parseval_random() {
        let g = GridSpec::torus(32).unwrap();
        let f = random_field(g, 3);
        let s = forward_transform(&f).unwrap();
        let lhs: f64 = f.values().iter().map(|v| v * v).sum();
        // oracle: direct summation over the full spectrum
        let mut full = 0.0;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let mut c = Complex64::new(0.0, 0.0);
                for py in 0..g.ny {
                    for px in 0..g.nx {
                        let th = -2.0 * PI * ((ix * px) as f64 / g.nx as f64 + (iy * py) as f64 / g.ny as f64);
                        c += f.values()[py * g.nx + px] * Complex64::new(th.cos(), th.sin());
                    }
                }
                full += c.norm_sqr();
            }
        }
        let rhs = full / g.len() as f64;
        assert!((lhs - rhs).abs() < 1e-12 * lhs);
        assert!((s.full_energy() / g.len() as f64 - lhs).abs() < 1e-12 * lhs);
    }

    #[test]
    fn roundtrip_all_sizes() {
        for (i, &n) in [8usize, 16, 32, 64].iter().enumerate() {
            for &m in &[8usize, 16, 32, 64] {
                let g = GridSpec::new(n, m, 2.0, 5.0).unwrap();
                let f = random_field(g, (i * 10 + m) as u64);
                let back = inverse_transform(&forward_transform(&f).unwrap()).unwrap();
                let scale = f.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(f.max_abs_diff(&back) < 1e-12 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn zero_spectrum_zero_field() {
        let g = GridSpec::torus(8).unwrap();
        let f = inverse_transform(&SpectralField::zeros(g)).unwrap();
        assert!(f.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_coefficient_gives_cosine() {
        let g = GridSpec::new(16, 8, 4.0, 1.0).unwrap();
        let mut s = SpectralField::zeros(g);
        // interior column stands for +kx and its conjugate mirror
        s.set(0, 1, Complex64::new(g.len() as f64 / 2.0, 0.0));
        let f = inverse_transform(&s).unwrap();
        let expect = Field::from_fn(g, |x, _| (2.0 * PI * x / 4.0).cos()).unwrap();
        assert!(f.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn wavenumber_ordering() {
        let g = GridSpec::torus(8).unwrap();
        let (kx, _) = wavenumbers(&g);
        assert_eq!(kx, vec![0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0]);
        let g = GridSpec::new(4, 4, 4.0 * PI, 1.0).unwrap();
        let (kx, _) = wavenumbers(&g);
        for (a, b) in kx.iter().zip([0.0, 0.5, -1.0, -0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        let idx: Vec<i64> = (0..6).map(|i| fft_index(i, 6)).collect();
        assert_eq!(idx, vec![0, 1, 2, -3, -2, -1]);
    }

    #[test]
    fn inner_product_basics() {
        let g = GridSpec::torus(16).unwrap();
        let one = Field::constant(g, 1.0);
        assert!((norm(&one) - 2.0 * PI).abs() < 1e-12);
        assert_eq!(dot(&one, &Field::zeros(g)).unwrap(), 0.0);
        let s = Field::from_fn(g, |x, _| (3.0 * x).sin()).unwrap();
        let c = Field::from_fn(g, |x, _| (3.0 * x).cos()).unwrap();
        assert!(dot(&s, &c).unwrap().abs() < 1e-12);
        let other = GridSpec::torus(8).unwrap();
        assert!(dot(&one, &Field::zeros(other)).is_err());
    }

    #[test]
    fn inner_product_converges_with_resolution() {
        // sin(x + cos y) * exp(sin x) is smooth and periodic; its grid inner
        // product with cos(y) converges spectrally as resolution doubles.
        let f = |x: f64, y: f64| (x + y.cos()).sin() * x.sin().exp();
        let g = |_x: f64, y: f64| y.cos() + (2.0 * _x).sin();
        let reference = {
            let grid = GridSpec::torus(128).unwrap();
            dot(&Field::from_fn(grid, f).unwrap(), &Field::from_fn(grid, g).unwrap()).unwrap()
        };
        let mut last = f64::INFINITY;
        for n in [4usize, 8, 16] {
            let grid = GridSpec::torus(n).unwrap();
            let v = dot(&Field::from_fn(grid, f).unwrap(), &Field::from_fn(grid, g).unwrap()).unwrap();
            let err = (v - reference).abs();
            assert!(err < last || err < 1e-12, "n={n}: {err} vs {last}");
            last = err;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        let g = GridSpec::torus(4).unwrap();
        let mut v = vec![0.0; 16];
        v[5] = f64::NAN;
        match Field::new(g, v) {
            Err(Error::NonFinite { index }) => assert_eq!(index, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn real_spectrum_is_hermitian() {
        let g = GridSpec::new(16, 8, 1.0, 1.0).unwrap();
        let s = forward_transform(&random_field(g, 9)).unwrap();
        assert!(s.hermitian_defect() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            #[test]
            fn parseval_and_cauchy_schwarz(seed in any::<u64>()) {
                let g = GridSpec::new(16, 8, 2.0, 3.0).unwrap();
                let f = random_field(g, seed);
                let h = random_field(g, seed.wrapping_add(1));
                let s = forward_transform(&f).unwrap();
                let lhs: f64 = f.values().iter().map(|v| v * v).sum();
                prop_assert!((s.full_energy() / g.len() as f64 - lhs).abs() <= 1e-12 * lhs);
                let d = dot(&f, &h).unwrap();
                prop_assert!(d.abs() <= norm(&f) * norm(&h) * (1.0 + 1e-12));
                prop_assert!((d - dot(&h, &f).unwrap()).abs() < 1e-12);
            }
        }
    }
}
