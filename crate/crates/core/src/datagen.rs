//! Reference data: a pseudo-spectral 2D Kolmogorov-flow solver in vorticity
//! form and plain GRF datasets.
//!
//! The solver keeps only the modes that survive 2/3-rule dealiasing, stored
//! column-major as `[kx column][ky row]` with both signs of `kx` present.
//! Two real fields are synthesized per complex inverse transform.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::Fft;

use crate::error::{Error, Result};
use crate::grf::{build_sampler, KernelSpec};
use crate::rng::derive_seed;
use crate::tensorgrid::{fft_index, plans, Field, GridSpec};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KolmogorovConfig {
    pub grid: GridSpec,
    pub re: f64,
    pub n_forcing: u32,
    pub dt: f64,
    pub spinup_time: f64,
    pub snapshot_interval: f64,
    pub n_snapshots: usize,
    pub seed: u64,
}

impl Default for KolmogorovConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::torus(64).expect("valid grid"),
            re: 40.0,
            n_forcing: 4,
            dt: 1e-3,
            spinup_time: 50.0,
            snapshot_interval: 1.0,
            n_snapshots: 100,
            seed: 0,
        }
    }
}

impl KolmogorovConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.grid;
        let two_pi = 2.0 * PI;
        if (g.lx - two_pi).abs() > 1e-12 || (g.ly - two_pi).abs() > 1e-12 {
            return Err(Error::InvalidGrid(format!("the flow lives on [0, 2pi]^2, got {g}")));
        }
        if !(self.re > 0.0) || self.n_forcing == 0 {
            return Err(Error::InvalidArgument("re and n_forcing must be positive".into()));
        }
        if !(self.dt > 0.0) || !(self.snapshot_interval >= self.dt) || !(self.spinup_time >= 0.0) {
            return Err(Error::InvalidArgument(
                "need dt > 0, snapshot_interval >= dt and spinup_time >= 0".into(),
            ));
        }
        if self.n_snapshots == 0 {
            return Err(Error::InvalidArgument("n_snapshots must be positive".into()));
        }
        if self.n_forcing as usize > (g.ny - 1) / 3 {
            return Err(Error::InvalidArgument(format!(
                "forcing wavenumber {} is removed by dealiasing on {g}",
                self.n_forcing
            )));
        }
        Ok(())
    }

    pub fn steps_per_snapshot(&self) -> usize {
        (self.snapshot_interval / self.dt).round() as usize
    }

    pub fn spinup_steps(&self) -> usize {
        (self.spinup_time / self.dt).round() as usize
    }
}

/// Vorticity `w` on the 2pi torus evolved by
/// `w_t + u.grad w = nu * lap w + forcing`, with `u` from the streamfunction.
pub struct VorticitySolver {
    grid: GridSpec,
    nx: usize,
    ny: usize,
    /// physical `kx` of each kept column
    kx: Vec<f64>,
    /// grid column index of each kept column
    col_index: Vec<usize>,
    ky: Vec<f64>,
    /// 1 on kept `ky` rows, 0 elsewhere
    row_mask: Vec<f64>,
    nu: f64,
    dt: f64,
    forcing: Vec<Complex64>,
    forcing_n: Option<u32>,
    e_half: Vec<f64>,
    e_full: Vec<f64>,
    w: Vec<Complex64>,
    time: f64,
    steps: u64,
    fx: Arc<dyn Fft<f64>>,
    ix: Arc<dyn Fft<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
    grid_buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl VorticitySolver {
    /// `forcing = Some(n)` adds `-n cos(n y)`; `nu = 0` gives the Euler
    /// equations.
    pub fn new(grid: GridSpec, nu: f64, forcing: Option<u32>, dt: f64) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        if !(nu >= 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidArgument("need nu >= 0 and dt > 0".into()));
        }
        let kxmax = (nx - 1) / 3;
        let kymax = (ny - 1) / 3;
        let mut kx = Vec::new();
        let mut col_index = Vec::new();
        for k in (0..=kxmax as i64).chain(-(kxmax as i64)..0) {
            kx.push(2.0 * PI / grid.lx * k as f64);
            col_index.push(k.rem_euclid(nx as i64) as usize);
        }
        let ky: Vec<f64> = (0..ny).map(|i| 2.0 * PI / grid.ly * fft_index(i, ny) as f64).collect();
        let row_mask = (0..ny)
            .map(|i| {
                if fft_index(i, ny).unsigned_abs() as usize <= kymax {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let px = plans(nx);
        let py = plans(ny);
        let scratch_len = [&px.forward, &px.inverse, &py.forward, &py.inverse]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let mut s = Self {
            grid,
            nx,
            ny,
            kx,
            col_index,
            ky,
            row_mask,
            nu,
            dt,
            forcing: Vec::new(),
            forcing_n: forcing,
            e_half: Vec::new(),
            e_full: Vec::new(),
            w: Vec::new(),
            time: 0.0,
            steps: 0,
            fx: px.forward,
            ix: px.inverse,
            fy: py.forward,
            iy: py.inverse,
            grid_buf: vec![ZERO; nx * ny],
            scratch: vec![ZERO; scratch_len],
        };
        s.w = vec![ZERO; s.ncoef()];
        s.forcing = vec![ZERO; s.ncoef()];
        if let Some(n) = forcing {
            if n as usize > kymax {
                return Err(Error::InvalidArgument(format!(
                    "forcing wavenumber {n} is removed by dealiasing"
                )));
            }
            let f = Field::from_fn(grid, |_, y| -(n as f64) * (n as f64 * y).cos())?;
            s.forcing = s.forward(f.values());
        }
        let lap: Vec<f64> = s.k2();
        s.e_half = lap.iter().map(|k2| (-nu * k2 * dt / 2.0).exp()).collect();
        s.e_full = lap.iter().map(|k2| (-nu * k2 * dt).exp()).collect();
        Ok(s)
    }

    fn ncoef(&self) -> usize {
        self.kx.len() * self.ny
    }

    /// `|k|^2` per stored coefficient.
    fn k2(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.ncoef());
        for kx in &self.kx {
            for ky in &self.ky {
                out.push(kx * kx + ky * ky);
            }
        }
        out
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Unnormalized forward transform restricted to the kept modes.
    fn forward(&mut self, values: &[f64]) -> Vec<Complex64> {
        let (nx, ny) = (self.nx, self.ny);
        for (b, v) in self.grid_buf.iter_mut().zip(values) {
            *b = Complex64::new(*v, 0.0);
        }
        self.fx.process_with_scratch(&mut self.grid_buf, &mut self.scratch);
        let mut out = vec![ZERO; self.ncoef()];
        for (j, &c) in self.col_index.iter().enumerate() {
            let col = &mut out[j * ny..(j + 1) * ny];
            for (iy, o) in col.iter_mut().enumerate() {
                *o = self.grid_buf[iy * nx + c];
            }
        }
        self.fy.process_with_scratch(&mut out, &mut self.scratch);
        for col in out.chunks_mut(ny) {
            for (o, m) in col.iter_mut().zip(&self.row_mask) {
                *o *= m;
            }
        }
        out
    }

    /// Synthesizes the real fields of two Hermitian spectra `a` and `b`.
    fn inverse_pair(&mut self, a: &[Complex64], b: &[Complex64], out_a: &mut [f64], out_b: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let i = Complex64::new(0.0, 1.0);
        let mut packed: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x + i * y).collect();
        self.iy.process_with_scratch(&mut packed, &mut self.scratch);
        self.grid_buf.iter_mut().for_each(|z| *z = ZERO);
        for (j, &c) in self.col_index.iter().enumerate() {
            for iy in 0..ny {
                self.grid_buf[iy * nx + c] = packed[j * ny + iy];
            }
        }
        self.ix.process_with_scratch(&mut self.grid_buf, &mut self.scratch);
        let scale = 1.0 / (nx * ny) as f64;
        for ((z, oa), ob) in self.grid_buf.iter().zip(out_a.iter_mut()).zip(out_b.iter_mut()) {
            *oa = z.re * scale;
            *ob = z.im * scale;
        }
    }

    fn inverse(&mut self, a: &[Complex64]) -> Vec<f64> {
        let zero = vec![ZERO; a.len()];
        let mut out = vec![0.0; self.nx * self.ny];
        let mut junk = vec![0.0; self.nx * self.ny];
        self.inverse_pair(a, &zero, &mut out, &mut junk);
        out
    }

    /// Streamfunction-derived velocity spectra `(u, v)`.
    fn velocity_spectra(&self, w: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let ny = self.ny;
        let mut u = vec![ZERO; w.len()];
        let mut v = vec![ZERO; w.len()];
        for (j, kx) in self.kx.iter().enumerate() {
            for iy in 0..ny {
                let idx = j * ny + iy;
                let ky = self.ky[iy];
                let k2 = kx * kx + ky * ky;
                if k2 == 0.0 {
                    continue;
                }
                let psi = w[idx] / k2;
                u[idx] = Complex64::new(0.0, ky) * psi;
                v[idx] = Complex64::new(0.0, -kx) * psi;
            }
        }
        (u, v)
    }

    /// `-u.grad w + forcing` in spectral space, dealiased.
    fn rhs(&mut self, w: &[Complex64]) -> Vec<Complex64> {
        let ny = self.ny;
        let n = self.nx * self.ny;
        let (u, v) = self.velocity_spectra(w);
        let mut wx = vec![ZERO; w.len()];
        let mut wy = vec![ZERO; w.len()];
        for (j, kx) in self.kx.iter().enumerate() {
            for iy in 0..ny {
                let idx = j * ny + iy;
                wx[idx] = Complex64::new(0.0, *kx) * w[idx];
                wy[idx] = Complex64::new(0.0, self.ky[iy]) * w[idx];
            }
        }
        let (mut pu, mut pv, mut pwx, mut pwy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.inverse_pair(&u, &v, &mut pu, &mut pv);
        self.inverse_pair(&wx, &wy, &mut pwx, &mut pwy);
        let adv: Vec<f64> = (0..n).map(|p| -(pu[p] * pwx[p] + pv[p] * pwy[p])).collect();
        let mut out = self.forward(&adv);
        for (o, f) in out.iter_mut().zip(&self.forcing) {
            *o += f;
        }
        out
    }

    pub fn set_vorticity(&mut self, w: &Field) -> Result<()> {
        self.grid().ensure_same(w.grid())?;
        if let Some(index) = w.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut c = self.forward(w.values());
        // the mean of the vorticity on a torus is zero
        c[0] = ZERO;
        self.w = c;
        Ok(())
    }

    pub fn vorticity(&mut self) -> Field {
        let w = self.w.clone();
        let values = self.inverse(&w);
        Field::new(self.grid(), values).expect("finite state")
    }

    pub fn velocity(&mut self) -> (Field, Field) {
        let (u, v) = self.velocity_spectra(&self.w.clone());
        let n = self.nx * self.ny;
        let (mut pu, mut pv) = (vec![0.0; n], vec![0.0; n]);
        self.inverse_pair(&u, &v, &mut pu, &mut pv);
        let g = self.grid();
        (Field::new(g, pu).expect("finite"), Field::new(g, pv).expect("finite"))
    }

    /// Largest `|du/dx + dv/dy|` over the nodes, differentiated spectrally.
    pub fn max_divergence(&mut self) -> f64 {
        let (u, v) = self.velocity_spectra(&self.w.clone());
        let ny = self.ny;
        let mut div = vec![ZERO; u.len()];
        for (j, kx) in self.kx.iter().enumerate() {
            for iy in 0..ny {
                let idx = j * ny + iy;
                div[idx] = Complex64::new(0.0, *kx) * u[idx] + Complex64::new(0.0, self.ky[iy]) * v[idx];
            }
        }
        self.inverse(&div).iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    fn mode_sum(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let n2 = ((self.nx * self.ny) as f64).powi(2);
        let k2 = self.k2();
        self.w
            .iter()
            .zip(&k2)
            .map(|(c, k2)| c.norm_sqr() * weight(*k2))
            .sum::<f64>()
            / n2
    }

    /// Mean kinetic energy `0.5 <|u|^2>`.
    pub fn energy(&self) -> f64 {
        0.5 * self.mode_sum(|k2| if k2 > 0.0 { 1.0 / k2 } else { 0.0 })
    }

    /// Mean enstrophy `0.5 <w^2>`.
    pub fn enstrophy(&self) -> f64 {
        0.5 * self.mode_sum(|_| 1.0)
    }

    /// Mean viscous dissipation rate `nu <w^2>`.
    pub fn dissipation(&self) -> f64 {
        2.0 * self.nu * self.enstrophy()
    }

    /// Mean power of the forcing `<u sin(n y)>`.
    pub fn energy_input(&mut self) -> f64 {
        let Some(n) = self.forcing_n else { return 0.0 };
        let (u, _) = self.velocity();
        let g = *u.grid();
        let dy = g.dy();
        let s: f64 = u
            .values()
            .chunks(g.nx)
            .enumerate()
            .map(|(iy, row)| (n as f64 * iy as f64 * dy).sin() * row.iter().sum::<f64>())
            .sum();
        s / g.len() as f64
    }

    /// Advective CFL number `max(|u|, |v|) dt / dx`.
    pub fn cfl(&mut self) -> f64 {
        let (u, v) = self.velocity();
        let dx = u.grid().dx().min(u.grid().dy());
        let m = u.values().iter().chain(v.values()).fold(0.0f64, |m, x| m.max(x.abs()));
        m * self.dt / dx
    }

    /// One integrating-factor RK4 step.
    pub fn step(&mut self) {
        let h = self.dt;
        let w = std::mem::take(&mut self.w);
        let eh = self.e_half.clone();
        let ef = self.e_full.clone();

        let k1 = self.rhs(&w);
        let a: Vec<Complex64> = (0..w.len()).map(|i| eh[i] * (w[i] + 0.5 * h * k1[i])).collect();
        let k2 = self.rhs(&a);
        let b: Vec<Complex64> = (0..w.len()).map(|i| eh[i] * w[i] + 0.5 * h * k2[i]).collect();
        let k3 = self.rhs(&b);
        let c: Vec<Complex64> = (0..w.len()).map(|i| ef[i] * w[i] + h * eh[i] * k3[i]).collect();
        let k4 = self.rhs(&c);
        self.w = (0..w.len())
            .map(|i| ef[i] * w[i] + h / 6.0 * (ef[i] * k1[i] + 2.0 * eh[i] * (k2[i] + k3[i]) + k4[i]))
            .collect();
        self.steps += 1;
        self.time = self.steps as f64 * h;
    }

    /// Advances `n` steps, checking the state every 100 steps and at the end.
    pub fn advance(&mut self, n: usize) -> Result<()> {
        for i in 0..n {
            self.step();
            if (i + 1) % 100 == 0 || i + 1 == n {
                self.check()?;
            }
        }
        Ok(())
    }

    fn check(&mut self) -> Result<()> {
        let step = self.steps;
        if self.w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Diverged { step: step as usize });
        }
        let cfl = self.cfl();
        if !(cfl < 0.5) {
            return Err(Error::Cfl {
                step: step as usize,
                cfl,
            });
        }
        Ok(())
    }
}

/// Runs one forced trajectory from a small random initial vorticity and
/// returns the snapshots taken after spin-up.
pub fn simulate_kolmogorov(config: &KolmogorovConfig) -> Result<Vec<Field>> {
    config.validate()?;
    let mut solver = VorticitySolver::new(config.grid, 1.0 / config.re, Some(config.n_forcing), config.dt)?;
    let kernel = KernelSpec::new(2.5, 0.5, 0.01, 0.0)?;
    let w0 = build_sampler(kernel, config.grid, derive_seed(config.seed, "kolmogorov-init"))?.sample_at(0);
    solver.set_vorticity(&w0)?;
    solver.check()?;
    solver.advance(config.spinup_steps())?;
    let every = config.steps_per_snapshot();
    let mut out = Vec::with_capacity(config.n_snapshots);
    for _ in 0..config.n_snapshots {
        solver.advance(every)?;
        out.push(solver.vorticity());
    }
    Ok(out)
}

/// Independent trajectories in parallel, concatenated in input order.
pub fn simulate_trajectories(configs: &[KolmogorovConfig]) -> Result<Vec<Field>> {
    let runs: Vec<Vec<Field>> = configs.par_iter().map(simulate_kolmogorov).collect::<Result<_>>()?;
    Ok(runs.into_iter().flatten().collect())
}

/// Mean kinetic energy of a vorticity field on the 2pi torus.
pub fn kinetic_energy(w: &Field) -> Result<f64> {
    let s = crate::tensorgrid::forward_transform(w)?;
    let g = *w.grid();
    let n2 = (g.len() as f64).powi(2);
    let (kx, ky) = crate::tensorgrid::wavenumbers(&g);
    let mut e = 0.0;
    for (iy, ky) in ky.iter().enumerate() {
        for (jx, kx) in kx.iter().enumerate().take(g.half_nx()) {
            let k2 = kx * kx + ky * ky;
            if k2 > 0.0 {
                e += s.column_weight(jx) * s.at(iy, jx).norm_sqr() / k2;
            }
        }
    }
    Ok(0.5 * e / n2)
}

/// Lag-one autocorrelation of the kinetic-energy series of consecutive
/// snapshots.
pub fn energy_autocorrelation(snapshots: &[Field]) -> Result<f64> {
    if snapshots.len() < 3 {
        return Err(Error::InvalidArgument("need at least 3 snapshots".into()));
    }
    let e: Vec<f64> = snapshots.iter().map(kinetic_energy).collect::<Result<_>>()?;
    let m = e.iter().sum::<f64>() / e.len() as f64;
    let var: f64 = e.iter().map(|x| (x - m).powi(2)).sum();
    let cov: f64 = e.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    Ok(cov / var)
}

/// Two-component mean shift applied to GRF draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture {
    /// probability of the first component
    pub weight: f64,
    pub shift_a: f64,
    pub shift_b: f64,
}

/// `n` i.i.d. GRF draws, optionally shifted by a per-sample constant drawn
/// from `mixture`.
pub fn make_grf_dataset(
    kernel: KernelSpec,
    grid: GridSpec,
    n: usize,
    seed: u64,
    mixture: Option<Mixture>,
) -> Result<Vec<Field>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    if let Some(m) = mixture {
        if !(0.0..=1.0).contains(&m.weight) || !m.shift_a.is_finite() || !m.shift_b.is_finite() {
            return Err(Error::InvalidArgument("invalid mixture".into()));
        }
    }
    let sampler = build_sampler(kernel, grid, seed)?;
    let mut pick = crate::rng::substream(seed, "mixture", 0);
    (0..n as u64)
        .map(|i| {
            let mut f = sampler.sample_at(i);
            if let Some(m) = mixture {
                let u: f64 = rand::Rng::random(&mut pick);
                let c = if u < m.weight { m.shift_a } else { m.shift_b };
                f.values_mut().iter_mut().for_each(|v| *v += c);
            }
            Ok(f)
        })
        .collect()
}
