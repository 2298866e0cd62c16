//! Time-conditioned Fourier neural operator with hand-written reverse mode.
//!
//! Input channels are the state `f`, the time `t` broadcast over the grid, and
//! the normalized node coordinates `x/lx`, `y/ly`. The network is
//!
//! ```text
//! lift:   affine(4 -> lift) -> act -> affine(lift -> width)
//! layer:  h <- act(K h + W h + b)       (no act after the last layer)
//! proj:   affine(width -> proj) -> act -> affine(proj -> 1)
//! ```
//!
//! where `K` multiplies the lowest `modes x modes` Fourier coefficients (both
//! signs of `ky`, non-negative `kx`) by learned complex channel-mixing matrices
//! and drops every other mode. Parameters do not depend on the grid, so the
//! same operator evaluates on any grid with at least `2 * modes` points per
//! axis.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::probpaths::PathSample;
use crate::tensorgrid::{irfft2_cols, rfft2_cols, Field, GridSpec};

pub const INPUT_CHANNELS: usize = 4;

/// Samples per gradient chunk. Chunks are reduced in index order, so batch
/// gradients do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact `z * Phi(z)`.
    Gelu,
    /// Linear mode, used to test the operator's spectral behaviour.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FnoConfig {
    pub n_layers: usize,
    pub modes: usize,
    pub width: usize,
    pub lift_dim: usize,
    pub proj_dim: usize,
    pub activation: Activation,
}

impl FnoConfig {
    /// 4 layers, 8 modes, width 32, lift/projection 64.
    pub fn desk() -> Self {
        Self {
            n_layers: 4,
            modes: 8,
            width: 32,
            lift_dim: 64,
            proj_dim: 64,
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidArgument("operator needs at least one layer".into()));
        }
        if self.modes == 0 || self.width == 0 || self.lift_dim == 0 || self.proj_dim == 0 {
            return Err(Error::InvalidArgument(
                "modes, width, lift and projection sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Rejects grids too coarse to hold the retained modes.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if 2 * self.modes > grid.nx.min(grid.ny) {
            let need = 2 * self.modes;
            return Err(Error::InvalidArgument(format!(
                "{} modes need a grid of at least {need}x{need}, got {}x{}",
                self.modes, grid.nx, grid.ny
            )));
        }
        Ok(())
    }

    fn spectral_len(&self) -> usize {
        2 * self.width * self.width * 2 * self.modes * self.modes
    }
}

/// Closed-form parameter count (spectral weights count real and imaginary
/// parts separately).
pub fn count_params(config: &FnoConfig) -> Result<usize> {
    config.validate()?;
    Ok(layout(config).iter().map(|t| t.len()).sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors in storage order.
pub fn layout(c: &FnoConfig) -> Vec<TensorInfo> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        out.push(TensorInfo { name, offset, shape });
        offset += len;
    };
    push("lift.0.weight".into(), vec![c.lift_dim, INPUT_CHANNELS]);
    push("lift.0.bias".into(), vec![c.lift_dim]);
    push("lift.1.weight".into(), vec![c.width, c.lift_dim]);
    push("lift.1.bias".into(), vec![c.width]);
    for l in 0..c.n_layers {
        // [in][out][ky row][kx][re, im]
        push(
            format!("layer.{l}.spectral"),
            vec![c.width, c.width, 2 * c.modes, c.modes, 2],
        );
        push(format!("layer.{l}.weight"), vec![c.width, c.width]);
        push(format!("layer.{l}.bias"), vec![c.width]);
    }
    push("proj.0.weight".into(), vec![c.proj_dim, c.width]);
    push("proj.0.bias".into(), vec![c.proj_dim]);
    push("proj.1.weight".into(), vec![1, c.proj_dim]);
    push("proj.1.bias".into(), vec![1]);
    out
}

/// Offsets of every tensor, resolved once.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    lift0_w: usize,
    lift0_b: usize,
    lift1_w: usize,
    lift1_b: usize,
    layers: usize,
    layer_stride: usize,
    proj0_w: usize,
    proj0_b: usize,
    proj1_w: usize,
    proj1_b: usize,
}

impl Offsets {
    fn new(c: &FnoConfig) -> Self {
        let lift0_w = 0;
        let lift0_b = lift0_w + c.lift_dim * INPUT_CHANNELS;
        let lift1_w = lift0_b + c.lift_dim;
        let lift1_b = lift1_w + c.width * c.lift_dim;
        let layers = lift1_b + c.width;
        let layer_stride = c.spectral_len() + c.width * c.width + c.width;
        let proj0_w = layers + c.n_layers * layer_stride;
        let proj0_b = proj0_w + c.proj_dim * c.width;
        let proj1_w = proj0_b + c.proj_dim;
        let proj1_b = proj1_w + c.proj_dim;
        Self {
            lift0_w,
            lift0_b,
            lift1_w,
            lift1_b,
            layers,
            layer_stride,
            proj0_w,
            proj0_b,
            proj1_w,
            proj1_b,
        }
    }

    fn spectral(&self, l: usize) -> usize {
        self.layers + l * self.layer_stride
    }

    fn bypass_w(&self, l: usize, c: &FnoConfig) -> usize {
        self.spectral(l) + c.spectral_len()
    }

    fn bypass_b(&self, l: usize, c: &FnoConfig) -> usize {
        self.bypass_w(l, c) + c.width * c.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams {
    config: FnoConfig,
    values: Vec<f64>,
}

impl OperatorParams {
    pub fn zeros(config: FnoConfig) -> Result<Self> {
        let n = count_params(&config)?;
        Ok(Self {
            config,
            values: vec![0.0; n],
        })
    }

    /// Spectral weights are complex Gaussian with scale `1/(width*modes)`;
    /// pointwise weights and biases are uniform in `+-1/sqrt(fan_in)`.
    pub fn init(config: FnoConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in layout(&config) {
            let slice = &mut p.values[t.offset..t.offset + t.len()];
            if t.name.ends_with("spectral") {
                let s = FRAC_1_SQRT_2 / (config.width * config.modes) as f64;
                for v in slice.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = s * z;
                }
            } else {
                let fan_in = if t.shape.len() == 2 {
                    t.shape[1]
                } else {
                    // a bias shares the fan-in of the weight stored before it
                    fan_in_for_bias(&config, &t.name)
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in slice.iter_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(p)
    }

    pub fn from_values(config: FnoConfig, values: Vec<f64>) -> Result<Self> {
        let n = count_params(&config)?;
        if values.len() != n {
            return Err(Error::InvalidArgument(format!(
                "expected {n} parameters, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { config, values })
    }

    pub fn config(&self) -> &FnoConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        layout(&self.config)
            .into_iter()
            .find(|t| t.name == name)
            .map(|t| &self.values[t.offset..t.offset + t.len()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        layout(&self.config)
            .into_iter()
            .find(|t| t.name == name)
            .map(move |t| &mut self.values[t.offset..t.offset + t.len()])
    }

    /// Sets the final affine map to zero, so the operator outputs zero.
    pub fn zero_output(&mut self) {
        for name in ["proj.1.weight", "proj.1.bias"] {
            self.tensor_mut(name).unwrap().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Same weights, different activation.
    pub fn with_activation(&self, activation: Activation) -> Self {
        let mut p = self.clone();
        p.config.activation = activation;
        p
    }

    pub fn forward(&self, t: f64, f: &Field) -> Result<Field> {
        let grid = *f.grid();
        self.config.check_grid(&grid)?;
        let (out, _) = self.run(t, f, false)?;
        Ok(Field::from_raw(grid, out))
    }

    /// Mean squared Hilbert-norm residual over the batch and its exact
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[PathSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let grid = *batch[0].f_t.grid();
        self.config.check_grid(&grid)?;
        for s in batch {
            grid.ensure_same(s.f_t.grid())?;
            grid.ensure_same(s.v_target.grid())?;
        }
        let b = batch.len() as f64;
        let w = grid.cell_area();
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.values.len()];
                let mut loss = 0.0;
                for s in chunk {
                    let (out, cache) = self.run(s.t, &s.f_t, true)?;
                    let cache = cache.expect("cache requested");
                    let mut g_out = vec![0.0; out.len()];
                    let mut sq = 0.0;
                    for ((g, o), v) in g_out.iter_mut().zip(&out).zip(s.v_target.values()) {
                        let r = o - v;
                        sq += r * r;
                        *g = 2.0 * w * r / b;
                    }
                    loss += w * sq / b;
                    self.backward(&cache, &g_out, &mut grad, false);
                }
                Ok((loss, grad))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.values.len()];
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteActivation { layer: "loss".into() });
        }
        Ok((loss, grad))
    }

    /// Vector-Jacobian product: given `d(loss)/d(output)` at every node,
    /// returns the gradient with respect to the parameters and the input
    /// field values.
    pub fn vjp(&self, t: f64, f: &Field, cotangent: &Field) -> Result<(Vec<f64>, Field)> {
        let grid = *f.grid();
        grid.ensure_same(cotangent.grid())?;
        self.config.check_grid(&grid)?;
        let (_, cache) = self.run(t, f, true)?;
        let mut grad = vec![0.0; self.values.len()];
        let g_in = self
            .backward(&cache.unwrap(), cotangent.values(), &mut grad, true)
            .unwrap();
        Ok((grad, Field::from_raw(grid, g_in)))
    }

    fn run(&self, t: f64, f: &Field, keep: bool) -> Result<(Vec<f64>, Option<Cache>)> {
        let c = &self.config;
        let o = Offsets::new(c);
        let p = &self.values;
        let g = *f.grid();
        let n = g.len();

        let mut x0 = vec![0.0; INPUT_CHANNELS * n];
        x0[..n].copy_from_slice(f.values());
        x0[n..2 * n].iter_mut().for_each(|v| *v = t);
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                x0[2 * n + iy * g.nx + ix] = ix as f64 / g.nx as f64;
                x0[3 * n + iy * g.nx + ix] = iy as f64 / g.ny as f64;
            }
        }

        let mut z = affine(&p[o.lift0_w..], &p[o.lift0_b..], c.lift_dim, INPUT_CHANNELS, &x0, n);
        let lift_d = activate(c.activation, &mut z, keep);
        let lift_a = z;
        let mut h = affine(&p[o.lift1_w..], &p[o.lift1_b..], c.width, c.lift_dim, &lift_a, n);
        check_finite(&h, "lift")?;

        let mut layers = Vec::with_capacity(c.n_layers);
        for l in 0..c.n_layers {
            let spec = &p[o.spectral(l)..o.spectral(l) + c.spectral_len()];
            let (mut z, xhat) = spectral_forward(spec, c, &h, g.nx, g.ny);
            add_affine(
                &p[o.bypass_w(l, c)..],
                &p[o.bypass_b(l, c)..],
                c.width,
                c.width,
                &h,
                n,
                &mut z,
            );
            let d = if l + 1 < c.n_layers {
                activate(c.activation, &mut z, keep)
            } else {
                None
            };
            check_finite(&z, &format!("layer {l}"))?;
            let input = std::mem::replace(&mut h, z);
            if keep {
                layers.push(LayerCache { input, xhat, d });
            }
        }

        let mut q = affine(&p[o.proj0_w..], &p[o.proj0_b..], c.proj_dim, c.width, &h, n);
        let proj_d = activate(c.activation, &mut q, keep);
        let out = affine(&p[o.proj1_w..], &p[o.proj1_b..], 1, c.proj_dim, &q, n);
        check_finite(&out, "projection")?;

        let cache = keep.then_some(Cache {
            nx: g.nx,
            ny: g.ny,
            x0,
            lift_d,
            lift_a,
            layers,
            h_last: h,
            proj_d,
            proj_a: q,
        });
        Ok((out, cache))
    }

    /// Accumulates parameter gradients into `grad`; optionally returns the
    /// gradient with respect to the input field.
    fn backward(&self, k: &Cache, g_out: &[f64], grad: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let c = &self.config;
        let o = Offsets::new(c);
        let p = &self.values;
        let n = k.nx * k.ny;

        // proj.1
        let g_a = affine_backward(p, grad, o.proj1_w, o.proj1_b, 1, c.proj_dim, &k.proj_a, g_out, n, true).unwrap();
        let g_q = apply_derivative(g_a, &k.proj_d);
        let mut g_h = affine_backward(
            p, grad, o.proj0_w, o.proj0_b, c.proj_dim, c.width, &k.h_last, &g_q, n, true,
        )
        .unwrap();

        for l in (0..c.n_layers).rev() {
            let lc = &k.layers[l];
            let g_z = apply_derivative(g_h, &lc.d);
            let mut g_in = affine_backward(
                p,
                grad,
                o.bypass_w(l, c),
                o.bypass_b(l, c),
                c.width,
                c.width,
                &lc.input,
                &g_z,
                n,
                true,
            )
            .unwrap();
            let s = o.spectral(l);
            let len = c.spectral_len();
            spectral_backward(
                &p[s..s + len],
                &mut grad[s..s + len],
                c,
                &lc.xhat,
                &g_z,
                k.nx,
                k.ny,
                &mut g_in,
            );
            g_h = g_in;
        }

        let g_a = affine_backward(
            p, grad, o.lift1_w, o.lift1_b, c.width, c.lift_dim, &k.lift_a, &g_h, n, true,
        )
        .unwrap();
        let g_z = apply_derivative(g_a, &k.lift_d);
        let g_x0 = affine_backward(
            p,
            grad,
            o.lift0_w,
            o.lift0_b,
            c.lift_dim,
            INPUT_CHANNELS,
            &k.x0,
            &g_z,
            n,
            want_input,
        );
        g_x0.map(|mut v| {
            v.truncate(n);
            v
        })
    }
}

fn fan_in_for_bias(c: &FnoConfig, name: &str) -> usize {
    match name {
        "lift.0.bias" => INPUT_CHANNELS,
        "lift.1.bias" => c.lift_dim,
        "proj.0.bias" => c.width,
        "proj.1.bias" => c.proj_dim,
        _ => c.width,
    }
}

struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<Complex64>,
    d: Option<Vec<f64>>,
}

struct Cache {
    nx: usize,
    ny: usize,
    x0: Vec<f64>,
    lift_d: Option<Vec<f64>>,
    lift_a: Vec<f64>,
    layers: Vec<LayerCache>,
    h_last: Vec<f64>,
    proj_d: Option<Vec<f64>>,
    proj_a: Vec<f64>,
}

fn check_finite(v: &[f64], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation {
            layer: layer.to_string(),
        })
    }
}

/// Applies the activation in place; with `keep`, returns its derivative at
/// the pre-activation values. `None` means the identity.
fn activate(act: Activation, z: &mut [f64], keep: bool) -> Option<Vec<f64>> {
    match act {
        Activation::Identity => None,
        Activation::Gelu => {
            let table = normal_cdf_table();
            if keep {
                let mut d = vec![0.0; z.len()];
                for (zi, di) in z.iter_mut().zip(d.iter_mut()) {
                    let x = *zi;
                    let (cdf, pdf) = table.eval(x);
                    *di = cdf + x * pdf;
                    *zi = x * cdf;
                }
                Some(d)
            } else {
                for zi in z.iter_mut() {
                    *zi *= table.eval(*zi).0;
                }
                None
            }
        }
    }
}

/// Standard normal CDF as a cubic Hermite spline through exact values and
/// slopes at spacing 1/256 on [-8, 8] (max error about 4e-13), stored as
/// per-interval polynomial coefficients. `eval` returns the spline and its
/// own derivative, so GeLU gradients are exact for the function actually
/// computed. Calling libm's erf per activation dominated the forward pass.
struct CdfTable {
    coeffs: Vec<[f64; 4]>,
}

const CDF_LO: f64 = -8.0;
const CDF_STEPS_PER_UNIT: f64 = 256.0;

fn normal_cdf_table() -> &'static CdfTable {
    static TABLE: std::sync::OnceLock<CdfTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let n = (2.0 * -CDF_LO * CDF_STEPS_PER_UNIT) as usize;
        let h = 1.0 / CDF_STEPS_PER_UNIT;
        let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
        let knot = |i: usize| {
            let x = CDF_LO + i as f64 * h;
            (
                0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)),
                h * inv_sqrt_2pi * (-0.5 * x * x).exp(),
            )
        };
        let coeffs = (0..n)
            .map(|i| {
                let (p0, m0) = knot(i);
                let (p1, m1) = knot(i + 1);
                // Hermite basis expanded in powers of t
                [p0, m0, 3.0 * (p1 - p0) - 2.0 * m0 - m1, 2.0 * (p0 - p1) + m0 + m1]
            })
            .collect();
        CdfTable { coeffs }
    })
}

impl CdfTable {
    #[inline]
    fn eval(&self, x: f64) -> (f64, f64) {
        let u = (x - CDF_LO) * CDF_STEPS_PER_UNIT;
        if !(u > 0.0) {
            return (0.0, 0.0);
        }
        // via i32: a single conversion instruction; saturates far past the table
        let i = u as i32 as usize;
        let Some(&[a, b, c, d]) = self.coeffs.get(i) else {
            return (1.0, 0.0);
        };
        let t = u - i as f64;
        let v = a + t * (b + t * (c + t * d));
        let dv = (b + t * (2.0 * c + t * 3.0 * d)) * CDF_STEPS_PER_UNIT;
        (v, dv)
    }
}

fn apply_derivative(mut g: Vec<f64>, d: &Option<Vec<f64>>) -> Vec<f64> {
    if let Some(d) = d {
        g.iter_mut().zip(d).for_each(|(a, b)| *a *= b);
    }
    g
}

/// `C (m x n) = A (m x k) B (k x n) + beta C`, with optional transposes of
/// the row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements checked by the debug assertion, all inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Pointwise `out[o][p] = sum_i W[o][i] x[i][p] + b[o]`.
fn affine(w: &[f64], b: &[f64], out_ch: usize, in_ch: usize, x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_ch * n];
    add_affine(w, b, out_ch, in_ch, x, n, &mut out);
    out
}

fn add_affine(w: &[f64], b: &[f64], out_ch: usize, in_ch: usize, x: &[f64], n: usize, out: &mut [f64]) {
    for (row, bias) in out.chunks_mut(n).zip(&b[..out_ch]) {
        row.iter_mut().for_each(|v| *v += bias);
    }
    gemm(out_ch, in_ch, n, &w[..out_ch * in_ch], false, x, false, 1.0, out);
}

#[allow(clippy::too_many_arguments)]
fn affine_backward(
    p: &[f64],
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
    out_ch: usize,
    in_ch: usize,
    x: &[f64],
    g: &[f64],
    n: usize,
    want_input: bool,
) -> Option<Vec<f64>> {
    gemm(
        out_ch,
        n,
        in_ch,
        g,
        false,
        x,
        true,
        1.0,
        &mut grad[w_off..w_off + out_ch * in_ch],
    );
    for (row, gb) in g.chunks(n).zip(&mut grad[b_off..b_off + out_ch]) {
        *gb += row.iter().sum::<f64>();
    }
    want_input.then(|| {
        let mut gx = vec![0.0; in_ch * n];
        gemm(
            in_ch,
            out_ch,
            n,
            &p[w_off..w_off + out_ch * in_ch],
            true,
            g,
            false,
            0.0,
            &mut gx,
        );
        gx
    })
}

/// Half-spectrum row index of retained row `r` (`ky = r` for `r < m`, else
/// `ky = r - 2m`).
fn row_index(r: usize, m: usize, ny: usize) -> usize {
    if r < m {
        r
    } else {
        ny + r - 2 * m
    }
}

fn as_complex(w: &[f64]) -> &[Complex64] {
    assert!(w.len().is_multiple_of(2));
    // SAFETY: Complex<f64> is repr(C) with fields (re, im), so it has the
    // size and alignment of [f64; 2]; the length is even.
    unsafe { std::slice::from_raw_parts(w.as_ptr() as *const Complex64, w.len() / 2) }
}

fn as_complex_mut(w: &mut [f64]) -> &mut [Complex64] {
    assert!(w.len().is_multiple_of(2));
    // SAFETY: as in `as_complex`; the borrow is unique.
    unsafe { std::slice::from_raw_parts_mut(w.as_mut_ptr() as *mut Complex64, w.len() / 2) }
}

/// Returns the spectral convolution output and the retained input
/// coefficients `[in][r][kx]`.
fn spectral_forward(w: &[f64], c: &FnoConfig, h: &[f64], nx: usize, ny: usize) -> (Vec<f64>, Vec<Complex64>) {
    let (m, width) = (c.modes, c.width);
    let n = nx * ny;
    let block = 2 * m * m;
    let mut xhat = vec![Complex64::new(0.0, 0.0); width * block];
    for i in 0..width {
        let full = rfft2_cols(&h[i * n..(i + 1) * n], nx, ny, m);
        for r in 0..2 * m {
            let iy = row_index(r, m, ny);
            xhat[i * block + r * m..i * block + (r + 1) * m].copy_from_slice(&full[iy * m..(iy + 1) * m]);
        }
    }
    let mut out = vec![0.0; width * n];
    let mut y = vec![Complex64::new(0.0, 0.0); block];
    let mut full = vec![Complex64::new(0.0, 0.0); ny * m];
    let scale = 1.0 / n as f64;
    let w = as_complex(w);
    for o in 0..width {
        y.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for i in 0..width {
            let base = (i * width + o) * block;
            let x = &xhat[i * block..(i + 1) * block];
            for ((yq, xq), wq) in y.iter_mut().zip(x).zip(&w[base..base + block]) {
                *yq += wq * xq;
            }
        }
        for r in 0..2 * m {
            let iy = row_index(r, m, ny);
            full[iy * m..(iy + 1) * m].copy_from_slice(&y[r * m..(r + 1) * m]);
        }
        let s = irfft2_cols(&full, nx, ny, m, scale);
        out[o * n..(o + 1) * n].copy_from_slice(&s);
    }
    (out, xhat)
}

#[allow(clippy::too_many_arguments)]
fn spectral_backward(
    w: &[f64],
    gw: &mut [f64],
    c: &FnoConfig,
    xhat: &[Complex64],
    g_out: &[f64],
    nx: usize,
    ny: usize,
    g_in: &mut [f64],
) {
    let (m, width) = (c.modes, c.width);
    let n = nx * ny;
    let block = 2 * m * m;
    let inv_n = 1.0 / n as f64;
    // gradient with respect to the retained output coefficients
    let mut gy = vec![Complex64::new(0.0, 0.0); width * block];
    for o in 0..width {
        let full = rfft2_cols(&g_out[o * n..(o + 1) * n], nx, ny, m);
        for r in 0..2 * m {
            let iy = row_index(r, m, ny);
            for kx in 0..m {
                let ck = if kx == 0 { 1.0 } else { 2.0 };
                gy[o * block + r * m + kx] = full[iy * m + kx] * (ck * inv_n);
            }
        }
    }
    let mut gx = vec![Complex64::new(0.0, 0.0); block];
    let mut full = vec![Complex64::new(0.0, 0.0); ny * m];
    let w = as_complex(w);
    let gw = as_complex_mut(gw);
    for i in 0..width {
        gx.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let x = &xhat[i * block..(i + 1) * block];
        for o in 0..width {
            let base = (i * width + o) * block;
            let g = &gy[o * block..(o + 1) * block];
            let gwb = &mut gw[base..base + block];
            let wb = &w[base..base + block];
            for q in 0..block {
                gwb[q] += g[q] * x[q].conj();
                gx[q] += g[q] * wb[q].conj();
            }
        }
        for r in 0..2 * m {
            let iy = row_index(r, m, ny);
            for kx in 0..m {
                let ck = if kx == 0 { 1.0 } else { 2.0 };
                full[iy * m + kx] = gx[r * m + kx] / ck;
            }
        }
        let gh = irfft2_cols(&full, nx, ny, m, 1.0);
        g_in[i * n..(i + 1) * n].iter_mut().zip(&gh).for_each(|(a, b)| *a += b);
    }
}
