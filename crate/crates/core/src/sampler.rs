//! Fixed-step ODE integration of a velocity field from noise draws, with
//! exact counting of model evaluations.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grf::GrfSampler;
use crate::neuralop::OperatorParams;
use crate::tensorgrid::{dist_sq, Field, GridSpec};

pub trait VelocityField: Sync {
    fn velocity(&self, t: f64, f: &Field) -> Result<Field>;

    /// Rejects grids the field cannot be evaluated on.
    fn check_grid(&self, _grid: &GridSpec) -> Result<()> {
        Ok(())
    }
}

impl VelocityField for OperatorParams {
    fn velocity(&self, t: f64, f: &Field) -> Result<Field> {
        self.forward(t, f)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        self.config().check_grid(grid)
    }
}

impl VelocityField for crate::trainer::LinearProbe {
    fn velocity(&self, t: f64, f: &Field) -> Result<Field> {
        Ok(self.eval(t, f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Rk4,
}

impl Scheme {
    pub fn evals_per_step(&self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub n_steps: usize,
    pub grid: GridSpec,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, n_steps: usize, grid: GridSpec) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("need at least one integration step".into()));
        }
        Ok(Self { scheme, n_steps, grid })
    }

    /// Model evaluations per trajectory.
    pub fn nfe(&self) -> usize {
        self.n_steps * self.scheme.evals_per_step()
    }
}

/// Counts calls to the wrapped field.
pub struct Counted<'a, V: ?Sized> {
    inner: &'a V,
    calls: AtomicUsize,
}

impl<'a, V: VelocityField + ?Sized> Counted<'a, V> {
    pub fn new(inner: &'a V) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<V: VelocityField + ?Sized> VelocityField for Counted<'_, V> {
    fn velocity(&self, t: f64, f: &Field) -> Result<Field> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(t, f)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        self.inner.check_grid(grid)
    }
}

/// Integrates from `t = 0` to `t = 1` on the uniform grid `t_k = k / N`.
pub fn integrate<V: VelocityField + ?Sized>(model: &V, spec: &IntegratorSpec, f0: Field) -> Result<Field> {
    let h = 1.0 / spec.n_steps as f64;
    let mut f = f0;
    for k in 0..spec.n_steps {
        let t = k as f64 * h;
        match spec.scheme {
            Scheme::Euler => {
                let v = model.velocity(t, &f)?;
                f.axpy(h, &v)?;
            }
            Scheme::Rk4 => {
                let k1 = model.velocity(t, &f)?;
                let k2 = model.velocity(t + 0.5 * h, &Field::lincomb(1.0, &f, 0.5 * h, &k1)?)?;
                let k3 = model.velocity(t + 0.5 * h, &Field::lincomb(1.0, &f, 0.5 * h, &k2)?)?;
                let k4 = model.velocity(t + h, &Field::lincomb(1.0, &f, h, &k3)?)?;
                f.axpy(h / 6.0, &k1)?;
                f.axpy(h / 3.0, &k2)?;
                f.axpy(h / 3.0, &k3)?;
                f.axpy(h / 6.0, &k4)?;
            }
        }
        if !f.is_finite() {
            return Err(Error::Diverged { step: k });
        }
    }
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct Samples {
    pub fields: Vec<Field>,
    /// Model evaluations per trajectory.
    pub nfe: usize,
}

/// Generates `count` fields from noise draws `start..start + count` of
/// `noise` (rebuilt on `spec.grid` if it lives on another grid).
pub fn sample<V: VelocityField + ?Sized>(
    model: &V,
    spec: &IntegratorSpec,
    noise: &GrfSampler,
    start: u64,
    count: usize,
) -> Result<Samples> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    model.check_grid(&spec.grid)?;
    let rebuilt;
    let noise = if noise.grid().same_as(&spec.grid) {
        noise
    } else {
        rebuilt = noise.rebuild_for(spec.grid)?;
        &rebuilt
    };
    let counted = Counted::new(model);
    let fields = (start..start + count as u64)
        .into_par_iter()
        .map(|i| integrate(&counted, spec, noise.sample_at(i)))
        .collect::<Result<Vec<_>>>()?;
    let nfe = spec.nfe();
    assert_eq!(counted.calls(), nfe * count, "model evaluation count drifted");
    Ok(Samples { fields, nfe })
}

/// One ensemble per budget, all from the same noise draws.
pub fn nfe_sweep<V: VelocityField + ?Sized>(
    model: &V,
    noise: &GrfSampler,
    budgets: &[(Scheme, usize)],
    grid: GridSpec,
    start: u64,
    count: usize,
) -> Result<Vec<Samples>> {
    budgets
        .iter()
        .map(|&(scheme, n)| sample(model, &IntegratorSpec::new(scheme, n, grid)?, noise, start, count))
        .collect()
}

/// `u(t, f) = c` everywhere.
pub struct ConstantVelocity(pub Field);

impl VelocityField for ConstantVelocity {
    fn velocity(&self, _t: f64, _f: &Field) -> Result<Field> {
        Ok(self.0.clone())
    }
}

/// `u(t, f) = f`.
pub struct ExponentialProbe;

impl VelocityField for ExponentialProbe {
    fn velocity(&self, _t: f64, f: &Field) -> Result<Field> {
        Ok(f.clone())
    }
}

/// The exact straight-line field of a finite set of pairs: at `(t, f)` it
/// returns `f1 - f0` of the pair whose interpolant is closest to `f`.
pub struct StraightPairs {
    pub pairs: Vec<(Field, Field)>,
}

impl VelocityField for StraightPairs {
    fn velocity(&self, t: f64, f: &Field) -> Result<Field> {
        let mut best = (f64::INFINITY, 0);
        for (i, (f0, f1)) in self.pairs.iter().enumerate() {
            let d = dist_sq(f, &Field::lincomb(1.0 - t, f0, t, f1)?)?;
            if d < best.0 {
                best = (d, i);
            }
        }
        let (f0, f1) = &self.pairs[best.1];
        f1.sub(f0)
    }
}
