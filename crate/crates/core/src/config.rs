//! Flat `key = value` run configuration.
//!
//! One pair per line, `#` starts a comment. Every key except `grid.nx` and
//! `grid.ny` has a default; unknown or repeated keys are errors.
//! [`RunConfig::dump`] writes every effective value and parses back to the
//! same configuration.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Display;
use std::str::FromStr;

use crate::datagen::KolmogorovConfig;
use crate::error::{Error, Result};
use crate::grf::KernelSpec;
use crate::neuralop::{Activation, FnoConfig};
use crate::probpaths::PathKind;
use crate::sampler::Scheme;
use crate::tensorgrid::GridSpec;
use crate::trainer::{CouplingKind, TimeSampling, TrainConfig};

/// Every accepted key, in dump order.
pub const KEYS: &[&str] = &[
    "grid.nx",
    "grid.ny",
    "grid.lx",
    "grid.ly",
    "kernel.nu",
    "kernel.length_scale",
    "kernel.variance",
    "kernel.mean",
    "fno.layers",
    "fno.modes",
    "fno.width",
    "fno.lift",
    "fno.proj",
    "train.batch",
    "train.epochs",
    "train.lr",
    "train.warmup_frac",
    "train.min_lr",
    "train.coupling",
    "train.sigma_min",
    "train.seed",
    "train.time_sampling",
    "train.checkpoint_every",
    "train.grad_clip",
    "sample.scheme",
    "sample.steps",
    "sample.count",
    "datagen.source",
    "datagen.re",
    "datagen.n_forcing",
    "datagen.dt",
    "datagen.spinup",
    "datagen.interval",
    "datagen.snapshots",
    "datagen.mixture_shift",
    "oracle.dim",
    "oracle.shift",
    "oracle.trials",
    "oracle.batches",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Kolmogorov,
    Grf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub scheme: Scheme,
    pub steps: usize,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatagenConfig {
    pub source: DataSource,
    pub re: f64,
    pub n_forcing: u32,
    pub dt: f64,
    pub spinup: f64,
    pub interval: f64,
    pub snapshots: usize,
    /// GRF source only: shifts draws by `+-mixture_shift` with equal
    /// weights; 0 disables.
    pub mixture_shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub dim: usize,
    pub shift: f64,
    pub trials: usize,
    pub batches: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub kernel: KernelSpec,
    pub fno: FnoConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub datagen: DatagenConfig,
    pub oracle: OracleConfig,
}

struct Pairs {
    map: HashMap<String, String>,
}

impl Pairs {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
        }
    }

    fn required<T: FromStr>(&mut self, key: &str) -> Result<T> {
        if !self.map.contains_key(key) {
            return Err(Error::Config(format!("missing required key {key}")));
        }
        let v = self.map.remove(key).unwrap();
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Result<T> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => options
                .iter()
                .find(|(name, _)| *name == v)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    Error::Config(format!("{key} must be one of {}, got {v:?}", names.join("|")))
                }),
        }
    }
}

const COUPLINGS: &[(&str, CouplingKind)] = &[("ot", CouplingKind::Ot), ("independent", CouplingKind::Independent)];
const TIMES: &[(&str, TimeSampling)] = &[("batch", TimeSampling::PerBatch), ("sample", TimeSampling::PerSample)];
const SCHEMES: &[(&str, Scheme)] = &[("euler", Scheme::Euler), ("rk4", Scheme::Rk4)];
const SOURCES: &[(&str, DataSource)] = &[("kolmogorov", DataSource::Kolmogorov), ("grf", DataSource::Grf)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: T) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map(|(n, _)| *n).unwrap()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k}", no + 1)));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", no + 1)));
            }
        }
        let mut p = Pairs { map };

        let nx = p.required("grid.nx")?;
        let ny = p.required("grid.ny")?;
        let grid = GridSpec::new(nx, ny, p.get("grid.lx", 2.0 * PI)?, p.get("grid.ly", 2.0 * PI)?)?;

        let dk = KernelSpec::default_for(&grid);
        let kernel = KernelSpec::new(
            p.get("kernel.nu", dk.nu)?,
            p.get("kernel.length_scale", dk.length_scale)?,
            p.get("kernel.variance", dk.variance)?,
            p.get("kernel.mean", dk.mean)?,
        )?;

        let df = FnoConfig::desk();
        let fno = FnoConfig {
            n_layers: p.get("fno.layers", df.n_layers)?,
            modes: p.get("fno.modes", df.modes)?,
            width: p.get("fno.width", df.width)?,
            lift_dim: p.get("fno.lift", df.lift_dim)?,
            proj_dim: p.get("fno.proj", df.proj_dim)?,
            activation: Activation::Gelu,
        };
        fno.validate()?;

        let dt = TrainConfig::default();
        let sigma_min: f64 = p.get("train.sigma_min", 0.0)?;
        let grad_clip: f64 = p.get("train.grad_clip", 0.0)?;
        let train = TrainConfig {
            batch_size: p.get("train.batch", dt.batch_size)?,
            epochs: p.get("train.epochs", dt.epochs)?,
            base_lr: p.get("train.lr", dt.base_lr)?,
            warmup_frac: p.get("train.warmup_frac", dt.warmup_frac)?,
            min_lr: p.get("train.min_lr", dt.min_lr)?,
            coupling: p.choice("train.coupling", dt.coupling, COUPLINGS)?,
            path: if sigma_min > 0.0 {
                PathKind::FfmGaussian { sigma_min }
            } else {
                PathKind::OtDisplacement
            },
            seed: p.get("train.seed", dt.seed)?,
            time_sampling: p.choice("train.time_sampling", dt.time_sampling, TIMES)?,
            checkpoint_every: p.get("train.checkpoint_every", dt.checkpoint_every)?,
            grad_clip: (grad_clip > 0.0).then_some(grad_clip),
            ..dt
        };
        if sigma_min < 0.0 {
            return Err(Error::Config("train.sigma_min must be >= 0".into()));
        }
        train.validate()?;

        let sample = SampleConfig {
            scheme: p.choice("sample.scheme", Scheme::Euler, SCHEMES)?,
            steps: p.get("sample.steps", 5)?,
            count: p.get("sample.count", 100)?,
        };
        if sample.steps == 0 || sample.count == 0 {
            return Err(Error::Config("sample.steps and sample.count must be positive".into()));
        }

        let dk = KolmogorovConfig::default();
        let datagen = DatagenConfig {
            source: p.choice("datagen.source", DataSource::Kolmogorov, SOURCES)?,
            re: p.get("datagen.re", dk.re)?,
            n_forcing: p.get("datagen.n_forcing", dk.n_forcing)?,
            dt: p.get("datagen.dt", dk.dt)?,
            spinup: p.get("datagen.spinup", dk.spinup_time)?,
            interval: p.get("datagen.interval", dk.snapshot_interval)?,
            snapshots: p.get("datagen.snapshots", dk.n_snapshots)?,
            mixture_shift: p.get("datagen.mixture_shift", 0.0)?,
        };

        let batches: String = p.get("oracle.batches", "8,32,128,512".to_string())?;
        let batches = batches
            .split(',')
            .map(|b| b.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("invalid value {batches:?} for oracle.batches")))?;
        let oracle = OracleConfig {
            dim: p.get("oracle.dim", 2)?,
            shift: p.get("oracle.shift", 2.0)?,
            trials: p.get("oracle.trials", 20)?,
            batches,
        };
        debug_assert!(p.map.is_empty());
        Ok(Self {
            grid,
            kernel,
            fno,
            train,
            sample,
            datagen,
            oracle,
        })
    }

    /// Every effective value, one `key = value` line each.
    pub fn dump(&self) -> String {
        let sigma_min = match self.train.path {
            PathKind::OtDisplacement => 0.0,
            PathKind::FfmGaussian { sigma_min } => sigma_min,
        };
        let batches: Vec<String> = self.oracle.batches.iter().map(|b| b.to_string()).collect();
        let values: Vec<Box<dyn Display>> = vec![
            Box::new(self.grid.nx),
            Box::new(self.grid.ny),
            Box::new(self.grid.lx),
            Box::new(self.grid.ly),
            Box::new(self.kernel.nu),
            Box::new(self.kernel.length_scale),
            Box::new(self.kernel.variance),
            Box::new(self.kernel.mean),
            Box::new(self.fno.n_layers),
            Box::new(self.fno.modes),
            Box::new(self.fno.width),
            Box::new(self.fno.lift_dim),
            Box::new(self.fno.proj_dim),
            Box::new(self.train.batch_size),
            Box::new(self.train.epochs),
            Box::new(self.train.base_lr),
            Box::new(self.train.warmup_frac),
            Box::new(self.train.min_lr),
            Box::new(name_of(COUPLINGS, self.train.coupling)),
            Box::new(sigma_min),
            Box::new(self.train.seed),
            Box::new(name_of(TIMES, self.train.time_sampling)),
            Box::new(self.train.checkpoint_every),
            Box::new(self.train.grad_clip.unwrap_or(0.0)),
            Box::new(name_of(SCHEMES, self.sample.scheme)),
            Box::new(self.sample.steps),
            Box::new(self.sample.count),
            Box::new(name_of(SOURCES, self.datagen.source)),
            Box::new(self.datagen.re),
            Box::new(self.datagen.n_forcing),
            Box::new(self.datagen.dt),
            Box::new(self.datagen.spinup),
            Box::new(self.datagen.interval),
            Box::new(self.datagen.snapshots),
            Box::new(self.datagen.mixture_shift),
            Box::new(self.oracle.dim),
            Box::new(self.oracle.shift),
            Box::new(self.oracle.trials),
            Box::new(batches.join(",")),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Ordered key/value pairs for manifests.
    pub fn entries(&self) -> Vec<(String, String)> {
        self.dump()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    pub fn kolmogorov(&self, seed: u64) -> KolmogorovConfig {
        KolmogorovConfig {
            grid: self.grid,
            re: self.datagen.re,
            n_forcing: self.datagen.n_forcing,
            dt: self.datagen.dt,
            spinup_time: self.datagen.spinup,
            snapshot_interval: self.datagen.interval,
            n_snapshots: self.datagen.snapshots,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse(
            "grid.nx = 32\ngrid.ny=32 # trailing\n\n# comment\ntrain.coupling = independent\ntrain.lr=0.001",
        )
        .unwrap();
        assert_eq!(c.grid, GridSpec::torus(32).unwrap());
        assert_eq!(c.fno, FnoConfig::desk());
        assert_eq!(c.train.coupling, CouplingKind::Independent);
        assert_eq!(c.train.base_lr, 1e-3);
        assert_eq!(c.train.path, PathKind::OtDisplacement);
        assert_eq!(c.sample.steps, 5);
        assert_eq!(c.datagen.re, 40.0);
        assert_eq!(c.oracle.batches, vec![8, 32, 128, 512]);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("grid.ny = 32").unwrap_err().to_string();
        assert!(e.contains("grid.nx"), "{e}");
        let e = RunConfig::parse("grid.nx = 32\ngrid.ny = 32\ntrain.lr2 = 1")
            .unwrap_err()
            .to_string();
        assert!(e.contains("unknown key train.lr2"), "{e}");
        let e = RunConfig::parse("grid.nx = 32\ngrid.ny = 32\ntrain.batch = x")
            .unwrap_err()
            .to_string();
        assert!(e.contains("train.batch"), "{e}");
        let e = RunConfig::parse("grid.nx = 32\ngrid.ny = 32\nsample.scheme = heun")
            .unwrap_err()
            .to_string();
        assert!(e.contains("euler|rk4"), "{e}");
        assert!(RunConfig::parse("grid.nx = 32\ngrid.nx = 32\ngrid.ny = 32").is_err());
        assert!(RunConfig::parse("grid.nx 32").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let text = "grid.nx=48\ngrid.ny=32\ngrid.lx=3.3\ntrain.sigma_min=0.01\ntrain.grad_clip=2.5\nsample.scheme=rk4\ndatagen.source=grf\noracle.batches=4, 16\ntrain.lr=0.1234567890123";
        let c = RunConfig::parse(text).unwrap();
        let again = RunConfig::parse(&c.dump()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.dump(), again.dump());
        assert_eq!(c.train.path, PathKind::FfmGaussian { sigma_min: 0.01 });
        assert_eq!(c.entries().len(), KEYS.len());
    }
}
