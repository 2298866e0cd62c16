//! Training loop: draw noise, pair it with a data batch (optimal assignment
//! or positional), interpolate, regress the velocity, take an Adam step.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grf::GrfSampler;
use crate::neuralop::OperatorParams;
use crate::otcouple::{cost_matrix, solve_assignment};
use crate::probpaths::{interpolate, PathKind, PathSample};
use crate::rng::substream;
use crate::tensorgrid::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    /// Reorder each data batch by the optimal assignment to its noise batch.
    Ot,
    /// Pair noise and data by position.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSampling {
    /// One `t` shared by the whole batch.
    PerBatch,
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub warmup_frac: f64,
    pub min_lr: f64,
    pub warmup_floor_lr: f64,
    pub coupling: CouplingKind,
    pub path: PathKind,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Epochs between checkpoints; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub time_sampling: TimeSampling,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            base_lr: 1e-4,
            warmup_frac: 0.1,
            min_lr: 1e-6,
            warmup_floor_lr: 1e-10,
            coupling: CouplingKind::Ot,
            path: PathKind::OtDisplacement,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            time_sampling: TimeSampling::PerBatch,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.coupling == CouplingKind::Ot && self.batch_size < 2 {
            return bad("optimal-transport coupling needs batch size >= 2");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup fraction must lie in (0, 1)");
        }
        if !(self.base_lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.base_lr || self.warmup_floor_lr < 0.0 {
            return bad("need 0 <= min_lr <= base_lr and base_lr > 0");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("gradient clip must be positive");
            }
        }
        self.path.validate()
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_frac * total_steps as f64).floor() as usize
    }
}

/// Linear warmup from the floor rate to the base rate, then cosine decay to
/// the minimum rate at the last step.
pub fn lr_at(config: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warm = config.warmup_steps(total_steps);
    if step < warm {
        let frac = step as f64 / warm as f64;
        return config.warmup_floor_lr + (config.base_lr - config.warmup_floor_lr) * frac;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    config.min_lr + 0.5 * (config.base_lr - config.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, c: &AdamConfig) {
        self.step += 1;
        let b1t = 1.0 - c.beta1.powi(self.step as i32);
        let b2t = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mh = *m / b1t;
            let vh = *v / b2t;
            *p -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

/// A model the loop can optimize.
pub trait Trainable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn loss_and_grad(&self, batch: &[PathSample]) -> Result<(f64, Vec<f64>)>;
}

impl Trainable for OperatorParams {
    fn params(&self) -> &[f64] {
        self.values()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.values_mut()
    }

    fn loss_and_grad(&self, batch: &[PathSample]) -> Result<(f64, Vec<f64>)> {
        OperatorParams::loss_and_grad(self, batch)
    }
}

/// Pointwise `u(t, f) = a f + b t + c` with three scalar parameters; the
/// loss is a convex quadratic in them.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub coef: Vec<f64>,
}

impl LinearProbe {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { coef: vec![a, b, c] }
    }

    pub fn eval(&self, t: f64, f: &Field) -> Field {
        let (a, b, c) = (self.coef[0], self.coef[1], self.coef[2]);
        let v = f.values().iter().map(|x| a * x + b * t + c).collect();
        Field::new(*f.grid(), v).expect("finite coefficients")
    }
}

impl Trainable for LinearProbe {
    fn params(&self) -> &[f64] {
        &self.coef
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.coef
    }

    fn loss_and_grad(&self, batch: &[PathSample]) -> Result<(f64, Vec<f64>)> {
        let bsz = batch.len() as f64;
        let mut loss = 0.0;
        let mut g = vec![0.0; 3];
        for s in batch {
            let w = s.f_t.grid().cell_area();
            let out = self.eval(s.t, &s.f_t);
            for ((o, v), x) in out.values().iter().zip(s.v_target.values()).zip(s.f_t.values()) {
                let r = o - v;
                loss += w * r * r / bsz;
                let d = 2.0 * w * r / bsz;
                g[0] += d * x;
                g[1] += d * s.t;
                g[2] += d;
            }
        }
        Ok((loss, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub ot_cost: f64,
    pub id_cost: f64,
    pub seconds: f64,
}

pub const TRACE_HEADER: &str = "step,epoch,lr,loss,ot_cost,id_cost,seconds";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:.6}",
            self.step, self.epoch, self.lr, self.loss, self.ot_cost, self.id_cost, self.seconds
        )
    }
}

/// Pairs `noise[i]` with a data field and builds the regression batch.
/// Returns the batch, the optimal pairing cost, and the positional cost.
pub fn couple_and_interpolate(
    data: &[Field],
    noise: &[Field],
    coupling: CouplingKind,
    path: PathKind,
    times: &[f64],
) -> Result<(Vec<PathSample>, f64, f64)> {
    if data.len() != noise.len() || (times.len() != 1 && times.len() != data.len()) {
        return Err(Error::InvalidArgument("batch sizes disagree".into()));
    }
    let m = cost_matrix(noise, data)?;
    let id_cost = m.identity_cost();
    let c = solve_assignment(&m)?;
    let ot_cost = c.total_cost;
    let pairs: Vec<usize> = match coupling {
        CouplingKind::Ot => c.sigma,
        CouplingKind::Independent => (0..data.len()).collect(),
    };
    let batch = noise
        .iter()
        .zip(&pairs)
        .enumerate()
        .map(|(i, (f0, &j))| interpolate(path, f0, &data[j], times[i.min(times.len() - 1)]))
        .collect::<Result<Vec<_>>>()?;
    Ok((batch, ot_cost, id_cost))
}

/// Optimizer state plus the position in the run. Everything random is a
/// function of `(seed, step)`, so this is all a resumed run needs.
#[derive(Debug, Clone)]
pub struct Trainer<M> {
    pub model: M,
    pub adam: AdamState,
    pub step: usize,
    pub config: TrainConfig,
}

/// What happens after an epoch finishes.
pub trait TrainObserver<M> {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    /// Returns a reference to the written checkpoint (used in error
    /// messages when a later step diverges).
    fn on_checkpoint(&mut self, _trainer: &Trainer<M>, _epoch: usize) -> Result<String> {
        Ok(String::from("none"))
    }
}

/// Collects the trace in memory.
#[derive(Debug, Default)]
pub struct Recorder {
    pub trace: Vec<StepRecord>,
}

impl<M> TrainObserver<M> for Recorder {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        self.trace.push(*record);
        Ok(())
    }
}

impl<M: Trainable> Trainer<M> {
    pub fn new(model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = model.params().len();
        Ok(Self {
            model,
            adam: AdamState::new(n),
            step: 0,
            config,
        })
    }

    pub fn total_steps(&self, dataset_len: usize) -> usize {
        self.config.epochs * self.config.steps_per_epoch(dataset_len)
    }

    /// Dataset order for `epoch`.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = substream(self.config.seed, "shuffle", epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        order
    }

    /// Times for `step`: one draw, or one per sample.
    pub fn step_times(&self, step: usize, batch: usize) -> Vec<f64> {
        let mut rng = substream(self.config.seed, "time", step as u64);
        let k = match self.config.time_sampling {
            TimeSampling::PerBatch => 1,
            TimeSampling::PerSample => batch,
        };
        (0..k).map(|_| rng.random::<f64>()).collect()
    }

    /// One optimization step on a prepared data and noise batch.
    pub fn train_step(
        &mut self,
        data: &[Field],
        noise: &[Field],
        times: &[f64],
        lr: f64,
        epoch: usize,
        last_checkpoint: &str,
    ) -> Result<StepRecord> {
        let start = Instant::now();
        let (batch, ot_cost, id_cost) =
            couple_and_interpolate(data, noise, self.config.coupling, self.config.path, times)?;
        let nonfinite = || Error::NonFiniteLoss {
            step: self.step,
            last_checkpoint: last_checkpoint.to_string(),
        };
        let (loss, mut grad) = self.model.loss_and_grad(&batch).map_err(|e| match e {
            Error::NonFiniteActivation { .. } => nonfinite(),
            other => other,
        })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(nonfinite());
        }
        if let Some(clip) = self.config.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                grad.iter_mut().for_each(|g| *g *= clip / norm);
            }
        }
        let adam = self.config.adam;
        self.adam.update(self.model.params_mut(), &grad, lr, &adam);
        let record = StepRecord {
            step: self.step,
            epoch,
            lr,
            loss,
            ot_cost,
            id_cost,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs (or resumes) the fixed epoch budget. Noise for sample `i` of
    /// step `s` is draw `s * batch_size + i` of `noise`.
    pub fn train(&mut self, dataset: &[Field], noise: &GrfSampler, observer: &mut impl TrainObserver<M>) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let grid = *dataset[0].grid();
        for f in dataset {
            grid.ensure_same(f.grid())?;
        }
        grid.ensure_same(noise.grid())?;
        let bsz = self.config.batch_size;
        let per_epoch = self.config.steps_per_epoch(dataset.len());
        let total = self.total_steps(dataset.len());
        let mut last_checkpoint = String::from("none");
        while self.step < total {
            let epoch = self.step / per_epoch;
            let order = self.epoch_order(epoch, dataset.len());
            let k = self.step % per_epoch;
            let idx = &order[k * bsz..((k + 1) * bsz).min(order.len())];
            let data: Vec<Field> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let base = (self.step * bsz) as u64;
            let noise_batch: Vec<Field> = (0..data.len() as u64).map(|i| noise.sample_at(base + i)).collect();
            let times = self.step_times(self.step, data.len());
            let lr = lr_at(&self.config, self.step, total);
            let record = self.train_step(&data, &noise_batch, &times, lr, epoch, &last_checkpoint)?;
            observer.on_step(&record)?;
            let finished_epoch = self.step.is_multiple_of(per_epoch);
            if finished_epoch {
                let done = self.step / per_epoch;
                let every = self.config.checkpoint_every;
                if (every > 0 && done.is_multiple_of(every)) || self.step == total {
                    last_checkpoint = observer.on_checkpoint(self, done)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::{build_sampler, KernelSpec};
    use crate::neuralop::{Activation, FnoConfig};
    use crate::tensorgrid::{norm, GridSpec};

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg();
        let total = 1000;
        assert_eq!(lr_at(&c, 0, total), 1e-10);
        assert_eq!(lr_at(&c, 100, total), 1e-4);
        assert!((lr_at(&c, total - 1, total) - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn schedule_is_continuous() {
        let c = cfg();
        let total = 1000;
        let warm = 100.0;
        let cos_steps = 899.0;
        for s in 0..total - 1 {
            let d = (lr_at(&c, s + 1, total) - lr_at(&c, s, total)).abs();
            let bound = if s < 100 {
                (c.base_lr - c.warmup_floor_lr) / warm
            } else {
                std::f64::consts::PI * (c.base_lr - c.min_lr) / (2.0 * cos_steps)
            };
            assert!(d <= bound * (1.0 + 1e-9) + 1e-18, "step {s}: {d} > {bound}");
        }
    }

    #[test]
    fn adam_single_step_by_hand() {
        // loss = (p - 3)^2 at p = 1: g = -4; m = 0.1 * -4 = -0.4, v = 0.001 * 16
        // m_hat = -4, v_hat = 16, step = lr * -4 / (4 + eps)
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        s.update(&mut p, &[-4.0], 0.01, &AdamConfig::default());
        let expected = 1.0 + 0.01 * 4.0 / (4.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    fn toy_dataset(g: GridSpec, n: usize) -> Vec<Field> {
        let s = build_sampler(KernelSpec::new(0.5, 2.0, 1.0, 3.0).unwrap(), g, 99).unwrap();
        (0..n as u64).map(|i| s.sample_at(i)).collect()
    }

    #[test]
    fn linear_probe_loss_decreases() {
        // data = 3 * noise + 2: the optimal pairing is the identity and at
        // t = 1/2 the target velocity is f_t + 1, which the probe can fit
        let g = GridSpec::torus(8).unwrap();
        let noise = build_sampler(KernelSpec::default_for(&g), g, 1).unwrap();
        let noise_batch: Vec<Field> = (0..16).map(|i| noise.sample_at(i)).collect();
        let data: Vec<Field> = noise_batch
            .iter()
            .map(|f| Field::new(g, f.values().iter().map(|v| 3.0 * v + 2.0).collect()).unwrap())
            .collect();
        let config = TrainConfig {
            batch_size: 16,
            epochs: 1,
            ..cfg()
        };
        let mut tr = Trainer::new(LinearProbe::new(0.0, 0.0, 0.0), config).unwrap();
        let times = [0.5];
        let (batch, _, _) =
            couple_and_interpolate(&data, &noise_batch, CouplingKind::Ot, PathKind::OtDisplacement, &times).unwrap();
        let initial = tr.model.loss_and_grad(&batch).unwrap().0;
        for _ in 0..200 {
            tr.train_step(&data, &noise_batch, &times, 0.05, 0, "none").unwrap();
        }
        let fin = tr.model.loss_and_grad(&batch).unwrap().0;
        assert!(fin < 0.1 * initial, "{fin} vs {initial}");
    }

    #[test]
    fn coupling_costs() {
        let g = GridSpec::torus(8).unwrap();
        let data = toy_dataset(g, 8);
        let (_, ot, id) =
            couple_and_interpolate(&data, &data, CouplingKind::Ot, PathKind::OtDisplacement, &[0.3]).unwrap();
        assert_eq!(ot, 0.0);
        assert_eq!(id, 0.0);
        let noise = build_sampler(KernelSpec::default_for(&g), g, 2)
            .unwrap()
            .sample(8)
            .unwrap();
        let (_, ot, id) =
            couple_and_interpolate(&data, &noise, CouplingKind::Ot, PathKind::OtDisplacement, &[0.3]).unwrap();
        assert!(ot < id);
    }

    #[test]
    fn degenerate_coupling_with_zero_output() {
        let g = GridSpec::torus(8).unwrap();
        let data = toy_dataset(g, 4);
        let c = FnoConfig {
            n_layers: 1,
            modes: 2,
            width: 4,
            lift_dim: 4,
            proj_dim: 4,
            activation: Activation::Gelu,
        };
        let mut p = OperatorParams::init(c, 0).unwrap();
        p.zero_output();
        let (batch, ot, _) =
            couple_and_interpolate(&data, &data, CouplingKind::Ot, PathKind::OtDisplacement, &[0.4]).unwrap();
        assert_eq!(ot, 0.0);
        assert!(batch.iter().all(|s| s.v_target.values().iter().all(|v| *v == 0.0)));
        assert_eq!(p.loss_and_grad(&batch).unwrap().0, 0.0);
    }

    fn small_fno() -> FnoConfig {
        FnoConfig {
            n_layers: 2,
            modes: 3,
            width: 6,
            lift_dim: 8,
            proj_dim: 8,
            activation: Activation::Gelu,
        }
    }

    fn run(config: TrainConfig, data: &[Field], noise: &GrfSampler) -> (OperatorParams, Vec<StepRecord>) {
        let model = OperatorParams::init(small_fno(), 3).unwrap();
        let mut tr = Trainer::new(model, config).unwrap();
        let mut rec = Recorder::default();
        tr.train(data, noise, &mut rec).unwrap();
        (tr.model, rec.trace)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let g = GridSpec::torus(8).unwrap();
        let data = toy_dataset(g, 6);
        let noise = build_sampler(KernelSpec::default_for(&g), g, 2).unwrap();
        let (p, trace) = run(TrainConfig { epochs: 0, ..cfg() }, &data, &noise);
        assert_eq!(p, OperatorParams::init(small_fno(), 3).unwrap());
        assert!(trace.is_empty());
    }

    #[test]
    fn runs_are_reproducible_and_resumable() {
        let g = GridSpec::torus(8).unwrap();
        let data = toy_dataset(g, 10);
        let noise = build_sampler(KernelSpec::default_for(&g), g, 2).unwrap();
        let config = TrainConfig {
            batch_size: 4,
            epochs: 3,
            base_lr: 1e-3,
            ..cfg()
        };
        let (p1, t1) = run(config, &data, &noise);
        let (p2, t2) = run(config, &data, &noise);
        assert_eq!(t1.len(), 9);
        assert_eq!(p1, p2);
        let strip = |t: &[StepRecord]| {
            t.iter()
                .map(|r| (r.step, r.lr.to_bits(), r.loss.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&t1), strip(&t2));
        assert!(t1.iter().all(|r| r.ot_cost <= r.id_cost));

        // stop after 4 steps, continue from a copy of the state
        let model = OperatorParams::init(small_fno(), 3).unwrap();
        let mut tr = Trainer::new(model, config).unwrap();
        struct StopAt(usize);
        impl<M> TrainObserver<M> for StopAt {
            fn on_step(&mut self, r: &StepRecord) -> Result<()> {
                if r.step + 1 == self.0 {
                    return Err(Error::Config("stop".into()));
                }
                Ok(())
            }
        }
        assert!(tr.train(&data, &noise, &mut StopAt(4)).is_err());
        let mut resumed = Trainer {
            model: tr.model.clone(),
            adam: tr.adam.clone(),
            step: tr.step,
            config,
        };
        let mut rec = Recorder::default();
        resumed.train(&data, &noise, &mut rec).unwrap();
        assert_eq!(resumed.model, p1);
        assert_eq!(strip(&rec.trace), strip(&t1[4..]));
    }

    #[test]
    fn checkpoints_follow_schedule() {
        let g = GridSpec::torus(8).unwrap();
        let data = toy_dataset(g, 10);
        let noise = build_sampler(KernelSpec::default_for(&g), g, 2).unwrap();
        #[derive(Default)]
        struct Epochs(Vec<usize>);
        impl<M> TrainObserver<M> for Epochs {
            fn on_checkpoint(&mut self, _t: &Trainer<M>, e: usize) -> Result<String> {
                self.0.push(e);
                Ok(format!("ckpt-{e}"))
            }
        }
        let config = TrainConfig {
            batch_size: 4,
            epochs: 5,
            checkpoint_every: 2,
            ..cfg()
        };
        let mut tr = Trainer::new(OperatorParams::init(small_fno(), 0).unwrap(), config).unwrap();
        let mut obs = Epochs::default();
        tr.train(&data, &noise, &mut obs).unwrap();
        assert_eq!(obs.0, vec![2, 4, 5]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig { batch_size: 1, ..cfg() }.validate().is_err());
        assert!(TrainConfig {
            warmup_frac: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { min_lr: 1.0, ..cfg() }.validate().is_err());
        let g = GridSpec::torus(8).unwrap();
        let noise = build_sampler(KernelSpec::default_for(&g), g, 2).unwrap();
        let mut tr = Trainer::new(LinearProbe::new(0.0, 0.0, 0.0), cfg()).unwrap();
        assert!(tr.train(&[], &noise, &mut Recorder::default()).is_err());
        let mixed = vec![Field::zeros(g), Field::zeros(GridSpec::torus(4).unwrap())];
        assert!(tr.train(&mixed, &noise, &mut Recorder::default()).is_err());
    }

    #[test]
    fn self_transport_learns_small_velocity() {
        // data measure = noise measure: optimal pairs are close, so the
        // learned velocity is much smaller than typical pair distances
        let g = GridSpec::torus(8).unwrap();
        let kernel = KernelSpec::new(0.5, 2.0, 1.0, 0.0).unwrap();
        let data: Vec<Field> = {
            let s = build_sampler(kernel, g, 77).unwrap();
            (0..256).map(|i| s.sample_at(i)).collect()
        };
        let noise = build_sampler(kernel, g, 5).unwrap();
        let config = TrainConfig {
            batch_size: 64,
            epochs: 30,
            base_lr: 3e-3,
            min_lr: 1e-5,
            ..cfg()
        };
        let (p, _) = run(config, &data, &noise);
        let held = build_sampler(kernel, g, 1234).unwrap();
        let (mut un, mut dn) = (0.0, 0.0);
        for i in 0..64 {
            let f0 = held.sample_at(i);
            let f1 = held.sample_at(1000 + i);
            let t = (i as f64 + 0.5) / 64.0;
            let ft = Field::lincomb(1.0 - t, &f0, t, &f1).unwrap();
            un += norm(&p.forward(t, &ft).unwrap());
            dn += norm(&f1.sub(&f0).unwrap());
        }
        assert!(un < 0.2 * dn, "{un} vs {dn}");
    }
}
