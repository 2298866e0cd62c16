//! Numerical checks of two identities behind the training objective.
//!
//! * Objective equivalence: on a two-node "function space" with a finite
//!   target measure and Gaussian conditional paths, the conditional
//!   regression loss and the marginal regression loss differ by a constant
//!   that does not depend on the model. Both losses are integrals against
//!   Gaussians and are evaluated by quadrature.
//! * Mini-batch consistency: the empirical W2 between sample batches of
//!   `N(0, I)` and `N(m, I)` approaches the closed form `|m|` as the batch
//!   grows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::otcouple::{solve_assignment, CostMatrix};
use crate::rng::{derive_seed, substream};

pub mod quadrature {
    use std::f64::consts::PI;

    /// Gauss-Legendre nodes and weights on `[a, b]`.
    pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, 0.0);
                for j in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
                }
                dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
                let dz = p0 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            x[i] = mid - half * z;
            x[n - 1 - i] = mid + half * z;
            w[i] = 2.0 * half / ((1.0 - z * z) * dp * dp);
            w[n - 1 - i] = w[i];
        }
        (x, w)
    }

    /// Nodes and weights with `sum w_i f(x_i) ~ E[f(Z)]`, `Z ~ N(0, 1)`.
    pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        // physicists' Hermite roots by Newton from asymptotic guesses
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0;
        let pim4 = PI.powf(-0.25);
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let (mut p1, mut p2) = (pim4, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / (j + 1) as f64).sqrt() * p2 - (j as f64 / (j + 1) as f64).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        // exp(-x^2) weight -> standard normal
        let s = PI.sqrt();
        let nodes: Vec<f64> = x.iter().rev().map(|v| v * 2f64.sqrt()).collect();
        let weights: Vec<f64> = w.iter().rev().map(|v| v / s).collect();
        (nodes, weights)
    }
}

/// `u(t, g) = A g + b t + c` on R^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearVelocity {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
}

impl LinearVelocity {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut n = || rng.sample::<f64, _>(StandardNormal);
        Self {
            a: [[n(), n()], [n(), n()]],
            b: [n(), n()],
            c: [n(), n()],
        }
    }

    fn eval(&self, t: f64, g: [f64; 2]) -> [f64; 2] {
        [
            self.a[0][0] * g[0] + self.a[0][1] * g[1] + self.b[0] * t + self.c[0],
            self.a[1][0] * g[0] + self.a[1][1] * g[1] + self.b[1] * t + self.c[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGapScenario {
    /// One or two target points with probabilities summing to 1.
    pub atoms: Vec<([f64; 2], f64)>,
    pub sigma_min: f64,
    pub thetas: Vec<LinearVelocity>,
    /// Gauss-Hermite order across the separation axis.
    pub hermite_order: usize,
    /// Composite Gauss-Legendre panels along the separation axis.
    pub panels: usize,
    pub time_order: usize,
}

impl LossGapScenario {
    /// Atoms at `+-e1` with equal weight, `sigma_min = 0.2`, five random
    /// linear models.
    pub fn canonical(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "loss-gap-theta"));
        Self {
            atoms: vec![([1.0, 0.0], 0.5), ([-1.0, 0.0], 0.5)],
            sigma_min: 0.2,
            thetas: (0..5).map(|_| LinearVelocity::random(&mut rng)).collect(),
            hermite_order: 20,
            panels: 48,
            time_order: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < 1.0) {
            return Err(Error::InvalidArgument("sigma_min must lie in (0, 1)".into()));
        }
        if self.atoms.is_empty() || self.atoms.len() > 2 {
            return Err(Error::InvalidArgument("one or two atoms supported".into()));
        }
        let total: f64 = self.atoms.iter().map(|a| a.1).sum();
        if self.atoms.iter().any(|a| !(a.1 > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "atom weights must be positive and sum to 1".into(),
            ));
        }
        if self.hermite_order < 20 {
            return Err(Error::InvalidArgument("quadrature order must be at least 20".into()));
        }
        if self.thetas.is_empty() || self.panels == 0 || self.time_order == 0 {
            return Err(Error::InvalidArgument("need thetas, panels and time nodes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGapReport {
    pub fcfm: Vec<f64>,
    pub ffm: Vec<f64>,
    /// `max |gap(theta) - gap(theta')|`
    pub spread: f64,
    /// `E_t[C(t) - int |u_t|^2 dmu_t]` computed without any model.
    pub constant: f64,
    /// `max_theta |gap(theta) - constant|`
    pub constant_error: f64,
    /// Largest change of any loss when every quadrature order is doubled.
    pub refinement_change: f64,
}

impl LossGapReport {
    pub fn gaps(&self) -> Vec<f64> {
        self.fcfm.iter().zip(&self.ffm).map(|(a, b)| a - b).collect()
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.spread < tol && self.constant_error < tol
    }
}

/// A 2D rule for `E[h(Z)]`, `Z ~ N(0, I)`, in coordinates aligned with the
/// atom separation: composite Gauss-Legendre on `[-12, 12]` along the
/// separation (where the posterior weights switch sharply for small
/// `sigma`), Gauss-Hermite across it.
struct Rule {
    points: Vec<([f64; 2], f64)>,
}

impl Rule {
    fn new(dir: [f64; 2], hermite: usize, panels: usize) -> Self {
        const HALF_WIDTH: f64 = 12.0;
        const PER_PANEL: usize = 8;
        let perp = [-dir[1], dir[0]];
        let (hx, hw) = quadrature::gauss_hermite(hermite);
        let mut along = Vec::new();
        let h = 2.0 * HALF_WIDTH / panels as f64;
        for p in 0..panels {
            let a = -HALF_WIDTH + p as f64 * h;
            let (x, w) = quadrature::gauss_legendre(PER_PANEL, a, a + h);
            for (x, w) in x.into_iter().zip(w) {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                along.push((x, w * pdf));
            }
        }
        let mut points = Vec::with_capacity(along.len() * hx.len());
        for (s, ws) in &along {
            for (q, wq) in hx.iter().zip(&hw) {
                points.push(([s * dir[0] + q * perp[0], s * dir[1] + q * perp[1]], ws * wq));
            }
        }
        Self { points }
    }
}

struct Losses {
    fcfm: Vec<f64>,
    ffm: Vec<f64>,
    marginal_sq: f64,
}

fn norm_sq(v: [f64; 2]) -> f64 {
    v[0] * v[0] + v[1] * v[1]
}

fn evaluate_losses(s: &LossGapScenario, hermite: usize, panels: usize, time_order: usize) -> Losses {
    let dir = match s.atoms.as_slice() {
        [(a, _), (b, _)] => {
            let d = [a[0] - b[0], a[1] - b[1]];
            let n = norm_sq(d).sqrt();
            if n > 0.0 {
                [d[0] / n, d[1] / n]
            } else {
                [1.0, 0.0]
            }
        }
        _ => [1.0, 0.0],
    };
    let rule = Rule::new(dir, hermite, panels);
    let (tx, tw) = quadrature::gauss_legendre(time_order, 0.0, 1.0);
    let k = s.thetas.len();
    let per_time: Vec<(Vec<f64>, Vec<f64>, f64)> = tx
        .par_iter()
        .zip(&tw)
        .map(|(&t, &wt)| {
            let sigma = 1.0 - (1.0 - s.sigma_min) * t;
            let sdot = -(1.0 - s.sigma_min);
            let cond = |f: [f64; 2], g: [f64; 2]| -> [f64; 2] {
                [
                    sdot / sigma * (g[0] - t * f[0]) + f[0],
                    sdot / sigma * (g[1] - t * f[1]) + f[1],
                ]
            };
            let (mut fc, mut fm, mut msq) = (vec![0.0; k], vec![0.0; k], 0.0);
            for (f, wf) in &s.atoms {
                for (z, wz) in &rule.points {
                    let g = [t * f[0] + sigma * z[0], t * f[1] + sigma * z[1]];
                    // posterior weights of the atoms given g, via log-densities
                    let logs: Vec<f64> = s
                        .atoms
                        .iter()
                        .map(|(fb, wb)| wb.ln() - norm_sq([g[0] - t * fb[0], g[1] - t * fb[1]]) / (2.0 * sigma * sigma))
                        .collect();
                    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
                    let tot: f64 = e.iter().sum();
                    let mut ut = [0.0; 2];
                    for ((fb, _), eb) in s.atoms.iter().zip(&e) {
                        let u = cond(*fb, g);
                        ut[0] += eb / tot * u[0];
                        ut[1] += eb / tot * u[1];
                    }
                    let uf = cond(*f, g);
                    let w = wf * wz;
                    msq += w * norm_sq(ut);
                    for (i, th) in s.thetas.iter().enumerate() {
                        let m = th.eval(t, g);
                        fc[i] += w * norm_sq([m[0] - uf[0], m[1] - uf[1]]);
                        fm[i] += w * norm_sq([m[0] - ut[0], m[1] - ut[1]]);
                    }
                }
            }
            (
                fc.iter().map(|v| v * wt).collect(),
                fm.iter().map(|v| v * wt).collect(),
                msq * wt,
            )
        })
        .collect();
    let mut out = Losses {
        fcfm: vec![0.0; k],
        ffm: vec![0.0; k],
        marginal_sq: 0.0,
    };
    for (fc, fm, msq) in per_time {
        for i in 0..k {
            out.fcfm[i] += fc[i];
            out.ffm[i] += fm[i];
        }
        out.marginal_sq += msq;
    }
    out
}

/// Evaluates both losses for every model and the model-free constant.
/// Rejects the scenario if doubling every quadrature resolution moves any
/// loss by more than 1e-8.
pub fn check_loss_gap(s: &LossGapScenario) -> Result<LossGapReport> {
    s.validate()?;
    let base = evaluate_losses(s, s.hermite_order, s.panels, s.time_order);
    let fine = evaluate_losses(s, 2 * s.hermite_order, 2 * s.panels, 2 * s.time_order);
    let refinement_change = base
        .fcfm
        .iter()
        .zip(&fine.fcfm)
        .chain(base.ffm.iter().zip(&fine.ffm))
        .chain(std::iter::once((&base.marginal_sq, &fine.marginal_sq)))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if refinement_change > 1e-8 {
        return Err(Error::Quadrature(refinement_change));
    }
    // C(t) in closed form: u^f(g) = sdot z + f with z ~ N(0, I_2)
    let sdot2 = (1.0 - s.sigma_min).powi(2);
    let c = s
        .atoms
        .iter()
        .map(|(f, w)| w * (2.0 * sdot2 + norm_sq(*f)))
        .sum::<f64>();
    let constant = c - base.marginal_sq;
    let gaps: Vec<f64> = base.fcfm.iter().zip(&base.ffm).map(|(a, b)| a - b).collect();
    let hi = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let constant_error = gaps.iter().map(|g| (g - constant).abs()).fold(0.0, f64::max);
    Ok(LossGapReport {
        fcfm: base.fcfm,
        ffm: base.ffm,
        spread: hi - lo,
        constant,
        constant_error,
        refinement_change,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct W2Scenario {
    pub dim: usize,
    /// Mean of the second Gaussian; its norm is the exact W2.
    pub mean_shift: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl W2Scenario {
    /// Shift of norm `shift` along the first axis.
    pub fn along_first_axis(dim: usize, shift: f64, batch_sizes: Vec<usize>, trials: usize, seed: u64) -> Self {
        let mut m = vec![0.0; dim];
        if dim > 0 {
            m[0] = shift;
        }
        Self {
            dim,
            mean_shift: m,
            batch_sizes,
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 64 || self.mean_shift.len() != self.dim {
            return Err(Error::InvalidArgument(
                "dim must be in 1..=64 and match the shift".into(),
            ));
        }
        if self.trials < 2 || self.batch_sizes.is_empty() || self.batch_sizes[0] == 0 {
            return Err(Error::InvalidArgument(
                "need >= 2 trials and positive batch sizes".into(),
            ));
        }
        if self.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("batch sizes must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn exact_w2(&self) -> f64 {
        self.mean_shift.iter().map(|m| m * m).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Row {
    pub batch: usize,
    pub mean_w2: f64,
    pub std_error: f64,
    pub exact_w2: f64,
    /// `|mean - exact| / exact`, or the mean itself when the exact value is 0.
    pub rel_error: f64,
    pub rel_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct W2Report {
    pub rows: Vec<W2Row>,
}

pub const W2_HEADER: &str = "batch,mean_w2,std_error,exact_w2,rel_error";

impl W2Report {
    /// Increases of the error sequence, and how many of them exceed one
    /// standard error.
    pub fn inversions(&self) -> (usize, usize) {
        let mut all = 0;
        let mut significant = 0;
        for w in self.rows.windows(2) {
            if w[1].rel_error > w[0].rel_error {
                all += 1;
                if w[1].rel_error - w[0].rel_error > w[0].rel_std_error.max(w[1].rel_std_error) {
                    significant += 1;
                }
            }
        }
        (all, significant)
    }

    /// Error nonincreasing up to one inversion within a standard error, and
    /// below `tol` at the largest batch.
    pub fn passed(&self, tol: f64) -> bool {
        let (all, significant) = self.inversions();
        let last = self.rows.last().map(|r| r.rel_error).unwrap_or(f64::INFINITY);
        all <= 1 && significant == 0 && last < tol
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{W2_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.batch, r.mean_w2, r.std_error, r.exact_w2, r.rel_error
            ));
        }
        s
    }
}

/// Squared Euclidean cost between two point clouds.
pub fn point_cost_matrix(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<CostMatrix> {
    let entries = x
        .iter()
        .flat_map(|a| {
            y.iter()
                .map(move |b| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        })
        .collect();
    CostMatrix::from_entries(x.len(), entries)
}

fn gaussian_batch(rng: &mut impl Rng, n: usize, mean: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Empirical W2 between one batch from each Gaussian.
pub fn batch_w2(s: &W2Scenario, batch: usize, trial: usize) -> Result<f64> {
    let mut rng = substream(derive_seed(s.seed, "thm3"), &batch.to_string(), trial as u64);
    let x = gaussian_batch(&mut rng, batch, &vec![0.0; s.dim]);
    let y = gaussian_batch(&mut rng, batch, &s.mean_shift);
    let c = solve_assignment(&point_cost_matrix(&x, &y)?)?;
    Ok((c.total_cost / batch as f64).max(0.0).sqrt())
}

pub fn check_w2_convergence(s: &W2Scenario) -> Result<W2Report> {
    s.validate()?;
    let exact = s.exact_w2();
    let rows = s
        .batch_sizes
        .iter()
        .map(|&b| {
            let w: Vec<f64> = (0..s.trials)
                .into_par_iter()
                .map(|trial| batch_w2(s, b, trial))
                .collect::<Result<_>>()?;
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let scale = if exact > 0.0 { exact } else { 1.0 };
            Ok(W2Row {
                batch: b,
                mean_w2: mean,
                std_error: se,
                exact_w2: exact,
                rel_error: (mean - exact).abs() / scale,
                rel_std_error: se / scale,
            })
        })
        .collect::<Result<_>>()?;
    Ok(W2Report { rows })
}
