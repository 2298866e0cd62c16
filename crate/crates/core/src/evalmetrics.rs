//! Ensemble comparison metrics: radial and directional energy spectra with
//! log-domain fit scores, and a Gaussian KDE of pooled node values.
//!
//! Mode energies are `|c_k|^2 / N^2` with the unnormalized transform, so that
//! summing them over the full spectrum gives the mean square of the field.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensorgrid::{fft_index, forward_transform, Field, GridSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub k_bins: Vec<usize>,
    pub energy: Vec<f64>,
}

impl SpectrumCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,energy\n");
        for (k, e) in self.k_bins.iter().zip(&self.energy) {
            s.push_str(&format!("{k},{e:e}\n"));
        }
        s
    }

    /// The curve restricted to bins `lo..=hi`.
    pub fn restrict(&self, lo: usize, hi: usize) -> SpectrumCurve {
        let (k_bins, energy) = self
            .k_bins
            .iter()
            .zip(&self.energy)
            .filter(|(k, _)| (lo..=hi).contains(*k))
            .map(|(k, e)| (*k, *e))
            .unzip();
        SpectrumCurve { k_bins, energy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

fn common_grid(ensemble: &[Field]) -> Result<GridSpec> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
    let g = *first.grid();
    for f in ensemble {
        g.ensure_same(f.grid())?;
    }
    Ok(g)
}

/// Visits every mode of the full spectrum of `f` once through its half
/// spectrum: yields `(kx, ky, energy)` with mirrored columns counted twice.
fn for_each_mode(f: &Field, mut visit: impl FnMut(i64, i64, f64, f64)) -> Result<()> {
    let g = *f.grid();
    let s = forward_transform(f)?;
    let n2 = (g.len() as f64).powi(2);
    for iy in 0..g.ny {
        let ky = fft_index(iy, g.ny);
        for kx in 0..g.half_nx() {
            let mult = s.column_weight(kx);
            visit(kx as i64, ky, mult, s.at(iy, kx).norm_sqr() / n2);
        }
    }
    Ok(())
}

/// Energy in every integer shell `round(|k|)` including the DC shell 0 and
/// the corner shells past `min(nx, ny)/2`, with the number of modes in each.
pub fn shell_decomposition(f: &Field) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = *f.grid();
    let kmax = (((g.nx / 2).pow(2) + (g.ny / 2).pow(2)) as f64).sqrt().round() as usize;
    let mut energy = vec![0.0; kmax + 1];
    let mut count = vec![0.0; kmax + 1];
    for_each_mode(f, |kx, ky, mult, e| {
        let s = ((kx * kx + ky * ky) as f64).sqrt().round() as usize;
        energy[s] += mult * e;
        count[s] += mult;
    })?;
    Ok((energy, count))
}

/// Mean mode energy per shell `1..=min(nx, ny)/2`, averaged over the
/// ensemble.
pub fn radial_spectrum(ensemble: &[Field]) -> Result<SpectrumCurve> {
    let g = common_grid(ensemble)?;
    let kmax = g.nx.min(g.ny) / 2;
    let per_field: Vec<Vec<f64>> = ensemble
        .par_iter()
        .map(|f| {
            let (e, c) = shell_decomposition(f)?;
            Ok((1..=kmax).map(|s| e[s] / c[s]).collect())
        })
        .collect::<Result<_>>()?;
    Ok(average_curves(&per_field, (1..=kmax).collect()))
}

/// Energy with `|k_axis| = b`, summed over the other axis, for `b` in
/// `1..=n_axis/2`.
pub fn directional_spectrum(ensemble: &[Field], axis: Axis) -> Result<SpectrumCurve> {
    let g = common_grid(ensemble)?;
    let kmax = match axis {
        Axis::X => g.nx / 2,
        Axis::Y => g.ny / 2,
    };
    let per_field: Vec<Vec<f64>> = ensemble
        .par_iter()
        .map(|f| {
            let mut e = vec![0.0; kmax + 1];
            for_each_mode(f, |kx, ky, mult, en| match axis {
                // mirrored columns are the -kx half
                Axis::X => e[kx as usize] += mult * en,
                // the mirror of (kx, ky) is (-kx, -ky): same |ky|
                Axis::Y => e[ky.unsigned_abs() as usize] += mult * en,
            })?;
            Ok(e[1..].to_vec())
        })
        .collect::<Result<_>>()?;
    Ok(average_curves(&per_field, (1..=kmax).collect()))
}

/// Per-bin mean over fields. Each bin is summed in sorted order so the
/// result does not depend on ensemble order.
fn average_curves(per_field: &[Vec<f64>], k_bins: Vec<usize>) -> SpectrumCurve {
    let n = per_field.len() as f64;
    let energy = (0..k_bins.len())
        .map(|b| {
            let mut col: Vec<f64> = per_field.iter().map(|c| c[b]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / n
        })
        .collect();
    SpectrumCurve { k_bins, energy }
}

/// Coefficient of determination and RMSE between `pred` and `truth`.
pub fn r2_rmse(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    (r2, (ss_res / n).sqrt())
}

/// R2 and RMSE between natural logs of two spectra on the same bins.
/// Non-positive generated energies are floored at 1e-300.
pub fn log_fit_metrics(gen: &SpectrumCurve, reference: &SpectrumCurve) -> Result<(f64, f64)> {
    if gen.k_bins != reference.k_bins || gen.k_bins.is_empty() {
        return Err(Error::InvalidArgument("spectra must share non-empty bins".into()));
    }
    if reference.energy.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("reference spectrum must be positive".into()));
    }
    let lg: Vec<f64> = gen
        .energy
        .iter()
        .zip(&gen.k_bins)
        .map(|(e, k)| {
            if *e > 0.0 {
                e.ln()
            } else {
                log::warn!("non-positive generated energy in bin {k}; flooring at 1e-300");
                1e-300f64.ln()
            }
        })
        .collect();
    let lr: Vec<f64> = reference.energy.iter().map(|e| e.ln()).collect();
    Ok(r2_rmse(&lg, &lr))
}

pub const KDE_POINTS: usize = 512;
pub const KDE_MAX_VALUES: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct KdeResult {
    pub r2: f64,
    pub rmse: f64,
    pub eval_points: Vec<f64>,
    pub gen_pdf: Vec<f64>,
    pub ref_pdf: Vec<f64>,
}

impl KdeResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,gen_pdf,ref_pdf\n");
        for ((x, a), b) in self.eval_points.iter().zip(&self.gen_pdf).zip(&self.ref_pdf) {
            s.push_str(&format!("{x:e},{a:e},{b:e}\n"));
        }
        s
    }
}

/// All node values of an ensemble in ascending order, subsampled to at most
/// `KDE_MAX_VALUES` with a fixed seed.
pub fn pooled_values(ensemble: &[Field]) -> Vec<f64> {
    let mut all: Vec<f64> = ensemble.iter().flat_map(|f| f.values().iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    subsample(all, KDE_MAX_VALUES)
}

fn subsample(all: Vec<f64>, max: usize) -> Vec<f64> {
    if all.len() <= max {
        return all;
    }
    let mut rng = substream(0, "kde-subsample", all.len() as u64);
    let mut idx = index::sample(&mut rng, all.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i]).collect()
}

/// Scott's rule `std * n^(-1/5)`, floored at `1e-6 * range` (or 1e-6 when
/// the range is zero too).
pub fn scott_bandwidth(values: &[f64], range: f64) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = var.sqrt() * n.powf(-0.2);
    h.max(1e-6 * if range > 0.0 { range } else { 1.0 })
}

/// Gaussian KDE of `values` at `points`; kernels are cut at 8 bandwidths.
pub fn kde(values: &[f64], h: f64, points: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    points
        .par_iter()
        .map(|&x| {
            let lo = sorted.partition_point(|v| *v < x - 8.0 * h);
            let hi = sorted.partition_point(|v| *v <= x + 8.0 * h);
            let s: f64 = sorted[lo..hi]
                .iter()
                .map(|v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            s * norm
        })
        .collect()
}

/// Compares pooled node-value densities of two ensembles on a shared
/// 512-point grid spanning both.
pub fn kde_metrics(gen: &[Field], reference: &[Field]) -> Result<KdeResult> {
    common_grid(gen)?;
    common_grid(reference)?;
    kde_metrics_values(&pooled_values(gen), &pooled_values(reference))
}

pub fn kde_metrics_values(gen: &[f64], reference: &[f64]) -> Result<KdeResult> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let (lo, hi) = gen
        .iter()
        .chain(reference)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let range = hi - lo;
    let points: Vec<f64> = (0..KDE_POINTS)
        .map(|i| lo + range * i as f64 / (KDE_POINTS - 1) as f64)
        .collect();
    let gen_pdf = kde(gen, scott_bandwidth(gen, range), &points);
    let ref_pdf = kde(reference, scott_bandwidth(reference, range), &points);
    let (r2, rmse) = r2_rmse(&gen_pdf, &ref_pdf);
    Ok(KdeResult {
        r2,
        rmse,
        eval_points: points,
        gen_pdf,
        ref_pdf,
    })
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub kde_r2: f64,
    pub kde_rmse: f64,
    pub rs_r2: f64,
    pub rs_rmse: f64,
    pub ds_kx_r2: f64,
    pub ds_kx_rmse: f64,
    pub ds_ky_r2: f64,
    pub ds_ky_rmse: f64,
    pub nfe: usize,
}

pub const REPORT_HEADER: &str = "kde_r2,kde_rmse,rs_r2,rs_rmse,ds_kx_r2,ds_kx_rmse,ds_ky_r2,ds_ky_rmse,nfe";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.kde_r2,
            self.kde_rmse,
            self.rs_r2,
            self.rs_rmse,
            self.ds_kx_r2,
            self.ds_kx_rmse,
            self.ds_ky_r2,
            self.ds_ky_rmse,
            self.nfe
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_row())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub radial: (SpectrumCurve, SpectrumCurve),
    pub kx: (SpectrumCurve, SpectrumCurve),
    pub ky: (SpectrumCurve, SpectrumCurve),
    pub kde: KdeResult,
}

/// Every metric of `gen` against `reference`. With `kmax`, spectral
/// metrics only use bins `1..=kmax` (for data with an empty band above some
/// cutoff, such as dealiased simulations).
pub fn evaluate(gen: &[Field], reference: &[Field], nfe: usize, kmax: Option<usize>) -> Result<Evaluation> {
    let g = common_grid(gen)?;
    g.ensure_same(&common_grid(reference)?)?;
    if kmax == Some(0) {
        return Err(Error::InvalidArgument("kmax must be positive".into()));
    }
    let band = |c: SpectrumCurve| match kmax {
        Some(k) => c.restrict(1, k),
        None => c,
    };
    let radial = (band(radial_spectrum(gen)?), band(radial_spectrum(reference)?));
    let kx = (
        band(directional_spectrum(gen, Axis::X)?),
        band(directional_spectrum(reference, Axis::X)?),
    );
    let ky = (
        band(directional_spectrum(gen, Axis::Y)?),
        band(directional_spectrum(reference, Axis::Y)?),
    );
    let kde = kde_metrics(gen, reference)?;
    let (rs_r2, rs_rmse) = log_fit_metrics(&radial.0, &radial.1)?;
    let (ds_kx_r2, ds_kx_rmse) = log_fit_metrics(&kx.0, &kx.1)?;
    let (ds_ky_r2, ds_ky_rmse) = log_fit_metrics(&ky.0, &ky.1)?;
    Ok(Evaluation {
        report: MetricsReport {
            kde_r2: kde.r2,
            kde_rmse: kde.rmse,
            rs_r2,
            rs_rmse,
            ds_kx_r2,
            ds_kx_rmse,
            ds_ky_r2,
            ds_ky_rmse,
            nfe,
        },
        radial,
        kx,
        ky,
        kde,
    })
}
