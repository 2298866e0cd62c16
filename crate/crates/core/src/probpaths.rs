//! Conditional probability paths between a noise function `f0` and a data
//! function `f1`, with the velocity each path regresses onto.

use crate::error::{Error, Result};
use crate::tensorgrid::{norm, Field};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    /// Straight line `(1-t) f0 + t f1` at constant velocity `f1 - f0`.
    OtDisplacement,
    /// Gaussian path of functional flow matching, contracting the noise to
    /// width `sigma_min` at `t = 1`.
    FfmGaussian { sigma_min: f64 },
}

impl PathKind {
    pub fn validate(&self) -> Result<()> {
        if let PathKind::FfmGaussian { sigma_min } = *self {
            if !(0.0..1.0).contains(&sigma_min) {
                return Err(Error::InvalidArgument(format!(
                    "sigma_min must lie in [0, 1), got {sigma_min}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub t: f64,
    pub f_t: Field,
    pub v_target: Field,
}

pub fn interpolate(kind: PathKind, f0: &Field, f1: &Field, t: f64) -> Result<PathSample> {
    kind.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t must lie in [0, 1], got {t}")));
    }
    f0.grid().ensure_same(f1.grid())?;
    let (f_t, v_target) = match kind {
        PathKind::OtDisplacement => (Field::lincomb(1.0 - t, f0, t, f1)?, f1.sub(f0)?),
        PathKind::FfmGaussian { sigma_min } => {
            let c = 1.0 - sigma_min;
            let sigma_t = 1.0 - c * t;
            let f_t = Field::lincomb(sigma_t, f0, t, f1)?;
            let v = if sigma_t > 0.0 {
                // (c / sigma_t) (t f1 - f_t) + f1
                let mut v = Field::lincomb(t, f1, -1.0, &f_t)?;
                v.scale(c / sigma_t);
                v.axpy(1.0, f1)?;
                v
            } else {
                f1.sub(f0)?
            };
            (f_t, v)
        }
    };
    if !f_t.is_finite() || !v_target.is_finite() {
        return Err(Error::NonFinite { index: 0 });
    }
    Ok(PathSample { t, f_t, v_target })
}

/// Largest Hilbert-norm gap between a central difference of the path and its
/// stated velocity, over `t = 0.1, 0.2, ..., 0.9` with step `1e-5`.
pub fn velocity_consistency_check(kind: PathKind, f0: &Field, f1: &Field) -> Result<f64> {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 1..=9 {
        let t = i as f64 / 10.0;
        let plus = interpolate(kind, f0, f1, t + h)?.f_t;
        let minus = interpolate(kind, f0, f1, t - h)?.f_t;
        let mut fd = plus.sub(&minus)?;
        fd.scale(1.0 / (2.0 * h));
        let v = interpolate(kind, f0, f1, t)?.v_target;
        worst = worst.max(norm(&fd.sub(&v)?));
    }
    Ok(worst)
}

/// Discrete kinetic energy `sum |f_{k+1} - f_k|^2 / dt` of a path sampled on
/// a uniform grid of `[0, 1]`.
pub fn path_kinetic_energy(path: &[Field]) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InvalidArgument("path needs at least two points".into()));
    }
    let dt = 1.0 / (path.len() - 1) as f64;
    let mut e = 0.0;
    for w in path.windows(2) {
        e += crate::tensorgrid::dist_sq(&w[1], &w[0])? / dt;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorgrid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_field(g: GridSpec, rng: &mut ChaCha8Rng) -> Field {
        Field::new(g, (0..g.len()).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn ot_endpoints_and_velocity() {
        let g = GridSpec::torus(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_field(g, &mut rng), random_field(g, &mut rng));
        let k = PathKind::OtDisplacement;
        assert_eq!(interpolate(k, &a, &b, 0.0).unwrap().f_t, a);
        assert_eq!(interpolate(k, &a, &b, 1.0).unwrap().f_t, b);
        let s = interpolate(k, &a, &b, 0.3).unwrap();
        assert_eq!(s.v_target, b.sub(&a).unwrap());
        assert!(velocity_consistency_check(k, &a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn ffm_worked_example() {
        let g = GridSpec::torus(4).unwrap();
        let s = interpolate(
            PathKind::FfmGaussian { sigma_min: 0.1 },
            &Field::constant(g, 2.0),
            &Field::constant(g, 10.0),
            0.5,
        )
        .unwrap();
        assert!(s.f_t.values().iter().all(|v| (v - 6.1).abs() < 1e-12));
        assert!(s.v_target.values().iter().all(|v| (v - 8.2).abs() < 1e-12));
    }

    #[test]
    fn ffm_zero_sigma_is_ot() {
        let g = GridSpec::torus(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_field(g, &mut rng), random_field(g, &mut rng));
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let x = interpolate(PathKind::OtDisplacement, &a, &b, t).unwrap();
            let y = interpolate(PathKind::FfmGaussian { sigma_min: 0.0 }, &a, &b, t).unwrap();
            assert!(x.f_t.max_abs_diff(&y.f_t) < 1e-12);
            assert!(x.v_target.max_abs_diff(&y.v_target) < 1e-12);
        }
        assert!(velocity_consistency_check(PathKind::FfmGaussian { sigma_min: 0.0 }, &a, &b).unwrap() < 1e-8);
    }

    #[test]
    fn ffm_consistency_and_endpoint() {
        let g = GridSpec::torus(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (random_field(g, &mut rng), random_field(g, &mut rng));
        let k = PathKind::FfmGaussian { sigma_min: 0.1 };
        assert!(velocity_consistency_check(k, &a, &b).unwrap() < 1e-6);
        let end = interpolate(k, &a, &b, 1.0).unwrap().f_t;
        assert!(norm(&end.sub(&b).unwrap()) <= 0.1 * norm(&a) + 1e-12);
        assert_eq!(interpolate(k, &a, &b, 0.0).unwrap().f_t, a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = GridSpec::torus(4).unwrap();
        let a = Field::zeros(g);
        assert!(interpolate(PathKind::OtDisplacement, &a, &a, 1.5).is_err());
        assert!(interpolate(PathKind::OtDisplacement, &a, &a, -0.1).is_err());
        assert!(interpolate(PathKind::FfmGaussian { sigma_min: 1.0 }, &a, &a, 0.5).is_err());
        let b = Field::zeros(GridSpec::torus(8).unwrap());
        assert!(interpolate(PathKind::OtDisplacement, &a, &b, 0.5).is_err());
    }

    #[test]
    fn ot_second_differences_vanish() {
        let g = GridSpec::torus(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_field(g, &mut rng), random_field(g, &mut rng));
        let at = |t: f64| interpolate(PathKind::OtDisplacement, &a, &b, t).unwrap().f_t;
        for i in 1..9 {
            let t = i as f64 / 10.0;
            let (p, q, r) = (at(t - 0.1), at(t), at(t + 0.1));
            let second = Field::lincomb(1.0, &p, 1.0, &r).unwrap().sub(&q.scaled(2.0)).unwrap();
            assert!(second.values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn straight_path_minimizes_kinetic_energy(seed in any::<u64>(), amp in 0.01f64..2.0) {
                let g = GridSpec::torus(4).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (a, b) = (random_field(g, &mut rng), random_field(g, &mut rng));
                let n = 10;
                let straight: Vec<Field> = (0..=n)
                    .map(|k| interpolate(PathKind::OtDisplacement, &a, &b, k as f64 / n as f64).unwrap().f_t)
                    .collect();
                let mut bent = straight.clone();
                for f in bent.iter_mut().take(n).skip(1) {
                    let d = random_field(g, &mut rng);
                    f.axpy(amp, &d).unwrap();
                }
                let e0 = path_kinetic_energy(&straight).unwrap();
                let e1 = path_kinetic_energy(&bent).unwrap();
                prop_assert!(e1 >= e0 - 1e-9 * e0);
                prop_assert!((e0 - crate::tensorgrid::dist_sq(&a, &b).unwrap()).abs() < 1e-9 * e0);
            }
        }
    }
}
