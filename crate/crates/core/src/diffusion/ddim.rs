use std::io::Write;
use std::path::Path;

use super::{Conditioning, Denoiser, DiffusionError, FeatureMap, NoiseSchedule, Tensor};

/// One recorded state: the timestep, the latent there, and the features the
/// denoiser produced for it.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub t: usize,
    pub x: Tensor,
    pub features: Option<FeatureMap>,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn features_at(&self, t: usize) -> Option<&FeatureMap> {
        self.steps.iter().find(|s| s.t == t).and_then(|s| s.features.as_ref())
    }

    /// Feature dump: four little-endian u32 `(n_steps, h_f, w_f, C_f)`, then
    /// every step's features as little-endian f32 in trajectory order.
    pub fn write_features(&self, w: &mut impl Write) -> Result<(), DiffusionError> {
        let maps: Vec<&FeatureMap> = self.steps.iter().filter_map(|s| s.features.as_ref()).collect();
        let (h, wd, c) = maps.first().map_or((0, 0, 0), |f| (f.height, f.width, f.channels));
        for v in [maps.len(), h, wd, c] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for f in maps {
            for &v in &f.data {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_features(&self, path: &Path) -> Result<(), DiffusionError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_features(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Deterministic DDIM update from `t` down to `t_prev`.
pub fn ddim_step(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    if t <= t_prev {
        return Err(DiffusionError::StepOrderViolation { t, next: t_prev });
    }
    Ok(transfer(x_t, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_prev)))
}

/// Reverse DDIM update from `t` up to `t_next`.
pub fn ddim_inverse_step(
    x_t: &Tensor,
    eps: &Tensor,
    t: usize,
    t_next: usize,
    schedule: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    if t >= t_next {
        return Err(DiffusionError::StepOrderViolation { t, next: t_next });
    }
    Ok(transfer(x_t, eps, schedule.alpha_bar(t), schedule.alpha_bar(t_next)))
}

fn transfer(x: &Tensor, eps: &Tensor, ab_from: f64, ab_to: f64) -> Tensor {
    let x0 = x.lin_comb(1.0 / ab_from.sqrt(), eps, -(1.0 - ab_from).sqrt() / ab_from.sqrt());
    x0.lin_comb(ab_to.sqrt(), eps, (1.0 - ab_to).sqrt())
}

/// Descending grid `[T, ..., 0]` with `steps` intervals.
pub fn timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if steps == 0 || steps > t_max {
        return Err(DiffusionError::BadStepCount { steps, t_max });
    }
    Ok((0..=steps).rev().map(|i| i * t_max / steps).collect())
}

/// Run the sampler from `x_t_max` over `steps` intervals.
pub fn ddim_sample(
    denoiser: &(impl Denoiser + ?Sized),
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    steps: usize,
    x_t_max: &Tensor,
    record_features: bool,
) -> Result<(Tensor, Trajectory), DiffusionError> {
    x_t_max.check_shape(&denoiser.sample_shape())?;
    let ts = timesteps(schedule.t_max(), steps)?;
    let mut x = x_t_max.clone();
    let mut traj = Trajectory::default();
    for w in ts.windows(2) {
        let p = denoiser.predict(&x, w[0], schedule, cond)?;
        let next = ddim_step(&x, &p.eps, w[0], w[1], schedule)?;
        if record_features {
            traj.steps.push(TrajectoryStep { t: w[0], x, features: p.features });
        }
        x = next;
    }
    Ok((x, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InversionConfig {
    pub steps: usize,
    /// Fixed-point refinements per step; 0 gives the plain one-pass inversion.
    pub refine_iters: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { steps: 100, refine_iters: 2 }
    }
}

/// Map a clean sample back to the noise that generates it.
///
/// Each step solves `y = inverse_step(x, ε(y, t_next))` by a fixed-point
/// iteration seeded with `ε(x, t_next)` and accelerated with a one-term
/// Anderson mixing. Features are recorded at `(y, t_next)`.
pub fn ddim_invert(
    x0: &Tensor,
    denoiser: &(impl Denoiser + ?Sized),
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    cfg: &InversionConfig,
) -> Result<(Tensor, Trajectory), DiffusionError> {
    x0.check_shape(&denoiser.sample_shape())?;
    let mut ts = timesteps(schedule.t_max(), cfg.steps)?;
    ts.reverse();
    let mut x = x0.clone();
    let mut traj = Trajectory::default();
    for w in ts.windows(2) {
        let (t, tn) = (w[0], w[1]);
        let g_of = |y: &Tensor| -> Result<Tensor, DiffusionError> {
            let e = denoiser.predict(y, tn, schedule, cond)?.eps;
            ddim_inverse_step(&x, &e, t, tn, schedule)
        };
        let mut g_prev = g_of(&x)?;
        let mut r_prev = g_prev.lin_comb(1.0, &x, -1.0);
        let mut y = g_prev.clone();
        for _ in 0..cfg.refine_iters {
            let g = g_of(&y)?;
            let r = g.lin_comb(1.0, &y, -1.0);
            let dr = r.lin_comb(1.0, &r_prev, -1.0);
            let den = dr.dot(&dr);
            let gamma = if den > 1e-300 { dr.dot(&r) / den } else { 0.0 };
            y = g.lin_comb(1.0 - gamma, &g_prev, gamma);
            g_prev = g;
            r_prev = r;
        }
        let p = denoiser.predict(&y, tn, schedule, cond)?;
        traj.steps.push(TrajectoryStep { t: tn, x: y.clone(), features: p.features });
        x = y;
    }
    Ok((x, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::GaussianDenoiser;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn step_to_clean_endpoint_recovers_x0() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let (x0, eps) = (t(&[0.3, -1.2]), t(&[0.5, 2.0]));
        let ab = s.alpha_bar(4);
        let xt = x0.lin_comb(ab.sqrt(), &eps, (1.0 - ab).sqrt());
        let back = ddim_step(&xt, &eps, 4, 0, &s).unwrap();
        assert!(back.lin_comb(1.0, &x0, -1.0).max_abs() < 1e-12);
    }

    #[test]
    fn zero_eps_scales() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let x = t(&[1.0, -2.0]);
        let out = ddim_step(&x, &t(&[0.0, 0.0]), 7, 3, &s).unwrap();
        let k = (s.alpha_bar(3) / s.alpha_bar(7)).sqrt();
        assert!(out.lin_comb(1.0, &x.scaled(k), -1.0).max_abs() < 1e-12);
    }

    #[test]
    fn order_violations() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let x = t(&[1.0]);
        assert!(matches!(ddim_step(&x, &x, 3, 3, &s), Err(DiffusionError::StepOrderViolation { .. })));
        assert!(matches!(ddim_inverse_step(&x, &x, 5, 2, &s), Err(DiffusionError::StepOrderViolation { .. })));
        assert!(timesteps(10, 11).is_err());
        assert_eq!(timesteps(100, 50).unwrap()[..3], [100, 98, 96]);
    }

    #[test]
    fn gaussian_sample_lands_on_mean() {
        let s = NoiseSchedule::cosine(100).unwrap();
        let g = GaussianDenoiser::new(vec![0.7], vec![1e-4]).unwrap();
        let (x0, _) = ddim_sample(&g, &Conditioning::Null, &s, 100, &t(&[1.3]), false).unwrap();
        assert!((x0.as_slice()[0] - 0.7).abs() < 1e-2);
    }

    #[test]
    fn single_step_inversion_is_closed_form() {
        let s = NoiseSchedule::from_alpha_bar(vec![1.0, 0.4]).unwrap();
        let g = GaussianDenoiser::new(vec![0.5, -1.0], vec![0.3, 2.0]).unwrap();
        let x0 = t(&[0.2, 0.9]);
        let cfg = InversionConfig { steps: 1, refine_iters: 0 };
        let (x1, traj) = ddim_invert(&x0, &g, &Conditioning::Null, &s, &cfg).unwrap();
        let e = Tensor::from_vec(&[2], g.eps_at(x0.as_slice(), 0.4)).unwrap();
        let expect = x0.lin_comb(0.4f64.sqrt(), &e, 0.6f64.sqrt());
        assert_eq!(x1, expect);
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].t, 1);
    }

    #[test]
    fn deterministic_sampling() {
        let s = NoiseSchedule::cosine(20).unwrap();
        let g = GaussianDenoiser::new(vec![0.1, 0.2], vec![1.0, 0.5]).unwrap();
        let x = t(&[0.4, -0.3]);
        let a = ddim_sample(&g, &Conditioning::Null, &s, 10, &x, true).unwrap();
        let b = ddim_sample(&g, &Conditioning::Null, &s, 10, &x, true).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.steps.len(), 10);
        assert!(a.1.steps.windows(2).all(|w| w[0].t > w[1].t));
    }

    #[test]
    fn round_trip_both_directions() {
        let s = NoiseSchedule::cosine(100).unwrap();
        let g = GaussianDenoiser::new(vec![1.0, -2.0, 0.5], vec![0.25, 1.0, 4.0]).unwrap();
        let cfg = InversionConfig::default();
        let x0 = t(&[1.3, -1.1, -2.0]);
        let (xt, inv) = ddim_invert(&x0, &g, &Conditioning::Null, &s, &cfg).unwrap();
        assert!(inv.steps.windows(2).all(|w| w[0].t < w[1].t));
        let (back, _) = ddim_sample(&g, &Conditioning::Null, &s, 100, &xt, false).unwrap();
        assert!(back.rel_l2(&x0) <= 1e-2, "{}", back.rel_l2(&x0));

        let noise = t(&[0.4, -1.5, 0.9]);
        let (sample, _) = ddim_sample(&g, &Conditioning::Null, &s, 100, &noise, false).unwrap();
        let (again, _) = ddim_invert(&sample, &g, &Conditioning::Null, &s, &cfg).unwrap();
        assert!(again.rel_l2(&noise) <= 1e-2, "{}", again.rel_l2(&noise));
    }
}
