use super::{Conditioning, Denoiser, DiffusionError, NoiseSchedule, Prediction, Tensor};

/// Exact noise predictor for data drawn from `N(mean, diag(var))`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianDenoiser {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self, DiffusionError> {
        if mean.len() != var.len() {
            return Err(DiffusionError::ShapeMismatch { expected: vec![mean.len()], got: vec![var.len()] });
        }
        if let Some(i) = var.iter().position(|&v| !(v > 0.0)) {
            return Err(DiffusionError::NonPositiveVariance(i));
        }
        Ok(Self { mean, var })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// `E[x_0 | x_t] = (√ᾱ σ² x_t + (1 − ᾱ) μ) / (ᾱ σ² + 1 − ᾱ)`, componentwise.
    pub fn posterior_mean(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(&xt, (&mu, &s2))| (sa * s2 * xt + (1.0 - alpha_bar) * mu) / (alpha_bar * s2 + 1.0 - alpha_bar))
            .collect()
    }

    /// Noise prediction at signal level `alpha_bar`; zero when no noise is present.
    pub fn eps_at(&self, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        if alpha_bar >= 1.0 {
            return vec![0.0; x.len()];
        }
        let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        let m = self.posterior_mean(x, alpha_bar);
        x.iter().zip(&m).map(|(xt, m0)| (xt - sa * m0) / sn).collect()
    }
}

impl Denoiser for GaussianDenoiser {
    fn sample_shape(&self) -> Vec<usize> {
        vec![self.mean.len()]
    }

    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        _cond: &Conditioning,
    ) -> Result<Prediction, DiffusionError> {
        x.check_shape(&[self.mean.len()])?;
        let eps = self.eps_at(x.as_slice(), schedule.alpha_bar(t));
        Ok(Prediction { eps: Tensor::from_vec(x.shape(), eps)?, features: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rejects_bad_variance() {
        assert!(matches!(GaussianDenoiser::new(vec![0.0, 0.0], vec![1.0, 0.0]), Err(DiffusionError::NonPositiveVariance(1))));
        assert!(GaussianDenoiser::new(vec![0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn point_mass_limit() {
        let g = GaussianDenoiser::new(vec![1.5], vec![1e-14]).unwrap();
        let ab: f64 = 0.3;
        let x = [0.7];
        let expect = (x[0] - ab.sqrt() * 1.5) / (1.0 - ab).sqrt();
        assert!((g.eps_at(&x, ab)[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn clean_endpoint_is_zero() {
        let g = GaussianDenoiser::new(vec![1.0], vec![2.0]).unwrap();
        assert_eq!(g.eps_at(&[3.0], 1.0), vec![0.0]);
        let near = g.eps_at(&[3.0], 1.0 - 1e-12);
        assert!(near[0].is_finite());
    }

    /// Sample `(x_0, x_t)` pairs, keep those with `x_t` near a probe point and
    /// compare the conditional average of `x_0` with the closed form.
    #[test]
    fn posterior_mean_matches_monte_carlo() {
        let (mu, s2): (f64, f64) = (0.8, 0.5);
        let g = GaussianDenoiser::new(vec![mu], vec![s2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for ab in [0.9f64, 0.5, 0.1] {
            let sa: f64 = ab.sqrt();
            let sn = (1.0f64 - ab).sqrt();
            let probe = sa * mu + 0.3;
            let half = 0.01;
            let mut kept = Vec::new();
            while kept.len() < 4000 {
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let x0 = mu + s2.sqrt() * z0;
                let xt = sa * x0 + sn * z1;
                if (xt - probe).abs() < half {
                    kept.push(x0);
                }
            }
            let n = kept.len() as f64;
            let avg = kept.iter().sum::<f64>() / n;
            let sd = (kept.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let expect = g.posterior_mean(&[probe], ab)[0];
            assert!((avg - expect).abs() < 3.0 * sd / n.sqrt() , "ab={ab}: {avg} vs {expect}");
        }
    }
}
