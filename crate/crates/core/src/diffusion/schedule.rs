use super::DiffusionError;

/// Cumulative signal levels `ᾱ_0 = 1 > ᾱ_1 > ... > ᾱ_T > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self, DiffusionError> {
        if alpha_bar.len() < 2 {
            return Err(DiffusionError::InvalidSchedule("need at least one step".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(DiffusionError::InvalidSchedule(format!("alpha_bar[0] = {} != 1", alpha_bar[0])));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(DiffusionError::InvalidSchedule(format!(
                    "alpha_bar must decrease strictly inside (0, 1]; fails at t = {}",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    /// Cosine schedule with offset `s = 0.008` and per-step β capped at 0.999.
    pub fn cosine(t_max: usize) -> Result<Self, DiffusionError> {
        const S: f64 = 0.008;
        let f = |t: usize| {
            let u = (t as f64 / t_max as f64 + S) / (1.0 + S) * std::f64::consts::FRAC_PI_2;
            u.cos().powi(2)
        };
        let mut ab = Vec::with_capacity(t_max + 1);
        ab.push(1.0);
        for t in 1..=t_max {
            let beta = (1.0 - f(t) / f(t - 1)).min(0.999);
            ab.push(ab[t - 1] * (1.0 - beta));
        }
        Self::from_alpha_bar(ab)
    }

    /// Number of diffusion steps `T`.
    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}
