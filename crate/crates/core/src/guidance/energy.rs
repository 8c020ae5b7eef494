use super::{GuidanceConfig, GuidanceError, SemanticBasis, StructureCoordinates};
use crate::diffusion::{Conditioning, DifferentiableDenoiser, FeatureMap, NoiseSchedule, Tensor};
use crate::mask::PolygonMask;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_grid(s: &StructureCoordinates, positions: usize, what: &str) -> Result<(), GuidanceError> {
    if s.positions() != positions {
        return Err(GuidanceError::ShapeMismatch(format!("{what}: {} positions vs {positions}", s.positions())));
    }
    Ok(())
}

/// Sigmoid-weighted spatial averages of `f`, one per coordinate channel
/// `k < channels`.
pub fn appearance_stats(s: &StructureCoordinates, f: &FeatureMap, channels: usize) -> Result<Vec<Vec<f64>>, GuidanceError> {
    check_grid(s, f.positions(), "coordinates vs features")?;
    if channels > s.rank {
        return Err(GuidanceError::RankTooLarge { r: channels, max: s.rank });
    }
    let mut out = vec![vec![0.0; f.channels]; channels];
    let mut wsum = vec![0.0; channels];
    for p in 0..f.positions() {
        for k in 0..channels {
            let w = sigmoid(s.at(p)[k]);
            wsum[k] += w;
            for (o, v) in out[k].iter_mut().zip(f.at(p)) {
                *o += w * v;
            }
        }
    }
    for (v, w) in out.iter_mut().zip(&wsum) {
        v.iter_mut().for_each(|x| *x /= w);
    }
    Ok(out)
}

/// Mean over channels of `‖v_k − v_ref_k‖²`.
pub fn appearance_energy(current: &[Vec<f64>], reference: &[Vec<f64>], n_a: usize) -> Result<f64, GuidanceError> {
    for len in [current.len(), reference.len()] {
        if len != n_a {
            return Err(GuidanceError::LengthMismatch { expected: n_a, got: len });
        }
    }
    let mut e = 0.0;
    for (a, b) in current.iter().zip(reference) {
        if a.len() != b.len() {
            return Err(GuidanceError::LengthMismatch { expected: b.len(), got: a.len() });
        }
        e += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok(if n_a == 0 { 0.0 } else { e / n_a as f64 })
}

/// Mask-weighted mean of `‖S − S_cond‖²`; 0 for an empty mask.
pub fn structure_energy_fg(s: &StructureCoordinates, s_cond: &StructureCoordinates, mask: &PolygonMask) -> Result<f64, GuidanceError> {
    check_grid(s_cond, s.positions(), "condition coordinates")?;
    check_mask(s, mask)?;
    if s.rank != s_cond.rank {
        return Err(GuidanceError::ShapeMismatch(format!("ranks {} and {}", s.rank, s_cond.rank)));
    }
    let m = mask.count();
    if m == 0 {
        log::warn!("foreground structure energy over an empty mask");
        return Ok(0.0);
    }
    let mut e = 0.0;
    for (p, &c) in mask.cells().iter().enumerate() {
        if c != 0 {
            e += s.at(p).iter().zip(s_cond.at(p)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(e / m as f64)
}

/// `balance · mean over background of ‖max(S − τ, 0)‖²`; 0 when the mask
/// covers everything.
pub fn structure_energy_bg(s: &StructureCoordinates, tau: &[f64], mask: &PolygonMask, balance: f64) -> Result<f64, GuidanceError> {
    check_mask(s, mask)?;
    if tau.len() != s.rank {
        return Err(GuidanceError::LengthMismatch { expected: s.rank, got: tau.len() });
    }
    let bg = s.positions() - mask.count();
    if bg == 0 {
        log::warn!("background structure energy with a full mask");
        return Ok(0.0);
    }
    let mut e = 0.0;
    for (p, &c) in mask.cells().iter().enumerate() {
        if c == 0 {
            e += s.at(p).iter().zip(tau).map(|(a, t)| (a - t).max(0.0).powi(2)).sum::<f64>();
        }
    }
    Ok(balance * e / bg as f64)
}

fn check_mask(s: &StructureCoordinates, mask: &PolygonMask) -> Result<(), GuidanceError> {
    if (mask.width(), mask.height()) != (s.width, s.height) {
        return Err(GuidanceError::ShapeMismatch(format!(
            "mask {}x{} vs feature grid {}x{}",
            mask.width(),
            mask.height(),
            s.width,
            s.height
        )));
    }
    Ok(())
}

/// Per-channel spatial maximum of the condition's coordinates.
pub fn channel_thresholds(s_cond: &StructureCoordinates) -> Vec<f64> {
    let mut tau = vec![f64::NEG_INFINITY; s_cond.rank];
    for p in 0..s_cond.positions() {
        for (t, v) in tau.iter_mut().zip(s_cond.at(p)) {
            *t = t.max(*v);
        }
    }
    tau
}

/// `ε_cfg + λ_s (∇g_sf + ∇g_sb) + λ_a ∇g_a`.
pub fn guided_score(
    eps_cfg: &Tensor,
    grad_sf: &Tensor,
    grad_sb: &Tensor,
    grad_a: &Tensor,
    cfg: &GuidanceConfig,
) -> Result<Tensor, GuidanceError> {
    for g in [grad_sf, grad_sb, grad_a] {
        if g.shape() != eps_cfg.shape() {
            return Err(GuidanceError::ShapeMismatch(format!("gradient {:?} vs score {:?}", g.shape(), eps_cfg.shape())));
        }
    }
    let mut out = eps_cfg.clone();
    out.add_scaled(grad_sf, cfg.lambda_s);
    out.add_scaled(grad_sb, cfg.lambda_s);
    out.add_scaled(grad_a, cfg.lambda_a);
    Ok(out)
}

/// A scalar function of the latent with an optional closed-form gradient.
pub trait EnergyFn {
    fn value(&self, x: &Tensor) -> Result<f64, GuidanceError>;
    fn gradient(&self, x: &Tensor) -> Result<Tensor, GuidanceError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMode {
    Analytic,
    /// Central differences with step `rel_step · max(1, ‖x‖∞)`.
    FiniteDifference { rel_step: f64 },
}

pub fn energy_gradient(energy: &dyn EnergyFn, x: &Tensor, mode: GradientMode) -> Result<Tensor, GuidanceError> {
    let e0 = energy.value(x)?;
    if !e0.is_finite() {
        return Err(GuidanceError::NonFiniteEnergy);
    }
    match mode {
        GradientMode::Analytic => {
            let g = energy.gradient(x)?;
            if g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(GuidanceError::NonFiniteEnergy);
            }
            Ok(g)
        }
        GradientMode::FiniteDifference { rel_step } => {
            let h = rel_step * x.max_abs().max(1.0);
            let mut g = Tensor::zeros(x.shape());
            let mut probe = x.clone();
            for i in 0..x.len() {
                let orig = probe.as_slice()[i];
                probe.as_mut_slice()[i] = orig + h;
                let ep = energy.value(&probe)?;
                probe.as_mut_slice()[i] = orig - h;
                let em = energy.value(&probe)?;
                probe.as_mut_slice()[i] = orig;
                if !ep.is_finite() || !em.is_finite() {
                    return Err(GuidanceError::NonFiniteEnergy);
                }
                g.as_mut_slice()[i] = (ep - em) / (2.0 * h);
            }
            Ok(g)
        }
    }
}

/// An energy given by two closures.
pub struct ClosureEnergy<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> EnergyFn for ClosureEnergy<V, G>
where
    V: Fn(&Tensor) -> f64,
    G: Fn(&Tensor) -> Tensor,
{
    fn value(&self, x: &Tensor) -> Result<f64, GuidanceError> {
        Ok((self.value)(x))
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor, GuidanceError> {
        Ok((self.gradient)(x))
    }
}

/// Everything the energies need at one timestep.
#[derive(Debug, Clone)]
pub struct StepTargets {
    pub basis: SemanticBasis,
    /// Condition coordinates and their channel thresholds.
    pub condition: Option<(StructureCoordinates, Vec<f64>)>,
    /// Reference appearance statistics from the first primitive run.
    pub reference_stats: Vec<Vec<f64>>,
    /// Union of primitive masks on the feature grid.
    pub mask: PolygonMask,
    pub balance_s: f64,
}

impl StepTargets {
    pub fn appearance_channels(&self) -> usize {
        self.reference_stats.len()
    }

    /// Energy value and its gradient with respect to the feature map.
    pub fn evaluate(&self, kind: EnergyKind, f: &FeatureMap) -> Result<(f64, Vec<f64>), GuidanceError> {
        let s = super::project_features(f, &self.basis)?;
        let r = s.rank;
        let c = f.channels;
        let mut g_s = vec![0.0; s.data.len()];
        let mut g_f = vec![0.0; f.data.len()];
        let value = match kind {
            EnergyKind::StructureFg => {
                let Some((sc, _)) = &self.condition else { return Ok((0.0, g_f)) };
                let e = structure_energy_fg(&s, sc, &self.mask)?;
                let m = self.mask.count();
                if m > 0 {
                    for (p, &on) in self.mask.cells().iter().enumerate() {
                        if on != 0 {
                            for k in 0..r {
                                g_s[p * r + k] = 2.0 * (s.at(p)[k] - sc.at(p)[k]) / m as f64;
                            }
                        }
                    }
                }
                e
            }
            EnergyKind::StructureBg => {
                let Some((_, tau)) = &self.condition else { return Ok((0.0, g_f)) };
                let e = structure_energy_bg(&s, tau, &self.mask, self.balance_s)?;
                let bg = s.positions() - self.mask.count();
                if bg > 0 {
                    for (p, &on) in self.mask.cells().iter().enumerate() {
                        if on == 0 {
                            for k in 0..r {
                                let over = (s.at(p)[k] - tau[k]).max(0.0);
                                g_s[p * r + k] = 2.0 * self.balance_s * over / bg as f64;
                            }
                        }
                    }
                }
                e
            }
            EnergyKind::Appearance => {
                let ka = self.appearance_channels();
                if ka == 0 {
                    return Ok((0.0, g_f));
                }
                let stats = appearance_stats(&s, f, ka)?;
                let e = appearance_energy(&stats, &self.reference_stats, ka)?;
                let mut wsum = vec![0.0; ka];
                for p in 0..s.positions() {
                    for k in 0..ka {
                        wsum[k] += sigmoid(s.at(p)[k]);
                    }
                }
                let g_v: Vec<Vec<f64>> = stats
                    .iter()
                    .zip(&self.reference_stats)
                    .map(|(v, a)| v.iter().zip(a).map(|(x, y)| 2.0 * (x - y) / ka as f64).collect())
                    .collect();
                for p in 0..s.positions() {
                    let fp = f.at(p);
                    for k in 0..ka {
                        let w = sigmoid(s.at(p)[k]);
                        let coef = w / wsum[k];
                        for (o, gv) in g_f[p * c..(p + 1) * c].iter_mut().zip(&g_v[k]) {
                            *o += coef * gv;
                        }
                        let dw: f64 = g_v[k].iter().zip(fp.iter().zip(&stats[k])).map(|(gv, (x, v))| gv * (x - v)).sum();
                        g_s[p * r + k] = dw / wsum[k] * w * (1.0 - w);
                    }
                }
                e
            }
        };
        for p in 0..s.positions() {
            for k in 0..r {
                let gk = g_s[p * r + k];
                if gk != 0.0 {
                    for (o, b) in g_f[p * c..(p + 1) * c].iter_mut().zip(self.basis.rows.row(k)) {
                        *o += gk * b;
                    }
                }
            }
        }
        Ok((value, g_f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyKind {
    StructureFg,
    StructureBg,
    Appearance,
}

/// One guidance energy as a function of the latent `x_t`, evaluated through
/// the denoiser's features.
pub struct FeatureEnergy<'a, D: ?Sized> {
    pub denoiser: &'a D,
    pub schedule: &'a NoiseSchedule,
    pub cond: Conditioning<'a>,
    pub t: usize,
    pub targets: &'a StepTargets,
    pub kind: EnergyKind,
}

impl<D: DifferentiableDenoiser + ?Sized> FeatureEnergy<'_, D> {
    fn features(&self, x: &Tensor) -> Result<FeatureMap, GuidanceError> {
        self.denoiser
            .predict(x, self.t, self.schedule, &self.cond)?
            .features
            .ok_or(GuidanceError::MissingFeatures(self.t))
    }
}

impl<D: DifferentiableDenoiser + ?Sized> EnergyFn for FeatureEnergy<'_, D> {
    fn value(&self, x: &Tensor) -> Result<f64, GuidanceError> {
        Ok(self.targets.evaluate(self.kind, &self.features(x)?)?.0)
    }

    fn gradient(&self, x: &Tensor) -> Result<Tensor, GuidanceError> {
        let (_, g_f) = self.targets.evaluate(self.kind, &self.features(x)?)?;
        Ok(self.denoiser.feature_vjp(x, self.t, self.schedule, &self.cond, &g_f)?)
    }
}
