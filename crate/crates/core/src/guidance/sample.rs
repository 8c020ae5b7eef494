use std::collections::BTreeMap;

use serde::Serialize;

use super::energy::{guided_score, EnergyKind, FeatureEnergy, GradientMode, StepTargets};
use super::{appearance_stats, channel_thresholds, energy_gradient, project_features, semantic_basis_from_maps, GuidanceError, RankRule};
use crate::diffusion::{
    cfg_combine, ddim_invert, ddim_sample, ddim_step, timesteps, CfgDenoiser, Conditioning, DifferentiableDenoiser,
    FeatureMap, InversionConfig, NoiseSchedule, Tensor,
};
use crate::mask::PolygonMask;
use crate::scene::LayoutScene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Classifier-free guidance weight.
    pub omega: f64,
    pub lambda_s: f64,
    pub lambda_a: f64,
    /// Weight of the background structure term.
    pub balance_s: f64,
    /// Number of primitive-generation runs, also the number of appearance channels.
    pub n_a: usize,
    /// Sampling steps that receive guidance, counted from the noisy end.
    pub guided_steps: usize,
    pub sample_steps: usize,
    pub inversion: InversionConfig,
    pub rank: RankRule,
    pub gradient_mode: GradientMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            omega: 1.0,
            lambda_s: 500.0,
            lambda_a: 100.0,
            balance_s: 1.0,
            n_a: 2,
            guided_steps: 30,
            sample_steps: 50,
            inversion: InversionConfig::default(),
            rank: RankRule::default(),
            gradient_mode: GradientMode::Analytic,
        }
    }
}

impl GuidanceConfig {
    /// Set `λ_s` and tie `λ_a = 0.2 λ_s`.
    pub fn with_lambda_s(self, lambda_s: f64) -> Self {
        Self { lambda_s, lambda_a: 0.2 * lambda_s, ..self }
    }

    /// All guidance off: plain classifier-free sampling.
    pub fn unguided(self) -> Self {
        Self { lambda_s: 0.0, lambda_a: 0.0, ..self }
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let bad = |m: &str| Err(GuidanceError::InvalidConfig(m.to_string()));
        if self.n_a == 0 {
            return bad("n_a must be at least 1");
        }
        if self.guided_steps > self.sample_steps {
            return bad("guided_steps exceeds sample_steps");
        }
        if !(self.lambda_s >= 0.0 && self.lambda_a >= 0.0 && self.balance_s >= 0.0) {
            return bad("guidance weights must be non-negative");
        }
        if !self.omega.is_finite() {
            return bad("omega must be finite");
        }
        Ok(())
    }
}

/// Energies at one guided step, plus gradient norms when gradients were taken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub t: usize,
    pub g_sf: f64,
    pub g_sb: f64,
    pub g_a: f64,
    pub grad_norms: Vec<f64>,
}

impl StepLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

/// Targets prepared from the primitive runs and the condition image.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    pub targets: BTreeMap<usize, StepTargets>,
    /// Final images of the primitive-generation runs.
    pub primitive_images: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct GuidedRun {
    pub image: Tensor,
    pub log: Vec<StepLog>,
}

impl GuidedRun {
    pub fn diagnostics_jsonl(&self) -> String {
        self.log.iter().map(|l| l.to_json() + "\n").collect()
    }
}

fn derived_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k).rotate_left(17) ^ 0xD1B5_4A32_D192_ED03
}

fn feature_mask(scene: &LayoutScene, f: &FeatureMap) -> Result<PolygonMask, GuidanceError> {
    let mut union = PolygonMask::zeros(scene.canvas_w, scene.canvas_h);
    for m in scene.masks().map_err(|e| GuidanceError::ShapeMismatch(e.to_string()))? {
        union = union.union(&m).map_err(|e| GuidanceError::ShapeMismatch(e.to_string()))?;
    }
    if !scene.canvas_w.is_multiple_of(f.width) || scene.canvas_w / f.width != scene.canvas_h / f.height {
        return Err(GuidanceError::ShapeMismatch(format!(
            "canvas {}x{} is not a multiple of the feature grid {}x{}",
            scene.canvas_w, scene.canvas_h, f.width, f.height
        )));
    }
    Ok(union.downsample(scene.canvas_w / f.width))
}

impl GuidanceContext {
    /// Run the primitive generations, build per-step bases and, if a
    /// condition image is given, invert it for structure targets.
    pub fn prepare<D: DifferentiableDenoiser + ?Sized>(
        denoiser: &D,
        scene: &LayoutScene,
        condition: Option<&Tensor>,
        cfg: &GuidanceConfig,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self, GuidanceError> {
        cfg.validate()?;
        let cond = Conditioning::scene(scene);
        let shape = denoiser.sample_shape();
        let cfg_net = CfgDenoiser::new(denoiser, cfg.omega);
        let mut runs = Vec::with_capacity(cfg.n_a);
        let mut primitive_images = Vec::with_capacity(cfg.n_a);
        for k in 0..cfg.n_a {
            let x_t = Tensor::standard_normal(&shape, derived_seed(seed, k as u64 + 1));
            let (img, traj) = ddim_sample(&cfg_net, &cond, schedule, cfg.sample_steps, &x_t, true)?;
            primitive_images.push(img);
            runs.push(traj);
        }
        let inverted = match condition {
            Some(img) => Some(ddim_invert(img, denoiser, &cond, schedule, &cfg.inversion)?.1),
            None => None,
        };

        let mut targets = BTreeMap::new();
        let mut mask = None;
        for step in &runs[0].steps {
            let t = step.t;
            let maps: Vec<&FeatureMap> = runs
                .iter()
                .map(|r| r.features_at(t).ok_or(GuidanceError::MissingFeatures(t)))
                .collect::<Result<_, _>>()?;
            let basis = semantic_basis_from_maps(t, &maps, cfg.rank)?;
            let reference = project_features(maps[0], &basis)?;
            let ka = cfg.n_a.min(basis.rank());
            let reference_stats = appearance_stats(&reference, maps[0], ka)?;
            let condition = match &inverted {
                Some(traj) => {
                    let f = traj.features_at(t).ok_or(GuidanceError::MissingFeatures(t))?;
                    let sc = project_features(f, &basis)?;
                    let tau = channel_thresholds(&sc);
                    Some((sc, tau))
                }
                None => None,
            };
            if mask.is_none() {
                mask = Some(feature_mask(scene, maps[0])?);
            }
            let mask = mask.clone().expect("set above");
            targets.insert(t, StepTargets { basis, condition, reference_stats, mask, balance_s: cfg.balance_s });
        }
        Ok(Self { targets, primitive_images })
    }

    /// The guided sampling loop from `x_t_max`.
    pub fn run<D: DifferentiableDenoiser + ?Sized>(
        &self,
        denoiser: &D,
        scene: &LayoutScene,
        x_t_max: &Tensor,
        cfg: &GuidanceConfig,
        schedule: &NoiseSchedule,
    ) -> Result<GuidedRun, GuidanceError> {
        cfg.validate()?;
        let cond = Conditioning::scene(scene);
        let ts = timesteps(schedule.t_max(), cfg.sample_steps)?;
        let mut x = x_t_max.clone();
        let mut log = Vec::with_capacity(cfg.guided_steps);
        let guide = cfg.lambda_s != 0.0 || cfg.lambda_a != 0.0;
        for (i, w) in ts.windows(2).enumerate() {
            let (t, t_prev) = (w[0], w[1]);
            let c = denoiser.predict(&x, t, schedule, &cond)?;
            let mut eps = if cfg.omega == 0.0 || cond.is_null() {
                c.eps
            } else {
                let u = denoiser.predict(&x, t, schedule, &Conditioning::Null)?;
                cfg_combine(&c.eps, &u.eps, cfg.omega)?
            };
            if i < cfg.guided_steps {
                let targets = self.targets.get(&t).ok_or(GuidanceError::MissingFeatures(t))?;
                let f = c.features.as_ref().ok_or(GuidanceError::MissingFeatures(t))?;
                let kinds = [EnergyKind::StructureFg, EnergyKind::StructureBg, EnergyKind::Appearance];
                let mut values = [0.0; 3];
                for (v, kind) in values.iter_mut().zip(kinds) {
                    *v = targets.evaluate(kind, f)?.0;
                }
                let mut grad_norms = Vec::new();
                if guide {
                    let mut grads: Vec<Tensor> = Vec::with_capacity(3);
                    for kind in kinds {
                        let energy = FeatureEnergy { denoiser, schedule, cond, t, targets, kind };
                        let g = energy_gradient(&energy, &x, cfg.gradient_mode)?;
                        grad_norms.push(g.norm());
                        grads.push(g);
                    }
                    eps = guided_score(&eps, &grads[0], &grads[1], &grads[2], cfg)?;
                }
                log.push(StepLog { t, g_sf: values[0], g_sb: values[1], g_a: values[2], grad_norms });
            }
            x = ddim_step(&x, &eps, t, t_prev, schedule)?;
        }
        Ok(GuidedRun { image: x, log })
    }
}

/// Full pipeline: primitive generation, bases, condition inversion and the
/// guided loop from noise drawn with `seed`.
pub fn guided_sample<D: DifferentiableDenoiser + ?Sized>(
    denoiser: &D,
    scene: &LayoutScene,
    condition: Option<&Tensor>,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(GuidedRun, GuidanceContext), GuidanceError> {
    let ctx = GuidanceContext::prepare(denoiser, scene, condition, cfg, schedule, seed)?;
    let x_t = Tensor::standard_normal(&denoiser.sample_shape(), seed);
    let run = ctx.run(denoiser, scene, &x_t, cfg, schedule)?;
    Ok((run, ctx))
}
