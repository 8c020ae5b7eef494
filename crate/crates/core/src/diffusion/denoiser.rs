use super::{DiffusionError, NoiseSchedule, Tensor};
use crate::scene::LayoutScene;

/// What the denoiser is conditioned on.
///
/// A scene without primitives is equivalent to `Null`.
#[derive(Debug, Clone, Copy)]
pub enum Conditioning<'a> {
    Null,
    Scene { scene: &'a LayoutScene, drop_caption: bool },
}

impl<'a> Conditioning<'a> {
    pub fn scene(scene: &'a LayoutScene) -> Self {
        Conditioning::Scene { scene, drop_caption: false }
    }

    pub fn is_null(&self) -> bool {
        match self {
            Conditioning::Null => true,
            Conditioning::Scene { scene, .. } => scene.primitives.is_empty(),
        }
    }
}

/// Hidden activations on a `height x width` grid, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub tag: &'static str,
}

impl FeatureMap {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.channels..(pos + 1) * self.channels]
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub eps: Tensor,
    pub features: Option<FeatureMap>,
}

/// A noise predictor `ε(x_t; t, c)`.
pub trait Denoiser: Send + Sync {
    fn sample_shape(&self) -> Vec<usize>;

    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
    ) -> Result<Prediction, DiffusionError>;
}

/// A denoiser that can pull feature-space gradients back to its input.
pub trait DifferentiableDenoiser: Denoiser {
    /// `(∂F/∂x)ᵀ · grad_features`, where `F` is the recorded feature map.
    fn feature_vjp(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
        grad_features: &[f64],
    ) -> Result<Tensor, DiffusionError>;
}

/// `(1 + ω) ε_cond − ω ε_uncond`.
pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, omega: f64) -> Result<Tensor, DiffusionError> {
    eps_uncond.check_shape(eps_cond.shape())?;
    Ok(eps_cond.lin_comb(1.0 + omega, eps_uncond, -omega))
}

/// Classifier-free guidance around an inner denoiser; features come from the
/// conditional branch.
pub struct CfgDenoiser<'a, D: ?Sized> {
    pub inner: &'a D,
    pub omega: f64,
}

impl<'a, D: Denoiser + ?Sized> CfgDenoiser<'a, D> {
    pub fn new(inner: &'a D, omega: f64) -> Self {
        Self { inner, omega }
    }
}

impl<D: Denoiser + ?Sized> Denoiser for CfgDenoiser<'_, D> {
    fn sample_shape(&self) -> Vec<usize> {
        self.inner.sample_shape()
    }

    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
    ) -> Result<Prediction, DiffusionError> {
        let c = self.inner.predict(x, t, schedule, cond)?;
        if self.omega == 0.0 || cond.is_null() {
            return Ok(c);
        }
        let u = self.inner.predict(x, t, schedule, &Conditioning::Null)?;
        Ok(Prediction { eps: cfg_combine(&c.eps, &u.eps, self.omega)?, features: c.features })
    }
}
