use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AppearanceEmbedding, GroundingError, PathEmbedding};
use crate::linalg::{mat_vec_acc, outer_acc, vec_mat_acc, Matrix};

const MAGIC: &[u8; 4] = b"PCFN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

/// Fused per-token rows `e_b`, one per appearance token.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding(pub Matrix);

impl FusedEmbedding {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }
}

/// Two-layer perceptron `d_in -> d_b -> d_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNetwork {
    d_in: usize,
    d_b: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    activation: Activation,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct FusionCache {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone)]
pub(crate) struct FusionGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl FusionGrads {
    pub fn zeros_like(net: &FusionNetwork) -> Self {
        Self {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }
}

impl FusionNetwork {
    /// Uniform `±1/sqrt(fan_in)` initialization from a seed.
    pub fn new_seeded(d_in: usize, d_b: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = init(d_in * d_b, d_in);
        let b1 = init(d_b, d_in);
        let w2 = init(d_b * d_b, d_b);
        let b2 = init(d_b, d_b);
        Self { d_in, d_b, w1, b1, w2, b2, activation }
    }

    /// Identity weights with linear activation, so `forward(x) == x`.
    pub fn identity(d: usize) -> Self {
        let eye = Matrix::identity(d).into_vec();
        Self {
            d_in: d,
            d_b: d,
            w1: eye.clone(),
            b1: vec![0.0; d],
            w2: eye,
            b2: vec![0.0; d],
            activation: Activation::Linear,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).1
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> (FusionCache, Vec<f64>) {
        let mut hidden = self.b1.clone();
        vec_mat_acc(x, &self.w1, &mut hidden);
        for h in &mut hidden {
            *h = self.activation.apply(*h);
        }
        let mut out = self.b2.clone();
        vec_mat_acc(&hidden, &self.w2, &mut out);
        (FusionCache { input: x.to_vec(), hidden }, out)
    }

    /// Accumulate parameter gradients for upstream gradient `g_out`.
    pub(crate) fn backward(&self, cache: &FusionCache, g_out: &[f64], grads: &mut FusionGrads) {
        for (b, g) in grads.b2.iter_mut().zip(g_out) {
            *b += g;
        }
        outer_acc(&cache.hidden, g_out, &mut grads.w2);
        let mut g_h = vec![0.0; self.d_b];
        mat_vec_acc(&self.w2, g_out, &mut g_h);
        for (g, &h) in g_h.iter_mut().zip(&cache.hidden) {
            *g *= self.activation.grad_from_output(h);
        }
        for (b, g) in grads.b1.iter_mut().zip(&g_h) {
            *b += g;
        }
        outer_acc(&cache.input, &g_h, &mut grads.w1);
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), GroundingError> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.d_in as u32, self.d_b as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for p in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for &x in p.iter() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a weights stream. The activation is not stored in the file.
    pub fn read_from(r: &mut impl Read, activation: Activation) -> Result<Self, GroundingError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|_| GroundingError::WeightsFormat("short header".into()))?;
        if &header[..4] != MAGIC {
            return Err(GroundingError::WeightsFormat("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        if word(4) != VERSION {
            return Err(GroundingError::WeightsFormat(format!("unsupported version {}", word(4))));
        }
        let (d_in, d_b) = (word(8) as usize, word(12) as usize);
        if d_in == 0 || d_b == 0 {
            return Err(GroundingError::WeightsFormat("zero dimension".into()));
        }
        let mut take = |n: usize| -> Result<Vec<f64>, GroundingError> {
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf).map_err(|_| GroundingError::WeightsFormat("truncated parameters".into()))?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
        };
        let w1 = take(d_in * d_b)?;
        let b1 = take(d_b)?;
        let w2 = take(d_b * d_b)?;
        let b2 = take(d_b)?;
        Ok(Self { d_in, d_b, w1, b1, w2, b2, activation })
    }

    pub fn save(&self, path: &Path) -> Result<(), GroundingError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, activation: Activation) -> Result<Self, GroundingError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f, activation)
    }
}

/// Row `l` of the result is `net([e_theta[l] ; e_tau])`.
pub fn fuse_embeddings(
    e_theta: &AppearanceEmbedding,
    e_tau: &PathEmbedding,
    net: &FusionNetwork,
) -> Result<FusedEmbedding, GroundingError> {
    let d_in = e_theta.dim() + e_tau.len();
    if d_in != net.d_in() {
        return Err(GroundingError::DimensionMismatch(format!(
            "fusion input {} + {} != {}",
            e_theta.dim(),
            e_tau.len(),
            net.d_in()
        )));
    }
    let mut out = Matrix::zeros(e_theta.rows(), net.d_b());
    let mut x = vec![0.0; d_in];
    x[e_theta.dim()..].copy_from_slice(e_tau.values());
    for l in 0..e_theta.rows() {
        x[..e_theta.dim()].copy_from_slice(e_theta.0.row(l));
        out.row_mut(l).copy_from_slice(&net.forward(&x));
    }
    Ok(FusedEmbedding(out))
}
