use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::linalg::Matrix;

/// Token used in place of an absent caption or a dropped conditioning.
pub const NULL_TOKEN: &str = "<null>";

/// Per-token appearance embeddings, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceEmbedding(pub Matrix);

impl AppearanceEmbedding {
    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

/// Maps appearance tokens to fixed-width vectors.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode_token(&self, token: &str) -> Vec<f64>;

    fn encode(&self, tokens: &[String]) -> AppearanceEmbedding {
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.encode_token(t)).collect();
        if rows.is_empty() {
            return AppearanceEmbedding(Matrix::zeros(0, self.dim()));
        }
        AppearanceEmbedding(Matrix::from_rows(&rows))
    }
}

/// Deterministic stub encoder: the token's SHA-256 digest seeds a generator
/// that draws `dim` values from `N(0, 1) / 8`.
#[derive(Debug, Clone, Copy)]
pub struct HashTextEncoder {
    dim: usize,
}

impl HashTextEncoder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for HashTextEncoder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl TextEncoder for HashTextEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_token(&self, token: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z / 8.0
            })
            .collect()
    }
}
