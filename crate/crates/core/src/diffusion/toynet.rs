//! A small convolutional x0-predictor with one grounded cross-attention block.
//!
//! ```text
//! h0 = conv3x3(x) + b + W_t0·temb(t)        a0 = tanh(h0)
//! A  = Σ_groups mask ⊙ softmax(a0 W_q (e_b W_k)ᵀ / √d) e_b W_v
//! F  = a0 + A                               (recorded features)
//! z  = tanh(F W_1 + b_1 + W_t1·temb(t))     D = z W_2 + b_2
//! ε  = (x − √ᾱ D) / √(1 − ᾱ)
//! ```
//!
//! Each primitive's tokens attend only inside its polygon; the caption tokens
//! attend where no primitive lies. With `masked = false` every token attends
//! everywhere.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conditioning, Denoiser, DifferentiableDenoiser, DiffusionError, FeatureMap, NoiseSchedule, Prediction, Tensor};
use crate::geometry::{PathParams, Point};
use crate::grounding::{
    attend_row, fourier_encode, Activation, FusionNetwork, HashTextEncoder, TextEncoder, NULL_TOKEN,
};
use crate::grounding::{FusionCache, FusionGrads};
use crate::linalg::{mat_vec_acc, outer_acc, vec_mat_acc, Matrix};

const MAGIC: &[u8; 4] = b"PCTD";
const VERSION: u32 = 1;
const TIME_FEATURES: usize = 8;
const KERNEL: usize = 9;

pub const FEATURE_TAG: &str = "post-attention hidden";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub attn_dim: usize,
    pub hidden: usize,
    pub d_theta: usize,
    pub d_b: usize,
    pub num_freqs: usize,
    pub max_vertices: usize,
    pub masked: bool,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 16,
            attn_dim: 16,
            hidden: 32,
            d_theta: HashTextEncoder::DEFAULT_DIM,
            d_b: 64,
            num_freqs: 8,
            max_vertices: 6,
            masked: true,
            seed: 0,
        }
    }
}

impl ToyConfig {
    fn tau_len(&self) -> usize {
        4 + 2 * self.max_vertices
    }

    fn fusion_in(&self) -> usize {
        self.d_theta + 2 * self.num_freqs * self.tau_len()
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    cfg: ToyConfig,
    encoder: HashTextEncoder,
    pub(crate) fusion: FusionNetwork,
    pub(crate) p: Params,
}

/// Everything except the fusion network, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    pub te0: Vec<f64>,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub h1: Vec<f64>,
    pub b1: Vec<f64>,
    pub te1: Vec<f64>,
    pub h2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Params {
    fn zeros_like(o: &Params) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Self {
            conv_w: z(&o.conv_w),
            conv_b: z(&o.conv_b),
            te0: z(&o.te0),
            wq: z(&o.wq),
            wk: z(&o.wk),
            wv: z(&o.wv),
            h1: z(&o.h1),
            b1: z(&o.b1),
            te1: z(&o.te1),
            h2: z(&o.h2),
            b2: z(&o.b2),
        }
    }

    fn tensors(&self) -> [&Vec<f64>; 11] {
        [&self.conv_w, &self.conv_b, &self.te0, &self.wq, &self.wk, &self.wv, &self.h1, &self.b1, &self.te1, &self.h2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 11] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.te0,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.h1,
            &mut self.b1,
            &mut self.te1,
            &mut self.h2,
            &mut self.b2,
        ]
    }
}

/// Parameter gradients of a [`ToyDenoiser`].
#[derive(Debug, Clone)]
pub(crate) struct ToyGrads {
    pub fusion: FusionGrads,
    pub p: Params,
}

impl ToyGrads {
    pub fn zeros_like(net: &ToyDenoiser) -> Self {
        Self { fusion: FusionGrads::zeros_like(&net.fusion), p: Params::zeros_like(&net.p) }
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let f = &self.fusion;
        let mut v = vec![&f.w1, &f.b1, &f.w2, &f.b2];
        v.extend(self.p.tensors());
        v
    }

    pub fn scale(&mut self, a: f64) {
        let f = &mut self.fusion;
        for t in [&mut f.w1, &mut f.b1, &mut f.w2, &mut f.b2].into_iter().chain(self.p.tensors_mut()) {
            t.iter_mut().for_each(|x| *x *= a);
        }
    }
}

/// Tokens sharing one attention softmax and the pixels they write to.
pub(crate) struct Group {
    caches: Vec<FusionCache>,
    eb: Matrix,
    k: Matrix,
    v: Matrix,
    pixels: Vec<usize>,
}

/// Conditioning turned into attention groups.
pub(crate) struct Encoded {
    groups: Vec<Group>,
    /// Whether the caption slot holds the null token.
    pub null_caption: bool,
}

pub(crate) struct ForwardCache {
    temb: [f64; TIME_FEATURES],
    a0: Vec<f64>,
    q: Vec<f64>,
    weights: Vec<Vec<f64>>,
    f: Vec<f64>,
    z: Vec<f64>,
    pub d: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

fn time_embedding(t: usize, t_max: usize) -> [f64; TIME_FEATURES] {
    let s = t as f64 / t_max as f64;
    let mut e = [0.0; TIME_FEATURES];
    for j in 0..TIME_FEATURES / 2 {
        let f = std::f64::consts::PI * (1u32 << j) as f64;
        e[j] = (f * s).sin();
        e[j + TIME_FEATURES / 2] = (f * s).cos();
    }
    e
}

impl ToyDenoiser {
    pub fn new(cfg: ToyConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.channels;
        let p = Params {
            conv_w: uniform(&mut rng, KERNEL * 3 * c, KERNEL * 3),
            conv_b: uniform(&mut rng, c, KERNEL * 3),
            te0: uniform(&mut rng, TIME_FEATURES * c, TIME_FEATURES),
            wq: uniform(&mut rng, c * cfg.attn_dim, c),
            wk: uniform(&mut rng, cfg.d_b * cfg.attn_dim, cfg.d_b),
            wv: uniform(&mut rng, cfg.d_b * c, cfg.d_b),
            h1: uniform(&mut rng, c * cfg.hidden, c),
            b1: uniform(&mut rng, cfg.hidden, c),
            te1: uniform(&mut rng, TIME_FEATURES * cfg.hidden, TIME_FEATURES),
            h2: uniform(&mut rng, cfg.hidden * 3, cfg.hidden),
            b2: uniform(&mut rng, 3, cfg.hidden),
        };
        let fusion = FusionNetwork::new_seeded(cfg.fusion_in(), cfg.d_b, Activation::Tanh, rng.random());
        Self { cfg, encoder: HashTextEncoder::new(cfg.d_theta), fusion, p }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn fusion(&self) -> &FusionNetwork {
        &self.fusion
    }

    /// Copy of this network with the attention masks switched on or off.
    pub fn with_masking(&self, masked: bool) -> Self {
        let mut n = self.clone();
        n.cfg.masked = masked;
        n
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = self.fusion.params_mut().into_iter().collect();
        v.extend(self.p.tensors_mut());
        v
    }

    fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.fusion.w1, &self.fusion.b1, &self.fusion.w2, &self.fusion.b2];
        v.extend(self.p.tensors());
        v
    }

    fn group(&self, rows: Vec<(Vec<f64>, Vec<f64>)>, pixels: Vec<usize>) -> Group {
        let (d_b, d, c) = (self.cfg.d_b, self.cfg.attn_dim, self.cfg.channels);
        let mut eb = Matrix::zeros(rows.len(), d_b);
        let mut k = Matrix::zeros(rows.len(), d);
        let mut v = Matrix::zeros(rows.len(), c);
        let mut caches = Vec::with_capacity(rows.len());
        for (i, (theta, tau)) in rows.into_iter().enumerate() {
            let mut input = theta;
            input.extend_from_slice(&tau);
            let (cache, out) = self.fusion.forward_cached(&input);
            vec_mat_acc(&out, &self.p.wk, k.row_mut(i));
            vec_mat_acc(&out, &self.p.wv, v.row_mut(i));
            eb.row_mut(i).copy_from_slice(&out);
            caches.push(cache);
        }
        Group { caches, eb, k, v, pixels }
    }

    fn tau_features(&self, path: &PathParams) -> Result<Vec<f64>, DiffusionError> {
        if path.vertex_count() > self.cfg.max_vertices {
            return Err(DiffusionError::Conditioning(format!(
                "{} vertices exceed the encoder limit of {}",
                path.vertex_count(),
                self.cfg.max_vertices
            )));
        }
        let tau = path.normalized_tau(self.cfg.width as f64, self.cfg.height as f64, self.cfg.max_vertices);
        Ok(fourier_encode(&tau, self.cfg.num_freqs)?.0)
    }

    pub(crate) fn encode(&self, cond: &Conditioning) -> Result<Encoded, DiffusionError> {
        let (w, h) = (self.cfg.width as f64, self.cfg.height as f64);
        let canvas = PathParams::from_points(vec![
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(w, h),
            Point::new(0.0, h),
        ])
        .expect("canvas rectangle");
        let canvas_tau = self.tau_features(&canvas)?;
        let all: Vec<usize> = (0..self.cfg.pixels()).collect();
        let null_rows = || vec![(self.encoder.encode_token(NULL_TOKEN), canvas_tau.clone())];

        let (scene, drop_caption) = match cond {
            Conditioning::Scene { scene, drop_caption } if !scene.primitives.is_empty() => (scene, *drop_caption),
            _ => return Ok(Encoded { groups: vec![self.group(null_rows(), all)], null_caption: true }),
        };
        if (scene.canvas_w, scene.canvas_h) != (self.cfg.width, self.cfg.height) {
            return Err(DiffusionError::Conditioning(format!(
                "scene canvas {}x{} does not match the model's {}x{}",
                scene.canvas_w, scene.canvas_h, self.cfg.width, self.cfg.height
            )));
        }
        let null_caption = drop_caption || scene.global_caption.trim().is_empty();
        let global_rows = if null_caption {
            null_rows()
        } else {
            scene
                .global_caption
                .split_whitespace()
                .map(|t| (self.encoder.encode_token(t), canvas_tau.clone()))
                .collect()
        };

        let mut prim_rows = Vec::with_capacity(scene.primitives.len());
        let mut masks = Vec::with_capacity(scene.primitives.len());
        for p in &scene.primitives {
            let tau = self.tau_features(&p.path)?;
            prim_rows.push(p.appearance.tokens().iter().map(|t| (self.encoder.encode_token(t), tau.clone())).collect::<Vec<_>>());
            masks.push(p.rasterize(self.cfg.width, self.cfg.height).map_err(|e| DiffusionError::Conditioning(e.to_string()))?);
        }

        let groups = if self.cfg.masked {
            let mut covered = vec![false; self.cfg.pixels()];
            let mut groups = Vec::with_capacity(masks.len() + 1);
            for (rows, m) in prim_rows.into_iter().zip(&masks) {
                let px: Vec<usize> = m.cells().iter().enumerate().filter(|(_, &c)| c != 0).map(|(i, _)| i).collect();
                for &i in &px {
                    covered[i] = true;
                }
                groups.push(self.group(rows, px));
            }
            let rest: Vec<usize> = (0..self.cfg.pixels()).filter(|&i| !covered[i]).collect();
            groups.push(self.group(global_rows, rest));
            groups
        } else {
            let mut rows: Vec<_> = prim_rows.into_iter().flatten().collect();
            rows.extend(global_rows);
            vec![self.group(rows, all)]
        };
        Ok(Encoded { groups, null_caption })
    }

    pub(crate) fn forward(&self, x: &[f64], t: usize, t_max: usize, enc: &Encoded) -> ForwardCache {
        let cfg = &self.cfg;
        let (hgt, wid, c, d, hid) = (cfg.height, cfg.width, cfg.channels, cfg.attn_dim, cfg.hidden);
        let n = hgt * wid;
        let temb = time_embedding(t, t_max);

        let mut bias0 = self.p.conv_b.clone();
        vec_mat_acc(&temb, &self.p.te0, &mut bias0);
        let mut a0 = vec![0.0; n * c];
        for r in 0..hgt {
            for col in 0..wid {
                let out = &mut a0[(r * wid + col) * c..(r * wid + col + 1) * c];
                out.copy_from_slice(&bias0);
                for (kk, (ky, kx)) in kernel_offsets().enumerate() {
                    let (rr, cc) = (r as isize + ky, col as isize + kx);
                    if rr < 0 || cc < 0 || rr >= hgt as isize || cc >= wid as isize {
                        continue;
                    }
                    let src = (rr as usize * wid + cc as usize) * 3;
                    vec_mat_acc(&x[src..src + 3], &self.p.conv_w[kk * 3 * c..(kk + 1) * 3 * c], out);
                }
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }

        let mut q = vec![0.0; n * d];
        for p in 0..n {
            vec_mat_acc(&a0[p * c..(p + 1) * c], &self.p.wq, &mut q[p * d..(p + 1) * d]);
        }

        let scale = 1.0 / (d as f64).sqrt();
        let mut f = a0.clone();
        let mut weights = Vec::with_capacity(enc.groups.len());
        for g in &enc.groups {
            let m = g.k.rows();
            let mut wg = vec![0.0; g.pixels.len() * m];
            for (pi, &p) in g.pixels.iter().enumerate() {
                attend_row(&q[p * d..(p + 1) * d], &g.k, &g.v, scale, &mut wg[pi * m..(pi + 1) * m], &mut f[p * c..(p + 1) * c]);
            }
            weights.push(wg);
        }

        let mut bias1 = self.p.b1.clone();
        vec_mat_acc(&temb, &self.p.te1, &mut bias1);
        let mut z = vec![0.0; n * hid];
        let mut out = vec![0.0; n * 3];
        for p in 0..n {
            let zp = &mut z[p * hid..(p + 1) * hid];
            zp.copy_from_slice(&bias1);
            vec_mat_acc(&f[p * c..(p + 1) * c], &self.p.h1, zp);
            zp.iter_mut().for_each(|v| *v = v.tanh());
            let op = &mut out[p * 3..(p + 1) * 3];
            op.copy_from_slice(&self.p.b2);
            vec_mat_acc(zp, &self.p.h2, op);
        }
        ForwardCache { temb, a0, q, weights, f, z, d: out }
    }

    /// Backpropagate `g_d` (gradient w.r.t. the x0 prediction) and/or `g_f`
    /// (gradient w.r.t. the features). Parameter gradients are accumulated
    /// into `grads` when given; the input gradient is returned when asked for.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        enc: &Encoded,
        fc: &ForwardCache,
        g_d: Option<&[f64]>,
        g_f: Option<&[f64]>,
        mut grads: Option<&mut ToyGrads>,
        want_gx: bool,
    ) -> Option<Vec<f64>> {
        let cfg = &self.cfg;
        let (hgt, wid, c, d, hid) = (cfg.height, cfg.width, cfg.channels, cfg.attn_dim, cfg.hidden);
        let n = hgt * wid;
        let mut gf = g_f.map_or_else(|| vec![0.0; n * c], <[f64]>::to_vec);

        if let Some(g_d) = g_d {
            let mut gz = vec![0.0; hid];
            let mut sum_gu = vec![0.0; hid];
            for p in 0..n {
                let gdp = &g_d[p * 3..(p + 1) * 3];
                let zp = &fc.z[p * hid..(p + 1) * hid];
                gz.iter_mut().for_each(|v| *v = 0.0);
                mat_vec_acc(&self.p.h2, gdp, &mut gz);
                for (g, &zv) in gz.iter_mut().zip(zp) {
                    *g *= 1.0 - zv * zv;
                }
                if let Some(gr) = grads.as_deref_mut() {
                    for (b, g) in gr.p.b2.iter_mut().zip(gdp) {
                        *b += g;
                    }
                    outer_acc(zp, gdp, &mut gr.p.h2);
                    for (b, g) in gr.p.b1.iter_mut().zip(&gz) {
                        *b += g;
                    }
                    outer_acc(&fc.f[p * c..(p + 1) * c], &gz, &mut gr.p.h1);
                    for (s, g) in sum_gu.iter_mut().zip(&gz) {
                        *s += g;
                    }
                }
                mat_vec_acc(&self.p.h1, &gz, &mut gf[p * c..(p + 1) * c]);
            }
            if let Some(gr) = grads.as_deref_mut() {
                outer_acc(&fc.temb, &sum_gu, &mut gr.p.te1);
            }
        }

        // Attention: only the queries depend on x; keys and values depend on parameters.
        let scale = 1.0 / (d as f64).sqrt();
        let mut gq = vec![0.0; n * d];
        for (g, wg) in enc.groups.iter().zip(&fc.weights) {
            let m = g.k.rows();
            let mut gk = Matrix::zeros(m, d);
            let mut gv = Matrix::zeros(m, c);
            let mut gw = vec![0.0; m];
            for (pi, &p) in g.pixels.iter().enumerate() {
                let w = &wg[pi * m..(pi + 1) * m];
                let ga = &gf[p * c..(p + 1) * c];
                let mut s = 0.0;
                for j in 0..m {
                    gw[j] = ga.iter().zip(g.v.row(j)).map(|(a, b)| a * b).sum::<f64>();
                    s += w[j] * gw[j];
                }
                let qp = &fc.q[p * d..(p + 1) * d];
                let gqp = &mut gq[p * d..(p + 1) * d];
                for j in 0..m {
                    let gl = w[j] * (gw[j] - s) * scale;
                    for (o, &kv) in gqp.iter_mut().zip(g.k.row(j)) {
                        *o += gl * kv;
                    }
                    if grads.is_some() {
                        for (o, &qv) in gk.row_mut(j).iter_mut().zip(qp) {
                            *o += gl * qv;
                        }
                        for (o, &av) in gv.row_mut(j).iter_mut().zip(ga) {
                            *o += w[j] * av;
                        }
                    }
                }
            }
            if let Some(gr) = grads.as_deref_mut() {
                for j in 0..m {
                    let mut geb = vec![0.0; cfg.d_b];
                    mat_vec_acc(&self.p.wk, gk.row(j), &mut geb);
                    mat_vec_acc(&self.p.wv, gv.row(j), &mut geb);
                    outer_acc(g.eb.row(j), gk.row(j), &mut gr.p.wk);
                    outer_acc(g.eb.row(j), gv.row(j), &mut gr.p.wv);
                    self.fusion.backward(&g.caches[j], &geb, &mut gr.fusion);
                }
            }
        }

        let mut gh0 = gf;
        for p in 0..n {
            let gqp = &gq[p * d..(p + 1) * d];
            let a0p = &fc.a0[p * c..(p + 1) * c];
            if let Some(gr) = grads.as_deref_mut() {
                outer_acc(a0p, gqp, &mut gr.p.wq);
            }
            let ghp = &mut gh0[p * c..(p + 1) * c];
            mat_vec_acc(&self.p.wq, gqp, ghp);
            for (g, &a) in ghp.iter_mut().zip(a0p) {
                *g *= 1.0 - a * a;
            }
        }

        if let Some(gr) = grads.as_deref_mut() {
            let mut sum = vec![0.0; c];
            for p in 0..n {
                for (s, g) in sum.iter_mut().zip(&gh0[p * c..(p + 1) * c]) {
                    *s += g;
                }
            }
            for (b, s) in gr.p.conv_b.iter_mut().zip(&sum) {
                *b += s;
            }
            outer_acc(&fc.temb, &sum, &mut gr.p.te0);
        }
        let mut gx = want_gx.then(|| vec![0.0; n * 3]);
        if grads.is_none() && gx.is_none() {
            return None;
        }
        for r in 0..hgt {
            for col in 0..wid {
                let ghp = &gh0[(r * wid + col) * c..(r * wid + col + 1) * c];
                for (kk, (ky, kx)) in kernel_offsets().enumerate() {
                    let (rr, cc) = (r as isize + ky, col as isize + kx);
                    if rr < 0 || cc < 0 || rr >= hgt as isize || cc >= wid as isize {
                        continue;
                    }
                    let src = (rr as usize * wid + cc as usize) * 3;
                    let block = kk * 3 * c..(kk + 1) * 3 * c;
                    if let Some(gr) = grads.as_deref_mut() {
                        outer_acc(&x[src..src + 3], ghp, &mut gr.p.conv_w[block.clone()]);
                    }
                    if let Some(gx) = gx.as_mut() {
                        mat_vec_acc(&self.p.conv_w[block], ghp, &mut gx[src..src + 3]);
                    }
                }
            }
        }
        gx
    }

    fn shape(&self) -> [usize; 3] {
        [self.cfg.height, self.cfg.width, 3]
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), DiffusionError> {
        let json = serde_json::to_vec(&self.cfg).map_err(|e| DiffusionError::Weights(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for t in self.tensors() {
            for &v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, DiffusionError> {
        let bad = |m: &str| DiffusionError::Weights(m.to_string());
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| bad("short header"))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if u32::from_le_bytes(head[4..8].try_into().unwrap()) != VERSION {
            return Err(bad("unsupported version"));
        }
        let len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated config"))?;
        let cfg: ToyConfig = serde_json::from_slice(&json).map_err(|e| DiffusionError::Weights(e.to_string()))?;
        let mut net = ToyDenoiser::new(cfg);
        for t in net.tensors_mut() {
            let mut buf = vec![0u8; 8 * t.len()];
            r.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            for (v, chunk) in t.iter_mut().zip(buf.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), DiffusionError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiffusionError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    fn eps_from_x0(x: &[f64], d: &[f64], alpha_bar: f64) -> Vec<f64> {
        if alpha_bar >= 1.0 {
            return vec![0.0; x.len()];
        }
        let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
        x.iter().zip(d).map(|(xv, dv)| (xv - sa * dv) / sn).collect()
    }
}

fn kernel_offsets() -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(|ky| (-1..=1).map(move |kx| (ky, kx)))
}

impl Denoiser for ToyDenoiser {
    fn sample_shape(&self) -> Vec<usize> {
        self.shape().to_vec()
    }

    fn predict(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
    ) -> Result<Prediction, DiffusionError> {
        x.check_shape(&self.shape())?;
        let enc = self.encode(cond)?;
        let fc = self.forward(x.as_slice(), t, schedule.t_max(), &enc);
        let eps = Self::eps_from_x0(x.as_slice(), &fc.d, schedule.alpha_bar(t));
        let features = FeatureMap {
            height: self.cfg.height,
            width: self.cfg.width,
            channels: self.cfg.channels,
            data: fc.f,
            tag: FEATURE_TAG,
        };
        Ok(Prediction { eps: Tensor::from_vec(x.shape(), eps)?, features: Some(features) })
    }
}

impl DifferentiableDenoiser for ToyDenoiser {
    fn feature_vjp(
        &self,
        x: &Tensor,
        t: usize,
        schedule: &NoiseSchedule,
        cond: &Conditioning,
        grad_features: &[f64],
    ) -> Result<Tensor, DiffusionError> {
        x.check_shape(&self.shape())?;
        let n = self.cfg.pixels() * self.cfg.channels;
        if grad_features.len() != n {
            return Err(DiffusionError::ShapeMismatch { expected: vec![n], got: vec![grad_features.len()] });
        }
        let enc = self.encode(cond)?;
        let fc = self.forward(x.as_slice(), t, schedule.t_max(), &enc);
        let gx = self.backward(x.as_slice(), &enc, &fc, None, Some(grad_features), None, true).expect("input gradient");
        Tensor::from_vec(x.shape(), gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::dataset::make_fixed_count_dataset;

    fn small() -> ToyConfig {
        ToyConfig { height: 8, width: 8, channels: 4, attn_dim: 3, hidden: 5, d_theta: 6, d_b: 5, num_freqs: 2, ..ToyConfig::default() }
    }

    fn scene8() -> crate::scene::LayoutScene {
        let mut s = make_fixed_count_dataset(1, 4, 32, 2).remove(0).scene;
        s.canvas_w = 8;
        s.canvas_h = 8;
        for p in &mut s.primitives {
            p.path = PathParams::from_points(p.path.clip_points().iter().map(|q| Point::new(q.x / 4.0, q.y / 4.0)).collect()).unwrap();
        }
        s
    }

    fn probe(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn loss(net: &ToyDenoiser, x: &[f64], enc: &Encoded, w: &[f64]) -> f64 {
        let fc = net.forward(x, 37, 100, enc);
        fc.d.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for masked in [true, false] {
            let net = ToyDenoiser::new(ToyConfig { masked, ..small() });
            let scene = scene8();
            let cond = Conditioning::scene(&scene);
            let x = probe(8 * 8 * 3, 1);
            let w = probe(8 * 8 * 3, 2);
            let enc = net.encode(&cond).unwrap();
            let fc = net.forward(&x, 37, 100, &enc);
            let mut grads = ToyGrads::zeros_like(&net);
            net.backward(&x, &enc, &fc, Some(&w), None, Some(&mut grads), false);
            let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().cloned().collect();
            let h = 1e-6;
            for (ti, g) in analytic.iter().enumerate() {
                for idx in [0, g.len() / 2, g.len() - 1] {
                    let mut p = net.clone();
                    p.tensors_mut()[ti][idx] += h;
                    let mut m = net.clone();
                    m.tensors_mut()[ti][idx] -= h;
                    let fd = (loss(&p, &x, &p.encode(&cond).unwrap(), &w) - loss(&m, &x, &m.encode(&cond).unwrap(), &w)) / (2.0 * h);
                    assert!((fd - g[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "tensor {ti} idx {idx}: {fd} vs {}", g[idx]);
                }
            }
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let net = ToyDenoiser::new(small());
        let scene = scene8();
        let cond = Conditioning::scene(&scene);
        let x = probe(8 * 8 * 3, 3);
        let gfeat = probe(8 * 8 * 4, 4);
        let s = NoiseSchedule::cosine(100).unwrap();
        let xt = Tensor::from_vec(&[8, 8, 3], x.clone()).unwrap();
        let gx = net.feature_vjp(&xt, 20, &s, &cond, &gfeat).unwrap();
        let feat = |v: &[f64]| -> f64 {
            let t = Tensor::from_vec(&[8, 8, 3], v.to_vec()).unwrap();
            let f = net.predict(&t, 20, &s, &cond).unwrap().features.unwrap();
            f.data.iter().zip(&gfeat).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for idx in [0, 50, 191] {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            let fd = (feat(&p) - feat(&m)) / (2.0 * h);
            assert!((fd - gx.as_slice()[idx]).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn masked_features_outside_polygons_ignore_primitive_tokens() {
        let net = ToyDenoiser::new(small());
        let scene = scene8();
        let mut other = scene.clone();
        other.primitives[0].appearance =
            crate::scene::AppearanceDescription::parse("hexagon magenta").unwrap();
        let s = NoiseSchedule::cosine(100).unwrap();
        let x = Tensor::from_vec(&[8, 8, 3], probe(192, 5)).unwrap();
        let a = net.predict(&x, 50, &s, &Conditioning::scene(&scene)).unwrap().features.unwrap();
        let b = net.predict(&x, 50, &s, &Conditioning::scene(&other)).unwrap().features.unwrap();
        let m = scene.primitives[0].rasterize(8, 8).unwrap();
        let mut changed_inside = false;
        for p in 0..64 {
            if m.cells()[p] == 0 {
                assert_eq!(a.at(p), b.at(p));
            } else if a.at(p) != b.at(p) {
                changed_inside = true;
            }
        }
        assert!(changed_inside);
    }

    #[test]
    fn empty_scene_is_null_conditioning() {
        let net = ToyDenoiser::new(small());
        let s = NoiseSchedule::cosine(100).unwrap();
        let x = Tensor::from_vec(&[8, 8, 3], probe(192, 6)).unwrap();
        let empty = crate::scene::LayoutScene::new(8, 8, "a red square");
        let a = net.predict(&x, 10, &s, &Conditioning::scene(&empty)).unwrap();
        let b = net.predict(&x, 10, &s, &Conditioning::Null).unwrap();
        assert_eq!(a.eps, b.eps);
    }

    #[test]
    fn canvas_mismatch_rejected() {
        let net = ToyDenoiser::new(small());
        let s = NoiseSchedule::cosine(100).unwrap();
        let scene = make_fixed_count_dataset(1, 4, 32, 1).remove(0).scene;
        let x = Tensor::zeros(&[8, 8, 3]);
        assert!(matches!(net.predict(&x, 10, &s, &Conditioning::scene(&scene)), Err(DiffusionError::Conditioning(_))));
    }

    #[test]
    fn weights_round_trip() {
        let net = ToyDenoiser::new(ToyConfig { seed: 3, ..small() });
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = ToyDenoiser::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.p, net.p);
        assert_eq!(back.fusion, net.fusion);
        assert_eq!(back.cfg, net.cfg);
        buf.push(0);
        assert!(ToyDenoiser::read_from(&mut buf.as_slice()).is_err());
        assert!(ToyDenoiser::read_from(&mut &buf[..30]).is_err());
    }
}
