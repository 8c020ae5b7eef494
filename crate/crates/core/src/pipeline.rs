//! End-to-end stages shared by the command-line tool and the tests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{PipelineConfig, PlannerKind};
use crate::diffusion::dataset::{make_fixed_count_dataset, make_synthetic_dataset};
use crate::diffusion::toynet::ToyDenoiser;
use crate::diffusion::train::{train_toy_denoiser, TrainReport};
use crate::diffusion::{ddim_invert, ddim_sample, CfgDenoiser, Conditioning, NoiseSchedule, Tensor, Trajectory};
use crate::eval::{evaluate_layout_adherence, median, LayoutAdherenceReport};
use crate::fit::fit_scene;
use crate::guidance::{GuidanceContext, GuidedRun};
use crate::image::RgbImage;
use crate::palette::shape_name;
use crate::planner::{plan, scene_to_layout_text, MockBackend, PlannerBackend, PromptTemplate, RemoteBackend, RemoteConfig};
use crate::scene::LayoutScene;

/// Whether a failure came from the caller's data or from the run itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    BadInput,
    Runtime,
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn runtime(stage: &'static str, e: impl ToString) -> Self {
        Self { stage, kind: FailureKind::Runtime, message: e.to_string() }
    }

    pub fn bad_input(stage: &'static str, e: impl ToString) -> Self {
        Self { stage, kind: FailureKind::BadInput, message: e.to_string() }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Seed for the `k`-th independent stream derived from `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn noise_schedule(cfg: &PipelineConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::cosine(cfg.t_max).map_err(|e| PipelineError::runtime("schedule", e))
}

/// Train on a fresh synthetic dataset drawn from `cfg.train.seed`.
pub fn train_model(cfg: &PipelineConfig) -> Result<(ToyDenoiser, TrainReport)> {
    let schedule = noise_schedule(cfg)?;
    let data = make_synthetic_dataset(cfg.train_scenes, cfg.train.seed, cfg.canvas);
    train_toy_denoiser(&data, &schedule, cfg.model_config(), &cfg.train_config())
        .map_err(|e| PipelineError::runtime("train", e))
}

/// Load `cfg.weights` if present, otherwise train and save there.
pub fn load_or_train(cfg: &PipelineConfig) -> Result<(ToyDenoiser, Option<TrainReport>)> {
    if cfg.weights.exists() {
        let net = ToyDenoiser::load(&cfg.weights).map_err(|e| PipelineError::bad_input("load weights", e))?;
        if net.config().height != cfg.canvas || net.config().width != cfg.canvas {
            return Err(PipelineError::bad_input(
                "load weights",
                format!("weights are for a {}x{} canvas, config says {}", net.config().width, net.config().height, cfg.canvas),
            ));
        }
        return Ok((net, None));
    }
    let (net, report) = train_model(cfg)?;
    if let Some(dir) = cfg.weights.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::runtime("save weights", e))?;
    }
    net.save(&cfg.weights).map_err(|e| PipelineError::runtime("save weights", e))?;
    Ok((net, Some(report)))
}

/// Layout-conditioned sampling with classifier-free guidance only.
pub fn sample_layout(net: &ToyDenoiser, scene: &LayoutScene, cfg: &PipelineConfig, seed: u64) -> Result<RgbImage> {
    let schedule = noise_schedule(cfg)?;
    let x_t = Tensor::standard_normal(&[scene.canvas_h, scene.canvas_w, 3], seed);
    let cfg_net = CfgDenoiser::new(net, cfg.guidance.omega);
    let (x0, _) = ddim_sample(&cfg_net, &Conditioning::scene(scene), &schedule, cfg.guidance.sample_steps, &x_t, false)
        .map_err(|e| PipelineError::runtime("sample", e))?;
    Ok(RgbImage::from_tensor(&x0))
}

fn check_canvas(stage: &'static str, scene: &LayoutScene, net: &ToyDenoiser) -> Result<()> {
    let c = net.config();
    if (scene.canvas_w, scene.canvas_h) != (c.width, c.height) {
        return Err(PipelineError::bad_input(
            stage,
            format!("scene canvas {}x{} does not match the model's {}x{}", scene.canvas_w, scene.canvas_h, c.width, c.height),
        ));
    }
    Ok(())
}

/// Structure- and appearance-guided generation.
pub fn generate(
    net: &ToyDenoiser,
    scene: &LayoutScene,
    condition: Option<&RgbImage>,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<GuidedRun> {
    check_canvas("generate", scene, net)?;
    if let Some(c) = condition {
        if (c.width, c.height) != (scene.canvas_w, scene.canvas_h) {
            return Err(PipelineError::bad_input("generate", "condition image size differs from the scene canvas"));
        }
    }
    let schedule = noise_schedule(cfg)?;
    let g = cfg.guidance_config();
    let cond = condition.map(RgbImage::to_tensor);
    let ctx = GuidanceContext::prepare(net, scene, cond.as_ref(), &g, &schedule, seed)
        .map_err(|e| PipelineError::runtime("guidance setup", e))?;
    let x_t = Tensor::standard_normal(&[scene.canvas_h, scene.canvas_w, 3], seed);
    ctx.run(net, scene, &x_t, &g, &schedule).map_err(|e| PipelineError::runtime("guided sampling", e))
}

/// DDIM inversion of `image` under the scene's conditioning.
pub fn invert(net: &ToyDenoiser, image: &RgbImage, scene: &LayoutScene, cfg: &PipelineConfig) -> Result<(Tensor, Trajectory)> {
    check_canvas("invert", scene, net)?;
    if (image.width, image.height) != (scene.canvas_w, scene.canvas_h) {
        return Err(PipelineError::bad_input("invert", "image size differs from the scene canvas"));
    }
    let schedule = noise_schedule(cfg)?;
    ddim_invert(&image.to_tensor(), net, &Conditioning::scene(scene), &schedule, &cfg.inversion_config())
        .map_err(|e| PipelineError::runtime("invert", e))
}

/// Header `(ndim: u32, dims: u32...)` followed by little-endian f32 values.
pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * (t.len() + 4));
    buf.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend((d as u32).to_le_bytes());
    }
    for &v in t.as_slice() {
        buf.extend((v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| PipelineError::runtime("write tensor", format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdherenceSummary {
    pub seed: u64,
    pub scenes: usize,
    pub median_precision: f64,
    pub median_recall: f64,
    pub median_accuracy: f64,
}

/// `cfg.eval_scenes` two-object test scenes for `seed`.
pub fn evaluation_scenes(cfg: &PipelineConfig, seed: u64) -> Vec<LayoutScene> {
    make_fixed_count_dataset(cfg.eval_scenes, derive_seed(seed, 0xE5A1), cfg.canvas, 2)
        .into_iter()
        .map(|s| s.scene)
        .collect()
}

/// Sample each scene once and score it.
pub fn adherence_over(
    net: &ToyDenoiser,
    scenes: &[LayoutScene],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(AdherenceSummary, Vec<LayoutAdherenceReport>)> {
    let mut reports = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let img = sample_layout(net, scene, cfg, derive_seed(seed, i as u64 + 1))?;
        reports.push(
            evaluate_layout_adherence(&img, scene, cfg.eval_tolerance).map_err(|e| PipelineError::bad_input("evaluate", e))?,
        );
    }
    let col = |f: fn(&LayoutAdherenceReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    let summary = AdherenceSummary {
        seed,
        scenes: scenes.len(),
        median_precision: col(|r| r.precision),
        median_recall: col(|r| r.recall),
        median_accuracy: col(|r| r.accuracy),
    };
    Ok((summary, reports))
}

/// Side-by-side tiles with a one-pixel gray gutter.
pub fn tile_images(images: &[RgbImage], columns: usize) -> RgbImage {
    let (w, h) = images.first().map_or((1, 1), |i| (i.width, i.height));
    let cols = columns.max(1).min(images.len().max(1));
    let rows = images.len().div_ceil(cols).max(1);
    let mut out = RgbImage::filled(cols * (w + 1) - 1, rows * (h + 1) - 1, [0.5; 3]);
    for (n, img) in images.iter().enumerate() {
        let (r0, c0) = ((n / cols) * (h + 1), (n % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                out.set_pixel((r0 + y) * out.width + c0 + x, img.pixel(y * w + x));
            }
        }
    }
    out
}

pub fn planner_backend(cfg: &PipelineConfig) -> Result<Box<dyn PlannerBackend>> {
    Ok(match cfg.planner {
        PlannerKind::Mock => Box::new(MockBackend::new(&cfg.fixtures)),
        PlannerKind::Remote => {
            let base = RemoteConfig::from_env().map_err(|e| PipelineError::bad_input("planner", e))?;
            Box::new(
                RemoteBackend::new(RemoteConfig {
                    timeout: std::time::Duration::from_secs(cfg.planner_timeout_secs),
                    retries: cfg.planner_retries,
                    max_in_flight: cfg.planner_max_in_flight,
                    ..base
                })
                .map_err(|e| PipelineError::bad_input("planner", e))?,
            )
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub appearance: String,
    pub k: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuidedSummary {
    pub guided_steps: usize,
    pub final_g_sf: f64,
    pub final_g_sb: f64,
    pub final_g_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub trained: bool,
    pub final_train_loss: Option<f64>,
    pub fits: Vec<FitSummary>,
    pub planned_primitives: usize,
    pub guided: GuidedSummary,
    pub adherence: Vec<AdherenceSummary>,
    pub median_precision: f64,
    pub median_recall: f64,
}

/// Number of evaluation seeds in the demo.
pub const DEMO_EVAL_SEEDS: u64 = 3;

fn io<'a>(stage: &'static str, path: &'a Path) -> impl Fn(std::io::Error) -> PipelineError + 'a {
    move |e| PipelineError::runtime(stage, format!("{}: {e}", path.display()))
}

/// Dataset preview, polygon fits, a planned scene, a guided generation and
/// the adherence report, all written under `out`. Returns the report and the
/// wall-clock time in seconds.
pub fn run_demo(cfg: &PipelineConfig, out: &Path) -> Result<(DemoReport, f64)> {
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(io("demo", out))?;
    let seed = cfg.seed;

    let samples = make_fixed_count_dataset(8, derive_seed(seed, 1), cfg.canvas, 2);
    let grid = tile_images(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>(), 4);
    let p = out.join("dataset_grid.ppm");
    grid.save_ppm(&p).map_err(|e| PipelineError::runtime("dataset", e))?;
    log::info!("dataset preview written after {:.1}s", start.elapsed().as_secs_f64());

    let first = &samples[0].scene;
    let masks = first.masks().map_err(|e| PipelineError::runtime("fit", e))?;
    let captions: Vec<String> = first.primitives.iter().map(|p| p.appearance.text()).collect();
    let pso = crate::fit::PsoConfig { seed: derive_seed(seed, 2), ..cfg.pso };
    let (fitted, fits) = fit_scene(&masks, &captions, &pso).map_err(|e| PipelineError::runtime("fit", e))?;
    fitted.save(&out.join("fitted_scene.json")).map_err(|e| PipelineError::runtime("fit", e))?;
    let fits: Vec<FitSummary> = fits
        .iter()
        .zip(&captions)
        .map(|(f, c)| FitSummary { appearance: c.clone(), k: f.k, iou: f.iou })
        .collect();
    log::info!("polygon fits done after {:.1}s", start.elapsed().as_secs_f64());

    // planning stage replayed from a fixture recorded from the fitted scene
    let prompt_text = fitted
        .primitives
        .iter()
        .map(|p| format!("a {} {}", p.appearance.tokens().get(1).map_or("", String::as_str), shape_name(p.path.vertex_count())))
        .collect::<Vec<_>>()
        .join(" and ");
    let template = PromptTemplate::with_defaults(prompt_text);
    let mock = MockBackend::new(out.join("fixtures"));
    let prompt = template.render().map_err(|e| PipelineError::runtime("plan", e))?;
    mock.record(&prompt, &scene_to_layout_text(&fitted)).map_err(|e| PipelineError::runtime("plan", e))?;
    let planned = plan(&mock, &template, cfg.canvas, cfg.canvas).map_err(|e| PipelineError::runtime("plan", e))?;
    planned.save(&out.join("planned_scene.json")).map_err(|e| PipelineError::runtime("plan", e))?;

    let (net, report) = load_or_train(cfg)?;
    log::info!("denoiser ready after {:.1}s", start.elapsed().as_secs_f64());

    let run = generate(&net, &planned, Some(&samples[1].image), cfg, derive_seed(seed, 3))?;
    RgbImage::from_tensor(&run.image)
        .save_ppm(&out.join("guided.ppm"))
        .map_err(|e| PipelineError::runtime("generate", e))?;
    samples[1].image.save_ppm(&out.join("condition.ppm")).map_err(|e| PipelineError::runtime("generate", e))?;
    let diag = out.join("diagnostics.jsonl");
    std::fs::write(&diag, run.diagnostics_jsonl()).map_err(io("generate", &diag))?;
    let last = run.log.last();
    let guided = GuidedSummary {
        guided_steps: run.log.len(),
        final_g_sf: last.map_or(0.0, |l| l.g_sf),
        final_g_sb: last.map_or(0.0, |l| l.g_sb),
        final_g_a: last.map_or(0.0, |l| l.g_a),
    };
    log::info!("guided generation done after {:.1}s", start.elapsed().as_secs_f64());

    let mut adherence = Vec::new();
    for k in 0..DEMO_EVAL_SEEDS {
        let s = derive_seed(seed, 100 + k);
        let scenes = evaluation_scenes(cfg, s);
        let (summary, _) = adherence_over(&net, &scenes, cfg, s)?;
        adherence.push(summary);
    }
    let median_precision = median(&adherence.iter().map(|a| a.median_precision).collect::<Vec<_>>());
    let median_recall = median(&adherence.iter().map(|a| a.median_recall).collect::<Vec<_>>());

    let report = DemoReport {
        seed,
        trained: report.is_some(),
        final_train_loss: report.as_ref().and_then(|r| r.epoch_losses.last().copied()),
        fits,
        planned_primitives: planned.primitives.len(),
        guided,
        adherence,
        median_precision,
        median_recall,
    };
    let rp = out.join("report.json");
    std::fs::write(&rp, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io("report", &rp))?;
    let secs = start.elapsed().as_secs_f64();
    let tp = out.join("runtime.txt");
    let mut f = std::fs::File::create(&tp).map_err(io("report", &tp))?;
    writeln!(f, "{secs:.2} s").map_err(io("report", &tp))?;
    Ok((report, secs))
}

/// Default weights location inside an output directory.
pub fn weights_in(out: &Path) -> PathBuf {
    out.join("toy_denoiser.bin")
}
