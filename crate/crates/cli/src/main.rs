use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pathclip::config::{PipelineConfig, PlannerKind};
use pathclip::eval::evaluate_layout_adherence;
use pathclip::fit::{fit_scene_with_k, FitError};
use pathclip::geometry::MIN_VERTICES;
use pathclip::image::RgbImage;
use pathclip::pipeline::{self, FailureKind, PipelineError};
use pathclip::planner::{plan, validate_scene, MockBackend, PlannerError, PromptTemplate, DEFAULT_OVERLAP_THRESHOLD};
use pathclip::pnm::{read_mask, PnmError};
use pathclip::scene::{LayoutScene, SceneError};

mod error;
use error::CliError;

#[derive(Parser)]
#[command(name = "pathclip", version, about = "Polygon layouts to guided toy-diffusion images")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, default from the `out_dir` key (for `fit`, a path
    /// ending in `.json` names the scene file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Denoiser weights; defaults to the `model.weights` key resolved inside `--out`.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Planner {
    Mock,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one polygon per mask and write the scene.
    Fit {
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
        /// One appearance per mask; defaults to `object`.
        #[arg(long = "caption")]
        captions: Vec<String>,
        /// Vertex count `N` or range `A..B`.
        #[arg(long, default_value = "4..6")]
        k: String,
    },
    /// Ask the planner for a layout.
    Plan {
        #[arg(long)]
        prompt: String,
        #[arg(long, value_enum)]
        planner: Option<Planner>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Store this file as the mock reply for the prompt before planning.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Train the toy denoiser on synthetic scenes.
    Train,
    /// Guided generation from a scene.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        condition: Option<PathBuf>,
    },
    /// Invert an image to its starting noise and cache features.
    Invert {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        scene: PathBuf,
    },
    /// Score an image against a scene, or the model on synthetic scenes.
    Evaluate {
        #[arg(long, requires = "scene")]
        image: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// End-to-end run on synthetic data.
    Demo,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(CliError::runtime)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    cfg.weights = match &cli.weights {
        Some(w) => w.clone(),
        None if cfg.weights.is_relative() => out.join(&cfg.weights),
        None => cfg.weights.clone(),
    };
    Ok((cfg, out))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn parse_k(text: &str, max: usize) -> Result<std::ops::RangeInclusive<usize>, CliError> {
    let bad = || CliError::runtime(format!("--k {text}: expected N or A..B within {MIN_VERTICES}..{max}"));
    let (lo, hi) = match text.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let k = text.trim().parse().map_err(|_| bad())?;
            (k, k)
        }
    };
    if lo < MIN_VERTICES || hi > max || lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

fn load_scene(path: &Path) -> Result<LayoutScene, CliError> {
    LayoutScene::load(path).map_err(|e| match e {
        SceneError::Io { .. } => CliError::runtime(e),
        other => CliError::bad_input(format!("{}: {other}", path.display())),
    })
}

fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    RgbImage::load_ppm(path).map_err(pnm_error)
}

fn pnm_error(e: PnmError) -> CliError {
    match e {
        PnmError::Io { .. } => CliError::runtime(e),
        other => CliError::bad_input(other),
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e.kind {
        FailureKind::BadInput => CliError::bad_input(e),
        FailureKind::Runtime => CliError::runtime(e),
    }
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, out) = load_config(&cli)?;
    match &cli.command {
        Command::Fit { masks, captions, k } => {
            let ks = parse_k(k, cfg.pso.max_vertices)?;
            let captions: Vec<String> = if captions.is_empty() {
                vec!["object".to_string(); masks.len()]
            } else if captions.len() == masks.len() {
                captions.clone()
            } else {
                return Err(CliError::bad_input(format!("{} masks but {} captions", masks.len(), captions.len())));
            };
            let loaded = masks.iter().map(|p| read_mask(p).map_err(pnm_error)).collect::<Result<Vec<_>, _>>()?;
            let pso = pathclip::fit::PsoConfig { seed: cfg.seed, ..cfg.pso };
            let (scene, fits) = fit_scene_with_k(&loaded, &captions, &pso, ks).map_err(|e| {
                let empty = match &e {
                    FitError::EmptyMask => true,
                    FitError::AtIndex { source, .. } => matches!(**source, FitError::EmptyMask),
                    _ => false,
                };
                if empty || matches!(e, FitError::DimensionMismatch { .. } | FitError::Scene(_)) {
                    CliError::bad_input(e)
                } else {
                    CliError::runtime(e)
                }
            })?;
            for (path, f) in masks.iter().zip(&fits) {
                print_json(&serde_json::json!({ "mask": path.display().to_string(), "k": f.k, "iou": f.iou }));
            }
            let target = if out.extension().is_some_and(|e| e == "json") {
                if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                    create_out(dir)?;
                }
                out.clone()
            } else {
                create_out(&out)?;
                out.join("scene.json")
            };
            scene.save(&target).map_err(CliError::runtime)?;
        }
        Command::Plan { prompt, planner, fixtures, record } => {
            let mut cfg = cfg;
            if let Some(p) = planner {
                cfg.planner = match p {
                    Planner::Mock => PlannerKind::Mock,
                    Planner::Remote => PlannerKind::Remote,
                };
            }
            if let Some(f) = fixtures {
                cfg.fixtures = f.clone();
            }
            let template = PromptTemplate::with_defaults(prompt.clone());
            if let Some(reply) = record {
                let text = std::fs::read_to_string(reply)
                    .map_err(|e| CliError::runtime(format!("{}: {e}", reply.display())))?;
                let rendered = template.render().map_err(CliError::bad_input)?;
                let path = MockBackend::new(&cfg.fixtures).record(&rendered, &text).map_err(CliError::runtime)?;
                log::info!("recorded fixture {}", path.display());
            }
            let backend = pipeline::planner_backend(&cfg).map_err(pipeline_error)?;
            let scene = plan(backend.as_ref(), &template, cfg.canvas, cfg.canvas).map_err(|e| match e {
                PlannerError::Block { .. }
                | PlannerError::BlockGeometry { .. }
                | PlannerError::NoPrimitivesFound
                | PlannerError::EmptyInstruction => CliError::bad_input(format!("plan: {e}")),
                other => CliError::runtime(format!("plan: {other}")),
            })?;
            for w in validate_scene(&scene, DEFAULT_OVERLAP_THRESHOLD) {
                log::warn!("{w:?}");
            }
            create_out(&out)?;
            scene.save(&out.join("scene.json")).map_err(CliError::runtime)?;
            println!("{}", scene.to_json());
        }
        Command::Train => {
            let (net, report) = pipeline::train_model(&cfg).map_err(pipeline_error)?;
            if let Some(dir) = cfg.weights.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_out(dir)?;
            }
            net.save(&cfg.weights).map_err(CliError::runtime)?;
            print_json(&serde_json::json!({ "weights": cfg.weights.display().to_string(), "epoch_losses": report.epoch_losses }));
        }
        Command::Generate { scene, condition } => {
            let scene = load_scene(scene)?;
            let cond = condition.as_deref().map(load_image).transpose()?;
            let net = load_weights(&cfg)?;
            let run = pipeline::generate(&net, &scene, cond.as_ref(), &cfg, cfg.seed).map_err(pipeline_error)?;
            create_out(&out)?;
            let img = out.join("generated.ppm");
            RgbImage::from_tensor(&run.image).save_ppm(&img).map_err(CliError::runtime)?;
            let diag = out.join("diagnostics.jsonl");
            std::fs::write(&diag, run.diagnostics_jsonl())
                .map_err(|e| CliError::runtime(format!("{}: {e}", diag.display())))?;
            print_json(&serde_json::json!({ "image": img.display().to_string(), "diagnostics": diag.display().to_string() }));
        }
        Command::Invert { image, scene } => {
            let scene = load_scene(scene)?;
            let img = load_image(image)?;
            let net = load_weights(&cfg)?;
            let (x_t, traj) = pipeline::invert(&net, &img, &scene, &cfg).map_err(pipeline_error)?;
            create_out(&out)?;
            let latent = out.join("latent.bin");
            pipeline::write_tensor(&x_t, &latent).map_err(pipeline_error)?;
            let features = out.join("features.bin");
            traj.save_features(&features).map_err(CliError::runtime)?;
            print_json(&serde_json::json!({
                "latent": latent.display().to_string(),
                "features": features.display().to_string(),
                "steps": traj.steps.len(),
            }));
        }
        Command::Evaluate { image, scene, tolerance } => {
            let tol = tolerance.unwrap_or(cfg.eval_tolerance);
            if !(tol > 0.0 && tol <= 1.0) {
                return Err(CliError::runtime(format!("--tolerance {tol} outside (0, 1]")));
            }
            match (image, scene) {
                (Some(image), Some(scene)) => {
                    let scene = load_scene(scene)?;
                    let img = load_image(image)?;
                    let report = evaluate_layout_adherence(&img, &scene, tol).map_err(CliError::bad_input)?;
                    println!("{}", report.to_json());
                }
                (None, scene) => {
                    let net = load_weights(&cfg)?;
                    let cfg = PipelineConfig { eval_tolerance: tol, ..cfg.clone() };
                    let scenes = match scene {
                        Some(p) => vec![load_scene(p)?],
                        None => pipeline::evaluation_scenes(&cfg, cfg.seed),
                    };
                    let (summary, _) = pipeline::adherence_over(&net, &scenes, &cfg, cfg.seed).map_err(pipeline_error)?;
                    print_json(&summary);
                }
                (Some(_), None) => unreachable!("clap requires --scene with --image"),
            }
        }
        Command::Demo => {
            let (report, secs) = pipeline::run_demo(&cfg, &out).map_err(pipeline_error)?;
            log::info!("demo finished in {secs:.1}s");
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn load_weights(cfg: &PipelineConfig) -> Result<pathclip::diffusion::toynet::ToyDenoiser, CliError> {
    if !cfg.weights.exists() {
        return Err(CliError::runtime(format!(
            "{}: weights not found; run `pathclip train` first",
            cfg.weights.display()
        )));
    }
    pathclip::diffusion::toynet::ToyDenoiser::load(&cfg.weights)
        .map_err(|e| CliError::runtime(format!("{}: {e}", cfg.weights.display())))
}
