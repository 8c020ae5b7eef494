//! Flat `key = value` pipeline configuration.
//!
//! Every key has a default. Unknown and repeated keys are rejected, `#`
//! starts a comment, and [`PipelineConfig::to_text`] writes every key so
//! that parsing its output gives back the same value.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::diffusion::toynet::ToyConfig;
use crate::diffusion::train::TrainConfig;
use crate::diffusion::InversionConfig;
use crate::fit::PsoConfig;
use crate::guidance::{GradientMode, GuidanceConfig, RankRule};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` appears twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlannerKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Square canvas side in pixels.
    pub canvas: usize,
    /// Diffusion steps of the discrete schedule.
    pub t_max: usize,
    pub pso: PsoConfig,
    pub guidance: GuidanceConfig,
    pub model: ToyConfig,
    pub train: TrainConfig,
    pub train_scenes: usize,
    pub weights: PathBuf,
    pub planner: PlannerKind,
    pub fixtures: PathBuf,
    pub planner_timeout_secs: u64,
    pub planner_retries: u32,
    pub planner_max_in_flight: usize,
    pub eval_tolerance: f64,
    pub eval_scenes: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            canvas: 32,
            t_max: 100,
            pso: PsoConfig::default(),
            guidance: GuidanceConfig::default(),
            model: ToyConfig::default(),
            train: TrainConfig::default(),
            train_scenes: 400,
            weights: PathBuf::from("toy_denoiser.bin"),
            planner: PlannerKind::Mock,
            fixtures: PathBuf::from("fixtures"),
            planner_timeout_secs: 30,
            planner_retries: 2,
            planner_max_in_flight: 4,
            eval_tolerance: 0.5,
            eval_scenes: 50,
        }
    }
}

/// Text form of one configuration value.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_value!(u64, u32, usize, bool);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> String {
        // shortest representation that parses back to the same bits
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for PlannerKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(Self::Mock),
            "remote" => Ok(Self::Remote),
            _ => Err("expected `mock` or `remote`".into()),
        }
    }
    fn render(&self) -> String {
        match self {
            Self::Mock => "mock".into(),
            Self::Remote => "remote".into(),
        }
    }
}

fn call_args(s: &str, name: &str) -> Option<Vec<String>> {
    let inner = s.strip_prefix(name)?.trim().strip_prefix('(')?.strip_suffix(')')?;
    Some(inner.split(',').map(|x| x.trim().to_string()).collect())
}

impl ConfigValue for RankRule {
    fn parse_value(s: &str) -> Result<Self, String> {
        if let Some(args) = call_args(s, "energy") {
            if args.len() != 2 {
                return Err("expected energy(<max rank>, <fraction>)".into());
            }
            let max = usize::parse_value(&args[0])?;
            let energy = f64::parse_value(&args[1])?;
            return Ok(Self::Energy { max, energy });
        }
        usize::parse_value(s).map(Self::Fixed).map_err(|_| "expected an integer or energy(<max>, <fraction>)".into())
    }
    fn render(&self) -> String {
        match self {
            Self::Fixed(r) => r.to_string(),
            Self::Energy { max, energy } => format!("energy({max}, {})", energy.render()),
        }
    }
}

impl ConfigValue for GradientMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "analytic" {
            return Ok(Self::Analytic);
        }
        if s == "finite-difference" {
            return Ok(Self::FiniteDifference { rel_step: 1e-3 });
        }
        if let Some(args) = call_args(s, "finite-difference") {
            if args.len() == 1 {
                return Ok(Self::FiniteDifference { rel_step: f64::parse_value(&args[0])? });
            }
        }
        Err("expected `analytic` or `finite-difference(<step>)`".into())
    }
    fn render(&self) -> String {
        match self {
            Self::Analytic => "analytic".into(),
            Self::FiniteDifference { rel_step } => format!("finite-difference({})", rel_step.render()),
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ ;)*) => {
        const KEYS: &[&str] = &[$($key),*];

        impl PipelineConfig {
            fn set(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $($key => Some(ConfigValue::parse_value(value).map(|v| self.$($field).+ = v)),)*
                    _ => None,
                }
            }

            /// `(key, rendered value)` for every key, in the canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.render())),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "out_dir" => out_dir;
    "canvas" => canvas;
    "schedule.t_max" => t_max;
    "schedule.sample_steps" => guidance.sample_steps;
    "inversion.steps" => guidance.inversion.steps;
    "inversion.refine_iters" => guidance.inversion.refine_iters;
    "pso.swarm_size" => pso.swarm_size;
    "pso.iterations" => pso.iterations;
    "pso.inertia" => pso.inertia;
    "pso.cognitive" => pso.cognitive;
    "pso.social" => pso.social;
    "pso.k" => pso.k;
    "pso.max_vertices" => pso.max_vertices;
    "pso.velocity_clamp" => pso.velocity_clamp;
    "pso.init_jitter" => pso.init_jitter;
    "guidance.omega" => guidance.omega;
    "guidance.lambda_s" => guidance.lambda_s;
    "guidance.lambda_a" => guidance.lambda_a;
    "guidance.balance_s" => guidance.balance_s;
    "guidance.n_a" => guidance.n_a;
    "guidance.guided_steps" => guidance.guided_steps;
    "guidance.rank" => guidance.rank;
    "guidance.gradient_mode" => guidance.gradient_mode;
    "model.masked" => model.masked;
    "model.channels" => model.channels;
    "model.attn_dim" => model.attn_dim;
    "model.hidden" => model.hidden;
    "model.fusion_dim" => model.d_b;
    "model.num_freqs" => model.num_freqs;
    "model.seed" => model.seed;
    "model.weights" => weights;
    "train.scenes" => train_scenes;
    "train.epochs" => train.epochs;
    "train.batch_size" => train.batch_size;
    "train.learning_rate" => train.learning_rate;
    "train.caption_dropout" => train.caption_dropout;
    "train.cond_dropout" => train.cond_dropout;
    "train.seed" => train.seed;
    "planner.backend" => planner;
    "planner.fixtures" => fixtures;
    "planner.timeout_secs" => planner_timeout_secs;
    "planner.retries" => planner_retries;
    "planner.max_in_flight" => planner_max_in_flight;
    "eval.iou_tolerance" => eval_tolerance;
    "eval.scenes" => eval_scenes;
}

impl PipelineConfig {
    /// Parse config text on top of the defaults and validate the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            let canonical = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| ConfigError::UnknownKey { line, key: key.to_string() })?;
            if seen.contains(canonical) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            seen.push(canonical);
            cfg.set(key, value)
                .expect("key listed")
                .map_err(|reason| ConfigError::BadValue { line, key: key.to_string(), reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.canvas == 0 || self.t_max == 0 {
            return invalid("canvas and schedule.t_max must be positive".into());
        }
        if self.guidance.sample_steps == 0 || !self.t_max.is_multiple_of(self.guidance.sample_steps) {
            return invalid(format!(
                "schedule.sample_steps {} must divide schedule.t_max {}",
                self.guidance.sample_steps, self.t_max
            ));
        }
        if self.guidance.inversion.steps == 0 || !self.t_max.is_multiple_of(self.guidance.inversion.steps) {
            return invalid(format!("inversion.steps {} must divide schedule.t_max", self.guidance.inversion.steps));
        }
        self.pso.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.guidance.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let RankRule::Energy { energy, .. } = self.guidance.rank {
            if !(energy > 0.0 && energy <= 1.0) {
                return invalid("rank energy fraction must be in (0, 1]".into());
            }
        }
        for (name, p) in [("train.caption_dropout", self.train.caption_dropout), ("train.cond_dropout", self.train.cond_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} must be a probability"));
            }
        }
        if self.train.batch_size == 0 || self.train_scenes == 0 {
            return invalid("train.batch_size and train.scenes must be positive".into());
        }
        if !(self.eval_tolerance > 0.0 && self.eval_tolerance <= 1.0) {
            return invalid("eval.iou_tolerance must be in (0, 1]".into());
        }
        if self.planner_max_in_flight == 0 {
            return invalid("planner.max_in_flight must be positive".into());
        }
        Ok(())
    }

    /// The denoiser architecture for this canvas.
    pub fn model_config(&self) -> ToyConfig {
        ToyConfig { height: self.canvas, width: self.canvas, max_vertices: self.pso.max_vertices, ..self.model }
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train
    }

    pub fn guidance_config(&self) -> GuidanceConfig {
        self.guidance
    }

    pub fn inversion_config(&self) -> InversionConfig {
        self.guidance.inversion
    }
}

/// Render a key list with one default per line, for docs and `--help`.
pub fn describe_defaults() -> String {
    PipelineConfig::default().to_text()
}
