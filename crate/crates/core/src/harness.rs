//! Command-line harness: scenario generation, toy training and evaluation.
//!
//! Every command writes deterministic outputs, so repeated runs with the
//! same arguments are byte-identical. Errors carry an exit code: 2 for bad
//! usage, configuration or inputs, 3 for failures while running.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{evaluate_suite, EvalError, Predictor};
use crate::losses::LossConfig;
use crate::model::{validate_frame, Frame, FusionConfig};
use crate::planner::{train, PlannerError, PlannerModel, TrainConfig};
use crate::world::{generate_suite, Scene, ScenarioConfig, WorldError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => EXIT_USAGE,
            HarnessError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<WorldError> for HarnessError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::InvalidConfig(_) | WorldError::Parse(_) | WorldError::Io { .. } => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<PlannerError> for HarnessError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::InvalidConfig(_)
            | PlannerError::Mismatch(_)
            | PlannerError::Parse(_)
            | PlannerError::Io { .. }
            | PlannerError::InvalidFrame(_) => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for HarnessError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Planner(p) => p.into(),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

/// What a run consumed and produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<String>,
    pub seeds: Vec<u64>,
    /// SHA-256 of the parameter file used or written, if any.
    pub params_hash: Option<String>,
    pub output: String,
    pub radar_enabled: Option<bool>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn scene_file_name(id: u64) -> String {
    format!("scene_{id:04}.json")
}

/// Generates every scene of the configuration into `out`, one JSON file per
/// scene, plus the resolved configuration and a manifest.
pub fn cmd_generate(config: &Path, out: &Path) -> Result<RunManifest, HarnessError> {
    let cfg = ScenarioConfig::load(config)?;
    let scenes = generate_suite(&cfg)?;
    for s in &scenes {
        for f in &s.frames {
            if let Some(v) = validate_frame(f).first() {
                return Err(HarnessError::Runtime(format!("scene {} frame {}: {}: {}", s.id, f.index, v.rule, v.detail)));
            }
        }
    }
    create_dir(out)?;
    for s in &scenes {
        write(&out.join(scene_file_name(s.id)), serde_json::to_string(s).expect("scene serializes"))?;
    }
    write(&out.join("config.toml"), cfg.to_toml_string())?;
    let manifest = RunManifest {
        command: "generate".into(),
        config_paths: vec![config.display().to_string()],
        seeds: vec![cfg.seed],
        params_hash: None,
        output: out.display().to_string(),
        radar_enabled: None,
    };
    write(&out.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

/// Reads the `scene_*.json` files of a directory in file-name order and
/// checks every frame.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>, HarnessError> {
    let entries = std::fs::read_dir(dir).map_err(|e| HarnessError::Usage(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scene_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::Usage(format!("{}: no scene_*.json files", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Usage(format!("{}: {e}", p.display())))?;
            let scene: Scene = serde_json::from_str(&text).map_err(|e| HarnessError::Usage(format!("{}: {e}", p.display())))?;
            for f in &scene.frames {
                if let Some(v) = validate_frame(f).first() {
                    return Err(HarnessError::Usage(format!("{}: frame {}: {}: {}", p.display(), f.index, v.rule, v.detail)));
                }
            }
            Ok(scene)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub scenes: PathBuf,
    pub epochs: usize,
    pub seed: u64,
    pub radar_enabled: bool,
    pub out: PathBuf,
}

/// Trains the toy model and writes the parameter file, a per-epoch loss
/// CSV (`<out>.losses.csv`) and a manifest (`<out>.manifest.json`).
pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest, HarnessError> {
    let scenes: Vec<Vec<Frame>> = load_scenes(&args.scenes)?.into_iter().map(|s| s.frames).collect();
    let all: Vec<&Frame> = scenes.iter().flatten().collect();
    let mut model = PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &all, args.seed)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        radar_enabled: args.radar_enabled,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let records = train(&mut model, &scenes, &cfg, |r| {
        log::info!(
            "epoch {}: loss {:.4} (detection {:.4}, map {:.4}, motion {:.4}, planning {:.4})",
            r.epoch,
            r.loss.total,
            r.loss.detection,
            r.loss.map,
            r.loss.motion,
            r.loss.planning
        )
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model.save(&args.out).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "total", "detection", "map", "motion", "planning"])
        .expect("in-memory writer");
    for r in &records {
        let l = &r.loss;
        let mut row = vec![r.epoch.to_string()];
        row.extend([l.total, l.detection, l.map, l.motion, l.planning].map(|v| v.to_string()));
        w.write_record(&row).expect("in-memory writer");
    }
    write(&sibling(&args.out, "losses.csv"), w.into_inner().expect("in-memory writer"))?;
    let manifest = RunManifest {
        command: "train".into(),
        config_paths: vec![args.scenes.display().to_string()],
        seeds: vec![args.seed],
        params_hash: Some(model.content_hash()),
        output: args.out.display().to_string(),
        radar_enabled: Some(args.radar_enabled),
    };
    write(&sibling(&args.out, "manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{suffix}"));
    path.with_file_name(name)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub scenes: PathBuf,
    /// Ignored in oracle mode.
    pub params: Option<PathBuf>,
    pub radar_enabled: bool,
    pub out: PathBuf,
    pub oracle: bool,
}

/// Evaluates a parameter file (or the ground-truth oracle) on every scene
/// and writes `report.json`, `report.txt`, `frames.csv` and `manifest.json`.
pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest, HarnessError> {
    let scenes: Vec<Vec<Frame>> = load_scenes(&args.scenes)?.into_iter().map(|s| s.frames).collect();
    let model = match (&args.params, args.oracle) {
        (_, true) => None,
        (Some(p), false) => Some(PlannerModel::load(p)?),
        (None, false) => return Err(HarnessError::Usage("--params is required unless --oracle is given".into())),
    };
    let predictor = match &model {
        Some(m) => Predictor::Model {
            model: m,
            radar_enabled: args.radar_enabled,
        },
        None => Predictor::Oracle,
    };
    let out = evaluate_suite(&scenes, predictor)?;
    create_dir(&args.out)?;
    write(&args.out.join("report.json"), out.report.to_json())?;
    write(&args.out.join("report.txt"), out.report.to_text())?;
    write(&args.out.join("frames.csv"), out.series.to_csv())?;
    let manifest = RunManifest {
        command: if args.oracle { "eval --oracle" } else { "eval" }.into(),
        config_paths: std::iter::once(args.scenes.display().to_string())
            .chain(args.params.iter().filter(|_| !args.oracle).map(|p| p.display().to_string()))
            .collect(),
        seeds: model.as_ref().map(|m| vec![m.seed]).unwrap_or_default(),
        params_hash: model.as_ref().map(|m| m.content_hash()),
        output: args.out.display().to_string(),
        radar_enabled: Some(args.radar_enabled),
    };
    write(&args.out.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Parser)]
#[command(name = "radarfuse", version, about = "Camera-radar fusion planner on synthetic driving scenes")]
pub struct Cli {
    /// Worker threads for scene-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scenes from a TOML scenario config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy model on a scene directory.
    Train {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        radar: Switch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate parameters (or the ground-truth oracle) on a scene directory.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, required_unless_present = "oracle")]
        params: Option<PathBuf>,
        #[arg(long, value_enum)]
        radar: Switch,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        oracle: bool,
    },
}

/// Runs a parsed command on a pool of `cli.workers` threads.
pub fn run(cli: Cli) -> Result<RunManifest, HarnessError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    match cli.workers {
        Some(0) => return Err(HarnessError::Usage("--workers must be >= 1".into())),
        Some(n) => pool = pool.num_threads(n),
        None => {}
    }
    let pool = pool.build().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Train {
            scenes,
            epochs,
            seed,
            radar,
            out,
        } => cmd_train(&TrainArgs {
            scenes,
            epochs,
            seed,
            radar_enabled: radar.enabled(),
            out,
        }),
        Command::Eval {
            scenes,
            params,
            radar,
            out,
            oracle,
        } => cmd_eval(&EvalArgs {
            scenes,
            params,
            radar_enabled: radar.enabled(),
            out,
            oracle,
        }),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(m) => {
            log::info!("wrote {}", m.output);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_config_is_a_usage_error_naming_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.toml");
        let e = cmd_generate(&missing, &dir.path().join("out")).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
        assert!(e.to_string().contains("nope.toml"), "{e}");
    }

    #[test]
    fn invalid_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, "seed = 1\nscenes = 0\n").unwrap();
        let e = cmd_generate(&cfg, &dir.path().join("out")).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_USAGE);
        assert!(e.to_string().contains("scenes"), "{e}");
    }

    #[test]
    fn bad_flags_exit_with_usage_code() {
        assert_eq!(main_with_args(["radarfuse", "train", "--epochs", "x"]), EXIT_USAGE);
        assert_eq!(main_with_args(["radarfuse", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with_args(["radarfuse", "--workers", "0", "eval", "--scenes", ".", "--radar", "on", "--out", ".", "--oracle"]), EXIT_USAGE);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("a/p.json"), "losses.csv"), PathBuf::from("a/p.json.losses.csv"));
    }
}
