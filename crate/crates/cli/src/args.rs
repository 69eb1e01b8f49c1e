use std::path::PathBuf;

use attrfield::sampling::{DEFAULT_DIST, DEFAULT_RES};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "attrfield",
    version,
    about = "Fit, render and edit compositional attribute scenes"
)]
pub struct Cli {
    /// Worker threads for rendering and fitting (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic oracle scene to fit against.
    GenOracle(GenOracleArgs),
    /// Fit a fresh scene to renders of an oracle.
    Fit(FitArgs),
    /// Render RGB, semantic map and depth from one camera.
    Render(RenderArgs),
    /// Swap one attribute from a source scene and compare renders.
    Edit(EditArgs),
    /// Compare a fitted scene against its oracle.
    Eval(EvalArgs),
    /// Serve renders and edit sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    /// Orbit angle around the vertical axis, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub yaw: f64,
    /// Elevation, degrees, strictly between -90 and 90.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = DEFAULT_DIST)]
    pub dist: f64,
    /// Square image side in pixels.
    #[arg(long, default_value_t = DEFAULT_RES)]
    pub res: usize,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PoseArgs {
    /// Joint rotation as XYZ Euler degrees; repeatable.
    #[arg(long = "pose", value_name = "JOINT=RX,RY,RZ", allow_hyphen_values = true)]
    pub pose: Vec<String>,
    /// Body shape coefficients.
    #[arg(long, value_name = "B0,B1", allow_hyphen_values = true)]
    pub shape: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RenderOverrides {
    /// Comma-separated attribute names (default: the scene's own set).
    #[arg(long)]
    pub attrs: Option<String>,
    /// SDF-to-density sharpness.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Samples per ray.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenOracleArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Catalog, boxes and compatibility rules (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of attributes in the oracle's active set.
    #[arg(long, default_value_t = 3)]
    pub active: usize,
    /// Rank of each of the three plane terms.
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Spatial plane resolution.
    #[arg(long, default_value_t = 16)]
    pub res: usize,
    #[arg(long, default_value_t = 16)]
    pub attr_dim: usize,
    #[arg(long, default_value_t = 400)]
    pub orth_steps: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines loss log (default: OUT with a .log extension).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Seeds both the initialization and the batch sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Render resolution of each stage, e.g. 32,64.
    #[arg(long, value_name = "CSV")]
    pub stage_res: Option<String>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Loss weight override (recon, eik, surf, rsdf, nonrig, orth); repeatable.
    #[arg(long = "weight", value_name = "NAME=VALUE")]
    pub weights: Vec<String>,
    /// Suppress the per-step log on stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[command(flatten)]
    pub render: RenderOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EditArgs {
    /// Scene that keeps every attribute but the edited one.
    #[arg(long)]
    pub base: PathBuf,
    /// Scene the edited attribute is taken from.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub attr: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[command(flatten)]
    pub pose: PoseArgs,
    #[command(flatten)]
    pub render: RenderOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 32)]
    pub res: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Directory of *.attrscn files; each file stem becomes a scene id.
    #[arg(long, env = "ATTR_SCENE_DIR")]
    pub dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}
