use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use attrfield::config::SceneConfig;
use attrfield::container::{load_scene, save_scene};
use attrfield::deform::{Pose, SHAPE_COEFFS};
use attrfield::field::FieldDims;
use attrfield::image_io::{write_render, write_rgb_png};
use attrfield::indexing::max_abs_cosine;
use attrfield::optimize::{
    fit as run_fit, psnr, reconstruction_error, render_targets, training_cameras, FitConfig, LossReport, LossWeights,
    Problem,
};
use attrfield::oracle::{generate_oracle_scene, OracleOptions};
use attrfield::render::{RenderOutput, RenderSettings};
use attrfield::sampling::Camera;
use attrfield::scene::{edit_swap, EditSpec, Scene, SceneView};
use serde_json::json;

use crate::args::{CameraArgs, EditArgs, EvalArgs, FitArgs, GenOracleArgs, PoseArgs, RenderArgs, RenderOverrides};
use crate::error::{CliError, CliResult};

/// Load a scene the user pointed at; anything wrong with it is a usage error.
pub fn load_input(path: &Path) -> CliResult<Scene> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{}: no such scene file", path.display())));
    }
    load_scene(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn parse_floats(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::usage(format!("{what}: `{v}` is not a finite number")))
        })
        .collect()
}

pub fn parse_pose(scene: &Scene, args: &PoseArgs) -> CliResult<Pose> {
    let mut rotations = Vec::with_capacity(args.pose.len());
    for p in &args.pose {
        let (joint, angles) = p
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--pose `{p}`: expected JOINT=RX,RY,RZ")))?;
        let v = parse_floats(angles, "--pose")?;
        let angles: [f64; 3] = v
            .try_into()
            .map_err(|_| CliError::usage(format!("--pose `{p}`: expected three angles")))?;
        rotations.push((joint.trim(), angles));
    }
    let mut beta = [0.0; SHAPE_COEFFS];
    if let Some(s) = &args.shape {
        beta = parse_floats(s, "--shape")?
            .try_into()
            .map_err(|_| CliError::usage(format!("--shape: expected {SHAPE_COEFFS} coefficients")))?;
    }
    Ok(Pose::from_euler_degrees(&scene.template, &rotations, beta)?)
}

pub fn camera(args: &CameraArgs) -> CliResult<Camera> {
    Ok(Camera::orbit(args.yaw, args.pitch, args.dist, args.res)?)
}

/// The scene's render settings with the command-line overrides applied.
pub fn settings(scene: &Scene, o: &RenderOverrides) -> CliResult<RenderSettings> {
    let mut s = scene.defaults.settings.clone();
    if let Some(b) = o.beta {
        if !(b > 0.0 && b.is_finite()) {
            return Err(CliError::usage("--beta must be positive"));
        }
        s.beta = b;
    }
    if let Some(n) = o.samples {
        if n == 0 {
            return Err(CliError::usage("--samples must be at least 1"));
        }
        s.samples = n;
    }
    Ok(s)
}

pub fn active(scene: &Scene, attrs: Option<&str>) -> CliResult<Vec<usize>> {
    match attrs {
        Some(csv) => {
            let labels = scene.catalog.parse_list(csv)?;
            if labels.is_empty() {
                return Err(CliError::usage("--attrs lists no attributes"));
            }
            Ok(labels)
        }
        None => Ok(scene.defaults.active.clone()),
    }
}

/// Active set extended with `label` if it is missing.
pub fn with_label(mut active: Vec<usize>, label: usize) -> Vec<usize> {
    if !active.contains(&label) {
        active.push(label);
    }
    active
}

/// Number of pixels whose RGB differs in any bit.
pub fn changed_pixels(a: &RenderOutput, b: &RenderOutput) -> usize {
    a.rgb
        .chunks(3)
        .zip(b.rgb.chunks(3))
        .filter(|(x, y)| x.iter().zip(y.iter()).any(|(p, q)| p.to_bits() != q.to_bits()))
        .count()
}

fn print_json(out: &mut dyn Write, value: &serde_json::Value) -> CliResult<()> {
    writeln!(out, "{value}")?;
    Ok(())
}

pub fn gen_oracle(args: &GenOracleArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = match &args.config {
        Some(p) if !p.is_file() => return Err(CliError::usage(format!("{}: no such config file", p.display()))),
        Some(p) => SceneConfig::load(p)?,
        None => SceneConfig::default(),
    };
    if args.active == 0 || args.active > config.catalog.len() {
        return Err(CliError::usage(format!(
            "--active must be between 1 and {}",
            config.catalog.len()
        )));
    }
    let options = OracleOptions {
        active_count: args.active,
        dims: FieldDims {
            ranks: [args.rank; 3],
            feature_dim: args.features,
            resolution: args.res,
            attr_dim: args.attr_dim,
        },
        orth_steps: args.orth_steps,
    };
    let (scene, active) = generate_oracle_scene(args.seed, &config, &options).map_err(|e| match e {
        attrfield::Error::Shape(m) => CliError::usage(m),
        e => e.into(),
    })?;
    save_scene(&scene, &args.out)?;
    let names: Vec<&str> = active.iter().map(|&l| scene.catalog.name(l)).collect();
    print_json(out, &json!({ "out": args.out, "style": scene.style, "active": names }))
}

fn fit_config(args: &FitArgs) -> CliResult<FitConfig> {
    let mut c = FitConfig {
        seed: args.seed,
        ..FitConfig::default()
    };
    if let Some(v) = args.steps {
        c.steps = v;
    }
    if let Some(v) = args.lr {
        c.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        c.momentum = v;
    }
    if let Some(s) = &args.stage_res {
        c.resolutions = s
            .split(',')
            .map(|r| {
                r.trim()
                    .parse()
                    .map_err(|_| CliError::usage(format!("--stage-res: `{r}` is not a resolution")))
            })
            .collect::<CliResult<_>>()?;
    }
    if let Some(v) = args.views {
        c.views = v;
    }
    if let Some(v) = args.rays {
        c.rays_per_step = v;
    }
    if let Some(v) = args.points {
        c.points_per_step = v;
    }
    if let Some(v) = args.samples {
        c.samples = v;
    }
    c.weights = weights(&args.weights)?;
    c.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(c)
}

fn weights(overrides: &[String]) -> CliResult<LossWeights> {
    let mut w = LossWeights::default();
    for o in overrides {
        let (name, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--weight `{o}`: expected NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("--weight `{o}`: bad value")))?;
        let slot = match name.trim() {
            "recon" => &mut w.recon,
            "eik" => &mut w.eik,
            "surf" => &mut w.surf,
            "rsdf" => &mut w.rsdf,
            "nonrig" => &mut w.nonrig,
            "orth" => &mut w.orth,
            other => return Err(CliError::usage(format!("--weight: unknown loss term `{other}`"))),
        };
        *slot = value;
    }
    Ok(w)
}

pub fn log_line(r: &LossReport) -> String {
    json!({
        "step": r.step,
        "recon": r.recon,
        "eik": r.eik,
        "surf": r.surf,
        "rsdf": r.rsdf,
        "nonrig": r.nonrig,
        "orth": r.orth,
        "total": r.total,
    })
    .to_string()
}

/// Fresh scene shaped like `oracle`, fitted to its renders under the
/// oracle's active set, rest pose and render settings.
pub fn fit(args: &FitArgs, out: &mut dyn Write) -> CliResult<()> {
    let config = fit_config(args)?;
    let oracle = load_input(&args.oracle)?;
    let mut scene = Scene::new_random(oracle.catalog.clone(), oracle.field.dims(), args.seed)?;
    scene.template = oracle.template.clone();
    scene.bboxes = oracle.bboxes.clone();
    scene.defaults = oracle.defaults.clone();
    scene.style = oracle.style.clone();
    scene.validate()?;
    let problem = Problem::new(
        oracle.defaults.active.clone(),
        scene.rest_pose(),
        oracle.defaults.settings.clone(),
    );

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = PathBuf::from(&args.out);
        p.set_extension("log");
        p
    });
    let mut log = BufWriter::new(fs::File::create(&log_path)?);
    let mut io_err = None;
    let history = run_fit(&mut scene, &oracle, &problem, &config, |r| {
        let line = log_line(r);
        let res = writeln!(log, "{line}").and_then(|_| if args.quiet { Ok(()) } else { writeln!(out, "{line}") });
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    save_scene(&scene, &args.out)?;
    if args.quiet {
        if let Some(last) = history.last() {
            writeln!(out, "{}", log_line(last))?;
        }
    }
    Ok(())
}

pub fn render(args: &RenderArgs, out: &mut dyn Write) -> CliResult<()> {
    let cam = camera(&args.camera)?;
    let scene = load_input(&args.scene)?;
    let active = active(&scene, args.render.attrs.as_deref())?;
    let pose = parse_pose(&scene, &args.pose)?;
    let settings = settings(&scene, &args.render)?;
    let img = scene.renderer(&active, &pose, settings)?.render(&cam)?;
    write_render(&args.out_dir, &img)?;
    let names: Vec<&str> = active.iter().map(|&l| scene.catalog.name(l)).collect();
    print_json(
        out,
        &json!({ "out_dir": args.out_dir, "width": img.width, "height": img.height, "attrs": names }),
    )
}

/// Renders before and after the swap and the number of pixels that changed.
pub fn edit_renders(
    base: &Scene,
    source: &Scene,
    attr: &str,
    cam: &Camera,
    attrs: Option<&str>,
    pose: &Pose,
    settings: RenderSettings,
) -> CliResult<(RenderOutput, RenderOutput)> {
    let label = base.catalog.label(attr)?;
    let active = with_label(active(base, attrs)?, label);
    let before = SceneView::new(base)
        .renderer(&active, pose, settings.clone())?
        .render(cam)?;
    let spec = EditSpec {
        label,
        source: attr.to_string(),
    };
    let after = edit_swap(base, source, &spec)?
        .renderer(&active, pose, settings)?
        .render(cam)?;
    Ok((before, after))
}

pub fn edit(args: &EditArgs, out: &mut dyn Write) -> CliResult<()> {
    let cam = camera(&args.camera)?;
    let base = load_input(&args.base)?;
    let source = load_input(&args.source)?;
    let pose = parse_pose(&base, &args.pose)?;
    let settings = settings(&base, &args.render)?;
    let (before, after) = edit_renders(
        &base,
        &source,
        &args.attr,
        &cam,
        args.render.attrs.as_deref(),
        &pose,
        settings,
    )?;
    fs::create_dir_all(&args.out_dir)?;
    write_rgb_png(args.out_dir.join("before.png"), &before)?;
    write_rgb_png(args.out_dir.join("after.png"), &after)?;
    print_json(
        out,
        &json!({
            "attribute": args.attr,
            "changed_pixels": changed_pixels(&before, &after),
            "total_pixels": before.width * before.height,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub psnr: f64,
    pub max_abs_cos: f64,
}

/// Mean reconstruction error and PSNR over orbit views, plus the largest
/// off-diagonal index cosine of the fitted scene.
pub fn evaluate(scene: &Scene, oracle: &Scene, views: usize, res: usize) -> CliResult<EvalReport> {
    if scene.catalog != oracle.catalog {
        return Err(attrfield::Error::CatalogMismatch.into());
    }
    if views == 0 {
        return Err(CliError::usage("--views must be at least 1"));
    }
    let problem = Problem::new(
        oracle.defaults.active.clone(),
        oracle.rest_pose(),
        oracle.defaults.settings.clone(),
    );
    let cams = training_cameras(views, res)?;
    let a = render_targets(scene, &problem, &cams)?;
    let b = render_targets(oracle, &problem, &cams)?;
    let (mut mse, mut db) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        mse += reconstruction_error(&x.render, &y.render)?;
        db += psnr(&x.render, &y.render);
    }
    Ok(EvalReport {
        mse: mse / views as f64,
        psnr: db / views as f64,
        max_abs_cos: max_abs_cosine(&scene.indexer.all()?),
    })
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let scene = load_input(&args.scene)?;
    let oracle = load_input(&args.oracle)?;
    let r = evaluate(&scene, &oracle, args.views, args.res)?;
    print_json(
        out,
        &json!({ "views": args.views, "res": args.res, "mse": r.mse, "psnr": r.psnr, "max_abs_cos": r.max_abs_cos }),
    )
}
