//! `humangs`: reconstruct, render, train, evaluate and gradient-check.
//!
//! Exit codes: 0 success, 2 input or schema error, 3 configuration mismatch,
//! 4 numeric failure (including failed gradient checks).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::Vector3;
use humangs_core::body::{load_body_model, pose_body, save_body_model, toy_capsule_human, BodyModel, BodyParams};
use humangs_core::geometry::{make_orbit_cameras, read_camera_manifest, write_camera_manifest, Intrinsics};
use humangs_core::gradcheck::{loss_suite, renderer_suite, transformer_suite, Report};
use humangs_core::gsplat::{export_ply, import_ply, render};
use humangs_core::imaging::Image;
use humangs_core::latent::{bundle_from_images, load_view_bundle, save_view_bundle};
use humangs_core::model::{load_checkpoint, Model};
use humangs_core::trainer::{evaluate, generate_scene, train, Config, EvalReport};
use humangs_core::{Error, Result};

#[derive(Parser)]
#[command(name = "humangs", version, about = "Single-image human Gaussian splat reconstruction")]
struct Cli {
    /// Single-threaded numerics.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict a splat file from an input image or a latent bundle.
    Reconstruct(ReconstructArgs),
    /// Render a splat file from every camera of a manifest.
    Render(RenderArgs),
    /// Train on synthetic scenes.
    Train(TrainArgs),
    /// Held-out metrics of a checkpoint on synthetic scenes.
    Eval(EvalArgs),
    /// Finite-difference checks of the renderer, losses and transformer.
    Gradcheck(GradcheckArgs),
    /// Write toy inputs: body model, body parameters, image, latents, cameras.
    Fixture(FixtureArgs),
}

#[derive(clap::Args)]
struct ReconstructArgs {
    #[arg(long, conflicts_with = "latents", required_unless_present = "latents")]
    image: Option<PathBuf>,
    #[arg(long)]
    latents: Option<PathBuf>,
    #[arg(long)]
    body_params: PathBuf,
    /// Defaults to the built-in toy body.
    #[arg(long)]
    body_model: Option<PathBuf>,
    /// Without a checkpoint, a freshly initialized model is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_human_prior: bool,
    #[arg(long)]
    out_splat: PathBuf,
}

#[derive(clap::Args)]
struct RenderArgs {
    #[arg(long)]
    splat: PathBuf,
    #[arg(long)]
    camera_manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write `view_NNN.f32`: little-endian RGB then alpha planes.
    #[arg(long)]
    raw: bool,
    /// Background color as `r,g,b` in [0, 1].
    #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
    background: [f64; 3],
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    k_win: Option<usize>,
    #[arg(long)]
    no_human_prior: bool,
    #[arg(long)]
    body_model: Option<PathBuf>,
    /// Receives metrics.jsonl, config.toml, last.ckpt and best.ckpt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Scene settings; its model section must match the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    body_model: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Suite {
    All,
    Renderer,
    Losses,
    Transformer,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(clap::Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    cameras: usize,
    #[arg(long, default_value_t = 64)]
    render_size: u32,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_body(path: Option<&Path>) -> Result<BodyModel> {
    match path {
        Some(p) => load_body_model(p),
        None => Ok(toy_capsule_human()),
    }
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let model = match &a.checkpoint {
        Some(p) => {
            let m = load_checkpoint(p)?;
            if a.config.is_some() && m.config != cfg.model {
                return Err(Error::config("checkpoint model config differs from --config"));
            }
            m
        }
        None => Model::new(cfg.model.clone(), cfg.train.seed)?,
    };
    let body = load_body(a.body_model.as_deref())?;
    let params = BodyParams::load(&a.body_params)?;
    let mesh = pose_body(&body, &params.beta, &params.theta);
    let (center, radius) = mesh.bounding_sphere();
    let bundle = match (&a.image, &a.latents) {
        (Some(img), _) => {
            let image = Image::load(img)?;
            let mut layout = cfg.layout();
            layout.n_views = model.config.n_views;
            layout.latent_h = model.config.latent_h;
            layout.latent_w = model.config.latent_w;
            let mut views: Vec<Option<&Image>> = vec![None; layout.n_views];
            views[0] = Some(&image);
            let mut b = bundle_from_images(&views, &layout)?;
            b.center = [center.x, center.y, center.z];
            b.radius = radius;
            b
        }
        (None, Some(lat)) => load_view_bundle(lat)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    let t0 = Instant::now();
    let mesh_opt = if a.no_human_prior { None } else { Some(&mesh) };
    let out = model.forward(&bundle, mesh_opt)?;
    let elapsed = t0.elapsed().as_secs_f64();
    export_ply(&out.gaussians, &a.out_splat)?;
    println!("N_p = {}", out.gaussians.len());
    println!("forward {elapsed:.3} s");
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let set = import_ply(&a.splat)?;
    let cams = read_camera_manifest(&a.camera_manifest)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let bg = a.background;
    for (i, oc) in cams.iter().enumerate() {
        let out = render(&set, &oc.camera, bg)?;
        out.color.save_png(&a.out_dir.join(format!("view_{i:03}.png")))?;
        if a.raw {
            let mut buf = Vec::with_capacity((out.color.data.len() + out.alpha.len()) * 4);
            for v in out.color.data.iter().chain(&out.alpha) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            std::fs::write(a.out_dir.join(format!("view_{i:03}.f32")), buf)?;
        }
    }
    println!("rendered {} views", cams.len());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(w) = a.warmup_steps {
        cfg.train.warmup_steps = w;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.scenes {
        cfg.train.scenes = n;
    }
    if let Some(k) = a.k_win {
        cfg.model.k_win = k;
    }
    if a.no_human_prior {
        cfg.model.human_prior = false;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&a.out_dir)?;
    let text = toml::to_string(&cfg).map_err(|e| Error::config(e.to_string()))?;
    std::fs::write(a.out_dir.join("config.toml"), text)?;
    let body = load_body(a.body_model.as_deref())?;
    let scenes = cfg.scenes(&body)?;
    let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(a.out_dir.join("metrics.jsonl"))?);
    let outcome = train(&cfg, model, &scenes, Some(&a.out_dir), |rec| {
        let line = serde_json::to_string(rec).map_err(|e| Error::schema(e.to_string()))?;
        writeln!(log, "{line}")?;
        Ok(())
    })?;
    log.flush()?;
    let last = outcome.records.last();
    println!(
        "steps {}  final loss {:.6}  held-out PSNR {:.3} dB",
        outcome.records.len(),
        last.map_or(f64::NAN, |r| r.loss),
        outcome.final_heldout_psnr
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let c = Config::load(p)?;
            if c.model != model.config {
                return Err(Error::config("checkpoint model config differs from --config"));
            }
            c
        }
        None => Config {
            model: model.config.clone(),
            ..Default::default()
        },
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.scenes {
        cfg.train.scenes = n;
    }
    let body = load_body(a.body_model.as_deref())?;
    let scenes = cfg.scenes(&body)?;
    let report = EvalReport::from_rows(evaluate(&model, &scenes, cfg.scene.background)?);
    if !report.mean_psnr.is_finite() {
        return Err(Error::numeric("evaluation PSNR is not finite"));
    }
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::schema(e.to_string()))?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, json + "\n")?;
            println!(
                "{} views  mean PSNR {:.3} dB  mean SSIM {:.4}",
                report.rows.len(),
                report.mean_psnr,
                report.mean_ssim
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let mut reports: Vec<Report> = Vec::new();
    if matches!(a.suite, Suite::All | Suite::Renderer) {
        reports.push(renderer_suite(a.seed, 20));
    }
    if matches!(a.suite, Suite::All | Suite::Losses) {
        reports.push(loss_suite(a.seed, 2));
    }
    if matches!(a.suite, Suite::All | Suite::Transformer) {
        reports.push(transformer_suite(a.seed, 10));
    }
    let mut ok = true;
    for r in &reports {
        println!("{} {}", if r.passed() { "PASS" } else { "FAIL" }, r.summary());
        for f in r.failures.iter().take(10) {
            println!("  {f}");
        }
        ok &= r.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Error::numeric("finite-difference check failed"))
    }
}

fn cmd_fixture(a: &FixtureArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    std::fs::create_dir_all(&a.out_dir)?;
    let body = toy_capsule_human();
    save_body_model(&body, &a.out_dir.join("body.hgsb"))?;
    let scene = generate_scene(a.seed, &body, &cfg.scene, &cfg.layout())?;
    scene.params.save(&a.out_dir.join("params.json"))?;
    let layout = cfg.layout();
    let (w, h) = layout.image_size();
    let input_cam = &layout.cameras()?[0].camera;
    let (center, radius) = scene.mesh.bounding_sphere();
    let norm = scene.mesh.normalized(&center, radius);
    let frags = humangs_core::geometry::rasterize_mesh(&norm.vertices, &norm.faces, input_cam);
    let data = humangs_core::geometry::shade_vertex_colors(&frags, &norm.faces, &scene.colors, cfg.scene.background);
    Image::from_data(w as usize, h as usize, data)?.save_png(&a.out_dir.join("input.png"))?;
    save_view_bundle(&scene.bundle, &a.out_dir.join("latents.hgsl"))?;
    let intr = Intrinsics::centered(a.render_size, a.render_size, cfg.scene.focal_ratio);
    let cams = make_orbit_cameras(a.cameras, cfg.scene.elevation, cfg.scene.distance, Vector3::zeros(), &intr)?;
    write_camera_manifest(&a.out_dir.join("cameras.jsonl"), &cams)?;
    println!("fixture written to {}", a.out_dir.display());
    Ok(())
}

fn configure_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        Some(1)
    } else {
        match std::env::var("HUMANGS_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .ok()
                    .filter(|n| *n > 0)
                    .ok_or_else(|| Error::config(format!("HUMANGS_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        }
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads(cli.deterministic)?;
    match &cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Render(a) => cmd_render(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("humangs: {e}");
        std::process::exit(e.exit_code());
    }
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err("expected three values in [0, 1] separated by commas".into()),
    }
}
