use std::path::PathBuf;

use clap::Args;

use neref::evaluation::{predict_view, render_from_maps};
use neref::field::Slab;
use neref::geometry::{PinholeCamera, Vec3};
use neref::io::{read_png, write_pfm, write_png};
use neref::simulator::Pattern;

use crate::common::{
    config_for_checkpoint, depth_pfm, load_network, normal_pfm, parse_list, prepare_out, resolve_out, SceneDir,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{snapshot, unix_now, RunManifest};

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene directory supplying optics, pattern plane and named cameras.
    #[arg(long)]
    pub scene: PathBuf,
    /// Training TOML [default: config.toml of the checkpoint's run].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Render from this scene camera.
    #[arg(long, conflicts_with = "position", required_unless_present = "position")]
    pub camera: Option<String>,
    /// Camera center `x,y,z` in meters for a free viewpoint.
    #[arg(long, requires = "look_at")]
    pub position: Option<String>,
    /// Point `x,y,z` the free camera looks at.
    #[arg(long)]
    pub look_at: Option<String>,
    #[arg(long, default_value_t = 50.0)]
    pub fov: f64,
    /// Free-camera image size `WxH`.
    #[arg(long, default_value = "64x64")]
    pub size: String,
    /// PNG placed under the water instead of the scene pattern.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Physical size `x,y` (meters) of --pattern [default: the scene pattern's].
    #[arg(long, requires = "pattern")]
    pub extent: Option<String>,
    /// Output directory [default: $NEREF_OUTPUT_ROOT/render].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub overwrite: bool,
}

fn vec3(text: &str, what: &str) -> CliResult<Vec3> {
    let v: Vec<f64> = parse_list(text, what)?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(CliError::Validation(format!("{what} needs three comma-separated numbers"))),
    }
}

fn free_camera(args: &RenderArgs, position: &str, top: f64) -> CliResult<PinholeCamera> {
    let pos = vec3(position, "--position")?;
    let target = vec3(args.look_at.as_deref().unwrap_or("0,0,0"), "--look-at")?;
    if pos.z <= top {
        return Err(CliError::Validation(format!(
            "camera at z = {} m is not above the water surface (max height {top} m)",
            pos.z
        )));
    }
    let (w, h) = args
        .size
        .split_once('x')
        .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
        .filter(|&(w, h): &(usize, usize)| w > 0 && h > 0)
        .ok_or_else(|| CliError::Validation(format!("invalid --size '{}', expected WxH", args.size)))?;
    PinholeCamera::look_at(pos, target, Vec3::y(), args.fov, (w, h))
        .map_err(|e| CliError::Validation(format!("invalid camera: {e}")))
}

pub fn run(args: RenderArgs) -> CliResult<PathBuf> {
    let started = unix_now();
    let config = config_for_checkpoint(&args.checkpoint, args.config.as_deref())?;
    let net = load_network(&args.checkpoint, &config)?;
    let scene = SceneDir::load(&args.scene)?;
    let sc = &scene.scene;
    let camera = match (&args.camera, &args.position) {
        (Some(name), _) => sc.cameras[scene.camera_index(name)?].camera.clone(),
        (None, Some(p)) => free_camera(&args, p, sc.surface.max_height())?,
        (None, None) => return Err(CliError::Validation("pass --camera or --position".into())),
    };
    let pattern = match &args.pattern {
        Some(path) => {
            let extent = match &args.extent {
                Some(e) => {
                    let v: Vec<f64> = parse_list(e, "--extent")?;
                    match v.as_slice() {
                        [x, y] => [*x, *y],
                        _ => return Err(CliError::Validation("--extent needs two numbers".into())),
                    }
                }
                None => sc.pattern.extent,
            };
            if !path.is_file() {
                return Err(CliError::missing(path, "pattern image"));
            }
            Pattern::new(read_png(path)?, extent, sc.pattern.border).map_err(CliError::Validation)?
        }
        None => sc.pattern.clone(),
    };
    let slab = Slab::around_water(sc.surface.max_height(), config.slab_margin);
    let pred = predict_view(&net, &camera, &slab, &config.schedule());
    let image = render_from_maps(&camera, &pred.depth, &pred.normal, &pred.valid, &pattern, &sc.plane, &sc.constants);

    let out = resolve_out(args.out, "render");
    prepare_out(&out, args.overwrite)?;
    write_png(&out.join("render.png"), &image)?;
    write_pfm(&out.join("depth.pfm"), &depth_pfm(&pred.depth))?;
    write_pfm(&out.join("normal.pfm"), &normal_pfm(&pred.normal))?;
    let artifacts = vec!["render.png".into(), "depth.pfm".into(), "normal.pfm".into()];
    RunManifest::new("render", Some(config.seed), snapshot(&config), started).write(&out, artifacts)?;
    Ok(out)
}
