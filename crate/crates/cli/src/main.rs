//! `recon`: fuse aligned range images into a watertight triangle mesh.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;

use recon_core::error::Error as CoreError;
use recon_core::mesh::io::load_mesh;
use recon_core::pipeline::{reconstruct, run_stage, PipelineConfig, Stage};
use recon_core::range::{lidar_to_range_image, read_ascii_ply_points, save_range_image};
use recon_core::synth::{
    inject_outliers, orbit_rig, render_depth, score, OutlierMode, Scene,
};
use recon_core::SensorPose;

#[derive(Parser)]
#[command(
    name = "recon",
    version,
    about = "Out-of-core fusion of depth maps and LIDAR scans into a single watertight mesh"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Text file listing RIMG inputs, one path per line.
    #[arg(long)]
    manifest: PathBuf,
    /// Working directory for artifacts and checkpoints
    /// (the RECON_WORK environment variable overrides this flag).
    #[arg(long)]
    work: Option<PathBuf>,
    /// Output mesh path (.ply binary or .obj).
    #[arg(long, default_value = "mesh.ply")]
    out: PathBuf,
    /// Records per treetop leaf.
    #[arg(long, default_value_t = 1u64 << 24)]
    leaf_cubes: u64,
    #[arg(long, default_value_t = 2.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Primal-dual iterations per level.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Per-part face budget after decimation, as a fraction.
    #[arg(long, default_value_t = 0.25)]
    decimate_ratio: f64,
    /// Peak resident records for sorting/merging (defaults to --leaf-cubes).
    #[arg(long)]
    memory_budget: Option<u64>,
    /// Near-surface band width as a multiple of the cell density radius.
    #[arg(long, default_value_t = 6.0)]
    delta_mult: f64,
    /// Occluded band width as a multiple of the cell density radius.
    #[arg(long, default_value_t = 18.0)]
    eta_mult: f64,
    /// Root cube radius for degenerate single-sample inputs.
    #[arg(long, default_value_t = 1.0)]
    root_min_radius: f64,
    /// Recompute even when valid checkpoints exist.
    #[arg(long)]
    force: bool,
}

impl PipelineArgs {
    fn into_config(self) -> anyhow::Result<PipelineConfig> {
        let work = match std::env::var_os("RECON_WORK") {
            Some(w) => PathBuf::from(w),
            None => self
                .work
                .clone()
                .context("--work is required (or set RECON_WORK)")?,
        };
        let mut cfg = PipelineConfig::new(self.manifest, work, self.out);
        cfg.leaf_cubes = self.leaf_cubes;
        cfg.alpha0 = self.alpha0;
        cfg.alpha1 = self.alpha1;
        cfg.lambda = self.lambda;
        cfg.iters = self.iters;
        cfg.decimate_ratio = self.decimate_ratio;
        cfg.memory_budget = self.memory_budget.unwrap_or(self.leaf_cubes);
        cfg.delta_mult = self.delta_mult;
        cfg.eta_mult = self.eta_mult;
        cfg.root_min_radius = self.root_min_radius;
        cfg.force = self.force;
        if self.threads > 0 {
            init_threads(self.threads);
        }
        Ok(cfg)
    }
}

#[cfg(feature = "parallel")]
fn init_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_n: usize) {
    eprintln!("note: built without the 'parallel' feature; --threads ignored");
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every pipeline stage in order.
    Reconstruct(PipelineArgs),
    /// Spawn per-image octree runs.
    Spawn(PipelineArgs),
    /// Merge runs into one linear octree.
    Merge(PipelineArgs),
    /// Complete and 2:1-balance the octree.
    Balance(PipelineArgs),
    /// Index the balanced octree with a treetop.
    Treetop(PipelineArgs),
    /// Vote every distance field into cell histograms.
    Vote(PipelineArgs),
    /// Minimize the functional coarse-to-fine.
    Solve(PipelineArgs),
    /// Extract per-leaf isosurface parts.
    Mesh(PipelineArgs),
    /// Decimate parts with locked borders.
    Decimate(PipelineArgs),
    /// Concatenate parts into the final mesh.
    Finalize(PipelineArgs),
    /// Render synthetic depth maps of an analytic scene.
    Synth {
        #[arg(long, default_value = "sphere")]
        scene: String,
        #[arg(long, default_value_t = 20)]
        cams: usize,
        #[arg(long, default_value_t = 128)]
        res: u32,
        /// Output directory for RIMG files plus manifest.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        orbit: f64,
        #[arg(long, default_value_t = 40.0)]
        fov: f64,
        /// Fraction of valid pixels to corrupt.
        #[arg(long, default_value_t = 0.0)]
        noise_fraction: f64,
        /// floaters | speckle
        #[arg(long, default_value = "floaters")]
        noise_mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Score a mesh against an analytic scene, printing metrics JSON.
    Score {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, default_value = "sphere")]
        scene: String,
    },
    /// Convert an ASCII PLY point cloud into an equirectangular range image.
    ImportLidar {
        #[arg(long)]
        ply: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1024)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        /// Sensor origin as "x,y,z".
        #[arg(long, default_value = "0,0,0")]
        origin: String,
    },
}

fn print_reports(reports: &[recon_core::pipeline::StageReport]) {
    for r in reports {
        println!("{}", serde_json::to_string(r).unwrap());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<CoreError>() {
                Some(CoreError::Config(_)) | Some(CoreError::Contract(_)) => 2,
                Some(_) => 3,
                // Anyhow context without a core error: argument handling.
                None => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Reconstruct(args) => {
            let cfg = args.into_config()?;
            print_reports(&reconstruct(&cfg)?);
        }
        Cmd::Spawn(args) => stage(Stage::Spawn, args)?,
        Cmd::Merge(args) => stage(Stage::Merge, args)?,
        Cmd::Balance(args) => stage(Stage::Balance, args)?,
        Cmd::Treetop(args) => stage(Stage::Treetop, args)?,
        Cmd::Vote(args) => stage(Stage::Vote, args)?,
        Cmd::Solve(args) => stage(Stage::Solve, args)?,
        Cmd::Mesh(args) => stage(Stage::Mesh, args)?,
        Cmd::Decimate(args) => stage(Stage::Decimate, args)?,
        Cmd::Finalize(args) => stage(Stage::Finalize, args)?,
        Cmd::Synth {
            scene,
            cams,
            res,
            out,
            orbit,
            fov,
            noise_fraction,
            noise_mode,
            seed,
        } => {
            let scene = Scene::from_tag(&scene)?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let rig = orbit_rig(cams, scene.center(), orbit, res, res, fov);
            let mode: OutlierMode = noise_mode.parse()?;
            let mut names = Vec::new();
            for (i, cam) in rig.iter().enumerate() {
                let mut img = render_depth(&scene, cam)?;
                if noise_fraction > 0.0 {
                    img = inject_outliers(&img, noise_fraction, mode, seed.wrapping_add(i as u64))?;
                }
                let name = format!("cam_{i:03}.rimg");
                save_range_image(out.join(&name), &img)?;
                names.push(name);
            }
            let manifest = out.join("manifest.txt");
            std::fs::write(&manifest, names.join("\n"))
                .with_context(|| format!("writing {}", manifest.display()))?;
            println!(
                "{}",
                serde_json::json!({
                    "images": names.len(),
                    "manifest": manifest,
                })
            );
        }
        Cmd::Score { mesh, scene } => {
            let scene = Scene::from_tag(&scene)?;
            let mesh = load_mesh(&mesh)?;
            let report = score(&mesh, &scene);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::ImportLidar {
            ply,
            out,
            width,
            height,
            origin,
        } => {
            let coords: Vec<f64> = origin
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .context("parsing --origin as x,y,z")?;
            if coords.len() != 3 {
                bail!(CoreError::Config("--origin needs three components".into()));
            }
            let points = read_ascii_ply_points(&ply)?;
            let pose = SensorPose {
                origin: Point3::new(coords[0], coords[1], coords[2]),
                rotation: nalgebra::Matrix3::identity(),
            };
            let conv = lidar_to_range_image(&points, pose, width, height)?;
            save_range_image(&out, &conv.image)?;
            println!(
                "{}",
                serde_json::json!({
                    "points": points.len(),
                    "valid_pixels": conv.image.valid_count(),
                    "skipped_at_origin": conv.skipped_at_origin,
                })
            );
        }
    }
    Ok(())
}

fn stage(which: Stage, args: PipelineArgs) -> anyhow::Result<()> {
    let cfg = args.into_config()?;
    let report = run_stage(which, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
