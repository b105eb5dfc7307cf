//! Stage orchestration: checkpoints, config hashing, memory-instrumented
//! reports, and the end-to-end `reconstruct` driver.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::RootFrame;
use crate::instrument::MemScope;
use crate::mesh::{self, io as mesh_io, MeshPart};
use crate::octree::{balance, build_treetop, external_merge, spawn_cubes};
use crate::octree::treetop::{load_treetop, save_treetop, Treetop};
use crate::range::{estimate_sample_radii, load_range_image};
use crate::record::OctreeFile;
use crate::solver::{solve_coarse_to_fine, SolveParams};
use crate::voting::{vote_stage, VoteParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub work_dir: PathBuf,
    pub out_path: PathBuf,
    /// Records per treetop leaf (and the default memory budget).
    pub leaf_cubes: u64,
    pub delta_mult: f64,
    pub eta_mult: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub lambda: f64,
    pub iters: usize,
    /// Peak resident records allowed in sorting/merging stages.
    pub memory_budget: u64,
    pub decimate_ratio: f64,
    pub root_min_radius: f64,
    #[serde(default)]
    pub force: bool,
}

impl PipelineConfig {
    pub fn new(manifest: PathBuf, work_dir: PathBuf, out_path: PathBuf) -> Self {
        let leaf_cubes = 1u64 << 24;
        PipelineConfig {
            manifest,
            work_dir,
            out_path,
            leaf_cubes,
            delta_mult: 6.0,
            eta_mult: 18.0,
            alpha0: 2.0,
            alpha1: 1.0,
            lambda: 0.5,
            iters: 200,
            memory_budget: leaf_cubes,
            decimate_ratio: 0.25,
            root_min_radius: 1.0,
            force: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaf_cubes < 8 {
            return Err(Error::Config("leaf-cubes must be >= 8".into()));
        }
        if self.memory_budget == 0 {
            return Err(Error::Config("memory budget must be positive".into()));
        }
        if !(self.delta_mult > 0.0 && self.eta_mult > 0.0) {
            return Err(Error::Config("band multipliers must be positive".into()));
        }
        if !(self.decimate_ratio > 0.0 && self.decimate_ratio <= 1.0) {
            return Err(Error::Config("decimate ratio must be in (0, 1]".into()));
        }
        if self.iters == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.root_min_radius > 0.0) {
            return Err(Error::Config("root minimum radius must be positive".into()));
        }
        Ok(())
    }

    /// Content hash over everything that determines artifacts: the tuned
    /// parameters plus the manifest's image list.
    pub fn config_hash(&self) -> Result<String> {
        let manifest_text = fs::read_to_string(&self.manifest)
            .map_err(|e| Error::io(&self.manifest, e))?;
        let mut h = Sha256::new();
        let key = serde_json::json!({
            "leaf_cubes": self.leaf_cubes,
            "delta_mult": self.delta_mult,
            "eta_mult": self.eta_mult,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "lambda": self.lambda,
            "iters": self.iters,
            "memory_budget": self.memory_budget,
            "decimate_ratio": self.decimate_ratio,
            "root_min_radius": self.root_min_radius,
            "manifest": manifest_text,
        });
        h.update(key.to_string().as_bytes());
        Ok(hex_digest(&h.finalize()))
    }

    pub fn image_paths(&self) -> Result<Vec<PathBuf>> {
        let text = fs::read_to_string(&self.manifest)
            .map_err(|e| Error::io(&self.manifest, e))?;
        let base = self.manifest.parent().unwrap_or(Path::new("."));
        let mut out = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let p = PathBuf::from(line);
            out.push(if p.is_absolute() { p } else { base.join(p) });
        }
        if out.is_empty() {
            return Err(Error::Config(format!(
                "manifest {} lists no images",
                self.manifest.display()
            )));
        }
        Ok(out)
    }

    fn vote_params(&self) -> VoteParams {
        VoteParams {
            delta_mult: self.delta_mult,
            eta_mult: self.eta_mult,
        }
    }

    fn solve_params(&self) -> SolveParams {
        SolveParams {
            pd: crate::solver::PdParams {
                alpha0: self.alpha0,
                alpha1: self.alpha1,
                lambda: self.lambda,
            },
            iters: self.iters,
            group_cell_limit: self.leaf_cubes,
            ..Default::default()
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Spawn,
    Merge,
    Balance,
    Treetop,
    Vote,
    Solve,
    Mesh,
    Decimate,
    Finalize,
}

pub const STAGES: [Stage; 9] = [
    Stage::Spawn,
    Stage::Merge,
    Stage::Balance,
    Stage::Treetop,
    Stage::Vote,
    Stage::Solve,
    Stage::Mesh,
    Stage::Decimate,
    Stage::Finalize,
];

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Spawn => "spawn",
            Stage::Merge => "merge",
            Stage::Balance => "balance",
            Stage::Treetop => "treetop",
            Stage::Vote => "vote",
            Stage::Solve => "solve",
            Stage::Mesh => "mesh",
            Stage::Decimate => "decimate",
            Stage::Finalize => "finalize",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        STAGES.iter().copied().find(|s| s.name() == name)
    }

    fn previous(&self) -> Option<Stage> {
        let idx = STAGES.iter().position(|s| s == self).unwrap();
        (idx > 0).then(|| STAGES[idx - 1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub peak_resident_records: i64,
    pub peak_resident_pyramids: i64,
    pub records_in: u64,
    pub records_out: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn run_file(&self, i: usize) -> PathBuf {
        self.runs_dir().join(format!("run_{i:04}.octr"))
    }
    pub fn merged(&self) -> PathBuf {
        self.root.join("merged.octr")
    }
    pub fn balanced(&self) -> PathBuf {
        self.root.join("balanced.octr")
    }
    pub fn treetop(&self) -> PathBuf {
        self.root.join("treetop.ttop")
    }
    pub fn voted(&self) -> PathBuf {
        self.root.join("voted.octr")
    }
    pub fn vote_manifest(&self) -> PathBuf {
        self.root.join("vote_manifest.jsonl")
    }
    pub fn solved(&self) -> PathBuf {
        self.root.join("solved.octr")
    }
    pub fn energy_csv(&self) -> PathBuf {
        self.root.join("energy.csv")
    }
    pub fn parts_dir(&self) -> PathBuf {
        self.root.join("parts")
    }
    pub fn parts_dec_dir(&self) -> PathBuf {
        self.root.join("parts_dec")
    }
    pub fn part_file(&self, dir: &Path, i: usize) -> PathBuf {
        dir.join(format!("part_{i:05}.meshpart"))
    }
    pub fn seam_report(&self) -> PathBuf {
        self.root.join("seam_report.json")
    }
    fn report_path(&self, stage: Stage) -> PathBuf {
        self.root.join("reports").join(format!("{}.json", stage.name()))
    }
    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.root.join("stamps").join(format!("{}.json", stage.name()))
    }
    pub fn tmp_dir(&self) -> PathBuf {
        self.root.join("tmp")
    }
}

fn read_stamp(path: &Path) -> Option<String> {
    fs::read_to_string(path).ok().map(|s| s.trim().to_string())
}

fn count_parts(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "meshpart"))
        .count()
}

/// Bounding cube of all unprojected samples, 5% margin, centered at the
/// bounds' midpoint. Fatal when no image contributes a sample.
pub fn compute_root_frame(images: &[PathBuf], min_radius: f64) -> Result<(RootFrame, u64)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut samples = 0u64;
    for path in images {
        let img = load_range_image(path)?;
        for y in 0..img.height {
            for x in 0..img.width {
                let Some(d) = img.depth_at(x, y) else { continue };
                let p = img.unproject(x, y, d);
                for (k, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                    lo[k] = lo[k].min(c);
                    hi[k] = hi[k].max(c);
                }
                samples += 1;
            }
        }
    }
    if samples == 0 {
        return Err(Error::Config("no valid samples in any input image".into()));
    }
    let center = Point3::new(
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    );
    let half_extent = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0f64, f64::max);
    let r_root = (half_extent * 1.05).max(min_radius * 1e-9).max({
        if half_extent == 0.0 {
            min_radius
        } else {
            0.0
        }
    });
    Ok((RootFrame::new(center, r_root)?, samples))
}

/// Run one stage (skipping when its checkpoint is already valid), write its
/// JSON report and stamp, and return the report.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageReport> {
    config.validate()?;
    let ws = Workspace::new(&config.work_dir);
    fs::create_dir_all(ws.root.join("reports")).map_err(|e| Error::io(&ws.root, e))?;
    fs::create_dir_all(ws.root.join("stamps")).map_err(|e| Error::io(&ws.root, e))?;
    let hash = config.config_hash()?;

    if let Some(prev) = stage.previous() {
        match read_stamp(&ws.stamp_path(prev)) {
            Some(s) if s == hash => {}
            _ => {
                return Err(Error::MissingCheckpoint {
                    stage: stage.name().into(),
                    missing: prev.name().into(),
                });
            }
        }
    }
    if !config.force {
        if let Some(s) = read_stamp(&ws.stamp_path(stage)) {
            if s == hash {
                if let Ok(text) = fs::read_to_string(ws.report_path(stage)) {
                    if let Ok(report) = serde_json::from_str::<StageReport>(&text) {
                        return Ok(report);
                    }
                }
            }
        }
    }
    // The stage runs: its own stale stamp (and all later ones) are invalid.
    for s in STAGES.iter().skip_while(|s| **s != stage) {
        let _ = fs::remove_file(ws.stamp_path(*s));
    }

    let started = Instant::now();
    let scope = MemScope::new();
    let (records_in, records_out, extra) = execute(stage, config, &ws)?;
    let report = StageReport {
        stage: stage.name().into(),
        config_hash: hash.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
        peak_resident_records: scope.records_peak(),
        peak_resident_pyramids: scope.pyramids_peak(),
        records_in,
        records_out,
        extra,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Consistency(format!("report serialization: {e}")))?;
    fs::write(ws.report_path(stage), &json).map_err(|e| Error::io(ws.report_path(stage), e))?;
    fs::write(ws.stamp_path(stage), &hash).map_err(|e| Error::io(ws.stamp_path(stage), e))?;
    Ok(report)
}

/// Run every stage in order.
pub fn reconstruct(config: &PipelineConfig) -> Result<Vec<StageReport>> {
    let mut reports = Vec::new();
    let mut cfg = config.clone();
    for stage in STAGES {
        reports.push(run_stage(stage, &cfg)?);
        // `--force` must rerun everything, but only once: downstream stages
        // rerun anyway because their stamps were cleared.
        cfg.force = config.force;
    }
    Ok(reports)
}

fn load_treetop_checked(ws: &Workspace) -> Result<Treetop> {
    load_treetop(ws.treetop())
}

fn execute(
    stage: Stage,
    config: &PipelineConfig,
    ws: &Workspace,
) -> Result<(u64, u64, serde_json::Value)> {
    match stage {
        Stage::Spawn => {
            let images = config.image_paths()?;
            let (frame, samples) = compute_root_frame(&images, config.root_min_radius)?;
            fs::create_dir_all(ws.runs_dir()).map_err(|e| Error::io(ws.runs_dir(), e))?;
            let mut records = 0u64;
            let mut skipped = 0u64;
            for (i, path) in images.iter().enumerate() {
                let img = load_range_image(path)?;
                let radii = estimate_sample_radii(&img);
                let stats = spawn_cubes(&img, &radii, &frame, ws.run_file(i))?;
                records += stats.records;
                skipped += stats.skipped_outside;
            }
            Ok((
                samples,
                records,
                serde_json::json!({
                    "images": images.len(),
                    "skipped_outside": skipped,
                    "root_center": [frame.center.x, frame.center.y, frame.center.z],
                    "root_radius": frame.r_root,
                }),
            ))
        }
        Stage::Merge => {
            let images = config.image_paths()?;
            let runs: Vec<PathBuf> = (0..images.len()).map(|i| ws.run_file(i)).collect();
            let stats = external_merge(&runs, ws.merged(), config.memory_budget)?;
            Ok((stats.records_in, stats.records_out, serde_json::Value::Null))
        }
        Stage::Balance => {
            let stats = balance(
                ws.merged(),
                ws.balanced(),
                config.memory_budget,
                ws.tmp_dir(),
            )?;
            Ok((
                stats.records_in,
                stats.records_out,
                serde_json::json!({ "band_passes": stats.band_passes }),
            ))
        }
        Stage::Treetop => {
            let top = build_treetop(ws.balanced(), config.leaf_cubes)?;
            save_treetop(ws.treetop(), &top)?;
            Ok((
                top.total_records,
                top.total_records,
                serde_json::json!({ "leaves": top.leaves().len() }),
            ))
        }
        Stage::Vote => {
            // Voting updates histograms in place on its own artifact copy so
            // the balanced file stays pristine for resumption.
            if config.force || !ws.voted().exists() {
                fs::copy(ws.balanced(), ws.voted())
                    .map_err(|e| Error::io(ws.voted(), e))?;
                let _ = fs::remove_file(ws.vote_manifest());
            }
            let top = load_treetop_checked(ws)?;
            let images = config.image_paths()?;
            let stats = vote_stage(
                ws.voted(),
                &top,
                &images,
                &config.vote_params(),
                ws.vote_manifest(),
            )?;
            let n = top.total_records;
            Ok((
                n,
                n,
                serde_json::json!({
                    "leaves_voted": stats.leaves_voted,
                    "leaves_resumed": stats.leaves_skipped,
                }),
            ))
        }
        Stage::Solve => {
            fs::copy(ws.voted(), ws.solved()).map_err(|e| Error::io(ws.solved(), e))?;
            let top = load_treetop_checked(ws)?;
            let stats = solve_coarse_to_fine(
                ws.solved(),
                &top,
                &config.solve_params(),
                ws.tmp_dir(),
                |_| Ok(()),
            )?;
            let mut csv = String::from("level,iteration,energy\n");
            for row in &stats.trace {
                csv.push_str(&format!("{},{},{}\n", row.level, row.iteration, row.energy));
            }
            fs::write(ws.energy_csv(), csv).map_err(|e| Error::io(ws.energy_csv(), e))?;
            let n = top.total_records;
            Ok((
                n,
                n,
                serde_json::json!({
                    "levels": stats.levels,
                    "groups_solved": stats.groups_solved,
                }),
            ))
        }
        Stage::Mesh => {
            let top = load_treetop_checked(ws)?;
            let dir = ws.parts_dir();
            let _ = fs::remove_dir_all(&dir);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut file = OctreeFile::open(ws.solved())?;
            let mut faces = 0u64;
            for (i, leaf) in top.leaves().iter().enumerate() {
                let mut view =
                    mesh::MeshView::build(&mut file, leaf.first, leaf.last, crate::morton::MAX_DEPTH)?;
                let cells = mesh::dual::leaf_dual_cells(&mut view, &top, i)?;
                let part = mesh::extract_part(&view, &cells, leaf.code)?;
                faces += part.triangles.len() as u64;
                mesh_io::save_part(ws.part_file(&dir, i), &part)?;
            }
            Ok((
                top.total_records,
                faces,
                serde_json::json!({ "parts": top.leaves().len() }),
            ))
        }
        Stage::Decimate => {
            let src = ws.parts_dir();
            let dst = ws.parts_dec_dir();
            let _ = fs::remove_dir_all(&dst);
            fs::create_dir_all(&dst).map_err(|e| Error::io(&dst, e))?;
            let n = count_parts(&src);
            let mut faces_in = 0u64;
            let mut faces_out = 0u64;
            for i in 0..n {
                let part = mesh_io::load_part(ws.part_file(&src, i))?;
                faces_in += part.triangles.len() as u64;
                let target =
                    ((part.triangles.len() as f64) * config.decimate_ratio).ceil() as usize;
                let out = mesh::decimate(&part, target);
                faces_out += out.triangles.len() as u64;
                mesh_io::save_part(ws.part_file(&dst, i), &out)?;
            }
            Ok((faces_in, faces_out, serde_json::Value::Null))
        }
        Stage::Finalize => {
            let dir = ws.parts_dec_dir();
            let n = count_parts(&dir);
            let mut parts: Vec<MeshPart> = Vec::with_capacity(n);
            for i in 0..n {
                parts.push(mesh_io::load_part(ws.part_file(&dir, i))?);
            }
            let (mesh, seams) = mesh::merge_parts(&parts)?;
            match config.out_path.extension().and_then(|e| e.to_str()) {
                Some("ply") => mesh_io::save_ply(&config.out_path, &mesh)?,
                Some("obj") => mesh_io::save_obj(&config.out_path, &mesh)?,
                _ => {
                    return Err(Error::Config(format!(
                        "output {} must end in .ply or .obj",
                        config.out_path.display()
                    )));
                }
            }
            let mut f = fs::File::create(ws.seam_report())
                .map_err(|e| Error::io(ws.seam_report(), e))?;
            let body = serde_json::to_string_pretty(&seams)
                .map_err(|e| Error::Consistency(format!("seam report: {e}")))?;
            f.write_all(body.as_bytes())
                .map_err(|e| Error::io(ws.seam_report(), e))?;
            Ok((
                parts.iter().map(|p| p.triangles.len() as u64).sum(),
                mesh.triangles.len() as u64,
                serde_json::json!({
                    "vertices": mesh.vertices.len(),
                    "matched_border_edges": seams.matched_border_edges,
                }),
            ))
        }
    }
}
