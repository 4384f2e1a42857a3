//! `stardomain {sample|fit|mesh|eval|shfit}`.
//!
//! Every command reads an optional JSON run configuration, applies flag
//! overrides, and writes its artifacts plus a `manifest.json` listing their
//! SHA-256 checksums and the hash of the effective configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::PrimitiveAssembly;
use crate::checkpoint::{config_hash, file_sha256, Checkpoint};
use crate::fitting::{
    fit, grid_search_tau_o, write_trace_csv, FitConfig, FitReport, TauSearch, TauSearchOptions, TAU_O_GRID,
};
use crate::mesh::{load_obj, write_obj, TriangleMesh};
use crate::metrics::{evaluate, MetricOptions, MetricReport};
use crate::shape_io::{
    build_shape_sample, read_occupancy_csv, read_surface_csv, write_occupancy_csv, write_surface_csv, Normalization,
    OccupancySampling, ShapeSample,
};
use crate::sph_harmonics::{coeff_index, fit_expansion};
use crate::sphere_geom::{icosphere, SphereCoord};
use crate::{parallel, Error, Result};

/// Tool version recorded in manifests.
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "stardomain",
    version,
    about = "Star-domain neural primitives: fit, mesh and evaluate shapes"
)]
pub struct Cli {
    /// Worker threads for point-wise loops (overrides STARDOMAIN_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a watertight OBJ and write surface and occupancy samples.
    Sample(SampleArgs),
    /// Fit an assembly to sampled data.
    Fit(FitArgs),
    /// Mesh a checkpoint explicitly or with marching cubes, with timing.
    Mesh(MeshArgs),
    /// Score a checkpoint against ground-truth samples.
    Eval(EvalArgs),
    /// Least-squares spherical-harmonic fit of radius samples.
    Shfit(ShfitArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input OBJ.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub surface_count: Option<usize>,
    #[arg(long)]
    pub occupancy_count: Option<usize>,
    /// Draw half the occupancy points near the surface with this jitter.
    #[arg(long)]
    pub near_surface: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target surface CSV (`x,y,z`).
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Target occupancy CSV (`x,y,z,label`).
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub n_primitives: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeshMode {
    /// Deform the icosphere template per primitive.
    #[default]
    Explicit,
    /// Marching cubes on the composite indicator.
    Mc,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<MeshMode>,
    /// Icosphere level for explicit meshing.
    #[arg(long)]
    pub level: Option<u32>,
    /// Grid cells per side for marching cubes (32, 64 or 128).
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Ground-truth surface CSV.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    /// Ground-truth occupancy CSV.
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShfitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with columns `theta,phi,r`.
    #[arg(long)]
    pub radii: Option<PathBuf>,
    /// Maximum degree L.
    #[arg(long)]
    pub degree: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub mesh: Option<PathBuf>,
    pub surface_count: usize,
    pub occupancy_count: usize,
    pub occupancy_sampling: OccupancySampling,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            mesh: None,
            surface_count: 100_000,
            occupancy_count: 100_000,
            occupancy_sampling: OccupancySampling::Uniform,
            seed: 0,
        }
    }
}

/// Sampled target files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub surface: Option<PathBuf>,
    pub occupancy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub checkpoint: Option<PathBuf>,
    pub mode: MeshMode,
    pub level: u32,
    pub resolution: usize,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            mode: MeshMode::Explicit,
            level: 4,
            resolution: 128,
            repeats: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub metrics: MetricOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShfitConfig {
    pub radii: Option<PathBuf>,
    pub degree: usize,
}

/// The full run configuration. Each command reads the sections it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sample: SampleConfig,
    pub data: DataPaths,
    pub fit: FitConfig,
    pub tau_search: TauSearchConfig,
    pub mesh: MeshConfig,
    pub eval: EvalConfig,
    pub shfit: ShfitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauSearchConfig {
    pub enabled: bool,
    pub grid: Vec<f64>,
    pub resolution: usize,
    pub samples: usize,
}

impl Default for TauSearchConfig {
    fn default() -> Self {
        let d = TauSearchOptions::default();
        Self {
            enabled: true,
            grid: TAU_O_GRID.to_vec(),
            resolution: d.resolution,
            samples: d.samples,
        }
    }
}

/// One file listed in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<ManifestEntry>,
    pub outputs: Vec<ManifestEntry>,
}

fn entry(path: &Path, name: Option<&str>) -> Result<ManifestEntry> {
    Ok(ManifestEntry {
        path: name.map(str::to_owned).unwrap_or_else(|| path.display().to_string()),
        sha256: file_sha256(path)?,
        bytes: std::fs::metadata(path)?.len(),
    })
}

fn write_manifest(out: &Path, command: &str, hash: &str, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    let m = Manifest {
        tool_version: VERSION.into(),
        command: command.into(),
        config_hash: hash.into(),
        inputs: inputs.iter().map(|p| entry(p, None)).collect::<Result<_>>()?,
        outputs: outputs
            .iter()
            .map(|n| entry(&out.join(n), Some(n)))
            .collect::<Result<_>>()?,
    };
    write_json(&out.join("manifest.json"), &m)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

/// JSON artifact with the config hash attached.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: T,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
}

fn require_input(path: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::InvalidArgument(format!("missing {what} path")))?;
    if !p.is_file() {
        return Err(Error::InvalidArgument(format!(
            "{what} file {} does not exist",
            p.display()
        )));
    }
    Ok(p.clone())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| Error::InvalidArgument(format!("cannot create output directory {}: {e}", out.display())))
}

/// Settles the effective configuration. Returns `None` after printing it
/// when `--print-config` was given.
fn resolve(common: &CommonArgs, apply: impl FnOnce(&mut RunConfig)) -> Result<Option<(RunConfig, String)>> {
    let mut cfg = load_config(common.config.as_deref())?;
    apply(&mut cfg);
    if common.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(None);
    }
    let hash = config_hash(&cfg)?;
    prepare_out(&common.out)?;
    Ok(Some((cfg, hash)))
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let Some((cfg, hash)) = resolve(&args.common, |c| {
        if let Some(m) = &args.mesh {
            c.sample.mesh = Some(m.clone());
        }
        if let Some(s) = args.seed {
            c.sample.seed = s;
        }
        if let Some(n) = args.surface_count {
            c.sample.surface_count = n;
        }
        if let Some(n) = args.occupancy_count {
            c.sample.occupancy_count = n;
        }
        if let Some(sigma) = args.near_surface {
            c.sample.occupancy_sampling = OccupancySampling::NearSurface { sigma };
        }
    })?
    else {
        return Ok(());
    };
    let s = &cfg.sample;
    if s.surface_count == 0 || s.occupancy_count == 0 {
        return Err(Error::InvalidArgument(
            "surface_count and occupancy_count must be >= 1".into(),
        ));
    }
    let mesh_path = require_input(s.mesh.as_ref(), "mesh")?;
    let load = load_obj(&mesh_path)?;
    if load.dropped_degenerate > 0 {
        warn!(
            "{}: dropped {} degenerate faces",
            mesh_path.display(),
            load.dropped_degenerate
        );
    }
    let sample = build_shape_sample(
        &load.mesh,
        s.surface_count,
        s.occupancy_count,
        s.occupancy_sampling,
        s.seed,
    )?;
    let out = &args.common.out;
    write_surface_csv(&out.join("surface.csv"), &sample.surface_points)?;
    write_occupancy_csv(&out.join("occupancy.csv"), &sample.occupancy_points)?;
    write_json(
        &out.join("normalization.json"),
        &Stamped {
            config_hash: &hash,
            body: sample.transform,
        },
    )?;
    write_manifest(
        out,
        "sample",
        &hash,
        &[&mesh_path],
        &["surface.csv", "occupancy.csv", "normalization.json"],
    )?;
    let inside = sample.occupancy_points.iter().filter(|(_, l)| *l == 1).count();
    println!(
        "wrote {} surface and {} occupancy samples ({:.4} inside) to {}",
        sample.surface_points.len(),
        sample.occupancy_points.len(),
        inside as f64 / sample.occupancy_points.len() as f64,
        out.display()
    );
    Ok(())
}

fn load_target(data: &DataPaths) -> Result<(ShapeSample, PathBuf, PathBuf)> {
    let sp = require_input(data.surface.as_ref(), "surface")?;
    let op = require_input(data.occupancy.as_ref(), "occupancy")?;
    let target = ShapeSample {
        surface_points: read_surface_csv(&sp)?,
        occupancy_points: read_occupancy_csv(&op)?,
        transform: Normalization::identity(),
    };
    target.validate().map_err(|e| Error::Integrity(e.to_string()))?;
    Ok((target, sp, op))
}

#[derive(Serialize)]
struct FitOutput<'a> {
    report: &'a FitReport,
    tau_search: Option<&'a TauSearch>,
    tau_o: f64,
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let Some((cfg, hash)) = resolve(&args.common, |c| {
        if let Some(p) = &args.surface {
            c.data.surface = Some(p.clone());
        }
        if let Some(p) = &args.occupancy {
            c.data.occupancy = Some(p.clone());
        }
        if let Some(s) = args.seed {
            c.fit.seed = s;
        }
        if let Some(n) = args.steps {
            c.fit.steps = n;
        }
        if let Some(n) = args.n_primitives {
            c.fit.n_primitives = n;
        }
    })?
    else {
        return Ok(());
    };
    let violations = cfg.fit.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "invalid fit configuration:\n  {}",
            violations.join("\n  ")
        )));
    }
    let (target, sp, op) = load_target(&cfg.data)?;
    if cfg.fit.n_primitives > target.surface_points.len() {
        return Err(Error::InvalidArgument(format!(
            "n_primitives {} exceeds the {} surface points",
            cfg.fit.n_primitives,
            target.surface_points.len()
        )));
    }
    let (mut a, mut report) = fit(&cfg.fit, &target)?;
    // Nothing was fitted with zero steps, so the initial level is kept.
    let search = if cfg.tau_search.enabled && cfg.fit.steps > 0 {
        let opts = TauSearchOptions {
            resolution: cfg.tau_search.resolution,
            samples: cfg.tau_search.samples,
            seed: cfg.fit.seed,
            ..TauSearchOptions::default()
        };
        let s = grid_search_tau_o(&a, &target.surface_points, &cfg.tau_search.grid, &opts)?;
        info!("tau_o search picked {} from {:?}", s.best, s.scores);
        a.tau_o = s.best;
        Some(s)
    } else {
        None
    };
    let out = &args.common.out;
    report.checkpoint_path = Some("checkpoint.json".into());
    Checkpoint::new(a.clone(), hash.clone()).save(&out.join("checkpoint.json"))?;
    write_trace_csv(&out.join("loss.csv"), &report.trace)?;
    write_json(
        &out.join("report.json"),
        &Stamped {
            config_hash: &hash,
            body: FitOutput {
                report: &report,
                tau_search: search.as_ref(),
                tau_o: a.tau_o,
            },
        },
    )?;
    write_manifest(
        out,
        "fit",
        &hash,
        &[&sp, &op],
        &["checkpoint.json", "loss.csv", "report.json"],
    )?;
    let l = &report.final_losses;
    println!(
        "final losses: surface {:.6} occupancy {:.6} overlap {:.6} total {:.6} (tau_o {})",
        l.surface, l.occupancy, l.overlap, report.final_total, a.tau_o
    );
    Ok(())
}

/// Produces the mesh for one timing repetition.
fn produce_mesh(
    a: &PrimitiveAssembly,
    cfg: &MeshConfig,
    template: Option<&crate::sphere_geom::IcosphereTemplate>,
) -> Result<(TriangleMesh, Option<Vec<usize>>)> {
    match cfg.mode {
        MeshMode::Explicit => {
            let m = a.assemble_mesh(template.expect("template is built for explicit mode"));
            Ok((m.mesh, Some(m.owners)))
        }
        MeshMode::Mc => Ok((a.marching_cubes(cfg.resolution, a.tau_o)?, None)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshTiming {
    pub mode: MeshMode,
    /// Icosphere level or grid resolution.
    pub detail: usize,
    pub primitives: usize,
    pub vertices: usize,
    pub faces: usize,
    pub repeats: usize,
    pub times_s: Vec<f64>,
    pub median_s: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn cmd_mesh(args: &MeshArgs) -> Result<()> {
    let Some((cfg, hash)) = resolve(&args.common, |c| {
        if let Some(p) = &args.checkpoint {
            c.mesh.checkpoint = Some(p.clone());
        }
        if let Some(m) = args.mode {
            c.mesh.mode = m;
        }
        if let Some(l) = args.level {
            c.mesh.level = l;
        }
        if let Some(r) = args.resolution {
            c.mesh.resolution = r;
        }
        if let Some(r) = args.repeats {
            c.mesh.repeats = r;
        }
    })?
    else {
        return Ok(());
    };
    let mc = &cfg.mesh;
    if mc.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let ck_path = require_input(mc.checkpoint.as_ref(), "checkpoint")?;
    let a = Checkpoint::load(&ck_path)?.assembly;
    // The template is fixed data shared by every shape, like the case
    // table of marching cubes, so it is built outside the timed region.
    let template = match mc.mode {
        MeshMode::Explicit => Some(icosphere(mc.level)?),
        MeshMode::Mc => None,
    };
    let mut times = Vec::with_capacity(mc.repeats);
    let mut result = None;
    for _ in 0..mc.repeats {
        let t = Instant::now();
        let r = produce_mesh(&a, mc, template.as_ref())?;
        times.push(t.elapsed().as_secs_f64());
        result = Some(r);
    }
    let (mesh, owners) = result.expect("at least one repetition");
    if mesh.faces.is_empty() {
        warn!("mesh is empty; writing an empty OBJ");
    }
    let out = &args.common.out;
    let mut buf = format!("# stardomain {VERSION}\n# config_hash {hash}\n").into_bytes();
    write_obj(&mesh, owners.as_deref(), &mut buf)?;
    std::fs::write(out.join("mesh.obj"), buf)?;
    let timing = MeshTiming {
        mode: mc.mode,
        detail: match mc.mode {
            MeshMode::Explicit => mc.level as usize,
            MeshMode::Mc => mc.resolution,
        },
        primitives: a.len(),
        vertices: mesh.vertices.len(),
        faces: mesh.faces.len(),
        repeats: mc.repeats,
        median_s: median(&times),
        times_s: times,
    };
    write_json(
        &out.join("timing.json"),
        &Stamped {
            config_hash: &hash,
            body: &timing,
        },
    )?;
    write_manifest(out, "mesh", &hash, &[&ck_path], &["mesh.obj", "timing.json"])?;
    println!(
        "{} vertices, {} faces; median {:.6} s over {} runs",
        timing.vertices, timing.faces, timing.median_s, timing.repeats
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint_config_hash: &'a str,
    metrics: &'a MetricReport,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let Some((cfg, hash)) = resolve(&args.common, |c| {
        if let Some(p) = &args.checkpoint {
            c.eval.checkpoint = Some(p.clone());
        }
        if let Some(p) = &args.surface {
            c.data.surface = Some(p.clone());
        }
        if let Some(p) = &args.occupancy {
            c.data.occupancy = Some(p.clone());
        }
        if let Some(s) = args.seed {
            c.eval.metrics.seed = s;
        }
    })?
    else {
        return Ok(());
    };
    let ck_path = require_input(cfg.eval.checkpoint.as_ref(), "checkpoint")?;
    let (target, sp, op) = load_target(&cfg.data)?;
    let ck = Checkpoint::load(&ck_path)?;
    let report = evaluate(
        &ck.assembly,
        &target.surface_points,
        &target.occupancy_points,
        &cfg.eval.metrics,
    )?;
    let out = &args.common.out;
    write_json(
        &out.join("metrics.json"),
        &Stamped {
            config_hash: &hash,
            body: EvalOutput {
                checkpoint_config_hash: &ck.config_hash,
                metrics: &report,
            },
        },
    )?;
    write_manifest(out, "eval", &hash, &[&ck_path, &sp, &op], &["metrics.json"])?;
    print!("{}", report.table());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShfitSummary {
    pub degree: usize,
    pub samples: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub condition: f64,
}

fn read_radii(path: &Path) -> Result<Vec<(SphereCoord, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let (theta, phi, radius): (f64, f64, f64) = rec?;
        let d = SphereCoord::new(theta, phi).map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        if !radius.is_finite() {
            return Err(Error::Parse {
                line: i + 2,
                msg: "radius is not finite".into(),
            });
        }
        out.push((d, radius));
    }
    Ok(out)
}

pub fn cmd_shfit(args: &ShfitArgs) -> Result<()> {
    let Some((cfg, hash)) = resolve(&args.common, |c| {
        if let Some(p) = &args.radii {
            c.shfit.radii = Some(p.clone());
        }
        if let Some(l) = args.degree {
            c.shfit.degree = l;
        }
    })?
    else {
        return Ok(());
    };
    let path = require_input(cfg.shfit.radii.as_ref(), "radii")?;
    let samples = read_radii(&path)?;
    let l_max = cfg.shfit.degree;
    let fitted = fit_expansion(&samples, l_max)?;
    let out = &args.common.out;
    let mut w = csv::Writer::from_path(out.join("coeffs.csv"))?;
    w.write_record(["l", "m", "coeff"])?;
    for l in 0..=l_max {
        for m in -(l as i64)..=l as i64 {
            let c = fitted.expansion.coeffs[coeff_index(l, m)];
            w.write_record([l.to_string(), m.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    drop(w);
    let summary = ShfitSummary {
        degree: l_max,
        samples: samples.len(),
        max_residual: fitted.max_residual,
        mean_residual: fitted.mean_residual,
        condition: fitted.condition,
    };
    write_json(
        &out.join("residual.json"),
        &Stamped {
            config_hash: &hash,
            body: &summary,
        },
    )?;
    write_manifest(out, "shfit", &hash, &[&path], &["coeffs.csv", "residual.json"])?;
    println!(
        "L={} max residual {:.3e} mean residual {:.3e}",
        l_max, summary.max_residual, summary.mean_residual
    );
    Ok(())
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return if n >= 1 {
            Ok(n)
        } else {
            Err(Error::InvalidArgument("--threads must be >= 1".into()))
        };
    }
    match std::env::var(parallel::THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|n| *n >= 1).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{} must be a positive integer, got '{v}'",
                parallel::THREADS_ENV
            ))
        }),
        Err(_) => Ok(1),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    parallel::set_threads(thread_count(cli.threads)?);
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Mesh(a) => cmd_mesh(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Shfit(a) => cmd_shfit(a),
    }
}

/// Parses `args` and runs the command. Usage errors exit with status 1 like
/// any other validation failure.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"fit": {"n_primitives": 2}}"#).unwrap();
        assert_eq!(partial.fit.n_primitives, 2);
        assert_eq!(partial.fit.steps, FitConfig::default().steps);
        assert!(serde_json::from_str::<RunConfig>(r#"{"fit": {"n_prims": 2}}"#).is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn parse_errors_are_validation_failures() {
        assert!(Cli::try_parse_from(["stardomain", "mesh", "--mode", "voxel"]).is_err());
        let ok = Cli::try_parse_from(["stardomain", "mesh", "--mode", "mc", "--resolution", "32"]).unwrap();
        assert!(matches!(ok.command, Command::Mesh(_)));
    }
}
